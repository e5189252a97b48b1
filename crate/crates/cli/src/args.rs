//! Flag groups shared by several subcommands.

use clap::{Args, ValueEnum};

use bpnn_core::bp::{BpConfig, Schedule, DEFAULT_DAMPING, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use bpnn_core::bpnn::{HeadConfig, LayerConfig, ModelConfig};
use bpnn_core::FactorGraph;

use crate::error::{input_error, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Parallel,
    Sequential,
}

#[derive(Clone, Debug, Args)]
pub struct BpArgs {
    /// Damping coefficient.
    #[arg(long, default_value_t = DEFAULT_DAMPING)]
    pub alpha: f64,
    /// Convergence threshold on the largest factor-to-variable change.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Parallel)]
    pub schedule: ScheduleArg,
}

impl BpArgs {
    pub fn config(&self) -> CliResult<BpConfig> {
        let schedule = match self.schedule {
            ScheduleArg::Parallel => Schedule::Parallel,
            ScheduleArg::Sequential => Schedule::Sequential,
        };
        let cfg = BpConfig { damping: self.alpha, max_iters: self.max_iters, tol: self.tol, schedule };
        cfg.validate().map_err(input_error)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LayerKind {
    /// Damped BP, `H(x) = αx`.
    Scalar,
    /// Learned residual damping operator.
    Residual,
    /// Log-MLP-exp message transforms.
    MessageMlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum HeadKind {
    Bethe,
    BpnnB,
}

#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = LayerKind::Residual)]
    pub layer: LayerKind,
    /// Number of layers, or of unrolled iterations for a tied model.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// One shared layer; implies the plain Bethe readout.
    #[arg(long)]
    pub tied: bool,
    /// Damping the layers start from.
    #[arg(long = "init-alpha", default_value_t = DEFAULT_DAMPING)]
    pub init_alpha: f64,
    #[arg(long, value_enum, default_value_t = HeadKind::BpnnB)]
    pub head: HeadKind,
    /// Read factor axes in scope order instead of averaging over orders.
    #[arg(long)]
    pub no_invariant: bool,
    /// Comma-separated LNE blocks (1-4) for message-mlp layers.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4])]
    pub lne: Vec<usize>,
    /// Sum over full neighborhoods instead of excluding the target.
    #[arg(long)]
    pub double_count: bool,
    /// Largest variable cardinality; defaults to the training data's.
    #[arg(long)]
    pub c_max: Option<usize>,
    /// Largest factor arity; defaults to the training data's.
    #[arg(long)]
    pub a_max: Option<usize>,
}

impl ModelArgs {
    pub fn config<'a>(&self, graphs: impl IntoIterator<Item = &'a FactorGraph> + Clone) -> CliResult<ModelConfig> {
        let c_max = self
            .c_max
            .unwrap_or_else(|| graphs.clone().into_iter().map(|g| g.max_cardinality()).max().unwrap_or(2).max(2));
        let a_max = self.a_max.unwrap_or_else(|| graphs.into_iter().map(|g| g.largest_factor_arity()).max().unwrap_or(2).max(1));
        let mut layer = match self.layer {
            LayerKind::Scalar => LayerConfig::scalar(self.init_alpha),
            LayerKind::Residual => LayerConfig::residual(c_max, self.init_alpha),
            LayerKind::MessageMlp => {
                let mut lne = [false; 4];
                for &b in &self.lne {
                    match b {
                        1..=4 => lne[b - 1] = true,
                        _ => return Err(input_error(format!("LNE block {b} not in 1..=4"))),
                    }
                }
                LayerConfig::message_mlp(c_max, self.init_alpha, lne)
            }
        };
        match &mut layer {
            LayerConfig::BpnnD { double_count, .. } | LayerConfig::MessageMlp { double_count, .. } => {
                *double_count = self.double_count
            }
        }
        if self.layers == 0 {
            return Err(input_error("--layers must be positive"));
        }
        let mut cfg = if self.tied {
            ModelConfig::tied(layer, c_max, a_max)
        } else {
            ModelConfig::stack(layer, self.layers, c_max, a_max, self.head == HeadKind::BpnnB)
        };
        if let HeadConfig::BpnnB { invariant, .. } = &mut cfg.head {
            *invariant = !self.no_invariant;
        }
        cfg.validate().map_err(input_error)?;
        Ok(cfg)
    }
}
