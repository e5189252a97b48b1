use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use bpnn_core::bp::{bethe_free_energy, bp_ln_z, compute_beliefs, BpConfig};
use bpnn_core::bpnn::{load_checkpoint, run_bpnn_d_to_convergence, BpnnModel};
use bpnn_core::exact::exact_ln_z;
use bpnn_core::FactorGraph;

use crate::args::BpArgs;
use crate::error::{input_error, Classify, CliResult};
use crate::manifest::{load_graph, LoadedManifest};
use crate::{emit, thread_pool};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Bp,
    Bpnn,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Factor-graph JSON or DIMACS files.
    pub graphs: Vec<PathBuf>,
    /// Take the graphs from a manifest instead.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub bp: BpArgs,
    /// Model for `--method bpnn`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Unrolled iterations for a tied model; defaults to its layer count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Iterate a tied BPNN-D model to convergence under the BP tolerances.
    #[arg(long)]
    pub to_convergence: bool,
    /// Leave `wall_ms` out so repeated runs produce identical output.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub instance: String,
    pub method: Method,
    /// `null` when the estimate is `-inf`.
    pub ln_z_estimate: Option<f64>,
    /// `null` for fixed-depth models.
    pub converged: Option<bool>,
    pub iterations: usize,
    pub wall_ms: Option<f64>,
}

/// One estimator bound to its settings.
#[derive(Clone, Debug)]
pub enum Estimator {
    Exact,
    Bp(BpConfig),
    Bpnn { model: BpnnModel, iterations: Option<usize>, converge: Option<BpConfig> },
}

impl Estimator {
    pub fn from_args(method: Method, bp: &BpArgs, checkpoint: Option<&Path>, iterations: Option<usize>, to_convergence: bool) -> CliResult<Self> {
        match (method, checkpoint) {
            (Method::Bpnn, None) => Err(input_error("--method bpnn needs --checkpoint")),
            (Method::Bpnn, Some(p)) => {
                let model = load_checkpoint(p).map_err(|e| input_error(format!("{}: {e}", p.display())))?;
                let converge = if to_convergence { Some(bp.config()?) } else { None };
                Ok(Estimator::Bpnn { model, iterations, converge })
            }
            (_, Some(_)) => Err(input_error("--checkpoint only applies to --method bpnn")),
            (Method::Exact, None) => Ok(Estimator::Exact),
            (Method::Bp, None) => Ok(Estimator::Bp(bp.config()?)),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Estimator::Exact => Method::Exact,
            Estimator::Bp(_) => Method::Bp,
            Estimator::Bpnn { .. } => Method::Bpnn,
        }
    }

    /// `(ln Z estimate, converged, iterations)`.
    pub fn estimate(&self, g: &FactorGraph) -> bpnn_core::Result<(f64, Option<bool>, usize)> {
        match self {
            Estimator::Exact => Ok((exact_ln_z(g)?.ln_z, Some(true), 0)),
            Estimator::Bp(cfg) => {
                let (terms, res) = bp_ln_z(g, cfg);
                Ok((terms.ln_z_estimate, Some(res.converged), res.iterations_run))
            }
            Estimator::Bpnn { model, converge: Some(cfg), .. } => {
                let res = run_bpnn_d_to_convergence(model, g, cfg)?;
                let est = bethe_free_energy(g, &compute_beliefs(g, &res.messages)).ln_z_estimate;
                Ok((est, Some(res.converged), res.iterations_run))
            }
            Estimator::Bpnn { model, iterations, converge: None } => {
                let pg = model.prepare(g)?;
                let k = iterations.unwrap_or(model.num_layers());
                Ok((model.predict_prepared(&pg, *iterations)?, None, k))
            }
        }
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// `(display name, path)` for the command's inputs.
pub fn input_paths(graphs: &[PathBuf], manifest: Option<&Path>) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = graphs.iter().map(|p| (p.display().to_string(), p.clone())).collect();
    if let Some(m) = manifest {
        let lm = LoadedManifest::read(m).input()?;
        out.extend(lm.manifest.instances.iter().map(|e| (e.path.clone(), lm.entry_path(e))));
    }
    if out.is_empty() {
        return Err(input_error("no input graphs"));
    }
    Ok(out)
}

pub fn estimate_all(est: &Estimator, inputs: &[(String, PathBuf)], timing: bool) -> CliResult<Vec<EstimateRecord>> {
    let graphs: Vec<FactorGraph> = inputs.iter().map(|(_, p)| load_graph(p)).collect::<anyhow::Result<_>>().input()?;
    let pool = thread_pool()?;
    let results: Vec<bpnn_core::Result<EstimateRecord>> = pool.install(|| {
        graphs
            .par_iter()
            .zip(inputs.par_iter())
            .map(|(g, (name, _))| {
                let start = Instant::now();
                let (z, converged, iterations) = est.estimate(g)?;
                let wall_ms = timing.then(|| start.elapsed().as_secs_f64() * 1e3);
                Ok(EstimateRecord { instance: name.clone(), method: est.method(), ln_z_estimate: finite(z), converged, iterations, wall_ms })
            })
            .collect()
    });
    results.into_iter().enumerate().map(|(i, r)| r.map_err(|e| input_error(format!("{}: {e}", inputs[i].0)))).collect()
}

pub fn cmd_estimate(a: &EstimateArgs) -> CliResult<()> {
    let est = Estimator::from_args(a.method, &a.bp, a.checkpoint.as_deref(), a.iterations, a.to_convergence)?;
    let inputs = input_paths(&a.graphs, a.manifest.as_deref())?;
    let records = estimate_all(&est, &inputs, !a.no_timing)?;
    let mut text = serde_json::to_string_pretty(&records).internal()?;
    text.push('\n');
    emit(a.out.as_deref(), &text)
}
