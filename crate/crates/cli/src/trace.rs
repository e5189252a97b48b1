use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;

use bpnn_core::bp::{run_bp, BpResult};
use bpnn_core::bpnn::{load_checkpoint, run_bpnn_d_to_convergence};

use crate::args::BpArgs;
use crate::error::{input_error, CliResult};
use crate::emit;
use crate::manifest::load_graph;

/// `bp` (damping from `--alpha`), `bp:ALPHA`, or `bpnn` for the
/// `--checkpoint` model run to convergence.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceMethod {
    Bp(Option<f64>),
    Bpnn,
}

impl FromStr for TraceMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "bp" => Ok(TraceMethod::Bp(None)),
            None if s == "bpnn" => Ok(TraceMethod::Bpnn),
            Some(("bp", a)) => a.parse().map(|a| TraceMethod::Bp(Some(a))).map_err(|_| format!("bad damping {a}")),
            _ => Err(format!("unknown method {s}; expected bp, bp:ALPHA or bpnn")),
        }
    }
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub graph: PathBuf,
    /// Repeatable; one CSV column each.
    #[arg(long = "method", required = true)]
    pub methods: Vec<TraceMethod>,
    #[command(flatten)]
    pub bp: BpArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_convergence_trace(a: &TraceArgs) -> CliResult<()> {
    let g = load_graph(&a.graph).map_err(input_error)?;
    let base = a.bp.config()?;
    let mut columns: Vec<(String, BpResult)> = Vec::new();
    for m in &a.methods {
        match m {
            TraceMethod::Bp(alpha) => {
                let cfg = bpnn_core::bp::BpConfig { damping: alpha.unwrap_or(base.damping), ..base.clone() };
                cfg.validate().map_err(input_error)?;
                columns.push((format!("bp_{}", cfg.damping), run_bp(&g, &cfg)));
            }
            TraceMethod::Bpnn => {
                let p = a.checkpoint.as_ref().ok_or_else(|| input_error("method bpnn needs --checkpoint"))?;
                let model = load_checkpoint(p).map_err(|e| input_error(format!("{}: {e}", p.display())))?;
                columns.push(("bpnn".into(), run_bpnn_d_to_convergence(&model, &g, &base).map_err(input_error)?));
            }
        }
    }
    emit(a.out.as_deref(), &trace_csv(&columns))
}

/// `iteration,<name>...` with one row per iteration; a column is left
/// empty once its run has stopped.
pub fn trace_csv(columns: &[(String, BpResult)]) -> String {
    let mut out = String::from("iteration");
    for (name, _) in columns {
        write!(out, ",{name}").expect("writing to a String");
    }
    out.push('\n');
    let rows = columns.iter().map(|(_, r)| r.delta_trace.len()).max().unwrap_or(0);
    for i in 0..rows {
        write!(out, "{}", i + 1).expect("writing to a String");
        for (_, r) in columns {
            match r.delta_trace.get(i) {
                Some(d) => write!(out, ",{d:e}"),
                None => write!(out, ","),
            }
            .expect("writing to a String");
        }
        out.push('\n');
    }
    out
}
