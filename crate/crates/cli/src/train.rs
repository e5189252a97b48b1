use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use bpnn_core::bpnn::{save_checkpoint, BpnnModel};
use bpnn_core::Error;
use bpnn_core::training::{evaluate_rmse, mse_loss, train_with, LabeledInstance, TrainConfig};

use crate::args::{BpArgs, ModelArgs};
use crate::error::{input_error, Classify, CliError, CliResult, ErrorKind};
use crate::estimate::{Estimator, Method};
use crate::manifest::LoadedManifest;
use crate::emit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    /// Reproduces damped BP with a Bethe readout.
    Identity,
    /// Glorot-uniform weights.
    Random,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = InitKind::Identity)]
    pub init: InitKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path; the parameters go next to it with a .bin extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Reported per epoch in loss.csv.
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = InitKind::Identity)]
    pub init: InitKind,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    /// `EPOCH:FACTOR` rate changes, repeatable.
    #[arg(long, value_parser = parse_pair::<usize, f64>, default_values = ["50:0.5"])]
    pub decay: Vec<(usize, f64)>,
    /// Drop every rate change.
    #[arg(long)]
    pub no_decay: bool,
    /// Defaults to the whole training set.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `LO:HI` unrolled iterations sampled per epoch (tied models).
    #[arg(long, value_parser = parse_pair::<usize, usize>)]
    pub unroll: Option<(usize, usize)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Bpnn)]
    pub method: Method,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub bp: BpArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_pair<A: std::str::FromStr, B: std::str::FromStr>(s: &str) -> Result<(A, B), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected A:B, got {s}"))?;
    Ok((a.parse().map_err(|_| format!("bad value {a}"))?, b.parse().map_err(|_| format!("bad value {b}"))?))
}

fn build_model(args: &ModelArgs, init: InitKind, seed: u64, data: &[LabeledInstance]) -> CliResult<BpnnModel> {
    let cfg = args.config(data.iter().map(|d| &d.graph))?;
    let mut model = BpnnModel::new(cfg).map_err(input_error)?;
    if init == InitKind::Random {
        model.init_random(seed);
    }
    Ok(model)
}

pub fn cmd_init(a: &InitArgs) -> CliResult<()> {
    let model = build_model(&a.model, a.init, a.seed, &[])?;
    save_checkpoint(&model, &a.out).input()
}

pub const LOSS_CSV: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "model.json";

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let data = LoadedManifest::read(&a.manifest).and_then(|m| m.labeled()).input()?;
    let val = match &a.val_manifest {
        Some(p) => Some(LoadedManifest::read(p).and_then(|m| m.labeled()).input()?),
        None => None,
    };
    let mut model = build_model(&a.model, a.init, a.seed, &data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        decay: if a.no_decay { Vec::new() } else { a.decay.clone() },
        seed: a.seed,
        unroll: a.unroll,
    };
    cfg.validate().map_err(input_error)?;
    let mut val_rmse = Vec::new();
    let report = train_with(&mut model, &data, &cfg, |_, m| {
        if let Some(v) = &val {
            val_rmse.push(evaluate_rmse(m, v)?);
        }
        Ok(())
    })
    .map_err(|e| match e {
        Error::NonFiniteLoss { .. } => CliError { kind: ErrorKind::Internal, source: e.into() },
        e => input_error(e),
    })?;
    fs::create_dir_all(&a.out_dir).input()?;
    save_checkpoint(&model, &a.out_dir.join(CHECKPOINT_FILE)).internal()?;
    let mut csv = String::from("epoch,train_loss,val_rmse\n");
    for (e, loss) in report.loss_history.iter().enumerate() {
        let v = val_rmse.get(e).map(|x| format!("{x:e}")).unwrap_or_default();
        writeln!(csv, "{e},{loss:e},{v}").expect("writing to a String");
    }
    fs::write(a.out_dir.join(LOSS_CSV), csv).input()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseEntry {
    pub rmse: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub overall: RmseEntry,
    pub by_tag: BTreeMap<String, RmseEntry>,
}

pub fn evaluate(est: &Estimator, data: &[LabeledInstance]) -> CliResult<EvalReport> {
    let mut preds = Vec::with_capacity(data.len());
    for d in data {
        preds.push(est.estimate(&d.graph).map_err(input_error)?.0);
    }
    let rmse = |idx: &[usize]| -> CliResult<RmseEntry> {
        let p: Vec<f64> = idx.iter().map(|&i| preds[i]).collect();
        let t: Vec<f64> = idx.iter().map(|&i| data[i].ln_z_true).collect();
        Ok(RmseEntry { rmse: mse_loss(&p, &t).internal()?.sqrt(), count: idx.len() })
    };
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, d) in data.iter().enumerate() {
        groups.entry(d.tag.clone()).or_default().push(i);
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let by_tag = groups.iter().map(|(k, v)| Ok((k.clone(), rmse(v)?))).collect::<CliResult<_>>()?;
    Ok(EvalReport { method: est.method(), overall: rmse(&all)?, by_tag })
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let est = Estimator::from_args(a.method, &a.bp, a.checkpoint.as_deref(), None, false)?;
    let data = LoadedManifest::read(&a.manifest).and_then(|m| m.labeled()).input()?;
    let report = evaluate(&est, &data)?;
    let mut text = serde_json::to_string_pretty(&report).internal()?;
    text.push('\n');
    emit(a.out.as_deref(), &text)
}
