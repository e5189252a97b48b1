use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use rand::Rng;
use serde_json::json;

use bpnn_core::exact::{brute_force_model_count, exact_ln_z, MAX_COUNT_VARIABLES};
use bpnn_core::factor_graph::to_json_string;
use bpnn_core::generators::{
    build_sbm_factor_graph, cnf_to_factor_graph, parse_dimacs, random_k_cnf, sample_ising, seeded_rng, CnfFormula, IsingSpec,
    SbmSpec,
};
use bpnn_core::{Error, FactorGraph};

use crate::error::{input_error, Classify, CliResult};
use crate::manifest::{Manifest, ManifestEntry, MANIFEST_FILE};
use crate::DEFAULT_MAX_ARITY;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(subcommand)]
    pub kind: GenerateKind,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum GenerateKind {
    /// Square spin grids with uniform fields and attractive couplings.
    Ising {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0.1)]
        f_max: f64,
        #[arg(long, default_value_t = 5.0)]
        c_max: f64,
    },
    /// Two-community stochastic block models.
    Sbm {
        #[arg(long, default_value_t = 15)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Factor graphs of CNF formulas labeled with ln(model count).
    CnfDataset {
        /// Directory of .cnf files; random formulas are drawn when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        num_vars: usize,
        #[arg(long, default_value_t = 30)]
        num_clauses: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_ARITY)]
        max_arity: usize,
    },
}

struct Item {
    name: String,
    graph: FactorGraph,
    label: Label,
    meta: Option<serde_json::Value>,
}

enum Label {
    Known(f64),
    Unknown(String),
}

fn oracle(g: &FactorGraph) -> CliResult<Label> {
    match exact_ln_z(g) {
        Ok(r) if r.is_zero => Ok(Label::Unknown("partition function is zero".into())),
        Ok(r) => Ok(Label::Known(r.ln_z)),
        Err(e @ Error::CapExceeded { .. }) => Ok(Label::Unknown(e.to_string())),
        Err(e) => Err(e).internal(),
    }
}

fn count_label(cnf: &CnfFormula, g: &FactorGraph) -> CliResult<Label> {
    if cnf.num_vars() > MAX_COUNT_VARIABLES {
        return oracle(g);
    }
    let r = brute_force_model_count(cnf).internal()?;
    Ok(if r.is_zero { Label::Unknown("unsatisfiable".into()) } else { Label::Known(r.ln_z) })
}

/// Per-instance seeds drawn from the command seed.
fn instance_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = seeded_rng(seed);
    (0..count).map(|_| rng.gen()).collect()
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let (command, params, items) = match &a.kind {
        &GenerateKind::Ising { n, count, f_max, c_max } => {
            let mut items = Vec::with_capacity(count);
            for (i, s) in instance_seeds(a.seed, count).into_iter().enumerate() {
                let graph = sample_ising(&IsingSpec { n, f_max, c_max, seed: s }).map_err(input_error)?;
                let label = oracle(&graph)?;
                items.push(Item { name: format!("ising_{i:04}"), graph, label, meta: Some(json!({ "seed": s })) });
            }
            ("ising", json!({ "n": n, "count": count, "f_max": f_max, "c_max": c_max }), items)
        }
        &GenerateKind::Sbm { n, count } => {
            let mut items = Vec::with_capacity(count);
            for (i, s) in instance_seeds(a.seed, count).into_iter().enumerate() {
                let spec = SbmSpec::two_community(n, s);
                let sample = build_sbm_factor_graph(&spec).map_err(input_error)?;
                let label = oracle(&sample.graph)?;
                let meta = json!({ "seed": s, "classes": sample.classes, "edges": sample.edges });
                items.push(Item { name: format!("sbm_{i:04}"), graph: sample.graph, label, meta: Some(meta) });
            }
            ("sbm", json!({ "n": n, "count": count }), items)
        }
        GenerateKind::CnfDataset { input, count, num_vars, num_clauses, k, max_arity } => {
            let mut items = Vec::new();
            match input {
                Some(dir) => {
                    for path in cnf_files(dir)? {
                        let text = fs::read_to_string(&path).input()?;
                        let cnf = parse_dimacs(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
                        let graph = cnf_to_factor_graph(&cnf, *max_arity).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
                        let label = count_label(&cnf, &graph)?;
                        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                        items.push(Item { name: stem, graph, label, meta: None });
                    }
                }
                None => {
                    for (i, s) in instance_seeds(a.seed, *count).into_iter().enumerate() {
                        let cnf = random_k_cnf(*num_vars, *num_clauses, *k, s).map_err(input_error)?;
                        let graph = cnf_to_factor_graph(&cnf, *max_arity).map_err(input_error)?;
                        let label = count_label(&cnf, &graph)?;
                        items.push(Item { name: format!("cnf_{i:04}"), graph, label, meta: Some(json!({ "seed": s })) });
                    }
                }
            }
            let params = json!({
                "input": input.as_ref().map(|p| p.display().to_string()),
                "count": count, "num_vars": num_vars, "num_clauses": num_clauses, "k": k, "max_arity": max_arity,
            });
            ("cnf-dataset", params, items)
        }
    };
    write_dataset(&a.out_dir, command, params, a.seed, items)
}

fn cnf_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .input()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "cnf"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(input_error(format!("no .cnf files in {}", dir.display())));
    }
    Ok(files)
}

fn write_dataset(out: &Path, command: &str, params: serde_json::Value, seed: u64, items: Vec<Item>) -> CliResult<()> {
    fs::create_dir_all(out).input()?;
    let mut instances = Vec::with_capacity(items.len());
    for item in items {
        let file = format!("{}.json", item.name);
        let mut text = to_json_string(&item.graph).internal()?;
        text.push('\n');
        fs::write(out.join(&file), text).input()?;
        let (ln_z, note) = match item.label {
            Label::Known(z) => (Some(z), None),
            Label::Unknown(why) => {
                log::warn!("{}: emitted without a label ({why})", item.name);
                (None, Some(why))
            }
        };
        instances.push(ManifestEntry { path: file, ln_z, tag: command.to_string(), note, meta: item.meta });
    }
    let manifest = Manifest { command: command.to_string(), params, seed: Some(seed), instances };
    manifest.write(&out.join(MANIFEST_FILE)).input()
}
