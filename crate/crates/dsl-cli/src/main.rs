//! Command-line front end: synthetic data generation, model fitting, node
//! selection, cross-validated evaluation, prediction, and hyperparameter
//! sweeps, all file-based and reproducible.
//!
//! Every run writes a `config.json` echo of its resolved parameters next to
//! its outputs, so a directory fully documents how it was produced. Exit
//! codes: 0 success, 2 usage or configuration error, 3 I/O error,
//! 4 numerical divergence.

use std::env;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use dsl_core::data::{generate_synthetic, SyntheticConfig};
use dsl_core::eval::{cross_validate, rank_features, roc_points};
use dsl_core::io;
use dsl_core::optim::{fit, FitOptions, Hyperparams};
use dsl_core::svm::{predict, MarginFlavor};
use dsl_core::{DslError, Result};

#[derive(Parser)]
#[command(
    name = "dsl",
    version,
    about = "Discriminative subgraph learning on labeled network samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset on a random geometric graph
    Generate(GenerateArgs),
    /// Fit the selection matrix and classifier on a dataset directory
    Fit(FitArgs),
    /// Rank nodes by selection strength and emit the top k
    Select(SelectArgs),
    /// Cross-validate selection quality and downstream accuracy
    Evaluate(EvaluateArgs),
    /// Predict labels for every sample in a dataset with a fitted model
    Predict(PredictArgs),
    /// Grid-sweep regularization strengths by cross-validated accuracy
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// JSON file supplying any flag values; explicit flags override it
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of graph nodes (required here or in --config)
    #[arg(long)]
    nodes: Option<usize>,
    /// Connection radius of the geometric graph (required)
    #[arg(long)]
    tau: Option<f64>,
    /// Number of labeled samples, split evenly between classes (required)
    #[arg(long)]
    samples: Option<usize>,
    /// Size of the planted ground-truth subgraph (required)
    #[arg(long)]
    gt_size: Option<usize>,
    /// Background noise variance; 0 plants exact class means (required)
    #[arg(long)]
    sigma: Option<f64>,
    /// Generator seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

/// Regularization and solver flags shared by fit, evaluate, and sweep.
#[derive(Args)]
struct HyperArgs {
    /// Named parameter preset; `synthetic` sets (0.1, 0.3, 1) [default: synthetic]
    #[arg(long)]
    preset: Option<String>,
    /// Row-sparsity strength [default: 0.1]
    #[arg(long)]
    lambda1: Option<f64>,
    /// Graph-smoothness strength [default: 0.3]
    #[arg(long)]
    lambda2: Option<f64>,
    /// Weight of the classification term [default: 1]
    #[arg(long)]
    pi: Option<f64>,
    /// Hinge-slack penalty of the margin subproblem [default: 1]
    #[arg(long)]
    c: Option<f64>,
    /// Margin flavor: 1 = L1 hinge via LP, 2 = squared hinge [default: 2]
    #[arg(long)]
    flavor: Option<u8>,
    /// Relative objective tolerance of the outer loop [default: 1e-4]
    #[arg(long)]
    outer_tol: Option<f64>,
    /// Relative selection-change tolerance of the inner loop [default: 1e-4]
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Outer iteration cap [default: 50]
    #[arg(long)]
    max_outer: Option<usize>,
    /// Inner iteration cap [default: 30]
    #[arg(long)]
    max_inner: Option<usize>,
    /// Reuse factorizations via diagonal-shift inverse updates [default: true]
    #[arg(long, value_name = "BOOL")]
    inverse_updates: Option<bool>,
    /// Scale samples to a common norm internally [default: true]
    #[arg(long, value_name = "BOOL")]
    normalize: Option<bool>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory holding data.csv, labels.csv, edges.csv (required)
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Also write the objective trace as CSV to this path
    #[arg(long, value_name = "PATH")]
    trace_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Fitted model JSON (required here or in --config)
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Number of nodes to report (required)
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory (required); gt_nodes.csv there enables recovery AUC
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Number of nodes kept per fold (required)
    #[arg(long)]
    k: Option<usize>,
    /// Cross-validation folds [default: 5]
    #[arg(long)]
    folds: Option<usize>,
    /// Fold-assignment seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Also write ROC points of the full-data ranking (needs gt_nodes.csv)
    #[arg(long, value_name = "PATH")]
    roc_csv: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Fitted model JSON (required here or in --config)
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Dataset directory to predict on (required)
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory (required)
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Number of nodes kept per fold (required)
    #[arg(long)]
    k: Option<usize>,
    /// Cross-validation folds [default: 5]
    #[arg(long)]
    folds: Option<usize>,
    /// Fold-assignment seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Row-sparsity grid [default: 0.01,0.05,0.1,0.5]
    #[arg(long, value_delimiter = ',')]
    lambda1_grid: Option<Vec<f64>>,
    /// Smoothness grid [default: 0.01,0.05,0.1,0.3]
    #[arg(long, value_delimiter = ',')]
    lambda2_grid: Option<Vec<f64>>,
    /// Classification-weight grid [default: 1]
    #[arg(long, value_delimiter = ',')]
    pi_grid: Option<Vec<f64>>,
    /// Hinge-slack penalty applied at every grid point [default: 1]
    #[arg(long)]
    c: Option<f64>,
}

/// Optional values loadable from `--config`; unknown keys are rejected so
/// typos surface as configuration errors.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    nodes: Option<usize>,
    tau: Option<f64>,
    samples: Option<usize>,
    gt_size: Option<usize>,
    sigma: Option<f64>,
    seed: Option<u64>,
    preset: Option<String>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    pi: Option<f64>,
    c: Option<f64>,
    flavor: Option<u8>,
    outer_tol: Option<f64>,
    inner_tol: Option<f64>,
    max_outer: Option<usize>,
    max_inner: Option<usize>,
    inverse_updates: Option<bool>,
    normalize: Option<bool>,
    k: Option<usize>,
    folds: Option<usize>,
    lambda1_grid: Option<Vec<f64>>,
    lambda2_grid: Option<Vec<f64>>,
    pi_grid: Option<Vec<f64>>,
    data: Option<PathBuf>,
    model: Option<PathBuf>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| DslError::io(p, e))?;
            let cfg: FileConfig =
                serde_json::from_str(&text).map_err(|e| DslError::InvalidParameter {
                    name: "config",
                    message: format!("{}: {e}", p.display()),
                })?;
            Ok(cfg)
        }
    }
}

fn require<T>(flag: &'static str, value: Option<T>) -> Result<T> {
    value.ok_or(DslError::InvalidParameter {
        name: flag,
        message: "missing; pass the flag or set it in --config".into(),
    })
}

/// Resolved regularization and solver settings, echoed into config.json.
#[derive(Serialize)]
struct ResolvedHyper {
    lambda1: f64,
    lambda2: f64,
    pi: f64,
    c: f64,
    flavor: u8,
    outer_tol: f64,
    inner_tol: f64,
    max_outer: usize,
    max_inner: usize,
    inverse_updates: bool,
    normalize: bool,
}

fn resolve_hyper(a: &HyperArgs, fc: &FileConfig) -> Result<(Hyperparams, FitOptions, ResolvedHyper)> {
    let preset = a.preset.clone().or_else(|| fc.preset.clone());
    let base = match preset.as_deref() {
        None | Some("synthetic") => (0.1, 0.3, 1.0),
        Some(other) => {
            return Err(DslError::InvalidParameter {
                name: "preset",
                message: format!("unknown preset {other:?}; available: synthetic"),
            })
        }
    };
    let lambda1 = a.lambda1.or(fc.lambda1).unwrap_or(base.0);
    let lambda2 = a.lambda2.or(fc.lambda2).unwrap_or(base.1);
    let pi = a.pi.or(fc.pi).unwrap_or(base.2);
    let c = a.c.or(fc.c).unwrap_or(1.0);
    let hp = Hyperparams::new(lambda1, lambda2, pi, c)?;

    let defaults = FitOptions::default();
    let flavor_raw = a.flavor.or(fc.flavor).unwrap_or(defaults.flavor.as_u8());
    let opts = FitOptions {
        flavor: MarginFlavor::from_u8(flavor_raw)?,
        outer_tol: a.outer_tol.or(fc.outer_tol).unwrap_or(defaults.outer_tol),
        inner_tol: a.inner_tol.or(fc.inner_tol).unwrap_or(defaults.inner_tol),
        max_outer: a.max_outer.or(fc.max_outer).unwrap_or(defaults.max_outer),
        max_inner: a.max_inner.or(fc.max_inner).unwrap_or(defaults.max_inner),
        use_inverse_updates: a
            .inverse_updates
            .or(fc.inverse_updates)
            .unwrap_or(defaults.use_inverse_updates),
        normalize: a.normalize.or(fc.normalize).unwrap_or(defaults.normalize),
    };
    let echo = ResolvedHyper {
        lambda1,
        lambda2,
        pi,
        c,
        flavor: flavor_raw,
        outer_tol: opts.outer_tol,
        inner_tol: opts.inner_tol,
        max_outer: opts.max_outer,
        max_inner: opts.max_inner,
        inverse_updates: opts.use_inverse_updates,
        normalize: opts.normalize,
    };
    Ok((hp, opts, echo))
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DslError::io(dir, e))
}

fn write_config<T: Serialize>(dir: &Path, resolved: &T) -> Result<()> {
    let path = dir.join("config.json");
    let mut text = serde_json::to_string_pretty(resolved)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| DslError::io(&path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DslError::io(path, e))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let fc = load_file_config(a.common.config.as_deref())?;
    let nodes = require("--nodes", a.nodes.or(fc.nodes))?;
    let tau = require("--tau", a.tau.or(fc.tau))?;
    let samples = require("--samples", a.samples.or(fc.samples))?;
    let gt_size = require("--gt-size", a.gt_size.or(fc.gt_size))?;
    let sigma_sq = require("--sigma", a.sigma.or(fc.sigma))?;
    if !(sigma_sq >= 0.0) || !sigma_sq.is_finite() {
        return Err(DslError::InvalidParameter {
            name: "--sigma",
            message: format!("{sigma_sq} must be a finite variance >= 0"),
        });
    }
    let seed = a.seed.or(fc.seed).unwrap_or(0);

    let cfg = SyntheticConfig {
        n_nodes: nodes,
        tau,
        n_samples: samples,
        gt_size,
        sigma: sigma_sq.sqrt(),
        pos_range: (50.0, 100.0),
        neg_range: (-100.0, -50.0),
        seed,
    };
    let generated = generate_synthetic(&cfg)?;

    ensure_out_dir(&a.common.out)?;
    io::save_dataset(&a.common.out, &generated.dataset)?;
    io::save_gt_nodes(
        &a.common.out.join("gt_nodes.csv"),
        generated.dataset.graph(),
        &generated.gt_nodes,
    )?;

    #[derive(Serialize)]
    struct Resolved {
        command: &'static str,
        nodes: usize,
        tau: f64,
        samples: usize,
        gt_size: usize,
        sigma: f64,
        sigma_sq: f64,
        seed: u64,
    }
    write_config(
        &a.common.out,
        &Resolved {
            command: "generate",
            nodes,
            tau,
            samples,
            gt_size,
            sigma: sigma_sq.sqrt(),
            sigma_sq,
            seed,
        },
    )
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let fc = load_file_config(a.common.config.as_deref())?;
    let data_dir = require("--data", a.data.clone().or_else(|| fc.data.clone()))?;
    let (hp, opts, echo) = resolve_hyper(&a.hyper, &fc)?;

    let data = io::load_dataset(&data_dir)?;
    let model = fit(&data, &hp, &opts)?;

    ensure_out_dir(&a.common.out)?;
    io::save_model(&a.common.out.join("model.json"), &model)?;
    if let Some(trace_path) = &a.trace_csv {
        let mut text = String::from("outer_iter,objective,duality_gap\n");
        for point in &model.trace {
            text.push_str(&format!(
                "{},{:.16e},{:.16e}\n",
                point.outer_iter, point.objective, point.duality_gap
            ));
        }
        write_text(trace_path, &text)?;
    }

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        data: &'a Path,
        #[serde(flatten)]
        hyper: &'a ResolvedHyper,
    }
    write_config(
        &a.common.out,
        &Resolved {
            command: "fit",
            data: &data_dir,
            hyper: &echo,
        },
    )
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let fc = load_file_config(a.common.config.as_deref())?;
    let model_path = require("--model", a.model.clone().or_else(|| fc.model.clone()))?;
    let k = require("--k", a.k.or(fc.k))?;

    let model = io::load_model(&model_path)?;
    let m = model.selection.n_nodes();
    if k == 0 || k > m {
        return Err(DslError::InvalidParameter {
            name: "--k",
            message: format!("{k} outside 1..={m}"),
        });
    }
    let ranking = rank_features(model.selection.phi());

    ensure_out_dir(&a.common.out)?;
    let mut text = String::from("rank,node,score\n");
    for (rank, &node) in ranking.order[..k].iter().enumerate() {
        text.push_str(&format!(
            "{},{},{:.16e}\n",
            rank + 1,
            node,
            ranking.scores[node]
        ));
    }
    write_text(&a.common.out.join("selection.csv"), &text)?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        model: &'a Path,
        k: usize,
    }
    write_config(
        &a.common.out,
        &Resolved {
            command: "select",
            model: &model_path,
            k,
        },
    )
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let fc = load_file_config(a.common.config.as_deref())?;
    let data_dir = require("--data", a.data.clone().or_else(|| fc.data.clone()))?;
    let k = require("--k", a.k.or(fc.k))?;
    let folds = a.folds.or(fc.folds).unwrap_or(5);
    let seed = a.seed.or(fc.seed).unwrap_or(0);
    let (hp, opts, echo) = resolve_hyper(&a.hyper, &fc)?;

    let data = io::load_dataset(&data_dir)?;
    let gt_path = data_dir.join("gt_nodes.csv");
    let gt = if gt_path.exists() {
        Some(io::load_gt_nodes(&gt_path, data.graph())?)
    } else {
        None
    };

    let report = cross_validate(&data, &hp, k, folds, seed, &opts, gt.as_deref())?;

    ensure_out_dir(&a.common.out)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_text(&a.common.out.join("report.json"), &text)?;

    if let Some(roc_path) = &a.roc_csv {
        let gt = gt.as_deref().ok_or(DslError::InvalidParameter {
            name: "--roc-csv",
            message: format!("needs {} to score the ranking", gt_path.display()),
        })?;
        let full = fit(&data, &hp, &opts)?;
        let ranking = rank_features(full.selection.phi());
        let mut text = String::from("fpr,tpr\n");
        for (fpr, tpr) in roc_points(&ranking.scores, gt)? {
            text.push_str(&format!("{fpr},{tpr}\n"));
        }
        write_text(roc_path, &text)?;
    }

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        data: &'a Path,
        k: usize,
        folds: usize,
        seed: u64,
        #[serde(flatten)]
        hyper: &'a ResolvedHyper,
    }
    write_config(
        &a.common.out,
        &Resolved {
            command: "evaluate",
            data: &data_dir,
            k,
            folds,
            seed,
            hyper: &echo,
        },
    )
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let fc = load_file_config(a.common.config.as_deref())?;
    let model_path = require("--model", a.model.clone().or_else(|| fc.model.clone()))?;
    let data_dir = require("--data", a.data.clone().or_else(|| fc.data.clone()))?;

    let model = io::load_model(&model_path)?;
    let data = io::load_dataset(&data_dir)?;

    ensure_out_dir(&a.common.out)?;
    let mut text = String::from("sample,predicted,actual\n");
    for i in 0..data.n_samples() {
        let column = DVector::from(data.x().column(i));
        let label = predict(&model.hyperplane, &model.selection, &column)?;
        text.push_str(&format!("{},{},{}\n", i, label, data.y()[i]));
    }
    write_text(&a.common.out.join("predictions.csv"), &text)?;

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        model: &'a Path,
        data: &'a Path,
    }
    write_config(
        &a.common.out,
        &Resolved {
            command: "predict",
            model: &model_path,
            data: &data_dir,
        },
    )
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let fc = load_file_config(a.common.config.as_deref())?;
    let data_dir = require("--data", a.data.clone().or_else(|| fc.data.clone()))?;
    let k = require("--k", a.k.or(fc.k))?;
    let folds = a.folds.or(fc.folds).unwrap_or(5);
    let seed = a.seed.or(fc.seed).unwrap_or(0);
    let c = a.c.or(fc.c).unwrap_or(1.0);
    let lambda1_grid = a
        .lambda1_grid
        .clone()
        .or_else(|| fc.lambda1_grid.clone())
        .unwrap_or_else(|| vec![0.01, 0.05, 0.1, 0.5]);
    let lambda2_grid = a
        .lambda2_grid
        .clone()
        .or_else(|| fc.lambda2_grid.clone())
        .unwrap_or_else(|| vec![0.01, 0.05, 0.1, 0.3]);
    let pi_grid = a
        .pi_grid
        .clone()
        .or_else(|| fc.pi_grid.clone())
        .unwrap_or_else(|| vec![1.0]);

    let data = io::load_dataset(&data_dir)?;
    let mut grid = Vec::new();
    for &l1 in &lambda1_grid {
        for &l2 in &lambda2_grid {
            for &pi in &pi_grid {
                grid.push(Hyperparams::new(l1, l2, pi, c)?);
            }
        }
    }

    use rayon::prelude::*;
    let opts = FitOptions::default();
    let rows: Vec<Result<f64>> = grid
        .par_iter()
        .map(|hp| Ok(cross_validate(&data, hp, k, folds, seed, &opts, None)?.accuracy))
        .collect();

    ensure_out_dir(&a.common.out)?;
    let mut text = String::from("lambda1,lambda2,pi,accuracy\n");
    let mut best: Option<(f64, &Hyperparams)> = None;
    for (hp, row) in grid.iter().zip(rows) {
        let accuracy = row?;
        text.push_str(&format!(
            "{},{},{},{:.6}\n",
            hp.lambda1, hp.lambda2, hp.pi, accuracy
        ));
        if best.map(|(b, _)| accuracy > b).unwrap_or(true) {
            best = Some((accuracy, hp));
        }
    }
    write_text(&a.common.out.join("sweep.csv"), &text)?;
    let (accuracy, hp) = best.expect("grid is nonempty");
    println!(
        "best: lambda1={} lambda2={} pi={} accuracy={accuracy:.6}",
        hp.lambda1, hp.lambda2, hp.pi
    );

    #[derive(Serialize)]
    struct Resolved<'a> {
        command: &'static str,
        data: &'a Path,
        k: usize,
        folds: usize,
        seed: u64,
        c: f64,
        lambda1_grid: &'a [f64],
        lambda2_grid: &'a [f64],
        pi_grid: &'a [f64],
    }
    write_config(
        &a.common.out,
        &Resolved {
            command: "sweep",
            data: &data_dir,
            k,
            folds,
            seed,
            c,
            lambda1_grid: &lambda1_grid,
            lambda2_grid: &lambda2_grid,
            pi_grid: &pi_grid,
        },
    )
}

/// Caps the worker pool when DSL_THREADS is set; must run before any
/// parallel work touches the global pool.
fn apply_thread_cap() -> Result<()> {
    match env::var("DSL_THREADS") {
        Err(_) => Ok(()),
        Ok(raw) => {
            let n: usize = raw.parse().map_err(|_| DslError::InvalidParameter {
                name: "DSL_THREADS",
                message: format!("{raw:?} is not a positive integer"),
            })?;
            if n == 0 {
                return Err(DslError::InvalidParameter {
                    name: "DSL_THREADS",
                    message: "must be at least 1".into(),
                });
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| DslError::InvalidParameter {
                    name: "DSL_THREADS",
                    message: e.to_string(),
                })
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Select(a) => cmd_select(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn exit_for(e: &DslError) -> u8 {
    match e {
        DslError::Io { .. } | DslError::Parse { .. } | DslError::Json(_) => 3,
        DslError::Divergence { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = apply_thread_cap().and_then(|()| dispatch(cli)) {
        let mut stderr = std::io::stderr().lock();
        let _ = writeln!(stderr, "error: {e}");
        return ExitCode::from(exit_for(&e));
    }
    ExitCode::SUCCESS
}
