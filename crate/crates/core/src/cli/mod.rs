//! Command-line front end: `synth`, `train`, `eval`, `gradcheck`, `predict`.
//!
//! Exit codes: 0 success, 1 validation or I/O failure, 2 non-finite loss
//! during training, 3 gradient check failure.

mod config;

pub use config::{DataConfig, GradCheckOptions, NetworkOptions, ReportOptions, RunConfig, CONFIG_VERSION};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_csv, save_csv, split, synth_generate, Dataset, LoadOptions};
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate_model, predict, EvalReport, ReportFormat, TaskPrediction};
use crate::gradcheck::{corrupted_analytic, gradient_check, gradient_check_with, GradCheckReport};
use crate::network::checkpoint::Checkpoint;
use crate::network::{MultiTaskNet, NetConfig};
use crate::numcore::RngState;
use crate::optim::{train_with_validation, TrainTrace};
use crate::task::Task;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

pub const DATASET_FILE: &str = "dataset.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.rmtn";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const EFFECTIVE_CONFIG_FILE: &str = "config.effective.json";

#[derive(Debug, Parser)]
#[command(name = "resmtl", version, about = "Multi-task residual learning engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if needed.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic feature CSV.
    Synth(CommonArgs),
    /// Train on a feature CSV and write a checkpoint and loss trace.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Training CSV (overrides `data.train`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write JSON and text reports.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Evaluation CSV (overrides `data.eval`).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Defaults to `<out>/checkpoint.rmtn`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Write per-row predictions for a feature CSV.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        _ => EXIT_VALIDATION,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth(common) => {
            let cfg = load_config(&common)?;
            let path = cmd_synth(&cfg, &common.out)?;
            println!("wrote {}", path.display());
        }
        Command::Train { common, input } => {
            let mut cfg = load_config(&common)?;
            if input.is_some() {
                cfg.data.train = input;
            }
            let trace = cmd_train(&cfg, &common.out)?;
            if let Some(last) = trace.last() {
                println!("epoch {} total loss {:.6}", last.epoch, last.train.total);
                for (t, l) in last.train.tasks.iter() {
                    println!("  {t:<10} {l:.6}");
                }
            }
        }
        Command::Eval {
            common,
            input,
            checkpoint,
        } => {
            let mut cfg = load_config(&common)?;
            if input.is_some() {
                cfg.data.eval = input;
            }
            let ck = checkpoint.unwrap_or_else(|| common.out.join(CHECKPOINT_FILE));
            let report = cmd_eval(&cfg, &ck, &common.out)?;
            print!("{}", emit_report(&[report], ReportFormat::Text)?);
        }
        Command::Gradcheck {
            common,
            corrupt_backward,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(seed) = common.seed {
                cfg.gradcheck.seeds = vec![seed];
            }
            let report = cmd_gradcheck(&cfg, corrupt_backward)?;
            print!("{}", report.render_table());
            if !report.passed() {
                if let Some((seed, worst)) = report.worst() {
                    eprintln!(
                        "gradient check failed: `{}` (seed {seed}, entry {}) relative error {:.3e}",
                        worst.name, worst.worst_index, worst.max_rel_error
                    );
                }
                return Ok(EXIT_GRADCHECK);
            }
        }
        Command::Predict {
            common,
            input,
            checkpoint,
        } => {
            let mut cfg = load_config(&common)?;
            if input.is_some() {
                cfg.data.eval = input;
            }
            let ck = checkpoint.unwrap_or_else(|| common.out.join(CHECKPOINT_FILE));
            let path = cmd_predict(&cfg, &ck, &common.out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(EXIT_OK)
}

/// Flag > file > default.
pub fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.resolve(common.seed)
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(EFFECTIVE_CONFIG_FILE);
    fs::write(&path, cfg.to_json()?).map_err(|e| Error::io(&path, e))
}

fn report_warnings(ds: &Dataset) {
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let ds = synth_generate(&cfg.synth)?;
    prepare_out(out, cfg)?;
    let path = out.join(DATASET_FILE);
    save_csv(&ds, &path)?;
    Ok(path)
}

/// Builds a freshly initialized network whose heads match `ds`'s vocab.
pub fn build_network(cfg: &RunConfig, ds: &Dataset) -> Result<MultiTaskNet> {
    let heads = cfg.losses.resolve(|t| ds.vocab.num_classes(t))?;
    let net_cfg = NetConfig {
        input_dim: ds.feature_dim,
        hidden: cfg.network.hidden,
        dropout_rate: cfg.train.dropout_rate,
        dropout_in_residual: cfg.network.dropout_in_residual,
        heads,
    };
    MultiTaskNet::new(net_cfg, &mut RngState::new(cfg.seed).derive())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainTrace> {
    let path = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| Error::invalid("no training data: set data.train or pass --input"))?;
    let ds = load_csv(
        path,
        &LoadOptions {
            vocab: None,
            norm: cfg.normalization,
        },
    )?;
    report_warnings(&ds);
    if cfg.train.weights.all_zero() {
        eprintln!("warning: every task weight is zero; parameters will not change");
    }
    let ds = ds.normalize_targets()?;
    report_warnings(&ds);
    let (train_ds, val_ds) = match cfg.data.validation_fraction {
        Some(f) => {
            let (a, b) = split(&ds, 1.0 - f, cfg.seed)?;
            (a, Some(b))
        }
        None => (ds.clone(), None),
    };
    let net = build_network(cfg, &ds)?;
    let (net, trace) = train_with_validation(net, &train_ds, val_ds.as_ref(), &cfg.train)?;

    prepare_out(out, cfg)?;
    let ck = Checkpoint {
        net,
        vocab: ds.vocab.clone(),
        norm: ds.norm,
    };
    ck.save(out.join(CHECKPOINT_FILE))?;
    trace.write_jsonl(&out.join(TRACE_FILE))?;
    Ok(trace)
}

fn load_for_checkpoint(cfg: &RunConfig, ck: &Checkpoint) -> Result<Dataset> {
    let path = cfg
        .data
        .eval
        .as_ref()
        .or(cfg.data.train.as_ref())
        .ok_or_else(|| Error::invalid("no evaluation data: set data.eval or pass --input"))?;
    let ds = load_csv(
        path,
        &LoadOptions {
            vocab: Some(ck.vocab.clone()),
            norm: ck.norm,
        },
    )?;
    report_warnings(&ds);
    if ds.feature_dim != ck.net.input_dim() {
        return Err(Error::Incompatible(format!(
            "{} has {} features, checkpoint expects {}",
            path.display(),
            ds.feature_dim,
            ck.net.input_dim()
        )));
    }
    ds.normalize_with(ck.norm)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = load_for_checkpoint(cfg, &ck)?;
    let (report, _) = evaluate_model(&cfg.report.name, &ck.net, &ds, cfg.report.f1_scheme)?;
    prepare_out(out, cfg)?;
    let reports = std::slice::from_ref(&report);
    for (file, format) in [(REPORT_JSON_FILE, ReportFormat::Json), (REPORT_TEXT_FILE, ReportFormat::Text)] {
        let path = out.join(file);
        fs::write(&path, emit_report(reports, format)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

pub fn cmd_gradcheck(cfg: &RunConfig, corrupt_backward: bool) -> Result<GradCheckReport> {
    let gc = cfg.gradcheck_config();
    if corrupt_backward {
        gradient_check_with(&gc, corrupted_analytic)
    } else {
        gradient_check(&gc)
    }
}

/// One row per input: for each class head the predicted label, its index and
/// per-class probabilities; for each regression head the value in raw units.
pub fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<PathBuf> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = load_for_checkpoint(cfg, &ck)?;
    let preds = predict(&ck.net, &ds.feature_matrix())?;
    prepare_out(out, cfg)?;
    let path = out.join(PREDICTIONS_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);

    let mut header = vec!["id".to_owned()];
    for t in Task::CLASSIFICATION {
        header.push(t.name().to_owned());
        header.push(format!("{t}_index"));
        for k in 0..ck.vocab.num_classes(t) {
            header.push(format!("{t}_p{k}"));
        }
    }
    header.extend(["x_px", "y_px", "size_mm"].map(str::to_owned));
    w.write_record(&header)?;

    for (i, r) in ds.records.iter().enumerate() {
        let mut row = vec![r.id.clone()];
        for t in Task::CLASSIFICATION {
            let TaskPrediction::Classes { indices, probabilities } = &preds[t] else {
                unreachable!("classification head")
            };
            let c = indices[i];
            row.push(ck.vocab.label(t, c).unwrap_or_default().to_owned());
            row.push(c.to_string());
            row.extend(probabilities.row(i).iter().map(f64::to_string));
        }
        for t in Task::REGRESSION {
            let v = preds[t].values().expect("regression head")[i];
            row.push(ck.norm.to_raw(t, v)?.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
