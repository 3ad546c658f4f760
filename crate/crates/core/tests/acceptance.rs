//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
//!
//! The optional real-data check runs when `RESMTL_REAL_CSV` points at a
//! feature CSV; otherwise it reports SKIP.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use resmtl::cli::{build_network, RunConfig};
use resmtl::data::{split, synth_generate, Dataset, SynthSpec};
use resmtl::eval::{
    accuracy, emit_report, evaluate, evaluate_model, mae_metric, macro_f1, mse_metric, stratify_by_size, F1Scheme,
    Predictions, ReportDocument, ReportFormat, SizeBucket, TaskPrediction,
};
use resmtl::gradcheck::{gradient_check, GradCheckConfig, Problem};
use resmtl::losses::{
    bce_with_logits, compute_losses, label_smoothing_ce, total_loss, LabelSmoothingConfig, TaskWeights,
};
use resmtl::network::{MultiTaskNet, NetConfig};
use resmtl::optim::{train, TrainConfig};
use resmtl::{Matrix, RngState, Task, TaskMap};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("residual identity", residual_identity),
        ("loss identities", loss_identities),
        ("overfit sanity", overfit_sanity),
        ("generalization sanity", generalization_sanity),
        ("metric oracles", metric_oracles),
        ("stratification conservation", stratification_conservation),
        ("determinism", determinism),
        ("real-data path (optional)", real_data_path),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        match outcome {
            Outcome::Pass(d) => println!("PASS  {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP  {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = GradCheckConfig::default();
    let report = gradient_check(&cfg).expect("gradient check runs");
    let elapsed = start.elapsed();
    let seeds: Vec<u64> = report.seeds.iter().map(|s| s.seed).collect();
    let ok = seeds == [1, 2, 3]
        && cfg.abs_floor == 1e-8
        && report.max_rel_error() <= 1e-4
        && elapsed < Duration::from_secs(30);
    check(
        ok,
        format!(
            "seeds {seeds:?}, max relative error {:.2e} (limit 1e-4), {} (limit 30s)",
            report.max_rel_error(),
            secs(elapsed)
        ),
    )
}

fn residual_identity() -> Outcome {
    let heads = resmtl::losses::LossAssignment::default().resolve(|_| 3).unwrap();
    let cfg = NetConfig {
        input_dim: 12,
        hidden: 24,
        dropout_rate: 0.2,
        dropout_in_residual: false,
        heads,
    };
    let mut rng = RngState::new(99);
    let mut net = MultiTaskNet::new(cfg, &mut rng).unwrap();
    net.block.zero_branch();
    let x = Matrix::new(100, 24, (0..2400).map(|_| rng.normal(0.0, 3.0)).collect()).unwrap();
    let y = net.block.forward(&x).unwrap();
    let dev = y.max_abs_diff(&x).unwrap();
    check(dev == 0.0, format!("max abs deviation {dev:e} on 100 inputs"))
}

/// Cross-entropy against a hard label via log-sum-exp.
fn plain_ce(logits: &[f64], class: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[class]
}

fn loss_identities() -> Outcome {
    let mut rng = RngState::new(5);
    let mut ce_err: f64 = 0.0;
    for _ in 0..200 {
        let c = 2 + (rng.next_u64() % 5) as usize;
        let n = 1 + (rng.next_u64() % 8) as usize;
        let logits = Matrix::new(n, c, (0..n * c).map(|_| rng.normal(0.0, 4.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| (rng.next_u64() % c as u64) as usize).collect();
        let (l, _) = label_smoothing_ce(&logits, &labels, &LabelSmoothingConfig::new(0.0, c).unwrap()).unwrap();
        let want = (0..n).map(|i| plain_ce(logits.row(i), labels[i])).sum::<f64>() / n as f64;
        ce_err = ce_err.max((l - want).abs());
    }

    let logits = Matrix::row_vector(vec![0.7f64.ln(), 0.3f64.ln()]);
    let (hand, _) = label_smoothing_ce(&logits, &[0], &LabelSmoothingConfig::new(0.1, 2).unwrap()).unwrap();
    let hand_err = (hand - 0.39904).abs();

    let mut bce_err: f64 = 0.0;
    let mut z = -30.0;
    while z <= 30.0 {
        for t in [0.0, 1.0] {
            let e = (-z as f64).exp();
            let naive = -(t * (1.0 / (1.0 + e)).ln() + (1.0 - t) * (e / (1.0 + e)).ln());
            let (l, _) = bce_with_logits(&Matrix::column(vec![z]), &[t]).unwrap();
            bce_err = bce_err.max((l - naive).abs());
        }
        z += 0.125;
    }

    let p = Problem::seeded(&GradCheckConfig::default(), 8).unwrap();
    let (out, _) = p.net.forward_eval(&p.batch).unwrap();
    let bundle = compute_losses(&out, &p.targets, p.net.head_specs(), p.smoothing).unwrap();
    let mut lin_err: f64 = 0.0;
    for t in Task::ALL {
        for scale in [0.0, 0.5, 2.0, 3.0] {
            let mut w = p.weights.as_map().clone();
            w[t] *= scale;
            let l = total_loss(&bundle, &TaskWeights::new(w).unwrap()).unwrap();
            let base = total_loss(&bundle, &p.weights).unwrap();
            let want = base + (scale - 1.0) * p.weights.get(t) * bundle.get(t).unwrap().loss;
            lin_err = lin_err.max((l - want).abs());
        }
    }

    let ok = ce_err <= 1e-12 && hand_err <= 1e-5 && bce_err <= 1e-10 && lin_err <= 1e-12;
    check(
        ok,
        format!(
            "CE(α=0) err {ce_err:.1e} (≤1e-12), hand example {hand:.5} err {hand_err:.1e} (≤1e-5), \
             BCE err {bce_err:.1e} (≤1e-10), λ-linearity err {lin_err:.1e} (≤1e-12)"
        ),
    )
}

fn run_config(seed: u64, hidden: usize, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.network.hidden = hidden;
    cfg.train = TrainConfig {
        epochs,
        batch_size: 32,
        seed,
        dropout_rate: 0.0,
        ..Default::default()
    };
    cfg
}

fn summarize(report: &resmtl::eval::TaskReports) -> (f64, f64, f64) {
    let min_acc = report.classification.iter().map(|c| c.accuracy).fold(f64::INFINITY, f64::min);
    let max_mse = report.regression.iter().map(|r| r.normalized.mse).fold(0.0, f64::max);
    let max_mae = report.regression.iter().map(|r| r.normalized.mae).fold(0.0, f64::max);
    (min_acc, max_mse, max_mae)
}

fn overfit_sanity() -> Outcome {
    let spec = SynthSpec {
        samples: 64,
        feature_dim: 32,
        seed: 42,
        ..Default::default()
    };
    let ds = synth_generate(&spec).unwrap().normalize_targets().unwrap();
    let cfg = run_config(42, 64, 2000);
    let start = Instant::now();
    let net = build_network(&cfg, &ds).unwrap();
    let (net, _) = train(net, &ds, &cfg.train).unwrap();
    let elapsed = start.elapsed();
    let (report, _) = evaluate_model("overfit", &net, &ds, F1Scheme::Macro).unwrap();
    let (acc, mse, _) = summarize(&report.tasks);
    let ok = report.tasks.classification.len() == 4
        && report.tasks.regression.len() == 3
        && acc >= 0.95
        && mse <= 1e-3
        && elapsed < Duration::from_secs(60);
    check(
        ok,
        format!(
            "min train accuracy {acc:.3} (≥0.95), max train MSE {mse:.2e} (≤1e-3), 2000 epochs in {} (limit 60s)",
            secs(elapsed)
        ),
    )
}

fn generalization_sanity() -> Outcome {
    let spec = SynthSpec {
        samples: 2000,
        seed: 7,
        noise: 0.05,
        ..Default::default()
    };
    let ds = synth_generate(&spec).unwrap();
    let start = Instant::now();
    let (train_ds, test_ds) = split(&ds, 0.8, 7).unwrap();
    let train_ds = train_ds.normalize_targets().unwrap();
    let test_ds = test_ds.normalize_with(train_ds.norm).unwrap();
    let cfg = run_config(7, 64, 300);
    let net = build_network(&cfg, &train_ds).unwrap();
    let (net, _) = train(net, &train_ds, &cfg.train).unwrap();
    let (report, _) = evaluate_model("held-out", &net, &test_ds, F1Scheme::Macro).unwrap();
    let elapsed = start.elapsed();
    let (acc, _, mae) = summarize(&report.tasks);
    let ok = report.tasks.classification.len() == 4
        && report.tasks.regression.len() == 3
        && acc >= 0.90
        && mae <= 0.05
        && elapsed < Duration::from_secs(300);
    check(
        ok,
        format!(
            "{} train / {} held out, min accuracy {acc:.3} (≥0.90), max normalized MAE {mae:.4} (≤0.05), {} (limit 5min)",
            train_ds.len(),
            test_ds.len(),
            secs(elapsed)
        ),
    )
}

fn metric_oracles() -> Outcome {
    let preds = [0, 0, 1, 1];
    let truth = [0, 1, 1, 1];
    // class 0: tp 1, fp 1, fn 0; class 1: tp 2, fp 0, fn 1
    let f1_0 = 2.0 * 0.5 * 1.0 / 1.5;
    let f1_1 = 2.0 * 1.0 * (2.0 / 3.0) / (1.0 + 2.0 / 3.0);
    let errs = [
        (accuracy(&preds, &truth).unwrap() - 0.75).abs(),
        (macro_f1(&preds, &truth, 2).unwrap() - (f1_0 + f1_1) / 2.0).abs(),
        (mse_metric(&[1.0, 2.0], &[0.0, 0.0], None).unwrap() - 2.5).abs(),
        (mae_metric(&[1.0, 2.0], &[0.0, 0.0], None).unwrap() - 1.5).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);

    let mut rng = RngState::new(2024);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = 1 + (rng.next_u64() % 50) as usize;
        let scale = rng.uniform(1e-3, 1e3);
        let p: Vec<f64> = (0..n).map(|_| rng.normal(0.0, scale)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.normal(0.0, scale)).collect();
        let mse = mse_metric(&p, &t, None).unwrap();
        let mae = mae_metric(&p, &t, None).unwrap();
        if mae * mae > mse * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    check(
        worst <= 1e-9 && violations == 0,
        format!(
            "macro-F1 {:.5}, worst hand-value error {worst:.1e} (≤1e-9), MAE² > MSE in {violations}/1000 random inputs",
            macro_f1(&preds, &truth, 2).unwrap()
        ),
    )
}

fn random_predictions(ds: &Dataset, rng: &mut RngState) -> Predictions {
    let n = ds.len();
    TaskMap::from_fn(|t| {
        if t.is_classification() {
            let c = ds.vocab.num_classes(t);
            TaskPrediction::Classes {
                indices: (0..n).map(|_| (rng.next_u64() % c as u64) as usize).collect(),
                probabilities: Matrix::zeros(n, c),
            }
        } else {
            TaskPrediction::Values((0..n).map(|_| rng.unit()).collect())
        }
    })
}

fn stratification_conservation() -> Outcome {
    let spec = SynthSpec {
        samples: 1500,
        seed: 31,
        non_nodule_fraction: 0.2,
        ..Default::default()
    };
    let ds = synth_generate(&spec).unwrap().normalize_targets().unwrap();
    let preds = random_predictions(&ds, &mut RngState::new(32));
    let strat = stratify_by_size(&ds, &preds, F1Scheme::Macro).unwrap().unwrap();
    let sized: Vec<usize> = (0..ds.len()).filter(|&i| ds.records[i].size_mm.is_some()).collect();
    let counts = strat.counts();
    let partition_ok = counts.iter().sum::<u64>() as usize == sized.len();

    let global = resmtl::eval::evaluate_rows(&ds, &preds, &sized, F1Scheme::Macro).unwrap();
    let mut worst: f64 = 0.0;
    for t in Task::REGRESSION {
        let g = global.regression(t).unwrap();
        let (mut num, mut den) = (0.0, 0u64);
        for b in SizeBucket::ALL {
            if let Some(r) = strat.bucket(b).and_then(|r| r.tasks.regression(t)) {
                num += r.samples as f64 * r.normalized.mse;
                den += r.samples;
            }
        }
        worst = worst.max((num / den as f64 - g.normalized.mse).abs());
    }
    for t in Task::CLASSIFICATION {
        let Some(g) = global.classification(t) else { continue };
        let (mut num, mut den) = (0.0, 0u64);
        for b in SizeBucket::ALL {
            if let Some(r) = strat.bucket(b).and_then(|r| r.tasks.classification(t)) {
                num += r.samples as f64 * r.accuracy;
                den += r.samples;
            }
        }
        worst = worst.max((num / den as f64 - g.accuracy).abs());
    }
    let all = evaluate(&ds, &preds, F1Scheme::Macro).unwrap();
    let unsized_excluded = all.regression(Task::Size).unwrap().samples as usize == sized.len();
    check(
        partition_ok && unsized_excluded && worst <= 1e-9,
        format!(
            "bucket counts {counts:?} sum to {} sized of {} records; recombination error {worst:.1e} (≤1e-9)",
            sized.len(),
            ds.len()
        ),
    )
}

fn resmtl_bin(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_resmtl")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn train_and_eval(config: &Path, out: &Path) -> Result<(), String> {
    for cmd in ["train", "eval"] {
        let (code, err) = resmtl_bin(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        if code != 0 {
            return Err(format!("{cmd} exited {code}: {err}"));
        }
    }
    Ok(())
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let data_dir = dir.path().join("data");
    let (code, err) = resmtl_bin(&["synth", "--seed", "42", "--out", data_dir.to_str().unwrap()]);
    if code != 0 {
        return Outcome::Fail(format!("synth exited {code}: {err}"));
    }
    let config = dir.path().join("run.json");
    let body = serde_json::json!({
        "version": 1,
        "seed": 42,
        "data": { "train": data_dir.join("dataset.csv") },
        "network": { "hidden": 32 },
        "train": { "epochs": 20 }
    });
    fs::write(&config, body.to_string()).unwrap();
    let runs = [dir.path().join("run1"), dir.path().join("run2")];
    for out in &runs {
        if let Err(e) = train_and_eval(&config, out) {
            return Outcome::Fail(e);
        }
    }
    let files = ["checkpoint.rmtn", "report.json", "report.txt", "trace.jsonl"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(runs[0].join(f)).ok() != fs::read(runs[1].join(f)).ok())
        .collect();
    check(
        differing.is_empty(),
        format!("compared {} across two train+eval runs; differing: {differing:?}", files.join(", ")),
    )
}

fn real_data_path() -> Outcome {
    let Ok(csv) = std::env::var("RESMTL_REAL_CSV") else {
        return Outcome::Skip("set RESMTL_REAL_CSV to a feature CSV to run".into());
    };
    let dir = tempfile::TempDir::new().unwrap();
    let config = dir.path().join("run.json");
    let body = serde_json::json!({ "version": 1, "data": { "train": csv } });
    fs::write(&config, body.to_string()).unwrap();
    let out = dir.path().join("run");
    if let Err(e) = train_and_eval(&config, &out) {
        return Outcome::Fail(e);
    }
    let json = fs::read_to_string(out.join("report.json")).unwrap_or_default();
    let doc: Result<ReportDocument, _> = serde_json::from_str(&json);
    let text = fs::read_to_string(out.join("report.txt")).unwrap_or_default();
    let ok = doc.as_ref().is_ok_and(|d| {
        d.reports.len() == 1 && emit_report(&d.reports, ReportFormat::Json).is_ok_and(|again| again == json)
    }) && text.contains("Location(Z)");
    check(ok, format!("end-to-end train+eval on {csv}"))
}
