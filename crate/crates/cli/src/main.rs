//! `spikegrad` — train spiking networks with the membrane-overlap
//! regularizer, run attack campaigns, and verify the numerical claims.
//!
//! Exit codes: 0 success, 1 validation/usage failure, 2 numeric failure
//! (including failed verification verdicts).

mod config;
mod verify;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::ExperimentConfig;
use serde::Serialize;
use spikegrad::attacks::run_attack;
use spikegrad::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use spikegrad::data::{write_idx_images, write_idx_labels};
use spikegrad::model::Model;
use spikegrad::obfuscation::{obfuscation_checklist, ChecklistReport};
use spikegrad::rng::Rng;
use spikegrad::train::{accuracy, attacked_accuracy, evaluate, eval_csv, metrics_csv, train};
use spikegrad::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spikegrad", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports, metrics, and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model checkpoint to load (eval/attack/checklist) or resume from (train).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyTarget {
    Theorem1,
    Theorem2,
    Gradients,
    Obfuscation,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write metrics plus a checkpoint.
    Train(RunArgs),
    /// Clean and attacked accuracy of a checkpoint on the test split.
    Eval(RunArgs),
    /// Generate adversarial test sets for every configured attack.
    Attack(RunArgs),
    /// Numerical verification of gradients, theorems, or obfuscation.
    Verify {
        target: VerifyTarget,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Gradient-obfuscation screening of a trained checkpoint.
    Checklist(RunArgs),
    /// Train across an eta grid and tabulate robustness against strength.
    SweepEta(RunArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::Numeric(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train(args) => cmd_train(&args),
        Cmd::Eval(args) => cmd_eval(&args),
        Cmd::Attack(args) => cmd_attack(&args),
        Cmd::Verify { target, args } => cmd_verify(target, &args),
        Cmd::Checklist(args) => cmd_checklist(&args),
        Cmd::SweepEta(args) => cmd_sweep_eta(&args),
    }
}

fn require_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let path = args
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    ExperimentConfig::load(path)
}

fn out_dir(args: &RunArgs) -> Result<PathBuf> {
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn effective_seed(args: &RunArgs, cfg: &ExperimentConfig) -> u64 {
    args.seed.unwrap_or(cfg.seed)
}

fn load_model(args: &RunArgs, cfg: &ExperimentConfig) -> Result<Model> {
    let path = args
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("--checkpoint is required for this command".into()))?;
    let ckpt = load_checkpoint(path)?;
    if ckpt.model.spec != cfg.model {
        return Err(Error::Config(
            "checkpoint model spec does not match the config".into(),
        ));
    }
    Ok(ckpt.model)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("report serialization: {}", e)))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    seed: u64,
    epochs: usize,
    eta: f64,
    adversarial: bool,
    final_train_acc: f64,
    final_mean_omega: f64,
    clean_test_accuracy: f64,
    checkpoint: PathBuf,
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = require_config(args)?;
    let seed = effective_seed(args, &cfg);
    let dir = out_dir(args)?;
    let (train_ds, test_ds) = cfg.dataset.load()?;

    let mut model = match &args.checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.model.spec != cfg.model {
                return Err(Error::Config(
                    "checkpoint model spec does not match the config".into(),
                ));
            }
            ckpt.model
        }
        None => Model::init(cfg.model.clone(), &Rng::new(seed))?,
    };
    let mut rng = Rng::new(seed).fork_named("train");
    let metrics = train(&mut model, &train_ds, &cfg.train, &mut rng)?;
    let clean = accuracy(&mut model, &test_ds, cfg.eval_batch)?;

    std::fs::write(dir.join("metrics.csv"), metrics_csv(&metrics))?;
    let ckpt_path = dir.join("model.ckpt");
    save_checkpoint(
        &ckpt_path,
        &Checkpoint {
            model,
            epoch: cfg.train.epochs as u32,
            rng,
        },
    )?;
    let last = metrics.last().expect("at least one epoch");
    let report = TrainReport {
        seed,
        epochs: cfg.train.epochs,
        eta: cfg.train.eta,
        adversarial: cfg.train.adversarial,
        final_train_acc: last.train_acc,
        final_mean_omega: last.mean_omega,
        clean_test_accuracy: clean,
        checkpoint: ckpt_path,
    };
    write_json(&dir.join("train_report.json"), &report)?;
    println!(
        "trained {} epochs (eta {}): train acc {:.4}, mean overlap {:.4}, clean test acc {:.4}",
        report.epochs, report.eta, report.final_train_acc, report.final_mean_omega, clean
    );
    Ok(())
}

fn cmd_eval(args: &RunArgs) -> Result<()> {
    let cfg = require_config(args)?;
    let seed = effective_seed(args, &cfg);
    let dir = out_dir(args)?;
    let (_, test_ds) = cfg.dataset.load()?;
    let mut model = load_model(args, &cfg)?;
    let report = evaluate(
        &mut model,
        &test_ds,
        &cfg.attacks,
        cfg.eval_batch,
        &mut Rng::new(seed).fork_named("eval"),
    )?;
    let csv = eval_csv(&report);
    std::fs::write(dir.join("eval.csv"), &csv)?;
    write_json(&dir.join("eval.json"), &report)?;
    print!("{}", csv);
    Ok(())
}

#[derive(Serialize)]
struct AttackArtifact {
    kind: String,
    epsilon: f64,
    steps: usize,
    accuracy: f64,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
}

fn cmd_attack(args: &RunArgs) -> Result<()> {
    let cfg = require_config(args)?;
    if cfg.attacks.is_empty() {
        return Err(Error::Config("config has no attacks to run".into()));
    }
    let seed = effective_seed(args, &cfg);
    let dir = out_dir(args)?;
    let (_, test_ds) = cfg.dataset.load()?;
    let mut model = load_model(args, &cfg)?;

    let mut artifacts = Vec::new();
    for (ai, acfg) in cfg.attacks.iter().enumerate() {
        let arng = Rng::new(seed).fork_named("attack").fork(ai as u64);
        let idx: Vec<usize> = (0..test_ds.len()).collect();
        let mut adv_rows = Vec::with_capacity(test_ds.len());
        let mut correct = 0usize;
        for chunk in idx.chunks(cfg.eval_batch) {
            let (x, y) = test_ds.batch(chunk)?;
            let adv = run_attack(&mut model, &x, &y, acfg, &mut arng.fork(adv_rows.len() as u64))?;
            for (p, &t) in model.predict(&adv, None)?.iter().zip(y.iter()) {
                if *p == t {
                    correct += 1;
                }
            }
            adv_rows.push(adv);
        }
        let acc = correct as f64 / test_ds.len() as f64;
        let name = format!("{:?}", acfg.kind).to_lowercase();
        // Persist adversarial images only for 2-d samples (IDX format).
        let (images, labels) = if test_ds.sample_shape.len() == 2 {
            let rows = test_ds.sample_shape[0];
            let cols = test_ds.sample_shape[1];
            let d = rows * cols;
            let mut flat = Vec::with_capacity(test_ds.len() * d);
            for t in &adv_rows {
                flat.extend_from_slice(t.data());
            }
            let stacked =
                spikegrad::Tensor::from_vec(&[test_ds.len(), d], flat)?;
            let ip = dir.join(format!("adv_{}_images.idx", name));
            let lp = dir.join(format!("adv_{}_labels.idx", name));
            write_idx_images(&ip, &stacked, rows, cols)?;
            write_idx_labels(&lp, &test_ds.labels)?;
            (Some(ip), Some(lp))
        } else {
            (None, None)
        };
        println!(
            "{} (eps {:.4}, k {}): accuracy {:.4}",
            name, acfg.epsilon, acfg.steps, acc
        );
        artifacts.push(AttackArtifact {
            kind: name,
            epsilon: acfg.epsilon,
            steps: acfg.steps,
            accuracy: acc,
            images,
            labels,
        });
    }
    write_json(&dir.join("attack_report.json"), &artifacts)?;
    Ok(())
}

fn run_checklist(args: &RunArgs) -> Result<ChecklistReport> {
    let cfg = require_config(args)?;
    let seed = effective_seed(args, &cfg);
    let (train_ds, test_ds) = cfg.dataset.load()?;
    let mut model = load_model(args, &cfg)?;
    // Black-box substitute: same config, independently seeded re-training.
    let mut substitute = Model::init(cfg.model.clone(), &Rng::new(seed + 1))?;
    train(
        &mut substitute,
        &train_ds,
        &cfg.train,
        &mut Rng::new(seed + 1).fork_named("train"),
    )?;
    obfuscation_checklist(
        &mut model,
        &mut substitute,
        &test_ds,
        8.0 / 255.0,
        cfg.eval_batch,
        &mut Rng::new(seed).fork_named("checklist"),
    )
}

fn checklist_verdict(report: &ChecklistReport) -> Result<()> {
    for t in &report.tests {
        println!(
            "[{}] {} — {}",
            if t.pass { "PASS" } else { "FAIL" },
            t.name,
            t.details
        );
    }
    let required = report.tests[0].pass && report.tests[3].pass;
    if !required {
        return Err(Error::Numeric(
            "obfuscation checklist failed a required test (iterative-vs-single-step or unbounded-attack)"
                .into(),
        ));
    }
    Ok(())
}

fn cmd_checklist(args: &RunArgs) -> Result<()> {
    let report = run_checklist(args)?;
    if args.out.is_some() {
        write_json(&out_dir(args)?.join("checklist.json"), &report)?;
    }
    checklist_verdict(&report)
}

fn cmd_verify(target: VerifyTarget, args: &RunArgs) -> Result<()> {
    let dir = args.out.as_ref().map(|_| out_dir(args)).transpose()?;
    let emit = |name: &str, json: String, pass: bool, summary: String| -> Result<()> {
        println!("{}", summary);
        if let Some(d) = &dir {
            std::fs::write(d.join(format!("verify_{}.json", name)), json + "\n")?;
        }
        if pass {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{} verification failed", name)))
        }
    };
    match target {
        VerifyTarget::Gradients => {
            let v = verify::verify_gradients()?;
            emit(
                "gradients",
                pretty(&v)?,
                v.pass,
                format!(
                    "overlap gradients vs finite differences: worst rel error {:.3e} (tol {:.0e}) — {}",
                    v.worst_rel_error,
                    v.tolerance,
                    if v.pass { "pass" } else { "fail" }
                ),
            )
        }
        VerifyTarget::Theorem1 => {
            let v = verify::verify_theorem1(100_000)?;
            emit(
                "theorem1",
                pretty(&v)?,
                v.pass,
                format!(
                    "membrane statistics: variance CI misses {}, worst mean deviation {:.2} SE — {}",
                    v.variance_ci_misses,
                    v.worst_mean_dev_se,
                    if v.pass { "pass" } else { "fail" }
                ),
            )
        }
        VerifyTarget::Theorem2 => {
            let v = verify::verify_theorem2(10_000)?;
            let summary = match (&v.report, v.net_seed) {
                (Some(r), Some(s)) => format!(
                    "sensitivity bound (net seed {}): {} directions, {} violations, max residual {:.2e} — {}",
                    s,
                    r.n_dirs,
                    r.violations,
                    r.max_residual,
                    if v.pass { "pass" } else { "fail" }
                ),
                _ => "sensitivity bound: no certified single-cell instance found — fail".into(),
            };
            emit("theorem2", pretty(&v)?, v.pass, summary)
        }
        VerifyTarget::Obfuscation => {
            let report = run_checklist(args)?;
            if let Some(d) = &dir {
                write_json(&d.join("verify_obfuscation.json"), &report)?;
            }
            checklist_verdict(&report)
        }
    }
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Format(format!("report serialization: {}", e)))
}

#[derive(Serialize)]
struct SweepRow {
    eta: f64,
    clean_accuracy: f64,
    fgsm_accuracy: f64,
    mean_omega: f64,
    train_acc: f64,
}

fn cmd_sweep_eta(args: &RunArgs) -> Result<()> {
    let cfg = require_config(args)?;
    let seed = effective_seed(args, &cfg);
    let dir = out_dir(args)?;
    let (train_ds, test_ds) = cfg.dataset.load()?;
    let etas: Vec<f64> = if cfg.sweep_etas.is_empty() {
        vec![0.0, 0.01, 0.05, 0.1, 0.5, 1.0]
    } else {
        cfg.sweep_etas.clone()
    };
    let fgsm = spikegrad::attacks::AttackConfig::new(spikegrad::attacks::AttackKind::Fgsm);
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in &etas {
        let mut tcfg = cfg.train.clone();
        tcfg.eta = eta;
        let mut model = Model::init(cfg.model.clone(), &Rng::new(seed))?;
        let metrics = train(&mut model, &train_ds, &tcfg, &mut Rng::new(seed).fork_named("train"))?;
        let clean = accuracy(&mut model, &test_ds, cfg.eval_batch)?;
        let robust = attacked_accuracy(
            &mut model,
            &test_ds,
            &fgsm,
            cfg.eval_batch,
            &mut Rng::new(seed).fork_named("sweep-fgsm"),
        )?;
        let last = metrics.last().expect("at least one epoch");
        println!(
            "eta {:<6}: clean {:.4}, fgsm {:.4}, mean overlap {:.4}",
            eta, clean, robust, last.mean_omega
        );
        rows.push(SweepRow {
            eta,
            clean_accuracy: clean,
            fgsm_accuracy: robust,
            mean_omega: last.mean_omega,
            train_acc: last.train_acc,
        });
    }
    let mut csv = String::from("eta,clean_accuracy,fgsm_accuracy,mean_omega,train_acc\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.eta, r.clean_accuracy, r.fgsm_accuracy, r.mean_omega, r.train_acc
        ));
    }
    std::fs::write(dir.join("sweep_eta.csv"), &csv)?;
    write_json(&dir.join("sweep_eta.json"), &rows)?;
    Ok(())
}
