//! The four batch commands and their artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hermes::data::{ingest_csv, synthesize_market, write_industries, write_prices, IndustryIncidence};
use hermes::evaluation::{DayPrediction, MetricsReport};
use hermes::numerics::{Checkpoint, ParamStore, Tensor};
use hermes::train::{diagnostics, predict_days, train, Dataset, EpochLog};
use hermes::Hermes;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const METRICS: &str = "metrics.json";
pub const PREDICTIONS: &str = "predictions.csv";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const CONFIG_ECHO: &str = "config.toml";
pub const DIAGNOSTICS: &str = "diagnostics.json";

#[derive(Serialize)]
struct RunMetrics<'a> {
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_epoch: Option<usize>,
    split: &'static str,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(&path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let m = synthesize_market(&cfg.synth)?;
    create_dir(out)?;
    let mut prices = Vec::new();
    write_prices(&m.panel, &mut prices)?;
    write_file(out.join("prices.csv"), &prices)?;
    let mut industries = Vec::new();
    write_industries(&m.incidence, m.panel.tickers(), &mut industries)?;
    write_file(out.join("industries.csv"), &industries)?;
    let truth = serde_json::to_string_pretty(&m.ground_truth).expect("links serialize");
    write_file(out.join("ground_truth.json"), truth.as_bytes())?;
    info!(
        "wrote {} stocks × {} days to {}",
        m.panel.n_stocks(),
        m.panel.n_days(),
        out.display()
    );
    Ok(())
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let (panel, incidence) = match &cfg.data {
        Some(d) => ingest_csv(&d.prices, &d.industries, d.align)?,
        None => {
            let m = synthesize_market(&cfg.synth)?;
            (m.panel, m.incidence)
        }
    };
    if panel.n_features() != cfg.model.features {
        return Err(CliError::Config(format!(
            "model.features is {} but the panel has {} indicators",
            cfg.model.features,
            panel.n_features()
        )));
    }
    Ok(Dataset::new(panel, incidence, cfg.model.lookback, cfg.split, cfg.drop_last)?.with_scaling(cfg.scaling)?)
}

fn predictions_csv(days: &[DayPrediction], tickers: &[String]) -> Vec<u8> {
    let mut w = Vec::new();
    writeln!(w, "date,ticker,y_hat,y_true").unwrap();
    for d in days {
        for (s, t) in tickers.iter().enumerate() {
            writeln!(w, "{},{},{},{}", d.date, t, d.y_hat[s], d.y_true[s]).unwrap();
        }
    }
    w
}

fn train_log_csv(log: &[EpochLog]) -> Vec<u8> {
    let mut w = Vec::new();
    writeln!(w, "epoch,train_loss,valid_ic").unwrap();
    for e in log {
        let ic = e.valid_ic.map_or_else(String::new, |v| v.to_string());
        writeln!(w, "{},{},{}", e.epoch, e.train_loss, ic).unwrap();
    }
    w
}

fn evaluate(
    cfg: &RunConfig,
    model: &Hermes,
    params: &ParamStore,
    data: &Dataset,
    best_epoch: Option<usize>,
    out: &Path,
) -> Result<MetricsReport, CliError> {
    let days = predict_days(model, params, data, &data.splits.test)?;
    let report = MetricsReport::compute(&days, cfg.eval.prec_n, cfg.eval.annualize)?;
    let metrics = RunMetrics {
        config_hash: cfg.hash(),
        best_epoch,
        split: "test",
        report: &report,
    };
    let json = serde_json::to_string_pretty(&metrics).expect("metrics serialize");
    write_file(out.join(METRICS), json.as_bytes())?;
    write_file(out.join(PREDICTIONS), &predictions_csv(&days, data.panel.tickers()))?;
    Ok(report)
}

pub fn train_run(cfg: &RunConfig, out: &Path, with_diagnostics: bool) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let model = Hermes::new(&cfg.model)?;
    let init = model.init_params(cfg.seed)?;
    create_dir(out)?;
    let hash = cfg.hash();
    let echo = format!("# config hash: {hash}\n{}", cfg.to_toml());
    write_file(out.join(CONFIG_ECHO), echo.as_bytes())?;
    info!(
        "training on {} stocks, {} industries, {}/{}/{} days",
        data.panel.n_stocks(),
        data.incidence.n_industries(),
        data.splits.train.len(),
        data.splits.valid.len(),
        data.splits.test.len()
    );
    let outcome = train(&model, init, &data, &cfg.train, cfg.seed, |_| {})?;
    Checkpoint::new(outcome.params.clone(), hash).save(out.join(CHECKPOINT))?;
    write_file(out.join(TRAIN_LOG), &train_log_csv(&outcome.log))?;
    if let Some(e) = outcome.failure {
        return Err(CliError::Numeric(format!(
            "training stopped: {e}; checkpoint keeps epoch {}",
            outcome.best_epoch
        )));
    }
    let report = evaluate(cfg, &model, &outcome.params, &data, Some(outcome.best_epoch), out)?;
    if with_diagnostics {
        let d = diagnostics(&model, &outcome.params, &data, &data.splits.test)?;
        let json = serde_json::to_string_pretty(&d).expect("diagnostics serialize");
        write_file(out.join(DIAGNOSTICS), json.as_bytes())?;
    }
    println!("best epoch {}\n{report}", outcome.best_epoch);
    Ok(())
}

pub fn eval_run(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(checkpoint)
        .map_err(|e| CliError::Config(format!("cannot load {}: {e}", checkpoint.display())))?;
    let hash = cfg.hash();
    if ckpt.config_hash != hash {
        return Err(CliError::Config(format!(
            "config hash mismatch: checkpoint {} was trained with {}, config gives {hash}",
            checkpoint.display(),
            ckpt.config_hash
        )));
    }
    let model = Hermes::new(&cfg.model)?;
    let expected = model.init_params(cfg.seed)?;
    let names_match = expected.names().eq(ckpt.params.names())
        && expected
            .iter()
            .zip(ckpt.params.iter())
            .all(|((_, a), (_, b))| a.shape() == b.shape());
    if !names_match {
        return Err(CliError::Config("checkpoint parameters do not match the model config".into()));
    }
    let data = load_dataset(cfg)?;
    create_dir(out)?;
    let report = evaluate(cfg, &model, &ckpt.params, &data, None, out)?;
    println!("{report}");
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let gc = &cfg.gradcheck;
    let model = Hermes::new(&cfg.model)?;
    let params = model.init_params(cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, t, f) = (gc.n_stocks, cfg.model.lookback, cfg.model.features);
    let window = Tensor::from_fn([n, t, f], |_| StandardNormal.sample(&mut rng));
    let target: Vec<f64> = (0..n)
        .map(|_| 0.01 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let assign: Vec<usize> = (0..n).map(|s| s % gc.n_industries).collect();
    let names = (0..gc.n_industries).map(|m| format!("IND{m}")).collect();
    let h = IndustryIncidence::from_assignment(&assign, names)?.as_tensor();
    let report = model.grad_check(&params, &window, &h, &target, cfg.train.alpha, gc.tolerance, gc.step)?;
    println!("{:<32} {:>12} {:>12}", "parameter", "max_rel", "max_abs");
    for p in &report.params {
        println!("{:<32} {:>12.3e} {:>12.3e}", p.name, p.max_rel_error, p.max_abs_error);
    }
    println!("max relative error {:.3e} (tolerance {:.0e})", report.max_rel_error(), gc.tolerance);
    if !report.passed() {
        let bad: Vec<&str> = report.failures().map(|p| p.name.as_str()).collect();
        return Err(CliError::Numeric(format!("gradient check failed for {}", bad.join(", "))));
    }
    Ok(())
}
