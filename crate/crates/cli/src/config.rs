//! Run configuration: one TOML file plus dotted `--set` overrides.

use std::path::{Path, PathBuf};

use hermes::data::{Alignment, Scaling, SplitSpec, SynthSpec};
use hermes::train::TrainConfig;
use hermes::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Price and industry files to ingest instead of a synthetic market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub prices: PathBuf,
    pub industries: PathBuf,
    #[serde(default)]
    pub align: Alignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// The N of Prec@N and of the top-N backtest.
    pub prec_n: usize,
    /// Scale the Sharpe ratio by √252.
    pub annualize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            prec_n: 10,
            annualize: false,
        }
    }
}

/// Sizes for the `gradcheck` command's random panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckConfig {
    pub n_stocks: usize,
    pub n_industries: usize,
    pub tolerance: f64,
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_stocks: 8,
            n_industries: 3,
            tolerance: 1e-4,
            step: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds parameter initialization and the epoch shuffle.
    pub seed: u64,
    /// Discard samples beyond `split.total()` instead of adding them to test.
    pub drop_last: bool,
    pub scaling: Scaling,
    /// When absent, a synthetic market is generated from `synth`.
    pub data: Option<DataConfig>,
    pub synth: SynthSpec,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            drop_last: false,
            scaling: Scaling::Global,
            data: None,
            synth: SynthSpec::default(),
            split: SplitSpec {
                train: 183,
                valid: 50,
                test: 50,
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradCheckConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `KEY=VALUE`
    /// overrides in order, then `seed` (which also reseeds the synthetic
    /// market).
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {}", p.display(), one_line(&e.to_string()))))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        if let Some(s) = seed {
            let s = toml::Value::Integer(
                i64::try_from(s).map_err(|_| CliError::Config(format!("seed {s} too large")))?,
            );
            table.insert("seed".into(), s.clone());
            set_path(&mut table, &["synth", "seed"], s)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        hermes::Hermes::new(&self.model)?;
        self.train.validate()?;
        if self.data.is_none() {
            self.synth.validate()?;
        }
        if self.eval.prec_n == 0 {
            return Err(CliError::Config("eval.prec_n must be >= 1".into()));
        }
        let gc = &self.gradcheck;
        if gc.n_industries == 0 || gc.n_stocks < gc.n_industries {
            return Err(CliError::Config("gradcheck needs n_stocks >= n_industries >= 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 over everything that determines the trained parameters and
    /// the evaluated split (evaluation and gradcheck settings excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.eval = EvalConfig::default();
        c.gradcheck = GradCheckConfig::default();
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("run config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not KEY=VALUE")))?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    // Anything that is not a TOML literal is taken as a bare string.
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    set_path(table, &path, value)
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(overrides: &[&str]) -> Result<RunConfig, CliError> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(None, &o, None)
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = load(&[]).unwrap();
        assert_eq!(c.model.lookback, 16);
        assert_eq!(c.model.latent_dim, 8);
        assert_eq!(c.train.alpha, 1.0);
        assert_eq!(c.train.lr, 5e-3);
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.eval.prec_n, 10);
        assert_eq!((c.split.train, c.split.valid, c.split.test), (183, 50, 50));
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = load(&[
            "train.epochs=3",
            "model.ablation.no_lead_lag=true",
            "scaling=window_relative",
            "model.scales=[{kernel=1,stride=1,window=3}]",
        ])
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert!(c.model.ablation.no_lead_lag);
        assert_eq!(c.scaling, Scaling::WindowRelative);
        assert_eq!(c.model.scales.len(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(load(&["train.epoch=3"]), Err(CliError::Config(_))));
        assert!(matches!(load(&["bogus=1"]), Err(CliError::Config(_))));
        assert!(matches!(load(&["no_equals"]), Err(CliError::Config(_))));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(matches!(load(&["model.latent_dim=0"]), Err(CliError::Config(_))));
        assert!(matches!(load(&["train.lr=-1.0"]), Err(CliError::Config(_))));
        assert!(matches!(load(&["synth.n_stocks=25"]), Err(CliError::Config(_))));
    }

    #[test]
    fn seed_flag_reseeds_synth() {
        let c = RunConfig::load(None, &[], Some(11)).unwrap();
        assert_eq!((c.seed, c.synth.seed), (11, 11));
    }

    #[test]
    fn echo_round_trips_and_hash_ignores_eval() {
        let c = load(&["train.epochs=4", "eval.prec_n=3"]).unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let mut d = c.clone();
        d.eval.prec_n = 5;
        assert_eq!(c.hash(), d.hash());
        d.train.epochs = 5;
        assert_ne!(c.hash(), d.hash());
    }
}
