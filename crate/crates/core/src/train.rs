//! Deterministic training with validation-IC checkpoint selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_samples, IndustryIncidence, MarketPanel, Normalizer, SampleRef, Scaling, SplitSpec, Splits};
use crate::error::{Error, Result};
use crate::evaluation::{ic, DayPrediction};
use crate::hypergraph::edge_attention_mass;
use crate::model::Hermes;
use crate::numerics::{Adam, Graph, ParamStore, Tensor};

/// A panel cut into splits, with normalization fitted on the training days.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub panel: MarketPanel,
    pub incidence: IndustryIncidence,
    pub splits: Splits,
    pub normalizer: Normalizer,
    membership: Tensor,
}

impl Dataset {
    pub fn new(
        panel: MarketPanel,
        incidence: IndustryIncidence,
        lookback: usize,
        split: SplitSpec,
        drop_last: bool,
    ) -> Result<Self> {
        if incidence.n_stocks() != panel.n_stocks() {
            return Err(Error::dim(format!(
                "incidence has {} stocks, panel {}",
                incidence.n_stocks(),
                panel.n_stocks()
            )));
        }
        let splits = make_samples(&panel, lookback, split, drop_last)?;
        let last = splits.last_train_day().unwrap_or(lookback);
        let normalizer = Normalizer::fit(&panel, last);
        let membership = incidence.as_tensor();
        Ok(Self {
            panel,
            incidence,
            splits,
            normalizer,
            membership,
        })
    }

    /// Refits the normalizer with a different input scaling.
    pub fn with_scaling(mut self, scaling: Scaling) -> Result<Self> {
        self.normalizer = match scaling {
            Scaling::Global => {
                let last = self.splits.last_train_day().unwrap_or(self.splits.lookback);
                Normalizer::fit(&self.panel, last)
            }
            Scaling::WindowRelative => Normalizer::fit_relative(&self.panel, self.splits.lookback, &self.splits.train)?,
        };
        Ok(self)
    }

    /// Binary `N×K` membership.
    pub fn membership(&self) -> &Tensor {
        &self.membership
    }

    /// Normalized window and next-day returns for one sample.
    pub fn example(&self, r: SampleRef) -> Result<(Tensor, Vec<f64>)> {
        let s = self.splits.materialize(&self.panel, r)?;
        Ok((self.normalizer.apply(&s.window), s.target))
    }

    pub fn date_of(&self, r: SampleRef) -> &str {
        &self.panel.dates()[r.target_day()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the pairwise ranking term.
    pub alpha: f64,
    /// Visit training days in a seeded random order each epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 5e-3,
            alpha: 1.0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha {} must be >= 0", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss over the training days of this epoch.
    pub train_loss: f64,
    pub valid_ic: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation IC seen (initialization counts
    /// as epoch 0).
    pub params: ParamStore,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// Set when training stopped on a non-finite value; `params` then holds
    /// the best parameters from before the failure.
    pub failure: Option<Error>,
}

/// Predictions for a list of samples.
pub fn predict_days(model: &Hermes, params: &ParamStore, data: &Dataset, refs: &[SampleRef]) -> Result<Vec<DayPrediction>> {
    refs.iter()
        .map(|&r| {
            let (x, y) = data.example(r)?;
            Ok(DayPrediction {
                date: data.date_of(r).to_string(),
                y_hat: model.predict(params, &x, data.membership())?,
                y_true: y,
            })
        })
        .collect()
}

/// Mean IC over the days whose cross-sections are not constant.
pub fn mean_ic(days: &[DayPrediction]) -> Option<f64> {
    let v: Vec<f64> = days.iter().filter_map(|d| ic(&d.y_hat, &d.y_true).ok()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn better(candidate: Option<f64>, best: Option<f64>) -> bool {
    match (candidate, best) {
        (Some(c), Some(b)) => c > b,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Trains with one trading day per Adam step. `on_epoch` sees every log row
/// as it is produced.
pub fn train(
    model: &Hermes,
    init: ParamStore,
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.splits.train.is_empty() && cfg.epochs > 0 {
        return Err(Error::config("training split is empty"));
    }
    let validate = |p: &ParamStore| -> Result<Option<f64>> {
        Ok(mean_ic(&predict_days(model, p, data, &data.splits.valid)?))
    };
    let has_valid = !data.splits.valid.is_empty();
    let mut params = init;
    let mut best = params.clone();
    let mut best_ic = if has_valid { validate(&params)? } else { None };
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut adam = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = data.splits.train.clone();

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &r in &order {
            let step = data.example(r).and_then(|(x, y)| {
                let (loss, grads, _) = model.loss_and_grads(&params, &x, data.membership(), &y, cfg.alpha)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("loss is {loss}")));
                }
                grads.accumulate_into(&mut params)?;
                adam.step(&mut params)?;
                Ok(loss)
            });
            match step {
                Ok(loss) => total += loss,
                Err(e) if e.is_numeric() => {
                    log::info!("epoch {epoch}: {e}; keeping epoch {best_epoch} parameters");
                    return Ok(TrainOutcome {
                        params: best,
                        best_epoch,
                        log,
                        failure: Some(e),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let valid_ic = if has_valid {
            match validate(&params) {
                Ok(v) => v,
                Err(e) if e.is_numeric() => {
                    return Ok(TrainOutcome {
                        params: best,
                        best_epoch,
                        log,
                        failure: Some(e),
                    })
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let row = EpochLog {
            epoch,
            train_loss: total / order.len() as f64,
            valid_ic,
        };
        log::info!(
            "epoch {epoch}: train loss {:.6}, valid IC {}",
            row.train_loss,
            valid_ic.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
        on_epoch(&row);
        log.push(row);
        // Without a validation split the latest parameters win.
        if !has_valid || better(valid_ic, best_ic) {
            best = params.clone();
            best_ic = valid_ic;
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch,
        log,
        failure: None,
    })
}

/// Per-scale attention mass between edges, averaged over days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub scale: usize,
    pub window: usize,
    /// `mass[q][j]`: share of edge `q`'s attention on edge `j`'s leading steps.
    pub mass: Vec<Vec<f64>>,
}

/// Attention mass and mean fusion affinity over a list of samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub industries: Vec<String>,
    pub attention: Vec<AttentionSummary>,
    /// Mean over days and time steps of the stochastic affinity, `(S·K)×(S·K)`.
    pub affinity: Option<Vec<Vec<f64>>>,
}

pub fn diagnostics(model: &Hermes, params: &ParamStore, data: &Dataset, refs: &[SampleRef]) -> Result<Diagnostics> {
    let scales = &model.config().scales;
    let k = data.incidence.n_industries();
    let mut attention: Vec<AttentionSummary> = scales
        .iter()
        .enumerate()
        .map(|(i, s)| AttentionSummary {
            scale: i + 1,
            window: s.window,
            mass: vec![vec![0.0; k]; k],
        })
        .collect();
    let m = scales.len() * k;
    let mut affinity = vec![vec![0.0; m]; m];
    let mut have_affinity = false;
    for &r in refs {
        let (x, _) = data.example(r)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let f = model.forward(&mut g, params, xv, data.membership())?;
        for (summary, a) in attention.iter_mut().zip(&f.attention) {
            if let Some(a) = a {
                let mass = edge_attention_mass(&g.tensor(*a), summary.window)?;
                for (row, add) in summary.mass.iter_mut().zip(mass) {
                    row.iter_mut().zip(add).for_each(|(v, a)| *v += a);
                }
            }
        }
        if let Some(a) = &f.affinity {
            have_affinity = true;
            let b = g.tensor(a.stochastic);
            let t = b.shape()[2];
            for (i, row) in affinity.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += (0..t).map(|s| b.get(&[i, j, s])).sum::<f64>() / t as f64;
                }
            }
        }
    }
    let days = refs.len().max(1) as f64;
    for s in &mut attention {
        s.mass.iter_mut().flatten().for_each(|v| *v /= days);
    }
    affinity.iter_mut().flatten().for_each(|v| *v /= days);
    let lead_lag_on = !model.config().ablation.no_lead_lag;
    Ok(Diagnostics {
        industries: data.incidence.names().to_vec(),
        attention: if lead_lag_on { attention } else { Vec::new() },
        affinity: have_affinity.then_some(affinity),
    })
}
