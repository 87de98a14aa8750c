use serde::{Deserialize, Serialize};

use super::panel::{compute_return, MarketPanel, CLOSE, VOLUME};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Sample counts per split, in chronological order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }
}

/// Position of one sample: the window covers `[end + 1 - lookback, end]`
/// and the target is the return realized on `end + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub end: usize,
}

impl SampleRef {
    pub fn target_day(&self) -> usize {
        self.end + 1
    }
}

/// One trading day over all stocks.
#[derive(Clone, Debug)]
pub struct Sample {
    /// `N×lookback×F`, raw (not normalized).
    pub window: Tensor,
    /// Next-day return ratio per stock.
    pub target: Vec<f64>,
    /// Index of the last window day.
    pub day_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub lookback: usize,
    pub train: Vec<SampleRef>,
    pub valid: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
}

impl Splits {
    pub fn materialize(&self, panel: &MarketPanel, r: SampleRef) -> Result<Sample> {
        Ok(Sample {
            window: panel.window(r.end, self.lookback)?,
            target: compute_return(panel, r.target_day())?,
            day_index: r.end,
        })
    }

    /// Last day any training window touches.
    pub fn last_train_day(&self) -> Option<usize> {
        self.train.last().map(|r| r.end)
    }
}

/// Number of samples a panel supports. The first window starts on day 1 so
/// that every window day has a defined previous close.
pub fn usable_samples(n_days: usize, lookback: usize) -> usize {
    n_days.saturating_sub(lookback + 1)
}

/// Cuts the panel into chronological, non-overlapping sample streams.
///
/// With `drop_last == false`, samples left over after `split.total()` are
/// appended to the test stream; with `true` they are discarded.
pub fn make_samples(panel: &MarketPanel, lookback: usize, split: SplitSpec, drop_last: bool) -> Result<Splits> {
    if lookback == 0 {
        return Err(Error::config("lookback must be positive"));
    }
    let usable = usable_samples(panel.n_days(), lookback);
    if usable == 0 {
        return Err(Error::config(format!(
            "lookback {lookback} leaves no samples in a {}-day panel",
            panel.n_days()
        )));
    }
    if split.total() > usable {
        return Err(Error::config(format!(
            "split {}/{}/{} needs {} samples, panel provides {usable}",
            split.train,
            split.valid,
            split.test,
            split.total()
        )));
    }
    let all: Vec<SampleRef> = (lookback..lookback + usable).map(|end| SampleRef { end }).collect();
    let (train, rest) = all.split_at(split.train);
    let (valid, rest) = rest.split_at(split.valid);
    let test = if drop_last { &rest[..split.test] } else { rest };
    Ok(Splits {
        lookback,
        train: train.to_vec(),
        valid: valid.to_vec(),
        test: test.to_vec(),
    })
}

/// How raw windows are turned into model inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Per-indicator z-score over all stocks and training days.
    #[default]
    Global,
    /// Per stock and window: log of prices relative to the window's last
    /// close, log of volume relative to the window's mean volume, then
    /// divided by a per-indicator RMS fitted on the training windows.
    WindowRelative,
}

/// Input scaling with statistics from the training days only.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub scaling: Scaling,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn nonzero(sd: f64) -> f64 {
    if sd > 0.0 && sd.is_finite() {
        sd
    } else {
        1.0
    }
}

impl Normalizer {
    /// Global z-score statistics over all stocks on days `0..=last_day`.
    pub fn fit(panel: &MarketPanel, last_day: usize) -> Self {
        let f = panel.n_features();
        let days = (last_day + 1).min(panel.n_days());
        let count = (days * panel.n_stocks()) as f64;
        let mut mean = vec![0.0; f];
        let mut sq = vec![0.0; f];
        for s in 0..panel.n_stocks() {
            for d in 0..days {
                for k in 0..f {
                    mean[k] += panel.value(s, d, k);
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for s in 0..panel.n_stocks() {
            for d in 0..days {
                for k in 0..f {
                    let c = panel.value(s, d, k) - mean[k];
                    sq[k] += c * c;
                }
            }
        }
        let std = sq.iter().map(|v| nonzero((v / count).sqrt())).collect();
        Self {
            scaling: Scaling::Global,
            mean,
            std,
        }
    }

    /// Window-relative RMS over the given training windows.
    pub fn fit_relative(panel: &MarketPanel, lookback: usize, train: &[SampleRef]) -> Result<Self> {
        let f = panel.n_features();
        let mut sq = vec![0.0; f];
        let mut count = 0usize;
        let unit = Self {
            scaling: Scaling::WindowRelative,
            mean: vec![0.0; f],
            std: vec![1.0; f],
        };
        for r in train {
            let w = unit.apply(&panel.window(r.end, lookback)?);
            for (i, v) in w.data().iter().enumerate() {
                sq[i % f] += v * v;
            }
            count += w.numel() / f;
        }
        let std = sq.iter().map(|v| nonzero((v / count.max(1) as f64).sqrt())).collect();
        Ok(Self { std, ..unit })
    }

    pub fn apply(&self, window: &Tensor) -> Tensor {
        let f = self.mean.len();
        let mut out = window.clone();
        if self.scaling == Scaling::WindowRelative {
            let t = window.shape()[1];
            for row in out.data_mut().chunks_mut(t * f) {
                let last = row[(t - 1) * f + CLOSE];
                let vol = (0..t).map(|j| row[j * f + VOLUME]).sum::<f64>() / t as f64;
                for step in row.chunks_mut(f) {
                    for (k, v) in step.iter_mut().enumerate() {
                        *v = if k == VOLUME {
                            ((*v + 1.0) / (vol + 1.0)).ln()
                        } else {
                            (*v / last).ln()
                        };
                    }
                }
            }
        }
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let k = i % f;
            *v = (*v - self.mean[k]) / self.std[k];
        }
        out
    }
}
