//! Seeded synthetic market with planted industry structure.
//!
//! Each industry has a unit-variance latent daily factor. A follower industry
//! mixes its own innovation with its leaders' factors from `lag` days
//! earlier:
//!
//! ```text
//! f_B[t] = Σ s·f_A[t - lag] + sqrt(1 - Σ s²)·u_B[t]
//! ```
//!
//! Stock returns are `vol · (f_industry[t] + noise · e_stock[t])`, and closes
//! compound from 100.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::panel::{IndustryIncidence, MarketPanel, INDICATORS};
use crate::error::{Error, Result};

/// A planted lead-lag dependency between two industries (by index).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadLagLink {
    pub leader: usize,
    pub follower: usize,
    pub lag: usize,
    pub strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_stocks: usize,
    pub n_industries: usize,
    pub n_days: usize,
    pub links: Vec<LeadLagLink>,
    /// Idiosyncratic noise scale relative to the industry factor.
    pub noise: f64,
    /// Daily return volatility of one factor unit.
    pub factor_vol: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_stocks: 24,
            n_industries: 3,
            n_days: 300,
            links: vec![LeadLagLink {
                leader: 0,
                follower: 1,
                lag: 2,
                strength: 0.9,
            }],
            noise: 0.2,
            factor_vol: 0.01,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n_stocks, self.n_industries);
        if k == 0 || n == 0 || n % k != 0 {
            return Err(Error::config(format!(
                "{n} stocks cannot be split evenly over {k} industries"
            )));
        }
        if self.n_days < 2 {
            return Err(Error::config("synthetic market needs at least 2 days"));
        }
        if !(self.noise >= 0.0 && self.factor_vol > 0.0 && self.factor_vol < 0.2) {
            return Err(Error::config("noise must be >= 0 and factor_vol in (0, 0.2)"));
        }
        let mut load = vec![0.0; k];
        for l in &self.links {
            if l.leader >= k || l.follower >= k || l.leader == l.follower {
                return Err(Error::config(format!("invalid link {} -> {}", l.leader, l.follower)));
            }
            if l.lag == 0 || l.lag >= self.n_days {
                return Err(Error::config(format!(
                    "lag {} must be in 1..{}",
                    l.lag, self.n_days
                )));
            }
            if !(0.0..1.0).contains(&l.strength) {
                return Err(Error::config(format!("strength {} outside [0, 1)", l.strength)));
            }
            load[l.follower] += l.strength * l.strength;
        }
        if let Some(m) = load.iter().position(|&s| s >= 1.0) {
            return Err(Error::config(format!(
                "squared strengths into industry {m} sum to {} >= 1",
                load[m]
            )));
        }
        Ok(())
    }

    pub fn industry_of(&self, stock: usize) -> usize {
        stock / (self.n_stocks / self.n_industries)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticMarket {
    pub panel: MarketPanel,
    pub incidence: IndustryIncidence,
    pub ground_truth: Vec<LeadLagLink>,
    /// Latent factor series, `factors[industry][day]`.
    pub factors: Vec<Vec<f64>>,
}

pub fn synthesize_market(spec: &SynthSpec) -> Result<SyntheticMarket> {
    spec.validate()?;
    let (n, k, t_total) = (spec.n_stocks, spec.n_industries, spec.n_days);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let mut factors = vec![vec![0.0; t_total]; k];
    for t in 0..t_total {
        for m in 0..k {
            let u = normal();
            let incoming: Vec<&LeadLagLink> = spec
                .links
                .iter()
                .filter(|l| l.follower == m && t >= l.lag)
                .collect();
            let load: f64 = incoming.iter().map(|l| l.strength * l.strength).sum();
            let driven: f64 = incoming
                .iter()
                .map(|l| l.strength * factors[l.leader][t - l.lag])
                .sum();
            factors[m][t] = driven + (1.0 - load).sqrt() * u;
        }
    }

    let f = INDICATORS.len();
    let vol = spec.factor_vol;
    let mut values = vec![0.0; n * t_total * f];
    for s in 0..n {
        let ind = spec.industry_of(s);
        let mut prev = 100.0;
        for t in 0..t_total {
            let idio = normal();
            let close = if t == 0 {
                100.0
            } else {
                prev * (1.0 + vol * (factors[ind][t] + spec.noise * idio))
            };
            let open = prev * (1.0 + 0.2 * vol * normal());
            let high = open.max(close) * (1.0 + 0.5 * vol * normal().abs());
            let low = open.min(close) * (1.0 - 0.5 * vol * normal().abs());
            let volume = (1e6 * (0.25 * normal()).exp()).round();
            let base = (s * t_total + t) * f;
            values[base..base + f].copy_from_slice(&[open, high, low, close, volume]);
            prev = close;
        }
    }

    let tickers = (0..n).map(|s| format!("S{s:03}")).collect();
    let names = (0..k).map(|m| format!("IND{m}")).collect();
    let assign: Vec<usize> = (0..n).map(|s| spec.industry_of(s)).collect();
    Ok(SyntheticMarket {
        panel: MarketPanel::new(tickers, business_days(t_total), values)?,
        incidence: IndustryIncidence::from_assignment(&assign, names)?,
        ground_truth: spec.links.clone(),
        factors,
    })
}

/// `count` consecutive weekdays starting 2016-01-04, as ISO dates.
pub fn business_days(count: usize) -> Vec<String> {
    let mut day = NaiveDate::from_ymd_opt(2016, 1, 4).expect("valid date");
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day.format("%Y-%m-%d").to_string());
        }
        day = day.succ_opt().expect("date in range");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::compute_return;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }

    /// Mean realized return of each industry's members, days 1..T.
    fn industry_returns(m: &SyntheticMarket, spec: &SynthSpec) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); spec.n_industries];
        for t in 1..spec.n_days {
            let r = compute_return(&m.panel, t).unwrap();
            for (ind, series) in out.iter_mut().enumerate() {
                let mem = m.incidence.members(ind);
                series.push(mem.iter().map(|&s| r[s]).sum::<f64>() / mem.len() as f64);
            }
        }
        out
    }

    fn lagged_corr(lead: &[f64], follow: &[f64], lag: usize) -> f64 {
        pearson(&lead[..lead.len() - lag], &follow[lag..])
    }

    #[test]
    fn deterministic_for_a_seed() {
        let spec = SynthSpec::default();
        let a = synthesize_market(&spec).unwrap();
        let b = synthesize_market(&spec).unwrap();
        assert_eq!(a.panel, b.panel);
        let c = synthesize_market(&SynthSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.panel, c.panel);
    }

    #[test]
    fn planted_lag_is_recoverable() {
        let spec = SynthSpec {
            noise: 0.05,
            ..SynthSpec::default()
        };
        let m = synthesize_market(&spec).unwrap();
        let r = industry_returns(&m, &spec);
        let c = lagged_corr(&r[0], &r[1], 2);
        assert!(c > 0.6, "lag-2 correlation {c}");
        assert!(lagged_corr(&r[1], &r[0], 2).abs() < 0.2);
        assert!(lagged_corr(&r[0], &r[2], 2).abs() < 0.2);
    }

    #[test]
    fn null_structure_without_links() {
        let spec = SynthSpec {
            links: vec![LeadLagLink {
                leader: 0,
                follower: 1,
                lag: 2,
                strength: 0.0,
            }],
            noise: 0.0,
            ..SynthSpec::default()
        };
        let m = synthesize_market(&spec).unwrap();
        let r = industry_returns(&m, &spec);
        for lag in 1..4 {
            assert!(lagged_corr(&r[0], &r[1], lag).abs() < 0.2);
        }
    }

    #[test]
    fn intra_industry_beats_inter_industry_correlation() {
        let spec = SynthSpec::default();
        let m = synthesize_market(&spec).unwrap();
        let per_stock: Vec<Vec<f64>> = (0..spec.n_stocks)
            .map(|s| (1..spec.n_days).map(|t| compute_return(&m.panel, t).unwrap()[s]).collect())
            .collect();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for i in 0..spec.n_stocks {
            for j in (i + 1)..spec.n_stocks {
                let c = pearson(&per_stock[i], &per_stock[j]);
                if spec.industry_of(i) == spec.industry_of(j) {
                    intra.push(c);
                } else {
                    inter.push(c);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&intra) > mean(&inter) + 0.5, "{} vs {}", mean(&intra), mean(&inter));
    }

    #[test]
    fn rejects_invalid_specs() {
        let bad_lag = SynthSpec {
            links: vec![LeadLagLink {
                leader: 0,
                follower: 1,
                lag: 300,
                strength: 0.5,
            }],
            ..SynthSpec::default()
        };
        assert!(matches!(synthesize_market(&bad_lag), Err(Error::Config(_))));
        let uneven = SynthSpec {
            n_stocks: 25,
            ..SynthSpec::default()
        };
        assert!(uneven.validate().is_err());
    }
}
