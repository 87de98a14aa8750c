//! Ranking metrics and a daily top-N long-only backtest.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions and realized returns of one trading day, in ticker order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayPrediction {
    pub date: String,
    pub y_hat: Vec<f64>,
    pub y_true: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (denominator `n - 1`).
fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Pearson correlation of one day's cross-section.
pub fn ic(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::dim(format!("{} predictions vs {} targets", y_hat.len(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::config("IC needs at least 2 stocks"));
    }
    let (mp, my) = (mean(y_hat), mean(y));
    let (mut cov, mut vp, mut vy) = (0.0, 0.0, 0.0);
    for (p, t) in y_hat.iter().zip(y) {
        cov += (p - mp) * (t - my);
        vp += (p - mp) * (p - mp);
        vy += (t - my) * (t - my);
    }
    if is_constant(y_hat) || is_constant(y) || vp == 0.0 || vy == 0.0 {
        return Err(Error::DegenerateSlice("zero cross-sectional variance".into()));
    }
    Ok((cov / (vp.sqrt() * vy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean over standard deviation of daily ICs.
pub fn icir(daily_ic: &[f64]) -> Result<f64> {
    if daily_ic.len() < 2 {
        return Err(Error::config("ICIR needs at least 2 days"));
    }
    let sd = sample_std(daily_ic);
    if is_constant(daily_ic) || sd == 0.0 {
        return Err(Error::DegenerateSlice("daily IC has zero variance".into()));
    }
    Ok(mean(daily_ic) / sd)
}

/// Indices of the `n` highest predictions; ties keep the lower index first.
pub fn top_n(y_hat: &[f64], n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > y_hat.len() {
        return Err(Error::config(format!("top {n} out of {} stocks", y_hat.len())));
    }
    let mut idx: Vec<usize> = (0..y_hat.len()).collect();
    idx.sort_by(|&a, &b| y_hat[b].total_cmp(&y_hat[a]));
    idx.truncate(n);
    Ok(idx)
}

/// Fraction of the top-`n` predicted stocks whose realized return is positive.
pub fn prec_at_n(y_hat: &[f64], y: &[f64], n: usize) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::dim(format!("{} predictions vs {} targets", y_hat.len(), y.len())));
    }
    let top = top_n(y_hat, n)?;
    Ok(top.iter().filter(|&&i| y[i] > 0.0).count() as f64 / n as f64)
}

/// Equal-weight return of the top-`n` predicted stocks.
pub fn portfolio_return(y_hat: &[f64], y: &[f64], n: usize) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::dim(format!("{} predictions vs {} targets", y_hat.len(), y.len())));
    }
    let top = top_n(y_hat, n)?;
    Ok(top.iter().map(|&i| y[i]).sum::<f64>() / n as f64)
}

/// Mean over sample standard deviation of daily returns (risk-free rate 0).
pub fn sharpe(returns: &[f64]) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::config("Sharpe ratio needs at least 2 days"));
    }
    let sd = sample_std(returns);
    if is_constant(returns) || sd == 0.0 {
        return Err(Error::DegenerateSlice("portfolio returns have zero variance".into()));
    }
    Ok(mean(returns) / sd)
}

/// Sharpe ratio of the daily top-`n` equal-weight portfolio.
pub fn backtest_sharpe(days: &[DayPrediction], n: usize) -> Result<f64> {
    let r = days
        .iter()
        .map(|d| portfolio_return(&d.y_hat, &d.y_true, n))
        .collect::<Result<Vec<_>>>()?;
    sharpe(&r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean daily IC over non-degenerate days.
    pub ic: Option<f64>,
    pub icir: Option<f64>,
    pub prec_at_n: f64,
    pub sharpe: Option<f64>,
    /// Whether `sharpe` was scaled by √252.
    pub annualized: bool,
    pub n: usize,
    pub n_days: usize,
    /// Days left out of IC statistics because a cross-section was constant.
    pub excluded_days: usize,
    /// IC per evaluated day; `None` for excluded days.
    pub daily_ic: Vec<Option<f64>>,
    pub daily_return: Vec<f64>,
}

impl MetricsReport {
    pub fn compute(days: &[DayPrediction], n: usize, annualize: bool) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::config("no days to evaluate"));
        }
        let mut daily_ic = Vec::with_capacity(days.len());
        let mut prec = 0.0;
        let mut daily_return = Vec::with_capacity(days.len());
        for d in days {
            match ic(&d.y_hat, &d.y_true) {
                Ok(v) => daily_ic.push(Some(v)),
                Err(Error::DegenerateSlice(why)) => {
                    log::warn!("{}: excluded from IC ({why})", d.date);
                    daily_ic.push(None);
                }
                Err(e) => return Err(e),
            }
            prec += prec_at_n(&d.y_hat, &d.y_true, n)?;
            daily_return.push(portfolio_return(&d.y_hat, &d.y_true, n)?);
        }
        let valid: Vec<f64> = daily_ic.iter().flatten().copied().collect();
        let ic_mean = (!valid.is_empty()).then(|| mean(&valid));
        let scale = if annualize { 252f64.sqrt() } else { 1.0 };
        Ok(Self {
            ic: ic_mean,
            icir: icir(&valid).ok(),
            prec_at_n: prec / days.len() as f64,
            sharpe: sharpe(&daily_return).ok().map(|s| s * scale),
            annualized: annualize,
            n,
            n_days: days.len(),
            excluded_days: days.len() - valid.len(),
            daily_ic,
            daily_return,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let prec = format!("Prec@{}", self.n);
        writeln!(f, "{:>8} {:>8} {:>8} {:>8} {:>6} {:>9}", "IC", "ICIR", prec, "SR", "days", "excluded")?;
        write!(
            f,
            "{:>8} {:>8} {:>8} {:>8} {:>6} {:>9}",
            cell(self.ic),
            cell(self.icir),
            cell(Some(self.prec_at_n)),
            cell(self.sharpe),
            self.n_days,
            self.excluded_days
        )
    }
}
