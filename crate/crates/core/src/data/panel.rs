use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Indicator names in storage order.
pub const INDICATORS: [&str; 5] = ["open", "high", "low", "close", "volume"];
pub const CLOSE: usize = 3;
pub const VOLUME: usize = 4;

/// Aligned N×T×F array of daily indicators.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketPanel {
    tickers: Vec<String>,
    dates: Vec<String>,
    /// Row-major, stock-major: `values[(s * T + t) * F + f]`.
    values: Vec<f64>,
}

impl MarketPanel {
    /// Validates shapes, date order, positive prices and non-negative volume.
    pub fn new(tickers: Vec<String>, dates: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let (n, t, f) = (tickers.len(), dates.len(), INDICATORS.len());
        if n == 0 || t == 0 {
            return Err(Error::Panel("panel needs at least one ticker and one date".into()));
        }
        if values.len() != n * t * f {
            return Err(Error::dim(format!(
                "panel values hold {} entries, expected {n}×{t}×{f}",
                values.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Panel(format!(
                "dates not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        for s in 0..n {
            for d in 0..t {
                for (k, name) in INDICATORS.iter().enumerate() {
                    let v = values[(s * t + d) * f + k];
                    let ok = if k == VOLUME { v >= 0.0 } else { v > 0.0 };
                    if !v.is_finite() || !ok {
                        return Err(Error::Panel(format!(
                            "{name} of {} on {} is {v}",
                            tickers[s], dates[d]
                        )));
                    }
                }
            }
        }
        Ok(Self {
            tickers,
            dates,
            values,
        })
    }

    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_features(&self) -> usize {
        INDICATORS.len()
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn close_index(&self) -> usize {
        CLOSE
    }

    pub fn value(&self, stock: usize, day: usize, feature: usize) -> f64 {
        self.values[(stock * self.n_days() + day) * INDICATORS.len() + feature]
    }

    pub fn close(&self, stock: usize, day: usize) -> f64 {
        self.value(stock, day, CLOSE)
    }

    /// Days `[end + 1 - len, end]` for every stock, as an `N×len×F` tensor.
    pub fn window(&self, end: usize, len: usize) -> Result<Tensor> {
        if len == 0 || end + 1 < len || end >= self.n_days() {
            return Err(Error::Index(format!(
                "window of {len} days ending at {end} outside 0..{}",
                self.n_days()
            )));
        }
        let start = end + 1 - len;
        let f = INDICATORS.len();
        let mut data = Vec::with_capacity(self.n_stocks() * len * f);
        for s in 0..self.n_stocks() {
            let base = (s * self.n_days() + start) * f;
            data.extend_from_slice(&self.values[base..base + len * f]);
        }
        Tensor::new([self.n_stocks(), len, f], data)
    }

    /// Reorders stocks: new stock `i` is old stock `order[i]`.
    pub fn permute_stocks(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.n_stocks())?;
        let row = self.n_days() * INDICATORS.len();
        let mut values = Vec::with_capacity(self.values.len());
        for &s in order {
            values.extend_from_slice(&self.values[s * row..(s + 1) * row]);
        }
        Ok(Self {
            tickers: order.iter().map(|&s| self.tickers[s].clone()).collect(),
            dates: self.dates.clone(),
            values,
        })
    }
}

/// 1-day return ratio of every stock at day `t`:
/// `(close[t] - close[t-1]) / close[t-1]`.
pub fn compute_return(panel: &MarketPanel, t: usize) -> Result<Vec<f64>> {
    if t == 0 || t >= panel.n_days() {
        return Err(Error::Index(format!(
            "return needs 1 <= t < {}, got {t}",
            panel.n_days()
        )));
    }
    Ok((0..panel.n_stocks())
        .map(|s| {
            let prev = panel.close(s, t - 1);
            (panel.close(s, t) - prev) / prev
        })
        .collect())
}

/// Binary stock-to-industry membership.
#[derive(Clone, Debug, PartialEq)]
pub struct IndustryIncidence {
    n_stocks: usize,
    names: Vec<String>,
    /// Row-major N×K of 0/1.
    matrix: Vec<f64>,
}

impl IndustryIncidence {
    /// Every stock needs an industry and every industry a stock.
    pub fn new(n_stocks: usize, names: Vec<String>, matrix: Vec<f64>) -> Result<Self> {
        let k = names.len();
        if n_stocks == 0 || k == 0 || matrix.len() != n_stocks * k {
            return Err(Error::dim(format!(
                "incidence of {} entries for {n_stocks} stocks × {k} industries",
                matrix.len()
            )));
        }
        if matrix.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Panel("incidence entries must be 0 or 1".into()));
        }
        if let Some(s) = (0..n_stocks).find(|&s| matrix[s * k..(s + 1) * k].iter().all(|&v| v == 0.0)) {
            return Err(Error::Panel(format!("stock {s} belongs to no industry")));
        }
        if let Some(m) = (0..k).find(|&m| (0..n_stocks).all(|s| matrix[s * k + m] == 0.0)) {
            return Err(Error::Panel(format!("industry {} has no members", names[m])));
        }
        Ok(Self {
            n_stocks,
            names,
            matrix,
        })
    }

    /// One industry per stock, given as an index into `names`.
    pub fn from_assignment(assign: &[usize], names: Vec<String>) -> Result<Self> {
        let k = names.len();
        let mut matrix = vec![0.0; assign.len() * k];
        for (s, &m) in assign.iter().enumerate() {
            if m >= k {
                return Err(Error::Index(format!("industry {m} out of range {k}")));
            }
            matrix[s * k + m] = 1.0;
        }
        Self::new(assign.len(), names, matrix)
    }

    pub fn n_stocks(&self) -> usize {
        self.n_stocks
    }

    pub fn n_industries(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, stock: usize, industry: usize) -> bool {
        self.matrix[stock * self.names.len() + industry] == 1.0
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::new([self.n_stocks, self.names.len()], self.matrix.clone()).expect("validated")
    }

    /// Members of industry `m`, in stock order.
    pub fn members(&self, m: usize) -> Vec<usize> {
        (0..self.n_stocks).filter(|&s| self.contains(s, m)).collect()
    }

    pub fn permute_stocks(&self, order: &[usize]) -> Result<Self> {
        check_permutation(order, self.n_stocks)?;
        let k = self.names.len();
        let mut matrix = Vec::with_capacity(self.matrix.len());
        for &s in order {
            matrix.extend_from_slice(&self.matrix[s * k..(s + 1) * k]);
        }
        Self::new(self.n_stocks, self.names.clone(), matrix)
    }

    pub fn permute_industries(&self, order: &[usize]) -> Result<Self> {
        let k = self.names.len();
        check_permutation(order, k)?;
        let mut matrix = Vec::with_capacity(self.matrix.len());
        for s in 0..self.n_stocks {
            matrix.extend(order.iter().map(|&m| self.matrix[s * k + m]));
        }
        Self::new(
            self.n_stocks,
            order.iter().map(|&m| self.names[m].clone()).collect(),
            matrix,
        )
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::Contract(format!("not a permutation of 0..{n}")));
    }
    Ok(())
}
