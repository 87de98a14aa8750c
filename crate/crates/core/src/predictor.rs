//! Per-scale prediction heads and the training objective.

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};

/// Two-layer head `flatten → affine → tanh → affine → scalar`.
pub struct Head {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Head {
    pub fn names(prefix: &str) -> [String; 4] {
        ["w1", "b1", "w2", "b2"].map(|p| format!("{prefix}.{p}"))
    }

    pub fn init(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<()> {
        let [w1, b1, w2, b2] = Self::names(prefix);
        store.init_glorot(&w1, &[input, hidden], input, hidden)?;
        store.init_zeros(&b1, &[hidden])?;
        store.init_glorot(&w2, &[hidden, 1], hidden, 1)?;
        store.init_zeros(&b2, &[1])
    }

    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        let [w1, b1, w2, b2] = Self::names(prefix);
        Ok(Self {
            w1: g.param(store, &w1)?,
            b1: g.param(store, &b1)?,
            w2: g.param(store, &w2)?,
            b2: g.param(store, &b2)?,
        })
    }

    /// Maps an `N×…` tensor to `N` scores.
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let n = s[0];
        let flat = g.reshape(x, &[n, s[1..].iter().product()])?;
        let h = g.matmul(flat, self.w1)?;
        let h = g.add_broadcast(h, self.b1)?;
        let h = g.tanh(h)?;
        let y = g.matmul(h, self.w2)?;
        let y = g.add_broadcast(y, self.b2)?;
        g.reshape(y, &[n])
    }
}

pub struct Prediction {
    /// `N` predicted next-day return ratios.
    pub y_hat: Var,
    /// One `N` contribution per scale; they sum to `y_hat`.
    pub per_scale: Vec<Var>,
}

/// `ŷ = Σ_s skip_s(𝒳ˢ) + node_s(𝓥ˢ)`. A `None` skip head drops that branch.
pub fn predict(
    g: &mut Graph,
    latents: &[Var],
    nodes: &[Var],
    skip: &[Option<Head>],
    node_heads: &[Head],
) -> Result<Prediction> {
    if latents.len() != nodes.len() || nodes.len() != node_heads.len() || skip.len() != nodes.len() {
        return Err(Error::Contract("one latent, node tensor and head pair per scale".into()));
    }
    let mut per_scale = Vec::with_capacity(nodes.len());
    for s in 0..nodes.len() {
        let mut y = node_heads[s].apply(g, nodes[s])?;
        if let Some(h) = &skip[s] {
            let y1 = h.apply(g, latents[s])?;
            y = g.add(y1, y)?;
        }
        per_scale.push(y);
    }
    let mut y_hat = per_scale[0];
    for y in &per_scale[1..] {
        y_hat = g.add(y_hat, *y)?;
    }
    Ok(Prediction { y_hat, per_scale })
}

fn check_len(g: &Graph, y_hat: Var, y: &[f64]) -> Result<()> {
    if g.value(y_hat).len() != y.len() {
        return Err(Error::dim(format!(
            "{} predictions vs {} targets",
            g.value(y_hat).len(),
            y.len()
        )));
    }
    Ok(())
}

/// Sum of squared errors.
pub fn mse_loss(g: &mut Graph, y_hat: Var, y: &[f64]) -> Result<Var> {
    check_len(g, y_hat, y)?;
    let shape = g.shape(y_hat).to_vec();
    let target = g.constant(crate::numerics::Tensor::new(shape, y.to_vec())?);
    let d = g.sub(y_hat, target)?;
    let sq = g.mul(d, d)?;
    g.sum(sq)
}

/// `Σ_i Σ_j max(0, -(ŷ_i - ŷ_j)(y_i - y_j))` over all ordered pairs.
pub fn rank_loss(g: &mut Graph, y_hat: Var, y: &[f64]) -> Result<Var> {
    check_len(g, y_hat, y)?;
    g.pairwise_hinge(y_hat, y)
}

/// `mse + α·rank`; α must be non-negative.
pub fn total_loss(g: &mut Graph, y_hat: Var, y: &[f64], alpha: f64) -> Result<Var> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("ranking weight {alpha} must be finite and >= 0")));
    }
    let mse = mse_loss(g, y_hat, y)?;
    if alpha == 0.0 {
        return Ok(mse);
    }
    let rank = rank_loss(g, y_hat, y)?;
    let rank = g.scale(rank, alpha)?;
    g.add(mse, rank)
}
