//! Cross-scale fusion.
//!
//! Edges from every scale are brought to the full window length and stacked
//! into `M = S·K` rows. A learned metric `Q = LᵀL` measures how far apart two
//! edges are at each time step; inverse distances become a column-stochastic
//! affinity `B`, which after symmetric degree normalization mixes the edges.

use super::construct::edge_to_node;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Clamp applied to distances before inverting them.
pub const DISTANCE_EPS: f64 = 1e-8;

/// Lower bound on affinity row sums before the `Deg^{-1/2}` scaling.
///
/// Inverse distances are unbounded, so the column softmax is often close to
/// a hard argmax and a row can underflow to zero. Without a floor the
/// normalized entry `B_ij / sqrt(deg_i deg_j)` then overflows. With it, each
/// entry is at most `1 / sqrt(DEGREE_FLOOR)`.
pub const DEGREE_FLOOR: f64 = 1e-2;

/// Nearest-step initialisation for the `Tⁱ → T` time map: fine step `t` copies
/// coarse step `floor(t·Tⁱ/T)`. For `Tⁱ = T` this is the identity.
pub fn nearest_upsample(t_in: usize, t_out: usize) -> Tensor {
    Tensor::from_fn([t_in, t_out], |i| if i[0] == i[1] * t_in / t_out { 1.0 } else { 0.0 })
}

/// Affine map along the time axis: `K×Tⁱ×d → K×T×d` with weight `Tⁱ×T` and
/// bias `T`.
pub fn upsample_edges(g: &mut Graph, edges: Var, weight: Var, bias: Var) -> Result<Var> {
    let s = g.shape(edges).to_vec();
    if s.len() != 3 || g.shape(weight).len() != 2 || g.shape(weight)[0] != s[1] {
        return Err(Error::dim(format!(
            "upsample weight {:?} does not fit edges {s:?}",
            g.shape(weight)
        )));
    }
    let x = g.permute(edges, &[0, 2, 1])?;
    let y = g.matmul(x, weight)?;
    let y = g.add_broadcast(y, bias)?;
    g.permute(y, &[0, 2, 1])
}

pub struct Affinity {
    /// Squared Mahalanobis distances, `M×M×T`.
    pub distance: Var,
    /// Inverse distances with a zero diagonal.
    pub inverse: Var,
    /// Softmax of `inverse` over the first axis.
    pub stochastic: Var,
}

/// Pairwise per-time-step affinity of the stacked edges `M×T×d` under the
/// metric factor `L` (`d×d`).
pub fn mahalanobis_affinity(g: &mut Graph, stacked: Var, metric: Var) -> Result<Affinity> {
    let s = g.shape(stacked).to_vec();
    if s.len() != 3 || g.shape(metric) != [s[2], s[2]] {
        return Err(Error::dim(format!(
            "metric {:?} does not fit stacked edges {s:?}",
            g.shape(metric)
        )));
    }
    let (m, t) = (s[0], s[1]);
    // (e_i - e_j)ᵀ LᵀL (e_i - e_j) = ||L e_i - L e_j||²
    let lt = g.transpose(metric)?;
    let z = g.matmul(stacked, lt)?;
    let distance = g.pairwise_sq_dist(z)?;
    let inv = g.inv_clamp(distance, DISTANCE_EPS)?;
    let off = g.constant(Tensor::from_fn([m, m, t], |i| if i[0] == i[1] { 0.0 } else { 1.0 }));
    let inverse = g.mul(inv, off)?;
    let stochastic = g.softmax(inverse, 0)?;
    Ok(Affinity {
        distance,
        inverse,
        stochastic,
    })
}

/// `𝓔′[t] = Deg^{-1/2} B[t] Deg^{-1/2} · Ẽ[t] · Wᵉ + Ẽ[t]` for every time step,
/// where `Deg` holds the row sums of `B[t]`, floored at [`DEGREE_FLOOR`].
pub fn fuse_scales(g: &mut Graph, stacked: Var, affinity: Var, mix: Var) -> Result<Var> {
    let s = g.shape(stacked).to_vec();
    let (m, t) = (s[0], s[1]);
    if g.shape(affinity) != [m, m, t] {
        return Err(Error::dim(format!(
            "affinity {:?} does not fit stacked edges {s:?}",
            g.shape(affinity)
        )));
    }
    let deg = g.sum_axis(affinity, 1)?;
    let inv = g.inv_clamp(deg, DEGREE_FLOOR)?;
    let dinv = g.powf(inv, 0.5)?;
    let left = g.reshape(dinv, &[m, 1, t])?;
    let right = g.reshape(dinv, &[1, m, t])?;
    let left = g.broadcast_to(left, &[m, m, t])?;
    let right = g.broadcast_to(right, &[m, m, t])?;
    let b = g.mul(affinity, left)?;
    let b = g.mul(b, right)?;
    let bt = g.permute(b, &[2, 0, 1])?;
    let et = g.permute(stacked, &[1, 0, 2])?;
    let mixed = g.matmul(bt, et)?;
    let mixed = g.matmul(mixed, mix)?;
    let mixed = g.permute(mixed, &[1, 0, 2])?;
    g.add(mixed, stacked)
}

/// Splits the fused `(S·K)×T×d` stack per scale and sends each block to the
/// stocks through that scale's incidence.
pub fn fused_edge_to_node(g: &mut Graph, fused: Var, incidences: &[Var]) -> Result<Vec<Var>> {
    let s = g.shape(fused).to_vec();
    let scales = incidences.len();
    if scales == 0 || s.len() != 3 || !s[0].is_multiple_of(scales) {
        return Err(Error::dim(format!(
            "fused edges {s:?} cannot be split into {scales} scales"
        )));
    }
    let k = s[0] / scales;
    let block = k * s[1] * s[2];
    incidences
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let e = g.gather(fused, &[k, s[1], s[2]], (i * block..(i + 1) * block).collect())?;
            edge_to_node(g, e, *h)
        })
        .collect()
}
