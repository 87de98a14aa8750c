//! Moving aggregation over hyperedge patches.
//!
//! Every length-`k` patch of every hyperedge asks one question from its last
//! (lagging) step: which of the `k - 1` leading steps, across all `K`
//! hyperedges, explain it? One softmax runs jointly over the `K·(k-1)`
//! leading cells, so the attention an edge pays to each other edge sums to
//! one per patch. The per-patch contexts are mapped back to the edge length
//! and added to the edge features.

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Overlapping stride-1 patches: `K×T×d → K×(T-k+1)×k×d`, with
/// `out[m, p, o] = E[m, p + o]`.
pub fn sliding_patches(g: &mut Graph, edges: Var, k: usize) -> Result<Var> {
    let s = g.shape(edges).to_vec();
    if s.len() != 3 {
        return Err(Error::dim(format!("edges must be K×T×d, got {s:?}")));
    }
    let (m, t, d) = (s[0], s[1], s[2]);
    if k == 0 || k > t {
        return Err(Error::dim(format!("window {k} does not fit {t} steps")));
    }
    let pn = t - k + 1;
    g.gather_map(edges, &[m, pn, k, d], |o| (o[0] * t + o[1] + o[2]) * d + o[3])
}

/// Handles to one scale's lead-lag parameters.
pub struct LeadLagParams {
    /// `d×d` query projection.
    pub query: Var,
    /// `d×d` key projection.
    pub key: Var,
    /// `(T-k+1)×T` map from the patch axis back to the edge length.
    pub time_weight: Var,
    /// `T` bias of that map.
    pub time_bias: Var,
}

impl LeadLagParams {
    pub fn names(prefix: &str) -> [String; 4] {
        [
            format!("{prefix}.leadlag.query"),
            format!("{prefix}.leadlag.key"),
            format!("{prefix}.leadlag.time.weight"),
            format!("{prefix}.leadlag.time.bias"),
        ]
    }

    /// Query and key projections start at the identity, so the initial
    /// logits are plain dot products of the raw features.
    pub fn init(store: &mut ParamStore, prefix: &str, t: usize, k: usize, d: usize) -> Result<()> {
        let [q, key, w, b] = Self::names(prefix);
        let eye = Tensor::from_fn([d, d], |i| if i[0] == i[1] { 1.0 } else { 0.0 });
        store.insert(q, eye.clone())?;
        store.insert(key, eye)?;
        let pn = t - k + 1;
        store.init_glorot(&w, &[pn, t], pn, t)?;
        store.init_zeros(&b, &[t])
    }

    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        let [q, k, w, b] = Self::names(prefix);
        Ok(Self {
            query: g.param(store, &q)?,
            key: g.param(store, &k)?,
            time_weight: g.param(store, &w)?,
            time_bias: g.param(store, &b)?,
        })
    }
}

pub struct LeadLagOutput {
    /// Updated edges `Ê`, `K×T×d`.
    pub edges: Var,
    /// `(T-k+1)×K×(K·(k-1))`; entry `[p, m, j·(k-1) + o]` is the weight edge
    /// `m`'s patch `p` puts on leading offset `o` of edge `j`.
    pub attention: Var,
    /// Attention-weighted leading values, `(T-k+1)×K×d`.
    pub context: Var,
}

/// Lead-lag aggregation of `patches` (from [`sliding_patches`]) with a
/// residual connection to `edges`.
pub fn lead_lag_aggregate(g: &mut Graph, patches: Var, edges: Var, p: &LeadLagParams) -> Result<LeadLagOutput> {
    let ps = g.shape(patches).to_vec();
    let es = g.shape(edges).to_vec();
    if ps.len() != 4 || es.len() != 3 || ps[0] != es[0] || ps[3] != es[2] || ps[1] + ps[2] - 1 != es[1] {
        return Err(Error::dim(format!("patches {ps:?} do not belong to edges {es:?}")));
    }
    let (m, pn, k, d) = (ps[0], ps[1], ps[2], ps[3]);
    let t = es[1];
    if k < 2 {
        return Err(Error::config("lead-lag window must be >= 2"));
    }
    let lead = k - 1;
    let at = |edge: usize, patch: usize, off: usize, c: usize| ((edge * pn + patch) * k + off) * d + c;

    let query = g.gather_map(patches, &[pn, m, d], |o| at(o[1], o[0], k - 1, o[2]))?;
    let leading = g.gather_map(patches, &[pn, m * lead, d], |o| at(o[1] / lead, o[0], o[1] % lead, o[2]))?;

    let q = g.matmul(query, p.query)?;
    let key = g.matmul(leading, p.key)?;
    let key_t = g.transpose(key)?;
    let logits = g.matmul(q, key_t)?;
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt())?;
    let attention = g.softmax(logits, 2)?;
    let context = g.matmul(attention, leading)?;

    // [Pn, K, d] -> [K, d, Pn] -> [K, d, T] -> [K, T, d]
    let c = g.permute(context, &[1, 2, 0])?;
    let c = g.matmul(c, p.time_weight)?;
    let c = g.add_broadcast(c, p.time_bias)?;
    let c = g.permute(c, &[0, 2, 1])?;
    debug_assert_eq!(g.shape(c), [m, t, d]);
    let out = g.add(edges, c)?;
    Ok(LeadLagOutput {
        edges: out,
        attention,
        context,
    })
}

/// Mean attention mass, over patches, that each query edge puts on each
/// key edge's leading steps. Row `m` sums to 1.
pub fn edge_attention_mass(attention: &Tensor, k: usize) -> Result<Vec<Vec<f64>>> {
    let s = attention.shape();
    if s.len() != 3 || k < 2 || s[2] != s[1] * (k - 1) {
        return Err(Error::dim(format!("attention {s:?} does not match window {k}")));
    }
    let (pn, m, lead) = (s[0], s[1], k - 1);
    let mut mass = vec![vec![0.0; m]; m];
    for p in 0..pn {
        for q in 0..m {
            for j in 0..m * lead {
                mass[q][j / lead] += attention.get(&[p, q, j]);
            }
        }
    }
    for row in &mut mass {
        row.iter_mut().for_each(|v| *v /= pn as f64);
    }
    Ok(mass)
}
