use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Learned soft incidence and the hyperedge features it induces.
pub struct Hyperedges {
    /// `N×K`; each column is a distribution over that industry's members.
    pub incidence: Var,
    /// `K×T×d`.
    pub edges: Var,
}

/// Scores each stock from its flattened latent sequence, masks non-members
/// with `-inf`, and normalizes over stocks within every industry column.
///
/// `x` is `N×T×d`, `h` the binary `N×K` membership, `score` a `(T·d)×1`
/// weight. Edge features are `E = 𝓗ᵀ·X`.
pub fn build_hyperedges(g: &mut Graph, x: Var, h: &Tensor, score: Var) -> Result<Hyperedges> {
    let xs = g.shape(x).to_vec();
    if xs.len() != 3 {
        return Err(Error::dim(format!("latent must be N×T×d, got {xs:?}")));
    }
    let (n, t, d) = (xs[0], xs[1], xs[2]);
    if h.shape().len() != 2 || h.shape()[0] != n {
        return Err(Error::dim(format!(
            "incidence {:?} does not match {n} stocks",
            h.shape()
        )));
    }
    let k = h.shape()[1];
    if g.shape(score) != [t * d, 1] {
        return Err(Error::dim(format!(
            "score weight {:?} should be [{}, 1]",
            g.shape(score),
            t * d
        )));
    }
    let flat = g.reshape(x, &[n, t * d])?;
    let s = g.matmul(flat, score)?;
    let s = g.broadcast_to(s, &[n, k])?;
    let mask = h.data().iter().map(|&v| v == 0.0).collect();
    let masked = g.mask_fill_neg_inf(s, mask)?;
    let incidence = g.softmax(masked, 0)?;
    let ht = g.transpose(incidence)?;
    let e = g.matmul(ht, flat)?;
    let edges = g.reshape(e, &[k, t, d])?;
    Ok(Hyperedges { incidence, edges })
}

/// `𝓥 = 𝓗·E`: every stock receives the incidence-weighted sum of its
/// hyperedges. `edges` is `K×T×d`, `incidence` `N×K`.
pub fn edge_to_node(g: &mut Graph, edges: Var, incidence: Var) -> Result<Var> {
    let es = g.shape(edges).to_vec();
    if es.len() != 3 {
        return Err(Error::dim(format!("edges must be K×T×d, got {es:?}")));
    }
    let n = g.shape(incidence)[0];
    let flat = g.reshape(edges, &[es[0], es[1] * es[2]])?;
    let v = g.matmul(incidence, flat)?;
    g.reshape(v, &[n, es[1], es[2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_members_with_scores_zero_and_log3() {
        let mut g = Graph::new();
        // T = d = 1; the identity score weight passes the latent through.
        let x = g.constant(Tensor::new([2, 1, 1], vec![0.0, 3f64.ln()]).unwrap());
        let w = g.constant(Tensor::new([1, 1], vec![1.0]).unwrap());
        let h = Tensor::new([2, 1], vec![1.0, 1.0]).unwrap();
        let he = build_hyperedges(&mut g, x, &h, w).unwrap();
        let v = g.value(he.incidence);
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn non_members_get_zero_weight_and_columns_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([4, 2, 3], |i| (i[0] as f64 - 1.5) * 0.7 + i[2] as f64 * 0.1));
        let w = g.constant(Tensor::from_fn([6, 1], |i| 0.2 * i[0] as f64 - 0.4));
        let h = Tensor::new([4, 2], vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let he = build_hyperedges(&mut g, x, &h, w).unwrap();
        let v = g.value(he.incidence);
        for m in 0..2 {
            let col: f64 = (0..4).map(|s| v[s * 2 + m]).sum();
            assert!((col - 1.0).abs() < 1e-12);
            for s in 0..4 {
                if h.get(&[s, m]) == 0.0 {
                    assert_eq!(v[s * 2 + m], 0.0);
                }
            }
        }
        assert_eq!(g.shape(he.edges), &[2, 2, 3]);
    }

    #[test]
    fn singleton_edge_copies_member() {
        let mut g = Graph::new();
        let xt = Tensor::from_fn([3, 2, 2], |i| (i[0] * 4 + i[1] * 2 + i[2]) as f64);
        let x = g.constant(xt.clone());
        let w = g.constant(Tensor::from_fn([4, 1], |_| 0.3));
        let h = Tensor::new([3, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let he = build_hyperedges(&mut g, x, &h, w).unwrap();
        assert_eq!(&g.value(he.edges)[..4], &xt.data()[..4]);
    }

    #[test]
    fn empty_industry_column_is_degenerate() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([2, 1, 1]));
        let w = g.constant(Tensor::zeros([1, 1]));
        let h = Tensor::new([2, 2], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            build_hyperedges(&mut g, x, &h, w),
            Err(Error::DegenerateSlice(_))
        ));
    }

    #[test]
    fn edge_to_node_matches_loops() {
        let mut g = Graph::new();
        let et = Tensor::from_fn([2, 3, 2], |i| (i[0] as f64 + 1.0) * (i[1] as f64 - i[2] as f64));
        let ht = Tensor::new([3, 2], vec![0.5, 0.0, 0.5, 0.2, 0.0, 0.8]).unwrap();
        let e = g.constant(et.clone());
        let h = g.constant(ht.clone());
        let v = edge_to_node(&mut g, e, h).unwrap();
        let out = g.tensor(v);
        for n in 0..3 {
            for t in 0..3 {
                for c in 0..2 {
                    let want: f64 = (0..2).map(|m| ht.get(&[n, m]) * et.get(&[m, t, c])).sum();
                    assert!((out.get(&[n, t, c]) - want).abs() < 1e-14);
                }
            }
        }
    }
}
