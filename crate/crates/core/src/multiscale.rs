//! Per-scale down-sampling, causal mixing along time, and projection into
//! the latent space.
//!
//! For an `N×T×F` window, scale `i` produces
//!
//! 1. `Xⁱ = conv1dⁱ(X)` of shape `N×Tⁱ×F` (strided, unpadded, per channel),
//! 2. `𝕏ⁱ[j] = Σ_{l ≤ j} Mⁱ[j, l]·Xⁱ[l] + bⁱ[j]`, one affine map per output
//!    position that only reads the prefix up to `j`,
//! 3. `𝒳ⁱ = 𝕏ⁱ·Wⁱ` of shape `N×Tⁱ×d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Convolution geometry of one scale plus its lead-lag window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSpec {
    pub kernel: usize,
    pub stride: usize,
    /// Lead-lag patch length `kⁱ`.
    pub window: usize,
}

impl ScaleSpec {
    pub const fn new(kernel: usize, stride: usize, window: usize) -> Self {
        Self {
            kernel,
            stride,
            window,
        }
    }

    /// Down-sampled length `floor((T - kernel) / stride) + 1`, or `None`
    /// when the kernel does not fit.
    pub fn output_len(&self, t: usize) -> Option<usize> {
        (self.stride > 0 && self.kernel > 0 && self.kernel <= t).then(|| (t - self.kernel) / self.stride + 1)
    }
}

/// Down-sampled length of every scale; each must keep at least two steps.
pub fn scale_lengths(t: usize, scales: &[ScaleSpec]) -> Result<Vec<usize>> {
    if scales.is_empty() {
        return Err(Error::config("at least one scale is required"));
    }
    scales
        .iter()
        .enumerate()
        .map(|(i, s)| match s.output_len(t) {
            Some(len) if len >= 2 => Ok(len),
            Some(len) => Err(Error::config(format!("scale {} has only {len} step", i + 1))),
            None => Err(Error::config(format!(
                "scale {}: kernel {} stride {} does not fit {t} steps",
                i + 1,
                s.kernel,
                s.stride
            ))),
        })
        .collect()
}

/// [`scale_lengths`] plus the lead-lag window bound `2 <= kⁱ <= Tⁱ`.
pub fn validate_scales(t: usize, scales: &[ScaleSpec], latent_dim: usize) -> Result<Vec<usize>> {
    if latent_dim == 0 {
        return Err(Error::config("latent dimension must be >= 1"));
    }
    let lens = scale_lengths(t, scales)?;
    for (i, (s, &len)) in scales.iter().zip(&lens).enumerate() {
        if s.window < 2 || s.window > len {
            return Err(Error::config(format!(
                "scale {}: lead-lag window {} must be in 2..={len}",
                i + 1,
                s.window
            )));
        }
    }
    Ok(lens)
}

pub(crate) fn scale_prefix(i: usize) -> String {
    format!("scale{}", i + 1)
}

/// Registers conv, mixing and projection parameters for every scale.
pub fn init_params(store: &mut ParamStore, t: usize, f: usize, d: usize, scales: &[ScaleSpec]) -> Result<()> {
    let lens = scale_lengths(t, scales)?;
    for (i, (s, len)) in scales.iter().zip(lens).enumerate() {
        let p = scale_prefix(i);
        store.init_glorot(&format!("{p}.conv.kernel"), &[f, s.kernel], s.kernel, 1)?;
        store.init_glorot(&format!("{p}.mix.weight"), &[len, len], len, len)?;
        store.init_zeros(&format!("{p}.mix.bias"), &[len])?;
        store.init_glorot(&format!("{p}.proj.weight"), &[f, d], f, d)?;
    }
    Ok(())
}

/// One strided convolution per scale.
pub fn decompose(g: &mut Graph, x: Var, kernels: &[Var], scales: &[ScaleSpec]) -> Result<Vec<Var>> {
    if kernels.len() != scales.len() {
        return Err(Error::Contract("one kernel per scale required".into()));
    }
    let t = g.shape(x)[1];
    scales
        .iter()
        .zip(kernels)
        .enumerate()
        .map(|(i, (s, k))| {
            scale_lengths(t, std::slice::from_ref(s))
                .map_err(|_| Error::config(format!("scale {} yields fewer than 2 steps from {t}", i + 1)))?;
            g.conv1d(x, *k, s.stride)
        })
        .collect()
}

/// Lower-triangular (inclusive) mask of size `t×t`.
pub fn causal_mask(t: usize) -> Tensor {
    Tensor::from_fn([t, t], |i| if i[1] <= i[0] { 1.0 } else { 0.0 })
}

/// Causal mixing of an `N×T×F` tensor with a `T×T` weight (only the lower
/// triangle is used) and a `T` bias.
pub fn causal_mix(g: &mut Graph, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let t = g.shape(x)[1];
    if g.shape(weight) != [t, t] || g.shape(bias) != [t] {
        return Err(Error::dim(format!(
            "causal mix weight {:?} / bias {:?} do not fit length {t}",
            g.shape(weight),
            g.shape(bias)
        )));
    }
    let mask = g.constant(causal_mask(t));
    let w = g.mul(weight, mask)?;
    let mixed = g.matmul(w, x)?;
    let b = g.reshape(bias, &[t, 1])?;
    g.add_broadcast(mixed, b)
}

/// Pointwise `F → d` linear map along the last axis.
pub fn project(g: &mut Graph, x: Var, w: Var) -> Result<Var> {
    g.matmul(x, w)
}

/// Parameter handles of one scale, bound on a graph.
pub struct ScaleParams {
    pub kernel: Var,
    pub mix_weight: Var,
    pub mix_bias: Var,
    pub proj: Var,
}

impl ScaleParams {
    pub fn bind(g: &mut Graph, store: &ParamStore, scale: usize) -> Result<Self> {
        let p = scale_prefix(scale);
        Ok(Self {
            kernel: g.param(store, &format!("{p}.conv.kernel"))?,
            mix_weight: g.param(store, &format!("{p}.mix.weight"))?,
            mix_bias: g.param(store, &format!("{p}.mix.bias"))?,
            proj: g.param(store, &format!("{p}.proj.weight"))?,
        })
    }
}

/// Intermediate tensors of every scale.
pub struct ScaleSet {
    pub raw: Vec<Var>,
    pub mixed: Vec<Var>,
    pub latent: Vec<Var>,
}

/// Runs decomposition, causal mixing and projection for all scales.
pub fn extract(g: &mut Graph, store: &ParamStore, x: Var, scales: &[ScaleSpec]) -> Result<ScaleSet> {
    let params = (0..scales.len())
        .map(|i| ScaleParams::bind(g, store, i))
        .collect::<Result<Vec<_>>>()?;
    let kernels: Vec<Var> = params.iter().map(|p| p.kernel).collect();
    let raw = decompose(g, x, &kernels, scales)?;
    let mut mixed = Vec::with_capacity(raw.len());
    let mut latent = Vec::with_capacity(raw.len());
    for (r, p) in raw.iter().zip(&params) {
        let m = causal_mix(g, *r, p.mix_weight, p.mix_bias)?;
        latent.push(project(g, m, p.proj)?);
        mixed.push(m);
    }
    Ok(ScaleSet { raw, mixed, latent })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn conv_lengths_for_default_scales() {
        let scales = [ScaleSpec::new(1, 1, 4), ScaleSpec::new(2, 2, 3), ScaleSpec::new(4, 4, 2)];
        assert_eq!(validate_scales(16, &scales, 8).unwrap(), vec![16, 8, 4]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([2, 16, 3], |i| i[1] as f64));
        let ks: Vec<Var> = scales
            .iter()
            .map(|s| g.constant(Tensor::from_fn([3, s.kernel], |_| 1.0)))
            .collect();
        let out = decompose(&mut g, x, &ks, &scales).unwrap();
        let lens: Vec<usize> = out.iter().map(|v| g.shape(*v)[1]).collect();
        assert_eq!(lens, vec![16, 8, 4]);
    }

    #[test]
    fn too_short_scale_is_config_error() {
        assert!(matches!(
            validate_scales(4, &[ScaleSpec::new(4, 4, 2)], 2),
            Err(Error::Config(_))
        ));
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 4, 1]));
        let k = g.constant(Tensor::zeros([1, 4]));
        assert!(matches!(
            decompose(&mut g, x, &[k], &[ScaleSpec::new(4, 4, 2)]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_pointwise_scale_scales_input() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([1, 4, 2], |i| (i[1] + i[2]) as f64));
        let k = g.constant(t(&[2, 1], vec![2.0, -1.0]));
        let out = decompose(&mut g, x, &[k], &[ScaleSpec::new(1, 1, 2)]).unwrap();
        let v = g.value(out[0]);
        for step in 0..4 {
            assert_eq!(v[step * 2], 2.0 * step as f64);
            assert_eq!(v[step * 2 + 1], -((step + 1) as f64));
        }
    }

    #[test]
    fn constant_input_stays_constant() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([2, 16, 2], |i| 1.0 + i[2] as f64));
        let k = g.constant(t(&[2, 4], vec![0.1, 0.2, 0.3, 0.4, 1.0, -1.0, 2.0, 0.5]));
        let out = decompose(&mut g, x, &[k], &[ScaleSpec::new(4, 4, 2)]).unwrap()[0];
        let v = g.value(out);
        for q in 0..4 {
            assert!((v[q * 2] - 1.0).abs() < 1e-15);
            assert!((v[q * 2 + 1] - 2.0 * 2.5).abs() < 1e-15);
        }
    }

    #[test]
    fn select_last_mixing_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([2, 5, 3], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64));
        let w = g.constant(Tensor::from_fn([5, 5], |i| if i[0] == i[1] { 1.0 } else { 0.0 }));
        let b = g.constant(Tensor::zeros([5]));
        let y = causal_mix(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn hand_prefix_average() {
        // Position j = 2 (1-based) averages x1 and x2: (2 + 4) / 2 = 3.
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3, 1], vec![2.0, 4.0, 9.0]));
        let w = g.constant(t(&[3, 3], vec![1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Tensor::zeros([3]));
        let y = causal_mix(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y)[1], 3.0);
    }

    #[test]
    fn future_perturbation_leaves_past_untouched() {
        let run = |x3: f64| {
            let mut g = Graph::new();
            let x = g.constant(t(&[1, 5, 1], vec![1.0, -2.0, 0.5, x3, 4.0]));
            let w = g.constant(Tensor::from_fn([5, 5], |i| 0.3 + 0.1 * (i[0] * 5 + i[1]) as f64));
            let b = g.constant(t(&[5], vec![0.1, 0.2, 0.3, 0.4, 0.5]));
            let y = causal_mix(&mut g, x, w, b).unwrap();
            g.value(y).to_vec()
        };
        let (a, b) = (run(3.0), run(-7.25));
        assert_eq!(a[..3], b[..3]);
        assert_ne!(a[3], b[3]);
    }

    #[test]
    fn projection_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2], vec![3.0, 4.0]));
        let w = g.constant(t(&[2, 1], vec![1.0, 1.0]));
        let y = project(&mut g, x, w).unwrap();
        assert_eq!(g.value(y), &[7.0]);
        let eye = g.constant(Tensor::from_fn([2, 2], |i| (i[0] == i[1]) as u8 as f64));
        let y = project(&mut g, x, eye).unwrap();
        assert_eq!(g.value(y), &[3.0, 4.0]);
    }
}
