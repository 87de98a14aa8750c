//! The full forecaster: configuration, parameter layout and forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{
    build_hyperedges, fuse_scales, fused_edge_to_node, lead_lag_aggregate, mahalanobis_affinity, nearest_upsample,
    sliding_patches, upsample_edges, Affinity, LeadLagParams,
};
use crate::multiscale::{self, scale_prefix, validate_scales, ScaleSpec};
use crate::numerics::{grad_check, Gradients, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::predictor::{predict, total_loss, Head, Prediction};

/// Switches that remove one component each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Skip cross-scale fusion: fused edges are the upsampled edges.
    pub no_fusion: bool,
    /// A single pointwise scale; implies `no_fusion`.
    pub no_total_multiscale: bool,
    /// Skip lead-lag aggregation: updated edges are the raw edges.
    pub no_lead_lag: bool,
    /// Drop the heads that read the per-scale latents directly.
    pub no_skip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub lookback: usize,
    pub features: usize,
    pub latent_dim: usize,
    pub head_hidden: usize,
    pub scales: Vec<ScaleSpec>,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lookback: 16,
            features: 5,
            latent_dim: 8,
            head_hidden: 8,
            scales: vec![ScaleSpec::new(1, 1, 4), ScaleSpec::new(2, 2, 3), ScaleSpec::new(4, 4, 2)],
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Applies flag implications: `no_total_multiscale` keeps one kernel-1
    /// scale (with the first scale's lead-lag window) and turns fusion off.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if c.ablation.no_total_multiscale {
            let window = c.scales.first().map_or(2, |s| s.window);
            c.scales = vec![ScaleSpec::new(1, 1, window)];
            c.ablation.no_fusion = true;
        }
        c
    }

    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.features == 0 || self.head_hidden == 0 {
            return Err(Error::config("features and head_hidden must be >= 1"));
        }
        validate_scales(self.lookback, &self.scales, self.latent_dim)
    }
}

/// Everything the forward pass produces, kept for diagnostics and probes.
pub struct Forward {
    pub prediction: Prediction,
    /// `𝒳ˢ`, `N×Tˢ×d`.
    pub latents: Vec<Var>,
    /// Soft incidence `𝓗ˢ`, `N×K`.
    pub incidences: Vec<Var>,
    /// `Eˢ`, `K×Tˢ×d`.
    pub edges: Vec<Var>,
    /// `Êˢ`; the same node as `edges[s]` when lead-lag is off.
    pub lead_lag_edges: Vec<Var>,
    pub attention: Vec<Option<Var>>,
    /// Upsampled edges of all scales stacked scale-major, `(S·K)×T×d`.
    pub stacked: Var,
    pub affinity: Option<Affinity>,
    /// `𝓔′`; the same node as `stacked` when fusion is off.
    pub fused: Var,
    /// `𝓥ˢ`, `N×T×d`.
    pub nodes: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Hermes {
    config: ModelConfig,
    lens: Vec<usize>,
}

impl Hermes {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let config = config.resolved();
        let lens = config.validate()?;
        Ok(Self { config, lens })
    }

    /// The resolved configuration.
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn scale_lengths(&self) -> &[usize] {
        &self.lens
    }

    /// Fresh parameters. Their shapes do not depend on the number of stocks
    /// or industries.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        let c = &self.config;
        let (t, d) = (c.lookback, c.latent_dim);
        let mut store = ParamStore::new(seed);
        multiscale::init_params(&mut store, t, c.features, d, &c.scales)?;
        for (i, (s, &len)) in c.scales.iter().zip(&self.lens).enumerate() {
            let p = scale_prefix(i);
            store.init_glorot(&format!("{p}.edge.score"), &[len * d, 1], len * d, 1)?;
            if !c.ablation.no_lead_lag {
                LeadLagParams::init(&mut store, &p, len, s.window, d)?;
            }
            store.insert(format!("{p}.upsample.weight"), nearest_upsample(len, t))?;
            store.init_zeros(&format!("{p}.upsample.bias"), &[t])?;
            if !c.ablation.no_skip {
                Head::init(&mut store, &format!("{p}.head_latent"), len * d, c.head_hidden)?;
            }
            Head::init(&mut store, &format!("{p}.head_node"), t * d, c.head_hidden)?;
        }
        if !c.ablation.no_fusion {
            let eye = Tensor::from_fn([d, d], |i| if i[0] == i[1] { 1.0 } else { 0.0 });
            store.insert("fusion.metric", eye)?;
            store.init_glorot("fusion.mix", &[d, d], d, d)?;
        }
        Ok(store)
    }

    /// Forward pass on an `N×T×F` (normalized) window with binary
    /// membership `h` (`N×K`).
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, x: Var, h: &Tensor) -> Result<Forward> {
        let c = &self.config;
        let xs = g.shape(x).to_vec();
        if xs.len() != 3 || xs[1] != c.lookback || xs[2] != c.features {
            return Err(Error::dim(format!(
                "window {xs:?} does not match lookback {} × {} features",
                c.lookback, c.features
            )));
        }
        if h.shape().len() != 2 || h.shape()[0] != xs[0] {
            return Err(Error::dim(format!(
                "incidence {:?} does not match {} stocks",
                h.shape(),
                xs[0]
            )));
        }
        let scales = multiscale::extract(g, params, x, &c.scales)?;
        let n_scales = c.scales.len();
        let mut incidences = Vec::with_capacity(n_scales);
        let mut edges = Vec::with_capacity(n_scales);
        let mut lead_lag_edges = Vec::with_capacity(n_scales);
        let mut attention = Vec::with_capacity(n_scales);
        let mut upsampled = Vec::with_capacity(n_scales);
        for (i, s) in c.scales.iter().enumerate() {
            let p = scale_prefix(i);
            let score = g.param(params, &format!("{p}.edge.score"))?;
            let he = build_hyperedges(g, scales.latent[i], h, score)?;
            let (e_hat, attn) = if c.ablation.no_lead_lag {
                (he.edges, None)
            } else {
                let lp = LeadLagParams::bind(g, params, &p)?;
                let patches = sliding_patches(g, he.edges, s.window)?;
                let out = lead_lag_aggregate(g, patches, he.edges, &lp)?;
                (out.edges, Some(out.attention))
            };
            let w = g.param(params, &format!("{p}.upsample.weight"))?;
            let b = g.param(params, &format!("{p}.upsample.bias"))?;
            upsampled.push(upsample_edges(g, e_hat, w, b)?);
            incidences.push(he.incidence);
            edges.push(he.edges);
            lead_lag_edges.push(e_hat);
            attention.push(attn);
        }
        let stacked = if upsampled.len() == 1 {
            upsampled[0]
        } else {
            g.concat(&upsampled)?
        };
        let (fused, affinity) = if c.ablation.no_fusion {
            (stacked, None)
        } else {
            let metric = g.param(params, "fusion.metric")?;
            let mix = g.param(params, "fusion.mix")?;
            let a = mahalanobis_affinity(g, stacked, metric)?;
            (fuse_scales(g, stacked, a.stochastic, mix)?, Some(a))
        };
        let nodes = fused_edge_to_node(g, fused, &incidences)?;

        let mut skip = Vec::with_capacity(n_scales);
        let mut node_heads = Vec::with_capacity(n_scales);
        for i in 0..n_scales {
            let p = scale_prefix(i);
            skip.push(if c.ablation.no_skip {
                None
            } else {
                Some(Head::bind(g, params, &format!("{p}.head_latent"))?)
            });
            node_heads.push(Head::bind(g, params, &format!("{p}.head_node"))?);
        }
        let prediction = predict(g, &scales.latent, &nodes, &skip, &node_heads)?;
        Ok(Forward {
            prediction,
            latents: scales.latent,
            incidences,
            edges,
            lead_lag_edges,
            attention,
            stacked,
            affinity,
            fused,
            nodes,
        })
    }

    /// Predicted next-day returns for one normalized window.
    pub fn predict(&self, params: &ParamStore, window: &Tensor, h: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(window.clone());
        let f = self.forward(&mut g, params, x, h)?;
        Ok(g.value(f.prediction.y_hat).to_vec())
    }

    /// Loss value, parameter gradients and predictions for one day.
    pub fn loss_and_grads(
        &self,
        params: &ParamStore,
        window: &Tensor,
        h: &Tensor,
        target: &[f64],
        alpha: f64,
    ) -> Result<(f64, Gradients, Vec<f64>)> {
        let mut g = Graph::new();
        let x = g.constant(window.clone());
        let f = self.forward(&mut g, params, x, h)?;
        let y_hat = g.value(f.prediction.y_hat).to_vec();
        let loss = total_loss(&mut g, f.prediction.y_hat, target, alpha)?;
        let value = g.item(loss);
        Ok((value, g.backward(loss)?, y_hat))
    }

    /// Finite-difference check of every parameter gradient of the total loss.
    #[allow(clippy::too_many_arguments)]
    pub fn grad_check(
        &self,
        params: &ParamStore,
        window: &Tensor,
        h: &Tensor,
        target: &[f64],
        alpha: f64,
        tolerance: f64,
        step: f64,
    ) -> Result<GradCheckReport> {
        grad_check(params, tolerance, step, |g, p| {
            let x = g.constant(window.clone());
            let f = self.forward(g, p, x, h)?;
            total_loss(g, f.prediction.y_hat, target, alpha)
        })
    }
}
