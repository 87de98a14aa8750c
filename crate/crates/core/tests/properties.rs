use hermes::data::IndustryIncidence;
use hermes::hypergraph::{build_hyperedges, mahalanobis_affinity};
use hermes::multiscale::{self, ScaleSpec};
use hermes::numerics::{Graph, ParamStore, Tensor};
use hermes::{Ablation, Hermes, ModelConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    spread(rng, shape, 1.0)
}

fn spread(rng: &mut ChaCha8Rng, shape: &[usize], width: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-width..width))
}

/// Every stock in exactly one industry, every industry non-empty.
fn random_incidence(rng: &mut ChaCha8Rng, n: usize, k: usize) -> IndustryIncidence {
    let mut assign: Vec<usize> = (0..n).map(|s| if s < k { s } else { rng.random_range(0..k) }).collect();
    assign.shuffle(rng);
    IndustryIncidence::from_assignment(&assign, (0..k).map(|m| format!("I{m}")).collect()).unwrap()
}

fn random_scales(rng: &mut ChaCha8Rng, t: usize, s: usize) -> Vec<ScaleSpec> {
    let mut scales = vec![ScaleSpec::new(1, 1, rng.random_range(2..=4))];
    while scales.len() < s {
        let kernel = rng.random_range(1..=4);
        let stride = rng.random_range(1..=kernel);
        let len = (t - kernel) / stride + 1;
        if len >= 2 {
            scales.push(ScaleSpec::new(kernel, stride, rng.random_range(2..=len.min(4))));
        }
    }
    scales
}

fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let t = rng.random_range(8..=16);
    let s = rng.random_range(1..=3);
    ModelConfig {
        lookback: t,
        features: rng.random_range(1..=5),
        latent_dim: rng.random_range(1..=4),
        head_hidden: rng.random_range(1..=4),
        scales: random_scales(rng, t, s),
        ablation: Ablation {
            no_fusion: rng.random_bool(0.25),
            no_lead_lag: rng.random_bool(0.25),
            no_skip: rng.random_bool(0.25),
            no_total_multiscale: false,
        },
    }
}

fn permute_rows(x: &Tensor, order: &[usize]) -> Tensor {
    let row: usize = x.shape()[1..].iter().product();
    let data = order.iter().flat_map(|&s| x.data()[s * row..(s + 1) * row].to_vec()).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shape_chain(seed in any::<u64>(), t in 8usize..=32, s in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, f, d) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
        let scales = random_scales(&mut rng, t, s);
        let lens = multiscale::validate_scales(t, &scales, d).unwrap();
        let mut store = ParamStore::new(seed);
        multiscale::init_params(&mut store, t, f, d, &scales).unwrap();
        let mut g = Graph::new();
        let x = g.constant(random_tensor(&mut rng, &[n, t, f]));
        let set = multiscale::extract(&mut g, &store, x, &scales).unwrap();
        for (i, &len) in lens.iter().enumerate() {
            prop_assert_eq!(g.shape(set.raw[i]), &[n, len, f]);
            prop_assert_eq!(g.shape(set.mixed[i]), &[n, len, f]);
            prop_assert_eq!(g.shape(set.latent[i]), &[n, len, d]);
            prop_assert!(g.value(set.latent[i]).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn multiscale_is_stock_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, t, f, d) = (rng.random_range(2..7), 12, 3, 2);
        let scales = random_scales(&mut rng, t, 3);
        let mut store = ParamStore::new(seed);
        multiscale::init_params(&mut store, t, f, d, &scales).unwrap();
        let x = random_tensor(&mut rng, &[n, t, f]);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut g = Graph::new();
        let xa = g.constant(x.clone());
        let a = multiscale::extract(&mut g, &store, xa, &scales).unwrap();
        let xb = g.constant(permute_rows(&x, &order));
        let b = multiscale::extract(&mut g, &store, xb, &scales).unwrap();
        for (la, lb) in a.latent.iter().zip(&b.latent) {
            let (pa, pb) = (permute_rows(&g.tensor(*la), &order), g.tensor(*lb));
            prop_assert_eq!(pa.data(), pb.data());
        }
    }

    #[test]
    fn incidence_is_masked_and_column_stochastic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k, t, d) = (rng.random_range(2..12), rng.random_range(1..4), rng.random_range(2..6), rng.random_range(1..4));
        let k = k.min(n);
        let h = random_incidence(&mut rng, n, k).as_tensor();
        let mut g = Graph::new();
        let x = g.constant(spread(&mut rng, &[n, t, d], 5.0));
        let score = g.constant(spread(&mut rng, &[t * d, 1], 5.0));
        let he = build_hyperedges(&mut g, x, &h, score).unwrap();
        let inc = g.tensor(he.incidence);
        for m in 0..k {
            let col: f64 = (0..n).map(|s| inc.get(&[s, m])).sum();
            prop_assert!((col - 1.0).abs() < 1e-10);
            for s in 0..n {
                if h.get(&[s, m]) == 0.0 {
                    prop_assert_eq!(inc.get(&[s, m]), 0.0);
                }
            }
        }
    }

    #[test]
    fn affinity_is_a_metric_with_stochastic_columns(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, t, d) = (rng.random_range(2..7), rng.random_range(1..5), rng.random_range(1..4));
        let mut g = Graph::new();
        let stacked = g.constant(random_tensor(&mut rng, &[m, t, d]));
        let metric = g.constant(random_tensor(&mut rng, &[d, d]));
        let a = mahalanobis_affinity(&mut g, stacked, metric).unwrap();
        let (dist, b) = (g.tensor(a.distance), g.tensor(a.stochastic));
        for s in 0..t {
            for i in 0..m {
                prop_assert_eq!(dist.get(&[i, i, s]), 0.0);
                for j in 0..m {
                    prop_assert!(dist.get(&[i, j, s]) >= 0.0);
                    prop_assert_eq!(dist.get(&[i, j, s]), dist.get(&[j, i, s]));
                }
                let col: f64 = (0..m).map(|r| b.get(&[r, i, s])).sum();
                prop_assert!((col - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn predictions_follow_stock_permutations(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_config(&mut rng);
        let model = Hermes::new(&cfg).unwrap();
        let params = model.init_params(seed).unwrap();
        let n = rng.random_range(3..10);
        let k = rng.random_range(1..=3);
        let inc = random_incidence(&mut rng, n, k);
        let x = random_tensor(&mut rng, &[n, cfg.lookback, cfg.features]);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let a = model.predict(&params, &x, &inc.as_tensor()).unwrap();
        let b = model
            .predict(&params, &permute_rows(&x, &order), &inc.permute_stocks(&order).unwrap().as_tensor())
            .unwrap();
        for (i, &s) in order.iter().enumerate() {
            prop_assert!((b[i] - a[s]).abs() < 1e-10, "{} vs {}", b[i], a[s]);
        }
    }

    #[test]
    fn industry_relabeling_permutes_edges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_config(&mut rng);
        let model = Hermes::new(&cfg).unwrap();
        let params = model.init_params(seed).unwrap();
        let n = rng.random_range(3..10);
        let k = rng.random_range(2..=3);
        let inc = random_incidence(&mut rng, n, k);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let x = random_tensor(&mut rng, &[n, cfg.lookback, cfg.features]);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let a = model.forward(&mut g, &params, xv, &inc.as_tensor()).unwrap();
        let b = model.forward(&mut g, &params, xv, &inc.permute_industries(&order).unwrap().as_tensor()).unwrap();
        for (ea, eb) in a.lead_lag_edges.iter().zip(&b.lead_lag_edges) {
            let (ea, eb) = (g.tensor(*ea), g.tensor(*eb));
            prop_assert!(permute_rows(&ea, &order).data().iter().zip(eb.data()).all(|(u, v)| (u - v).abs() < 1e-10));
        }
        let (ya, yb) = (g.value(a.prediction.y_hat), g.value(b.prediction.y_hat));
        prop_assert!(ya.iter().zip(yb).all(|(u, v)| (u - v).abs() < 1e-10));
    }

    #[test]
    fn latents_never_see_later_inputs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, t, f, d) = (2, rng.random_range(6..14), 2, 2);
        let scales = random_scales(&mut rng, t, 3);
        let mut store = ParamStore::new(seed);
        multiscale::init_params(&mut store, t, f, d, &scales).unwrap();
        let x = random_tensor(&mut rng, &[n, t, f]);
        for (i, s) in scales.iter().enumerate() {
            let len = s.output_len(t).unwrap();
            let tau = rng.random_range(0..len);
            let mut g = Graph::new();
            let xv = g.input(x.clone()).unwrap();
            let set = multiscale::extract(&mut g, &store, xv, &scales).unwrap();
            let picked = g.gather_map(set.latent[i], &[n, 1, d], |idx| (idx[0] * len + tau) * d + idx[2]).unwrap();
            let loss = g.sum(picked).unwrap();
            let grads = g.backward(loss).unwrap();
            let gx = grads.wrt(xv).unwrap();
            let horizon = tau * s.stride + s.kernel;
            for j in horizon..t {
                for st in 0..n {
                    for c in 0..f {
                        prop_assert_eq!(gx[(st * t + j) * f + c], 0.0);
                    }
                }
            }
        }
    }
}
