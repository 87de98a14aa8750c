use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Gradients smaller than this in magnitude are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error >= self.tolerance)
    }
}

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences with step `h`, element by element, for every
/// parameter in `params`.
pub fn grad_check<F>(params: &ParamStore, tolerance: f64, h: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, p)?;
        let v = g.item(loss);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let grads = g.backward(loss)?;

    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for (name, tensor) in params.iter() {
        let zeros = vec![0.0; tensor.numel()];
        let analytic = grads.param(name).unwrap_or(&zeros).to_vec();
        let mut check = ParamCheck {
            name: name.to_string(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        for i in 0..tensor.numel() {
            let orig = tensor.data()[i];
            work.get_mut(name).expect("cloned")
                .data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(name).expect("cloned").data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(name).expect("cloned").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = relative_error(analytic[i], numeric);
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_index = i;
            }
            check.max_abs_error = check.max_abs_error.max((analytic[i] - numeric).abs());
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        tolerance,
        step: h,
        params: report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn linear_store() -> ParamStore {
        let mut p = ParamStore::new(11);
        p.init_glorot("w", &[3, 1], 3, 1).unwrap();
        p.insert("b", Tensor::new([1], vec![0.3]).unwrap()).unwrap();
        p
    }

    fn linear_loss(g: &mut Graph, p: &ParamStore) -> Result<Var> {
        let x = g.constant(Tensor::new([4, 3], (0..12).map(|i| (i as f64 * 0.37).cos()).collect())?);
        let w = g.param(p, "w")?;
        let b = g.param(p, "b")?;
        let y = g.matmul(x, w)?;
        let y = g.add_broadcast(y, b)?;
        g.sum(y)
    }

    #[test]
    fn linear_head_is_exact() {
        let r = grad_check(&linear_store(), 1e-8, 1e-5, linear_loss).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.max_rel_error() < 1e-8);
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let build = |g: &mut Graph, p: &ParamStore| {
            g.corrupt_tanh_backward();
            let l = linear_loss(g, p)?;
            let t = g.tanh(l)?;
            g.sum(t)
        };
        let r = grad_check(&linear_store(), 1e-4, 1e-5, build).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures().count(), 2);
    }
}
