//! Central finite-difference gradient checks.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Compares the reverse-mode gradient of a scalar function of `x` against
/// central differences with step `h`.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let eval = |t: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let out = f(&mut g, v)?;
        let y = g.value(out).item();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(TensorError::NonFinite(y))
        }
    };

    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let out = f(&mut g, v)?;
    let y = g.value(out).item();
    if !y.is_finite() {
        return Err(TensorError::NonFinite(y));
    }
    g.backward(out)?;
    let analytic = g
        .grad(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

/// Same check with respect to parameters held in `store`. At most
/// `per_param` evenly spaced coordinates of each tensor are probed.
pub fn finite_diff_check_params<F>(
    f: F,
    store: &mut ParamStore<f64>,
    h: f64,
    per_param: usize,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        let y = g.value(out).item();
        if y.is_finite() {
            Ok(y)
        } else {
            Err(TensorError::NonFinite(y))
        }
    };

    store.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    g.accumulate_param_grads(store);

    let ids: Vec<_> = store.ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        let n = store.value(id).numel();
        let step = (n / per_param.max(1)).max(1);
        for i in (0..n).step_by(step) {
            let a = store.get(id).grad[i];
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}
