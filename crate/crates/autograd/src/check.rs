//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the loss, so it is independent of
//! every backward rule it is used to verify.

use crate::params::{Gradients, ParamId, ParamStore};
use crate::Tensor;

/// Central-difference estimate of `∂loss/∂param` for every entry of one
/// parameter. The store is perturbed in place and restored exactly.
pub fn numerical_gradient(
    store: &mut ParamStore,
    id: ParamId,
    eps: f64,
    loss: &mut dyn FnMut(&ParamStore) -> f64,
) -> Tensor {
    let shape = store.value(id).raw_dim();
    let mut out = Tensor::zeros(shape);
    for idx in 0..out.len() {
        let (r, c) = (idx / out.ncols(), idx % out.ncols());
        let orig = store.value(id)[[r, c]];
        store.value_mut(id)[[r, c]] = orig + eps;
        let plus = loss(store);
        store.value_mut(id)[[r, c]] = orig - eps;
        let minus = loss(store);
        store.value_mut(id)[[r, c]] = orig;
        out[[r, c]] = (plus - minus) / (2.0 * eps);
    }
    out
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub param: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest `|a - n| / max(|a|, |n|)` over entries that are not both
    /// below `atol`.
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

/// Compares analytic gradients against central differences for every
/// trainable parameter. An entry fails when
/// `|a - n| > atol + rtol · max(|a|, |n|)`.
pub fn check_gradients(
    store: &mut ParamStore,
    analytic: &Gradients,
    eps: f64,
    rtol: f64,
    atol: f64,
    loss: &mut dyn FnMut(&ParamStore) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.param(id).trainable).collect();
    for id in ids {
        let numeric = numerical_gradient(store, id, eps, loss);
        let zeros = Tensor::zeros(numeric.raw_dim());
        let a = analytic.get(id).unwrap_or(&zeros);
        for ((r, c), &n) in numeric.indexed_iter() {
            let av = a[[r, c]];
            report.checked += 1;
            let scale = av.abs().max(n.abs());
            if scale > atol {
                report.max_rel_err = report.max_rel_err.max((av - n).abs() / scale);
            }
            if (av - n).abs() > atol + rtol * scale {
                report.failures.push(Mismatch {
                    param: store.param(id).name.clone(),
                    row: r,
                    col: c,
                    analytic: av,
                    numeric: n,
                });
            }
        }
    }
    report
}
