use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
/// Parameters whose analytic and numeric gradient norms are both below this
/// are treated as having zero gradient and pass regardless of `rel_err`.
pub const ZERO_GRAD_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, taken as 0 when both are exactly zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let denom = norm(analytic) + norm(numeric);
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

/// Compares reverse-mode gradients of every parameter in `store` against
/// central differences of `loss_fn`. Fails listing the parameters whose
/// relative error exceeds `tolerance`.
pub fn grad_check<F>(store: &mut ParamStore<f64>, loss_fn: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, s)?;
        Ok(g.value(loss).item())
    };

    store.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    g.backward(loss)?.accumulate_into(store);

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut checks = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = store.grad(id).data().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + FD_STEP;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig - FD_STEP;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        checks.push(ParamCheck {
            name: store.get(id).name.clone(),
            rel_err: relative_error(&analytic, &numeric),
            analytic_norm: norm(&analytic),
            numeric_norm: norm(&numeric),
        });
    }
    store.zero_grads();

    let max_rel_err = checks
        .iter()
        .filter(|c| c.analytic_norm.max(c.numeric_norm) >= ZERO_GRAD_FLOOR)
        .map(|c| c.rel_err)
        .fold(0.0, f64::max);
    let failing: Vec<String> = checks
        .iter()
        .filter(|c| c.rel_err > tolerance && c.analytic_norm.max(c.numeric_norm) >= ZERO_GRAD_FLOOR)
        .map(|c| c.name.clone())
        .collect();
    if !failing.is_empty() {
        return Err(Error::GradCheck {
            max_rel_err,
            params: failing,
        });
    }
    Ok(GradCheckReport {
        params: checks,
        max_rel_err,
    })
}
