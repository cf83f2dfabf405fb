use super::{Gradients, Graph, ParamId, ParamStore, Var};
use crate::error::{DcaError, Result};

/// Gradients whose magnitude falls below this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coordinates: usize,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let root = f(&mut g)?;
    let v = g.value(root);
    if !v.is_scalar() {
        return Err(DcaError::Contract("gradient check needs a scalar function".into()));
    }
    Ok(v.item())
}

/// Reverse-mode gradients of `f` with respect to every parameter.
pub fn analytic_gradients<F>(store: &ParamStore, f: &F) -> Result<Gradients>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let root = f(&mut g)?;
    g.backward(root)?;
    Ok(g.param_grads())
}

/// Compares `analytic` against central differences
/// `(f(x+eps) − f(x−eps)) / 2eps` for every coordinate of `params`.
pub fn compare_gradients<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    eps: f64,
    f: &F,
    analytic: &Gradients,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(DcaError::Argument(format!(
            "finite-difference step {eps} outside (0, 1e-2]"
        )));
    }
    let mut report = GradCheckReport::default();
    for &id in params {
        let len = store.get(id).len();
        for k in 0..len {
            let original = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = original + eps;
            let plus = evaluate(store, f);
            store.get_mut(id).data_mut()[k] = original - eps;
            let minus = evaluate(store, f);
            store.get_mut(id).data_mut()[k] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |t| t.data()[k]);
            let rel = relative_error(a, numeric);
            report.coordinates += 1;
            report.max_absolute_error = report.max_absolute_error.max((a - numeric).abs());
            if rel > report.max_relative_error || report.worst_param.is_none() {
                report.max_relative_error = rel;
                report.worst_param = Some(store.name(id).to_string());
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}

/// Runs backward on `f` and checks the result against finite differences.
pub fn gradient_check<F>(store: &mut ParamStore, params: &[ParamId], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &f)?;
    compare_gradients(store, params, eps, &f, &analytic)
}
