//! Central-difference gradient verification.

use crate::error::{AutogradError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Denominator floor of the relative-error measure.
pub const REL_ERROR_FLOOR: f64 = 1e-12;

/// Relative disagreement between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + REL_ERROR_FLOOR)
}

/// Checks the gradient of a scalar function of one tensor at every coordinate.
///
/// `f` receives a fresh graph and the parameter node and must return a
/// single-element node. Returns the maximum [`relative_error`] over all
/// coordinates.
pub fn gradient_check<F>(f: F, param: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    gradient_check_many(
        |g, ids| f(g, ids[0]),
        std::slice::from_ref(param),
        eps,
        None,
    )
}

/// Multi-tensor variant of [`gradient_check`].
///
/// When `coords` is given only those `(tensor, element)` coordinates are
/// perturbed; otherwise every coordinate of every tensor is.
pub fn gradient_check_many<F>(
    f: F,
    params: &[Tensor],
    eps: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(AutogradError::InvalidArgument(format!(
            "gradient check eps must lie in (0, 1e-2], got {eps}"
        )));
    }

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &ids)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| grads.get_or_zeros(id, p))
        .collect();

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = params
                .iter()
                .enumerate()
                .flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i)))
                .collect();
            &all
        }
    };

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &ids)?;
        let v = g.value(out).item()?;
        if !v.is_finite() {
            return Err(AutogradError::NonFinite(format!(
                "function value {v} at perturbed point"
            )));
        }
        Ok(v)
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for &(t, i) in coords {
        if t >= params.len() || i >= params[t].len() {
            return Err(AutogradError::InvalidArgument(format!(
                "coordinate ({t}, {i}) out of range"
            )));
        }
        let orig = params[t].data()[i];
        work[t].data_mut()[i] = orig + eps;
        let plus = eval(&work)?;
        work[t].data_mut()[i] = orig - eps;
        let minus = eval(&work)?;
        work[t].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[t].data()[i], numeric));
    }
    Ok(worst)
}
