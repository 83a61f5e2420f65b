//! Neighborhood contrastive losses.
//!
//! With similarities `s_ik = p_i . q_k / tau`, `N(i)` the neighbor columns of
//! anchor `i` (self excluded) and `v(i)` the column of its paired view:
//!
//! * aggregation (NA): `sum_i [ lse_{k != i} s_ik - mean_{l in N(i)} s_il ]`
//! * discrimination (ND): `sum_i [ lse_{k in N(i)} s_ik - s_{i v(i)} ]`
//! * NCL: `alpha * NA + (1 - alpha) * ND`
//!
//! Losses are sums over anchors. Only the anchor's own momentum copy
//! (column `i`) is excluded from the NA denominator.

use ncl_autograd::{Graph, NodeId, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, Result};
use crate::neighborhood::{Masks, NeighborhoodSpec};

/// Tolerance on the norm of projection rows.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub tau: f64,
    pub alpha: f64,
    pub neighborhood: NeighborhoodSpec,
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(config_err(format!("temperature {} must be positive", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err(format!("alpha {} must lie in [0, 1]", self.alpha)));
        }
        self.neighborhood.validate()
    }
}

/// Graph nodes of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub similarity: NodeId,
    pub na: NodeId,
    pub nd: NodeId,
    pub total: NodeId,
}

/// Scalar values of one loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub na: f64,
    pub nd: f64,
    pub total: f64,
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let src = t.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("transposed shape matches data")
}

fn check_unit_rows(t: &Tensor, what: &str) -> Result<()> {
    if t.ndim() != 2 {
        return Err(data_err(format!("{what} must be a matrix, got shape {:?}", t.shape())));
    }
    for r in 0..t.n_rows() {
        let n = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(data_err(format!("{what} row {r} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

fn check_inputs(p: &Tensor, queue: &Tensor, masks: &Masks) -> Result<()> {
    check_unit_rows(p, "projection")?;
    check_unit_rows(queue, "queue")?;
    if p.shape()[1] != queue.shape()[1] {
        return Err(data_err("projection and queue dimensions differ"));
    }
    if masks.rows != p.n_rows() || masks.cols != queue.n_rows() {
        return Err(data_err(format!(
            "masks are {}x{} but similarities are {}x{}",
            masks.rows,
            masks.cols,
            p.n_rows(),
            queue.n_rows()
        )));
    }
    if let Some(i) = (0..masks.rows).find(|&i| !masks.row(i).iter().any(|&b| b)) {
        return Err(data_err(format!("anchor {i} has an empty neighborhood")));
    }
    if let Some(i) = (0..masks.rows).find(|&i| !masks.row(i)[masks.v_index[i]]) {
        return Err(data_err(format!("anchor {i}: paired view is not a neighbor")));
    }
    Ok(())
}

/// `p . queue^T / tau` for a projection node `p` of shape `[2N, d]`.
pub fn similarity(g: &mut Graph, p: NodeId, queue: &Tensor, tau: f64) -> Result<NodeId> {
    let qt = g.constant(transpose(queue));
    let s = g.matmul(p, qt)?;
    Ok(g.scale(s, 1.0 / tau)?)
}

/// Builds NA, ND and their combination on top of the projection node `p`.
pub fn ncl_graph(g: &mut Graph, p: NodeId, queue: &Tensor, masks: &Masks, spec: &LossSpec) -> Result<LossNodes> {
    spec.validate()?;
    check_inputs(g.value(p), queue, masks)?;
    let (rows, cols) = (masks.rows, masks.cols);
    let s = similarity(g, p, queue, spec.tau)?;

    let mut weights = vec![0.0; rows * cols];
    let mut positive = vec![0.0; rows * cols];
    for (i, count) in masks.neighbor_counts().into_iter().enumerate() {
        let inv = 1.0 / count as f64;
        for (w, &m) in weights[i * cols..(i + 1) * cols].iter_mut().zip(masks.row(i)) {
            if m {
                *w = inv;
            }
        }
        positive[i * cols + masks.v_index[i]] = 1.0;
    }

    let lse_all = g.masked_logsumexp(s, &masks.non_self())?;
    let lse_all = g.sum(lse_all, None)?;
    let w = g.constant(Tensor::new(vec![rows, cols], weights)?);
    let aligned = g.mul(s, w)?;
    let aligned = g.sum(aligned, None)?;
    let na = g.sub(lse_all, aligned)?;

    let lse_nb = g.masked_logsumexp(s, &masks.neighbors)?;
    let lse_nb = g.sum(lse_nb, None)?;
    let v = g.constant(Tensor::new(vec![rows, cols], positive)?);
    let pos = g.mul(s, v)?;
    let pos = g.sum(pos, None)?;
    let nd = g.sub(lse_nb, pos)?;

    let total = if spec.alpha == 1.0 {
        na
    } else if spec.alpha == 0.0 {
        nd
    } else {
        let a = g.scale(na, spec.alpha)?;
        let b = g.scale(nd, 1.0 - spec.alpha)?;
        g.add(a, b)?
    };
    Ok(LossNodes {
        similarity: s,
        na,
        nd,
        total,
    })
}

fn evaluate(p: &Tensor, queue: &Tensor, masks: &Masks, spec: &LossSpec) -> Result<LossTerms> {
    let mut g = Graph::new();
    let pn = g.constant(p.clone());
    let nodes = ncl_graph(&mut g, pn, queue, masks, spec)?;
    Ok(LossTerms {
        na: g.value(nodes.na).item()?,
        nd: g.value(nodes.nd).item()?,
        total: g.value(nodes.total).item()?,
    })
}

/// Neighborhood aggregation loss.
pub fn loss_na(p: &Tensor, queue: &Tensor, masks: &Masks, spec: &LossSpec) -> Result<f64> {
    Ok(evaluate(p, queue, masks, spec)?.na)
}

/// Neighborhood discrimination loss.
pub fn loss_nd(p: &Tensor, queue: &Tensor, masks: &Masks, spec: &LossSpec) -> Result<f64> {
    Ok(evaluate(p, queue, masks, spec)?.nd)
}

pub fn loss_ncl(p: &Tensor, queue: &Tensor, masks: &Masks, spec: &LossSpec) -> Result<LossTerms> {
    evaluate(p, queue, masks, spec)
}

/// Fraction of anchors whose paired view scores strictly above every other
/// non-self queue entry.
pub fn contrastive_accuracy(p: &Tensor, queue: &Tensor, masks: &Masks) -> f64 {
    let rows = p.n_rows();
    if rows == 0 {
        return 0.0;
    }
    let d = p.last_dim();
    let m = queue.n_rows();
    let scores = ncl_autograd::matmul_raw(p.data(), transpose(queue).data(), rows, d, m);
    let hits = (0..rows)
        .filter(|&i| {
            let row = &scores[i * m..(i + 1) * m];
            let v = masks.v_index[i];
            (0..m).all(|k| k == i || k == v || row[k] < row[v])
        })
        .count();
    hits as f64 / rows as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighborhood::{NeighborhoodSpec, Window};

    fn masks(neighbors: Vec<Vec<bool>>, v_index: Vec<usize>) -> Masks {
        let rows = neighbors.len();
        let cols = neighbors[0].len();
        Masks {
            rows,
            cols,
            neighbors: neighbors.concat(),
            v_index,
        }
    }

    fn spec(tau: f64, alpha: f64) -> LossSpec {
        LossSpec {
            tau,
            alpha,
            neighborhood: NeighborhoodSpec::window(Window(0.0)),
        }
    }

    #[test]
    fn nd_closed_form() {
        // anchor 0 = e1, paired view 1 = e1, other neighbor 2 = e2
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = masks(vec![vec![false, true, true], vec![true, false, true]], vec![1, 0]);
        let nd = loss_nd(&p, &q, &m, &spec(1.0, 0.0)).unwrap();
        let per_anchor = (1.0 + (-1.0f64).exp()).ln();
        assert!((nd - 2.0 * per_anchor).abs() < 1e-12);
        assert!((per_anchor - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn rejects_non_unit_rows_and_bad_spec() {
        let p = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let m = masks(vec![vec![false, true], vec![true, false]], vec![1, 0]);
        assert!(loss_na(&p, &q, &m, &spec(1.0, 1.0)).is_err());
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(loss_na(&p, &q, &m, &spec(0.0, 1.0)).is_err());
        assert!(loss_na(&p, &q, &m, &spec(1.0, 1.5)).is_err());
    }

    #[test]
    fn tie_counts_as_miss() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let m = masks(vec![vec![false, true, false], vec![true, false, false]], vec![1, 0]);
        assert_eq!(contrastive_accuracy(&p, &q, &m), 0.0);
    }
}
