use alloc::format;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::graph::{Graph, NodeId};

/// Largest relative disagreement between the analytic gradient of `loss`
/// with respect to leaf `leaf` and a central difference with step `eps`,
/// evaluated at `point`. Each component contributes
/// `|analytic - numeric| / max(|analytic|, 1e-4)`, so components with tiny
/// gradients are compared absolutely.
///
/// The leaf is left bound to `point`.
pub fn finite_diff_check(
    graph: &mut Graph,
    loss: NodeId,
    leaf: &str,
    point: &Tensor,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::field("eps", "must be positive"));
    }
    graph.set_leaf(leaf, point.clone())?;
    graph.evaluate()?;
    let grads = graph.backward(loss)?;
    let analytic = grads
        .get(leaf)
        .ok_or_else(|| Error::Config(format!("leaf `{leaf}` does not require a gradient")))?
        .clone();

    let mut probe = point.clone();
    let mut worst: f64 = 0.0;
    for j in 0..point.numel() {
        let x0 = point.data()[j];
        probe.data_mut()[j] = x0 + eps;
        let up = loss_at(graph, loss, leaf, &probe)?;
        probe.data_mut()[j] = x0 - eps;
        let down = loss_at(graph, loss, leaf, &probe)?;
        probe.data_mut()[j] = x0;

        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.data()[j];
        let rel = (a - numeric).abs() / a.abs().max(1e-4);
        if !rel.is_finite() {
            return Err(Error::NonFinite(format!(
                "component {j} of `{leaf}`: analytic {a}, numeric {numeric}"
            )));
        }
        worst = worst.max(rel);
    }
    graph.set_leaf(leaf, point.clone())?;
    graph.evaluate()?;
    Ok(worst)
}

fn loss_at(graph: &mut Graph, loss: NodeId, leaf: &str, at: &Tensor) -> Result<f64> {
    graph.set_leaf(leaf, at.clone())?;
    graph.evaluate()?;
    graph
        .value(loss)
        .and_then(Tensor::item)
        .ok_or_else(|| Error::NonScalarLoss(graph.value(loss).map(|v| v.shape().to_vec()).unwrap_or_default()))
}
