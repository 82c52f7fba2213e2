//! Central finite-difference check of the analytic BPTT gradients.

use crate::cells::Network;
use crate::error::Result;

/// Comparison for one parameter tensor.
#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, 0 when both vanish.
    pub rel_error: f64,
}

/// Mean cross-entropy of `targets` given `ids`, from the zero state.
pub fn sequence_loss(net: &Network, ids: &[usize], targets: &[usize]) -> Result<f64> {
    let pass = net.forward_sequence(ids, None, None)?;
    let total: f64 = pass
        .probs
        .iter()
        .zip(targets)
        .map(|(p, &t)| -p[t].ln())
        .sum();
    Ok(total / ids.len() as f64)
}

/// Compare backpropagated gradients with central differences of step `eps`
/// for every parameter tensor of `net`.
pub fn check_gradients(net: &Network, ids: &[usize], targets: &[usize], eps: f64) -> Result<Vec<GroupCheck>> {
    let pass = net.forward_sequence(ids, None, None)?;
    let mut grad = net.zeros_like();
    net.backward_sequence(&pass, targets, &mut grad)?;
    let analytic: Vec<(String, Vec<f64>)> = grad
        .params()
        .into_iter()
        .map(|p| (p.name, p.data.to_vec()))
        .collect();

    let mut probe = net.clone();
    let mut out = Vec::with_capacity(analytic.len());
    for (g, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let orig = probe.params()[g].data[i];
            probe.params_mut()[g].data[i] = orig + eps;
            let up = sequence_loss(&probe, ids, targets)?;
            probe.params_mut()[g].data[i] = orig - eps;
            let down = sequence_loss(&probe, ids, targets)?;
            probe.params_mut()[g].data[i] = orig;
            *n = (up - down) / (2.0 * eps);
        }
        let an = crate::numkit::norm2(a);
        let nn = crate::numkit::norm2(&numeric);
        let diff: f64 = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let denom = an.max(nn);
        out.push(GroupCheck {
            name: name.clone(),
            analytic_norm: an,
            numeric_norm: nn,
            rel_error: if denom == 0.0 { 0.0 } else { diff / denom },
        });
    }
    Ok(out)
}

/// Largest relative error over all groups.
pub fn worst(checks: &[GroupCheck]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
}
