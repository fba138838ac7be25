use super::{Mode, Network};
use crate::error::Result;
use crate::rng::rng_for;

const STEP: f64 = 1e-5;

/// Largest `|g_a − g_n| / max(1e-8, |g_a| + |g_n|)` over all parameters,
/// comparing the analytic gradient with central differences.
///
/// `batch_stats` selects train-mode batch normalisation; dropout must then
/// be disabled in the network's config for the loss to be deterministic.
pub fn gradient_check<N: Network>(net: &mut N, x: &crate::Matrix, y: &crate::Matrix, batch_stats: bool) -> Result<f64> {
    Ok(gradient_pairs(net, x, y, batch_stats)?
        .into_iter()
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max))
}

/// `(analytic, numeric)` gradient per parameter.
pub fn gradient_pairs<N: Network>(net: &mut N, x: &crate::Matrix, y: &crate::Matrix, batch_stats: bool) -> Result<Vec<(f64, f64)>> {
    let mut rng = rng_for(0, &[0]);
    let mut loss_at = |net: &mut N, grad: &mut [f64]| -> Result<f64> {
        let mode = if batch_stats { Mode::Train(&mut rng) } else { Mode::Eval };
        net.loss_and_grad(x, y, mode, grad)
    };
    let n = net.parameter_count();
    let stats = net.running_stats();
    let mut analytic = vec![0.0; n];
    loss_at(net, &mut analytic)?;
    let mut scratch = vec![0.0; n];
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + STEP;
        let up = loss_at(net, &mut scratch)?;
        net.params_mut()[i] = orig - STEP;
        let down = loss_at(net, &mut scratch)?;
        net.params_mut()[i] = orig;
        pairs.push((analytic[i], (up - down) / (2.0 * STEP)));
    }
    net.set_running_stats(&stats)?;
    Ok(pairs)
}
