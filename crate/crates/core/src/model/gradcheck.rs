//! Central finite-difference verification of the analytic gradients.

use rand::Rng;

use super::{MaskedBatch, Mode, ModelState};
use crate::error::Result;
use crate::rng;

/// Worst relative error per tensor, in parameter order. Relative error is
/// `|a - n| / max(|a|, |n|)`; components whose magnitudes are both below
/// 1e-7 are compared absolutely.
pub fn finite_difference_check(
    state: &ModelState<f64>,
    batch: &MaskedBatch,
    mode: Mode,
    h: f64,
) -> Result<Vec<(String, f64)>> {
    let (_, grads) = state.loss_and_grads(batch, mode)?;
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();
    let mut probe = state.clone();
    let mut worst = Vec::with_capacity(analytic.len());
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut w = 0.0f64;
        for (i, &ai) in a.iter().enumerate() {
            let orig = probe.params.tensors_mut()[ti].1[i];
            probe.params.tensors_mut()[ti].1[i] = orig + h;
            let (lp, _) = probe.loss_and_grads(batch, mode)?;
            probe.params.tensors_mut()[ti].1[i] = orig - h;
            let (lm, _) = probe.loss_and_grads(batch, mode)?;
            probe.params.tensors_mut()[ti].1[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let scale = ai.abs().max(numeric.abs());
            let err = if scale < 1e-7 { (ai - numeric).abs() } else { (ai - numeric).abs() / scale };
            w = w.max(err);
        }
        worst.push((name.clone(), w));
    }
    Ok(worst)
}

/// Re-draw every parameter uniformly at O(1) scale (gains around 1) so
/// attention and layer-norm paths carry gradients well above
/// finite-difference noise.
pub fn randomize_params(state: &mut ModelState<f64>, seed: u64) {
    let mut r = rng::stream(seed, &[rng::TAG_INIT, 0x6663]);
    for (name, data) in state.params.tensors_mut() {
        let base = if name.ends_with("_gain") { 1.0 } else { 0.0 };
        for x in data.iter_mut() {
            *x = base + r.gen_range(-0.5..0.5);
        }
    }
}
