//! Central finite-difference verification of [`NetworkParams::backward`].
//!
//! The check uses only `forward`. The loss is a fixed random linear
//! functional of the network output, so its exact gradient is what
//! `backward` returns for that functional's coefficients.

use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::nn::{NetworkParams, NnError};
use crate::rng::SeededStream;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Coordinates whose gradients differ by less than this in absolute terms
/// are treated as agreeing; below it the relative error is dominated by
/// cancellation in the difference quotient.
pub const ABSOLUTE_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed an activation kink.
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: Option<usize>,
}

fn loss(net: &NetworkParams, x: &Matrix, coeff: &Matrix) -> Result<f64, NnError> {
    let y = net.predict(x)?;
    Ok(y.as_slice().iter().zip(coeff.as_slice()).map(|(a, b)| a * b).sum())
}

/// Sign pattern of every pre-activation of a piecewise-linear layer.
fn kink_signature(net: &NetworkParams, x: &Matrix) -> Result<Vec<bool>, NnError> {
    let cache = net.forward(x)?;
    let mut sig = Vec::new();
    for (layer, z) in net.layers().iter().zip(cache.preactivations()) {
        if layer.spec().activation.is_piecewise_linear() {
            sig.extend(z.as_slice().iter().map(|v| *v > 0.0));
        }
    }
    Ok(sig)
}

/// Compares analytic and numeric gradients on `coordinates` (flat indices
/// into [`NetworkParams::to_flat`]), or on all parameters when `None`.
pub fn check_gradients(
    net: &NetworkParams,
    x: &Matrix,
    coordinates: Option<&[usize]>,
    step: f64,
    seed: u64,
) -> Result<GradCheck, NnError> {
    let mut stream = SeededStream::new(seed);
    let n_out = x.rows() * net.output_width();
    let coeff = Matrix::from_vec(x.rows(), net.output_width(), (0..n_out).map(|_| stream.normal()).collect());
    let cache = net.forward(x)?;
    let analytic = net.backward(&cache, &coeff)?.to_flat();

    let base = net.to_flat();
    let base_sig = kink_signature(net, x)?;
    let all: Vec<usize>;
    let coords = match coordinates {
        Some(c) => c,
        None => {
            all = (0..base.len()).collect();
            &all
        }
    };
    let mut probe = net.clone();
    let mut values = base.clone();
    let mut report = GradCheck { checked: 0, skipped_kinks: 0, max_relative_error: 0.0, worst_index: None };
    for &i in coords {
        values[i] = base[i] + step;
        probe.set_flat(&values);
        let sig_plus = kink_signature(&probe, x)?;
        let plus = loss(&probe, x, &coeff)?;
        values[i] = base[i] - step;
        probe.set_flat(&values);
        let sig_minus = kink_signature(&probe, x)?;
        let minus = loss(&probe, x, &coeff)?;
        values[i] = base[i];
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let diff = libm::fabs(numeric - analytic[i]);
        let rel = if diff < ABSOLUTE_FLOOR {
            0.0
        } else {
            diff / libm::fmax(libm::fabs(numeric), libm::fabs(analytic[i]))
        };
        report.checked += 1;
        if rel > report.max_relative_error || report.worst_index.is_none() {
            report.max_relative_error = libm::fmax(rel, report.max_relative_error);
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}
