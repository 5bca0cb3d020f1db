//! Diagonal state-space layer: zero-order-hold discretization, the
//! recurrent scan, and the equivalent causal convolution kernel.
//!
//! Channels are independent. Channel `k` carries `state` scalar modes with
//! continuous parameters `A[k, n]`, `B[k, n]`, `C[k, n]`; the input `u` and
//! step sizes `delta` are laid out `frames x channels`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, CoreError, Result};
use crate::math::{abs, exp, expm1};

/// Below this `|delta * A|` the input gain uses `delta * (1 + delta*A/2)`.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-6;

/// Discretized mode: `a_bar = exp(delta*A)` and `b_bar = phi * B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zoh {
    pub a_bar: f64,
    pub phi: f64,
    /// d(phi)/d(delta)
    pub dphi_ddelta: f64,
    /// d(phi)/d(A)
    pub dphi_da: f64,
}

/// Zero-order hold for one scalar mode.
#[inline]
pub fn zoh(delta: f64, a: f64) -> Zoh {
    let z = delta * a;
    let a_bar = exp(z);
    if abs(z) < ZOH_SERIES_THRESHOLD {
        Zoh { a_bar, phi: delta * (1.0 + 0.5 * z), dphi_ddelta: 1.0 + z, dphi_da: 0.5 * delta * delta }
    } else {
        let em1 = expm1(z);
        // g(z) = (e^z - 1)/z, phi = delta * g(z)
        let g_prime = if abs(z) < 1e-3 {
            0.5 + z / 3.0 + z * z / 8.0
        } else {
            (z * a_bar - em1) / (z * z)
        };
        Zoh { a_bar, phi: delta * em1 / z, dphi_ddelta: a_bar, dphi_da: delta * delta * g_prime }
    }
}

/// Continuous parameters of a diagonal SSM, each `channels x state`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalSsm {
    pub channels: usize,
    pub state: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl DiagonalSsm {
    pub fn new(channels: usize, state: usize, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let n = channels * state;
        if channels == 0 || state == 0 || a.len() != n || b.len() != n || c.len() != n {
            return Err(shape_err!("ssm parameters must each hold {} x {} values", channels, state));
        }
        Ok(Self { channels, state, a, b, c })
    }

    /// Single-channel, single-mode system.
    pub fn scalar(a: f64, b: f64, c: f64) -> Self {
        Self { channels: 1, state: 1, a: vec![a], b: vec![b], c: vec![c] }
    }

    fn check_inputs(&self, u: &[f64], deltas: &[f64]) -> Result<usize> {
        if u.is_empty() || u.len() % self.channels != 0 {
            return Err(shape_err!("input length {} is not a multiple of {} channels", u.len(), self.channels));
        }
        if deltas.len() != u.len() {
            return Err(shape_err!("{} step sizes for {} inputs", deltas.len(), u.len()));
        }
        if let Some(d) = deltas.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(CoreError::NumericalDegeneracy(alloc::format!("step size {} must be positive", d)));
        }
        Ok(u.len() / self.channels)
    }
}

/// Recurrent scan with per-frame, per-channel step sizes:
/// `h_l = a_bar_l h_{l-1} + b_bar_l u_l`, `y_l = C h_l`, `h_{-1} = 0`.
pub fn ssm_scan(u: &[f64], deltas: &[f64], ssm: &DiagonalSsm) -> Result<Vec<f64>> {
    let frames = ssm.check_inputs(u, deltas)?;
    let d = ssm.channels;
    let mut y = vec![0.0; u.len()];
    for k in 0..d {
        for n in 0..ssm.state {
            let idx = k * ssm.state + n;
            let (a, b, c) = (ssm.a[idx], ssm.b[idx], ssm.c[idx]);
            let mut h = 0.0;
            for l in 0..frames {
                let z = zoh(deltas[l * d + k], a);
                h = z.a_bar * h + z.phi * b * u[l * d + k];
                y[l * d + k] += c * h;
            }
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NumericalDegeneracy("scan produced non-finite output".into()));
    }
    Ok(y)
}

/// Kernel `K_j = sum_n C a_bar^j b_bar` for fixed per-channel step sizes,
/// laid out `frames x channels`.
pub fn ssm_kernel(ssm: &DiagonalSsm, deltas: &[f64], frames: usize) -> Result<Vec<f64>> {
    if deltas.len() != ssm.channels {
        return Err(shape_err!("need one step size per channel ({}), got {}", ssm.channels, deltas.len()));
    }
    let d = ssm.channels;
    let mut kernel = vec![0.0; frames * d];
    for k in 0..d {
        if !(deltas[k] > 0.0) {
            return Err(CoreError::NumericalDegeneracy(alloc::format!("step size {} must be positive", deltas[k])));
        }
        for n in 0..ssm.state {
            let idx = k * ssm.state + n;
            let z = zoh(deltas[k], ssm.a[idx]);
            let mut pow = ssm.c[idx] * z.phi * ssm.b[idx];
            for j in 0..frames {
                kernel[j * d + k] += pow;
                pow *= z.a_bar;
            }
        }
    }
    Ok(kernel)
}

/// Causal convolution of `u` with the fixed-step kernel. Matches
/// [`ssm_scan`] when every frame uses the same step sizes.
pub fn ssm_kernel_conv(u: &[f64], ssm: &DiagonalSsm, deltas: &[f64]) -> Result<Vec<f64>> {
    let d = ssm.channels;
    if u.is_empty() || u.len() % d != 0 {
        return Err(shape_err!("input length {} is not a multiple of {} channels", u.len(), d));
    }
    let frames = u.len() / d;
    let kernel = ssm_kernel(ssm, deltas, frames)?;
    let mut y = vec![0.0; u.len()];
    for l in 0..frames {
        for j in 0..=l {
            for k in 0..d {
                y[l * d + k] += kernel[j * d + k] * u[(l - j) * d + k];
            }
        }
    }
    Ok(y)
}
