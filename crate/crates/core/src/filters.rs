//! Square-root Hanning detector-frequency filters.
//!
//! A `FilterResponse` is a real, symmetric gain profile over the DFT
//! frequencies of one sinogram row (the detector-bin axis). The square-root
//! Hanning family with cutoff parameter `c` tapers from 1 at zero frequency
//! to 0 at `nu_c = nu_Nyquist / c`, so larger `c` means a narrower passband.
//! Application is cyclic along the detector axis: each view row is
//! transformed, multiplied by the gains, and transformed back. Real
//! symmetric gains make the operator exactly self-adjoint.

use rustfft::{FftPlanner, num_complex::Complex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Sinogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    HannSqrt,
    /// Pointwise complement `sqrt(1 - g^2)` of the square-root Hanning
    /// response with the same cutoff; the pair sums to identity in power.
    HannSqrtComplement,
    Identity,
}

/// Recipe for a detector-frequency response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub cutoff_param: f64,
    pub n_bins: usize,
}

impl FilterSpec {
    pub fn hann_sqrt(cutoff_param: f64, n_bins: usize) -> Self {
        FilterSpec { kind: FilterKind::HannSqrt, cutoff_param, n_bins }
    }

    pub fn identity(n_bins: usize) -> Self {
        FilterSpec { kind: FilterKind::Identity, cutoff_param: 1.0, n_bins }
    }

    pub fn response(&self) -> Result<FilterResponse> {
        if self.n_bins == 0 {
            return Err(Error::InvalidFilter("n_bins must be >= 1".into()));
        }
        match self.kind {
            FilterKind::HannSqrt => hann_sqrt_response(self.n_bins, self.cutoff_param),
            FilterKind::HannSqrtComplement => {
                Ok(complement_response(&hann_sqrt_response(self.n_bins, self.cutoff_param)?))
            }
            FilterKind::Identity => Ok(FilterResponse { gains: vec![1.0; self.n_bins] }),
        }
    }
}

/// Real symmetric gain profile over the `n_bins` DFT frequencies of a
/// detector row, stored in FFT index order (negative frequencies in the
/// upper half).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterResponse {
    gains: Vec<f64>,
}

impl FilterResponse {
    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Signed frequency of DFT index `k` in cycles per sample
    /// (Nyquist = 0.5).
    pub fn frequency(&self, k: usize) -> f64 {
        signed_frequency(k, self.gains.len())
    }

    /// Pointwise squared response, for composing repeated applications.
    pub fn squared(&self) -> FilterResponse {
        FilterResponse { gains: self.gains.iter().map(|g| g * g).collect() }
    }
}

pub fn signed_frequency(k: usize, n: usize) -> f64 {
    if 2 * k <= n { k as f64 / n as f64 } else { (k as f64 - n as f64) / n as f64 }
}

/// Square-root Hanning gain profile with cutoff `nu_c = nu_Nyquist / c`:
/// `gain(nu) = sqrt(0.5 (1 + cos(pi nu / nu_c)))` for `|nu| <= nu_c`,
/// zero beyond.
pub fn hann_sqrt_response(n_bins: usize, c: f64) -> Result<FilterResponse> {
    if !(c > 0.0) {
        return Err(Error::InvalidFilter(format!("cutoff parameter must be > 0, got {c}")));
    }
    if n_bins == 0 {
        return Err(Error::InvalidFilter("n_bins must be >= 1".into()));
    }
    let n = n_bins;
    let gains = (0..n)
        .map(|k| {
            let k_eff = k.min(n - k) as f64;
            // |nu| / nu_c with nu = k_eff / n and nu_c = 0.5 / c
            let t = 2.0 * c * k_eff / n as f64;
            if t >= 1.0 {
                0.0
            } else {
                (0.5 * (1.0 + (std::f64::consts::PI * t).cos())).sqrt()
            }
        })
        .collect();
    Ok(FilterResponse { gains })
}

/// Exactly complementary response: `sqrt(1 - g^2)` pointwise, so that
/// `base^2 + complement^2 = 1` at every frequency.
pub fn complement_response(base: &FilterResponse) -> FilterResponse {
    FilterResponse {
        gains: base.gains.iter().map(|g| (1.0 - g * g).max(0.0).sqrt()).collect(),
    }
}

/// Applies `r` along the detector-bin axis of every view row: FFT,
/// multiply by the gains, inverse FFT (cyclic, no padding). Linear and
/// self-adjoint.
pub fn apply_filter(s: &Sinogram, r: &FilterResponse) -> Result<Sinogram> {
    if s.n_bins != r.len() {
        return Err(Error::ShapeMismatch(format!(
            "sinogram has {} bins, response has {}",
            s.n_bins,
            r.len()
        )));
    }
    let n = s.n_bins;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut out = Sinogram::zeros(s.n_views, s.n_bins);
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for view in 0..s.n_views {
        let row = &s.values[view * n..(view + 1) * n];
        for (b, v) in buf.iter_mut().zip(row) {
            *b = Complex::new(*v, 0.0);
        }
        fwd.process(&mut buf);
        for (b, g) in buf.iter_mut().zip(&r.gains) {
            *b *= *g;
        }
        inv.process(&mut buf);
        let out_row = &mut out.values[view * n..(view + 1) * n];
        for (o, b) in out_row.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }
    Ok(out)
}

/// Worst-case deviation of `hi^2 + lo^2` from identity over the passband
/// `|nu| <= passband_limit` (cycles per sample).
pub fn complementarity_deviation(
    hi: &FilterResponse,
    lo: &FilterResponse,
    passband_limit: f64,
) -> Result<f64> {
    if hi.len() != lo.len() {
        return Err(Error::ShapeMismatch(format!(
            "responses have lengths {} and {}",
            hi.len(),
            lo.len()
        )));
    }
    let mut worst = 0.0f64;
    for k in 0..hi.len() {
        if hi.frequency(k).abs() <= passband_limit {
            let sum = hi.gains[k] * hi.gains[k] + lo.gains[k] * lo.gains[k];
            worst = worst.max((sum - 1.0).abs());
        }
    }
    Ok(worst)
}
