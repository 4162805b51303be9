//! Reproducible 2D digital breast slice.
//!
//! Glandular tissue comes from thresholding a power-law noise field at the
//! quantile matching the requested glandular fraction; microcalcifications
//! are small discs dropped at distinct glandular pixels. The image is a
//! weighted combination of the three tissue classes (adipose 0.5x,
//! fibroglandular 1.0x, calcification 2.0x by default, base 1 attenuation
//! unit). The breast support is the full square field of view.
//!
//! All randomness goes through seeded ChaCha8 streams (noise and speck
//! placement use separate streams derived from the same seed), so a spec
//! maps to a bit-identical phantom on every run and platform.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{FftPlanner, num_complex::Complex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::signed_frequency;
use crate::geometry::ImageGrid;

/// Name of the pseudorandom generator recorded in output metadata.
pub const RNG_NAME: &str = "chacha8";

/// Stream-splitting constant for the speck-placement draws.
const CALC_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueWeights {
    pub adipose: f64,
    pub fibroglandular: f64,
    pub calcification: f64,
}

impl Default for TissueWeights {
    fn default() -> Self {
        TissueWeights { adipose: 0.5, fibroglandular: 1.0, calcification: 2.0 }
    }
}

/// Recipe for one phantom realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_pixels: usize,
    pub seed: u64,
    pub noise_exponent: f64,
    pub glandular_fraction: f64,
    pub n_calcifications: usize,
    /// Inclusive range of speck radii in pixels.
    pub calc_radius_px: (u32, u32),
    pub tissue_weights: TissueWeights,
    pub fov_side_cm: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_pixels: 256,
            seed: 7,
            noise_exponent: 3.0,
            glandular_fraction: 0.3,
            n_calcifications: 10,
            calc_radius_px: (1, 2),
            tissue_weights: TissueWeights::default(),
            fov_side_cm: 10.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pixels < 8 {
            return Err(Error::InvalidPhantom(format!(
                "n_pixels must be >= 8 for spectral shaping, got {}",
                self.n_pixels
            )));
        }
        if !(self.glandular_fraction > 0.0 && self.glandular_fraction < 1.0) {
            return Err(Error::InvalidPhantom(format!(
                "glandular_fraction must lie in (0, 1), got {}",
                self.glandular_fraction
            )));
        }
        if !(self.noise_exponent >= 0.0) {
            return Err(Error::InvalidPhantom("noise_exponent must be >= 0".into()));
        }
        if self.calc_radius_px.0 > self.calc_radius_px.1 {
            return Err(Error::InvalidPhantom("calc_radius_px range is reversed".into()));
        }
        let w = &self.tissue_weights;
        for (name, v) in [("adipose", w.adipose), ("fibroglandular", w.fibroglandular), ("calcification", w.calcification)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidPhantom(format!("{name} weight must be finite and positive")));
            }
        }
        if !(self.fov_side_cm > 0.0) {
            return Err(Error::InvalidPhantom("fov_side_cm must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum TissueLabel {
    Background = 0,
    Adipose = 1,
    Fibroglandular = 2,
    Calcification = 3,
}

impl TissueLabel {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn weight(self, w: &TissueWeights) -> f64 {
        match self {
            TissueLabel::Background => 0.0,
            TissueLabel::Adipose => w.adipose,
            TissueLabel::Fibroglandular => w.fibroglandular,
            TissueLabel::Calcification => w.calcification,
        }
    }
}

/// Attenuation image plus the per-pixel tissue class it was assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomImage {
    pub values: ImageGrid,
    pub labels: Vec<TissueLabel>,
}

/// `n x n` field whose radially averaged power spectrum falls off as
/// `1 / nu^exponent`: unit white noise is spectrally shaped with amplitude
/// `nu^(-exponent/2)`, the zero-frequency component is removed, and the
/// result is normalized to zero mean and unit variance.
pub fn power_law_noise(n: usize, exponent: f64, seed: u64) -> Result<ImageGrid> {
    if n < 8 {
        return Err(Error::InvalidPhantom(format!(
            "field side must be >= 8 for spectral shaping, got {n}"
        )));
    }
    if !(exponent >= 0.0) {
        return Err(Error::InvalidPhantom("noise exponent must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field: Vec<Complex<f64>> =
        (0..n * n).map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0)).collect();

    fft2(&mut field, n, false);
    for kz in 0..n {
        for kx in 0..n {
            let idx = kz * n + kx;
            if kx == 0 && kz == 0 {
                field[idx] = Complex::new(0.0, 0.0);
                continue;
            }
            let fx = signed_frequency(kx, n);
            let fz = signed_frequency(kz, n);
            let nu = (fx * fx + fz * fz).sqrt();
            field[idx] *= nu.powf(-exponent / 2.0);
        }
    }
    fft2(&mut field, n, true);

    let scale = 1.0 / (n * n) as f64;
    let mut values: Vec<f64> = field.iter().map(|c| c.re * scale).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Err(Error::InvalidPhantom("degenerate noise field".into()));
    }
    for v in values.iter_mut() {
        *v = (*v - mean) / sd;
    }
    ImageGrid::from_values(n, n, 1.0, (0.0, 0.0), values)
}

/// In-place 2D FFT (rows then columns), unnormalized.
fn fft2(data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = data[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            data[i * n + j] = col[i];
        }
    }
}

/// Assembles the phantom for `spec`; deterministic in the seed.
pub fn make_phantom(spec: &PhantomSpec) -> Result<PhantomImage> {
    spec.validate()?;
    let n = spec.n_pixels;
    let total = n * n;
    let noise = power_law_noise(n, spec.noise_exponent, spec.seed)?;

    // glandular mask: the k largest noise values within the (full-square)
    // breast support, k = round(fraction * support size)
    let k_gland = ((spec.glandular_fraction * total as f64).round() as usize).clamp(1, total - 1);
    let mut order: Vec<u32> = (0..total as u32).collect();
    order.sort_unstable_by(|a, b| {
        noise.values[*b as usize]
            .total_cmp(&noise.values[*a as usize])
            .then_with(|| a.cmp(b))
    });

    let mut labels = vec![TissueLabel::Adipose; total];
    for &idx in &order[..k_gland] {
        labels[idx as usize] = TissueLabel::Fibroglandular;
    }

    if spec.n_calcifications > 0 {
        if k_gland < spec.n_calcifications {
            return Err(Error::InvalidPhantom(format!(
                "glandular region ({k_gland} px) too small to host {} calcifications",
                spec.n_calcifications
            )));
        }
        let mut centers: Vec<u32> = order[..k_gland].to_vec();
        centers.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ CALC_STREAM);
        for s in 0..spec.n_calcifications {
            let pick = rng.random_range(s..centers.len());
            centers.swap(s, pick);
            let center = centers[s] as usize;
            let radius = rng.random_range(spec.calc_radius_px.0..=spec.calc_radius_px.1) as i64;
            let (ci, cj) = ((center / n) as i64, (center % n) as i64);
            for di in -radius..=radius {
                for dj in -radius..=radius {
                    if di * di + dj * dj > radius * radius {
                        continue;
                    }
                    let (i, j) = (ci + di, cj + dj);
                    if i < 0 || j < 0 || i >= n as i64 || j >= n as i64 {
                        continue;
                    }
                    labels[i as usize * n + j as usize] = TissueLabel::Calcification;
                }
            }
        }
    }

    let values: Vec<f64> = labels.iter().map(|l| l.weight(&spec.tissue_weights)).collect();
    let grid = ImageGrid::from_values(n, n, spec.fov_side_cm / n as f64, (0.0, 0.0), values)?;
    Ok(PhantomImage { values: grid, labels })
}

/// Phantom at a different resolution. The default protocol regenerates the
/// phantom natively at `n_target` with the same spec parameters and seed,
/// so every resolution gets its own matched-grid realization.
pub fn downsample_consistent(spec: &PhantomSpec, n_target: usize) -> Result<PhantomImage> {
    let mut native = spec.clone();
    native.n_pixels = n_target;
    make_phantom(&native)
}

/// Block-decimation alternative: majority tissue label per `factor x factor`
/// block (ties resolved toward the densest tissue), values rebuilt from the
/// decimated labels so the label/value invariant is preserved.
pub fn downsample_block(image: &PhantomImage, spec: &PhantomSpec, factor: usize) -> Result<PhantomImage> {
    let n = image.values.n_rows;
    if factor == 0 || n % factor != 0 {
        return Err(Error::InvalidPhantom(format!(
            "block factor {factor} does not divide phantom side {n}"
        )));
    }
    let m = n / factor;
    let mut labels = vec![TissueLabel::Background; m * m];
    for bi in 0..m {
        for bj in 0..m {
            let mut counts = [0usize; 4];
            for di in 0..factor {
                for dj in 0..factor {
                    let l = image.labels[(bi * factor + di) * n + (bj * factor + dj)];
                    counts[l.as_u8() as usize] += 1;
                }
            }
            // densest tissue wins ties
            let mut best = TissueLabel::Background;
            let mut best_count = 0;
            for l in [TissueLabel::Background, TissueLabel::Adipose, TissueLabel::Fibroglandular, TissueLabel::Calcification] {
                let c = counts[l.as_u8() as usize];
                if c >= best_count && c > 0 {
                    best = l;
                    best_count = c;
                }
            }
            labels[bi * m + bj] = best;
        }
    }
    let values: Vec<f64> = labels.iter().map(|l| l.weight(&spec.tissue_weights)).collect();
    let grid = ImageGrid::from_values(m, m, spec.fov_side_cm / m as f64, (0.0, 0.0), values)?;
    Ok(PhantomImage { values: grid, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Radially averaged periodogram over the middle two octaves
    /// (nu in [Nyquist/8, Nyquist/2]), in log-spaced bins wide enough to
    /// average hundreds of modes each.
    fn radial_spectrum(field: &ImageGrid, n_bins: usize) -> Vec<(f64, f64)> {
        let n = field.n_rows;
        let mut data: Vec<Complex<f64>> =
            field.values.iter().map(|v| Complex::new(*v, 0.0)).collect();
        fft2(&mut data, n, false);
        let (lo, hi) = (0.0625f64, 0.25f64);
        let ratio = (hi / lo).powf(1.0 / n_bins as f64);
        let mut sums = vec![0.0f64; n_bins];
        let mut counts = vec![0usize; n_bins];
        for kz in 0..n {
            for kx in 0..n {
                let fx = signed_frequency(kx, n);
                let fz = signed_frequency(kz, n);
                let nu = (fx * fx + fz * fz).sqrt();
                if nu < lo || nu >= hi {
                    continue;
                }
                let bin = ((nu / lo).ln() / ratio.ln()).floor() as usize;
                let bin = bin.min(n_bins - 1);
                sums[bin] += data[kz * n + kx].norm_sqr();
                counts[bin] += 1;
            }
        }
        (0..n_bins)
            .filter(|b| counts[*b] > 0)
            .map(|b| (lo * ratio.powf(b as f64 + 0.5), sums[b] / counts[b] as f64))
            .collect()
    }

    /// Least-squares log-log slope of the binned spectrum.
    fn spectral_slope(spectrum: &[(f64, f64)]) -> f64 {
        let pts: Vec<(f64, f64)> =
            spectrum.iter().map(|(nu, p)| (nu.ln(), p.ln())).collect();
        let n = pts.len() as f64;
        let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / n, sy / n);
        let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        num / den
    }

    #[test]
    fn white_noise_spectrum_is_flat() {
        let field = power_law_noise(256, 0.0, 12).unwrap();
        let spec = radial_spectrum(&field, 8);
        let mean = spec.iter().map(|(_, p)| p).sum::<f64>() / spec.len() as f64;
        for (nu, p) in spec {
            assert!(p > 0.8 * mean && p < 1.2 * mean, "bin at {nu}: {p} vs mean {mean}");
        }
    }

    #[test]
    fn shaped_spectrum_has_requested_slope() {
        let field = power_law_noise(256, 3.0, 12).unwrap();
        let slope = spectral_slope(&radial_spectrum(&field, 8));
        assert!((slope + 3.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn noise_is_normalized_and_deterministic() {
        let a = power_law_noise(64, 3.0, 5).unwrap();
        let b = power_law_noise(64, 3.0, 5).unwrap();
        assert_eq!(a.values, b.values);
        let mean = a.values.iter().sum::<f64>() / a.len() as f64;
        let var = a.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert!(power_law_noise(4, 3.0, 5).is_err());
    }

    #[test]
    fn phantom_value_support_and_label_consistency() {
        let spec = PhantomSpec { n_pixels: 64, ..PhantomSpec::default() };
        let ph = make_phantom(&spec).unwrap();
        for (v, l) in ph.values.values.iter().zip(&ph.labels) {
            assert_eq!(*v, l.weight(&spec.tissue_weights));
            assert!([0.5, 1.0, 2.0].contains(v), "unexpected value {v}");
        }
        // all three tissues present under defaults
        for l in [TissueLabel::Adipose, TissueLabel::Fibroglandular, TissueLabel::Calcification] {
            assert!(ph.labels.iter().any(|x| *x == l));
        }
    }

    #[test]
    fn no_calcifications_caps_value_at_fibroglandular() {
        let spec = PhantomSpec { n_pixels: 32, n_calcifications: 0, ..PhantomSpec::default() };
        let ph = make_phantom(&spec).unwrap();
        let max = ph.values.values.iter().cloned().fold(0.0f64, f64::max);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn glandular_fraction_is_respected() {
        let spec = PhantomSpec { n_pixels: 128, n_calcifications: 0, ..PhantomSpec::default() };
        let ph = make_phantom(&spec).unwrap();
        let count = ph.labels.iter().filter(|l| **l == TissueLabel::Fibroglandular).count();
        let frac = count as f64 / (128.0 * 128.0);
        assert!((frac - 0.3).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = PhantomSpec { n_pixels: 32, ..PhantomSpec::default() };
        let a = make_phantom(&spec).unwrap();
        let b = make_phantom(&spec).unwrap();
        assert_eq!(a, b);
        let other = make_phantom(&PhantomSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.values.values, other.values.values);
    }

    #[test]
    fn calcification_error_when_glandular_too_small() {
        let spec = PhantomSpec {
            n_pixels: 8,
            glandular_fraction: 0.02,
            n_calcifications: 10,
            ..PhantomSpec::default()
        };
        assert!(make_phantom(&spec).is_err());
    }

    #[test]
    fn downsample_native_identity_and_determinism() {
        let spec = PhantomSpec { n_pixels: 64, ..PhantomSpec::default() };
        let same = downsample_consistent(&spec, 64).unwrap();
        assert_eq!(same, make_phantom(&spec).unwrap());
        let a = downsample_consistent(&spec, 32).unwrap();
        let b = downsample_consistent(&spec, 32).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.n_rows, 32);
    }

    #[test]
    fn native_regeneration_differs_from_block_decimation() {
        let spec = PhantomSpec { n_pixels: 64, ..PhantomSpec::default() };
        let full = make_phantom(&spec).unwrap();
        let native = downsample_consistent(&spec, 32).unwrap();
        let block = downsample_block(&full, &spec, 2).unwrap();
        assert_eq!(native.values.n_rows, block.values.n_rows);
        assert_ne!(native.values.values, block.values.values);
        // decimated labels still map to canonical values
        for (v, l) in block.values.values.iter().zip(&block.labels) {
            assert_eq!(*v, l.weight(&spec.tissue_weights));
        }
    }
}
