//! Reconstruction-quality metrics and spectral diagnostics.
//!
//! The mode-gain profile probes the weighted forward operator with single
//! spatial-frequency cosine images and reports the norm amplification per
//! mode; it is the computable surrogate for the per-mode singular values
//! of the weighted system operator.

use crate::error::{Error, Result};
use crate::filters::{FilterResponse, apply_filter};
use crate::geometry::{ImageGrid, SystemMatrix};
use crate::solver::IterationRecord;

/// Root-mean-square error over all pixels.
pub fn image_rmse(f: &ImageGrid, f_true: &ImageGrid) -> Result<f64> {
    if !f.same_shape(f_true) {
        return Err(Error::ShapeMismatch(format!(
            "images are {}x{} and {}x{}",
            f.n_rows, f.n_cols, f_true.n_rows, f_true.n_cols
        )));
    }
    let sum: f64 = f
        .values
        .iter()
        .zip(&f_true.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / f.len() as f64).sqrt())
}

/// Norm amplification of cosine-mode probes through the (optionally
/// weighted) forward operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeGainProfile {
    /// Spatial-frequency indices along `x` (cycles per image width).
    pub modes: Vec<usize>,
    /// `||R X e_k||_2 / ||e_k||_2` per mode.
    pub gains: Vec<f64>,
}

/// Cosine-mode probe image at frequency index `k` along `x`:
/// `e_k[i, j] = cos(2 pi k j / n_cols)`, constant along `z`.
pub fn mode_image(template: &ImageGrid, k: usize) -> ImageGrid {
    let mut img = template.clone();
    let nc = img.n_cols;
    for i in 0..img.n_rows {
        for j in 0..nc {
            img.values[i * nc + j] =
                (2.0 * std::f64::consts::PI * (k * j) as f64 / nc as f64).cos();
        }
    }
    img
}

/// Computes `||apply_filter(X e_k, r)||_2 / ||e_k||_2` for each requested
/// mode index.
pub fn mode_gain_profile(
    matrix: &SystemMatrix,
    response: &FilterResponse,
    modes: &[usize],
) -> Result<ModeGainProfile> {
    let template = matrix.image_template();
    let (_, nc) = matrix.grid_shape();
    let mut gains = Vec::with_capacity(modes.len());
    for &k in modes {
        if k >= nc {
            return Err(Error::ShapeMismatch(format!(
                "mode index {k} out of range for {nc} columns"
            )));
        }
        let probe = mode_image(&template, k);
        let probe_norm = probe.norm2();
        let weighted = apply_filter(&matrix.forward_project(&probe)?, response)?;
        gains.push(weighted.norm2() / probe_norm);
    }
    Ok(ModeGainProfile { modes: modes.to_vec(), gains })
}

/// Standard deviation (population) of the first differences of the image
/// RMSE series over the inclusive iteration window; quantifies
/// early-iteration oscillation.
pub fn oscillation_index(
    records: &[IterationRecord],
    window: std::ops::RangeInclusive<usize>,
) -> Result<f64> {
    let series: Vec<f64> = records
        .iter()
        .filter(|r| window.contains(&r.iteration))
        .map(|r| r.image_rmse)
        .collect();
    if series.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{FilterSpec, hann_sqrt_response};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rmse_examples() {
        let a = ImageGrid::from_values(2, 2, 1.0, (0.0, 0.0), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(image_rmse(&a, &a).unwrap(), 0.0);

        let mut b = a.clone();
        for v in b.values.iter_mut() {
            *v += -0.7;
        }
        assert!((image_rmse(&a, &b).unwrap() - 0.7).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = ImageGrid::from_values(4, 4, 1.0, (0.0, 0.0), (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = ImageGrid::from_values(4, 4, 1.0, (0.0, 0.0), (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let direct = (x
            .values
            .iter()
            .zip(&y.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 16.0)
            .sqrt();
        assert!((image_rmse(&x, &y).unwrap() - direct).abs() < 1e-14);
        assert_eq!(image_rmse(&x, &y).unwrap(), image_rmse(&y, &x).unwrap());

        let z = ImageGrid::zeros(3, 4, 1.0, (0.0, 0.0));
        assert!(image_rmse(&x, &z).is_err());
    }

    /// Identity-like operator: one view, one unit-weight ray per pixel.
    fn identity_matrix(n: usize) -> SystemMatrix {
        let rows = (0..n * n).map(|p| vec![(p as u32, 1.0)]).collect();
        SystemMatrix::from_rows(1, n * n, n, n, rows).unwrap()
    }

    #[test]
    fn identity_probe_has_unit_gain() {
        let m = identity_matrix(8);
        let id = FilterSpec::identity(64).response().unwrap();
        let profile = mode_gain_profile(&m, &id, &[0, 1, 2, 3]).unwrap();
        for g in profile.gains {
            assert!((g - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighting_never_increases_gain() {
        let m = identity_matrix(8);
        let id = FilterSpec::identity(64).response().unwrap();
        let hann = hann_sqrt_response(64, 4.0).unwrap();
        let modes: Vec<usize> = (0..8).collect();
        let un = mode_gain_profile(&m, &id, &modes).unwrap();
        let w = mode_gain_profile(&m, &hann, &modes).unwrap();
        for (wg, ug) in w.gains.iter().zip(&un.gains) {
            assert!(*wg <= ug + 1e-12, "{wg} > {ug}");
        }
    }

    #[test]
    fn gain_is_amplitude_invariant() {
        let m = identity_matrix(8);
        let hann = hann_sqrt_response(64, 4.0).unwrap();
        let template = m.image_template();
        for k in [1usize, 3] {
            let mut gains = Vec::new();
            for amp in [1.0, 0.25, 40.0] {
                let mut probe = mode_image(&template, k);
                for v in probe.values.iter_mut() {
                    *v *= amp;
                }
                let weighted = apply_filter(&m.forward_project(&probe).unwrap(), &hann).unwrap();
                gains.push(weighted.norm2() / probe.norm2());
            }
            assert!((gains[0] - gains[1]).abs() < 1e-12);
            assert!((gains[0] - gains[2]).abs() < 1e-12);
        }
    }

    fn rmse_records(series: &[f64]) -> Vec<IterationRecord> {
        series
            .iter()
            .enumerate()
            .map(|(i, v)| IterationRecord {
                iteration: i + 1,
                image_rmse: *v,
                residual_hi_norm: 0.0,
                residual_lo_norm: 0.0,
                objective_value: 0.0,
                slack_hi: 0.0,
                slack_lo: 0.0,
            })
            .collect()
    }

    #[test]
    fn oscillation_index_examples() {
        let constant = rmse_records(&[0.5; 40]);
        assert_eq!(oscillation_index(&constant, 1..=40).unwrap(), 0.0);

        let linear: Vec<f64> = (0..40).map(|i| 1.0 - 0.01 * i as f64).collect();
        let linear = rmse_records(&linear);
        assert!(oscillation_index(&linear, 1..=40).unwrap() < 1e-15);

        // alternating +/- a: diffs alternate -/+ 2a, population std = 2a
        let a = 0.3;
        let alt: Vec<f64> = (0..41).map(|i| if i % 2 == 0 { a } else { -a }).collect();
        let alt = rmse_records(&alt);
        let got = oscillation_index(&alt, 1..=41).unwrap();
        assert!((got - 2.0 * a).abs() < 1e-12, "{got}");

        assert!(matches!(oscillation_index(&constant, 100..=120), Err(Error::EmptyWindow)));
    }
}
