//! Finite-difference operators with exact adjoints, and the directional-TV
//! value they induce.
//!
//! The default stencil is a forward difference with zero at the trailing
//! boundary, which keeps each operator norm at most 2 and makes the adjoint
//! the matching negative divergence. A periodic variant is available behind
//! [`Boundary`] for sensitivity checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    TrailingZero,
    Periodic,
}

/// One directional difference field, shaped like the image it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffField {
    pub n_rows: usize,
    pub n_cols: usize,
    pub pixel_size_cm: f64,
    pub origin_cm: (f64, f64),
    pub values: Vec<f64>,
}

impl DiffField {
    pub fn zeros_like(f: &ImageGrid) -> Self {
        DiffField {
            n_rows: f.n_rows,
            n_cols: f.n_cols,
            pixel_size_cm: f.pixel_size_cm,
            origin_cm: f.origin_cm,
            values: vec![0.0; f.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &DiffField) -> bool {
        self.n_rows == other.n_rows && self.n_cols == other.n_cols
    }

    pub fn dot(&self, other: &DiffField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn check_grid(f: &ImageGrid) -> Result<()> {
    if f.n_rows < 2 || f.n_cols < 2 {
        return Err(Error::DegenerateGrid(format!(
            "difference operators need at least 2x2, got {}x{}",
            f.n_rows, f.n_cols
        )));
    }
    Ok(())
}

/// Forward difference along `x` (columns): `f[i, j+1] - f[i, j]`.
pub fn grad_x(f: &ImageGrid, boundary: Boundary) -> Result<DiffField> {
    check_grid(f)?;
    let mut out = DiffField::zeros_like(f);
    let (nr, nc) = (f.n_rows, f.n_cols);
    for i in 0..nr {
        let row = i * nc;
        for j in 0..nc - 1 {
            out.values[row + j] = f.values[row + j + 1] - f.values[row + j];
        }
        match boundary {
            Boundary::TrailingZero => {}
            Boundary::Periodic => {
                out.values[row + nc - 1] = f.values[row] - f.values[row + nc - 1];
            }
        }
    }
    Ok(out)
}

/// Forward difference along `z` (rows): `f[i+1, j] - f[i, j]`.
pub fn grad_z(f: &ImageGrid, boundary: Boundary) -> Result<DiffField> {
    check_grid(f)?;
    let mut out = DiffField::zeros_like(f);
    let (nr, nc) = (f.n_rows, f.n_cols);
    for i in 0..nr - 1 {
        for j in 0..nc {
            out.values[i * nc + j] = f.values[(i + 1) * nc + j] - f.values[i * nc + j];
        }
    }
    if boundary == Boundary::Periodic {
        for j in 0..nc {
            out.values[(nr - 1) * nc + j] = f.values[j] - f.values[(nr - 1) * nc + j];
        }
    }
    Ok(out)
}

/// Exact transpose of [`grad_x`]: negative divergence with the matching
/// boundary rule.
pub fn grad_adjoint_x(p: &DiffField, boundary: Boundary) -> Result<ImageGrid> {
    let mut out = ImageGrid::zeros(p.n_rows, p.n_cols, p.pixel_size_cm, p.origin_cm);
    let (nr, nc) = (p.n_rows, p.n_cols);
    if nr < 2 || nc < 2 {
        return Err(Error::DegenerateGrid("adjoint needs at least 2x2".into()));
    }
    for i in 0..nr {
        let row = i * nc;
        match boundary {
            Boundary::TrailingZero => {
                for j in 0..nc {
                    let mut v = 0.0;
                    if j >= 1 {
                        v += p.values[row + j - 1];
                    }
                    if j < nc - 1 {
                        v -= p.values[row + j];
                    }
                    out.values[row + j] = v;
                }
            }
            Boundary::Periodic => {
                for j in 0..nc {
                    let prev = row + (j + nc - 1) % nc;
                    out.values[row + j] = p.values[prev] - p.values[row + j];
                }
            }
        }
    }
    Ok(out)
}

/// Exact transpose of [`grad_z`].
pub fn grad_adjoint_z(p: &DiffField, boundary: Boundary) -> Result<ImageGrid> {
    let mut out = ImageGrid::zeros(p.n_rows, p.n_cols, p.pixel_size_cm, p.origin_cm);
    let (nr, nc) = (p.n_rows, p.n_cols);
    if nr < 2 || nc < 2 {
        return Err(Error::DegenerateGrid("adjoint needs at least 2x2".into()));
    }
    match boundary {
        Boundary::TrailingZero => {
            for i in 0..nr {
                for j in 0..nc {
                    let mut v = 0.0;
                    if i >= 1 {
                        v += p.values[(i - 1) * nc + j];
                    }
                    if i < nr - 1 {
                        v -= p.values[i * nc + j];
                    }
                    out.values[i * nc + j] = v;
                }
            }
        }
        Boundary::Periodic => {
            for i in 0..nr {
                let prev = (i + nr - 1) % nr;
                for j in 0..nc {
                    out.values[i * nc + j] = p.values[prev * nc + j] - p.values[i * nc + j];
                }
            }
        }
    }
    Ok(out)
}

/// Directional-TV value
/// `alpha_x ||dx f||_1 + alpha_z ||dz f||_1 + beta ||f||_1`.
pub fn dtv_value(
    f: &ImageGrid,
    alpha_x: f64,
    alpha_z: f64,
    beta: f64,
    boundary: Boundary,
) -> Result<f64> {
    let gx = grad_x(f, boundary)?;
    let gz = grad_z(f, boundary)?;
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    Ok(alpha_x * l1(&gx.values) + alpha_z * l1(&gz.values) + beta * l1(&f.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> ImageGrid {
        ImageGrid::from_values(n, n, 1.0, (0.0, 0.0), (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let f = ImageGrid::from_values(6, 6, 1.0, (0.0, 0.0), vec![3.7; 36]).unwrap();
        for b in [Boundary::TrailingZero, Boundary::Periodic] {
            assert!(grad_x(&f, b).unwrap().values.iter().all(|v| *v == 0.0));
            assert!(grad_z(&f, b).unwrap().values.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn step_edge_gradient() {
        // columns 0..3 are 0, columns 3..6 are h
        let h = 2.5;
        let mut f = ImageGrid::zeros(6, 6, 1.0, (0.0, 0.0));
        for i in 0..6 {
            for j in 3..6 {
                f.values[i * 6 + j] = h;
            }
        }
        let gx = grad_x(&f, Boundary::TrailingZero).unwrap();
        let gz = grad_z(&f, Boundary::TrailingZero).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if j == 2 { h } else { 0.0 };
                assert_eq!(gx.values[i * 6 + j], want);
            }
        }
        assert!(gz.values.iter().all(|v| *v == 0.0));
    }

    /// Dense matrix form of the forward-difference operator.
    fn dense_grad_x(n: usize) -> Vec<f64> {
        let mut m = vec![0.0; n * n * n * n];
        for i in 0..n {
            for j in 0..n - 1 {
                let r = i * n + j;
                m[r * n * n + r + 1] = 1.0;
                m[r * n * n + r] = -1.0;
            }
        }
        m
    }

    #[test]
    fn matches_dense_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_grid(&mut rng, 16);
        let gx = grad_x(&f, Boundary::TrailingZero).unwrap();
        let dense = dense_grad_x(16);
        for r in 0..256 {
            let want: f64 = (0..256).map(|c| dense[r * 256 + c] * f.values[c]).sum();
            assert_eq!(gx.values[r], want);
        }
    }

    #[test]
    fn adjoint_identity_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for b in [Boundary::TrailingZero, Boundary::Periodic] {
            for _ in 0..50 {
                let f = random_grid(&mut rng, 9);
                let mut p = DiffField::zeros_like(&f);
                for v in p.values.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                let lhs = grad_x(&f, b).unwrap().dot(&p);
                let rhs: f64 = f
                    .values
                    .iter()
                    .zip(&grad_adjoint_x(&p, b).unwrap().values)
                    .map(|(a, c)| a * c)
                    .sum();
                assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));

                let lhs = grad_z(&f, b).unwrap().dot(&p);
                let rhs: f64 = f
                    .values
                    .iter()
                    .zip(&grad_adjoint_z(&p, b).unwrap().values)
                    .map(|(a, c)| a * c)
                    .sum();
                assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn adjoint_zero_and_dipole() {
        let f = ImageGrid::zeros(5, 5, 1.0, (0.0, 0.0));
        let p = DiffField::zeros_like(&f);
        assert!(grad_adjoint_x(&p, Boundary::TrailingZero).unwrap().values.iter().all(|v| *v == 0.0));

        let mut p = DiffField::zeros_like(&f);
        p.values[2 * 5 + 1] = 4.0;
        let img = grad_adjoint_x(&p, Boundary::TrailingZero).unwrap();
        assert_eq!(img.values[2 * 5 + 1], -4.0);
        assert_eq!(img.values[2 * 5 + 2], 4.0);
        assert_eq!(img.values.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn dtv_examples() {
        let f = ImageGrid::zeros(8, 8, 1.0, (0.0, 0.0));
        assert_eq!(dtv_value(&f, 1.0, 1.0, 1.0, Boundary::TrailingZero).unwrap(), 0.0);

        // isolated interior pixel of value v
        let v = 1.3;
        let mut f = ImageGrid::zeros(8, 8, 1.0, (0.0, 0.0));
        f.values[3 * 8 + 4] = v;
        let (ax, az, b) = (0.7, 0.4, 0.2);
        let want = b * v + ax * 2.0 * v + az * 2.0 * v;
        let got = dtv_value(&f, ax, az, b, Boundary::TrailingZero).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn dtv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_grid(&mut rng, 8);
        let (ax, az, b) = (1.9, 0.8, 0.3);
        let mut want = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                if j < 7 {
                    want += ax * (f.values[i * 8 + j + 1] - f.values[i * 8 + j]).abs();
                }
                if i < 7 {
                    want += az * (f.values[(i + 1) * 8 + j] - f.values[i * 8 + j]).abs();
                }
                want += b * f.values[i * 8 + j].abs();
            }
        }
        let got = dtv_value(&f, ax, az, b, Boundary::TrailingZero).unwrap();
        assert!((got - want).abs() < 1e-12 * want);
    }

    #[test]
    fn dtv_absolutely_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = random_grid(&mut rng, 8);
        let base = dtv_value(&f, 1.1, 0.9, 0.5, Boundary::TrailingZero).unwrap();
        for t in [-2.0, 0.5, 3.25] {
            let mut g = f.clone();
            for v in g.values.iter_mut() {
                *v *= t;
            }
            let got = dtv_value(&g, 1.1, 0.9, 0.5, Boundary::TrailingZero).unwrap();
            assert!((got - t.abs() * base).abs() < 1e-12 * base.max(1.0));
        }
    }

    #[test]
    fn degenerate_grid_rejected() {
        let f = ImageGrid::zeros(1, 8, 1.0, (0.0, 0.0));
        assert!(grad_x(&f, Boundary::TrailingZero).is_err());
        assert!(grad_z(&f, Boundary::TrailingZero).is_err());
    }
}
