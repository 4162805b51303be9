//! Fan-beam scan geometry and the sparse projection operator.
//!
//! Coordinates: the isocenter is the origin of an `(x, z)` plane, the scan
//! arc is centered on the `+z` axis, and view angles are measured from that
//! axis (positive toward `+x`). For view angle `theta` the source sits at
//! `R_s (sin theta, cos theta)` and a flat detector lies perpendicular to
//! the source-isocenter line, centered on it, at `source_to_detector_cm`
//! from the source. One ray is cast from the source through each
//! detector-bin center.
//!
//! `SystemMatrix` stores exact ray/pixel intersection lengths (Siddon
//! traversal) in compressed rows, so `forward_project` and `back_project`
//! are exact transposes of each other. Matrix construction is parallel over
//! rays (each row is independent); products keep a fixed reduction order —
//! forward sums each row sequentially in stored traversal order, and
//! back-projection scatters rows sequentially in ascending ray order — so
//! results are bit-stable run to run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Detector length that lets the fan at every view cover the circle
/// circumscribing the square field of view.
pub fn default_detector_length(fov_side_cm: f64, source_to_isocenter_cm: f64, source_to_detector_cm: f64) -> f64 {
    fov_side_cm * std::f64::consts::SQRT_2 * source_to_detector_cm / source_to_isocenter_cm
}

/// Limited-angle fan-beam scan description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub n_views: usize,
    pub arc_span_deg: f64,
    pub source_to_isocenter_cm: f64,
    pub source_to_detector_cm: f64,
    pub n_detector_bins: usize,
    pub detector_length_cm: f64,
    pub fov_side_cm: f64,
}

impl ScanGeometry {
    /// 25 views over a 50 degree arc, source 50 cm from the isocenter and
    /// 100 cm from the detector, 1024 bins covering a 10 cm x 10 cm field
    /// of view.
    pub fn paper() -> Self {
        ScanGeometry {
            n_views: 25,
            arc_span_deg: 50.0,
            source_to_isocenter_cm: 50.0,
            source_to_detector_cm: 100.0,
            n_detector_bins: 1024,
            detector_length_cm: default_detector_length(10.0, 50.0, 100.0),
            fov_side_cm: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views < 1 {
            return Err(Error::InvalidGeometry("n_views must be >= 1".into()));
        }
        if !(self.arc_span_deg > 0.0) {
            return Err(Error::InvalidGeometry("arc_span_deg must be > 0".into()));
        }
        if !(self.source_to_isocenter_cm > 0.0)
            || !(self.source_to_detector_cm > self.source_to_isocenter_cm)
        {
            return Err(Error::InvalidGeometry(
                "need source_to_detector > source_to_isocenter > 0".into(),
            ));
        }
        if self.n_detector_bins < 1 {
            return Err(Error::InvalidGeometry("n_detector_bins must be >= 1".into()));
        }
        if !(self.detector_length_cm > 0.0) {
            return Err(Error::InvalidGeometry("detector_length_cm must be > 0".into()));
        }
        if !(self.fov_side_cm > 0.0) {
            return Err(Error::InvalidGeometry("fov_side_cm must be > 0".into()));
        }
        Ok(())
    }

    /// View angles in degrees: `n_views` equally spaced values spanning
    /// `[-arc_span/2, +arc_span/2]` inclusive, symmetric about the central
    /// axis. A single view sits at 0.
    pub fn view_angles(&self) -> Vec<f64> {
        let n = self.n_views;
        if n == 1 {
            return vec![0.0];
        }
        let half = self.arc_span_deg / 2.0;
        let step = self.arc_span_deg / (n as f64 - 1.0);
        (0..n).map(|i| -half + step * i as f64).collect()
    }

    /// Total measurement count (rays per scan).
    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_detector_bins
    }

    /// Hash of the canonical text form, recorded in file sidecars.
    pub fn sha256(&self) -> String {
        let text = toml::to_string(self).expect("geometry serializes");
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// 2D attenuation image on a square-pixel grid.
///
/// Row-major storage with row 0 at the top of the image (largest `z`);
/// columns increase with `x`. `origin_cm` is the offset of the grid center
/// from the isocenter.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub n_rows: usize,
    pub n_cols: usize,
    pub pixel_size_cm: f64,
    pub origin_cm: (f64, f64),
    pub values: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(n_rows: usize, n_cols: usize, pixel_size_cm: f64, origin_cm: (f64, f64)) -> Self {
        ImageGrid { n_rows, n_cols, pixel_size_cm, origin_cm, values: vec![0.0; n_rows * n_cols] }
    }

    pub fn from_values(
        n_rows: usize,
        n_cols: usize,
        pixel_size_cm: f64,
        origin_cm: (f64, f64),
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::ShapeMismatch(format!(
                "image values length {} != {}x{}",
                values.len(),
                n_rows,
                n_cols
            )));
        }
        Ok(ImageGrid { n_rows, n_cols, pixel_size_cm, origin_cm, values })
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.n_rows == other.n_rows && self.n_cols == other.n_cols
    }

    pub fn dot(&self, other: &ImageGrid) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm2(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-view, per-bin line-integral data, row-major `(view, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub n_views: usize,
    pub n_bins: usize,
    pub values: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_views: usize, n_bins: usize) -> Self {
        Sinogram { n_views, n_bins, values: vec![0.0; n_views * n_bins] }
    }

    pub fn from_values(n_views: usize, n_bins: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_views * n_bins {
            return Err(Error::ShapeMismatch(format!(
                "sinogram values length {} != {}x{}",
                values.len(),
                n_views,
                n_bins
            )));
        }
        Ok(Sinogram { n_views, n_bins, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &Sinogram) -> bool {
        self.n_views == other.n_views && self.n_bins == other.n_bins
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm2(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Sparse ray/pixel intersection operator in compressed-row form.
///
/// Rows are rays, indexed `view * n_bins + bin`; columns are pixels,
/// indexed `row * n_cols + col`. Entry values are intersection lengths
/// in cm. Immutable once built and safe to share across threads.
#[derive(Debug, Clone)]
pub struct SystemMatrix {
    n_views: usize,
    n_bins: usize,
    n_rows: usize,
    n_cols: usize,
    pixel_size_cm: f64,
    origin_cm: (f64, f64),
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

struct GridFrame {
    x_left: f64,
    z_top: f64,
    h: f64,
    n_rows: usize,
    n_cols: usize,
}

impl SystemMatrix {
    /// Traces every ray of `geom` through `grid` and stores the exact
    /// intersection lengths. Rays that miss the grid produce empty rows.
    pub fn build(geom: &ScanGeometry, grid: &ImageGrid) -> Result<Self> {
        geom.validate()?;
        if grid.n_rows == 0 || grid.n_cols == 0 || !(grid.pixel_size_cm > 0.0) {
            return Err(Error::DegenerateGrid(
                "system matrix needs a nonempty grid with positive pixel size".into(),
            ));
        }
        let frame = GridFrame {
            x_left: grid.origin_cm.0 - grid.n_cols as f64 * grid.pixel_size_cm / 2.0,
            z_top: grid.origin_cm.1 + grid.n_rows as f64 * grid.pixel_size_cm / 2.0,
            h: grid.pixel_size_cm,
            n_rows: grid.n_rows,
            n_cols: grid.n_cols,
        };
        let angles = geom.view_angles();
        let nb = geom.n_detector_bins;
        let bin_pitch = geom.detector_length_cm / nb as f64;
        let rs = geom.source_to_isocenter_cm;
        let sd = geom.source_to_detector_cm;

        let rows: Vec<Vec<(u32, f64)>> = (0..geom.n_rays())
            .into_par_iter()
            .map(|ray| {
                let view = ray / nb;
                let bin = ray % nb;
                let theta = angles[view].to_radians();
                let (sin_t, cos_t) = (theta.sin(), theta.cos());
                let source = (rs * sin_t, rs * cos_t);
                // detector center on the far side of the isocenter
                let center = ((rs - sd) * sin_t, (rs - sd) * cos_t);
                let t = -geom.detector_length_cm / 2.0 + (bin as f64 + 0.5) * bin_pitch;
                let end = (center.0 + t * cos_t, center.1 - t * sin_t);
                let mut row = Vec::new();
                trace_ray(source, end, &frame, &mut row);
                row
            })
            .collect();

        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(SystemMatrix {
            n_views: geom.n_views,
            n_bins: nb,
            n_rows: grid.n_rows,
            n_cols: grid.n_cols,
            pixel_size_cm: grid.pixel_size_cm,
            origin_cm: grid.origin_cm,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Builds a matrix directly from per-ray entry lists. Intended for
    /// tests and synthetic operators.
    pub fn from_rows(
        n_views: usize,
        n_bins: usize,
        n_rows: usize,
        n_cols: usize,
        rows: Vec<Vec<(u32, f64)>>,
    ) -> Result<Self> {
        if rows.len() != n_views * n_bins {
            return Err(Error::ShapeMismatch(format!(
                "expected {} rows, got {}",
                n_views * n_bins,
                rows.len()
            )));
        }
        let mut row_ptr = vec![0usize];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (c, v) in row {
                if (c as usize) >= n_rows * n_cols {
                    return Err(Error::ShapeMismatch(format!("column {c} out of range")));
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(SystemMatrix {
            n_views,
            n_bins,
            n_rows,
            n_cols,
            pixel_size_cm: 1.0,
            origin_cm: (0.0, 0.0),
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_bins
    }

    pub fn n_pixels(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn sinogram_shape(&self) -> (usize, usize) {
        (self.n_views, self.n_bins)
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    /// Zeroed image matching the grid the matrix was built on.
    pub fn image_template(&self) -> ImageGrid {
        ImageGrid::zeros(self.n_rows, self.n_cols, self.pixel_size_cm, self.origin_cm)
    }

    /// Zeroed sinogram matching the scan the matrix was built on.
    pub fn sinogram_template(&self) -> Sinogram {
        Sinogram::zeros(self.n_views, self.n_bins)
    }

    pub fn row(&self, ray: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let lo = self.row_ptr[ray];
        let hi = self.row_ptr[ray + 1];
        self.cols[lo..hi].iter().copied().zip(self.vals[lo..hi].iter().copied())
    }

    /// Exact sparse product `g = X f`. Parallel over rays; each row is
    /// summed sequentially in stored order, so the result is bit-stable.
    pub fn forward_project(&self, f: &ImageGrid) -> Result<Sinogram> {
        if f.n_rows != self.n_rows || f.n_cols != self.n_cols {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} does not match matrix grid {}x{}",
                f.n_rows, f.n_cols, self.n_rows, self.n_cols
            )));
        }
        let fv = &f.values;
        let values: Vec<f64> = (0..self.n_rays())
            .into_par_iter()
            .map(|ray| {
                let lo = self.row_ptr[ray];
                let hi = self.row_ptr[ray + 1];
                let mut acc = 0.0;
                for k in lo..hi {
                    acc += self.vals[k] * fv[self.cols[k] as usize];
                }
                acc
            })
            .collect();
        Ok(Sinogram { n_views: self.n_views, n_bins: self.n_bins, values })
    }

    /// Exact transpose product `f = X^T y`. Runs sequentially, scattering
    /// rows in ascending ray order (the documented reduction order).
    pub fn back_project(&self, y: &Sinogram) -> Result<ImageGrid> {
        if y.n_views != self.n_views || y.n_bins != self.n_bins {
            return Err(Error::ShapeMismatch(format!(
                "sinogram {}x{} does not match matrix scan {}x{}",
                y.n_views, y.n_bins, self.n_views, self.n_bins
            )));
        }
        let mut out = self.image_template();
        for ray in 0..self.n_rays() {
            let w = y.values[ray];
            if w == 0.0 {
                continue;
            }
            let lo = self.row_ptr[ray];
            let hi = self.row_ptr[ray + 1];
            for k in lo..hi {
                out.values[self.cols[k] as usize] += self.vals[k] * w;
            }
        }
        Ok(out)
    }
}

/// Exact intersection lengths of the segment `p0 -> p1` with the pixel
/// grid, appended to `out` as `(pixel index, length)` in traversal order.
fn trace_ray(p0: (f64, f64), p1: (f64, f64), frame: &GridFrame, out: &mut Vec<(u32, f64)>) {
    let dx = p1.0 - p0.0;
    let dz = p1.1 - p0.1;
    let len = (dx * dx + dz * dz).sqrt();
    if len == 0.0 {
        return;
    }
    let x_right = frame.x_left + frame.n_cols as f64 * frame.h;
    let z_bottom = frame.z_top - frame.n_rows as f64 * frame.h;

    // entry/exit parameters for the bounding box
    let mut a_in = 0.0f64;
    let mut a_out = 1.0f64;
    for (p, d, lo, hi) in [
        (p0.0, dx, frame.x_left, x_right),
        (p0.1, dz, z_bottom, frame.z_top),
    ] {
        if d == 0.0 {
            if p <= lo || p >= hi {
                return;
            }
        } else {
            let (a, b) = ((lo - p) / d, (hi - p) / d);
            a_in = a_in.max(a.min(b));
            a_out = a_out.min(a.max(b));
        }
    }
    if a_in >= a_out {
        return;
    }

    // every grid-line crossing strictly inside the clipped range
    let mut alphas = Vec::with_capacity(frame.n_cols + frame.n_rows + 4);
    alphas.push(a_in);
    alphas.push(a_out);
    if dx != 0.0 {
        for i in 0..=frame.n_cols {
            let a = (frame.x_left + i as f64 * frame.h - p0.0) / dx;
            if a > a_in && a < a_out {
                alphas.push(a);
            }
        }
    }
    if dz != 0.0 {
        for i in 0..=frame.n_rows {
            let a = (frame.z_top - i as f64 * frame.h - p0.1) / dz;
            if a > a_in && a < a_out {
                alphas.push(a);
            }
        }
    }
    alphas.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());

    for w in alphas.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = (b - a) * len;
        if seg <= 1e-12 * len.max(1.0) {
            continue;
        }
        let am = 0.5 * (a + b);
        let x = p0.0 + am * dx;
        let z = p0.1 + am * dz;
        let col = ((x - frame.x_left) / frame.h).floor();
        let row = ((frame.z_top - z) / frame.h).floor();
        if col < 0.0 || row < 0.0 {
            continue;
        }
        let (col, row) = (col as usize, row as usize);
        if col >= frame.n_cols || row >= frame.n_rows {
            continue;
        }
        out.push(((row * frame.n_cols + col) as u32, seg));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_geom(n_views: usize, n_bins: usize) -> ScanGeometry {
        ScanGeometry {
            n_views,
            arc_span_deg: 50.0,
            source_to_isocenter_cm: 50.0,
            source_to_detector_cm: 100.0,
            n_detector_bins: n_bins,
            detector_length_cm: default_detector_length(10.0, 50.0, 100.0),
            fov_side_cm: 10.0,
        }
    }

    fn grid(n: usize) -> ImageGrid {
        ImageGrid::zeros(n, n, 10.0 / n as f64, (0.0, 0.0))
    }

    fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn view_angles_paper_spacing() {
        let g = small_geom(25, 16);
        let angles = g.view_angles();
        assert_eq!(angles.len(), 25);
        let step = 50.0 / 24.0;
        for (i, a) in angles.iter().enumerate() {
            assert!((a - (-25.0 + step * i as f64)).abs() < 1e-12);
        }
        assert!((angles[0] + 25.0).abs() < 1e-12);
        assert!((angles[24] - 25.0).abs() < 1e-12);
    }

    #[test]
    fn view_angles_single_and_three() {
        let mut g = small_geom(1, 4);
        assert_eq!(g.view_angles(), vec![0.0]);
        g.n_views = 3;
        g.arc_span_deg = 90.0;
        let angles = g.view_angles();
        assert!((angles[0] + 45.0).abs() < 1e-12);
        assert!(angles[1].abs() < 1e-12);
        assert!((angles[2] - 45.0).abs() < 1e-12);
    }

    #[test]
    fn paper_measurement_count() {
        assert_eq!(ScanGeometry::paper().n_rays(), 25_600);
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let g = small_geom(3, 0);
        assert!(SystemMatrix::build(&g, &grid(8)).is_err());
        let g = small_geom(3, 8);
        let mut bad = grid(8);
        bad.pixel_size_cm = 0.0;
        assert!(SystemMatrix::build(&g, &bad).is_err());
    }

    #[test]
    fn grid_outside_all_rays_gives_empty_matrix() {
        let g = small_geom(3, 8);
        let mut far = grid(8);
        far.origin_cm = (1000.0, 0.0);
        let m = SystemMatrix::build(&g, &far).unwrap();
        assert_eq!(m.nnz(), 0);
    }

    #[test]
    fn central_ray_chord_through_square() {
        // one view at angle 0, one bin centered on the axis
        let g = small_geom(1, 1);
        let m = SystemMatrix::build(&g, &grid(32)).unwrap();
        let total: f64 = m.row(0).map(|(_, v)| v).sum();
        assert!((total - 10.0).abs() < 1e-9, "chord {total}");
    }

    /// Dense oracle: sample each ray at many points inside the grid's
    /// bounding box and accumulate per-pixel length.
    fn sampled_dense_matrix(geom: &ScanGeometry, grid: &ImageGrid, samples: usize) -> Vec<f64> {
        let n_px = grid.n_rows * grid.n_cols;
        let mut dense = vec![0.0; geom.n_rays() * n_px];
        let angles = geom.view_angles();
        let x_left = grid.origin_cm.0 - grid.n_cols as f64 * grid.pixel_size_cm / 2.0;
        let x_right = x_left + grid.n_cols as f64 * grid.pixel_size_cm;
        let z_top = grid.origin_cm.1 + grid.n_rows as f64 * grid.pixel_size_cm / 2.0;
        let z_bottom = z_top - grid.n_rows as f64 * grid.pixel_size_cm;
        let pitch = geom.detector_length_cm / geom.n_detector_bins as f64;
        for ray in 0..geom.n_rays() {
            let view = ray / geom.n_detector_bins;
            let bin = ray % geom.n_detector_bins;
            let th = angles[view].to_radians();
            let s = (geom.source_to_isocenter_cm * th.sin(), geom.source_to_isocenter_cm * th.cos());
            let c = (
                (geom.source_to_isocenter_cm - geom.source_to_detector_cm) * th.sin(),
                (geom.source_to_isocenter_cm - geom.source_to_detector_cm) * th.cos(),
            );
            let t = -geom.detector_length_cm / 2.0 + (bin as f64 + 0.5) * pitch;
            let e = (c.0 + t * th.cos(), c.1 - t * th.sin());
            let (dx, dz) = (e.0 - s.0, e.1 - s.1);
            let len = (dx * dx + dz * dz).sqrt();
            // clip to bounding box
            let mut a0 = 0.0f64;
            let mut a1 = 1.0f64;
            for (p, d, lo, hi) in [(s.0, dx, x_left, x_right), (s.1, dz, z_bottom, z_top)] {
                if d == 0.0 {
                    if p <= lo || p >= hi {
                        a1 = -1.0;
                    }
                } else {
                    let (a, b) = ((lo - p) / d, (hi - p) / d);
                    a0 = a0.max(a.min(b));
                    a1 = a1.min(a.max(b));
                }
            }
            if a0 >= a1 {
                continue;
            }
            let step = (a1 - a0) / samples as f64;
            for k in 0..samples {
                let a = a0 + (k as f64 + 0.5) * step;
                let x = s.0 + a * dx;
                let z = s.1 + a * dz;
                let col = ((x - x_left) / grid.pixel_size_cm).floor();
                let row = ((z_top - z) / grid.pixel_size_cm).floor();
                if col < 0.0 || row < 0.0 {
                    continue;
                }
                let (col, row) = (col as usize, row as usize);
                if col >= grid.n_cols || row >= grid.n_rows {
                    continue;
                }
                dense[ray * n_px + row * grid.n_cols + col] += step * len;
            }
        }
        dense
    }

    #[test]
    fn matches_dense_sampling_oracle() {
        let geom = small_geom(3, 16);
        let gr = grid(8);
        let m = SystemMatrix::build(&geom, &gr).unwrap();
        let dense = sampled_dense_matrix(&geom, &gr, 100_000);
        let n_px = gr.len();
        for ray in 0..geom.n_rays() {
            let mut row = vec![0.0; n_px];
            for (c, v) in m.row(ray) {
                row[c as usize] += v;
            }
            for p in 0..n_px {
                let d = (row[p] - dense[ray * n_px + p]).abs();
                assert!(d < 1e-3, "ray {ray} pixel {p}: {} vs {}", row[p], dense[ray * n_px + p]);
            }
        }
    }

    #[test]
    fn lengths_nonnegative_and_bounded_by_diagonal() {
        let geom = small_geom(5, 32);
        let gr = grid(16);
        let m = SystemMatrix::build(&geom, &gr).unwrap();
        let diag = 10.0 * std::f64::consts::SQRT_2 + 1e-9;
        for ray in 0..geom.n_rays() {
            let mut sum = 0.0;
            for (_, v) in m.row(ray) {
                assert!(v >= 0.0);
                sum += v;
            }
            assert!(sum <= diag, "ray {ray} sum {sum}");
        }
    }

    #[test]
    fn forward_zero_and_indicator_column() {
        let geom = small_geom(3, 16);
        let gr = grid(8);
        let m = SystemMatrix::build(&geom, &gr).unwrap();
        let g0 = m.forward_project(&gr).unwrap();
        assert!(g0.values.iter().all(|v| *v == 0.0));

        let pixel = 3 * 8 + 5;
        let mut e = gr.clone();
        e.values[pixel] = 1.0;
        let g = m.forward_project(&e).unwrap();
        for ray in 0..geom.n_rays() {
            let col: f64 = m.row(ray).filter(|(c, _)| *c as usize == pixel).map(|(_, v)| v).sum();
            assert!((g.values[ray] - col).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_matches_dense_product() {
        let geom = small_geom(5, 24);
        let gr = grid(16);
        let m = SystemMatrix::build(&geom, &gr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = ImageGrid::from_values(16, 16, gr.pixel_size_cm, (0.0, 0.0), random_values(&mut rng, 256)).unwrap();
        let g = m.forward_project(&f).unwrap();
        for ray in 0..geom.n_rays() {
            let dense: f64 = m.row(ray).map(|(c, v)| v * f.values[c as usize]).sum();
            let scale = dense.abs().max(1.0);
            assert!((g.values[ray] - dense).abs() / scale < 1e-12);
        }
    }

    #[test]
    fn forward_is_linear() {
        let geom = small_geom(4, 16);
        let gr = grid(12);
        let m = SystemMatrix::build(&geom, &gr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f1 = ImageGrid::from_values(12, 12, gr.pixel_size_cm, (0.0, 0.0), random_values(&mut rng, 144)).unwrap();
        let f2 = ImageGrid::from_values(12, 12, gr.pixel_size_cm, (0.0, 0.0), random_values(&mut rng, 144)).unwrap();
        let (a, b) = (0.7, -1.3);
        let mut comb = f1.clone();
        for i in 0..comb.len() {
            comb.values[i] = a * f1.values[i] + b * f2.values[i];
        }
        let lhs = m.forward_project(&comb).unwrap();
        let g1 = m.forward_project(&f1).unwrap();
        let g2 = m.forward_project(&f2).unwrap();
        for i in 0..lhs.len() {
            let want = a * g1.values[i] + b * g2.values[i];
            assert!((lhs.values[i] - want).abs() < 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn back_project_zero_and_single_ray_footprint() {
        let geom = small_geom(3, 16);
        let gr = grid(8);
        let m = SystemMatrix::build(&geom, &gr).unwrap();
        let y0 = Sinogram::zeros(3, 16);
        assert!(m.back_project(&y0).unwrap().values.iter().all(|v| *v == 0.0));

        let ray = 17;
        let mut y = Sinogram::zeros(3, 16);
        y.values[ray] = 1.0;
        let img = m.back_project(&y).unwrap();
        let mut want = vec![0.0; gr.len()];
        for (c, v) in m.row(ray) {
            want[c as usize] += v;
        }
        assert_eq!(img.values, want);
    }

    #[test]
    fn adjoint_identity_random_pairs() {
        let geom = small_geom(5, 48);
        let gr = grid(32);
        let m = SystemMatrix::build(&geom, &gr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let f = ImageGrid::from_values(32, 32, gr.pixel_size_cm, (0.0, 0.0), random_values(&mut rng, 1024)).unwrap();
            let y = Sinogram::from_values(5, 48, random_values(&mut rng, 5 * 48)).unwrap();
            let lhs = m.forward_project(&f).unwrap().dot(&y);
            let rhs = f.dot(&m.back_project(&y).unwrap());
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            assert!((lhs - rhs).abs() / scale < 1e-10);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let geom = small_geom(3, 16);
        let m = SystemMatrix::build(&geom, &grid(8)).unwrap();
        assert!(m.forward_project(&grid(9)).is_err());
        assert!(m.back_project(&Sinogram::zeros(3, 17)).is_err());
    }
}
