//! File formats: flat little-endian `f32` binaries with structured-text
//! (TOML) sidecars, plus the CSV emitters used by the experiment harness.
//!
//! Every binary artifact `X` gets a sidecar `X.meta` carrying its shape,
//! pixel geometry, a SHA-256 of the payload bytes, and any caller-supplied
//! provenance (config echo, geometry hash, generator name). Readers verify
//! the content hash. Nothing in a sidecar depends on wall-clock time, so
//! repeated runs produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::filters::FilterResponse;
use crate::geometry::{ImageGrid, Sinogram};
use crate::metrics::ModeGainProfile;
use crate::phantom::TissueLabel;
use crate::solver::IterationRecord;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    crate::geometry::hex_string(&h.finalize())
}

/// Sidecar metadata for one binary artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: String,
    pub dtype: String,
    /// `[n_rows, n_cols]` for images, `[n_views, n_bins]` for sinograms.
    pub shape: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_size_cm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_cm: Option<[f64; 2]>,
    pub content_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    /// Free-form provenance: config echo, spec echo, step sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<toml::Table>,
}

pub fn sidecar_path(binary_path: &Path) -> PathBuf {
    let mut os = binary_path.as_os_str().to_os_string();
    os.push(".meta");
    PathBuf::from(os)
}

pub fn write_sidecar(binary_path: &Path, sidecar: &Sidecar) -> Result<()> {
    let text = toml::to_string(sidecar)
        .map_err(|e| Error::Sidecar(format!("serialize sidecar: {e}")))?;
    fs::write(sidecar_path(binary_path), text)?;
    Ok(())
}

pub fn read_sidecar(binary_path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(sidecar_path(binary_path))?;
    toml::from_str(&text).map_err(|e| Error::Sidecar(format!("parse sidecar: {e}")))
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    bytes
}

fn read_f32_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Sidecar(format!("payload length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes `image` as flat little-endian `f32` plus its sidecar.
pub fn write_image(
    path: &Path,
    image: &ImageGrid,
    kind: &str,
    geometry_sha256: Option<String>,
    extra: Option<toml::Table>,
) -> Result<()> {
    let bytes = f32_bytes(&image.values);
    let sidecar = Sidecar {
        kind: kind.to_string(),
        dtype: "f32le".into(),
        shape: [image.n_rows, image.n_cols],
        pixel_size_cm: Some(image.pixel_size_cm),
        origin_cm: Some([image.origin_cm.0, image.origin_cm.1]),
        content_sha256: sha256_hex(&bytes),
        geometry_sha256,
        rng: None,
        extra,
    };
    fs::write(path, &bytes)?;
    write_sidecar(path, &sidecar)
}

/// Reads an image binary back through its sidecar, verifying the content
/// hash.
pub fn read_image(path: &Path) -> Result<(ImageGrid, Sidecar)> {
    let sidecar = read_sidecar(path)?;
    let bytes = fs::read(path)?;
    if sha256_hex(&bytes) != sidecar.content_sha256 {
        return Err(Error::Sidecar(format!("content hash mismatch for {}", path.display())));
    }
    let values = read_f32_bytes(&bytes)?;
    let [n_rows, n_cols] = sidecar.shape;
    let image = ImageGrid::from_values(
        n_rows,
        n_cols,
        sidecar.pixel_size_cm.unwrap_or(1.0),
        sidecar.origin_cm.map(|o| (o[0], o[1])).unwrap_or((0.0, 0.0)),
        values,
    )?;
    Ok((image, sidecar))
}

pub fn write_sinogram(
    path: &Path,
    sino: &Sinogram,
    geometry_sha256: Option<String>,
    extra: Option<toml::Table>,
) -> Result<()> {
    let bytes = f32_bytes(&sino.values);
    let sidecar = Sidecar {
        kind: "sinogram".into(),
        dtype: "f32le".into(),
        shape: [sino.n_views, sino.n_bins],
        pixel_size_cm: None,
        origin_cm: None,
        content_sha256: sha256_hex(&bytes),
        geometry_sha256,
        rng: None,
        extra,
    };
    fs::write(path, &bytes)?;
    write_sidecar(path, &sidecar)
}

pub fn read_sinogram(path: &Path) -> Result<(Sinogram, Sidecar)> {
    let sidecar = read_sidecar(path)?;
    let bytes = fs::read(path)?;
    if sha256_hex(&bytes) != sidecar.content_sha256 {
        return Err(Error::Sidecar(format!("content hash mismatch for {}", path.display())));
    }
    let values = read_f32_bytes(&bytes)?;
    let [n_views, n_bins] = sidecar.shape;
    Ok((Sinogram::from_values(n_views, n_bins, values)?, sidecar))
}

/// Writes the tissue label map as one byte per pixel plus its sidecar.
pub fn write_labels(
    path: &Path,
    labels: &[TissueLabel],
    n_rows: usize,
    n_cols: usize,
    rng: Option<String>,
    extra: Option<toml::Table>,
) -> Result<()> {
    if labels.len() != n_rows * n_cols {
        return Err(Error::ShapeMismatch("label map does not match shape".into()));
    }
    let bytes: Vec<u8> = labels.iter().map(|l| l.as_u8()).collect();
    let sidecar = Sidecar {
        kind: "labels".into(),
        dtype: "u8".into(),
        shape: [n_rows, n_cols],
        pixel_size_cm: None,
        origin_cm: None,
        content_sha256: sha256_hex(&bytes),
        geometry_sha256: None,
        rng,
        extra,
    };
    fs::write(path, &bytes)?;
    write_sidecar(path, &sidecar)
}

/// Canonical float formatting for CSV cells (shortest round-trip form).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes a CSV with the given header and pre-formatted rows.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Like [`write_csv`] but also records a provenance sidecar with the
/// content hash and any extra metadata.
pub fn write_csv_with_sidecar(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
    extra: Option<toml::Table>,
) -> Result<()> {
    write_csv(path, header, rows)?;
    let bytes = fs::read(path)?;
    let sidecar = Sidecar {
        kind: "csv".into(),
        dtype: "text/csv".into(),
        shape: [rows.len(), header.len()],
        pixel_size_cm: None,
        origin_cm: None,
        content_sha256: sha256_hex(&bytes),
        geometry_sha256: None,
        rng: None,
        extra,
    };
    write_sidecar(path, &sidecar)
}

/// Telemetry schema: iteration, image_rmse, residual_hi_norm,
/// residual_lo_norm, objective_value, slack_hi, slack_lo.
pub fn write_telemetry_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                fmt_f64(r.image_rmse),
                fmt_f64(r.residual_hi_norm),
                fmt_f64(r.residual_lo_norm),
                fmt_f64(r.objective_value),
                fmt_f64(r.slack_hi),
                fmt_f64(r.slack_lo),
            ]
        })
        .collect();
    write_csv(
        path,
        &[
            "iteration",
            "image_rmse",
            "residual_hi_norm",
            "residual_lo_norm",
            "objective_value",
            "slack_hi",
            "slack_lo",
        ],
        &rows,
    )
}

/// Filter response as `(frequency index, gain)` rows for plotting/audit.
pub fn write_filter_response_csv(path: &Path, response: &FilterResponse) -> Result<()> {
    let rows: Vec<Vec<String>> = response
        .gains()
        .iter()
        .enumerate()
        .map(|(k, g)| vec![k.to_string(), fmt_f64(response.frequency(k)), fmt_f64(*g)])
        .collect();
    write_csv(path, &["index", "frequency_cycles_per_sample", "gain"], &rows)
}

pub fn write_mode_gain_csv(path: &Path, profile: &ModeGainProfile) -> Result<()> {
    let rows: Vec<Vec<String>> = profile
        .modes
        .iter()
        .zip(&profile.gains)
        .map(|(m, g)| vec![m.to_string(), fmt_f64(*g)])
        .collect();
    write_csv(path, &["mode", "gain"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{PhantomSpec, make_phantom};

    #[test]
    fn image_roundtrip_with_hash_check() {
        let dir = std::env::temp_dir().join("lartk_io_test_image");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("img.f32");
        let img = ImageGrid::from_values(
            3,
            4,
            0.25,
            (0.5, -0.5),
            (0..12).map(|i| i as f64 * 0.5).collect(),
        )
        .unwrap();
        write_image(&path, &img, "image", Some("abc".into()), None).unwrap();
        let (back, sidecar) = read_image(&path).unwrap();
        assert_eq!(back.n_rows, 3);
        assert_eq!(back.n_cols, 4);
        assert_eq!(back.pixel_size_cm, 0.25);
        assert_eq!(back.values, img.values); // exact: values representable in f32
        assert_eq!(sidecar.geometry_sha256.as_deref(), Some("abc"));

        // corrupt payload -> hash mismatch
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(read_image(&path).is_err());
    }

    #[test]
    fn sinogram_roundtrip() {
        let dir = std::env::temp_dir().join("lartk_io_test_sino");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.f32");
        let s = Sinogram::from_values(2, 3, vec![0.0, 1.0, -2.0, 0.5, 0.25, 8.0]).unwrap();
        write_sinogram(&path, &s, None, None).unwrap();
        let (back, _) = read_sinogram(&path).unwrap();
        assert_eq!(back.values, s.values);
    }

    #[test]
    fn labels_and_deterministic_bytes() {
        let dir = std::env::temp_dir().join("lartk_io_test_labels");
        fs::create_dir_all(&dir).unwrap();
        let spec = PhantomSpec { n_pixels: 16, ..PhantomSpec::default() };
        let ph = make_phantom(&spec).unwrap();
        let a = dir.join("a.u8");
        let b = dir.join("b.u8");
        write_labels(&a, &ph.labels, 16, 16, Some("chacha8".into()), None).unwrap();
        write_labels(&b, &ph.labels, 16, 16, Some("chacha8".into()), None).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(
            fs::read_to_string(sidecar_path(&a)).unwrap(),
            fs::read_to_string(sidecar_path(&b)).unwrap()
        );
    }

    #[test]
    fn csv_formatting_is_stable() {
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!(fmt_f64(1.0), "1");
    }
}
