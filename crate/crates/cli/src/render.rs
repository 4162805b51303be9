//! 8-bit grayscale rendering of images and difference maps.

use std::path::Path;

use lartk::error::{Error, Result};
use lartk::geometry::ImageGrid;

/// Clamps values to `[window.0, window.1]` and maps them linearly to
/// 0..=255.
pub fn to_gray8(image: &ImageGrid, window: (f64, f64)) -> Vec<u8> {
    let (lo, hi) = window;
    let span = hi - lo;
    image
        .values
        .iter()
        .map(|v| {
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            (t * 255.0).round() as u8
        })
        .collect()
}

/// Renders `image` to an 8-bit grayscale PNG with the given display window.
pub fn write_png(path: &Path, image: &ImageGrid, window: (f64, f64)) -> Result<()> {
    let pixels = to_gray8(image, window);
    let buf = image::GrayImage::from_raw(image.n_cols as u32, image.n_rows as u32, pixels)
        .ok_or_else(|| Error::ShapeMismatch("pixel buffer does not match image shape".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Sidecar(format!("write png {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_mapping() {
        let img = ImageGrid::from_values(
            1,
            5,
            1.0,
            (0.0, 0.0),
            vec![-1.0, -0.75, 0.0, 0.75, 2.0],
        )
        .unwrap();
        let px = to_gray8(&img, (-0.75, 0.75));
        assert_eq!(px, vec![0, 0, 128, 255, 255]);
    }
}
