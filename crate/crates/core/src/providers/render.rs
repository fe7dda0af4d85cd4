use std::io::Cursor;

use image::{Rgb, RgbImage};

use super::{ImagePart, ProviderError};

const RED: Rgb<u8> = Rgb([255, 0, 0]);

/// Draws a red ring at each normalized gaze point. `radius_frac` is the
/// radius as a fraction of image width.
pub fn draw_gaze_circles(img: &mut RgbImage, centers: &[(f64, f64)], radius_frac: f64) {
    let (w, h) = img.dimensions();
    let r = (radius_frac * w as f64).max(1.0);
    let thickness = (r / 4.0).max(1.0);
    for &(cx, cy) in centers {
        let px = cx * (w.saturating_sub(1)) as f64;
        let py = cy * (h.saturating_sub(1)) as f64;
        let x0 = (px - r - thickness).floor().max(0.0) as u32;
        let x1 = ((px + r + thickness).ceil() as u32).min(w.saturating_sub(1));
        let y0 = (py - r - thickness).floor().max(0.0) as u32;
        let y1 = ((py + r + thickness).ceil() as u32).min(h.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f64 - px).powi(2) + (y as f64 - py).powi(2)).sqrt();
                if (d - r).abs() <= thickness / 2.0 {
                    img.put_pixel(x, y, RED);
                }
            }
        }
    }
}

/// Loads the frame behind `part`, draws its gaze overlay when requested,
/// and returns JPEG bytes.
pub fn render_overlay_jpeg(part: &ImagePart, radius_frac: f64) -> Result<Vec<u8>, ProviderError> {
    let mut img = image::open(&part.path)
        .map_err(|e| ProviderError::InvalidRequest(format!("{}: {e}", part.path.display())))?
        .to_rgb8();
    if part.render_overlay {
        draw_gaze_circles(&mut img, &part.gaze_circles, radius_frac);
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Jpeg)
        .map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
    Ok(out.into_inner())
}
