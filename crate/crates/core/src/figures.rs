//! Raster figures: RGB previews of multiband images and absolute-error heat
//! maps.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Bands shown as (R, G, B): 4,2,1 for 8-band sensors, 2,1,0 for 4-band.
pub fn rgb_bands(bands: usize) -> Result<[usize; 3]> {
    match bands {
        8 => Ok([4, 2, 1]),
        4 => Ok([2, 1, 0]),
        n => Err(Error::invalid("bands", format!("no RGB triplet for {n} bands"))),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-channel linear stretch between the 2nd and 98th percentiles.
pub fn rgb_preview(img: &ImagePlane) -> Result<RgbImage> {
    let idx = rgb_bands(img.bands())?;
    let (h, w) = (img.height(), img.width());
    let mut ranges = [(0.0, 1.0); 3];
    for (c, &b) in idx.iter().enumerate() {
        let mut v: Vec<f64> = img.band(b).iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let lo = v[(v.len() - 1) * 2 / 100];
        let hi = v[(v.len() - 1) * 98 / 100];
        ranges[c] = (lo, if hi > lo { hi } else { lo + 1.0 });
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            let (lo, hi) = ranges[c];
            to_u8((img.get(idx[c], y as usize, x as usize) - lo) / (hi - lo))
        };
        Rgb([px(0), px(1), px(2)])
    }))
}

/// Black → red → yellow → white ramp over `[0, 1]`.
pub fn heat_color(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0) * 3.0;
    Rgb([to_u8(v), to_u8(v - 1.0), to_u8(v - 2.0)])
}

/// Band-averaged absolute error `mean_b |pred − gt|`, colored on a fixed
/// scale where `vmax` maps to white.
pub fn error_map(pred: &ImagePlane, gt: &ImagePlane, vmax: f64) -> Result<RgbImage> {
    pred.ensure_same_shape("error_map", gt)?;
    if !(vmax > 0.0) {
        return Err(Error::invalid("vmax", format!("must be positive, got {vmax}")));
    }
    let (b, h, w) = gt.dims();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let e = (0..b).map(|k| (pred.get(k, y, x) - gt.get(k, y, x)).abs()).sum::<f64>() / b as f64;
        heat_color(e / vmax)
    }))
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    img.save_with_format(path.as_ref(), image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_follow_band_count() {
        assert_eq!(rgb_bands(8).unwrap(), [4, 2, 1]);
        assert_eq!(rgb_bands(4).unwrap(), [2, 1, 0]);
        assert!(rgb_bands(3).is_err());
    }

    #[test]
    fn preview_picks_the_right_bands() {
        // Band 2 (red for 4-band data) rises along x while the others fall.
        let img = ImagePlane::from_fn(4, 2, 5, |(b, _, x)| if b == 2 { x as f64 } else { -(x as f64) });
        let rgb = rgb_preview(&img).unwrap();
        assert_eq!(rgb.dimensions(), (5, 2));
        let p = rgb.get_pixel(4, 0);
        assert_eq!(p[0], 255);
        assert_eq!(p[1], 0);
    }

    #[test]
    fn error_map_is_black_on_identity_and_white_at_vmax() {
        let a = ImagePlane::filled(4, 3, 3, 0.5);
        let m = error_map(&a, &a, 0.1).unwrap();
        assert!(m.pixels().all(|p| p.0 == [0, 0, 0]));
        let b = a.map(|v| v + 0.1);
        let m = error_map(&b, &a, 0.1).unwrap();
        assert!(m.pixels().all(|p| p.0 == [255, 255, 255]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.png");
        save_png(&m, &path).unwrap();
        assert_eq!(image::open(&path).unwrap().to_rgb8(), m);
    }
}
