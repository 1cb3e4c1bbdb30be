//! 23-tap polynomial interpolation for ×2ⁿ magnification.

use ndarray::Array2;

use super::mtf::reflect;
use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// One-sided taps of the symmetric half-band interpolator (offsets 0..=11).
/// Even offsets other than 0 are zero, so original samples pass unchanged.
const HALF_TAPS: [f64; 12] = [
    1.0,
    2.0 * 0.305334091185,
    0.0,
    2.0 * -0.072698593239,
    0.0,
    2.0 * 0.021809577942,
    0.0,
    2.0 * -0.005192756653,
    0.0,
    2.0 * 0.000807762146,
    0.0,
    2.0 * -0.000060081482,
];

/// The full 23-tap kernel, centered at index 11.
pub fn poly23_kernel() -> [f64; 23] {
    let mut k = [0.0; 23];
    for (i, v) in HALF_TAPS.iter().enumerate() {
        k[11 + i] = *v;
        k[11 - i] = *v;
    }
    k
}

/// ×2 along one axis: sample `m` is placed at `2m + offset`, the gaps are
/// interpolated. Borders use half-sample symmetric extension.
fn upsample2_1d(src: &[f64], offset: usize) -> Vec<f64> {
    let n = src.len();
    let mut out = vec![0.0; 2 * n];
    for (p, o) in out.iter_mut().enumerate() {
        let rel = p as isize - offset as isize;
        let mut acc = 0.0;
        // m ranges over low-res indices whose placement is within ±11 of p.
        let lo = (rel - 11).div_euclid(2);
        let hi = (rel + 11).div_euclid(2);
        for m in lo..=hi {
            let d = (rel - 2 * m).unsigned_abs();
            if d <= 11 {
                acc += HALF_TAPS[d] * src[reflect(m, n)];
            }
        }
        *o = acc;
    }
    out
}

fn upsample2(band: &Array2<f64>, offset: usize) -> Array2<f64> {
    let (h, w) = band.dim();
    let mut rows = Array2::<f64>::zeros((h, 2 * w));
    for y in 0..h {
        let line: Vec<f64> = band.row(y).to_vec();
        for (x, v) in upsample2_1d(&line, offset).into_iter().enumerate() {
            rows[[y, x]] = v;
        }
    }
    let mut out = Array2::<f64>::zeros((2 * h, 2 * w));
    for x in 0..2 * w {
        let col: Vec<f64> = rows.column(x).to_vec();
        for (y, v) in upsample2_1d(&col, offset).into_iter().enumerate() {
            out[[y, x]] = v;
        }
    }
    out
}

/// Magnifies every band by `factor` (a power of two) with the 23-tap
/// interpolator. Low-resolution pixel `k` lands on fine pixel
/// `factor·k + factor/2`, the phase [`super::decimate`] samples.
pub fn upsample_poly(img: &ImagePlane, factor: usize) -> Result<ImagePlane> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::invalid(
            "factor",
            format!("must be a power of two, got {factor}"),
        ));
    }
    let stages = factor.trailing_zeros() as usize;
    let (b, h, w) = img.dims();
    let mut out = ImagePlane::zeros(b, h * factor, w * factor);
    for c in 0..b {
        let mut band = img.band(c).to_owned();
        for s in 0..stages {
            // An odd first stage followed by even ones composes to the
            // `factor/2` phase.
            let offset = usize::from(s == 0);
            band = upsample2(&band, offset);
        }
        out.band_mut(c).assign(&band);
    }
    Ok(out)
}
