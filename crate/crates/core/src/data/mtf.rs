//! MTF-matched Gaussian low-pass filtering and decimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Nyquist-frequency MTF gains of a sensor pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtfProfile {
    /// Per-band MS gain at the MS Nyquist frequency.
    pub nyquist_gains: Vec<f64>,
    /// PAN gain at the MS Nyquist frequency.
    pub pan_gain: f64,
    /// Odd tap count of the separable filter.
    pub kernel_size: usize,
}

impl MtfProfile {
    pub fn wv3() -> Self {
        Self {
            nyquist_gains: vec![0.325, 0.355, 0.360, 0.350, 0.365, 0.360, 0.335, 0.315],
            pan_gain: 0.15,
            kernel_size: 41,
        }
    }

    pub fn qb() -> Self {
        Self {
            nyquist_gains: vec![0.34, 0.32, 0.30, 0.22],
            pan_gain: 0.15,
            kernel_size: 41,
        }
    }

    pub fn gf2() -> Self {
        Self::qb()
    }

    /// Same gain for every band and for PAN.
    pub fn uniform(bands: usize, gain: f64) -> Self {
        Self {
            nyquist_gains: vec![gain; bands],
            pan_gain: gain,
            kernel_size: 41,
        }
    }

    /// Default profile for a band count: 8 → WV3, otherwise QB-like.
    pub fn for_bands(bands: usize) -> Self {
        match bands {
            8 => Self::wv3(),
            4 => Self::qb(),
            n => Self::uniform(n, 0.3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.nyquist_gains.iter().chain(std::iter::once(&self.pan_gain));
        if let Some(g) = all.into_iter().find(|g| !(**g > 0.0 && **g < 1.0)) {
            return Err(Error::invalid("mtf.gain", format!("{g} outside (0, 1)")));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size < 3 {
            return Err(Error::invalid(
                "mtf.kernel_size",
                format!("need an odd size >= 3, got {}", self.kernel_size),
            ));
        }
        Ok(())
    }

    /// Gains for an image with `bands` bands: the MS gains when the count
    /// matches, the PAN gain for single-band input.
    pub fn gains_for(&self, bands: usize) -> Result<Vec<f64>> {
        if bands == self.nyquist_gains.len() {
            Ok(self.nyquist_gains.clone())
        } else if bands == 1 {
            Ok(vec![self.pan_gain])
        } else {
            Err(Error::invalid(
                "mtf.nyquist_gains",
                format!(
                    "profile has {} gains, image has {bands} bands",
                    self.nyquist_gains.len()
                ),
            ))
        }
    }
}

/// Gaussian standard deviation (in fine-grid pixels) whose response at the
/// coarse-grid Nyquist frequency `1/(2·factor)` equals `gain`.
pub fn gaussian_sigma(gain: f64, factor: usize) -> f64 {
    factor as f64 * (-2.0 * gain.ln()).sqrt() / std::f64::consts::PI
}

/// Sampled, unit-DC Gaussian taps.
pub fn gaussian_kernel(sigma: f64, taps: usize) -> Vec<f64> {
    let half = (taps / 2) as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Half-sample symmetric index extension (`-1 → 0`, `n → n-1`).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable filtering of one band with symmetric borders.
pub(crate) fn filter_separable(
    src: &ndarray::ArrayView2<'_, f64>,
    kernel: &[f64],
) -> ndarray::Array2<f64> {
    let (h, w) = src.dim();
    let half = (kernel.len() / 2) as isize;
    let mut rows = ndarray::Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * src[[y, reflect(x as isize + j as isize - half, w)]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = ndarray::Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * rows[[reflect(y as isize + j as isize - half, h), x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Filters every band with its MTF-matched Gaussian, without decimation.
pub fn mtf_filter(img: &ImagePlane, profile: &MtfProfile, factor: usize) -> Result<ImagePlane> {
    profile.validate()?;
    let gains = profile.gains_for(img.bands())?;
    let mut out = ImagePlane::zeros(img.bands(), img.height(), img.width());
    for (b, g) in gains.iter().enumerate() {
        let kernel = gaussian_kernel(gaussian_sigma(*g, factor), profile.kernel_size);
        let filtered = filter_separable(&img.band(b), &kernel);
        out.band_mut(b).assign(&filtered);
    }
    Ok(out)
}

/// Sampling phase used by decimation; matches the sample placement of
/// [`super::upsample_poly`].
pub fn decimation_phase(factor: usize) -> usize {
    factor / 2
}

/// Keeps every `factor`-th pixel starting at [`decimation_phase`].
pub fn decimate(img: &ImagePlane, factor: usize) -> Result<ImagePlane> {
    if factor == 0 || img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(Error::invalid(
            "factor",
            format!(
                "{}x{} not divisible by {factor}",
                img.height(),
                img.width()
            ),
        ));
    }
    let p = decimation_phase(factor);
    let (b, h, w) = img.dims();
    Ok(ImagePlane::from_fn(b, h / factor, w / factor, |(c, y, x)| {
        img.get(c, y * factor + p, x * factor + p)
    }))
}

/// MTF low-pass followed by decimation by `factor`.
pub fn mtf_downsample(img: &ImagePlane, profile: &MtfProfile, factor: usize) -> Result<ImagePlane> {
    if factor == 0 || img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(Error::invalid(
            "factor",
            format!(
                "{}x{} not divisible by {factor}",
                img.height(),
                img.width()
            ),
        ));
    }
    decimate(&mtf_filter(img, profile, factor)?, factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// DTFT of a symmetric kernel at frequency `f` (cycles per sample).
    fn response(kernel: &[f64], f: f64) -> f64 {
        let half = (kernel.len() / 2) as isize;
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * (2.0 * std::f64::consts::PI * f * (i as isize - half) as f64).cos())
            .sum()
    }

    #[test]
    fn kernel_recovers_nyquist_gain() {
        for &g in &[0.11, 0.15, 0.22, 0.29, 0.3, 0.35] {
            let k = gaussian_kernel(gaussian_sigma(g, 4), 41);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let r = response(&k, 1.0 / 8.0);
            assert!((r - g).abs() < 1e-3, "gain {g}: response {r}");
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImagePlane::filled(4, 64, 64, 0.37);
        let out = mtf_downsample(&img, &MtfProfile::qb(), 4).unwrap();
        assert_eq!(out.dims(), (4, 16, 16));
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn pan_uses_pan_gain() {
        let p = MtfProfile::wv3();
        assert_eq!(p.gains_for(1).unwrap(), vec![0.15]);
        assert_eq!(p.gains_for(8).unwrap().len(), 8);
        assert!(p.gains_for(4).is_err());
    }

    #[test]
    fn indivisible_dims_rejected() {
        let img = ImagePlane::zeros(1, 30, 32);
        assert!(mtf_downsample(&img, &MtfProfile::qb(), 4).is_err());
    }

    #[test]
    fn reflect_is_half_sample_symmetric() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }
}
