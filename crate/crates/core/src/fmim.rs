//! Frequency modulation between branches: a Fourier high-pass of spatial
//! features injected into channel-rebalanced spectral features.

use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};
use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radial mask in the centered spectrum: frequencies whose radius (as a
/// fraction of Nyquist) is below `threshold_radius` are multiplied by
/// `low_gain`; all others pass unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierMask {
    pub threshold_radius: f64,
    pub low_gain: f64,
}

impl Default for FourierMask {
    fn default() -> Self {
        Self {
            threshold_radius: 0.25,
            low_gain: 0.0,
        }
    }
}

impl FourierMask {
    pub fn identity() -> Self {
        Self {
            threshold_radius: 0.0,
            low_gain: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_radius >= 0.0 && self.threshold_radius.is_finite()) {
            return Err(Error::invalid("threshold_radius", format!("{} must be finite and >= 0", self.threshold_radius)));
        }
        if !self.low_gain.is_finite() {
            return Err(Error::invalid("low_gain", "must be finite"));
        }
        Ok(())
    }

    /// Signed frequency of FFT bin `k` of an `n`-point transform, as a
    /// fraction of Nyquist.
    fn freq(k: usize, n: usize) -> f64 {
        if n == 1 {
            return 0.0;
        }
        let half = n as f64 / 2.0;
        let signed = if k as f64 <= half { k as f64 } else { k as f64 - n as f64 };
        signed / half
    }

    /// Multiplier grid α in unshifted FFT order. The grid is even-symmetric,
    /// so the masked transform is a real, self-adjoint linear map.
    pub fn alpha(&self, h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(ky, kx)| {
            let r = Self::freq(ky, h).hypot(Self::freq(kx, w));
            if r < self.threshold_radius {
                self.low_gain
            } else {
                1.0
            }
        })
    }
}

/// Applies `IFFT(FFT(x) ⊙ α)` to each `h × w` map of a row-major buffer,
/// keeping the real part.
pub fn mask_maps(data: &mut [f64], h: usize, w: usize, mask: &FourierMask) {
    let alpha = mask.alpha(h, w);
    let mut planner = FftPlanner::<f64>::new();
    let (row_f, row_i) = (planner.plan_fft_forward(w), planner.plan_fft_inverse(w));
    let (col_f, col_i) = (planner.plan_fft_forward(h), planner.plan_fft_inverse(h));
    let scale = 1.0 / (h * w) as f64;
    let mut buf = vec![Complex64::default(); h * w];
    let mut col = vec![Complex64::default(); h];
    for map in data.chunks_exact_mut(h * w) {
        for (b, &v) in buf.iter_mut().zip(map.iter()) {
            *b = Complex64::new(v, 0.0);
        }
        for row in buf.chunks_exact_mut(w) {
            row_f.process(row);
        }
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            col_f.process(&mut col);
            for y in 0..h {
                col[y] *= alpha[[y, x]];
            }
            col_i.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        for row in buf.chunks_exact_mut(w) {
            row_i.process(row);
        }
        for (m, b) in map.iter_mut().zip(&buf) {
            *m = b.re * scale;
        }
    }
}

/// Autograd-aware Fourier mask over the last two dimensions.
#[derive(Debug, Clone)]
struct HighPassOp {
    mask: FourierMask,
}

impl CustomOp1 for HighPassOp {
    fn name(&self) -> &'static str {
        "fourier-high-pass"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims();
        if dims.len() < 2 {
            candle_core::bail!("fourier-high-pass expects at least 2 dims, got {dims:?}");
        }
        let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
        let Some((start, end)) = layout.contiguous_offsets() else {
            candle_core::bail!("fourier-high-pass requires a contiguous input");
        };
        let out = match storage {
            CpuStorage::F64(v) => {
                let mut d = v[start..end].to_vec();
                mask_maps(&mut d, h, w, &self.mask);
                CpuStorage::F64(d)
            }
            CpuStorage::F32(v) => {
                let mut d: Vec<f64> = v[start..end].iter().map(|&x| x as f64).collect();
                mask_maps(&mut d, h, w, &self.mask);
                CpuStorage::F32(d.into_iter().map(|x| x as f32).collect())
            }
            _ => candle_core::bail!("fourier-high-pass: only f32 and f64 are supported"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        // The operator is real and symmetric, so its adjoint is itself.
        Ok(Some(grad_res.contiguous()?.apply_op1(self.clone())?))
    }
}

/// `IFFT(FFT(x) ⊙ α)` over each spatial map of `x` (any rank ≥ 2, spatial
/// dimensions last).
pub fn high_pass(x: &Tensor, mask: &FourierMask) -> Result<Tensor> {
    mask.validate()?;
    if !matches!(x.dtype(), DType::F32 | DType::F64) {
        return Err(Error::invalid("dtype", format!("{:?} not supported", x.dtype())));
    }
    Ok(x.contiguous()?.apply_op1(HighPassOp { mask: *mask })?)
}

/// Per-level multipliers for the first half of the spectral channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelScale {
    pub scale_by_level: Vec<f64>,
}

impl Default for ChannelScale {
    fn default() -> Self {
        Self {
            scale_by_level: vec![1.2, 1.4, 1.6],
        }
    }
}

impl ChannelScale {
    pub fn factor(&self, level: usize) -> Result<f64> {
        self.scale_by_level.get(level).copied().ok_or_else(|| {
            Error::invalid("level", format!("{level} has no scale (have {} levels)", self.scale_by_level.len()))
        })
    }
}

/// Multiplies the first `⌊C/2⌋` channels of an `(N, C, H, W)` map by the
/// level's constant; the remaining channels pass through untouched.
pub fn scale_channels(x_spe: &Tensor, cfg: &ChannelScale, level: usize) -> Result<Tensor> {
    let c = x_spe.dim(1)?;
    if c < 2 {
        return Err(Error::invalid("channels", format!("need at least 2, got {c}")));
    }
    let k = cfg.factor(level)?;
    let half = c / 2;
    let head = (x_spe.narrow(1, 0, half)? * k)?;
    let tail = x_spe.narrow(1, half, c - half)?;
    Ok(Tensor::cat(&[&head, &tail], 1)?)
}

/// Feature delivered into the spectral branch:
/// `scale_channels(x_spe) + high_pass(x_spa)`.
pub fn fmim_transfer(
    x_spa: &Tensor,
    x_spe: &Tensor,
    mask: &FourierMask,
    cfg: &ChannelScale,
    level: usize,
) -> Result<Tensor> {
    if x_spa.dims() != x_spe.dims() {
        return Err(Error::shape("fmim_transfer", x_spe.dims(), x_spa.dims()));
    }
    Ok((scale_channels(x_spe, cfg, level)? + high_pass(x_spa, mask)?)?)
}
