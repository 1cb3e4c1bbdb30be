//! Building blocks: convolutions, group norm, residual blocks, timestep
//! embedding.

use candle_core::{DType, Device, Tensor};

use super::params::{Ctx, ParamBuilder, P};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: P,
    bias: P,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// PyTorch-style uniform init with bound `1/√fan_in`; `zero` gives an
    /// all-zero layer.
    pub fn new(
        b: &mut ParamBuilder<'_>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        zero: bool,
    ) -> Result<Self> {
        let bound = if zero { 0.0 } else { 1.0 / ((c_in * kernel * kernel) as f64).sqrt() };
        let mut b = b.pp(name);
        Ok(Self {
            weight: b.uniform("weight", &[c_out, c_in, kernel, kernel], bound)?,
            bias: b.uniform("bias", &[c_out], bound)?,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let y = x.conv2d(&self.weight.get(ctx), self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.get(ctx).reshape((1, (), 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: P,
    bias: P,
}

impl Linear {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let bound = 1.0 / (c_in as f64).sqrt();
        let mut b = b.pp(name);
        Ok(Self {
            weight: b.uniform("weight", &[c_out, c_in], bound)?,
            bias: b.uniform("bias", &[c_out], bound)?,
        })
    }

    /// `(N, in) → (N, out)`.
    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.get(ctx).t()?)?.broadcast_add(&self.bias.get(ctx))?)
    }
}

/// Largest group count ≤ 8 dividing the channel count.
pub fn norm_groups(channels: usize) -> usize {
    (1..=8).rev().find(|g| channels % g == 0).unwrap_or(1)
}

/// Per-sample group normalization (statistics never mix batch members).
#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: P,
    beta: P,
    groups: usize,
}

impl GroupNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(b: &mut ParamBuilder<'_>, name: &str, channels: usize) -> Result<Self> {
        let mut b = b.pp(name);
        Ok(Self {
            gamma: b.constant("weight", &[channels], 1.0)?,
            beta: b.constant("bias", &[channels], 0.0)?,
            groups: norm_groups(channels),
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let g = self.groups;
        let xg = x.reshape((n, g, (c / g) * h * w))?;
        let mean = xg.mean_keepdim(2)?;
        let centered = xg.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + Self::EPS)?.sqrt()?)?.reshape((n, c, h, w))?;
        let gamma = self.gamma.get(ctx).reshape((1, c, 1, 1))?;
        let beta = self.beta.get(ctx).reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

/// Nearest-neighbor ×2 magnification.
pub fn upsample_nearest2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    Ok(x.reshape((n, c, h, 1, w, 1))?
        .broadcast_as((n, c, h, 2, w, 2))?
        .contiguous()?
        .reshape((n, c, 2 * h, 2 * w))?)
}

/// Sinusoidal embedding `[sin(t·f_i), cos(t·f_i)]` with
/// `f_i = 10000^(−i/(dim/2))`, one row per timestep.
pub fn timestep_embedding(ts: &[usize], dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid("time_embed_dim", format!("{dim} must be even and positive")));
    }
    let half = dim / 2;
    let mut v = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        let t = t as f64;
        let freqs = (0..half).map(|i| (-(10000f64.ln()) * i as f64 / half as f64).exp());
        v.extend(freqs.clone().map(|f| (t * f).sin()));
        v.extend(freqs.map(|f| (t * f).cos()));
    }
    Ok(Tensor::from_vec(v, (ts.len(), dim), device)?.to_dtype(dtype)?)
}

/// Residual block: GN → SiLU → conv → (+ time) → GN → SiLU → conv, with a
/// 1×1 skip when widths differ.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize, temb: usize) -> Result<Self> {
        let mut b = b.pp(name);
        Ok(Self {
            norm1: GroupNorm::new(&mut b, "norm1", c_in)?,
            conv1: Conv2d::new(&mut b, "conv1", c_in, c_out, 3, 1, false)?,
            time: Linear::new(&mut b, "time", temb, c_out)?,
            norm2: GroupNorm::new(&mut b, "norm2", c_out)?,
            conv2: Conv2d::new(&mut b, "conv2", c_out, c_out, 3, 1, false)?,
            skip: if c_in != c_out {
                Some(Conv2d::new(&mut b, "skip", c_in, c_out, 1, 1, false)?)
            } else {
                None
            },
        })
    }

    /// `temb` is the shared embedding `(N, E)` after the time MLP.
    pub fn forward(&self, x: &Tensor, temb: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let h = self.conv1.forward(&self.norm1.forward(x, ctx)?.silu()?, ctx)?;
        let t = self.time.forward(&temb.silu()?, ctx)?.unsqueeze(2)?.unsqueeze(3)?;
        let h = h.broadcast_add(&t)?;
        let h = self.conv2.forward(&self.norm2.forward(&h, ctx)?.silu()?, ctx)?;
        let skip = match &self.skip {
            Some(s) => s.forward(x, ctx)?,
            None => x.clone(),
        };
        Ok((h + skip)?)
    }
}
