//! Alternating projection fusion: paired cross-domain attention between
//! spatial and spectral features, fused element-wise.
//!
//! Layouts (batch first): `T_a`, `T_b` are `(N, HW, S')`; `T_c`, `T_d` are
//! `(N, S', HW)`. `T^spa = softmax(T_a T_bᵀ / √S') T_cᵀ` is `(N, HW, S')`,
//! `T^spe = softmax(T_c T_dᵀ · HW / √S'³) T_aᵀ` is `(N, S', HW)`, and the
//! fusion is `T^spa ⊙ (T^spe)ᵀ`.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::params::{Ctx, Group, ParamBuilder, P};

/// Spatial and spectral features of one resolution level, `(N, S, H, W)`.
#[derive(Debug, Clone)]
pub struct BranchFeatures {
    pub f_spa: Tensor,
    pub f_spe: Tensor,
    pub level: usize,
}

impl BranchFeatures {
    pub fn new(f_spa: Tensor, f_spe: Tensor, level: usize) -> Result<Self> {
        if f_spa.rank() != 4 || f_spa.dims() != f_spe.dims() {
            return Err(Error::shape("BranchFeatures", f_spa.dims(), f_spe.dims()));
        }
        Ok(Self { f_spa, f_spe, level })
    }

    /// `(N, S, H, W)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.f_spa.dims();
        (d[0], d[1], d[2], d[3])
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub t_a: Tensor,
    pub t_b: Tensor,
    pub t_c: Tensor,
    pub t_d: Tensor,
    pub s_prime: usize,
}

impl ProjectionSet {
    /// Validates shapes and returns `(N, HW, S')`.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        let (n, hw, s) = self.t_a.dims3()?;
        if s != self.s_prime || s == 0 {
            return Err(Error::invalid("s_prime", format!("{} vs T_a width {s}", self.s_prime)));
        }
        if self.t_b.dims() != [n, hw, s] {
            return Err(Error::shape("ProjectionSet.t_b", &[n, hw, s], self.t_b.dims()));
        }
        for (name, t) in [("ProjectionSet.t_c", &self.t_c), ("ProjectionSet.t_d", &self.t_d)] {
            if t.dims() != [n, s, hw] {
                return Err(Error::shape(name, &[n, s, hw], t.dims()));
            }
        }
        Ok((n, hw, s))
    }
}

/// Which projected output is cut from the autograd graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetachMask {
    /// Blocks gradients through `T^spa` (spatial branch frozen).
    pub detach_spatial_output: bool,
    /// Blocks gradients through `T^spe` (spectral branch frozen).
    pub detach_spectral_output: bool,
}

impl DetachMask {
    pub const CLEAR: Self = Self {
        detach_spatial_output: false,
        detach_spectral_output: false,
    };
    pub const SPATIAL: Self = Self {
        detach_spatial_output: true,
        detach_spectral_output: false,
    };
    pub const SPECTRAL: Self = Self {
        detach_spatial_output: false,
        detach_spectral_output: true,
    };

    pub fn validate(&self) -> Result<()> {
        if self.detach_spatial_output && self.detach_spectral_output {
            return Err(Error::invalid("detach_mask", "at most one branch may be frozen"));
        }
        Ok(())
    }

    /// The parameter group that must not receive updates.
    pub fn frozen_group(&self) -> Option<Group> {
        match (self.detach_spatial_output, self.detach_spectral_output) {
            (true, false) => Some(Group::Spatial),
            (false, true) => Some(Group::Spectral),
            _ => None,
        }
    }
}

/// Per-pixel linear map `(N, S, H, W) → (N, S', HW)`.
#[derive(Debug, Clone)]
pub struct PixelLinear {
    weight: P,
    bias: P,
}

impl PixelLinear {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let bound = 1.0 / (c_in as f64).sqrt();
        let mut b = b.pp(name);
        Ok(Self {
            weight: b.uniform("weight", &[c_out, c_in], bound)?,
            bias: b.uniform("bias", &[c_out], bound)?,
        })
    }

    pub fn forward_flat(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let x = x.reshape((n, c, h * w))?;
        // The batch copy must be materialized: batched matmul mis-handles a
        // zero batch stride on the left operand.
        let y = self.weight.get(ctx).broadcast_left(n)?.contiguous()?.matmul(&x)?;
        Ok(y.broadcast_add(&self.bias.get(ctx).reshape((1, (), 1))?)?)
    }
}

/// Generators of the four projections: `T_a`, `T_b` read `F_spa`, `T_c`,
/// `T_d` read `F_spe`.
#[derive(Debug, Clone)]
pub struct ApfmParams {
    pub gen_a: PixelLinear,
    pub gen_b: PixelLinear,
    pub gen_c: PixelLinear,
    pub gen_d: PixelLinear,
    pub s_prime: usize,
}

impl ApfmParams {
    /// `T_a`/`T_b` generators belong to the spatial group, `T_c`/`T_d` to
    /// the spectral group.
    pub fn new(b: &mut ParamBuilder<'_>, channels: usize, s_prime: usize) -> Result<Self> {
        if s_prime == 0 {
            return Err(Error::invalid("s_prime", "must be positive"));
        }
        let mut spa = b.with_group(Group::Spatial);
        let gen_a = PixelLinear::new(&mut spa, "proj_a", channels, s_prime)?;
        let gen_b = PixelLinear::new(&mut spa, "proj_b", channels, s_prime)?;
        let mut spe = b.with_group(Group::Spectral);
        let gen_c = PixelLinear::new(&mut spe, "proj_c", channels, s_prime)?;
        let gen_d = PixelLinear::new(&mut spe, "proj_d", channels, s_prime)?;
        Ok(Self {
            gen_a,
            gen_b,
            gen_c,
            gen_d,
            s_prime,
        })
    }
}

pub fn make_projections(feats: &BranchFeatures, params: &ApfmParams, ctx: &Ctx) -> Result<ProjectionSet> {
    let t_a = params.gen_a.forward_flat(&feats.f_spa, ctx)?.transpose(1, 2)?.contiguous()?;
    let t_b = params.gen_b.forward_flat(&feats.f_spa, ctx)?.transpose(1, 2)?.contiguous()?;
    let t_c = params.gen_c.forward_flat(&feats.f_spe, ctx)?;
    let t_d = params.gen_d.forward_flat(&feats.f_spe, ctx)?;
    Ok(ProjectionSet {
        t_a,
        t_b,
        t_c,
        t_d,
        s_prime: params.s_prime,
    })
}

/// Row softmax over the last dimension; the row max is subtracted as a
/// constant, which leaves values and gradients unchanged.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?.detach();
    let e = logits.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

fn check_finite(t: &Tensor, what: &'static str) -> Result<()> {
    let s = t.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
    if !s.is_finite() {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

/// `softmax(T_a T_bᵀ / √S') T_cᵀ`, shape `(N, HW, S')`.
pub fn project_spatial(p: &ProjectionSet) -> Result<Tensor> {
    project_spatial_with(p, &p.t_c)
}

fn project_spatial_with(p: &ProjectionSet, t_c: &Tensor) -> Result<Tensor> {
    let (_, _, s) = p.dims()?;
    let logits = (p.t_a.matmul(&p.t_b.t()?)? / (s as f64).sqrt())?;
    check_finite(&logits, "project_spatial")?;
    Ok(softmax_rows(&logits)?.matmul(&t_c.t()?)?)
}

/// Logit scale of the spectral attention: `HW / √S'³`.
pub fn spectral_scale(s_prime: usize, hw: usize) -> f64 {
    hw as f64 / (s_prime as f64).powf(1.5)
}

/// `softmax(T_c T_dᵀ · HW / √S'³) T_aᵀ`, shape `(N, S', HW)`.
pub fn project_spectral(p: &ProjectionSet) -> Result<Tensor> {
    project_spectral_with(p, &p.t_a)
}

fn project_spectral_with(p: &ProjectionSet, t_a: &Tensor) -> Result<Tensor> {
    let (_, hw, s) = p.dims()?;
    let logits = (p.t_c.matmul(&p.t_d.t()?)? * spectral_scale(s, hw))?;
    check_finite(&logits, "project_spectral")?;
    Ok(softmax_rows(&logits)?.matmul(&t_a.t()?)?)
}

/// `T^spa ⊙ (T^spe)ᵀ`, shape `(N, HW, S')`.
pub fn fuse(t_spa: &Tensor, t_spe: &Tensor) -> Result<Tensor> {
    let t = t_spe.t()?;
    if t_spa.dims() != t.dims() {
        return Err(Error::shape("fuse", t_spa.dims(), t.dims()));
    }
    Ok((t_spa * t)?)
}

/// Full module: projections, both attentions with the requested detaches,
/// fusion, reshaped to `(N, S', H, W)`.
pub fn apfm_forward(feats: &BranchFeatures, params: &ApfmParams, mask: DetachMask, ctx: &Ctx) -> Result<Tensor> {
    mask.validate()?;
    let (n, _, h, w) = feats.dims();
    let p = make_projections(feats, params, ctx)?;
    let (t_spa, t_spe) = if mask.detach_spatial_output {
        (project_spatial(&p)?.detach(), project_spectral_with(&p, &p.t_a.detach())?)
    } else if mask.detach_spectral_output {
        (project_spatial_with(&p, &p.t_c.detach())?, project_spectral(&p)?.detach())
    } else {
        (project_spatial(&p)?, project_spectral(&p)?)
    };
    let fused = fuse(&t_spa, &t_spe)?;
    Ok(fused.transpose(1, 2)?.contiguous()?.reshape((n, p.s_prime, h, w))?)
}
