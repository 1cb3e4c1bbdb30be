//! Noise schedule and closed-form diffusion algebra.
//!
//! Timesteps are 1-based throughout: `t ∈ 1..=T`, with `ᾱ_0 := 1`.
//! The denoiser predicts the clean residual `x̂_0 = HrMSI − LrMSI↑`; samplers
//! convert that prediction into a noise estimate internally.

use candle_core::{DType, Device, Shape, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Precomputed β/α/ᾱ sequences and posterior variances over `T` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_variances: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β schedule from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid("steps", format!("need T >= 2, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(
                "beta",
                format!("need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"),
            ));
        }
        let span = beta_end - beta_start;
        let betas = (0..steps)
            .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::invalid("betas", "need at least two steps"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::invalid("betas", format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_variances = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_variances,
        })
    }

    /// Default training schedule: 1000 linear steps over [1e-4, 0.02].
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("static schedule is valid")
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_variances(&self) -> &[f64] {
        &self.posterior_variances
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.check(t)?])
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bars[self.check(t)?])
    }

    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        Ok(self.posterior_variances[self.check(t)?])
    }
}

/// Noisy residual at step `t` together with the noise that produced it.
#[derive(Debug, Clone)]
pub struct DiffusionState {
    pub x_t: Tensor,
    pub t: Vec<usize>,
    pub epsilon: Option<Tensor>,
}

fn ensure_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, a.dims(), b.dims()));
    }
    Ok(())
}

/// Forward noising `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn q_sample(x0_res: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    ensure_same("q_sample", x0_res, eps)?;
    sched.check(t)?;
    let ab = sched.alpha_bar(t)?;
    Ok((x0_res.affine(ab.sqrt(), 0.0)? + eps.affine((1.0 - ab).sqrt(), 0.0)?)?)
}

/// Per-sample coefficients broadcastable against an `(n, c, h, w)` batch.
fn per_sample(values: &[f64], like: &Tensor) -> Result<Tensor> {
    let mut dims = vec![1usize; like.rank()];
    dims[0] = values.len();
    Ok(Tensor::from_vec(values.to_vec(), Shape::from(dims), like.device())?.to_dtype(like.dtype())?)
}

/// Forward noising with one timestep per batch element.
pub fn q_sample_batched(
    x0_res: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    ensure_same("q_sample_batched", x0_res, eps)?;
    if x0_res.dim(0)? != ts.len() {
        return Err(Error::shape("q_sample_batched", &[x0_res.dim(0)?], &[ts.len()]));
    }
    let mut signal = Vec::with_capacity(ts.len());
    let mut noise = Vec::with_capacity(ts.len());
    for &t in ts {
        sched.check(t)?;
        let ab = sched.alpha_bar(t)?;
        signal.push(ab.sqrt());
        noise.push((1.0 - ab).sqrt());
    }
    let s = per_sample(&signal, x0_res)?;
    let n = per_sample(&noise, x0_res)?;
    Ok((x0_res.broadcast_mul(&s)? + eps.broadcast_mul(&n)?)?)
}

/// Posterior mean `(x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t`.
pub fn posterior_mean(
    x_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    ensure_same("posterior_mean", x_t, eps_hat)?;
    let beta = sched.beta(t)?;
    let alpha = sched.alpha(t)?;
    let ab = sched.alpha_bar(t)?;
    let inv = 1.0 / alpha.sqrt();
    let k = beta / (1.0 - ab).sqrt();
    Ok((x_t.affine(inv, 0.0)? - eps_hat.affine(k * inv, 0.0)?)?)
}

/// Inverts the forward noising for `ε` given an `x0` estimate.
pub fn x0_to_eps(x0_hat: &Tensor, x_t: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    ensure_same("x0_to_eps", x0_hat, x_t)?;
    let ab = sched.alpha_bar(t)?;
    if t == 0 || ab >= 1.0 {
        return Err(Error::Degenerate {
            op: "x0_to_eps",
            reason: format!("alpha_bar({t}) = {ab} leaves no noise to recover"),
        });
    }
    let inv = 1.0 / (1.0 - ab).sqrt();
    Ok((x_t.affine(inv, 0.0)? - x0_hat.affine(ab.sqrt() * inv, 0.0)?)?)
}

/// One ancestral step `x_{t−1} = μ(x_t, ε̂) + √Σ_t·z`. At `t = 1` the variance
/// is zero and `noise` has no effect.
pub fn ddpm_step(
    x_t: &Tensor,
    x0_hat: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    noise: &Tensor,
) -> Result<Tensor> {
    ensure_same("ddpm_step", x_t, noise)?;
    let eps_hat = x0_to_eps(x0_hat, x_t, t, sched)?;
    let mean = posterior_mean(x_t, &eps_hat, t, sched)?;
    let var = sched.posterior_variance(t)?;
    if var == 0.0 {
        return Ok(mean);
    }
    Ok((mean + noise.affine(var.sqrt(), 0.0)?)?)
}

/// Deterministic (η = 0) jump from `t` to `t_prev < t`.
pub fn ddim_step(
    x_t: &Tensor,
    x0_hat: &Tensor,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if t_prev >= t {
        return Err(Error::invalid(
            "t_prev",
            format!("must precede t = {t}, got {t_prev}"),
        ));
    }
    let eps_hat = x0_to_eps(x0_hat, x_t, t, sched)?;
    let ab_prev = sched.alpha_bar(t_prev)?;
    if ab_prev >= 1.0 {
        return Ok(x0_hat.clone());
    }
    Ok((x0_hat.affine(ab_prev.sqrt(), 0.0)? + eps_hat.affine((1.0 - ab_prev).sqrt(), 0.0)?)?)
}

/// Evenly strided, strictly decreasing timesteps for accelerated sampling.
///
/// For `n ≥ 2` the sequence ends at 1 with stride `⌊(T−1)/(n−1)⌋`; `n = 1`
/// is a single jump from `T`.
pub fn ddim_subsequence(sched: &NoiseSchedule, n_steps: usize) -> Result<Vec<usize>> {
    let total = sched.steps();
    if n_steps == 0 || n_steps > total {
        return Err(Error::invalid(
            "n_steps",
            format!("need 1 <= n <= T = {total}, got {n_steps}"),
        ));
    }
    if n_steps == 1 {
        return Ok(vec![total]);
    }
    let stride = (total - 1) / (n_steps - 1);
    Ok((0..n_steps).rev().map(|i| 1 + i * stride).collect())
}

/// Runs the deterministic sampler. `denoise(x_t, t)` returns the residual
/// estimate `x̂_0`; the final estimate is returned.
pub fn sample_ddim<F>(
    mut denoise: F,
    x_init: Tensor,
    sched: &NoiseSchedule,
    steps: &[usize],
) -> Result<Tensor>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
{
    let mut x = x_init;
    for (i, &t) in steps.iter().enumerate() {
        let x0_hat = denoise(&x, t)?;
        let t_prev = steps.get(i + 1).copied().unwrap_or(0);
        // Detached so each step's graph is released instead of chaining
        // onto the next one.
        x = ddim_step(&x, &x0_hat, t, t_prev, sched)?.detach();
    }
    Ok(x)
}

/// Runs the full ancestral sampler over `T..=1`.
pub fn sample_ddpm<F, R>(
    mut denoise: F,
    x_init: Tensor,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor>
where
    F: FnMut(&Tensor, usize) -> Result<Tensor>,
    R: Rng + ?Sized,
{
    let mut x = x_init;
    for t in (1..=sched.steps()).rev() {
        let x0_hat = denoise(&x, t)?;
        let noise = if t > 1 {
            standard_normal(x.dims(), x.dtype(), x.device(), rng)?
        } else {
            x.zeros_like()?
        };
        x = ddpm_step(&x, &x0_hat, t, sched, &noise)?.detach();
    }
    Ok(x)
}

/// Draws an `N(0, I)` tensor from an explicit random source.
pub fn standard_normal<R: Rng + ?Sized>(
    dims: &[usize],
    dtype: DType,
    device: &Device,
    rng: &mut R,
) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(values, dims, device)?.to_dtype(dtype)?)
}

/// `HrMSI − LrMSI↑`.
pub fn residual_wrap(hrms: &ImagePlane, lrms_up: &ImagePlane) -> Result<ImagePlane> {
    hrms.sub(lrms_up)
}

/// `residual + LrMSI↑`.
pub fn residual_unwrap(res: &ImagePlane, lrms_up: &ImagePlane) -> Result<ImagePlane> {
    res.add(lrms_up)
}
