//! Conditional sampling of fused images from a trained denoiser.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apfm::DetachMask;
use crate::data::SceneSample;
use crate::diffusion::{ddim_subsequence, sample_ddim, standard_normal, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{stack_to_tensor, unstack_tensor, ImagePlane};
use crate::network::{ConditionBundle, SsdiffNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleOptions {
    /// DDIM steps.
    pub steps: usize,
    pub seed: u64,
    /// Scenes denoised together; only affects memory and speed.
    pub chunk: usize,
    /// Sample with the EMA weights (default) instead of the raw ones.
    pub use_ema: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            seed: 0,
            chunk: 4,
            use_ema: true,
        }
    }
}

/// Starting noise of scene `index`: drawn from its own stream so a scene's
/// sample does not depend on which other scenes share its batch.
pub fn initial_noise(seed: u64, index: usize, dims: (usize, usize, usize), dtype: DType, device: &Device) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let (b, h, w) = dims;
    standard_normal(&[1, b, h, w], dtype, device, &mut rng)
}

/// Deterministic DDIM over `steps` strided timesteps. `pan` is
/// `(n, 1, H, W)`, `lrms_up` and `x_init` are `(n, B, H, W)`; returns the
/// fused `(n, B, H, W)` batch (unscaled residual plus `lrms_up`).
pub fn sample_fused(
    net: &SsdiffNet,
    sched: &NoiseSchedule,
    pan: &Tensor,
    lrms_up: &Tensor,
    x_init: &Tensor,
    steps: usize,
) -> Result<Tensor> {
    let ts = ddim_subsequence(sched, steps)?;
    let n = pan.dim(0)?;
    let residual = sample_ddim(
        |x, t| {
            let bundle = ConditionBundle {
                pan: pan.clone(),
                lrms_up: lrms_up.clone(),
                x_t: x.clone(),
            };
            Ok(net.denoise(&bundle, &vec![t; n], DetachMask::CLEAR)?.detach())
        },
        x_init.clone(),
        sched,
        &ts,
    )?;
    Ok((residual.affine(1.0 / net.config().residual_scale, 0.0)? + lrms_up)?)
}

/// Samples every scene, `chunk` at a time.
pub fn sample_scenes(net: &SsdiffNet, sched: &NoiseSchedule, samples: &[SceneSample], opts: &SampleOptions) -> Result<Vec<ImagePlane>> {
    if opts.chunk == 0 {
        return Err(Error::invalid("chunk", "must be positive"));
    }
    let bands = net.config().bands;
    let (dtype, device) = (net.dtype(), net.device().clone());
    let mut out = Vec::with_capacity(samples.len());
    for (c, group) in samples.chunks(opts.chunk).enumerate() {
        let mut noise = Vec::with_capacity(group.len());
        for (k, s) in group.iter().enumerate() {
            s.validate()?;
            if s.bands() != bands {
                return Err(Error::Dataset {
                    key: "lms".into(),
                    reason: format!("{} bands but the checkpoint expects {bands}", s.bands()),
                });
            }
            let (h, w) = s.size();
            noise.push(initial_noise(opts.seed, c * opts.chunk + k, (bands, h, w), dtype, &device)?);
        }
        let pans: Vec<ImagePlane> = group.iter().map(|s| s.pan.clone()).collect();
        let lms: Vec<ImagePlane> = group.iter().map(|s| s.lms.clone()).collect();
        let pan = stack_to_tensor(&pans, dtype, &device)?;
        let lms = stack_to_tensor(&lms, dtype, &device)?;
        let fused = sample_fused(net, sched, &pan, &lms, &Tensor::cat(&noise, 0)?, opts.steps)?;
        out.extend(unstack_tensor(&fused)?);
    }
    Ok(out)
}
