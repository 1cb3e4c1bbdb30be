//! The dual-branch denoiser.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{NetworkConfig, Variant};
use super::layers::{timestep_embedding, upsample_nearest2, Conv2d, GroupNorm, Linear, ResBlock};
use super::params::{Ctx, Group, ParamBuilder, ParamStore};
use crate::apfm::{apfm_forward, ApfmParams, BranchFeatures, DetachMask};
use crate::error::{Error, Result};
use crate::fmim::fmim_transfer;

/// Resolution level (0, 1, 2) of each of the five fusion sites: encoder
/// entry at levels 0 and 1, bottleneck, decoder entry at levels 1 and 0.
pub const SITE_LEVELS: [usize; 5] = [0, 1, 2, 1, 0];

/// Conditioning inputs, all `(N, ·, H, W)`.
#[derive(Debug, Clone)]
pub struct ConditionBundle {
    pub pan: Tensor,
    pub lrms_up: Tensor,
    pub x_t: Tensor,
}

impl ConditionBundle {
    pub fn validate(&self, bands: usize, multiple: usize) -> Result<(usize, usize, usize)> {
        let (n, pc, h, w) = self.pan.dims4()?;
        if pc != 1 {
            return Err(Error::shape("ConditionBundle.pan", &[n, 1, h, w], self.pan.dims()));
        }
        for (name, t) in [("ConditionBundle.lrms_up", &self.lrms_up), ("ConditionBundle.x_t", &self.x_t)] {
            if t.dims() != [n, bands, h, w] {
                return Err(Error::shape(name, &[n, bands, h, w], t.dims()));
            }
        }
        if h % multiple != 0 || w % multiple != 0 {
            return Err(Error::invalid("size", format!("{h}x{w} not divisible by {multiple}")));
        }
        Ok((n, h, w))
    }
}

/// U-Net skeleton shared by both branches.
#[derive(Debug, Clone)]
struct Branch {
    in_conv: Conv2d,
    enc0: Vec<ResBlock>,
    down0: Conv2d,
    enc1: Vec<ResBlock>,
    down1: Conv2d,
    mid: Vec<ResBlock>,
    up1: Conv2d,
    dec1: Vec<ResBlock>,
    up0: Conv2d,
    /// Empty for a branch that only supplies fusion-site features: its last
    /// decoder stage would have no consumer.
    dec0: Vec<ResBlock>,
}

fn blocks(
    b: &mut ParamBuilder<'_>,
    name: &str,
    count: usize,
    c_first: usize,
    c: usize,
    temb: usize,
) -> Result<Vec<ResBlock>> {
    (0..count)
        .map(|i| ResBlock::new(b, &format!("{name}.{i}"), if i == 0 { c_first } else { c }, c, temb))
        .collect()
}

impl Branch {
    fn new(b: &mut ParamBuilder<'_>, cfg: &NetworkConfig, c_in: usize, taps_only: bool) -> Result<Self> {
        let [c0, c1, c2] = cfg.widths();
        let e = cfg.time_embed_dim;
        Ok(Self {
            in_conv: Conv2d::new(b, "in_conv", c_in, c0, 3, 1, false)?,
            enc0: blocks(b, "enc0", cfg.enc_blocks[0], c0, c0, e)?,
            down0: Conv2d::new(b, "down0", c0, c1, 3, 2, false)?,
            enc1: blocks(b, "enc1", cfg.enc_blocks[1], c1, c1, e)?,
            down1: Conv2d::new(b, "down1", c1, c2, 3, 2, false)?,
            mid: blocks(b, "mid", cfg.mid_blocks, c2, c2, e)?,
            up1: Conv2d::new(b, "up1", c2, c1, 3, 1, false)?,
            dec1: blocks(b, "dec1", cfg.dec_blocks[1], 2 * c1, c1, e)?,
            up0: Conv2d::new(b, "up0", c1, c0, 3, 1, false)?,
            dec0: if taps_only { Vec::new() } else { blocks(b, "dec0", cfg.dec_blocks[0], 2 * c0, c0, e)? },
        })
    }

    /// Runs the U-Net; `site(i, h)` may rewrite the features at each fusion
    /// site before the level's blocks consume them.
    fn forward(
        &self,
        x: &Tensor,
        temb: &Tensor,
        ctx: &Ctx,
        site: &mut dyn FnMut(usize, Tensor) -> Result<Tensor>,
    ) -> Result<Tensor> {
        let run = |blocks: &[ResBlock], mut h: Tensor| -> Result<Tensor> {
            for blk in blocks {
                h = blk.forward(&h, temb, ctx)?;
            }
            Ok(h)
        };
        let h = site(0, self.in_conv.forward(x, ctx)?)?;
        let skip0 = run(&self.enc0, h)?;
        let h = site(1, self.down0.forward(&skip0, ctx)?)?;
        let skip1 = run(&self.enc1, h)?;
        let h = site(2, self.down1.forward(&skip1, ctx)?)?;
        let h = run(&self.mid, h)?;
        let h = site(3, self.up1.forward(&upsample_nearest2(&h)?, ctx)?)?;
        let h = run(&self.dec1, Tensor::cat(&[&h, &skip1], 1)?)?;
        let h = site(4, self.up0.forward(&upsample_nearest2(&h)?, ctx)?)?;
        if self.dec0.is_empty() {
            return Ok(h);
        }
        run(&self.dec0, Tensor::cat(&[&h, &skip0], 1)?)
    }
}

#[derive(Debug, Clone)]
struct FusionSite {
    apfm: ApfmParams,
    out_proj: Conv2d,
}

#[derive(Debug, Clone)]
struct Head {
    norm: GroupNorm,
    hidden: Conv2d,
    out: Conv2d,
}

impl Head {
    fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let h = self.hidden.forward(&self.norm.forward(x, ctx)?.silu()?, ctx)?;
        self.out.forward(&h.silu()?, ctx)
    }
}

/// Per-sample, per-channel zero mean and unit variance over the spatial
/// grid; the small detail carried by PAN and LrMSI↑ then enters the network
/// at the same scale as the noisy input.
fn standardize(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let flat = x.reshape((n, c, h * w))?;
    let centered = flat.broadcast_sub(&flat.mean_keepdim(2)?)?;
    let std = (centered.sqr()?.mean_keepdim(2)? + 1e-12)?.sqrt()?;
    Ok(centered.broadcast_div(&(std + 1e-6)?)?.reshape((n, c, h, w))?)
}

/// Dual-branch residual denoiser `x_θ(x_t, PAN, LrMSI↑, t)`.
#[derive(Debug)]
pub struct SsdiffNet {
    cfg: NetworkConfig,
    store: ParamStore,
    time1: Linear,
    time2: Linear,
    spatial: Option<Branch>,
    spectral: Option<Branch>,
    sites: Vec<FusionSite>,
    head: Head,
}

impl SsdiffNet {
    pub fn new(cfg: &NetworkConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(dtype, device.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut root = ParamBuilder::new(&mut store, &mut rng, Group::Shared);
        let bands = cfg.bands;
        let v = cfg.variant;
        let widths = cfg.widths();

        let mut shared = root.pp("shared");
        let time1 = Linear::new(&mut shared, "time.lin1", cfg.time_freq_dim, cfg.time_embed_dim)?;
        let time2 = Linear::new(&mut shared, "time.lin2", cfg.time_embed_dim, cfg.time_embed_dim)?;

        let coupled = 1 + 2 * bands;
        let spatial = if v.has_spatial() {
            let mut b = root.with_group(Group::Spatial);
            let mut b = b.pp("spatial");
            // V4/V5 consume the spatial branch only through its taps.
            let taps_only = matches!(v, Variant::V4 | Variant::V5);
            Some(Branch::new(&mut b, cfg, if v.coupled_input() { coupled } else { 1 + bands }, taps_only)?)
        } else {
            None
        };
        let spectral = if v.has_spectral() {
            let mut b = root.with_group(Group::Spectral);
            let mut b = b.pp("spectral");
            Some(Branch::new(&mut b, cfg, if v.coupled_input() { coupled } else { 2 * bands }, false)?)
        } else {
            None
        };
        let mut sites = Vec::new();
        if v == Variant::V5 {
            for (i, &level) in SITE_LEVELS.iter().enumerate() {
                let mut b = root.with_group(Group::Spectral);
                let mut b = b.pp(format!("fusion.{i}"));
                let s_prime = cfg.s_prime(level);
                sites.push(FusionSite {
                    apfm: ApfmParams::new(&mut b, widths[level], s_prime)?,
                    out_proj: Conv2d::new(&mut b, "out_proj", s_prime, widths[level], 1, 1, false)?,
                });
            }
        }
        let head_in = if v == Variant::V3 { 2 * widths[0] } else { widths[0] };
        let mut hb = root.pp("shared.head");
        let head = Head {
            norm: GroupNorm::new(&mut hb, "norm", head_in)?,
            hidden: Conv2d::new(&mut hb, "hidden", head_in, widths[0], 1, 1, false)?,
            out: Conv2d::new(&mut hb, "out", widths[0], bands, 1, 1, cfg.zero_init_head)?,
        };
        Ok(Self {
            cfg: cfg.clone(),
            store,
            time1,
            time2,
            spatial,
            spectral,
            sites,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    fn time_embedding(&self, ts: &[usize], ctx: &Ctx) -> Result<Tensor> {
        let e = timestep_embedding(ts, self.cfg.time_freq_dim, self.dtype(), self.device())?;
        self.time2.forward(&self.time1.forward(&e, ctx)?.silu()?, ctx)
    }

    /// Predicts the clean diffusion variable `residual_scale·(x̂_0 − LrMSI↑)`
    /// for a batch whose `x_t` lives in the same scaled space; `ts[i]` is the
    /// timestep of sample `i`.
    pub fn denoise(&self, bundle: &ConditionBundle, ts: &[usize], mask: DetachMask) -> Result<Tensor> {
        mask.validate()?;
        let (n, _, _) = bundle.validate(self.cfg.bands, self.cfg.size_multiple())?;
        if ts.len() != n {
            return Err(Error::invalid("timesteps", format!("{} for a batch of {n}", ts.len())));
        }
        let ctx = Ctx::new(mask);
        let temb = self.time_embedding(ts, &ctx)?;
        let v = self.cfg.variant;
        let (pan, lms) = if self.cfg.normalize_conditions {
            (standardize(&bundle.pan)?, standardize(&bundle.lrms_up)?)
        } else {
            (bundle.pan.clone(), bundle.lrms_up.clone())
        };
        let mut identity = |_: usize, h: Tensor| Ok(h);

        let features = match v {
            Variant::V1 | Variant::V2 => {
                let x = Tensor::cat(&[&pan, &lms, &bundle.x_t], 1)?;
                let branch = self.spatial.as_ref().or(self.spectral.as_ref()).expect("one branch");
                branch.forward(&x, &temb, &ctx, &mut identity)?
            }
            Variant::V3 | Variant::V4 | Variant::V5 => {
                let spatial = self.spatial.as_ref().expect("spatial branch");
                let spectral = self.spectral.as_ref().expect("spectral branch");
                let x_spa = Tensor::cat(&[&pan, &bundle.x_t], 1)?;
                let x_spe = Tensor::cat(&[&lms, &bundle.x_t], 1)?;
                let mut taps: Vec<Tensor> = Vec::with_capacity(SITE_LEVELS.len());
                let mut record = |_: usize, h: Tensor| {
                    taps.push(h.clone());
                    Ok(h)
                };
                let f_spa = spatial.forward(&x_spa, &temb, &ctx, &mut record)?;
                if mask.detach_spatial_output {
                    // Frozen spatial branch: its features enter the spectral
                    // branch as constants.
                    for t in taps.iter_mut() {
                        *t = t.detach();
                    }
                }
                match v {
                    Variant::V3 => {
                        let f_spe = spectral.forward(&x_spe, &temb, &ctx, &mut identity)?;
                        let f_spa = if mask.detach_spatial_output { f_spa.detach() } else { f_spa };
                        Tensor::cat(&[&f_spa, &f_spe], 1)?
                    }
                    Variant::V4 => {
                        let mut add = |i: usize, h: Tensor| Ok((h + &taps[i])?);
                        spectral.forward(&x_spe, &temb, &ctx, &mut add)?
                    }
                    _ => {
                        let cfg = &self.cfg;
                        let mut fuse = |i: usize, h: Tensor| -> Result<Tensor> {
                            let s = &taps[i];
                            let level = SITE_LEVELS[i];
                            let h1 = if cfg.fmim.enabled {
                                fmim_transfer(s, &h, &cfg.fmim.mask, &cfg.fmim.scale, level)?
                            } else {
                                h
                            };
                            let site = &self.sites[i];
                            let feats = BranchFeatures::new(s.clone(), h1.clone(), level)?;
                            let fused = apfm_forward(&feats, &site.apfm, mask, &ctx)?;
                            Ok((h1 + site.out_proj.forward(&fused, &ctx)?)?)
                        };
                        spectral.forward(&x_spe, &temb, &ctx, &mut fuse)?
                    }
                }
            }
        };
        self.head.forward(&features, &ctx)
    }
}
