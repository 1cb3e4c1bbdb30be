//! Training loop: L1 residual loss, AdamW, EMA tracking and the branch-wise
//! alternating fine-tuning schedule.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::apfm::DetachMask;
use crate::data::{SceneSample, RATIO};
use crate::diffusion::{q_sample_batched, standard_normal, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{stack_to_tensor, ImagePlane};
use crate::network::{Checkpoint, ConditionBundle, Group, NetworkConfig, ParamStore, SsdiffNet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub finetune_lr: f64,
    pub batch_size: usize,
    /// Last iteration of the whole run, fine-tuning included.
    pub total_iters: usize,
    /// Iterations up to and including this one train both branches jointly;
    /// the rest alternate between branches.
    pub finetune_start: usize,
    pub ema_decay: f64,
    /// Ramp the EMA decay as `min(decay, (1+n)/(10+n))` over the first
    /// updates so short runs do not average in the initialization.
    pub ema_warmup: bool,
    /// Iterations per branch window during fine-tuning.
    pub alternation_period: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Square training crop on the PAN grid (a multiple of 4); `None` trains
    /// on whole scenes.
    pub crop: Option<usize>,
    /// Save a checkpoint every this many iterations (0 disables periodic
    /// saves; the final one is always written).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            finetune_lr: 1e-4,
            batch_size: 12,
            total_iters: 2200,
            finetune_start: 2000,
            ema_decay: 0.9999,
            ema_warmup: true,
            alternation_period: 50,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            crop: None,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn finetune_iters(&self) -> usize {
        self.total_iters.saturating_sub(self.finetune_start)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, reason: String| {
            Err(Error::Config {
                key: format!("train.{key}"),
                reason,
            })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err("lr", format!("{} must be positive", self.lr));
        }
        if !(self.finetune_lr > 0.0 && self.finetune_lr.is_finite()) {
            return err("finetune_lr", format!("{} must be positive", self.finetune_lr));
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be positive".into());
        }
        if self.finetune_start > self.total_iters {
            return err(
                "finetune_start",
                format!("{} exceeds total_iters = {}", self.finetune_start, self.total_iters),
            );
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return err("ema_decay", format!("{} not in (0, 1)", self.ema_decay));
        }
        if self.alternation_period == 0 {
            return err("alternation_period", "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return err("beta1", "betas must lie in [0, 1)".into());
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 {
            return err("eps", "eps must be positive and weight_decay non-negative".into());
        }
        if let Some(c) = self.crop {
            if c == 0 || c % RATIO != 0 {
                return err("crop", format!("{c} must be a positive multiple of {RATIO}"));
            }
        }
        Ok(())
    }
}

/// Mean absolute error over all elements.
pub fn loss_simple(x0_hat: &ImagePlane, x0: &ImagePlane) -> Result<f64> {
    x0_hat.ensure_same_shape("loss_simple", x0)?;
    let n = x0.data().len() as f64;
    Ok(x0_hat.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Differentiable mean absolute error between two equally shaped tensors.
pub fn loss_simple_tensor(x0_hat: &Tensor, x0: &Tensor) -> Result<Tensor> {
    if x0_hat.dims() != x0.dims() {
        return Err(Error::shape("loss_simple", x0.dims(), x0_hat.dims()));
    }
    Ok((x0_hat - x0)?.abs()?.mean_all()?)
}

/// Detach mask for a 1-based iteration. The first fine-tuning window trains
/// the spectral branch with the spatial one frozen; windows then alternate.
pub fn lbaf_schedule(iteration: usize, cfg: &TrainConfig) -> DetachMask {
    if iteration <= cfg.finetune_start {
        return DetachMask::CLEAR;
    }
    let window = (iteration - cfg.finetune_start - 1) / cfg.alternation_period;
    if window % 2 == 0 {
        DetachMask::SPATIAL
    } else {
        DetachMask::SPECTRAL
    }
}

/// Learning rate in effect at a 1-based iteration.
pub fn lr_at(iteration: usize, cfg: &TrainConfig) -> f64 {
    if iteration <= cfg.finetune_start {
        cfg.lr
    } else {
        cfg.finetune_lr
    }
}

pub fn phase_name(mask: DetachMask) -> &'static str {
    match mask.frozen_group() {
        None => "joint",
        Some(Group::Spatial) => "finetune_spectral",
        Some(_) => "finetune_spatial",
    }
}

/// `ema ← decay·ema + (1−decay)·params`, per named tensor.
pub fn ema_update(
    ema: &mut BTreeMap<String, Tensor>,
    params: &BTreeMap<String, Tensor>,
    decay: f64,
) -> Result<()> {
    if ema.len() != params.len() {
        return Err(Error::invalid("ema", format!("{} entries vs {} params", ema.len(), params.len())));
    }
    for (name, e) in ema.iter_mut() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::invalid("ema", format!("parameter {name:?} missing")))?;
        if p.dims() != e.dims() {
            return Err(Error::shape("ema_update", e.dims(), p.dims()));
        }
        // Detached so the running average never chains autograd history.
        *e = (e.affine(decay, 0.0)? + p.affine(1.0 - decay, 0.0)?)?.detach();
    }
    Ok(())
}

/// Decay actually applied at the `n`-th update (0-based).
pub fn ema_effective_decay(decay: f64, n: u64, warmup: bool) -> f64 {
    if warmup {
        decay.min((1.0 + n as f64) / (10.0 + n as f64))
    } else {
        decay
    }
}

/// AdamW with decoupled weight decay and per-parameter step counts, so a
/// parameter frozen for a while resumes with correct bias correction.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    steps: BTreeMap<String, u64>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            ..Self::default()
        }
    }

    pub fn steps(&self, name: &str) -> u64 {
        self.steps.get(name).copied().unwrap_or(0)
    }

    /// Updates every parameter that has a gradient and is not in `frozen`.
    /// Returns the number of tensors updated.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64, frozen: Option<Group>) -> Result<usize> {
        let mut updated = 0;
        for (name, entry) in store.entries() {
            if Some(entry.group) == frozen {
                continue;
            }
            let Some(g) = grads.get(entry.var.as_tensor()) else {
                continue;
            };
            // Gradients carry their own op graph; the moments must not keep it
            // (and with it every activation) alive across steps.
            let g = g.detach();
            let m = match self.m.get(name) {
                Some(m) => (m.affine(self.beta1, 0.0)? + g.affine(1.0 - self.beta1, 0.0)?)?,
                None => g.affine(1.0 - self.beta1, 0.0)?,
            };
            let v = match self.v.get(name) {
                Some(v) => (v.affine(self.beta2, 0.0)? + g.sqr()?.affine(1.0 - self.beta2, 0.0)?)?,
                None => g.sqr()?.affine(1.0 - self.beta2, 0.0)?,
            };
            let t = self.steps(name) + 1;
            let bc1 = 1.0 - self.beta1.powi(t as i32);
            let bc2 = 1.0 - self.beta2.powi(t as i32);
            let denom = (v.affine(1.0 / bc2, 0.0)?.sqrt()? + self.eps)?;
            let update = m.affine(lr / bc1, 0.0)?.div(&denom)?;
            let p = entry.var.as_tensor();
            let next = (p.affine(1.0 - lr * self.weight_decay, 0.0)? - update)?;
            entry.var.set(&next)?;
            self.m.insert(name.to_string(), m.detach());
            self.v.insert(name.to_string(), v.detach());
            self.steps.insert(name.to_string(), t);
            updated += 1;
        }
        Ok(updated)
    }

    fn export(&self, aux: &mut BTreeMap<String, Tensor>) {
        for (k, t) in &self.m {
            aux.insert(format!("opt.m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            aux.insert(format!("opt.v.{k}"), t.clone());
        }
    }

    fn import(&mut self, aux: &BTreeMap<String, Tensor>, steps: BTreeMap<String, u64>) {
        for (k, t) in aux {
            if let Some(name) = k.strip_prefix("opt.m.") {
                self.m.insert(name.to_string(), t.clone());
            } else if let Some(name) = k.strip_prefix("opt.v.") {
                self.v.insert(name.to_string(), t.clone());
            }
        }
        self.steps = steps;
    }
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
    pub phase: String,
}

/// Trainer state stored alongside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub iteration: usize,
    pub ema_updates: u64,
    pub adam_steps: BTreeMap<String, u64>,
}

/// A batch on the PAN grid: `gt`, `lrms_up` are `(n, B, h, w)`, `pan` is
/// `(n, 1, h, w)`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub gt: Tensor,
    pub pan: Tensor,
    pub lrms_up: Tensor,
}

impl Batch {
    /// Stacks whole scenes; every sample needs `gt`.
    pub fn from_samples(samples: &[SceneSample], dtype: DType, device: &Device) -> Result<Self> {
        let mut gt = Vec::with_capacity(samples.len());
        for s in samples {
            s.validate()?;
            gt.push(s.gt.clone().ok_or_else(|| Error::Dataset {
                key: "gt".into(),
                reason: "training needs reference images".into(),
            })?);
        }
        let pan: Vec<ImagePlane> = samples.iter().map(|s| s.pan.clone()).collect();
        let lms: Vec<ImagePlane> = samples.iter().map(|s| s.lms.clone()).collect();
        Ok(Self {
            gt: stack_to_tensor(&gt, dtype, device)?,
            pan: stack_to_tensor(&pan, dtype, device)?,
            lrms_up: stack_to_tensor(&lms, dtype, device)?,
        })
    }
}

/// Per-scene tensors kept resident for batch assembly.
#[derive(Debug, Clone)]
struct SceneTensors {
    gt: Tensor,
    pan: Tensor,
    lms: Tensor,
}

/// RNG for one iteration: independent of how many draws earlier iterations
/// made, so a resumed run replays the same batches and noise.
pub fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// Differentiable training objective for fixed timesteps and noise: noise
/// the scaled residual, predict it and take the L1 loss of the implied
/// HrMSI against `gt`.
pub fn training_loss(
    net: &SsdiffNet,
    batch: &Batch,
    sched: &NoiseSchedule,
    ts: &[usize],
    eps: &Tensor,
    mask: DetachMask,
) -> Result<Tensor> {
    let k = net.config().residual_scale;
    let z0 = (&batch.gt - &batch.lrms_up)?.affine(k, 0.0)?;
    let x_t = q_sample_batched(&z0, ts, eps, sched)?;
    let bundle = ConditionBundle {
        pan: batch.pan.clone(),
        lrms_up: batch.lrms_up.clone(),
        x_t,
    };
    let x0_hat = (net.denoise(&bundle, ts, mask)?.affine(1.0 / k, 0.0)? + &batch.lrms_up)?;
    loss_simple_tensor(&x0_hat, &batch.gt)
}

/// One optimization step on a prepared batch: noise the scaled residual,
/// predict it, take the L1 loss of the implied HrMSI against `gt` and update
/// the trainable parameters.
/// Returns the loss; on a non-finite loss nothing is updated.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    net: &SsdiffNet,
    opt: &mut AdamW,
    batch: &Batch,
    sched: &NoiseSchedule,
    mask: DetachMask,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let n = batch.gt.dim(0)?;
    let ts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=sched.steps())).collect();
    let eps = standard_normal(batch.gt.dims(), batch.gt.dtype(), batch.gt.device(), rng)?;
    let loss = training_loss(net, batch, sched, &ts, &eps, mask)?;
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grads = loss.backward()?;
    opt.step(net.params(), &grads, lr, mask.frozen_group())?;
    Ok(value)
}

pub struct Trainer {
    net: SsdiffNet,
    opt: AdamW,
    ema: BTreeMap<String, Tensor>,
    ema_updates: u64,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    scenes: Vec<SceneTensors>,
    size: (usize, usize),
    iteration: usize,
}

impl Trainer {
    pub fn new(
        net_cfg: &NetworkConfig,
        cfg: &TrainConfig,
        sched: NoiseSchedule,
        samples: &[SceneSample],
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        cfg.validate()?;
        let net = SsdiffNet::new(net_cfg, cfg.seed, dtype, device)?;
        let ema = net.params().snapshot()?;
        Self::assemble(net, AdamW::new(cfg), ema, 0, sched, cfg, samples, 0)
    }

    /// Restores a trainer from a checkpoint written by [`Trainer::checkpoint`];
    /// the next [`Trainer::step`] continues exactly where the saved run was.
    pub fn resume(ckpt: &Checkpoint, cfg: &TrainConfig, samples: &[SceneSample], dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let state: TrainState = ckpt
            .metadata
            .get("train_state")
            .ok_or_else(|| Error::Serde("checkpoint carries no trainer state".into()))
            .and_then(|s| serde_json::from_str(s).map_err(|e| Error::Serde(e.to_string())))?;
        let net = SsdiffNet::new(&ckpt.network, cfg.seed, dtype, device)?;
        net.params().load(&ckpt.params)?;
        let ema = ckpt
            .ema
            .clone()
            .ok_or_else(|| Error::Serde("checkpoint carries no EMA weights".into()))?;
        let mut opt = AdamW::new(cfg);
        opt.import(&ckpt.aux, state.adam_steps.clone());
        Self::assemble(net, opt, ema, state.ema_updates, ckpt.schedule.clone(), cfg, samples, state.iteration)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        net: SsdiffNet,
        opt: AdamW,
        ema: BTreeMap<String, Tensor>,
        ema_updates: u64,
        sched: NoiseSchedule,
        cfg: &TrainConfig,
        samples: &[SceneSample],
        iteration: usize,
    ) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Dataset {
            key: "gt".into(),
            reason: "training set is empty".into(),
        })?;
        let size = first.size();
        let bands = net.config().bands;
        let (dtype, device) = (net.dtype(), net.device().clone());
        let mut scenes = Vec::with_capacity(samples.len());
        for s in samples {
            s.validate()?;
            let gt = s.gt.as_ref().ok_or_else(|| Error::Dataset {
                key: "gt".into(),
                reason: "training needs reduced-resolution samples with ground truth".into(),
            })?;
            if s.bands() != bands {
                return Err(Error::Dataset {
                    key: "gt".into(),
                    reason: format!("{} bands but the network expects {bands}", s.bands()),
                });
            }
            if s.size() != size {
                return Err(Error::Dataset {
                    key: "pan".into(),
                    reason: format!("scene size {:?} differs from {:?}", s.size(), size),
                });
            }
            scenes.push(SceneTensors {
                gt: gt.to_tensor(dtype, &device)?,
                pan: s.pan.to_tensor(dtype, &device)?,
                lms: s.lms.to_tensor(dtype, &device)?,
            });
        }
        if let Some(c) = cfg.crop {
            if c > size.0 || c > size.1 {
                return Err(Error::Config {
                    key: "train.crop".into(),
                    reason: format!("{c} exceeds scene size {size:?}"),
                });
            }
        }
        if size.0 % net.config().size_multiple() != 0 || size.1 % net.config().size_multiple() != 0 {
            return Err(Error::Dataset {
                key: "pan".into(),
                reason: format!("scene size {size:?} not a multiple of {}", net.config().size_multiple()),
            });
        }
        Ok(Self {
            net,
            opt,
            ema,
            ema_updates,
            sched,
            cfg: cfg.clone(),
            scenes,
            size,
            iteration,
        })
    }

    pub fn net(&self) -> &SsdiffNet {
        &self.net
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn ema(&self) -> &BTreeMap<String, Tensor> {
        &self.ema
    }

    /// Draws the batch of a given iteration from its RNG.
    fn draw_batch(&self, rng: &mut ChaCha8Rng) -> Result<Batch> {
        let (h, w) = self.size;
        let mut gt = Vec::with_capacity(self.cfg.batch_size);
        let mut pan = Vec::with_capacity(self.cfg.batch_size);
        let mut lms = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let s = &self.scenes[rng.random_range(0..self.scenes.len())];
            match self.cfg.crop {
                Some(c) => {
                    let y0 = RATIO * rng.random_range(0..=(h - c) / RATIO);
                    let x0 = RATIO * rng.random_range(0..=(w - c) / RATIO);
                    let cut = |t: &Tensor| -> Result<Tensor> { Ok(t.narrow(2, y0, c)?.narrow(3, x0, c)?) };
                    gt.push(cut(&s.gt)?);
                    pan.push(cut(&s.pan)?);
                    lms.push(cut(&s.lms)?);
                }
                None => {
                    gt.push(s.gt.clone());
                    pan.push(s.pan.clone());
                    lms.push(s.lms.clone());
                }
            }
        }
        Ok(Batch {
            gt: Tensor::cat(&gt, 0)?,
            pan: Tensor::cat(&pan, 0)?,
            lrms_up: Tensor::cat(&lms, 0)?,
        })
    }

    /// Runs the next iteration and updates the EMA weights.
    pub fn step(&mut self) -> Result<StepRecord> {
        let iter = self.iteration + 1;
        let mut rng = iteration_rng(self.cfg.seed, iter);
        let batch = self.draw_batch(&mut rng)?;
        let mask = lbaf_schedule(iter, &self.cfg);
        let lr = lr_at(iter, &self.cfg);
        let loss = train_step(&self.net, &mut self.opt, &batch, &self.sched, mask, lr, &mut rng)?;
        let decay = ema_effective_decay(self.cfg.ema_decay, self.ema_updates, self.cfg.ema_warmup);
        let current: BTreeMap<String, Tensor> = self
            .net
            .params()
            .entries()
            .map(|(k, e)| (k.to_string(), e.var.as_tensor().detach()))
            .collect();
        ema_update(&mut self.ema, &current, decay)?;
        self.ema_updates += 1;
        self.iteration = iter;
        Ok(StepRecord {
            iter,
            loss,
            lr,
            phase: phase_name(mask).to_string(),
        })
    }

    /// Full resumable state: raw and EMA weights, optimizer moments and
    /// counters.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.net.config().clone(), self.sched.clone(), self.net.params().snapshot()?);
        ck.ema = Some(self.ema.clone());
        self.opt.export(&mut ck.aux);
        let state = TrainState {
            iteration: self.iteration,
            ema_updates: self.ema_updates,
            adam_steps: self.opt.steps.clone(),
        };
        ck.metadata
            .insert("train_state".into(), serde_json::to_string(&state).map_err(|e| Error::Serde(e.to_string()))?);
        ck.metadata
            .insert("train_config".into(), serde_json::to_string(&self.cfg).map_err(|e| Error::Serde(e.to_string()))?);
        Ok(ck)
    }

    /// Runs until `total_iters`, appending one JSON record per iteration to
    /// `log` and saving `checkpoint_path` periodically and at the end. A
    /// failing step leaves the last saved checkpoint untouched.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>, checkpoint_path: Option<&Path>) -> Result<Vec<StepRecord>> {
        let mut records = Vec::with_capacity(self.cfg.total_iters.saturating_sub(self.iteration));
        while self.iteration < self.cfg.total_iters {
            let rec = self.step()?;
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&rec).map_err(|e| Error::Serde(e.to_string()))?;
                writeln!(w, "{line}")?;
            }
            let every = self.cfg.checkpoint_every;
            if let Some(p) = checkpoint_path {
                if (every > 0 && rec.iter % every == 0) || rec.iter == self.cfg.total_iters {
                    self.checkpoint()?.save(p)?;
                }
            }
            records.push(rec);
        }
        Ok(records)
    }
}
