//! Shared helpers for the integration tests and the acceptance runner:
//! direct-loop metric oracles and one check per acceptance property.
//!
//! Every check returns `Ok(detail)` or `Err(detail)` so the same code backs
//! both the `#[test]` functions and the pass/fail report.
#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use ssdiff::apfm::{make_projections, project_spatial, project_spectral, ApfmParams, BranchFeatures, DetachMask, ProjectionSet};
use ssdiff::data::{mtf_downsample, synth_full, synth_scene, MtfProfile, SynthOptions, RATIO};
use ssdiff::diffusion::{q_sample, standard_normal, x0_to_eps, NoiseSchedule};
use ssdiff::fmim::{high_pass, FourierMask};
use ssdiff::image::ImagePlane;
use ssdiff::metrics::{self, DLambdaVariant};
use ssdiff::network::params::ParamBuilder;
use ssdiff::network::{Ctx, Group, NetworkConfig, ParamStore, SsdiffNet, Variant};
use ssdiff::training::{training_loss, AdamW, Batch, TrainConfig};

pub type Check = Result<String, String>;

pub fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Uniform random image in `[lo, hi)`.
pub fn random_image(rng: &mut impl Rng, bands: usize, h: usize, w: usize, lo: f64, hi: f64) -> ImagePlane {
    let v: Vec<f64> = (0..bands * h * w).map(|_| rng.random_range(lo..hi)).collect();
    ImagePlane::from_vec(bands, h, w, v).unwrap()
}

fn tensor_values(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Fused image whose bands are scaled copies of PAN, with the MS image
/// simulated from it under a band-independent MTF equal to PAN's: the
/// full-resolution indices must report no distortion.
pub fn consistent_triple(seed: u64, bands: usize) -> (ImagePlane, ImagePlane, ImagePlane, MtfProfile) {
    let profile = MtfProfile::uniform(bands, 0.3);
    let full = synth_full(seed, bands, 16, &SynthOptions::default()).unwrap();
    let pan = full.pan.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gains: Vec<f64> = (0..bands).map(|_| rng.random_range(0.6..1.2)).collect();
    let (h, w) = (pan.height(), pan.width());
    let fused = ImagePlane::from_fn(bands, h, w, |(b, y, x)| gains[b] * pan.get(0, y, x));
    let ms = mtf_downsample(&fused, &profile, RATIO).unwrap();
    (fused, ms, pan, profile)
}

/// pred = gt gives ideal reduced-resolution scores, and a self-consistent
/// triple gives ideal full-resolution scores.
pub fn check_metric_identity(scenes: u64) -> Check {
    let (mut worst_ref, mut worst_full) = (0f64, 0f64);
    for seed in 0..scenes {
        let bands = if seed % 2 == 0 { 8 } else { 4 };
        let s = synth_scene(seed, bands, 64).map_err(fail)?;
        let gt = s.gt.as_ref().unwrap();
        let sam = metrics::sam(gt, gt).map_err(fail)?;
        let ergas = metrics::ergas(gt, gt, RATIO as f64).map_err(fail)?;
        let q = metrics::q2n(gt, gt, 32).map_err(fail)?;
        let scc = metrics::scc(gt, gt).map_err(fail)?;
        worst_ref = worst_ref.max(sam.abs()).max(ergas.abs()).max((q - 1.0).abs()).max((scc - 1.0).abs());

        let (fused, ms, pan, profile) = consistent_triple(seed, bands);
        for variant in [DLambdaVariant::Classic, DLambdaVariant::Khan] {
            let f = metrics::full_scores(&fused, &ms, &pan, &profile, variant).map_err(fail)?;
            worst_full = worst_full.max(f.d_lambda.abs()).max(f.d_s.abs()).max((f.hqnr - 1.0).abs());
        }
    }
    ensure(
        worst_ref <= 1e-6 && worst_full <= 1e-3,
        format!("{scenes} scenes: reduced max dev {worst_ref:.2e} (tol 1e-6), full max dev {worst_full:.2e} (tol 1e-3)"),
    )
}

/// Library metrics against the direct-loop oracles on random images.
pub fn check_metric_oracles(seeds: u64) -> Check {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut bump = |k: &'static str, a: f64, b: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max((a - b).abs());
    };
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let bands = if seed % 2 == 0 { 4 } else { 8 };
        let gt = random_image(&mut rng, bands, 8, 8, 0.1, 1.0);
        let pred = random_image(&mut rng, bands, 8, 8, 0.1, 1.0);
        bump("sam", metrics::sam(&pred, &gt).map_err(fail)?, oracles::sam(&pred, &gt));
        bump("ergas", metrics::ergas(&pred, &gt, 4.0).map_err(fail)?, oracles::ergas(&pred, &gt, 4.0));
        bump("q2n", metrics::q2n(&pred, &gt, 4).map_err(fail)?, oracles::q2n(&pred, &gt, 4));
        bump("scc", metrics::scc(&pred, &gt).map_err(fail)?, oracles::scc(&pred, &gt));

        // Full resolution: 8×8 MS against a 32×32 fusion and PAN.
        let ms = random_image(&mut rng, bands, 8, 8, 0.1, 1.0);
        let fused = random_image(&mut rng, bands, 32, 32, 0.1, 1.0);
        let pan = random_image(&mut rng, 1, 32, 32, 0.1, 1.0);
        let profile = MtfProfile::for_bands(bands);
        let dl = metrics::d_lambda(&fused, &ms).map_err(fail)?;
        let ds = metrics::d_s(&fused, &ms, &pan, &profile).map_err(fail)?;
        let pan_lr = mtf_downsample(&pan, &profile, RATIO).map_err(fail)?;
        let (odl, ods) = (oracles::d_lambda(&fused, &ms), oracles::d_s(&fused, &ms, &pan, &pan_lr));
        bump("d_lambda", dl, odl);
        bump("d_s", ds, ods);
        bump("hqnr", metrics::hqnr(dl, ds), (1.0 - odl) * (1.0 - ods));
    }
    let max = worst.values().fold(0f64, |m, v| m.max(*v));
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(max <= 1e-6, format!("{seeds} seeds, max |lib − oracle|: {detail}"))
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Row-by-row softmax attention: `out[i][k] = Σ_j softmax_j(q_i·k_j · scale) v[k][j]`.
fn brute_attention(q: &[Vec<f64>], k: &[Vec<f64>], v_t: &[Vec<f64>], scale: f64) -> Vec<Vec<f64>> {
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            v_t.iter().map(|row| row.iter().zip(&e).map(|(v, p)| v * p / z).sum()).collect()
        })
        .collect()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.squeeze(0).unwrap().to_vec2().unwrap()
}

/// Both projections against per-row evaluation, plus the degenerate sizes.
pub fn check_apfm_projections(seeds: u64) -> Check {
    let (h, w, s, s_prime) = (4, 4, 3, 3);
    let hw = h * w;
    let mut worst = 0f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(DType::F64, Device::Cpu);
        let params = ApfmParams::new(&mut ParamBuilder::new(&mut store, &mut rng, Group::Shared), s, s_prime).map_err(fail)?;
        let feats = BranchFeatures::new(random_tensor(&mut rng, &[1, s, h, w]), random_tensor(&mut rng, &[1, s, h, w]), 0).map_err(fail)?;
        let p = make_projections(&feats, &params, &Ctx::default()).map_err(fail)?;
        let (a, b, c, d) = (rows(&p.t_a), rows(&p.t_b), rows(&p.t_c), rows(&p.t_d));

        let want = brute_attention(&a, &b, &c, 1.0 / (s_prime as f64).sqrt());
        let got = rows(&project_spatial(&p).map_err(fail)?);
        for (g, wv) in got.iter().zip(&want) {
            worst = worst.max(max_abs_diff(g, wv));
        }
        // Spectral attention: queries T_c, keys T_d, values T_aᵀ — whose
        // transpose (the value rows) is T_a itself.
        let want = brute_attention(&c, &d, &a, hw as f64 / (s_prime as f64).powf(1.5));
        let got = rows(&project_spectral(&p).map_err(fail)?);
        for (g, wv) in got.iter().zip(&want) {
            worst = worst.max(max_abs_diff(g, wv));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let single_pixel = ProjectionSet {
        t_a: random_tensor(&mut rng, &[1, 1, 3]),
        t_b: random_tensor(&mut rng, &[1, 1, 3]),
        t_c: random_tensor(&mut rng, &[1, 3, 1]),
        t_d: random_tensor(&mut rng, &[1, 3, 1]),
        s_prime: 3,
    };
    let hw1 = tensor_values(&project_spatial(&single_pixel).map_err(fail)?) == tensor_values(&single_pixel.t_c.t().unwrap());
    let single_channel = ProjectionSet {
        t_a: random_tensor(&mut rng, &[1, 16, 1]),
        t_b: random_tensor(&mut rng, &[1, 16, 1]),
        t_c: random_tensor(&mut rng, &[1, 1, 16]),
        t_d: random_tensor(&mut rng, &[1, 1, 16]),
        s_prime: 1,
    };
    let s1 = tensor_values(&project_spectral(&single_channel).map_err(fail)?) == tensor_values(&single_channel.t_a.t().unwrap());
    ensure(
        worst <= 1e-5 && hw1 && s1,
        format!("{seeds} seeds max dev {worst:.1e} (tol 1e-5); HW=1 → T_cᵀ exact: {hw1}; S'=1 → T_aᵀ exact: {s1}"),
    )
}

/// Small double-precision network for gradient tests.
pub fn micro_net(variant: Variant, seed: u64) -> SsdiffNet {
    let cfg = NetworkConfig {
        bands: 4,
        base_channels: 4,
        time_freq_dim: 8,
        time_embed_dim: 8,
        variant,
        zero_init_head: false,
        normalize_conditions: true,
        ..NetworkConfig::default()
    };
    SsdiffNet::new(&cfg, seed, DType::F64, &Device::Cpu).unwrap()
}

/// A batch of synthetic scenes cropped to `size`, plus fixed timesteps and
/// noise.
pub fn micro_batch(seed: u64, n: usize, size: usize) -> (Batch, Vec<usize>, Tensor) {
    let samples: Vec<_> = (0..n as u64)
        .map(|i| synth_scene(seed * 100 + i, 4, 16).unwrap().crop(0, 0, size).unwrap())
        .collect();
    let batch = Batch::from_samples(&samples, DType::F64, &Device::Cpu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts: Vec<usize> = (0..n).map(|_| rng.random_range(1..=1000)).collect();
    let eps = standard_normal(batch.gt.dims(), DType::F64, &Device::Cpu, &mut rng).unwrap();
    (batch, ts, eps)
}

fn group_grad_stats(net: &SsdiffNet, grads: &candle_core::backprop::GradStore, group: Group) -> (f64, usize, usize) {
    let (mut norm, mut with, mut total) = (0.0, 0, 0);
    for (_, e) in net.params().entries().filter(|(_, e)| e.group == group) {
        total += 1;
        if let Some(g) = grads.get(e.var.as_tensor()) {
            let v = g.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
            norm += v;
            if v > 0.0 {
                with += 1;
            }
        }
    }
    (norm, with, total)
}

fn group_values(net: &SsdiffNet, group: Group) -> BTreeMap<String, Vec<f64>> {
    net.params()
        .entries()
        .filter(|(_, e)| e.group == group)
        .map(|(k, e)| (k.to_string(), tensor_values(e.var.as_tensor())))
        .collect()
}

/// Under each freezing mask the frozen group collects exactly zero gradient,
/// the active one a nonzero gradient, and an optimizer step leaves the frozen
/// weights bit-identical.
pub fn check_detach_invariant(batches: u64) -> Check {
    let sched = NoiseSchedule::default_linear();
    let mut notes = Vec::new();
    for (mask, frozen, active) in [
        (DetachMask::SPATIAL, Group::Spatial, Group::Spectral),
        (DetachMask::SPECTRAL, Group::Spectral, Group::Spatial),
    ] {
        let net = micro_net(Variant::V5, 3);
        let mut opt = AdamW::new(&TrainConfig::default());
        let (mut min_active, mut max_frozen) = (f64::INFINITY, 0f64);
        for b in 0..batches {
            let (batch, ts, eps) = micro_batch(b, 2, 8);
            let loss = training_loss(&net, &batch, &sched, &ts, &eps, mask).map_err(fail)?;
            let grads = loss.backward().map_err(fail)?;
            let (fz, _, _) = group_grad_stats(&net, &grads, frozen);
            let (ac, _, _) = group_grad_stats(&net, &grads, active);
            max_frozen = max_frozen.max(fz);
            min_active = min_active.min(ac);
            let before = group_values(&net, frozen);
            let active_before = group_values(&net, active);
            opt.step(net.params(), &grads, 1e-3, mask.frozen_group()).map_err(fail)?;
            if group_values(&net, frozen) != before {
                return Err(format!("{mask:?}: frozen {frozen:?} weights changed at batch {b}"));
            }
            if group_values(&net, active) == active_before {
                return Err(format!("{mask:?}: active {active:?} weights did not move at batch {b}"));
            }
        }
        if max_frozen != 0.0 || !(min_active > 0.0) {
            return Err(format!("{mask:?}: frozen |g| {max_frozen:e}, active |g| min {min_active:e}"));
        }
        notes.push(format!("{frozen:?} frozen: |g|=0, active min Σ|g| {min_active:.1e}"));
    }
    Ok(format!("{batches} batches per mask; {}; frozen weights bit-identical after steps", notes.join("; ")))
}

/// q_sample → x0_to_eps recovers the noise at every timestep, and ᾱ decays
/// monotonically to below 1e-4.
pub fn check_diffusion_algebra() -> Check {
    let sched = NoiseSchedule::default_linear();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = random_tensor(&mut rng, &[2, 4, 8, 8]);
    let eps = standard_normal(&[2, 4, 8, 8], DType::F64, &Device::Cpu, &mut rng).map_err(fail)?;
    let e = tensor_values(&eps);
    let e_norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut worst = 0f64;
    for t in 1..=sched.steps() {
        let x_t = q_sample(&x0, t, &eps, &sched).map_err(fail)?;
        let rec = tensor_values(&x0_to_eps(&x0, &x_t, t, &sched).map_err(fail)?);
        let err = rec.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / e_norm;
        worst = worst.max(err);
    }
    let ab = sched.alpha_bars();
    let monotone = ab.windows(2).all(|w| w[1] < w[0]);
    let last = ab[ab.len() - 1];
    ensure(
        worst <= 1e-5 && monotone && last < 1e-4,
        format!("T={}: max rel ε error {worst:.1e}; ᾱ strictly decreasing: {monotone}; ᾱ_T = {last:.2e}", sched.steps()),
    )
}

fn fft2_energy(x: &[f64], h: usize, w: usize) -> f64 {
    let mut planner = FftPlanner::<f64>::new();
    let (fr, fc) = (planner.plan_fft_forward(w), planner.plan_fft_forward(h));
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in buf.chunks_mut(w) {
        fr.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = buf[r * w + c];
        }
        fc.process(&mut col);
        for r in 0..h {
            buf[r * w + c] = col[r];
        }
    }
    buf.iter().map(|z| z.norm_sqr()).sum::<f64>() / (h * w) as f64
}

/// Identity-mask round trip, DC annihilation and energy preservation.
pub fn check_fmim() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (h, w) = (16, 12);
    let x = random_tensor(&mut rng, &[2, 3, h, w]);
    let y = high_pass(&x, &FourierMask::identity()).map_err(fail)?;
    let (xv, yv) = (tensor_values(&x), tensor_values(&y));
    let round_trip = max_abs_diff(&xv, &yv);

    let c = Tensor::full(0.7f64, (1, 2, h, w), &Device::Cpu).map_err(fail)?;
    let hp = high_pass(&c, &FourierMask { threshold_radius: 0.25, low_gain: 0.0 }).map_err(fail)?;
    let dc = tensor_values(&hp).iter().fold(0f64, |m, v| m.max(v.abs()));

    let mut parseval = 0f64;
    for (xm, ym) in xv.chunks(h * w).zip(yv.chunks(h * w)) {
        let spatial: f64 = xm.iter().map(|v| v * v).sum();
        let spectral = fft2_energy(xm, h, w);
        let out: f64 = ym.iter().map(|v| v * v).sum();
        parseval = parseval.max((spatial - spectral).abs() / spatial).max((out - spatial).abs() / spatial);
    }
    ensure(
        round_trip < 1e-5 && dc < 1e-6 && parseval < 1e-5,
        format!("identity round trip {round_trip:.1e}; constant input residue {dc:.1e}; energy mismatch {parseval:.1e}"),
    )
}

/// Central differences of the end-to-end training loss against autograd on
/// an 8×8, 4-band f64 network.
pub fn check_gradients() -> Check {
    let net = micro_net(Variant::V5, 21);
    let sched = NoiseSchedule::default_linear();
    let (batch, ts, eps) = micro_batch(42, 2, 8);
    let loss_of = |net: &SsdiffNet| -> f64 {
        training_loss(net, &batch, &sched, &ts, &eps, DetachMask::CLEAR).unwrap().to_scalar::<f64>().unwrap()
    };
    let grads = training_loss(&net, &batch, &sched, &ts, &eps, DetachMask::CLEAR)
        .map_err(fail)?
        .backward()
        .map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    let (mut checked, mut worst, mut worst_name) = (0usize, 0f64, String::new());
    for (name, e) in net.params().entries() {
        let Some(g) = grads.get(e.var.as_tensor()) else {
            return Err(format!("{name} received no gradient"));
        };
        let g = tensor_values(g);
        let base = tensor_values(e.var.as_tensor());
        let shape = e.var.as_tensor().shape().clone();
        for _ in 0..2 {
            let i = rng.random_range(0..base.len());
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                set_var(&e.var, v, &shape);
                loss_of(&net)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            set_var(&e.var, base.clone(), &shape);
            let scale = numeric.abs().max(g[i].abs());
            if scale < 1e-7 {
                continue;
            }
            let rel = (numeric - g[i]).abs() / scale;
            if rel > worst {
                worst = rel;
                worst_name = format!("{name}[{i}]");
            }
            checked += 1;
        }
    }
    ensure(
        worst <= 1e-3 && checked > 0,
        format!("{checked} coordinates over {} tensors; worst rel err {worst:.1e} at {worst_name}", net.params().len()),
    )
}

fn set_var(var: &Var, values: Vec<f64>, shape: &candle_core::Shape) {
    var.set(&Tensor::from_vec(values, shape, &Device::Cpu).unwrap()).unwrap();
}

/// V5 and V2 parameter counts of the default configuration against the
/// reference budgets (±5%).
pub fn check_param_budget() -> Check {
    let count = |variant| {
        let cfg = NetworkConfig { variant, ..NetworkConfig::default() };
        SsdiffNet::new(&cfg, 0, DType::F32, &Device::Cpu).unwrap().param_count()
    };
    let (v5, v2) = (count(Variant::V5), count(Variant::V2));
    let dev = |n: usize, target: f64| (n as f64 - target).abs() / target;
    let (d5, d2) = (dev(v5, 1_420_000.0), dev(v2, 654_000.0));
    ensure(
        d5 <= 0.05 && d2 <= 0.05,
        format!("V5 {v5} ({:+.1}% of 1420K), V2 {v2} ({:+.1}% of 654K)", 100.0 * (v5 as f64 / 1_420_000.0 - 1.0), 100.0 * (v2 as f64 / 654_000.0 - 1.0)),
    )
}
