//! Seeded piecewise-smooth multi-band scenes for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_reduced, mtf_downsample, upsample_poly, MtfProfile, SceneSample, RATIO};
use crate::error::{Error, Result};
use crate::image::ImagePlane;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    /// Number of spectral end-members mixed into the scene.
    pub materials: usize,
    /// Gaussian blobs per material abundance field.
    pub blobs: usize,
    /// Straight edges per scene.
    pub edges: usize,
    /// Amplitude of the shared multiplicative shading texture.
    pub shading: f64,
    /// Amplitude of PAN-only fine texture.
    pub pan_texture: f64,
    /// Sensor MTF; `None` picks the default for the band count.
    pub profile: Option<MtfProfile>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            materials: 4,
            blobs: 6,
            edges: 3,
            shading: 0.2,
            pan_texture: 0.01,
            profile: None,
        }
    }
}

struct Blob {
    cy: f64,
    cx: f64,
    inv_two_r2: f64,
    amp: f64,
}

struct Edge {
    ny: f64,
    nx: f64,
    offset: f64,
    material: usize,
    amp: f64,
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

fn waves(rng: &mut ChaCha8Rng, count: usize, max_cycles: f64, n: f64) -> Vec<Wave> {
    (0..count)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let cycles = rng.random_range(max_cycles * 0.25..max_cycles);
            Wave {
                fy: angle.sin() * cycles / n,
                fx: angle.cos() * cycles / n,
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: rng.random_range(0.5..1.0),
            }
        })
        .collect()
}

fn eval_waves(ws: &[Wave], y: f64, x: f64) -> f64 {
    let norm: f64 = ws.iter().map(|w| w.amp).sum::<f64>().max(1e-12);
    ws.iter()
        .map(|w| w.amp * (std::f64::consts::TAU * (w.fy * y + w.fx * x) + w.phase).sin())
        .sum::<f64>()
        / norm
}

/// Full-resolution scene: PAN on a `4·size` grid and MS on a `size` grid.
pub fn synth_full(seed: u64, bands: usize, size: usize, opts: &SynthOptions) -> Result<SceneSample> {
    if size == 0 || size % RATIO != 0 {
        return Err(Error::invalid("size", format!("{size} not divisible by {RATIO}")));
    }
    if bands == 0 || opts.materials == 0 {
        return Err(Error::invalid("bands", "need at least one band and one material"));
    }
    let profile = opts.profile.clone().unwrap_or_else(|| MtfProfile::for_bands(bands));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size * RATIO;
    let nf = n as f64;
    let k = opts.materials;

    // End-member spectra: smooth trend plus band-level jitter.
    let signatures: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let base = rng.random_range(0.2..0.7);
            let slope = rng.random_range(-0.3..0.3);
            let curve = rng.random_range(-0.2..0.2);
            (0..bands)
                .map(|b| {
                    let u = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.0 };
                    let v = base + slope * (u - 0.5) + curve * (u - 0.5).powi(2) * 4.0
                        + rng.random_range(-0.05..0.05);
                    v.clamp(0.1, 0.9)
                })
                .collect()
        })
        .collect();

    let blobs: Vec<Vec<Blob>> = (0..k)
        .map(|_| {
            (0..opts.blobs)
                .map(|_| {
                    let r = rng.random_range(nf / 16.0..nf / 4.0);
                    Blob {
                        cy: rng.random_range(0.0..nf),
                        cx: rng.random_range(0.0..nf),
                        inv_two_r2: 1.0 / (2.0 * r * r),
                        amp: rng.random_range(0.5..2.0),
                    }
                })
                .collect()
        })
        .collect();

    let edges: Vec<Edge> = (0..opts.edges)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let (ny, nx) = (angle.sin(), angle.cos());
            let py = rng.random_range(0.2 * nf..0.8 * nf);
            let px = rng.random_range(0.2 * nf..0.8 * nf);
            Edge {
                ny,
                nx,
                offset: ny * py + nx * px,
                material: rng.random_range(0..k),
                amp: rng.random_range(1.5..3.0),
            }
        })
        .collect();

    let shading = waves(&mut rng, 6, nf / 8.0, nf);
    let texture = waves(&mut rng, 8, nf / 2.5, nf);
    let pan_weights: Vec<f64> = (0..bands).map(|_| rng.random_range(0.8..1.2)).collect();
    let wsum: f64 = pan_weights.iter().sum();

    let mut latent = ImagePlane::zeros(bands, n, n);
    let mut pan = ImagePlane::zeros(1, n, n);
    let mut field = vec![0.0; k];
    for y in 0..n {
        for x in 0..n {
            let (yf, xf) = (y as f64, x as f64);
            for (m, f) in field.iter_mut().enumerate() {
                *f = blobs[m]
                    .iter()
                    .map(|b| {
                        let d2 = (yf - b.cy).powi(2) + (xf - b.cx).powi(2);
                        b.amp * (-d2 * b.inv_two_r2).exp()
                    })
                    .sum::<f64>();
            }
            for e in &edges {
                // Soft step over about one fine pixel.
                let s = e.ny * yf + e.nx * xf - e.offset;
                field[e.material] += e.amp / (1.0 + (-2.0 * s).exp());
            }
            let fmax = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = field.iter().map(|f| ((f - fmax) * 4.0).exp()).collect();
            let wnorm: f64 = weights.iter().sum();
            let shade = 1.0 - opts.shading * 0.5 * (1.0 - eval_waves(&shading, yf, xf));
            let mut p = 0.0;
            for b in 0..bands {
                let v = shade
                    * weights
                        .iter()
                        .zip(&signatures)
                        .map(|(w, s)| w * s[b])
                        .sum::<f64>()
                    / wnorm;
                latent.data_mut()[[b, y, x]] = v;
                p += pan_weights[b] * v;
            }
            let p = p / wsum + opts.pan_texture * eval_waves(&texture, yf, xf);
            pan.data_mut()[[0, y, x]] = p.clamp(0.0, 1.0);
        }
    }

    let ms = mtf_downsample(&latent, &profile, RATIO)?;
    let lms = upsample_poly(&ms, RATIO)?.clamp(0.0, 1.0);
    Ok(SceneSample {
        gt: None,
        pan,
        ms,
        lms,
    })
}

/// Reduced-resolution synthetic sample of `size × size` reference pixels.
pub fn synth_scene(seed: u64, bands: usize, size: usize) -> Result<SceneSample> {
    synth_scene_with(seed, bands, size, &SynthOptions::default())
}

pub fn synth_scene_with(
    seed: u64,
    bands: usize,
    size: usize,
    opts: &SynthOptions,
) -> Result<SceneSample> {
    let profile = opts.profile.clone().unwrap_or_else(|| MtfProfile::for_bands(bands));
    let full = synth_full(seed, bands, size, opts)?;
    make_reduced(&full, &profile)
}
