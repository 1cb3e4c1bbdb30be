//! Scores the interpolation baseline of a few synthetic scenes at reduced
//! resolution (SAM, ERGAS, Q2ⁿ, SCC) and at full resolution (Dλ, Ds, HQNR).
//!
//!     cargo run --release --example quality_metrics

use ssdiff::data::{synth_full, synth_scene, upsample_poly, MtfProfile, SynthOptions, RATIO};
use ssdiff::metrics::{DLambdaVariant, MetricsReport, ResolutionMode};

fn main() -> ssdiff::error::Result<()> {
    let bands = 8;
    let mut reduced = MetricsReport::new(ResolutionMode::Reduced);
    for seed in 0..4 {
        let s = synth_scene(seed, bands, 64)?;
        reduced.push_reduced(&s.lms, s.gt.as_ref().unwrap())?;
    }
    println!("{}", reduced.to_text());

    let profile = MtfProfile::for_bands(bands);
    let mut full = MetricsReport::new(ResolutionMode::Full);
    for seed in 0..4 {
        let s = synth_full(100 + seed, bands, 16, &SynthOptions::default())?;
        let fused = upsample_poly(&s.ms, RATIO)?;
        full.push_full(&fused, &s.ms, &s.pan, &profile, DLambdaVariant::Classic)?;
    }
    println!("{}", full.to_text());
    Ok(())
}
