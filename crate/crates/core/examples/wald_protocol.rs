//! Synthesizes a full-resolution scene and degrades it by the sensor ratio,
//! so the original MS image becomes the reference of a reduced sample.
//!
//!     cargo run --release --example wald_protocol

use ssdiff::data::{make_reduced, synth_full, MtfProfile, SynthOptions};
use ssdiff::metrics;

fn main() -> ssdiff::error::Result<()> {
    let bands = 8;
    let full = synth_full(7, bands, 32, &SynthOptions::default())?;
    println!("full resolution: PAN {:?}, MS {:?}", full.pan.shape(), full.ms.shape());

    let profile = MtfProfile::for_bands(bands);
    println!("MTF gains at Nyquist: MS {:?}, PAN {}", profile.gains_for(bands)?, profile.pan_gain);
    let reduced = make_reduced(&full, &profile)?;
    let gt = reduced.gt.as_ref().expect("reduced samples carry a reference");
    println!(
        "reduced resolution: PAN {:?}, MS {:?}, LrMSI↑ {:?}, reference {:?}",
        reduced.pan.shape(),
        reduced.ms.shape(),
        reduced.lms.shape(),
        gt.shape()
    );
    println!(
        "interpolation baseline: SAM {:.3}°, ERGAS {:.3}",
        metrics::sam(&reduced.lms, gt)?,
        metrics::ergas(&reduced.lms, gt, 4.0)?
    );
    Ok(())
}
