//! Fourier high-pass transfer from the spatial branch and per-level channel
//! scaling of the spectral branch.
//!
//!     cargo run --release --example fmim_highpass

use candle_core::{DType, Device};
use ssdiff::data::synth_scene;
use ssdiff::fmim::{fmim_transfer, high_pass, ChannelScale, FourierMask};

fn energy(t: &candle_core::Tensor) -> ssdiff::error::Result<f64> {
    Ok(t.sqr()?.sum_all()?.to_scalar::<f64>()?)
}

fn main() -> ssdiff::error::Result<()> {
    let s = synth_scene(3, 4, 64)?;
    let pan = s.pan.to_tensor(DType::F64, &Device::Cpu)?;
    let total = energy(&pan)?;
    for radius in [0.05, 0.25, 0.5] {
        let hp = high_pass(&pan, &FourierMask { threshold_radius: radius, low_gain: 0.0 })?;
        println!("cut-off {radius:.2} of Nyquist keeps {:.3}% of PAN energy", 100.0 * energy(&hp)? / total);
    }
    let lms = s.lms.to_tensor(DType::F64, &Device::Cpu)?;
    let pan4 = pan.repeat((1, 4, 1, 1))?;
    for level in 0..3 {
        let out = fmim_transfer(&pan4, &lms, &FourierMask::default(), &ChannelScale::default(), level)?;
        let ratio = energy(&out)? / energy(&lms)?;
        println!("level {level}: transferred/spectral energy ratio {ratio:.3}");
    }
    Ok(())
}
