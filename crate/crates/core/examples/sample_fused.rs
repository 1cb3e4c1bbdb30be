//! Samples fused images with DDIM from a checkpoint written by `train_toy`
//! and compares them with the interpolation baseline.
//!
//!     cargo run --release --example train_toy -- 200 toy.safetensors
//!     cargo run --release --example sample_fused -- toy.safetensors [steps]

use candle_core::Device;
use ssdiff::cli::net_from_checkpoint;
use ssdiff::data::synth_scene;
use ssdiff::metrics;
use ssdiff::network::Checkpoint;
use ssdiff::sampling::{sample_scenes, SampleOptions};

fn main() -> ssdiff::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "toy.safetensors".into());
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(20);

    let ck = Checkpoint::load(&path, &Device::Cpu)?;
    let net = net_from_checkpoint(&ck, false, &Device::Cpu)?;
    let samples: Vec<_> = (0..4).map(|i| synth_scene(i, ck.network.bands, 32)).collect::<Result<_, _>>()?;
    let opts = SampleOptions { steps, ..SampleOptions::default() };
    let fused = sample_scenes(&net, &ck.schedule, &samples, &opts)?;
    for (i, (f, s)) in fused.iter().zip(&samples).enumerate() {
        let gt = s.gt.as_ref().unwrap();
        println!(
            "scene {i}: SAM {:.3} (lms {:.3}), ERGAS {:.3} (lms {:.3})",
            metrics::sam(f, gt)?,
            metrics::sam(&s.lms, gt)?,
            metrics::ergas(f, gt, 4.0)?,
            metrics::ergas(&s.lms, gt, 4.0)?
        );
    }
    Ok(())
}
