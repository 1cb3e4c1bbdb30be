//! Trains the dual-branch denoiser on a handful of synthetic scenes and
//! writes a resumable checkpoint.
//!
//!     cargo run --release --example train_toy -- [iterations] [out.safetensors]

use candle_core::{DType, Device};
use ssdiff::data::synth_scene;
use ssdiff::diffusion::NoiseSchedule;
use ssdiff::network::NetworkConfig;
use ssdiff::training::{TrainConfig, Trainer};

fn main() -> ssdiff::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().map(|s| s.parse().expect("iterations")).unwrap_or(200);
    let out = args.next().unwrap_or_else(|| "toy.safetensors".into());

    let samples: Vec<_> = (0..8).map(|i| synth_scene(i, 4, 32)).collect::<Result<_, _>>()?;
    let net = NetworkConfig {
        bands: 4,
        base_channels: 8,
        normalize_conditions: true,
        ..NetworkConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: 8,
        crop: Some(16),
        total_iters: iters,
        finetune_start: iters * 9 / 10,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&net, &cfg, NoiseSchedule::default_linear(), &samples, DType::F32, &Device::Cpu)?;
    println!("{} parameters", trainer.net().param_count());
    let records = trainer.run(None, Some(std::path::Path::new(&out)))?;
    for r in records.iter().filter(|r| r.iter == 1 || r.iter % 50 == 0) {
        println!("iter {:4} {:18} loss {:.5} lr {:.0e}", r.iter, r.phase, r.loss, r.lr);
    }
    println!("checkpoint written to {out}");
    Ok(())
}
