//! Short same-seed training runs of every architecture variant, reporting
//! parameter counts and trailing losses.
//!
//!     cargo run --release --example ablation -- [iterations]

use candle_core::{DType, Device};
use ssdiff::data::synth_scene;
use ssdiff::diffusion::NoiseSchedule;
use ssdiff::network::{NetworkConfig, Variant};
use ssdiff::training::{TrainConfig, Trainer};

fn main() -> ssdiff::error::Result<()> {
    let iters: usize = std::env::args().nth(1).map(|s| s.parse().expect("iterations")).unwrap_or(100);
    let samples: Vec<_> = (0..8).map(|i| synth_scene(i, 4, 32)).collect::<Result<_, _>>()?;
    let cfg = TrainConfig {
        batch_size: 4,
        crop: Some(16),
        total_iters: iters,
        finetune_start: iters,
        ..TrainConfig::default()
    };
    for variant in Variant::ALL {
        let net = NetworkConfig {
            bands: 4,
            base_channels: 8,
            variant,
            normalize_conditions: true,
            ..NetworkConfig::default()
        };
        let mut trainer = Trainer::new(&net, &cfg, NoiseSchedule::default_linear(), &samples, DType::F32, &Device::Cpu)?;
        let records = trainer.run(None, None)?;
        let tail = &records[records.len().saturating_sub(25)..];
        let loss = tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64;
        println!("{}: {:7} params, loss {:.5} → {:.5}", variant.as_str(), trainer.net().param_count(), records[0].loss, loss);
    }
    Ok(())
}
