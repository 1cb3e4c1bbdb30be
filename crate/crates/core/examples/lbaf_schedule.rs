//! The branch-wise alternating fine-tuning schedule: which branch is frozen,
//! and at which learning rate, around the switch from joint training.
//!
//!     cargo run --release --example lbaf_schedule

use ssdiff::training::{lbaf_schedule, lr_at, phase_name, TrainConfig};

fn main() {
    let cfg = TrainConfig {
        total_iters: 2200,
        finetune_start: 2000,
        alternation_period: 50,
        ..TrainConfig::default()
    };
    println!("{} fine-tuning iterations after {} joint ones", cfg.finetune_iters(), cfg.finetune_start);
    let mut last = "";
    for iter in 1..=cfg.total_iters {
        let mask = lbaf_schedule(iter, &cfg);
        let phase = phase_name(mask);
        if phase != last {
            println!("iter {iter:5}: {phase:18} frozen={:?} lr={:.0e}", mask.frozen_group(), lr_at(iter, &cfg));
            last = phase;
        }
    }
}
