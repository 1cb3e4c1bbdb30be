//! The linear noise schedule, forward noising of a residual and its exact
//! inversion, and the strided timesteps used by DDIM.
//!
//!     cargo run --release --example diffusion_schedule

use candle_core::{DType, Device};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdiff::diffusion::{ddim_subsequence, q_sample, residual_wrap, standard_normal, x0_to_eps, NoiseSchedule};
use ssdiff::data::synth_scene;

fn main() -> ssdiff::error::Result<()> {
    let sched = NoiseSchedule::default_linear();
    for t in [1, 250, 500, 750, 1000] {
        println!("t={t:4}  beta={:.5}  alpha_bar={:.3e}", sched.beta(t)?, sched.alpha_bar(t)?);
    }

    let s = synth_scene(0, 4, 32)?;
    let residual = residual_wrap(s.gt.as_ref().unwrap(), &s.lms)?;
    let x0 = residual.to_tensor(DType::F64, &Device::Cpu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eps = standard_normal(x0.dims(), DType::F64, &Device::Cpu, &mut rng)?;
    for t in [10, 500, 1000] {
        let x_t = q_sample(&x0, t, &eps, &sched)?;
        let back = x0_to_eps(&x0, &x_t, t, &sched)?;
        let err = (back - &eps)?.abs()?.max_all()?.to_scalar::<f64>()?;
        println!("t={t:4}: noise recovered from (x0, x_t) to {err:.1e}");
    }
    println!("DDIM-10 timesteps: {:?}", ddim_subsequence(&sched, 10)?);
    Ok(())
}
