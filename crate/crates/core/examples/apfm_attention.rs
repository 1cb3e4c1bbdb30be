//! One alternating projection fusion on random branch features, under each
//! detach mask, plus the closed form of the single-pixel case.
//!
//!     cargo run --release --example apfm_attention

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdiff::apfm::{apfm_forward, make_projections, project_spatial, project_spectral, ApfmParams, BranchFeatures, DetachMask};
use ssdiff::network::params::ParamBuilder;
use ssdiff::network::{Ctx, Group, ParamStore};

fn main() -> ssdiff::error::Result<()> {
    let (n, s, h, w, s_prime) = (2, 8, 8, 8, 4);
    let dev = Device::Cpu;
    let mut store = ParamStore::new(DType::F32, dev.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ApfmParams::new(&mut ParamBuilder::new(&mut store, &mut rng, Group::Shared), s, s_prime)?;
    println!("APFM parameters: {}", store.count());

    let feats = BranchFeatures::new(Tensor::randn(0f32, 1.0, (n, s, h, w), &dev)?, Tensor::randn(0f32, 1.0, (n, s, h, w), &dev)?, 0)?;
    let p = make_projections(&feats, &params, &Ctx::default())?;
    println!("T_a {:?}, T_c {:?}", p.t_a.dims(), p.t_c.dims());
    println!("T_spa {:?}, T_spe {:?}", project_spatial(&p)?.dims(), project_spectral(&p)?.dims());

    for mask in [DetachMask::CLEAR, DetachMask::SPATIAL, DetachMask::SPECTRAL] {
        let out = apfm_forward(&feats, &params, mask, &Ctx::new(mask))?;
        let mean = out.abs()?.mean_all()?.to_scalar::<f32>()?;
        println!("{mask:?}: fused {:?}, mean |value| {mean:.4}", out.dims());
    }
    Ok(())
}
