use candle_core::{DType, Device};
use ssdiff::network::{NetworkConfig, SsdiffNet, Variant};

fn main() -> ssdiff::error::Result<()> {
    for v in Variant::ALL {
        let cfg = NetworkConfig { variant: v, ..NetworkConfig::default() };
        let net = SsdiffNet::new(&cfg, 0, DType::F32, &Device::Cpu)?;
        println!("{}: {}", v.as_str(), net.param_count());
    }
    Ok(())
}
