//! Sample preparation: reduced-resolution simulation, synthetic scenes and
//! container I/O.

mod container;
mod interp;
mod mtf;
mod synth;

pub use container::{
    load_dataset, read_planes, write_dataset, write_planes, H5Dataset, DEFAULT_NORM_MAX,
};
pub use interp::{poly23_kernel, upsample_poly};
pub use mtf::{
    decimate, decimation_phase, gaussian_kernel, gaussian_sigma, mtf_downsample, mtf_filter,
    MtfProfile,
};
pub use synth::{synth_full, synth_scene, synth_scene_with, SynthOptions};

use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Resolution ratio between PAN and MS for every supported sensor.
pub const RATIO: usize = 4;

/// One pansharpening sample. `gt` is absent at full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub gt: Option<ImagePlane>,
    pub pan: ImagePlane,
    pub ms: ImagePlane,
    pub lms: ImagePlane,
}

impl SceneSample {
    pub fn bands(&self) -> usize {
        self.ms.bands()
    }

    /// Spatial size of the PAN / LrMSI↑ grid.
    pub fn size(&self) -> (usize, usize) {
        (self.pan.height(), self.pan.width())
    }

    /// Checks the layout invariants: single-band PAN, `lms` on the PAN grid,
    /// `ms` at 1/4 scale and `gt` (when present) matching `lms`.
    pub fn validate(&self) -> Result<()> {
        if self.pan.bands() != 1 {
            return Err(Error::Dataset {
                key: "pan".into(),
                reason: format!("expected 1 band, got {}", self.pan.bands()),
            });
        }
        let (h, w) = self.size();
        if h % RATIO != 0 || w % RATIO != 0 {
            return Err(Error::Dataset {
                key: "pan".into(),
                reason: format!("{h}x{w} not divisible by {RATIO}"),
            });
        }
        if self.lms.dims() != (self.bands(), h, w) {
            return Err(Error::Dataset {
                key: "lms".into(),
                reason: format!("shape {:?} vs pan {h}x{w}", self.lms.shape()),
            });
        }
        if self.ms.height() * RATIO != h || self.ms.width() * RATIO != w {
            return Err(Error::Dataset {
                key: "ms".into(),
                reason: format!("shape {:?} is not 1/{RATIO} of {h}x{w}", self.ms.shape()),
            });
        }
        if let Some(gt) = &self.gt {
            if gt.shape() != self.lms.shape() {
                return Err(Error::Dataset {
                    key: "gt".into(),
                    reason: format!("shape {:?} vs lms {:?}", gt.shape(), self.lms.shape()),
                });
            }
        }
        Ok(())
    }

    /// Crops all planes to a window of the PAN grid; the window must be
    /// aligned to the ratio.
    pub fn crop(&self, y0: usize, x0: usize, size: usize) -> Result<Self> {
        if y0 % RATIO != 0 || x0 % RATIO != 0 || size % RATIO != 0 {
            return Err(Error::invalid("crop", format!("window ({y0},{x0})+{size} not aligned to {RATIO}")));
        }
        let r = RATIO;
        Ok(Self {
            gt: self.gt.as_ref().map(|g| g.crop(y0, x0, size, size)).transpose()?,
            pan: self.pan.crop(y0, x0, size, size)?,
            ms: self.ms.crop(y0 / r, x0 / r, size / r, size / r)?,
            lms: self.lms.crop(y0, x0, size, size)?,
        })
    }
}

/// Wald-protocol reduction of a full-resolution sample: the original MS
/// becomes the reference, PAN and MS are MTF-degraded by the ratio, and the
/// degraded MS is re-interpolated onto the degraded PAN grid. The
/// interpolator has negative lobes, so `lms` is clipped back to `[0, 1]`.
pub fn make_reduced(full: &SceneSample, profile: &MtfProfile) -> Result<SceneSample> {
    if full.pan.height() != full.ms.height() * RATIO || full.pan.width() != full.ms.width() * RATIO {
        return Err(Error::Dataset {
            key: "pan".into(),
            reason: format!(
                "full-resolution PAN {:?} must be {RATIO}x the MS grid {:?}",
                full.pan.shape(),
                full.ms.shape()
            ),
        });
    }
    let pan = mtf_downsample(&full.pan, profile, RATIO)?;
    let ms = mtf_downsample(&full.ms, profile, RATIO)?;
    let lms = upsample_poly(&ms, RATIO)?.clamp(0.0, 1.0);
    Ok(SceneSample {
        gt: Some(full.ms.clone()),
        pan,
        ms,
        lms,
    })
}
