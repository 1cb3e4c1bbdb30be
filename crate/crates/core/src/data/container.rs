//! HDF5 containers holding `gt`, `lms`, `ms`, `pan` arrays of shape
//! `(N, C, H, W)` in raw sensor units.

use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4, Ix3};

use super::SceneSample;
use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Radiometric maximum of 11-bit sensors (WV3, QB, GF2).
pub const DEFAULT_NORM_MAX: f64 = 2047.0;

fn h5err(e: hdf5::Error) -> Error {
    Error::Hdf5(e.to_string())
}

/// Lazily read container; samples are decoded on access.
pub struct H5Dataset {
    path: PathBuf,
    file: hdf5::File,
    len: usize,
    bands: usize,
    has_gt: bool,
    norm_max: f64,
}

impl std::fmt::Debug for H5Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("H5Dataset")
            .field("path", &self.path)
            .field("len", &self.len)
            .field("bands", &self.bands)
            .field("has_gt", &self.has_gt)
            .finish()
    }
}

fn dims4(file: &hdf5::File, key: &str) -> Result<Option<[usize; 4]>> {
    if !file.link_exists(key) {
        return Ok(None);
    }
    let ds = file.dataset(key).map_err(h5err)?;
    let shape = ds.shape();
    if shape.len() != 4 {
        return Err(Error::Dataset {
            key: key.into(),
            reason: format!("expected rank 4 (N, C, H, W), got shape {shape:?}"),
        });
    }
    Ok(Some([shape[0], shape[1], shape[2], shape[3]]))
}

fn required(file: &hdf5::File, key: &str) -> Result<[usize; 4]> {
    dims4(file, key)?.ok_or_else(|| Error::Dataset {
        key: key.into(),
        reason: "missing from container".into(),
    })
}

impl H5Dataset {
    /// Opens and validates a container. `gt` is optional (full-resolution
    /// sets); `pan`, `ms` and `lms` are required.
    pub fn open(path: impl AsRef<Path>, norm_max: f64) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if !(norm_max > 0.0) {
            return Err(Error::invalid("norm_max", format!("must be positive, got {norm_max}")));
        }
        let file = hdf5::File::open(&path).map_err(h5err)?;
        let pan = required(&file, "pan")?;
        let ms = required(&file, "ms")?;
        let lms = required(&file, "lms")?;
        let gt = dims4(&file, "gt")?;

        let n = pan[0];
        let bands = ms[1];
        let mismatch = |key: &str, reason: String| Error::Dataset {
            key: key.into(),
            reason,
        };
        if pan[1] != 1 {
            return Err(mismatch("pan", format!("expected 1 channel, got {}", pan[1])));
        }
        for (key, d) in [("ms", ms), ("lms", lms)] {
            if d[0] != n {
                return Err(mismatch(key, format!("{} samples vs {n} in pan", d[0])));
            }
        }
        if lms[1] != bands || lms[2] != pan[2] || lms[3] != pan[3] {
            return Err(mismatch("lms", format!("shape {lms:?} inconsistent with pan {pan:?} / ms {ms:?}")));
        }
        if ms[2] * super::RATIO != pan[2] || ms[3] * super::RATIO != pan[3] {
            return Err(mismatch("ms", format!("shape {ms:?} is not 1/{} of pan {pan:?}", super::RATIO)));
        }
        if let Some(g) = gt {
            if g != lms {
                return Err(mismatch("gt", format!("shape {g:?} differs from lms {lms:?}")));
            }
        }
        Ok(Self {
            path,
            file,
            len: n,
            bands,
            has_gt: gt.is_some(),
            norm_max,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn has_gt(&self) -> bool {
        self.has_gt
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn plane(&self, key: &str, i: usize) -> Result<ImagePlane> {
        let ds = self.file.dataset(key).map_err(h5err)?;
        let arr: Array3<f64> = ds
            .read_slice::<f64, _, Ix3>(s![i, .., .., ..])
            .map_err(|e| Error::Dataset {
                key: key.into(),
                reason: e.to_string(),
            })?;
        Ok(ImagePlane::new(arr / self.norm_max))
    }

    /// Decodes sample `i`, normalized to `[0, 1]`.
    pub fn sample(&self, i: usize) -> Result<SceneSample> {
        if i >= self.len {
            return Err(Error::invalid("index", format!("{i} >= {}", self.len)));
        }
        let gt = if self.has_gt { Some(self.plane("gt", i)?) } else { None };
        Ok(SceneSample {
            gt,
            pan: self.plane("pan", i)?,
            ms: self.plane("ms", i)?,
            lms: self.plane("lms", i)?,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<SceneSample>> + '_ {
        (0..self.len).map(move |i| self.sample(i))
    }
}

/// Opens a container and decodes every sample.
pub fn load_dataset(path: impl AsRef<Path>, norm_max: f64) -> Result<Vec<SceneSample>> {
    H5Dataset::open(path, norm_max)?.iter().collect()
}

fn stack(planes: &[&ImagePlane], key: &str, norm_max: f64) -> Result<Array4<f64>> {
    let first = planes[0];
    let (c, h, w) = first.dims();
    let mut out = Array4::<f64>::zeros((planes.len(), c, h, w));
    for (i, p) in planes.iter().enumerate() {
        if p.dims() != (c, h, w) {
            return Err(Error::Dataset {
                key: key.into(),
                reason: format!("sample {i} has shape {:?}, expected {:?}", p.shape(), first.shape()),
            });
        }
        out.slice_mut(s![i, .., .., ..]).assign(&(p.data() * norm_max));
    }
    Ok(out)
}

/// Writes samples in the container layout, scaling values by `norm_max`.
/// `gt` is written only when every sample carries one.
pub fn write_dataset(path: impl AsRef<Path>, samples: &[SceneSample], norm_max: f64) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("samples", "nothing to write"));
    }
    for s in samples {
        s.validate()?;
    }
    let file = hdf5::File::create(path.as_ref()).map_err(h5err)?;
    let write = |key: &str, planes: Vec<&ImagePlane>| -> Result<()> {
        let arr = stack(&planes, key, norm_max)?;
        file.new_dataset_builder()
            .with_data(&arr)
            .create(key)
            .map_err(h5err)?;
        Ok(())
    };
    if samples.iter().all(|s| s.gt.is_some()) {
        write("gt", samples.iter().filter_map(|s| s.gt.as_ref()).collect())?;
    }
    write("lms", samples.iter().map(|s| &s.lms).collect())?;
    write("ms", samples.iter().map(|s| &s.ms).collect())?;
    write("pan", samples.iter().map(|s| &s.pan).collect())?;
    Ok(())
}

/// Writes a single named `(N, C, H, W)` array, e.g. fused outputs.
pub fn write_planes(path: impl AsRef<Path>, key: &str, planes: &[ImagePlane], norm_max: f64) -> Result<()> {
    if planes.is_empty() {
        return Err(Error::invalid("planes", "nothing to write"));
    }
    let file = hdf5::File::create(path.as_ref()).map_err(h5err)?;
    let arr = stack(&planes.iter().collect::<Vec<_>>(), key, norm_max)?;
    file.new_dataset_builder()
        .with_data(&arr)
        .create(key)
        .map_err(h5err)?;
    Ok(())
}

/// Reads a single named `(N, C, H, W)` array into normalized planes.
pub fn read_planes(path: impl AsRef<Path>, key: &str, norm_max: f64) -> Result<Vec<ImagePlane>> {
    let file = hdf5::File::open(path.as_ref()).map_err(h5err)?;
    let dims = required(&file, key)?;
    let ds = file.dataset(key).map_err(h5err)?;
    (0..dims[0])
        .map(|i| {
            let arr: Array3<f64> = ds
                .read_slice::<f64, _, Ix3>(s![i, .., .., ..])
                .map_err(|e| Error::Dataset {
                    key: key.into(),
                    reason: e.to_string(),
                })?;
            Ok(ImagePlane::new(arr / norm_max))
        })
        .collect()
}
