//! Multi-band raster carrier shared by the data, metric and diffusion code.

use candle_core::{DType, Device, Tensor};
use ndarray::{Array3, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result};

/// A `bands × height × width` raster in reflectance-normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    data: Array3<f64>,
}

impl ImagePlane {
    pub fn new(data: Array3<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self::new(Array3::zeros((bands, height, width)))
    }

    pub fn filled(bands: usize, height: usize, width: usize, value: f64) -> Self {
        Self::new(Array3::from_elem((bands, height, width), value))
    }

    pub fn from_vec(bands: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let got = values.len();
        Array3::from_shape_vec((bands, height, width), values)
            .map(Self::new)
            .map_err(|_| Error::shape("ImagePlane::from_vec", &[bands * height * width], &[got]))
    }

    pub fn from_fn(
        bands: usize,
        height: usize,
        width: usize,
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Self {
        Self::new(Array3::from_shape_fn((bands, height, width), f))
    }

    pub fn bands(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn shape(&self) -> [usize; 3] {
        let (b, h, w) = self.data.dim();
        [b, h, w]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    pub fn band(&self, b: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), b)
    }

    pub fn band_mut(&mut self, b: usize) -> ArrayViewMut2<'_, f64> {
        self.data.index_axis_mut(Axis(0), b)
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f64 {
        self.data[[b, y, x]]
    }

    pub fn band_means(&self) -> Vec<f64> {
        self.data
            .outer_iter()
            .map(|band| band.mean().unwrap_or(0.0))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl FnMut(f64) -> f64) -> Self {
        Self::new(self.data.mapv(f))
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &ImagePlane) -> Result<Self> {
        self.ensure_same_shape("add", other)?;
        Ok(Self::new(&self.data + &other.data))
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ImagePlane) -> Result<Self> {
        self.ensure_same_shape("sub", other)?;
        Ok(Self::new(&self.data - &other.data))
    }

    pub fn ensure_same_shape(&self, op: &'static str, other: &ImagePlane) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, &self.shape(), &other.shape()));
        }
        Ok(())
    }

    /// Selects a subset of bands, in the given order.
    pub fn select_bands(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.bands()) {
            return Err(Error::invalid(
                "band",
                format!("index {bad} out of range for {} bands", self.bands()),
            ));
        }
        Ok(Self::new(self.data.select(Axis(0), idx)))
    }

    /// Crops the window `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height() || x0 + w > self.width() {
            return Err(Error::invalid(
                "crop",
                format!(
                    "window {h}x{w}@({y0},{x0}) exceeds {}x{}",
                    self.height(),
                    self.width()
                ),
            ));
        }
        Ok(Self::new(
            self.data
                .slice(ndarray::s![.., y0..y0 + h, x0..x0 + w])
                .to_owned(),
        ))
    }

    /// Converts to a `(1, bands, h, w)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let (b, h, w) = self.dims();
        let flat: Vec<f64> = self.data.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (1, b, h, w), device)?.to_dtype(dtype)?)
    }

    /// Accepts a `(bands, h, w)` or `(1, bands, h, w)` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            3 => t.clone(),
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            _ => {
                return Err(Error::invalid(
                    "tensor",
                    format!("expected (B,H,W) or (1,B,H,W), got {:?}", t.dims()),
                ))
            }
        };
        let (b, h, w) = t.dims3()?;
        let values = t
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        Self::from_vec(b, h, w, values)
    }
}

/// Stacks equally shaped planes into an `(n, bands, h, w)` tensor.
pub fn stack_to_tensor(planes: &[ImagePlane], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = planes
        .first()
        .ok_or_else(|| Error::invalid("planes", "empty batch"))?;
    let (b, h, w) = first.dims();
    let mut flat = Vec::with_capacity(planes.len() * b * h * w);
    for p in planes {
        first.ensure_same_shape("stack_to_tensor", p)?;
        flat.extend(p.data.iter().copied());
    }
    Ok(Tensor::from_vec(flat, (planes.len(), b, h, w), device)?.to_dtype(dtype)?)
}

/// Splits an `(n, bands, h, w)` tensor into planes.
pub fn unstack_tensor(t: &Tensor) -> Result<Vec<ImagePlane>> {
    let n = t.dim(0)?;
    (0..n)
        .map(|i| ImagePlane::from_tensor(&t.get(i)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip_preserves_values() {
        let p = ImagePlane::from_fn(3, 4, 5, |(b, y, x)| (b * 100 + y * 10 + x) as f64 * 0.25);
        let t = p.to_tensor(DType::F64, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 4, 5]);
        assert_eq!(ImagePlane::from_tensor(&t).unwrap(), p);
    }

    #[test]
    fn stack_rejects_mixed_shapes() {
        let a = ImagePlane::zeros(2, 4, 4);
        let b = ImagePlane::zeros(2, 4, 8);
        assert!(stack_to_tensor(&[a, b], DType::F32, &Device::Cpu).is_err());
    }

    #[test]
    fn crop_and_select() {
        let p = ImagePlane::from_fn(4, 8, 8, |(b, y, x)| (b + y + x) as f64);
        let c = p.crop(2, 3, 4, 4).unwrap();
        assert_eq!(c.get(1, 0, 0), p.get(1, 2, 3));
        let s = p.select_bands(&[3, 0]).unwrap();
        assert_eq!(s.get(0, 1, 1), p.get(3, 1, 1));
        assert!(p.select_bands(&[4]).is_err());
    }
}
