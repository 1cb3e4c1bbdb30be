//! No-reference indices at full resolution: Dλ, Ds, QNR / HQNR.

use ndarray::ArrayView2;

use super::reduced::q2n;
use crate::data::{mtf_downsample, MtfProfile, RATIO};
use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Block size of the Q index at full resolution; the low-resolution side uses
/// `FULL_BLOCK / RATIO`.
pub const FULL_BLOCK: usize = 32;

/// Universal image quality index of one block, stabilizing constants 0.
fn uiqi_block(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    let den = (va + vb) * (ma * ma + mb * mb);
    if den == 0.0 {
        return None;
    }
    Some(4.0 * cov * ma * mb / den)
}

/// Block-averaged UIQI of two single-band maps with non-overlapping blocks.
/// Blocks larger than the image shrink to the whole image; degenerate blocks
/// (zero variance and zero mean on both sides) are skipped.
pub fn uiqi(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, block: usize) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("uiqi", &[a.dim().0, a.dim().1], &[b.dim().0, b.dim().1]));
    }
    let (h, w) = a.dim();
    let (bh, bw) = (block.min(h), block.min(w));
    if bh < 2 || bw < 2 {
        return Err(Error::invalid("block", format!("block {bh}x{bw} too small")));
    }
    let mut vals = Vec::new();
    for y0 in (0..=h - bh).step_by(bh) {
        for x0 in (0..=w - bw).step_by(bw) {
            let sa = a.slice(ndarray::s![y0..y0 + bh, x0..x0 + bw]);
            let sb = b.slice(ndarray::s![y0..y0 + bh, x0..x0 + bw]);
            if let Some(q) = uiqi_block(sa, sb) {
                vals.push(q);
            }
        }
    }
    if vals.is_empty() {
        return Err(Error::Degenerate {
            op: "uiqi",
            reason: "every block is degenerate".into(),
        });
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

fn check_scales(fused: &ImagePlane, ms: &ImagePlane, pan: Option<&ImagePlane>) -> Result<()> {
    if fused.bands() != ms.bands() {
        return Err(Error::shape("full-resolution metrics", &[ms.bands()], &[fused.bands()]));
    }
    if fused.height() != ms.height() * RATIO || fused.width() != ms.width() * RATIO {
        let want = [ms.bands(), ms.height() * RATIO, ms.width() * RATIO];
        return Err(Error::shape("full-resolution metrics", &want, &fused.shape()));
    }
    if let Some(p) = pan {
        if p.dims() != (1, fused.height(), fused.width()) {
            let want = [1, fused.height(), fused.width()];
            return Err(Error::shape("full-resolution metrics", &want, &p.shape()));
        }
    }
    Ok(())
}

/// Spectral distortion: mean over ordered band pairs `l ≠ r` of
/// `|Q(F_l, F_r) − Q(MS_l, MS_r)|` (exponent p = 1).
pub fn d_lambda(fused: &ImagePlane, ms: &ImagePlane) -> Result<f64> {
    check_scales(fused, ms, None)?;
    let bands = fused.bands();
    if bands < 2 {
        return Err(Error::invalid("bands", "Dλ needs at least two bands"));
    }
    let low = FULL_BLOCK / RATIO;
    let mut acc = 0.0;
    for l in 0..bands {
        for r in 0..bands {
            if l == r {
                continue;
            }
            let qf = uiqi(fused.band(l), fused.band(r), FULL_BLOCK)?;
            let qm = uiqi(ms.band(l), ms.band(r), low)?;
            acc += (qf - qm).abs();
        }
    }
    Ok(acc / (bands * (bands - 1)) as f64)
}

/// Khan's spectral distortion: `1 − Q2ⁿ(MTF-degraded fused, ms)`.
pub fn d_lambda_khan(fused: &ImagePlane, ms: &ImagePlane, profile: &MtfProfile) -> Result<f64> {
    check_scales(fused, ms, None)?;
    let degraded = mtf_downsample(fused, profile, RATIO)?;
    let block = (FULL_BLOCK / RATIO).min(ms.height()).min(ms.width());
    Ok(1.0 - q2n(&degraded, ms, block)?)
}

/// Spatial distortion: mean over bands of `|Q(F_l, P) − Q(MS_l, P_LR)|`
/// where `P_LR` is the PAN degraded with the sensor's PAN MTF (q = 1).
pub fn d_s(fused: &ImagePlane, ms: &ImagePlane, pan: &ImagePlane, profile: &MtfProfile) -> Result<f64> {
    check_scales(fused, ms, Some(pan))?;
    let pan_lr = mtf_downsample(pan, profile, RATIO)?;
    let low = FULL_BLOCK / RATIO;
    let mut acc = 0.0;
    for l in 0..fused.bands() {
        let qf = uiqi(fused.band(l), pan.band(0), FULL_BLOCK)?;
        let qm = uiqi(ms.band(l), pan_lr.band(0), low)?;
        acc += (qf - qm).abs();
    }
    Ok(acc / fused.bands() as f64)
}

/// Product-form quality with no reference: `(1 − Dλ)(1 − Ds)`.
pub fn hqnr(d_lambda: f64, d_s: f64) -> f64 {
    (1.0 - d_lambda) * (1.0 - d_s)
}

/// Which spectral-distortion index feeds the product-form score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DLambdaVariant {
    /// Inter-band Q differences (the classical QNR protocol).
    #[default]
    Classic,
    /// `1 − Q2ⁿ` against the MTF-degraded fusion.
    Khan,
}

/// Full-resolution scores of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullScores {
    pub d_lambda: f64,
    pub d_s: f64,
    pub hqnr: f64,
}

pub fn full_scores(
    fused: &ImagePlane,
    ms: &ImagePlane,
    pan: &ImagePlane,
    profile: &MtfProfile,
    variant: DLambdaVariant,
) -> Result<FullScores> {
    let dl = match variant {
        DLambdaVariant::Classic => d_lambda(fused, ms)?,
        DLambdaVariant::Khan => d_lambda_khan(fused, ms, profile)?,
    };
    let ds = d_s(fused, ms, pan, profile)?;
    Ok(FullScores {
        d_lambda: dl,
        d_s: ds,
        hqnr: hqnr(dl, ds),
    })
}
