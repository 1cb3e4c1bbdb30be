//! Reference-based indices: SAM, ERGAS, Q2ⁿ, SCC.

use super::hypercomplex;
use crate::error::{Error, Result};
use crate::image::ImagePlane;

fn same_shape(op: &'static str, a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    a.ensure_same_shape(op, b)
}

/// Mean spectral angle in degrees. Pixels where either vector has zero norm
/// are skipped.
pub fn sam(pred: &ImagePlane, gt: &ImagePlane) -> Result<f64> {
    same_shape("sam", pred, gt)?;
    if pred.bands() < 2 {
        return Err(Error::invalid("bands", "SAM needs at least two bands"));
    }
    let (bands, h, w) = gt.dims();
    let (mut total, mut count) = (0.0, 0usize);
    let mut p = vec![0.0; bands];
    let mut g = vec![0.0; bands];
    for y in 0..h {
        for x in 0..w {
            for b in 0..bands {
                p[b] = pred.get(b, y, x);
                g[b] = gt.get(b, y, x);
            }
            let np = hypercomplex::norm(&p);
            let ng = hypercomplex::norm(&g);
            if np == 0.0 || ng == 0.0 {
                continue;
            }
            // Kahan's form: 2·atan2(|û − v̂|, |û + v̂|) stays accurate near 0.
            let (mut dm, mut dp) = (0.0, 0.0);
            for b in 0..bands {
                let u = p[b] / np;
                let v = g[b] / ng;
                dm += (u - v) * (u - v);
                dp += (u + v) * (u + v);
            }
            total += 2.0 * dm.sqrt().atan2(dp.sqrt());
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate {
            op: "sam",
            reason: "all pixels have zero norm".into(),
        });
    }
    Ok((total / count as f64).to_degrees())
}

/// `(100/ratio)·sqrt(mean_b (RMSE_b / μ_b)²)`.
pub fn ergas(pred: &ImagePlane, gt: &ImagePlane, ratio: f64) -> Result<f64> {
    same_shape("ergas", pred, gt)?;
    let mut acc = 0.0;
    for b in 0..gt.bands() {
        let gb = gt.band(b);
        let pb = pred.band(b);
        let mean = gb.mean().unwrap_or(0.0);
        if mean == 0.0 {
            return Err(Error::Degenerate {
                op: "ergas",
                reason: format!("band {b} has zero mean"),
            });
        }
        let mse = pb
            .iter()
            .zip(gb.iter())
            .map(|(p, g)| (p - g).powi(2))
            .sum::<f64>()
            / gb.len() as f64;
        acc += mse / (mean * mean);
    }
    Ok(100.0 / ratio * (acc / gt.bands() as f64).sqrt())
}

/// Hypercomplex universal quality index of one block, or `None` when both
/// blocks have zero variance.
fn q2n_block(pred: &ImagePlane, gt: &ImagePlane, y0: usize, x0: usize, size: usize) -> Option<f64> {
    let bands = gt.bands();
    let n = size * size;
    let nf = n as f64;
    let unbias = nf / (nf - 1.0);

    // Normalize every band by the reference block's mean and std; the same
    // affine map is applied to the prediction.
    let mut z = vec![vec![0.0; bands]; n];
    let mut zh = vec![vec![0.0; bands]; n];
    for b in 0..bands {
        let vals = (0..n).map(|i| gt.get(b, y0 + i / size, x0 + i % size));
        let mean = vals.clone().sum::<f64>() / nf;
        let std = (vals.map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        for i in 0..n {
            let (y, x) = (y0 + i / size, x0 + i % size);
            let (g, p) = (gt.get(b, y, x), pred.get(b, y, x));
            if std == 0.0 {
                z[i][b] = g - mean + 1.0;
                zh[i][b] = p - mean + 1.0;
            } else {
                z[i][b] = (g - mean) / std + 1.0;
                zh[i][b] = (p - mean) / std + 1.0;
            }
        }
    }

    let mut mu = vec![0.0; bands];
    let mut muh = vec![0.0; bands];
    let (mut sq, mut sqh) = (0.0, 0.0);
    let mut cross = vec![0.0; bands];
    for i in 0..n {
        for b in 0..bands {
            mu[b] += z[i][b] / nf;
            muh[b] += zh[i][b] / nf;
        }
        sq += z[i].iter().map(|v| v * v).sum::<f64>() / nf;
        sqh += zh[i].iter().map(|v| v * v).sum::<f64>() / nf;
        let prod = hypercomplex::mul(&z[i], &hypercomplex::conj(&zh[i]));
        for b in 0..bands {
            cross[b] += prod[b] / nf;
        }
    }
    let nmu2 = mu.iter().map(|v| v * v).sum::<f64>();
    let nmuh2 = muh.iter().map(|v| v * v).sum::<f64>();
    let var_sum = unbias * (sq - nmu2) + unbias * (sqh - nmuh2);
    if var_sum <= 0.0 {
        return None;
    }
    let mean_prod = hypercomplex::mul(&mu, &hypercomplex::conj(&muh));
    let cov: Vec<f64> = cross
        .iter()
        .zip(&mean_prod)
        .map(|(c, m)| unbias * (c - m))
        .collect();
    let luminance = 2.0 * nmu2.sqrt() * nmuh2.sqrt() / (nmu2 + nmuh2);
    Some(hypercomplex::norm(&cov) * 2.0 / var_sum * luminance)
}

/// Block-averaged Q2ⁿ for 4- or 8-band images, blocks of `block` pixels
/// with stride `block`.
pub fn q2n(pred: &ImagePlane, gt: &ImagePlane, block: usize) -> Result<f64> {
    same_shape("q2n", pred, gt)?;
    if !matches!(gt.bands(), 4 | 8) {
        return Err(Error::invalid(
            "bands",
            format!("Q2n supports 4 or 8 bands, got {}", gt.bands()),
        ));
    }
    if block < 2 || block > gt.height().min(gt.width()) {
        return Err(Error::invalid(
            "block",
            format!("{block} must be in 2..={}", gt.height().min(gt.width())),
        ));
    }
    let mut vals = Vec::new();
    for y0 in (0..=gt.height() - block).step_by(block) {
        for x0 in (0..=gt.width() - block).step_by(block) {
            if let Some(q) = q2n_block(pred, gt, y0, x0, block) {
                vals.push(q);
            }
        }
    }
    if vals.is_empty() {
        return Err(Error::Degenerate {
            op: "q2n",
            reason: "every block has zero variance".into(),
        });
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// 3×3 Laplacian high-pass over the interior (valid region).
pub fn laplacian_valid(img: &ImagePlane) -> ImagePlane {
    let (b, h, w) = img.dims();
    ImagePlane::from_fn(b, h.saturating_sub(2), w.saturating_sub(2), |(c, y, x)| {
        let mut acc = 8.0 * img.get(c, y + 1, x + 1);
        for dy in 0..3 {
            for dx in 0..3 {
                if dy != 1 || dx != 1 {
                    acc -= img.get(c, y + dy, x + dx);
                }
            }
        }
        acc
    })
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Band-averaged correlation of Laplacian-filtered prediction and reference.
pub fn scc(pred: &ImagePlane, gt: &ImagePlane) -> Result<f64> {
    same_shape("scc", pred, gt)?;
    if gt.height() < 3 || gt.width() < 3 {
        return Err(Error::invalid("size", "SCC needs at least 3x3 pixels"));
    }
    let hp = laplacian_valid(pred);
    let hg = laplacian_valid(gt);
    let mut total = 0.0;
    for b in 0..gt.bands() {
        let a: Vec<f64> = hp.band(b).iter().copied().collect();
        let g: Vec<f64> = hg.band(b).iter().copied().collect();
        total += pearson(&a, &g).ok_or_else(|| Error::Degenerate {
            op: "scc",
            reason: format!("band {b} has a zero-variance high-pass signal"),
        })?;
    }
    Ok(total / gt.bands() as f64)
}
