//! Direct-loop reference implementations of the quality indices, written
//! from the textbook definitions without sharing code with the library.

use ssdiff::image::ImagePlane;

fn pixel(img: &ImagePlane, y: usize, x: usize) -> Vec<f64> {
    (0..img.bands()).map(|b| img.get(b, y, x)).collect()
}

/// Mean per-pixel `acos(⟨p, g⟩ / (|p||g|))`, in degrees.
pub fn sam(pred: &ImagePlane, gt: &ImagePlane) -> f64 {
    let (_, h, w) = gt.dims();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (p, g) = (pixel(pred, y, x), pixel(gt, y, x));
            let dot: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
            let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
            let ng = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            total += (dot / (np * ng)).clamp(-1.0, 1.0).acos();
        }
    }
    (total / (h * w) as f64) * 180.0 / std::f64::consts::PI
}

pub fn ergas(pred: &ImagePlane, gt: &ImagePlane, ratio: f64) -> f64 {
    let (bands, h, w) = gt.dims();
    let n = (h * w) as f64;
    let mut acc = 0.0;
    for b in 0..bands {
        let (mut se, mut sum) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                se += (pred.get(b, y, x) - gt.get(b, y, x)).powi(2);
                sum += gt.get(b, y, x);
            }
        }
        let rmse = (se / n).sqrt();
        let mean = sum / n;
        acc += (rmse / mean).powi(2);
    }
    100.0 / ratio * (acc / bands as f64).sqrt()
}

/// Hamilton product of two quaternions `w + xi + yj + zk`.
fn quat_mul(p: &[f64], q: &[f64]) -> [f64; 4] {
    let (a1, b1, c1, d1) = (p[0], p[1], p[2], p[3]);
    let (a2, b2, c2, d2) = (q[0], q[1], q[2], q[3]);
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

fn quat_conj(p: &[f64]) -> [f64; 4] {
    [p[0], -p[1], -p[2], -p[3]]
}

/// Octonions as quaternion pairs: `(a, b)(c, d) = (ac − d̄b, da + bc̄)`.
fn oct_mul(x: &[f64], y: &[f64]) -> Vec<f64> {
    let (a, b) = (&x[..4], &x[4..]);
    let (c, d) = (&y[..4], &y[4..]);
    let ac = quat_mul(a, c);
    let db = quat_mul(&quat_conj(d), b);
    let da = quat_mul(d, a);
    let bc = quat_mul(b, &quat_conj(c));
    (0..4).map(|i| ac[i] - db[i]).chain((0..4).map(|i| da[i] + bc[i])).collect()
}

fn hc_mul(x: &[f64], y: &[f64]) -> Vec<f64> {
    match x.len() {
        4 => quat_mul(x, y).to_vec(),
        8 => oct_mul(x, y),
        n => panic!("no hypercomplex algebra of dimension {n}"),
    }
}

fn hc_conj(x: &[f64]) -> Vec<f64> {
    x.iter().enumerate().map(|(i, v)| if i == 0 { *v } else { -v }).collect()
}

fn hc_abs(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Q2ⁿ of one block in product form
/// `|σ_zẑ|/(σ_z σ_ẑ) · 2σ_z σ_ẑ/(σ_z² + σ_ẑ²) · 2|μ||μ̂|/(|μ|² + |μ̂|²)`
/// after standardizing both images with the reference block's band
/// statistics and shifting by one.
fn q2n_block(pred: &ImagePlane, gt: &ImagePlane, y0: usize, x0: usize, size: usize) -> f64 {
    let bands = gt.bands();
    let n = (size * size) as f64;
    let mut z = Vec::new();
    let mut zh = Vec::new();
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            z.push(pixel(gt, y, x));
            zh.push(pixel(pred, y, x));
        }
    }
    for b in 0..bands {
        let mean = z.iter().map(|v| v[b]).sum::<f64>() / n;
        let std = (z.iter().map(|v| (v[b] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        for (g, p) in z.iter_mut().zip(zh.iter_mut()) {
            g[b] = (g[b] - mean) / std + 1.0;
            p[b] = (p[b] - mean) / std + 1.0;
        }
    }
    let mean_of = |v: &[Vec<f64>]| (0..bands).map(|b| v.iter().map(|p| p[b]).sum::<f64>() / n).collect::<Vec<f64>>();
    let (mu, muh) = (mean_of(&z), mean_of(&zh));
    let centered = |v: &[Vec<f64>], m: &[f64]| v.iter().map(|p| p.iter().zip(m).map(|(a, b)| a - b).collect()).collect::<Vec<Vec<f64>>>();
    let (cz, czh) = (centered(&z, &mu), centered(&zh, &muh));
    let var = |c: &[Vec<f64>]| c.iter().map(|p| p.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / (n - 1.0);
    let (vz, vzh) = (var(&cz), var(&czh));
    let mut cov = vec![0.0; bands];
    for (a, b) in cz.iter().zip(&czh) {
        for (acc, v) in cov.iter_mut().zip(hc_mul(a, &hc_conj(b))) {
            *acc += v / (n - 1.0);
        }
    }
    let (sz, szh) = (vz.sqrt(), vzh.sqrt());
    let (am, amh) = (hc_abs(&mu), hc_abs(&muh));
    hc_abs(&cov) / (sz * szh) * (2.0 * sz * szh / (vz + vzh)) * (2.0 * am * amh / (am * am + amh * amh))
}

pub fn q2n(pred: &ImagePlane, gt: &ImagePlane, block: usize) -> f64 {
    let (_, h, w) = gt.dims();
    let mut vals = Vec::new();
    let mut y0 = 0;
    while y0 + block <= h {
        let mut x0 = 0;
        while x0 + block <= w {
            vals.push(q2n_block(pred, gt, y0, x0, block));
            x0 += block;
        }
        y0 += block;
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Band-mean Pearson correlation of the 3×3 Laplacian responses over the
/// interior pixels.
pub fn scc(pred: &ImagePlane, gt: &ImagePlane) -> f64 {
    const K: [[f64; 3]; 3] = [[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]];
    let (bands, h, w) = gt.dims();
    let lap = |img: &ImagePlane, b: usize| {
        let mut out = Vec::new();
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 0.0;
                for (dy, row) in K.iter().enumerate() {
                    for (dx, k) in row.iter().enumerate() {
                        acc += k * img.get(b, y + dy - 1, x + dx - 1);
                    }
                }
                out.push(acc);
            }
        }
        out
    };
    let mut total = 0.0;
    for b in 0..bands {
        total += pearson(&lap(pred, b), &lap(gt, b));
    }
    total / bands as f64
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Universal image quality index in product form
/// `σ_xy/(σ_x σ_y) · 2μ_x μ_y/(μ_x² + μ_y²) · 2σ_x σ_y/(σ_x² + σ_y²)`,
/// averaged over non-overlapping blocks (clipped to the image).
pub fn uiqi(a: &ImagePlane, ab: usize, b: &ImagePlane, bb: usize, block: usize) -> f64 {
    let (_, h, w) = a.dims();
    let (bh, bw) = (block.min(h), block.min(w));
    let mut vals = Vec::new();
    for y0 in (0..=h - bh).step_by(bh) {
        for x0 in (0..=w - bw).step_by(bw) {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    xs.push(a.get(ab, y, x));
                    ys.push(b.get(bb, y, x));
                }
            }
            let n = xs.len() as f64;
            let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
            let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / (n - 1.0);
            let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (n - 1.0);
            let cxy = xs.iter().zip(&ys).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (n - 1.0);
            let (sx, sy) = (vx.sqrt(), vy.sqrt());
            vals.push(cxy / (sx * sy) * (2.0 * mx * my / (mx * mx + my * my)) * (2.0 * sx * sy / (vx + vy)));
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Mean over ordered band pairs of the change in inter-band UIQI from the
/// MS image (blocks of 8) to the fusion (blocks of 32).
pub fn d_lambda(fused: &ImagePlane, ms: &ImagePlane) -> f64 {
    let bands = fused.bands();
    let mut acc = 0.0;
    for l in 0..bands {
        for r in 0..bands {
            if l != r {
                acc += (uiqi(fused, l, fused, r, 32) - uiqi(ms, l, ms, r, 8)).abs();
            }
        }
    }
    acc / (bands * (bands - 1)) as f64
}

/// Mean over bands of the change in band-to-PAN UIQI from the MS scale
/// (against the degraded PAN) to the fusion scale.
pub fn d_s(fused: &ImagePlane, ms: &ImagePlane, pan: &ImagePlane, pan_lr: &ImagePlane) -> f64 {
    let bands = fused.bands();
    let mut acc = 0.0;
    for l in 0..bands {
        acc += (uiqi(fused, l, pan, 0, 32) - uiqi(ms, l, pan_lr, 0, 8)).abs();
    }
    acc / bands as f64
}
