//! Cayley–Dickson algebras of dimension 2ⁿ (complex, quaternion, octonion).
//!
//! Product convention: `(a, b)(c, d) = (ac − d̄b, da + bc̄)`, which yields the
//! Hamilton quaternions at dimension 4.

pub fn conj(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    out.iter_mut().skip(1).for_each(|v| *v = -*v);
    out
}

pub fn mul(x: &[f64], y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if n == 1 {
        return vec![x[0] * y[0]];
    }
    let h = n / 2;
    let (a, b) = x.split_at(h);
    let (c, d) = y.split_at(h);
    let ac = mul(a, c);
    let db = mul(&conj(d), b);
    let da = mul(d, a);
    let bc = mul(b, &conj(c));
    ac.iter()
        .zip(&db)
        .map(|(p, q)| p - q)
        .chain(da.iter().zip(&bc).map(|(p, q)| p + q))
        .collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
