// Small dense helpers over row-major slices; state vectors are short.

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

#[inline]
pub(crate) fn diff_norm_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `out += mat * v` for a row-major `rows x cols` matrix.
#[inline]
pub(crate) fn add_mat_vec(mat: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &mat[i * cols..(i + 1) * cols];
        *o += dot(row, v);
    }
}
