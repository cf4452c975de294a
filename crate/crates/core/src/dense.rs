//! Small dense kernels on `nalgebra` matrices and plain slices.
//!
//! The hot loops of the solver work on flat `f64` slices; these helpers keep
//! the column-major access pattern in one place.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `out = alpha * a * x + beta * out`
pub fn gemv(alpha: f64, a: &DMatrix<f64>, x: &[f64], beta: f64, out: &mut [f64]) {
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(a.nrows(), out.len());
    if beta == 0.0 {
        out.fill(0.0);
    } else if beta != 1.0 {
        out.iter_mut().for_each(|o| *o *= beta);
    }
    let rows = a.nrows();
    let data = a.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let s = alpha * xj;
        if s == 0.0 {
            continue;
        }
        let col = &data[j * rows..(j + 1) * rows];
        for (o, &c) in out.iter_mut().zip(col) {
            *o += c * s;
        }
    }
}

/// `out = alpha * a^T * x + beta * out`
pub fn gemv_t(alpha: f64, a: &DMatrix<f64>, x: &[f64], beta: f64, out: &mut [f64]) {
    debug_assert_eq!(a.nrows(), x.len());
    debug_assert_eq!(a.ncols(), out.len());
    let rows = a.nrows();
    let data = a.as_slice();
    for (j, o) in out.iter_mut().enumerate() {
        let col = &data[j * rows..(j + 1) * rows];
        let dot: f64 = col.iter().zip(x).map(|(c, v)| c * v).fold(0.0, |s, v| s + v);
        *o = if beta == 0.0 { alpha * dot } else { alpha * dot + beta * *o };
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).fold(0.0, |s, v| s + v)
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).fold(0.0, |s, v| s + v).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .fold(0.0, |s, v| s + v)
        .sqrt()
}

/// One step of Neumaier compensated summation into `(sum, comp)`; the total
/// is `sum + comp`.
#[inline]
pub fn neumaier_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Stack matrices with equal column counts vertically.
pub fn vstack(blocks: &[&DMatrix<f64>], ncols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, ncols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), ncols);
        out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Minimum-norm least-squares solution of `a x = b` using an SVD with
/// relative rank cutoff `rtol`.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rtol: f64) -> DVector<f64> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return DVector::zeros(cols);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = rtol * smax.max(f64::MIN_POSITIVE);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DVector::zeros(cols);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let coef = u.column(i).dot(b) / s;
            out += v_t.row(i).transpose() * coef;
        }
    }
    out
}

/// Orthonormal basis (as columns) of the null space of `a`, an `r x n`
/// matrix. Rows may be linearly dependent.
pub fn null_space(a: &DMatrix<f64>, n: usize, rtol: f64) -> DMatrix<f64> {
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // pad to at least n rows so the SVD returns a full V
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let cutoff = rtol * smax.max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= cutoff)
        .collect();
    let mut z = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        z.set_column(c, &v_t.row(i).transpose());
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemv_matches_nalgebra() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let x = [0.3, -1.2, 2.0];
        let mut out = [1.0, 1.0];
        gemv(2.0, &a, &x, 0.5, &mut out);
        let want = &a * DVector::from_row_slice(&x) * 2.0 + DVector::from_element(2, 0.5);
        assert!((out[0] - want[0]).abs() < 1e-14 && (out[1] - want[1]).abs() < 1e-14);

        let y = [0.7, -0.1];
        let mut t = [0.0; 3];
        gemv_t(1.0, &a, &y, 0.0, &mut t);
        let want_t = a.transpose() * DVector::from_row_slice(&y);
        for i in 0..3 {
            assert!((t[i] - want_t[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn null_space_of_rank_deficient_rows() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let z = null_space(&a, 3, 1e-10);
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).norm() < 1e-12);
    }

    #[test]
    fn min_norm_solution() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = lstsq_min_norm(&a, &DVector::from_element(1, 2.0), 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
