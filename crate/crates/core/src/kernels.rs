//! Dense row-major kernels shared by the autodiff tape and the inference
//! scorers, plus the multiplication counter used for complexity accounting.
//!
//! Products go through `matrixmultiply` with explicit strides, so transposed
//! operands never need to be materialized.

use std::fmt::Debug;

use num_traits::Float;

/// Absolute tolerance for 64-bit comparisons.
pub const F64_TOL: f64 = 1e-9;
/// Absolute tolerance for 32-bit comparisons.
pub const F32_TOL: f64 = 1e-5;

/// Scalar type usable by the kernels: `f32` or `f64`.
pub trait Real: Float + std::ops::AddAssign + Debug + Send + Sync + Default + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = op(a)·op(b) + beta·c`, raw strided form.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    for x in c.iter_mut() {
                        *x *= beta;
                    }
                    return;
                }
                // SAFETY: callers go through `gemm_rm`, which checks that every
                // strided access stays inside the slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}
impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Row-major product `c = op(a)·op(b) + beta·c`.
///
/// `a` is stored as `a_rows × a_cols`; with `ta` it is used transposed. Same
/// for `b`. `c` must hold exactly `m × n` values.
#[allow(clippy::too_many_arguments)]
pub fn gemm_rm<T: Real>(
    a: &[T],
    a_rows: usize,
    a_cols: usize,
    ta: bool,
    b: &[T],
    b_rows: usize,
    b_cols: usize,
    tb: bool,
    c: &mut [T],
    beta: T,
) {
    assert_eq!(a.len(), a_rows * a_cols);
    assert_eq!(b.len(), b_rows * b_cols);
    let (m, k, rsa, csa) = if ta {
        (a_cols, a_rows, 1, a_cols as isize)
    } else {
        (a_rows, a_cols, a_cols as isize, 1)
    };
    let (kb, n, rsb, csb) = if tb {
        (b_cols, b_rows, 1, b_cols as isize)
    } else {
        (b_rows, b_cols, b_cols as isize, 1)
    };
    assert_eq!(k, kb, "inner dimensions");
    assert_eq!(c.len(), m * n);
    T::gemm(m, k, n, a, rsa, csa, b, rsb, csb, beta, c, n as isize, 1);
}

/// Which side of the amortization boundary a product belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Phase {
    #[default]
    Precompute,
    PerCandidate,
}

/// Multiplication counter at matrix-product granularity (`m·k·n` per product).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub precompute: u64,
    pub per_candidate: u64,
    phase: Phase,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn add(&mut self, mults: u64) {
        match self.phase {
            Phase::Precompute => self.precompute += mults,
            Phase::PerCandidate => self.per_candidate += mults,
        }
    }

    pub fn total(&self) -> u64 {
        self.precompute + self.per_candidate
    }
}

/// Plain row-major matrix used on the inference path.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&x| T::from_f64(x)).collect())
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Mat<T>, counter: &mut OpCounter) -> Mat<T> {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension");
        let mut out = Mat::zeros(self.rows, other.rows);
        gemm_rm(
            &self.data, self.rows, self.cols, false, &other.data, other.rows, other.cols, true,
            &mut out.data, T::zero(),
        );
        counter.add((self.rows * self.cols * other.rows) as u64);
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Mat<T>, counter: &mut OpCounter) -> Mat<T> {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Mat::zeros(self.rows, other.cols);
        gemm_rm(
            &self.data, self.rows, self.cols, false, &other.data, other.rows, other.cols, false,
            &mut out.data, T::zero(),
        );
        counter.add((self.rows * self.cols * other.cols) as u64);
        out
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &[T], counter: &mut OpCounter) -> Vec<T> {
        assert_eq!(self.cols, x.len(), "matvec inner dimension");
        let mut out = vec![T::zero(); self.rows];
        gemm_rm(&self.data, self.rows, self.cols, false, x, x.len(), 1, false, &mut out, T::zero());
        counter.add((self.rows * self.cols) as u64);
        out
    }

    /// Columns `[start, start + len)` as a new matrix.
    pub fn col_block(&self, start: usize, len: usize) -> Mat<T> {
        assert!(start + len <= self.cols);
        let mut out = Vec::with_capacity(self.rows * len);
        for i in 0..self.rows {
            out.extend_from_slice(&self.row(i)[start..start + len]);
        }
        Mat::from_vec(self.rows, len, out)
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[&Mat<T>]) -> Mat<T> {
        let rows = parts[0].rows;
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                assert_eq!(p.rows, rows, "hcat row count");
                data.extend_from_slice(p.row(i));
            }
        }
        Mat::from_vec(rows, cols, data)
    }

    pub fn add_row_broadcast(&mut self, row: &[T]) {
        assert_eq!(row.len(), self.cols);
        for i in 0..self.rows {
            for (x, &b) in self.row_mut(i).iter_mut().zip(row) {
                *x += b;
            }
        }
    }
}

/// Numerically stable softmax over `logits` restricted to `mask`; masked
/// positions come out exactly zero. Returns `None` when nothing is unmasked.
pub fn masked_softmax_in_place<T: Real>(logits: &mut [T], mask: Option<&[bool]>) -> Option<()> {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = T::neg_infinity();
    let mut any = false;
    for (j, &x) in logits.iter().enumerate() {
        if keep(j) {
            any = true;
            max = max.max(x);
        }
    }
    if !any {
        return None;
    }
    let mut sum = T::zero();
    for (j, x) in logits.iter_mut().enumerate() {
        if keep(j) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = T::zero();
        }
    }
    for x in logits.iter_mut() {
        *x = *x / sum;
    }
    Some(())
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len());
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes_match_loops() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect(); // 4x3
        let mut c = vec![0.0; 8];
        gemm_rm(&a, 2, 3, false, &b, 4, 3, true, &mut c, 0.0);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * b[j * 3 + p]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-14);
            }
        }
        // aᵀ·a is 3x3
        let mut g = vec![0.0; 9];
        gemm_rm(&a, 2, 3, true, &a, 2, 3, false, &mut g, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|p| a[p * 3 + i] * a[p * 3 + j]).sum();
                assert!((g[i * 3 + j] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn counter_tracks_phases() {
        let a = Mat::<f64>::zeros(3, 4);
        let b = Mat::<f64>::zeros(5, 4);
        let mut c = OpCounter::new();
        a.matmul_nt(&b, &mut c);
        c.set_phase(Phase::PerCandidate);
        a.matvec(&[0.0; 4], &mut c);
        assert_eq!(c.precompute, 60);
        assert_eq!(c.per_candidate, 12);
        assert_eq!(c.total(), 72);
    }

    #[test]
    fn softmax_masks_and_normalizes() {
        let mut x = vec![1.0f64, 2.0, 3.0];
        masked_softmax_in_place(&mut x, Some(&[true, true, false])).unwrap();
        let e = std::f64::consts::E;
        assert!((x[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((x[1] - e / (1.0 + e)).abs() < 1e-15);
        assert_eq!(x[2], 0.0);
        let mut y = vec![0.0f32; 2];
        assert!(masked_softmax_in_place(&mut y, Some(&[false, false])).is_none());
    }
}
