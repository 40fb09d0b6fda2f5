//! f64 matrix-multiply kernel shared by matmul, convolution, and the linear
//! layers. Backed by `matrixmultiply`; a naive triple loop is kept as the
//! reference implementation for tests.

use rayon::prelude::*;

/// Borrowed matrix view with explicit element strides, so a transposed
/// operand never has to be materialized. Element `(i, j)` lives at
/// `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct MatView<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatView<'a> {
    /// Row-major `rows x cols` view over a contiguous slice.
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        MatView {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major `rows x cols` slice: yields `cols x rows`.
    pub fn transposed(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        MatView {
            data,
            rows: cols,
            cols: rows,
            rs: 1,
            cs: cols as isize,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        let idx = i as isize * self.rs + j as isize * self.cs;
        self.data[idx as usize]
    }
}

/// FLOP threshold below which the row-parallel split is not worth it.
const PAR_FLOP_THRESHOLD: usize = 1 << 23;

/// `c = a * b + beta * c` with `c` row-major `m x n`.
///
/// When `par` is set and the product is large, rows of `c` are split across
/// the rayon pool. Every output element is produced by exactly one task with
/// a fixed in-task reduction order, so the result is bitwise identical to the
/// sequential call.
pub fn dgemm(a: MatView, b: MatView, beta: f64, c: &mut [f64], par: bool) {
    let (m, k) = (a.rows, a.cols);
    let n = b.cols;
    assert_eq!(k, b.rows, "gemm inner dims");
    assert!(c.len() >= m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].fill(0.0);
        } else if beta != 1.0 {
            c[..m * n].iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }

    let nthreads = rayon::current_num_threads();
    let big = m.saturating_mul(k).saturating_mul(n) >= PAR_FLOP_THRESHOLD;
    if par && big && nthreads > 1 && m >= 2 * nthreads {
        let rows_per = m.div_ceil(nthreads);
        let a_data = a.data;
        c[..m * n]
            .par_chunks_mut(rows_per * n)
            .enumerate()
            .for_each(|(blk, c_blk)| {
                let row0 = blk * rows_per;
                let rows = c_blk.len() / n;
                let a_blk = MatView {
                    data: &a_data[row0 * a.rs as usize..],
                    rows,
                    cols: k,
                    rs: a.rs,
                    cs: a.cs,
                };
                dgemm_seq(a_blk, b, beta, c_blk);
            });
    } else {
        dgemm_seq(a, b, beta, &mut c[..m * n]);
    }
}

fn dgemm_seq(a: MatView, b: MatView, beta: f64, c: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Reference triple loop; the oracle the fast path is tested against.
pub fn dgemm_naive(a: MatView, b: MatView, beta: f64, c: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.at(i, p) * b.at(p, j);
            }
            c[i * n + j] = acc + beta * c[i * n + j];
        }
    }
}
