use std::rc::Rc;

/// Compressed sparse rows over f64 weights. The graph builders only produce
/// symmetric matrices, which is what the sparse-dense product's backward
/// pass relies on.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub offsets: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, weight) triples; entries are sorted per row.
    /// The caller is responsible for supplying a symmetric entry set.
    pub fn from_triples(n: usize, triples: &[(u32, u32, f64)]) -> Rc<Csr> {
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in triples {
            counts[r as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cols = vec![0u32; triples.len()];
        let mut vals = vec![0f64; triples.len()];
        let mut cursor = offsets.clone();
        for &(r, c, w) in triples {
            let p = cursor[r as usize];
            cols[p] = c;
            vals[p] = w;
            cursor[r as usize] += 1;
        }
        // sort each row by column for deterministic iteration
        for r in 0..n {
            let (s, e) = (offsets[r], offsets[r + 1]);
            let mut row: Vec<(u32, f64)> = cols[s..e]
                .iter()
                .copied()
                .zip(vals[s..e].iter().copied())
                .collect();
            row.sort_by_key(|&(c, _)| c);
            for (i, (c, w)) in row.into_iter().enumerate() {
                cols[s + i] = c;
                vals[s + i] = w;
            }
        }
        Rc::new(Csr {
            n,
            offsets,
            cols,
            vals,
        })
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.offsets[r], self.offsets[r + 1]);
        (&self.cols[s..e], &self.vals[s..e])
    }

    /// `y = A x` with `x` in row-major `n x f` layout; rows of `y` are
    /// independent, so callers may parallelize over them.
    pub fn mul_dense(&self, x: &[f64], f: usize, y: &mut [f64]) {
        assert_eq!(x.len(), self.n * f, "spmm input size");
        assert_eq!(y.len(), self.n * f, "spmm output size");
        use rayon::prelude::*;
        y.par_chunks_mut(f).enumerate().for_each(|(r, out)| {
            out.fill(0.0);
            let (cols, vals) = self.row(r);
            for (&c, &w) in cols.iter().zip(vals) {
                let xr = &x[c as usize * f..c as usize * f + f];
                for (o, xv) in out.iter_mut().zip(xr) {
                    *o += w * xv;
                }
            }
        });
    }

    /// Check the symmetry invariant; used by tests and debug assertions.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &w) in cols.iter().zip(vals) {
                let (rc, rv) = self.row(c as usize);
                match rc.binary_search(&(r as u32)) {
                    Ok(p) if (rv[p] - w).abs() <= tol => {}
                    _ => return false,
                }
            }
        }
        true
    }

    /// Dense `n x n` materialization, for small-graph reference paths.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            for (&c, &w) in cols.iter().zip(vals) {
                d[r * self.n + c as usize] = w;
            }
        }
        d
    }
}
