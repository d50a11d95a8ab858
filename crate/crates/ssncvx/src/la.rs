//! Vector helpers and minimal dense/sparse matrix kernels.
//!
//! Dense factorizations come from [`nalgebra`]; solver iterates are plain
//! `Vec<f64>` slices. With the `parallel` feature the larger matrix-vector
//! products run on a rayon pool whose size is capped by the
//! `SSNCVX_THREADS` environment variable.

use nalgebra::DMatrix;
use std::sync::OnceLock;

/// Work threshold (flop count) below which products stay sequential.
const PAR_WORK: usize = 1 << 15;

/// Number of worker threads: `SSNCVX_THREADS` if set, else the machine's
/// available parallelism.
pub fn max_threads() -> usize {
    static N: OnceLock<usize> = OnceLock::new();
    *N.get_or_init(|| {
        std::env::var("SSNCVX_THREADS")
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or_else(|| {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            })
    })
}

#[cfg(feature = "parallel")]
pub(crate) fn pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(max_threads())
            .build()
            .expect("failed to build worker pool")
    })
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn nrm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn nrm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[inline]
pub fn nrm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn scal(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

/// a - b as a fresh vector.
pub fn vsub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Euclidean distance ‖a − b‖.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// out = A x for a column-major dense matrix.
pub fn dense_apply(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let (m, n) = a.shape();
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(out.len(), m);
    let data = a.as_slice();
    #[cfg(feature = "parallel")]
    if m * n >= PAR_WORK && max_threads() > 1 {
        use rayon::prelude::*;
        // fixed chunking + ordered combination: the float summation order
        // must not depend on work-stealing, or repeat runs drift bitwise
        let chunk = n.div_ceil(max_threads() * 4).max(1);
        let partials: Vec<Vec<f64>> = pool().install(|| {
            (0..n.div_ceil(chunk))
                .into_par_iter()
                .map(|ci| {
                    let lo = ci * chunk;
                    let hi = ((ci + 1) * chunk).min(n);
                    let mut acc = vec![0.0; m];
                    for j in lo..hi {
                        let xj = x[j];
                        if xj != 0.0 {
                            let col = &data[j * m..(j + 1) * m];
                            for i in 0..m {
                                acc[i] += xj * col[i];
                            }
                        }
                    }
                    acc
                })
                .collect()
        });
        out.fill(0.0);
        for p in &partials {
            for i in 0..m {
                out[i] += p[i];
            }
        }
        return;
    }
    out.fill(0.0);
    for j in 0..n {
        let xj = x[j];
        if xj != 0.0 {
            let col = &data[j * m..(j + 1) * m];
            for i in 0..m {
                out[i] += xj * col[i];
            }
        }
    }
}

/// out = Aᵀ x for a column-major dense matrix.
pub fn dense_apply_t(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let (m, n) = a.shape();
    debug_assert_eq!(x.len(), m);
    debug_assert_eq!(out.len(), n);
    let data = a.as_slice();
    #[cfg(feature = "parallel")]
    if m * n >= PAR_WORK && max_threads() > 1 {
        use rayon::prelude::*;
        pool().install(|| {
            out.par_iter_mut().enumerate().for_each(|(j, o)| {
                *o = dot(&data[j * m..(j + 1) * m], x);
            });
        });
        return;
    }
    for j in 0..n {
        out[j] = dot(&data[j * m..(j + 1) * m], x);
    }
}

/// Compressed sparse column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csc {
    pub rows: usize,
    pub cols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csc {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, String> {
        for &(i, j, _) in triplets {
            if i >= rows || j >= cols {
                return Err(format!("triplet ({i}, {j}) outside {rows}x{cols}"));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].1, triplets[k].0));
        let mut colptr = vec![0usize; cols + 1];
        let mut rowind = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        for &k in &order {
            let (i, j, v) = triplets[k];
            if let (Some(&li), Some(lv)) = (rowind.last(), vals.last_mut()) {
                if li == i && colptr[j + 1] > 0 && rowind.len() == colptr[j + 1] {
                    // same (i, j) as the previous entry: accumulate
                    *lv += v;
                    continue;
                }
            }
            rowind.push(i);
            vals.push(v);
            colptr[j + 1] = rowind.len();
        }
        // make colptr cumulative over empty columns too
        for j in 0..cols {
            if colptr[j + 1] < colptr[j] {
                colptr[j + 1] = colptr[j];
            }
        }
        Ok(Csc { rows, cols, colptr, rowind, vals })
    }

    pub fn identity(n: usize) -> Self {
        Csc {
            rows: n,
            cols: n,
            colptr: (0..=n).collect(),
            rowind: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// out = S x
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        #[cfg(feature = "parallel")]
        if self.nnz() >= PAR_WORK && max_threads() > 1 {
            use rayon::prelude::*;
            let m = self.rows;
            let n = self.cols;
            // same ordered-chunk scheme as dense_apply, for bitwise
            // reproducibility of repeated runs
            let chunk = n.div_ceil(max_threads() * 4).max(1);
            let partials: Vec<Vec<f64>> = pool().install(|| {
                (0..n.div_ceil(chunk))
                    .into_par_iter()
                    .map(|ci| {
                        let lo = ci * chunk;
                        let hi = ((ci + 1) * chunk).min(n);
                        let mut acc = vec![0.0; m];
                        for j in lo..hi {
                            let xj = x[j];
                            if xj != 0.0 {
                                for k in self.colptr[j]..self.colptr[j + 1] {
                                    acc[self.rowind[k]] += xj * self.vals[k];
                                }
                            }
                        }
                        acc
                    })
                    .collect()
            });
            out.fill(0.0);
            for p in &partials {
                for i in 0..m {
                    out[i] += p[i];
                }
            }
            return;
        }
        out.fill(0.0);
        for j in 0..self.cols {
            let xj = x[j];
            if xj != 0.0 {
                for k in self.colptr[j]..self.colptr[j + 1] {
                    out[self.rowind[k]] += xj * self.vals[k];
                }
            }
        }
    }

    /// out = Sᵀ x
    pub fn apply_t(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        #[cfg(feature = "parallel")]
        if self.nnz() >= PAR_WORK && max_threads() > 1 {
            use rayon::prelude::*;
            pool().install(|| {
                out.par_iter_mut().enumerate().for_each(|(j, o)| {
                    let mut s = 0.0;
                    for k in self.colptr[j]..self.colptr[j + 1] {
                        s += self.vals[k] * x[self.rowind[k]];
                    }
                    *o = s;
                });
            });
            return;
        }
        for j in 0..self.cols {
            let mut s = 0.0;
            for k in self.colptr[j]..self.colptr[j + 1] {
                s += self.vals[k] * x[self.rowind[k]];
            }
            out[j] = s;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows, self.cols);
        for j in 0..self.cols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                d[(self.rowind[k], j)] += self.vals[k];
            }
        }
        d
    }
}
