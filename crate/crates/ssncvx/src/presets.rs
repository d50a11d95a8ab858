//! Seeded generators for the six benchmark problem families used by the
//! regression and acceptance suites.
//!
//! All randomness flows through a counter-based [`ChaCha8Rng`] keyed by the
//! caller's seed, so a `(name, seed, sizes)` triple always produces an
//! identical [`ProblemSpec`] regardless of platform.

use crate::la::{self};
use crate::model::{BoxSet, FunctionKind, FunctionSpec, LinearOperator, ProblemSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Largest vector dimension a preset will generate.
pub const MAX_N: usize = 5000;
/// Largest matrix side for the matrix-variable presets (spca, lrmc).
pub const MAX_MATRIX_DIM: usize = 256;

/// Canonical preset names accepted by [`generate_preset`].
pub const PRESET_NAMES: [&str; 6] =
    ["lasso", "fused-lasso", "qp-portfolio", "socp", "spca", "lrmc"];

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset `{0}` (expected one of: lasso, fused-lasso, qp-portfolio, socp, spca, lrmc)")]
    UnknownPreset(String),
    #[error("preset size `{field}` = {value} outside supported range {min}..={max}")]
    SizeCap { field: &'static str, value: usize, min: usize, max: usize },
}

/// Size overrides; `None` keeps a preset's default. `n`/`m` are the vector
/// dimension and row count for the regression families, the matrix side for
/// spca/lrmc. `barrier` switches the socp preset to the smoothed cone
/// barrier (not exposed on the command line).
#[derive(Debug, Clone, Copy, Default)]
pub struct PresetOptions {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub barrier: bool,
}

impl PresetOptions {
    pub fn sized(n: Option<usize>, m: Option<usize>) -> Self {
        PresetOptions { n, m, barrier: false }
    }
}

/// Build one of the named test problems from a seed.
pub fn generate_preset(
    name: &str,
    seed: u64,
    opts: PresetOptions,
) -> Result<ProblemSpec, PresetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "lasso" => lasso(&mut rng, opts),
        "fused-lasso" => fused_lasso(&mut rng, opts),
        "qp-portfolio" => qp_portfolio(&mut rng, opts),
        "socp" => socp(&mut rng, opts),
        "spca" => spca(&mut rng, opts),
        "lrmc" => lrmc(&mut rng, opts),
        other => Err(PresetError::UnknownPreset(other.to_string())),
    }
}

fn check(
    field: &'static str,
    value: usize,
    min: usize,
    max: usize,
) -> Result<usize, PresetError> {
    if value < min || value > max {
        return Err(PresetError::SizeCap { field, value, min, max });
    }
    Ok(value)
}

fn randn_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Column-major fill so draw order matches storage order.
fn randn_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let data = randn_vec(rng, rows * cols);
    DMatrix::from_column_slice(rows, cols, &data)
}

/// `k` standard-normal entries at distinct random positions.
fn planted_sparse(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<f64> {
    let mut idx = rand::seq::index::sample(rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    let mut x = vec![0.0; n];
    for i in idx {
        x[i] = rng.sample::<f64, _>(StandardNormal);
    }
    x
}

/// Piecewise-constant signal: `segments` equal runs, each zero or a shared
/// normal value.
fn planted_piecewise(rng: &mut ChaCha8Rng, n: usize, segments: usize) -> Vec<f64> {
    let nseg = segments.clamp(1, n);
    let mut x = vec![0.0; n];
    for s in 0..nseg {
        let lo = s * n / nseg;
        let hi = (s + 1) * n / nseg;
        let val: f64 = if rng.gen_bool(0.5) { 0.0 } else { rng.sample(StandardNormal) };
        x[lo..hi].fill(val);
    }
    x
}

/// `B x_true` plus 1% measurement noise.
fn regression_rhs(rng: &mut ChaCha8Rng, bmat: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut b = (bmat * DVector::from_column_slice(x)).as_slice().to_vec();
    for bi in &mut b {
        *bi += 0.01 * rng.sample::<f64, _>(StandardNormal);
    }
    b
}

/// `min ½‖Bx − b‖² + λ‖x‖₁` with a planted sparse signal and
/// `λ = 1e-3 ‖Bᵀb‖∞`.
fn lasso(rng: &mut ChaCha8Rng, opts: PresetOptions) -> Result<ProblemSpec, PresetError> {
    let n = check("n", opts.n.unwrap_or(1000), 1, MAX_N)?;
    let m = check("m", opts.m.unwrap_or(200), 1, MAX_N)?;
    let bmat = randn_dense(rng, m, n);
    let x_true = planted_sparse(rng, n, (n / 20).max(1));
    let b = regression_rhs(rng, &bmat, &x_true);
    let op = LinearOperator::dense(bmat);
    let lambda = 1e-3 * la::nrm_inf(&op.apply_adjoint_vec(&b));
    let mut spec = ProblemSpec::new(n, FunctionSpec::new(FunctionKind::L1 { lambda }), vec![0.0; n]);
    spec.f = Some(FunctionSpec::with_shift(FunctionKind::SquaredLoss, b));
    spec.b = Some(op);
    Ok(spec)
}

/// `min ½‖Bx − b‖² + λ₁‖x‖₁ + λ₂ Σ|x_{i+1} − x_i|` with a piecewise-constant
/// signal, `λ₁ = 1e-3 ‖Bᵀb‖∞`, `λ₂ = 5 λ₁`.
fn fused_lasso(rng: &mut ChaCha8Rng, opts: PresetOptions) -> Result<ProblemSpec, PresetError> {
    let n = check("n", opts.n.unwrap_or(500), 2, MAX_N)?;
    let m = check("m", opts.m.unwrap_or(200), 1, MAX_N)?;
    let bmat = randn_dense(rng, m, n);
    let x_true = planted_piecewise(rng, n, 10);
    let b = regression_rhs(rng, &bmat, &x_true);
    let op = LinearOperator::dense(bmat);
    let lambda1 = 1e-3 * la::nrm_inf(&op.apply_adjoint_vec(&b));
    let lambda2 = 5.0 * lambda1;
    let mut spec = ProblemSpec::new(
        n,
        FunctionSpec::new(FunctionKind::Fused { lambda1, lambda2 }),
        vec![0.0; n],
    );
    spec.f = Some(FunctionSpec::with_shift(FunctionKind::SquaredLoss, b));
    spec.b = Some(op);
    Ok(spec)
}

/// Markowitz-style QP `min ½⟨x,Qx⟩ + ⟨c,x⟩ s.t. ⟨e,x⟩ = 1, x ≥ 0` with a
/// factor-model covariance: `Q = 2(cov + D)`, `cov` from a sparse n×p factor
/// loading matrix, `D` a positive diagonal.
fn qp_portfolio(rng: &mut ChaCha8Rng, opts: PresetOptions) -> Result<ProblemSpec, PresetError> {
    let n = check("n", opts.n.unwrap_or(512), 1, MAX_N)?;
    let p_dim = ((0.01 * n as f64).round() as usize).max(1);
    let mut fmat = DMatrix::zeros(n, p_dim);
    for j in 0..p_dim {
        for i in 0..n {
            if rng.gen_bool(0.1) {
                fmat[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let denom = (p_dim.max(2) - 1) as f64;
    for i in 0..n {
        let mean = fmat.row(i).sum() / p_dim as f64;
        for j in 0..p_dim {
            fmat[(i, j)] -= mean;
        }
    }
    let mut q = (&fmat * fmat.transpose()) / denom;
    for i in 0..n {
        q[(i, i)] += (p_dim as f64).sqrt() * rng.gen::<f64>();
    }
    q *= 2.0;
    let c = randn_vec(rng, n);
    let mut spec = ProblemSpec::new(n, FunctionSpec::new(FunctionKind::Zero), c);
    spec.q = Some(LinearOperator::dense(q));
    spec.a = Some(LinearOperator::dense(DMatrix::from_element(1, n, 1.0)));
    spec.p2 = Some(BoxSet::singleton(vec![1.0]));
    spec.p1 = Some(BoxSet::nonneg(n));
    spec.trust_psd = true;
    Ok(spec)
}

fn split_dims(n: usize, cones: usize) -> Vec<usize> {
    let base = n / cones;
    let extra = n % cones;
    (0..cones).map(|i| base + usize::from(i < extra)).collect()
}

/// Strictly interior point of a product of second-order cones.
fn interior_point(rng: &mut ChaCha8Rng, dims: &[usize]) -> Vec<f64> {
    let mut x = Vec::new();
    for &d in dims {
        let tail = randn_vec(rng, d - 1);
        x.push(la::nrm2(&tail) + 1.0);
        x.extend(tail);
    }
    x
}

/// `min ⟨c,x⟩ s.t. Ax = b, x ∈ K` over five second-order cones, generated
/// primal-dual strictly feasible so the optimum is finite and attained.
fn socp(rng: &mut ChaCha8Rng, opts: PresetOptions) -> Result<ProblemSpec, PresetError> {
    let cones = 5usize;
    let n = check("n", opts.n.unwrap_or(50), cones, MAX_N)?;
    let m = check("m", opts.m.unwrap_or(n / 2), 1, MAX_N)?;
    let dims = split_dims(n, cones);
    let amat = randn_dense(rng, m, n);
    let x0 = interior_point(rng, &dims);
    let y0 = randn_vec(rng, m);
    let s0 = interior_point(rng, &dims);
    let a = LinearOperator::dense(amat);
    let b = a.apply_vec(&x0);
    let mut c = a.apply_adjoint_vec(&y0);
    for (ci, si) in c.iter_mut().zip(&s0) {
        *ci += si;
    }
    let kind = if opts.barrier {
        FunctionKind::SocBarrier { dims, mu: 1.0 }
    } else {
        FunctionKind::SocIndicator { dims }
    };
    let mut spec = ProblemSpec::new(n, FunctionSpec::new(kind), c);
    spec.a = Some(a);
    spec.p2 = Some(BoxSet::singleton(b));
    Ok(spec)
}

/// Sparse-PCA relaxation `min −⟨L,X⟩ + ‖X‖₁ s.t. Tr(X) = 1, X ⪰ 0`, with the
/// spiked matrix `L = uuᵀ/‖u‖ + VVᵀ`, `u = (1, 1/2, …, 1/n)`, `V` uniform.
fn spca(rng: &mut ChaCha8Rng, opts: PresetOptions) -> Result<ProblemSpec, PresetError> {
    let nmat = check("n", opts.n.unwrap_or(64), 1, MAX_MATRIX_DIM)?;
    let nsq = nmat * nmat;
    let u: Vec<f64> = (1..=nmat).map(|i| 1.0 / i as f64).collect();
    let unorm = la::nrm2(&u);
    let mut l = DMatrix::zeros(nmat, nmat);
    for j in 0..nmat {
        for i in 0..nmat {
            l[(i, j)] = u[i] * u[j] / unorm;
        }
    }
    let mut v = DMatrix::zeros(nmat, nmat);
    for j in 0..nmat {
        for i in 0..nmat {
            v[(i, j)] = rng.gen::<f64>();
        }
    }
    l += &v * v.transpose();
    let c: Vec<f64> = l.as_slice().iter().map(|&t| -t).collect();
    let trace: Vec<(usize, usize, f64)> = (0..nmat).map(|i| (0, i * (nmat + 1), 1.0)).collect();
    let mut spec =
        ProblemSpec::new(nsq, FunctionSpec::new(FunctionKind::PsdIndicator { n: nmat }), c);
    spec.f = Some(FunctionSpec::new(FunctionKind::L1 { lambda: 1.0 }));
    spec.a = Some(LinearOperator::from_triplets(1, nsq, &trace).expect("trace row"));
    spec.p2 = Some(BoxSet::singleton(vec![1.0]));
    Ok(spec)
}

/// Matrix completion `min ½‖B(X) − b‖² + λ‖X‖_*` from ~50% of the entries of
/// a planted rank-3 matrix; `λ = 1e-3 σ_max` of the zero-filled observation
/// matrix.
fn lrmc(rng: &mut ChaCha8Rng, opts: PresetOptions) -> Result<ProblemSpec, PresetError> {
    let nmat = check("n", opts.n.unwrap_or(64), 1, MAX_MATRIX_DIM)?;
    let rank = 3.min(nmat);
    let nsq = nmat * nmat;
    let umat = randn_dense(rng, nmat, rank);
    let vmat = randn_dense(rng, nmat, rank);
    let mmat = &umat * vmat.transpose();
    let mut triplets = Vec::new();
    let mut vals = Vec::new();
    let mut masked = DMatrix::zeros(nmat, nmat);
    for j in 0..nmat {
        for i in 0..nmat {
            if rng.gen_bool(0.5) {
                triplets.push((vals.len(), j * nmat + i, 1.0));
                vals.push(mmat[(i, j)]);
                masked[(i, j)] = mmat[(i, j)];
            }
        }
    }
    if vals.is_empty() {
        triplets.push((0, 0, 1.0));
        vals.push(mmat[(0, 0)]);
        masked[(0, 0)] = mmat[(0, 0)];
    }
    let rows = vals.len();
    let bop = LinearOperator::from_triplets(rows, nsq, &triplets).expect("mask rows");
    let sv = nalgebra::linalg::SVD::new(masked, false, false).singular_values;
    let sigma_max = sv.iter().fold(0.0f64, |acc, &s| acc.max(s));
    let lambda = 1e-3 * sigma_max;
    let mut spec = ProblemSpec::new(
        nsq,
        FunctionSpec::new(FunctionKind::NuclearNorm { lambda, n1: nmat, n2: nmat }),
        vec![0.0; nsq],
    );
    spec.f = Some(FunctionSpec::with_shift(FunctionKind::SquaredLoss, vals));
    spec.b = Some(bop);
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_problem, BoxClass};

    fn small_opts(name: &str) -> PresetOptions {
        let (n, m) = match name {
            "lasso" => (60, Some(20)),
            "fused-lasso" => (40, Some(20)),
            "qp-portfolio" => (32, None),
            "socp" => (15, Some(7)),
            "spca" => (6, None),
            "lrmc" => (8, None),
            _ => unreachable!(),
        };
        PresetOptions::sized(Some(n), m)
    }

    #[test]
    fn presets_are_seed_deterministic_and_buildable() {
        for name in PRESET_NAMES {
            let opts = small_opts(name);
            let a = generate_preset(name, 7, opts).unwrap();
            let b = generate_preset(name, 7, opts).unwrap();
            assert!(a == b, "{name} not deterministic");
            let c = generate_preset(name, 8, opts).unwrap();
            assert!(a != c, "{name} ignores its seed");
            build_problem(a).unwrap_or_else(|e| panic!("{name} invalid: {e}"));
        }
    }

    #[test]
    fn lasso_lambda_follows_correlation_rule() {
        let spec = generate_preset("lasso", 3, small_opts("lasso")).unwrap();
        let op = spec.b.as_ref().unwrap();
        let b = spec.f.as_ref().unwrap().shift.as_ref().unwrap();
        let expect = 1e-3 * la::nrm_inf(&op.apply_adjoint_vec(b));
        match spec.p.kind {
            FunctionKind::L1 { lambda } => assert_eq!(lambda, expect),
            ref k => panic!("unexpected kind {k:?}"),
        }
    }

    #[test]
    fn fused_penalties_are_coupled() {
        let spec = generate_preset("fused-lasso", 3, small_opts("fused-lasso")).unwrap();
        match spec.p.kind {
            FunctionKind::Fused { lambda1, lambda2 } => {
                assert!(lambda1 > 0.0);
                assert_eq!(lambda2, 5.0 * lambda1);
            }
            ref k => panic!("unexpected kind {k:?}"),
        }
    }

    #[test]
    fn qp_has_simplex_structure_and_spd_quadratic() {
        let spec = generate_preset("qp-portfolio", 5, small_opts("qp-portfolio")).unwrap();
        assert_eq!(spec.p2.as_ref().unwrap().classify(), BoxClass::Singleton);
        assert_eq!(spec.p2.as_ref().unwrap().lower, vec![1.0]);
        assert_eq!(spec.p1.as_ref().unwrap().classify(), BoxClass::General);
        let q = spec.q.as_ref().unwrap().to_dense();
        assert_eq!((&q - q.transpose()).norm(), 0.0);
        let eig = q.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e > 0.0), "Q not SPD: min eig {:?}", eig.min());
        let a = spec.a.as_ref().unwrap().to_dense();
        assert!(a.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn socp_data_is_strictly_feasible_by_construction() {
        let spec = generate_preset("socp", 11, small_opts("socp")).unwrap();
        match &spec.p.kind {
            FunctionKind::SocIndicator { dims } => {
                assert_eq!(dims.iter().sum::<usize>(), 15);
                assert_eq!(dims.len(), 5);
            }
            k => panic!("unexpected kind {k:?}"),
        }
        let barrier =
            generate_preset("socp", 11, PresetOptions { barrier: true, ..small_opts("socp") })
                .unwrap();
        assert!(matches!(barrier.p.kind, FunctionKind::SocBarrier { .. }));
    }

    #[test]
    fn lrmc_mask_selects_entries() {
        let spec = generate_preset("lrmc", 2, small_opts("lrmc")).unwrap();
        let op = spec.b.as_ref().unwrap();
        assert_eq!(op.cols, 64);
        let d = op.to_dense();
        for r in 0..op.rows {
            assert_eq!(d.row(r).sum(), 1.0, "row {r} is not a selector");
        }
    }

    #[test]
    fn bad_inputs_are_rejected_by_name() {
        match generate_preset("ridge", 1, PresetOptions::default()) {
            Err(PresetError::UnknownPreset(s)) => assert_eq!(s, "ridge"),
            other => panic!("expected UnknownPreset, got {other:?}"),
        }
        match generate_preset("spca", 1, PresetOptions::sized(Some(300), None)) {
            Err(PresetError::SizeCap { field, value, max, .. }) => {
                assert_eq!(field, "n");
                assert_eq!(value, 300);
                assert_eq!(max, MAX_MATRIX_DIM);
            }
            other => panic!("expected SizeCap, got {other:?}"),
        }
    }
}
