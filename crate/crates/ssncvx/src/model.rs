//! Problem representation: function catalog, box sets, linear operators,
//! and the rules deciding which saddle variables exist.

use crate::la::{self, Csc};
use nalgebra::DMatrix;
use thiserror::Error;

/// Feasibility tolerance for indicator functions: `1e-9 * (1 + ‖x‖)`.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in `{field}`: expected {expected}, got {got}")]
    DimensionMismatch { field: &'static str, expected: usize, got: usize },
    #[error("Q is not symmetric positive semidefinite: {0}")]
    NotPsd(String),
    #[error("model has no objective or constraint blocks")]
    EmptyModel,
    #[error("invalid function spec: {0}")]
    BadFunction(String),
    #[error("invalid box set: lower > upper at index {0}")]
    BadBox(usize),
}

/// How a box set relates to the whole space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxClass {
    /// All bounds infinite — the set is the whole space.
    Absent,
    /// lower = upper everywhere — an equality constraint.
    Singleton,
    General,
}

/// `{x : l ≤ x ≤ u}` with IEEE ±∞ encoding free coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        assert_eq!(lower.len(), upper.len());
        for i in 0..lower.len() {
            if lower[i] > upper[i] {
                return Err(ModelError::BadBox(i));
            }
        }
        Ok(BoxSet { lower, upper })
    }

    pub fn whole_space(dim: usize) -> Self {
        BoxSet { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn nonneg(dim: usize) -> Self {
        BoxSet { lower: vec![0.0; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn singleton(b: Vec<f64>) -> Self {
        BoxSet { lower: b.clone(), upper: b }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn classify(&self) -> BoxClass {
        let all_free = self
            .lower
            .iter()
            .zip(&self.upper)
            .all(|(&l, &u)| l == f64::NEG_INFINITY && u == f64::INFINITY);
        if all_free {
            return BoxClass::Absent;
        }
        if self.lower.iter().zip(&self.upper).all(|(&l, &u)| l == u) {
            return BoxClass::Singleton;
        }
        BoxClass::General
    }

    /// Euclidean projection, elementwise clamp.
    pub fn project(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = x[i].max(self.lower[i]).min(self.upper[i]);
        }
    }

    /// 0/1 diagonal of the projection Jacobian (1 where the bound is inactive).
    pub fn project_jacobian(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| if x[i] > self.lower[i] && x[i] < self.upper[i] { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&xi, (&l, &u))| xi >= l - tol && xi <= u + tol)
    }

    /// Support function `sup { <x, y> : x in the box }`; ±∞ entries give +∞
    /// whenever `y` pushes in an unbounded direction.
    pub fn support(&self, y: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..y.len() {
            if y[i] > 0.0 {
                if self.upper[i] == f64::INFINITY {
                    return f64::INFINITY;
                }
                s += y[i] * self.upper[i];
            } else if y[i] < 0.0 {
                if self.lower[i] == f64::NEG_INFINITY {
                    return f64::INFINITY;
                }
                s += y[i] * self.lower[i];
            }
        }
        s
    }
}

/// Catalog of proximable functions.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionKind {
    Zero,
    /// λ‖x‖₁
    L1 { lambda: f64 },
    /// λ‖x‖₂
    L2Norm { lambda: f64 },
    /// Indicator of `{x : ‖x‖₂ ≤ radius}`.
    L2Ball { radius: f64 },
    /// Indicator of a box.
    BoxIndicator { set: BoxSet },
    /// Indicator of a product of second-order cones `x0 ≥ ‖x̄‖`.
    SocIndicator { dims: Vec<usize> },
    /// −(μ/2) Σ log(x0² − ‖x̄‖²) over a product of cones.
    SocBarrier { dims: Vec<usize>, mu: f64 },
    /// λ Σ σᵢ(X) for X of shape n1×n2, stored column-major.
    NuclearNorm { lambda: f64, n1: usize, n2: usize },
    /// λ σ_max(X).
    SpectralNorm { lambda: f64, n1: usize, n2: usize },
    /// Indicator of the PSD cone over symmetric n×n matrices.
    PsdIndicator { n: usize },
    /// λ1‖x‖₁ + λ2 Σ |x_{i+1} − x_i|  (fused / total-variation).
    Fused { lambda1: f64, lambda2: f64 },
    /// ½‖x‖².
    SquaredLoss,
}

impl FunctionKind {
    /// Intrinsic dimension, when the kind fixes one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            FunctionKind::SocIndicator { dims } | FunctionKind::SocBarrier { dims, .. } => {
                Some(dims.iter().sum())
            }
            FunctionKind::NuclearNorm { n1, n2, .. } | FunctionKind::SpectralNorm { n1, n2, .. } => {
                Some(n1 * n2)
            }
            FunctionKind::PsdIndicator { n } => Some(n * n),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ModelError::BadFunction(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            FunctionKind::Zero | FunctionKind::SquaredLoss => Ok(()),
            FunctionKind::L1 { lambda } | FunctionKind::L2Norm { lambda } => pos(*lambda, "lambda"),
            FunctionKind::L2Ball { radius } => pos(*radius, "radius"),
            FunctionKind::BoxIndicator { set } => {
                for i in 0..set.dim() {
                    if set.lower[i] > set.upper[i] {
                        return Err(ModelError::BadBox(i));
                    }
                }
                Ok(())
            }
            FunctionKind::SocIndicator { dims } => {
                if dims.is_empty() || dims.iter().any(|&d| d < 1) {
                    return Err(ModelError::BadFunction("cone dims must be >= 1".into()));
                }
                Ok(())
            }
            FunctionKind::SocBarrier { dims, mu } => {
                if dims.is_empty() || dims.iter().any(|&d| d < 1) {
                    return Err(ModelError::BadFunction("cone dims must be >= 1".into()));
                }
                pos(*mu, "mu")
            }
            FunctionKind::NuclearNorm { lambda, n1, n2 } | FunctionKind::SpectralNorm { lambda, n1, n2 } => {
                if *n1 == 0 || *n2 == 0 {
                    return Err(ModelError::BadFunction("matrix shape must be nonzero".into()));
                }
                pos(*lambda, "lambda")
            }
            FunctionKind::PsdIndicator { n } => {
                if *n == 0 {
                    return Err(ModelError::BadFunction("matrix shape must be nonzero".into()));
                }
                Ok(())
            }
            FunctionKind::Fused { lambda1, lambda2 } => {
                if *lambda1 < 0.0 || *lambda2 < 0.0 || (*lambda1 == 0.0 && *lambda2 == 0.0) {
                    return Err(ModelError::BadFunction("fused weights must be nonnegative, not both zero".into()));
                }
                Ok(())
            }
        }
    }

    /// Function value at `x` (no shift). Indicators return +∞ outside the
    /// set beyond `FEAS_TOL * (1 + ‖x‖)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        let tol = FEAS_TOL * (1.0 + la::nrm2(x));
        match self {
            FunctionKind::Zero => 0.0,
            FunctionKind::L1 { lambda } => lambda * la::nrm1(x),
            FunctionKind::L2Norm { lambda } => lambda * la::nrm2(x),
            FunctionKind::L2Ball { radius } => {
                if la::nrm2(x) <= radius + tol {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            FunctionKind::BoxIndicator { set } => {
                if set.contains(x, tol) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            FunctionKind::SocIndicator { dims } => {
                let mut off = 0;
                for &d in dims {
                    let blk = &x[off..off + d];
                    let x0 = blk[0];
                    let xb = la::nrm2(&blk[1..]);
                    if x0 < xb - tol {
                        return f64::INFINITY;
                    }
                    off += d;
                }
                0.0
            }
            FunctionKind::SocBarrier { dims, mu } => {
                let mut v = 0.0;
                let mut off = 0;
                for &d in dims {
                    let blk = &x[off..off + d];
                    let det = blk[0] * blk[0] - la::dot(&blk[1..], &blk[1..]);
                    if blk[0] <= 0.0 || det <= 0.0 {
                        return f64::INFINITY;
                    }
                    v += -(mu / 2.0) * det.ln();
                    off += d;
                }
                v
            }
            FunctionKind::NuclearNorm { lambda, n1, n2 } => {
                let sv = singular_values(x, *n1, *n2);
                lambda * sv.iter().sum::<f64>()
            }
            FunctionKind::SpectralNorm { lambda, n1, n2 } => {
                let sv = singular_values(x, *n1, *n2);
                lambda * sv.iter().fold(0.0f64, |m, &s| m.max(s))
            }
            FunctionKind::PsdIndicator { n } => {
                let ew = sym_eigenvalues(x, *n);
                let min = ew.iter().fold(f64::INFINITY, |m, &e| m.min(e));
                if min >= -tol {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            FunctionKind::Fused { lambda1, lambda2 } => {
                let tv: f64 = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
                lambda1 * la::nrm1(x) + lambda2 * tv
            }
            FunctionKind::SquaredLoss => 0.5 * la::dot(x, x),
        }
    }
}

pub(crate) fn singular_values(x: &[f64], n1: usize, n2: usize) -> Vec<f64> {
    let m = DMatrix::from_column_slice(n1, n2, x);
    m.singular_values().iter().copied().collect()
}

pub(crate) fn sym_eigenvalues(x: &[f64], n: usize) -> Vec<f64> {
    let m = DMatrix::from_column_slice(n, n, x);
    let s = (&m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().copied().collect()
}

/// A catalog function plus an optional shift: the modeled term is
/// `g(x − shift)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSpec {
    pub kind: FunctionKind,
    pub shift: Option<Vec<f64>>,
}

impl FunctionSpec {
    pub fn new(kind: FunctionKind) -> Self {
        FunctionSpec { kind, shift: None }
    }

    pub fn with_shift(kind: FunctionKind, shift: Vec<f64>) -> Self {
        FunctionSpec { kind, shift: Some(shift) }
    }

    /// The conjugate is differentiable exactly for the squared loss; then
    /// the corresponding slack variable is dropped from the saddle system.
    pub fn smooth_conjugate(&self) -> bool {
        matches!(self.kind, FunctionKind::SquaredLoss)
    }

    /// Value including the shift.
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.shift {
            None => self.kind.value(x),
            Some(b) => self.kind.value(&la::vsub(x, b)),
        }
    }

    fn check_dim(&self, ambient: usize, field: &'static str) -> Result<(), ModelError> {
        if let Some(d) = self.kind.dim() {
            if d != ambient {
                return Err(ModelError::DimensionMismatch { field, expected: ambient, got: d });
            }
        }
        if let FunctionKind::BoxIndicator { set } = &self.kind {
            if set.dim() != ambient {
                return Err(ModelError::DimensionMismatch { field, expected: ambient, got: set.dim() });
            }
        }
        if let Some(b) = &self.shift {
            if b.len() != ambient {
                return Err(ModelError::DimensionMismatch { field, expected: ambient, got: b.len() });
            }
        }
        Ok(())
    }
}

/// Linear operator representation.
#[derive(Debug, Clone, PartialEq)]
pub enum OpRep {
    Dense(DMatrix<f64>),
    Sparse(Csc),
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    pub rows: usize,
    pub cols: usize,
    pub rep: OpRep,
}

impl LinearOperator {
    pub fn dense(m: DMatrix<f64>) -> Self {
        LinearOperator { rows: m.nrows(), cols: m.ncols(), rep: OpRep::Dense(m) }
    }

    pub fn sparse(s: Csc) -> Self {
        LinearOperator { rows: s.rows, cols: s.cols, rep: OpRep::Sparse(s) }
    }

    pub fn identity(n: usize) -> Self {
        LinearOperator { rows: n, cols: n, rep: OpRep::Identity }
    }

    pub fn from_triplets(rows: usize, cols: usize, t: &[(usize, usize, f64)]) -> Result<Self, ModelError> {
        let s = Csc::from_triplets(rows, cols, t).map_err(ModelError::BadFunction)?;
        Ok(Self::sparse(s))
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match &self.rep {
            OpRep::Dense(a) => la::dense_apply(a, x, out),
            OpRep::Sparse(s) => s.apply(x, out),
            OpRep::Identity => out.copy_from_slice(x),
        }
    }

    pub fn apply_adjoint(&self, x: &[f64], out: &mut [f64]) {
        match &self.rep {
            OpRep::Dense(a) => la::dense_apply_t(a, x, out),
            OpRep::Sparse(s) => s.apply_t(x, out),
            OpRep::Identity => out.copy_from_slice(x),
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply(x, &mut out);
        out
    }

    pub fn apply_adjoint_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.apply_adjoint(x, &mut out);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.rep {
            OpRep::Dense(a) => a.clone(),
            OpRep::Sparse(s) => s.to_dense(),
            OpRep::Identity => DMatrix::identity(self.rows, self.cols),
        }
    }

    pub fn nnz_fraction(&self) -> f64 {
        match &self.rep {
            OpRep::Dense(_) => 1.0,
            OpRep::Sparse(s) => s.nnz() as f64 / (s.rows.max(1) * s.cols.max(1)) as f64,
            OpRep::Identity => 1.0 / self.rows.max(1) as f64,
        }
    }
}

/// Raw problem data for
/// `min p(x) + f(B(x)) + <c,x> + ½<x,Qx>  s.t.  x ∈ P1, A(x) ∈ P2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub n: usize,
    pub p: FunctionSpec,
    pub f: Option<FunctionSpec>,
    pub a: Option<LinearOperator>,
    pub b: Option<LinearOperator>,
    pub q: Option<LinearOperator>,
    pub c: Vec<f64>,
    pub p1: Option<BoxSet>,
    pub p2: Option<BoxSet>,
    /// Skip the O(n³) PSD eigencheck on Q (caller vouches for it).
    pub trust_psd: bool,
}

impl ProblemSpec {
    /// A bare minimization of `p(x) + <c,x>`.
    pub fn new(n: usize, p: FunctionSpec, c: Vec<f64>) -> Self {
        ProblemSpec { n, p, f: None, a: None, b: None, q: None, c, p1: None, p2: None, trust_psd: false }
    }
}

/// Which saddle variables exist, with their dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableLayout {
    pub has_y: bool,
    pub has_x1: bool,
    pub has_z: bool,
    pub has_x2: bool,
    pub has_r: bool,
    pub has_x3: bool,
    pub has_v: bool,
    /// rows of A (0 when absent)
    pub m: usize,
    /// rows of B (0 when f absent)
    pub l: usize,
    /// primal dimension
    pub n: usize,
    /// P2 is a singleton (equality constraint A(x) = b).
    pub p2_singleton: bool,
}

/// Validated problem: spec plus derived layout.
#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub layout: VariableLayout,
}

/// Validate dimensions, normalize defaults (B = I when f is given without
/// B), check Q for symmetry/PSD, and derive the variable layout.
pub fn build_problem(mut spec: ProblemSpec) -> Result<Problem, ModelError> {
    let n = spec.n;
    if spec.c.len() != n {
        return Err(ModelError::DimensionMismatch { field: "c", expected: n, got: spec.c.len() });
    }
    spec.p.kind.validate()?;
    spec.p.check_dim(n, "p")?;

    // f / B block
    let mut l = 0;
    if let Some(f) = &spec.f {
        f.kind.validate()?;
        if spec.b.is_none() {
            spec.b = Some(LinearOperator::identity(n));
        }
        let b = spec.b.as_ref().unwrap();
        if b.cols != n {
            return Err(ModelError::DimensionMismatch { field: "B", expected: n, got: b.cols });
        }
        l = b.rows;
        f.check_dim(l, "f")?;
    } else if spec.b.is_some() {
        return Err(ModelError::BadFunction("B given without f".into()));
    }

    // A / P2 block
    let mut m = 0;
    if let Some(a) = &spec.a {
        if a.cols != n {
            return Err(ModelError::DimensionMismatch { field: "A", expected: n, got: a.cols });
        }
        m = a.rows;
        if let Some(p2) = &spec.p2 {
            if p2.dim() != m {
                return Err(ModelError::DimensionMismatch { field: "P2", expected: m, got: p2.dim() });
            }
        }
    } else if spec.p2.is_some() {
        return Err(ModelError::BadFunction("P2 given without A".into()));
    }

    if let Some(p1) = &spec.p1 {
        if p1.dim() != n {
            return Err(ModelError::DimensionMismatch { field: "P1", expected: n, got: p1.dim() });
        }
    }

    // Q block: shape + symmetry + (optional) eigencheck
    if let Some(q) = &spec.q {
        if q.rows != n || q.cols != n {
            return Err(ModelError::DimensionMismatch { field: "Q", expected: n, got: q.rows.max(q.cols) });
        }
        let qd = q.to_dense();
        let qnorm = qd.norm();
        let asym = (&qd - qd.transpose()).norm();
        if asym > 1e-10 * qnorm.max(1.0) {
            return Err(ModelError::NotPsd(format!("symmetry residual {asym:.3e}")));
        }
        if !spec.trust_psd && n <= 512 {
            let min_ev = qd
                .symmetric_eigenvalues()
                .iter()
                .fold(f64::INFINITY, |mv, &e| mv.min(e));
            if min_ev < -1e-8 * qnorm.max(1.0) {
                return Err(ModelError::NotPsd(format!("min eigenvalue {min_ev:.3e}")));
            }
        }
    }

    let p2_class = spec.p2.as_ref().map(|s| s.classify()).unwrap_or(BoxClass::Absent);
    let p1_class = spec.p1.as_ref().map(|s| s.classify()).unwrap_or(BoxClass::Absent);

    let has_y = spec.a.is_some() && p2_class != BoxClass::Absent;
    let has_x1 = has_y && p2_class != BoxClass::Singleton;
    let has_z = spec.f.is_some();
    let has_x2 = has_z && !spec.f.as_ref().unwrap().smooth_conjugate();
    let has_r = p1_class != BoxClass::Absent;
    let has_v = spec.q.is_some();

    let trivial_objective = matches!(spec.p.kind, FunctionKind::Zero)
        && spec.f.is_none()
        && spec.q.is_none()
        && spec.c.iter().all(|&ci| ci == 0.0);
    if trivial_objective && !has_y && !has_r {
        return Err(ModelError::EmptyModel);
    }

    let layout = VariableLayout {
        has_y,
        has_x1,
        has_z,
        has_x2,
        has_r,
        has_x3: has_r,
        has_v,
        m: if has_y { m } else { 0 },
        l,
        n,
        p2_singleton: p2_class == BoxClass::Singleton,
    };
    Ok(Problem { spec, layout })
}

/// `p(x) + f(B(x)) + <c,x> + ½<x,Qx>`, honoring shifts; +∞ when an
/// indicator is violated.
pub fn objective_value(problem: &Problem, x: &[f64]) -> f64 {
    let spec = &problem.spec;
    assert_eq!(x.len(), spec.n);
    let mut val = spec.p.value(x);
    if !val.is_finite() {
        return val;
    }
    if let (Some(f), Some(b)) = (&spec.f, &spec.b) {
        let bx = b.apply_vec(x);
        let fv = f.value(&bx);
        if !fv.is_finite() {
            return fv;
        }
        val += fv;
    }
    val += la::dot(&spec.c, x);
    if let Some(q) = &spec.q {
        let qx = q.apply_vec(x);
        val += 0.5 * la::dot(x, &qx);
    }
    val
}
