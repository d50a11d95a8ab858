//! The saddle variable w, the residual map F(w) whose root is the optimal
//! saddle point, primal recovery, and the KKT accuracy metrics.
//!
//! Block order in the flat storage is (y, z, r, v | x1, x2, x3, x4): first
//! the multiplier group that the reduced Newton system solves for, then the
//! auxiliary group eliminated in closed form.

use crate::la;
use crate::model::{objective_value, Problem};
use crate::prox::{conjugate_value, shifted_prox_eval, JacobianRep};

/// Half-open slice of the flat iterate vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub start: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Positions of the present blocks inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offsets {
    pub y: Option<Slot>,
    pub z: Option<Slot>,
    pub r: Option<Slot>,
    pub v: Option<Slot>,
    pub x1: Option<Slot>,
    pub x2: Option<Slot>,
    pub x3: Option<Slot>,
    pub x4: Slot,
    /// combined length of (y, z, r, v)
    pub d1_len: usize,
    pub total: usize,
}

impl Offsets {
    pub fn new(problem: &Problem) -> Self {
        let lay = &problem.layout;
        fn take(pos: &mut usize, present: bool, len: usize) -> Option<Slot> {
            if present {
                let s = Slot { start: *pos, len };
                *pos += len;
                Some(s)
            } else {
                None
            }
        }
        let mut pos = 0;
        let y = take(&mut pos, lay.has_y, lay.m);
        let z = take(&mut pos, lay.has_z, lay.l);
        let r = take(&mut pos, lay.has_r, lay.n);
        let v = take(&mut pos, lay.has_v, lay.n);
        let d1_len = pos;
        let x1 = take(&mut pos, lay.has_x1, lay.m);
        let x2 = take(&mut pos, lay.has_x2, lay.l);
        let x3 = take(&mut pos, lay.has_x3, lay.n);
        let x4 = take(&mut pos, true, lay.n).unwrap();
        Offsets {
            y,
            z,
            r,
            v,
            x1,
            x2,
            x3,
            x4,
            d1_len,
            total: pos,
        }
    }
}

/// One iterate of the semismooth Newton loop: the flat saddle vector plus
/// the penalty parameter it is coupled to.
#[derive(Debug, Clone)]
pub struct IterateW {
    pub sigma: f64,
    pub w: Vec<f64>,
}

impl IterateW {
    pub fn zeros(off: &Offsets, sigma: f64) -> Self {
        IterateW {
            sigma,
            w: vec![0.0; off.total],
        }
    }

    pub fn slot<'a>(&'a self, s: Option<Slot>) -> Option<&'a [f64]> {
        s.map(|s| &self.w[s.range()])
    }

    pub fn x4<'a>(&'a self, off: &Offsets) -> &'a [f64] {
        &self.w[off.x4.range()]
    }

    pub fn assert_finite(&self) {
        assert!(
            self.w.iter().all(|v| v.is_finite()),
            "iterate contains non-finite entries"
        );
    }
}

/// Everything one evaluation of F produces: the residual, the recovered
/// primal point, and the prox Jacobians the Newton system is built from.
pub struct Evaluation {
    pub f: Vec<f64>,
    pub norm_f: f64,
    pub u: Vec<f64>,
    /// recovered primal x = prox_{σp}(u)
    pub x: Vec<f64>,
    pub dp: JacobianRep,
    /// box-projection Jacobian diagonal at x1 − σy (general P2 only)
    pub d2: Option<Vec<f64>>,
    /// prox_{σf} Jacobian at x2 − σz (nonsmooth f* only)
    pub df: Option<JacobianRep>,
    /// box-projection Jacobian diagonal at x3 − σr
    pub d1: Option<Vec<f64>>,
}

/// The input u of the primal-recovery prox:
/// u = x4 + σ(A*y + B*z + r − Qv − c).
fn recovery_point(problem: &Problem, w: &IterateW, off: &Offsets) -> Vec<f64> {
    let spec = &problem.spec;
    let n = problem.layout.n;
    let sigma = w.sigma;
    let mut t = vec![0.0; n];
    if let (Some(sy), Some(a)) = (off.y, &spec.a) {
        let mut ay = vec![0.0; n];
        a.apply_adjoint(&w.w[sy.range()], &mut ay);
        la::axpy(1.0, &ay, &mut t);
    }
    if let (Some(sz), Some(b)) = (off.z, &spec.b) {
        let mut bz = vec![0.0; n];
        b.apply_adjoint(&w.w[sz.range()], &mut bz);
        la::axpy(1.0, &bz, &mut t);
    }
    if let Some(sr) = off.r {
        la::axpy(1.0, &w.w[sr.range()], &mut t);
    }
    if let (Some(sv), Some(q)) = (off.v, &spec.q) {
        let mut qv = vec![0.0; n];
        q.apply(&w.w[sv.range()], &mut qv);
        la::axpy(-1.0, &qv, &mut t);
    }
    la::axpy(-1.0, &spec.c, &mut t);
    let x4 = w.x4(off);
    (0..n).map(|i| x4[i] + sigma * t[i]).collect()
}

/// Recovered primal point x = prox_{σp}(u); at a root of F this equals x4.
pub fn recover_primal(problem: &Problem, w: &IterateW, off: &Offsets) -> Vec<f64> {
    let u = recovery_point(problem, w, off);
    shifted_prox_eval(&problem.spec.p, w.sigma, &u).prox
}

/// Evaluate F(w) together with the Jacobian pieces at w.
pub fn evaluate(problem: &Problem, w: &IterateW, off: &Offsets) -> Evaluation {
    let spec = &problem.spec;
    let sigma = w.sigma;
    debug_assert_eq!(w.w.len(), off.total, "iterate does not match layout");

    let u = recovery_point(problem, w, off);
    let pe = shifted_prox_eval(&spec.p, sigma, &u);
    let x = pe.prox;
    let dp = pe.jac;

    let mut f = vec![0.0; off.total];

    // y block and its x1 companion
    let mut d2 = None;
    if let Some(sy) = off.y {
        let a = spec.a.as_ref().expect("layout has y without A");
        let p2 = spec.p2.as_ref().expect("layout has y without P2");
        let mut ax = vec![0.0; sy.len];
        a.apply(&x, &mut ax);
        if problem.layout.p2_singleton {
            for (i, fi) in f[sy.range()].iter_mut().enumerate() {
                *fi = ax[i] - p2.lower[i];
            }
        } else {
            let sx1 = off.x1.expect("general P2 needs x1");
            let yv = &w.w[sy.range()];
            let x1 = &w.w[sx1.range()];
            let q2: Vec<f64> = (0..sy.len).map(|i| x1[i] - sigma * yv[i]).collect();
            let mut proj = vec![0.0; sy.len];
            p2.project(&q2, &mut proj);
            d2 = Some(p2.project_jacobian(&q2));
            for i in 0..sy.len {
                f[sy.start + i] = ax[i] - proj[i];
                f[sx1.start + i] = (x1[i] - proj[i]) / sigma;
            }
        }
    }

    // z block and its x2 companion
    let mut df = None;
    if let Some(sz) = off.z {
        let fspec = spec.f.as_ref().expect("layout has z without f");
        let b = spec.b.as_ref().expect("layout has z without B");
        let mut bx = vec![0.0; sz.len];
        b.apply(&x, &mut bx);
        let zv = &w.w[sz.range()];
        if fspec.smooth_conjugate() {
            // f = ½‖·‖², so ∇f*(−z) = −z and the block is B(x) + z − b2
            let zero = vec![0.0; sz.len];
            let b2 = fspec.shift.as_deref().unwrap_or(&zero);
            for i in 0..sz.len {
                f[sz.start + i] = bx[i] + zv[i] - b2[i];
            }
        } else {
            let sx2 = off.x2.expect("nonsmooth f* needs x2");
            let x2 = &w.w[sx2.range()];
            let q: Vec<f64> = (0..sz.len).map(|i| x2[i] - sigma * zv[i]).collect();
            let fe = shifted_prox_eval(fspec, sigma, &q);
            for i in 0..sz.len {
                f[sz.start + i] = bx[i] - fe.prox[i];
                f[sx2.start + i] = (x2[i] - fe.prox[i]) / sigma;
            }
            df = Some(fe.jac);
        }
    }

    // r block and its x3 companion
    let mut d1 = None;
    if let Some(sr) = off.r {
        let p1 = spec.p1.as_ref().expect("layout has r without P1");
        let sx3 = off.x3.expect("r and x3 are paired");
        let rv = &w.w[sr.range()];
        let x3 = &w.w[sx3.range()];
        let q1: Vec<f64> = (0..sr.len).map(|i| x3[i] - sigma * rv[i]).collect();
        let mut proj = vec![0.0; sr.len];
        p1.project(&q1, &mut proj);
        d1 = Some(p1.project_jacobian(&q1));
        for i in 0..sr.len {
            f[sr.start + i] = x[i] - proj[i];
            f[sx3.start + i] = (x3[i] - proj[i]) / sigma;
        }
    }

    // v block
    if let Some(sv) = off.v {
        let q = spec.q.as_ref().expect("layout has v without Q");
        let vv = &w.w[sv.range()];
        let diff: Vec<f64> = (0..sv.len).map(|i| vv[i] - x[i]).collect();
        let mut qd = vec![0.0; sv.len];
        q.apply(&diff, &mut qd);
        f[sv.range()].copy_from_slice(&qd);
    }

    // x4 block
    {
        let x4 = w.x4(off);
        for i in 0..off.x4.len {
            f[off.x4.start + i] = (x4[i] - x[i]) / sigma;
        }
    }

    let norm_f = la::nrm2(&f);
    Evaluation {
        f,
        norm_f,
        u,
        x,
        dp,
        d2,
        df,
        d1,
    }
}

/// F(w) alone, as a flat stack.
pub fn residual_f(problem: &Problem, w: &IterateW, off: &Offsets) -> Vec<f64> {
    evaluate(problem, w, off).f
}

/// KKT accuracy measures; `eta_max` (gap excluded) drives termination.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct KktResiduals {
    pub eta_p: Option<f64>,
    pub eta_d: f64,
    pub eta_k: f64,
    pub eta_pset: Option<f64>,
    pub eta_gap: f64,
    pub eta_max: f64,
    pub pobj: f64,
    pub dobj: f64,
    /// some dual conjugate term was +∞ and was dropped from dobj
    pub dual_clamped: bool,
}

/// Evaluate the KKT residuals at (w, x) with x the recovered primal.
pub fn kkt_residuals(problem: &Problem, w: &IterateW, x: &[f64], off: &Offsets) -> KktResiduals {
    let spec = &problem.spec;
    let sigma = w.sigma;
    let n = problem.layout.n;
    let nx = la::nrm2(x);

    // dual slack s = (x − u)/σ from the recovery fixed point
    let u = recovery_point(problem, w, off);
    let s: Vec<f64> = (0..n).map(|i| (x[i] - u[i]) / sigma).collect();
    let ns = la::nrm2(&s);

    // primal infeasibility
    let eta_p = match (off.y, &spec.a) {
        (Some(sy), Some(a)) => {
            let p2 = spec.p2.as_ref().unwrap();
            let mut ax = vec![0.0; sy.len];
            a.apply(x, &mut ax);
            let num = if problem.layout.p2_singleton {
                let d: Vec<f64> = (0..sy.len).map(|i| ax[i] - p2.lower[i]).collect();
                la::nrm2(&d)
            } else {
                let yv = &w.w[sy.range()];
                let shifted: Vec<f64> = (0..sy.len).map(|i| ax[i] - yv[i]).collect();
                let mut proj = vec![0.0; sy.len];
                p2.project(&shifted, &mut proj);
                let d: Vec<f64> = (0..sy.len).map(|i| ax[i] - proj[i]).collect();
                la::nrm2(&d)
            };
            Some(num / (1.0 + nx))
        }
        _ => None,
    };

    // dual infeasibility: A*y + B*z + s + r − Qv − c, which telescopes to
    // (x − x4)/σ through the recovery identity
    let eta_d = {
        let x4 = w.x4(off);
        let d: Vec<f64> = (0..n).map(|i| (x[i] - x4[i]) / sigma).collect();
        la::nrm2(&d) / (1.0 + la::nrm2(&spec.c))
    };

    // complementarity for p (and the Q coupling when present)
    let eta_k = {
        let shifted: Vec<f64> = (0..n).map(|i| x[i] - s[i]).collect();
        let pe = shifted_prox_eval(&spec.p, 1.0, &shifted);
        let d: Vec<f64> = (0..n).map(|i| x[i] - pe.prox[i]).collect();
        let mut best = la::nrm2(&d) / (1.0 + ns + nx);
        if let (Some(sv), Some(q)) = (off.v, &spec.q) {
            let vv = &w.w[sv.range()];
            let diff: Vec<f64> = (0..n).map(|i| vv[i] - x[i]).collect();
            let mut qd = vec![0.0; n];
            q.apply(&diff, &mut qd);
            let mut qv = vec![0.0; n];
            q.apply(vv, &mut qv);
            let mut qx = vec![0.0; n];
            q.apply(x, &mut qx);
            best = best.min(la::nrm2(&qd) / (1.0 + la::nrm2(&qv) + la::nrm2(&qx)));
        }
        best
    };

    // membership/complementarity for f and P1
    let mut eta_pset: Option<f64> = None;
    if let (Some(sz), Some(fspec), Some(b)) = (off.z, &spec.f, &spec.b) {
        let zv = &w.w[sz.range()];
        let mut bx = vec![0.0; sz.len];
        b.apply(x, &mut bx);
        let nbx = la::nrm2(&bx);
        let nz = la::nrm2(zv);
        let num = if fspec.smooth_conjugate() {
            let zero = vec![0.0; sz.len];
            let b2 = fspec.shift.as_deref().unwrap_or(&zero);
            let d: Vec<f64> = (0..sz.len).map(|i| bx[i] + zv[i] - b2[i]).collect();
            la::nrm2(&d)
        } else {
            let shifted: Vec<f64> = (0..sz.len).map(|i| bx[i] - zv[i]).collect();
            let fe = shifted_prox_eval(fspec, 1.0, &shifted);
            let d: Vec<f64> = (0..sz.len).map(|i| bx[i] - fe.prox[i]).collect();
            la::nrm2(&d)
        };
        eta_pset = Some(num / (1.0 + nbx + nz));
    }
    if let Some(sr) = off.r {
        let p1 = spec.p1.as_ref().unwrap();
        let rv = &w.w[sr.range()];
        let shifted: Vec<f64> = (0..n).map(|i| x[i] - rv[i]).collect();
        let mut proj = vec![0.0; n];
        p1.project(&shifted, &mut proj);
        let d: Vec<f64> = (0..n).map(|i| x[i] - proj[i]).collect();
        let val = la::nrm2(&d) / (1.0 + nx + la::nrm2(rv));
        eta_pset = Some(match eta_pset {
            Some(e) => e.min(val),
            None => val,
        });
    }

    let pobj = objective_value(problem, x);
    let (dobj, dual_clamped) = dual_objective(problem, w, &s, off);

    let eta_gap = if pobj.is_finite() && dobj.is_finite() {
        (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs())
    } else {
        f64::INFINITY
    };

    let mut eta_max = eta_d.max(eta_k);
    if let Some(e) = eta_p {
        eta_max = eta_max.max(e);
    }
    if let Some(e) = eta_pset {
        eta_max = eta_max.max(e);
    }

    KktResiduals {
        eta_p,
        eta_d,
        eta_k,
        eta_pset,
        eta_gap,
        eta_max,
        pobj,
        dobj,
        dual_clamped,
    }
}

/// Dual objective −[δ*_{P2}(−y) + f*(−z) − <b2,z> + p*(−s) − <b1,s>
/// + ½<Qv,v> + δ*_{P1}(−r)], with +∞ conjugate terms dropped and flagged.
fn dual_objective(problem: &Problem, w: &IterateW, s: &[f64], off: &Offsets) -> (f64, bool) {
    let spec = &problem.spec;
    let mut total = 0.0;
    let mut clamped = false;
    let mut add = |term: f64| {
        if term.is_finite() {
            total += term;
        } else {
            clamped = true;
        }
    };

    if let Some(sy) = off.y {
        let p2 = spec.p2.as_ref().unwrap();
        let neg: Vec<f64> = w.w[sy.range()].iter().map(|v| -v).collect();
        add(p2.support(&neg));
    }
    if let Some(sz) = off.z {
        let fspec = spec.f.as_ref().unwrap();
        let zv = &w.w[sz.range()];
        let neg: Vec<f64> = zv.iter().map(|v| -v).collect();
        add(conjugate_value(&fspec.kind, &neg));
        if let Some(b2) = &fspec.shift {
            add(-la::dot(b2, zv));
        }
    }
    {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        add(conjugate_value(&spec.p.kind, &neg));
        if let Some(b1) = &spec.p.shift {
            add(-la::dot(b1, s));
        }
    }
    if let (Some(sv), Some(q)) = (off.v, &spec.q) {
        let vv = &w.w[sv.range()];
        let mut qv = vec![0.0; sv.len];
        q.apply(vv, &mut qv);
        add(0.5 * la::dot(&qv, vv));
    }
    if let Some(sr) = off.r {
        let p1 = spec.p1.as_ref().unwrap();
        let neg: Vec<f64> = w.w[sr.range()].iter().map(|v| -v).collect();
        add(p1.support(&neg));
    }
    (-total, clamped)
}
