//! The outer loop: globalized regularized semismooth Newton iteration on
//! F(w) = 0 with a nonmonotone acceptance test, an inner regularization
//! ladder, a backtracking rescue, a guaranteed fallback step, and adaptive
//! κ (regularization scale) and σ (penalty) control.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::la;
use crate::linsys::{build_schur, solve_schur, LinsysError, SchurCache, SolveStats};
use crate::model::{FunctionKind, Problem};
use crate::report::SolveReport;
use crate::saddle::{evaluate, kkt_residuals, Evaluation, IterateW, Offsets};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// nonmonotone contraction factor ν ∈ (0,1)
    pub nu: f64,
    /// window length ζ ≥ 1 for the nonmonotone bound
    pub zeta: usize,
    /// initial regularization scale κ
    pub kappa0: f64,
    /// inner ladder growth γ > 1
    pub gamma: f64,
    /// inner ladder length: i = 0..=i_max
    pub i_max: usize,
    /// fallback / inexactness exponent β ∈ (1/2, 1]
    pub beta: f64,
    /// fallback constant c > 0 in τ ≥ c·k^β
    pub fallback_c: f64,
    /// slack sequence ς_k = varsigma0 / k²
    pub varsigma0: f64,
    /// inexactness schedule constant: ‖ε_k‖ ≤ c_eps·k^(−β)
    pub c_eps: f64,
    pub line_search: bool,
    pub max_backtracks: usize,
    /// κ-update thresholds and factors
    pub eta1: f64,
    pub eta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    /// σ-update window, trigger threshold, multiplicative factor, bounds
    pub sigma_window: usize,
    pub sigma_delta: f64,
    pub sigma_factor: f64,
    pub sigma_bounds: (f64, f64),
    pub sigma0: f64,
    /// target on eta_max
    pub tol: f64,
    pub max_iter: usize,
    /// seconds; None = unlimited
    pub time_limit: Option<f64>,
    /// verify ‖(J+τI)d + F − ε‖ ≤ 1e-8(1+‖F‖) at every accepted step
    pub check_residuals: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            nu: 0.999,
            zeta: 10,
            kappa0: 2.0,
            gamma: 10.0,
            i_max: 3,
            beta: 0.6,
            fallback_c: 1.0,
            varsigma0: 1e-4,
            c_eps: 1.0,
            line_search: true,
            max_backtracks: 8,
            eta1: 0.01,
            eta2: 0.2,
            gamma1: 0.5,
            gamma2: 0.9,
            gamma3: 10.0,
            tau_lo: 1e-8,
            tau_hi: 1e4,
            sigma_window: 10,
            sigma_delta: 1.5,
            sigma_factor: 0.5,
            sigma_bounds: (1e-4, 1e6),
            sigma0: 1.0,
            tol: 1e-6,
            max_iter: 500,
            time_limit: None,
            check_residuals: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(format!("nu must lie in (0,1), got {}", self.nu));
        }
        if self.zeta == 0 {
            return Err("zeta must be at least 1".into());
        }
        if self.kappa0 <= 0.0 {
            return Err(format!("kappa0 must be positive, got {}", self.kappa0));
        }
        if self.gamma <= 1.0 {
            return Err(format!("gamma must exceed 1, got {}", self.gamma));
        }
        if !(self.beta > 0.5 && self.beta <= 1.0) {
            return Err(format!("beta must lie in (1/2, 1], got {}", self.beta));
        }
        if self.fallback_c <= 0.0 {
            return Err(format!("fallback constant must be positive, got {}", self.fallback_c));
        }
        if self.sigma0 <= 0.0 {
            return Err(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if self.tol <= 0.0 {
            return Err(format!("tol must be positive, got {}", self.tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcceptTag {
    Nonmonotone,
    Linesearch,
    Fallback,
}

impl AcceptTag {
    pub fn as_str(self) -> &'static str {
        match self {
            AcceptTag::Nonmonotone => "nonmonotone",
            AcceptTag::Linesearch => "linesearch",
            AcceptTag::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    TimeLimit,
    Cancelled,
    NumericalBreakdown,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::TimeLimit => "time-limit",
            SolveStatus::Cancelled => "cancelled",
            SolveStatus::NumericalBreakdown => "numerical-breakdown",
        }
    }
}

/// One appended record per outer iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterTrace {
    pub k: usize,
    pub norm_f: f64,
    pub eta_max: f64,
    pub tau: f64,
    pub inner_i: usize,
    pub accepted_by: AcceptTag,
    pub rho: f64,
    pub sigma: f64,
    pub wall_time: f64,
}

/// Optional per-iteration instrumentation.
#[derive(Default)]
pub struct Hooks<'a> {
    pub progress: Option<Box<dyn FnMut(&IterTrace) + 'a>>,
    pub cancel: Option<Box<dyn FnMut() -> bool + 'a>>,
}

/// Metadata describing how a candidate step was produced.
pub struct StepOutcome {
    pub w_new: IterateW,
    pub ev_new: Evaluation,
    pub d: Vec<f64>,
    pub tau: f64,
    pub inner_i: usize,
    pub tag: AcceptTag,
    pub stats: SolveStats,
    /// max over this step's solves of ‖(J+τI)d + F − ε‖ / (1+‖F‖), if checked
    pub residual_check: Option<f64>,
}

fn tau_ladder_solve(
    problem: &Problem,
    off: &Offsets,
    ev: &Evaluation,
    sigma: f64,
    tau0: f64,
    cg_tol: f64,
    cache: &mut SchurCache,
) -> Result<(Vec<f64>, SolveStats, f64), LinsysError> {
    // the system is SPD by construction; the escalation handles borderline
    // factorizations near machine precision
    let mut tau = tau0;
    let mut last_err = LinsysError::BreakdownNonSpd;
    for _ in 0..=3 {
        let sys = build_schur(problem, off, ev, sigma, tau);
        let mode = sys.default_mode();
        let maxit = 500.max(2 * sys.dim());
        match solve_schur(&sys, mode, cg_tol, maxit, cache) {
            Ok((d1, stats)) => {
                let d = sys.direction(&d1);
                return Ok((d, stats, tau));
            }
            Err(e) => {
                last_err = e;
                tau *= 2.0;
            }
        }
    }
    Err(last_err)
}

fn residual_ratio(
    problem: &Problem,
    off: &Offsets,
    ev: &Evaluation,
    sigma: f64,
    tau: f64,
    d: &[f64],
    stats: &SolveStats,
) -> f64 {
    let sys = build_schur(problem, off, ev, sigma, tau);
    let mut jd = vec![0.0; off.total];
    sys.full_apply(d, &mut jd);
    let mut sq = 0.0f64;
    for i in 0..off.total {
        let mut ri = jd[i] + ev.f[i];
        if i < off.d1_len {
            ri -= stats.residual[i];
        }
        sq += ri * ri;
    }
    sq.sqrt() / (1.0 + ev.norm_f)
}

/// Inner ladder + rescue + fallback; returns the accepted candidate.
pub fn newton_step(
    problem: &Problem,
    off: &Offsets,
    w: &IterateW,
    ev: &Evaluation,
    kappa: f64,
    k: usize,
    bound: f64,
    config: &SolverConfig,
    cache: &mut SchurCache,
) -> Result<StepOutcome, LinsysError> {
    assert!(ev.norm_f > 0.0, "newton_step requires a nonzero residual");
    let sigma = w.sigma;
    let mut check_max: Option<f64> = None;
    let mut record_check = |problem: &Problem,
                            off: &Offsets,
                            ev: &Evaluation,
                            tau: f64,
                            d: &[f64],
                            stats: &SolveStats| {
        if config.check_residuals {
            let r = residual_ratio(problem, off, ev, sigma, tau, d, stats);
            check_max = Some(check_max.map_or(r, |m: f64| m.max(r)));
        }
    };

    let schedule = config.c_eps * (k as f64).powf(-config.beta);
    let mut last: Option<(Vec<f64>, SolveStats, f64, usize)> = None;
    for i in 0..=config.i_max {
        let tau0 = kappa * config.gamma.powi(i as i32) * ev.norm_f;
        let sys_probe = build_schur(problem, off, ev, sigma, tau0);
        let cg_target = (0.1f64.min(ev.norm_f) * la::nrm2(&sys_probe.rhs)).min(schedule);
        drop(sys_probe);
        let (d, stats, tau) =
            tau_ladder_solve(problem, off, ev, sigma, tau0, cg_target, cache)?;
        let mut w_new = w.clone();
        la::axpy(1.0, &d, &mut w_new.w);
        let ev_new = evaluate(problem, &w_new, off);
        let good = ev_new.norm_f <= bound;
        record_check(problem, off, ev, tau, &d, &stats);
        if good {
            return Ok(StepOutcome {
                w_new,
                ev_new,
                d,
                tau,
                inner_i: i,
                tag: AcceptTag::Nonmonotone,
                stats,
                residual_check: check_max,
            });
        }
        last = Some((d, stats, tau, i));
    }

    let (d_last, stats_last, tau_last, i_last) = last.unwrap();
    if config.line_search {
        if let Some((w_new, ev_new)) =
            line_search(problem, off, w, &d_last, bound, config.max_backtracks)
        {
            return Ok(StepOutcome {
                w_new,
                ev_new,
                d: d_last,
                tau: tau_last,
                inner_i: i_last,
                tag: AcceptTag::Linesearch,
                stats: stats_last,
                residual_check: check_max,
            });
        }
    }

    // guaranteed fallback: re-solve with τ ≥ c·k^β, accept unconditionally
    let tau_fb = (config.fallback_c * (k as f64).powf(config.beta)).max(tau_last);
    let sys_probe = build_schur(problem, off, ev, sigma, tau_fb);
    let cg_target = (0.1f64.min(ev.norm_f) * la::nrm2(&sys_probe.rhs)).min(schedule);
    drop(sys_probe);
    let (d, stats, tau) = tau_ladder_solve(problem, off, ev, sigma, tau_fb, cg_target, cache)?;
    let mut w_new = w.clone();
    la::axpy(1.0, &d, &mut w_new.w);
    let ev_new = evaluate(problem, &w_new, off);
    record_check(problem, off, ev, tau, &d, &stats);
    Ok(StepOutcome {
        w_new,
        ev_new,
        d,
        tau,
        inner_i: i_last,
        tag: AcceptTag::Fallback,
        stats,
        residual_check: check_max,
    })
}

/// Backtracking on a fixed direction: α ∈ {1, ½, ¼, ...}, stop at the first
/// α whose residual satisfies the nonmonotone bound.
pub fn line_search(
    problem: &Problem,
    off: &Offsets,
    w: &IterateW,
    d: &[f64],
    bound: f64,
    max_backtracks: usize,
) -> Option<(IterateW, Evaluation)> {
    let mut alpha = 1.0;
    for _ in 0..=max_backtracks {
        let mut w_new = w.clone();
        la::axpy(alpha, d, &mut w_new.w);
        let ev_new = evaluate(problem, &w_new, off);
        if ev_new.norm_f <= bound {
            return Some((w_new, ev_new));
        }
        alpha *= 0.5;
    }
    None
}

/// Three-branch scale control driven by ρ = −⟨d, F(w⁺)⟩/‖d‖².
pub fn update_kappa(kappa: f64, rho: f64, config: &SolverConfig) -> f64 {
    if rho >= config.eta2 {
        (config.gamma1 * kappa).max(config.tau_lo)
    } else if rho >= config.eta1 {
        config.gamma2 * kappa
    } else {
        (config.gamma3 * kappa).min(config.tau_hi)
    }
}

/// Penalty control from the trailing (η_P, η_D) window; returns the new σ.
pub fn update_sigma(history: &[(f64, f64)], sigma: f64, config: &SolverConfig) -> f64 {
    if history.len() < config.sigma_window {
        return sigma;
    }
    let window = &history[history.len() - config.sigma_window..];
    let floor = 1e-16;
    let gp: f64 = window.iter().map(|&(p, _)| p.max(floor).ln()).sum::<f64>()
        / window.len() as f64;
    let gd: f64 = window.iter().map(|&(_, d)| d.max(floor).ln()).sum::<f64>()
        / window.len() as f64;
    let omega = (gp - gd).exp();
    let mut s = sigma;
    if omega > config.sigma_delta {
        s *= config.sigma_factor;
    } else if omega < 1.0 / config.sigma_delta {
        s /= config.sigma_factor;
    }
    s.clamp(config.sigma_bounds.0, config.sigma_bounds.1)
}

fn barrier_mu(problem: &Problem) -> Option<f64> {
    match &problem.spec.p.kind {
        FunctionKind::SocBarrier { mu, .. } => Some(*mu),
        _ => match problem.spec.f.as_ref().map(|f| &f.kind) {
            Some(FunctionKind::SocBarrier { mu, .. }) => Some(*mu),
            _ => None,
        },
    }
}

fn set_barrier_mu(problem: &mut Problem, new_mu: f64) {
    if let FunctionKind::SocBarrier { mu, .. } = &mut problem.spec.p.kind {
        *mu = new_mu;
    }
    if let Some(f) = problem.spec.f.as_mut() {
        if let FunctionKind::SocBarrier { mu, .. } = &mut f.kind {
            *mu = new_mu;
        }
    }
}

/// Run the solver with default hooks.
pub fn solve(
    problem: &Problem,
    config: &SolverConfig,
    w0: Option<IterateW>,
) -> (SolveReport, IterateW) {
    solve_with_hooks(problem, config, w0, Hooks::default())
}

/// Full solver loop; `w0` defaults to all zeros at σ = σ0.
pub fn solve_with_hooks(
    problem: &Problem,
    config: &SolverConfig,
    w0: Option<IterateW>,
    mut hooks: Hooks,
) -> (SolveReport, IterateW) {
    config.validate().expect("invalid solver configuration");
    let start = Instant::now();
    let mut prob = problem.clone();
    let off = Offsets::new(&prob);

    let mu_floor = 1e-10;
    let mut mu = barrier_mu(&prob).map(|_| {
        let m0 = 1e-2 * (1.0 + la::nrm2(&prob.spec.c));
        set_barrier_mu(&mut prob, m0);
        m0
    });

    let mut w = w0.unwrap_or_else(|| IterateW::zeros(&off, config.sigma0));
    if w.sigma <= 0.0 {
        w.sigma = config.sigma0;
    }
    let mut ev = evaluate(&prob, &w, &off);
    let mut kkt = kkt_residuals(&prob, &w, &ev.x, &off);

    let mut kappa = config.kappa0;
    let mut cache = SchurCache::default();
    let mut trace: Vec<IterTrace> = Vec::new();
    let mut norm_history = vec![ev.norm_f];
    let mut infeas_history: Vec<(f64, f64)> = Vec::new();
    let mut check_max: Option<f64> = None;
    let mut status = SolveStatus::MaxIterations;

    let barrier_done = |mu: &Option<f64>, tol: f64| match mu {
        None => true,
        Some(m) => *m <= (1e-2 * tol).max(mu_floor),
    };

    if kkt.eta_max <= config.tol && barrier_done(&mu, config.tol) {
        status = SolveStatus::Converged;
        let report = finish(
            status, 0, start, &prob, &w, &ev, kkt.clone(), trace.clone(), check_max,
        );
        return (report, w);
    }

    let mut iterations = 0;
    for k in 1..=config.max_iter {
        if let Some(c) = hooks.cancel.as_mut() {
            if c() {
                status = SolveStatus::Cancelled;
                break;
            }
        }
        if let Some(limit) = config.time_limit {
            if start.elapsed().as_secs_f64() >= limit {
                status = SolveStatus::TimeLimit;
                break;
            }
        }
        if ev.norm_f == 0.0 {
            // exact root; KKT termination below will fire on the recheck
            status = SolveStatus::Converged;
            break;
        }

        let lo = k.saturating_sub(config.zeta);
        let window_max = norm_history[lo..k]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let bound = config.nu * window_max + config.varsigma0 / ((k * k) as f64);

        let step = match newton_step(&prob, &off, &w, &ev, kappa, k, bound, config, &mut cache)
        {
            Ok(s) => s,
            Err(_) => {
                status = SolveStatus::NumericalBreakdown;
                break;
            }
        };
        if let Some(r) = step.residual_check {
            check_max = Some(check_max.map_or(r, |m| m.max(r)));
        }

        let dn2 = la::dot(&step.d, &step.d);
        let rho = if dn2 > 0.0 {
            -la::dot(&step.d, &step.ev_new.f) / dn2
        } else {
            0.0
        };
        kappa = update_kappa(kappa, rho, config);

        w = step.w_new;
        ev = step.ev_new;
        iterations = k;
        kkt = kkt_residuals(&prob, &w, &ev.x, &off);
        infeas_history.push((kkt.eta_p.unwrap_or(kkt.eta_d), kkt.eta_d));

        // penalty adaptation on a fixed cadence; without a linear constraint
        // block there is no primal-infeasibility signal and sigma stays put
        if k % config.sigma_window == 0 && kkt.eta_p.is_some() {
            let new_sigma = update_sigma(&infeas_history, w.sigma, config);
            if new_sigma != w.sigma {
                let scale = new_sigma / w.sigma;
                for slot in [off.x1, off.x2, off.x3, Some(off.x4)].into_iter().flatten() {
                    la::scal(scale, &mut w.w[slot.range()]);
                }
                w.sigma = new_sigma;
                ev = evaluate(&prob, &w, &off);
                kkt = kkt_residuals(&prob, &w, &ev.x, &off);
            }
        }

        // barrier continuation
        if let Some(m) = mu {
            if kkt.eta_max < 10.0 * m && m > mu_floor {
                let m_new = (m / 10.0).max(mu_floor);
                set_barrier_mu(&mut prob, m_new);
                mu = Some(m_new);
                ev = evaluate(&prob, &w, &off);
                kkt = kkt_residuals(&prob, &w, &ev.x, &off);
            }
        }

        norm_history.push(ev.norm_f);
        let rec = IterTrace {
            k,
            norm_f: ev.norm_f,
            eta_max: kkt.eta_max,
            tau: step.tau,
            inner_i: step.inner_i,
            accepted_by: step.tag,
            rho,
            sigma: w.sigma,
            wall_time: start.elapsed().as_secs_f64(),
        };
        if let Some(p) = hooks.progress.as_mut() {
            p(&rec);
        }
        trace.push(rec);

        if kkt.eta_max <= config.tol && barrier_done(&mu, config.tol) {
            status = SolveStatus::Converged;
            break;
        }
    }

    let report = finish(
        status, iterations, start, &prob, &w, &ev, kkt, trace, check_max,
    );
    (report, w)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    status: SolveStatus,
    iterations: usize,
    start: Instant,
    prob: &Problem,
    w: &IterateW,
    ev: &Evaluation,
    kkt: crate::saddle::KktResiduals,
    trace: Vec<IterTrace>,
    residual_check: Option<f64>,
) -> SolveReport {
    let _ = prob;
    SolveReport {
        status,
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        norm_f: ev.norm_f,
        kkt,
        sigma_final: w.sigma,
        residual_check,
        trace,
        x: ev.x.clone(),
    }
}
