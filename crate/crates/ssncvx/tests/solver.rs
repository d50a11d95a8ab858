//! Integration coverage of the solver loop across the preset families:
//! linear-system mode agreement, run-to-run determinism, deep residual
//! decrease, and the barrier continuation path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ssncvx::la;
use ssncvx::linsys::{build_schur, solve_schur, SchurCache, SolveMode};
use ssncvx::model::build_problem;
use ssncvx::presets::{generate_preset, PresetOptions, PRESET_NAMES};
use ssncvx::saddle::{evaluate, IterateW, Offsets};
use ssncvx::{solve, FunctionKind, SolverConfig};

fn small_opts(name: &str) -> PresetOptions {
    let (n, m) = match name {
        "lasso" => (60, Some(25)),
        "fused-lasso" => (50, Some(25)),
        "qp-portfolio" => (48, None),
        "socp" => (15, Some(7)),
        "spca" => (6, None),
        // rank-3 completion needs n large enough that the observed entries
        // outnumber the manifold dimension, else the solution is non-unique
        "lrmc" => (16, None),
        _ => unreachable!(),
    };
    PresetOptions::sized(Some(n), m)
}

#[test]
fn direct_and_iterative_schur_agree_on_every_preset() {
    for name in PRESET_NAMES {
        let problem =
            build_problem(generate_preset(name, 13, small_opts(name)).unwrap()).unwrap();
        let off = Offsets::new(&problem);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut w = IterateW::zeros(&off, 1.0);
        for v in &mut w.w {
            *v = 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let ev = evaluate(&problem, &w, &off);
        let sys = build_schur(&problem, &off, &ev, w.sigma, 1e-6);
        if sys.dim() == 0 {
            continue;
        }
        let mut cache = SchurCache::default();
        let (dd, _) = solve_schur(&sys, SolveMode::Direct, 0.0, 0, &mut cache).unwrap();
        let maxit = 200.max(4 * sys.dim());
        let (di, stats) =
            solve_schur(&sys, SolveMode::Iterative, 1e-13 * (1.0 + la::nrm2(&sys.rhs)), maxit, &mut cache)
                .unwrap();
        // both answers must satisfy the same operator equation; agreement in
        // solution space is conditioning-limited (the reduced system reaches
        // cond ~ 1e12 when a projection block contributes 1/tau entries), so
        // compare residuals tightly and solutions only as a gross-error guard
        let rhs_scale = 1.0 + la::nrm2(&sys.rhs);
        let mut r = vec![0.0; sys.dim()];
        for (tag, d) in [("direct", &dd), ("iterative", &di)] {
            sys.apply(d, &mut r);
            for (ri, bi) in r.iter_mut().zip(&sys.rhs) {
                *ri -= bi;
            }
            let rel = la::nrm2(&r) / rhs_scale;
            assert!(
                rel <= 1e-8,
                "{name}: {tag} residual {rel:.3e} (cg iters {})",
                stats.iterations
            );
        }
        let diff = la::dist2(&dd, &di);
        let scale = la::nrm2(&dd).max(1e-30);
        assert!(
            diff / scale <= 1e-3,
            "{name}: direct/iterative disagree, rel {:.3e} (cg iters {})",
            diff / scale,
            stats.iterations
        );
    }
}

#[test]
fn iteration_traces_are_bit_identical_across_runs() {
    for name in PRESET_NAMES {
        let spec = generate_preset(name, 3, small_opts(name)).unwrap();
        let problem = build_problem(spec).unwrap();
        let config = SolverConfig { max_iter: 40, ..SolverConfig::default() };
        let (r1, _) = solve(&problem, &config, None);
        let (r2, _) = solve(&problem, &config, None);
        assert_eq!(r1.trace.len(), r2.trace.len(), "{name}: trace lengths differ");
        for (a, b) in r1.trace.iter().zip(&r2.trace) {
            assert_eq!(a.k, b.k);
            assert_eq!(a.norm_f.to_bits(), b.norm_f.to_bits(), "{name} k={}", a.k);
            assert_eq!(a.eta_max.to_bits(), b.eta_max.to_bits(), "{name} k={}", a.k);
            assert_eq!(a.tau.to_bits(), b.tau.to_bits(), "{name} k={}", a.k);
            assert_eq!(a.rho.to_bits(), b.rho.to_bits(), "{name} k={}", a.k);
            assert_eq!(a.sigma.to_bits(), b.sigma.to_bits(), "{name} k={}", a.k);
            assert_eq!(a.inner_i, b.inner_i);
            assert_eq!(a.accepted_by, b.accepted_by);
        }
        for (a, b) in r1.x.iter().zip(&r2.x) {
            assert_eq!(a.to_bits(), b.to_bits(), "{name}: solutions differ");
        }
    }
}

#[test]
fn residual_drops_deep_on_every_preset() {
    for name in PRESET_NAMES {
        let problem =
            build_problem(generate_preset(name, 3, small_opts(name)).unwrap()).unwrap();
        let config = SolverConfig { tol: 1e-10, max_iter: 500, ..SolverConfig::default() };
        let (report, _) = solve(&problem, &config, None);
        let min_f = report
            .trace
            .iter()
            .map(|t| t.norm_f)
            .fold(f64::INFINITY, f64::min);
        assert!(
            report.converged(),
            "{name}: status {:?} after {} iterations, eta {:.3e}",
            report.status,
            report.trace.len(),
            report.kkt.eta_max
        );
        // eta_max is normalized; the raw residual must still get small, and for
        // the unconstrained regression presets it should go genuinely deep
        let bar = if matches!(name, "lasso" | "fused-lasso") { 1e-8 } else { 1e-6 };
        assert!(
            min_f < bar,
            "{name}: min ||F|| = {min_f:.3e} over {} iterations (status {:?})",
            report.trace.len(),
            report.status
        );
    }
}

#[test]
fn converged_runs_close_the_duality_gap() {
    let problem =
        build_problem(generate_preset("lasso", 8, small_opts("lasso")).unwrap()).unwrap();
    let config = SolverConfig { tol: 1e-9, ..SolverConfig::default() };
    let (report, _) = solve(&problem, &config, None);
    assert!(report.converged());
    let gap = (report.kkt.pobj - report.kkt.dobj).abs();
    assert!(
        report.kkt.dual_clamped || gap <= 1e-5 * (1.0 + report.kkt.pobj.abs()),
        "gap {gap:.3e} pobj {} dobj {}",
        report.kkt.pobj,
        report.kkt.dobj
    );
}

#[test]
fn socp_barrier_continuation_converges() {
    let opts = PresetOptions { barrier: true, ..small_opts("socp") };
    let spec = generate_preset("socp", 9, opts).unwrap();
    assert!(matches!(spec.p.kind, FunctionKind::SocBarrier { .. }));
    let problem = build_problem(spec).unwrap();
    let config = SolverConfig { tol: 1e-6, max_iter: 300, ..SolverConfig::default() };
    let (report, _) = solve(&problem, &config, None);
    assert!(
        report.converged(),
        "barrier socp did not converge: status {:?}, eta {:.3e}",
        report.status,
        report.kkt.eta_max
    );
    // continuation must have pushed the smoothing far below the tolerance
    assert!(report.kkt.eta_max <= 1e-6);

    // the exact-cone version of the same data reaches the same objective
    let exact = generate_preset("socp", 9, small_opts("socp")).unwrap();
    let exact_problem = build_problem(exact).unwrap();
    let (exact_report, _) = solve(&exact_problem, &config, None);
    assert!(exact_report.converged());
    let rel = (report.kkt.pobj - exact_report.kkt.pobj).abs()
        / (1.0 + exact_report.kkt.pobj.abs());
    assert!(rel <= 1e-4, "barrier vs exact objective gap {rel:.3e}");
}
