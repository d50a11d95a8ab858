//! Second-order cone: Euclidean projection, the log-barrier proximal map
//! x − μx⁻¹ = z (solved in closed form), and their derivatives as
//! diagonal-plus-low-rank blocks.
//!
//! A cone vector is split as x = [x0; x̄] with det(x) = x0² − ‖x̄‖² and
//! x⁻¹ = [x0; −x̄]/det(x).

use super::jacobian::LowRankBlock;
use crate::la;
use nalgebra::DMatrix;

pub fn det(x: &[f64]) -> f64 {
    x[0] * x[0] - la::dot(&x[1..], &x[1..])
}

pub fn inverse(x: &[f64]) -> Vec<f64> {
    let d = det(x);
    let mut out = Vec::with_capacity(x.len());
    out.push(x[0] / d);
    for xi in &x[1..] {
        out.push(-xi / d);
    }
    out
}

/// Euclidean projection onto one cone.
pub fn project(z: &[f64], out: &mut [f64]) {
    let z0 = z[0];
    let nb = la::nrm2(&z[1..]);
    if z0 >= nb {
        out.copy_from_slice(z);
    } else if z0 <= -nb {
        out.fill(0.0);
    } else {
        let c = 0.5 * (1.0 + z0 / nb);
        out[0] = 0.5 * (z0 + nb);
        for i in 1..z.len() {
            out[i] = c * z[i];
        }
    }
}

/// Generalized Jacobian of the projection at z: identity, zero, or
/// ½(1+t)I + ½(1−t)w₁w₁ᵀ − ½(1+t)w₂w₂ᵀ with t = z0/‖z̄‖ and
/// w₁,₂ = (√2/2)[1; ±z̄/‖z̄‖].
pub fn project_jacobian(z: &[f64]) -> LowRankBlock {
    let n = z.len();
    let z0 = z[0];
    let nb = la::nrm2(&z[1..]);
    if z0 >= nb {
        return LowRankBlock { diag: vec![1.0; n], terms: vec![] };
    }
    if z0 <= -nb {
        return LowRankBlock { diag: vec![0.0; n], terms: vec![] };
    }
    let t = z0 / nb;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut w1 = Vec::with_capacity(n);
    let mut w2 = Vec::with_capacity(n);
    w1.push(h);
    w2.push(h);
    for zi in &z[1..] {
        w1.push(h * zi / nb);
        w2.push(-h * zi / nb);
    }
    LowRankBlock {
        diag: vec![0.5 * (1.0 + t); n],
        terms: vec![(0.5 * (1.0 - t), w1), (-0.5 * (1.0 + t), w2)],
    }
}

/// prox of μ·(−½ log det) over one cone, by the closed-form root of
/// x − μx⁻¹ = z. Always lands strictly inside the cone.
pub fn barrier_prox(mu: f64, z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let z0 = z[0];
    let zb = &z[1..];
    let nz2 = la::dot(z, z);
    let det_z = z0 * z0 - la::dot(zb, zb);
    let delta = (det_z * det_z + 8.0 * mu * nz2 + 16.0 * mu * mu).sqrt();
    // q = Δ − det(z), rationalized when det(z) > 0 to avoid cancellation
    let q = if det_z > 0.0 {
        (8.0 * mu * nz2 + 16.0 * mu * mu) / (delta + det_z)
    } else {
        delta - det_z
    };
    let t2 = nz2 + 4.0 * mu + delta;
    let t = t2.sqrt();
    let mut out = vec![0.0; n];
    out[0] = if z0 >= 0.0 {
        0.5 * (z0 + (0.5 * t2).sqrt())
    } else {
        // ½(z0 + S) = (S² − z0²)/(2(S − z0)) with S² − z0² = q/2 + 2μ
        (0.25 * q + mu) / ((0.5 * t2).sqrt() - z0)
    };
    // x̄ = (z̄/2)(1 + √2 z0/t); rationalize the factor when z0 < 0
    let factor = if z0 >= 0.0 {
        0.5 * (1.0 + std::f64::consts::SQRT_2 * z0 / t)
    } else {
        // 1 − √2|z0|/t = (t² − 2z0²)/(t(t + √2|z0|)), t² − 2z0² = q + 4μ
        0.5 * (q + 4.0 * mu) / (t * (t + std::f64::consts::SQRT_2 * (-z0)))
    };
    for i in 1..n {
        out[i] = factor * z[i];
    }
    out
}

/// Inverse of the barrier prox: z = x − μx⁻¹ for x ∈ int(Qⁿ).
pub fn barrier_prox_inverse(mu: f64, x: &[f64]) -> Vec<f64> {
    let xinv = inverse(x);
    x.iter().zip(&xinv).map(|(xi, ii)| xi - mu * ii).collect()
}

/// Derivative of the barrier prox at z, expressed via x = prox(z). The
/// derivative acts as (det/(det+μ))·I off the radial plane span{e₀, x̄} and
/// its radial 2×2 block has equal diagonal entries, so its eigenvectors are
/// v± = (e₀ ± x̄/‖x̄‖)/√2 independently of x:
///
///   J = (det/(det+μ))·I + c₊ v₊v₊ᵀ + c₋ v₋v₋ᵀ,
///   c± = ±2μ‖x̄‖·(det·(x₀ ∓ ‖x̄‖) + μ(x₀ ± ‖x̄‖)) / (S·(det+μ)),
///   S  = det² + μ² + 2μ‖x‖².
///
/// Every factor is a same-sign sum, so the form stays accurate over the whole
/// interior (in particular near det = μ, a removable singularity of the
/// naive diag(det/(det−μ), …) split). The stored diagonal lies in (0, 1),
/// which downstream inversion relies on.
pub fn barrier_jacobian(mu: f64, x: &[f64]) -> LowRankBlock {
    let n = x.len();
    let x0 = x[0];
    let nb2 = la::dot(&x[1..], &x[1..]);
    let nb = nb2.sqrt();
    let d = x0 * x0 - nb2;
    let dp = d + mu;
    let diag = vec![d / dp; n];
    if nb < 1e-300 {
        return LowRankBlock { diag, terms: vec![] };
    }
    let s = d * d + mu * mu + 2.0 * mu * (x0 * x0 + nb2);
    let cp = 2.0 * mu * nb * (d * (x0 - nb) + mu * (x0 + nb)) / (s * dp);
    let cm = -2.0 * mu * nb * (d * (x0 + nb) + mu * (x0 - nb)) / (s * dp);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut vp = Vec::with_capacity(n);
    let mut vm = Vec::with_capacity(n);
    vp.push(h);
    vm.push(h);
    for xi in &x[1..] {
        vp.push(h * xi / nb);
        vm.push(-h * xi / nb);
    }
    LowRankBlock { diag, terms: vec![(cp, vp), (cm, vm)] }
}

/// Dense I − μ∂(x⁻¹), the inverse of the barrier-prox derivative.
pub fn barrier_jacobian_inverse_dense(mu: f64, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let d = det(x);
    let xinv = inverse(x);
    let mut m = DMatrix::zeros(n, n);
    // ∂(x⁻¹) = (1/det) diag(1, −I) − 2 x⁻¹ (x⁻¹)ᵀ
    for i in 0..n {
        let s = if i == 0 { 1.0 } else { -1.0 };
        m[(i, i)] = 1.0 - mu * s / d;
        for j in 0..n {
            m[(i, j)] += 2.0 * mu * xinv[i] * xinv[j];
        }
    }
    m
}
