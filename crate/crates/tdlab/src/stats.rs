//! Per-sample TD statistics, exact population moments, the optimal
//! parameter theta*, hat/bar transforms, spectral constants, and
//! projection radii.

use serde::{Deserialize, Serialize};

use crate::env::{FeatureMap, MDPModel, Policy, Transition};
use crate::error::{Error, Result};
use crate::numerics::{
    invert, norm, scale, solve_linear, spectral_norm, sym_eigenvalues, sym_max_eig, Matrix,
    Vector,
};

/// Per-transition statistics:
/// A_x = rho phi(s) (gamma phi(s') - phi(s))^T, b_x = r rho phi(s),
/// B_x = -gamma rho phi(s') phi(s)^T, C_x = -phi(s) phi(s)^T.
#[derive(Debug, Clone)]
pub struct SampleStats {
    pub a: Matrix,
    pub b: Vector,
    pub big_b: Matrix,
    pub c: Matrix,
    pub rho: f64,
}

/// Exact population moments and everything derived from them.
#[derive(Debug, Clone)]
pub struct ExactMoments {
    pub a: Matrix,
    pub b: Vector,
    pub big_b: Matrix,
    pub c: Matrix,
    /// A_hat = A - B C^{-1} A.
    pub a_hat: Matrix,
    /// b_hat = b - B C^{-1} b.
    pub b_hat: Vector,
    /// A_bar = A - C C^{-1} A; identically zero at the population level but
    /// stored for completeness of the notation table.
    pub a_bar: Matrix,
    pub b_bar: Vector,
    /// theta* = -A^{-1} b.
    pub theta_star: Vector,
    /// Stationary distribution the expectations were taken under.
    pub mu: Vector,
    /// Cached C^{-1} A, reused by the per-sample transforms.
    pub c_inv_a: Matrix,
    /// Cached C^{-1} b.
    pub c_inv_b: Vector,
    /// Cached C^{-1} (for radii and tracking-error computations).
    pub c_inv: Matrix,
}

/// Spectral constants governing the step-size conditions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpectralConstants {
    /// lambda_Ahat = -lambda_max(Ahat + Ahat^T) = -lambda_max(2 A^T C^{-1} A).
    pub lambda_a_hat: f64,
    /// lambda_C = -lambda_max(C + C^T).
    pub lambda_c: f64,
    /// min |lambda(C)|.
    pub min_abs_eig_c: f64,
    /// Largest supported importance ratio.
    pub rho_max: f64,
    /// Uniform reward bound.
    pub r_max: f64,
}

/// Projection radii for the two iterate balls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Radii {
    pub r_theta: f64,
    pub r_w: f64,
}

/// Importance sampling ratio pi(a|s) / pi_b(a|s).
///
/// Returns 0 when both policies put zero mass on (s, a); errors when the
/// behavior policy fails to cover a target-supported action.
pub fn importance_ratio(target: &Policy, behavior: &Policy, s: usize, a: usize) -> Result<f64> {
    let pi = target.probs.at(s, a);
    let pib = behavior.probs.at(s, a);
    if pib == 0.0 {
        if pi == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::CoverageViolation { s, a, pi });
    }
    Ok(pi / pib)
}

/// Evaluate the per-sample statistics of one transition.
pub fn sample_stats(x: &Transition, phi: &FeatureMap, gamma: f64, rho_x: f64) -> SampleStats {
    let phi_s = phi.row(x.s);
    let phi_s2 = phi.row(x.s_next);
    let delta: Vector = phi_s2
        .iter()
        .zip(phi_s)
        .map(|(next, cur)| gamma * next - cur)
        .collect();
    SampleStats {
        a: Matrix::outer(phi_s, &delta).scale(rho_x),
        b: scale(phi_s, x.r * rho_x),
        big_b: Matrix::outer(phi_s2, phi_s).scale(-gamma * rho_x),
        c: Matrix::outer(phi_s, phi_s).scale(-1.0),
    rho: rho_x,
    }
}

/// Exact population moments: expectations of the per-sample statistics
/// under weight mu(s) pi_b(a|s) P(s'|s,a), plus all derived quantities.
pub fn exact_moments(
    model: &MDPModel,
    target: &Policy,
    behavior: &Policy,
    phi: &FeatureMap,
    mu: &[f64],
) -> Result<ExactMoments> {
    let d = phi.d;
    let mut a = Matrix::zeros(d, d);
    let mut b = vec![0.0; d];
    let mut big_b = Matrix::zeros(d, d);
    let mut c = Matrix::zeros(d, d);

    for s in 0..model.n_states {
        if mu[s] == 0.0 {
            continue;
        }
        for act in 0..model.n_actions {
            let pib = behavior.probs.at(s, act);
            if pib == 0.0 {
                // Still check coverage so bad policy pairs fail loudly.
                importance_ratio(target, behavior, s, act)?;
                continue;
            }
            let rho = importance_ratio(target, behavior, s, act)?;
            for s2 in 0..model.n_states {
                let p = model.kernel[s][act][s2];
                if p == 0.0 {
                    continue;
                }
                let w = mu[s] * pib * p;
                let x = Transition { s, a: act, r: model.reward[s][act][s2], s_next: s2 };
                let stats = sample_stats(&x, phi, model.gamma, rho);
                a = a.add(&stats.a.scale(w));
                big_b = big_b.add(&stats.big_b.scale(w));
                c = c.add(&stats.c.scale(w));
                for i in 0..d {
                    b[i] += w * stats.b[i];
                }
            }
        }
    }

    let c_inv = invert(&c).map_err(|_| Error::SingularC)?;
    let c_inv_a = c_inv.mul_mat(&a);
    let c_inv_b = c_inv.mul_vec(&b);

    let a_hat = a.sub(&big_b.mul_mat(&c_inv_a));
    let b_hat_corr = big_b.mul_vec(&c_inv_b);
    let b_hat: Vector = b.iter().zip(&b_hat_corr).map(|(x, y)| x - y).collect();

    // A_bar = A - C C^{-1} A vanishes identically at the population level;
    // only the per-sample bar transform carries information.
    let a_bar = a.sub(&c.mul_mat(&c_inv_a));
    let b_bar_corr = c.mul_vec(&c_inv_b);
    let b_bar: Vector = b.iter().zip(&b_bar_corr).map(|(x, y)| x - y).collect();

    let neg_b: Vector = b.iter().map(|x| -x).collect();
    let theta_star = solve_linear(&a, &neg_b).map_err(|_| Error::SingularA)?;

    Ok(ExactMoments {
        a,
        b,
        big_b,
        c,
        a_hat,
        b_hat,
        a_bar,
        b_bar,
        theta_star,
        mu: mu.to_vec(),
        c_inv_a,
        c_inv_b,
        c_inv,
    })
}

/// theta* = -A^{-1} b, with residual || A theta* + b ||_inf <= 1e-9.
pub fn optimal_theta(m: &ExactMoments) -> Result<Vector> {
    let neg_b: Vector = m.b.iter().map(|x| -x).collect();
    solve_linear(&m.a, &neg_b).map_err(|_| Error::SingularA)
}

/// Per-sample hat/bar transforms using the cached C^{-1} A and C^{-1} b:
/// Ahat_x = A_x - B_x C^{-1}A, bhat_x = b_x - B_x C^{-1}b,
/// Abar_x = A_x - C_x C^{-1}A, bbar_x = b_x - C_x C^{-1}b.
pub fn hat_bar_transform(
    s: &SampleStats,
    m: &ExactMoments,
) -> (Matrix, Vector, Matrix, Vector) {
    let a_hat_x = s.a.sub(&s.big_b.mul_mat(&m.c_inv_a));
    let corr = s.big_b.mul_vec(&m.c_inv_b);
    let b_hat_x: Vector = s.b.iter().zip(&corr).map(|(x, y)| x - y).collect();
    let a_bar_x = s.a.sub(&s.c.mul_mat(&m.c_inv_a));
    let corr_bar = s.c.mul_vec(&m.c_inv_b);
    let b_bar_x: Vector = s.b.iter().zip(&corr_bar).map(|(x, y)| x - y).collect();
    (a_hat_x, b_hat_x, a_bar_x, b_bar_x)
}

/// Spectral constants of an instance.
pub fn spectral_constants(
    m: &ExactMoments,
    target: &Policy,
    behavior: &Policy,
    r_max: f64,
) -> Result<SpectralConstants> {
    // lambda_Ahat = -lambda_max(2 A^T C^{-1} A), evaluated on the symmetrized form.
    let at_cinv_a = m.a.transpose().mul_mat(&m.c_inv_a);
    let sym = at_cinv_a.add(&at_cinv_a.transpose());
    let lambda_a_hat = -sym_max_eig(&sym)?;

    let c_sym = m.c.add(&m.c.transpose());
    let lambda_c = -sym_max_eig(&c_sym)?;

    // C = -E[phi phi^T] is symmetric negative definite.
    let c_eigs = sym_eigenvalues(&m.c)?;
    let min_abs_eig_c = c_eigs.iter().fold(f64::INFINITY, |acc, &e| acc.min(e.abs()));

    if lambda_a_hat <= 0.0 {
        return Err(Error::NotNegativeDefinite { name: "lambda_A_hat", value: lambda_a_hat });
    }
    if lambda_c <= 0.0 {
        return Err(Error::NotNegativeDefinite { name: "lambda_C", value: lambda_c });
    }

    let mut rho_max = 0.0f64;
    for s in 0..target.probs.rows {
        for a in 0..target.probs.cols {
            // Pairs with zero behavior mass never occur in samples and are
            // excluded from the max (coverage permitting).
            let rho = importance_ratio(target, behavior, s, a)?;
            if behavior.probs.at(s, a) > 0.0 {
                rho_max = rho_max.max(rho);
            }
        }
    }

    Ok(SpectralConstants { lambda_a_hat, lambda_c, min_abs_eig_c, rho_max, r_max })
}

/// Projection radii: R_theta = safety * max{||A|| ||b||, ||theta*||} and
/// R_w = 2 ||C^{-1}|| ||A|| R_theta (the safety factor enters once, through
/// R_theta, so both radii scale linearly in it).
///
/// The first term uses ||A|| ||b|| deliberately (not ||A^{-1}|| ||b||,
/// which one might expect from theta* = -A^{-1} b); the max against ||theta*||
/// keeps theta* inside the ball regardless. A degenerate zero problem
/// (b = 0) clamps R_theta at 1e-6 so projection stays well defined.
pub fn compute_radii(m: &ExactMoments, safety: f64) -> Radii {
    assert!(safety >= 1.0, "safety factor must be >= 1");
    let norm_a = spectral_norm(&m.a);
    let norm_b = norm(&m.b);
    let norm_theta = norm(&m.theta_star);
    let r_theta = (safety * (norm_a * norm_b).max(norm_theta)).max(1e-6);
    let norm_c_inv = spectral_norm(&m.c_inv);
    // safety already scales r_theta, so both radii grow linearly in it.
    let r_w = 2.0 * norm_c_inv * norm_a * r_theta;
    Radii { r_theta, r_w }
}
