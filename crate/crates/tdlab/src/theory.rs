//! Named constants and step-size feasibility conditions for both sampling
//! settings, plus epsilon-driven hyperparameter schedules.
//!
//! Every formula is transcribed literally, term by term, including the
//! asymmetries between the two settings (e.g. the i.i.d. K2 carries no
//! rho_max^2 factor, and the third term of the Markovian F uses
//! (1 + 1/lambda_C) where its i.i.d. counterpart uses (1 + 2/lambda_C)).
//! No algebraic simplification is performed, so condition reports match
//! the source expressions exactly.

use serde::{Deserialize, Serialize};

use crate::env::MixingEstimate;
use crate::error::{Error, Result};
use crate::stats::{Radii, SpectralConstants};

/// Upper bounds on a single corrected update:
/// G_VR = 3[(1+g)R_theta + r_max] rho_max (1 + g rho_max / min|l(C)|),
/// H_VR = 3[(1+g)R_theta + r_max] rho_max (1 + 1 / min|l(C)|).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VRBounds {
    pub g_vr: f64,
    pub h_vr: f64,
}

/// Direct evaluation of the one-step update bounds.
pub fn vr_bounds(
    r_theta: f64,
    r_max: f64,
    rho_max: f64,
    gamma: f64,
    min_abs_eig_c: f64,
) -> VRBounds {
    assert!(min_abs_eig_c > 0.0, "min |lambda(C)| must be positive");
    let scale = 3.0 * ((1.0 + gamma) * r_theta + r_max) * rho_max;
    VRBounds {
        g_vr: scale * (1.0 + gamma * rho_max / min_abs_eig_c),
        h_vr: scale * (1.0 + 1.0 / min_abs_eig_c),
    }
}

/// Shared raw ingredients the rate expressions are built from.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Ingredients {
    pub lambda_a_hat: f64,
    pub lambda_c: f64,
    pub min_abs_eig_c: f64,
    pub rho_max: f64,
    pub r_max: f64,
    pub r_theta: f64,
    pub r_w: f64,
    pub gamma: f64,
}

impl Ingredients {
    pub fn new(spectral: &SpectralConstants, radii: &Radii, gamma: f64) -> Self {
        Ingredients {
            lambda_a_hat: spectral.lambda_a_hat,
            lambda_c: spectral.lambda_c,
            min_abs_eig_c: spectral.min_abs_eig_c,
            rho_max: spectral.rho_max,
            r_max: spectral.r_max,
            r_theta: radii.r_theta,
            r_w: radii.r_w,
            gamma,
        }
    }

    /// (1 + gamma rho_max / min|lambda(C)|) — the "hat" boundedness factor.
    fn hat_factor(&self) -> f64 {
        1.0 + self.gamma * self.rho_max / self.min_abs_eig_c
    }

    /// (1 + 1 / min|lambda(C)|) — the "bar" boundedness factor.
    fn bar_factor(&self) -> f64 {
        1.0 + 1.0 / self.min_abs_eig_c
    }

    /// rho_max (1 + gamma) / min|lambda(C)| — the C^{-1}A coupling factor.
    fn coupling(&self) -> f64 {
        self.rho_max * (1.0 + self.gamma) / self.min_abs_eig_c
    }

    /// (1+gamma) R_theta + r_max.
    fn s_theta(&self) -> f64 {
        (1.0 + self.gamma) * self.r_theta + self.r_max
    }

    /// (1+gamma)^2 rho_max^2.
    fn amp(&self) -> f64 {
        (1.0 + self.gamma).powi(2) * self.rho_max.powi(2)
    }
}

/// Constants of the i.i.d. analysis (K1, K2, C1..C4).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundConstantsIID {
    pub k1: f64,
    pub k2: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub ingredients: Ingredients,
}

/// Literal evaluation of the i.i.d. constants.
pub fn constants_iid(spectral: &SpectralConstants, radii: &Radii, gamma: f64) -> BoundConstantsIID {
    let ing = Ingredients::new(spectral, radii, gamma);
    let hat2 = ing.hat_factor().powi(2);
    let bar2 = ing.bar_factor().powi(2);
    let q2 = ing.coupling().powi(2);
    let two_over_lc = 1.0 + 2.0 / ing.lambda_c;
    // Common prefactor of C1 and C2: (2 rho^2 g^2 / lambda_Ahat)(3 / lambda_C) * 10 (1+g)^2 rho^2.
    let prefactor = (2.0 * ing.rho_max.powi(2) * gamma * gamma / ing.lambda_a_hat)
        * (3.0 / ing.lambda_c)
        * 10.0
        * ing.amp();
    BoundConstantsIID {
        k1: ing.s_theta().powi(2) * ing.rho_max.powi(2) * hat2,
        // The i.i.d. K2 carries no rho_max^2 factor in the source formula.
        k2: ing.s_theta().powi(2) * bar2,
        c1: prefactor * hat2 * two_over_lc * q2,
        c2: prefactor * bar2,
        c3: 10.0 * ing.amp() * hat2 * two_over_lc * q2,
        c4: 10.0 * ing.amp() * bar2,
        ingredients: ing,
    }
}

/// Literal evaluation of the i.i.d. rate expressions (D, E, F).
pub fn rates_iid(c: &BoundConstantsIID, alpha: f64, beta: f64, m_batch: u64) -> (f64, f64, f64) {
    assert!(alpha > 0.0 && beta > 0.0 && m_batch >= 1);
    let ing = &c.ingredients;
    let m = m_batch as f64;
    let hat2 = ing.hat_factor().powi(2);
    let q2 = ing.coupling().powi(2);
    let two_over_lc = 1.0 + 2.0 / ing.lambda_c;
    let g2r2 = ing.gamma * ing.gamma * ing.rho_max.powi(2);

    let d = (12.0 / ing.lambda_a_hat)
        * (1.0 / (alpha * m)
            + alpha * 5.0 * ing.amp() * hat2
            + (alpha * alpha) / (beta * beta) * c.c1
            + beta * c.c2);
    let e = 1.0 / (m * beta) * (2.0 / ing.lambda_c);
    let f = (4.0 / ing.lambda_c)
        * (1.0 / (beta * m)
            + 10.0 * beta
            + (alpha * alpha) / (beta * beta) * 10.0 * g2r2 * two_over_lc * q2
            + (alpha.powi(3) / (beta * beta) * c.c3 + alpha * beta * c.c4)
                * (30.0 / ing.lambda_a_hat)
                * g2r2);
    (d, e, f)
}

/// Constants of the Markovian analysis (K1..K5, C1, C2) together with the
/// fitted mixing envelope they depend on.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundConstantsMarkov {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub c1: f64,
    pub c2: f64,
    pub kappa: f64,
    pub rho: f64,
    pub ingredients: Ingredients,
}

/// Literal evaluation of the Markovian constants; requires a mixing
/// envelope with rho < 1.
pub fn constants_markov(
    spectral: &SpectralConstants,
    radii: &Radii,
    gamma: f64,
    mixing: &MixingEstimate,
) -> Result<BoundConstantsMarkov> {
    if mixing.rho >= 1.0 {
        return Err(Error::InvalidMixing { rho: mixing.rho });
    }
    let ing = Ingredients::new(spectral, radii, gamma);
    let hat2 = ing.hat_factor().powi(2);
    let bar2 = ing.bar_factor().powi(2);
    let q2 = ing.coupling().powi(2);
    let (kappa, rho) = (mixing.kappa, mixing.rho);
    // Markovian cross-correlation factors.
    let mix2 = 1.0 + kappa * 2.0 * rho / (1.0 - rho);
    let mix1 = 1.0 + kappa * rho / (1.0 - rho);
    let rt2 = ing.r_theta * ing.r_theta * (1.0 + gamma).powi(2) + ing.r_max * ing.r_max;
    // Common prefactor of C1 and C2: (96 / (lambda_Ahat lambda_C)) g^2 rho^2 * 10 (1+g)^2 rho^2.
    let prefactor = (96.0 / (ing.lambda_a_hat * ing.lambda_c))
        * gamma
        * gamma
        * ing.rho_max.powi(2)
        * 10.0
        * ing.amp();
    Ok(BoundConstantsMarkov {
        k1: ing.s_theta().powi(2) * ing.rho_max.powi(2) * hat2 * mix2,
        k2: (2.0 / ing.lambda_a_hat) * rt2 * 4.0 * ing.rho_max.powi(2) * hat2 * mix1,
        k3: ((32.0 / ing.lambda_c) * rt2 * ing.rho_max.powi(2)
            + (16.0 / ing.lambda_c)
                * (ing.rho_max * (1.0 + gamma) * ing.r_theta + ing.rho_max * ing.r_max)
                / ing.min_abs_eig_c)
            * mix1,
        k4: (12.0 / ing.lambda_c) * ing.r_w * ing.r_w * mix1,
        k5: ing.s_theta().powi(2) * ing.rho_max.powi(2) * bar2 * mix2,
        c1: hat2 * (1.0 + 2.0 / ing.lambda_c) * q2 * prefactor,
        c2: bar2 * prefactor,
        kappa,
        rho,
        ingredients: ing,
    })
}

/// Literal evaluation of the Markovian rate expressions (D, E, F).
pub fn rates_markov(
    c: &BoundConstantsMarkov,
    alpha: f64,
    beta: f64,
    m_batch: u64,
) -> (f64, f64, f64) {
    assert!(alpha > 0.0 && beta > 0.0 && m_batch >= 1);
    let ing = &c.ingredients;
    let m = m_batch as f64;
    let hat2 = ing.hat_factor().powi(2);
    let bar2 = ing.bar_factor().powi(2);
    let q2 = ing.coupling().powi(2);
    let g2r2 = ing.gamma * ing.gamma * ing.rho_max.powi(2);

    let d = (16.0 / ing.lambda_a_hat)
        * (1.0 / (alpha * m)
            + alpha * 5.0 * ing.amp() * hat2
            + (alpha * alpha) / (beta * beta) * c.c1
            + beta * c.c2);
    let e = 1.0 / (m * beta) * (12.0 / ing.lambda_c);
    // Third term uses (1 + 1/lambda_C), transcribed literally.
    let f = (24.0 / ing.lambda_c)
        * (1.0 / (beta * m)
            + 10.0 * beta
            + 10.0 * g2r2 * (1.0 + 1.0 / ing.lambda_c) * q2 * (alpha * alpha) / (beta * beta)
            + alpha
                * 120.0
                * ing.amp()
                * (1.0 / ing.lambda_a_hat)
                * (hat2 * (1.0 + 2.0 / ing.lambda_c) * q2 * (alpha * alpha) / (beta * beta)
                    + bar2 * beta)
                * 5.0
                * g2r2);
    (d, e, f)
}

/// Which analysis a condition check or schedule refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Iid,
    Markov,
}

/// Constants for either setting.
#[derive(Debug, Clone, Copy)]
pub enum Constants {
    Iid(BoundConstantsIID),
    Markov(BoundConstantsMarkov),
}

/// One evaluated inequality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Full feasibility report for one (alpha, beta, M).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub setting: Setting,
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: u64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub conditions: Vec<ConditionCheck>,
    pub overall: bool,
}

fn check(id: &str, lhs: f64, rhs: f64, strict: bool) -> ConditionCheck {
    let pass = if strict { lhs < rhs } else { lhs <= rhs };
    ConditionCheck { id: id.to_string(), lhs, rhs, pass }
}

/// Evaluate every step-size inequality literally, reporting both sides.
pub fn check_conditions(consts: &Constants, alpha: f64, beta: f64, m_batch: u64) -> ConditionReport {
    match consts {
        Constants::Iid(c) => check_conditions_iid(c, alpha, beta, m_batch),
        Constants::Markov(c) => check_conditions_markov(c, alpha, beta, m_batch),
    }
}

fn check_conditions_iid(
    c: &BoundConstantsIID,
    alpha: f64,
    beta: f64,
    m_batch: u64,
) -> ConditionReport {
    let ing = &c.ingredients;
    let m = m_batch as f64;
    let hat2 = ing.hat_factor().powi(2);
    let q2 = ing.coupling().powi(2);
    let g2r2 = ing.gamma * ing.gamma * ing.rho_max.powi(2);
    let (d, e, f) = rates_iid(c, alpha, beta, m_batch);

    let mut conds = Vec::new();
    conds.push(check(
        "iid-1",
        alpha,
        (1.0 / (5.0 * ing.lambda_a_hat)).min(ing.lambda_a_hat / 60.0 / (ing.amp() * hat2)),
        false,
    ));
    let lhs2 = (alpha * alpha) / (beta * beta) * c.c3 + beta * c.c4;
    let rhs2 = ((1.0 - d) / 144.0 * ing.lambda_a_hat.powi(2) * ing.lambda_c / (g2r2))
        .min(5.0 * (1.0 - d))
        .min(c.c4);
    conds.push(check("iid-2", lhs2, rhs2, false));
    conds.push(check("iid-3", 4.0 / ing.lambda_c, m * beta, true)); // M beta > 4/lambda_C
    let lhs4 = ing.lambda_c / 6.0 * beta
        - 10.0 * beta * beta
        - 10.0 * g2r2 * (alpha * alpha + 2.0 * alpha * alpha / (ing.lambda_c * beta)) * q2;
    conds.push(check("iid-4", 0.0, lhs4, false)); // expression >= 0
    conds.push(check(
        "iid-5",
        1.0 / (alpha * m) + alpha * 5.0 * ing.amp() * hat2,
        ing.lambda_a_hat / 6.0,
        false,
    ));
    let la2 = ing.lambda_a_hat.powi(2);
    let lhs6 = alpha / (beta * beta * m) * (72.0 * ing.rho_max.powi(2) * ing.gamma * ing.gamma / la2)
        / ing.lambda_c
        + beta * (720.0 * ing.rho_max.powi(2) * ing.gamma * ing.gamma / la2) / ing.lambda_c
        + (alpha * alpha) / (beta * beta)
            * (720.0 * ing.rho_max.powi(2) * ing.gamma.powi(4) / la2)
            / ing.lambda_c
            * ing.rho_max.powi(2)
            * (1.0 + 2.0 / ing.lambda_c)
            * q2
        + alpha * (60.0 / ing.lambda_a_hat) * g2r2;
    conds.push(check("iid-6", lhs6, 1.0, false));
    conds.push(check("iid-7", d.max(e).max(f), 1.0, true));

    let overall = conds.iter().all(|x| x.pass);
    ConditionReport {
        setting: Setting::Iid,
        alpha,
        beta,
        batch_size: m_batch,
        d,
        e,
        f,
        conditions: conds,
        overall,
    }
}

fn check_conditions_markov(
    c: &BoundConstantsMarkov,
    alpha: f64,
    beta: f64,
    m_batch: u64,
) -> ConditionReport {
    let ing = &c.ingredients;
    let m = m_batch as f64;
    let hat2 = ing.hat_factor().powi(2);
    let bar2 = ing.bar_factor().powi(2);
    let q2 = ing.coupling().powi(2);
    let g2r2 = ing.gamma * ing.gamma * ing.rho_max.powi(2);
    let (d, e, f) = rates_markov(c, alpha, beta, m_batch);

    let mut conds = Vec::new();
    // Unlabeled alpha bound that heads the Markovian condition block.
    conds.push(check(
        "markov-alpha",
        alpha,
        (ing.lambda_a_hat / 30.0 / (ing.amp() * hat2)).min(3.0 / 5.0 / ing.lambda_a_hat),
        false,
    ));
    conds.push(check("markov-1", beta, 1.0, false));
    conds.push(check("markov-2", 12.0 / ing.lambda_c, m * beta, true));
    let lhs3 = ing.lambda_c / 48.0 * beta
        - 10.0 * beta * beta
        - 10.0 * g2r2 * q2 * (alpha * alpha + 2.0 * alpha * alpha / (ing.lambda_c * beta));
    conds.push(check("markov-3", 0.0, lhs3, false));
    let lhs4 = (16.0 / ing.lambda_a_hat)
        * ((96.0 / (ing.lambda_a_hat * ing.lambda_c))
            * g2r2
            * (1.0 / (beta * m)
                + 10.0 * beta
                + 10.0 * g2r2 * (1.0 + 2.0 / ing.lambda_c) * q2 * (alpha * alpha) / (beta * beta))
            + 5.0 * g2r2 * alpha);
    conds.push(check("markov-4", lhs4, 1.0, false));
    let lhs5 = hat2 * (1.0 + 2.0 / ing.lambda_c) * q2 * (alpha * alpha) / (beta * beta)
        + bar2 * beta * beta;
    let rhs5 = (ing.lambda_a_hat / 48.0
        / ((96.0 / (ing.lambda_a_hat * ing.lambda_c)) * g2r2 * 10.0 * ing.amp()))
    .min(ing.lambda_c / 48.0 / (120.0 * ing.amp() / ing.lambda_a_hat));
    conds.push(check("markov-5", lhs5, rhs5, false));
    conds.push(check("markov-6", d.max(e).max(f), 1.0, true));

    let overall = conds.iter().all(|x| x.pass);
    ConditionReport {
        setting: Setting::Markov,
        alpha,
        beta,
        batch_size: m_batch,
        d,
        e,
        f,
        conditions: conds,
        overall,
    }
}

/// Multipliers for the asymptotic schedules (all default to 1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScheduleCoefficients {
    pub c_alpha: f64,
    pub c_beta: f64,
    pub c_batch: f64,
    pub c_epochs: f64,
}

impl Default for ScheduleCoefficients {
    fn default() -> Self {
        ScheduleCoefficients { c_alpha: 1.0, c_beta: 1.0, c_batch: 1.0, c_epochs: 1.0 }
    }
}

/// Epsilon-driven hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Schedule {
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: u64,
    pub epochs: u64,
}

/// Schedules from the target accuracy:
/// IID: alpha = c eps^{3/5}, beta = c eps^{2/5}, M = ceil(c eps^{-3/5});
/// Markov: alpha = c eps^{3/4}, beta = c eps^{1/2}, M = ceil(c eps^{-1});
/// both: m = ceil(c log(1/eps)).
pub fn schedule_from_epsilon(
    setting: Setting,
    epsilon: f64,
    coeffs: &ScheduleCoefficients,
) -> Result<Schedule> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    // Ceiling that forgives floating-point fuzz on exact integers, so round
    // powers (M = 10^3 at epsilon = 10^-5) stay exact.
    let ceil_tol = |x: f64| -> u64 {
        let snapped = if (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0) {
            x.round()
        } else {
            x.ceil()
        };
        snapped.max(1.0) as u64
    };
    let (alpha, beta, batch) = match setting {
        Setting::Iid => (
            coeffs.c_alpha * epsilon.powf(3.0 / 5.0),
            coeffs.c_beta * epsilon.powf(2.0 / 5.0),
            ceil_tol(coeffs.c_batch * epsilon.powf(-3.0 / 5.0)),
        ),
        Setting::Markov => (
            coeffs.c_alpha * epsilon.powf(3.0 / 4.0),
            coeffs.c_beta * epsilon.powf(1.0 / 2.0),
            ceil_tol(coeffs.c_batch * epsilon.recip()),
        ),
    };
    let epochs = ceil_tol(coeffs.c_epochs * (1.0 / epsilon).ln());
    Ok(Schedule { alpha, beta, batch_size: batch, epochs })
}

/// Outcome of the feasibility search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub epsilon: f64,
    pub coeffs: ScheduleCoefficients,
    pub schedule: Schedule,
    pub report: ConditionReport,
}

/// Search epsilon in {1e-1, ..., 1e-8} (largest first) and a decade grid of
/// schedule coefficients for a point where every condition passes.
///
/// The schedules' big-O coefficients are free parameters; with all
/// coefficients at 1 the 1/(alpha M) terms are constant in epsilon and the
/// conditions can never hold, so the search varies the coefficients as well
/// and reports the largest feasible epsilon.
pub fn epsilon_search(setting: Setting, consts: &Constants) -> Option<SearchResult> {
    let c_alphas = [1.0, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10];
    let c_betas = [1.0, 1e-2, 1e-4, 1e-6];
    let c_batches = [1.0, 1e2, 1e4, 1e6, 1e8, 1e10, 1e12];
    for k in 1..=8 {
        let epsilon = 10f64.powi(-k);
        for &c_alpha in &c_alphas {
            for &c_beta in &c_betas {
                for &c_batch in &c_batches {
                    let coeffs =
                        ScheduleCoefficients { c_alpha, c_beta, c_batch, c_epochs: 1.0 };
                    let schedule = schedule_from_epsilon(setting, epsilon, &coeffs)
                        .expect("epsilon in range");
                    let report = check_conditions(
                        consts,
                        schedule.alpha,
                        schedule.beta,
                        schedule.batch_size,
                    );
                    if report.overall {
                        return Some(SearchResult { epsilon, coeffs, schedule, report });
                    }
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::env::cycle2;
    use crate::instance::Instance;
    use crate::stats::{Radii, SpectralConstants};

    fn cycle2_instance() -> Instance {
        let (model, features, target, behavior, _) = cycle2();
        Instance::build("cycle2", model, features, target, behavior, 1.0).unwrap()
    }

    fn cycle2_iid() -> Constants {
        let inst = cycle2_instance();
        Constants::Iid(constants_iid(&inst.spectral, &inst.radii, inst.model.gamma))
    }

    #[test]
    fn vr_bounds_worked_example() {
        let b = vr_bounds(3.0, 1.0, 1.0, 0.5, 0.5);
        assert_abs_diff_eq!(b.g_vr, 33.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.h_vr, 49.5, epsilon = 1e-12);
        let zero = vr_bounds(0.0, 0.0, 1.0, 0.5, 0.5);
        assert_eq!(zero.g_vr, 0.0);
        assert_eq!(zero.h_vr, 0.0);
    }

    #[test]
    fn iid_constants_positive_and_coupled() {
        let inst = cycle2_instance();
        let c = constants_iid(&inst.spectral, &inst.radii, inst.model.gamma);
        for v in [c.k1, c.k2, c.c1, c.c2, c.c3, c.c4] {
            assert!(v > 0.0 && v.is_finite());
        }
        // C1/C2 = C3-hat-part / C4-bar-part: shared prefactor cancels.
        assert_abs_diff_eq!(c.c1 / c.c2, c.c3 / c.c4, epsilon = 1e-9);
    }

    #[test]
    fn iid_rate_e_worked_example() {
        // E = (1/(M beta)) (2/lambda_C); lambda_C = 1 on this instance.
        let Constants::Iid(c) = cycle2_iid() else { unreachable!() };
        let (_, e, _) = rates_iid(&c, 0.1, 0.5, 10);
        assert_abs_diff_eq!(e, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn iid_d_linear_in_beta_term() {
        let Constants::Iid(c) = cycle2_iid() else { unreachable!() };
        let (d1, _, _) = rates_iid(&c, 1e-6, 1e-3, 1_000_000);
        let (d2, _, _) = rates_iid(&c, 1e-6, 2e-3, 1_000_000);
        // Doubling beta doubles the beta-linear summand of D exactly; check
        // via the closed form of the difference.
        let delta = (d2 - d1) * c.ingredients.lambda_a_hat / 12.0;
        let expected = 1e-3 * c.c2
            + (1e-6f64.powi(2)) * c.c1 * (1.0 / (2e-3f64.powi(2)) - 1.0 / (1e-3f64.powi(2)));
        assert_abs_diff_eq!(delta, expected, epsilon = 1e-12);
    }

    #[test]
    fn markov_k4_worked_example() {
        // K4 = (12/lambda_C) R_w^2 (1 + kappa rho / (1 - rho)) = 24.
        let spectral = SpectralConstants {
            lambda_a_hat: 0.25,
            lambda_c: 1.0,
            min_abs_eig_c: 0.5,
            rho_max: 1.0,
            r_max: 1.0,
        };
        let radii = Radii { r_theta: 3.0, r_w: 1.0 };
        let mixing = crate::env::MixingEstimate { kappa: 1.0, rho: 0.5 };
        let c = constants_markov(&spectral, &radii, 0.5, &mixing).unwrap();
        assert_abs_diff_eq!(c.k4, 24.0, epsilon = 1e-12);
        for v in [c.k1, c.k2, c.k3, c.k4, c.k5, c.c1, c.c2] {
            assert!(v > 0.0 && v.is_finite());
        }
    }

    #[test]
    fn markov_rejects_rho_one() {
        let inst = cycle2_instance();
        let mixing = crate::env::MixingEstimate { kappa: 1.0, rho: 1.0 };
        assert!(matches!(
            constants_markov(&inst.spectral, &inst.radii, 0.5, &mixing),
            Err(Error::InvalidMixing { .. })
        ));
    }

    #[test]
    fn kappa_zero_markov_k1_reduces_to_iid_k1() {
        let inst = cycle2_instance();
        let iid = constants_iid(&inst.spectral, &inst.radii, inst.model.gamma);
        let mixing = crate::env::MixingEstimate { kappa: 0.0, rho: 0.5 };
        let mkv =
            constants_markov(&inst.spectral, &inst.radii, inst.model.gamma, &mixing).unwrap();
        assert_abs_diff_eq!(mkv.k1, iid.k1, epsilon = 1e-12);
    }

    #[test]
    fn markov_rate_e_worked_example() {
        // E = (1/(M beta)) (12/lambda_C) = 12 / 24 = 0.5 on lambda_C = 1.
        let inst = cycle2_instance();
        let mixing = crate::env::MixingEstimate { kappa: 1.0, rho: 0.5 };
        let c = constants_markov(&inst.spectral, &inst.radii, inst.model.gamma, &mixing).unwrap();
        let (_, e, _) = rates_markov(&c, 0.1, 0.5, 48);
        assert_abs_diff_eq!(e, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn schedule_worked_examples() {
        let coeffs = ScheduleCoefficients::default();
        let s = schedule_from_epsilon(Setting::Iid, 1e-5, &coeffs).unwrap();
        assert_abs_diff_eq!(s.alpha, 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(s.beta, 1e-2, epsilon = 1e-14);
        assert_eq!(s.batch_size, 1000);
        assert_eq!(s.epochs, 12); // ceil(5 ln 10) = ceil(11.51)
        let m = schedule_from_epsilon(Setting::Markov, 1e-3, &coeffs).unwrap();
        assert_eq!(m.batch_size, 1000);
        assert!(schedule_from_epsilon(Setting::Iid, 1.0, &coeffs).is_err());
        assert!(schedule_from_epsilon(Setting::Iid, 0.0, &coeffs).is_err());
    }

    #[test]
    fn condition_three_passes_on_generous_batch() {
        let consts = cycle2_iid();
        let report = check_conditions(&consts, 1e-3, 0.5, 10);
        let c3 = report.conditions.iter().find(|c| c.id == "iid-3").unwrap();
        // M beta = 5 > 4/lambda_C = 4.
        assert_abs_diff_eq!(c3.lhs, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c3.rhs, 5.0, epsilon = 1e-12);
        assert!(c3.pass);
    }

    #[test]
    fn big_alpha_fails_first_condition() {
        let consts = cycle2_iid();
        let report = check_conditions(&consts, 1.0, 0.5, 10);
        let c1 = report.conditions.iter().find(|c| c.id == "iid-1").unwrap();
        assert!(!c1.pass);
        assert_eq!(c1.lhs, 1.0);
        assert!(c1.rhs < 1.0);
        assert!(!report.overall);
    }

    #[test]
    fn epsilon_search_feasible_both_settings() {
        let inst = cycle2_instance();
        let iid = cycle2_iid();
        let found = epsilon_search(Setting::Iid, &iid).expect("iid search succeeds");
        assert!(found.report.overall);
        assert!(found.report.d.max(found.report.e).max(found.report.f) < 1.0);
        assert!(found.epsilon >= 1e-8 && found.epsilon <= 1e-1);

        let mixing = inst.mixing(64).unwrap();
        let mkv = Constants::Markov(
            constants_markov(&inst.spectral, &inst.radii, inst.model.gamma, &mixing).unwrap(),
        );
        let found = epsilon_search(Setting::Markov, &mkv).expect("markov search succeeds");
        assert!(found.report.overall);
        assert!(found.report.d.max(found.report.e).max(found.report.f) < 1.0);
    }

    #[test]
    fn constants_monotone_in_rho_max_and_r_theta() {
        let inst = cycle2_instance();
        let base = constants_iid(&inst.spectral, &inst.radii, inst.model.gamma);
        let mut spectral = inst.spectral;
        spectral.rho_max *= 1.1;
        let bumped_rho = constants_iid(&spectral, &inst.radii, inst.model.gamma);
        let mut radii = inst.radii;
        radii.r_theta *= 1.1;
        let bumped_r = constants_iid(&inst.spectral, &radii, inst.model.gamma);
        for (lo, hi) in [
            (base.k1, bumped_rho.k1),
            (base.c1, bumped_rho.c1),
            (base.c4, bumped_rho.c4),
            (base.k1, bumped_r.k1),
            (base.k2, bumped_r.k2),
        ] {
            assert!(hi >= lo);
        }
    }

    #[test]
    fn report_is_pure_and_serializable() {
        let consts = cycle2_iid();
        let r1 = check_conditions(&consts, 1e-3, 1e-2, 1000);
        let r2 = check_conditions(&consts, 1e-3, 1e-2, 1000);
        let j1 = serde_json::to_string(&r1).unwrap();
        let j2 = serde_json::to_string(&r2).unwrap();
        assert_eq!(j1, j2);
        assert!(j1.contains("\"lhs\""));
    }
}
