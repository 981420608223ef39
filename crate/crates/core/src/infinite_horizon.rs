//! Discounted stationary Riccati equation, the constant decentralized gain and
//! the stabilizability certificate.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finite_horizon::{self, initial_quadratic, DecentralizedGains};
use crate::linalg::{self, PD_TOL};
use crate::model::{CompactModel, CostSpec, LfnsModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Stop when `‖P⁺ − P‖_F / ‖P⁺‖_F` drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Iterate norm treated as divergence.
    pub divergence_norm: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-12,
            max_iterations: 100_000,
            divergence_norm: 1e12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StationarySolution {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub p: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub gamma: f64,
    pub iterations: usize,
    /// Relative change of the last iteration.
    pub residual: f64,
    /// `‖P − (Q + γAᵀPA − γ²LᵀΨ⁻¹L)‖_F / ‖P‖_F`.
    pub fixed_point_residual: f64,
    /// `‖P − γ(A−BH)ᵀP(A−BH) − Q − HᵀRH‖_F / ‖P‖_F`.
    pub lyapunov_residual: f64,
    /// Whether every iterate dominated its predecessor in PSD order.
    pub monotone: bool,
}

impl StationarySolution {
    pub fn gains(&self) -> DecentralizedGains {
        DecentralizedGains::from_full(&self.h, self.n, self.m1, self.m2).expect("gain shape fixed by solver")
    }

    pub fn closed_loop(&self, compact: &CompactModel) -> DMatrix<f64> {
        &compact.a - &compact.b * &self.h
    }
}

pub fn solve_stationary_riccati(compact: &CompactModel, cost: &CostSpec) -> Result<StationarySolution> {
    solve_stationary_riccati_with(compact, cost, SolverOptions::default())
}

/// Value iteration from `P = 0`; the iterates are the zero-terminal
/// discounted horizon solutions `P_i(0)`.
pub fn solve_stationary_riccati_with(
    compact: &CompactModel,
    cost: &CostSpec,
    opts: SolverOptions,
) -> Result<StationarySolution> {
    let gamma = cost.require_gamma()?;
    let dim = compact.state_dim();
    linalg::check_shape("q", &cost.q, dim, dim)?;
    linalg::check_shape("r", &cost.r, compact.input_dim(), compact.input_dim())?;
    let (a, b) = (&compact.a, &compact.b);

    let mut p = DMatrix::zeros(dim, dim);
    let mut monotone = true;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (next, ..) = finite_horizon::riccati_step(a, b, &cost.q, &cost.r, &p, gamma, iterations)?;
        let norm = next.norm();
        if norm > opts.divergence_norm {
            return Err(Error::Divergence { iterations, norm });
        }
        let diff = &next - &p;
        if linalg::min_eigenvalue(&diff) < -1e-9 * norm.max(1.0) {
            monotone = false;
        }
        residual = if norm == 0.0 { 0.0 } else { diff.norm() / norm };
        p = next;
        if residual < opts.tolerance {
            break;
        }
    }
    if residual >= opts.tolerance {
        return Err(Error::NotConverged { iterations, residual });
    }

    let bt_p = b.transpose() * &p;
    let psi = linalg::symmetrize(&(&cost.r + &bt_p * b * gamma));
    let l = &bt_p * a;
    let psi_inv_l = linalg::solve_spd(&psi, &l, "Ψ", iterations)?;
    let h = &psi_inv_l * gamma;

    let scale = p.norm().max(f64::MIN_POSITIVE);
    let rhs = &cost.q + a.transpose() * &p * a * gamma - l.transpose() * &psi_inv_l * (gamma * gamma);
    let fixed_point_residual = (&p - rhs).norm() / scale;
    let acl = a - b * &h;
    let lyap = acl.transpose() * &p * &acl * gamma + &cost.q + h.transpose() * &cost.r * &h;
    let lyapunov_residual = (&p - lyap).norm() / scale;

    Ok(StationarySolution {
        n: compact.n,
        m1: compact.m1,
        m2: compact.m2,
        p,
        h,
        psi,
        l,
        gamma,
        iterations,
        residual,
        fixed_point_residual,
        lyapunov_residual,
        monotone,
    })
}

/// Outcome of a strict matrix inequality checked with a `1e-9` margin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certification {
    Holds,
    Fails,
    /// `|λ_min|` within the margin.
    Inconclusive,
}

impl Certification {
    fn from_margin(min_eigenvalue: f64) -> Self {
        if !min_eigenvalue.is_finite() {
            Certification::Fails
        } else if min_eigenvalue >= PD_TOL {
            Certification::Holds
        } else if min_eigenvalue <= -PD_TOL {
            Certification::Fails
        } else {
            Certification::Inconclusive
        }
    }

    pub fn and(self, other: Self) -> Self {
        use Certification::*;
        match (self, other) {
            (Fails, _) | (_, Fails) => Fails,
            (Holds, Holds) => Holds,
            _ => Inconclusive,
        }
    }

    pub fn holds(self) -> bool {
        self == Certification::Holds
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilizabilityVerdict {
    pub positive_definite: Certification,
    pub min_eigenvalue_p: f64,
    /// `(1−γ)P ≺ Q + HᵀRH`.
    pub inequality: Certification,
    /// `λ_min(Q + HᵀRH − (1−γ)P)`.
    pub inequality_margin: f64,
    /// `ρ(A − BH)`.
    pub spectral_radius: f64,
    pub closed_loop_stable: bool,
    /// `positive_definite ∧ inequality`.
    pub stabilizable: Certification,
    /// Solver failure, when no fixed point was found.
    pub solver_error: Option<String>,
}

impl StabilizabilityVerdict {
    pub fn is_stabilizable(&self) -> bool {
        self.stabilizable.holds()
    }

    fn solver_failed(err: &Error) -> Self {
        StabilizabilityVerdict {
            positive_definite: Certification::Fails,
            min_eigenvalue_p: f64::NAN,
            inequality: Certification::Fails,
            inequality_margin: f64::NAN,
            spectral_radius: f64::NAN,
            closed_loop_stable: false,
            stabilizable: Certification::Fails,
            solver_error: Some(err.to_string()),
        }
    }
}

pub fn check_stabilizability(
    solution: &StationarySolution,
    cost: &CostSpec,
    compact: &CompactModel,
) -> StabilizabilityVerdict {
    let min_p = linalg::min_eigenvalue(&solution.p);
    let h = &solution.h;
    let gap = &cost.q + h.transpose() * &cost.r * h - &solution.p * (1.0 - solution.gamma);
    let margin = linalg::min_eigenvalue(&gap);
    let rho = linalg::spectral_radius(&solution.closed_loop(compact));
    let positive_definite = Certification::from_margin(min_p);
    let inequality = Certification::from_margin(margin);
    StabilizabilityVerdict {
        positive_definite,
        min_eigenvalue_p: min_p,
        inequality,
        inequality_margin: margin,
        spectral_radius: rho,
        closed_loop_stable: rho < 1.0,
        stabilizable: positive_definite.and(inequality),
        solver_error: None,
    }
}

/// Solves and certifies in one go. Divergence or non-convergence yields a
/// failing verdict rather than an error; invalid inputs still error.
pub fn certify(
    compact: &CompactModel,
    cost: &CostSpec,
) -> Result<(Option<StationarySolution>, StabilizabilityVerdict)> {
    match solve_stationary_riccati(compact, cost) {
        Ok(sol) => {
            let verdict = check_stabilizability(&sol, cost, compact);
            Ok((Some(sol), verdict))
        }
        Err(e @ (Error::Divergence { .. } | Error::NotConverged { .. })) => {
            Ok((None, StabilizabilityVerdict::solver_failed(&e)))
        }
        Err(e) => Err(e),
    }
}

/// `γ/(1−γ)·Tr(Σ_W·P)`.
pub fn noise_cost_term(solution: &StationarySolution, sigma_w: &DMatrix<f64>) -> f64 {
    let g = solution.gamma;
    g / (1.0 - g) * (sigma_w * &solution.p).trace()
}

/// `E[X(0)ᵀPX(0)] + γ/(1−γ)·Tr(Σ_W·P)`.
pub fn stationary_cost(solution: &StationarySolution, model: &LfnsModel) -> Result<f64> {
    linalg::check_shape("P", &solution.p, 2 * model.n, 2 * model.n)?;
    Ok(initial_quadratic(model, &solution.p) + noise_cost_term(solution, &model.noise_covariance()))
}

pub fn stationary_decentralized_control(
    solution: &StationarySolution,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    x1hat: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    finite_horizon::control(&solution.gains(), x0, x1, x1hat)
}

#[derive(Clone, Debug, Serialize)]
pub struct ObservabilityReport {
    pub rank: usize,
    pub state_dim: usize,
    pub observable: bool,
}

/// Rank of the observability matrix of `(A, Q^{1/2})`.
pub fn observability_rank(compact: &CompactModel, cost: &CostSpec) -> ObservabilityReport {
    let dim = compact.state_dim();
    let c = linalg::psd_factor(&cost.q).transpose();
    let mut rows = Vec::with_capacity(dim);
    let mut block = c.clone();
    for _ in 0..dim {
        rows.push(block.clone());
        block = &block * &compact.a;
    }
    let mut obs = DMatrix::zeros(dim * c.nrows(), dim);
    for (i, r) in rows.iter().enumerate() {
        obs.view_mut((i * c.nrows(), 0), (c.nrows(), dim)).copy_from(r);
    }
    let scale = obs.norm().max(1.0);
    let rank = obs.rank(1e-10 * scale);
    ObservabilityReport {
        rank,
        state_dim: dim,
        observable: rank == dim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::assemble_compact;

    fn scalar_pair(a: f64, b: f64) -> CompactModel {
        assemble_compact(&LfnsModel::scalar(a, 0.0, a, b, 0.0, b)).unwrap()
    }

    fn cost2(q: f64) -> CostSpec {
        CostSpec::new(DMatrix::identity(2, 2) * q, DMatrix::identity(2, 2)).with_gamma(0.9)
    }

    #[test]
    fn zero_dynamics_fixed_point_is_q() {
        let sol = solve_stationary_riccati(&scalar_pair(0.0, 1.0), &cost2(2.0)).unwrap();
        assert!((sol.p[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(sol.h.norm() < 1e-15);
    }

    #[test]
    fn unit_scalar_closed_form() {
        let compact = scalar_pair(1.0, 1.0);
        let cost = cost2(1.0);
        let sol = solve_stationary_riccati(&compact, &cost).unwrap();
        let root = (0.8 + 4.24f64.sqrt()) / 1.8;
        assert!((sol.p[(0, 0)] - root).abs() < 1e-10);
        assert!((sol.h[(0, 0)] - (root - 1.0)).abs() < 1e-10);
        assert!(sol.monotone);
        assert!(sol.fixed_point_residual < 1e-10 && sol.lyapunov_residual < 1e-10);

        let v = check_stabilizability(&sol, &cost, &compact);
        assert!(v.is_stabilizable());
        assert!((v.spectral_radius - (2.0 - root)).abs() < 1e-10);
        // Q + H²R − (1−γ)P evaluated by hand
        let h = root - 1.0;
        assert!((v.inequality_margin - (1.0 + h * h - 0.1 * root)).abs() < 1e-10);
    }

    #[test]
    fn uncontrollable_unstable_mode_diverges() {
        let compact = scalar_pair(2.0, 0.0);
        let err = solve_stationary_riccati(&compact, &cost2(1.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        let (sol, verdict) = certify(&compact, &cost2(1.0)).unwrap();
        assert!(sol.is_none());
        assert_eq!(verdict.stabilizable, Certification::Fails);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let opts = SolverOptions {
            max_iterations: 3,
            ..SolverOptions::default()
        };
        let err = solve_stationary_riccati_with(&scalar_pair(1.0, 1.0), &cost2(1.0), opts).unwrap_err();
        assert!(matches!(err, Error::NotConverged { iterations: 3, .. }));
    }

    #[test]
    fn stationary_cost_examples() {
        let model = LfnsModel::scalar(0.0, 0.0, 0.0, 1.0, 0.0, 1.0)
            .with_noise(DMatrix::identity(1, 1), DMatrix::zeros(1, 1));
        let sol = solve_stationary_riccati(&assemble_compact(&model).unwrap(), &cost2(2.0)).unwrap();
        assert!((stationary_cost(&sol, &model).unwrap() - 18.0).abs() < 1e-9);

        let model = LfnsModel::scalar(1.0, 0.0, 1.0, 1.0, 0.0, 1.0).with_initial(
            DVector::from_vec(vec![0.5]),
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![-1.0]),
            DMatrix::zeros(1, 1),
        );
        let sol = solve_stationary_riccati(&assemble_compact(&model).unwrap(), &cost2(1.0)).unwrap();
        let x = model.initial_mean();
        let want = (x.transpose() * &sol.p * &x)[(0, 0)];
        assert!((stationary_cost(&sol, &model).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn borderline_margins_are_inconclusive() {
        assert_eq!(Certification::from_margin(1e-12), Certification::Inconclusive);
        assert_eq!(Certification::from_margin(-1.0), Certification::Fails);
        assert_eq!(Certification::Holds.and(Certification::Inconclusive), Certification::Inconclusive);
    }

    #[test]
    fn observability_of_identity_weight() {
        let r = observability_rank(&scalar_pair(1.0, 1.0), &cost2(1.0));
        assert!(r.observable);
        let cost = CostSpec::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        assert_eq!(observability_rank(&scalar_pair(1.0, 1.0), &cost).rank, 0);
    }
}
