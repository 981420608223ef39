//! Finite-horizon decentralized LQ: backward Riccati recursion, gain blocks,
//! the structured controller and the analytic optimal cost.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CompactModel, CostSpec, LfnsModel};
use crate::simulation::SimulationTrace;

/// Relative asymmetry above which a recursion step is flagged.
pub const ASYMMETRY_TOL: f64 = 1e-8;

/// Gain partition `K = [[k00, k01], [k10, k11]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecentralizedGains {
    pub k00: DMatrix<f64>,
    pub k01: DMatrix<f64>,
    pub k10: DMatrix<f64>,
    pub k11: DMatrix<f64>,
}

impl DecentralizedGains {
    pub fn from_full(k: &DMatrix<f64>, n: usize, m1: usize, m2: usize) -> Result<Self> {
        linalg::check_shape("gain", k, m1 + m2, 2 * n)?;
        Ok(DecentralizedGains {
            k00: k.view((0, 0), (m1, n)).into_owned(),
            k01: k.view((0, n), (m1, n)).into_owned(),
            k10: k.view((m1, 0), (m2, n)).into_owned(),
            k11: k.view((m1, n), (m2, n)).into_owned(),
        })
    }

    pub fn zeros(n: usize, m1: usize, m2: usize) -> Self {
        DecentralizedGains {
            k00: DMatrix::zeros(m1, n),
            k01: DMatrix::zeros(m1, n),
            k10: DMatrix::zeros(m2, n),
            k11: DMatrix::zeros(m2, n),
        }
    }

    pub fn n(&self) -> usize {
        self.k00.ncols()
    }

    pub fn m1(&self) -> usize {
        self.k00.nrows()
    }

    pub fn m2(&self) -> usize {
        self.k10.nrows()
    }

    pub fn to_full(&self) -> DMatrix<f64> {
        let (n, m1, m2) = (self.n(), self.m1(), self.m2());
        let mut k = DMatrix::zeros(m1 + m2, 2 * n);
        k.view_mut((0, 0), (m1, n)).copy_from(&self.k00);
        k.view_mut((0, n), (m1, n)).copy_from(&self.k01);
        k.view_mut((m1, 0), (m2, n)).copy_from(&self.k10);
        k.view_mut((m1, n), (m2, n)).copy_from(&self.k11);
        k
    }

    /// Leader input, computed from its own state and its estimate of `x1`.
    pub fn leader_control(&self, x0: &DVector<f64>, x1hat: &DVector<f64>) -> DVector<f64> {
        -(&self.k00 * x0) - &self.k01 * x1hat
    }

    /// Follower input, computed from the shared leader state and its own state.
    pub fn follower_control(&self, x0: &DVector<f64>, x1: &DVector<f64>) -> DVector<f64> {
        -(&self.k10 * x0) - &self.k11 * x1
    }

    /// `E[u1 | leader information] = −k10·x0 − k11·x̂1`.
    pub fn mean_follower_control(&self, x0: &DVector<f64>, x1hat: &DVector<f64>) -> DVector<f64> {
        self.follower_control(x0, x1hat)
    }
}

/// Structured controller `u0 = −k00·x0 − k01·x̂1`, `u1 = −k10·x0 − k11·x1`.
pub fn control(
    gains: &DecentralizedGains,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    x1hat: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = gains.n();
    linalg::check_len("x0", x0, n)?;
    linalg::check_len("x1", x1, n)?;
    linalg::check_len("x1hat", x1hat, n)?;
    Ok((gains.leader_control(x0, x1hat), gains.follower_control(x0, x1)))
}

#[derive(Clone, Debug)]
pub struct FiniteHorizonSolution {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub horizon: usize,
    /// `P(k)` for `k = 0..=N+1`.
    pub p_seq: Vec<DMatrix<f64>>,
    /// `K(k)` (or `H_N(k)` when discounted) for `k = 0..=N`.
    pub k_seq: Vec<DMatrix<f64>>,
    /// `Λ(k)` (or `Ψ_N(k)`).
    pub lambda_seq: Vec<DMatrix<f64>>,
    pub l_seq: Vec<DMatrix<f64>>,
    pub discounted: bool,
    pub gamma: Option<f64>,
    /// Steps whose pre-symmetrization relative asymmetry exceeded [`ASYMMETRY_TOL`].
    pub asymmetry_flags: Vec<usize>,
}

impl FiniteHorizonSolution {
    pub fn gains(&self, k: usize) -> Result<DecentralizedGains> {
        let gain = self
            .k_seq
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("step {k} beyond horizon {}", self.horizon)))?;
        DecentralizedGains::from_full(gain, self.n, self.m1, self.m2)
    }

    /// Factor multiplying `L` in the first-order condition: `Λ·U + scale·L·X = 0`.
    fn l_scale(&self) -> f64 {
        if self.discounted {
            self.gamma.unwrap_or(1.0)
        } else {
            1.0
        }
    }
}

/// Undiscounted recursion from the terminal weight (zero when unset).
pub fn backward_riccati(compact: &CompactModel, cost: &CostSpec, horizon: usize) -> Result<FiniteHorizonSolution> {
    recursion(compact, cost, cost.terminal_or_zero(), 1.0, horizon, false)
}

/// Discounted recursion with zero terminal weight; the terminal weight in
/// `cost` is ignored.
pub fn discounted_backward_riccati(
    compact: &CompactModel,
    cost: &CostSpec,
    horizon: usize,
) -> Result<FiniteHorizonSolution> {
    let gamma = cost.require_gamma()?;
    let dim = compact.state_dim();
    recursion(compact, cost, DMatrix::zeros(dim, dim), gamma, horizon, true)
}

/// `(P, gain, Λ, L, asymmetry)`
pub(crate) type RiccatiStep = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, f64);

/// One backward step. Returns `(P, gain, Λ, L, asymmetry)` where the gain is
/// `γ·Λ⁻¹L` and `Λ = R + γBᵀP'B`.
pub(crate) fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_next: &DMatrix<f64>,
    gamma: f64,
    step: usize,
) -> Result<RiccatiStep> {
    let bt_p = b.transpose() * p_next;
    let lambda = linalg::symmetrize(&(r + &bt_p * b * gamma));
    let l = &bt_p * a;
    let lambda_inv_l = linalg::solve_spd(&lambda, &l, "Λ", step)?;
    let gain = &lambda_inv_l * gamma;
    let raw = q + a.transpose() * p_next * a * gamma - l.transpose() * &lambda_inv_l * (gamma * gamma);
    let asym = linalg::relative_asymmetry(&raw);
    let p = linalg::symmetrize(&raw);
    if !linalg::all_finite(&p) || !linalg::all_finite(&gain) {
        return Err(Error::NonFinite { what: "P", step });
    }
    Ok((p, gain, lambda, l, asym))
}

fn recursion(
    compact: &CompactModel,
    cost: &CostSpec,
    terminal: DMatrix<f64>,
    gamma: f64,
    horizon: usize,
    discounted: bool,
) -> Result<FiniteHorizonSolution> {
    let dim = compact.state_dim();
    let inputs = compact.input_dim();
    linalg::check_shape("q", &cost.q, dim, dim)?;
    linalg::check_shape("r", &cost.r, inputs, inputs)?;
    linalg::check_shape("p_terminal", &terminal, dim, dim)?;

    let mut p_seq = vec![DMatrix::zeros(dim, dim); horizon + 2];
    let mut k_seq = vec![DMatrix::zeros(inputs, dim); horizon + 1];
    let mut lambda_seq = vec![DMatrix::zeros(inputs, inputs); horizon + 1];
    let mut l_seq = vec![DMatrix::zeros(inputs, dim); horizon + 1];
    let mut asymmetry_flags = Vec::new();
    p_seq[horizon + 1] = linalg::symmetrize(&terminal);

    for k in (0..=horizon).rev() {
        let (p, gain, lambda, l, asym) =
            riccati_step(&compact.a, &compact.b, &cost.q, &cost.r, &p_seq[k + 1], gamma, k)?;
        if asym > ASYMMETRY_TOL {
            asymmetry_flags.push(k);
        }
        let min = linalg::min_eigenvalue(&p);
        if min < linalg::PSD_TOL * p.norm().max(1.0) {
            return Err(Error::NotPositiveSemidefinite {
                what: "P",
                step: k,
                min_eigenvalue: min,
            });
        }
        p_seq[k] = p;
        k_seq[k] = gain;
        lambda_seq[k] = lambda;
        l_seq[k] = l;
    }

    Ok(FiniteHorizonSolution {
        n: compact.n,
        m1: compact.m1,
        m2: compact.m2,
        horizon,
        p_seq,
        k_seq,
        lambda_seq,
        l_seq,
        discounted,
        gamma: discounted.then_some(gamma),
        asymmetry_flags,
    })
}

/// `E[XᵀPX] = x̄ᵀPx̄ + Tr(Cov(X)·P)`.
pub fn initial_quadratic(model: &LfnsModel, p: &DMatrix<f64>) -> f64 {
    let mean = model.initial_mean();
    (mean.transpose() * p * &mean)[(0, 0)] + (model.initial_covariance() * p).trace()
}

/// Analytic optimal cost. Undiscounted:
/// `E[X(0)ᵀP(0)X(0)] + Σ_{k=0..N} Tr(Σ_W·P(k+1))`; discounted: the trace
/// terms are weighted by `γ^{k+1}`.
pub fn optimal_cost(solution: &FiniteHorizonSolution, model: &LfnsModel) -> Result<f64> {
    let dim = 2 * model.n;
    linalg::check_shape("P(0)", &solution.p_seq[0], dim, dim)?;
    let sigma_w = model.noise_covariance();
    let gamma = solution.gamma.unwrap_or(1.0);
    let mut weight = 1.0;
    let mut noise = 0.0;
    for p in &solution.p_seq[1..] {
        weight *= gamma;
        noise += weight * (&sigma_w * p).trace();
    }
    Ok(initial_quadratic(model, &solution.p_seq[0]) + noise)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CostateCheck {
    /// `‖Λ(k)Û(k) + L(k)X̂(k|k)‖`.
    pub hat_residuals: Vec<f64>,
    /// `‖Λ(k)Ũ(k) + L(k)X̃(k|k)‖`.
    pub tilde_residuals: Vec<f64>,
}

impl CostateCheck {
    pub fn max_hat(&self) -> f64 {
        self.hat_residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_tilde(&self) -> f64 {
        self.tilde_residuals.iter().copied().fold(0.0, f64::max)
    }
}

/// First-order conditions evaluated along a trace, split into the part
/// measurable to the leader (`Û = (u0, û1)`, `X̂ = (x0, x̂1)`) and the
/// orthogonal remainder (`Ũ = (0, u1 − û1)`, `X̃ = (0, x1 − x̂1)`).
pub fn stationarity_residuals(solution: &FiniteHorizonSolution, trace: &SimulationTrace) -> CostateCheck {
    let scale = solution.l_scale();
    let steps = trace.u0.len().min(solution.k_seq.len());
    let mut out = CostateCheck::default();
    for k in 0..steps {
        let lambda = &solution.lambda_seq[k];
        let l = &solution.l_seq[k];
        let u_hat = linalg::stack(&trace.u0[k], &trace.u1hat[k]);
        let x_hat = linalg::stack(&trace.x0[k], &trace.x1hat[k]);
        let u_tilde = linalg::stack(&(&trace.u0[k] * 0.0), &(&trace.u1[k] - &trace.u1hat[k]));
        let x_tilde = linalg::stack(&(&trace.x0[k] * 0.0), &(&trace.x1[k] - &trace.x1hat[k]));
        out.hat_residuals.push((lambda * u_hat + l * x_hat * scale).norm());
        out.tilde_residuals.push((lambda * u_tilde + l * x_tilde * scale).norm());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::assemble_compact;
    use proptest::prelude::*;

    fn scalar_pair(a: f64, b: f64) -> CompactModel {
        assemble_compact(&LfnsModel::scalar(a, 0.0, a, b, 0.0, b)).unwrap()
    }

    fn cost2(q: f64, r: f64) -> CostSpec {
        CostSpec::new(DMatrix::identity(2, 2) * q, DMatrix::identity(2, 2) * r)
    }

    #[test]
    fn zero_dynamics_single_step() {
        let sol = backward_riccati(&scalar_pair(0.0, 1.0), &cost2(1.0, 1.0).with_terminal(DMatrix::identity(2, 2)), 0)
            .unwrap();
        assert!(sol.l_seq[0].norm() == 0.0);
        assert!(sol.k_seq[0].norm() == 0.0);
        assert!((sol.p_seq[0][(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_step_scalar_values() {
        let sol = backward_riccati(&scalar_pair(1.0, 1.0), &cost2(1.0, 1.0).with_terminal(DMatrix::identity(2, 2)), 1)
            .unwrap();
        assert!((sol.k_seq[1][(0, 0)] - 0.5).abs() < 1e-14);
        assert!((sol.p_seq[1][(0, 0)] - 1.5).abs() < 1e-14);
        assert!((sol.k_seq[0][(0, 0)] - 0.6).abs() < 1e-14);
        assert!((sol.p_seq[0][(0, 0)] - 1.6).abs() < 1e-14);
    }

    /// Cost-to-go by minimizing over a control grid, independent of the
    /// closed-form update.
    #[test]
    fn grid_dynamic_programming_matches_quadratic_coefficients() {
        let (a, b, q, r) = (1.0, 1.0, 1.0, 1.0);
        let mut p_next = 1.0;
        let sol = backward_riccati(&scalar_pair(a, b), &cost2(q, r).with_terminal(DMatrix::identity(2, 2)), 1)
            .unwrap();
        for k in (0..=1).rev() {
            let x = 1.0;
            let best = (0..=200_000)
                .map(|i| -2.0 + 4.0 * i as f64 / 200_000.0)
                .map(|u| q * x * x + r * u * u + p_next * (a * x + b * u).powi(2))
                .fold(f64::INFINITY, f64::min);
            assert!((best - sol.p_seq[k][(0, 0)]).abs() < 1e-8, "k={k}");
            p_next = best;
        }
    }

    #[test]
    fn discounted_zero_terminal() {
        let sol = discounted_backward_riccati(&scalar_pair(1.0, 1.0), &cost2(1.0, 1.0).with_gamma(0.9), 0).unwrap();
        assert_eq!(sol.lambda_seq[0][(0, 0)], 1.0);
        assert_eq!(sol.k_seq[0][(0, 0)], 0.0);
        assert_eq!(sol.p_seq[0][(0, 0)], 1.0);
    }

    #[test]
    fn discount_near_one_matches_undiscounted() {
        let compact = assemble_compact(&LfnsModel::scalar(1.1, 0.4, 0.7, 1.0, 0.3, 0.8)).unwrap();
        let cost = cost2(1.0, 1.0).with_gamma(1.0 - 1e-12);
        let d = discounted_backward_riccati(&compact, &cost, 15).unwrap();
        let u = backward_riccati(&compact, &CostSpec { gamma: None, ..cost }, 15).unwrap();
        for k in 0..=16 {
            assert!((&d.p_seq[k] - &u.p_seq[k]).norm() < 1e-8);
        }
    }

    #[test]
    fn indefinite_input_weight_is_an_error() {
        let cost = CostSpec::new(DMatrix::identity(2, 2), -DMatrix::identity(2, 2));
        let err = backward_riccati(&scalar_pair(1.0, 1.0), &cost, 3).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { .. }));
    }

    #[test]
    fn optimal_cost_examples() {
        let model = LfnsModel::scalar(1.0, 0.0, 1.0, 1.0, 0.0, 1.0).with_initial(
            DVector::from_vec(vec![1.0]),
            DMatrix::zeros(1, 1),
            DVector::from_vec(vec![2.0]),
            DMatrix::zeros(1, 1),
        );
        let compact = assemble_compact(&model).unwrap();
        let sol = backward_riccati(&compact, &cost2(1.0, 1.0).with_terminal(DMatrix::identity(2, 2)), 3).unwrap();
        let x = model.initial_mean();
        let want = (x.transpose() * &sol.p_seq[0] * &x)[(0, 0)];
        assert!((optimal_cost(&sol, &model).unwrap() - want).abs() < 1e-12);

        // zero initial state, unit leader noise only, N = 0, P(1) = p
        let model = LfnsModel::scalar(1.0, 0.0, 1.0, 1.0, 0.0, 1.0)
            .with_noise(DMatrix::identity(1, 1), DMatrix::zeros(1, 1));
        let pt = DMatrix::from_diagonal(&DVector::from_vec(vec![2.5, 7.0]));
        let sol = backward_riccati(&assemble_compact(&model).unwrap(), &cost2(1.0, 1.0).with_terminal(pt), 0).unwrap();
        assert!((optimal_cost(&sol, &model).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn control_contract() {
        let z = DecentralizedGains::zeros(2, 1, 1);
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let (u0, u1) = control(&z, &v, &v, &v).unwrap();
        assert_eq!((u0.norm(), u1.norm()), (0.0, 0.0));

        let full = DMatrix::from_fn(2, 4, |i, j| (i * 4 + j) as f64 * 0.1 - 0.3);
        let g = DecentralizedGains::from_full(&full, 2, 1, 1).unwrap();
        assert_eq!(g.to_full(), full);
        let (u0, u1) = control(&g, &v, &v, &v).unwrap();
        let stacked = -(&full * linalg::stack(&v, &v));
        assert!((linalg::stack(&u0, &u1) - stacked).norm() < 1e-14);

        let x1 = DVector::from_vec(vec![5.0, 5.0]);
        let (p0, p1) = control(&g, &v, &x1, &v).unwrap();
        assert_eq!(p0, u0);
        assert_ne!(p1, u1);
    }

    fn mat(n: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.5..1.5f64, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn recursion_invariants(
            a00 in mat(2, 2), a10 in mat(2, 2), a11 in mat(2, 2),
            b00 in mat(2, 1), b10 in mat(2, 1), b11 in mat(2, 1),
            c in mat(4, 4), pt in mat(4, 4), horizon in 1usize..8,
        ) {
            let compact = assemble_compact(&LfnsModel::from_dynamics(a00, a10, a11, b00, b10, b11)).unwrap();
            let q = &c * c.transpose();
            let cost = CostSpec::new(q, DMatrix::identity(2, 2)).with_terminal(&pt * pt.transpose());
            let sol = backward_riccati(&compact, &cost, horizon).unwrap();
            for p in &sol.p_seq {
                prop_assert!(linalg::min_eigenvalue(p) >= -1e-9 * p.norm().max(1.0));
                prop_assert_eq!(p.clone(), p.transpose());
            }
            for l in &sol.lambda_seq {
                prop_assert!(linalg::is_pd(l));
            }
            prop_assert_eq!(sol.p_seq[horizon + 1].clone(), cost.p_terminal.clone().unwrap());

            // shift identity P_N(k) = P_{N-k}(0)
            let k = horizon / 2;
            let short = backward_riccati(&compact, &cost, horizon - k).unwrap();
            prop_assert!((&sol.p_seq[k] - &short.p_seq[0]).norm() <= 1e-9 * sol.p_seq[k].norm().max(1.0));

            // zero-terminal discounted values are monotone in the horizon
            let dcost = cost.clone().with_gamma(0.8);
            let p_short = discounted_backward_riccati(&compact, &dcost, horizon - 1).unwrap().p_seq[0].clone();
            let p_long = discounted_backward_riccati(&compact, &dcost, horizon).unwrap().p_seq[0].clone();
            prop_assert!(linalg::min_eigenvalue(&(&p_long - &p_short)) >= -1e-9 * p_long.norm().max(1.0));
        }
    }
}
