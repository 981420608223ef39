//! Independent checks: exact closed-loop cost by moment propagation,
//! finite-difference gain gradients, random perturbation sweeps and a joint
//! Kalman filter for the leader's estimate.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finite_horizon::DecentralizedGains;
use crate::linalg;
use crate::model::{CostSpec, LfnsModel};
use crate::simulation::trial_rng;

pub use crate::policy::StructuredPolicy;

/// Mean and covariance of `(x0, x1, x̂1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl AugmentedMoments {
    pub fn initial(model: &LfnsModel) -> Self {
        let n = model.n;
        let mut mean = DVector::zeros(3 * n);
        mean.rows_mut(0, n).copy_from(&model.xbar0);
        mean.rows_mut(n, n).copy_from(&model.xbar1);
        mean.rows_mut(2 * n, n).copy_from(&model.xbar1);
        let mut cov = DMatrix::zeros(3 * n, 3 * n);
        cov.view_mut((0, 0), (n, n)).copy_from(&model.sigma_x0);
        cov.view_mut((n, n), (n, n)).copy_from(&model.sigma_x1);
        AugmentedMoments { mean, cov }
    }

    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.cov + &self.mean * self.mean.transpose()
    }

    /// `Cov(x1 − x̂1, (x0, x̂1))`.
    pub fn error_cross_covariance(&self, n: usize) -> DMatrix<f64> {
        let mut sel = DMatrix::zeros(n, 3 * n);
        sel.view_mut((0, n), (n, n)).fill_with_identity();
        sel.view_mut((0, 2 * n), (n, n)).copy_from(&(-DMatrix::identity(n, n)));
        let mut other = DMatrix::zeros(2 * n, 3 * n);
        other.view_mut((0, 0), (n, n)).fill_with_identity();
        other.view_mut((n, 2 * n), (n, n)).fill_with_identity();
        sel * &self.cov * other.transpose()
    }
}

/// Closed-loop maps for one step: `z' = F·z + noise`, `U = G·z`.
pub fn closed_loop_maps(model: &LfnsModel, gains: &DecentralizedGains) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m1, m2) = (model.n, model.m1, model.m2);
    let mut g = DMatrix::zeros(m1 + m2, 3 * n);
    g.view_mut((0, 0), (m1, n)).copy_from(&(-&gains.k00));
    g.view_mut((0, 2 * n), (m1, n)).copy_from(&(-&gains.k01));
    g.view_mut((m1, 0), (m2, n)).copy_from(&(-&gains.k10));
    g.view_mut((m1, n), (m2, n)).copy_from(&(-&gains.k11));
    let g0 = g.rows(0, m1).into_owned();
    let g1 = g.rows(m1, m2).into_owned();
    let mut g1hat = DMatrix::zeros(m2, 3 * n);
    g1hat.view_mut((0, 0), (m2, n)).copy_from(&(-&gains.k10));
    g1hat.view_mut((0, 2 * n), (m2, n)).copy_from(&(-&gains.k11));

    let mut f = DMatrix::zeros(3 * n, 3 * n);
    // leader
    f.view_mut((0, 0), (n, n)).copy_from(&model.a00);
    let lead = &model.b00 * &g0;
    let mut rows = f.rows_mut(0, n);
    rows += &lead;
    // follower
    f.view_mut((n, 0), (n, n)).copy_from(&model.a10);
    f.view_mut((n, n), (n, n)).copy_from(&model.a11);
    let fol = &model.b10 * &g0 + &model.b11 * &g1;
    let mut rows = f.rows_mut(n, n);
    rows += &fol;
    // estimate
    f.view_mut((2 * n, 0), (n, n)).copy_from(&model.a10);
    f.view_mut((2 * n, 2 * n), (n, n)).copy_from(&model.a11);
    let est = &model.b10 * &g0 + &model.b11 * &g1hat;
    let mut rows = f.rows_mut(2 * n, n);
    rows += &est;
    (f, g)
}

fn check_policy(model: &LfnsModel, policy: &StructuredPolicy) -> Result<()> {
    model.check_dimensions()?;
    let (n, m1, m2) = policy.dims();
    if (n, m1, m2) != (model.n, model.m1, model.m2) {
        return Err(Error::dims("policy", (model.m1 + model.m2, 2 * model.n), (m1 + m2, 2 * n)));
    }
    Ok(())
}

struct Propagator<'a> {
    model: &'a LfnsModel,
    q_aug: DMatrix<f64>,
    r: &'a DMatrix<f64>,
    noise: DMatrix<f64>,
    moments: AugmentedMoments,
}

impl<'a> Propagator<'a> {
    fn new(model: &'a LfnsModel, cost: &'a CostSpec) -> Result<Self> {
        let n = model.n;
        linalg::check_shape("q", &cost.q, 2 * n, 2 * n)?;
        linalg::check_shape("r", &cost.r, model.m1 + model.m2, model.m1 + model.m2)?;
        let mut q_aug = DMatrix::zeros(3 * n, 3 * n);
        q_aug.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&cost.q);
        let mut noise = DMatrix::zeros(3 * n, 3 * n);
        noise.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&model.noise_covariance());
        Ok(Propagator {
            model,
            q_aug,
            r: &cost.r,
            noise,
            moments: AugmentedMoments::initial(model),
        })
    }

    /// Expected stage cost at the current moments, then advances them.
    fn step(&mut self, gains: &DecentralizedGains, k: usize) -> Result<f64> {
        let (f, g) = closed_loop_maps(self.model, gains);
        let m2 = self.moments.second_moment();
        let weight = &self.q_aug + g.transpose() * self.r * &g;
        let stage = (weight * m2).trace();
        self.moments.mean = &f * &self.moments.mean;
        self.moments.cov = linalg::symmetrize(&(&f * &self.moments.cov * f.transpose() + &self.noise));
        if !stage.is_finite() || !linalg::all_finite(&self.moments.cov) {
            return Err(Error::NonFinite { what: "moments", step: k });
        }
        Ok(stage)
    }

    fn state_quadratic(&self, p: &DMatrix<f64>) -> f64 {
        let n = self.model.n;
        let m2 = self.moments.second_moment();
        (p * m2.view((0, 0), (2 * n, 2 * n))).trace()
    }
}

/// Exact expected cost over stages `0..=horizon`. Undiscounted costs add the
/// terminal weight at `horizon + 1` when one is set.
pub fn exact_cost(
    model: &LfnsModel,
    policy: &StructuredPolicy,
    cost: &CostSpec,
    horizon: usize,
    discounted: bool,
) -> Result<f64> {
    check_policy(model, policy)?;
    let gamma = if discounted { cost.require_gamma()? } else { 1.0 };
    let mut prop = Propagator::new(model, cost)?;
    let mut weight = 1.0;
    let mut total = 0.0;
    for k in 0..=horizon {
        total += weight * prop.step(policy.at(k), k)?;
        weight *= gamma;
    }
    if !discounted {
        if let Some(pt) = &cost.p_terminal {
            total += prop.state_quadratic(pt);
        }
    }
    Ok(total)
}

/// Exact infinite discounted cost, truncated once the geometric tail bound
/// `γ^{k+1}·stage(k)/(1−γ)` falls below `tail_tol` times the running total.
/// Returns the value and the last stage index included.
pub fn exact_cost_infinite(
    model: &LfnsModel,
    policy: &StructuredPolicy,
    cost: &CostSpec,
    tail_tol: f64,
) -> Result<(f64, usize)> {
    check_policy(model, policy)?;
    let gamma = cost.require_gamma()?;
    let mut prop = Propagator::new(model, cost)?;
    let mut weight = 1.0;
    let mut total = 0.0;
    const MAX_STEPS: usize = 1_000_000;
    for k in 0..MAX_STEPS {
        let stage = prop.step(policy.at(k), k)?;
        total += weight * stage;
        weight *= gamma;
        let tail = weight * stage / (1.0 - gamma);
        if k > 0 && tail < tail_tol * total.abs().max(f64::MIN_POSITIVE) {
            return Ok((total, k));
        }
    }
    Err(Error::NotConverged {
        iterations: MAX_STEPS,
        residual: f64::NAN,
    })
}

#[derive(Clone, Debug)]
pub struct GainGradient {
    pub base_cost: f64,
    /// `∂J/∂K` for each stored gain of the policy.
    pub gradient: Vec<DMatrix<f64>>,
    /// `max |∂J/∂θ|·(1+|θ|)/|J|` over all entries.
    pub max_relative: f64,
    /// Stored-gain index and entry of the maximum.
    pub argmax: (usize, usize, usize),
}

/// Central differences of `f` in every entry of every stored gain, with step
/// `1e-5·(1+|θ|)`.
pub fn finite_difference_gradient<F>(policy: &StructuredPolicy, f: F) -> Result<GainGradient>
where
    F: Fn(&StructuredPolicy) -> Result<f64> + Sync,
{
    let base_cost = f(policy)?;
    let gains = policy.full_gains();
    let (rows, cols) = gains[0].shape();
    let entries: Vec<(usize, usize, usize)> = (0..gains.len())
        .flat_map(|s| (0..rows).flat_map(move |i| (0..cols).map(move |j| (s, i, j))))
        .collect();
    let derivs: Vec<f64> = entries
        .par_iter()
        .map(|&(s, i, j)| {
            let theta = gains[s][(i, j)];
            let h = 1e-5 * (1.0 + theta.abs());
            let shifted = |d: f64| {
                policy.map_gains(|k, g| {
                    let mut g = g.clone();
                    if k == s {
                        g[(i, j)] += d;
                    }
                    g
                })
            };
            Ok((f(&shifted(h))? - f(&shifted(-h))?) / (2.0 * h))
        })
        .collect::<Result<_>>()?;

    let mut gradient = vec![DMatrix::zeros(rows, cols); gains.len()];
    let mut max_relative = 0.0;
    let mut argmax = (0, 0, 0);
    let scale = base_cost.abs().max(f64::MIN_POSITIVE);
    for (&(s, i, j), d) in entries.iter().zip(derivs) {
        gradient[s][(i, j)] = d;
        let rel = d.abs() * (1.0 + gains[s][(i, j)].abs()) / scale;
        if rel > max_relative {
            max_relative = rel;
            argmax = (s, i, j);
        }
    }
    Ok(GainGradient {
        base_cost,
        gradient,
        max_relative,
        argmax,
    })
}

pub fn gain_gradient(
    model: &LfnsModel,
    policy: &StructuredPolicy,
    cost: &CostSpec,
    horizon: usize,
    discounted: bool,
) -> Result<GainGradient> {
    finite_difference_gradient(policy, |p| exact_cost(model, p, cost, horizon, discounted))
}

/// Gradient of the infinite discounted cost of a constant policy. The
/// truncation horizon is fixed at the base point so the objective stays
/// smooth under perturbation.
pub fn gain_gradient_infinite(
    model: &LfnsModel,
    policy: &StructuredPolicy,
    cost: &CostSpec,
    tail_tol: f64,
) -> Result<GainGradient> {
    let (_, horizon) = exact_cost_infinite(model, policy, cost, tail_tol)?;
    gain_gradient(model, policy, cost, horizon, true)
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationSweep {
    pub base_cost: f64,
    pub directions: usize,
    pub min_perturbed_cost: f64,
    /// Directions whose cost fell below the base cost.
    pub improvements: usize,
    pub worst_direction: Option<usize>,
}

/// `θ + δ·ξ`, `ξ ~ N(0, I)` entrywise on every stored gain.
pub fn perturb_policy<R: Rng + ?Sized>(policy: &StructuredPolicy, delta: f64, rng: &mut R) -> StructuredPolicy {
    policy.map_gains(|_, g| g.map(|v| v + delta * Distribution::<f64>::sample(&StandardNormal, rng)))
}

/// Exact costs at `θ + δ·ξ`, `ξ ~ N(0, I)` entrywise on every stored gain,
/// for `directions` seeded random draws.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_sweep(
    model: &LfnsModel,
    policy: &StructuredPolicy,
    cost: &CostSpec,
    horizon: usize,
    discounted: bool,
    directions: usize,
    delta: f64,
    seed: u64,
) -> Result<PerturbationSweep> {
    let base_cost = exact_cost(model, policy, cost, horizon, discounted)?;
    let costs: Vec<f64> = (0..directions)
        .into_par_iter()
        .map(|d| {
            let mut rng = trial_rng(seed, d as u64);
            let perturbed = perturb_policy(policy, delta, &mut rng);
            exact_cost(model, &perturbed, cost, horizon, discounted)
        })
        .collect::<Result<_>>()?;
    let mut min = f64::INFINITY;
    let mut worst = None;
    for (d, c) in costs.iter().enumerate() {
        if *c < min {
            min = *c;
            worst = Some(d);
        }
    }
    Ok(PerturbationSweep {
        base_cost,
        directions,
        min_perturbed_cost: min,
        improvements: costs.iter().filter(|&&c| c < base_cost).count(),
        worst_direction: worst,
    })
}

/// Joint Kalman filter on `(x0, x1)` with the follower policy folded into the
/// dynamics and exact observation `y(k) = x0(k)`. Returns the filtered
/// `E[x1(k) | x0(0..k)]` aligned with `x0_seq`.
pub fn kalman_oracle(
    model: &LfnsModel,
    policy: &StructuredPolicy,
    x0_seq: &[DVector<f64>],
    u0_seq: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    check_policy(model, policy)?;
    let n = model.n;
    let mut mean = model.initial_mean();
    let mut cov = model.initial_covariance();
    let noise = model.noise_covariance();
    let mut out = Vec::with_capacity(x0_seq.len());

    for (k, y) in x0_seq.iter().enumerate() {
        linalg::check_len("x0", y, n)?;
        if k > 0 {
            let gains = policy.at(k - 1);
            let u0 = u0_seq
                .get(k - 1)
                .ok_or_else(|| Error::InvalidArgument("leader input sequence too short".into()))?;
            let mut f = DMatrix::zeros(2 * n, 2 * n);
            f.view_mut((0, 0), (n, n)).copy_from(&model.a00);
            f.view_mut((n, 0), (n, n)).copy_from(&(&model.a10 - &model.b11 * &gains.k10));
            f.view_mut((n, n), (n, n)).copy_from(&(&model.a11 - &model.b11 * &gains.k11));
            let drive = linalg::stack(&(&model.b00 * u0), &(&model.b10 * u0));
            mean = &f * mean + drive;
            cov = linalg::symmetrize(&(&f * cov * f.transpose() + &noise));
        }
        // condition on x0 = y exactly
        let s00 = cov.view((0, 0), (n, n)).into_owned();
        let s10 = cov.view((n, 0), (n, n)).into_owned();
        let s11 = cov.view((n, n), (n, n)).into_owned();
        let innovation = y - mean.rows(0, n);
        let (x1, s11_post) = if s00.norm() > 0.0 {
            let pinv = linalg::symmetrize(&s00)
                .pseudo_inverse(1e-12 * s00.norm())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let gain = &s10 * pinv;
            (mean.rows(n, n) + &gain * innovation, &s11 - &gain * s10.transpose())
        } else {
            (mean.rows(n, n).into_owned(), s11)
        };
        mean = linalg::stack(y, &x1);
        cov = linalg::block_diag(&DMatrix::zeros(n, n), &linalg::symmetrize(&s11_post));
        out.push(x1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator;
    use crate::finite_horizon::{backward_riccati, optimal_cost};
    use crate::model::assemble_compact;
    use crate::simulation::{simulate, SimulationConfig};

    fn det_scalar(a00: f64, a10: f64, a11: f64, x: (f64, f64)) -> LfnsModel {
        LfnsModel::scalar(a00, a10, a11, 1.0, 0.3, 1.0).with_initial(
            DVector::from_element(1, x.0),
            DMatrix::zeros(1, 1),
            DVector::from_element(1, x.1),
            DMatrix::zeros(1, 1),
        )
    }

    #[test]
    fn open_loop_quadratic() {
        let model = det_scalar(0.9, 0.4, 0.7, (1.0, 2.0));
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).with_gamma(0.8);
        let compact = assemble_compact(&model).unwrap();
        let mut x = model.initial_mean();
        let mut want = 0.0;
        let mut w = 1.0;
        for _ in 0..=6 {
            want += w * x.norm_squared();
            x = &compact.a * x;
            w *= 0.8;
        }
        let got = exact_cost(&model, &StructuredPolicy::zeros(1, 1, 1), &cost, 6, true).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn matches_analytic_cost_without_follower_uncertainty() {
        let model = det_scalar(1.1, 0.6, 0.8, (1.0, -0.5)).with_noise(DMatrix::identity(1, 1), DMatrix::zeros(1, 1));
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).with_terminal(DMatrix::identity(2, 2));
        let sol = backward_riccati(&assemble_compact(&model).unwrap(), &cost, 10).unwrap();
        let policy = StructuredPolicy::from_finite(&sol);
        let exact = exact_cost(&model, &policy, &cost, 10, false).unwrap();
        assert!((exact - optimal_cost(&sol, &model).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn zero_gains_are_not_stationary() {
        let model = det_scalar(1.1, 0.6, 0.8, (1.0, -0.5));
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let g = gain_gradient(&model, &StructuredPolicy::zeros(1, 1, 1), &cost, 5, false).unwrap();
        assert!(g.max_relative > 1e-3);
    }

    #[test]
    fn cost_is_linear_in_weights() {
        let model = det_scalar(1.1, 0.6, 0.8, (1.0, -0.5)).with_noise(DMatrix::identity(1, 1), DMatrix::identity(1, 1));
        let policy = StructuredPolicy::constant(&DMatrix::from_element(2, 2, 0.2), 1, 1, 1).unwrap();
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.5);
        let doubled = CostSpec::new(&cost.q * 2.0, &cost.r * 2.0);
        let a = exact_cost(&model, &policy, &cost, 8, false).unwrap();
        let b = exact_cost(&model, &policy, &doubled, 8, false).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-10 * a);
    }

    #[test]
    fn kalman_oracle_special_cases() {
        // decoupled: filter is the open-loop mean propagation
        let model = LfnsModel::scalar(0.9, 0.0, 0.8, 1.0, 0.0, 1.0)
            .with_noise(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .with_initial(DVector::from_element(1, 1.0), DMatrix::identity(1, 1), DVector::from_element(1, 2.0), DMatrix::identity(1, 1));
        let policy = StructuredPolicy::constant(&DMatrix::from_element(2, 2, 0.1), 1, 1, 1).unwrap();
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let t = simulate(&model, &cost, &policy, &SimulationConfig::new(10, 3), 0).unwrap();
        let kf = kalman_oracle(&model, &policy, &t.x0, &t.u0).unwrap();
        let mut m = 2.0;
        for (k, est) in kf.iter().enumerate() {
            assert!((est[0] - m).abs() < 1e-12, "k={k}");
            m = (0.8 - 0.1) * m - 0.1 * t.x0[k][0];
        }

        // no uncertainty: oracle is the true state
        let model = det_scalar(1.2, 0.7, 0.5, (1.0, -1.0));
        let t = simulate(&model, &cost, &policy, &SimulationConfig::new(10, 3), 0).unwrap();
        let kf = kalman_oracle(&model, &policy, &t.x0, &t.u0).unwrap();
        for (a, b) in kf.iter().zip(&t.x1) {
            assert!((a - b).norm() < 1e-12);
        }
        let rec = estimator::run(&model, &policy, &t.x0, &t.u0).unwrap();
        assert_eq!(rec.len(), kf.len());
    }

    #[test]
    fn estimation_error_is_orthogonal_in_moments() {
        let model = LfnsModel::scalar(1.1, 0.6, 0.8, 1.0, 0.3, 1.0)
            .with_noise(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .with_initial(DVector::from_element(1, 1.0), DMatrix::identity(1, 1), DVector::from_element(1, 2.0), DMatrix::identity(1, 1));
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let policy = StructuredPolicy::constant(&DMatrix::from_element(2, 2, 0.3), 1, 1, 1).unwrap();
        let mut prop = Propagator::new(&model, &cost).unwrap();
        for k in 0..10 {
            assert!(prop.moments.error_cross_covariance(1).norm() < 1e-12);
            prop.step(policy.at(k), k).unwrap();
        }
    }
}
