//! Seeded closed-loop Monte Carlo for the leader-follower system.
//!
//! Trial `i` of a run with root seed `s` draws from `ChaCha8Rng` seeded with
//! `s` on stream `i`, so any trial can be replayed on its own and trials can
//! run in any order. Aggregation happens in fixed-size batches reduced in
//! trial order, which keeps summaries bit-identical across thread counts.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator;
use crate::linalg;
use crate::model::{CostSpec, LfnsModel};
use crate::policy::StructuredPolicy;

const BATCH: usize = 64;
/// States beyond this norm are treated as divergent.
const DIVERGENCE_NORM: f64 = 1e100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Leader runs the recursive conditional-mean estimator.
    #[default]
    Recursive,
    /// Leader reads `x1` directly (centralized baseline).
    FullInformation,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationConfig {
    /// Number of control steps; a trace holds `steps + 1` states.
    pub steps: usize,
    pub seed: u64,
    pub estimator: EstimatorMode,
}

impl SimulationConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        SimulationConfig {
            steps,
            seed,
            estimator: EstimatorMode::Recursive,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationTrace {
    pub seed: u64,
    pub trial: u64,
    pub x0: Vec<DVector<f64>>,
    pub x1: Vec<DVector<f64>>,
    pub x1hat: Vec<DVector<f64>>,
    pub u0: Vec<DVector<f64>>,
    pub u1: Vec<DVector<f64>>,
    /// Leader-side mean of the follower control at each step.
    pub u1hat: Vec<DVector<f64>>,
    pub w0: Vec<DVector<f64>>,
    pub w1: Vec<DVector<f64>>,
    /// Undiscounted `XᵀQX + UᵀRU` per control step.
    pub stage_cost: Vec<f64>,
    /// Set when the run stopped early on a non-finite or exploding state.
    pub diverged: bool,
}

impl SimulationTrace {
    pub fn state(&self, k: usize) -> DVector<f64> {
        linalg::stack(&self.x0[k], &self.x1[k])
    }

    pub fn control(&self, k: usize) -> DVector<f64> {
        linalg::stack(&self.u0[k], &self.u1[k])
    }

    /// Pathwise cost: discounted sum of stage costs, or the undiscounted sum
    /// plus the terminal weight on the final state.
    pub fn cost(&self, cost: &CostSpec, discounted: bool) -> Result<f64> {
        if self.diverged {
            return Ok(f64::INFINITY);
        }
        if discounted {
            let gamma = cost.require_gamma()?;
            let mut weight = 1.0;
            let mut total = 0.0;
            for c in &self.stage_cost {
                total += weight * c;
                weight *= gamma;
            }
            Ok(total)
        } else {
            let mut total: f64 = self.stage_cost.iter().sum();
            if let Some(pt) = &cost.p_terminal {
                let x = self.state(self.stage_cost.len());
                total += (x.transpose() * pt * &x)[(0, 0)];
            }
            Ok(total)
        }
    }
}

/// Covariance factors computed once per model.
struct Sampler {
    w0: DMatrix<f64>,
    w1: DMatrix<f64>,
    x0: DMatrix<f64>,
    x1: DMatrix<f64>,
}

impl Sampler {
    fn new(model: &LfnsModel) -> Self {
        Sampler {
            w0: linalg::psd_factor(&model.sigma_w0),
            w1: linalg::psd_factor(&model.sigma_w1),
            x0: linalg::psd_factor(&model.sigma_x0),
            x1: linalg::psd_factor(&model.sigma_x1),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, factor: &DMatrix<f64>) -> DVector<f64> {
    let xi = DVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    factor * xi
}

/// Per-trial RNG: root seed, stream = trial index.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn check_inputs(model: &LfnsModel, cost: &CostSpec, policy: &StructuredPolicy) -> Result<()> {
    model.check_dimensions()?;
    let (n, m1, m2) = policy.dims();
    if (n, m1, m2) != (model.n, model.m1, model.m2) {
        return Err(Error::dims("policy", (m1 + m2, 2 * model.n), (model.m1 + model.m2, 2 * n)));
    }
    linalg::check_shape("q", &cost.q, 2 * n, 2 * n)?;
    linalg::check_shape("r", &cost.r, m1 + m2, m1 + m2)?;
    Ok(())
}

pub fn simulate(
    model: &LfnsModel,
    cost: &CostSpec,
    policy: &StructuredPolicy,
    config: &SimulationConfig,
    trial: u64,
) -> Result<SimulationTrace> {
    check_inputs(model, cost, policy)?;
    Ok(run_trial(model, cost, policy, config, &Sampler::new(model), trial))
}

fn run_trial(
    model: &LfnsModel,
    cost: &CostSpec,
    policy: &StructuredPolicy,
    config: &SimulationConfig,
    sampler: &Sampler,
    trial: u64,
) -> SimulationTrace {
    let steps = config.steps;
    let mut rng = trial_rng(config.seed, trial);
    let mut x0 = &model.xbar0 + gaussian(&mut rng, &sampler.x0);
    let mut x1 = &model.xbar1 + gaussian(&mut rng, &sampler.x1);
    let mut est = estimator::init(model);

    let mut t = SimulationTrace {
        seed: config.seed,
        trial,
        x0: Vec::with_capacity(steps + 1),
        x1: Vec::with_capacity(steps + 1),
        x1hat: Vec::with_capacity(steps + 1),
        u0: Vec::with_capacity(steps),
        u1: Vec::with_capacity(steps),
        u1hat: Vec::with_capacity(steps),
        w0: Vec::with_capacity(steps),
        w1: Vec::with_capacity(steps),
        stage_cost: Vec::with_capacity(steps),
        diverged: false,
    };

    for k in 0..=steps {
        if config.estimator == EstimatorMode::FullInformation {
            est.x1hat = x1.clone();
        }
        let x = linalg::stack(&x0, &x1);
        let bad = x.iter().any(|v| !v.is_finite()) || x.norm() > DIVERGENCE_NORM;
        t.x0.push(x0.clone());
        t.x1.push(x1.clone());
        t.x1hat.push(est.x1hat.clone());
        if bad {
            t.diverged = true;
            break;
        }
        if k == steps {
            break;
        }

        let gains = policy.at(k);
        let u0 = gains.leader_control(&x0, &est.x1hat);
        let u1 = gains.follower_control(&x0, &x1);
        let u1hat = gains.mean_follower_control(&x0, &est.x1hat);
        let u = linalg::stack(&u0, &u1);
        let stage = (x.transpose() * &cost.q * &x)[(0, 0)] + (u.transpose() * &cost.r * &u)[(0, 0)];

        let w0 = gaussian(&mut rng, &sampler.w0);
        let w1 = gaussian(&mut rng, &sampler.w1);
        let x0_next = &model.a00 * &x0 + &model.b00 * &u0 + &w0;
        let x1_next = &model.a11 * &x1 + &model.b11 * &u1 + &model.a10 * &x0 + &model.b10 * &u0 + &w1;
        est = estimator::advance(&est, model, &x0, &u0, gains).expect("dimensions checked on entry");

        t.u0.push(u0);
        t.u1.push(u1);
        t.u1hat.push(u1hat);
        t.w0.push(w0);
        t.w1.push(w1);
        t.stage_cost.push(stage);
        x0 = x0_next;
        x1 = x1_next;
    }
    t
}

/// Runs trials `0..trials` and folds them batch by batch. `add` sees the
/// traces of a batch in trial order; batch results are merged in order.
#[allow(clippy::too_many_arguments)]
pub fn fold_trials<A, I, F, M>(
    model: &LfnsModel,
    cost: &CostSpec,
    policy: &StructuredPolicy,
    config: &SimulationConfig,
    trials: u64,
    init: I,
    add: F,
    merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &SimulationTrace) + Sync,
    M: Fn(&mut A, A),
{
    check_inputs(model, cost, policy)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial required".into()));
    }
    let sampler = Sampler::new(model);
    let batches = trials.div_ceil(BATCH as u64);
    let parts: Vec<A> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            let end = ((b + 1) * BATCH as u64).min(trials);
            for trial in b * BATCH as u64..end {
                let trace = run_trial(model, cost, policy, config, &sampler, trial);
                add(&mut acc, &trace);
            }
            acc
        })
        .collect();
    let mut parts = parts.into_iter();
    let mut total = parts.next().expect("at least one batch");
    for p in parts {
        merge(&mut total, p);
    }
    Ok(total)
}

/// Traces for trials `first..first + count`, in trial order.
pub fn monte_carlo_traces(
    model: &LfnsModel,
    cost: &CostSpec,
    policy: &StructuredPolicy,
    config: &SimulationConfig,
    first: u64,
    count: u64,
) -> Result<Vec<SimulationTrace>> {
    check_inputs(model, cost, policy)?;
    let sampler = Sampler::new(model);
    Ok((first..first + count)
        .into_par_iter()
        .map(|trial| run_trial(model, cost, policy, config, &sampler, trial))
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloSummary {
    pub trials: u64,
    pub diverged_trials: u64,
    pub discounted: bool,
    pub mean_cost: f64,
    /// Sample standard deviation over `√trials`.
    pub standard_error: f64,
    /// `E[X(k)]` per step.
    pub mean_state: Vec<Vec<f64>>,
    /// `‖E[X(k)]‖` per step.
    pub mean_norm: Vec<f64>,
    /// `E[X(k)ᵀX(k)]` per step.
    pub second_moment: Vec<f64>,
    pub second_moment_se: Vec<f64>,
    pub mean_stage_cost: Vec<f64>,
    /// Bound on the discounted cost beyond the simulated steps, from the
    /// largest mean stage cost over the final tenth of the run.
    pub truncation_bound: Option<f64>,
}

#[derive(Clone, Debug)]
struct CostAccumulator {
    discounted: bool,
    trials: u64,
    diverged: u64,
    cost_sum: f64,
    cost_sq: f64,
    mean_sum: Vec<DVector<f64>>,
    sq_sum: Vec<f64>,
    sq_sq: Vec<f64>,
    stage_sum: Vec<f64>,
    error: Option<String>,
}

impl CostAccumulator {
    fn new(steps: usize, dim: usize, discounted: bool) -> Self {
        CostAccumulator {
            discounted,
            trials: 0,
            diverged: 0,
            cost_sum: 0.0,
            cost_sq: 0.0,
            mean_sum: vec![DVector::zeros(dim); steps + 1],
            sq_sum: vec![0.0; steps + 1],
            sq_sq: vec![0.0; steps + 1],
            stage_sum: vec![0.0; steps],
            error: None,
        }
    }

    fn add(&mut self, trace: &SimulationTrace, cost: &CostSpec) {
        self.trials += 1;
        if trace.diverged {
            self.diverged += 1;
        }
        match trace.cost(cost, self.discounted) {
            Ok(c) => {
                self.cost_sum += c;
                self.cost_sq += c * c;
            }
            Err(e) => self.error = Some(e.to_string()),
        }
        for k in 0..self.mean_sum.len() {
            if k < trace.x0.len() && !trace.diverged {
                let x = trace.state(k);
                let s = x.norm_squared();
                self.mean_sum[k] += &x;
                self.sq_sum[k] += s;
                self.sq_sq[k] += s * s;
            } else {
                self.mean_sum[k].fill(f64::NAN);
                self.sq_sum[k] = f64::INFINITY;
                self.sq_sq[k] = f64::INFINITY;
            }
        }
        for (k, c) in self.stage_sum.iter_mut().enumerate() {
            *c += trace.stage_cost.get(k).copied().unwrap_or(f64::INFINITY);
        }
    }

    fn merge(&mut self, other: Self) {
        self.trials += other.trials;
        self.diverged += other.diverged;
        self.cost_sum += other.cost_sum;
        self.cost_sq += other.cost_sq;
        for (a, b) in self.mean_sum.iter_mut().zip(other.mean_sum) {
            *a += b;
        }
        for (a, b) in self.sq_sum.iter_mut().zip(other.sq_sum) {
            *a += b;
        }
        for (a, b) in self.sq_sq.iter_mut().zip(other.sq_sq) {
            *a += b;
        }
        for (a, b) in self.stage_sum.iter_mut().zip(other.stage_sum) {
            *a += b;
        }
        self.error = self.error.take().or(other.error);
    }

    fn finish(self, gamma: Option<f64>) -> Result<MonteCarloSummary> {
        if let Some(e) = self.error {
            return Err(Error::InvalidArgument(e));
        }
        let n = self.trials as f64;
        let (mean_cost, standard_error) = mean_and_se(self.cost_sum, self.cost_sq, n);
        let mean_state: Vec<DVector<f64>> = self.mean_sum.iter().map(|s| s / n).collect();
        let mut second_moment = Vec::with_capacity(self.sq_sum.len());
        let mut second_moment_se = Vec::with_capacity(self.sq_sum.len());
        for (s, q) in self.sq_sum.iter().zip(&self.sq_sq) {
            let (m, se) = mean_and_se(*s, *q, n);
            second_moment.push(m);
            second_moment_se.push(se);
        }
        let mean_stage_cost: Vec<f64> = self.stage_sum.iter().map(|s| s / n).collect();
        let truncation_bound = match (self.discounted, gamma) {
            (true, Some(g)) if !mean_stage_cost.is_empty() => {
                let steps = mean_stage_cost.len();
                let tail = (steps / 10).max(1);
                let level = mean_stage_cost[steps - tail..].iter().copied().fold(0.0, f64::max);
                Some(g.powi(steps as i32) / (1.0 - g) * level)
            }
            _ => None,
        };
        Ok(MonteCarloSummary {
            trials: self.trials,
            diverged_trials: self.diverged,
            discounted: self.discounted,
            mean_cost,
            standard_error,
            mean_norm: mean_state.iter().map(|m| m.norm()).collect(),
            mean_state: mean_state.iter().map(|m| m.iter().copied().collect()).collect(),
            second_moment,
            second_moment_se,
            mean_stage_cost,
            truncation_bound,
        })
    }
}

fn mean_and_se(sum: f64, sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    if n < 2.0 || !mean.is_finite() {
        return (mean, if mean.is_finite() { 0.0 } else { f64::INFINITY });
    }
    let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

fn gamma_for(cost: &CostSpec, discounted: bool) -> Result<Option<f64>> {
    if discounted {
        cost.require_gamma().map(Some)
    } else {
        Ok(None)
    }
}

/// Streams `trials` closed-loop runs into a summary without keeping traces.
pub fn monte_carlo(
    model: &LfnsModel,
    cost: &CostSpec,
    policy: &StructuredPolicy,
    config: &SimulationConfig,
    trials: u64,
    discounted: bool,
) -> Result<MonteCarloSummary> {
    let gamma = gamma_for(cost, discounted)?;
    let dim = 2 * model.n;
    let acc = fold_trials(
        model,
        cost,
        policy,
        config,
        trials,
        || CostAccumulator::new(config.steps, dim, discounted),
        |acc, t| acc.add(t, cost),
        CostAccumulator::merge,
    )?;
    acc.finish(gamma)
}

/// Summary over already simulated traces, which must share a step count.
pub fn empirical_cost(traces: &[SimulationTrace], cost: &CostSpec, discounted: bool) -> Result<MonteCarloSummary> {
    let gamma = gamma_for(cost, discounted)?;
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidArgument("no traces".into()))?;
    let steps = first.u0.len().max(first.x0.len().saturating_sub(1));
    let dim = first.state(0).len();
    let mut acc = CostAccumulator::new(steps, dim, discounted);
    for t in traces {
        acc.add(t, cost);
    }
    acc.finish(gamma)
}

#[derive(Clone, Debug, Serialize)]
pub struct MssReport {
    /// `‖E[X(k)]‖` at the final step stays within 5% of its initial value,
    /// or under the sampling floor `3·√(E[XᵀX]/trials)`.
    pub mean_decays: bool,
    pub initial_mean_norm: f64,
    pub final_mean_norm: f64,
    pub decay_threshold: f64,
    /// `E[XᵀX]` averaged over the two halves of the last 20% of steps differs
    /// by less than 1% (or three standard errors).
    pub second_moment_plateaus: bool,
    pub plateau_relative_change: f64,
    pub final_second_moment: f64,
    pub spectral_radius: Option<f64>,
    pub mean_square_stable: bool,
}

pub fn mss_diagnostics(summary: &MonteCarloSummary, spectral_radius: Option<f64>) -> MssReport {
    let norms = &summary.mean_norm;
    let moments = &summary.second_moment;
    let last = norms.len().saturating_sub(1);
    let initial = norms.first().copied().unwrap_or(0.0);
    let final_norm = norms.last().copied().unwrap_or(0.0);
    let final_moment = moments.last().copied().unwrap_or(0.0);
    let floor = 3.0 * (final_moment / summary.trials as f64).sqrt();
    let threshold = (0.05 * initial).max(floor);
    let finite = norms.iter().chain(moments).all(|v| v.is_finite()) && summary.diverged_trials == 0;
    let mean_decays = finite && final_norm <= threshold;

    let window = ((norms.len() as f64 * 0.2).round() as usize).max(2).min(norms.len());
    let start = norms.len() - window;
    let half = window / 2;
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    let first = avg(&moments[start..start + half]);
    let second = avg(&moments[start + half..]);
    let se = avg(&summary.second_moment_se[start..]);
    let peak = moments.iter().copied().fold(0.0, f64::max);
    let change = (second - first).abs();
    let rel = if first > 0.0 { change / first } else { change };
    let tol = (0.01 * first.abs()).max(3.0 * se).max(1e-9 * peak.max(1.0));
    let second_moment_plateaus = finite && last > 0 && change <= tol;

    MssReport {
        mean_decays,
        initial_mean_norm: initial,
        final_mean_norm: final_norm,
        decay_threshold: threshold,
        second_moment_plateaus,
        plateau_relative_change: rel,
        final_second_moment: final_moment,
        spectral_radius,
        mean_square_stable: mean_decays && second_moment_plateaus,
    }
}

/// Sample mean and standard error of one matrix entry.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub standard_error: f64,
}

impl MomentEstimate {
    /// `|mean| / SE`, zero when both vanish.
    pub fn z_score(&self) -> f64 {
        if self.standard_error > 0.0 {
            self.mean.abs() / self.standard_error
        } else if self.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Cross-moments of the follower estimation error, per step, entries of each
/// `n×n` matrix listed row-major.
#[derive(Clone, Debug, Serialize)]
pub struct EstimationStatistics {
    pub trials: u64,
    /// `E[w0(k−1)·x̃1(k)ᵀ]` for `k ≥ 1` (the leader's one-step prediction
    /// error against the follower's).
    pub prediction_cross: Vec<Vec<MomentEstimate>>,
    /// `E[x̃1(k)·x0(k)ᵀ]`.
    pub orthogonality_current: Vec<Vec<MomentEstimate>>,
    /// `E[x̃1(k)·x0(k−1)ᵀ]` for `k ≥ 1`.
    pub orthogonality_lagged: Vec<Vec<MomentEstimate>>,
}

impl EstimationStatistics {
    pub fn max_z(field: &[Vec<MomentEstimate>]) -> f64 {
        field.iter().flatten().map(MomentEstimate::z_score).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
struct ProductSums {
    sum: Vec<DMatrix<f64>>,
    sq: Vec<DMatrix<f64>>,
}

impl ProductSums {
    fn new(len: usize, n: usize) -> Self {
        ProductSums {
            sum: vec![DMatrix::zeros(n, n); len],
            sq: vec![DMatrix::zeros(n, n); len],
        }
    }

    fn add(&mut self, k: usize, a: &DVector<f64>, b: &DVector<f64>) {
        let p = a * b.transpose();
        self.sq[k] += p.component_mul(&p);
        self.sum[k] += p;
    }

    fn merge(&mut self, other: Self) {
        for (a, b) in self.sum.iter_mut().zip(other.sum) {
            *a += b;
        }
        for (a, b) in self.sq.iter_mut().zip(other.sq) {
            *a += b;
        }
    }

    fn finish(&self, n: f64) -> Vec<Vec<MomentEstimate>> {
        self.sum
            .iter()
            .zip(&self.sq)
            .map(|(s, q)| {
                let rows = s.nrows();
                let cols = s.ncols();
                (0..rows * cols)
                    .map(|i| {
                        let (r, c) = (i / cols, i % cols);
                        let (mean, standard_error) = mean_and_se(s[(r, c)], q[(r, c)], n);
                        MomentEstimate { mean, standard_error }
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn estimation_statistics(
    model: &LfnsModel,
    cost: &CostSpec,
    policy: &StructuredPolicy,
    config: &SimulationConfig,
    trials: u64,
) -> Result<EstimationStatistics> {
    let (steps, n) = (config.steps, model.n);
    let init = || {
        (
            ProductSums::new(steps, n),
            ProductSums::new(steps + 1, n),
            ProductSums::new(steps, n),
        )
    };
    let (pred, cur, lag) = fold_trials(
        model,
        cost,
        policy,
        config,
        trials,
        init,
        |(pred, cur, lag), t| {
            for k in 0..t.x0.len() {
                let err = &t.x1[k] - &t.x1hat[k];
                cur.add(k, &err, &t.x0[k]);
                if k >= 1 {
                    pred.add(k - 1, &t.w0[k - 1], &err);
                    lag.add(k - 1, &err, &t.x0[k - 1]);
                }
            }
        },
        |a, b| {
            a.0.merge(b.0);
            a.1.merge(b.1);
            a.2.merge(b.2);
        },
    )?;
    let nt = trials as f64;
    Ok(EstimationStatistics {
        trials,
        prediction_cross: pred.finish(nt),
        orthogonality_current: cur.finish(nt),
        orthogonality_lagged: lag.finish(nt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cost() -> CostSpec {
        CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).with_gamma(0.9)
    }

    fn noisy_scalar() -> LfnsModel {
        LfnsModel::scalar(1.0, 0.5, 1.0, 1.0, 0.2, 1.0)
            .with_noise(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .with_initial(
                DVector::from_element(1, 1.0),
                DMatrix::identity(1, 1) * 0.5,
                DVector::from_element(1, -1.0),
                DMatrix::identity(1, 1) * 0.5,
            )
    }

    #[test]
    fn zero_noise_zero_start_is_zero() {
        let model = LfnsModel::scalar(1.3, 0.4, 0.7, 1.0, 0.2, 1.0);
        let policy = StructuredPolicy::constant(&DMatrix::from_element(2, 2, 0.3), 1, 1, 1).unwrap();
        let t = simulate(&model, &unit_cost(), &policy, &SimulationConfig::new(20, 9), 0).unwrap();
        assert!(t.x0.iter().chain(&t.x1).all(|v| v.norm() == 0.0));
        assert_eq!(t.cost(&unit_cost(), true).unwrap(), 0.0);
        let s = empirical_cost(&[t], &unit_cost(), false).unwrap();
        assert_eq!((s.mean_cost, s.standard_error), (0.0, 0.0));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let policy = StructuredPolicy::constant(&DMatrix::from_element(2, 2, 0.3), 1, 1, 1).unwrap();
        let cfg = SimulationConfig::new(30, 42);
        let a = simulate(&noisy_scalar(), &unit_cost(), &policy, &cfg, 3).unwrap();
        let b = simulate(&noisy_scalar(), &unit_cost(), &policy, &cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = simulate(&noisy_scalar(), &unit_cost(), &policy, &cfg, 4).unwrap();
        assert_ne!(a.x0, c.x0);
    }

    #[test]
    fn summary_independent_of_thread_count() {
        let policy = StructuredPolicy::constant(&DMatrix::from_element(2, 2, 0.3), 1, 1, 1).unwrap();
        let cfg = SimulationConfig::new(15, 7);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo(&noisy_scalar(), &unit_cost(), &policy, &cfg, 300, true).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.mean_cost.to_bits(), b.mean_cost.to_bits());
        assert_eq!(a.second_moment, b.second_moment);
    }

    #[test]
    fn explosive_run_is_flagged() {
        let model = LfnsModel::scalar(1e30, 0.0, 1.0, 0.0, 0.0, 0.0).with_initial(
            DVector::from_element(1, 1.0),
            DMatrix::zeros(1, 1),
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
        );
        let t = simulate(&model, &unit_cost(), &StructuredPolicy::zeros(1, 1, 1), &SimulationConfig::new(10, 0), 0)
            .unwrap();
        assert!(t.diverged);
        assert!(t.x0.len() < 11);
        assert_eq!(t.cost(&unit_cost(), false).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mss_flags_for_stable_and_explosive_loops() {
        // A − BH ≈ 0.41, steady second moment Σw/(1 − 0.41²) per agent
        let model = LfnsModel::scalar(1.0, 0.0, 1.0, 1.0, 0.0, 1.0)
            .with_noise(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .with_initial(
                DVector::from_element(1, 5.0),
                DMatrix::zeros(1, 1),
                DVector::from_element(1, 5.0),
                DMatrix::zeros(1, 1),
            );
        let h = DMatrix::identity(2, 2) * 0.5884;
        let policy = StructuredPolicy::constant(&h, 1, 1, 1).unwrap();
        let s = monte_carlo(&model, &unit_cost(), &policy, &SimulationConfig::new(100, 1), 2000, true).unwrap();
        let r = mss_diagnostics(&s, Some(0.4116));
        assert!(r.mean_decays && r.second_moment_plateaus, "{r:?}");
        let steady = 2.0 / (1.0 - 0.4116f64.powi(2));
        assert!((r.final_second_moment - steady).abs() < 5.0 * s.second_moment_se[100]);

        let model = LfnsModel::scalar(2.0, 0.0, 2.0, 0.0, 0.0, 0.0)
            .with_noise(DMatrix::identity(1, 1), DMatrix::identity(1, 1))
            .with_initial(
                DVector::from_element(1, 1.0),
                DMatrix::zeros(1, 1),
                DVector::from_element(1, 1.0),
                DMatrix::zeros(1, 1),
            );
        let s = monte_carlo(
            &model,
            &unit_cost(),
            &StructuredPolicy::zeros(1, 1, 1),
            &SimulationConfig::new(40, 1),
            1000,
            false,
        )
        .unwrap();
        let r = mss_diagnostics(&s, None);
        assert!(!r.mean_decays && !r.second_moment_plateaus);
    }

    #[test]
    fn noiseless_stable_loop_decays_to_zero() {
        let model = LfnsModel::scalar(1.0, 0.0, 1.0, 1.0, 0.0, 1.0).with_initial(
            DVector::from_element(1, 3.0),
            DMatrix::zeros(1, 1),
            DVector::from_element(1, -2.0),
            DMatrix::zeros(1, 1),
        );
        let policy = StructuredPolicy::constant(&(DMatrix::identity(2, 2) * 0.5884), 1, 1, 1).unwrap();
        let s = monte_carlo(&model, &unit_cost(), &policy, &SimulationConfig::new(80, 1), 1000, false).unwrap();
        let r = mss_diagnostics(&s, None);
        assert!(r.mean_decays && r.second_moment_plateaus);
        assert!(r.final_second_moment < 1e-50);
    }
}
