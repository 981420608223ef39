//! Leader-side conditional-mean estimate of the follower state.
//!
//! The leader observes its own state exactly. Since its dynamics do not read
//! `x1`, observing `x0(k)` brings no new information on `x1(k)` and the
//! estimate is just the one-step prediction.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::finite_horizon::DecentralizedGains;
use crate::linalg;
use crate::model::LfnsModel;
use crate::policy::StructuredPolicy;

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorState {
    pub x1hat: DVector<f64>,
    pub k: usize,
}

/// Conditional mean of the follower control given the leader's information,
/// as a function of `(x0, x̂1)`.
pub trait MeanControlMap {
    fn mean_u1(&self, x0: &DVector<f64>, x1hat: &DVector<f64>) -> DVector<f64>;
}

impl<F> MeanControlMap for F
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    fn mean_u1(&self, x0: &DVector<f64>, x1hat: &DVector<f64>) -> DVector<f64> {
        self(x0, x1hat)
    }
}

impl MeanControlMap for DecentralizedGains {
    fn mean_u1(&self, x0: &DVector<f64>, x1hat: &DVector<f64>) -> DVector<f64> {
        self.mean_follower_control(x0, x1hat)
    }
}

/// Follower applies no control.
#[derive(Clone, Copy, Debug)]
pub struct ZeroControl(pub usize);

impl MeanControlMap for ZeroControl {
    fn mean_u1(&self, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.0)
    }
}

pub fn init(model: &LfnsModel) -> EstimatorState {
    EstimatorState {
        x1hat: model.xbar1.clone(),
        k: 0,
    }
}

/// `x̂1 ← a11·x̂1 + b11·û1 + a10·x0_prev + b10·u0_prev`.
pub fn advance(
    state: &EstimatorState,
    model: &LfnsModel,
    x0_prev: &DVector<f64>,
    u0_prev: &DVector<f64>,
    mean_u1: &impl MeanControlMap,
) -> Result<EstimatorState> {
    linalg::check_len("x1hat", &state.x1hat, model.n)?;
    linalg::check_len("x0", x0_prev, model.n)?;
    linalg::check_len("u0", u0_prev, model.m1)?;
    let u1hat = mean_u1.mean_u1(x0_prev, &state.x1hat);
    linalg::check_len("u1hat", &u1hat, model.m2)?;
    let x1hat = &model.a11 * &state.x1hat + &model.b11 * u1hat + &model.a10 * x0_prev + &model.b10 * u0_prev;
    Ok(EstimatorState { x1hat, k: state.k + 1 })
}

/// Runs the filter over a recorded leader trajectory. `x0_seq` has one more
/// entry than `u0_seq`; the result is aligned with `x0_seq`.
pub fn run(
    model: &LfnsModel,
    policy: &StructuredPolicy,
    x0_seq: &[DVector<f64>],
    u0_seq: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let mut state = init(model);
    let mut out = vec![state.x1hat.clone()];
    for (k, (x0, u0)) in x0_seq.iter().zip(u0_seq).enumerate().take(x0_seq.len().saturating_sub(1)) {
        state = advance(&state, model, x0, u0, policy.at(k))?;
        out.push(state.x1hat.clone());
    }
    Ok(out)
}

/// `Cov(X̃(k|k))` for `k = 0..=horizon` with `X̃ = (0, x1 − x̂1)`.
///
/// Under the structured policy `x̃1(k+1) = (a11 − b11·k11(k))·x̃1(k) + w1(k)`;
/// the leader block is identically zero.
pub fn error_moments(model: &LfnsModel, policy: &StructuredPolicy, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
    model.check_dimensions()?;
    let n = model.n;
    let mut cov = model.sigma_x1.clone();
    let mut out = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        out.push(linalg::block_diag(&DMatrix::zeros(n, n), &cov));
        let f = &model.a11 - &model.b11 * &policy.at(k).k11;
        cov = linalg::symmetrize(&(&f * &cov * f.transpose() + &model.sigma_w1));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_uses_follower_mean() {
        let model = LfnsModel::from_dynamics(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
        );
        assert_eq!(init(&model).x1hat, DVector::zeros(2));
        let model = model.with_initial(
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::zeros(2, 2),
        );
        let s = init(&model);
        assert_eq!((s.x1hat.as_slice(), s.k), (&[1.0, 2.0][..], 0));
    }

    #[test]
    fn identity_dynamics_hold_the_estimate() {
        let model = LfnsModel::scalar(1.0, 0.0, 1.0, 1.0, 0.0, 1.0);
        let mut s = EstimatorState {
            x1hat: DVector::from_element(1, 3.0),
            k: 0,
        };
        for _ in 0..5 {
            s = advance(&s, &model, &DVector::from_element(1, 7.0), &DVector::zeros(1), &ZeroControl(1)).unwrap();
        }
        assert_eq!((s.x1hat[0], s.k), (3.0, 5));
    }

    #[test]
    fn direct_substitution() {
        let model = LfnsModel::scalar(1.0, 1.0, 0.5, 1.0, 0.0, 1.0);
        let s = EstimatorState {
            x1hat: DVector::from_element(1, 2.0),
            k: 0,
        };
        let s = advance(&s, &model, &DVector::from_element(1, 3.0), &DVector::zeros(1), &ZeroControl(1)).unwrap();
        assert_eq!(s.x1hat[0], 4.0);
    }

    #[test]
    fn noiseless_error_moments_vanish() {
        let model = LfnsModel::scalar(1.2, 0.3, 0.9, 1.0, 0.2, 1.0)
            .with_noise(DMatrix::identity(1, 1), DMatrix::zeros(1, 1));
        let policy = StructuredPolicy::constant(&DMatrix::from_element(2, 2, 0.3), 1, 1, 1).unwrap();
        for c in error_moments(&model, &policy, 10).unwrap() {
            assert_eq!(c.norm(), 0.0);
        }
    }

    #[test]
    fn leader_error_block_is_zero() {
        let model = LfnsModel::scalar(1.2, 0.3, 0.9, 1.0, 0.2, 1.0)
            .with_noise(DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 2.0);
        let policy = StructuredPolicy::zeros(1, 1, 1);
        let moms = error_moments(&model, &policy, 3).unwrap();
        for c in &moms {
            assert_eq!((c[(0, 0)], c[(0, 1)], c[(1, 0)]), (0.0, 0.0, 0.0));
        }
        // 0 → 2 → 0.81·2 + 2
        assert!((moms[2][(1, 1)] - 3.62).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn advance_is_affine(
            a in proptest::collection::vec(-1.0..1.0f64, 6),
            h0 in -3.0..3.0f64, h1 in -3.0..3.0f64, x in -3.0..3.0f64, u in -3.0..3.0f64, t in -2.0..2.0f64,
        ) {
            let model = LfnsModel::scalar(a[0], a[1], a[2], a[3], a[4], a[5]);
            let gains = DecentralizedGains::from_full(&DMatrix::from_element(2, 2, 0.4), 1, 1, 1).unwrap();
            let step = |h: f64, x: f64, u: f64| {
                let s = EstimatorState { x1hat: DVector::from_element(1, h), k: 0 };
                advance(&s, &model, &DVector::from_element(1, x), &DVector::from_element(1, u), &gains).unwrap().x1hat[0]
            };
            let mixed = step(t * h0 + (1.0 - t) * h1, t * x + (1.0 - t) * 0.5, t * u - (1.0 - t));
            let blend = t * step(h0, x, u) + (1.0 - t) * step(h1, 0.5, -1.0);
            prop_assert!((mixed - blend).abs() < 1e-9);
        }
    }
}
