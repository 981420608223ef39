//! Structured linear policies: per-step or constant gain blocks respecting the
//! leader/follower information pattern.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::finite_horizon::{DecentralizedGains, FiniteHorizonSolution};
use crate::infinite_horizon::StationarySolution;

/// `u0 = −k00·x0 − k01·x̂1`, `u1 = −k10·x0 − k11·x1`.
///
/// A constant policy holds a single gain; a time-varying one holds one gain
/// per control step and reuses its last gain past the end.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredPolicy {
    n: usize,
    m1: usize,
    m2: usize,
    steps: Vec<DecentralizedGains>,
    constant: bool,
}

impl StructuredPolicy {
    pub fn constant(gain: &DMatrix<f64>, n: usize, m1: usize, m2: usize) -> Result<Self> {
        Ok(StructuredPolicy {
            n,
            m1,
            m2,
            steps: vec![DecentralizedGains::from_full(gain, n, m1, m2)?],
            constant: true,
        })
    }

    pub fn time_varying(gains: &[DMatrix<f64>], n: usize, m1: usize, m2: usize) -> Result<Self> {
        if gains.is_empty() {
            return Err(Error::InvalidArgument("time-varying policy needs at least one gain".into()));
        }
        let steps = gains
            .iter()
            .map(|k| DecentralizedGains::from_full(k, n, m1, m2))
            .collect::<Result<_>>()?;
        Ok(StructuredPolicy {
            n,
            m1,
            m2,
            steps,
            constant: false,
        })
    }

    pub fn zeros(n: usize, m1: usize, m2: usize) -> Self {
        StructuredPolicy {
            n,
            m1,
            m2,
            steps: vec![DecentralizedGains::zeros(n, m1, m2)],
            constant: true,
        }
    }

    pub fn from_finite(solution: &FiniteHorizonSolution) -> Self {
        Self::time_varying(&solution.k_seq, solution.n, solution.m1, solution.m2)
            .expect("solver gains have consistent shape")
    }

    pub fn from_stationary(solution: &StationarySolution) -> Self {
        Self::constant(&solution.h, solution.n, solution.m1, solution.m2).expect("solver gain has consistent shape")
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m1, self.m2)
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// Number of stored gains (1 for a constant policy).
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn at(&self, k: usize) -> &DecentralizedGains {
        &self.steps[k.min(self.steps.len() - 1)]
    }

    pub fn full_gains(&self) -> Vec<DMatrix<f64>> {
        self.steps.iter().map(DecentralizedGains::to_full).collect()
    }

    /// Applies `f` to every stored full gain matrix.
    pub fn map_gains(&self, mut f: impl FnMut(usize, &DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let steps = self
            .steps
            .iter()
            .enumerate()
            .map(|(k, g)| {
                DecentralizedGains::from_full(&f(k, &g.to_full()), self.n, self.m1, self.m2)
                    .expect("mapped gain keeps its shape")
            })
            .collect();
        StructuredPolicy {
            steps,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_policy_repeats_its_gain() {
        let k = DMatrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64);
        let p = StructuredPolicy::constant(&k, 1, 1, 1).unwrap();
        assert_eq!(p.at(0), p.at(50));
        assert_eq!(p.at(7).to_full(), k);
        assert!(StructuredPolicy::constant(&DMatrix::zeros(3, 2), 1, 1, 1).is_err());
    }

    #[test]
    fn time_varying_policy_clamps_past_the_end() {
        let gains = vec![DMatrix::zeros(2, 2), DMatrix::identity(2, 2)];
        let p = StructuredPolicy::time_varying(&gains, 1, 1, 1).unwrap();
        assert_eq!(p.at(1).to_full(), DMatrix::identity(2, 2));
        assert_eq!(p.at(9).to_full(), DMatrix::identity(2, 2));
        let doubled = p.map_gains(|_, g| g * 2.0);
        assert_eq!(doubled.at(1).k11[(0, 0)], 2.0);
    }
}
