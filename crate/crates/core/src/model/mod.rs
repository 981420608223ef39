//! Leader-follower system definition, admissibility checks and dynamics.
//!
//! The leader state `x0` evolves on its own; the follower state `x1` is driven
//! by the leader through `a10`/`b10`:
//!
//! ```text
//! x0(k+1) = a00·x0 + b00·u0 + w0
//! x1(k+1) = a11·x1 + b11·u1 + a10·x0 + b10·u0 + w1
//! ```

mod file;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, PD_TOL, PSD_TOL};

pub use file::{load_validated, ModelSpec, BUILTIN_MODELS};

/// Two-agent leader-follower networked system with Gaussian noise and
/// Gaussian initial states. Both agents share the state dimension `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LfnsModel {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub a00: DMatrix<f64>,
    pub a10: DMatrix<f64>,
    pub a11: DMatrix<f64>,
    pub b00: DMatrix<f64>,
    pub b10: DMatrix<f64>,
    pub b11: DMatrix<f64>,
    pub sigma_w0: DMatrix<f64>,
    pub sigma_w1: DMatrix<f64>,
    pub xbar0: DVector<f64>,
    pub xbar1: DVector<f64>,
    pub sigma_x0: DMatrix<f64>,
    pub sigma_x1: DMatrix<f64>,
}

impl LfnsModel {
    /// Noise-free model with deterministic zero initial state. Dimensions are
    /// read off `a00`, `b00` and `b11`.
    pub fn from_dynamics(
        a00: DMatrix<f64>,
        a10: DMatrix<f64>,
        a11: DMatrix<f64>,
        b00: DMatrix<f64>,
        b10: DMatrix<f64>,
        b11: DMatrix<f64>,
    ) -> Self {
        let n = a00.nrows();
        let (m1, m2) = (b00.ncols(), b11.ncols());
        LfnsModel {
            n,
            m1,
            m2,
            a00,
            a10,
            a11,
            b00,
            b10,
            b11,
            sigma_w0: DMatrix::zeros(n, n),
            sigma_w1: DMatrix::zeros(n, n),
            xbar0: DVector::zeros(n),
            xbar1: DVector::zeros(n),
            sigma_x0: DMatrix::zeros(n, n),
            sigma_x1: DMatrix::zeros(n, n),
        }
    }

    /// Scalar agents (`n = m1 = m2 = 1`).
    pub fn scalar(a00: f64, a10: f64, a11: f64, b00: f64, b10: f64, b11: f64) -> Self {
        let s = |v| DMatrix::from_element(1, 1, v);
        Self::from_dynamics(s(a00), s(a10), s(a11), s(b00), s(b10), s(b11))
    }

    pub fn with_noise(mut self, sigma_w0: DMatrix<f64>, sigma_w1: DMatrix<f64>) -> Self {
        self.sigma_w0 = linalg::symmetrize(&sigma_w0);
        self.sigma_w1 = linalg::symmetrize(&sigma_w1);
        self
    }

    pub fn with_initial(
        mut self,
        xbar0: DVector<f64>,
        sigma_x0: DMatrix<f64>,
        xbar1: DVector<f64>,
        sigma_x1: DMatrix<f64>,
    ) -> Self {
        self.xbar0 = xbar0;
        self.xbar1 = xbar1;
        self.sigma_x0 = linalg::symmetrize(&sigma_x0);
        self.sigma_x1 = linalg::symmetrize(&sigma_x1);
        self
    }

    /// Re-symmetrizes every covariance matrix.
    pub fn symmetrized(mut self) -> Self {
        for m in [
            &mut self.sigma_w0,
            &mut self.sigma_w1,
            &mut self.sigma_x0,
            &mut self.sigma_x1,
        ] {
            *m = linalg::symmetrize(m);
        }
        self
    }

    /// `E[X(0)]` for the stacked state.
    pub fn initial_mean(&self) -> DVector<f64> {
        linalg::stack(&self.xbar0, &self.xbar1)
    }

    /// `Cov(X(0)) = blockdiag(Σx0, Σx1)`.
    pub fn initial_covariance(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.sigma_x0, &self.sigma_x1)
    }

    /// `E[X(0)·X(0)ᵀ] = x̄x̄ᵀ + blockdiag(Σx0, Σx1)`.
    pub fn initial_second_moment(&self) -> DMatrix<f64> {
        let mean = self.initial_mean();
        &mean * mean.transpose() + self.initial_covariance()
    }

    /// `Σ_W = blockdiag(Σw0, Σw1)`.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.sigma_w0, &self.sigma_w1)
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let (n, m1, m2) = (self.n, self.m1, self.m2);
        let shapes: [(&str, &DMatrix<f64>, usize, usize); 10] = [
            ("a00", &self.a00, n, n),
            ("a10", &self.a10, n, n),
            ("a11", &self.a11, n, n),
            ("b00", &self.b00, n, m1),
            ("b10", &self.b10, n, m1),
            ("b11", &self.b11, n, m2),
            ("sigma_w0", &self.sigma_w0, n, n),
            ("sigma_w1", &self.sigma_w1, n, n),
            ("sigma_x0", &self.sigma_x0, n, n),
            ("sigma_x1", &self.sigma_x1, n, n),
        ];
        for (what, m, r, c) in shapes {
            linalg::check_shape(what, m, r, c)?;
        }
        linalg::check_len("xbar0", &self.xbar0, n)?;
        linalg::check_len("xbar1", &self.xbar1, n)?;
        Ok(())
    }
}

/// Aggregated form `X(k+1) = A·X(k) + B·U(k) + W(k)` with lower
/// block-triangular `A` and `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactModel {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
}

impl CompactModel {
    pub fn state_dim(&self) -> usize {
        2 * self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m1 + self.m2
    }

    pub fn a00(&self) -> DMatrix<f64> {
        self.a.view((0, 0), (self.n, self.n)).into_owned()
    }

    pub fn a10(&self) -> DMatrix<f64> {
        self.a.view((self.n, 0), (self.n, self.n)).into_owned()
    }

    pub fn a11(&self) -> DMatrix<f64> {
        self.a.view((self.n, self.n), (self.n, self.n)).into_owned()
    }

    pub fn b00(&self) -> DMatrix<f64> {
        self.b.view((0, 0), (self.n, self.m1)).into_owned()
    }

    pub fn b10(&self) -> DMatrix<f64> {
        self.b.view((self.n, 0), (self.n, self.m1)).into_owned()
    }

    pub fn b11(&self) -> DMatrix<f64> {
        self.b.view((self.n, self.m1), (self.n, self.m2)).into_owned()
    }

    /// `A·X + B·U + W`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::check_len("X", x, self.state_dim())?;
        linalg::check_len("U", u, self.input_dim())?;
        linalg::check_len("W", w, self.state_dim())?;
        Ok(&self.a * x + &self.b * u + w)
    }
}

/// Stacks the agent blocks into the compact lower block-triangular form.
/// Off-diagonal blocks above the diagonal are exact zeros.
pub fn assemble_compact(model: &LfnsModel) -> Result<CompactModel> {
    model.check_dimensions()?;
    let (n, m1, m2) = (model.n, model.m1, model.m2);

    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&model.a00);
    a.view_mut((n, 0), (n, n)).copy_from(&model.a10);
    a.view_mut((n, n), (n, n)).copy_from(&model.a11);

    let mut b = DMatrix::zeros(2 * n, m1 + m2);
    b.view_mut((0, 0), (n, m1)).copy_from(&model.b00);
    b.view_mut((n, 0), (n, m1)).copy_from(&model.b10);
    b.view_mut((n, m1), (n, m2)).copy_from(&model.b11);

    Ok(CompactModel {
        n,
        m1,
        m2,
        a,
        b,
        sigma_w: model.noise_covariance(),
    })
}

/// One step of the agent-level dynamics. The leader update reads neither
/// `x1` nor `u1`.
pub fn step(
    model: &LfnsModel,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    u0: &DVector<f64>,
    u1: &DVector<f64>,
    w0: &DVector<f64>,
    w1: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n, m1, m2) = (model.n, model.m1, model.m2);
    linalg::check_len("x0", x0, n)?;
    linalg::check_len("x1", x1, n)?;
    linalg::check_len("u0", u0, m1)?;
    linalg::check_len("u1", u1, m2)?;
    linalg::check_len("w0", w0, n)?;
    linalg::check_len("w1", w1, n)?;
    let x0_next = &model.a00 * x0 + &model.b00 * u0 + w0;
    let x1_next = &model.a11 * x1 + &model.b11 * u1 + &model.a10 * x0 + &model.b10 * u0 + w1;
    Ok((x0_next, x1_next))
}

/// Quadratic weights. `p_terminal` is used by the finite-horizon problem and
/// `gamma` by the discounted problems.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p_terminal: Option<DMatrix<f64>>,
    pub gamma: Option<f64>,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        CostSpec {
            q: linalg::symmetrize(&q),
            r: linalg::symmetrize(&r),
            p_terminal: None,
            gamma: None,
        }
    }

    pub fn with_terminal(mut self, p: DMatrix<f64>) -> Self {
        self.p_terminal = Some(linalg::symmetrize(&p));
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    /// Terminal weight, zero when unset.
    pub fn terminal_or_zero(&self) -> DMatrix<f64> {
        self.p_terminal
            .clone()
            .unwrap_or_else(|| DMatrix::zeros(self.q.nrows(), self.q.ncols()))
    }

    pub fn require_gamma(&self) -> Result<f64> {
        match self.gamma {
            Some(g) if g > 0.0 && g < 1.0 => Ok(g),
            Some(g) => Err(Error::InvalidArgument(format!("discount factor {g} outside (0, 1)"))),
            None => Err(Error::InvalidArgument("discount factor required".into())),
        }
    }
}

/// A single admissibility failure.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DimensionMismatch {
        field: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite {
        field: String,
    },
    NoiseCovarianceNotPsd {
        field: String,
        min_eigenvalue: f64,
    },
    InitialCovarianceNotPsd {
        field: String,
        min_eigenvalue: f64,
    },
    StateWeightNotPsd {
        min_eigenvalue: f64,
    },
    InputWeightNotPd {
        min_eigenvalue: f64,
    },
    TerminalWeightNotPsd {
        min_eigenvalue: f64,
    },
    GammaOutOfRange {
        gamma: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { field, expected, found } => {
                write!(f, "dimension mismatch in {field}: expected {expected:?}, found {found:?}")
            }
            Violation::NonFinite { field } => write!(f, "non-finite entries in {field}"),
            Violation::NoiseCovarianceNotPsd { field, min_eigenvalue } => {
                write!(f, "noise covariance not PSD ({field}, min eigenvalue {min_eigenvalue:.3e})")
            }
            Violation::InitialCovarianceNotPsd { field, min_eigenvalue } => {
                write!(f, "initial covariance not PSD ({field}, min eigenvalue {min_eigenvalue:.3e})")
            }
            Violation::StateWeightNotPsd { min_eigenvalue } => {
                write!(f, "Q not PSD (min eigenvalue {min_eigenvalue:.3e})")
            }
            Violation::InputWeightNotPd { min_eigenvalue } => {
                write!(f, "R not positive definite (min eigenvalue {min_eigenvalue:.3e})")
            }
            Violation::TerminalWeightNotPsd { min_eigenvalue } => {
                write!(f, "terminal weight not PSD (min eigenvalue {min_eigenvalue:.3e})")
            }
            Violation::GammaOutOfRange { gamma } => write!(f, "discount factor {gamma} outside (0, 1)"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub violations: Vec<Violation>,
}

impl Diagnostics {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self))
        }
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        f.write_str(&msgs.join("; "))
    }
}

/// Collects every admissibility violation of a model/cost pair. The follower
/// state dimension must equal the leader's `n`.
pub fn validate(model: &LfnsModel, cost: &CostSpec) -> Diagnostics {
    let mut out = Vec::new();
    let (n, m1, m2) = (model.n, model.m1, model.m2);
    let mut shape = |field: &str, m: &DMatrix<f64>, r: usize, c: usize| -> bool {
        if m.shape() != (r, c) {
            out.push(Violation::DimensionMismatch {
                field: field.into(),
                expected: (r, c),
                found: m.shape(),
            });
            return false;
        }
        true
    };

    let dims_ok = [
        shape("a00", &model.a00, n, n),
        shape("a10", &model.a10, n, n),
        shape("a11", &model.a11, n, n),
        shape("b00", &model.b00, n, m1),
        shape("b10", &model.b10, n, m1),
        shape("b11", &model.b11, n, m2),
        shape("q", &cost.q, 2 * n, 2 * n),
        shape("r", &cost.r, m1 + m2, m1 + m2),
    ];
    let w0_ok = shape("sigma_w0", &model.sigma_w0, n, n);
    let w1_ok = shape("sigma_w1", &model.sigma_w1, n, n);
    let x0_ok = shape("sigma_x0", &model.sigma_x0, n, n);
    let x1_ok = shape("sigma_x1", &model.sigma_x1, n, n);
    let pt_ok = cost
        .p_terminal
        .as_ref()
        .is_none_or(|p| shape("p_terminal", p, 2 * n, 2 * n));
    for (field, v) in [("xbar0", &model.xbar0), ("xbar1", &model.xbar1)] {
        if v.len() != n {
            out.push(Violation::DimensionMismatch {
                field: field.into(),
                expected: (n, 1),
                found: (v.len(), 1),
            });
        }
    }

    let mut finite = |field: &str, m: &DMatrix<f64>| -> bool {
        if !linalg::all_finite(m) {
            out.push(Violation::NonFinite { field: field.into() });
            return false;
        }
        true
    };
    let fin = [
        finite("a00", &model.a00),
        finite("a10", &model.a10),
        finite("a11", &model.a11),
        finite("b00", &model.b00),
        finite("b10", &model.b10),
        finite("b11", &model.b11),
        finite("sigma_w0", &model.sigma_w0),
        finite("sigma_w1", &model.sigma_w1),
        finite("sigma_x0", &model.sigma_x0),
        finite("sigma_x1", &model.sigma_x1),
        finite("q", &cost.q),
        finite("r", &cost.r),
    ];
    for (field, v) in [("xbar0", &model.xbar0), ("xbar1", &model.xbar1)] {
        if v.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFinite { field: field.into() });
        }
    }
    let fin_ok = fin.iter().all(|&b| b);

    if fin_ok {
        for (field, m, ok) in [("sigma_w0", &model.sigma_w0, w0_ok), ("sigma_w1", &model.sigma_w1, w1_ok)] {
            let min = linalg::min_eigenvalue(m);
            if ok && min < PSD_TOL {
                out.push(Violation::NoiseCovarianceNotPsd {
                    field: field.into(),
                    min_eigenvalue: min,
                });
            }
        }
        for (field, m, ok) in [("sigma_x0", &model.sigma_x0, x0_ok), ("sigma_x1", &model.sigma_x1, x1_ok)] {
            let min = linalg::min_eigenvalue(m);
            if ok && min < PSD_TOL {
                out.push(Violation::InitialCovarianceNotPsd {
                    field: field.into(),
                    min_eigenvalue: min,
                });
            }
        }
        if dims_ok[6] {
            let min = linalg::min_eigenvalue(&cost.q);
            if min < PSD_TOL {
                out.push(Violation::StateWeightNotPsd { min_eigenvalue: min });
            }
        }
        if dims_ok[7] {
            let min = linalg::min_eigenvalue(&cost.r);
            if min < PD_TOL {
                out.push(Violation::InputWeightNotPd { min_eigenvalue: min });
            }
        }
    }
    if let Some(p) = &cost.p_terminal {
        if !linalg::all_finite(p) {
            out.push(Violation::NonFinite { field: "p_terminal".into() });
        } else if pt_ok {
            let min = linalg::min_eigenvalue(p);
            if min < PSD_TOL {
                out.push(Violation::TerminalWeightNotPsd { min_eigenvalue: min });
            }
        }
    }
    if let Some(gamma) = cost.gamma {
        if !(gamma > 0.0 && gamma < 1.0) {
            out.push(Violation::GammaOutOfRange { gamma });
        }
    }

    Diagnostics { violations: out }
}
