//! Leader-follower AUV instantiation: 3-DOF vessel model, tracking-error
//! dynamics, reference trajectories and the force map that turns an
//! error-space control into thrusts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::infinite_horizon::solve_stationary_riccati;
use crate::linalg;
use crate::model::{assemble_compact, CostSpec, LfnsModel};

/// `constant + u·u + v·v + r·r + abs_u·|u| + abs_v·|v| + abs_r·|r|`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VelocityPoly {
    pub constant: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    pub abs_u: f64,
    pub abs_v: f64,
    pub abs_r: f64,
}

impl VelocityPoly {
    pub const ZERO: VelocityPoly = poly(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);

    pub fn eval(&self, nu: &DVector<f64>) -> f64 {
        let (u, v, r) = (nu[0], nu[1], nu[2]);
        self.constant + self.u * u + self.v * v + self.r * r + self.abs_u * u.abs() + self.abs_v * v.abs() + self.abs_r * r.abs()
    }
}

const fn poly(constant: f64, u: f64, v: f64, r: f64, abs_u: f64, abs_v: f64, abs_r: f64) -> VelocityPoly {
    VelocityPoly {
        constant,
        u,
        v,
        r,
        abs_u,
        abs_v,
        abs_r,
    }
}

const Z: VelocityPoly = VelocityPoly::ZERO;

pub type PolyTable = [[VelocityPoly; 3]; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct AuvParams {
    pub mass: DMatrix<f64>,
    pub coriolis: PolyTable,
    pub damping: PolyTable,
}

impl AuvParams {
    pub fn leader() -> Self {
        #[rustfmt::skip]
        let mass = DMatrix::from_row_slice(3, 3, &[
            37.93, 0.0, 0.0,
            0.0, 72.5, -1.93,
            0.0, -1.93, 8.33,
        ]);
        let coriolis = [
            [Z, Z, poly(0.0, 0.0, -72.50, 1.93, 0.0, 0.0, 0.0)], // -72.50v_0 + 1.93r_0
            [Z, Z, poly(0.0, 37.93, 0.0, 0.0, 0.0, 0.0, 0.0)],   // 37.93u_0
            [
                poly(0.0, 0.0, 72.50, -1.93, 0.0, 0.0, 0.0), // 72.50v_0 - 1.93r_0
                poly(0.0, -37.93, 0.0, 0.0, 0.0, 0.0, 0.0),  // -37.93u_0
                Z,
            ],
        ];
        let damping = [
            [
                poly(-13.50, -1.62, 0.0, 0.0, -1.62, 0.0, 0.0), // -13.50 - 1.62u_0 - 1.62|u_0|
                poly(0.0, 0.0, -4.48, 35.50, 0.0, 0.0, 0.0),    // -4.48v_0 + 35.50r_0
                Z,
            ],
            [
                Z,
                poly(-175.21, 0.0, 0.0, 0.0, 0.0, -1310.0, 24.96), // -175.21 - 1310|v_0| + 24.96|r_0|
                poly(-25.06, 0.0, 0.0, 0.0, 0.0, 0.0, 0.63),       // -25.06 + 0.63|r_0|
            ],
            [
                Z,
                poly(23.83, 0.0, 0.0, 0.0, 0.0, 40.01, 0.0),      // 23.83 + 40.01|v_0|
                poly(31.42, 0.0, -93.16, 0.0, 0.0, 0.0, -94.0),   // 31.42 - 94|r_0| - 93.16v_0
            ],
        ];
        AuvParams {
            mass,
            coriolis,
            damping,
        }
    }

    pub fn follower() -> Self {
        // not symmetric as printed
        #[rustfmt::skip]
        let mass = DMatrix::from_row_slice(3, 3, &[
            20.74, 0.0, 0.0,
            0.0, 38.24, -6.19,
            0.0, -8.97, 2.92,
        ]);
        let coriolis = [
            [Z, Z, poly(0.0, 0.0, -38.24, 6.19, 0.0, 0.0, 0.0)], // -38.24v_1 + 6.19r_1
            [Z, Z, poly(0.0, 20.74, 0.0, 0.0, 0.0, 0.0, 0.0)],   // 20.74u_1
            [
                poly(0.0, 0.0, 38.24, -6.19, 0.0, 0.0, 0.0), // 38.24v_1 - 6.19r_1
                poly(0.0, -20.74, 0.0, 0.0, 0.0, 0.0, 0.0),  // -20.74u_1
                Z,
            ],
        ];
        let damping = [
            [
                poly(-3.00, -3.37, 0.0, 0.0, -1.25, 0.0, 0.0), // -3.00 - 3.37u_1 - 1.25|u_1|
                poly(0.0, 0.0, -40.99, 17.86, 0.0, 0.0, 0.0),  // -40.99v_1 + 17.86r_1
                Z,
            ],
            [
                Z,
                poly(-26.72, 0.0, 0.0, 0.0, 0.0, -45.29, 11.72), // -26.72 - 45.29|v_1| + 11.72|r_1|
                poly(-12.67, 0.0, 0.0, 0.0, 0.0, 0.0, 0.34),     // -12.67 + 0.34|r_1|
            ],
            [
                Z,
                poly(26.09, 0.0, 0.0, 0.0, 0.0, 24.58, 0.0),   // 26.09 + 24.58|v_1|
                poly(35.56, 0.0, -0.94, 0.0, 0.0, 0.0, 0.03),  // 35.56 + 0.03|r_1| - 0.94v_1
            ],
        ];
        AuvParams {
            mass,
            coriolis,
            damping,
        }
    }
}

fn eval_table(table: &PolyTable, nu: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |i, j| table[i][j].eval(nu))
}

pub fn eval_coriolis(params: &AuvParams, nu: &DVector<f64>) -> DMatrix<f64> {
    eval_table(&params.coriolis, nu)
}

pub fn eval_damping(params: &AuvParams, nu: &DVector<f64>) -> DMatrix<f64> {
    eval_table(&params.damping, nu)
}

/// Body-to-world rotation about the yaw axis.
pub fn rotation(psi: f64) -> DMatrix<f64> {
    let (s, c) = psi.sin_cos();
    #[rustfmt::skip]
    let r = DMatrix::from_row_slice(3, 3, &[
        c, -s, 0.0,
        s, c, 0.0,
        0.0, 0.0, 1.0,
    ]);
    r
}

/// `T⁻¹·M·R⁻¹(k)·[R(k) − R(k−1)]·ν − C(ν)ν − D(ν)ν`.
pub fn h_term(
    params: &AuvParams,
    rot_now: &DMatrix<f64>,
    rot_prev: &DMatrix<f64>,
    nu: &DVector<f64>,
    period: f64,
) -> DVector<f64> {
    // rotations are orthogonal, so R⁻¹ = Rᵀ
    let turn = &params.mass * rot_now.transpose() * (rot_now - rot_prev) * nu / period;
    turn - eval_coriolis(params, nu) * nu - eval_damping(params, nu) * nu
}

/// `η_d(k+1) − 2η_d(k) + η_d(k−1)` from `[η_d(k−1), η_d(k), η_d(k+1)]`.
fn second_difference(refs: &[DVector<f64>; 3]) -> DVector<f64> {
    &refs[2] - &refs[1] * 2.0 + &refs[0]
}

/// `τ = M·R⁻¹·u_z − h + T⁻²·M·R⁻¹·[η_d(k+1) − 2η_d(k) + η_d(k−1)]`.
pub fn force_reconstruction(
    params: &AuvParams,
    u_z: &DVector<f64>,
    refs: &[DVector<f64>; 3],
    rot: &DMatrix<f64>,
    h: &DVector<f64>,
    period: f64,
) -> DVector<f64> {
    let m_rinv = &params.mass * rot.transpose();
    &m_rinv * u_z - h + &m_rinv * second_difference(refs) / (period * period)
}

/// `u_z = R·M⁻¹·τ − T⁻²·[η_d(k+1) − 2η_d(k) + η_d(k−1)] + R·M⁻¹·h`.
pub fn u_z_from_force(
    params: &AuvParams,
    tau: &DVector<f64>,
    refs: &[DVector<f64>; 3],
    rot: &DMatrix<f64>,
    h: &DVector<f64>,
    period: f64,
) -> Result<DVector<f64>> {
    let lu = params.mass.clone().lu();
    let minv_tau = lu
        .solve(tau)
        .ok_or_else(|| Error::InvalidArgument("singular inertia matrix".into()))?;
    let minv_h = lu.solve(h).expect("same factorization");
    Ok(rot * minv_tau - second_difference(refs) / (period * period) + rot * minv_h)
}

/// `amplitude·sin(frequency·k) + offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    pub offset: f64,
}

impl Sinusoid {
    pub fn at(&self, k: i64) -> f64 {
        self.amplitude * (self.frequency * k as f64).sin() + self.offset
    }
}

/// Desired `(x, y, ψ)`; defined for every integer step, negative ones included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceTrajectory {
    pub x: Sinusoid,
    pub y: Sinusoid,
    pub psi: Sinusoid,
}

impl ReferenceTrajectory {
    pub fn leader() -> Self {
        ReferenceTrajectory {
            x: Sinusoid { amplitude: 6.0, frequency: 0.2, offset: 1.2 },
            y: Sinusoid { amplitude: 4.0, frequency: 0.2, offset: 1.2 },
            psi: Sinusoid { amplitude: 1.0, frequency: 0.2, offset: 0.0 },
        }
    }

    pub fn follower() -> Self {
        ReferenceTrajectory {
            x: Sinusoid { amplitude: 4.0, frequency: 0.2, offset: 1.5 },
            y: Sinusoid { amplitude: 2.0, frequency: 0.2, offset: 1.4 },
            psi: Sinusoid { amplitude: 2.0, frequency: 0.2, offset: 0.0 },
        }
    }

    /// `[η_d(k−1), η_d(k), η_d(k+1)]`.
    pub fn window(&self, k: i64) -> [DVector<f64>; 3] {
        [reference(self, k - 1), reference(self, k), reference(self, k + 1)]
    }
}

pub fn reference(traj: &ReferenceTrajectory, k: i64) -> DVector<f64> {
    DVector::from_vec(vec![traj.x.at(k), traj.y.at(k), traj.psi.at(k)])
}

/// Double-integrator error model with sampling period `T`:
/// `a_z = I6 + T·[[0, I3], [0, 0]]`, `b_z = T·[0; I3]`.
pub fn build_error_dynamics(period: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::InvalidArgument(format!("sampling period {period} must be positive")));
    }
    let mut a = DMatrix::identity(6, 6);
    a.view_mut((0, 3), (3, 3)).copy_from(&(DMatrix::identity(3, 3) * period));
    let mut b = DMatrix::zeros(6, 3);
    b.view_mut((3, 0), (3, 3)).copy_from(&(DMatrix::identity(3, 3) * period));
    Ok((a, b))
}

/// Forward Euler: `η' = η + T·R(ψ)·ν`, `ν' = ν + T·M⁻¹·(τ − C(ν)ν − D(ν)ν)`.
pub fn nonlinear_step(
    params: &AuvParams,
    eta: &DVector<f64>,
    nu: &DVector<f64>,
    tau: &DVector<f64>,
    period: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if period.is_nan() || period <= 0.0 {
        return Err(Error::InvalidArgument(format!("sampling period {period} must be positive")));
    }
    let eta_next = eta + rotation(eta[2]) * nu * period;
    let force = tau - eval_coriolis(params, nu) * nu - eval_damping(params, nu) * nu;
    let accel = params
        .mass
        .clone()
        .lu()
        .solve(&force)
        .ok_or_else(|| Error::InvalidArgument("singular inertia matrix".into()))?;
    let nu_next = nu + accel * period;
    if eta_next.iter().chain(nu_next.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "vessel state", step: 0 });
    }
    Ok((eta_next, nu_next))
}

/// Initial pose. `nu` holds the per-period position increments given with
/// the example (world frame).
#[derive(Clone, Debug, PartialEq)]
pub struct InitialPose {
    pub eta: DVector<f64>,
    pub nu: DVector<f64>,
}

/// `z¹ = η(0) − η_d(0)`, `z² = ν(0) − (η_d(0) − η_d(−1))/T`.
pub fn initial_error_state(pose: &InitialPose, traj: &ReferenceTrajectory, period: f64) -> DVector<f64> {
    let z1 = &pose.eta - reference(traj, 0);
    let z2 = &pose.nu - (reference(traj, 0) - reference(traj, -1)) / period;
    linalg::stack(&z1, &z2)
}

#[derive(Clone, Debug)]
pub struct VehicleExample {
    pub model: LfnsModel,
    pub cost: CostSpec,
    pub initial: [InitialPose; 2],
    pub params: [AuvParams; 2],
    pub references: [ReferenceTrajectory; 2],
    pub sampling_period: f64,
}

#[rustfmt::skip]
const A_Z00: [f64; 36] = [
    -0.50, -1.13,  0.49, -1.22, -0.21,  0.42,
    -1.14,  0.20,  0.20, -0.58, -0.72,  0.05,
    -2.46,  1.47, -1.40,  4.17, -0.20, -2.24,
    -0.93,  0.43, -1.02,  3.07,  0.14, -1.30,
     0.17, -0.59, -0.19,  0.82,  0.13, -0.21,
     0.50,  0.53, -0.83,  2.16,  0.26, -0.50,
];

#[rustfmt::skip]
const A_Z11: [f64; 36] = [
    -0.59,  0.27, -0.01, -0.32, -0.52, -0.94,
    -0.15,  0.39,  0.20, -0.05, -0.90, -1.72,
    -0.40,  0.09, -0.15, -0.32, -0.10,  0.10,
     0.03,  0.16,  0.27,  0.31, -0.11, -0.82,
     0.08, -0.20,  0.03,  0.16,  0.29,  0.53,
    -0.54,  0.25,  0.16, -0.19, -0.36, -0.86,
];

#[rustfmt::skip]
#[allow(clippy::approx_constant)]
const A_Z10: [f64; 36] = [
     0.79, -1.00,  0.89,  0.14,  0.50,  0.26,
    -0.64,  1.00, -0.52,  0.73, -0.15,  0.75,
    -0.28,  0.45, -0.01,  0.52, -0.03,  0.22,
    -0.68,  1.33, -0.15,  1.27, -0.67,  1.23,
    -1.66,  3.67, -3.14,  1.52, -1.15,  2.97,
     0.91, -0.94,  0.20, -0.45,  0.52, -0.12,
];

#[rustfmt::skip]
const B_Z00: [f64; 18] = [
    0.92, 0.57, 0.09,
    0.40, 0.68, 0.36,
    0.68, 0.13, 0.57,
    0.49, 0.06, 0.72,
    0.29, 0.69, 0.01,
    0.25, 0.29, 0.06,
];

#[rustfmt::skip]
const B_Z11: [f64; 18] = [
    0.99, 0.46, 0.86,
    0.24, 0.35, 0.72,
    0.50, 0.32, 0.82,
    0.53, 0.39, 0.44,
    0.60, 0.41, 0.98,
    0.13, 0.75, 0.12,
];

#[rustfmt::skip]
const B_Z10: [f64; 18] = [
    0.86, 0.01, 0.91,
    0.96, 0.50, 0.99,
    0.80, 0.93, 0.63,
    0.87, 0.66, 0.99,
    0.26, 0.21, 0.76,
    0.03, 0.48, 0.65,
];

/// The two-vessel example: dense error-dynamics blocks, identity weights,
/// `γ = 0.9`, `T = 1`, unit noise, deterministic initial error.
pub fn vehicle_example() -> VehicleExample {
    let period = 1.0;
    let m6 = |d: &[f64]| DMatrix::from_row_slice(6, 6, d);
    let m63 = |d: &[f64]| DMatrix::from_row_slice(6, 3, d);
    let initial = [
        InitialPose {
            eta: DVector::from_vec(vec![8.0, 6.0, 1.5]),
            nu: DVector::from_vec(vec![1.0, 2.0, 0.5]),
        },
        InitialPose {
            eta: DVector::from_vec(vec![6.0, 4.0, 1.0]),
            nu: DVector::from_vec(vec![2.1, 1.4, 0.3]),
        },
    ];
    let references = [ReferenceTrajectory::leader(), ReferenceTrajectory::follower()];
    let z0 = initial_error_state(&initial[0], &references[0], period);
    let z1 = initial_error_state(&initial[1], &references[1], period);

    let model = LfnsModel::from_dynamics(m6(&A_Z00), m6(&A_Z10), m6(&A_Z11), m63(&B_Z00), m63(&B_Z10), m63(&B_Z11))
        .with_noise(DMatrix::identity(6, 6), DMatrix::identity(6, 6))
        .with_initial(z0, DMatrix::zeros(6, 6), z1, DMatrix::zeros(6, 6));
    let cost = CostSpec::new(DMatrix::identity(12, 12), DMatrix::identity(6, 6)).with_gamma(0.9);
    VehicleExample {
        model,
        cost,
        initial,
        params: [AuvParams::leader(), AuvParams::follower()],
        references,
        sampling_period: period,
    }
}

/// Per-vessel stationary gains `(3×6)` designed on the canonical
/// double-integrator error model with identity weights.
pub fn canonical_gains(period: f64, gamma: f64) -> Result<DMatrix<f64>> {
    let (a, b) = build_error_dynamics(period)?;
    let z6 = DMatrix::zeros(6, 6);
    let model = LfnsModel::from_dynamics(a.clone(), z6, a, b.clone(), DMatrix::zeros(6, 3), b);
    let cost = CostSpec::new(DMatrix::identity(12, 12), DMatrix::identity(6, 6)).with_gamma(gamma);
    let sol = solve_stationary_riccati(&assemble_compact(&model)?, &cost)?;
    Ok(sol.gains().k00)
}

/// `‖z¹(k)‖` of the canonical loop `z' = (a_z − b_z·gain)·z + d(k)`, where
/// `d(k) = (−[η_d(k+1) − 2η_d(k) + η_d(k−1)], 0)` is the reference curvature
/// the position error picks up between samples.
pub fn linearized_position_errors(
    gain: &DMatrix<f64>,
    z0: &DVector<f64>,
    traj: &ReferenceTrajectory,
    period: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let (a, b) = build_error_dynamics(period)?;
    let acl = &a - &b * gain;
    let mut z = z0.clone();
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps as i64 {
        out.push(z.rows(0, 3).norm());
        let mut d = DVector::zeros(6);
        d.rows_mut(0, 3).copy_from(&-second_difference(&traj.window(k)));
        z = &acl * z + d;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrackingRun {
    /// `η(k)` per vessel.
    pub eta: Vec<[DVector<f64>; 2]>,
    pub reference: Vec<[DVector<f64>; 2]>,
    /// `‖η(k) − η_d(k)‖` per vessel.
    pub position_error: Vec<[f64; 2]>,
}

/// Closed loop of the nonlinear vessels under `u_z = −gain·z` and the force
/// map. The velocity error is read from the velocity state,
/// `z² = R(ψ(k−1))·ν(k) − (η_d(k) − η_d(k−1))/T`.
pub fn track_nonlinear(example: &VehicleExample, gains: [&DMatrix<f64>; 2], steps: usize) -> Result<TrackingRun> {
    let period = example.sampling_period;
    let mut eta = [example.initial[0].eta.clone(), example.initial[1].eta.clone()];
    let mut eta_prev = [
        &eta[0] - &example.initial[0].nu * period,
        &eta[1] - &example.initial[1].nu * period,
    ];
    let mut nu = [
        rotation(eta_prev[0][2]).transpose() * &example.initial[0].nu,
        rotation(eta_prev[1][2]).transpose() * &example.initial[1].nu,
    ];
    let mut run = TrackingRun {
        eta: Vec::with_capacity(steps + 1),
        reference: Vec::with_capacity(steps + 1),
        position_error: Vec::with_capacity(steps + 1),
    };
    for k in 0..=steps as i64 {
        let refs = [example.references[0].window(k), example.references[1].window(k)];
        run.eta.push(eta.clone());
        run.reference.push([refs[0][1].clone(), refs[1][1].clone()]);
        run.position_error
            .push([(&eta[0] - &refs[0][1]).norm(), (&eta[1] - &refs[1][1]).norm()]);
        if k == steps as i64 {
            break;
        }
        for i in 0..2 {
            let rot = rotation(eta[i][2]);
            let rot_prev = rotation(eta_prev[i][2]);
            let z1 = &eta[i] - &refs[i][1];
            let z2 = &rot_prev * &nu[i] - (&refs[i][1] - &refs[i][0]) / period;
            let u_z = -(gains[i] * linalg::stack(&z1, &z2));
            let h = h_term(&example.params[i], &rot, &rot_prev, &nu[i], period);
            let tau = force_reconstruction(&example.params[i], &u_z, &refs[i], &rot, &h, period);
            let (e, v) = nonlinear_step(&example.params[i], &eta[i], &nu[i], &tau, period)?;
            eta_prev[i] = std::mem::replace(&mut eta[i], e);
            nu[i] = v;
        }
    }
    Ok(run)
}
