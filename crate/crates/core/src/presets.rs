//! Ready-made problem instances.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{station_dynamics, LtiSystem};
use crate::error::Result;
use crate::geometry::PointingCone;
use crate::problem::{ProblemSpec, TerminalCost, TerminalSpec};

pub const RPM: f64 = PI / 30.0;

/// How the canted thrusters are tilted away from the station axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThrusterLayout {
    /// Tilt about one of +x, -x, +y, -y.
    #[default]
    SingleAxis,
    /// Roll and pitch applied together, one per sign combination.
    PitchRoll,
}

/// Rendezvous with a station spinning about its z axis, twelve thrusters,
/// at most four firing at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DockingParams {
    /// Station rate in rad/s.
    pub omega: [f64; 3],
    pub rho1: f64,
    pub rho2: f64,
    pub max_active: usize,
    pub r0: [f64; 3],
    pub v0: [f64; 3],
    pub rf: [f64; 3],
    pub vf: [f64; 3],
    /// Cant of the thrusters pointing along +z and -z, in degrees.
    pub cant_up_deg: f64,
    pub cant_down_deg: f64,
    #[serde(default)]
    pub layout: ThrusterLayout,
    pub steps: usize,
}

impl Default for DockingParams {
    fn default() -> Self {
        Self {
            omega: [0.0, 0.0, RPM],
            rho1: 1e-3,
            rho2: 1e-2,
            max_active: 4,
            r0: [5.0, 5.0, 100.0],
            v0: [0.0; 3],
            rf: [0.0; 3],
            vf: [0.0, 0.0, -0.01],
            cant_up_deg: 40.0,
            cant_down_deg: 30.0,
            layout: ThrusterLayout::SingleAxis,
            steps: 300,
        }
    }
}

/// `axis` (unit z or -z) tilted by `deg` about +x, -x, +y and -y.
fn canted(axis: f64, deg: f64) -> [Vector3<f64>; 4] {
    let (s, c) = deg.to_radians().sin_cos();
    let z = axis * c;
    // Rotating (0,0,a) about +x by t gives (0, -a sin t, a cos t); about +y (a sin t, 0, a cos t).
    [
        Vector3::new(0.0, -axis * s, z),
        Vector3::new(0.0, axis * s, z),
        Vector3::new(axis * s, 0.0, z),
        Vector3::new(-axis * s, 0.0, z),
    ]
}

/// `axis` rolled by `+-deg` and pitched by `+-deg`.
fn pitch_rolled(axis: f64, deg: f64) -> [Vector3<f64>; 4] {
    let t = deg.to_radians();
    [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
        .map(|(roll, pitch)| Rotation3::from_euler_angles(roll * t, pitch * t, 0.0) * Vector3::new(0.0, 0.0, axis))
}

/// The twelve acceleration directions: four canted about +z, four about -z,
/// and the lateral axes.
pub fn docking_directions(layout: ThrusterLayout, cant_up_deg: f64, cant_down_deg: f64) -> Vec<Vector3<f64>> {
    let tilt = match layout {
        ThrusterLayout::SingleAxis => canted,
        ThrusterLayout::PitchRoll => pitch_rolled,
    };
    let mut dirs = Vec::with_capacity(12);
    dirs.extend(tilt(1.0, cant_up_deg));
    dirs.extend(tilt(-1.0, cant_down_deg));
    dirs.extend([Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y()]);
    dirs
}

impl DockingParams {
    pub fn directions(&self) -> Vec<Vector3<f64>> {
        docking_directions(self.layout, self.cant_up_deg, self.cant_down_deg)
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_iterator(6, self.r0.iter().chain(&self.v0).copied())
    }

    pub fn target_state(&self) -> DVector<f64> {
        DVector::from_iterator(6, self.rf.iter().chain(&self.vf).copied())
    }

    /// Minimum-time problem with the full terminal state pinned.
    pub fn spec(&self) -> Result<ProblemSpec> {
        let cones = self
            .directions()
            .into_iter()
            .map(|d| PointingCone::ray(DVector::from_column_slice(d.as_slice())))
            .collect::<Result<Vec<_>>>()?;
        ProblemSpec::new(
            station_dynamics(self.omega),
            cones,
            self.rho1,
            self.rho2,
            self.max_active,
            self.initial_state(),
            TerminalSpec::fixed_state(&self.target_state(), TerminalCost::MinTime),
        )
    }
}

pub fn docking() -> Result<ProblemSpec> {
    DockingParams::default().spec()
}

/// `x'' = u` in one dimension.
pub fn double_integrator_1d() -> LtiSystem {
    LtiSystem::homogeneous(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )
    .expect("static data is consistent")
}

/// Rest-to-rest transfer over `distance` in minimum time with a single
/// unconstrained input.
pub fn rest_to_rest(distance: f64, rho1: f64, rho2: f64) -> Result<ProblemSpec> {
    ProblemSpec::new(
        double_integrator_1d(),
        vec![PointingCone::unconstrained(1)?],
        rho1,
        rho2,
        1,
        DVector::zeros(2),
        TerminalSpec::fixed_state(&DVector::from_vec(vec![distance, 0.0]), TerminalCost::MinTime),
    )
}

/// Analytic minimum time of the rest-to-rest transfer: accelerate at full
/// thrust for half the distance, then brake.
pub fn rest_to_rest_time(distance: f64, rho2: f64) -> f64 {
    2.0 * (distance / rho2).sqrt()
}

/// Two opposing thrusters on the 1D double integrator with a quadratic
/// terminal penalty at fixed `tf`.
pub fn opposing_thrusters(rho1: f64, rho2: f64, x0: [f64; 2], x_ref: [f64; 2], tf: f64) -> Result<ProblemSpec> {
    ProblemSpec::new(
        double_integrator_1d(),
        vec![PointingCone::ray(DVector::from_vec(vec![1.0]))?, PointingCone::ray(DVector::from_vec(vec![-1.0]))?],
        rho1,
        rho2,
        1,
        DVector::from_column_slice(&x0),
        TerminalSpec::free(
            2,
            TerminalCost::Quadratic {
                weight: DMatrix::identity(2, 2),
                x_ref: DVector::from_column_slice(&x_ref),
            },
        )
        .with_fixed_time(tf),
    )
}
