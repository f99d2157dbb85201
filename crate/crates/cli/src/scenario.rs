//! Scenario files: two aircraft, their vehicle models and sets, and the
//! separation problem. Every physical quantity carries its unit in the
//! field name.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use reachsep::dynamics::{
    fixedwing_linearized, fixedwing_trim_rhs, propagate_nominal, quadrotor_linearized, FixedWingParams,
    QuadrotorParams,
};
use reachsep::ellipsoid::Ellipsoid;
use reachsep::reachability::{PositionMap, ReachSpec, DEFAULT_QUAD_STEPS};
use reachsep::synthesis::{Aircraft, Method};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub required_separation_m: f64,
    pub horizon_s: f64,
    pub grid_step_s: f64,
    /// Number of tube directions, evenly spaced in the plot plane.
    pub directions: usize,
    #[serde(default = "default_quad_steps")]
    pub quad_steps: usize,
    pub scalarization: Scalarization,
    /// Part I distance margin; half the required separation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part1_margin_m: Option<f64>,
    /// World axes (0 = x, 1 = y, 2 = z) spanning the tube plots.
    #[serde(default = "default_plot_axes")]
    pub plot_axes: [usize; 2],
    /// Control coordinates shown in the control-set plot.
    #[serde(default = "default_control_axes")]
    pub control_plot_axes: [usize; 2],
    pub aircraft_a: AircraftConfig,
    pub aircraft_b: AircraftConfig,
}

fn default_quad_steps() -> usize {
    DEFAULT_QUAD_STEPS
}

fn default_plot_axes() -> [usize; 2] {
    [0, 1]
}

fn default_control_axes() -> [usize; 2] {
    [0, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scalarization {
    pub k0: f64,
    pub shrink: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_method")]
    pub method: MethodName,
}

fn default_max_iterations() -> usize {
    20
}

fn default_method() -> MethodName {
    MethodName::Norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Scaled,
    Norm,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::Scaled => Method::Scaled,
            MethodName::Norm => Method::Norm,
        }
    }
}

impl From<Method> for MethodName {
    fn from(m: Method) -> Self {
        match m {
            Method::Scaled => MethodName::Scaled,
            Method::Norm => MethodName::Norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftConfig {
    pub vehicle: Vehicle,
    pub initial_position_m: [f64; 3],
    pub initial_velocity_mps: [f64; 3],
    /// Semi-axes of the initial-state ellipsoid around the nominal initial
    /// state, one per state in the vehicle's state units.
    pub initial_state_semi_axes: Vec<f64>,
    /// Center of the control set as a deviation from trim, input units.
    pub control_center: Vec<f64>,
    pub control_semi_axes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<EllipsoidConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsoidConfig {
    pub center: Vec<f64>,
    pub semi_axes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Vehicle {
    Quadrotor {
        mass_kg: f64,
        inertia_kg_m2: [[f64; 3]; 3],
        gravity_mps2: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<String>,
    },
    Fixedwing(FixedWingConfig),
}

/// Trim point and stability/control derivatives (SI units, per second).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedWingConfig {
    pub theta_trim_rad: f64,
    pub u_trim_mps: f64,
    pub w_trim_mps: f64,
    pub x_u_per_s: f64,
    pub x_w_per_s: f64,
    pub x_q_mps: f64,
    pub z_u_per_s: f64,
    pub z_w_per_s: f64,
    pub z_q_mps: f64,
    pub m_u_per_m_s: f64,
    pub m_w_per_m_s: f64,
    pub m_q_per_s: f64,
    pub x_de_mps2_per_rad: f64,
    pub x_dt_mps2: f64,
    pub z_de_mps2_per_rad: f64,
    pub m_de_per_s2: f64,
    pub gravity_mps2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl FixedWingConfig {
    pub fn params(&self) -> FixedWingParams {
        FixedWingParams {
            theta_trim: self.theta_trim_rad,
            u_trim: self.u_trim_mps,
            w_trim: self.w_trim_mps,
            x_u: self.x_u_per_s,
            x_w: self.x_w_per_s,
            x_q: self.x_q_mps,
            z_u: self.z_u_per_s,
            z_w: self.z_w_per_s,
            z_q: self.z_q_mps,
            m_u: self.m_u_per_m_s,
            m_w: self.m_w_per_m_s,
            m_q: self.m_q_per_s,
            x_de: self.x_de_mps2_per_rad,
            x_dt: self.x_dt_mps2,
            z_de: self.z_de_mps2_per_rad,
            m_de: self.m_de_per_s2,
            gravity: self.gravity_mps2,
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let schema = |field: &str, msg: &str| Err(CliError::Schema(format!("{field}: {msg}")));
        if !(self.required_separation_m > 0.0 && self.required_separation_m.is_finite()) {
            return schema("required_separation_m", "must be positive");
        }
        if !(self.horizon_s > 0.0 && self.horizon_s.is_finite()) {
            return schema("horizon_s", "must be positive");
        }
        if !(self.grid_step_s > 0.0 && self.grid_step_s <= self.horizon_s) {
            return schema("grid_step_s", "must be positive and at most the horizon");
        }
        if self.quad_steps < 16 || !self.quad_steps.is_multiple_of(2) {
            return schema("quad_steps", "must be even and at least 16");
        }
        let sc = &self.scalarization;
        if !(sc.k0 > 0.0 && sc.k0.is_finite()) {
            return schema("scalarization.k0", "must be positive");
        }
        if !(sc.shrink > 0.0 && sc.shrink < 1.0) {
            return schema("scalarization.shrink", "must lie in (0, 1)");
        }
        if sc.max_iterations == 0 {
            return schema("scalarization.max_iterations", "must be at least 1");
        }
        if let Some(m) = self.part1_margin_m {
            if !(m >= 0.0 && m.is_finite()) {
                return schema("part1_margin_m", "must be nonnegative");
            }
        }
        if self.plot_axes[0] == self.plot_axes[1] || self.plot_axes.iter().any(|a| *a > 2) {
            return schema("plot_axes", "must be two distinct world axes in 0..=2");
        }
        if self.control_plot_axes[0] == self.control_plot_axes[1] {
            return schema("control_plot_axes", "must be two distinct control coordinates");
        }
        for (tag, ac) in [("aircraft_a", &self.aircraft_a), ("aircraft_b", &self.aircraft_b)] {
            ac.validate(tag)?;
            if self.control_plot_axes.iter().any(|a| *a >= ac.input_dim()) {
                return schema("control_plot_axes", "index exceeds the control dimension");
            }
        }
        Ok(())
    }

    /// Uniform time grid `0, h, 2h, …` up to the horizon.
    pub fn grid(&self) -> Vec<f64> {
        let n = (self.horizon_s / self.grid_step_s + 1e-9).floor() as usize;
        (0..=n).map(|i| i as f64 * self.grid_step_s).collect()
    }

    pub fn aircraft(&self, which: Which) -> Result<Aircraft, CliError> {
        let (tag, cfg) = match which {
            Which::A => ("aircraft_a", &self.aircraft_a),
            Which::B => ("aircraft_b", &self.aircraft_b),
        };
        cfg.build(tag, self.horizon_s, self.grid_step_s, self.quad_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    A,
    B,
}

impl Which {
    pub fn label(self) -> &'static str {
        match self {
            Which::A => "A",
            Which::B => "B",
        }
    }
}

fn semi_axes_ellipsoid(field: &str, center: Vec<f64>, axes: &[f64]) -> Result<Ellipsoid, CliError> {
    if center.len() != axes.len() {
        return Err(CliError::Schema(format!("{field}: center and semi-axes differ in length")));
    }
    Ellipsoid::from_semi_axes(DVector::from_vec(center), axes).map_err(|e| CliError::Schema(format!("{field}: {e}")))
}

impl AircraftConfig {
    pub fn state_dim(&self) -> usize {
        match self.vehicle {
            Vehicle::Quadrotor { .. } => 10,
            Vehicle::Fixedwing(_) => 6,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.vehicle {
            Vehicle::Quadrotor { .. } => 3,
            Vehicle::Fixedwing(_) => 2,
        }
    }

    fn validate(&self, tag: &str) -> Result<(), CliError> {
        let schema = |field: &str, msg: String| Err(CliError::Schema(format!("{tag}.{field}: {msg}")));
        let (n, m) = (self.state_dim(), self.input_dim());
        if self.initial_state_semi_axes.len() != n {
            return schema("initial_state_semi_axes", format!("expected {n} entries"));
        }
        if self.control_center.len() != m {
            return schema("control_center", format!("expected {m} entries"));
        }
        if self.control_semi_axes.len() != m {
            return schema("control_semi_axes", format!("expected {m} entries"));
        }
        if self.control_semi_axes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return schema("control_semi_axes", "must be positive".into());
        }
        if self.initial_state_semi_axes.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return schema("initial_state_semi_axes", "must be nonnegative".into());
        }
        if let Some(d) = &self.disturbance {
            if d.center.len() != n || d.semi_axes.len() != n {
                return schema("disturbance", format!("expected {n} entries in center and semi_axes"));
            }
        }
        match &self.vehicle {
            Vehicle::Quadrotor {
                mass_kg,
                inertia_kg_m2,
                gravity_mps2,
                ..
            } => {
                let p = QuadrotorParams {
                    mass: *mass_kg,
                    inertia: inertia(inertia_kg_m2),
                    gravity: *gravity_mps2,
                };
                p.validate().or_else(|e| schema("vehicle", e.to_string()))?;
            }
            Vehicle::Fixedwing(fw) => {
                let p = fw.params();
                p.validate().or_else(|e| schema("vehicle", e.to_string()))?;
                let v = self.initial_velocity_mps;
                if v[2].abs() > 1e-9 {
                    return schema("initial_velocity_mps", "fixed-wing cruise must be level (zero vertical speed)".into());
                }
                let speed = v[0].hypot(v[1]);
                let gs = p.ground_speed();
                if (speed - gs).abs() > 1e-6 * gs.max(1.0) {
                    return schema(
                        "initial_velocity_mps",
                        format!("horizontal speed {speed} must equal the trim ground speed {gs}"),
                    );
                }
            }
        }
        Ok(())
    }

    fn build(&self, tag: &str, horizon: f64, grid_step: f64, quad_steps: usize) -> Result<Aircraft, CliError> {
        let bad = |e: reachsep::Error| CliError::Schema(format!("{tag}: {e}"));
        let control = semi_axes_ellipsoid(
            &format!("{tag}.control"),
            self.control_center.clone(),
            &self.control_semi_axes,
        )?;
        let [px, py, pz] = self.initial_position_m;
        let (spec, map) = match &self.vehicle {
            Vehicle::Quadrotor {
                mass_kg,
                inertia_kg_m2,
                gravity_mps2,
                ..
            } => {
                let sys = quadrotor_linearized(&QuadrotorParams {
                    mass: *mass_kg,
                    inertia: inertia(inertia_kg_m2),
                    gravity: *gravity_mps2,
                })
                .map_err(bad)?;
                let [vx, vy, vz] = self.initial_velocity_mps;
                let center = vec![px, py, pz, vx, vy, vz, 0.0, 0.0, 0.0, 0.0];
                let x0 = semi_axes_ellipsoid(&format!("{tag}.initial_state"), center, &self.initial_state_semi_axes)?;
                let spec = ReachSpec::new(sys, x0, control, horizon).map_err(bad)?;
                (spec, PositionMap::select(10, &[0, 1, 2]).map_err(bad)?)
            }
            Vehicle::Fixedwing(fw) => {
                let p = fw.params();
                let sys = fixedwing_linearized(&p).map_err(bad)?;
                // Deviation coordinates around the trimmed straight flight path.
                let x0 = semi_axes_ellipsoid(&format!("{tag}.initial_state"), vec![0.0; 6], &self.initial_state_semi_axes)?;
                let trim = DVector::from_vec(vec![0.0, 0.0, p.u_trim, p.w_trim, 0.0, p.theta_trim]);
                let nominal = propagate_nominal(fixedwing_trim_rhs, &trim, &DVector::zeros(2), horizon, grid_step)
                    .map_err(bad)?;
                let spec = ReachSpec::new(sys, x0, control, horizon)
                    .and_then(|s| s.with_center_offset(nominal))
                    .map_err(bad)?;
                // Along-track x follows the heading; z is altitude.
                let [vx, vy, _] = self.initial_velocity_mps;
                let heading = vy.atan2(vx);
                let mut m = DMatrix::zeros(3, 6);
                m[(0, 0)] = heading.cos();
                m[(1, 0)] = heading.sin();
                m[(2, 1)] = 1.0;
                let map = PositionMap::new(m, DVector::from_vec(vec![px, py, pz])).map_err(bad)?;
                (spec, map)
            }
        };
        let spec = spec.with_quad_steps(quad_steps).map_err(bad)?;
        let spec = match &self.disturbance {
            Some(d) => {
                let v = semi_axes_ellipsoid(&format!("{tag}.disturbance"), d.center.clone(), &d.semi_axes)?;
                spec.with_disturbance(v).map_err(bad)?
            }
            None => spec,
        };
        Aircraft::new(spec, map).map_err(bad)
    }
}

fn inertia(j: &[[f64; 3]; 3]) -> DMatrix<f64> {
    DMatrix::from_fn(3, 3, |r, c| j[r][c])
}
