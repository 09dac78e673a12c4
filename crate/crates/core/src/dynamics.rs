//! Discrete-time vehicle transition `x_{t+1} = F(x_t, u_t)`.
//!
//! The default model is a kinematic bicycle. A table-driven model can be
//! loaded from a text file so that an identified or learned model can be
//! swapped in without touching the controller.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub roll: f64,
    /// Body-frame longitudinal velocity.
    pub v_x: f64,
    /// Body-frame lateral velocity.
    pub v_y: f64,
    pub yaw_rate: f64,
}

impl VehicleState {
    /// At rest at `(x, y)` facing `yaw`.
    pub fn at(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
            ..Self::default()
        }
    }

    pub fn with_speed(mut self, v_x: f64) -> Self {
        self.v_x = v_x;
        self
    }

    pub fn is_finite(&self) -> bool {
        [
            self.x,
            self.y,
            self.yaw,
            self.roll,
            self.v_x,
            self.v_y,
            self.yaw_rate,
        ]
        .iter()
        .all(|c| c.is_finite())
    }

    pub fn speed(&self) -> f64 {
        self.v_x.hypot(self.v_y)
    }
}

/// Wraps an angle into `(-pi, pi]`. Values already in range are returned
/// untouched.
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = angle.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// `[throttle, steering]`, both dimensionless in `[-1, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub throttle: f64,
    pub steering: f64,
}

impl Control {
    pub const fn new(throttle: f64, steering: f64) -> Self {
        Self { throttle, steering }
    }

    pub fn clamped(self) -> Self {
        Self {
            throttle: self.throttle.clamp(-1.0, 1.0),
            steering: self.steering.clamp(-1.0, 1.0),
        }
    }
}

pub trait DynamicsModel {
    /// Advances `state` by `dt` seconds under `control`. Controls are clamped
    /// to actuator bounds before use.
    fn step(&self, state: &VehicleState, control: &Control, dt: f64) -> Result<VehicleState>;
}

#[inline(always)]
fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt < f64::INFINITY {
        Ok(())
    } else {
        Err(bad_dt(dt))
    }
}

#[cold]
fn bad_dt(dt: f64) -> Error {
    Error::invalid("dt", dt)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BicycleParams {
    /// Wheelbase, meters.
    pub wheelbase: f64,
    /// Front wheel angle at full steering command, radians.
    pub max_steer: f64,
    /// Longitudinal acceleration at full throttle, m/s^2.
    pub max_accel: f64,
    /// Linear drag coefficient, 1/s.
    pub drag: f64,
    /// Euler sub-steps per call to `step`.
    pub substeps: usize,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.57,
            max_steer: 0.35,
            max_accel: 4.0,
            drag: 0.2,
            substeps: 1,
        }
    }
}

impl BicycleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
            return Err(Error::invalid("dynamics.wheelbase", self.wheelbase));
        }
        if !(self.max_steer > 0.0 && self.max_steer < PI / 2.0) {
            return Err(Error::invalid("dynamics.max_steer", self.max_steer));
        }
        if !(self.max_accel >= 0.0 && self.max_accel.is_finite()) {
            return Err(Error::invalid("dynamics.max_accel", self.max_accel));
        }
        if !(self.drag >= 0.0 && self.drag.is_finite()) {
            return Err(Error::invalid("dynamics.drag", self.drag));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("dynamics.substeps", self.substeps));
        }
        Ok(())
    }
}

/// Kinematic bicycle integrated with explicit Euler. `v_y` and roll stay 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BicycleModel {
    pub params: BicycleParams,
}

impl BicycleModel {
    pub fn new(params: BicycleParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

#[inline]
pub fn bicycle_step(
    state: &VehicleState,
    control: &Control,
    dt: f64,
    params: &BicycleParams,
) -> Result<VehicleState> {
    check_dt(dt)?;
    let u = control.clamped();
    let delta = params.max_steer * u.steering;
    let tan_delta = delta.tan();
    let h = dt / params.substeps.max(1) as f64;

    let mut s = *state;
    s.v_y = 0.0;
    s.roll = 0.0;
    for _ in 0..params.substeps.max(1) {
        let accel = params.max_accel * u.throttle - params.drag * s.v_x;
        let yaw_rate = s.v_x * tan_delta / params.wheelbase;
        let (sin_yaw, cos_yaw) = s.yaw.sin_cos();
        s.x += s.v_x * cos_yaw * h;
        s.y += s.v_x * sin_yaw * h;
        s.yaw = normalize_angle(s.yaw + yaw_rate * h);
        s.v_x += accel * h;
        s.yaw_rate = yaw_rate;
    }
    Ok(s)
}

impl DynamicsModel for BicycleModel {
    fn step(&self, state: &VehicleState, control: &Control, dt: f64) -> Result<VehicleState> {
        bicycle_step(state, control, dt, &self.params)
    }
}

/// Uniform binning of one input axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bins {
    pub count: usize,
    pub min: f64,
    pub max: f64,
}

impl Bins {
    fn index(&self, value: f64) -> usize {
        let t = (value - self.min) / (self.max - self.min) * self.count as f64;
        if t.is_nan() || t <= 0.0 {
            0
        } else {
            (t as usize).min(self.count - 1)
        }
    }
}

/// Piecewise-constant model: each `(v_x, steering, throttle)` bin holds the
/// body-state derivative `[dv_x/dt, dv_y/dt, d(yaw_rate)/dt]`.
///
/// File format:
///
/// ```text
/// AIRL-DYN 1
/// vx <count> <min> <max>
/// steering <count> <min> <max>
/// throttle <count> <min> <max>
/// <a_x a_y yaw_accel>   (one row per bin, v_x-major then steering, throttle)
/// ```
///
/// Lines starting with `#` are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct TableModel {
    pub vx: Bins,
    pub steering: Bins,
    pub throttle: Bins,
    pub derivatives: Vec<[f64; 3]>,
}

impl TableModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let err = |offset: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            offset,
            message,
        };
        let mut lines = text
            .split_inclusive('\n')
            .scan(0usize, |offset, line| {
                let start = *offset;
                *offset += line.len();
                Some((start, line.trim()))
            })
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        match lines.next() {
            Some((_, "AIRL-DYN 1")) => {}
            Some((offset, other)) => return Err(err(offset, format!("bad header `{other}`"))),
            None => return Err(err(0, "empty model file".into())),
        }

        let mut axis = |name: &str| -> Result<Bins> {
            let (offset, line) = lines
                .next()
                .ok_or_else(|| err(text.len(), format!("missing `{name}` axis")))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 || fields[0] != name {
                return Err(err(offset, format!("expected `{name} <count> <min> <max>`")));
            }
            let count: usize = fields[1]
                .parse()
                .map_err(|_| err(offset, format!("bad bin count `{}`", fields[1])))?;
            let min: f64 = fields[2]
                .parse()
                .map_err(|_| err(offset, format!("bad min `{}`", fields[2])))?;
            let max: f64 = fields[3]
                .parse()
                .map_err(|_| err(offset, format!("bad max `{}`", fields[3])))?;
            if count == 0 || !(max > min) {
                return Err(err(offset, format!("degenerate `{name}` axis")));
            }
            Ok(Bins { count, min, max })
        };
        let vx = axis("vx")?;
        let steering = axis("steering")?;
        let throttle = axis("throttle")?;

        let expected = vx.count * steering.count * throttle.count;
        let mut derivatives = Vec::with_capacity(expected);
        for (offset, line) in lines {
            let values: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            match values {
                Ok(v) if v.len() == 3 && v.iter().all(|x| x.is_finite()) => {
                    derivatives.push([v[0], v[1], v[2]])
                }
                _ => return Err(err(offset, format!("bad derivative row `{line}`"))),
            }
        }
        if derivatives.len() != expected {
            return Err(err(
                text.len(),
                format!("expected {expected} rows, found {}", derivatives.len()),
            ));
        }
        Ok(Self {
            vx,
            steering,
            throttle,
            derivatives,
        })
    }

    fn lookup(&self, v_x: f64, control: &Control) -> [f64; 3] {
        let i = self.vx.index(v_x);
        let j = self.steering.index(control.steering);
        let k = self.throttle.index(control.throttle);
        self.derivatives[(i * self.steering.count + j) * self.throttle.count + k]
    }
}

impl DynamicsModel for TableModel {
    fn step(&self, state: &VehicleState, control: &Control, dt: f64) -> Result<VehicleState> {
        check_dt(dt)?;
        let u = control.clamped();
        let [a_x, a_y, yaw_accel] = self.lookup(state.v_x, &u);
        let mut s = *state;
        let (sin_yaw, cos_yaw) = s.yaw.sin_cos();
        s.x += (s.v_x * cos_yaw - s.v_y * sin_yaw) * dt;
        s.y += (s.v_x * sin_yaw + s.v_y * cos_yaw) * dt;
        s.yaw = normalize_angle(s.yaw + s.yaw_rate * dt);
        s.v_x += a_x * dt;
        s.v_y += a_y * dt;
        s.yaw_rate += yaw_accel * dt;
        Ok(s)
    }
}

/// Model selected at run time.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Bicycle(BicycleModel),
    Table(TableModel),
}

impl Default for Model {
    fn default() -> Self {
        Model::Bicycle(BicycleModel::default())
    }
}

impl DynamicsModel for Model {
    fn step(&self, state: &VehicleState, control: &Control, dt: f64) -> Result<VehicleState> {
        match self {
            Model::Bicycle(m) => m.step(state, control, dt),
            Model::Table(m) => m.step(state, control, dt),
        }
    }
}

/// `output[t]` is `F` applied `t + 1` times.
pub fn rollout<M: DynamicsModel + ?Sized>(
    model: &M,
    initial: &VehicleState,
    controls: &[Control],
    dt: f64,
) -> Result<Vec<VehicleState>> {
    if controls.is_empty() {
        return Err(Error::invalid("controls", "empty sequence"));
    }
    let mut states = Vec::with_capacity(controls.len());
    let mut state = *initial;
    for control in controls {
        state = model.step(&state, control, dt)?;
        states.push(state);
    }
    Ok(states)
}
