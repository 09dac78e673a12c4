//! Model predictive path integral control with costs read from a costmap in
//! the current camera image.
//!
//! Each iteration perturbs the nominal control sequence with zero-mean
//! Gaussian noise, clamps to actuator bounds, rolls the dynamics forward,
//! projects every predicted position into the camera frame frozen at the
//! query state and scores it with
//!
//! ```text
//! l(x_t) = C_s (v_d - v_x,t)^2 + gamma^t C_c I(x_t)
//! ```
//!
//! The new nominal is the average of the sampled sequences weighted by
//! `exp(-(J_i - min J) / lambda)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costmap::{cost_lookup, CostmapImage, Stage};
use crate::dynamics::{Control, DynamicsModel, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::{PixelCoord, Projector};

pub type ControlSequence = Vec<Control>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MppiParams {
    /// Horizon length `T` in steps.
    pub horizon: usize,
    /// Step length in seconds.
    pub dt: f64,
    /// Optimization repetitions `K` per control cycle.
    pub iterations: usize,
    pub sigma_steer: f64,
    pub sigma_throttle: f64,
    /// `C_s`.
    pub speed_cost: f64,
    /// `C_c`.
    pub crash_cost: f64,
    pub gamma: f64,
    pub v_desired: f64,
    pub lambda: f64,
    pub num_samples: usize,
}

impl Default for MppiParams {
    fn default() -> Self {
        Self {
            horizon: 60,
            dt: 0.02,
            iterations: 2,
            sigma_steer: 0.3,
            sigma_throttle: 0.35,
            speed_cost: 1.8,
            crash_cost: 0.9,
            gamma: 0.99,
            v_desired: 5.0,
            lambda: 1.0,
            num_samples: 1200,
        }
    }
}

impl MppiParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, v))
            }
        };
        if self.horizon == 0 {
            return Err(Error::invalid("mppi.horizon", self.horizon));
        }
        positive("mppi.dt", self.dt)?;
        if self.iterations == 0 {
            return Err(Error::invalid("mppi.iterations", self.iterations));
        }
        positive("mppi.sigma_steer", self.sigma_steer)?;
        positive("mppi.sigma_throttle", self.sigma_throttle)?;
        positive("mppi.lambda", self.lambda)?;
        if !(self.speed_cost >= 0.0 && self.speed_cost.is_finite()) {
            return Err(Error::invalid("mppi.speed_cost", self.speed_cost));
        }
        if !(self.crash_cost >= 0.0 && self.crash_cost.is_finite()) {
            return Err(Error::invalid("mppi.crash_cost", self.crash_cost));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("mppi.gamma", self.gamma));
        }
        if !self.v_desired.is_finite() {
            return Err(Error::invalid("mppi.v_desired", self.v_desired));
        }
        if self.num_samples < 2 {
            return Err(Error::invalid("mppi.num_samples", self.num_samples));
        }
        Ok(())
    }
}

/// Crash indicator read from the map. Binary maps give exactly 0 or 1;
/// blurred maps give the looked-up value itself.
pub fn indicator(map: &CostmapImage, pixel: &PixelCoord) -> f64 {
    let value = cost_lookup(map, pixel);
    match map.stage() {
        Stage::Binary => value,
        Stage::Blurred | Stage::Raw => value.clamp(0.0, 1.0),
    }
}

pub fn running_cost(
    state: &VehicleState,
    pixel: &PixelCoord,
    t: usize,
    map: &CostmapImage,
    p: &MppiParams,
) -> f64 {
    let speed_error = p.v_desired - state.v_x;
    let crash = indicator(map, pixel);
    let mut cost = p.speed_cost * speed_error * speed_error;
    if crash != 0.0 {
        cost += p.gamma.powi(t as i32) * p.crash_cost * crash;
    }
    cost
}

/// Sum of running costs; the terminal cost is zero.
pub fn trajectory_cost(
    states: &[VehicleState],
    pixels: &[PixelCoord],
    map: &CostmapImage,
    p: &MppiParams,
) -> f64 {
    states
        .iter()
        .zip(pixels)
        .enumerate()
        .map(|(t, (s, px))| running_cost(s, px, t, map, p))
        .sum()
}

fn noise_rng(seed: u64, iteration: u64, sample: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&iteration.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(sample);
    rng
}

/// Noise for one sample. Each `(seed, iteration, sample)` owns an
/// independent ChaCha stream, so the draw does not depend on evaluation order.
pub fn sample_noise(seed: u64, iteration: u64, sample: u64, p: &MppiParams) -> Vec<Control> {
    let mut rng = noise_rng(seed, iteration, sample);
    (0..p.horizon)
        .map(|_| {
            let throttle: f64 = StandardNormal.sample(&mut rng);
            let steering: f64 = StandardNormal.sample(&mut rng);
            Control::new(p.sigma_throttle * throttle, p.sigma_steer * steering)
        })
        .collect()
}

/// `num_samples` x `T` perturbations for one iteration.
pub fn sample_perturbations(seed: u64, iteration: u64, p: &MppiParams) -> Vec<Vec<Control>> {
    (0..p.num_samples as u64)
        .into_par_iter()
        .map(|i| sample_noise(seed, iteration, i, p))
        .collect()
}

/// Source of control perturbations for one optimization iteration.
pub trait NoiseSource {
    fn perturbations(&self, seed: u64, iteration: u64, p: &MppiParams) -> Vec<Vec<Control>>;
}

/// Seeded zero-mean Gaussian noise ([`sample_perturbations`]).
#[derive(Clone, Copy, Debug, Default)]
pub struct GaussianNoise;

impl NoiseSource for GaussianNoise {
    fn perturbations(&self, seed: u64, iteration: u64, p: &MppiParams) -> Vec<Vec<Control>> {
        sample_perturbations(seed, iteration, p)
    }
}

/// Wraps another source and negates its steering channel.
#[derive(Clone, Copy, Debug, Default)]
pub struct MirroredSteering<N>(pub N);

impl<N: NoiseSource> NoiseSource for MirroredSteering<N> {
    fn perturbations(&self, seed: u64, iteration: u64, p: &MppiParams) -> Vec<Vec<Control>> {
        let mut noise = self.0.perturbations(seed, iteration, p);
        for e in noise.iter_mut().flatten() {
            e.steering = -e.steering;
        }
        noise
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    /// Clamped controls actually applied.
    pub controls: ControlSequence,
    pub perturbation: Vec<Control>,
    pub states: Vec<VehicleState>,
    pub pixels: Vec<PixelCoord>,
    pub total_cost: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub min_cost: f64,
    pub mean_cost: f64,
    pub effective_sample_size: f64,
    /// All costs equal (or all non-finite): the update is a plain average
    /// (or the nominal is kept).
    pub degenerate: bool,
    pub non_finite_samples: usize,
    pub first_control: Control,
}

/// Normalized weights `exp(-(J_i - min J) / lambda)`. Non-finite costs get
/// weight 0. Returns `None` when no sample has a finite cost.
pub fn softmax_weights(costs: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let min = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let raw: Vec<f64> = costs
        .iter()
        .map(|&c| {
            if c.is_finite() {
                (-(c - min) / lambda).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Some(raw.iter().map(|w| w / total).collect())
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Weighted average of control sequences, accumulated in sample order.
pub fn weighted_average(weights: &[f64], sequences: &[ControlSequence]) -> ControlSequence {
    let horizon = sequences.first().map_or(0, Vec::len);
    let mut out = vec![Control::default(); horizon];
    for (w, seq) in weights.iter().zip(sequences) {
        if *w == 0.0 {
            continue;
        }
        for (acc, u) in out.iter_mut().zip(seq) {
            acc.throttle += w * u.throttle;
            acc.steering += w * u.steering;
        }
    }
    out
}

fn perturbed_controls(nominal: &[Control], perturbation: &[Control]) -> ControlSequence {
    nominal
        .iter()
        .zip(perturbation)
        .map(|(u, e)| Control::new(u.throttle + e.throttle, u.steering + e.steering).clamped())
        .collect()
}

/// Drops the first control and repeats the last one.
pub fn receding_horizon_step(prev: &[Control]) -> ControlSequence {
    let mut next: ControlSequence = prev.iter().skip(1).copied().collect();
    if let Some(last) = prev.last() {
        next.push(*last);
    }
    next
}

/// Sampling controller bound to a dynamics model and parameter set.
pub struct Mppi<'a, M: ?Sized> {
    pub model: &'a M,
    pub params: &'a MppiParams,
}

impl<'a, M> Mppi<'a, M>
where
    M: DynamicsModel + Sync + ?Sized,
{
    pub fn new(model: &'a M, params: &'a MppiParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { model, params })
    }

    /// Rolls out `nominal + perturbation` (clamped) and scores it.
    pub fn evaluate(
        &self,
        state: &VehicleState,
        nominal: &[Control],
        perturbation: &[Control],
        map: &CostmapImage,
        projector: &Projector,
    ) -> Result<RolloutResult> {
        let controls = perturbed_controls(nominal, perturbation);
        let mut states = Vec::with_capacity(controls.len());
        let mut s = *state;
        for u in &controls {
            s = self.model.step(&s, u, self.params.dt)?;
            states.push(s);
        }
        let pixels: Vec<PixelCoord> = states
            .iter()
            .map(|s| {
                if s.is_finite() {
                    projector.project_ground(s.x, s.y)
                } else {
                    PixelCoord::behind_camera()
                }
            })
            .collect();
        let total_cost = if states.iter().all(VehicleState::is_finite) {
            trajectory_cost(&states, &pixels, map, self.params)
        } else {
            f64::NAN
        };
        Ok(RolloutResult {
            controls,
            perturbation: perturbation.to_vec(),
            states,
            pixels,
            total_cost,
        })
    }

    /// One update from explicitly supplied perturbations.
    pub fn iterate(
        &self,
        state: &VehicleState,
        nominal: &[Control],
        perturbations: &[Vec<Control>],
        map: &CostmapImage,
        projector: &Projector,
    ) -> Result<(ControlSequence, Diagnostics)> {
        if nominal.len() != self.params.horizon {
            return Err(Error::invalid(
                "nominal length",
                format!("{} (horizon {})", nominal.len(), self.params.horizon),
            ));
        }
        if let Some(bad) = perturbations.iter().find(|e| e.len() != nominal.len()) {
            return Err(Error::invalid("perturbation length", bad.len()));
        }
        let scored: Vec<(ControlSequence, f64)> = perturbations
            .par_iter()
            .map(|e| {
                let controls = perturbed_controls(nominal, e);
                let cost = self.rollout_cost(state, &controls, map, projector)?;
                Ok((controls, cost))
            })
            .collect::<Result<_>>()?;
        let (sequences, costs): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
        Ok(self.combine(nominal, &sequences, &costs))
    }

    /// Same cost as `evaluate` without keeping the intermediate states.
    fn rollout_cost(
        &self,
        state: &VehicleState,
        controls: &[Control],
        map: &CostmapImage,
        projector: &Projector,
    ) -> Result<f64> {
        let mut s = *state;
        let mut total = 0.0;
        for (t, u) in controls.iter().enumerate() {
            s = self.model.step(&s, u, self.params.dt)?;
            if !s.is_finite() {
                return Ok(f64::NAN);
            }
            let pixel = projector.project_ground(s.x, s.y);
            total += running_cost(&s, &pixel, t, map, self.params);
        }
        Ok(total)
    }

    fn combine(
        &self,
        nominal: &[Control],
        sequences: &[ControlSequence],
        costs: &[f64],
    ) -> (ControlSequence, Diagnostics) {
        let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        let non_finite_samples = costs.len() - finite.len();
        let Some(weights) = softmax_weights(costs, self.params.lambda) else {
            let kept: ControlSequence = nominal.iter().map(|u| u.clamped()).collect();
            let diagnostics = Diagnostics {
                min_cost: f64::NAN,
                mean_cost: f64::NAN,
                effective_sample_size: 0.0,
                degenerate: true,
                non_finite_samples,
                first_control: kept[0],
            };
            return (kept, diagnostics);
        };
        let updated = weighted_average(&weights, sequences);
        let min_cost = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let diagnostics = Diagnostics {
            min_cost,
            mean_cost: finite.iter().sum::<f64>() / finite.len() as f64,
            effective_sample_size: effective_sample_size(&weights),
            degenerate: finite.iter().all(|&c| c == min_cost),
            non_finite_samples,
            first_control: updated[0],
        };
        (updated, diagnostics)
    }

    /// `K` iterations with fresh noise keyed by `(seed, iteration, sample)`.
    pub fn optimize(
        &self,
        state: &VehicleState,
        nominal: &[Control],
        map: &CostmapImage,
        projector: &Projector,
        seed: u64,
    ) -> Result<(ControlSequence, Diagnostics)> {
        self.optimize_with(state, nominal, map, projector, seed, &GaussianNoise)
    }

    pub fn optimize_with(
        &self,
        state: &VehicleState,
        nominal: &[Control],
        map: &CostmapImage,
        projector: &Projector,
        seed: u64,
        noise: &(impl NoiseSource + ?Sized),
    ) -> Result<(ControlSequence, Diagnostics)> {
        let mut current = nominal.to_vec();
        let mut diagnostics = Diagnostics::default();
        for k in 0..self.params.iterations {
            let noise = noise.perturbations(seed, k as u64, self.params);
            let (next, d) = self.iterate(state, &current, &noise, map, projector)?;
            current = next;
            diagnostics = d;
        }
        Ok((current, diagnostics))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::BicycleModel;
    use crate::geometry::{CameraIntrinsics, CameraMount};

    fn params() -> MppiParams {
        MppiParams {
            num_samples: 64,
            horizon: 20,
            ..MppiParams::default()
        }
    }

    fn free_map() -> CostmapImage {
        CostmapImage::zeros(160, 128, Stage::Binary)
    }

    fn projector(state: &VehicleState) -> Projector {
        Projector::new(&CameraMount::default().pose_for(state), &CameraIntrinsics::default())
    }

    #[test]
    fn running_cost_spot_values() {
        let p = MppiParams::default();
        let free = free_map();
        let mut occupied = CostmapImage::zeros(160, 128, Stage::Binary);
        occupied.mark(10, 20);
        let on = PixelCoord::at_raster(10, 20, 160, 128);
        let off = PixelCoord::at_raster(11, 20, 160, 128);

        let cruising = VehicleState::default().with_speed(5.0);
        assert_eq!(running_cost(&cruising, &off, 3, &free, &p), 0.0);
        assert_eq!(running_cost(&VehicleState::default(), &off, 0, &free, &p), 45.0);
        assert_eq!(running_cost(&cruising, &on, 0, &occupied, &p), 0.9);
        assert_eq!(
            running_cost(&VehicleState::default(), &on, 0, &occupied, &p),
            45.0 + 0.9
        );
        let discounted = running_cost(&cruising, &on, 2, &occupied, &p);
        assert!((discounted - 0.99 * 0.99 * 0.9).abs() < 1e-15);
        assert_eq!(running_cost(&cruising, &PixelCoord::behind_camera(), 0, &occupied, &p), 0.0);
    }

    #[test]
    fn soft_indicator_on_blurred_maps() {
        let values = vec![0.25; 4];
        let blurred = CostmapImage::new(2, 2, values, Stage::Blurred).unwrap();
        let px = PixelCoord::at_raster(1, 1, 2, 2);
        assert_eq!(indicator(&blurred, &px), 0.25);
    }

    #[test]
    fn noise_is_deterministic_and_order_free() {
        let p = params();
        let a = sample_perturbations(7, 0, &p);
        let b = sample_perturbations(7, 0, &p);
        assert_eq!(a, b);
        assert_eq!(a[5], sample_noise(7, 0, 5, &p));
        assert_ne!(a, sample_perturbations(7, 1, &p));
        assert_ne!(a, sample_perturbations(8, 0, &p));
    }

    #[test]
    fn receding_horizon_shift() {
        let a = Control::new(0.1, 0.0);
        let b = Control::new(0.2, 0.1);
        let c = Control::new(0.3, -0.1);
        assert_eq!(receding_horizon_step(&[a, b, c]), vec![b, c, c]);
        assert_eq!(receding_horizon_step(&[a; 4]), vec![a; 4]);
        let mut seq = vec![a, b, c];
        for _ in 0..3 {
            seq = receding_horizon_step(&seq);
        }
        assert_eq!(seq, vec![c; 3]);
    }

    #[test]
    fn zero_noise_returns_clamped_nominal() {
        let p = params();
        let model = BicycleModel::default();
        let mppi = Mppi::new(&model, &p).unwrap();
        let state = VehicleState::at(0.0, 0.0, 0.0).with_speed(1.0);
        let nominal: Vec<Control> = (0..p.horizon)
            .map(|t| Control::new(1.5 - 0.1 * t as f64, -1.3 + 0.05 * t as f64))
            .collect();
        let zeros = vec![vec![Control::default(); p.horizon]; p.num_samples];
        let (out, d) = mppi
            .iterate(&state, &nominal, &zeros, &free_map(), &projector(&state))
            .unwrap();
        let clamped: Vec<Control> = nominal.iter().map(|u| u.clamped()).collect();
        for (a, b) in out.iter().zip(&clamped) {
            assert!((a.throttle - b.throttle).abs() < 1e-12);
            assert!((a.steering - b.steering).abs() < 1e-12);
        }
        assert!(d.degenerate);
        assert!((d.effective_sample_size - p.num_samples as f64).abs() < 1e-9);
    }

    #[test]
    fn cost_shift_leaves_weights_unchanged() {
        let costs = [3.0, 1.0, 7.5, 1.2];
        let shifted: Vec<f64> = costs.iter().map(|c| c + 1234.5).collect();
        let a = softmax_weights(&costs, 0.7).unwrap();
        let b = softmax_weights(&shifted, 0.7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_costs_get_zero_weight() {
        let w = softmax_weights(&[f64::NAN, 2.0, f64::INFINITY, 2.0], 1.0).unwrap();
        assert_eq!(w, vec![0.0, 0.5, 0.0, 0.5]);
        assert!(softmax_weights(&[f64::NAN, f64::NAN], 1.0).is_none());
    }

    #[test]
    fn rejects_wrong_nominal_length() {
        let p = params();
        let model = BicycleModel::default();
        let mppi = Mppi::new(&model, &p).unwrap();
        let state = VehicleState::default();
        let short = vec![Control::default(); 3];
        assert!(mppi
            .optimize(&state, &short, &free_map(), &projector(&state), 1)
            .is_err());
    }

    #[test]
    fn params_validation() {
        assert!(MppiParams::default().validate().is_ok());
        let bad = [
            MppiParams { horizon: 0, ..MppiParams::default() },
            MppiParams { dt: 0.0, ..MppiParams::default() },
            MppiParams { iterations: 0, ..MppiParams::default() },
            MppiParams { sigma_steer: 0.0, ..MppiParams::default() },
            MppiParams { lambda: -1.0, ..MppiParams::default() },
            MppiParams { num_samples: 1, ..MppiParams::default() },
            MppiParams { gamma: 1.5, ..MppiParams::default() },
            MppiParams { gamma: 0.0, ..MppiParams::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }
}
