//! Synthetic closed-loop driving: track corridors, a first-person boundary
//! renderer standing in for the activation costmap, crash detection and the
//! render -> optimize -> step loop.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use crate::costmap::{gaussian_blur_3x3, CostmapImage, Stage};
use crate::dynamics::{Control, DynamicsModel, VehicleState};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraMount, PixelCoord, Projector};
use crate::mppi::{
    receding_horizon_step, Diagnostics, GaussianNoise, Mppi, MppiParams, NoiseSource,
};

/// Maximum spacing between rendered boundary samples, meters.
pub const BOUNDARY_SPACING: f64 = 0.05;

/// Distance before the end of an open course that counts as finishing it.
pub const FINISH_MARGIN: f64 = 1.0;

/// Corridor around a centerline polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackWorld {
    centerline: Vec<[f64; 2]>,
    half_widths: Vec<f64>,
    closed: bool,
    /// Arc length at each vertex.
    arc: Vec<f64>,
    length: f64,
    boundary_samples: Vec<[f64; 2]>,
}

/// Closest point on the centerline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackLocation {
    /// Arc-length coordinate of the closest centerline point.
    pub arc: f64,
    /// Unsigned distance to the centerline.
    pub distance: f64,
    pub half_width: f64,
}

impl TrackWorld {
    pub fn new(centerline: Vec<[f64; 2]>, half_widths: Vec<f64>, closed: bool) -> Result<Self> {
        if centerline.len() < 3 {
            return Err(Error::invalid("track.centerline", format!("{} points", centerline.len())));
        }
        if half_widths.len() != centerline.len() {
            return Err(Error::invalid(
                "track.half_widths",
                format!("{} widths for {} points", half_widths.len(), centerline.len()),
            ));
        }
        if let Some(w) = half_widths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("track.half_width", w));
        }
        if centerline.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("track.centerline", "non-finite point"));
        }
        let mut world = Self {
            centerline,
            half_widths,
            closed,
            arc: Vec::new(),
            length: 0.0,
            boundary_samples: Vec::new(),
        };
        let mut arc = Vec::with_capacity(world.centerline.len());
        let mut total = 0.0;
        for i in 0..world.centerline.len() {
            arc.push(total);
            if let Some((a, b)) = world.segment(i) {
                total += dist(a, b);
            }
        }
        if world.segments().any(|i| {
            let (a, b) = world.segment(i).unwrap();
            dist(a, b) == 0.0
        }) {
            return Err(Error::invalid("track.centerline", "repeated point"));
        }
        world.arc = arc;
        world.length = total;
        world.boundary_samples = world
            .boundaries()
            .iter()
            .flat_map(|line| densify(line, BOUNDARY_SPACING))
            .collect();
        Ok(world)
    }

    pub fn centerline(&self) -> &[[f64; 2]] {
        &self.centerline
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Centerline length (including the closing segment of a loop).
    pub fn length(&self) -> f64 {
        self.length
    }

    fn segment_count(&self) -> usize {
        if self.closed {
            self.centerline.len()
        } else {
            self.centerline.len() - 1
        }
    }

    fn segments(&self) -> std::ops::Range<usize> {
        0..self.segment_count()
    }

    fn segment(&self, i: usize) -> Option<([f64; 2], [f64; 2])> {
        if i >= self.segment_count() {
            return None;
        }
        let j = (i + 1) % self.centerline.len();
        Some((self.centerline[i], self.centerline[j]))
    }

    /// Unit tangent of segment `i`.
    fn tangent(&self, i: usize) -> [f64; 2] {
        let (a, b) = self.segment(i).expect("segment index");
        let d = dist(a, b);
        [(b[0] - a[0]) / d, (b[1] - a[1]) / d]
    }

    /// Miter offset direction at vertex `i`, scaled so the offset keeps the
    /// corridor width on both adjacent segments.
    fn vertex_normal(&self, i: usize) -> [f64; 2] {
        let n = self.centerline.len();
        let incoming = if i > 0 {
            Some(self.tangent(i - 1))
        } else if self.closed {
            Some(self.tangent(n - 1))
        } else {
            None
        };
        let outgoing = if i < self.segment_count() {
            Some(self.tangent(i))
        } else {
            None
        };
        let t = match (incoming, outgoing) {
            (Some(a), Some(b)) => {
                let s = [a[0] + b[0], a[1] + b[1]];
                let len = s[0].hypot(s[1]);
                if len < 1e-9 {
                    b
                } else {
                    [s[0] / len, s[1] / len]
                }
            }
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("track has at least one segment"),
        };
        let normal = [-t[1], t[0]];
        let cos_half = match outgoing {
            Some(b) => (normal[0] * -b[1] + normal[1] * b[0]).max(0.5),
            None => 1.0,
        };
        [normal[0] / cos_half, normal[1] / cos_half]
    }

    /// The two boundary polylines. Loops repeat their first point at the end.
    pub fn boundaries(&self) -> Vec<Vec<[f64; 2]>> {
        let mut sides = vec![Vec::new(), Vec::new()];
        for (i, (c, w)) in self.centerline.iter().zip(&self.half_widths).enumerate() {
            let n = self.vertex_normal(i);
            sides[0].push([c[0] + w * n[0], c[1] + w * n[1]]);
            sides[1].push([c[0] - w * n[0], c[1] - w * n[1]]);
        }
        if self.closed {
            for side in &mut sides {
                let first = side[0];
                side.push(first);
            }
        }
        sides
    }

    /// Rendered boundary points (spacing at most [`BOUNDARY_SPACING`]).
    pub fn boundary_samples(&self) -> &[[f64; 2]] {
        &self.boundary_samples
    }

    pub fn locate(&self, x: f64, y: f64) -> TrackLocation {
        let mut best = TrackLocation {
            arc: 0.0,
            distance: f64::INFINITY,
            half_width: self.half_widths[0],
        };
        for i in self.segments() {
            let (a, b) = self.segment(i).unwrap();
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len2 = dx * dx + dy * dy;
            let t = (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let (px, py) = (a[0] + t * dx, a[1] + t * dy);
            let d = (x - px).hypot(y - py);
            if d < best.distance {
                let j = (i + 1) % self.centerline.len();
                best = TrackLocation {
                    arc: self.arc[i] + t * len2.sqrt(),
                    distance: d,
                    half_width: self.half_widths[i] + t * (self.half_widths[j] - self.half_widths[i]),
                };
            }
        }
        best
    }

    /// At rest on the first centerline point, facing along the track.
    pub fn start_state(&self) -> VehicleState {
        let t = self.tangent(0);
        let c = self.centerline[0];
        VehicleState::at(c[0], c[1], t[1].atan2(t[0]))
    }

    /// Shoelace area enclosed by the centerline. Positive when the loop turns
    /// from +x toward +y, which is clockwise seen from above since z points
    /// down. Open courses are closed implicitly.
    pub fn signed_area(&self) -> f64 {
        let n = self.centerline.len();
        (0..n)
            .map(|i| {
                let a = self.centerline[i];
                let b = self.centerline[(i + 1) % n];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            / 2.0
    }

    /// Same corridor driven the other way round.
    pub fn reversed(&self) -> Self {
        let mut centerline = self.centerline.clone();
        let mut half_widths = self.half_widths.clone();
        centerline.reverse();
        half_widths.reverse();
        if self.closed {
            // keep the same start point
            centerline.rotate_right(1);
            half_widths.rotate_right(1);
        }
        Self::new(centerline, half_widths, self.closed).expect("reversal keeps a valid track")
    }

    /// Reflection across the world x-axis.
    pub fn mirrored(&self) -> Self {
        let centerline = self.centerline.iter().map(|p| [p[0], -p[1]]).collect();
        Self::new(centerline, self.half_widths.clone(), self.closed).expect("mirror keeps a valid track")
    }

    /// Parses the track fixture format:
    ///
    /// ```text
    /// AIRL-TRACK 1
    /// closed <true|false>
    /// <x> <y> <half_width>
    /// ...
    /// ```
    ///
    /// Blank lines and lines starting with `#` are ignored.
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
            Some((_, "AIRL-TRACK 1")) => {}
            Some((offset, other)) => return Err(err(offset, format!("bad header `{other}`"))),
            None => return Err(err(0, "empty track file".into())),
        }
        let closed = match lines.next() {
            Some((_, "closed true")) => true,
            Some((_, "closed false")) => false,
            Some((offset, other)) => {
                return Err(err(offset, format!("expected `closed true|false`, got `{other}`")))
            }
            None => return Err(err(text.len(), "missing `closed` line".into())),
        };
        let mut centerline = Vec::new();
        let mut half_widths = Vec::new();
        for (offset, line) in lines {
            let values: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            match values {
                Ok(v) if v.len() == 3 => {
                    centerline.push([v[0], v[1]]);
                    half_widths.push(v[2]);
                }
                _ => return Err(err(offset, format!("bad point row `{line}`"))),
            }
        }
        Self::new(centerline, half_widths, closed)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("AIRL-TRACK 1\nclosed {}\n# x y half_width\n", self.closed);
        for (p, w) in self.centerline.iter().zip(&self.half_widths) {
            out.push_str(&format!("{} {} {}\n", p[0], p[1], w));
        }
        out
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Points along `line` with spacing at most `spacing`, endpoints included.
fn densify(line: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for pair in line.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let n = (dist(a, b) / spacing).ceil().max(1.0) as usize;
        for k in 0..n {
            let t = k as f64 / n as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    if let Some(last) = line.last() {
        out.push(*last);
    }
    out
}

/// Built-in track fixtures.
pub mod fixtures {
    use super::*;

    /// Straight open corridor along +x.
    pub fn straight(length: f64, half_width: f64) -> TrackWorld {
        let n = length.ceil() as usize;
        let centerline = (0..=n).map(|i| [length * i as f64 / n as f64, 0.0]).collect();
        TrackWorld::new(centerline, vec![half_width; n + 1], false).unwrap()
    }

    /// Stadium loop: two straights joined by semicircles, driven
    /// counter-clockwise in the x-y plane starting mid-straight.
    pub fn oval(straight: f64, radius: f64, half_width: f64) -> TrackWorld {
        let spacing = 0.5;
        let mut pts = Vec::new();
        let half = straight / 2.0;
        let push_line = |pts: &mut Vec<[f64; 2]>, a: [f64; 2], b: [f64; 2]| {
            let n = (dist(a, b) / spacing).ceil() as usize;
            for k in 0..n {
                let t = k as f64 / n as f64;
                pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        };
        let push_arc = |pts: &mut Vec<[f64; 2]>, center: [f64; 2], from: f64| {
            let n = (PI * radius / spacing).ceil() as usize;
            for k in 0..n {
                let th = from + PI * k as f64 / n as f64;
                pts.push([center[0] + radius * th.cos(), center[1] + radius * th.sin()]);
            }
        };
        push_line(&mut pts, [0.0, -radius], [half, -radius]);
        push_arc(&mut pts, [half, 0.0], -PI / 2.0);
        push_line(&mut pts, [half, radius], [-half, radius]);
        push_arc(&mut pts, [-half, 0.0], PI / 2.0);
        push_line(&mut pts, [-half, -radius], [0.0, -radius]);
        let n = pts.len();
        TrackWorld::new(pts, vec![half_width; n], true).unwrap()
    }

    /// Closed loop with alternating tight and gentle bends:
    /// `r(theta) = base + wobble * cos(lobes * theta)`.
    pub fn complex_loop(base: f64, wobble: f64, lobes: u32, half_width: f64) -> TrackWorld {
        let n = ((TAU * (base + wobble)) / 0.4).ceil() as usize;
        let centerline = (0..n)
            .map(|k| {
                let th = TAU * k as f64 / n as f64 - PI / 2.0;
                let r = base + wobble * (lobes as f64 * (th + PI / 2.0)).cos();
                [r * th.cos(), r * th.sin()]
            })
            .collect();
        TrackWorld::new(centerline, vec![half_width; n], true).unwrap()
    }

    /// Open zigzag lane along +x about `length` meters of centerline, with
    /// width oscillating between `min_width` and `max_width`.
    pub fn zigzag(length: f64, amplitude: f64, wavelength: f64, min_width: f64, max_width: f64) -> TrackWorld {
        let step = 0.25;
        let mut centerline = vec![[0.0, 0.0]];
        let mut half_widths = Vec::new();
        let mut arc = 0.0;
        let mut x = 0.0f64;
        let lane = |x: f64| amplitude * (TAU * x / wavelength).sin();
        let width = |s: f64| {
            let mid = 0.5 * (min_width + max_width);
            let amp = 0.5 * (max_width - min_width);
            mid + amp * (TAU * s / (0.75 * wavelength)).cos()
        };
        half_widths.push(0.5 * width(0.0));
        while arc < length {
            let prev = *centerline.last().unwrap();
            // advance x so that the chord is about `step` long
            let slope = amplitude * TAU / wavelength * (TAU * x / wavelength).cos();
            x += step / (1.0 + slope * slope).sqrt();
            let p = [x, lane(x)];
            arc += dist(prev, p);
            centerline.push(p);
            half_widths.push(0.5 * width(arc));
        }
        TrackWorld::new(centerline, half_widths, false).unwrap()
    }

    /// Default corridor used by tests: 40 m long, 3 m wide.
    pub fn default_straight() -> TrackWorld {
        straight(40.0, 1.5)
    }

    /// Default loop: 8 m straights, 5 m radius bends, 3 m wide.
    pub fn default_oval() -> TrackWorld {
        oval(8.0, 5.0, 1.5)
    }

    pub fn default_complex() -> TrackWorld {
        complex_loop(14.0, 3.0, 3, 1.5)
    }

    /// 30 m narrow lane, width between 0.5 m and 1.5 m.
    pub fn default_zigzag() -> TrackWorld {
        zigzag(30.0, 1.0, 12.0, 0.5, 1.5)
    }

    /// Rows of the wall band in `myopia_costmap`.
    pub const MYOPIA_WALL_ROWS: std::ops::RangeInclusive<usize> = 46..=49;

    /// A dead end drawn as a wall across the full image width just below
    /// the horizon. With the default camera these rows are ground more than
    /// 10 m ahead, beyond anything a one-horizon rollout reaches at cruise,
    /// so the map cannot tell a left turn from a right one.
    pub fn myopia_costmap() -> CostmapImage {
        let intrinsics = CameraIntrinsics::default();
        let mut map = CostmapImage::zeros(intrinsics.image_width, intrinsics.image_height, Stage::Binary);
        for row in MYOPIA_WALL_ROWS {
            for col in 0..intrinsics.image_width {
                map.mark(col, row);
            }
        }
        map
    }

    /// Controller settings for the myopia scenario. At the default
    /// temperature the throttle noise alone spreads the speed cost by a few
    /// units, which keeps the effective sample size near 0.6 of the samples
    /// even when the map contributes nothing.
    pub fn myopia_params() -> MppiParams {
        MppiParams {
            lambda: 3.0,
            ..MppiParams::default()
        }
    }

    /// Cruising at the desired speed with the equilibrium throttle.
    pub fn myopia_state() -> (VehicleState, Control) {
        let p = crate::dynamics::BicycleParams::default();
        let v = crate::mppi::MppiParams::default().v_desired;
        (VehicleState::default().with_speed(v), Control::new(p.drag * v / p.max_accel, 0.0))
    }
}

/// Draws world polylines as seen from the vehicle camera. Every in-frame
/// sample marks its pixel and the 8-neighbourhood.
pub fn render_points(
    state: &VehicleState,
    points: &[[f64; 2]],
    mount: &CameraMount,
    intrinsics: &CameraIntrinsics,
) -> CostmapImage {
    let mut map = CostmapImage::zeros(intrinsics.image_width, intrinsics.image_height, Stage::Binary);
    let projector = Projector::new(&mount.pose_for(state), intrinsics);
    let (w, h) = (intrinsics.image_width as i64, intrinsics.image_height as i64);
    for p in points {
        let px = projector.project_ground(p[0], p[1]);
        if !px.in_frame() {
            continue;
        }
        let (col, row) = (px.film_x.round() as i64, px.film_y.round() as i64);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (c, r) = (col + dc, row + dr);
                if (0..w).contains(&c) && (0..h).contains(&r) {
                    map.mark(c as usize, r as usize);
                }
            }
        }
    }
    map
}

/// Driver-view binary costmap of the track boundaries.
pub fn render_costmap(
    state: &VehicleState,
    world: &TrackWorld,
    mount: &CameraMount,
    intrinsics: &CameraIntrinsics,
) -> CostmapImage {
    render_points(state, world.boundary_samples(), mount, intrinsics)
}

/// Outside the corridor (boundary inclusive counts as inside).
pub fn crash_check(state: &VehicleState, world: &TrackWorld) -> bool {
    let loc = world.locate(state.x, state.y);
    loc.distance > loc.half_width
}

/// Arc-length progress accumulated step by step, wrap-aware on loops.
#[derive(Clone, Copy, Debug)]
pub struct ProgressTracker {
    last_arc: f64,
    progress: f64,
    length: f64,
    closed: bool,
}

impl ProgressTracker {
    pub fn new(world: &TrackWorld, start: &VehicleState) -> Self {
        Self {
            last_arc: world.locate(start.x, start.y).arc,
            progress: 0.0,
            length: world.length(),
            closed: world.is_closed(),
        }
    }

    pub fn update(&mut self, arc: f64) -> f64 {
        let mut delta = arc - self.last_arc;
        if self.closed {
            if delta > self.length / 2.0 {
                delta -= self.length;
            } else if delta < -self.length / 2.0 {
                delta += self.length;
            }
        }
        self.progress += delta;
        self.last_arc = arc;
        self.progress
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn last_arc(&self) -> f64 {
        self.last_arc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Crashed,
    LapTarget,
    CourseEnd,
    MaxSteps,
    Diverged,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Crashed => "crashed",
            Termination::LapTarget => "lap_target",
            Termination::CourseEnd => "course_end",
            Termination::MaxSteps => "max_steps",
            Termination::Diverged => "diverged",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub diagnostics: Diagnostics,
    pub state: VehicleState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    /// Path length driven (odometer), meters.
    pub distance_traveled: f64,
    /// Signed arc-length progress along the centerline, meters.
    pub progress: f64,
    pub laps_completed: f64,
    pub crashed: bool,
    pub steps: usize,
    pub mean_speed: f64,
    pub termination: Termination,
    /// Vehicle states after every step.
    pub trajectory: Vec<VehicleState>,
    pub step_log: Vec<StepRecord>,
}

/// What a frame observer sees each control cycle.
pub struct FrameView<'a> {
    pub step: usize,
    pub state: &'a VehicleState,
    pub costmap: &'a CostmapImage,
    /// Planned trajectory in the current image.
    pub planned_pixels: &'a [PixelCoord],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSettings {
    pub mount: CameraMount,
    pub intrinsics: CameraIntrinsics,
    pub max_steps: usize,
    /// Laps to finish on a loop; ignored on open courses.
    pub lap_target: f64,
    /// Blur the rendered map before optimizing.
    pub blur: bool,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            mount: CameraMount::default(),
            intrinsics: CameraIntrinsics::default(),
            max_steps: 3000,
            lap_target: 1.0,
            blur: false,
        }
    }
}

/// splitmix64 finalizer.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise seed for control cycle `step` of an episode seeded with `seed`.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    mix_seed(seed ^ mix_seed(step as u64))
}

pub fn run_episode<M: DynamicsModel + Sync + ?Sized>(
    world: &TrackWorld,
    start: &VehicleState,
    params: &MppiParams,
    model: &M,
    seed: u64,
    settings: &EpisodeSettings,
) -> Result<EpisodeResult> {
    run_episode_with(world, start, params, model, seed, settings, &GaussianNoise, None)
}

#[allow(clippy::too_many_arguments)]
pub fn run_episode_with<M: DynamicsModel + Sync + ?Sized>(
    world: &TrackWorld,
    start: &VehicleState,
    params: &MppiParams,
    model: &M,
    seed: u64,
    settings: &EpisodeSettings,
    noise: &(dyn NoiseSource + Sync),
    mut observer: Option<&mut dyn FnMut(&FrameView<'_>)>,
) -> Result<EpisodeResult> {
    if settings.max_steps == 0 {
        return Err(Error::invalid("max_steps", 0));
    }
    let mppi = Mppi::new(model, params)?;
    let mut state = *start;
    let mut nominal = vec![Control::default(); params.horizon];
    let mut tracker = ProgressTracker::new(world, &state);
    let mut odometer = 0.0;
    let mut trajectory = Vec::new();
    let mut step_log = Vec::new();
    let mut termination = Termination::MaxSteps;

    for step in 0..settings.max_steps {
        let rendered = render_costmap(&state, world, &settings.mount, &settings.intrinsics);
        let map = if settings.blur {
            gaussian_blur_3x3(&rendered)?
        } else {
            rendered
        };
        let projector = Projector::new(&settings.mount.pose_for(&state), &settings.intrinsics);
        let (plan, diagnostics) =
            mppi.optimize_with(&state, &nominal, &map, &projector, step_seed(seed, step), noise)?;

        if let Some(obs) = observer.as_deref_mut() {
            let planned = mppi.evaluate(&state, &plan, &vec![Control::default(); plan.len()], &map, &projector)?;
            obs(&FrameView {
                step,
                state: &state,
                costmap: &map,
                planned_pixels: &planned.pixels,
            });
        }

        let next = model.step(&state, &plan[0], params.dt)?;
        step_log.push(StepRecord {
            step,
            diagnostics,
            state: next,
        });
        if !next.is_finite() {
            termination = Termination::Diverged;
            break;
        }
        odometer += (next.x - state.x).hypot(next.y - state.y);
        state = next;
        trajectory.push(state);
        let loc = world.locate(state.x, state.y);
        tracker.update(loc.arc);
        nominal = receding_horizon_step(&plan);

        if loc.distance > loc.half_width {
            termination = Termination::Crashed;
            break;
        }
        if world.is_closed() {
            if tracker.progress() >= settings.lap_target * world.length() {
                termination = Termination::LapTarget;
                break;
            }
        } else if loc.arc >= world.length() - FINISH_MARGIN {
            termination = Termination::CourseEnd;
            break;
        }
    }

    let steps = step_log.len();
    let laps_completed = if world.is_closed() {
        (tracker.progress().max(0.0) / world.length()).floor()
    } else {
        0.0
    };
    Ok(EpisodeResult {
        distance_traveled: odometer,
        progress: tracker.progress(),
        laps_completed,
        crashed: termination == Termination::Crashed,
        steps,
        mean_speed: odometer / (steps as f64 * params.dt),
        termination,
        trajectory,
        step_log,
    })
}
