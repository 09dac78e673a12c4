//! World -> robot -> camera -> film -> pixel projection.
//!
//! Frames: the world and robot frames are forward/right/down (z points into
//! the ground), so a vehicle with positive yaw rate turns from +x toward +y.
//! The camera frame is the usual computer-vision one (X right, Y down, Z along
//! the optic axis) and is reached from the robot frame by a cyclic axis
//! permutation. Film coordinates are raster column/row with the origin at the
//! top-left corner; the final `(u, v)` re-anchor the origin at the bottom
//! center of the image and swap the axes.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::VehicleState;
use crate::error::Error;

/// Camera-frame depth below which a point is treated as behind the camera.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Camera attitude (body -> world, Z-Y-X Euler) and position in world meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub position: Vector3<f64>,
}

impl CameraPose {
    pub fn new(roll: f64, pitch: f64, yaw: f64, position: Vector3<f64>) -> Self {
        Self {
            roll,
            pitch,
            yaw,
            position,
        }
    }

    /// Identity attitude at the world origin.
    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0, Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite()
            && self.pitch.is_finite()
            && self.yaw.is_finite()
            && self.position.iter().all(|c| c.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub focal_length: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub image_width: usize,
    pub image_height: usize,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            focal_length: 100.0,
            offset_x: 80.0,
            offset_y: 64.0,
            image_width: 160,
            image_height: 128,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        focal_length: f64,
        offset_x: f64,
        offset_y: f64,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self, Error> {
        let intrinsics = Self {
            focal_length,
            offset_x,
            offset_y,
            image_width,
            image_height,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let invalid = |field: &str, value: String| Error::invalid(field, value);
        if !(self.focal_length > 0.0 && self.focal_length.is_finite()) {
            return Err(invalid("focal_length", self.focal_length.to_string()));
        }
        if self.image_width == 0 {
            return Err(invalid("image_width", "0".into()));
        }
        if self.image_height == 0 {
            return Err(invalid("image_height", "0".into()));
        }
        if !(0.0..=self.image_width as f64).contains(&self.offset_x) {
            return Err(invalid("offset_x", self.offset_x.to_string()));
        }
        if !(0.0..=self.image_height as f64).contains(&self.offset_y) {
            return Err(invalid("offset_y", self.offset_y.to_string()));
        }
        Ok(())
    }

    fn contains_film(&self, film_x: f64, film_y: f64) -> bool {
        (0.0..self.image_width as f64).contains(&film_x)
            && (0.0..self.image_height as f64).contains(&film_y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Visibility {
    InFrame,
    OutOfFrame,
    /// Depth at or below [`DEPTH_EPSILON`]; no coordinates were computed.
    BehindCamera,
}

/// Projected point.
///
/// `u`, `v` are the bottom-center anchored coordinates; `film_x`, `film_y`
/// are the raster column/row the point falls on. For `BehindCamera` all four
/// are NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
    pub film_x: f64,
    pub film_y: f64,
    pub visibility: Visibility,
}

impl PixelCoord {
    pub fn behind_camera() -> Self {
        Self {
            u: f64::NAN,
            v: f64::NAN,
            film_x: f64::NAN,
            film_y: f64::NAN,
            visibility: Visibility::BehindCamera,
        }
    }

    /// An in-frame coordinate sitting exactly on raster cell `(col, row)` of
    /// a `width` x `height` image. Handy for direct map queries.
    pub fn at_raster(col: usize, row: usize, width: usize, height: usize) -> Self {
        let (film_x, film_y) = (col as f64, row as f64);
        let (u, v) = flip(film_x, film_y, width, height);
        let in_frame = col < width && row < height;
        Self {
            u,
            v,
            film_x,
            film_y,
            visibility: if in_frame {
                Visibility::InFrame
            } else {
                Visibility::OutOfFrame
            },
        }
    }

    pub fn in_frame(&self) -> bool {
        self.visibility == Visibility::InFrame
    }

    pub fn is_behind_camera(&self) -> bool {
        self.visibility == Visibility::BehindCamera
    }
}

/// `[u, v] = [w/2, h] - [v', u']`.
fn flip(film_x: f64, film_y: f64, width: usize, height: usize) -> (f64, f64) {
    (width as f64 / 2.0 - film_y, height as f64 - film_x)
}

/// `R = R_W R_V R_U`.
pub fn rotation_matrix(pose: &CameraPose) -> Matrix3<f64> {
    let (sr, cr) = pose.roll.sin_cos();
    let (sp, cp) = pose.pitch.sin_cos();
    let (sy, cy) = pose.yaw.sin_cos();
    #[rustfmt::skip]
    let r_u = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, cr, -sr,
        0.0, sr, cr,
    );
    #[rustfmt::skip]
    let r_v = Matrix3::new(
        cp, 0.0, sp,
        0.0, 1.0, 0.0,
        -sp, 0.0, cp,
    );
    #[rustfmt::skip]
    let r_w = Matrix3::new(
        cy, -sy, 0.0,
        sy, cy, 0.0,
        0.0, 0.0, 1.0,
    );
    r_w * r_v * r_u
}

/// Robot axes (forward, right, down) to camera axes (right, down, forward).
#[rustfmt::skip]
pub fn robot_to_camera() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
        1.0, 0.0, 0.0,
    )
}

/// Translate by the camera position, then rotate into the robot frame.
///
/// `rotation_matrix` is the body-to-world attitude, so the world-to-robot
/// rotation is its transpose.
pub fn world_to_robot(point: &Vector3<f64>, pose: &CameraPose) -> Vector3<f64> {
    rotation_matrix(pose).transpose() * (point - pose.position)
}

pub fn world_to_camera(point: &Vector3<f64>, pose: &CameraPose) -> Vector3<f64> {
    robot_to_camera() * world_to_robot(point, pose)
}

/// Perspective projection of a camera-frame point followed by the origin flip.
#[inline]
pub fn camera_to_pixel(camera: &Vector3<f64>, intrinsics: &CameraIntrinsics) -> PixelCoord {
    let depth = camera.z;
    if !(depth > DEPTH_EPSILON) {
        return PixelCoord::behind_camera();
    }
    let f = intrinsics.focal_length;
    let film_x = f * camera.x / depth + intrinsics.offset_x;
    let film_y = f * camera.y / depth + intrinsics.offset_y;
    let (u, v) = flip(
        film_x,
        film_y,
        intrinsics.image_width,
        intrinsics.image_height,
    );
    let visibility = if intrinsics.contains_film(film_x, film_y) {
        Visibility::InFrame
    } else {
        Visibility::OutOfFrame
    };
    PixelCoord {
        u,
        v,
        film_x,
        film_y,
        visibility,
    }
}

pub fn world_to_pixel(
    point: &Vector3<f64>,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
) -> PixelCoord {
    camera_to_pixel(&world_to_camera(point, pose), intrinsics)
}

/// Precomputed world -> camera transform for projecting many points from one
/// pose.
#[derive(Clone, Copy, Debug)]
pub struct Projector {
    world_to_camera: Matrix3<f64>,
    origin: Vector3<f64>,
    intrinsics: CameraIntrinsics,
}

impl Projector {
    pub fn new(pose: &CameraPose, intrinsics: &CameraIntrinsics) -> Self {
        Self {
            world_to_camera: robot_to_camera() * rotation_matrix(pose).transpose(),
            origin: pose.position,
            intrinsics: *intrinsics,
        }
    }

    pub fn project(&self, point: &Vector3<f64>) -> PixelCoord {
        camera_to_pixel(&(self.world_to_camera * (point - self.origin)), &self.intrinsics)
    }

    /// Projects a planar world position lifted onto the ground plane.
    #[inline]
    pub fn project_ground(&self, x: f64, y: f64) -> PixelCoord {
        let d = [x - self.origin.x, y - self.origin.y, -self.origin.z];
        let m = &self.world_to_camera;
        let row = |i: usize| m[(i, 0)] * d[0] + m[(i, 1)] * d[1] + m[(i, 2)] * d[2];
        camera_to_pixel(&Vector3::new(row(0), row(1), row(2)), &self.intrinsics)
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }
}

/// How the camera is attached to the vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraMount {
    /// Height of the optical center above the ground, meters.
    pub height: f64,
    /// Mounting pitch in radians; negative tilts the optic axis toward the
    /// ground.
    pub pitch: f64,
    /// Feed the vehicle roll into the camera pose.
    pub use_vehicle_roll: bool,
}

impl Default for CameraMount {
    fn default() -> Self {
        Self {
            height: 0.3,
            pitch: (-10.0f64).to_radians(),
            use_vehicle_roll: false,
        }
    }
}

impl CameraMount {
    pub fn pose_for(&self, state: &VehicleState) -> CameraPose {
        let roll = if self.use_vehicle_roll { state.roll } else { 0.0 };
        CameraPose::new(
            roll,
            self.pitch,
            state.yaw,
            Vector3::new(state.x, state.y, -self.height),
        )
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.height.is_finite() && self.height > 0.0) {
            return Err(Error::invalid("camera.height", self.height));
        }
        if !self.pitch.is_finite() {
            return Err(Error::invalid("camera.pitch", self.pitch));
        }
        Ok(())
    }
}

/// Projects each state's ground position into the camera frame fixed at
/// `pose`. Output is index-aligned with `states`.
pub fn project_trajectory(
    states: &[VehicleState],
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
) -> Vec<PixelCoord> {
    let projector = Projector::new(pose, intrinsics);
    states
        .iter()
        .map(|s| projector.project_ground(s.x, s.y))
        .collect()
}
