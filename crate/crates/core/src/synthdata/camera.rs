//! Pinhole cameras placed on a ring around the subject.

use std::f64::consts::PI;

use super::skeleton::{normalize, Pose3};

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub focal: f64,
    pub center: [f64; 2],
    /// Rows are the camera's right, down and forward axes in world space.
    pub rotation: [[f64; 3]; 3],
    pub position: [f64; 3],
    pub image_size: usize,
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub const RING_RADIUS: f64 = 4500.0;
pub const RING_HEIGHT: f64 = 1300.0;
pub const LOOK_AT: [f64; 3] = [0.0, 1000.0, 0.0];

impl CameraModel {
    pub fn look_at(position: [f64; 3], target: [f64; 3], focal: f64, image_size: usize) -> Self {
        let forward = normalize([
            target[0] - position[0],
            target[1] - position[1],
            target[2] - position[2],
        ]);
        let right = normalize(cross([0.0, 1.0, 0.0], forward));
        let down = cross(right, forward);
        let half = image_size as f64 / 2.0;
        Self {
            focal,
            center: [half, half],
            rotation: [right, down, forward],
            position,
            image_size,
        }
    }

    /// Camera `index` of `count`, spaced evenly on the ring starting 45° off
    /// the subject's facing direction.
    pub fn ring(index: usize, count: usize, image_size: usize) -> Self {
        let angle = PI / 4.0 + 2.0 * PI * index as f64 / count.max(1) as f64;
        let position = [RING_RADIUS * angle.sin(), RING_HEIGHT, RING_RADIUS * angle.cos()];
        Self::look_at(position, LOOK_AT, 1.75 * image_size as f64, image_size)
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.position[0], p[1] - self.position[1], p[2] - self.position[2]];
        self.rotation.map(|r| r[0] * d[0] + r[1] * d[1] + r[2] * d[2])
    }

    pub fn pose_to_camera(&self, pose: &Pose3) -> Pose3 {
        pose.map(|p| self.to_camera(p))
    }
}

/// Pinhole projection of a camera-space point to pixel coordinates
/// (continuous; pixel `i` spans `[i, i + 1)`).
pub fn project_point(camera: &CameraModel, p: [f64; 3]) -> [f64; 2] {
    [
        camera.focal * p[0] / p[2] + camera.center[0],
        camera.focal * p[1] / p[2] + camera.center[1],
    ]
}

pub fn project_camera(pose: &Pose3, camera: &CameraModel) -> Vec<[f64; 2]> {
    pose.iter().map(|&p| project_point(camera, p)).collect()
}
