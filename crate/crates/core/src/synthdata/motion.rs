//! Gesture kinematics: a motion shared by every class, plus a class-specific
//! arm movement weighted by a Gaussian envelope centred on the class peak.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::skeleton::{assemble, Pose3, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arms {
    Left,
    Right,
    Both,
}

/// Arm pose offsets are in radians: `elevation` lifts the upper arm away from
/// hanging (π/2 is horizontal), `azimuth` turns it from straight ahead towards
/// the side, `elbow` flexes the forearm further.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureClassSpec {
    pub class_id: usize,
    pub name: String,
    pub arms: Arms,
    pub elevation: f64,
    pub azimuth: f64,
    pub elbow: f64,
    pub peak_time_fraction: f64,
    /// Standard deviation of the envelope, in frames.
    pub divergence_width: f64,
}

const BASE_CLASSES: [(&str, Arms, f64, f64, f64); 6] = [
    ("RaiseRight", Arms::Right, 1.9, 0.2, 0.3),
    ("WaveRightSide", Arms::Right, 1.5, 1.4, 0.9),
    ("RaiseLeft", Arms::Left, 1.9, 0.2, 0.3),
    ("WaveLeftSide", Arms::Left, 1.5, 1.4, 0.9),
    ("PushBoth", Arms::Both, 1.4, 0.0, -0.2),
    ("SpreadBoth", Arms::Both, 1.5, 1.5, 0.2),
];

/// Class table. The first six are hand-designed; further classes reuse the
/// arm groups with rotated azimuths so any count up to 15 stays distinct.
pub fn class_specs(num_classes: usize, divergence_width: f64) -> Vec<GestureClassSpec> {
    (0..num_classes)
        .map(|c| {
            let (name, arms, elevation, azimuth, elbow) = if c < BASE_CLASSES.len() {
                let (n, a, e, z, w) = BASE_CLASSES[c];
                (n.to_string(), a, e, z, w)
            } else {
                let arms = [Arms::Right, Arms::Left, Arms::Both][c % 3];
                let round = (c - BASE_CLASSES.len()) / 3 + 1;
                (format!("Gesture{c}"), arms, 1.2 + 0.25 * round as f64, 0.7 + 0.35 * round as f64, 0.6 - 0.3 * round as f64)
            };
            GestureClassSpec {
                class_id: c,
                name,
                arms,
                elevation,
                azimuth,
                elbow,
                peak_time_fraction: 0.6 + 0.15 * ((c * 3) % 5) as f64 / 4.0,
                divergence_width,
            }
        })
        .collect()
}

/// Per-sequence variation that is independent of the class.
#[derive(Debug, Clone, PartialEq)]
pub struct Nuisance {
    pub scale: f64,
    pub yaw: f64,
    pub root: [f64; 2],
    pub amplitude: f64,
    pub peak_shift: f64,
    pub tempo: f64,
    pub sway: [f64; 3],
    pub idle: [f64; 3],
}

impl Nuisance {
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Self {
            scale: rng.random_range(0.92..1.08),
            yaw: rng.random_range(-0.35..0.35),
            root: [rng.random_range(-120.0..120.0), rng.random_range(-120.0..120.0)],
            amplitude: rng.random_range(0.85..1.15),
            peak_shift: rng.random_range(-MAX_PEAK_SHIFT..MAX_PEAK_SHIFT),
            tempo: rng.random_range(0.9..1.1),
            sway: [rng.random_range(0.02..0.06), rng.random_range(40.0..80.0), rng.random_range(0.0..2.0 * PI)],
            idle: [rng.random_range(0.02..0.06), rng.random_range(20.0..40.0), rng.random_range(0.0..2.0 * PI)],
        }
    }

    /// No variation at all; used for class-mean reasoning in tests.
    pub fn neutral() -> Self {
        Self {
            scale: 1.0,
            yaw: 0.0,
            root: [0.0, 0.0],
            amplitude: 1.0,
            peak_shift: 0.0,
            tempo: 1.0,
            sway: [0.0, 60.0, 0.0],
            idle: [0.0, 30.0, 0.0],
        }
    }
}

/// Largest per-sequence shift of the class peak, in frames.
pub const MAX_PEAK_SHIFT: f64 = 3.0;

/// Shortest sequence length at which no class diverges from the shared
/// motion before `frame` (divergence taken as `peak - 3 * width`).
pub fn length_for_onset(num_classes: usize, divergence_width: f64, frame: usize) -> usize {
    let earliest = class_specs(num_classes, divergence_width)
        .iter()
        .map(|c| c.peak_time_fraction)
        .fold(f64::INFINITY, f64::min);
    ((frame as f64 + MAX_PEAK_SHIFT + 3.0 * divergence_width) / earliest).ceil() as usize + 1
}

/// Mean per-joint distance (mm) below which two classes count as
/// indistinguishable, checked on frames before `peak - 3 * divergence_width`.
pub const AMBIGUITY_THRESHOLD_MM: f64 = 25.0;
/// Mean per-joint distance (mm) every pair of classes exceeds at their peaks.
pub const SEPARATION_THRESHOLD_MM: f64 = 40.0;

pub fn mean_joint_distance(a: &Pose3, b: &Pose3) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
        .sum::<f64>()
        / NUM_JOINTS as f64
}

pub fn envelope(t: f64, peak: f64, width: f64) -> f64 {
    (-(t - peak).powi(2) / (2.0 * width * width)).exp()
}

pub fn peak_frame(spec: &GestureClassSpec, length: usize, nuisance: &Nuisance) -> usize {
    let p = spec.peak_time_fraction * length as f64 + nuisance.peak_shift;
    (p.round().max(0.0) as usize).min(length.saturating_sub(1))
}

fn arm_direction(elevation: f64, azimuth: f64, outward: f64) -> [f64; 3] {
    [
        outward * elevation.sin() * azimuth.sin(),
        -elevation.cos(),
        elevation.sin() * azimuth.cos(),
    ]
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// World-space pose at frame `t` (y up, subject facing +z, left is +x).
pub fn pose_at(spec: &GestureClassSpec, t: f64, length: usize, peak: usize, nz: &Nuisance) -> Pose3 {
    let progress = smoothstep(t * nz.tempo / (0.25 * length as f64));
    // Shared motion: both forearms come up and the arms lift slightly.
    let shared_elev = 0.15 + 0.35 * progress;
    let shared_elbow = 0.1 + 0.9 * progress;
    let idle = nz.idle[0] * (2.0 * PI * t / nz.idle[1] + nz.idle[2]).sin();
    let sway = nz.sway[0] * (2.0 * PI * t / nz.sway[1] + nz.sway[2]).sin();

    let e = envelope(t, peak as f64, spec.divergence_width) * nz.amplitude;
    let active = |left: bool| match spec.arms {
        Arms::Both => true,
        Arms::Left => left,
        Arms::Right => !left,
    };
    let arm = |left: bool| {
        let (de, dz, dw) = if active(left) {
            (spec.elevation * e, spec.azimuth * e, spec.elbow * e)
        } else {
            (0.0, 0.0, 0.0)
        };
        let elev = shared_elev + idle * if left { 1.0 } else { -1.0 } + de;
        let azim = 0.15 + dz;
        let outward = if left { 1.0 } else { -1.0 };
        (
            arm_direction(elev, azim, outward),
            arm_direction(elev + shared_elbow + dw, azim, outward),
        )
    };

    let mut d = [[0.0; 3]; NUM_JOINTS];
    d[1] = [-1.0, 0.0, 0.0];
    d[2] = [0.0, -1.0, 0.05];
    d[3] = [0.0, -1.0, -0.05];
    d[4] = [1.0, 0.0, 0.0];
    d[5] = [0.0, -1.0, 0.05];
    d[6] = [0.0, -1.0, -0.05];
    d[7] = [sway * 0.5, 1.0, sway];
    d[8] = [sway * 0.5, 1.0, sway];
    d[9] = [0.0, 1.0, 0.15];
    d[10] = [0.0, 1.0, 0.0];
    d[11] = [1.0, 0.0, 0.0];
    d[14] = [-1.0, 0.0, 0.0];
    let (lu, lf) = arm(true);
    let (ru, rf) = arm(false);
    d[12] = lu;
    d[13] = lf;
    d[15] = ru;
    d[16] = rf;

    let pelvis_height = 950.0 * nz.scale;
    let local = assemble([0.0, pelvis_height, 0.0], &d, nz.scale);
    let (s, c) = nz.yaw.sin_cos();
    local.map(|p| [c * p[0] + s * p[2] + nz.root[0], p[1], -s * p[0] + c * p[2] + nz.root[1]])
}

pub fn simulate(spec: &GestureClassSpec, length: usize, nz: &Nuisance) -> (Vec<Pose3>, usize) {
    let peak = peak_frame(spec, length, nz);
    let poses = (0..length).map(|t| pose_at(spec, t as f64, length, peak, nz)).collect();
    (poses, peak)
}
