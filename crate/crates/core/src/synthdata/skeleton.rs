//! 17-joint pelvis-rooted kinematic tree in the Human3.6M joint order.

pub const NUM_JOINTS: usize = 17;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "spine", "thorax",
    "neck", "head", "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
];

pub const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(9),
    Some(8),
    Some(11),
    Some(12),
    Some(8),
    Some(14),
    Some(15),
];

/// Length of the bone ending at each joint, millimetres (0 for the root).
pub const BONE_LENGTHS: [f64; NUM_JOINTS] = [
    0.0, 130.0, 450.0, 440.0, 130.0, 450.0, 440.0, 230.0, 230.0, 110.0, 120.0, 150.0, 280.0,
    250.0, 150.0, 280.0, 250.0,
];

pub type Pose3 = [[f64; 3]; NUM_JOINTS];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Centre,
}

pub fn side(joint: usize) -> Side {
    match joint {
        4..=6 | 11..=13 => Side::Left,
        1..=3 | 14..=16 => Side::Right,
        _ => Side::Centre,
    }
}

/// Bones as `(parent, child)` pairs.
pub fn bones() -> impl Iterator<Item = (usize, usize)> {
    PARENTS
        .iter()
        .enumerate()
        .filter_map(|(j, p)| p.map(|p| (p, j)))
}

pub fn bone_lengths(pose: &Pose3) -> [f64; NUM_JOINTS] {
    let mut out = [0.0; NUM_JOINTS];
    for (p, j) in bones() {
        out[j] = dist(&pose[p], &pose[j]);
    }
    out
}

pub fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Places every joint at `parent + scale * length * direction`. Directions
/// are normalised here, so bone lengths are exact by construction.
pub fn assemble(root: [f64; 3], directions: &[[f64; 3]; NUM_JOINTS], scale: f64) -> Pose3 {
    let mut pose = [[0.0; 3]; NUM_JOINTS];
    pose[0] = root;
    for j in 1..NUM_JOINTS {
        let p = PARENTS[j].expect("non-root joint");
        let d = normalize(directions[j]);
        let len = BONE_LENGTHS[j] * scale;
        pose[j] = [
            pose[p][0] + len * d[0],
            pose[p][1] + len * d[1],
            pose[p][2] + len * d[2],
        ];
    }
    pose
}
