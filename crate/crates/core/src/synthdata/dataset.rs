//! Dataset generation and the on-disk layout.
//!
//! ```text
//! out_dir/manifest.json
//! out_dir/seq_0000.poses   u32 rank, rank × u64 dims, little-endian f32 payload [T, 17, 3]
//! out_dir/seq_0000.frames  u32 rank, rank × u64 dims, u8 payload [T, 3, S, S]
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{project_point, CameraModel};
use super::motion::{class_specs, simulate, GestureClassSpec, Nuisance};
use super::raster::{rasterize_frame, Background};
use super::skeleton::{Pose3, NUM_JOINTS};
use crate::error::{io_err, Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub sequences_per_class: usize,
    pub length: usize,
    pub cameras: usize,
    pub image_size: usize,
    pub divergence_width: f64,
    pub clutter: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            sequences_per_class: 20,
            length: 220,
            cameras: 1,
            image_size: 64,
            divergence_width: 6.5,
            clutter: false,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: usize,
    pub class_id: usize,
    pub split: Split,
    pub peak_frame: usize,
    pub camera_id: usize,
    pub length: usize,
    pub poses_file: String,
    pub frames_file: String,
}

/// Axis-aligned camera-space box (millimetres) containing every pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeBounds {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub class_names: Vec<String>,
    pub volume: VolumeBounds,
    pub sequences: Vec<SequenceRecord>,
}

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.sequences.iter().filter(|s| s.split == split).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    /// `[T, 3, S, S]`.
    pub frames: Vec<u8>,
    /// Camera-space joints, `[T, 17, 3]`.
    pub poses: Vec<f32>,
    pub world_poses: Vec<Pose3>,
    pub class_id: usize,
    pub peak_frame: usize,
    pub camera_id: usize,
    pub split: Split,
    pub length: usize,
    pub image_size: usize,
}

impl SyntheticSequence {
    pub fn frame(&self, t: usize) -> &[u8] {
        let len = 3 * self.image_size * self.image_size;
        &self.frames[t * len..(t + 1) * len]
    }

    pub fn pose(&self, t: usize) -> &[f32] {
        &self.poses[t * NUM_JOINTS * 3..(t + 1) * NUM_JOINTS * 3]
    }
}

/// Seeded RNG for one sequence: the dataset seed picks the key, the
/// sequence index picks an independent stream.
pub fn sequence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

pub fn generate_sequence(
    spec: &GestureClassSpec,
    length: usize,
    camera: &CameraModel,
    clutter: bool,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticSequence> {
    let needed = (4.0 * spec.divergence_width).ceil() as usize + 2;
    if length < needed {
        return Err(Error::Data(format!("sequence length {length} is too short (needs {needed})")));
    }
    let nuisance = Nuisance::sample(rng);
    let background = if clutter {
        Background::clutter(camera.image_size, rng)
    } else {
        Background::plain(camera.image_size)
    };
    let (world, peak) = simulate(spec, length, &nuisance);
    let mut poses = Vec::with_capacity(length * NUM_JOINTS * 3);
    let mut frames = Vec::with_capacity(length * background.pixels.len());
    for pose in &world {
        let cam = camera.pose_to_camera(pose);
        let pixels: Vec<[f64; 2]> = cam.iter().map(|&p| project_point(camera, p)).collect();
        frames.extend(rasterize_frame(&pixels, &background));
        poses.extend(cam.iter().flatten().map(|&v| v as f32));
    }
    Ok(SyntheticSequence {
        frames,
        poses,
        world_poses: world,
        class_id: spec.class_id,
        peak_frame: peak,
        camera_id: 0,
        split: Split::Train,
        length,
        image_size: camera.image_size,
    })
}

/// Class, split and camera for every sequence index. Within each class the
/// last 20% of a seeded shuffle go to validation.
fn assignments(cfg: &DatasetConfig) -> Vec<(usize, Split, usize)> {
    let per = cfg.sequences_per_class;
    let val = (per as f64 * 0.2).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.num_classes * per);
    for c in 0..cfg.num_classes {
        let mut order: Vec<usize> = (0..per).collect();
        order.shuffle(&mut rng);
        let mut split = vec![Split::Train; per];
        for &i in &order[per - val..] {
            split[i] = Split::Val;
        }
        for (i, s) in split.into_iter().enumerate() {
            let id = c * per + i;
            out.push((c, s, id % cfg.cameras.max(1)));
        }
    }
    out
}

pub fn validate(cfg: &DatasetConfig) -> Result<()> {
    if cfg.num_classes == 0 || cfg.sequences_per_class == 0 || cfg.cameras == 0 || cfg.image_size < 8 {
        return Err(Error::Config(format!("degenerate dataset config {cfg:?}")));
    }
    Ok(())
}

/// Generates every sequence in memory; parallel generation returns exactly
/// the serial result because each sequence owns its RNG stream.
pub fn generate_all(cfg: &DatasetConfig) -> Result<Vec<SyntheticSequence>> {
    validate(cfg)?;
    let specs = class_specs(cfg.num_classes, cfg.divergence_width);
    let assign = assignments(cfg);
    let results = cgap2_tensor::exec::map_indices(assign.len(), |i| {
        let (c, split, cam) = assign[i];
        let camera = CameraModel::ring(cam, cfg.cameras, cfg.image_size);
        let mut rng = sequence_rng(cfg.seed, i);
        generate_sequence(&specs[c], cfg.length, &camera, cfg.clutter, &mut rng).map(|mut s| {
            s.split = split;
            s.camera_id = cam;
            s
        })
    });
    results.into_iter().collect()
}

pub fn volume_bounds(sequences: &[SyntheticSequence]) -> VolumeBounds {
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for s in sequences {
        for p in s.poses.chunks(3) {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    for a in 0..3 {
        let margin = (0.15 * (hi[a] - lo[a])).max(100.0);
        lo[a] = (lo[a] - margin).floor();
        hi[a] = (hi[a] + margin).ceil();
    }
    VolumeBounds { min: lo, max: hi }
}

fn write_array(path: &Path, dims: &[usize], payload: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + 8 * dims.len() + payload.len());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf.extend_from_slice(payload);
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io_err(path))
}

fn read_array(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let bad = |why: &str| Error::Data(format!("{}: {why}", path.display()));
    if bytes.len() < 4 {
        return Err(bad("truncated header"));
    }
    let rank = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let head = 4 + 8 * rank;
    if bytes.len() < head {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    Ok((dims, bytes.split_off(head)))
}

fn ensure_empty_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(io_err(dir))?.next().is_some();
        if non_empty && !overwrite {
            return Err(Error::Data(format!(
                "{} exists and is not empty (pass overwrite to replace it)",
                dir.display()
            )));
        }
        if non_empty {
            fs::remove_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn make_manifest(cfg: &DatasetConfig, sequences: &[SyntheticSequence]) -> Manifest {
    let specs = class_specs(cfg.num_classes, cfg.divergence_width);
    let records = sequences
        .iter()
        .enumerate()
        .map(|(id, s)| SequenceRecord {
            id,
            class_id: s.class_id,
            split: s.split,
            peak_frame: s.peak_frame,
            camera_id: s.camera_id,
            length: s.length,
            poses_file: format!("seq_{id:04}.poses"),
            frames_file: format!("seq_{id:04}.frames"),
        })
        .collect();
    Manifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        class_names: specs.iter().map(|s| s.name.clone()).collect(),
        volume: volume_bounds(sequences),
        sequences: records,
    }
}

pub fn build_dataset(cfg: &DatasetConfig, out_dir: &Path, overwrite: bool) -> Result<Manifest> {
    validate(cfg)?;
    ensure_empty_dir(out_dir, overwrite)?;
    let sequences = generate_all(cfg)?;
    let manifest = make_manifest(cfg, &sequences);
    for (rec, s) in manifest.sequences.iter().zip(&sequences) {
        let pose_bytes: Vec<u8> = s.poses.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_array(&out_dir.join(&rec.poses_file), &[s.length, NUM_JOINTS, 3], &pose_bytes)?;
        write_array(
            &out_dir.join(&rec.frames_file),
            &[s.length, 3, s.image_size, s.image_size],
            &s.frames,
        )?;
    }
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

/// A dataset loaded fully into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub sequences: Vec<SyntheticSequence>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Data(format!("unsupported manifest version {}", manifest.version)));
        }
        let size = manifest.config.image_size;
        let mut sequences = Vec::with_capacity(manifest.sequences.len());
        for rec in &manifest.sequences {
            let (pd, pb) = read_array(&dir.join(&rec.poses_file))?;
            let (fd, frames) = read_array(&dir.join(&rec.frames_file))?;
            if pd != [rec.length, NUM_JOINTS, 3]
                || fd != [rec.length, 3, size, size]
                || pb.len() != rec.length * NUM_JOINTS * 3 * 4
                || frames.len() != rec.length * 3 * size * size
            {
                return Err(Error::Data(format!("sequence {} does not match its manifest entry", rec.id)));
            }
            let poses = pb
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            sequences.push(SyntheticSequence {
                frames,
                poses,
                world_poses: Vec::new(),
                class_id: rec.class_id,
                peak_frame: rec.peak_frame,
                camera_id: rec.camera_id,
                split: rec.split,
                length: rec.length,
                image_size: size,
            });
        }
        Ok(Self {
            root: dir.to_path_buf(),
            manifest,
            sequences,
        })
    }

    /// Generates a dataset without touching the disk.
    pub fn generate(cfg: &DatasetConfig) -> Result<Self> {
        validate(cfg)?;
        let sequences = generate_all(cfg)?;
        Ok(Self {
            root: PathBuf::new(),
            manifest: make_manifest(cfg, &sequences),
            sequences,
        })
    }

    pub fn split_ids(&self, split: Split) -> Vec<usize> {
        (0..self.sequences.len())
            .filter(|&i| self.sequences[i].split == split)
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.config.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_eighty_twenty_per_class() {
        let cfg = DatasetConfig { sequences_per_class: 10, ..DatasetConfig::default() };
        let a = assignments(&cfg);
        assert_eq!(a.iter().filter(|x| x.1 == Split::Train).count(), 48);
        for c in 0..6 {
            let val = a.iter().filter(|x| x.0 == c && x.1 == Split::Val).count();
            assert_eq!(val, 2);
        }
    }
}
