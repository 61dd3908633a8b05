//! Sequences, their on-disk formats, the synthetic generator and dataset splits.

mod kitti;
mod pairs;
mod splits;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::points::PointCloud;

pub use kitti::{box_camera_to_lidar, box_lidar_to_camera, load_kitti_tracklets, parse_calibration, Calibration};
pub use pairs::{sample_training_pair, AugConfig, TrainingPair};
pub use splits::{dataset_splits, SceneSplit, SplitSetting, Splits};
pub use synth::{synth_sequence, MotionModel, SynthConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Shared between every track observed in this scan.
    pub cloud: Arc<PointCloud>,
    pub gt: Box3D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: String,
    pub category: String,
    pub scene: usize,
    pub frames: Vec<Frame>,
}

impl Sequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::Invalid(format!(
                "sequence `{}` has {} frames, need at least 2",
                self.id,
                self.frames.len()
            )));
        }
        if let Some(f) = self.frames.iter().find(|f| f.gt.size.iter().any(|s| !(*s > 0.0))) {
            return Err(Error::Invalid(format!("sequence `{}` has box size {:?}", self.id, f.gt.size)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Reads a KITTI velodyne scan: little-endian `f32` quadruples of
/// `(x, y, z, intensity)`; intensity becomes a one-dimensional feature.
pub fn load_velodyne_bin(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path)?;
    parse_velodyne(&bytes).map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg,
    })
}

fn parse_velodyne(bytes: &[u8]) -> std::result::Result<PointCloud, String> {
    if bytes.len() % 16 != 0 {
        return Err(format!("length {} is not a multiple of 16 bytes", bytes.len()));
    }
    let mut coords = Vec::with_capacity(bytes.len() / 16);
    let mut feats = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        coords.push([f(0), f(1), f(2)]);
        feats.push(f(3));
    }
    PointCloud::with_feats(coords, 1, feats).map_err(|e| e.to_string())
}

/// Writes `cloud` in velodyne layout; the first feature is the intensity (0 if absent).
pub fn write_velodyne_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.coords().iter().enumerate() {
        let intensity = if cloud.feat_dim() > 0 { cloud.feat(i)[0] } else { 0.0 };
        for v in [p[0], p[1], p[2], intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub const SEQUENCE_MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub file: String,
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
}

/// JSON manifest of a persisted sequence directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub id: String,
    pub category: String,
    pub scene: usize,
    pub frames: Vec<FrameEntry>,
    /// Generator settings and seed, or null for converted real data.
    #[serde(default)]
    pub source: serde_json::Value,
}

pub fn save_sequence(dir: &Path, seq: &Sequence, source: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut frames = Vec::with_capacity(seq.frames.len());
    for (i, f) in seq.frames.iter().enumerate() {
        let file = format!("{i:06}.bin");
        write_velodyne_bin(&dir.join(&file), &f.cloud)?;
        frames.push(FrameEntry {
            file,
            bbox: f.gt.to_array(),
        });
    }
    let manifest = SequenceManifest {
        id: seq.id.clone(),
        category: seq.category.clone(),
        scene: seq.scene,
        frames,
        source,
    };
    fs::write(dir.join(SEQUENCE_MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let path = dir.join(SEQUENCE_MANIFEST);
    let manifest: SequenceManifest = serde_json::from_slice(&fs::read(&path)?).map_err(|e| Error::Format {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    let frames = manifest
        .frames
        .iter()
        .map(|e| {
            Ok(Frame {
                cloud: Arc::new(load_velodyne_bin(&dir.join(&e.file))?),
                gt: Box3D::from_array(e.bbox),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let seq = Sequence {
        id: manifest.id,
        category: manifest.category,
        scene: manifest.scene,
        frames,
    };
    seq.validate()?;
    Ok(seq)
}

/// Writes each sequence to its own numbered subdirectory of `dir`.
pub fn save_dataset(dir: &Path, seqs: &[Sequence], source: &[serde_json::Value]) -> Result<Vec<PathBuf>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| {
            let sub = dir.join(format!("seq{i:04}"));
            save_sequence(&sub, s, source.get(i).cloned().unwrap_or(serde_json::Value::Null))?;
            Ok(sub)
        })
        .collect()
}

/// Loads `dir` itself if it holds a manifest, otherwise every subdirectory that does,
/// in lexicographic order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sequence>> {
    if dir.join(SEQUENCE_MANIFEST).is_file() {
        return Ok(vec![load_sequence(dir)?]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SEQUENCE_MANIFEST).is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Invalid(format!("no sequence manifests under {}", dir.display())));
    }
    subdirs.iter().map(|p| load_sequence(p)).collect()
}
