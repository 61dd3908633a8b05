//! KITTI tracking labels and calibration.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::{load_velodyne_bin, Frame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::points::PointCloud;

type Mat3 = [[f64; 3]; 3];

/// Rectified-camera ← LiDAR transform: `p_rect = R_rect · (R · p + t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub r_rect: Mat3,
    /// Rotation part of the LiDAR-to-camera rigid transform.
    pub rot: Mat3,
    pub trans: [f64; 3],
}

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn transpose(m: &Mat3) -> Mat3 {
    [0, 1, 2].map(|r| [0, 1, 2].map(|c| m[c][r]))
}

fn inverse(m: &Mat3) -> Option<Mat3> {
    let cof = |r: usize, c: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
        m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]
    };
    let det = m[0][0] * cof(0, 0) + m[0][1] * cof(0, 1) + m[0][2] * cof(0, 2);
    if det.abs() < 1e-12 {
        return None;
    }
    Some([0, 1, 2].map(|r| [0, 1, 2].map(|c| cof(c, r) / det)))
}

impl Calibration {
    pub fn identity() -> Self {
        let i = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Calibration {
            r_rect: i,
            rot: i,
            trans: [0.0; 3],
        }
    }

    pub fn lidar_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let q = mat_vec(&self.rot, p);
        mat_vec(&self.r_rect, [q[0] + self.trans[0], q[1] + self.trans[1], q[2] + self.trans[2]])
    }

    pub fn camera_to_lidar(&self, p: [f64; 3]) -> [f64; 3] {
        let unrect = mat_vec(&inverse(&self.r_rect).expect("validated at parse time"), p);
        let shifted = [0, 1, 2].map(|i| unrect[i] - self.trans[i]);
        mat_vec(&inverse(&self.rot).unwrap_or_else(|| transpose(&self.rot)), shifted)
    }
}

/// Reads `R_rect`/`R0_rect` (9 values) and `Tr_velo_cam`/`Tr_velo_to_cam` (12 values).
pub fn parse_calibration(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path)?;
    let mut r_rect = None;
    let mut tr = None;
    for (ln, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once([':', ' ']) else {
            continue;
        };
        let parse = |want: usize| -> Result<Vec<f64>> {
            let v: std::result::Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
            match v {
                Ok(v) if v.len() == want => Ok(v),
                _ => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: ln + 1,
                    msg: format!("`{key}` needs {want} numbers"),
                }),
            }
        };
        match key.trim() {
            "R_rect" | "R0_rect" => r_rect = Some(parse(9)?),
            "Tr_velo_cam" | "Tr_velo_to_cam" => tr = Some(parse(12)?),
            _ => {}
        }
    }
    let missing = |what: &str| Error::Format {
        path: path.to_path_buf(),
        msg: format!("missing {what}"),
    };
    let r = r_rect.ok_or_else(|| missing("R_rect"))?;
    let t = tr.ok_or_else(|| missing("Tr_velo_cam"))?;
    let cal = Calibration {
        r_rect: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
        rot: [[t[0], t[1], t[2]], [t[4], t[5], t[6]], [t[8], t[9], t[10]]],
        trans: [t[3], t[7], t[11]],
    };
    if inverse(&cal.r_rect).is_none() || inverse(&cal.rot).is_none() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "singular calibration matrix".into(),
        });
    }
    Ok(cal)
}

/// LiDAR box from a camera-frame label: `(h, w, l)`, bottom-center location, `rotation_y`.
pub fn box_camera_to_lidar(hwl: [f64; 3], location: [f64; 3], rotation_y: f64, cal: &Calibration) -> Box3D {
    let [h, w, l] = hwl;
    let bottom = cal.camera_to_lidar(location);
    Box3D::new([bottom[0], bottom[1], bottom[2] + h / 2.0], [l, w, h], -rotation_y - FRAC_PI_2)
}

/// Inverse of [`box_camera_to_lidar`]: returns `(hwl, location, rotation_y)`.
pub fn box_lidar_to_camera(b: &Box3D, cal: &Calibration) -> ([f64; 3], [f64; 3], f64) {
    let [l, w, h] = b.size;
    let loc = cal.lidar_to_camera([b.center[0], b.center[1], b.center[2] - h / 2.0]);
    ([h, w, l], loc, crate::geometry::normalize_yaw(-b.yaw - FRAC_PI_2))
}

struct Label {
    frame: usize,
    track: i64,
    kind: String,
    bbox: Box3D,
}

fn parse_label_line(line: &str, cal: &Calibration) -> std::result::Result<Option<Label>, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.is_empty() {
        return Ok(None);
    }
    if fields.len() < 17 {
        return Err(format!("expected at least 17 fields, found {}", fields.len()));
    }
    let num = |i: usize| -> std::result::Result<f64, String> {
        fields[i]
            .parse::<f64>()
            .map_err(|_| format!("field {} (`{}`) is not numeric", i + 1, fields[i]))
    };
    let frame = fields[0].parse::<usize>().map_err(|_| format!("bad frame index `{}`", fields[0]))?;
    let track = fields[1].parse::<i64>().map_err(|_| format!("bad track id `{}`", fields[1]))?;
    let kind = fields[2].to_string();
    let mut v = [0.0; 14];
    for (k, slot) in v.iter_mut().enumerate() {
        *slot = num(3 + k)?;
    }
    if track < 0 || kind == "DontCare" {
        return Ok(None);
    }
    let hwl = [v[7], v[8], v[9]];
    if hwl.iter().any(|s| !(*s > 0.0)) {
        return Err(format!("nonpositive dimensions {hwl:?}"));
    }
    let bbox = box_camera_to_lidar(hwl, [v[10], v[11], v[12]], v[13], cal);
    Ok(Some(Label { frame, track, kind, bbox }))
}

fn scene_number(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.parse().ok()
}

/// Per-track sequences from every `<scene>.txt` in `label_dir`, with calibration from
/// `calib_dir/<scene>.txt`. Scans are loaded from `velodyne_dir/<scene>/<frame>.bin`
/// when given, otherwise frames carry empty clouds. Tracks shorter than two frames
/// are dropped.
pub fn load_kitti_tracklets(label_dir: &Path, calib_dir: &Path, velodyne_dir: Option<&Path>) -> Result<Vec<Sequence>> {
    let mut label_files: Vec<_> = fs::read_dir(label_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    label_files.sort();
    let mut out = Vec::new();
    for path in label_files {
        let scene = scene_number(&path).ok_or_else(|| Error::Format {
            path: path.clone(),
            msg: "label file name is not a scene number".into(),
        })?;
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let calib_path = calib_dir.join(format!("{stem}.txt"));
        if !calib_path.is_file() {
            return Err(Error::Format {
                path: calib_path,
                msg: "missing calibration".into(),
            });
        }
        let cal = parse_calibration(&calib_path)?;
        let text = fs::read_to_string(&path)?;
        let mut tracks: BTreeMap<i64, (String, Vec<(usize, Box3D)>)> = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let label = parse_label_line(line, &cal).map_err(|msg| Error::Parse {
                path: path.clone(),
                line: ln + 1,
                msg,
            })?;
            if let Some(l) = label {
                let entry = tracks.entry(l.track).or_insert_with(|| (l.kind.clone(), Vec::new()));
                entry.1.push((l.frame, l.bbox));
            }
        }
        let mut clouds: BTreeMap<usize, Arc<PointCloud>> = BTreeMap::new();
        for (track, (kind, mut boxes)) in tracks {
            boxes.sort_by_key(|(f, _)| *f);
            if boxes.len() < 2 {
                continue;
            }
            let mut frames = Vec::with_capacity(boxes.len());
            for (f, b) in boxes {
                let cloud = match velodyne_dir {
                    Some(dir) => match clouds.get(&f) {
                        Some(c) => c.clone(),
                        None => {
                            let c = Arc::new(load_velodyne_bin(&dir.join(&stem).join(format!("{f:06}.bin")))?);
                            clouds.insert(f, c.clone());
                            c
                        }
                    },
                    None => Arc::new(PointCloud::default()),
                };
                frames.push(Frame { cloud, gt: b });
            }
            out.push(Sequence {
                id: format!("{stem}_{track}"),
                category: kind,
                scene,
                frames,
            });
        }
    }
    Ok(out)
}
