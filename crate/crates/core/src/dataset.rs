//! TUM-format RGB-D sequence ingestion, detection sidecar files, and
//! trajectory text I/O.
//!
//! Directory layout: `rgb.txt` / `depth.txt` index files ("timestamp
//! filename" lines, `#` comments), `rgb/` and `depth/` image folders,
//! `groundtruth.txt`. Depth PNGs are 16-bit with a configurable
//! raw-units-per-meter scale (TUM: 5000).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DepthImage, GrayImage, PoseSE3};
use nalgebra::Vector3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unsupported image format in {path}: {msg}")]
    Image { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One RGB-D frame: grayscale + depth with a shared timestamp.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: usize,
    /// Seconds, TUM epoch.
    pub timestamp: f64,
    pub gray: GrayImage,
    pub depth: DepthImage,
    /// Source image path when loaded from disk (used by external
    /// detection providers).
    pub rgb_path: Option<PathBuf>,
}

/// A detector bounding box; `bbox` is (x, y, w, h) in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_name: String,
    pub confidence: f64,
    pub bbox: (f64, f64, f64, f64),
}

/// Timestamped camera-to-world poses.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub entries: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, timestamp: f64, pose: PoseSE3) {
        debug_assert!(
            self.entries.last().map_or(true, |(t, _)| *t < timestamp),
            "trajectory timestamps must be strictly increasing"
        );
        self.entries.push((timestamp, pose));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Index of an associated RGB-D sequence; frames are loaded on demand so
/// long sequences do not have to fit in memory.
#[derive(Debug, Clone)]
pub struct SequenceIndex {
    pub entries: Vec<IndexEntry>,
    pub depth_scale: f64,
}

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub id: usize,
    pub timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
}

impl SequenceIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_frame(&self, index: usize) -> Result<Frame, DatasetError> {
        let entry = &self.entries[index];
        let gray = load_gray_png(&entry.rgb_path)?;
        let depth = load_depth_png(&entry.depth_path, self.depth_scale)?;
        Ok(Frame {
            id: entry.id,
            timestamp: entry.timestamp,
            gray,
            depth,
            rgb_path: Some(entry.rgb_path.clone()),
        })
    }
}

fn parse_index_file(path: &Path) -> Result<Vec<(f64, PathBuf)>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (Some(ts), Some(name)) = (parts.next(), parts.next()) else {
            return Err(DatasetError::Format {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "expected \"timestamp filename\"".to_string(),
            });
        };
        let ts: f64 = ts.parse().map_err(|_| DatasetError::Format {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("bad timestamp {ts:?}"),
        })?;
        out.push((ts, PathBuf::from(name)));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Build the associated frame index for a TUM-format directory. Each RGB
/// entry is paired with the nearest depth entry within `max_assoc_dt`
/// seconds (greedy best-first, each entry used at most once); unmatched
/// entries are dropped.
pub fn load_tum_index(
    dir: &Path,
    max_assoc_dt: f64,
    depth_scale: f64,
) -> Result<SequenceIndex, DatasetError> {
    let rgb = parse_index_file(&dir.join("rgb.txt"))?;
    let depth = parse_index_file(&dir.join("depth.txt"))?;

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut lo = 0usize;
    for (i, (rt, _)) in rgb.iter().enumerate() {
        while lo + 1 < depth.len() && depth[lo + 1].0 < rt - max_assoc_dt {
            lo += 1;
        }
        for (j, (dt, _)) in depth.iter().enumerate().skip(lo) {
            if *dt > rt + max_assoc_dt {
                break;
            }
            let gap = (rt - dt).abs();
            if gap <= max_assoc_dt {
                candidates.push((gap, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut rgb_used = vec![false; rgb.len()];
    let mut depth_used = vec![false; depth.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (_, i, j) in candidates {
        if !rgb_used[i] && !depth_used[j] {
            rgb_used[i] = true;
            depth_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_by(|a, b| rgb[a.0].0.total_cmp(&rgb[b.0].0));

    let mut entries = Vec::with_capacity(pairs.len());
    for (id, (i, j)) in pairs.iter().enumerate() {
        entries.push(IndexEntry {
            id,
            timestamp: rgb[*i].0,
            rgb_path: dir.join(&rgb[*i].1),
            depth_path: dir.join(&depth[*j].1),
        });
    }
    Ok(SequenceIndex {
        entries,
        depth_scale,
    })
}

/// Load a whole TUM-format sequence into memory. Prefer
/// [`load_tum_index`] plus on-demand [`SequenceIndex::load_frame`] for
/// long sequences.
pub fn load_tum_sequence(
    dir: &Path,
    max_assoc_dt: f64,
    depth_scale: f64,
) -> Result<Vec<Frame>, DatasetError> {
    let index = load_tum_index(dir, max_assoc_dt, depth_scale)?;
    (0..index.len()).map(|i| index.load_frame(i)).collect()
}

/// ITU-R 601 luma conversion.
#[inline]
fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32).round() as u8
}

pub fn load_gray_png(path: &Path) -> Result<GrayImage, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let mut pixels = Vec::with_capacity((w * h) as usize);
    for p in rgb.pixels() {
        pixels.push(luma(p[0], p[1], p[2]));
    }
    Ok(GrayImage::from_pixels(w as usize, h as usize, pixels))
}

pub fn load_depth_png(path: &Path, depth_scale: f64) -> Result<DepthImage, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let raw = img.into_luma16();
    let (w, h) = raw.dimensions();
    let scale = 1.0 / depth_scale as f32;
    let depths = raw.pixels().map(|p| p[0] as f32 * scale).collect();
    Ok(DepthImage::from_depths(w as usize, h as usize, depths))
}

#[derive(Serialize, Deserialize)]
struct SidecarRecord {
    ts: f64,
    detections: Vec<SidecarDetection>,
}

#[derive(Serialize, Deserialize)]
struct SidecarDetection {
    class: String,
    conf: f64,
    bbox: [f64; 4],
}

/// Detections keyed by timestamp, loaded from a line-JSON sidecar file.
#[derive(Debug, Clone, Default)]
pub struct DetectionTable {
    /// Sorted by timestamp.
    entries: Vec<(f64, Vec<Detection>)>,
}

impl DetectionTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_entries(mut entries: Vec<(f64, Vec<Detection>)>) -> Self {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { entries }
    }

    /// Detections at the nearest key within `tolerance` seconds.
    pub fn lookup(&self, ts: f64, tolerance: f64) -> Option<&[Detection]> {
        if self.entries.is_empty() {
            return None;
        }
        let idx = self
            .entries
            .partition_point(|(t, _)| *t < ts)
            .min(self.entries.len() - 1);
        let mut best = idx;
        if idx > 0 && (self.entries[idx - 1].0 - ts).abs() < (self.entries[idx].0 - ts).abs() {
            best = idx - 1;
        }
        ((self.entries[best].0 - ts).abs() <= tolerance).then(|| self.entries[best].1.as_slice())
    }
}

/// Parse a line-JSON detection sidecar: one record per line with fields
/// `ts` and `detections[{class, conf, bbox:[x,y,w,h]}]`.
pub fn load_detections(path: &Path) -> Result<DetectionTable, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SidecarRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::Format {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        let detections = record
            .detections
            .into_iter()
            .map(|d| Detection {
                class_name: d.class,
                confidence: d.conf,
                bbox: (d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]),
            })
            .collect();
        entries.push((record.ts, detections));
    }
    Ok(DetectionTable::from_entries(entries))
}

/// Write a detection sidecar in the line-JSON format read back by
/// [`load_detections`].
pub fn write_detections(
    path: &Path,
    entries: &[(f64, Vec<Detection>)],
) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for (ts, detections) in entries {
        let record = SidecarRecord {
            ts: *ts,
            detections: detections
                .iter()
                .map(|d| SidecarDetection {
                    class: d.class_name.clone(),
                    conf: d.confidence,
                    bbox: [d.bbox.0, d.bbox.1, d.bbox.2, d.bbox.3],
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| DatasetError::Format {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    Ok(())
}

/// Write "timestamp tx ty tz qx qy qz qw" lines, camera-to-world.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for (ts, pose) in &traj.entries {
        let t = pose.translation;
        let q = pose.to_quaternion();
        writeln!(
            out,
            "{ts:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
        .map_err(io_err(path))?;
    }
    Ok(())
}

/// Parse a trajectory file (estimate or ground truth); inverse of
/// [`write_trajectory`].
pub fn load_trajectory(path: &Path) -> Result<Trajectory, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut entries: Vec<(f64, PoseSE3)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| DatasetError::Format {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        if fields.len() != 8 {
            return Err(DatasetError::Format {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 8 fields, got {}", fields.len()),
            });
        }
        let pose = PoseSE3::from_quaternion(
            [fields[4], fields[5], fields[6], fields[7]],
            Vector3::new(fields[1], fields[2], fields[3]),
        );
        entries.push((fields[0], pose));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(Trajectory { entries })
}

/// Alias with the conventional ground-truth name.
pub fn load_groundtruth(path: &Path) -> Result<Trajectory, DatasetError> {
    load_trajectory(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;
    use std::fs;

    fn write_file(path: &Path, content: &str) {
        fs::write(path, content).unwrap();
    }

    fn tiny_png(path: &Path, gray: bool) {
        if gray {
            let img = image::GrayImage::from_raw(2, 2, vec![10, 20, 30, 40]).unwrap();
            img.save(path).unwrap();
        } else {
            let img =
                image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 2, vec![5000u16; 4])
                    .unwrap();
            img.save(path).unwrap();
        }
    }

    #[test]
    fn empty_rgb_index_gives_empty_sequence() {
        let dir = tempfile::tempdir().unwrap();
        write_file(&dir.path().join("rgb.txt"), "# comment only\n");
        write_file(&dir.path().join("depth.txt"), "");
        let index = load_tum_index(dir.path(), 0.02, 5000.0).unwrap();
        assert!(index.is_empty());
    }

    #[test]
    fn association_pairs_offset_entries() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("rgb")).unwrap();
        fs::create_dir_all(dir.path().join("depth")).unwrap();
        let mut rgb_txt = String::from("# rgb index\n");
        let mut depth_txt = String::new();
        for i in 0..3 {
            let rt = 1.0 + i as f64 * 0.1;
            let dt = rt + 0.005;
            rgb_txt.push_str(&format!("{rt:.6} rgb/{i}.png\n"));
            depth_txt.push_str(&format!("{dt:.6} depth/{i}.png\n"));
            tiny_png(&dir.path().join(format!("rgb/{i}.png")), true);
            tiny_png(&dir.path().join(format!("depth/{i}.png")), false);
        }
        write_file(&dir.path().join("rgb.txt"), &rgb_txt);
        write_file(&dir.path().join("depth.txt"), &depth_txt);

        let frames = load_tum_sequence(dir.path(), 0.02, 5000.0).unwrap();
        assert_eq!(frames.len(), 3);
        // Hand-checked nearest-neighbor pairing: i-th rgb with i-th depth.
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.id, i);
            assert!((f.timestamp - (1.0 + i as f64 * 0.1)).abs() < 1e-9);
            assert_eq!(f.gray.at(1, 1), 40);
            assert!((f.depth.at(0, 0) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn association_drops_far_entries() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("rgb")).unwrap();
        fs::create_dir_all(dir.path().join("depth")).unwrap();
        tiny_png(&dir.path().join("rgb/a.png"), true);
        tiny_png(&dir.path().join("depth/a.png"), false);
        write_file(&dir.path().join("rgb.txt"), "1.0 rgb/a.png\n");
        write_file(&dir.path().join("depth.txt"), "1.05 depth/a.png\n");
        let index = load_tum_index(dir.path(), 0.02, 5000.0).unwrap();
        assert!(index.is_empty());
    }

    #[test]
    fn index_parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_file(&dir.path().join("rgb.txt"), "1.0 rgb/a.png\nnot-a-number x\n");
        write_file(&dir.path().join("depth.txt"), "");
        let err = load_tum_index(dir.path(), 0.02, 5000.0).unwrap_err();
        match err {
            DatasetError::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_index_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_tum_index(dir.path(), 0.02, 5000.0),
            Err(DatasetError::Io { .. })
        ));
    }

    #[test]
    fn detections_roundtrip_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detections.jsonl");
        let entries = vec![(
            1.0,
            vec![
                Detection {
                    class_name: "person".into(),
                    confidence: 0.9,
                    bbox: (10.0, 20.0, 30.0, 40.0),
                },
                Detection {
                    class_name: "person".into(),
                    confidence: 0.8,
                    bbox: (100.0, 50.0, 20.0, 60.0),
                },
            ],
        )];
        write_detections(&path, &entries).unwrap();
        let table = load_detections(&path).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(table.lookup(1.004, 0.02).unwrap().len(), 2);
        assert_eq!(table.lookup(1.004, 0.02).unwrap()[0], entries[0].1[0]);
        // Tolerance miss at 0.03 s.
        assert!(table.lookup(1.03, 0.02).is_none());
    }

    #[test]
    fn empty_detection_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detections.jsonl");
        write_file(&path, "");
        let table = load_detections(&path).unwrap();
        assert!(table.is_empty());
        assert!(table.lookup(0.0, 0.02).is_none());
    }

    #[test]
    fn malformed_detection_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detections.jsonl");
        write_file(
            &path,
            "{\"ts\": 1.0, \"detections\": []}\n{broken\n",
        );
        match load_detections(&path).unwrap_err() {
            DatasetError::Format { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn trajectory_identity_line_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let mut traj = Trajectory::new();
        traj.push(1.0, PoseSE3::identity());
        write_trajectory(&path, &traj).unwrap();
        let content = fs::read_to_string(&path).unwrap();
        assert_eq!(
            content.trim_end(),
            "1.000000 0.000000000 0.000000000 0.000000000 0.000000000 0.000000000 0.000000000 1.000000000"
        );
    }

    #[test]
    fn trajectory_half_turn_quaternion() {
        let pose = PoseSE3::from_euler(0.0, 0.0, std::f64::consts::PI, Vector3::zeros());
        let q = pose.to_quaternion();
        assert!((q[0]).abs() < 1e-12 && (q[1]).abs() < 1e-12);
        assert!((q[2].abs() - 1.0).abs() < 1e-12 && q[3].abs() < 1e-12);
    }

    #[test]
    fn trajectory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let mut traj = Trajectory::new();
        traj.push(
            1.5,
            PoseSE3::from_euler(0.1, -0.2, FRAC_PI_2, Vector3::new(1.0, -2.0, 0.5)),
        );
        traj.push(
            2.0,
            PoseSE3::from_euler(-0.4, 0.3, 0.9, Vector3::new(-0.1, 0.2, 3.0)),
        );
        write_trajectory(&path, &traj).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert_eq!(back.len(), 2);
        for ((t0, p0), (t1, p1)) in traj.entries.iter().zip(&back.entries) {
            assert!((t0 - t1).abs() < 1e-9);
            assert!(p0.rotation_angle_to(p1) < 1e-7);
            assert!(p0.translation_distance_to(p1) < 1e-7);
        }
    }
}
