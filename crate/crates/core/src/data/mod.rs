//! Video decoding, dataset manifests, and frame access.
//!
//! Videos are stored either as `.rvid` raw containers or as directories of
//! numbered PNG frames. A dataset is described by a line-delimited JSON
//! manifest; class names, when the dataset is labeled, live in a
//! `classes.json` sidecar next to it.

pub mod augment;
pub mod rvid;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array4, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame rate assumed for frame-stack directories, which carry no timing.
pub const DEFAULT_FPS: f32 = 25.0;

/// A decoded video held in memory: `data` is (frames, height, width, rgb).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVolume {
    pub data: Array4<u8>,
    pub source_id: String,
    pub fps: f32,
}

impl FrameVolume {
    pub fn new(data: Array4<u8>, source_id: String, fps: f32) -> Result<Self> {
        if data.shape()[0] == 0 {
            return Err(Error::EmptyVideo { path: source_id });
        }
        if data.shape()[3] != 3 {
            return Err(Error::Decode {
                path: source_id,
                reason: format!("expected 3 channels, got {}", data.shape()[3]),
            });
        }
        Ok(FrameVolume { data, source_id, fps })
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, u8> {
        self.data.index_axis(ndarray::Axis(0), i)
    }

    /// Stack the given frames (typically a sampled clip) into
    /// (k, height, width, 3).
    pub fn gather(&self, indices: &[usize]) -> Array4<u8> {
        let (h, w) = (self.height(), self.width());
        let mut out = Array4::zeros((indices.len(), h, w, 3));
        for (k, &i) in indices.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), k).assign(&self.frame(i));
        }
        out
    }
}

/// Which half of the dataset an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    /// Path relative to the manifest's directory.
    pub path: String,
    pub label: Option<usize>,
    pub split: Split,
}

/// All videos of a dataset plus optional class names.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_names: Option<Vec<String>>,
}

impl DatasetManifest {
    /// Entries of one split, in manifest order.
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.class_names.as_ref().map(|c| c.len())
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        let labeled = self.entries.iter().filter(|e| e.label.is_some()).count();
        if labeled != 0 && labeled != self.entries.len() {
            return Err(Error::Config(
                "manifest mixes labeled and unlabeled entries".into(),
            ));
        }
        for e in &self.entries {
            if !seen.insert(&e.source_id) {
                return Err(Error::Config(format!("duplicate source_id {}", e.source_id)));
            }
            if let (Some(l), Some(names)) = (e.label, &self.class_names) {
                if l >= names.len() {
                    return Err(Error::LabelOutOfRange { label: l, classes: names.len() });
                }
            }
        }
        Ok(())
    }

    /// Write `manifest.jsonl` (one entry per line) and, when class names are
    /// present, `classes.json` beside it.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut f = fs::File::create(path)?;
        for e in &self.entries {
            writeln!(f, "{}", serde_json::to_string(e)?)?;
        }
        if let Some(names) = &self.class_names {
            let sidecar = path.with_file_name("classes.json");
            fs::write(sidecar, serde_json::to_string_pretty(names)?)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path)?;
        let mut entries = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line)?);
        }
        let sidecar = path.with_file_name("classes.json");
        let class_names =
            if sidecar.exists() { Some(serde_json::from_str(&fs::read_to_string(sidecar)?)?) } else { None };
        let m = DatasetManifest { entries, class_names };
        m.validate()?;
        Ok(m)
    }
}

/// How discovered videos are assigned to train/test.
#[derive(Debug, Clone)]
pub enum SplitSpec {
    /// Hold out a deterministic pseudo-random fraction (per class when
    /// labels exist).
    Fraction { test_fraction: f64, seed: u64 },
    /// Explicit assignment by path relative to the dataset root; every
    /// listed file must exist.
    Explicit(BTreeMap<String, Split>),
}

/// Decode one video file or frame directory.
///
/// `.rvid` files and directories of PNG frames are supported. With
/// `target_fps`, frames are resampled by nearest-index duplication/dropping.
pub fn ingest_video(path: &Path, target_fps: Option<f32>) -> Result<FrameVolume> {
    let vol = if path.is_dir() {
        read_frame_dir(path)
    } else if path.extension().and_then(|e| e.to_str()) == Some("rvid") {
        rvid::read(path)
    } else {
        Err(Error::Decode {
            path: path.display().to_string(),
            reason: "unsupported format (expected .rvid or a directory of .png frames)".into(),
        })
    }?;
    match target_fps {
        Some(fps) if fps > 0.0 && (fps - vol.fps).abs() > 1e-6 => Ok(resample_fps(vol, fps)),
        Some(fps) if fps <= 0.0 => {
            Err(Error::Config(format!("target fps must be positive, got {fps}")))
        }
        _ => Ok(vol),
    }
}

fn read_frame_dir(dir: &Path) -> Result<FrameVolume> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyVideo { path: dir.display().to_string() });
    }
    let mut frames: Option<Array4<u8>> = None;
    for (i, f) in files.iter().enumerate() {
        let img = image::open(f)
            .map_err(|e| Error::Decode { path: f.display().to_string(), reason: e.to_string() })?
            .into_rgb8();
        let (w, h) = img.dimensions();
        let frame = Array4::from_shape_vec((1, h as usize, w as usize, 3), img.into_raw())
            .expect("rgb8 buffer size");
        match &mut frames {
            None => {
                let mut all =
                    Array4::zeros((files.len(), h as usize, w as usize, 3));
                all.index_axis_mut(ndarray::Axis(0), 0)
                    .assign(&frame.index_axis(ndarray::Axis(0), 0));
                frames = Some(all);
            }
            Some(all) => {
                if all.shape()[1] != h as usize || all.shape()[2] != w as usize {
                    return Err(Error::Decode {
                        path: f.display().to_string(),
                        reason: "frame size differs from the first frame".into(),
                    });
                }
                all.index_axis_mut(ndarray::Axis(0), i)
                    .assign(&frame.index_axis(ndarray::Axis(0), 0));
            }
        }
    }
    FrameVolume::new(frames.unwrap(), dir.display().to_string(), DEFAULT_FPS)
}

fn resample_fps(vol: FrameVolume, target: f32) -> FrameVolume {
    let src_len = vol.len();
    let out_len = ((src_len as f32) * target / vol.fps).round().max(1.0) as usize;
    let indices: Vec<usize> = (0..out_len)
        .map(|i| {
            (((i as f32 + 0.5) * src_len as f32 / out_len as f32) as usize).min(src_len - 1)
        })
        .collect();
    let data = vol.gather(&indices);
    FrameVolume { data, source_id: vol.source_id, fps: target }
}

/// Discover videos under `root` and assign splits.
///
/// Layout with one directory level (`root/class_x/video`) yields labels from
/// sorted directory names; videos directly under `root` yield an unlabeled
/// manifest. A "video" is an `.rvid` file or a directory containing PNGs.
pub fn build_manifest(root: &Path, split_spec: &SplitSpec) -> Result<DatasetManifest> {
    let mut class_dirs: Vec<PathBuf> = Vec::new();
    let mut loose_videos: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(root)? {
        let p = entry?.path();
        if is_video(&p) {
            loose_videos.push(p);
        } else if p.is_dir() {
            class_dirs.push(p);
        }
    }
    class_dirs.sort();
    loose_videos.sort();

    let mut entries = Vec::new();
    let mut class_names = Vec::new();
    if !class_dirs.is_empty() && loose_videos.is_empty() {
        for (label, dir) in class_dirs.iter().enumerate() {
            class_names.push(dir.file_name().unwrap().to_string_lossy().into_owned());
            let mut vids: Vec<PathBuf> =
                fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_video(p)).collect();
            vids.sort();
            for v in vids {
                entries.push((v, Some(label)));
            }
        }
    } else {
        for v in loose_videos {
            entries.push((v, None));
        }
    }

    if let SplitSpec::Explicit(map) = split_spec {
        for path in map.keys() {
            if !root.join(path).exists() {
                return Err(Error::MissingSplit { path: path.clone() });
            }
        }
    }

    let manifest_entries = entries
        .into_iter()
        .map(|(path, label)| {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().into_owned();
            let split = match split_spec {
                SplitSpec::Explicit(map) => map.get(&rel).copied().unwrap_or(Split::Train),
                SplitSpec::Fraction { test_fraction, seed } => {
                    // Stable hash of (seed, rel) so assignment survives
                    // re-discovery order changes.
                    let mut acc: u64 = *seed ^ 0x9e37_79b9_7f4a_7c15;
                    for b in rel.bytes() {
                        acc = acc.wrapping_mul(0x100_0000_01b3).wrapping_add(b as u64);
                    }
                    let unit = (acc >> 11) as f64 / (1u64 << 53) as f64;
                    if unit < *test_fraction {
                        Split::Test
                    } else {
                        Split::Train
                    }
                }
            };
            ManifestEntry {
                source_id: rel.replace(std::path::MAIN_SEPARATOR, "/"),
                path: rel,
                label,
                split,
            }
        })
        .collect();

    let m = DatasetManifest {
        entries: manifest_entries,
        class_names: (!class_names.is_empty()).then_some(class_names),
    };
    m.validate()?;
    Ok(m)
}

fn is_video(p: &Path) -> bool {
    if p.extension().and_then(|e| e.to_str()) == Some("rvid") {
        return true;
    }
    if p.is_dir() {
        if let Ok(rd) = fs::read_dir(p) {
            return rd
                .filter_map(|e| e.ok())
                .any(|e| e.path().extension().and_then(|x| x.to_str()) == Some("png"));
        }
    }
    false
}
