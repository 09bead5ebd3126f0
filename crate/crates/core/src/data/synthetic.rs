//! Deterministic synthetic motion videos.
//!
//! Each video shows one pattern translating at a constant integer velocity
//! with wrap-around, so any frame index arithmetic modulo the video length
//! stays physically consistent. The class label quantizes the dominant
//! motion direction into four bins, giving a small labeled dataset whose
//! dynamics (not appearance) carry the class signal.

use std::fs;
use std::path::Path;

use ndarray::{Array4, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, FrameVolume, ManifestEntry, Split};
use crate::error::{Error, Result};

/// Direction classes, in label order: dominant +x, +y, -x, -y.
pub const CLASS_NAMES: [&str; 4] = ["pos_x", "pos_y", "neg_x", "neg_y"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// A bright square on a dark background.
    MovingSquare,
    /// A smooth two-frequency sinusoidal texture.
    MovingGradient,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub height: usize,
    pub width: usize,
    pub pattern: Pattern,
    /// Largest dominant-axis speed in pixels per frame.
    pub velocity_range: usize,
    pub seed: u64,
    /// Fraction of each class held out as the test split.
    pub test_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_videos: 200,
            frames_per_video: 32,
            height: 32,
            width: 32,
            pattern: Pattern::MovingSquare,
            velocity_range: 2,
            seed: 7,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 || self.frames_per_video == 0 {
            return Err(Error::Config("need at least one video and one frame".into()));
        }
        if self.height < 4 || self.width < 4 {
            return Err(Error::Config("synthetic frames must be at least 4x4".into()));
        }
        if self.velocity_range == 0 {
            return Err(Error::Config("velocity_range must be >= 1".into()));
        }
        if self.velocity_range >= self.height.min(self.width) {
            return Err(Error::Config(format!(
                "velocity_range {} exceeds the spatial extent ({}x{}) per frame",
                self.velocity_range, self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Ground-truth motion of one generated video.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoMeta {
    pub source_id: String,
    pub vx: i32,
    pub vy: i32,
    pub label: usize,
}

/// Generate the dataset under `out_dir`: `videos/*.rvid`, `manifest.jsonl`,
/// `classes.json`, and `videos.meta.json` with the true velocities.
pub fn generate(cfg: &SyntheticConfig, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let videos_dir = out_dir.join("videos");
    fs::create_dir_all(&videos_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let per_class = cfg.num_videos.div_ceil(CLASS_NAMES.len());
    let test_per_class = (per_class as f64 * cfg.test_fraction).round() as usize;

    let mut entries = Vec::with_capacity(cfg.num_videos);
    let mut metas = Vec::with_capacity(cfg.num_videos);
    for vid in 0..cfg.num_videos {
        let label = vid % CLASS_NAMES.len();
        let idx_in_class = vid / CLASS_NAMES.len();
        let (vx, vy) = draw_velocity(label, cfg.velocity_range, &mut rng);
        let vol = render_video(cfg, vx, vy, &mut rng, format!("vid_{vid:05}"));
        let filename = format!("vid_{vid:05}.rvid");
        super::rvid::write(&videos_dir.join(&filename), &vol)?;
        let split = if idx_in_class < test_per_class { Split::Test } else { Split::Train };
        entries.push(ManifestEntry {
            source_id: format!("vid_{vid:05}"),
            path: format!("videos/{filename}"),
            label: Some(label),
            split,
        });
        metas.push(VideoMeta { source_id: format!("vid_{vid:05}"), vx, vy, label });
    }

    let manifest = DatasetManifest {
        entries,
        class_names: Some(CLASS_NAMES.iter().map(|s| s.to_string()).collect()),
    };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    fs::write(out_dir.join("videos.meta.json"), serde_json::to_string_pretty(&metas)?)?;
    Ok(manifest)
}

pub fn load_meta(out_dir: &Path) -> Result<Vec<VideoMeta>> {
    Ok(serde_json::from_str(&fs::read_to_string(out_dir.join("videos.meta.json"))?)?)
}

/// Velocity whose dominant axis and sign encode the class; the minor axis
/// jitters strictly below the dominant magnitude so the class is unambiguous.
fn draw_velocity<R: Rng>(label: usize, range: usize, rng: &mut R) -> (i32, i32) {
    let mag = rng.gen_range(1..=range) as i32;
    let minor = if mag > 1 { rng.gen_range(-(mag - 1)..=(mag - 1)) } else { 0 };
    match label {
        0 => (mag, minor),
        1 => (minor, mag),
        2 => (-mag, minor),
        _ => (minor, -mag),
    }
}

fn render_video<R: Rng>(
    cfg: &SyntheticConfig,
    vx: i32,
    vy: i32,
    rng: &mut R,
    source_id: String,
) -> FrameVolume {
    let (l, h, w) = (cfg.frames_per_video, cfg.height, cfg.width);
    let mut data = Array4::zeros((l, h, w, 3));
    match cfg.pattern {
        Pattern::MovingSquare => {
            let bg: [u8; 3] = [rng.gen_range(0..=50), rng.gen_range(0..=50), rng.gen_range(0..=50)];
            let fg: [u8; 3] =
                [rng.gen_range(205..=255), rng.gen_range(205..=255), rng.gen_range(205..=255)];
            let side = (h.min(w) / 4).max(3);
            let x0 = rng.gen_range(0..w) as i64;
            let y0 = rng.gen_range(0..h) as i64;
            for t in 0..l {
                let ox = (x0 + vx as i64 * t as i64).rem_euclid(w as i64) as usize;
                let oy = (y0 + vy as i64 * t as i64).rem_euclid(h as i64) as usize;
                for c in 0..3 {
                    data.slice_mut(ndarray::s![t, .., .., c]).fill(bg[c]);
                }
                for dy in 0..side {
                    let py = (oy + dy) % h;
                    for dx in 0..side {
                        let px = (ox + dx) % w;
                        for c in 0..3 {
                            data[[t, py, px, c]] = fg[c];
                        }
                    }
                }
            }
        }
        Pattern::MovingGradient => {
            let fx = rng.gen_range(1..=2) as f64;
            let fy = rng.gen_range(1..=2) as f64;
            let amp: [f64; 3] = [
                rng.gen_range(0.25..0.45),
                rng.gen_range(0.25..0.45),
                rng.gen_range(0.25..0.45),
            ];
            let phase: [f64; 3] = [
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ];
            for t in 0..l {
                for y in 0..h {
                    let ys = y as f64 - vy as f64 * t as f64;
                    for x in 0..w {
                        let xs = x as f64 - vx as f64 * t as f64;
                        let arg =
                            std::f64::consts::TAU * (fx * xs / w as f64 + fy * ys / h as f64);
                        for c in 0..3 {
                            let v = 0.5 + amp[c] * (arg + phase[c]).sin();
                            data[[t, y, x, c]] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
                        }
                    }
                }
            }
        }
    }
    FrameVolume::new(data, source_id, 25.0).expect("frames >= 1 validated")
}

/// Centroid of bright pixels under wrap-around coordinates, via the circular
/// mean of each axis. Returns (x, y) in pixels.
pub fn circular_centroid(frame: ArrayView3<'_, u8>, threshold: u8) -> (f64, f64) {
    let (h, w, _) = frame.dim();
    let (mut sx, mut cx, mut sy, mut cy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let lum = frame[[y, x, 0]] as u16 + frame[[y, x, 1]] as u16 + frame[[y, x, 2]] as u16;
            if lum > 3 * threshold as u16 {
                let ax = std::f64::consts::TAU * x as f64 / w as f64;
                let ay = std::f64::consts::TAU * y as f64 / h as f64;
                sx += ax.sin();
                cx += ax.cos();
                sy += ay.sin();
                cy += ay.cos();
                count += 1;
            }
        }
    }
    if count == 0 {
        return (0.0, 0.0);
    }
    let x = sx.atan2(cx).rem_euclid(std::f64::consts::TAU) * w as f64 / std::f64::consts::TAU;
    let y = sy.atan2(cy).rem_euclid(std::f64::consts::TAU) * h as f64 / std::f64::consts::TAU;
    (x, y)
}

/// Signed minimal displacement from `a` to `b` on a circle of size `extent`.
pub fn circular_delta(a: f64, b: f64, extent: f64) -> f64 {
    let d = (b - a).rem_euclid(extent);
    if d > extent / 2.0 {
        d - extent
    } else {
        d
    }
}
