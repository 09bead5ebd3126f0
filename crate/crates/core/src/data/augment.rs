//! Spatial augmentation and model-input conversion.
//!
//! A clip is resized to a fixed size and cropped once: the same crop window
//! applies to every frame so augmentation never breaks temporal coherence.
//! Training crops at a random offset, eval crops at the center.

use image::imageops::FilterType;
use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

/// Train-time vs eval-time behavior of stochastic transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Target (height, width) every frame is resized to before cropping.
    pub resize: [usize; 2],
    /// Square crop side length.
    pub crop: usize,
    /// Per-channel normalization after scaling pixels to [0, 1].
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { resize: [127, 171], crop: 112, mean: [0.45; 3], std: [0.225; 3] }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resize[0] == 0 || self.resize[1] == 0 || self.crop == 0 {
            return Err(Error::Config("augment sizes must be positive".into()));
        }
        if self.crop > self.resize[0] || self.crop > self.resize[1] {
            return Err(Error::Config(format!(
                "crop {} larger than resize {}x{}",
                self.crop, self.resize[0], self.resize[1]
            )));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }

    /// Crop origin (y, x): random within the margins for training, centered
    /// (floor of odd margins) for eval.
    pub fn crop_offset<R: Rng>(&self, phase: Phase, rng: &mut R) -> (usize, usize) {
        let (my, mx) = (self.resize[0] - self.crop, self.resize[1] - self.crop);
        match phase {
            Phase::Train => {
                // Draw y then x, in that documented order.
                let y = if my == 0 { 0 } else { rng.gen_range(0..=my) };
                let x = if mx == 0 { 0 } else { rng.gen_range(0..=mx) };
                (y, x)
            }
            Phase::Eval => (my / 2, mx / 2),
        }
    }
}

/// Resize every frame of `clip` (frames, h, w, 3) and apply one shared crop.
pub fn spatial_augment<R: Rng>(
    clip: &Array4<u8>,
    cfg: &AugmentConfig,
    phase: Phase,
    rng: &mut R,
) -> Result<Array4<u8>> {
    cfg.validate()?;
    let (k, h, w, c) = clip.dim();
    if k == 0 || c != 3 {
        return Err(Error::ShapeMismatch(format!("clip of {k} frames with {c} channels")));
    }
    let (rh, rw) = (cfg.resize[0], cfg.resize[1]);
    let resized: Array4<u8> = if (h, w) == (rh, rw) {
        clip.clone()
    } else {
        let mut out = Array4::zeros((k, rh, rw, 3));
        for f in 0..k {
            let frame = clip.index_axis(ndarray::Axis(0), f);
            let buf = frame.as_standard_layout().iter().cloned().collect::<Vec<u8>>();
            let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
                .expect("frame buffer matches dims");
            let scaled =
                image::imageops::resize(&img, rw as u32, rh as u32, FilterType::Triangle);
            let arr = Array4::from_shape_vec((1, rh, rw, 3), scaled.into_raw())
                .expect("resized buffer matches dims");
            out.index_axis_mut(ndarray::Axis(0), f).assign(&arr.index_axis(ndarray::Axis(0), 0));
        }
        out
    };
    let (oy, ox) = cfg.crop_offset(phase, rng);
    Ok(resized
        .slice(ndarray::s![.., oy..oy + cfg.crop, ox..ox + cfg.crop, ..])
        .to_owned())
}

/// Scale to [0, 1], normalize per channel, and lay out as (3, frames, crop,
/// crop) ready to stack into a model batch.
pub fn normalize<F: Scalar>(clip: &Array4<u8>, cfg: &AugmentConfig) -> Array4<F> {
    let (k, h, w, _) = clip.dim();
    let mut out = Array4::zeros((3, k, h, w));
    for c in 0..3 {
        let mean = F::from_f64(cfg.mean[c]);
        let inv_std = F::from_f64(1.0 / cfg.std[c]);
        let scale = F::from_f64(1.0 / 255.0);
        for f in 0..k {
            for y in 0..h {
                for x in 0..w {
                    let v = F::from_f64(clip[[f, y, x, c]] as f64) * scale;
                    out[[c, f, y, x]] = (v - mean) * inv_std;
                }
            }
        }
    }
    out
}

/// Gather frames, augment, and normalize in one step.
pub fn prepare_clip<F: Scalar, R: Rng>(
    volume: &crate::data::FrameVolume,
    indices: &[usize],
    cfg: &AugmentConfig,
    phase: Phase,
    rng: &mut R,
) -> Result<Array4<F>> {
    let pixels = volume.gather(indices);
    let cropped = spatial_augment(&pixels, cfg, phase, rng)?;
    Ok(normalize(&cropped, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_crop_is_centered_with_floored_margins() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(cfg.crop_offset(Phase::Eval, &mut rng), (7, 29));
    }

    #[test]
    fn train_offsets_stay_in_bounds_and_reproduce_under_seed() {
        let cfg = AugmentConfig::default();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let (ya, xa) = cfg.crop_offset(Phase::Train, &mut a);
            let (yb, xb) = cfg.crop_offset(Phase::Train, &mut b);
            assert_eq!((ya, xa), (yb, xb));
            assert!(ya <= 15 && xa <= 59);
        }
    }

    #[test]
    fn all_frames_share_one_crop_window() {
        // Input already at resize size, so the resize step is an exact copy
        // and crops can be compared pixel-for-pixel.
        let cfg = AugmentConfig { resize: [20, 24], crop: 10, ..AugmentConfig::default() };
        let k = 4;
        let mut clip = Array4::zeros((k, 20, 24, 3));
        for f in 0..k {
            for y in 0..20 {
                for x in 0..24 {
                    clip[[f, y, x, 0]] = ((f * 50 + y * 7 + x * 3) % 251) as u8;
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = spatial_augment(&clip, &cfg, Phase::Train, &mut rng).unwrap();
        assert_eq!(out.dim(), (k, 10, 10, 3));
        // Recover the offset from frame 0, then check every frame used it.
        let mut found = None;
        'search: for oy in 0..=10 {
            for ox in 0..=14 {
                if (0..10).all(|y| (0..10).all(|x| out[[0, y, x, 0]] == clip[[0, oy + y, ox + x, 0]]))
                {
                    found = Some((oy, ox));
                    break 'search;
                }
            }
        }
        let (oy, ox) = found.expect("crop window must match some offset");
        for f in 0..k {
            for y in 0..10 {
                for x in 0..10 {
                    assert_eq!(out[[f, y, x, 0]], clip[[f, oy + y, ox + x, 0]], "frame {f}");
                }
            }
        }
    }

    #[test]
    fn resize_path_produces_crop_sized_frames() {
        let cfg = AugmentConfig::default();
        let clip = Array4::from_elem((2, 40, 60, 3), 90u8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = spatial_augment(&clip, &cfg, Phase::Eval, &mut rng).unwrap();
        assert_eq!(out.dim(), (2, 112, 112, 3));
        // A constant image stays constant through resize + crop.
        assert!(out.iter().all(|&v| v == 90));
    }

    #[test]
    fn normalization_maps_extremes_symmetrically() {
        let cfg = AugmentConfig::default();
        let mut clip = Array4::zeros((1, 1, 2, 3));
        clip[[0, 0, 1, 0]] = 255;
        let out: Array4<f64> = normalize(&clip, &cfg);
        assert_eq!(out.dim(), (3, 1, 1, 2));
        assert!((out[[0, 0, 0, 0]] - (-2.0)).abs() < 1e-12);
        assert!((out[[0, 0, 0, 1]] - (0.55 / 0.225)).abs() < 1e-12);
    }

    #[test]
    fn crop_larger_than_resize_is_rejected() {
        let cfg = AugmentConfig { resize: [100, 100], crop: 112, ..AugmentConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
