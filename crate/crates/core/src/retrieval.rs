//! Nearest-neighbor video retrieval over pooled backbone features.
//!
//! A [`FeatureIndex`] is an immutable gallery: one unit-normalized feature
//! row per gallery clip, with the clip's source id and class label kept in
//! parallel arrays. Queries rank the whole gallery by cosine distance
//! (`1 - cosine similarity`), ascending, with ties resolved by insertion
//! order. Galleries at this scale are small enough that every query is an
//! exact exhaustive scan; there is deliberately no approximate index.
//!
//! The gallery persists as a flat little-endian `f32` matrix (`index.bin`)
//! next to a JSON sidecar (`index.meta.json`) holding the row/column counts,
//! the parallel id/label arrays, and a tag for the model that produced the
//! features.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::train::{extract_retrieval_features, LoadedVideo, Model};

/// File name of the flat feature matrix inside an index directory.
pub const INDEX_BIN: &str = "index.bin";
/// File name of the JSON sidecar inside an index directory.
pub const INDEX_META: &str = "index.meta.json";

/// Provenance tag stored alongside the gallery: which model produced the
/// features and how they were pooled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    /// Identifier of the producing model (checkpoint digest, or a phrase
    /// like `"untrained"` for a from-scratch baseline).
    pub model: String,
    /// Pooling applied to backbone activations to form each row.
    pub pooling: String,
}

impl Default for IndexMeta {
    fn default() -> Self {
        IndexMeta {
            model: "untrained".into(),
            pooling: POOLING_SPEC.into(),
        }
    }
}

/// The only pooling this crate produces galleries with: per-channel spatial
/// max over the final feature map, flattened across the temporal extent.
pub const POOLING_SPEC: &str = "spatial_max";

/// One ranked retrieval result.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    /// Gallery row (insertion order).
    pub row: usize,
    /// Source id of the gallery clip's video.
    pub source_id: String,
    /// Class label of the gallery clip.
    pub label: usize,
    /// Cosine distance to the query, in `[0, 2]`.
    pub distance: f32,
}

/// Immutable gallery of unit-normalized feature rows.
///
/// Construction normalizes every row to unit L2 norm (computed in `f64`,
/// so the stored norms land within `1e-6` of one). Rows of zero norm are
/// rejected rather than silently kept, since cosine distance is undefined
/// for them.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    features: Array2<f32>,
    source_ids: Vec<String>,
    labels: Vec<usize>,
    meta: IndexMeta,
}

/// Serialized form of everything except the feature matrix itself.
#[derive(Serialize, Deserialize)]
struct Sidecar {
    model: String,
    pooling: String,
    rows: usize,
    dim: usize,
    source_ids: Vec<String>,
    labels: Vec<usize>,
}

/// Unit-normalize (L2) one feature row. `None` for a zero vector.
fn unit(v: ArrayView1<f32>) -> Option<Array1<f32>> {
    let norm_sq: f64 = v.iter().map(|&x| x as f64 * x as f64).sum();
    if norm_sq == 0.0 {
        return None;
    }
    let inv = 1.0 / norm_sq.sqrt();
    Some(v.mapv(|x| (x as f64 * inv) as f32))
}

impl FeatureIndex {
    /// Build a gallery from raw (not yet normalized) feature rows.
    ///
    /// `source_ids` and `labels` must be parallel to the rows of
    /// `features`. Errors with [`Error::ZeroVector`] on the first row of
    /// zero norm.
    pub fn new(
        features: Array2<f32>,
        source_ids: Vec<String>,
        labels: Vec<usize>,
        meta: IndexMeta,
    ) -> Result<Self> {
        let rows = features.nrows();
        if source_ids.len() != rows || labels.len() != rows {
            return Err(Error::ShapeMismatch(format!(
                "gallery has {rows} feature rows but {} ids and {} labels",
                source_ids.len(),
                labels.len()
            )));
        }
        let mut unit_rows = features;
        for (i, mut row) in unit_rows.axis_iter_mut(Axis(0)).enumerate() {
            let u = unit(row.view()).ok_or(Error::ZeroVector(i))?;
            row.assign(&u);
        }
        Ok(FeatureIndex {
            features: unit_rows,
            source_ids,
            labels,
            meta,
        })
    }

    /// Number of gallery rows.
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    /// Feature dimensionality of each row.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// The unit-normalized gallery matrix.
    pub fn features(&self) -> ArrayView2<'_, f32> {
        self.features.view()
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &IndexMeta {
        &self.meta
    }

    /// Rank the whole gallery against one query and keep the `k` nearest.
    ///
    /// Distances are `1 - cos(query, row)`, ascending; rows at equal
    /// distance keep their insertion order. The query need not be
    /// normalized. `k` larger than the gallery returns every row.
    pub fn query_topk(&self, query: ArrayView1<f32>, k: usize) -> Result<Vec<Hit>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::Config("top-k query needs k >= 1".into()));
        }
        if query.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "query has {} dims, gallery rows have {}",
                query.len(),
                self.dim()
            )));
        }
        let q = unit(query).ok_or(Error::ZeroVector(0))?;
        Ok(self.ranked(&q, k))
    }

    /// Exhaustive scan against an already unit-normalized query.
    fn ranked(&self, unit_query: &Array1<f32>, k: usize) -> Vec<Hit> {
        let mut order: Vec<(usize, f32)> = self
            .features
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, row)| (i, 1.0 - row.dot(unit_query)))
            .collect();
        // Stable sort: equal distances stay in insertion order.
        order.sort_by(|a, b| a.1.total_cmp(&b.1));
        order.truncate(k.min(self.len()));
        order
            .into_iter()
            .map(|(row, distance)| Hit {
                row,
                source_id: self.source_ids[row].clone(),
                label: self.labels[row],
                distance,
            })
            .collect()
    }

    /// Fraction of query clips whose true label appears among the labels of
    /// the `k` nearest gallery rows, for each requested `k`.
    ///
    /// Returns `(k, accuracy)` pairs in the order of `ks`. Accuracy is
    /// non-decreasing in `k`: the top-`k` label set only grows.
    pub fn topk_accuracy(
        &self,
        queries: ArrayView2<f32>,
        labels: &[usize],
        ks: &[usize],
    ) -> Result<Vec<(usize, f64)>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if queries.nrows() == 0 {
            return Err(Error::Config("retrieval accuracy needs at least one query".into()));
        }
        if labels.len() != queries.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} query rows but {} labels",
                queries.nrows(),
                labels.len()
            )));
        }
        if queries.ncols() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "queries have {} dims, gallery rows have {}",
                queries.ncols(),
                self.dim()
            )));
        }
        let max_k = match ks.iter().max() {
            Some(&m) if m >= 1 => m,
            _ => return Err(Error::Config("retrieval accuracy needs a nonempty k list".into())),
        };
        // Rank of the first correct-label hit per query (None = no hit at all).
        let mut first_hit: Vec<Option<usize>> = Vec::with_capacity(queries.nrows());
        for (i, row) in queries.axis_iter(Axis(0)).enumerate() {
            let q = unit(row).ok_or(Error::ZeroVector(i))?;
            let ranked = self.ranked(&q, max_k);
            first_hit.push(ranked.iter().position(|h| h.label == labels[i]));
        }
        let total = queries.nrows() as f64;
        Ok(ks
            .iter()
            .map(|&k| {
                let hits = first_hit
                    .iter()
                    .filter(|r| r.map_or(false, |rank| rank < k))
                    .count();
                (k, hits as f64 / total)
            })
            .collect())
    }

    /// Persist as `index.bin` + `index.meta.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(self.features.len() * 4);
        for &v in self.features.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(INDEX_BIN), bytes)?;
        let sidecar = Sidecar {
            model: self.meta.model.clone(),
            pooling: self.meta.pooling.clone(),
            rows: self.len(),
            dim: self.dim(),
            source_ids: self.source_ids.clone(),
            labels: self.labels.clone(),
        };
        fs::write(dir.join(INDEX_META), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    /// Load a gallery saved by [`FeatureIndex::save`].
    ///
    /// Rows are kept bit-for-bit as stored (no re-normalization), after
    /// checking that each still has unit norm; anything inconsistent is
    /// [`Error::BadFormat`].
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(INDEX_META);
        let bad = |reason: String| Error::BadFormat {
            path: dir.display().to_string(),
            reason,
        };
        let sidecar: Sidecar = serde_json::from_slice(&fs::read(&meta_path)?)
            .map_err(|e| bad(format!("unreadable sidecar: {e}")))?;
        if sidecar.source_ids.len() != sidecar.rows || sidecar.labels.len() != sidecar.rows {
            return Err(bad("sidecar id/label arrays disagree with row count".into()));
        }
        let bin = fs::read(dir.join(INDEX_BIN))?;
        let want = sidecar
            .rows
            .checked_mul(sidecar.dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad("sidecar matrix shape overflows".into()))?;
        if bin.len() != want {
            return Err(bad(format!(
                "feature matrix holds {} bytes, sidecar shape {}x{} needs {want}",
                bin.len(),
                sidecar.rows,
                sidecar.dim
            )));
        }
        let data: Vec<f32> = bin
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let features = Array2::from_shape_vec((sidecar.rows, sidecar.dim), data)
            .map_err(|e| bad(format!("matrix shape: {e}")))?;
        for (i, row) in features.axis_iter(Axis(0)).enumerate() {
            let norm_sq: f64 = row.iter().map(|&x| x as f64 * x as f64).sum();
            if (norm_sq.sqrt() - 1.0).abs() > 1e-4 {
                return Err(bad(format!("row {i} is not unit-normalized")));
            }
        }
        Ok(FeatureIndex {
            features,
            source_ids: sidecar.source_ids,
            labels: sidecar.labels,
            meta: IndexMeta {
                model: sidecar.model,
                pooling: sidecar.pooling,
            },
        })
    }
}

/// Build a retrieval gallery from decoded videos.
///
/// Pools `clips_per_video` speed-1 clips per video through the backbone in
/// eval mode (center anchor when one clip, evenly spaced anchors otherwise)
/// and indexes each clip under its video's source id and label. Every video
/// must be labeled.
pub fn build_gallery(
    model: &mut Model,
    cfg: &Config,
    videos: &[LoadedVideo],
    source_ids: &[String],
    clips_per_video: usize,
    model_tag: &str,
) -> Result<FeatureIndex> {
    if source_ids.len() != videos.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} videos but {} source ids",
            videos.len(),
            source_ids.len()
        )));
    }
    let (features, owners) = extract_retrieval_features(model, cfg, videos, clips_per_video)?;
    let mut ids = Vec::with_capacity(owners.len());
    let mut labels = Vec::with_capacity(owners.len());
    for &o in &owners {
        let label = videos[o]
            .label
            .ok_or_else(|| Error::Config("retrieval gallery needs labeled videos".into()))?;
        ids.push(source_ids[o].clone());
        labels.push(label);
    }
    let meta = IndexMeta {
        model: model_tag.into(),
        pooling: POOLING_SPEC.into(),
    };
    FeatureIndex::new(features, ids, labels, meta)
}
