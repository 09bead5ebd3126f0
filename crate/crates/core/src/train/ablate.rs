//! Ablation grids: rerun pretraining across the values of one config key
//! and tabulate the outcomes.

use std::path::{Path, PathBuf};

use crate::config::{apply_override, Config};
use crate::data::{DatasetManifest, Split};
use crate::error::Result;
use crate::train::{self, checkpoint, load_split, manifest_path};

/// One grid cell's results.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub value: String,
    pub epochs_ran: usize,
    pub final_loss: f64,
    pub train_acc: f64,
    pub holdout_acc: Option<f64>,
}

pub struct AblationOutcome {
    pub rows: Vec<AblationRow>,
    pub table: PathBuf,
}

fn cell_dir_name(i: usize, value: &str) -> String {
    let safe: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("cell{i}_{safe}")
}

/// Pretrain once per value of `axis` (a dotted config key), writing each
/// cell under its own subdirectory and a summary CSV at the grid root.
/// Held-out pretext accuracy is included when the dataset has a test split.
pub fn run_ablation(
    base: &Config,
    axis: &str,
    values: &[String],
    out_dir: &Path,
) -> Result<AblationOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let table = out_dir.join("ablation.csv");
    let mut writer = csv::Writer::from_writer(std::fs::File::create(&table)?);
    writer.write_record(["axis", "value", "epochs_ran", "final_loss", "train_acc", "holdout_acc"])?;

    let base_value = toml::Value::try_from(base)?;
    let mut rows = Vec::with_capacity(values.len());
    for (i, value) in values.iter().enumerate() {
        let mut tree = base_value.clone();
        apply_override(&mut tree, &format!("{axis}={value}"))?;
        let cfg: Config = tree.try_into()?;
        cfg.validate()?;

        let cell_dir = out_dir.join(cell_dir_name(i, value));
        let outcome = train::pretrain(&cfg, &cell_dir)?;
        let last = outcome.rows.last().expect("pretraining ran at least one epoch");

        let manifest_file = manifest_path(&cfg.dataset.root);
        let manifest = DatasetManifest::load(&manifest_file)?;
        let holdout_acc = if manifest.split(Split::Test).is_empty() {
            None
        } else {
            let held = load_split(&manifest, &manifest_file, Split::Test, cfg.dataset.target_fps)?;
            let (mut model, _) = checkpoint::load(&outcome.checkpoint)?;
            Some(train::evaluate_pretext(&mut model, &cfg, &held)?)
        };

        writer.write_record([
            axis.to_string(),
            value.clone(),
            last.epoch.to_string(),
            format!("{:.6}", last.loss),
            format!("{:.6}", last.pretext_acc),
            holdout_acc.map(|a| format!("{a:.6}")).unwrap_or_default(),
        ])?;
        rows.push(AblationRow {
            value: value.clone(),
            epochs_ran: last.epoch,
            final_loss: last.loss,
            train_acc: last.pretext_acc,
            holdout_acc,
        });
    }
    writer.flush()?;
    Ok(AblationOutcome { rows, table })
}
