//! Ablation suites over discriminator design choices, and layout rendering.

mod render;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Corpus, CorpusManifest, DomainSample};
use crate::error::{Error, Result};
use crate::losses::SmoothingScheme;
use crate::metrics::MetricsReport;
use crate::nn::{DiscriminatorConfig, DiscriminatorKind, FeatureLevel};
use crate::training::{evaluate, train, TrainConfig};

pub use render::{render_layout, RenderStyle};

/// Mean pairwise overlap above which a model's layouts count as unusable.
pub const OVERLAP_FAILURE: f64 = 0.05;

/// Adversarial weights swept for the global discriminator.
pub const GLOBAL_WEIGHT_SWEEP: [f64; 6] = [6.0, 1.0, 0.01, 0.001, 0.0001, 0.0];

/// Patch grid at the reference `350 × 240` resolution, finest last.
pub const REFERENCE_PATCH_GRID: [(usize, usize); 5] = [(12, 8), (24, 16), (44, 30), (88, 60), (350, 240)];
pub const REFERENCE_DIMS: (usize, usize) = (350, 240);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    DiscKindAndWeight,
    PatchSize,
    FeatureLevel,
    Smoothing,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| Error::Config(format!("unknown ablation axis {s}")))
    }
}

/// Reference patch grid rescaled to `image_dims`, rounding each side and
/// keeping it at least 1.
pub fn scaled_patch_grid(image_dims: (usize, usize)) -> Vec<(usize, usize)> {
    let scale = |p: usize, reference: usize, actual: usize| ((p as f64 * actual as f64 / reference as f64).round() as usize).max(1);
    REFERENCE_PATCH_GRID
        .iter()
        .map(|&(ph, pw)| (scale(ph, REFERENCE_DIMS.0, image_dims.0), scale(pw, REFERENCE_DIMS.1, image_dims.1)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSuite {
    pub axis: AblationAxis,
    pub values: Vec<AblationCell>,
    pub base: TrainConfig,
    pub trials: usize,
}

impl AblationSuite {
    /// Standard cells of `axis` derived from `base`.
    pub fn for_axis(axis: AblationAxis, base: &TrainConfig, image_dims: (usize, usize), trials: usize) -> Self {
        let cell = |label: String, f: &dyn Fn(&mut TrainConfig)| {
            let mut config = base.clone();
            f(&mut config);
            AblationCell { label, config }
        };
        let disc = |kind, patch_dims, feature_level| DiscriminatorConfig {
            kind,
            patch_dims,
            feature_level,
        };
        let level = base.disc.feature_level;
        let values = match axis {
            AblationAxis::DiscKindAndWeight => {
                let mut v: Vec<_> = GLOBAL_WEIGHT_SWEEP
                    .iter()
                    .map(|&g| {
                        cell(format!("DA-{g}"), &|c| {
                            c.disc = disc(DiscriminatorKind::Global, None, level);
                            c.weights.gamma = g;
                        })
                    })
                    .collect();
                let g = base.weights.gamma;
                v.push(cell(format!("PDA-{g}"), &|c| c.disc = disc(DiscriminatorKind::Pixel, None, level)));
                v
            }
            AblationAxis::PatchSize => scaled_patch_grid(image_dims)
                .into_iter()
                .map(|(h, w)| cell(format!("{h}*{w}"), &|c| c.disc = disc(DiscriminatorKind::Patch, Some((h, w)), level)))
                .collect(),
            AblationAxis::FeatureLevel => [FeatureLevel::Deep, FeatureLevel::Fusion, FeatureLevel::Shallow]
                .into_iter()
                .map(|l| cell(format!("{l:?}").to_lowercase(), &|c| c.disc = disc(DiscriminatorKind::Pixel, None, l)))
                .collect(),
            AblationAxis::Smoothing => [
                SmoothingScheme::None,
                SmoothingScheme::TwoSide,
                SmoothingScheme::OneSource,
                SmoothingScheme::OneTarget,
            ]
            .into_iter()
            .map(|s| cell(format!("{s:?}").to_lowercase(), &|c| c.smoothing = s))
            .collect(),
        };
        Self {
            axis,
            values,
            base: base.clone(),
            trials,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.trials == 0 {
            return Err(Error::Config("ablation suite needs at least one cell and one trial".into()));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the config's JSON form.
pub fn config_hash(config: &TrainConfig) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(config)?);
    Ok(digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// The unusable-layout rule: mean overlap strictly above the threshold.
pub fn is_failed(r_ove: Option<f64>) -> bool {
    r_ove.is_some_and(|v| v > OVERLAP_FAILURE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub trial: usize,
    pub seed: u64,
    pub config_hash: String,
    pub report: Option<MetricsReport>,
    pub failed: bool,
    pub error: Option<String>,
}

impl AblationRow {
    pub fn from_result(label: &str, trial: usize, config: &TrainConfig, result: Result<MetricsReport>) -> Result<Self> {
        let (report, error) = match result {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Self {
            label: label.to_string(),
            trial,
            seed: config.seed,
            config_hash: config_hash(config)?,
            failed: error.is_some() || is_failed(report.as_ref().and_then(|r| r.r_ove)),
            report,
            error,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

fn mean_of(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl AblationReport {
    /// Plain-text table: one line per run, then per-cell means over
    /// successful trials. Failed rows show `-` in place of metrics.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:>8} {:>8} {:>8} | {:>7} {:>7} {:>7} | {:>7}  {}",
            "cell", "trial", "R_com", "R_shm", "R_sub", "R_ove", "R_und", "R_ali", "R_occ", "config"
        );
        let cell = |v: Option<f64>, w: usize| v.map_or_else(|| format!("{:>w$}", "-"), |v| format!("{v:>w$.4}"));
        let line = |s: &mut String, label: &str, trial: String, r: Option<&MetricsReport>, hash: &str| {
            let g = |f: fn(&MetricsReport) -> Option<f64>| r.and_then(f);
            let _ = writeln!(
                s,
                "{label:<12} {trial:>5} {} {} {} | {} {} {} | {}  {hash}",
                cell(g(|r| r.r_com), 8),
                cell(g(|r| r.r_shm), 8),
                cell(g(|r| r.r_sub), 8),
                cell(g(|r| r.r_ove), 7),
                cell(g(|r| r.r_und), 7),
                cell(g(|r| r.r_ali), 7),
                cell(r.map(|r| r.r_occ), 7),
            );
        };
        for row in &self.rows {
            let shown = if row.failed { None } else { row.report.as_ref() };
            line(&mut s, &row.label, row.trial.to_string(), shown, &row.config_hash[..12]);
        }
        let mut labels: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !labels.contains(&r.label.as_str()) {
                labels.push(&r.label);
            }
        }
        let _ = writeln!(s, "-- means over non-failed trials --");
        for label in labels {
            let ok: Vec<&MetricsReport> = self
                .rows
                .iter()
                .filter(|r| r.label == label && !r.failed)
                .filter_map(|r| r.report.as_ref())
                .collect();
            let mean = (!ok.is_empty()).then(|| MetricsReport {
                r_com: mean_of(ok.iter().map(|r| r.r_com)),
                r_shm: mean_of(ok.iter().map(|r| r.r_shm)),
                r_sub: mean_of(ok.iter().map(|r| r.r_sub)),
                r_ove: mean_of(ok.iter().map(|r| r.r_ove)),
                r_und: mean_of(ok.iter().map(|r| r.r_und)),
                r_ali: mean_of(ok.iter().map(|r| r.r_ali)),
                r_occ: ok.iter().map(|r| r.r_occ).sum::<f64>() / ok.len() as f64,
                n_layouts: ok[0].n_layouts,
            });
            line(&mut s, label, format!("{}", ok.len()), mean.as_ref(), "");
        }
        s
    }
}

/// Trains every cell `trials` times (seeds `base.seed + trial`) and
/// evaluates each run on `eval_samples`. A crashing cell is recorded as a
/// failed row and the suite continues. With `out_dir`, writes
/// `ablation_<axis>.json` and a matching `.txt` table.
pub fn run_ablation(
    suite: &AblationSuite,
    corpus: &Corpus,
    train_manifest: &CorpusManifest,
    eval_samples: &[&DomainSample],
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    suite.validate()?;
    let mut rows = Vec::with_capacity(suite.values.len() * suite.trials);
    for cell in &suite.values {
        for trial in 0..suite.trials {
            let mut config = cell.config.clone();
            config.seed = suite.base.seed.wrapping_add(trial as u64);
            log::info!("ablation cell {} trial {trial}", cell.label);
            let result = train(&config, corpus, train_manifest, None).and_then(|o| evaluate(&o.trainer, eval_samples).map(|(_, r)| r));
            if let Err(e) = &result {
                log::warn!("cell {} trial {trial} failed: {e}", cell.label);
            }
            rows.push(AblationRow::from_result(&cell.label, trial, &config, result)?);
        }
    }
    let report = AblationReport { axis: suite.axis, rows };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let name = serde_json::to_value(suite.axis)?.as_str().unwrap_or("axis").to_string();
        std::fs::write(dir.join(format!("ablation_{name}.json")), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(dir.join(format!("ablation_{name}.txt")), report.table())?;
    }
    Ok(report)
}
