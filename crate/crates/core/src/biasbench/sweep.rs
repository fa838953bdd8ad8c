//! Grid sweep over bias strength, model kind, and seed.
//!
//! Each cell regenerates its dataset and trains from scratch, so cells are
//! independent and can run on a thread pool without changing any numbers;
//! rows are sorted afterwards to keep the report order stable.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::TrainConfig;
use crate::error::{Error, Result};

use super::data::{gen_dataset, BiasSpec};
use super::model::{ModelKind, NetConfig};
use super::train::{evaluate_checkpoint, train_model};

/// The sweep grid and the shared data, model, and training settings.
///
/// `p_bias` and `seed` inside `data` and `train` are ignored; each cell
/// overrides them with its own grid coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub p_list: Vec<f64>,
    pub kinds: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub data: BiasSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            p_list: vec![0.75, 0.8, 0.85, 0.9],
            kinds: vec![ModelKind::Baseline, ModelKind::Cauvis],
            seeds: (0..5).collect(),
            data: BiasSpec::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_list.is_empty() {
            return Err(Error::config("p_list must name at least one bias level"));
        }
        for &p in &self.p_list {
            if !(0.5..=1.0).contains(&p) {
                return Err(Error::config(format!("bias level {p} must lie in [0.5, 1]")));
            }
        }
        if self.kinds.is_empty() {
            return Err(Error::config("kinds must name at least one model kind"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must name at least one seed"));
        }
        self.data.validate()?;
        self.train.validate()?;
        self.net.validate(self.data.grid_h, self.data.grid_w)
    }
}

/// One trained cell of the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p_bias: f64,
    pub kind: ModelKind,
    pub seed: u64,
    pub acc_biased: f64,
    pub acc_unbiased: f64,
    /// Biased minus unbiased accuracy.
    pub gap: f64,
}

/// Median gap over seeds for one (bias level, kind) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianGap {
    pub p_bias: f64,
    pub kind: ModelKind,
    pub median_gap: f64,
}

/// Seed-by-seed gap comparison between the two kinds at one bias level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub p_bias: f64,
    /// Seeds where the prompt model's gap is strictly smaller than the
    /// baseline's.
    pub cauvis_smaller: usize,
    /// Seeds compared, those trained under both kinds.
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub median_gaps: Vec<MedianGap>,
    /// Present only for bias levels that trained both kinds.
    pub cauvis_seed_wins: Vec<SeedComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

fn run_cell(cfg: &SweepConfig, p_bias: f64, kind: ModelKind, seed: u64) -> Result<SweepRow> {
    let spec = BiasSpec { p_bias, seed, ..cfg.data.clone() };
    let dataset = gen_dataset(&spec)?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let trained = train_model(&dataset, kind, &cfg.net, &train_cfg)?;
    let metrics = evaluate_checkpoint(&trained.store, &trained.model, &dataset)?;
    Ok(SweepRow {
        p_bias,
        kind,
        seed,
        acc_biased: metrics[0].accuracy,
        acc_unbiased: metrics[1].accuracy,
        gap: metrics[0].gap,
    })
}

/// Middle of a sorted sample, averaging the two central values when even.
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("gaps are finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn summarize(cfg: &SweepConfig, rows: &[SweepRow]) -> SweepSummary {
    let mut median_gaps = Vec::new();
    for &p in &cfg.p_list {
        for &kind in &cfg.kinds {
            let mut gaps: Vec<f64> = rows
                .iter()
                .filter(|r| r.p_bias == p && r.kind == kind)
                .map(|r| r.gap)
                .collect();
            median_gaps.push(MedianGap { p_bias: p, kind, median_gap: median(&mut gaps) });
        }
    }
    let mut cauvis_seed_wins = Vec::new();
    if cfg.kinds.contains(&ModelKind::Baseline) && cfg.kinds.contains(&ModelKind::Cauvis) {
        for &p in &cfg.p_list {
            let mut smaller = 0;
            for &seed in &cfg.seeds {
                let gap_of = |kind: ModelKind| {
                    rows.iter()
                        .find(|r| r.p_bias == p && r.kind == kind && r.seed == seed)
                        .map(|r| r.gap)
                };
                if let (Some(base), Some(cauvis)) =
                    (gap_of(ModelKind::Baseline), gap_of(ModelKind::Cauvis))
                {
                    if cauvis < base {
                        smaller += 1;
                    }
                }
            }
            cauvis_seed_wins.push(SeedComparison {
                p_bias: p,
                cauvis_smaller: smaller,
                seeds: cfg.seeds.len(),
            });
        }
    }
    SweepSummary { median_gaps, cauvis_seed_wins }
}

/// Runs every (bias level, kind, seed) cell and summarizes the gaps.
///
/// `threads` caps the worker pool; `None` uses the process-wide default.
/// Results do not depend on the thread count.
pub fn bias_sweep(cfg: &SweepConfig, threads: Option<usize>) -> Result<SweepReport> {
    cfg.validate()?;
    let cells: Vec<(f64, ModelKind, u64)> = cfg
        .p_list
        .iter()
        .flat_map(|&p| {
            cfg.kinds
                .iter()
                .flat_map(move |&kind| cfg.seeds.iter().map(move |&seed| (p, kind, seed)))
        })
        .collect();
    let run_all = || -> Result<Vec<SweepRow>> {
        cells
            .par_iter()
            .map(|&(p, kind, seed)| run_cell(cfg, p, kind, seed))
            .collect()
    };
    let mut rows = match threads {
        None => run_all()?,
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            pool.install(run_all)?
        }
    };
    rows.sort_by(|a, b| {
        a.p_bias
            .partial_cmp(&b.p_bias)
            .expect("bias levels are finite")
            .then(a.kind.cmp(&b.kind))
            .then(a.seed.cmp(&b.seed))
    });
    let summary = summarize(cfg, &rows);
    Ok(SweepReport { rows, summary })
}

/// Writes the per-cell rows as CSV with a fixed header. Floats use the
/// shortest round-trip form so reruns produce identical bytes.
pub fn write_report_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut out = String::from("p_bias,kind,seed,acc_biased,acc_unbiased,gap\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.p_bias,
            row.kind.as_str(),
            row.seed,
            row.acc_biased,
            row.acc_unbiased,
            row.gap
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
