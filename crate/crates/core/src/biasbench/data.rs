//! Dataset construction and the on-disk dataset directory format.
//!
//! Every sample is a single-channel grid in [0,1]. The label is encoded
//! purely in texture: period-2 stripes for trucks, a period-2
//! checkerboard for buses, each flipped by a random sign per 4x4 block so
//! block means carry nothing. The "white" cue is a flat +0.5 lift plus a
//! smooth blob, which is pure low-frequency content. Color therefore
//! lives exactly in the band a high-pass filter removes, and shape
//! exactly in the band it keeps.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{read_matrix_sequence, write_matrix, Matrix};
use crate::rng::{stream_rng, STREAM_DATA, STREAM_UNBIASED_DATA};

pub const LABEL_BUS: usize = 0;
pub const LABEL_TRUCK: usize = 1;

/// Pixel block edge for the per-block texture sign flips.
const SIGN_BLOCK: usize = 4;
const BASE_LEVEL: f64 = 0.2;
const TEXTURE_AMP: f64 = 0.15;
const WHITE_LIFT: f64 = 0.5;
const BLOB_AMP: f64 = 0.1;
const NOISE_SIGMA: f64 = 0.02;

/// Generation settings for one benchmark dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BiasSpec {
    /// P(white | truck); buses are white with probability 1 - p_bias.
    pub p_bias: f64,
    pub n_train: usize,
    /// Sample count for each of the two test splits.
    pub n_test: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub seed: u64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec { p_bias: 0.9, n_train: 256, n_test: 1024, grid_h: 16, grid_w: 16, seed: 0 }
    }
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.p_bias) {
            return Err(Error::config(format!(
                "p_bias {} must lie in [0.5, 1]",
                self.p_bias
            )));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::config("sample counts must be at least 1"));
        }
        if self.grid_h < 2 || self.grid_w < 2 {
            return Err(Error::config(format!(
                "grid {}x{} is too small to carry texture",
                self.grid_h, self.grid_w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorTag {
    White,
    NonWhite,
}

impl ColorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ColorTag::White => "white",
            ColorTag::NonWhite => "non_white",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(ColorTag::White),
            "non_white" => Ok(ColorTag::NonWhite),
            other => Err(Error::format(format!("unknown color tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    BiasedTest,
    UnbiasedTest,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::BiasedTest => "biased_test",
            Split::UnbiasedTest => "unbiased_test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "biased_test" => Ok(Split::BiasedTest),
            "unbiased_test" => Ok(Split::UnbiasedTest),
            other => Err(Error::format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub pixels: Matrix,
    pub label: usize,
    pub color_tag: ColorTag,
    /// Pattern id; the label is this value by construction, which is what
    /// makes the benchmark solvable from shape alone.
    pub shape_tag: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataRecord {
    pub split: Split,
    pub sample: SyntheticSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: BiasSpec,
    pub records: Vec<DataRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&SyntheticSample> {
        self.records.iter().filter(|r| r.split == split).map(|r| &r.sample).collect()
    }
}

fn texture_value(shape_tag: u8, i: usize, j: usize) -> f64 {
    let sign = match shape_tag {
        t if t as usize == LABEL_TRUCK => {
            if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
        _ => {
            if (i + j) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }
    };
    TEXTURE_AMP * sign
}

fn draw_sample(rng: &mut impl Rng, spec: &BiasSpec, p_white_given_truck: f64) -> SyntheticSample {
    let label = if rng.gen_bool(0.5) { LABEL_TRUCK } else { LABEL_BUS };
    let p_white =
        if label == LABEL_TRUCK { p_white_given_truck } else { 1.0 - p_white_given_truck };
    // gen_bool rejects the degenerate endpoints' complements awkwardly;
    // compare a uniform draw instead so p = 0 and p = 1 behave exactly.
    let white = rng.gen_range(0.0..1.0) < p_white;

    let (h, w) = (spec.grid_h, spec.grid_w);
    let blocks_h = h.div_ceil(SIGN_BLOCK);
    let blocks_w = w.div_ceil(SIGN_BLOCK);
    let signs: Vec<f64> = (0..blocks_h * blocks_w)
        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let (blob_ci, blob_cj) = (
        rng.gen_range(h as f64 / 3.0..2.0 * h as f64 / 3.0),
        rng.gen_range(w as f64 / 3.0..2.0 * w as f64 / 3.0),
    );
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("fixed sigma is valid");
    let blob_r = (h.min(w) as f64) / 4.0;

    let shape_tag = label as u8;
    let mut pixels = Matrix::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let block = (i / SIGN_BLOCK) * blocks_w + j / SIGN_BLOCK;
            let mut v = BASE_LEVEL + signs[block] * texture_value(shape_tag, i, j);
            if white {
                let di = i as f64 - blob_ci;
                let dj = j as f64 - blob_cj;
                v += WHITE_LIFT
                    + BLOB_AMP * (-(di * di + dj * dj) / (2.0 * blob_r * blob_r)).exp();
            }
            v += noise.sample(rng);
            pixels.set(i, j, v.clamp(0.0, 1.0));
        }
    }
    SyntheticSample {
        pixels,
        label,
        color_tag: if white { ColorTag::White } else { ColorTag::NonWhite },
        shape_tag,
    }
}

/// Draws the train and biased test splits at `spec.p_bias` from one
/// stream and the unbiased test split (p = 0.5) from a second, so the
/// whole dataset is a pure function of the spec.
pub fn gen_dataset(spec: &BiasSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.n_train + 2 * spec.n_test);
    let mut biased_rng = stream_rng(spec.seed, STREAM_DATA);
    for _ in 0..spec.n_train {
        records.push(DataRecord {
            split: Split::Train,
            sample: draw_sample(&mut biased_rng, spec, spec.p_bias),
        });
    }
    for _ in 0..spec.n_test {
        records.push(DataRecord {
            split: Split::BiasedTest,
            sample: draw_sample(&mut biased_rng, spec, spec.p_bias),
        });
    }
    let mut unbiased_rng = stream_rng(spec.seed, STREAM_UNBIASED_DATA);
    for _ in 0..spec.n_test {
        records.push(DataRecord {
            split: Split::UnbiasedTest,
            sample: draw_sample(&mut unbiased_rng, spec, 0.5),
        });
    }
    Ok(Dataset { spec: spec.clone(), records })
}

/// Writes spec.json, samples.cmat (concatenated records in row order),
/// and labels.csv. Byte-identical for identical specs.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let spec_text = serde_json::to_string_pretty(&dataset.spec)
        .map_err(|e| Error::format(format!("spec encode: {e}")))?;
    fs::write(dir.join("spec.json"), spec_text + "\n")?;

    let mut blob = BufWriter::new(fs::File::create(dir.join("samples.cmat"))?);
    for record in &dataset.records {
        write_matrix(&mut blob, &record.sample.pixels)?;
    }
    std::io::Write::flush(&mut blob)?;

    let mut csv = csv::Writer::from_path(dir.join("labels.csv"))
        .map_err(|e| Error::format(format!("labels.csv: {e}")))?;
    csv.write_record(["index", "split", "label", "color_tag", "shape_tag"])
        .map_err(|e| Error::format(format!("labels.csv: {e}")))?;
    for (index, record) in dataset.records.iter().enumerate() {
        csv.write_record([
            index.to_string(),
            record.split.as_str().to_string(),
            record.sample.label.to_string(),
            record.sample.color_tag.as_str().to_string(),
            record.sample.shape_tag.to_string(),
        ])
        .map_err(|e| Error::format(format!("labels.csv: {e}")))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let spec_text = fs::read_to_string(dir.join("spec.json"))?;
    let spec: BiasSpec = serde_json::from_str(&spec_text)
        .map_err(|e| Error::format(format!("spec.json: {e}")))?;
    spec.validate()?;

    let mut blob = BufReader::new(fs::File::open(dir.join("samples.cmat"))?);
    let pixel_maps = read_matrix_sequence(&mut blob)?;

    let mut csv = csv::Reader::from_path(dir.join("labels.csv"))
        .map_err(|e| Error::format(format!("labels.csv: {e}")))?;
    let mut records = Vec::new();
    for (row_index, row) in csv.records().enumerate() {
        let row = row.map_err(|e| Error::format(format!("labels.csv row: {e}")))?;
        if row.len() != 5 {
            return Err(Error::format(format!(
                "labels.csv row {row_index}: {} fields, expected 5",
                row.len()
            )));
        }
        let index: usize = row[0]
            .parse()
            .map_err(|_| Error::format(format!("labels.csv row {row_index}: bad index")))?;
        if index != row_index {
            return Err(Error::format(format!(
                "labels.csv row {row_index} claims index {index}"
            )));
        }
        let pixels = pixel_maps.get(row_index).cloned().ok_or_else(|| {
            Error::format(format!("labels.csv row {row_index} has no matching sample blob"))
        })?;
        if pixels.rows() != spec.grid_h || pixels.cols() != spec.grid_w {
            return Err(Error::format(format!(
                "sample {row_index} is {}x{}, spec says {}x{}",
                pixels.rows(),
                pixels.cols(),
                spec.grid_h,
                spec.grid_w
            )));
        }
        let label: usize = row[2]
            .parse()
            .map_err(|_| Error::format(format!("labels.csv row {row_index}: bad label")))?;
        let shape_tag: u8 = row[4]
            .parse()
            .map_err(|_| Error::format(format!("labels.csv row {row_index}: bad shape tag")))?;
        records.push(DataRecord {
            split: Split::parse(&row[1])?,
            sample: SyntheticSample {
                pixels,
                label,
                color_tag: ColorTag::parse(&row[3])?,
                shape_tag,
            },
        });
    }
    if records.len() != pixel_maps.len() {
        return Err(Error::format(format!(
            "labels.csv lists {} rows but samples.cmat holds {} blobs",
            records.len(),
            pixel_maps.len()
        )));
    }
    Ok(Dataset { spec, records })
}

/// Accuracy of predicting truck exactly when the sample is white. This is
/// the ceiling any color-reading shortcut can reach.
pub fn color_only_accuracy(samples: &[&SyntheticSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|s| {
            let predicted =
                if s.color_tag == ColorTag::White { LABEL_TRUCK } else { LABEL_BUS };
            predicted == s.label
        })
        .count();
    correct as f64 / samples.len() as f64
}

/// Accuracy of reading the label straight off the shape tag; 1.0 by
/// construction, which certifies the benchmark is solvable without color.
pub fn shape_only_accuracy(samples: &[&SyntheticSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples.iter().filter(|s| s.shape_tag as usize == s.label).count();
    correct as f64 / samples.len() as f64
}
