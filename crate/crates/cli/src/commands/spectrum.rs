use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use cauvis_core::autograd::load_checkpoint;
use cauvis_core::biasbench::{load_dataset, Split};
use cauvis_core::cap::{self, AttentionMode};
use cauvis_core::{Error, Result};

use super::eval_run::rebuild_model;
use super::{ensure_out_dir, load_config, Cli};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumCliConfig {
    pub data: PathBuf,
    pub model: PathBuf,
    /// How many training samples to decompose.
    pub samples: usize,
}

impl Default for SpectrumCliConfig {
    fn default() -> Self {
        SpectrumCliConfig {
            data: PathBuf::from("dataset"),
            model: PathBuf::from("run/checkpoint"),
            samples: 4,
        }
    }
}

#[derive(Args)]
pub struct SpectrumArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,

    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,

    /// How many training samples to decompose.
    #[arg(long, value_name = "N")]
    pub samples: Option<usize>,
}

pub fn run(cli: &Cli, args: &SpectrumArgs) -> Result<()> {
    let mut cfg: SpectrumCliConfig = load_config(cli.config.as_deref())?;
    if let Some(dir) = &args.data {
        cfg.data = dir.clone();
    }
    if let Some(dir) = &args.model {
        cfg.model = dir.clone();
    }
    if let Some(n) = args.samples {
        cfg.samples = n;
    }
    if cfg.samples == 0 {
        return Err(Error::config("samples must be at least 1"));
    }

    let dataset = load_dataset(&cfg.data)?;
    let loaded = load_checkpoint(&cfg.model)?;
    let (model, _manifest) = rebuild_model(&loaded)?;
    let layer = model
        .layer
        .as_ref()
        .ok_or_else(|| Error::config("the baseline model has no attention layer to decompose"))?;

    let train = dataset.split(Split::Train);
    let count = cfg.samples.min(train.len());
    let mut out_text = String::from("layer,step,index,sigma,cumulative_energy_ratio\n");
    for (step, sample) in train[..count].iter().enumerate() {
        let x = model.embed_pure(&loaded.store, &sample.pixels)?;
        let fwd = layer.forward_pure(&loaded.store, &x, AttentionMode::Full)?;
        for (index, sigma, cumulative) in cap::spectrum_rows(&fwd.attention.decomposition.factors.sigma)
        {
            out_text.push_str(&format!("0,{step},{index},{sigma},{cumulative}\n"));
        }
    }

    let out = ensure_out_dir(cli, "spectrum")?;
    let path = out.join("spectrum.csv");
    fs::write(&path, out_text)?;
    println!("samples {count}");
    println!("spectrum {}", path.display());
    Ok(())
}
