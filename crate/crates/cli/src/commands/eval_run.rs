use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use cauvis_core::autograd::{load_checkpoint, LoadedCheckpoint, ParamStore};
use cauvis_core::biasbench::{evaluate_checkpoint, load_dataset, BiasModel};
use cauvis_core::rng::{stream_rng, STREAM_INIT};
use cauvis_core::{Error, Result};

use super::train_run::ModelManifest;
use super::{ensure_out_dir, load_config, write_json_pretty, Cli};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalCliConfig {
    pub data: PathBuf,
    /// Checkpoint directory written by the train command.
    pub model: PathBuf,
}

impl Default for EvalCliConfig {
    fn default() -> Self {
        EvalCliConfig {
            data: PathBuf::from("dataset"),
            model: PathBuf::from("run/checkpoint"),
        }
    }
}

#[derive(Args)]
pub struct EvalArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,

    /// Checkpoint directory.
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
}

/// Rebuilds the model structure a checkpoint describes and verifies the
/// restored parameters line up with it name by name and shape by shape.
pub(crate) fn rebuild_model(loaded: &LoadedCheckpoint) -> Result<(BiasModel, ModelManifest)> {
    let manifest: ModelManifest = serde_json::from_value(loaded.config.clone())
        .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    let mut scratch = ParamStore::new();
    let mut rng = stream_rng(manifest.train.seed, STREAM_INIT);
    let model = BiasModel::init(
        &mut scratch,
        manifest.kind,
        &manifest.net,
        manifest.grid_h,
        manifest.grid_w,
        &mut rng,
        manifest.train.proj_lr_mult,
    )?;
    if scratch.len() != loaded.store.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} parameters, the described model has {}",
            loaded.store.len(),
            scratch.len()
        )));
    }
    for (expected, restored) in scratch.iter().zip(loaded.store.iter()) {
        if expected.name != restored.name
            || expected.value.rows() != restored.value.rows()
            || expected.value.cols() != restored.value.cols()
        {
            return Err(Error::Format(format!(
                "checkpoint parameter {} does not match the described model",
                restored.name
            )));
        }
    }
    Ok((model, manifest))
}

pub fn run(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let mut cfg: EvalCliConfig = load_config(cli.config.as_deref())?;
    if let Some(dir) = &args.data {
        cfg.data = dir.clone();
    }
    if let Some(dir) = &args.model {
        cfg.model = dir.clone();
    }

    let dataset = load_dataset(&cfg.data)?;
    let loaded = load_checkpoint(&cfg.model)?;
    let (model, manifest) = rebuild_model(&loaded)?;
    if dataset.spec.grid_h != manifest.grid_h || dataset.spec.grid_w != manifest.grid_w {
        return Err(Error::config(format!(
            "dataset grid {}x{} does not match the checkpoint's {}x{}",
            dataset.spec.grid_h, dataset.spec.grid_w, manifest.grid_h, manifest.grid_w
        )));
    }

    let metrics = evaluate_checkpoint(&loaded.store, &model, &dataset)?;
    let out = ensure_out_dir(cli, "eval")?;
    let path = out.join("metrics.json");
    write_json_pretty(&path, &metrics)?;

    for record in &metrics {
        println!(
            "{} accuracy {} gap {}",
            record.split.as_str(),
            record.accuracy,
            record.gap
        );
    }
    println!("metrics {}", path.display());
    Ok(())
}
