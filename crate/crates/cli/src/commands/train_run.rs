use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use cauvis_core::autograd::{save_checkpoint, TrainConfig};
use cauvis_core::biasbench::{load_dataset, train_model, write_history_csv, ModelKind, NetConfig};
use cauvis_core::{Error, Result};

use super::{ensure_out_dir, load_config, Cli};

/// Everything needed to rebuild the trained model from its checkpoint:
/// stored as the checkpoint's config payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub kind: ModelKind,
    pub grid_h: usize,
    pub grid_w: usize,
    pub net: NetConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCliConfig {
    /// Dataset directory produced by gen-data.
    pub data: PathBuf,
    pub kind: ModelKind,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        TrainCliConfig {
            data: PathBuf::from("dataset"),
            kind: ModelKind::Cauvis,
            net: NetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,

    /// Model kind: baseline or cauvis.
    #[arg(long, value_name = "KIND")]
    pub kind: Option<String>,

    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,

    #[arg(long, value_name = "LR")]
    pub learning_rate: Option<f64>,

    #[arg(long, value_name = "L")]
    pub lambda_tail: Option<f64>,

    #[arg(long, value_name = "L")]
    pub lambda_inv: Option<f64>,

    #[arg(long, value_name = "W")]
    pub invariance_weight: Option<f64>,

    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,

    #[arg(long, value_name = "M")]
    pub proj_lr_mult: Option<f64>,
}

pub(crate) fn apply_train_flags(train: &mut TrainConfig, args: &TrainArgs) -> Result<()> {
    if let Some(v) = args.epochs {
        train.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        train.learning_rate = v;
    }
    if let Some(v) = args.lambda_tail {
        train.lambda_tail = v;
    }
    if let Some(v) = args.lambda_inv {
        train.lambda_inv = v;
    }
    if let Some(v) = args.invariance_weight {
        train.invariance_weight = v;
    }
    if let Some(v) = args.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = args.proj_lr_mult {
        train.proj_lr_mult = v;
    }
    Ok(())
}

pub fn run(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let mut cfg: TrainCliConfig = load_config(cli.config.as_deref())?;
    if let Some(dir) = &args.data {
        cfg.data = dir.clone();
    }
    if let Some(kind) = &args.kind {
        cfg.kind = ModelKind::parse(kind)?;
    }
    apply_train_flags(&mut cfg.train, args)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }

    let dataset = load_dataset(&cfg.data)?;
    let trained = train_model(&dataset, cfg.kind, &cfg.net, &cfg.train)?;

    let out = ensure_out_dir(cli, "run")?;
    let history_path = out.join("history.csv");
    write_history_csv(&history_path, &trained.history)?;

    let manifest = ModelManifest {
        kind: cfg.kind,
        grid_h: dataset.spec.grid_h,
        grid_w: dataset.spec.grid_w,
        net: cfg.net.clone(),
        train: cfg.train.clone(),
    };
    let manifest_json = serde_json::to_value(&manifest)
        .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    let checkpoint_dir = out.join("checkpoint");
    save_checkpoint(
        &checkpoint_dir,
        &trained.store,
        cfg.train.epochs as u64,
        &manifest_json,
    )?;

    let last = trained.history.last().expect("history always has the init row");
    println!("history {}", history_path.display());
    println!("checkpoint {}", checkpoint_dir.display());
    println!("epochs {}", cfg.train.epochs);
    println!("final_loss {}", last.loss);
    Ok(())
}
