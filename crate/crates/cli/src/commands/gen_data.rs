use clap::Args;

use cauvis_core::biasbench::{gen_dataset, save_dataset, BiasSpec};
use cauvis_core::Result;

use super::{checksum_files, ensure_out_dir, load_config, Cli};

#[derive(Args)]
pub struct GenDataArgs {
    /// Chance that a truck is white (and a bus is not), in [0.5, 1].
    #[arg(long, value_name = "P")]
    pub p_bias: Option<f64>,

    /// Training samples.
    #[arg(long, value_name = "N")]
    pub n_train: Option<usize>,

    /// Test samples per split.
    #[arg(long, value_name = "N")]
    pub n_test: Option<usize>,

    /// Image rows.
    #[arg(long, value_name = "H")]
    pub grid_h: Option<usize>,

    /// Image columns.
    #[arg(long, value_name = "W")]
    pub grid_w: Option<usize>,
}

pub fn run(cli: &Cli, args: &GenDataArgs) -> Result<()> {
    let mut spec: BiasSpec = load_config(cli.config.as_deref())?;
    if let Some(p) = args.p_bias {
        spec.p_bias = p;
    }
    if let Some(n) = args.n_train {
        spec.n_train = n;
    }
    if let Some(n) = args.n_test {
        spec.n_test = n;
    }
    if let Some(h) = args.grid_h {
        spec.grid_h = h;
    }
    if let Some(w) = args.grid_w {
        spec.grid_w = w;
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }

    let dataset = gen_dataset(&spec)?;
    let dir = ensure_out_dir(cli, "dataset")?;
    save_dataset(&dir, &dataset)?;

    let files = ["spec.json", "samples.cmat", "labels.csv"]
        .iter()
        .map(|name| dir.join(name))
        .collect::<Vec<_>>();
    let digest = checksum_files(&files)?;
    println!("dataset {}", dir.display());
    println!("sha256 {digest}");
    Ok(())
}
