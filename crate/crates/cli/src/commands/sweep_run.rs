use clap::Args;

use cauvis_core::biasbench::{bias_sweep, write_report_csv, ModelKind, SweepConfig};
use cauvis_core::{Error, Result};

use super::{ensure_out_dir, load_config, parse_f64_list, parse_u64_list, write_json_pretty, Cli};

#[derive(Args)]
pub struct SweepArgs {
    /// Comma-separated bias levels, e.g. 0.75,0.8,0.85,0.9.
    #[arg(long, value_name = "LIST")]
    pub p: Option<String>,

    /// Comma-separated model kinds, e.g. baseline,cauvis.
    #[arg(long, value_name = "LIST")]
    pub kinds: Option<String>,

    /// Comma-separated seeds, e.g. 0,1,2,3,4.
    #[arg(long, value_name = "LIST")]
    pub seeds: Option<String>,

    #[arg(long, value_name = "N")]
    pub n_train: Option<usize>,

    #[arg(long, value_name = "N")]
    pub n_test: Option<usize>,

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
}

/// Worker cap from the environment; absent means the process default.
fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("CAUVIS_LAB_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(err) => Err(Error::config(format!("CAUVIS_LAB_THREADS: {err}"))),
        Ok(text) => {
            let n: usize = text.trim().parse().map_err(|_| {
                Error::config(format!("CAUVIS_LAB_THREADS must be a positive integer, got {text:?}"))
            })?;
            if n == 0 {
                return Err(Error::config("CAUVIS_LAB_THREADS must be at least 1"));
            }
            Ok(Some(n))
        }
    }
}

pub fn run(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let mut cfg: SweepConfig = load_config(cli.config.as_deref())?;
    if let Some(list) = &args.p {
        cfg.p_list = parse_f64_list(list)?;
    }
    if let Some(list) = &args.kinds {
        cfg.kinds = list
            .split(',')
            .map(|part| ModelKind::parse(part.trim()))
            .collect::<Result<Vec<_>>>()?;
    }
    if let Some(list) = &args.seeds {
        cfg.seeds = parse_u64_list(list)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(n) = args.n_train {
        cfg.data.n_train = n;
    }
    if let Some(n) = args.n_test {
        cfg.data.n_test = n;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = args.lambda_tail {
        cfg.train.lambda_tail = v;
    }
    if let Some(v) = args.lambda_inv {
        cfg.train.lambda_inv = v;
    }
    if let Some(v) = args.invariance_weight {
        cfg.train.invariance_weight = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }

    let report = bias_sweep(&cfg, thread_cap()?)?;

    let out = ensure_out_dir(cli, "sweep")?;
    let report_path = out.join("report.csv");
    write_report_csv(&report_path, &report)?;
    let summary_path = out.join("summary.json");
    write_json_pretty(&summary_path, &report.summary)?;

    println!("rows {}", report.rows.len());
    for entry in &report.summary.median_gaps {
        println!(
            "median_gap p={} kind={} {}",
            entry.p_bias,
            entry.kind.as_str(),
            entry.median_gap
        );
    }
    for cmp in &report.summary.cauvis_seed_wins {
        println!("cauvis_smaller p={} {}/{}", cmp.p_bias, cmp.cauvis_smaller, cmp.seeds);
    }
    println!("report {}", report_path.display());
    println!("summary {}", summary_path.display());
    Ok(())
}
