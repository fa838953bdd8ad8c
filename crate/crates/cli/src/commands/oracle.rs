use clap::Args;

use cauvis_core::causal::equivalence_sweep;
use cauvis_core::rng::{stream_rng, STREAM_SCM};
use cauvis_core::{Error, Result};

use super::{ensure_out_dir, write_json_pretty, Cli};

/// Pass line for the adjustment identity: the attention mix and the
/// adjustment formula must agree to near machine precision.
const ORACLE_TOL: f64 = 1e-12;

#[derive(Args)]
pub struct OracleArgs {
    /// How many random models to draw and check.
    #[arg(long, value_name = "N", default_value_t = 1000)]
    pub random_scms: usize,

    /// Largest confounder state count.
    #[arg(long, value_name = "N", default_value_t = 5)]
    pub max_z: usize,

    /// Largest treatment state count.
    #[arg(long, value_name = "N", default_value_t = 5)]
    pub max_x: usize,

    /// Largest outcome state count.
    #[arg(long, value_name = "N", default_value_t = 5)]
    pub max_y: usize,
}

pub fn run(cli: &Cli, args: &OracleArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut rng = stream_rng(seed, STREAM_SCM);
    let report =
        equivalence_sweep(&mut rng, args.random_scms, args.max_z, args.max_x, args.max_y)?;

    let out = ensure_out_dir(cli, "oracle")?;
    let path = out.join("oracle.json");
    write_json_pretty(&path, &report)?;

    println!("cases {}", report.cases);
    println!("max_abs_diff {}", report.max_abs_diff);
    println!("report {}", path.display());

    if report.max_abs_diff > ORACLE_TOL {
        return Err(Error::numeric(format!(
            "adjustment equivalence drifted to {} above the {} tolerance",
            report.max_abs_diff, ORACLE_TOL
        )));
    }
    Ok(())
}
