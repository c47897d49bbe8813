use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use starforest::demos::matrix::{build_ghost_sf, spmv, spmv_transpose, CooMatrix};
use starforest::demos::pingpong::{run_pingpong, sweep, to_csv, PingPongConfig};
use starforest::demos::selftest::{run_selftest, SelftestConfig};
use starforest::{run_ranks, Backend, GhostVector, RunConfig, SplitMatrix};

#[derive(Parser)]
#[command(name = "sf", version, about = "Star-forest communication demos")]
struct Cli {
    /// Transport backend (overrides SF_TRANSPORT).
    #[arg(long, global = true)]
    backend: Option<Backend>,

    /// Per-wait timeout in seconds (overrides SF_TIMEOUT_S).
    #[arg(long, global = true)]
    timeout: Option<f64>,

    /// Write CSV output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-rank bcast/reduce latency sweep.
    Pingpong {
        #[arg(long, default_value_t = 1 << 10)]
        min_bytes: usize,
        #[arg(long, default_value_t = 4 << 20)]
        max_bytes: usize,
        /// Ratio between consecutive message sizes.
        #[arg(long, default_value_t = 4)]
        factor: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
    /// Distributed y = M x (or Mᵀ x) for a Matrix Market file, checked
    /// against a sequential product.
    Spmv {
        #[arg(long)]
        matrix: PathBuf,
        /// Rank count (overrides SF_NRANKS).
        #[arg(long)]
        ranks: Option<usize>,
        #[arg(long)]
        transpose: bool,
    },
    /// Randomized comparison of every operation against a sequential
    /// evaluation.
    Selftest {
        /// Overrides SF_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        max_ranks: usize,
    },
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Input vector entry for global index `i`.
fn x_entry(i: usize) -> f64 {
    (i % 10) as f64 + 1.0
}

fn run_spmv(mut run: RunConfig, path: &PathBuf, transpose: bool) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let global = CooMatrix::<f64>::parse_matrix_market(&text)?;
    let n_in = if transpose { global.nrows } else { global.ncols };
    let n_out = if transpose { global.ncols } else { global.nrows };
    let x: Vec<f64> = (0..n_in).map(x_entry).collect();
    let mut want = vec![0.0; n_out];
    for &(r, c, v) in &global.entries {
        if transpose {
            want[c] += v * x[r];
        } else {
            want[r] += v * x[c];
        }
    }
    run.nranks = run.nranks.max(1);
    let parts = run_ranks(&run, move |ctx| {
        let comm = &ctx.comm;
        let m = SplitMatrix::distribute(comm, (comm.rank() == 0).then_some(&global))?;
        let sf = build_ghost_sf(comm, &m)?;
        if transpose {
            let xs: Vec<f64> = m.rows.range(m.rank).map(x_entry).collect();
            let mut y = GhostVector::for_matrix(&m, vec![0.0; m.local_cols()]);
            spmv_transpose(&sf, &m, &xs, &mut y)?;
            Ok((m.cols.range(m.rank).start, y.owned))
        } else {
            let mut xg = GhostVector::for_matrix(&m, m.cols.range(m.rank).map(x_entry).collect());
            let mut y = vec![0.0; m.local_rows()];
            spmv(&sf, &m, &mut xg, &mut y)?;
            Ok((m.rows.range(m.rank).start, y))
        }
    })?;
    let mut csv = String::from("row,value\n");
    let mut worst: f64 = 0.0;
    for (start, y) in parts {
        for (k, v) in y.iter().enumerate() {
            let i = start + k;
            worst = worst.max((v - want[i]).abs() / want[i].abs().max(1.0));
            csv.push_str(&format!("{i},{v:e}\n"));
        }
    }
    eprintln!("max relative deviation from sequential product: {worst:e}");
    if worst > 1e-12 {
        bail!("distributed product deviates from sequential product by {worst:e}");
    }
    Ok(csv)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut run = RunConfig::from_env()?;
    if let Some(b) = cli.backend {
        run.backend = b;
    }
    if let Some(t) = cli.timeout {
        if !(t > 0.0) {
            bail!("--timeout must be positive");
        }
        run.timeout = Duration::from_secs_f64(t);
    }
    match cli.command {
        Command::Pingpong {
            min_bytes,
            max_bytes,
            factor,
            iters,
            warmup,
        } => {
            let config = PingPongConfig {
                sizes: sweep(min_bytes, max_bytes, factor),
                iters,
                warmup,
            };
            if config.sizes.is_empty() {
                bail!("empty size range {min_bytes}..{max_bytes}");
            }
            let report = run_pingpong(&config, &run)?;
            emit(&cli.out, &to_csv(&report.rows))
        }
        Command::Spmv {
            matrix,
            ranks,
            transpose,
        } => {
            if let Some(n) = ranks {
                run.nranks = n;
            }
            let csv = run_spmv(run, &matrix, transpose)?;
            emit(&cli.out, &csv)
        }
        Command::Selftest {
            seed,
            trials,
            max_ranks,
        } => {
            let config = SelftestConfig {
                seed: seed.unwrap_or(run.seed),
                trials,
                max_ranks,
                ..SelftestConfig::default()
            };
            let report = run_selftest(&config, &run)?;
            let mut text = format!(
                "trials={} checks={} failures={}\n",
                report.trials,
                report.checks,
                report.failures.len()
            );
            for f in &report.failures {
                text.push_str(&format!("FAIL {f}\n"));
            }
            emit(&cli.out, &text)?;
            if !report.passed() {
                bail!("selftest failed");
            }
            Ok(())
        }
    }
}
