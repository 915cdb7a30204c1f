//! `retf` command-line front-end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retf_core::dgv::{exhaustive_dgv, VirtualGroupSet};
use retf_core::error::{Result, RetfError};
use retf_core::exec::Execution;
use retf_core::objective::Prepared;
use retf_core::output::{coverage, coverage_csv, fmt_num, write_coverage, write_run, write_sweep};
use retf_core::scenario::{CapacityMode, Scenario, ScenarioConfig};
use retf_core::sim::{optimize, run, solve_layout, sweep, SweepAxis};

/// Largest lattice the exhaustive oracle will enumerate.
const ORACLE_LIMIT: usize = 14;

#[derive(Parser)]
#[command(name = "retf", version, about = "Reflector-assisted vehicular link simulator")]
struct Cli {
    /// Run every loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a config and list every problem found.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the layout, simulate one transit and write the artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Independent runs over one axis and a list of seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// rctTeamSize, suCount or antennaCount.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Seeds per value; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Greedy grouping only, optionally checked against the exhaustive oracle.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// geometry, csi or hybrid; defaults to the config mode.
        #[arg(long)]
        mode: Option<CapacityMode>,
        /// Interference level factor; defaults to the config value.
        #[arg(long)]
        zeta: Option<f64>,
        #[arg(long)]
        oracle: bool,
    },
    /// Bias ratio and DRA/IDRA/GAP labels along the road for the solved layout.
    Geometry {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid_step: f64,
        /// Write geometry.csv and a manifest here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn threads() -> Result<Option<usize>> {
    match std::env::var("RETF_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| RetfError::Parse(format!("RETF_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn set_line(set: &VirtualGroupSet) -> String {
    set.pairs()
        .iter()
        .map(|(a, b)| format!("[{a},{b}]"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn print_ratios(label: &str, set: &VirtualGroupSet, r: &retf_core::capacity::ThroughputRatios) {
    println!("{label}: groups {}", set_line(set));
    println!(
        "{label}: phi_tar {} phi_sen {} phi {}",
        fmt_num(r.tv_ratio),
        fmt_num(r.su_ratio),
        fmt_num(r.joint)
    );
}

fn cmd_validate(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let issues = cfg.issues();
    if !issues.is_empty() {
        return Err(RetfError::Config(issues));
    }
    Scenario::build(cfg)?;
    println!("{}: ok", common.config.display());
    Ok(())
}

fn cmd_run(common: &Common, out: &Path, exec: Execution) -> Result<()> {
    let cfg = load(common)?;
    let scn = Scenario::build(cfg.clone())?;
    let ctx = scn.ctx;
    let res = exec.with_thread_cap(threads()?, || run(scn, exec))?;
    write_run(out, &cfg, &ctx, &res)?;
    let s = &res.trace.summary;
    print_ratios("layout", &res.layout.set, &res.layout.ratios);
    println!(
        "run: phi_tar {} phi_sen {} phi {} se_org {} se_enh {} rank_enh {} su_loss {}",
        fmt_num(s.phi_tar),
        fmt_num(s.phi_sen),
        fmt_num(s.phi),
        fmt_num(s.mean_se_org),
        fmt_num(s.mean_se_enh),
        fmt_num(s.mean_rank_enh),
        fmt_num(s.mean_su_loss)
    );
    for w in &res.trace.warnings {
        eprintln!("warning [{}]: {}", w.kind, w.message);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(common: &Common, axis: SweepAxis, values: &[usize], seeds: &[u64], out: &Path, exec: Execution) -> Result<()> {
    let cfg = load(common)?;
    let rows = exec.with_thread_cap(threads()?, || sweep(&cfg, axis, values, seeds, exec))?;
    write_sweep(out, &cfg, &rows)?;
    println!("{:>12} {:>5} {:>14} {:>14} {:>14} {:>14}", axis.name(), "runs", "phi", "se_org", "se_enh", "su_loss");
    for r in &rows {
        println!(
            "{:>12} {:>5} {:>14} {:>14} {:>14} {:>14}",
            r.value,
            r.runs,
            fmt_num(r.phi.mean),
            fmt_num(r.se_org.mean),
            fmt_num(r.se_enh.mean),
            fmt_num(r.su_loss.mean)
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_optimize(common: &Common, mode: Option<CapacityMode>, zeta: Option<f64>, oracle: bool, exec: Execution) -> Result<()> {
    let mut cfg = load(common)?;
    if let Some(z) = zeta {
        cfg.capacity.ilf = z;
    }
    if let Some(m) = mode {
        cfg.capacity_mode = m;
    }
    let n = cfg.rpp.count;
    if oracle && n > ORACLE_LIMIT {
        return Err(RetfError::Refused(format!(
            "--oracle enumerates 2^N_e masks; N_e = {n} exceeds the limit of {ORACLE_LIMIT}"
        )));
    }
    let mode = cfg.capacity_mode;
    let ilf = cfg.capacity.ilf;
    let prep = Prepared::new(Scenario::build(cfg)?, exec)?;
    let greedy = optimize(&prep, mode, ilf, exec)?;
    print_ratios("greedy", &greedy.set, &greedy.ratios);
    if oracle {
        let view = prep.view(mode).with_ilf(ilf);
        let best = exhaustive_dgv(&prep.scenario.ctx, &view, ORACLE_LIMIT, exec)?;
        print_ratios("oracle", &best.set, &best.ratios);
        println!("gap: {}", fmt_num(best.ratios.joint - greedy.ratios.joint));
    }
    Ok(())
}

fn cmd_geometry(common: &Common, step: f64, out: Option<&Path>, exec: Execution) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(RetfError::Parse(format!("--grid-step must be positive, got {step}")));
    }
    let cfg = load(common)?;
    let prep = Prepared::new(Scenario::build(cfg.clone())?, exec)?;
    let layout = solve_layout(&prep, exec)?;
    let rows = coverage(&prep.scenario.ctx, &layout.set, step)?;
    match out {
        Some(dir) => {
            write_coverage(dir, &cfg, &rows)?;
            println!("wrote {}", dir.display());
        }
        None => print!("{}", coverage_csv(&rows)),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let res = match &cli.cmd {
        Cmd::Validate { common } => cmd_validate(common),
        Cmd::Run { common, out } => cmd_run(common, out, exec),
        Cmd::Sweep {
            common,
            axis,
            values,
            seeds,
            out,
        } => cmd_sweep(common, *axis, values, seeds, out, exec),
        Cmd::Optimize {
            common,
            mode,
            zeta,
            oracle,
        } => cmd_optimize(common, *mode, *zeta, *oracle, exec),
        Cmd::Geometry { common, grid_step, out } => cmd_geometry(common, *grid_step, out.as_deref(), exec),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
