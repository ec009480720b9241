use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use geosched::config::{parse_assignment, parse_grid, GridAxis, ScenarioSource};
use geosched::geotraces::{save_traces, synthesize_traces};
use geosched::rng::derive_seed;
use geosched::simulation::{run_simulation, sweep, ControllerKind, CostReport, Scenario};

/// Geotemporal-aware VM scheduling simulator.
#[derive(Parser)]
#[command(name = "geosched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write report.json, steps.csv and timing.json.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the same scenario and seed under several controllers.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated controllers, e.g. `ga,bfd`.
        #[arg(long, value_delimiter = ',', default_value = "ga,bfd")]
        controllers: Vec<String>,
    },
    /// One run per point of a parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `key=v1,v2,...`; repeat for a cartesian product.
        #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
        grid: Vec<String>,
    },
    /// Write synthetic price/temperature traces as CSV.
    GenTraces {
        /// Scenario supplying locations, horizon and synthesis parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Replace the scenario locations with `loc0..locN-1`.
        #[arg(long)]
        n_locations: Option<usize>,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Failures that should exit with the usage status.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn config_err(e: geosched::Error) -> anyhow::Error {
    match e {
        geosched::Error::Config(m) => usage(m),
        other => other.into(),
    }
}

fn overrides(seed: Option<u64>, set: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = set
        .iter()
        .map(|s| parse_assignment(s).map_err(config_err))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if let Some(seed) = seed {
        out.push(("seed".into(), seed.to_string()));
    }
    Ok(out)
}

fn load(common: &Common) -> anyhow::Result<(ScenarioSource, Vec<(String, String)>)> {
    let source = ScenarioSource::from_path(&common.config).map_err(config_err)?;
    Ok((source, overrides(common.seed, &common.set)?))
}

fn write_report(dir: &Path, report: &CostReport) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("report.json"), report.to_json()? + "\n")?;
    report.write_steps_csv(BufWriter::new(File::create(dir.join("steps.csv"))?))?;
    let timing = serde_json::json!({
        "controller": report.controller,
        "controller_wall_clock_ms": report.controller_wall_clock_ms,
    });
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    Ok(())
}

fn simulate(common: &Common) -> anyhow::Result<()> {
    let (source, over) = load(common)?;
    let scenario = source.resolve(&over).map_err(config_err)?;
    let report = run_simulation(&scenario)?;
    write_report(&common.out, &report)?;
    println!(
        "{}: energy {:.4} USD, {} migrations, consolid {:.4}, {} pending VM-steps",
        report.controller.name(),
        report.total_energy_cost_usd,
        report.migration_count,
        report.mean_consolid,
        report.pending_vm_steps
    );
    Ok(())
}

const COMPARE_HEADER: [&str; 8] = [
    "controller",
    "seed",
    "total_energy_cost_usd",
    "migration_count",
    "mean_consolid",
    "pending_vm_steps",
    "mean_planned_fitness",
    "controller_wall_clock_ms",
];

fn compare(common: &Common, controllers: &[String]) -> anyhow::Result<()> {
    let kinds = controllers
        .iter()
        .map(|c| c.trim().parse::<ControllerKind>().map_err(config_err))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if kinds.len() < 2 {
        return Err(usage("compare needs at least two controllers"));
    }
    let (source, over) = load(common)?;
    let base: Scenario = source.resolve(&over).map_err(config_err)?;
    fs::create_dir_all(&common.out)?;
    let mut rows = Vec::new();
    for kind in kinds {
        let scenario = Scenario {
            controller: kind,
            ..base.clone()
        };
        let report = run_simulation(&scenario)?;
        write_report(&common.out.join(kind.name()), &report)?;
        rows.push(vec![
            kind.name().to_string(),
            report.seed.to_string(),
            format!("{:.6}", report.total_energy_cost_usd),
            report.migration_count.to_string(),
            format!("{:.6}", report.mean_consolid),
            report.pending_vm_steps.to_string(),
            format!("{:.6}", report.mean_planned.total),
            format!("{:.1}", report.controller_wall_clock_ms),
        ]);
    }
    let mut csv = csv::Writer::from_path(common.out.join("compare.csv"))?;
    csv.write_record(COMPARE_HEADER)?;
    for r in &rows {
        csv.write_record(r)?;
    }
    csv.flush()?;
    let table = aligned(&COMPARE_HEADER, &rows);
    fs::write(common.out.join("compare.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn run_sweep(common: &Common, grid: &[String]) -> anyhow::Result<()> {
    if grid.is_empty() {
        return Err(usage("sweep needs at least one --grid KEY=V1,V2,..."));
    }
    let axes = grid
        .iter()
        .map(|g| parse_grid(g).map_err(config_err))
        .collect::<anyhow::Result<Vec<GridAxis>>>()?;
    let (source, over) = load(common)?;
    // Surface configuration mistakes before any run starts.
    for point in geosched::config::grid_points(&axes) {
        let all: Vec<_> = over.iter().chain(&point).cloned().collect();
        source.resolve(&all).map_err(config_err)?;
    }
    fs::create_dir_all(&common.out)?;
    let path = common.out.join("sweep.csv");
    let mut csv = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = axes.iter().map(|a| a.key.clone()).collect();
    header.extend(
        [
            "status",
            "total_energy_cost_usd",
            "migration_count",
            "mean_consolid",
            "pending_vm_steps",
            "mean_planned_fitness",
            "planned_energy_cost_usd",
            "planned_consolid",
            "planned_migration_penalty",
            "planned_constraint_penalty",
            "error",
        ]
        .map(String::from),
    );
    csv.write_record(&header)?;
    let mut failures = 0;
    sweep(&source, &over, &axes, |point, result| {
        let mut row: Vec<String> = point.iter().map(|(_, v)| v.clone()).collect();
        match result {
            Ok(r) => {
                let p = &r.mean_planned;
                row.extend([
                    "ok".into(),
                    r.total_energy_cost_usd.to_string(),
                    r.migration_count.to_string(),
                    r.mean_consolid.to_string(),
                    r.pending_vm_steps.to_string(),
                    p.total.to_string(),
                    p.energy_cost_usd.to_string(),
                    p.consolid.to_string(),
                    p.migration_penalty.to_string(),
                    p.constraint_penalty.to_string(),
                    String::new(),
                ]);
            }
            Err(e) => {
                failures += 1;
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 9));
                row.push(e.to_string());
            }
        }
        csv.write_record(&row)?;
        csv.flush()?;
        Ok(())
    })?;
    println!("wrote {}", path.display());
    if failures > 0 {
        bail!("{failures} sweep run(s) failed; see {}", path.display());
    }
    Ok(())
}

fn gen_traces(
    config: Option<&Path>,
    seed: Option<u64>,
    set: &[String],
    n_locations: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    let over = overrides(seed, set)?;
    let mut scenario = match config {
        Some(path) => ScenarioSource::from_path(path).map_err(config_err)?,
        None => ScenarioSource::from_text("", ".", "<defaults>").map_err(config_err)?,
    }
    .resolve(&over)
    .map_err(config_err)?;
    if let Some(n) = n_locations {
        if n == 0 {
            return Err(usage("--n-locations must be at least 1"));
        }
        scenario.inventory.locations = (0..n).map(|i| format!("loc{i}")).collect();
    }
    let traces = synthesize_traces(
        derive_seed(scenario.seed, &[2]),
        &scenario.inventory.locations,
        scenario.start,
        scenario.step(),
        scenario.steps(),
        &scenario.traces.synthetic,
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_traces(&traces, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("GEOSCHED_THREADS") {
        let n: usize = raw
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| usage(format!("GEOSCHED_THREADS must be a positive integer, got `{raw}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Simulate { common } => simulate(common),
        Command::Compare { common, controllers } => compare(common, controllers),
        Command::Sweep { common, grid } => run_sweep(common, grid),
        Command::GenTraces {
            config,
            seed,
            set,
            n_locations,
            out,
        } => gen_traces(config.as_deref(), *seed, set, *n_locations, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let _ = std::io::stderr().flush();
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
