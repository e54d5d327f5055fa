//! Command line front end: `run`, `certify`, `sweep` and `hjb`.
//!
//! Exit status: 0 when every certificate passes, 1 when a certificate
//! fails, 2 for configuration errors, 3 when the controller cannot finish
//! (inadmissible control, damping timeout, no horizon, failed precondition
//! or value iteration not converging).

pub mod config;
pub mod output;
pub mod plots;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{run_mission, FLOCK_TOL};
use crate::error::{Error, Result};
use crate::hjb::{value_iteration, MasterState, ReducedGrid, ValueField};
use crate::trajectory::Trajectory;
use crate::verify::{certify_mission, reports_to_text};

pub use config::{load_config, parse_config, Mission, RunConfig};
pub use output::{Summary, SummaryHeader};
pub use plots::emit_plots;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CERTIFICATE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "kgflock", version, about = "Bounded feedback control of Klein-Gordon lattices to flocks")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,

    /// Config file (for `run` and `hjb` when no path is given).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Random seed for initial data, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Integrator step, overriding the config.
    #[arg(long, global = true)]
    pub dt: Option<f64>,

    /// Only print diagnostics.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one mission and write its outputs.
    Run { config: Option<PathBuf> },
    /// Re-certify a finished run directory from its files.
    Certify { dir: PathBuf },
    /// Run every config matching a glob pattern, in parallel.
    Sweep { pattern: String },
    /// Solve the minimal-time value function for a config.
    Hjb { config: Option<PathBuf> },
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Admissibility { .. }
        | Error::Phase1Timeout { .. }
        | Error::Horizon { .. }
        | Error::Precondition(_)
        | Error::Convergence { .. } => EXIT_RUNTIME,
        _ => EXIT_CONFIG,
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Invalid(format!("--dt must be positive, got {dt}")));
            }
            config.options.dt = dt;
        }
        Ok(())
    }
}

pub fn main(args: Args) -> u8 {
    let overrides = Overrides {
        out: args.out.clone(),
        seed: args.seed,
        dt: args.dt,
    };
    let quiet = args.quiet;
    let config_path = |given: Option<PathBuf>| {
        given
            .or_else(|| args.config.clone())
            .ok_or_else(|| Error::Invalid("no config file given".into()))
    };
    let outcome = match args.command {
        Command::Run { config } => config_path(config).and_then(|p| run_file(&p, &overrides, quiet)),
        Command::Certify { ref dir } => certify_dir(dir).map(|(code, text)| {
            if !quiet {
                print!("{text}");
            }
            code
        }),
        Command::Sweep { ref pattern } => sweep(pattern, &overrides, quiet),
        Command::Hjb { config } => config_path(config).and_then(|p| {
            let mut cfg = load_config(&p)?;
            overrides.apply(&mut cfg)?;
            run_hjb(&cfg, quiet)
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run_file(path: &Path, overrides: &Overrides, quiet: bool) -> Result<u8> {
    let mut config = load_config(path)?;
    overrides.apply(&mut config)?;
    run(&config, quiet)
}

/// Runs the configured mission and writes `trajectory.csv`, `summary.json`,
/// `certificates.txt` and `plot.gp` into the output directory.
pub fn run(config: &RunConfig, quiet: bool) -> Result<u8> {
    if config.mission == Mission::Hjb {
        return run_hjb(config, quiet);
    }
    let target = config.flock_target()?;
    let initial = config.initial_state()?;
    let result = run_mission(&config.spec, &config.params, &initial, target.as_ref(), &config.options)?;
    let reports = certify_mission(&config.spec, &config.params, &result.trajectory, target.as_ref(), FLOCK_TOL)?;

    let dir = &config.out;
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("trajectory.csv"))?);
    result.trajectory.write_csv(&mut w)?;
    w.flush()?;
    drop(w);
    let text = reports_to_text(&reports);
    std::fs::write(dir.join("certificates.txt"), &text)?;
    let summary = Summary::new(config, target.as_ref(), &result, &reports);
    summary.write(dir)?;
    emit_plots(dir)?;

    if !quiet {
        let s = &result.schedule;
        println!("output: {}", dir.display());
        for (name, t) in s.markers() {
            println!("{name} = {t}");
        }
        if let Some(a) = result.offset {
            println!("offset a = {a}");
        }
        println!("max |u| = {} (M = {})", result.max_control, config.params.m);
        print!("{text}");
    }
    Ok(if summary.all_passed { EXIT_OK } else { EXIT_CERTIFICATE })
}

/// Re-certifies a run directory from `trajectory.csv` and `summary.json`.
/// Returns the exit status and the report text.
pub fn certify_dir(dir: &Path) -> Result<(u8, String)> {
    let header = SummaryHeader::read(dir)?;
    let spec = header.lattice.spec()?;
    let traj = Trajectory::read_csv(BufReader::new(File::open(dir.join("trajectory.csv"))?))?;
    let reports = certify_mission(&spec, &header.params, &traj, header.target.as_ref(), header.flock_tol)?;
    let code = if reports.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_CERTIFICATE
    };
    Ok((code, reports_to_text(&reports)))
}

/// Runs every matching config, each into `<out>/<file stem>`; `out`
/// defaults to `sweep-out`. Returns the worst exit status.
pub fn sweep(pattern: &str, overrides: &Overrides, quiet: bool) -> Result<u8> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Error::Invalid(format!("bad pattern {pattern:?}: {e}")))?
        .filter_map(|p| p.ok())
        .collect();
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no config matches {pattern:?}")));
    }
    let base = overrides.out.clone().unwrap_or_else(|| PathBuf::from("sweep-out"));
    let results: Vec<(PathBuf, u8, String)> = paths
        .par_iter()
        .map(|path| {
            let stem = path.file_stem().map_or_else(|| "run".into(), |s| s.to_os_string());
            let per_run = Overrides {
                out: Some(base.join(stem)),
                ..overrides.clone()
            };
            match run_file(path, &per_run, true) {
                Ok(code) => (path.clone(), code, String::new()),
                Err(e) => (path.clone(), exit_code(&e), e.to_string()),
            }
        })
        .collect();
    let mut worst = EXIT_OK;
    for (path, code, msg) in &results {
        worst = worst.max(*code);
        if !quiet || *code != EXIT_OK {
            if msg.is_empty() {
                println!("{}: exit {code}", path.display());
            } else {
                println!("{}: exit {code}: {msg}", path.display());
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Serialize)]
struct HjbSummary<'a> {
    version: &'static str,
    lattice: output::LatticeRecord,
    params: crate::dynamics::Params,
    axes: Vec<String>,
    points: usize,
    sweeps: usize,
    dt_dp: f64,
    start: Vec<f64>,
    nearest_point: Vec<f64>,
    value_at_start: Option<f64>,
    lipschitz_estimate: f64,
    config: &'a std::collections::BTreeMap<String, String>,
}

/// Value iteration on the standard grid; writes `value.txt`, a slice along
/// the v_0 axis through the start point (`slice.csv`) and `summary.json`.
pub fn run_hjb(config: &RunConfig, quiet: bool) -> Result<u8> {
    let spec = &config.spec;
    let grid = ReducedGrid::standard(spec, &config.params, config.hjb_points)?;
    let field = value_iteration(&grid, spec, &config.params, &config.hjb)?;
    let initial = config.initial_state()?;
    let start = grid.reduce(&MasterState::new(initial.x.clone(), initial.v.clone()));
    let nearest = grid.nearest(&start);
    let value = field.at(nearest);

    let dir = &config.out;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("value.txt"), field.export())?;
    std::fs::write(dir.join("slice.csv"), slice_csv(&field, nearest))?;
    let summary = HjbSummary {
        version: env!("CARGO_PKG_VERSION"),
        lattice: output::LatticeRecord::new(spec),
        params: config.params,
        axes: grid.axis_names(),
        points: config.hjb_points,
        sweeps: field.sweeps,
        dt_dp: field.dt_dp,
        start,
        nearest_point: grid.point(nearest),
        value_at_start: value.is_finite().then_some(value),
        lipschitz_estimate: field.lipschitz_estimate(),
        config: &config.entries,
    };
    let mut w = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    if !quiet {
        println!("output: {}", dir.display());
        println!("sweeps = {}", field.sweeps);
        println!("U(start) = {value}");
    }
    Ok(EXIT_OK)
}

/// U along the v_0 axis with every other coordinate fixed at `through`.
pub fn slice_csv(field: &ValueField, through: usize) -> String {
    let grid = &field.grid;
    let axis = grid.nodes() - 1;
    let mut idx = grid.multi_index(through);
    let mut out = String::from("v_0,U\n");
    for i in 0..grid.axes()[axis].points {
        idx[axis] = i;
        let flat = grid.flat_index(&idx);
        out.push_str(&format!("{},{}\n", grid.axes()[axis].coord(i), field.at(flat)));
    }
    out
}
