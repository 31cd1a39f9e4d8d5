use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use milliproxy::harness::{
    emit_plots, parse_scalar, read_runs_csv, run_sweep, run_traced, summarize, write_csv,
    write_csv_to, write_runs_csv, write_sweep, write_traces, RunConfig, RunRow, SweepGrid,
};
use milliproxy::Error;

fn key_args(help: &'static str) -> Vec<Arg> {
    RunConfig::keys()
        .into_iter()
        .map(|k| {
            let long = k.replace('_', "-");
            Arg::new(k.clone())
                .long(long)
                .alias(k)
                .value_name("VALUE")
                .help(help)
                .help_heading("Configuration keys")
        })
        .collect()
}

fn cli() -> Command {
    Command::new("milliproxy")
        .about("Simulate NewReno with and without a cross-layer split-loop proxy on a mmWave link")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("run")
                .about("Run one configuration and print its metrics")
                .arg(Arg::new("config").long("config").short('c').value_name("FILE").help("Key/value config file"))
                .arg(Arg::new("out").long("out").short('o').value_name("DIR").help("Write runs.csv (and traces) here"))
                .arg(Arg::new("traces").long("traces").action(ArgAction::SetTrue).help("Also write per-slot, sender, proxy and cross-layer traces"))
                .arg(Arg::new("print-config").long("print-config").action(ArgAction::SetTrue).help("Print the effective configuration and exit"))
                .args(key_args("Override this key")),
        )
        .subcommand(
            Command::new("sweep")
                .about("Run a grid of configurations over many seeds")
                .arg(Arg::new("config").long("config").short('c').value_name("FILE").help("Sweep file; array-valued keys become axes"))
                .arg(Arg::new("out").long("out").short('o').value_name("DIR").default_value("sweep-out").help("Output directory"))
                .arg(Arg::new("seeds").long("seeds").value_name("N").value_parser(clap::value_parser!(u64)).help("Run seeds 1..=N"))
                .arg(Arg::new("threads").long("threads").value_name("N").value_parser(clap::value_parser!(usize)).help("Worker threads (default: all cores)"))
                .args(key_args("Fix this key, or sweep it with a comma-separated list")),
        )
        .subcommand(
            Command::new("plot")
                .about("Summarize a runs CSV into summary, gain and plot-data files")
                .arg(Arg::new("runs").long("runs").value_name("FILE").required(true).help("runs.csv from a sweep"))
                .arg(Arg::new("out").long("out").short('o').value_name("DIR").default_value("plots").help("Output directory")),
        )
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    let mut v: Vec<(usize, String, String)> = RunConfig::keys()
        .into_iter()
        .filter_map(|k| {
            let idx = m.index_of(&k)?;
            let val = m.get_one::<String>(&k)?.clone();
            Some((idx, k, val))
        })
        .collect();
    v.sort_by_key(|(i, _, _)| *i);
    v.into_iter().map(|(_, k, val)| (k, val)).collect()
}

fn cmd_run(m: &ArgMatches) -> Result<(), Error> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(p) => RunConfig::from_file(Path::new(p))?,
        None => RunConfig::default(),
    };
    for (k, v) in overrides(m) {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    if m.get_flag("print-config") {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let traces = m.get_flag("traces");
    let (metrics, t) = run_traced(&cfg, traces)?;
    let row = RunRow::new("run", &cfg, &metrics);
    write_csv_to(std::io::stdout().lock(), std::slice::from_ref(&row))?;
    if let Some(dir) = m.get_one::<String>("out") {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        write_runs_csv(&dir.join("runs.csv"), std::slice::from_ref(&row))?;
        if traces {
            write_traces(&dir, &t)?;
        }
    }
    Ok(())
}

fn cmd_sweep(m: &ArgMatches) -> Result<(), Error> {
    let mut grid = match m.get_one::<String>("config") {
        Some(p) => SweepGrid::from_toml_str(&std::fs::read_to_string(p)?)?,
        None => SweepGrid::new(RunConfig::default()),
    };
    for (k, raw) in overrides(m) {
        let values: Vec<&str> = if raw.trim_start().starts_with('[') {
            vec![raw.as_str()]
        } else {
            raw.split(',').map(str::trim).collect()
        };
        grid.axes.retain(|(a, _)| *a != k);
        if values.len() == 1 {
            grid.base.set(&k, values[0])?;
        } else {
            grid = grid.axis(&k, values.iter().map(|v| parse_scalar(v)).collect())?;
        }
    }
    grid.base.validate()?;
    if let Some(&n) = m.get_one::<u64>("seeds") {
        grid = grid.with_seed_count(n);
    }
    if let Some(&t) = m.get_one::<usize>("threads") {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cells = grid.cells()?;
    eprintln!(
        "sweep: {} configs x {} seeds = {} runs",
        cells.len(),
        grid.seeds.len(),
        cells.len() * grid.seeds.len()
    );
    let out = run_sweep(&grid)?;
    let dir = PathBuf::from(m.get_one::<String>("out").expect("has default"));
    let mut files = write_sweep(&dir, &out)?;
    files.extend(emit_plots(&out.summary, &dir)?);
    for f in &out.failures {
        eprintln!("failed: {} seed {}: {}", f.config_id, f.seed, f.error);
    }
    for g in &out.summary.gains {
        println!(
            "{}: goodput gain {:.4}, latency reduction {:.4} ({} pairs)",
            g.config_id, g.goodput_gain, g.latency_reduction, g.pairs
        );
    }
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_plot(m: &ArgMatches) -> Result<(), Error> {
    let rows = read_runs_csv(Path::new(m.get_one::<String>("runs").expect("required")))?;
    let summary = summarize(&rows);
    let dir = PathBuf::from(m.get_one::<String>("out").expect("has default"));
    std::fs::create_dir_all(&dir)?;
    write_csv(&dir.join("summary.csv"), &summary.configs)?;
    write_csv(&dir.join("gains.csv"), &summary.gains)?;
    for f in emit_plots(&summary, &dir)? {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let result = match matches.subcommand() {
        Some(("run", m)) => cmd_run(m),
        Some(("sweep", m)) => cmd_sweep(m),
        Some(("plot", m)) => cmd_plot(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::UnknownPolicy(_) | Error::DuplicatePolicy(_) | Error::Parse(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
