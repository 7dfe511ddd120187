use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use tourguide::analytics::{monthly_counts, type_distribution, DEFAULT_WINDOW_MONTHS};
use tourguide::clock::SimClock;
use tourguide::config::Config;
use tourguide::model::{RunOutcome, Timestamp};
use tourguide::runtime::Runtime;
use tourguide::tour::{atomic_write, TourStore};

mod seed;

/// Headless control of the tour-guide robot service.
#[derive(Debug, Parser)]
#[command(name = "tourguide", version)]
struct Cli {
    /// Store file. Overrides the config file and environment.
    #[arg(long, global = true, value_name = "PATH")]
    store: Option<PathBuf>,

    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the simulator, bridge and HTTP gateway until interrupted.
    Serve,
    /// Write a demo store with locations, tours and past runs.
    Seed {
        /// Replace an existing store.
        #[arg(long)]
        force: bool,
        /// RNG seed for the synthetic run history.
        #[arg(long, default_value_t = seed::DEFAULT_SEED)]
        seed: u64,
    },
    /// Execute a tour against the simulator on an accelerated clock.
    RunTour {
        /// Tour name, matched case-insensitively.
        name: String,
    },
    /// Copy the store to FILE.
    Export { file: PathBuf },
    /// Replace the store with FILE after validating it.
    Import { file: PathBuf },
    /// Print monthly run counts and the tour type distribution.
    Stats {
        #[arg(long, default_value_t = DEFAULT_WINDOW_MONTHS)]
        months: u32,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("TOURGUIDE_LOG")
                .unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = Config::resolve(cli.config.as_deref())?;
    if let Some(store) = &cli.store {
        cfg.store_path = store.clone();
    }
    Ok(cfg)
}

fn load(path: &Path) -> anyhow::Result<TourStore> {
    if !path.exists() {
        bail!(
            "no store at {} (run `tourguide seed` first)",
            path.display()
        );
    }
    Ok(TourStore::load(path)?)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = config(&cli)?;
    let path = cfg.store_path.clone();
    match cli.command {
        Command::Serve => {
            let rt = tokio::runtime::Runtime::new().context("starting async runtime")?;
            rt.block_on(tourguide::server::serve(cfg, async {
                let _ = tokio::signal::ctrl_c().await;
            }))?;
        }
        Command::Seed { force, seed } => {
            if path.exists() && !force {
                bail!(
                    "{} already exists; pass --force to replace it",
                    path.display()
                );
            }
            let store = seed::demo_store(Timestamp::now(), seed);
            store.save(&path)?;
            println!(
                "seeded {}: {} locations, {} tours, {} runs",
                path.display(),
                store.locations.len(),
                store.tours.len(),
                store.runs.len()
            );
        }
        Command::RunTour { name } => return run_tour(&path, &name, cfg),
        Command::Export { file } => {
            let store = load(&path)?;
            atomic_write(&file, store.to_json().as_bytes())?;
        }
        Command::Import { file } => {
            let text = std::fs::read_to_string(&file)
                .with_context(|| format!("reading {}", file.display()))?;
            let store = TourStore::from_json(&text, &file.display().to_string())?;
            store.save(&path)?;
            println!(
                "imported {} locations, {} tours, {} runs",
                store.locations.len(),
                store.tours.len(),
                store.runs.len()
            );
        }
        Command::Stats { months } => {
            let store = load(&path)?;
            print!("{}", stats_report(&store, Timestamp::now(), months)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Hard stop for a simulated run, far beyond any tour that can succeed.
const MAX_SIM_SECONDS: f64 = 24.0 * 3600.0;

fn run_tour(path: &Path, name: &str, cfg: Config) -> anyhow::Result<ExitCode> {
    let store = load(path)?;
    let tour = store
        .tour_by_name(name)
        .ok_or_else(|| anyhow!("no tour named {name:?}"))?
        .clone();
    let max_ticks = (MAX_SIM_SECONDS / cfg.sim.tick) as u64;
    let clock = SimClock::starting_at(Timestamp::now());
    let mut rt = Runtime::new(store, cfg.sim, Box::new(clock));
    rt.execute_tour(tour.id)?;
    for event in rt.drain_events() {
        println!("{event}");
    }
    let mut ticks = 0u64;
    while rt.execution().is_some() {
        if ticks == max_ticks {
            rt.abort_tour()?;
            break;
        }
        rt.step();
        ticks += 1;
        for event in rt.drain_events() {
            println!("{event}");
        }
    }
    let run = rt
        .store()
        .runs_of(tour.id)
        .last()
        .cloned()
        .ok_or_else(|| anyhow!("run was not recorded"))?;
    rt.store().save(path)?;
    println!(
        "tour={:?} run={} stops_visited={} duration_s={} outcome={}",
        tour.name,
        run.run_id,
        run.stops_visited,
        run.duration_secs(),
        outcome_str(run.outcome)
    );
    Ok(if run.outcome == RunOutcome::Completed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn outcome_str(outcome: RunOutcome) -> &'static str {
    match outcome {
        RunOutcome::Completed => "completed",
        RunOutcome::Aborted => "aborted",
        RunOutcome::Failed => "failed",
    }
}

fn stats_report(store: &TourStore, now: Timestamp, months: u32) -> anyhow::Result<String> {
    use std::fmt::Write;

    let monthly = monthly_counts(&store.runs, now, months)?;
    let types = type_distribution(&store.runs, &store.tours, now, months)?;
    let excluded = store.runs.len() as u64 - monthly.total();
    let mut out = String::new();

    writeln!(out, "Runs per month (last {months})")?;
    writeln!(out, "{:<8}  {:>5}", "month", "runs")?;
    for m in &monthly.months {
        writeln!(out, "{:<8}  {:>5}", m.month.to_string(), m.run_count)?;
    }
    writeln!(out, "{:<8}  {:>5}", "total", monthly.total())?;
    writeln!(out, "outside window: {excluded}")?;
    writeln!(out)?;

    let width = types
        .counts
        .keys()
        .map(|k| k.chars().count())
        .max()
        .unwrap_or(0)
        .max(4);
    writeln!(out, "Runs by tour type")?;
    writeln!(out, "{:<width$}  {:>5}  {:>6}", "type", "runs", "share")?;
    for (ty, count) in &types.counts {
        let share = 100.0 * *count as f64 / types.total as f64;
        writeln!(out, "{ty:<width$}  {count:>5}  {share:>5.1}%")?;
    }
    if types.counts.is_empty() {
        writeln!(out, "(no runs in window)")?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_columns_line_up() {
        let now: Timestamp = Timestamp::from_datetime("2026-10-19T12:00:00Z".parse().unwrap());
        let store = seed::demo_store(now, 1);
        let report = stats_report(&store, now, 6).unwrap();
        assert!(report.contains("2026-10"));
        assert!(report.contains("2026-05"));
        assert!(!report.contains("2026-04 "));
        assert!(report.contains("outside window: 5"));
        let month_rows: Vec<&str> = report.lines().skip(1).take(8).collect();
        let widths: Vec<usize> = month_rows.iter().map(|l| l.len()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{report}");
    }

    #[test]
    fn empty_store_report() {
        let report = stats_report(&TourStore::default(), Timestamp::from_unix(0), 6).unwrap();
        assert!(report.contains("(no runs in window)"));
        assert!(report.contains("outside window: 0"));
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from(["tourguide", "--store", "x.json", "stats", "--months", "3"])
            .unwrap();
        assert_eq!(cli.store, Some(PathBuf::from("x.json")));
        assert!(matches!(cli.command, Command::Stats { months: 3 }));
    }
}
