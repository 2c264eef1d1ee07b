use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use clap::{Parser, Subcommand};

use elnet::analysis::{certify_trace, rate_bounds, CertificationReport};
use elnet::scenario::{self, load_scenario, read_csv, seed_from_env, write_report, Scenario};
use elnet::Error;

/// Simulate and certify networks of Euler-Lagrange agents under distributed
/// tracking control.
#[derive(Parser)]
#[command(name = "elnetsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenarios, certify the traces, and write CSV, report and SVG.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Output directory (default: the scenario's `output.dir`, else `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scenarios simulated concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Certify a previously written trace against its scenario.
    Certify {
        trace: PathBuf,
        scenario: PathBuf,
        /// Also write the certification report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the rate bounds k1, k2, k3 and beta of a scenario.
    Rates { scenario: PathBuf },
    /// Check scenario files without simulating.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
}

/// Exit codes: 0 pass, 1 certification failure, 2 usage or I/O error.
enum Failure {
    Certification(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::BlowUp { .. } => Failure::Certification(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let seed = seed_from_env()?;
    let s = load_scenario(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(s.with_seed(seed))
}

fn verdict(report: &CertificationReport) -> &'static str {
    if report.passed() {
        "PASS"
    } else {
        "FAIL"
    }
}

fn run_one(path: &Path, out: Option<&Path>) -> Result<String, Failure> {
    let s = load(path)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| s.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let (run, paths) = scenario::execute(&s, &dir).map_err(|e| match e {
        Error::BlowUp { .. } => Failure::Certification(format!("{}: {e}", s.name)),
        other => Failure::Usage(format!("{}: {other}", s.name)),
    })?;
    let mut msg = String::new();
    for w in &run.warnings {
        msg.push_str(&format!("warning: {}: {w}\n", s.name));
    }
    msg.push_str(&format!(
        "{} {}: {}\n  wrote {}, {}, {}",
        verdict(&run.report),
        s.name,
        run.report.summary(),
        paths.csv.display(),
        paths.report.display(),
        paths.plot.display()
    ));
    if run.report.passed() {
        Ok(msg)
    } else {
        Err(Failure::Certification(msg))
    }
}

fn cmd_run(paths: &[PathBuf], out: Option<&Path>, jobs: usize) -> Result<(), Failure> {
    if jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    let results: Vec<Mutex<Option<Result<String, Failure>>>> = paths.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..jobs.min(paths.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= paths.len() {
                    break;
                }
                let r = run_one(&paths[i], out);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    let mut worst: Option<Failure> = None;
    for slot in results {
        match slot.into_inner().unwrap().expect("every scenario ran") {
            Ok(msg) => println!("{msg}"),
            Err(Failure::Certification(msg)) => {
                println!("{msg}");
                if worst.is_none() {
                    worst = Some(Failure::Certification(String::new()));
                }
            }
            Err(Failure::Usage(msg)) => {
                eprintln!("error: {msg}");
                worst = Some(Failure::Usage(String::new()));
            }
        }
    }
    worst.map_or(Ok(()), Err)
}

fn cmd_certify(trace: &Path, scenario: &Path, report_path: Option<&Path>) -> Result<(), Failure> {
    let s = load(scenario)?;
    let prepared = s.prepare()?;
    let cl = &prepared.closed_loop;
    let trace = read_csv(trace, Scenario::layout(cl)).map_err(|e| Failure::Usage(format!("{}: {e}", trace.display())))?;
    let report = certify_trace(&trace, cl)?;
    if let Some(p) = report_path {
        write_report(&report, p)?;
    }
    println!("{} {}: {}", verdict(&report), s.name, report.summary());
    if let Some(t) = report.first_violation_time {
        println!("  first violation at t = {t}");
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Certification(String::new()))
    }
}

fn cmd_rates(path: &Path) -> Result<(), Failure> {
    let s = load(path)?;
    let cl = s.closed_loop()?;
    let b = rate_bounds(&cl)?;
    println!("protocol {}", cl.protocol());
    println!("k1   {:.12}", b.k1);
    println!("k2   {:.12}", b.k2);
    println!("k3   {:.12}", b.k3);
    println!("beta {:.12}", b.beta);
    Ok(())
}

fn cmd_validate(paths: &[PathBuf]) -> Result<(), Failure> {
    let mut failed = false;
    for p in paths {
        match load(p) {
            Ok(s) => println!("ok {} ({})", p.display(), s.name),
            Err(Failure::Usage(msg) | Failure::Certification(msg)) => {
                eprintln!("error: {msg}");
                failed = true;
            }
        }
    }
    if failed {
        Err(Failure::Usage(String::new()))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run { scenarios, out, jobs } => cmd_run(scenarios, out.as_deref(), *jobs),
        Command::Certify { trace, scenario, report } => cmd_certify(trace, scenario, report.as_deref()),
        Command::Rates { scenario } => cmd_rates(scenario),
        Command::Validate { scenarios } => cmd_validate(scenarios),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Certification(msg)) => {
            if !msg.is_empty() {
                eprintln!("{msg}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(2)
        }
    }
}
