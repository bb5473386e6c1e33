use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blindfare::ledger::Books;
use blindfare::sim::bench::{self, Phase};
use blindfare::sim::matrix::crash_matrix;
use blindfare::sim::review::review;
use blindfare::sim::{run, FaultPlan, Group, Options, Scenario};

#[derive(Parser)]
#[command(name = "blindfare", version, about = "Run, break and audit the ticketing deployment")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and check every invariant
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fault plan: a file, or entries like "buy/ticket 3 drop; checkin 1 delay(40)"
        #[arg(long)]
        faults: Option<String>,
        /// Send before persisting
        #[arg(long)]
        mutant: bool,
        /// Users blind a fresh secret on every announcement
        #[arg(long)]
        adversarial: bool,
        /// Write the trace here instead of stdout
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Inject every fault at every message boundary of a scenario
    CrashMatrix {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        mutant: bool,
    },
    /// Time a gate phase: checkin, checkout, checkout_lazy, inspect or all
    Bench {
        phase: String,
        #[arg(long, default_value_t = 21)]
        trips: usize,
        #[arg(long, default_value = "production")]
        group: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Linkability, anonymity and blindness review of a trace
    Audit { trace: PathBuf },
    /// Rebuild the books from a trace and reconcile them
    Reconcile { trace: PathBuf },
}

fn read(path: &Path) -> Result<String, ExitCode> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn scenario(path: &Path) -> Result<Scenario, ExitCode> {
    Scenario::parse(&read(path)?).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn verdict(clean: bool) -> ExitCode {
    if clean {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) | Err(code) => code,
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode, ExitCode> {
    match cmd {
        Cmd::Run {
            scenario: path,
            seed,
            faults,
            mutant,
            adversarial,
            trace,
        } => {
            let s = scenario(&path)?;
            let plan = match faults {
                None => FaultPlan::none(),
                Some(f) => {
                    let text = if Path::new(&f).is_file() { read(Path::new(&f))? } else { f };
                    FaultPlan::parse(&text).map_err(|e| {
                        eprintln!("faults: {e}");
                        ExitCode::from(2)
                    })?
                }
            };
            let out = run(
                &s,
                Options {
                    seed,
                    faults: plan,
                    mutant,
                    adversarial,
                    ..Options::default()
                },
            );
            match trace {
                Some(p) => std::fs::write(&p, out.trace.text()).map_err(|e| {
                    eprintln!("{}: {e}", p.display());
                    ExitCode::from(2)
                })?,
                None => print!("{}", out.trace.text()),
            }
            for b in &out.unused_faults {
                println!("UNUSED fault {b}");
            }
            for v in &out.violations {
                println!("VIOLATION {v}");
            }
            println!("{}", out.report.to_string().lines().next().unwrap_or(""));
            println!("DIGEST {}", out.trace.digest());
            Ok(verdict(out.is_clean()))
        }
        Cmd::CrashMatrix {
            scenario: path,
            seed,
            mutant,
        } => {
            let s = scenario(&path)?;
            let m = crash_matrix(&s, seed, mutant);
            for c in &m.cells {
                let status = if c.passed() {
                    "pass"
                } else if !c.fired {
                    "unfired"
                } else {
                    "FAIL"
                };
                println!("{status:<7} {} {} {}", c.flow, c.step, c.action);
                for v in &c.violations {
                    println!("        {v}");
                }
            }
            let failed = m.failures().count();
            println!(
                "CELLS total={} tickets={} payg={} failed={failed}",
                m.cells.len(),
                m.count("tickets"),
                m.count("payg")
            );
            Ok(verdict(failed == 0))
        }
        Cmd::Bench {
            phase,
            trips,
            group,
            seed,
        } => {
            let wanted: Vec<Phase> = match phase.as_str() {
                "all" => Phase::ALL.to_vec(),
                p => vec![Phase::parse(p).ok_or_else(|| {
                    eprintln!("unknown phase {p}");
                    ExitCode::from(2)
                })?],
            };
            let group = match group.as_str() {
                "tiny" => Group::Tiny,
                "sim1024" => Group::Sim1024,
                "production" => Group::Production,
                g => {
                    eprintln!("unknown group {g}");
                    return Err(ExitCode::from(2));
                }
            };
            for t in bench::run(group, trips, seed) {
                if wanted.contains(&t.phase) {
                    println!("{t}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Audit { trace } => {
            let text = read(&trace)?;
            let r = review(&text).map_err(|e| {
                eprintln!("{}: {e}", trace.display());
                ExitCode::from(2)
            })?;
            print!("{r}");
            Ok(verdict(r.is_clean()))
        }
        Cmd::Reconcile { trace } => {
            let text = read(&trace)?;
            let books = Books::from_trace(&text).map_err(|e| {
                eprintln!("{}: {e}", trace.display());
                ExitCode::from(2)
            })?;
            let report = books.reconcile(true);
            print!("{report}");
            Ok(ExitCode::from(report.exit_code() as u8))
        }
    }
}
