use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};

use lockhound::frontend::dot::icfa_to_dot;
use lockhound::generator::{generate, GenOpts};
use lockhound::model::Model;
use lockhound::oracle::{explore, OracleOpts};
use lockhound::pipeline::{analyze, Config};
use lockhound::places::render_place;

#[derive(Parser)]
#[command(name = "lockhound", version, about = "Static deadlock detection for mini-C pthreads programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Dot,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analyze a program and report potential deadlocks.
    Analyze {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        report: Format,
        /// Write the control-flow automaton next to the input as <file>.icfa.dot.
        #[arg(long, value_enum)]
        emit_icfa: Option<Emit>,
        /// Write the closed lock graph as <file>.lockgraph.dot.
        #[arg(long, value_enum)]
        emit_lockgraph: Option<Emit>,
        #[arg(long)]
        no_nonconc: bool,
        #[arg(long)]
        no_depend: bool,
        /// Include pruned cycles and statistics.
        #[arg(long)]
        verbose: bool,
        /// Print non-concurrency answers for N random place pairs.
        #[arg(long, value_name = "N")]
        dump_nonconc: Option<usize>,
        #[arg(long, hide = true)]
        context_insensitive: bool,
    },
    /// Explore interleavings concretely.
    Oracle {
        file: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
        #[arg(long, default_value_t = 2)]
        loop_bound: u32,
        #[arg(long)]
        json: bool,
    },
    /// Print a random program.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read(path: &Path) -> Result<String, ExitCode> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn with_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<(), ExitCode> {
    std::fs::write(path, text).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        ExitCode::from(2)
    })?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, ExitCode> {
    match cli.cmd {
        Cmd::Analyze { file, report, emit_icfa, emit_lockgraph, no_nonconc, no_depend, verbose, dump_nonconc, context_insensitive } => {
            let src = read(&file)?;
            let cfg = Config { no_nonconc, no_depend, context_insensitive, ..Config::default() };
            let a = analyze(&src, &cfg).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(2)
            })?;
            if emit_icfa.is_some() {
                write(&with_ext(&file, ".icfa.dot"), &icfa_to_dot(&a.model.prog, &a.model.icfa))?;
            }
            if emit_lockgraph.is_some() {
                write(&with_ext(&file, ".lockgraph.dot"), &a.graph.to_dot(&a.model, &a.places))?;
            }
            let color = std::env::var("LOCKHOUND_COLOR").map(|v| v != "0").unwrap_or(true);
            match report {
                Format::Json => println!("{}", a.report_json(verbose)),
                Format::Text => print!("{}", a.report_text(verbose, color)),
            }
            if let Some(n) = dump_nonconc {
                let ids: Vec<_> = a.ls.may.states.keys().copied().collect();
                let nc = a.nonconc();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
                let m = &a.model;
                for _ in 0..if ids.is_empty() { 0 } else { n } {
                    let (x, y) = (ids[rng.gen_range(0..ids.len())], ids[rng.gen_range(0..ids.len())]);
                    let r = nc.check(x, y).map(|r| format!("{r:?}")).unwrap_or_else(|| "concurrent".into());
                    println!(
                        "{}  |  {}  =>  {r}",
                        render_place(&m.prog, &m.icfa, &a.places.get(x)),
                        render_place(&m.prog, &m.icfa, &a.places.get(y))
                    );
                }
            }
            Ok(ExitCode::from(a.verdict().exit_code() as u8))
        }
        Cmd::Oracle { file, budget, loop_bound, json } => {
            let src = read(&file)?;
            let m = Model::load(&src).map_err(|e| {
                eprintln!("error: [frontend] {e}");
                ExitCode::from(2)
            })?;
            let ex = explore(&m, &OracleOpts { max_states: budget, loop_bound, ..OracleOpts::default() });
            if json {
                println!("{}", ex.to_json());
            } else {
                println!("states: {}{}", ex.states, if ex.budget_exceeded { " (budget exceeded)" } else { "" });
                println!("deadlocking states: {}", ex.deadlock_count);
                for w in &ex.deadlocks {
                    let steps: Vec<String> = w.schedule.iter().map(|s| format!("({},{})", s.tid, s.line)).collect();
                    println!("  {{{}}} via {}", w.lock_names.join(", "), steps.join(" "));
                }
            }
            Ok(ExitCode::from(if ex.deadlock_count > 0 { 1 } else if ex.budget_exceeded { 2 } else { 0 }))
        }
        Cmd::Gen { seed } => {
            print!("{}", generate(seed, &GenOpts::default()));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    run(cli).unwrap_or_else(|c| c)
}
