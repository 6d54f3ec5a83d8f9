use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use charlab::cases;
use charlab::run::run;
use charlab::spec::{load_spec, load_spec_str, ProblemSpec, SpecError};

const EXIT_FAIL: u8 = 1;
const EXIT_SPEC: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "charlab",
    version,
    about = "Characteristic strips, Hamiltonian flows and their invariants"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or bundled case and write CSVs plus report.txt.
    Run {
        /// Path to a scenario file, or the name of a bundled case.
        spec: String,
        /// Output directory (default: the file's [output] dir, else out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the integration step.
        #[arg(long, allow_negative_numbers = true)]
        dt: Option<f64>,
        /// Override t_end (length for general_pde).
        #[arg(long = "t-end", allow_negative_numbers = true)]
        t_end: Option<f64>,
        /// Do not print the report.
        #[arg(long)]
        quiet: bool,
    },
    /// Parse and validate a scenario without running it.
    Validate { spec: String },
    /// List the bundled cases.
    ListCases,
}

fn load(arg: &str) -> Result<ProblemSpec, SpecError> {
    let path = Path::new(arg);
    if path.exists() {
        return load_spec(path);
    }
    match cases::find(arg) {
        Some(c) => load_spec_str(c.source, c.name),
        None => load_spec(path),
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("CHARLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("CHARLAB_THREADS must be a non-negative integer, got `{raw}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListCases => {
            for c in cases::CASES {
                let note = if c.expect_ok {
                    ""
                } else {
                    " (expected to fail)"
                };
                println!("{:<20} {}{note}", c.name, c.summary());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { spec } => match load(&spec) {
            Ok(s) => {
                println!(
                    "{}: valid {} scenario (dim {})",
                    s.name,
                    s.kind.name(),
                    s.dim
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_SPEC)
            }
        },
        Command::Run {
            spec,
            out,
            dt,
            t_end,
            quiet,
        } => {
            if let Err(e) = configure_threads() {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_SPEC);
            }
            let mut s = match load(&spec) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_SPEC);
                }
            };
            if let Err(e) = s.override_integration(dt, t_end) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_SPEC);
            }
            let dir = out
                .or_else(|| s.output_dir.clone())
                .unwrap_or_else(|| Path::new("out").join(&s.name));
            let output = match run(&s) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_RUNTIME);
                }
            };
            if let Err(e) = output.write_to(&dir) {
                eprintln!("error: cannot write to {}: {e}", dir.display());
                return ExitCode::from(EXIT_RUNTIME);
            }
            if !quiet {
                print!("{}", output.report.render());
            }
            if output.report.ok() {
                ExitCode::SUCCESS
            } else {
                for l in output.report.failures() {
                    eprintln!("tolerance exceeded: {} = {}", l.name, l.value);
                }
                ExitCode::from(EXIT_FAIL)
            }
        }
    }
}
