//! `asmix`: allelic imbalance scoring from the command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asmix_core::difftest::DiffMethod;
use asmix_core::dist::{ModelKind, DEFAULT_TRUNCATION};
use asmix_core::fit::FitSettings;
use asmix_core::io::{execute, project_dir, reproduce, resolve_project, Command, ExportTable, InputFormat, Project};
use asmix_core::Error;
use clap::{CommandFactory, Parser, Subcommand};

const AFTER_HELP: &str = "\
Exit status:
  0  success
  1  data error (bad input, failed fit, nothing to score)
  2  usage error
  3  project store error (version, checksum, lock)
  4  an input changed since it was logged
  5  I/O error

Environment:
  ASMIX_THREADS  worker threads (default: all cores)
  RUST_LOG       log filter, e.g. info or debug";

#[derive(Parser, Debug)]
#[command(name = "asmix", version, about = "Allelic imbalance detection with truncated count mixtures", after_help = AFTER_HELP)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Create a project from read-count files or folders.
    Create {
        /// Project name; the project is written to <NAME>.mixproj.
        name: String,
        /// Input files or folders.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Input format: tsv or vcf.
        #[arg(long, default_value = "tsv")]
        format: InputFormat,
        /// BAD annotation (chr, start, end, bad); BAD 1 elsewhere.
        #[arg(long)]
        bad: Option<PathBuf>,
        /// Drop records with either count below this value.
        #[arg(long, short = 'l', default_value_t = DEFAULT_TRUNCATION)]
        truncation: u64,
    },
    /// Fit the count model in sliding windows.
    Fit {
        project: PathBuf,
        /// NB, BetaNB or MCNB.
        model: ModelKind,
        /// Strength of the concentration prior (0: maximum likelihood).
        #[arg(long, default_value_t = FitSettings::default().alpha)]
        alpha: f64,
        /// Minimum number of observations per window.
        #[arg(long, short = 'm', default_value_t = FitSettings::default().m)]
        window_size: u64,
        /// Left truncation of the fitted distributions.
        #[arg(long, short = 'l', default_value_t = DEFAULT_TRUNCATION)]
        truncation: u64,
        /// Estimate standard errors.
        #[arg(long)]
        std_errors: bool,
    },
    /// Score every observation against the fitted model.
    Test { project: PathBuf },
    /// Combine scores per SNV, in one group or per group file.
    Combine {
        project: PathBuf,
        /// Files of sample names, file names or glob patterns, one per line.
        groups: Vec<PathBuf>,
    },
    /// Compare allelic imbalance between two groups of samples.
    Difftest {
        project: PathBuf,
        /// Group file for the control samples.
        control: PathBuf,
        /// Group file for the test samples.
        test: PathBuf,
        /// wald or lrt.
        #[arg(long, default_value = "wald")]
        method: DiffMethod,
    },
    /// Write tab-separated tables.
    Export {
        /// all, scores, params or difftest.
        table: ExportTable,
        project: PathBuf,
        dir: PathBuf,
    },
    /// Write fit-vs-data diagnostics as SVG and TSV.
    Visualize { project: PathBuf, dir: PathBuf },
    /// Replay a project's log from its inputs.
    Reproduce {
        /// The project's reproduce.json.
        log: PathBuf,
    },
}

impl Verb {
    fn name(&self) -> &'static str {
        match self {
            Verb::Create { .. } => "create",
            Verb::Fit { .. } => "fit",
            Verb::Test { .. } => "test",
            Verb::Combine { .. } => "combine",
            Verb::Difftest { .. } => "difftest",
            Verb::Export { .. } => "export",
            Verb::Visualize { .. } => "visualize",
            Verb::Reproduce { .. } => "reproduce",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::VersionMismatch { .. } | Error::CorruptStore(_) | Error::Locked(_) | Error::Json(_) => 3,
        Error::HashMismatch { .. } => 4,
        Error::Io(_) => 5,
        _ => 1,
    }
}

fn summary(p: &Project) -> String {
    let mut parts = vec![format!(
        "{} samples, {} SNVs, {} records",
        p.counts.samples.len(),
        p.counts.snvs.len(),
        p.counts.n_records()
    )];
    if let Some(e) = &p.estimates {
        let usable = e.iter().filter(|(_, w)| w.is_usable()).count();
        parts.push(format!("{} {} windows ({usable} usable)", e.len(), e.settings.model_kind.name()));
    }
    if let Some(s) = &p.scores {
        parts.push(format!("{} scored ({} excluded)", s.raw.len(), s.excluded));
    }
    if let Some(c) = &p.combined {
        parts.push(format!("{} combined in {} groups", c.records.len(), c.groups.len()));
    }
    if let Some(d) = &p.difftest {
        parts.push(format!("{} tested ({} skipped)", d.records.len(), d.skipped));
    }
    parts.join("; ")
}

fn run(verb: Verb) -> asmix_core::Result<String> {
    let (dir, cmd) = match verb {
        Verb::Create { name, inputs, format, bad, truncation } => {
            (project_dir(Path::new(""), &name), Command::Create { name, inputs, format, bad, truncation })
        }
        Verb::Fit { project, model, alpha, window_size, truncation, std_errors } => {
            (resolve_project(&project), Command::Fit { model, alpha, window_size, truncation, std_errors })
        }
        Verb::Test { project } => (resolve_project(&project), Command::Test),
        Verb::Combine { project, groups } => (resolve_project(&project), Command::Combine { groups }),
        Verb::Difftest { project, control, test, method } => {
            (resolve_project(&project), Command::Difftest { control, test, method })
        }
        Verb::Export { table, project, dir } => (resolve_project(&project), Command::Export { table, dir }),
        Verb::Visualize { project, dir } => (resolve_project(&project), Command::Visualize { dir }),
        Verb::Reproduce { log } => {
            let p = reproduce(&log)?;
            return Ok(format!("replayed {} commands: {}", p.log.commands.len(), summary(&p)));
        }
    };
    let p = execute(&dir, &cmd)?;
    Ok(format!("{} {}: {}", cmd.verb(), dir.display(), summary(&p)))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                e.exit();
            }
            let _ = e.print();
            let mut cmd = Cli::command();
            let verb = std::env::args().nth(1).unwrap_or_default();
            let usage = match cmd.find_subcommand_mut(&verb) {
                Some(sub) => sub.render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("{usage}");
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Ok(v) = std::env::var("ASMIX_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("ASMIX_THREADS ignored: {e}");
                }
            }
            _ => {
                eprintln!("error\tInvalidArgument\tASMIX_THREADS must be a positive integer, got '{v}'");
                return ExitCode::from(2);
            }
        }
    }

    let verb_name = cli.verb.name();
    match run(cli.verb) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = e.to_string().replace(['\n', '\t'], " ");
            let mut err = std::io::stderr().lock();
            let _ = writeln!(err, "error\t{}\t{line}", e.kind());
            let code = exit_code(&e);
            if code == 2 {
                if let Some(sub) = Cli::command().find_subcommand_mut(verb_name) {
                    let _ = writeln!(err, "{}", sub.render_usage());
                }
            }
            ExitCode::from(code)
        }
    }
}
