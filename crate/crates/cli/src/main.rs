//! `capsule`: command-line front end for a capsule store.
//!
//! Exit codes: 0 on success, 2 when an operation is refused or fails, 64
//! on malformed invocations and benchmark configuration errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use capsule_core::bench::{run_bench, BenchConfig, BenchError, CsvReport, Pool, BUNDLED_POOLS};
use capsule_core::{
    print_dnf, Analyst, CapsuleGraph, CapsuleId, Lattices, ProgramId, Schema, SourcePolicy,
};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_DOMAIN: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "capsule",
    version,
    about = "Manage data capsules and their privacy policies"
)]
struct Cli {
    /// Store directory; created on first use.
    #[arg(
        long,
        env = "CAPSULE_STORE",
        default_value = "capsule-store",
        global = true
    )]
    store: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Dot,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a CSV payload under a policy; prints the capsule id.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated `field:Label` pairs in CSV column order.
        #[arg(long)]
        schema: String,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        id: Option<String>,
    },
    /// Register an analysis program; prints the program id.
    Register {
        #[arg(long, conflicts_with = "source", required_unless_present = "source")]
        program: Option<PathBuf>,
        /// Program text given inline.
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        analyst: String,
        #[arg(long)]
        role: String,
        /// Declared processing purpose; repeatable.
        #[arg(long = "purpose")]
        purposes: Vec<String>,
    },
    /// Analyze a program; prints its effect and residual policy.
    Check { program: String },
    /// Execute a checked program; prints the derived capsule id.
    Run {
        program: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Release a capsule's payload if its policy is discharged.
    Declassify {
        capsule: String,
        #[arg(long)]
        analyst: String,
        #[arg(long)]
        role: String,
        /// Copy the payload here instead of printing its path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a capsule's policy with recorded evidence applied.
    Policy { capsule: String },
    /// Lineage reachable from a subject's capsules.
    SubjectView {
        #[arg(long)]
        subject: String,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// The whole lineage graph.
    Graph {
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Export a subject's data for portability.
    Export {
        #[arg(long)]
        subject: String,
        /// Write one CSV per capsule into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Delete an ingested capsule and recompute everything derived from it.
    Delete { capsule: String },
    /// Record a subject's consent to one program.
    Consent {
        #[arg(long)]
        subject: String,
        #[arg(long)]
        program: String,
    },
    /// Record that a subject has been notified.
    Notify {
        #[arg(long)]
        subject: String,
    },
    /// Record that `member` belongs to `function` of `subject`.
    Affiliate {
        #[arg(long)]
        function: String,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        member: String,
    },
    /// Time policy ingestion over random policies; writes a CSV report.
    Bench {
        /// Bundled regulation pool; repeatable. Defaults to all of them.
        #[arg(long = "regulation", value_parser = bundled_names())]
        regulations: Vec<String>,
        /// Extra pool file; the regulation name is the file stem. Repeatable.
        #[arg(long = "pool")]
        pools: Vec<PathBuf>,
        /// Comma-separated capsule counts.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
        /// Mean subset size in clauses.
        #[arg(long)]
        mean: Option<f64>,
        #[arg(long)]
        stddev: Option<f64>,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report file; defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn bundled_names() -> Vec<&'static str> {
    BUNDLED_POOLS.iter().map(|(n, _)| *n).collect()
}

/// A failed command and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn domain(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_DOMAIN,
            message: e.to_string(),
        }
    }

    fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }
}

impl From<capsule_core::GraphError> for Failure {
    fn from(e: capsule_core::GraphError) -> Self {
        Self::domain(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::domain(e)
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::domain(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    if let Command::Bench {
        regulations,
        pools,
        counts,
        mean,
        stddev,
        iterations,
        seed,
        out: report,
    } = cli.command
    {
        let lattices = Lattices::load_dir(&cli.store.join("lattices")).map_err(Failure::usage)?;
        let mut selected = Vec::new();
        for (name, text) in BUNDLED_POOLS {
            if regulations.iter().any(|r| r == name) || (regulations.is_empty() && pools.is_empty())
            {
                selected.push(Pool::parse(name, text, &lattices).map_err(Failure::usage)?);
            }
        }
        for path in &pools {
            let name = path
                .file_stem()
                .map_or("pool".into(), |s| s.to_string_lossy().into_owned());
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let dnf = capsule_core::parse_dnf(
                &SourcePolicy::new(text, path.display().to_string()),
                &lattices,
            )
            .map_err(Failure::usage)?;
            selected.push(Pool {
                name,
                clauses: dnf.clauses().cloned().collect(),
            });
        }
        let mut cfg = BenchConfig::new(selected);
        if let Some(counts) = counts {
            cfg.counts = counts;
        }
        cfg.mean = mean;
        cfg.stddev = stddev;
        cfg.iterations = iterations;
        cfg.seed = seed;
        cfg.validate().map_err(Failure::usage)?;
        let sink: Box<dyn Write> = match report {
            Some(p) => Box::new(
                fs::File::create(&p)
                    .map_err(|e| Failure::domain(format!("{}: {e}", p.display())))?,
            ),
            None => Box::new(io::stdout()),
        };
        let mut csv = CsvReport::new(sink).map_err(Failure::domain)?;
        let mut write_err: Option<BenchError> = None;
        run_bench(&cfg, &lattices, |row| {
            if write_err.is_none() {
                write_err = csv.write(row).err();
            }
        })
        .map_err(Failure::usage)?;
        return write_err.map_or(Ok(()), |e| Err(Failure::domain(e)));
    }

    let mut graph = CapsuleGraph::open(&cli.store)?;
    match cli.command {
        Command::Ingest {
            data,
            schema,
            policy,
            subject,
            id,
        } => {
            let schema = Schema::parse_spec(&schema).ok_or_else(|| {
                Failure::domain(format!(
                    "invalid schema `{schema}`; expected field:Label,..."
                ))
            })?;
            let policy = SourcePolicy::new(read(&policy)?, policy.display().to_string());
            let id = graph.ingest_file(&data, schema, &policy, &subject, id.as_deref())?;
            writeln!(out, "{id}")?;
        }
        Command::Register {
            program,
            source,
            analyst,
            role,
            purposes,
        } => {
            let source = match (program, source) {
                (Some(path), _) => read(&path)?,
                (None, Some(text)) => text,
                (None, None) => unreachable!("clap requires one of --program and --source"),
            };
            let id = graph.register_program(
                source.trim(),
                &purposes,
                &Analyst {
                    identity: analyst,
                    role,
                },
            )?;
            writeln!(out, "{id}")?;
        }
        Command::Check { program } => {
            let report = graph.check_program(&ProgramId::new(program))?;
            let inputs: Vec<&str> = report.inputs.iter().map(CapsuleId::as_str).collect();
            writeln!(out, "# inputs: {}", inputs.join(", "))?;
            writeln!(out, "# output schema: {}", report.schema)?;
            writeln!(out, "# effect")?;
            writeln!(out, "{}", report.effect)?;
            writeln!(out, "# residual")?;
            write!(out, "{}", print_dnf(&report.residual.dnf()))?;
        }
        Command::Run { program, seed } => {
            let id = graph.run_program(&ProgramId::new(program), seed)?;
            writeln!(out, "{id}")?;
        }
        Command::Declassify {
            capsule,
            analyst,
            role,
            out: dest,
        } => {
            let path = graph.declassify(
                &CapsuleId::new(capsule),
                &Analyst {
                    identity: analyst,
                    role,
                },
            )?;
            match dest {
                Some(dest) => {
                    fs::copy(&path, &dest)
                        .map_err(|e| Failure::domain(format!("{}: {e}", dest.display())))?;
                    writeln!(out, "{}", dest.display())?;
                }
                None => writeln!(out, "{}", path.display())?,
            }
        }
        Command::Policy { capsule } => {
            let residual = graph.effective_policy(&CapsuleId::new(capsule))?;
            write!(out, "{residual}")?;
        }
        Command::SubjectView { subject, format } => {
            let view = graph.subject_view(&subject)?;
            write_export(&mut out, &view, format)?;
        }
        Command::Graph { format } => write_export(&mut out, &graph.export(), format)?,
        Command::Export { subject, out: dir } => {
            let capsules = graph.portability_export(&subject)?;
            match dir {
                Some(dir) => {
                    fs::create_dir_all(&dir)
                        .map_err(|e| Failure::domain(format!("{}: {e}", dir.display())))?;
                    for c in &capsules {
                        let path = dir.join(format!("{}.csv", c.capsule));
                        fs::write(&path, c.table.to_csv_string())
                            .map_err(|e| Failure::domain(format!("{}: {e}", path.display())))?;
                        writeln!(out, "{}", path.display())?;
                    }
                }
                None => {
                    for c in &capsules {
                        writeln!(out, "# capsule {}", c.capsule)?;
                        write!(out, "{}", c.table.to_csv_string())?;
                    }
                }
            }
        }
        Command::Delete { capsule } => {
            let report = graph.delete_capsule(&CapsuleId::new(capsule))?;
            writeln!(out, "deleted {}", report.deleted)?;
            for id in report.recomputed {
                writeln!(out, "recomputed {id}")?;
            }
        }
        Command::Consent { subject, program } => {
            let id = graph.record_consent(&subject, &ProgramId::new(program))?;
            writeln!(out, "{id}")?;
        }
        Command::Notify { subject } => {
            let id = graph.record_notification(&subject)?;
            writeln!(out, "{id}")?;
        }
        Command::Affiliate {
            function,
            subject,
            member,
        } => graph.record_affiliation(&function, &subject, &member)?,
        Command::Bench { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn write_export(
    out: &mut impl Write,
    export: &capsule_core::graph::GraphExport,
    format: Format,
) -> Result<(), Failure> {
    match format {
        Format::Json => writeln!(out, "{}", export.to_json())?,
        Format::Dot => write!(out, "{}", export.to_dot())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
