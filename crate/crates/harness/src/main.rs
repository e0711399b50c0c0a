use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use addps_harness::config::{CodecKindSpec, ExperimentConfig};
use addps_harness::models::{build_schedule, train_codec, train_score_net, Source};
use addps_harness::oracle_suite::run_oracle_suite;
use addps_harness::report::{render, write_meta};
use addps_harness::{scenarios, trace, HarnessError, ReceiverRegistry, ReportFormat, RunOptions};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "addps",
    version,
    about = "Run posterior-sampling receiver scenarios"
)]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Jsonl => ReportFormat::Jsonl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in scenario and emit its report.
    Run {
        config: String,
        /// Report path; stdout when omitted. A `.meta.json` sidecar is written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// First seed; overrides the config and ADDPS_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Record wall-clock time per cell.
        #[arg(long)]
        timing: bool,
        /// Write chain-0 guidance traces of every guided cell as JSON lines.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Train the configured MLP codec and save it as a checkpoint.
    TrainCodec {
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a score network on the configured source and save it.
    TrainScore {
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the linear-Gaussian oracle property suite.
    VerifyOracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert a guidance trace into long-format CSV.
    TracePlot {
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in scenarios, or print one.
    Scenarios { name: Option<String> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: --jobs: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(arg: &str, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = scenarios::resolve(arg)?;
    let env = match std::env::var("ADDPS_SEED") {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|e| HarnessError::validation("ADDPS_SEED", e.to_string()))?,
        ),
        Err(_) => None,
    };
    if let Some(s) = seed.or(env) {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_or_print(path: Option<&Path>, bytes: &[u8]) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| HarnessError::io(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| HarnessError::io("<stdout>", e)),
    }
}

fn execute(cmd: Command) -> Result<ExitCode, HarnessError> {
    match cmd {
        Command::Run {
            config,
            out,
            format,
            seed,
            timing,
            trace_out,
        } => {
            let cfg = load(&config, seed)?;
            let opts = RunOptions {
                timing,
                traces: trace_out.is_some(),
            };
            let result =
                addps_harness::run_scenario_with(&cfg, &ReceiverRegistry::with_builtins(), opts)?;
            write_or_print(out.as_deref(), &render(&result.rows, format.into()))?;
            if let Some(p) = &out {
                write_meta(p, &cfg, format.into())?;
                eprintln!("wrote {} rows to {}", result.rows.len(), p.display());
            }
            if let Some(p) = trace_out {
                let mut buf = Vec::new();
                trace::write_traces(&result.traces, &mut buf)
                    .map_err(|e| HarnessError::io(&p, e))?;
                std::fs::write(&p, buf).map_err(|e| HarnessError::io(&p, e))?;
            }
        }
        Command::TrainCodec { config, out } => {
            let cfg = load(&config, None)?;
            if cfg.codec.kind != CodecKindSpec::Mlp {
                return Err(HarnessError::validation(
                    "codec.kind",
                    "train-codec needs an mlp codec",
                ));
            }
            let source = Source::from_spec(&cfg.source)?;
            let codec = train_codec(&cfg, &source)?;
            codec
                .to_checkpoint()
                .save(&out)
                .map_err(|e| HarnessError::numeric(out.display().to_string(), e))?;
            eprintln!("wrote codec checkpoint to {}", out.display());
        }
        Command::TrainScore { config, out } => {
            let cfg = load(&config, None)?;
            let source = Source::from_spec(&cfg.source)?;
            let s = build_schedule(&cfg)?;
            let sf = train_score_net(&cfg, &source, &s)?;
            sf.to_checkpoint()
                .save(&out)
                .map_err(|e| HarnessError::numeric(out.display().to_string(), e))?;
            eprintln!("wrote score checkpoint to {}", out.display());
        }
        Command::VerifyOracle { seed } => {
            let checks = run_oracle_suite(seed);
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(ExitCode::from(3));
            }
        }
        Command::TracePlot { trace: path, out } => {
            let file = std::fs::File::open(&path).map_err(|e| HarnessError::io(&path, e))?;
            let lines = trace::read_traces(std::io::BufReader::new(file))?;
            let mut buf = Vec::new();
            trace::tabulate(&lines, &mut buf)
                .map_err(|e| HarnessError::numeric("trace-plot", e))?;
            write_or_print(out.as_deref(), &buf)?;
        }
        Command::Scenarios { name } => match name {
            None => {
                for (n, _) in scenarios::BUILTIN {
                    println!("{n}");
                }
            }
            Some(n) => {
                let text = scenarios::builtin_text(&n).ok_or_else(|| {
                    HarnessError::validation("scenario", format!("no built-in scenario `{n}`"))
                })?;
                print!("{text}");
            }
        },
    }
    Ok(ExitCode::SUCCESS)
}
