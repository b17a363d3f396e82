mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use facecloak::backends::ToyTrainingConfig;
use facecloak::corpus::ToyCorpusConfig;
use facecloak::optimizer::parse_fraction;
use facecloak::pipeline::AblationAxis;

use commands::CloakSource;
use config::{Overrides, RunConfig};
use failure::{CliError, Stage, EXIT_OK};

#[derive(Debug, Parser)]
#[command(name = "facecloak", version, about = "Identity-specific face cloaks")]
struct Cli {
    /// TOML run config. Flags override its values.
    #[arg(long, global = true, env = "FACECLOAK_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for per-identity generation and per-probe evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log filter, e.g. `info` or `facecloak=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize a cloak from one seed image.
    Generate {
        #[arg(long)]
        seed: PathBuf,
        /// Identity label; defaults to the seed file stem.
        #[arg(long)]
        identity: Option<String>,
        /// Output path; defaults to `<output_dir>/<identity>.fclk`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Add a cloak to images and write PNGs.
    Apply {
        #[arg(long)]
        cloak: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score protection on a probe/gallery dataset.
    Eval {
        /// Directory of `<identity>.fclk` files.
        #[arg(long, conflicts_with_all = ["generate", "clean"])]
        cloaks: Option<PathBuf>,
        /// Generate cloaks for every probe identity first.
        #[arg(long)]
        generate: bool,
        /// Score without any cloaks.
        #[arg(long)]
        clean: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// One generation + evaluation row per value of an optimizer setting.
    Ablate {
        #[arg(long)]
        axis: AblationAxis,
        /// Comma-separated values; fractions like 8/255 are accepted.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print a cloak header without reading its payload.
    Inspect { cloak: PathBuf },
    /// Train toy backend weights on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fail unless held-out top-1 accuracy reaches this value.
        #[arg(long)]
        accuracy_floor: Option<f64>,
    },
    /// Write the procedural toy corpus in the dataset layout.
    MakeCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        identities: usize,
        #[arg(long, default_value_t = 10)]
        images: usize,
        /// Identities placed under `probe/`; the rest become distractors.
        #[arg(long, default_value_t = 30)]
        users: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn load_config(path: Option<&PathBuf>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path.map(|p| p.as_path()))?;
    cfg.apply(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::config("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--jobs: {e}")))?;
    }
    let config = cli.config.as_ref();
    match cli.command {
        Command::Generate { seed, identity, out, overrides } => {
            let cfg = load_config(config, &overrides)?;
            let path = commands::generate(&cfg, &seed, identity.as_deref(), out.as_deref())?;
            println!("{}", path.display());
        }
        Command::Apply { cloak, out_dir, images } => {
            let out_dir = match out_dir {
                Some(d) => d,
                None => load_config(config, &Overrides::default())?.output_dir,
            };
            let outcome = commands::apply(&cloak, &images, &out_dir)?;
            for p in &outcome.written {
                println!("{}", p.display());
            }
            for (path, e) in &outcome.failures {
                eprintln!("{}: {}", path.display(), e.to_json());
            }
            if !outcome.failures.is_empty() {
                return Err(CliError::partial(
                    Stage::Apply,
                    format!("{} of {} images failed", outcome.failures.len(), images.len()),
                ));
            }
        }
        Command::Eval { cloaks, generate, clean, overrides } => {
            let cfg = load_config(config, &overrides)?;
            let source = match (&cloaks, generate, clean) {
                (Some(d), _, _) => CloakSource::Dir(d),
                (None, true, _) => CloakSource::Generate,
                (None, false, true) => CloakSource::None,
                (None, false, false) => {
                    return Err(CliError::config("eval needs --cloaks DIR, --generate or --clean"))
                }
            };
            let report = commands::eval(&cfg, source)?;
            print!("{}", report.to_text());
        }
        Command::Ablate { axis, values, overrides } => {
            let cfg = load_config(config, &overrides)?;
            let values = values
                .iter()
                .map(|v| parse_fraction(v))
                .collect::<facecloak::Result<Vec<f64>>>()
                .map_err(|e| CliError::config(e.to_string()))?;
            print!("{}", commands::ablate(&cfg, axis, &values)?);
        }
        Command::Inspect { cloak } => println!("{}", commands::inspect(&cloak)?),
        Command::Train { dataset, out, epochs, seed, accuracy_floor } => {
            let mut training = ToyTrainingConfig::default();
            if let Some(e) = epochs {
                training.epochs = e;
            }
            if let Some(s) = seed {
                training.seed = s;
            }
            if let Some(a) = accuracy_floor {
                training.accuracy_floor = a;
            }
            let acc = commands::train(&dataset, &out, &training)?;
            println!("held-out top-1 accuracy {acc:.4}");
        }
        Command::MakeCorpus { out, identities, images, users, seed } => {
            let cfg = ToyCorpusConfig { identities, images_per_identity: images, seed, ..Default::default() };
            commands::make_corpus(&cfg, &out, users)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code as u8)
        }
    }
}
