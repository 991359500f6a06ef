use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qaenet::attention::AttentionKind;
use qaenet::data::DatasetKind;
use qaenet::experiment::{
    self, metrics_to_csv, read_metrics, ExperimentConfig, Fault, GradcheckOptions, OptimizerKind,
};
use qaenet::quantum::Entanglement;
use qaenet::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "qaenet",
    version,
    about = "Quantum attention networks: train, evaluate, verify, inspect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, a checkpoint and a summary.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random circuit draws for the circuit-level suite.
        #[arg(long, default_value_t = 120)]
        draws: usize,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Print the shape trace, parameter counts and circuit gate list.
    #[command(alias = "inspect-circuit")]
    Inspect {
        #[command(flatten)]
        config: ConfigArgs,
        /// Read parameters from a checkpoint instead of initialising.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Convert a metrics stream to CSV.
    ExportCsv {
        metrics: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    SignFlip,
}

/// Config file plus flags that override its values.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_dataset)]
    dataset: Option<DatasetKind>,
    /// Directory holding the dataset files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
    #[arg(long)]
    attention: Option<AttentionKind>,
    #[arg(long)]
    qubits: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    entanglement: Option<Entanglement>,
    #[arg(long)]
    reduction: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Add wall-clock seconds to every metrics record.
    #[arg(long)]
    record_timing: bool,
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    match s {
        "mnist" => Ok(DatasetKind::Mnist),
        "fashion-mnist" => Ok(DatasetKind::FashionMnist),
        "cifar10" => Ok(DatasetKind::Cifar10),
        _ => Err(format!(
            "unknown dataset {s:?} (mnist, fashion-mnist, cifar10)"
        )),
    }
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("unknown optimizer {s:?} (adam, sgd)")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(kind) = self.dataset {
            cfg.data.dataset = kind;
            (cfg.model.in_channels, cfg.model.input_size) = match kind {
                DatasetKind::Cifar10 => (3, 32),
                DatasetKind::Mnist | DatasetKind::FashionMnist => (1, 28),
            };
        }
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(cfg.train.seed, self.seed);
        set!(cfg.output.dir, self.out);
        if self.data_dir.is_some() {
            cfg.data.dir = self.data_dir.clone();
        }
        if self.train_subset.is_some() {
            cfg.data.train_subset = self.train_subset;
        }
        if self.test_subset.is_some() {
            cfg.data.test_subset = self.test_subset;
        }
        set!(cfg.model.attention, self.attention);
        set!(cfg.model.qubits, self.qubits);
        set!(cfg.model.vqc_layers, self.layers);
        set!(cfg.model.entanglement, self.entanglement);
        set!(cfg.model.se_reduction, self.reduction);
        set!(cfg.model.dropout, self.dropout);
        set!(cfg.train.epochs, self.epochs);
        set!(cfg.train.batch_size, self.batch_size);
        set!(cfg.train.lr, self.lr);
        set!(cfg.train.optimizer, self.optimizer);
        cfg.train.record_timing |= self.record_timing;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Data { .. } | Error::Io(_) => EXIT_DATA,
        Error::Verification(_) | Error::NonFiniteLoss { .. } => EXIT_VERIFICATION,
        Error::Config(_) | Error::Shape(_) | Error::Checkpoint(_) => EXIT_CONFIG,
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            eprintln!("config hash {} seed {}", cfg.hash(), cfg.train.seed);
            let outcome = experiment::train(&cfg, &mut |r| {
                let secs = r
                    .wall_clock_seconds
                    .map(|s| format!(" ({s:.1}s)"))
                    .unwrap_or_default();
                eprintln!(
                    "epoch {:>3} {:<5} loss {:.4} acc {:.2}%{secs}",
                    r.epoch,
                    r.split,
                    r.loss,
                    100.0 * r.accuracy
                );
            })?;
            print!("{}", experiment::summary_table(&outcome.records));
            println!("metrics    {}", outcome.metrics_path().display());
            println!("checkpoint {}", outcome.checkpoint_path().display());
        }
        Command::Eval { config, checkpoint } => {
            let cfg = config.resolve()?;
            let r = experiment::evaluate_checkpoint(&cfg, &checkpoint)?;
            println!(
                "test loss {:.6} accuracy {:.2}% (epoch {}, seed {}, config {})",
                r.loss,
                100.0 * r.accuracy,
                r.epoch,
                r.seed,
                r.config_hash
            );
        }
        Command::Gradcheck {
            seed,
            draws,
            inject_fault,
        } => {
            let report = experiment::run_gradcheck(&GradcheckOptions {
                circuit_draws: draws,
                seed,
                fault: inject_fault.map(|FaultArg::SignFlip| Fault::SignFlip),
            })?;
            print!("{report}");
            if !report.passed() {
                let failed = report.lines.iter().filter(|l| !l.passed()).count();
                return Err(Error::Verification(format!(
                    "{failed} gradient checks exceeded tolerance"
                )));
            }
        }
        Command::Inspect { config, checkpoint } => {
            let cfg = config.resolve()?;
            print!("{}", experiment::inspect(&cfg, checkpoint.as_deref())?);
        }
        Command::ExportCsv { metrics, out } => {
            let csv = metrics_to_csv(&read_metrics(&metrics)?);
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
