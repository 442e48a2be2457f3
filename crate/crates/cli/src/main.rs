use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deap_core::config::RunConfig;
use deap_core::pipeline;
use deap_core::sim::PolicyId;
use deap_core::trace::{synth_trace, write_trace, SynthKind};
use deap_core::Error;

#[derive(Parser)]
#[command(name = "deap", version, about = "Learned cache replacement: pretraining, training and trace simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key; wins over the file. Repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> deap_core::Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain byte embedding tables on the training trace.
    Pretrain(ConfigArgs),
    /// Train the model and write a checkpoint plus its loss curve.
    Train(ConfigArgs),
    /// Run the learned policy and the baselines over the test trace.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated subset of learned,lru,lfu,fifo,lifo,belady.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
    },
    /// Merge simulation reports into one comparison table.
    Report {
        /// `report.json` files written by `simulate`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(short, long, default_value = "comparison.csv")]
        output: PathBuf,
    },
    /// Write a synthetic trace as `pc,address` CSV.
    GenTrace {
        /// cyclic[:period], zipf[:distinct[:exponent]], adversarial[:hot[:scan]] or program.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::EmptyTrace(_) => 3,
        Error::Dimension { .. } | Error::Format(_) | Error::Parse { .. } | Error::Shape(_) => 4,
        Error::Numeric(_) | Error::Logic(_) => 1,
    }
}

fn run(cli: Cli) -> deap_core::Result<()> {
    match cli.command {
        Command::Pretrain(args) => {
            let cfg = args.load()?;
            let log = pipeline::pretrain(&cfg)?;
            eprintln!(
                "pretrained {} epochs, final loss address {:.4} pc {:.4} -> {}",
                log.address_losses.len(),
                log.address_losses.last().copied().unwrap_or(f64::NAN),
                log.pc_losses.last().copied().unwrap_or(f64::NAN),
                cfg.tables_path.display()
            );
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let out = pipeline::train(&cfg, &mut |epoch, l| {
                eprintln!(
                    "epoch {:>3}  total {:.5}  prefetching {:.5}  frequency {:.5}  recency {:.5}",
                    epoch + 1,
                    l.total,
                    l.prefetching,
                    l.frequency,
                    l.recency
                );
            })?;
            eprintln!(
                "{} optimizer steps -> {}",
                out.optimizer.step_count,
                cfg.checkpoint_path.display()
            );
        }
        Command::Simulate { config, policies } => {
            let cfg = config.load()?;
            let policies = match policies {
                Some(names) => names
                    .iter()
                    .map(|n| n.parse())
                    .collect::<deap_core::Result<Vec<PolicyId>>>()?,
                None => PolicyId::ALL.to_vec(),
            };
            let report = pipeline::simulate(&cfg, &policies, true)?;
            for p in &report.policies {
                println!("{:<8} {:.4}", p.policy.name(), p.hit_rate);
            }
        }
        Command::Report { inputs, output } => {
            let rows = pipeline::report(&inputs, &output)?;
            for r in &rows {
                println!("{:<8} {:.4}", r.policy.name(), r.mean_hit_rate);
            }
        }
        Command::GenTrace {
            kind,
            length,
            seed,
            output,
        } => {
            let kind: SynthKind = kind.parse()?;
            let lt = synth_trace(&kind, length, seed)?;
            write_trace(&output, &lt.trace)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
