use std::path::PathBuf;
use std::process::ExitCode;

use arsg::config::RunConfig;
use arsg::pipeline;
use arsg::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Attention-based multichannel speech recognizer on synthetic data.
#[derive(Parser, Debug)]
#[command(name = "arsg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for synthesis, initialization and training (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic multichannel dataset (JSON lines).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a character n-gram language model.
    LmTrain {
        /// Transcripts: plain lines or dataset / decode JSON lines.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        k: f64,
        /// Vocabulary file; defaults to the characters of the corpus.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint and a CSV log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training log; defaults to `<out>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides `train.max_updates`.
        #[arg(long)]
        updates: Option<usize>,
    },
    /// Decode a dataset with a trained checkpoint.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        /// LM weight; defaults to the config value with --lm, 0 without.
        #[arg(long)]
        beta: Option<f64>,
        /// `beam` or `greedy`.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        half_width: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the corpus character error rate of hypotheses against references.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of the loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = common.load()?;
            let n = pipeline::synth(&cfg.synth, &out)?;
            eprintln!("wrote {n} utterances to {}", out.display());
        }
        Command::LmTrain { corpus, n, k, vocab, out } => {
            pipeline::lm_train(&corpus, vocab.as_deref(), n, k, &out)?;
        }
        Command::Train { common, data, out, log, updates } => {
            let mut cfg = common.load()?;
            if let Some(u) = updates {
                cfg.train.max_updates = u;
            }
            let log = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log.csv");
                PathBuf::from(p)
            });
            let threads = pipeline::threads_from_env()?;
            pipeline::train(&cfg, &data, &out, &log, threads, &mut |m| eprintln!("{m}"))?;
        }
        Command::Decode { common, ckpt, data, lm, beam, beta, strategy, half_width, out } => {
            let mut dc = common.load()?.decode;
            if let Some(b) = beam {
                dc.beam = b;
            }
            dc.beta = match (beta, &lm) {
                (Some(b), _) => b,
                (None, Some(_)) => dc.beta,
                (None, None) => 0.0,
            };
            if let Some(s) = strategy {
                dc.strategy = s;
            }
            if half_width.is_some() {
                dc.half_width = half_width;
            }
            pipeline::decode(&ckpt, &data, lm.as_deref(), &dc, &out)?;
        }
        Command::Eval { reference, hyp } => {
            println!("{:.4}", pipeline::eval(&reference, &hyp)?);
        }
        Command::Gradcheck { common, tolerance } => {
            let cfg = common.load()?;
            let r = pipeline::gradcheck(&cfg)?;
            println!("{:e}", r.max_rel_error);
            if !(r.max_rel_error <= tolerance) {
                return Err(Error::Numeric(format!(
                    "max relative error {:e} exceeds {tolerance:e} (analytic {:e}, numeric {:e})",
                    r.max_rel_error, r.analytic, r.numeric
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR usage: {line}");
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("ERROR {}: {detail}", e.category());
            ExitCode::FAILURE
        }
    }
}
