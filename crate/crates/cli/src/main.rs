mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lstm_am_abc::config::RunConfig;
use lstm_am_abc::{Error, ErrorKind};

/// Siamese BLSTM sentence similarity with bee-colony initialization.
#[derive(Debug, Parser)]
#[command(name = "lstm-am-abc", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Master seed; every random component derives its stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = one per core). Never changes any output byte.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Base settings: `desk` or `full`.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,

    /// `key = value` file applied on top of the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labelled pair corpus.
    Generate(commands::GenerateArgs),
    /// Train skip-gram word vectors on a dataset's sentences.
    Embed(commands::EmbedArgs),
    /// Initialize (randomly or by bee colony) and train one model.
    Train(commands::TrainArgs),
    /// Score a model, or cross-validate the pipeline with `--cv`.
    Eval(commands::EvalArgs),
    /// Cross-validate random and bee-colony initialization on shared folds.
    Compare(commands::CompareArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(commands::GradCheckArgs),
}

/// Tag and exit status: 1 usage, 2 data, 3 numerical.
fn classify(kind: ErrorKind) -> (&'static str, u8) {
    match kind {
        ErrorKind::Usage => ("usage", 1),
        ErrorKind::Data => ("data", 2),
        ErrorKind::Divergence => ("divergence", 3),
    }
}

/// Prints `error[<tag>]: <message>` on one line of stderr.
fn report((tag, status): (&str, u8), message: &str) -> ExitCode {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{tag}]: {one_line}");
    ExitCode::from(status)
}

/// Profile, then config file, then `--set`; command flags are applied later.
fn base_config(global: &GlobalArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::profile(&global.profile)?;
    if let Some(path) = &global.config {
        cfg = RunConfig::load(path, cfg)?;
    }
    for kv in &global.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::argument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), commands::Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
        .map_err(|e| Error::argument(format!("thread pool: {e}")))?;
    let cfg = base_config(&cli.global)?;
    match cli.command {
        Command::Generate(a) => commands::generate(cfg, a),
        Command::Embed(a) => commands::embed(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Compare(a) => commands::compare(cfg, a),
        Command::Gradcheck(a) => commands::gradcheck(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return report(classify(ErrorKind::Usage), first.trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Error(e)) => report(classify(e.kind()), &e.to_string()),
        Err(commands::Failure::GradCheck(message)) => report(("gradcheck", 3), &message),
    }
}
