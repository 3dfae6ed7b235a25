//! `odseg`: dataset generation, training, evaluation and gradient checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odseg::checkpoint::Checkpoint;
use odseg::config::{load_dataset_spec, load_train_config};
use odseg::data::{load_directory, write_dataset, DatasetSpec, Sample, SampleSource};
use odseg::inference::{write_merged_png, write_score_png, ScoreMode};
use odseg::trainer::{evaluate, predict_samples, sub_seed, train, EvalOptions};
use odseg::verification::{self, SuiteOptions};
use odseg::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "odseg", version, about = "Semantic segmentation with dense outlier detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset described by a spec file as PNG pairs plus manifest.
    Gen(GenArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Score a checkpoint on one or more dataset directories.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint path; the JSON-lines log goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write a checkpoint after every epoch.
    #[arg(long)]
    save_every_epoch: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory; images are split into inliers and negatives by
    /// their manifest source tag. Repeatable.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Scoring mode; defaults to the natural score of the checkpoint's head.
    #[arg(long)]
    score: Option<ScoreMode>,
    #[arg(long, default_value_t = 50)]
    assays: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    report: PathBuf,
    /// Directory for per-image score and merged-label PNGs.
    #[arg(long)]
    maps: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the synthetic hazard measurements.
    #[arg(long)]
    no_hazards: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = verification::DEFAULT_SEEDS)]
    seeds: u64,
    /// Only run cases whose name contains this text.
    #[arg(long)]
    filter: Option<String>,
    /// Corrupt every analytic gradient; the suite must then fail.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

enum Failure {
    Usage(String),
    Data(String),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn cmd_gen(a: &GenArgs) -> Outcome {
    let mut spec = load_dataset_spec(&a.spec)?;
    spec.count = a.count;
    let source = spec.open()?;
    let manifest = write_dataset(source.as_ref(), spec.num_classes, a.count, &a.out)?;
    println!("wrote {} pairs to {}", manifest.pairs.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Outcome {
    let setup = load_train_config(&a.config, a.seed)?;
    let inliers = setup.train.open()?;
    let negatives = setup.negatives.as_ref().map(DatasetSpec::open).transpose()?;
    let log_path = a.out.with_extension("log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut on_epoch = |line: &odseg::trainer::EpochLog, ck: &Checkpoint| -> odseg::Result<()> {
        let json = serde_json::to_string(line).expect("log line serializes");
        writeln!(log, "{json}").and_then(|_| log.flush()).map_err(|e| odseg::Error::Format {
            path: log_path.clone(),
            msg: e.to_string(),
        })?;
        println!("epoch {:>3}  loss {:.5}  {:.1} s", line.epoch, line.loss_total, line.wall_seconds);
        if a.save_every_epoch {
            ck.save(&a.out)?;
        }
        Ok(())
    };
    let out = train(&setup.config, inliers.as_ref(), negatives.as_deref(), &mut on_epoch)?;
    out.checkpoint.save(&a.out)?;
    println!("saved {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Outcome {
    let ck = Checkpoint::load(&a.ckpt)?;
    let head = ck.model.config().head_kind;
    let nc = ck.model.config().num_classes;
    let score = a.score.unwrap_or(ScoreMode::default_for(head));
    if !score.supports(head) {
        return Err(Failure::Usage(format!("score `{score}` does not apply to a {head} checkpoint")));
    }
    let mut inliers: Vec<Sample> = Vec::new();
    let mut negatives: Vec<Sample> = Vec::new();
    for dir in &a.data {
        let ds = load_directory(&DatasetSpec::directory(dir, nc))?;
        for (path, why) in ds.skipped() {
            eprintln!("warning: skipped {}: {why}", path.display());
        }
        for i in 0..ds.len() {
            let s = ds.sample(i)?;
            if s.source.is_negative() {
                negatives.push(s);
            } else {
                inliers.push(s);
            }
        }
    }
    if inliers.is_empty() || negatives.is_empty() {
        return Err(Failure::Data(format!(
            "evaluation needs inlier and negative images; found {} and {}",
            inliers.len(),
            negatives.len()
        )));
    }
    let mut opts = EvalOptions::new(score);
    opts.assays = a.assays;
    opts.seed = a.seed;
    opts.score_opts.threshold = a.threshold;
    opts.hazards = !a.no_hazards;
    let report = evaluate(&ck.model, &inliers, &negatives, &opts)?;
    fs::write(&a.report, report.to_json() + "\n").map_err(io_err(&a.report))?;
    println!("{}", odseg::metrics::render_table(&[(a.ckpt.to_string_lossy().as_ref(), &report)]));

    if let Some(dir) = &a.maps {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(a.seed, 9));
        for (tag, set) in [("inlier", &inliers), ("negative", &negatives)] {
            for (i, m) in predict_samples(&ck.model, set, &opts, &mut rng)?.iter().enumerate() {
                write_score_png(&dir.join(format!("{tag}_{i:05}_score.png")), &m.outlier_prob)?;
                write_merged_png(&dir.join(format!("{tag}_{i:05}_merged.png")), m)?;
            }
        }
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Outcome {
    let reports = verification::run(&SuiteOptions {
        seeds: a.seeds,
        filter: a.filter.clone(),
        inject_fault: a.inject_fault,
    })?;
    if reports.is_empty() {
        return Err(Failure::Usage("no gradient check matches the filter".into()));
    }
    print!("{}", verification::render(&reports));
    if reports.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verification) => {
            eprintln!("error: gradient verification failed");
            ExitCode::from(3)
        }
    }
}
