use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use miobench::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CheckpointModel};
use miobench::corpus::{
    align_pair, load_corpus, save_corpus, split_corpus, synthesize_complementary_pair, synthesize_corpus, CorpusError,
    EmbeddingCorpus, SplitSpec, SplitTag,
};
use miobench::fusion::{score_mio, train_mio, MioArch};
use miobench::harness::{
    parse_report_json, render_report, run_experiment, write_outputs, ExperimentConfig, HarnessError, ReportFormat,
};
use miobench::metrics::{compute_eer, MetricsError, ScoreSet};
use miobench::pca::{fit_pca, PcaError, PcaTransform};
use miobench::probes::{score, train_probe, ProbeArch, ProbeKind};
use miobench::train::{TrainError, TrainingHyper};

#[derive(Parser)]
#[command(
    name = "miobench",
    version,
    about = "Audio-deepfake detection benchmark over frozen speech-model embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Gaussian two-class corpus (or a complementary pair).
    Synth(SynthArgs),
    /// Split an unsplit corpus into train/val/test files.
    Split(SplitArgs),
    /// Decode a corpus, checkpoint or PCA block and report its invariants.
    Validate { file: PathBuf },
    /// Train an FCN or CNN probe, or a MiO model.
    Train(TrainArgs),
    /// Score a corpus (or aligned pair) with a checkpoint into a CSV.
    Score(ScoreArgs),
    /// Compute the EER of a score CSV.
    Eval {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Train MiO on a corpus pair, then score and evaluate the test pair.
    Fuse(FuseArgs),
    /// Fit or apply a PCA transform.
    #[command(subcommand)]
    Pca(PcaCommand),
    /// Run an experiment config through the harness.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Re-render a JSON report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    dim: usize,
    /// Records per class.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 4.0)]
    sep: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ptm_id: Option<String>,
    #[arg(long)]
    name: Option<String>,
    /// Also write the second view of a complementary pair here.
    #[arg(long)]
    complementary: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated train,val,test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.1, 0.2])]
    fractions: Vec<f64>,
}

/// Optional JSON with `hyper`, `probe` and `mio` sections; flags win.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct StepConfig {
    hyper: TrainingHyper,
    probe: ProbeArch,
    mio: MioArch,
}

#[derive(Args)]
struct HyperFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TrainKind {
    Fcn,
    Cnn,
    Mio,
}

impl std::str::FromStr for TrainKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fcn" => Ok(Self::Fcn),
            "cnn" => Ok(Self::Cnn),
            "mio" => Ok(Self::Mio),
            other => Err(format!("unknown kind {other:?} (expected fcn, cnn or mio)")),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    kind: TrainKind,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Second-view training corpus (mio only).
    #[arg(long)]
    train_b: Option<PathBuf>,
    #[arg(long)]
    val_b: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperFlags,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Second-view corpus for a MiO checkpoint.
    #[arg(long)]
    input_b: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    train_a: PathBuf,
    #[arg(long)]
    train_b: PathBuf,
    #[arg(long)]
    val_a: PathBuf,
    #[arg(long)]
    val_b: PathBuf,
    #[arg(long)]
    test_a: PathBuf,
    #[arg(long)]
    test_b: PathBuf,
    #[arg(long)]
    out_model: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperFlags,
}

#[derive(Subcommand)]
enum PcaCommand {
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Apply {
        #[arg(long)]
        pca: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Marks an error as bad input (exit 1) rather than a runtime failure (exit 2).
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(context: impl fmt::Display, e: impl fmt::Display) -> anyhow::Error {
    Invalid(format!("{context}: {e}")).into()
}

fn read_corpus(path: &Path) -> Result<EmbeddingCorpus> {
    load_corpus(path).map_err(|e| match e {
        CorpusError::Io { .. } => anyhow::Error::new(e),
        other => invalid(path.display(), other),
    })
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).map_err(|e| match e {
        CheckpointError::Io { .. } => anyhow::Error::new(e),
        other => invalid(path.display(), other),
    })
}

fn train_error(e: TrainError) -> anyhow::Error {
    match e {
        TrainError::Diverged { .. } => anyhow::Error::new(e).context("training"),
        other => invalid("training", other),
    }
}

fn step_config(flags: &HyperFlags) -> Result<StepConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
            serde_json::from_str(&text).map_err(|e| invalid(path.display(), e))?
        }
        None => StepConfig::default(),
    };
    let h = &mut cfg.hyper;
    if let Some(v) = flags.epochs {
        h.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        h.batch_size = v;
    }
    if let Some(v) = flags.lr {
        h.learning_rate = v;
    }
    if let Some(v) = flags.shuffle_seed {
        h.shuffle_seed = v;
    }
    if let Some(v) = flags.init_seed {
        h.init_seed = v;
    }
    h.validate().map_err(|e| invalid("hyperparameters", e))?;
    Ok(cfg)
}

fn print_eer(scores: &ScoreSet) -> Result<()> {
    let e = compute_eer(scores).map_err(|e| invalid("evaluation", e))?;
    println!(
        "EER {:.4} threshold {} FPR {:.4} FNR {:.4}",
        e.eer, e.threshold, e.fpr, e.fnr
    );
    Ok(())
}

fn emit_scores(scores: &ScoreSet, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => scores.save_csv(path).with_context(|| path.display().to_string()),
        None => {
            print!("{}", scores.to_csv_string());
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let rename = |c: EmbeddingCorpus, ptm: Option<&str>| -> Result<EmbeddingCorpus> {
        let name = a.name.clone().unwrap_or_else(|| c.name().to_string());
        let ptm = ptm.map_or_else(|| c.ptm_id().to_string(), str::to_string);
        let (dim, split) = (c.dim(), c.split());
        Ok(EmbeddingCorpus::new(name, ptm, dim, split, c.into_records())?)
    };
    match &a.complementary {
        None => {
            let c = synthesize_corpus(a.dim, a.n, a.sep, a.seed).map_err(|e| invalid("synth", e))?;
            save_corpus(&rename(c, a.ptm_id.as_deref())?, &a.out)?;
        }
        Some(out_b) => {
            let (x, y) = synthesize_complementary_pair(a.dim, a.n, a.sep, a.seed).map_err(|e| invalid("synth", e))?;
            save_corpus(&rename(x, a.ptm_id.as_deref())?, &a.out)?;
            save_corpus(&rename(y, None)?, out_b)?;
        }
    }
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let [train_f, val_f, test_f] = a.fractions[..] else {
        return Err(Invalid(format!("--fractions needs 3 values, got {}", a.fractions.len())).into());
    };
    let corpus = read_corpus(&a.input)?;
    let spec = SplitSpec::new(train_f, val_f, test_f, a.seed).map_err(|e| invalid("split", e))?;
    let (train, val, test) = split_corpus(&corpus, &spec).map_err(|e| invalid("split", e))?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| a.out_dir.display().to_string())?;
    let stem = a
        .input
        .file_stem()
        .map_or_else(|| "corpus".to_string(), |s| s.to_string_lossy().into_owned());
    for (part, tag) in [(train, SplitTag::Train), (val, SplitTag::Val), (test, SplitTag::Test)] {
        let path = a.out_dir.join(format!("{stem}.{}.mioe", tag.as_str()));
        save_corpus(&part, &path)?;
        let (bona, spoof) = part.label_counts();
        println!(
            "{} {} records ({bona} bonafide, {spoof} spoof)",
            path.display(),
            part.len()
        );
    }
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).with_context(|| path.display().to_string())?;
    let ctx = path.display();
    match bytes.get(..4) {
        Some(b"MIOM") => {
            let ck = miobench::checkpoint::decode_checkpoint(&bytes).map_err(|e| invalid(&ctx, e))?;
            println!(
                "{ctx}: valid {} checkpoint, {} bytes",
                ck.model.kind_name(),
                bytes.len()
            );
        }
        Some(b"MIOP") => {
            let p = PcaTransform::decode(&bytes).map_err(|e| invalid(&ctx, e))?;
            println!(
                "{ctx}: valid PCA block, dim {} -> k {}, rank {}",
                p.dim(),
                p.k(),
                p.rank()
            );
        }
        _ => {
            let c = miobench::corpus::decode_corpus(&bytes).map_err(|e| invalid(&ctx, e))?;
            let (bona, spoof) = c.label_counts();
            println!(
                "{ctx}: valid corpus {:?}, ptm {}, split {}, dim {}, {} records ({bona} bonafide, {spoof} spoof)",
                c.name(),
                c.ptm_id(),
                c.split().as_str(),
                c.dim(),
                c.len()
            );
            if !c.has_both_labels() {
                eprintln!("warning: corpus holds a single label and cannot be used for training");
            }
        }
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = step_config(&a.hyper)?;
    let train = read_corpus(&a.train)?;
    let val = read_corpus(&a.val)?;
    let (model, hist) = match a.kind {
        TrainKind::Fcn | TrainKind::Cnn => {
            let kind = if a.kind == TrainKind::Fcn {
                ProbeKind::Fcn
            } else {
                ProbeKind::Cnn
            };
            let (probe, hist) = train_probe(kind, &train, &val, &cfg.hyper, &cfg.probe).map_err(train_error)?;
            (CheckpointModel::from(probe), hist)
        }
        TrainKind::Mio => {
            let (Some(tb), Some(vb)) = (&a.train_b, &a.val_b) else {
                return Err(Invalid("--kind mio needs --train-b and --val-b".into()).into());
            };
            let (train_b, val_b) = (read_corpus(tb)?, read_corpus(vb)?);
            let tp = align_pair(&train, &train_b).map_err(|e| invalid("training pairs", e))?;
            let vp = align_pair(&val, &val_b).map_err(|e| invalid("validation pairs", e))?;
            let (m, hist) = train_mio(&tp, &vp, &cfg.hyper, &cfg.mio).map_err(train_error)?;
            (CheckpointModel::Mio(m), hist)
        }
    };
    save_checkpoint(
        &Checkpoint {
            hyper: cfg.hyper,
            model,
        },
        &a.out,
    )?;
    eprintln!(
        "trained {} epochs, selected epoch {} ({:?})",
        hist.epochs(),
        hist.best_epoch + 1,
        hist.selection
    );
    Ok(())
}

fn score_cmd(a: ScoreArgs) -> Result<()> {
    let ck = read_checkpoint(&a.model)?;
    let input = read_corpus(&a.input)?;
    let scores = match ck.model {
        CheckpointModel::Mio(m) => {
            let Some(pb) = &a.input_b else {
                return Err(Invalid("a MiO checkpoint needs --input-b".into()).into());
            };
            let b = read_corpus(pb)?;
            let pairs = align_pair(&input, &b).map_err(|e| invalid("pairs", e))?;
            score_mio(&m, &pairs).map_err(|e| invalid("scoring", e))?
        }
        other => {
            let probe = other.into_probe().expect("probe checkpoint");
            score(&probe, &input).map_err(|e| invalid("scoring", e))?
        }
    };
    emit_scores(&scores, a.out.as_deref())
}

fn eval(path: &Path) -> Result<()> {
    let scores = ScoreSet::load_csv(path).map_err(|e| match e {
        MetricsError::Io { .. } => anyhow::Error::new(e),
        other => invalid(path.display(), other),
    })?;
    print_eer(&scores)
}

fn fuse(a: FuseArgs) -> Result<()> {
    let cfg = step_config(&a.hyper)?;
    let load = |p: &PathBuf| read_corpus(p);
    let (ta, tb, va, vb, sa, sb) = (
        load(&a.train_a)?,
        load(&a.train_b)?,
        load(&a.val_a)?,
        load(&a.val_b)?,
        load(&a.test_a)?,
        load(&a.test_b)?,
    );
    let pairs = |x, y, what: &str| align_pair(x, y).map_err(|e| invalid(what, e));
    let train = pairs(&ta, &tb, "training pairs")?;
    let val = pairs(&va, &vb, "validation pairs")?;
    let test = pairs(&sa, &sb, "test pairs")?;
    let (model, _) = train_mio(&train, &val, &cfg.hyper, &cfg.mio).map_err(train_error)?;
    let scores = score_mio(&model, &test).map_err(|e| invalid("scoring", e))?;
    if let Some(path) = &a.out_model {
        save_checkpoint(
            &Checkpoint {
                hyper: cfg.hyper,
                model: CheckpointModel::Mio(model),
            },
            path,
        )?;
    }
    if let Some(path) = &a.scores {
        scores.save_csv(path).with_context(|| path.display().to_string())?;
    }
    print_eer(&scores)
}

fn pca(cmd: PcaCommand) -> Result<()> {
    let pca_err = |ctx: &Path, e: PcaError| match e {
        PcaError::Io { .. } => anyhow::Error::new(e),
        other => invalid(ctx.display(), other),
    };
    match cmd {
        PcaCommand::Fit { input, k, out } => {
            let c = read_corpus(&input)?;
            let p = fit_pca(&c, k).map_err(|e| pca_err(&input, e))?;
            for w in p.warnings() {
                eprintln!("warning: {w}");
            }
            p.save(&out)?;
        }
        PcaCommand::Apply { pca, input, out } => {
            let p = PcaTransform::load(&pca).map_err(|e| pca_err(&pca, e))?;
            let c = read_corpus(&input)?;
            save_corpus(&p.apply(&c).map_err(|e| pca_err(&input, e))?, &out)?;
        }
    }
    Ok(())
}

fn run(config: &Path, format: ReportFormat) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config).map_err(|e| match e {
        HarnessError::Io { .. } => anyhow::Error::new(e),
        other => invalid(config.display(), other),
    })?;
    let report = run_experiment(&cfg).map_err(|e| match e {
        HarnessError::Config(_) | HarnessError::MissingFile { .. } | HarnessError::PcaK { .. } => {
            invalid(config.display(), e)
        }
        other => anyhow::Error::new(other),
    })?;
    write_outputs(&report, &cfg.outputs)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for r in report.failed_rows() {
        eprintln!("failed: {}: {}", r.cell_id, r.error.as_deref().unwrap_or(""));
    }
    print!("{}", render_report(&report, format)?);
    Ok(())
}

fn report(input: &Path, format: ReportFormat, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| input.display().to_string())?;
    let report = parse_report_json(&text).map_err(|e| invalid(input.display(), e))?;
    let rendered = render_report(&report, format)?;
    match out {
        Some(path) => std::fs::write(path, rendered).with_context(|| path.display().to_string()),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Validate { file } => validate(&file),
        Command::Train(a) => train(a),
        Command::Score(a) => score_cmd(a),
        Command::Eval { scores } => eval(&scores),
        Command::Fuse(a) => fuse(a),
        Command::Pca(cmd) => pca(cmd),
        Command::Run { config, format } => run(&config, format),
        Command::Report { input, format, out } => report(&input, format, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
