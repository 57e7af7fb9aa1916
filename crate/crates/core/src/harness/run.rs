use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::config::{CorpusSource, ExperimentConfig, Mode, OutputPaths};
use super::report::{render_report, Provenance, Report, ReportFormat, ReportRow, RowProvenance, RowStatus, SeedResult};
use super::HarnessError;
use crate::corpus::{align_pair, load_corpus, split_corpus, split_indices, EmbeddingCorpus, EmbeddingRecord, SplitTag};
use crate::fusion::{score_mio, train_mio};
use crate::metrics::{compute_eer, ScoreSet};
use crate::pca::{fit_pca, PcaTransform};
use crate::probes::{score, train_probe, ProbeKind};
use crate::ptm::check_dim;

/// Environment variable capping harness parallelism.
pub const WORKERS_ENV: &str = "MIO_WORKERS";

type Shared = Arc<EmbeddingCorpus>;

struct Splits {
    train: Shared,
    val: Shared,
    test: Shared,
    seed: Option<u64>,
}

/// Aligned views of one split: identical clip order in both corpora.
struct PairSplits {
    a: [EmbeddingCorpus; 3],
    b: [EmbeddingCorpus; 3],
    seed: Option<u64>,
}

enum Job {
    Single {
        kind: ProbeKind,
        dataset: String,
        ptm: String,
    },
    Fusion {
        dataset: String,
        a: String,
        b: String,
    },
    CrossSingle {
        source: String,
        ptm: String,
        targets: Vec<String>,
    },
    CrossMio {
        source: String,
        a: String,
        b: String,
        targets: Vec<String>,
    },
}

struct Cell {
    job: Job,
    rows: Vec<ReportRow>,
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    corpora: HashMap<PathBuf, Result<Shared, String>>,
}

impl<'a> Context<'a> {
    fn load(config: &'a ExperimentConfig, wanted: &[(String, String)]) -> (Self, Vec<String>) {
        let mut corpora = HashMap::new();
        let mut warnings = Vec::new();
        for (dataset, ptm) in wanted {
            let Some(paths) = config.entry(dataset, ptm) else {
                continue;
            };
            for p in paths.paths() {
                if corpora.contains_key(p) {
                    continue;
                }
                let loaded = load_corpus(p).map(Arc::new).map_err(|e| e.to_string());
                if let Ok(c) = &loaded {
                    if let Err(m) = check_dim(ptm, c.dim()) {
                        warnings.push(format!("{dataset}/{ptm} ({}): {m}", p.display()));
                    }
                }
                corpora.insert(p.to_path_buf(), loaded);
            }
        }
        (Self { config, corpora }, warnings)
    }

    fn corpus(&self, path: &Path) -> Result<Shared, String> {
        match self.corpora.get(path) {
            Some(Ok(c)) => Ok(Arc::clone(c)),
            Some(Err(e)) => Err(e.clone()),
            None => Err(format!("{} was not loaded", path.display())),
        }
    }

    fn source(&self, dataset: &str, ptm: &str) -> Result<CorpusSource<'a>, String> {
        self.config
            .entry(dataset, ptm)
            .ok_or_else(|| format!("no {ptm} corpus for dataset {dataset}"))?
            .source()
    }

    /// Seeds for a (dataset, PTM) entry: one official run or one per split seed.
    fn seeds(&self, dataset: &str, ptm: &str) -> Result<Vec<Option<u64>>, String> {
        Ok(match self.source(dataset, ptm)? {
            CorpusSource::Split { .. } => vec![None],
            CorpusSource::Unsplit(_) => self.config.itw_seeds.iter().copied().map(Some).collect(),
        })
    }

    fn first_seed(&self) -> u64 {
        self.config.itw_seeds[0]
    }

    fn splits(&self, dataset: &str, ptm: &str, seed: u64) -> Result<Splits, String> {
        match self.source(dataset, ptm)? {
            CorpusSource::Split { train, val, test } => Ok(Splits {
                train: self.corpus(train)?,
                val: self.corpus(val)?,
                test: self.corpus(test)?,
                seed: None,
            }),
            CorpusSource::Unsplit(path) => {
                let whole = self.corpus(path)?;
                let spec = self.config.split_spec(seed).map_err(|e| e.to_string())?;
                let (train, val, test) = split_corpus(&whole, &spec).map_err(|e| e.to_string())?;
                Ok(Splits {
                    train: Arc::new(train),
                    val: Arc::new(val),
                    test: Arc::new(test),
                    seed: Some(seed),
                })
            }
        }
    }

    fn pair_splits(&self, dataset: &str, a: &str, b: &str, seed: u64) -> Result<PairSplits, String> {
        match (self.source(dataset, a)?, self.source(dataset, b)?) {
            (
                CorpusSource::Split { train, val, test },
                CorpusSource::Split {
                    train: tb,
                    val: vb,
                    test: sb,
                },
            ) => {
                let view = |pa, pb| -> Result<_, String> { aligned_views(&*self.corpus(pa)?, &*self.corpus(pb)?) };
                let (train_a, train_b) = view(train, tb)?;
                let (val_a, val_b) = view(val, vb)?;
                let (test_a, test_b) = view(test, sb)?;
                Ok(PairSplits {
                    a: [train_a, val_a, test_a],
                    b: [train_b, val_b, test_b],
                    seed: None,
                })
            }
            (CorpusSource::Unsplit(pa), CorpusSource::Unsplit(pb)) => {
                let (x, y) = aligned_views(&*self.corpus(pa)?, &*self.corpus(pb)?)?;
                let spec = self.config.split_spec(seed).map_err(|e| e.to_string())?;
                let idx = split_indices(x.len(), &spec).map_err(|e| e.to_string())?;
                let [i_train, i_val, i_test] = &idx;
                let cut = |c: &EmbeddingCorpus| {
                    [
                        (SplitTag::Train, i_train),
                        (SplitTag::Val, i_val),
                        (SplitTag::Test, i_test),
                    ]
                    .map(|(tag, ix)| c.subset(format!("{}.{}", c.name(), tag.as_str()), tag, ix))
                };
                Ok(PairSplits {
                    a: cut(&x),
                    b: cut(&y),
                    seed: Some(seed),
                })
            }
            _ => Err(format!(
                "{a} and {b} must both be split or both be unsplit in dataset {dataset}"
            )),
        }
    }
}

/// Restricts `a` and `b` to their shared clips, in `a`'s order.
fn aligned_views(a: &EmbeddingCorpus, b: &EmbeddingCorpus) -> Result<(EmbeddingCorpus, EmbeddingCorpus), String> {
    let pairs = align_pair(a, b).map_err(|e| format!("alignment failed: {e}"))?;
    let view = |c: &EmbeddingCorpus, pick: &dyn Fn(&crate::corpus::AlignedPair<'_>) -> Vec<f32>| {
        let records = pairs
            .iter()
            .map(|p| EmbeddingRecord::new(p.clip_id, p.label, pick(p)))
            .collect();
        EmbeddingCorpus::new(c.name(), c.ptm_id(), c.dim(), c.split(), records).map_err(|e| e.to_string())
    };
    Ok((view(a, &|p| p.a.to_vec())?, view(b, &|p| p.b.to_vec())?))
}

fn evaluate(scores: &ScoreSet, seed: Option<u64>, best_epoch: usize) -> Result<SeedResult, String> {
    let e = compute_eer(scores).map_err(|e| format!("evaluation: {e}"))?;
    Ok(SeedResult {
        seed,
        eer: e.eer,
        threshold: e.threshold,
        best_epoch,
    })
}

fn probe_run(
    config: &ExperimentConfig,
    kind: ProbeKind,
    train: &EmbeddingCorpus,
    val: &EmbeddingCorpus,
    test: &EmbeddingCorpus,
    seed: Option<u64>,
) -> Result<SeedResult, String> {
    let (probe, hist) =
        train_probe(kind, train, val, &config.hyper, &config.probe).map_err(|e| format!("training: {e}"))?;
    let scores = score(&probe, test).map_err(|e| format!("scoring: {e}"))?;
    evaluate(&scores, seed, hist.best_epoch)
}

fn mio_run(
    config: &ExperimentConfig,
    a: &[EmbeddingCorpus; 3],
    b: &[EmbeddingCorpus; 3],
    seed: Option<u64>,
) -> Result<SeedResult, String> {
    let pairs = |i: usize| align_pair(&a[i], &b[i]).map_err(|e| format!("alignment failed: {e}"));
    let train = pairs(0)?;
    let val = if a[1].is_empty() { Vec::new() } else { pairs(1)? };
    let test = pairs(2)?;
    let (model, hist) = train_mio(&train, &val, &config.hyper, &config.mio).map_err(|e| format!("training: {e}"))?;
    let scores = score_mio(&model, &test).map_err(|e| format!("scoring: {e}"))?;
    evaluate(&scores, seed, hist.best_epoch)
}

fn fit_train_pca(
    train: &EmbeddingCorpus,
    k: usize,
    label: &str,
    warnings: &mut Vec<String>,
) -> Result<PcaTransform, String> {
    let pca = fit_pca(train, k).map_err(|e| format!("PCA on {label}: {e}"))?;
    warnings.extend(pca.warnings().into_iter().map(|w| format!("{label}: {w}")));
    Ok(pca)
}

fn project(pca: &PcaTransform, c: &EmbeddingCorpus) -> Result<EmbeddingCorpus, String> {
    pca.apply(c).map_err(|e| format!("PCA projection of {}: {e}", c.name()))
}

/// Runs one unsplit corpus through the re-split protocol: one
/// train/evaluate pass per split seed. The row EER is the mean.
pub fn run_itw_protocol(
    corpus: &EmbeddingCorpus,
    kind: ProbeKind,
    config: &ExperimentConfig,
) -> Result<Vec<SeedResult>, HarnessError> {
    config
        .itw_seeds
        .iter()
        .map(|&seed| {
            let spec = config.split_spec(seed)?;
            let (train, val, test) = split_corpus(corpus, &spec).map_err(|e| HarnessError::Cell(e.to_string()))?;
            probe_run(config, kind, &train, &val, &test, Some(seed)).map_err(HarnessError::Cell)
        })
        .collect()
}

impl Job {
    fn execute(&self, ctx: &Context<'_>) -> (Vec<Result<Vec<SeedResult>, String>>, Vec<String>) {
        let config = ctx.config;
        let mut warnings = Vec::new();
        let results = match self {
            Job::Single { kind, dataset, ptm } => {
                let run = || -> Result<Vec<SeedResult>, String> {
                    ctx.seeds(dataset, ptm)?
                        .into_iter()
                        .map(|seed| {
                            let s = ctx.splits(dataset, ptm, seed.unwrap_or(0))?;
                            probe_run(config, *kind, &s.train, &s.val, &s.test, s.seed)
                        })
                        .collect()
                };
                vec![run()]
            }
            Job::Fusion { dataset, a, b } => {
                let run = || -> Result<Vec<SeedResult>, String> {
                    ctx.seeds(dataset, a)?
                        .into_iter()
                        .map(|seed| {
                            let s = ctx.pair_splits(dataset, a, b, seed.unwrap_or(0))?;
                            mio_run(config, &s.a, &s.b, s.seed)
                        })
                        .collect()
                };
                vec![run()]
            }
            Job::CrossSingle { source, ptm, targets } => {
                let k = config.pca_k.expect("validated");
                let seed = ctx.first_seed();
                let trained = (|| {
                    let s = ctx.splits(source, ptm, seed)?;
                    let pca = fit_train_pca(&s.train, k, &format!("{source}/{ptm}"), &mut warnings)?;
                    let train = project(&pca, &s.train)?;
                    let val = project(&pca, &s.val)?;
                    let (probe, hist) = train_probe(ProbeKind::Cnn, &train, &val, &config.hyper, &config.probe)
                        .map_err(|e| format!("training: {e}"))?;
                    Ok::<_, String>((pca, probe, hist.best_epoch, s.seed))
                })();
                match trained {
                    Err(e) => vec![Err(e); targets.len()],
                    Ok((pca, probe, best_epoch, source_seed)) => targets
                        .iter()
                        .map(|t| {
                            let ts = ctx.splits(t, ptm, seed)?;
                            let test = project(&pca, &ts.test)?;
                            let scores = score(&probe, &test).map_err(|e| format!("scoring: {e}"))?;
                            Ok(vec![evaluate(&scores, source_seed.or(ts.seed), best_epoch)?])
                        })
                        .collect(),
                }
            }
            Job::CrossMio { source, a, b, targets } => {
                let k = config.pca_k.expect("validated");
                let seed = ctx.first_seed();
                let trained = (|| {
                    let s = ctx.pair_splits(source, a, b, seed)?;
                    let pa = fit_train_pca(&s.a[0], k, &format!("{source}/{a}"), &mut warnings)?;
                    let pb = fit_train_pca(&s.b[0], k, &format!("{source}/{b}"), &mut warnings)?;
                    let pa_views = [project(&pa, &s.a[0])?, project(&pa, &s.a[1])?, project(&pa, &s.a[2])?];
                    let pb_views = [project(&pb, &s.b[0])?, project(&pb, &s.b[1])?, project(&pb, &s.b[2])?];
                    let train = align_pair(&pa_views[0], &pb_views[0]).map_err(|e| e.to_string())?;
                    let val = if pa_views[1].is_empty() {
                        Vec::new()
                    } else {
                        align_pair(&pa_views[1], &pb_views[1]).map_err(|e| e.to_string())?
                    };
                    let (model, hist) =
                        train_mio(&train, &val, &config.hyper, &config.mio).map_err(|e| format!("training: {e}"))?;
                    Ok::<_, String>((pa, pb, model, hist.best_epoch, s.seed))
                })();
                match trained {
                    Err(e) => vec![Err(e); targets.len()],
                    Ok((pa, pb, model, best_epoch, source_seed)) => targets
                        .iter()
                        .map(|t| {
                            let ts = ctx.pair_splits(t, a, b, seed)?;
                            let ta = project(&pa, &ts.a[2])?;
                            let tb = project(&pb, &ts.b[2])?;
                            let pairs = align_pair(&ta, &tb).map_err(|e| format!("alignment failed: {e}"))?;
                            let scores = score_mio(&model, &pairs).map_err(|e| format!("scoring: {e}"))?;
                            Ok(vec![evaluate(&scores, source_seed.or(ts.seed), best_epoch)?])
                        })
                        .collect(),
                }
            }
        };
        (results, warnings)
    }
}

/// Harness threads: the configured budget, capped by `MIO_WORKERS`.
pub fn worker_budget(config: &ExperimentConfig) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut n = config.workers.unwrap_or(available);
    if let Some(cap) = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        n = n.min(cap.max(1));
    }
    n.max(1)
}

fn blank_row(
    config: &ExperimentConfig,
    cell_id: String,
    model: &str,
    features: &[&str],
    train: &str,
    eval: &str,
) -> ReportRow {
    ReportRow {
        cell_id,
        model: model.to_string(),
        features: features.iter().map(|s| s.to_string()).collect(),
        train_dataset: train.to_string(),
        eval_dataset: eval.to_string(),
        pca_k: if config.mode == Mode::CrossCorpus {
            config.pca_k
        } else {
            None
        },
        status: RowStatus::Failed,
        eer: None,
        threshold: None,
        seed_count: 0,
        per_seed: Vec::new(),
        error: None,
        provenance: RowProvenance {
            config_hash: config.config_hash().to_string(),
            shuffle_seed: config.hyper.shuffle_seed,
            init_seed: config.hyper.init_seed,
            split_seeds: Vec::new(),
        },
    }
}

fn single_cell(config: &ExperimentConfig, kind: ProbeKind, prefix: &str, dataset: &str, ptm: &str) -> Cell {
    Cell {
        job: Job::Single {
            kind,
            dataset: dataset.into(),
            ptm: ptm.into(),
        },
        rows: vec![blank_row(
            config,
            format!("{prefix}/{dataset}/{ptm}"),
            kind.as_str(),
            &[ptm],
            dataset,
            dataset,
        )],
    }
}

fn fusion_pairs(config: &ExperimentConfig) -> Vec<(&str, &str)> {
    config.pair_list.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect()
}

fn plan(config: &ExperimentConfig) -> Vec<Cell> {
    let datasets = config.datasets();
    let mut cells = Vec::new();
    match config.mode {
        Mode::SingleFcn | Mode::SingleCnn => {
            let kind = config.mode.probe_kind();
            for ptm in config.ptms() {
                for d in &datasets {
                    cells.push(single_cell(config, kind, config.mode.as_str(), d, &ptm));
                }
            }
        }
        Mode::FusionGrid => {
            for (a, b) in fusion_pairs(config) {
                for d in &datasets {
                    cells.push(Cell {
                        job: Job::Fusion {
                            dataset: d.clone(),
                            a: a.into(),
                            b: b.into(),
                        },
                        rows: vec![blank_row(
                            config,
                            format!("fusion_grid/{d}/{a}+{b}"),
                            "mio",
                            &[a, b],
                            d,
                            d,
                        )],
                    });
                }
            }
            if config.fusion_baselines {
                let mut ptms: Vec<&str> = Vec::new();
                for (a, b) in fusion_pairs(config) {
                    for p in [a, b] {
                        if !ptms.contains(&p) {
                            ptms.push(p);
                        }
                    }
                }
                for p in ptms {
                    for d in &datasets {
                        cells.push(single_cell(config, ProbeKind::Cnn, "baseline", d, p));
                    }
                }
            }
        }
        Mode::CrossCorpus => {
            let k = config.pca_k.unwrap_or(0);
            let targets_of = |s: &str| -> Vec<String> { datasets.iter().filter(|t| *t != s).cloned().collect() };
            for ptm in config.ptms() {
                for s in &datasets {
                    let targets = targets_of(s);
                    let rows = targets
                        .iter()
                        .map(|t| {
                            blank_row(
                                config,
                                format!("cross_corpus/pca{k}/{s}->{t}/{ptm}"),
                                "cnn",
                                &[&ptm],
                                s,
                                t,
                            )
                        })
                        .collect();
                    cells.push(Cell {
                        job: Job::CrossSingle {
                            source: s.clone(),
                            ptm: ptm.clone(),
                            targets,
                        },
                        rows,
                    });
                }
            }
            for (a, b) in fusion_pairs(config) {
                for s in &datasets {
                    let targets = targets_of(s);
                    let rows = targets
                        .iter()
                        .map(|t| {
                            blank_row(
                                config,
                                format!("cross_corpus/pca{k}/{s}->{t}/{a}+{b}"),
                                "mio",
                                &[a, b],
                                s,
                                t,
                            )
                        })
                        .collect();
                    cells.push(Cell {
                        job: Job::CrossMio {
                            source: s.clone(),
                            a: a.into(),
                            b: b.into(),
                            targets,
                        },
                        rows,
                    });
                }
            }
        }
    }
    cells
}

fn referenced(config: &ExperimentConfig) -> Vec<(String, String)> {
    let mut ptms = match config.mode {
        Mode::FusionGrid => Vec::new(),
        _ => config.ptms(),
    };
    for (a, b) in &config.pair_list {
        for p in [a, b] {
            if !ptms.contains(p) {
                ptms.push(p.clone());
            }
        }
    }
    let mut out = Vec::new();
    for d in config.datasets() {
        for p in &ptms {
            out.push((d.clone(), p.clone()));
        }
    }
    out
}

fn execute(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    config.validate()?;
    let wanted = referenced(config);
    let (ctx, mut warnings) = Context::load(config, &wanted);
    if config.mode == Mode::CrossCorpus {
        let k = config.pca_k.expect("validated");
        for (dataset, ptm) in &wanted {
            let Some(paths) = config.entry(dataset, ptm) else {
                continue;
            };
            for p in paths.paths() {
                if let Ok(c) = ctx.corpus(p) {
                    if k > c.dim() {
                        return Err(HarnessError::PcaK {
                            k,
                            dataset: dataset.clone(),
                            ptm: ptm.clone(),
                            dim: c.dim(),
                        });
                    }
                }
            }
        }
    }
    let cells = plan(config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_budget(config))
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| cells.par_iter().map(|c| c.job.execute(&ctx)).collect());
    let mut rows = Vec::new();
    for (cell, (results, cell_warnings)) in cells.into_iter().zip(outcomes) {
        warnings.extend(cell_warnings);
        for (mut row, result) in cell.rows.into_iter().zip(results) {
            row.fill(result);
            rows.push(row);
        }
    }
    Ok(Report {
        provenance: Provenance {
            config_hash: config.config_hash().to_string(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            mode: config.mode,
            split_fractions: config.split_fractions,
            itw_seeds: config.itw_seeds.clone(),
            shuffle_seed: config.hyper.shuffle_seed,
            init_seed: config.hyper.init_seed,
            pca_k: if config.mode == Mode::CrossCorpus {
                config.pca_k
            } else {
                None
            },
            pca_fit_scope: (config.mode == Mode::CrossCorpus).then(|| "train-only".to_string()),
        },
        rows,
        warnings,
    })
}

fn expect_mode(config: &ExperimentConfig, ok: &[Mode]) -> Result<(), HarnessError> {
    if ok.contains(&config.mode) {
        Ok(())
    } else {
        Err(HarnessError::Config(format!(
            "mode {} is not handled here",
            config.mode
        )))
    }
}

/// One probe per (PTM, dataset) cell.
pub fn run_single(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    expect_mode(config, &[Mode::SingleFcn, Mode::SingleCnn])?;
    execute(config)
}

/// One MiO model per (pair, dataset) cell, plus single-probe baselines.
pub fn run_fusion_grid(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    expect_mode(config, &[Mode::FusionGrid])?;
    execute(config)
}

/// Train on each dataset, evaluate on every other, with PCA fit on the
/// source training split only.
pub fn run_cross_corpus(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    expect_mode(config, &[Mode::CrossCorpus])?;
    execute(config)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Report, HarnessError> {
    execute(config)
}

/// Writes every rendering named in `outputs`.
pub fn write_outputs(report: &Report, outputs: &OutputPaths) -> Result<(), HarnessError> {
    for (path, format) in [
        (&outputs.markdown, ReportFormat::Markdown),
        (&outputs.csv, ReportFormat::Csv),
        (&outputs.json, ReportFormat::Json),
    ] {
        if let Some(path) = path {
            let text = render_report(report, format)?;
            std::fs::write(path, text).map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
    }
    Ok(())
}
