mod common;

use std::path::Path;

use common::*;
use indexmap::IndexMap;
use miobench::checkpoint::{encode_checkpoint, Checkpoint, CheckpointModel};
use miobench::corpus::{
    encode_corpus, split_corpus, synthesize_complementary_pair, synthesize_corpus, EmbeddingCorpus, EmbeddingRecord,
    SplitSpec,
};
use miobench::fusion::MioArch;
use miobench::harness::{
    parse_report_json, render_report, run_cross_corpus, run_experiment, run_fusion_grid, run_itw_protocol, run_single,
    CorpusPaths, ExperimentConfig, HarnessError, Mode, ReportFormat, RowStatus, CSV_HEADER, REPORT_SCHEMA,
};
use miobench::metrics::compute_eer;
use miobench::probes::{score, train_probe, ProbeArch, ProbeKind};
use miobench::train::TrainingHyper;

fn hyper() -> TrainingHyper {
    TrainingHyper {
        epochs: 6,
        ..TrainingHyper::default()
    }
}

fn probe_arch() -> ProbeArch {
    ProbeArch {
        hidden: 16,
        filters: 4,
        kernel: 3,
        pool: 2,
    }
}

fn mio_arch() -> MioArch {
    MioArch {
        filters: 4,
        kernel: 3,
        pool: 2,
        projection_dim: 8,
        head_hidden: 16,
    }
}

/// Writes train/val/test files for a corpus and returns their paths.
fn split_files(dir: &Path, tag: &str, c: &EmbeddingCorpus, seed: u64) -> CorpusPaths {
    let (train, val, test) = split_corpus(c, &SplitSpec::seventy_ten_twenty(seed)).unwrap();
    CorpusPaths::split(
        write(dir, &format!("{tag}.train.mioe"), &train),
        write(dir, &format!("{tag}.val.mioe"), &val),
        write(dir, &format!("{tag}.test.mioe"), &test),
    )
}

fn config(mode: Mode, corpora: IndexMap<String, IndexMap<String, CorpusPaths>>) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(mode, corpora);
    c.hyper = hyper();
    c.probe = probe_arch();
    c.mio = mio_arch();
    c.itw_seeds = vec![1, 2];
    c.workers = Some(1);
    c.rehash();
    c
}

fn entry(pairs: Vec<(&str, CorpusPaths)>) -> IndexMap<String, CorpusPaths> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn schema_valid(json: &str) {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    let instance: serde_json::Value = serde_json::from_str(json).unwrap();
    let msgs: Vec<String> = match compiled.validate(&instance) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{e} at {}", e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "schema violations: {msgs:?}");
}

#[test]
fn library_pipeline_separates_and_is_reproducible() {
    let full = TrainingHyper::default();
    let c = synthesize_corpus(16, 200, 8.0, 7).unwrap();
    let (train, val, test) = split_corpus(&c, &SplitSpec::seventy_ten_twenty(1)).unwrap();
    for kind in [ProbeKind::Fcn, ProbeKind::Cnn] {
        let (probe, hist) = train_probe(kind, &train, &val, &full, &ProbeArch::default()).unwrap();
        let eer = compute_eer(&score(&probe, &test).unwrap()).unwrap().eer;
        assert!(eer <= 0.005, "{kind}: {eer}");
        let (again, _) = train_probe(kind, &train, &val, &full, &ProbeArch::default()).unwrap();
        let bytes = |p| {
            encode_checkpoint(&Checkpoint {
                hyper: full,
                model: CheckpointModel::from(p),
            })
        };
        assert_eq!(bytes(probe), bytes(again));
        assert!(hist.best_epoch < hist.epochs());
    }
}

#[test]
fn single_probe_grid_with_split_and_unsplit_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let asv = synthesize_corpus(12, 80, 6.0, 1).unwrap();
    let itw = synthesize_corpus(12, 80, 6.0, 2).unwrap();
    let mut corpora = IndexMap::new();
    corpora.insert(
        "ASV".to_string(),
        entry(vec![("wavlm-base", split_files(d, "asv", &asv, 3))]),
    );
    corpora.insert(
        "ITW".to_string(),
        entry(vec![("wavlm-base", CorpusPaths::unsplit(write(d, "itw.mioe", &itw)))]),
    );
    let cfg = config(Mode::SingleCnn, corpora);
    let report = run_single(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    let asv_row = report.row("single_cnn/ASV/wavlm-base").unwrap();
    assert_eq!(asv_row.seed_count, 1);
    assert!(asv_row.threshold.is_some());
    let itw_row = report.row("single_cnn/ITW/wavlm-base").unwrap();
    assert_eq!(itw_row.seed_count, 2);
    assert_eq!(itw_row.provenance.split_seeds, vec![1, 2]);
    assert!(itw_row.threshold.is_none());
    let mean = itw_row.per_seed.iter().map(|s| s.eer).sum::<f64>() / 2.0;
    assert_eq!(itw_row.eer, Some(mean));
    // The unsplit row equals the per-seed protocol run directly.
    let direct = run_itw_protocol(&itw, ProbeKind::Cnn, &cfg).unwrap();
    assert_eq!(direct, itw_row.per_seed);
    // Synthetic stand-ins keyed by a real PTM id trigger a width warning.
    assert!(report.warnings.iter().any(|w| w.contains("768")));
    let md = render_report(&report, ReportFormat::Markdown).unwrap();
    assert!(md.contains("| PTM | ASV | ITW |"));
    assert!(md.contains("| WavLM (Base) |"));
    assert!(md.contains("Per-seed EER (%)"));
    schema_valid(&render_report(&report, ReportFormat::Json).unwrap());
    assert!(matches!(run_fusion_grid(&cfg), Err(HarnessError::Config(_))));
}

#[test]
fn fusion_grid_isolates_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (a, b) = synthesize_complementary_pair(10, 60, 6.0, 4).unwrap();
    // Same records under different clip_ids: shares nothing with `a`.
    let renamed: Vec<EmbeddingRecord> = b
        .records()
        .iter()
        .map(|r| EmbeddingRecord::new(format!("other-{}", r.clip_id), r.label, r.vector.clone()))
        .collect();
    let disjoint = EmbeddingCorpus::new("disjoint", "synthetic-c", 10, b.split(), renamed).unwrap();
    let mut corpora = IndexMap::new();
    corpora.insert(
        "SYN".to_string(),
        entry(vec![
            ("xls-r", CorpusPaths::unsplit(write(d, "a.mioe", &a))),
            ("x-vector", CorpusPaths::unsplit(write(d, "b.mioe", &b))),
            ("whisper", CorpusPaths::unsplit(write(d, "c.mioe", &disjoint))),
        ]),
    );
    let mut cfg = config(Mode::FusionGrid, corpora);
    cfg.itw_seeds = vec![1];
    cfg.pair_list = vec![("xls-r".into(), "x-vector".into()), ("xls-r".into(), "whisper".into())];
    cfg.rehash();
    let report = run_fusion_grid(&cfg).unwrap();
    let ok = report.row("fusion_grid/SYN/xls-r+x-vector").unwrap();
    assert_eq!(ok.status, RowStatus::Ok, "{:?}", ok.error);
    let failed = report.row("fusion_grid/SYN/xls-r+whisper").unwrap();
    assert_eq!(failed.status, RowStatus::Failed);
    assert!(failed.error.as_deref().unwrap().contains("alignment"));
    // Baselines for every distinct PTM in the pairs.
    for p in ["xls-r", "x-vector", "whisper"] {
        assert!(report.row(&format!("baseline/SYN/{p}")).unwrap().is_ok());
    }
    let md = render_report(&report, ReportFormat::Markdown).unwrap();
    assert!(md.contains("| PTM Combinations | SYN |"));
    assert!(md.contains("| XLS-R + Whisper | FAILED(alignment failed"));
    assert!(md.contains("| XLS-R + x-vector | "));
    schema_valid(&render_report(&report, ReportFormat::Json).unwrap());
}

fn three_datasets(d: &Path, dim: usize) -> IndexMap<String, IndexMap<String, CorpusPaths>> {
    let mut corpora = IndexMap::new();
    for (i, name) in ["ASV", "D-C", "ITW"].iter().enumerate() {
        let c = synthesize_corpus(dim, 50, 5.0, 10 + i as u64).unwrap();
        let paths = if *name == "ITW" {
            CorpusPaths::unsplit(write(d, &format!("{name}.mioe"), &c))
        } else {
            split_files(d, name, &c, 1)
        };
        corpora.insert(name.to_string(), entry(vec![("mms", paths)]));
    }
    corpora
}

#[test]
fn cross_corpus_matrix_and_k_bound() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Mode::CrossCorpus, three_datasets(dir.path(), 8));
    cfg.pca_k = Some(4);
    cfg.rehash();
    let report = run_cross_corpus(&cfg).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!(report.rows.iter().all(|r| r.is_ok() && r.pca_k == Some(4)));
    assert!(report.rows.iter().all(|r| r.train_dataset != r.eval_dataset));
    assert_eq!(report.provenance.pca_fit_scope.as_deref(), Some("train-only"));
    let md = render_report(&report, ReportFormat::Markdown).unwrap();
    assert!(md.contains("| PTM | ASV Training → D-C | ASV Training → ITW | D-C Training → ASV |"));
    schema_valid(&render_report(&report, ReportFormat::Json).unwrap());

    cfg.pca_k = Some(9);
    cfg.rehash();
    assert!(matches!(
        run_cross_corpus(&cfg),
        Err(HarnessError::PcaK { k: 9, dim: 8, .. })
    ));
}

#[test]
fn reports_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Mode::SingleFcn, three_datasets(dir.path(), 6));
    cfg.itw_seeds = vec![1];
    cfg.rehash();
    let a = run_experiment(&cfg).unwrap();
    cfg.workers = Some(3);
    let b = run_experiment(&cfg).unwrap();
    for f in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
        assert_eq!(render_report(&a, f).unwrap(), render_report(&b, f).unwrap());
    }
    let json = render_report(&a, ReportFormat::Json).unwrap();
    assert_eq!(parse_report_json(&json).unwrap(), a);
    let csv_text = render_report(&a, ReportFormat::Csv).unwrap();
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        CSV_HEADER.to_vec()
    );
    for (rec, row) in reader.records().zip(&a.rows) {
        let rec = rec.unwrap();
        assert_eq!(&rec[0], row.cell_id);
        assert_eq!(rec[8].parse::<f64>().ok(), row.eer);
    }
}

#[test]
fn config_files_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let c = synthesize_corpus(6, 30, 6.0, 1).unwrap();
    std::fs::write(d.join("u.mioe"), encode_corpus(&c).unwrap()).unwrap();
    let text = r#"{
        "mode": "single_fcn",
        "corpora": {"ITW": {"whisper": {"unsplit": "u.mioe"}}},
        "itw_seeds": [3],
        "hyper": {"epochs": 3},
        "probe": {"hidden": 8},
        "outputs": {"markdown": "out/report.md", "json": "out/report.json"}
    }"#;
    std::fs::create_dir(d.join("out")).unwrap();
    std::fs::write(d.join("exp.json"), text).unwrap();
    let cfg = ExperimentConfig::from_file(d.join("exp.json")).unwrap();
    let report = run_experiment(&cfg).unwrap();
    miobench::harness::write_outputs(&report, &cfg.outputs).unwrap();
    let md = std::fs::read_to_string(d.join("out/report.md")).unwrap();
    assert!(md.contains(cfg.config_hash()));
    let json = std::fs::read_to_string(d.join("out/report.json")).unwrap();
    schema_valid(&json);
    assert_eq!(report.rows[0].provenance.split_seeds, vec![3]);
}
