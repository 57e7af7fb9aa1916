use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Mode;
use super::HarnessError;
use crate::ptm::display_name;

/// JSON Schema for the `json` rendering of a [`Report`].
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

/// One train/evaluate run of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedResult {
    /// Split seed for corpora re-split per seed; `None` for official splits.
    pub seed: Option<u64>,
    pub eer: f64,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowProvenance {
    pub config_hash: String,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    pub split_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub cell_id: String,
    /// `fcn`, `cnn` or `mio`.
    pub model: String,
    /// PTM ids: one for a probe, two for a fused pair.
    pub features: Vec<String>,
    pub train_dataset: String,
    pub eval_dataset: String,
    pub pca_k: Option<usize>,
    pub status: RowStatus,
    /// Mean over `per_seed`.
    pub eer: Option<f64>,
    /// Operating threshold; present only for single-run rows.
    #[serde(with = "opt_threshold_serde")]
    pub threshold: Option<f64>,
    pub seed_count: usize,
    pub per_seed: Vec<SeedResult>,
    pub error: Option<String>,
    pub provenance: RowProvenance,
}

impl ReportRow {
    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }

    /// `XLS-R` or `XLS-R + x-vector`.
    pub fn feature_label(&self) -> String {
        self.features
            .iter()
            .map(|f| display_name(f))
            .collect::<Vec<_>>()
            .join(" + ")
    }

    pub(crate) fn fill(&mut self, outcome: Result<Vec<SeedResult>, String>) {
        match outcome {
            Ok(runs) if !runs.is_empty() => {
                let mean = runs.iter().map(|r| r.eer).sum::<f64>() / runs.len() as f64;
                self.status = RowStatus::Ok;
                self.eer = Some(mean);
                self.threshold = (runs.len() == 1).then(|| runs[0].threshold);
                self.seed_count = runs.len();
                self.provenance.split_seeds = runs.iter().filter_map(|r| r.seed).collect();
                self.per_seed = runs;
                self.error = None;
            }
            Ok(_) => self.fail("no runs".into()),
            Err(reason) => self.fail(reason),
        }
    }

    fn fail(&mut self, reason: String) {
        self.status = RowStatus::Failed;
        self.eer = None;
        self.threshold = None;
        self.seed_count = 0;
        self.per_seed.clear();
        self.error = Some(reason);
    }

    fn cell_text(&self) -> String {
        match (self.status, self.eer) {
            (RowStatus::Ok, Some(eer)) => percent(eer),
            _ => format!(
                "FAILED({})",
                escape_cell(self.error.as_deref().unwrap_or("unknown error"))
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub engine_version: String,
    pub mode: Mode,
    pub split_fractions: [f64; 3],
    pub itw_seeds: Vec<u64>,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    pub pca_k: Option<usize>,
    /// `train-only` whenever PCA is fit.
    pub pca_fit_scope: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub provenance: Provenance,
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn row(&self, cell_id: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.cell_id == cell_id)
    }

    pub fn failed_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.is_ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!(
                "unknown report format {other:?} (expected markdown, csv or json)"
            )),
        }
    }
}

/// A published number shown for comparison; never recomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceResult {
    pub dataset: &'static str,
    pub model: &'static str,
    pub eer_percent: f64,
}

pub const REFERENCE_RESULTS: [ReferenceResult; 3] = [
    ReferenceResult {
        dataset: "ASV",
        model: "MiO (XLS-R + x-vector)",
        eer_percent: 0.41,
    },
    ReferenceResult {
        dataset: "ITW",
        model: "MiO (XLS-R + x-vector)",
        eer_percent: 0.07,
    },
    ReferenceResult {
        dataset: "D-E",
        model: "MiO (XLS-R + Whisper)",
        eer_percent: 0.04,
    },
];

pub fn render_report(report: &Report, format: ReportFormat) -> Result<String, HarnessError> {
    match format {
        ReportFormat::Markdown => Ok(render_markdown(report)),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| HarnessError::Render(e.to_string())),
    }
}

pub fn parse_report_json(text: &str) -> Result<Report, HarnessError> {
    serde_json::from_str(text).map_err(|e| HarnessError::Render(format!("report JSON: {e}")))
}

fn percent(eer: f64) -> String {
    format!("{:.2}", eer * 100.0)
}

fn escape_cell(s: &str) -> String {
    s.replace('|', "\\|").replace(['\n', '\r'], " ")
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// Feature-by-column table; `column` maps a row to its column label.
fn grid(out: &mut String, corner: &str, rows: &[&ReportRow], column: impl Fn(&ReportRow) -> String) {
    let labels: Vec<String> = rows.iter().map(|r| r.feature_label()).collect();
    let columns: Vec<String> = rows.iter().map(|r| column(r)).collect();
    let label_order = first_seen(labels.iter().map(String::as_str));
    let column_order = first_seen(columns.iter().map(String::as_str));
    let _ = write!(out, "| {corner} |");
    for c in &column_order {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|");
    for _ in &column_order {
        out.push_str("---|");
    }
    out.push('\n');
    for label in &label_order {
        let _ = write!(out, "| {label} |");
        for c in &column_order {
            let cell = rows
                .iter()
                .zip(labels.iter().zip(&columns))
                .find(|(_, (l, col))| l == label && col == c)
                .map_or_else(|| "n/a".to_string(), |(r, _)| r.cell_text());
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out.push('\n');
}

fn per_seed_table(out: &mut String, rows: &[&ReportRow]) {
    let multi: Vec<&&ReportRow> = rows.iter().filter(|r| r.seed_count > 1).collect();
    if multi.is_empty() {
        return;
    }
    out.push_str(
        "### Per-seed EER (%)\n\n| Features | Dataset | Model | Per-seed EER (%) | Mean |\n|---|---|---|---|---|\n",
    );
    for r in multi {
        let seeds = r
            .per_seed
            .iter()
            .map(|s| match s.seed {
                Some(seed) => format!("{seed}: {}", percent(s.eer)),
                None => percent(s.eer),
            })
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(
            out,
            "| {} | {} | {} | {seeds} | {} |",
            r.feature_label(),
            r.eval_dataset,
            r.model.to_uppercase(),
            r.cell_text()
        );
    }
    out.push('\n');
}

fn render_markdown(report: &Report) -> String {
    let p = &report.provenance;
    let mut out = String::new();
    let by_model = |m: &str| -> Vec<&ReportRow> { report.rows.iter().filter(|r| r.model == m).collect() };
    match p.mode {
        Mode::SingleFcn | Mode::SingleCnn => {
            let model = if p.mode == Mode::SingleFcn { "fcn" } else { "cnn" };
            let rows = by_model(model);
            let _ = writeln!(out, "## EER (%) scores for {} models\n", model.to_uppercase());
            grid(&mut out, "PTM", &rows, |r| r.eval_dataset.clone());
            per_seed_table(&mut out, &rows);
        }
        Mode::FusionGrid => {
            let fused = by_model("mio");
            out.push_str("## EER (%) scores for MiO fusion\n\n");
            grid(&mut out, "PTM Combinations", &fused, |r| r.eval_dataset.clone());
            per_seed_table(&mut out, &fused);
            let baselines = by_model("cnn");
            if !baselines.is_empty() {
                out.push_str("## Single-representation CNN baselines, EER (%)\n\n");
                grid(&mut out, "PTM", &baselines, |r| r.eval_dataset.clone());
                per_seed_table(&mut out, &baselines);
            }
        }
        Mode::CrossCorpus => {
            let k = p.pca_k.map_or_else(|| "?".into(), |k| k.to_string());
            let col = |r: &ReportRow| format!("{} Training → {}", r.train_dataset, r.eval_dataset);
            let _ = writeln!(out, "## Cross-corpus EER (%), CNN probes on PCA-{k} features\n");
            grid(&mut out, "PTM", &by_model("cnn"), col);
            let fused = by_model("mio");
            if !fused.is_empty() {
                let _ = writeln!(out, "## Cross-corpus EER (%), MiO on PCA-{k} features\n");
                grid(&mut out, "Model", &fused, col);
            }
        }
    }
    out.push_str("## Reference results\n\n| Dataset | Model | EER (%) | Note |\n|---|---|---|---|\n");
    for r in REFERENCE_RESULTS {
        let mark = if r.dataset == "D-E" { " [^de]" } else { "" };
        let _ = writeln!(
            out,
            "| {} | {} | {:.2}{mark} | paper-reported, not recomputed |",
            r.dataset, r.model, r.eer_percent
        );
    }
    out.push_str(
        "\n[^de]: The published fusion grid lists 0.05 for this pair on D-E; the published \
         comparison against prior systems lists 0.04. The comparison value is shown.\n\n",
    );
    out.push_str("## Provenance\n\n");
    let _ = writeln!(out, "- config hash: `{}`", p.config_hash);
    let _ = writeln!(out, "- engine version: {}", p.engine_version);
    let _ = writeln!(out, "- mode: {}", p.mode);
    let _ = writeln!(
        out,
        "- split fractions (unsplit corpora): {}/{}/{}",
        p.split_fractions[0], p.split_fractions[1], p.split_fractions[2]
    );
    let seeds = p.itw_seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
    let _ = writeln!(out, "- split seeds (unsplit corpora): {seeds}");
    let _ = writeln!(out, "- shuffle seed: {}, init seed: {}", p.shuffle_seed, p.init_seed);
    if let (Some(k), Some(scope)) = (p.pca_k, &p.pca_fit_scope) {
        let _ = writeln!(out, "- PCA: k = {k}, fit scope: {scope}");
    }
    out.push_str(
        "- EER: thresholds at every unique score plus +inf; a clip is flagged spoof when \
         its score is at or above the threshold; the point minimizing |FPR - FNR| is \
         reported as (FPR + FNR) / 2.\n",
    );
    if !report.warnings.is_empty() {
        out.push_str("\n## Warnings\n\n");
        for w in &report.warnings {
            let _ = writeln!(out, "- {}", escape_cell(w));
        }
    }
    out
}

pub const CSV_HEADER: [&str; 16] = [
    "cell_id",
    "mode",
    "model",
    "features",
    "train_dataset",
    "eval_dataset",
    "pca_k",
    "status",
    "eer",
    "threshold",
    "seed_count",
    "per_seed_eer",
    "error",
    "config_hash",
    "shuffle_seed",
    "init_seed",
];

fn render_csv(report: &Report) -> Result<String, HarnessError> {
    let err = |e: csv::Error| HarnessError::Render(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in &report.rows {
        let per_seed = r
            .per_seed
            .iter()
            .map(|s| match s.seed {
                Some(seed) => format!("{seed}:{}", s.eer),
                None => s.eer.to_string(),
            })
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            r.cell_id.clone(),
            report.provenance.mode.to_string(),
            r.model.clone(),
            r.features.join("+"),
            r.train_dataset.clone(),
            r.eval_dataset.clone(),
            r.pca_k.map(|k| k.to_string()).unwrap_or_default(),
            if r.is_ok() { "ok" } else { "failed" }.to_string(),
            r.eer.map(|e| e.to_string()).unwrap_or_default(),
            r.threshold.map(|t| t.to_string()).unwrap_or_default(),
            r.seed_count.to_string(),
            per_seed,
            r.error.clone().unwrap_or_default(),
            r.provenance.config_hash.clone(),
            r.provenance.shuffle_seed.to_string(),
            r.provenance.init_seed.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Render(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Render(e.to_string()))
}

/// Finite thresholds as numbers, the +inf sentinel as the string `"inf"`.
mod threshold_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_finite() {
            s.serialize_f64(*t)
        } else if *t > 0.0 {
            s.serialize_str("inf")
        } else {
            Err(serde::ser::Error::custom("threshold must be finite or +inf"))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!("invalid threshold {t:?}"))),
        }
    }
}

mod opt_threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::threshold_serde")] f64);

    pub fn serialize<S: Serializer>(t: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        t.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(features: &[&str], dataset: &str, eer: Result<f64, &str>) -> ReportRow {
        let mut r = ReportRow {
            cell_id: format!("{}/{dataset}", features.join("+")),
            model: if features.len() == 2 { "mio" } else { "cnn" }.into(),
            features: features.iter().map(|s| s.to_string()).collect(),
            train_dataset: dataset.into(),
            eval_dataset: dataset.into(),
            pca_k: None,
            status: RowStatus::Failed,
            eer: None,
            threshold: None,
            seed_count: 0,
            per_seed: Vec::new(),
            error: None,
            provenance: RowProvenance {
                config_hash: "h".into(),
                shuffle_seed: 0,
                init_seed: 0,
                split_seeds: Vec::new(),
            },
        };
        r.fill(
            eer.map(|e| {
                vec![SeedResult {
                    seed: None,
                    eer: e,
                    threshold: f64::INFINITY,
                    best_epoch: 3,
                }]
            })
            .map_err(str::to_string),
        );
        r
    }

    fn report(mode: Mode, rows: Vec<ReportRow>) -> Report {
        Report {
            provenance: Provenance {
                config_hash: "h".into(),
                engine_version: "0".into(),
                mode,
                split_fractions: [0.7, 0.1, 0.2],
                itw_seeds: vec![1, 2],
                shuffle_seed: 0,
                init_seed: 0,
                pca_k: None,
                pca_fit_scope: None,
            },
            rows,
            warnings: vec!["w|1".into()],
        }
    }

    #[test]
    fn markdown_grid_and_failures() {
        let rep = report(
            Mode::FusionGrid,
            vec![
                row(&["xls-r", "x-vector"], "ASV", Ok(0.0041)),
                row(&["xls-r", "x-vector"], "ITW", Err("disjoint | ids")),
                row(&["xls-r"], "ASV", Ok(0.25)),
            ],
        );
        let md = render_report(&rep, ReportFormat::Markdown).unwrap();
        assert!(md.contains("| PTM Combinations | ASV | ITW |"));
        assert!(md.contains("| XLS-R + x-vector | 0.41 | FAILED(disjoint \\| ids) |"));
        assert!(md.contains("| XLS-R | 25.00 |"));
        assert!(md.contains("paper-reported, not recomputed"));
        assert!(md.contains("config hash: `h`"));
        assert!(md.contains("- w\\|1"));
    }

    #[test]
    fn json_round_trip_keeps_infinite_threshold() {
        let rep = report(Mode::SingleCnn, vec![row(&["wavlm-base"], "ASV", Ok(0.5))]);
        let json = render_report(&rep, ReportFormat::Json).unwrap();
        assert!(json.contains("\"threshold\": \"inf\""));
        assert_eq!(parse_report_json(&json).unwrap(), rep);
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let rep = report(Mode::SingleFcn, vec![row(&["whisper"], "D-C", Ok(1.0 / 3.0))]);
        let csv = render_report(&rep, ReportFormat::Csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields[8].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(fields[9], "inf");
    }

    #[test]
    fn format_parsing() {
        assert_eq!("MD".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
