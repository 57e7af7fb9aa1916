use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::corpus::SplitSpec;
use crate::fusion::MioArch;
use crate::probes::{ProbeArch, ProbeKind};
use crate::train::TrainingHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SingleFcn,
    SingleCnn,
    FusionGrid,
    CrossCorpus,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SingleFcn => "single_fcn",
            Mode::SingleCnn => "single_cnn",
            Mode::FusionGrid => "fusion_grid",
            Mode::CrossCorpus => "cross_corpus",
        }
    }

    /// Probe kind trained by the single-representation modes.
    pub fn probe_kind(self) -> ProbeKind {
        match self {
            Mode::SingleFcn => ProbeKind::Fcn,
            _ => ProbeKind::Cnn,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Files for one (dataset, PTM) entry: either an official three-way split
/// or a single unsplit corpus that is re-split per seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsplit: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
pub enum CorpusSource<'a> {
    Split {
        train: &'a Path,
        val: &'a Path,
        test: &'a Path,
    },
    Unsplit(&'a Path),
}

impl CorpusPaths {
    pub fn split(train: impl Into<PathBuf>, val: impl Into<PathBuf>, test: impl Into<PathBuf>) -> Self {
        Self {
            train: Some(train.into()),
            val: Some(val.into()),
            test: Some(test.into()),
            unsplit: None,
        }
    }

    pub fn unsplit(path: impl Into<PathBuf>) -> Self {
        Self {
            train: None,
            val: None,
            test: None,
            unsplit: Some(path.into()),
        }
    }

    pub fn source(&self) -> Result<CorpusSource<'_>, String> {
        match (&self.train, &self.val, &self.test, &self.unsplit) {
            (Some(train), Some(val), Some(test), None) => Ok(CorpusSource::Split { train, val, test }),
            (None, None, None, Some(path)) => Ok(CorpusSource::Unsplit(path)),
            _ => Err("give either all of train/val/test or only unsplit".into()),
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        [&self.train, &self.val, &self.test, &self.unsplit]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect()
    }

    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.train, &mut self.val, &mut self.test, &mut self.unsplit]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markdown: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

fn default_itw_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn default_fractions() -> [f64; 3] {
    [0.7, 0.1, 0.2]
}

fn default_true() -> bool {
    true
}

/// Declarative experiment description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// dataset id -> PTM id -> files, in table order.
    pub corpora: IndexMap<String, IndexMap<String, CorpusPaths>>,
    /// PTMs for single-representation rows; defaults to every PTM listed
    /// under `corpora`, first-seen order.
    #[serde(default)]
    pub ptm_list: Vec<String>,
    #[serde(default)]
    pub pair_list: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_k: Option<usize>,
    /// Split seeds for unsplit corpora; one train/evaluate run per seed.
    #[serde(default = "default_itw_seeds")]
    pub itw_seeds: Vec<u64>,
    #[serde(default = "default_fractions")]
    pub split_fractions: [f64; 3],
    #[serde(default)]
    pub hyper: TrainingHyper,
    #[serde(default)]
    pub probe: ProbeArch,
    #[serde(default)]
    pub mio: MioArch,
    /// Also train single CNN probes for every PTM of a fusion pair.
    #[serde(default = "default_true")]
    pub fusion_baselines: bool,
    #[serde(default)]
    pub outputs: OutputPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip)]
    config_hash: String,
}

impl ExperimentConfig {
    pub fn new(mode: Mode, corpora: IndexMap<String, IndexMap<String, CorpusPaths>>) -> Self {
        let mut c = Self {
            mode,
            corpora,
            ptm_list: Vec::new(),
            pair_list: Vec::new(),
            pca_k: None,
            itw_seeds: default_itw_seeds(),
            split_fractions: default_fractions(),
            hyper: TrainingHyper::default(),
            probe: ProbeArch::default(),
            mio: MioArch::default(),
            fusion_baselines: true,
            outputs: OutputPaths::default(),
            workers: None,
            config_hash: String::new(),
        };
        c.rehash();
        c
    }

    /// Parses JSON text; relative paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut c: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("config JSON: {e}")))?;
        c.rehash();
        for ptms in c.corpora.values_mut() {
            for paths in ptms.values_mut() {
                paths.resolve(base_dir);
            }
        }
        for p in [&mut c.outputs.markdown, &mut c.outputs.csv, &mut c.outputs.json]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base)
    }

    /// SHA-256 over the canonical JSON form, computed before path resolution
    /// so it does not depend on where the config file lives.
    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Recomputes the hash after programmatic edits.
    pub fn rehash(&mut self) {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        self.config_hash = hex::encode(Sha256::digest(&canonical));
    }

    pub fn split_spec(&self, seed: u64) -> Result<SplitSpec, HarnessError> {
        let [a, b, c] = self.split_fractions;
        SplitSpec::new(a, b, c, seed).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// `ptm_list`, or every PTM under `corpora` in first-seen order.
    pub fn ptms(&self) -> Vec<String> {
        if !self.ptm_list.is_empty() {
            return self.ptm_list.clone();
        }
        let mut out: Vec<String> = Vec::new();
        for ptms in self.corpora.values() {
            for ptm in ptms.keys() {
                if !out.contains(ptm) {
                    out.push(ptm.clone());
                }
            }
        }
        out
    }

    pub fn datasets(&self) -> Vec<String> {
        self.corpora.keys().cloned().collect()
    }

    pub fn entry(&self, dataset: &str, ptm: &str) -> Option<&CorpusPaths> {
        self.corpora.get(dataset)?.get(ptm)
    }

    /// Structural checks plus existence of every referenced file.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.corpora.is_empty() {
            return bad("corpora is empty".into());
        }
        self.hyper.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.probe
            .validate()
            .map_err(|e| HarnessError::Config(format!("probe: {e}")))?;
        self.mio
            .validate()
            .map_err(|e| HarnessError::Config(format!("mio: {e}")))?;
        self.split_spec(0)?;
        if self.itw_seeds.is_empty() {
            return bad("itw_seeds must list at least one seed".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        match self.mode {
            Mode::FusionGrid if self.pair_list.is_empty() => {
                return bad("fusion_grid needs a non-empty pair_list".into())
            }
            Mode::CrossCorpus => match self.pca_k {
                None | Some(0) => return bad("cross_corpus needs a positive pca_k".into()),
                Some(_) if self.corpora.len() < 2 => return bad("cross_corpus needs at least two datasets".into()),
                _ => {}
            },
            _ => {}
        }
        for (dataset, ptms) in &self.corpora {
            for (ptm, paths) in ptms {
                paths
                    .source()
                    .map_err(|m| HarnessError::Config(format!("corpora.{dataset}.{ptm}: {m}")))?;
                for p in paths.paths() {
                    if !p.is_file() {
                        return Err(HarnessError::MissingFile {
                            dataset: dataset.clone(),
                            ptm: ptm.clone(),
                            path: p.display().to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}
