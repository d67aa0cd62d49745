//! Experiment manifest: one TOML file describing languages, tokenizer,
//! model, stage template, plans and metrics.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use langshift_core::bpe::MIN_VOCAB;
use langshift_core::corpus::{DatasetSpec, SyntheticLanguageSpec};
use langshift_core::model::ModelConfig;
use langshift_core::shiftmetrics::{LangIdConfig, SampleUnit};
use langshift_core::trainer::{LrSchedule, StageSpec, TrainOptions};
use serde::Deserialize;

/// A manifest problem, reported with the key it concerns.
#[derive(Debug)]
pub struct ValidationError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ValidationError {}

pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> ValidationError {
    ValidationError {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default)]
    seed: u64,
    out_dir: Option<PathBuf>,
    languages: Vec<RawLanguage>,
    tokenizer: TokenizerSection,
    model: ModelSection,
    stage: StageSection,
    plan: PlanSection,
    #[serde(default)]
    splits: SplitSection,
    #[serde(default)]
    train: TrainOptions,
    #[serde(default)]
    metrics: MetricsSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLanguage {
    name: String,
    synthetic: Option<toml::Table>,
    datasets: Option<Vec<DatasetSpec>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LanguageSource {
    Synthetic(SyntheticLanguageSpec),
    Datasets(Vec<DatasetSpec>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageEntry {
    pub name: String,
    pub source: LanguageSource,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TokenizerSection {
    pub vocab_size: usize,
    /// Languages whose documents train the tokenizer; all when absent.
    pub languages: Option<Vec<String>>,
    /// Cap on training documents taken from each language.
    pub max_documents: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: String,
    pub n_layers: Option<usize>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub seq_len: Option<usize>,
    pub tie_embeddings: Option<bool>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub steps: u64,
    pub batch_size: usize,
    pub max_lr: Option<f64>,
    pub min_lr: Option<f64>,
    pub warmup_steps: u64,
    pub tail_steps: u64,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum PlanModeSpec {
    Enumerate,
    Explicit,
    Joint,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub mode: PlanModeSpec,
    pub first: Option<String>,
    #[serde(default)]
    pub others: Vec<String>,
    /// Hyphen-joined orders for explicit mode, e.g. "en-da".
    #[serde(default)]
    pub sequences: Vec<String>,
    /// Add one single-language plan per language.
    #[serde(default = "yes")]
    pub monolingual_baselines: bool,
    /// Add the joint plan over every plan language.
    #[serde(default = "yes")]
    pub joint_baseline: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub val_documents: usize,
    pub test_documents: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            val_documents: 50,
            test_documents: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum TdsUnitSpec {
    Documents,
    Sequences,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub tds_samples: usize,
    pub tds_unit: TdsUnitSpec,
    pub langid: LangIdConfig,
    /// Similarity CSV (`metric,lang_a,lang_b,value`); the shipped table when absent.
    pub distances: Option<PathBuf>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            tds_samples: 1000,
            tds_unit: TdsUnitSpec::Documents,
            langid: LangIdConfig::default(),
            distances: None,
        }
    }
}

/// A parsed and validated manifest. Relative paths are resolved against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub languages: Vec<LanguageEntry>,
    pub tokenizer: TokenizerSection,
    pub model: ModelConfig,
    pub stage: StageSection,
    pub plan: PlanSection,
    pub splits: SplitSection,
    pub train: TrainOptions,
    pub metrics: MetricsSection,
}

impl Manifest {
    pub fn language_names(&self) -> Vec<String> {
        self.languages.iter().map(|l| l.name.clone()).collect()
    }

    pub fn stage_for(&self, language: &str) -> StageSpec {
        let preset = LrSchedule::for_preset(&self.model.preset, self.stage.warmup_steps, self.stage.tail_steps)
            .expect("preset checked when parsing");
        StageSpec {
            language: language.into(),
            steps: self.stage.steps,
            batch_size: self.stage.batch_size,
            schedule: LrSchedule {
                max_lr: self.stage.max_lr.unwrap_or(preset.max_lr),
                min_lr: self.stage.min_lr.unwrap_or(preset.min_lr),
                ..preset
            },
        }
    }

    pub fn tds_unit(&self) -> SampleUnit {
        match self.metrics.tds_unit {
            TdsUnitSpec::Documents => SampleUnit::Documents,
            TdsUnitSpec::Sequences => SampleUnit::Sequences {
                seq_len: self.model.seq_len,
            },
        }
    }

    /// Languages named by the plan section, first language first.
    pub fn plan_languages(&self) -> Vec<String> {
        match self.plan.mode {
            PlanModeSpec::Explicit => {
                let mut seen = Vec::new();
                for s in &self.plan.sequences {
                    for l in s.split('-') {
                        if !seen.iter().any(|x: &String| x == l) {
                            seen.push(l.to_string());
                        }
                    }
                }
                seen
            }
            _ => self.plan.first.iter().chain(&self.plan.others).cloned().collect(),
        }
    }
}

/// TOML errors already name the offending key; the line is added from the span.
fn toml_error(e: toml::de::Error, text: &str) -> ValidationError {
    let message = e.message().trim().to_string();
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            invalid(format!("line {line}"), message)
        }
        None => invalid("", message),
    }
}

pub fn parse_manifest(path: &Path) -> Result<Manifest, ValidationError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid("", format!("cannot read manifest {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest_str(&text, path, &base)
}

pub fn parse_manifest_str(text: &str, path: &Path, base: &Path) -> Result<Manifest, ValidationError> {
    let raw: RawManifest = toml::from_str(text).map_err(|e| toml_error(e, text))?;
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    if raw.languages.is_empty() {
        return Err(invalid("languages", "at least one language is required"));
    }
    let mut names = BTreeSet::new();
    let mut languages = Vec::new();
    for (i, l) in raw.languages.iter().enumerate() {
        let key = format!("languages[{i}]");
        if l.name.is_empty() || l.name.contains(['-', '+', ',', '/']) || l.name.contains(char::is_whitespace) {
            return Err(invalid(
                format!("{key}.name"),
                format!("invalid language name {:?}", l.name),
            ));
        }
        if !names.insert(l.name.clone()) {
            return Err(invalid(
                format!("{key}.name"),
                format!("duplicate language name {:?}", l.name),
            ));
        }
        let source = match (&l.synthetic, &l.datasets) {
            (Some(table), None) => {
                let mut table = table.clone();
                if table.contains_key("name") {
                    return Err(invalid(
                        format!("{key}.synthetic.name"),
                        "the name comes from the language entry",
                    ));
                }
                table.insert("name".into(), toml::Value::String(l.name.clone()));
                let spec: SyntheticLanguageSpec = toml::Value::Table(table)
                    .try_into()
                    .map_err(|e: toml::de::Error| invalid(format!("{key}.synthetic"), e.message().trim()))?;
                spec.validate()
                    .map_err(|e| invalid(format!("{key}.synthetic"), e.to_string()))?;
                for (field, other) in [("parent", &spec.parent), ("contaminant", &spec.contaminant)] {
                    if let Some(o) = other {
                        let earlier = raw.languages[..i].iter().any(|x| &x.name == o && x.synthetic.is_some());
                        if !earlier {
                            return Err(invalid(
                                format!("{key}.synthetic.{field}"),
                                format!("{o:?} must be a synthetic language listed earlier"),
                            ));
                        }
                    }
                }
                LanguageSource::Synthetic(spec)
            }
            (None, Some(ds)) => {
                if ds.is_empty() {
                    return Err(invalid(format!("{key}.datasets"), "at least one dataset is required"));
                }
                let mut out = Vec::new();
                for (j, d) in ds.iter().enumerate() {
                    let p = resolve(&d.path);
                    if !p.is_file() {
                        return Err(invalid(
                            format!("{key}.datasets[{j}].path"),
                            format!("{} does not exist", p.display()),
                        ));
                    }
                    out.push(DatasetSpec { path: p, ..d.clone() });
                }
                LanguageSource::Datasets(out)
            }
            _ => {
                return Err(invalid(key, "exactly one of `synthetic` or `datasets` is required"));
            }
        };
        languages.push(LanguageEntry {
            name: l.name.clone(),
            source,
        });
    }

    let known = |l: &str| names.contains(l);
    if raw.tokenizer.vocab_size <= MIN_VOCAB {
        return Err(invalid("tokenizer.vocab_size", format!("must exceed {MIN_VOCAB}")));
    }
    if let Some(ls) = &raw.tokenizer.languages {
        if let Some(bad) = ls.iter().find(|l| !known(l)) {
            return Err(invalid("tokenizer.languages", format!("unknown language {bad:?}")));
        }
    }

    let m = &raw.model;
    let mut model = ModelConfig::from_preset(&m.preset).map_err(|e| invalid("model.preset", e.to_string()))?;
    model.vocab_size = raw.tokenizer.vocab_size;
    model.n_layers = m.n_layers.unwrap_or(model.n_layers);
    model.d_model = m.d_model.unwrap_or(model.d_model);
    model.n_heads = m.n_heads.unwrap_or(model.n_heads);
    model.seq_len = m.seq_len.unwrap_or(model.seq_len);
    model.tie_embeddings = m.tie_embeddings.unwrap_or(model.tie_embeddings);
    model.validate().map_err(|e| invalid("model", e.to_string()))?;

    let st = &raw.stage;
    if st.steps == 0 {
        return Err(invalid("stage.steps", "must be positive"));
    }
    if st.batch_size == 0 {
        return Err(invalid("stage.batch_size", "must be positive"));
    }

    let p = &raw.plan;
    match p.mode {
        PlanModeSpec::Enumerate | PlanModeSpec::Joint => {
            let first = p
                .first
                .as_ref()
                .ok_or_else(|| invalid("plan.first", "required in this mode"))?;
            if !known(first) {
                return Err(invalid("plan.first", format!("unknown language {first:?}")));
            }
            if p.others.iter().any(|o| o == first) {
                return Err(invalid("plan.others", format!("contains the first language {first:?}")));
            }
            let mut seen = BTreeSet::new();
            for o in &p.others {
                if !known(o) {
                    return Err(invalid("plan.others", format!("unknown language {o:?}")));
                }
                if !seen.insert(o) {
                    return Err(invalid("plan.others", format!("{o:?} is listed twice")));
                }
            }
            if p.mode == PlanModeSpec::Enumerate && p.others.is_empty() {
                return Err(invalid(
                    "plan.others",
                    "enumerate mode needs at least one other language",
                ));
            }
            if !p.sequences.is_empty() {
                return Err(invalid("plan.sequences", "only used in explicit mode"));
            }
        }
        PlanModeSpec::Explicit => {
            if p.sequences.is_empty() {
                return Err(invalid("plan.sequences", "explicit mode needs at least one sequence"));
            }
            for s in &p.sequences {
                let parts: Vec<&str> = s.split('-').collect();
                if let Some(bad) = parts.iter().find(|l| !known(l)) {
                    return Err(invalid(
                        "plan.sequences",
                        format!("{s:?} names unknown language {bad:?}"),
                    ));
                }
            }
        }
    }

    let mut metrics = raw.metrics.clone();
    if metrics.tds_samples == 0 {
        return Err(invalid("metrics.tds_samples", "must be positive"));
    }
    metrics
        .langid
        .validate()
        .map_err(|e| invalid("metrics.langid", e.to_string()))?;
    if let Some(d) = &metrics.distances {
        let r = resolve(d);
        if !r.is_file() {
            return Err(invalid("metrics.distances", format!("{} does not exist", r.display())));
        }
        metrics.distances = Some(r);
    }

    let manifest = Manifest {
        path: path.to_path_buf(),
        seed: raw.seed,
        out_dir: raw.out_dir.as_deref().map(resolve),
        languages,
        tokenizer: raw.tokenizer,
        model,
        stage: raw.stage,
        plan: raw.plan,
        splits: raw.splits,
        train: raw.train,
        metrics,
    };
    let probe = manifest.stage_for("probe");
    probe.validate().map_err(|e| invalid("stage", e.to_string()))?;
    Ok(manifest)
}
