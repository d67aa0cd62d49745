use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorpusSpec, Dataset, Document, LanguageCorpus};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Line {
    text: String,
    #[serde(default)]
    lang: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

#[derive(Serialize)]
struct OutLine<'a> {
    text: &'a str,
    lang: &'a str,
    source: &'a str,
}

/// Streaming, order-preserving reader over one JSONL corpus file.
///
/// Documents without `lang` or `source` fields take the defaults given at
/// construction. Blank lines are skipped.
pub struct DocumentReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    default_lang: String,
    default_source: String,
}

impl DocumentReader {
    pub fn open(path: &Path, default_lang: &str, default_source: &str) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            lines: BufReader::new(file).lines(),
            line_no: 0,
            default_lang: default_lang.into(),
            default_source: default_source.into(),
        })
    }
}

impl Iterator for DocumentReader {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = match serde_json::from_str(&line) {
                Ok(p) => p,
                Err(e) => return Some(Err(Error::parse(&self.path, self.line_no, e.to_string()))),
            };
            if parsed.text.is_empty() {
                return Some(Err(Error::parse(&self.path, self.line_no, "empty \"text\" field")));
            }
            return Some(Ok(Document {
                text: parsed.text,
                lang: parsed.lang.unwrap_or_else(|| self.default_lang.clone()),
                source: parsed.source.unwrap_or_else(|| self.default_source.clone()),
            }));
        }
    }
}

pub fn read_jsonl(path: &Path, default_lang: &str, default_source: &str) -> Result<Vec<Document>> {
    DocumentReader::open(path, default_lang, default_source)?.collect()
}

/// A loaded language corpus plus the per-dataset document counts.
#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub corpus: LanguageCorpus,
    pub counts: Vec<(String, usize)>,
}

/// Reads every dataset of `spec` in order. Documents default to the spec's
/// language and to the dataset name as their source.
pub fn load_corpus(spec: &CorpusSpec) -> Result<LoadedCorpus> {
    let mut datasets = Vec::with_capacity(spec.datasets.len());
    let mut counts = Vec::with_capacity(spec.datasets.len());
    for ds in &spec.datasets {
        let documents = read_jsonl(&ds.path, &spec.language, &ds.name)?;
        counts.push((ds.name.clone(), documents.len()));
        datasets.push(Dataset {
            name: ds.name.clone(),
            weight: ds.weight,
            size: ds.size,
            documents,
        });
    }
    Ok(LoadedCorpus {
        corpus: LanguageCorpus {
            language: spec.language.clone(),
            datasets,
        },
        counts,
    })
}

pub fn write_jsonl<'a>(path: &Path, docs: impl IntoIterator<Item = &'a Document>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        let line = serde_json::to_string(&OutLine {
            text: &d.text,
            lang: &d.lang,
            source: &d.source,
        })
        .expect("document serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ground-truth sidecar: one `{"index", "true_lang"}` object per document.
pub fn write_truth_jsonl(path: &Path, truth: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (index, lang) in truth.iter().enumerate() {
        let line = serde_json::json!({ "index": index, "true_lang": lang });
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
