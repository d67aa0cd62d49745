use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS: [&str; 4] = ["TDS", "SYN", "INV", "PHON"];

/// Symmetric language-pair similarity values per metric.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarityTable {
    values: BTreeMap<String, BTreeMap<(String, String), f64>>,
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.into(), b.into())
    } else {
        (b.into(), a.into())
    }
}

impl SimilarityTable {
    /// Adds a value, rejecting out-of-range values and conflicting duplicates.
    pub fn insert(&mut self, metric: &str, a: &str, b: &str, value: f64) -> Result<()> {
        if !METRICS.contains(&metric) {
            return Err(Error::Data(format!("unknown similarity metric {metric}")));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Data(format!("{metric}({a}, {b}) = {value} is outside [0, 1]")));
        }
        let slot = self.values.entry(metric.into()).or_default();
        match slot.get(&key(a, b)) {
            Some(&old) if old != value => Err(Error::Data(format!(
                "{metric}({a}, {b}) given as both {old} and {value}"
            ))),
            _ => {
                slot.insert(key(a, b), value);
                Ok(())
            }
        }
    }

    /// The stored value, 1 for a language with itself under a known metric,
    /// `None` otherwise.
    pub fn get(&self, metric: &str, a: &str, b: &str) -> Option<f64> {
        let m = self.values.get(metric)?;
        if a == b {
            return Some(1.0);
        }
        m.get(&key(a, b)).copied()
    }

    pub fn metrics(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Unordered pairs present for `metric`.
    pub fn pairs(&self, metric: &str) -> Vec<(String, String)> {
        self.values
            .get(metric)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }
}

/// Parses `metric,lang_a,lang_b,value` rows (header line required).
pub fn parse_feature_distances(text: &str, origin: &Path) -> Result<SimilarityTable> {
    let mut table = SimilarityTable::default();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "metric,lang_a,lang_b,value" => {}
        _ => return Err(Error::parse(origin, 1, "expected header metric,lang_a,lang_b,value")),
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 4 {
            return Err(Error::parse(origin, i + 1, "expected 4 cells"));
        }
        let v: f64 = cells[3]
            .parse()
            .map_err(|e| Error::parse(origin, i + 1, format!("{:?}: {e}", cells[3])))?;
        table.insert(cells[0], cells[1], cells[2], v)?;
    }
    Ok(table)
}

pub fn load_feature_distances(path: &Path) -> Result<SimilarityTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_distances(&text, path)
}

const SHIPPED: &str = include_str!("../../data/language_similarity.csv");

/// TDS and typological similarities of en, da, is and no (reference values).
pub fn shipped_language_similarity() -> SimilarityTable {
    parse_feature_distances(SHIPPED, Path::new("language_similarity.csv")).expect("shipped table parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_values() {
        let t = shipped_language_similarity();
        assert_eq!(t.get("SYN", "en", "is"), Some(0.21));
        assert_eq!(t.get("SYN", "is", "en"), Some(0.21));
        assert_eq!(t.get("INV", "da", "is"), Some(1.00));
        assert_eq!(t.get("TDS", "da", "no"), Some(0.92));
        assert_eq!(t.get("TDS", "en", "is"), Some(0.35));
        assert_eq!(t.get("SYN", "en", "sv"), None);
        assert_eq!(t.get("SYN", "en", "en"), Some(1.0));
        assert_eq!(t.pairs("PHON").len(), 6);
    }

    #[test]
    fn bad_rows() {
        let p = Path::new("x.csv");
        let r = parse_feature_distances("metric,lang_a,lang_b,value\nSYN,a,b,1.5\n", p);
        assert!(matches!(r, Err(Error::Data(_))));
        let r = parse_feature_distances("metric,lang_a,lang_b,value\nSYN,a,b,0.5\nSYN,b,a,0.6\n", p);
        assert!(matches!(r, Err(Error::Data(_))));
        let r = parse_feature_distances("metric,lang_a,lang_b,value\nSYN,a,b,0.5\nSYN,b,a,0.5\n", p);
        assert!(r.is_ok());
        let r = parse_feature_distances("metric,lang_a,lang_b,value\nSYN,a,b\n", p);
        assert!(matches!(r, Err(Error::Parse { line: 2, .. })));
    }
}
