use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::langid::LangIdModel;
use crate::error::{Error, Result};

/// Percentage of each corpus's documents assigned to each language.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContaminationMatrix {
    /// Corpus (row) names.
    pub rows: Vec<String>,
    /// Predicted-language (column) names.
    pub columns: Vec<String>,
    /// `percent[r][c]`.
    pub percent: Vec<Vec<f64>>,
}

impl ContaminationMatrix {
    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.columns.iter().position(|x| x == column)?;
        Some(self.percent[r][c])
    }

    /// CSV with a `corpus` header column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("corpus");
        for c in &self.columns {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (r, row) in self.rows.iter().zip(&self.percent) {
            s.push_str(r);
            for &v in row {
                write!(s, ",{}", format_percent(v)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty contamination table"))?;
        let columns: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        let mut percent = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != columns.len() + 1 {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("expected {} cells", columns.len() + 1),
                ));
            }
            rows.push(cells[0].to_string());
            percent.push(
                cells[1..]
                    .iter()
                    .map(|c| {
                        c.parse::<f64>()
                            .map_err(|e| Error::parse(origin, i + 1, format!("{c:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { rows, columns, percent })
    }
}

/// Two decimals, or four for non-zero values below 0.01.
pub fn format_percent(v: f64) -> String {
    if v != 0.0 && v.abs() < 0.01 {
        format!("{v:.4}")
    } else {
        format!("{v:.2}")
    }
}

/// Classifies every document of each corpus. Columns are the model's
/// languages, in model order.
pub fn contamination_matrix<S: AsRef<str>>(
    corpora: &[(String, Vec<S>)],
    model: &LangIdModel,
) -> Result<ContaminationMatrix> {
    let columns = model.languages.clone();
    let mut percent = Vec::with_capacity(corpora.len());
    for (name, docs) in corpora {
        if docs.is_empty() {
            return Err(Error::Input(format!("corpus {name} has no documents")));
        }
        let mut counts = vec![0usize; columns.len()];
        for d in docs {
            let (lang, _) = model.classify(d.as_ref());
            let c = columns
                .iter()
                .position(|x| *x == lang)
                .expect("model predicts its own languages");
            counts[c] += 1;
        }
        let n = docs.len() as f64;
        percent.push(counts.into_iter().map(|c| 100.0 * c as f64 / n).collect());
    }
    Ok(ContaminationMatrix {
        rows: corpora.iter().map(|(n, _)| n.clone()).collect(),
        columns,
        percent,
    })
}

const REFERENCE_CSV: &str = include_str!("../../data/contamination_reference.csv");

/// The reference contamination percentages of the four real corpora.
pub fn reference_contamination() -> ContaminationMatrix {
    ContaminationMatrix::from_csv(REFERENCE_CSV, Path::new("contamination_reference.csv"))
        .expect("shipped table parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting() {
        assert_eq!(format_percent(99.79), "99.79");
        assert_eq!(format_percent(0.0002), "0.0002");
        assert_eq!(format_percent(0.0), "0.00");
        assert_eq!(format_percent(5.0), "5.00");
    }

    #[test]
    fn reference_table() {
        let m = reference_contamination();
        assert_eq!(m.get("no", "en"), Some(3.16));
        assert_eq!(m.get("en", "is"), Some(0.0002));
        assert!(m.to_csv().contains("en,99.79,0.06,0.0002,0.05,0.08\n"));
        let back = ContaminationMatrix::from_csv(&m.to_csv(), Path::new("x")).unwrap();
        assert_eq!(back, m);
    }
}
