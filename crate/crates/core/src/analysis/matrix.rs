use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trainer::TransferRecord;

/// Whether every final record must carry every language.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    /// Missing languages are a data error.
    Complete,
    /// Missing languages render as `-`.
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixRow {
    pub plan_id: String,
    /// Final-stage test loss per column language.
    pub cells: Vec<Option<f64>>,
    /// Every stage's record, in stage order.
    pub stages: Vec<TransferRecord>,
}

/// Final-stage test losses, one row per plan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferMatrix {
    pub languages: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

/// Records grouped by plan in first-appearance order, each group sorted by
/// stage and checked for gaps.
pub fn group_by_plan(records: &[TransferRecord]) -> Result<Vec<(String, Vec<TransferRecord>)>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<TransferRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(&r.plan_id) {
            order.push(r.plan_id.clone());
        }
        groups.entry(r.plan_id.clone()).or_default().push(r.clone());
    }
    order
        .into_iter()
        .map(|id| {
            let mut g = groups.remove(&id).expect("grouped");
            g.sort_by_key(|r| r.stage_index);
            for (i, r) in g.iter().enumerate() {
                if r.stage_index != i {
                    return Err(Error::Data(format!(
                        "plan {id}: records jump to stage {} where stage {i} was expected",
                        r.stage_index
                    )));
                }
            }
            Ok((id, g))
        })
        .collect()
}

pub fn build_transfer_matrix(
    records: &[TransferRecord],
    languages: &[String],
    coverage: Coverage,
) -> Result<TransferMatrix> {
    let rows = group_by_plan(records)?
        .into_iter()
        .map(|(plan_id, stages)| {
            let last = stages.last().expect("non-empty group");
            let cells = languages
                .iter()
                .map(|l| match (last.losses.get(l), coverage) {
                    (Some(&v), _) if v.is_finite() => Ok(Some(v)),
                    (Some(&v), _) => Err(Error::Data(format!("plan {plan_id}: loss on {l} is {v}"))),
                    (None, Coverage::Partial) => Ok(None),
                    (None, Coverage::Complete) => {
                        Err(Error::Data(format!("plan {plan_id}: final record has no loss for {l}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MatrixRow { plan_id, cells, stages })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TransferMatrix {
        languages: languages.to_vec(),
        rows,
    })
}

impl TransferMatrix {
    pub fn get(&self, plan_id: &str, language: &str) -> Option<f64> {
        let c = self.languages.iter().position(|l| l == language)?;
        self.rows.iter().find(|r| r.plan_id == plan_id)?.cells[c]
    }

    /// `plan,<lang>...` with `decimals` digits and `-` for absent cells.
    pub fn to_csv(&self, decimals: usize) -> String {
        let mut s = String::from("plan");
        for l in &self.languages {
            write!(s, ",{l}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.plan_id);
            for c in &r.cells {
                match c {
                    Some(v) => write!(s, ",{v:.decimals$}").unwrap(),
                    None => s.push_str(",-"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Per-stage losses in long form: `plan,stage,trained,language,loss`.
    pub fn stages_csv(&self) -> String {
        let mut s = String::from("plan,stage,trained,language,loss\n");
        for r in &self.rows {
            for rec in &r.stages {
                for (l, v) in &rec.losses {
                    writeln!(s, "{},{},{},{l},{v}", r.plan_id, rec.stage_index, rec.language).unwrap();
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(plan: &str, stage: usize, lang: &str, losses: &[(&str, f64)]) -> TransferRecord {
        TransferRecord {
            plan_id: plan.into(),
            stage_index: stage,
            language: lang.into(),
            losses: losses.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn langs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_plan() {
        let r = vec![
            rec("a-b", 0, "a", &[("a", 2.0), ("b", 5.0)]),
            rec("a-b", 1, "b", &[("a", 2.5), ("b", 3.0)]),
        ];
        let m = build_transfer_matrix(&r, &langs(&["a", "b"]), Coverage::Complete).unwrap();
        assert_eq!(m.rows.len(), 1);
        assert_eq!(m.rows[0].cells, vec![Some(2.5), Some(3.0)]);
        assert_eq!(m.to_csv(2), "plan,a,b\na-b,2.50,3.00\n");
    }

    #[test]
    fn gaps_and_missing_columns() {
        let r = vec![rec("p", 0, "a", &[("a", 2.0)]), rec("p", 2, "a", &[("a", 2.0)])];
        assert!(matches!(
            build_transfer_matrix(&r, &langs(&["a"]), Coverage::Complete),
            Err(Error::Data(_))
        ));
        let r = vec![rec("p", 0, "a", &[("a", 2.0)])];
        assert!(matches!(
            build_transfer_matrix(&r, &langs(&["a", "b"]), Coverage::Complete),
            Err(Error::Data(_))
        ));
        let m = build_transfer_matrix(&r, &langs(&["a", "b"]), Coverage::Partial).unwrap();
        assert_eq!(m.to_csv(2), "plan,a,b\np,2.00,-\n");
    }
}
