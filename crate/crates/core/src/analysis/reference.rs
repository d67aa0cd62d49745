use std::collections::BTreeMap;

use crate::trainer::TransferRecord;

const TABLE: &str = include_str!("../../data/transfer_reference.csv");

pub const REFERENCE_LANGUAGES: [&str; 4] = ["en", "da", "is", "no"];

/// One reference row: training sequence and the losses it reports.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceRow {
    pub model: String,
    pub sequence: String,
    pub losses: BTreeMap<String, f64>,
}

/// Reference final test losses of every sequence and model size, in table
/// order. Cells the table leaves blank are absent.
pub fn reference_rows() -> Vec<ReferenceRow> {
    let mut lines = TABLE.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let losses = header[2..]
                .iter()
                .zip(&cells[2..])
                .filter(|(_, v)| **v != "-")
                .map(|(k, v)| (k.to_string(), v.parse::<f64>().expect("numeric cell")))
                .collect();
            ReferenceRow {
                model: cells[0].into(),
                sequence: cells[1].into(),
                losses,
            }
        })
        .collect()
}

pub fn reference_models() -> Vec<String> {
    let mut models: Vec<String> = Vec::new();
    for r in reference_rows() {
        if !models.contains(&r.model) {
            models.push(r.model);
        }
    }
    models
}

/// The reference losses of `model` as stage records: a sequence `a-b-c`
/// becomes three stages whose losses are the rows `a`, `a-b` and `a-b-c`.
pub fn reference_records(model: &str) -> Vec<TransferRecord> {
    let rows: Vec<ReferenceRow> = reference_rows().into_iter().filter(|r| r.model == model).collect();
    let by_seq: BTreeMap<&str, &ReferenceRow> = rows.iter().map(|r| (r.sequence.as_str(), r)).collect();
    let mut out = Vec::new();
    for r in &rows {
        let langs: Vec<&str> = r.sequence.split('-').collect();
        for k in 0..langs.len() {
            let prefix = langs[..=k].join("-");
            let Some(row) = by_seq.get(prefix.as_str()) else {
                continue;
            };
            out.push(TransferRecord {
                plan_id: r.sequence.clone(),
                stage_index: k,
                language: langs[k].into(),
                losses: row.losses.clone(),
            });
        }
    }
    out
}
