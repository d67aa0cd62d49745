use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::correlate::{correlate, Correlation, FactorTable, PairKey};
use super::matrix::{build_transfer_matrix, group_by_plan, Coverage, TransferMatrix};
use super::svg::{render_svg, Panel, Series, SeriesKind};
use super::transfer::{
    backward_series, cumulative_loss, forgetting_tradeoff, forward_transfer, pairwise_backward_deltas, ForgettingPoint,
    ForwardPoint,
};
use crate::error::{Error, Result};
use crate::shiftmetrics::{format_percent, ContaminationMatrix};
use crate::trainer::TransferRecord;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BackwardSeries {
    pub plan_id: String,
    pub language: String,
    /// `(suffix length, loss)`.
    pub points: Vec<(usize, f64)>,
}

/// All derived tables of an experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub matrix: Option<TransferMatrix>,
    pub forward: BTreeMap<String, Vec<ForwardPoint>>,
    pub backward: Vec<BackwardSeries>,
    pub cumulative: BTreeMap<String, f64>,
    pub forgetting: Vec<ForgettingPoint>,
    pub deltas: Vec<(PairKey, f64)>,
    pub correlations: Vec<Correlation>,
    pub contamination: Option<ContaminationMatrix>,
    /// Digits in `transfer_matrix.csv`; 4 when unset.
    pub matrix_decimals: Option<usize>,
}

/// Derives every table from `records`. Single-stage plans on one experiment
/// language serve as monolingual baselines; plans that train anything else
/// (e.g. joint mixtures) only enter the matrix and cumulative loss.
pub fn build_report(
    records: &[TransferRecord],
    languages: &[String],
    coverage: Coverage,
    factors: Option<&FactorTable>,
) -> Result<Report> {
    if records.is_empty() {
        return Ok(Report::default());
    }
    let groups = group_by_plan(records)?;
    let matrix = build_transfer_matrix(records, languages, coverage)?;
    let cumulative = cumulative_loss(records)?;
    let sequential: Vec<&(String, Vec<TransferRecord>)> = groups
        .iter()
        .filter(|(_, st)| st.iter().all(|r| languages.contains(&r.language)))
        .collect();
    let baselines: Vec<TransferRecord> = sequential
        .iter()
        .filter(|(_, st)| st.len() == 1)
        .map(|(_, st)| st[0].clone())
        .collect();
    let staged: Vec<TransferRecord> = sequential
        .iter()
        .filter(|(_, st)| st.len() > 1)
        .flat_map(|(_, st)| st.iter().cloned())
        .collect();
    let forward = if baselines.is_empty() {
        BTreeMap::new()
    } else {
        forward_transfer(&staged, &baselines)?
    };
    let mut backward = Vec::new();
    for (id, st) in &sequential {
        let mut seen = Vec::new();
        for r in st.iter() {
            if seen.contains(&r.language) {
                continue;
            }
            seen.push(r.language.clone());
            backward.push(BackwardSeries {
                plan_id: id.clone(),
                language: r.language.clone(),
                points: backward_series(st, &r.language)?,
            });
        }
    }
    let forgetting = forgetting_tradeoff(&staged)?;
    let delta_map = pairwise_backward_deltas(&staged)?;
    let correlations = match factors {
        Some(f) if delta_map.len() >= 3 => correlate(&delta_map, f).unwrap_or_default(),
        _ => Vec::new(),
    };
    Ok(Report {
        matrix: Some(matrix),
        forward,
        backward,
        cumulative,
        forgetting,
        deltas: delta_map.into_iter().collect(),
        correlations,
        contamination: None,
        matrix_decimals: None,
    })
}

fn json<T: Serialize>(data: &T) -> String {
    let v = serde_json::json!({ "schema_version": REPORT_SCHEMA_VERSION, "data": data });
    let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
    s.push('\n');
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "".into(), |x| format!("{x}"))
}

/// Every artifact of `report` as `(file name, contents)`, in index order.
pub fn render_report(report: &Report) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = Vec::new();
    if let Some(m) = &report.matrix {
        files.push((
            "transfer_matrix.csv".into(),
            m.to_csv(report.matrix_decimals.unwrap_or(4)),
        ));
        files.push(("transfer_stages.csv".into(), m.stages_csv()));
        files.push(("transfer_matrix.json".into(), json(m)));
    }
    if !report.forward.is_empty() {
        let mut s = String::from("language,position,mean_loss,plans\n");
        for (l, pts) in &report.forward {
            for p in pts {
                writeln!(s, "{l},{},{},{}", p.position, p.mean, p.values.len()).unwrap();
            }
        }
        files.push(("forward_transfer.csv".into(), s));
        files.push(("forward_transfer.json".into(), json(&report.forward)));
        let series = report
            .forward
            .iter()
            .map(|(l, pts)| Series {
                name: l.clone(),
                points: pts.iter().map(|p| (p.position as f64, p.mean)).collect(),
                kind: SeriesKind::Line,
            })
            .collect();
        files.push((
            "fig1_forward_transfer.svg".into(),
            render_svg(&[Panel {
                title: "Test loss by training position".into(),
                x_label: "position in sequence".into(),
                y_label: "test loss".into(),
                series,
            }]),
        ));
    }
    if !report.backward.is_empty() {
        let mut s = String::from("plan,language,suffix,loss\n");
        for b in &report.backward {
            for (k, v) in &b.points {
                writeln!(s, "{},{},{k},{v}", b.plan_id, b.language).unwrap();
            }
        }
        files.push(("backward_transfer.csv".into(), s));
        files.push(("backward_transfer.json".into(), json(&report.backward)));
        let mut by_lang: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for b in &report.backward {
            for (k, v) in &b.points {
                by_lang.entry(&b.language).or_default().entry(*k).or_default().push(*v);
            }
        }
        let series = by_lang
            .into_iter()
            .map(|(l, pts)| Series {
                name: l.into(),
                points: pts
                    .into_iter()
                    .map(|(k, v)| (k as f64, v.iter().sum::<f64>() / v.len() as f64))
                    .collect(),
                kind: SeriesKind::Line,
            })
            .collect();
        files.push((
            "fig2_backward_transfer.svg".into(),
            render_svg(&[Panel {
                title: "Test loss after later stages".into(),
                x_label: "suffix length".into(),
                y_label: "mean test loss".into(),
                series,
            }]),
        ));
    }
    if !report.cumulative.is_empty() {
        let mut s = String::from("plan,cumulative_loss\n");
        for (p, v) in &report.cumulative {
            writeln!(s, "{p},{v}").unwrap();
        }
        files.push(("cumulative_loss.csv".into(), s));
        files.push(("cumulative_loss.json".into(), json(&report.cumulative)));
        let mut f = String::from("plan,stage,language,current_loss,forgetting\n");
        for p in &report.forgetting {
            writeln!(
                f,
                "{},{},{},{},{}",
                p.plan_id, p.stage_index, p.language, p.current_loss, p.forgetting
            )
            .unwrap();
        }
        files.push(("forgetting_tradeoff.csv".into(), f));
        files.push(("forgetting_tradeoff.json".into(), json(&report.forgetting)));
        let cum = Series {
            name: "plans".into(),
            points: report
                .cumulative
                .iter()
                .enumerate()
                .map(|(i, (_, v))| ((i + 1) as f64, *v))
                .collect(),
            kind: SeriesKind::Scatter,
        };
        let mut by_len: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for p in &report.forgetting {
            by_len
                .entry(p.stage_index + 1)
                .or_default()
                .push((p.current_loss, p.forgetting));
        }
        let trade = by_len
            .into_iter()
            .map(|(k, pts)| Series {
                name: format!("stage {k}"),
                points: pts,
                kind: SeriesKind::Scatter,
            })
            .collect();
        files.push((
            "fig3_cumulative_forgetting.svg".into(),
            render_svg(&[
                Panel {
                    title: "Cumulative final loss per plan".into(),
                    x_label: "plan (sorted by id)".into(),
                    y_label: "sum of test losses".into(),
                    series: vec![cum],
                },
                Panel {
                    title: "Current loss vs forgetting".into(),
                    x_label: "current-language loss".into(),
                    y_label: "loss growth on earlier languages".into(),
                    series: trade,
                },
            ]),
        ));
    }
    if !report.deltas.is_empty() {
        let mut s = String::from("affected,trained_next,delta\n");
        for ((a, b), d) in &report.deltas {
            writeln!(s, "{a},{b},{d}").unwrap();
        }
        files.push(("backward_deltas.csv".into(), s));
    }
    if !report.correlations.is_empty() {
        let mut s = String::from("factor,pairs,pearson,spearman\n");
        for c in &report.correlations {
            writeln!(s, "{},{},{},{}", c.factor, c.pairs, opt(c.pearson), opt(c.spearman)).unwrap();
        }
        files.push(("correlations.csv".into(), s));
        files.push(("correlations.json".into(), json(&report.correlations)));
    }
    if let Some(c) = &report.contamination {
        files.push(("contamination.csv".into(), c.to_csv()));
    }
    let mut index = String::from("# Experiment report\n\n");
    writeln!(
        index,
        "Schema version {REPORT_SCHEMA_VERSION}. {} artifacts.\n",
        files.len()
    )
    .unwrap();
    for (name, _) in &files {
        writeln!(index, "- [{name}]({name})").unwrap();
    }
    files.push(("index.md".into(), index));
    files
}

/// Writes every artifact of `report` under `out_dir`. Everything is rendered
/// before the directory is touched. Returns the file names written.
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<Vec<String>> {
    let files = render_report(report);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let meta = std::fs::metadata(out_dir).map_err(|e| Error::io(out_dir, e))?;
    if meta.permissions().readonly() {
        return Err(Error::io(
            out_dir,
            std::io::Error::new(std::io::ErrorKind::PermissionDenied, "directory is read-only"),
        ));
    }
    for (name, body) in &files {
        let p = out_dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}

/// Contamination table rendered with its own precision rules; exposed so
/// callers can attach it to a report.
pub fn contamination_summary(m: &ContaminationMatrix) -> String {
    let mut s = String::new();
    for (r, row) in m.rows.iter().zip(&m.percent) {
        let cells: Vec<String> = m
            .columns
            .iter()
            .zip(row)
            .map(|(c, v)| format!("{c}={}", format_percent(*v)))
            .collect();
        writeln!(s, "{r}: {}", cells.join(" ")).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::reference::{reference_records, REFERENCE_LANGUAGES};

    #[test]
    fn empty_report_has_only_index() {
        let dir = tempfile::tempdir().unwrap();
        let names = emit_report(&build_report(&[], &[], Coverage::Complete, None).unwrap(), dir.path()).unwrap();
        assert_eq!(names, vec!["index.md".to_string()]);
        let idx = std::fs::read_to_string(dir.path().join("index.md")).unwrap();
        assert!(idx.contains("0 artifacts"));
    }

    #[test]
    fn reference_report_is_reproducible() {
        let langs: Vec<String> = REFERENCE_LANGUAGES.iter().map(|s| s.to_string()).collect();
        let recs = reference_records("gpt-126m");
        let r = build_report(&recs, &langs, Coverage::Partial, None);
        // The 126M block has every trained-language cell along each plan.
        let r = r.unwrap();
        let a = render_report(&r);
        let b = render_report(&r);
        assert_eq!(a, b);
        let svgs = a.iter().filter(|(n, _)| n.ends_with(".svg")).count();
        assert_eq!(svgs, 3);
        let en = r
            .backward
            .iter()
            .find(|b| b.plan_id == "en-da" && b.language == "en")
            .unwrap();
        assert_eq!(en.points, vec![(0, 3.45), (1, 3.17)]);
    }
}
