use std::collections::BTreeMap;

use serde::Serialize;

use super::matrix::group_by_plan;
use crate::error::{Error, Result};
use crate::trainer::TransferRecord;

fn loss(r: &TransferRecord, language: &str) -> Result<f64> {
    r.losses.get(language).copied().ok_or_else(|| {
        Error::Data(format!(
            "plan {} stage {} has no loss for {language}",
            r.plan_id, r.stage_index
        ))
    })
}

/// Mean test loss of a language trained at one sequence position.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForwardPoint {
    /// 1-based position in the training order.
    pub position: usize,
    pub mean: f64,
    /// Contributing `(plan, loss)` values.
    pub values: Vec<(String, f64)>,
}

/// For each language, its own test loss at the end of its stage, averaged over
/// plans by the position at which it was trained. Position 1 also includes
/// the monolingual `baselines`. Positions no plan reaches are absent.
pub fn forward_transfer(
    records: &[TransferRecord],
    baselines: &[TransferRecord],
) -> Result<BTreeMap<String, Vec<ForwardPoint>>> {
    let mut acc: BTreeMap<String, BTreeMap<usize, Vec<(String, f64)>>> = BTreeMap::new();
    for r in baselines {
        let v = loss(r, &r.language)?;
        acc.entry(r.language.clone())
            .or_default()
            .entry(1)
            .or_default()
            .push((r.plan_id.clone(), v));
    }
    let baseline_langs: Vec<String> = acc.keys().cloned().collect();
    let baseline_plans: Vec<&str> = baselines.iter().map(|r| r.plan_id.as_str()).collect();
    for r in records {
        if baseline_plans.contains(&r.plan_id.as_str()) {
            continue;
        }
        if !baseline_langs.contains(&r.language) {
            return Err(Error::Query(format!("no monolingual baseline for {}", r.language)));
        }
        let v = loss(r, &r.language)?;
        acc.entry(r.language.clone())
            .or_default()
            .entry(r.stage_index + 1)
            .or_default()
            .push((r.plan_id.clone(), v));
    }
    Ok(acc
        .into_iter()
        .map(|(lang, by_pos)| {
            let pts = by_pos
                .into_iter()
                .map(|(position, values)| ForwardPoint {
                    position,
                    mean: values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64,
                    values,
                })
                .collect();
            (lang, pts)
        })
        .collect())
}

/// Loss on `language` at the end of its stage (suffix 0) and after each
/// later stage of the same plan. `records` must belong to one plan.
pub fn backward_series(records: &[TransferRecord], language: &str) -> Result<Vec<(usize, f64)>> {
    let groups = group_by_plan(records)?;
    if groups.len() != 1 {
        return Err(Error::Input(format!(
            "backward_series needs one plan, got {}",
            groups.len()
        )));
    }
    let stages = &groups[0].1;
    let start = stages
        .iter()
        .position(|r| r.language == language)
        .ok_or_else(|| Error::Query(format!("plan {} never trains {language}", groups[0].0)))?;
    stages[start..]
        .iter()
        .enumerate()
        .map(|(s, r)| Ok((s, loss(r, language)?)))
        .collect()
}

/// Sum of final-stage losses over every language in the final record.
pub fn cumulative_loss(records: &[TransferRecord]) -> Result<BTreeMap<String, f64>> {
    group_by_plan(records)?
        .into_iter()
        .map(|(id, stages)| {
            let last = stages.last().expect("non-empty");
            Ok((id, last.losses.values().sum()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForgettingPoint {
    pub plan_id: String,
    pub stage_index: usize,
    pub language: String,
    /// Loss on the language just trained.
    pub current_loss: f64,
    /// Signed sum over earlier languages of the loss change since the end of
    /// their most recent stage.
    pub forgetting: f64,
}

/// One point per stage after the first of every plan.
pub fn forgetting_tradeoff(records: &[TransferRecord]) -> Result<Vec<ForgettingPoint>> {
    let mut out = Vec::new();
    for (id, stages) in group_by_plan(records)? {
        let mut last_end: BTreeMap<String, f64> = BTreeMap::new();
        for (k, r) in stages.iter().enumerate() {
            if k > 0 {
                let mut forgetting = 0.0;
                for (prev, &at_end) in &last_end {
                    if *prev != r.language {
                        forgetting += loss(r, prev)? - at_end;
                    }
                }
                out.push(ForgettingPoint {
                    plan_id: id.clone(),
                    stage_index: k,
                    language: r.language.clone(),
                    current_loss: loss(r, &r.language)?,
                    forgetting,
                });
            }
            last_end.insert(r.language.clone(), loss(r, &r.language)?);
        }
    }
    Ok(out)
}

/// Average change of an earlier language's loss over the stage that
/// immediately follows it, keyed `(earlier, next)`.
pub fn pairwise_backward_deltas(records: &[TransferRecord]) -> Result<BTreeMap<(String, String), f64>> {
    let mut acc: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (_, stages) in group_by_plan(records)? {
        for w in stages.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.language == b.language {
                continue;
            }
            let d = loss(b, &a.language)? - loss(a, &a.language)?;
            acc.entry((a.language.clone(), b.language.clone())).or_default().push(d);
        }
    }
    Ok(acc
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect())
}
