use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::shiftmetrics::{ContaminationMatrix, SimilarityTable, METRICS};

pub type PairKey = (String, String);

/// Factor values per ordered language pair `(affected, trained later)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FactorTable {
    pub factors: BTreeMap<String, BTreeMap<PairKey, f64>>,
}

pub const CONTAMINATION_A_IN_B: &str = "contamination(A in B)";
pub const CONTAMINATION_B_IN_A: &str = "contamination(B in A)";

impl FactorTable {
    /// Similarity metrics (symmetric) and contamination in both directions
    /// for each ordered pair. Pairs without a value are left out.
    pub fn from_sources(
        similarity: &SimilarityTable,
        contamination: Option<&ContaminationMatrix>,
        pairs: &[PairKey],
    ) -> Self {
        let mut factors: BTreeMap<String, BTreeMap<PairKey, f64>> = BTreeMap::new();
        for (a, b) in pairs {
            for m in METRICS {
                if let Some(v) = similarity.get(m, a, b) {
                    factors.entry(m.into()).or_default().insert((a.clone(), b.clone()), v);
                }
            }
            if let Some(c) = contamination {
                if let Some(v) = c.get(b, a) {
                    factors
                        .entry(CONTAMINATION_A_IN_B.into())
                        .or_default()
                        .insert((a.clone(), b.clone()), v);
                }
                if let Some(v) = c.get(a, b) {
                    factors
                        .entry(CONTAMINATION_B_IN_A.into())
                        .or_default()
                        .insert((a.clone(), b.clone()), v);
                }
            }
        }
        Self { factors }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Correlation {
    pub factor: String,
    pub pairs: usize,
    /// Absent when either side is constant.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Pearson and Spearman coefficients between `deltas` and every factor, over
/// the pairs both define.
pub fn correlate(deltas: &BTreeMap<PairKey, f64>, factors: &FactorTable) -> Result<Vec<Correlation>> {
    let mut out = Vec::new();
    for (name, values) in &factors.factors {
        let (x, y): (Vec<f64>, Vec<f64>) = deltas
            .iter()
            .filter_map(|(k, d)| values.get(k).map(|f| (*f, *d)))
            .unzip();
        if x.len() < 3 {
            return Err(Error::Input(format!(
                "factor {name} shares only {} pairs with the deltas; need 3",
                x.len()
            )));
        }
        out.push(Correlation {
            factor: name.clone(),
            pairs: x.len(),
            pearson: pearson(&x, &y),
            spearman: spearman(&x, &y),
        });
    }
    Ok(out)
}
