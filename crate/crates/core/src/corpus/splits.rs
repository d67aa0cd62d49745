use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, LanguageCorpus};
use crate::error::{Error, Result};
use crate::numerics::DetRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: LanguageCorpus,
    pub val: LanguageCorpus,
    pub test: LanguageCorpus,
}

/// Largest-remainder split of `total` proportional to `counts`, never giving a
/// dataset more than `caps[i]`. Ties go to the lower index.
fn allocate(total: usize, counts: &[usize], caps: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    let mut out = vec![0usize; counts.len()];
    if n == 0 || total == 0 {
        return out;
    }
    let mut rem: Vec<(f64, usize)> = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        let exact = total as f64 * c as f64 / n as f64;
        out[i] = (exact.floor() as usize).min(caps[i]);
        rem.push((exact - exact.floor(), i));
    }
    rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - out.iter().sum::<usize>();
    // First pass by remainder, then any spare capacity in index order.
    for &(_, i) in rem.iter().chain(rem.iter()) {
        if left == 0 {
            break;
        }
        if out[i] < caps[i] {
            out[i] += 1;
            left -= 1;
        }
    }
    let mut i = 0;
    while left > 0 && i < out.len() {
        let add = (caps[i] - out[i]).min(left);
        out[i] += add;
        left -= add;
        i += 1;
    }
    out
}

/// Disjoint train/val/test split allocating each part proportionally to the
/// datasets' document counts.
pub fn make_splits(corpus: &LanguageCorpus, rng: &mut DetRng, sizes: SplitSizes) -> Result<Splits> {
    let available = corpus.num_documents();
    let wanted = sizes.train + sizes.val + sizes.test;
    if wanted > available {
        return Err(Error::Input(format!(
            "corpus {} has {available} documents, splits need {wanted}",
            corpus.language
        )));
    }
    let counts: Vec<usize> = corpus.datasets.iter().map(|d| d.documents.len()).collect();
    let test = allocate(sizes.test, &counts, &counts);
    let caps: Vec<usize> = counts.iter().zip(&test).map(|(c, t)| c - t).collect();
    let val = allocate(sizes.val, &counts, &caps);
    let caps: Vec<usize> = caps.iter().zip(&val).map(|(c, v)| c - v).collect();
    let train = allocate(sizes.train, &counts, &caps);

    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    for (i, ds) in corpus.datasets.iter().enumerate() {
        let mut idx: Vec<usize> = (0..ds.documents.len()).collect();
        idx.shuffle(rng);
        let mut it = idx.into_iter();
        for (part, n) in parts.iter_mut().zip([train[i], val[i], test[i]]) {
            let documents = it.by_ref().take(n).map(|j| ds.documents[j].clone()).collect();
            part.push(Dataset {
                name: ds.name.clone(),
                weight: ds.weight,
                size: ds.size,
                documents,
            });
        }
    }
    let [train, val, test] = parts.map(|datasets| LanguageCorpus {
        language: corpus.language.clone(),
        datasets,
    });
    Ok(Splits { train, val, test })
}
