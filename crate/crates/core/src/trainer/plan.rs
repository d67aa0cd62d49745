use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schedule::StageSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanMode {
    /// Stages run in order, each starting from the previous stage's weights.
    Sequential,
    /// A single stage over the weighted union of `joint_languages`.
    Joint,
}

/// Optimization settings shared by every stage of a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub optimizer: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Validation interval in steps; `None` means `steps / 10`.
    pub eval_every: Option<u64>,
    /// Sequences per evaluation forward pass.
    pub eval_batch: usize,
    /// Clear optimizer moments and the step counter at each stage boundary.
    pub reset_optimizer: bool,
    /// Interval of mid-stage checkpoint writes; `None` writes only at stage end.
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            grad_clip: Some(1.0),
            eval_every: None,
            eval_batch: 16,
            reset_optimizer: true,
            checkpoint_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub id: String,
    pub mode: PlanMode,
    #[serde(default)]
    pub joint_languages: Vec<String>,
    pub stages: Vec<StageSpec>,
    pub model: ModelConfig,
    pub seed: u64,
    /// Languages evaluated after every stage.
    pub eval_languages: Vec<String>,
    #[serde(default)]
    pub train: TrainOptions,
}

impl ExperimentPlan {
    pub fn sequential(
        id: &str,
        stages: Vec<StageSpec>,
        model: ModelConfig,
        seed: u64,
        eval_languages: Vec<String>,
    ) -> Self {
        Self {
            id: id.into(),
            mode: PlanMode::Sequential,
            joint_languages: Vec::new(),
            stages,
            model,
            seed,
            eval_languages,
            train: TrainOptions::default(),
        }
    }

    /// Joint baseline: one stage over all `languages`, trained for
    /// `per_language.steps * languages.len()` steps with the same warmup and
    /// tail.
    pub fn joint(id: &str, languages: &[String], per_language: &StageSpec, model: ModelConfig, seed: u64) -> Self {
        let mut stage = per_language.clone();
        stage.language = languages.join("+");
        stage.steps = per_language.steps * languages.len() as u64;
        Self {
            id: id.into(),
            mode: PlanMode::Joint,
            joint_languages: languages.to_vec(),
            stages: vec![stage],
            model,
            seed,
            eval_languages: languages.to_vec(),
            train: TrainOptions::default(),
        }
    }

    /// Languages whose training data the plan reads.
    pub fn training_languages(&self) -> Vec<String> {
        match self.mode {
            PlanMode::Sequential => self.stages.iter().map(|s| s.language.clone()).collect(),
            PlanMode::Joint => self.joint_languages.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config(format!("plan {} has no stages", self.id)));
        }
        if self.mode == PlanMode::Joint {
            if self.stages.len() != 1 {
                return Err(Error::Config(format!(
                    "joint plan {} must have exactly one stage",
                    self.id
                )));
            }
            if self.joint_languages.is_empty() {
                return Err(Error::Config(format!("joint plan {} lists no languages", self.id)));
            }
        }
        for s in &self.stages {
            s.validate()?;
        }
        if self.eval_languages.is_empty() {
            return Err(Error::Config(format!("plan {} evaluates no languages", self.id)));
        }
        if self.train.eval_batch == 0 {
            return Err(Error::Config("eval_batch must be positive".into()));
        }
        if matches!(self.train.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the plan's canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// All orders that start with `first` followed by a non-empty arrangement of
/// a subset of `others`, shortest first; within a length, in lexicographic
/// order of positions in `others`.
pub fn enumerate_orders(first: &str, others: &[String]) -> Result<Vec<Vec<String>>> {
    if others.iter().any(|o| o == first) {
        return Err(Error::Input(format!(
            "{first} is both the first language and one of the others"
        )));
    }
    let mut sorted = others.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != others.len() {
        return Err(Error::Input("languages in the rest of the order repeat".into()));
    }
    fn extend(prefix: &mut Vec<usize>, n: usize, len: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == len {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !prefix.contains(&i) {
                prefix.push(i);
                extend(prefix, n, len, out);
                prefix.pop();
            }
        }
    }
    let mut orders = Vec::new();
    for len in 1..=others.len() {
        let mut idx = Vec::new();
        extend(&mut Vec::new(), others.len(), len, &mut idx);
        for arrangement in idx {
            let mut order = vec![first.to_string()];
            order.extend(arrangement.into_iter().map(|i| others[i].clone()));
            orders.push(order);
        }
    }
    Ok(orders)
}

/// Sequential plans for every order of [`enumerate_orders`]. Each stage copies
/// `template` with its language replaced. Every plan evaluates all languages.
pub fn enumerate_plans(
    first: &str,
    others: &[String],
    template: &StageSpec,
    model: &ModelConfig,
    seed: u64,
) -> Result<Vec<ExperimentPlan>> {
    let mut eval = vec![first.to_string()];
    eval.extend(others.iter().cloned());
    Ok(enumerate_orders(first, others)?
        .into_iter()
        .map(|order| {
            let stages = order
                .iter()
                .map(|l| StageSpec {
                    language: l.clone(),
                    ..template.clone()
                })
                .collect();
            ExperimentPlan::sequential(&order.join("-"), stages, model.clone(), seed, eval.clone())
        })
        .collect())
}
