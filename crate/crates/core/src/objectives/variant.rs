//! Switches distinguishing the full method from its ablations. Each field
//! is one factor; an ablation flips exactly one of them.

use serde::{Deserialize, Serialize};

use crate::executor::InjectionMode;
use crate::retriever::{Pooling, QueryMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Planner,
    /// `c_S` replaced by standard-normal noise.
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSource {
    Retrieved,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    Both,
    PlanOnly,
    EvidenceOnly,
    None,
}

impl Consistency {
    pub fn plan(self) -> bool {
        matches!(self, Consistency::Both | Consistency::PlanOnly)
    }

    pub fn evidence(self) -> bool {
        matches!(self, Consistency::Both | Consistency::EvidenceOnly)
    }
}

/// What the classifier sees during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierInput {
    Tweedie,
    NoisyLatent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub plan_source: PlanSource,
    pub rerank: bool,
    pub query: QueryMode,
    pub evidence: EvidenceSource,
    pub pooling: Pooling,
    pub injection: InjectionMode,
    pub consistency: Consistency,
    pub task_loss: bool,
    pub classifier_input: ClassifierInput,
}

impl Default for Variant {
    fn default() -> Self {
        Variant {
            plan_source: PlanSource::Planner,
            rerank: true,
            query: QueryMode::PlanDriven,
            evidence: EvidenceSource::Retrieved,
            pooling: Pooling::SparseSoftmax,
            injection: InjectionMode::Dual,
            consistency: Consistency::Both,
            task_loss: true,
            classifier_input: ClassifierInput::Tweedie,
        }
    }
}

impl Variant {
    /// Names of the fields on which `self` and `other` differ.
    pub fn diff(&self, other: &Variant) -> Vec<String> {
        let a = serde_json::to_value(self).expect("variant serialises");
        let b = serde_json::to_value(other).expect("variant serialises");
        let (a, b) = (a.as_object().expect("object"), b.as_object().expect("object"));
        let mut out: Vec<String> = a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect();
        out.sort();
        out
    }
}
