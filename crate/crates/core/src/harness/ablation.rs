//! Named ablations, each flipping one field of [`Variant`].

use crate::error::{Error, Result};
use crate::executor::InjectionMode;
use crate::objectives::{ClassifierInput, Consistency, EvidenceSource, PlanSource, Variant};
use crate::retriever::{Pooling, QueryMode};

pub const ABLATIONS: [&str; 14] = [
    "wo_planner",
    "wo_rerank",
    "wo_retriever",
    "wo_sparse_attn",
    "content_only",
    "random_plan",
    "concat_injection",
    "reversed_injection",
    "single_stream",
    "wo_lplan",
    "wo_levi",
    "wo_both",
    "wo_ltask",
    "direct_classification",
];

/// The variant for `name`; `full` is the unablated model.
pub fn ablation_variant(name: &str) -> Result<Variant> {
    let full = Variant::default();
    Ok(match name {
        "full" => full,
        "wo_planner" => Variant { plan_source: PlanSource::Noise, ..full },
        "wo_rerank" => Variant { rerank: false, ..full },
        "wo_retriever" => Variant { evidence: EvidenceSource::Zero, ..full },
        "wo_sparse_attn" => Variant { pooling: Pooling::Mean, ..full },
        "content_only" => Variant { query: QueryMode::ContentOnly, ..full },
        "random_plan" => Variant { query: QueryMode::RandomPlan, ..full },
        "concat_injection" => Variant { injection: InjectionMode::Concat, ..full },
        "reversed_injection" => Variant { injection: InjectionMode::Reversed, ..full },
        "single_stream" => Variant { injection: InjectionMode::SingleStream, ..full },
        "wo_lplan" => Variant { consistency: Consistency::EvidenceOnly, ..full },
        "wo_levi" => Variant { consistency: Consistency::PlanOnly, ..full },
        "wo_both" => Variant { consistency: Consistency::None, ..full },
        "wo_ltask" => Variant { task_loss: false, ..full },
        "direct_classification" => Variant { classifier_input: ClassifierInput::NoisyLatent, ..full },
        other => return Err(Error::UnknownAblation(other.to_string())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_ablation_changes_one_field() {
        let full = Variant::default();
        for name in ABLATIONS {
            let v = ablation_variant(name).unwrap();
            assert_eq!(full.diff(&v).len(), 1, "{name}");
        }
        assert_eq!(ablation_variant("full").unwrap(), full);
    }

    #[test]
    fn ablations_are_distinct() {
        for (i, a) in ABLATIONS.iter().enumerate() {
            for b in &ABLATIONS[i + 1..] {
                assert_ne!(ablation_variant(a).unwrap(), ablation_variant(b).unwrap(), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(ablation_variant("wo_everything"), Err(Error::UnknownAblation(_))));
    }
}
