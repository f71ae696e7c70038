//! Weighted-accuracy evaluation: match ranked answers to gold clusters,
//! truncate (Ans@k / Inc@k), and score each truncated list against the ideal
//! reward achievable at its length.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::data::{GroundTruthClusters, Prediction};
use crate::dedup::{lemma_set, normal_form, NormalForm, StopWordList, SynonymLexicon};
use crate::error::{Error, Result};
use crate::keywords::KeywordList;

/// How an answer string is tested for membership in a gold cluster.
#[derive(Debug, Clone, Copy)]
pub enum MatchPolicy<'a> {
    /// Lemma-set equality after normalization and stop-word removal.
    ExactNormalized { stop: &'a StopWordList },
    /// Synonym-class-set equality: lemmas are first mapped through the
    /// lexicon, so "bike" can match a cluster listing "bicycle".
    SynonymAugmented {
        stop: &'a StopWordList,
        lexicon: &'a SynonymLexicon,
    },
}

impl MatchPolicy<'_> {
    pub fn mode_name(&self) -> &'static str {
        match self {
            MatchPolicy::ExactNormalized { .. } => "exact-normalized",
            MatchPolicy::SynonymAugmented { .. } => "synonym-augmented",
        }
    }

    fn key(&self, answer: &str) -> NormalForm {
        match self {
            MatchPolicy::ExactNormalized { stop } => lemma_set(answer, stop),
            MatchPolicy::SynonymAugmented { stop, lexicon } => normal_form(answer, stop, lexicon),
        }
    }
}

/// Find the cluster an answer belongs to: the first cluster in weight order
/// containing a gold answer with the same match key. Answers that reduce to
/// nothing never match.
pub fn match_answer(
    answer: &str,
    clusters: &GroundTruthClusters,
    policy: &MatchPolicy,
) -> Option<usize> {
    let key = policy.key(answer);
    if key.is_empty() {
        return None;
    }
    clusters
        .iter()
        .position(|cluster| cluster.answers.iter().any(|gold| policy.key(gold) == key))
}

/// List truncation applied before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// Keep the first k answers.
    AnsAt(usize),
    /// Keep everything before the k-th non-matching answer.
    IncAt(usize),
}

impl Truncation {
    pub fn metric_name(&self) -> String {
        match self {
            Truncation::AnsAt(k) => format!("Ans@{k}"),
            Truncation::IncAt(k) => format!("Inc@{k}"),
        }
    }
}

/// The reported metric set: Ans@{1,3,5,10} and Inc@{1,3,5}.
pub fn standard_schemes() -> Vec<Truncation> {
    vec![
        Truncation::AnsAt(1),
        Truncation::AnsAt(3),
        Truncation::AnsAt(5),
        Truncation::AnsAt(10),
        Truncation::IncAt(1),
        Truncation::IncAt(3),
        Truncation::IncAt(5),
    ]
}

/// The headline metric among [`standard_schemes`].
pub const PRIMARY_METRIC: &str = "Inc@3";

/// Truncate a ranked answer list. Ans@k keeps the first min(k, len) answers;
/// Inc@k scans forward and cuts immediately before the k-th answer that
/// matches no cluster (earlier answers, matching or not, survive).
pub fn truncate<'a>(
    ranked: &'a [String],
    clusters: &GroundTruthClusters,
    scheme: Truncation,
    policy: &MatchPolicy,
) -> &'a [String] {
    match scheme {
        Truncation::AnsAt(k) => &ranked[..k.min(ranked.len())],
        Truncation::IncAt(k) => {
            let mut wrong = 0;
            for (i, answer) in ranked.iter().enumerate() {
                if match_answer(answer, clusters, policy).is_none() {
                    wrong += 1;
                    if wrong == k {
                        return &ranked[..i];
                    }
                }
            }
            ranked
        }
    }
}

/// Score one truncated list: reward each cluster's weight the first time one
/// of its answers appears, divided by the ideal reward for a list of this
/// length (the sum of the heaviest min(len, #clusters) weights). Empty lists
/// and clusterless questions score 0.
pub fn weighted_accuracy(
    truncated: &[String],
    clusters: &GroundTruthClusters,
    policy: &MatchPolicy,
) -> f64 {
    if truncated.is_empty() {
        return 0.0;
    }
    let ideal: u64 = clusters
        .iter()
        .take(truncated.len())
        .map(|c| u64::from(c.weight))
        .sum();
    if ideal == 0 {
        return 0.0;
    }
    let mut credited: HashSet<usize> = HashSet::new();
    let mut reward: u64 = 0;
    for answer in truncated {
        if let Some(idx) = match_answer(answer, clusters, policy) {
            if credited.insert(idx) {
                reward += u64::from(clusters.clusters[idx].weight);
            }
        }
    }
    reward as f64 / ideal as f64
}

/// Aggregated evaluation results: one mean per metric plus the per-question
/// breakdown, tagged with the match policy used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub policy: String,
    pub per_metric: BTreeMap<String, f64>,
    pub per_question: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Evaluate every prediction against its question's gold clusters under each
/// truncation scheme. Every prediction id must have ground truth; offending
/// ids are listed in the error.
pub fn evaluate(
    predictions: &[Prediction],
    ground: &HashMap<String, GroundTruthClusters>,
    schemes: &[Truncation],
    policy: &MatchPolicy,
) -> Result<EvalReport> {
    let missing: Vec<&str> = predictions
        .iter()
        .filter(|p| !ground.contains_key(&p.question_id))
        .map(|p| p.question_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "predictions without ground truth: {}",
            missing.join(", ")
        )));
    }

    let mut per_question: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for prediction in predictions {
        let clusters = &ground[&prediction.question_id];
        let mut scores = BTreeMap::new();
        for scheme in schemes {
            let kept = truncate(&prediction.ranked_answers, clusters, *scheme, policy);
            scores.insert(
                scheme.metric_name(),
                weighted_accuracy(kept, clusters, policy),
            );
        }
        if per_question
            .insert(prediction.question_id.clone(), scores)
            .is_some()
        {
            return Err(Error::data(format!(
                "duplicate prediction for question '{}'",
                prediction.question_id
            )));
        }
    }

    let mut per_metric = BTreeMap::new();
    for scheme in schemes {
        let name = scheme.metric_name();
        let total: f64 = per_question.values().map(|s| s[&name]).sum();
        let mean = if per_question.is_empty() {
            0.0
        } else {
            total / per_question.len() as f64
        };
        per_metric.insert(name, mean);
    }
    Ok(EvalReport {
        policy: policy.mode_name().to_string(),
        per_metric,
        per_question,
    })
}

/// Macro-averaged keyword accuracy: per question, how many of the first `m`
/// extracted keywords appear among the gold keywords, out of the best
/// achievable min(m, #gold). Questions without gold keywords contribute 0.
pub fn keyword_macro_accuracy(
    extracted: &[KeywordList],
    gold: &[Vec<String>],
    m: usize,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::config("keyword count m must be at least 1"));
    }
    if extracted.len() != gold.len() {
        return Err(Error::data(format!(
            "{} extracted keyword lists but {} gold lists",
            extracted.len(),
            gold.len()
        )));
    }
    if extracted.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (keywords, gold_list) in extracted.iter().zip(gold) {
        let gold_set: HashSet<&str> = gold_list.iter().map(String::as_str).collect();
        let denom = m.min(gold_set.len());
        if denom == 0 {
            continue;
        }
        let hits = keywords
            .iter()
            .take(m)
            .filter(|k| gold_set.contains(k.token.as_str()))
            .count();
        total += hits as f64 / denom as f64;
    }
    Ok(total / extracted.len() as f64)
}
