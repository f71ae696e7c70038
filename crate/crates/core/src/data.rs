//! Canonical data model, text normalization, and dataset/prediction file I/O.
//!
//! Datasets and predictions are newline-delimited JSON, one record per line:
//!
//! ```text
//! {"id": "q1", "question": "...", "clusters": [{"label": "...", "count": 36, "answers": ["..."]}]}
//! {"id": "q1", "ranked_answers": ["...", "..."]}
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

/// A prototypical question: an opaque identifier plus the raw question string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: String,
    pub text: String,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let text = text.into();
        if id.is_empty() {
            return Err(Error::data("question id must be non-empty"));
        }
        if text.is_empty() {
            return Err(Error::data(format!("question '{id}' has empty text")));
        }
        Ok(Question { id, text })
    }
}

/// One ground-truth answer class with its crowd-sourced vote weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerCluster {
    pub label: Option<String>,
    pub weight: u32,
    pub answers: Vec<String>,
}

impl AnswerCluster {
    /// Validates the cluster invariants: weight >= 1, non-empty answers, and
    /// no two answers that normalize to the same token sequence.
    pub fn new(label: Option<String>, weight: u32, answers: Vec<String>) -> Result<Self> {
        if weight < 1 {
            return Err(Error::data("cluster weight must be >= 1"));
        }
        if answers.is_empty() {
            return Err(Error::data("cluster must contain at least one answer"));
        }
        let mut seen = HashSet::new();
        for answer in &answers {
            if !seen.insert(normalize_text(answer).tokens) {
                return Err(Error::data(format!(
                    "duplicate normalized answer '{answer}' inside one cluster"
                )));
            }
        }
        Ok(AnswerCluster {
            label,
            weight,
            answers,
        })
    }
}

/// All answer clusters of one question, sorted by weight descending.
/// Ties keep their original order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthClusters {
    pub question_id: String,
    pub clusters: Vec<AnswerCluster>,
}

impl GroundTruthClusters {
    pub fn new(question_id: impl Into<String>, mut clusters: Vec<AnswerCluster>) -> Self {
        clusters.sort_by_key(|cluster| std::cmp::Reverse(cluster.weight));
        GroundTruthClusters {
            question_id: question_id.into(),
            clusters,
        }
    }

    /// Clusters in weight-descending order.
    pub fn iter(&self) -> std::slice::Iter<'_, AnswerCluster> {
        self.clusters.iter()
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// A ranked answer list for one question, ready for evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub question_id: String,
    pub ranked_answers: Vec<String>,
}

impl Prediction {
    /// Rejects lists that contain two answers with identical normalized forms.
    pub fn new(question_id: impl Into<String>, ranked_answers: Vec<String>) -> Result<Self> {
        let question_id = question_id.into();
        let mut seen = HashSet::new();
        for answer in &ranked_answers {
            if !seen.insert(normalize_text(answer).tokens) {
                return Err(Error::data(format!(
                    "prediction '{question_id}' repeats answer '{answer}' after normalization"
                )));
            }
        }
        Ok(Prediction {
            question_id,
            ranked_answers,
        })
    }
}

/// An ordered sequence of lowercase tokens. Tokens are non-empty and contain
/// no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.tokens.iter()
    }
}

impl IntoIterator for TokenSequence {
    type Item = String;
    type IntoIter = std::vec::IntoIter<String>;

    fn into_iter(self) -> Self::IntoIter {
        self.tokens.into_iter()
    }
}

impl<'a> IntoIterator for &'a TokenSequence {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.tokens.iter()
    }
}

/// Lowercase the input, map every non-alphanumeric character to a space, and
/// split on whitespace. Deterministic; empty input yields an empty sequence.
pub fn normalize_text(text: &str) -> TokenSequence {
    let mut mapped = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            // Lowercasing can expand into base char + combining marks; keep
            // only the alphanumeric part so re-normalizing is a no-op.
            for low in ch.to_lowercase() {
                if low.is_alphanumeric() {
                    mapped.push(low);
                }
            }
        } else {
            mapped.push(' ');
        }
    }
    TokenSequence {
        tokens: mapped.split_whitespace().map(str::to_string).collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct ClusterRecord {
    label: Option<String>,
    count: u32,
    answers: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRecord {
    id: String,
    question: String,
    #[serde(default)]
    clusters: Vec<ClusterRecord>,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    ranked_answers: Vec<String>,
}

/// Load a dataset file. Clusters come back sorted by weight descending and
/// duplicate question ids are rejected.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<(Question, GroundTruthClusters)>> {
    let path = path.as_ref();
    let mut seen_ids = HashSet::new();
    let mut dataset = Vec::new();
    for (line, record) in jsonl::read_records::<DatasetRecord>(path)? {
        if !seen_ids.insert(record.id.clone()) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate question id '{}'", record.id),
            ));
        }
        let question = Question::new(record.id.clone(), record.question)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        let mut clusters = Vec::with_capacity(record.clusters.len());
        for cluster in record.clusters {
            clusters.push(
                AnswerCluster::new(cluster.label, cluster.count, cluster.answers)
                    .map_err(|e| Error::parse(path, line, e.to_string()))?,
            );
        }
        dataset.push((question, GroundTruthClusters::new(record.id, clusters)));
    }
    Ok(dataset)
}

/// Write a dataset file in the same line format `load_dataset` reads.
pub fn write_dataset(
    dataset: &[(Question, GroundTruthClusters)],
    path: impl AsRef<Path>,
) -> Result<()> {
    jsonl::write_records(
        path.as_ref(),
        dataset.iter().map(|(q, gt)| DatasetRecord {
            id: q.id.clone(),
            question: q.text.clone(),
            clusters: gt
                .clusters
                .iter()
                .map(|c| ClusterRecord {
                    label: c.label.clone(),
                    count: c.weight,
                    answers: c.answers.clone(),
                })
                .collect(),
        }),
    )
}

/// Write predictions, one line per question.
pub fn write_predictions(predictions: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    jsonl::write_records(
        path.as_ref(),
        predictions.iter().map(|p| PredictionRecord {
            id: p.question_id.clone(),
            ranked_answers: p.ranked_answers.clone(),
        }),
    )
}

/// Load predictions written by [`write_predictions`].
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let mut predictions = Vec::new();
    for (line, record) in jsonl::read_records::<PredictionRecord>(path)? {
        predictions.push(
            Prediction::new(record.id, record.ranked_answers)
                .map_err(|e| Error::parse(path, line, e.to_string()))?,
        );
    }
    Ok(predictions)
}
