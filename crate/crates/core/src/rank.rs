//! Plausibility ranking: build a balanced training corpus from gold clusters,
//! train a logistic scorer on lexical features with binary cross-entropy, and
//! order candidate answers by predicted plausibility.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_text, GroundTruthClusters, Question};
use crate::dedup::{normal_form, StopWordList, SynonymLexicon};
use crate::error::{Error, Result};
use crate::generate::Candidate;
use crate::jsonl;
use crate::retrieve::lemmatize;

/// Gold clusters per question whose representative answers become positive
/// training instances, unless configured otherwise.
pub const DEFAULT_TOP_CLUSTERS: usize = 2;

/// How many ranked answers each question keeps by default: twelve candidates
/// enter ranking and the two lowest-scored are eliminated.
pub const DEFAULT_FINAL_COUNT: usize = 10;

/// One labeled question–answer pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerInstance {
    #[serde(rename = "id")]
    pub question_id: String,
    #[serde(rename = "question")]
    pub question_text: String,
    pub answer: String,
    /// 1 for a gold answer, 0 for a sampled negative.
    pub label: u8,
}

/// The built training corpus plus the questions that had to be dropped
/// because their negative pool was exhausted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankerCorpus {
    pub instances: Vec<RankerInstance>,
    pub skipped: Vec<String>,
}

const NEGATIVE_ATTEMPTS_PER_SLOT: usize = 50;

/// Build a balanced corpus: per question the first answer of each of its
/// top-`n` heaviest clusters is a positive, matched by an equal number of
/// negatives sampled uniformly (with a fixed seed) from the other questions'
/// gold answers. A sample whose normal form collides with any gold answer of
/// the target question is rejected; a question whose slots cannot be filled
/// within the attempt budget is skipped and reported.
pub fn build_ranker_corpus(
    dataset: &[(Question, GroundTruthClusters)],
    n: usize,
    seed: u64,
    stop: &StopWordList,
    lex: &SynonymLexicon,
) -> Result<RankerCorpus> {
    if n == 0 {
        return Err(Error::config("top-cluster count n must be at least 1"));
    }
    if dataset.is_empty() {
        return Err(Error::data("ranker corpus needs a non-empty dataset"));
    }
    if dataset.len() < 2 {
        return Err(Error::data(
            "ranker corpus needs at least 2 questions to sample negatives from",
        ));
    }

    // All gold answers, grouped contiguously by question, so sampling
    // "any answer of another question" is one bounded random index.
    let mut pool: Vec<&str> = Vec::new();
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(dataset.len());
    for (_, clusters) in dataset {
        let start = pool.len();
        for cluster in clusters.iter() {
            pool.extend(cluster.answers.iter().map(String::as_str));
        }
        spans.push((start, pool.len() - start));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = RankerCorpus::default();
    for (qi, (question, clusters)) in dataset.iter().enumerate() {
        let positives: Vec<&str> = clusters
            .iter()
            .take(n)
            .map(|cluster| cluster.answers[0].as_str())
            .collect();
        if positives.is_empty() {
            log::debug!(
                "question '{}' has no clusters, nothing to rank",
                question.id
            );
            continue;
        }

        let gold_forms: Vec<_> = clusters
            .iter()
            .flat_map(|cluster| cluster.answers.iter())
            .map(|answer| normal_form(answer, stop, lex))
            .collect();

        let (start, len) = spans[qi];
        let others = pool.len() - len;
        let mut negatives: Vec<&str> = Vec::with_capacity(positives.len());
        'slots: for _ in 0..positives.len() {
            for _ in 0..NEGATIVE_ATTEMPTS_PER_SLOT {
                if others == 0 {
                    break;
                }
                let position = rng.gen_range(0..others);
                let index = if position < start {
                    position
                } else {
                    position + len
                };
                let sample = pool[index];
                if !gold_forms.contains(&normal_form(sample, stop, lex)) {
                    negatives.push(sample);
                    continue 'slots;
                }
            }
            log::warn!(
                "question '{}': negative pool exhausted after {NEGATIVE_ATTEMPTS_PER_SLOT} \
                 attempts, skipping the question",
                question.id
            );
            corpus.skipped.push(question.id.clone());
            continue;
        }
        if negatives.len() < positives.len() {
            continue; // skipped above
        }

        for answer in positives {
            corpus.instances.push(RankerInstance {
                question_id: question.id.clone(),
                question_text: question.text.clone(),
                answer: answer.to_string(),
                label: 1,
            });
        }
        for answer in negatives {
            corpus.instances.push(RankerInstance {
                question_id: question.id.clone(),
                question_text: question.text.clone(),
                answer: answer.to_string(),
                label: 0,
            });
        }
    }
    Ok(corpus)
}

pub fn write_ranker_corpus(path: impl AsRef<Path>, instances: &[RankerInstance]) -> Result<()> {
    jsonl::write_records(path.as_ref(), instances.iter().cloned())
}

pub fn load_ranker_corpus(path: impl AsRef<Path>) -> Result<Vec<RankerInstance>> {
    let path = path.as_ref();
    let mut instances = Vec::new();
    for (line, instance) in jsonl::read_records::<RankerInstance>(path)? {
        if instance.label > 1 {
            return Err(Error::parse(
                path,
                line,
                format!("label must be 0 or 1, got {}", instance.label),
            ));
        }
        instances.push(instance);
    }
    Ok(instances)
}

/// Number of lexical features the reference scorer uses.
pub const FEATURE_DIM: usize = 6;

/// Identifies the feature layout a model file was trained under.
pub const FEATURE_VERSION: &str = "lexical-6/1";

/// Fixed-size feature vector for one question–answer pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
}

fn content_lemmas(text: &str, stop: &StopWordList) -> Vec<String> {
    normalize_text(text)
        .into_iter()
        .filter(|token| !stop.contains(token))
        .map(|token| lemmatize(&token))
        .collect()
}

/// Compute the lexical features relating an answer to its question: shared
/// content lemmas (raw and normalized), answer length in content tokens and
/// characters, synonym-class overlap, and a single-token indicator.
pub fn extract_features(
    question_text: &str,
    answer: &str,
    stop: &StopWordList,
    lex: &SynonymLexicon,
) -> FeatureVector {
    let question_lemmas: std::collections::HashSet<String> =
        content_lemmas(question_text, stop).into_iter().collect();
    let question_classes: std::collections::HashSet<String> = question_lemmas
        .iter()
        .map(|lemma| lex.class_of(lemma))
        .collect();

    let answer_tokens = content_lemmas(answer, stop);
    let answer_lemmas: std::collections::HashSet<String> = answer_tokens.iter().cloned().collect();

    let overlap = answer_lemmas
        .iter()
        .filter(|lemma| question_lemmas.contains(*lemma))
        .count() as f64;
    let distinct = answer_lemmas.len() as f64;
    let shared_class = answer_lemmas
        .iter()
        .filter(|lemma| question_classes.contains(&lex.class_of(lemma)))
        .count() as f64;

    let values = [
        overlap,
        if distinct > 0.0 {
            overlap / distinct
        } else {
            0.0
        },
        answer_tokens.len() as f64,
        if distinct > 0.0 {
            shared_class / distinct
        } else {
            0.0
        },
        answer.chars().count() as f64 / 32.0,
        if normalize_text(answer).len() == 1 {
            1.0
        } else {
            0.0
        },
    ];
    FeatureVector { values }
}

/// Logistic regression parameters over [`FeatureVector`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    /// All-zero parameters: scores 0.5 for every input.
    pub fn zeros() -> LogisticModel {
        LogisticModel {
            weights: vec![0.0; FEATURE_DIM],
            bias: 0.0,
        }
    }

    /// Predicted plausibility, always within (0, 1).
    pub fn predict(&self, features: &FeatureVector) -> f64 {
        let z = self
            .weights
            .iter()
            .zip(features.values.iter())
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy of the model over featurized instances, with
/// predictions clamped away from 0 and 1 so the logs stay finite.
pub fn mean_bce_loss(model: &LogisticModel, features: &[FeatureVector], labels: &[u8]) -> f64 {
    assert_eq!(features.len(), labels.len());
    let total: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let v = clamp_prob(model.predict(x));
            if y == 1 {
                -v.ln()
            } else {
                -(1.0 - v).ln()
            }
        })
        .sum();
    total / features.len() as f64
}

/// Gradient of the mean binary cross-entropy with respect to the weights and
/// the bias.
pub fn mean_bce_gradient(
    model: &LogisticModel,
    features: &[FeatureVector],
    labels: &[u8],
) -> (Vec<f64>, f64) {
    assert_eq!(features.len(), labels.len());
    let mut grad_w = vec![0.0; FEATURE_DIM];
    let mut grad_b = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let residual = model.predict(x) - f64::from(y);
        for (g, v) in grad_w.iter_mut().zip(x.values.iter()) {
            *g += residual * v;
        }
        grad_b += residual;
    }
    let n = features.len() as f64;
    for g in &mut grad_w {
        *g /= n;
    }
    (grad_w, grad_b / n)
}

/// Training hyperparameters for the reference scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Reserved for stochastic variants; full-batch descent ignores it.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> TrainOptions {
        TrainOptions {
            learning_rate: 0.1,
            epochs: 200,
            seed: 0,
        }
    }
}

/// A trained model together with its loss history: the loss before training
/// and after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: LogisticModel,
    pub loss_trace: Vec<f64>,
}

/// Full-batch gradient descent on mean binary cross-entropy, starting from
/// all-zero parameters. The corpus must contain both labels.
pub fn train_logistic(
    corpus: &[RankerInstance],
    stop: &StopWordList,
    lex: &SynonymLexicon,
    options: &TrainOptions,
) -> Result<TrainedModel> {
    if options.learning_rate <= 0.0 || !options.learning_rate.is_finite() {
        return Err(Error::config("learning rate must be positive and finite"));
    }
    if options.epochs == 0 {
        return Err(Error::config("epoch count must be at least 1"));
    }
    let has_positive = corpus.iter().any(|i| i.label == 1);
    let has_negative = corpus.iter().any(|i| i.label == 0);
    if !has_positive || !has_negative {
        return Err(Error::data(
            "training corpus must contain both positive and negative instances",
        ));
    }
    if let Some(bad) = corpus.iter().find(|i| i.label > 1) {
        return Err(Error::data(format!(
            "instance for question '{}' has label {}, expected 0 or 1",
            bad.question_id, bad.label
        )));
    }

    let features: Vec<FeatureVector> = corpus
        .iter()
        .map(|i| extract_features(&i.question_text, &i.answer, stop, lex))
        .collect();
    let labels: Vec<u8> = corpus.iter().map(|i| i.label).collect();

    let mut model = LogisticModel::zeros();
    let mut loss_trace = Vec::with_capacity(options.epochs + 1);
    loss_trace.push(mean_bce_loss(&model, &features, &labels));
    for _ in 0..options.epochs {
        let (grad_w, grad_b) = mean_bce_gradient(&model, &features, &labels);
        for (w, g) in model.weights.iter_mut().zip(grad_w) {
            *w -= options.learning_rate * g;
        }
        model.bias -= options.learning_rate * grad_b;
        loss_trace.push(mean_bce_loss(&model, &features, &labels));
    }
    Ok(TrainedModel { model, loss_trace })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    weights: Vec<f64>,
    bias: f64,
    feature_version: String,
}

/// Persist the model as a single JSON document tagged with the feature
/// layout it was trained under.
pub fn save_model(model: &LogisticModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = ModelFile {
        weights: model.weights.clone(),
        bias: model.bias,
        feature_version: FEATURE_VERSION.to_string(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::data(format!("serializing model: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LogisticModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    if file.feature_version != FEATURE_VERSION {
        return Err(Error::data(format!(
            "model file {} uses feature layout '{}', this build expects '{FEATURE_VERSION}'",
            path.display(),
            file.feature_version
        )));
    }
    if file.weights.len() != FEATURE_DIM {
        return Err(Error::data(format!(
            "model file {} has {} weights, expected {FEATURE_DIM}",
            path.display(),
            file.weights.len()
        )));
    }
    if !file.bias.is_finite() || file.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::data(format!(
            "model file {} contains non-finite parameters",
            path.display()
        )));
    }
    Ok(LogisticModel {
        weights: file.weights,
        bias: file.bias,
    })
}

/// A plausibility scorer the ranking stage can call. Scores must be in
/// [0, 1], one per answer, in answer order.
pub trait ScorerBackend: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, question_text: &str, answers: &[String]) -> Result<Vec<f64>>;

    /// See [`crate::generate::GeneratorBackend::supports_pipelining`].
    fn supports_pipelining(&self) -> bool {
        false
    }
}

/// In-process scorer: the logistic model applied to lexical features.
pub struct LogisticScorer {
    model: LogisticModel,
    stop: StopWordList,
    lex: SynonymLexicon,
}

impl LogisticScorer {
    pub fn new(model: LogisticModel, stop: StopWordList, lex: SynonymLexicon) -> LogisticScorer {
        LogisticScorer { model, stop, lex }
    }

    /// An all-zero model: every answer scores 0.5, so ranking preserves the
    /// incoming order.
    pub fn untrained(stop: StopWordList, lex: SynonymLexicon) -> LogisticScorer {
        LogisticScorer::new(LogisticModel::zeros(), stop, lex)
    }
}

impl ScorerBackend for LogisticScorer {
    fn name(&self) -> &str {
        "logistic"
    }

    fn score(&self, question_text: &str, answers: &[String]) -> Result<Vec<f64>> {
        Ok(answers
            .iter()
            .map(|answer| {
                self.model.predict(&extract_features(
                    question_text,
                    answer,
                    &self.stop,
                    &self.lex,
                ))
            })
            .collect())
    }
}

/// One ranked answer with its plausibility score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub answer: String,
    pub plausibility: f64,
}

/// Score the candidates, sort by plausibility descending (ties keep the
/// incoming confidence order), and keep the best `final_count`.
pub fn rank_answers(
    question: &Question,
    candidates: &[Candidate],
    scorer: &dyn ScorerBackend,
    final_count: usize,
) -> Result<Vec<RankedAnswer>> {
    if final_count == 0 {
        return Err(Error::config("final answer count must be at least 1"));
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    let answers: Vec<String> = candidates.iter().map(|c| c.text.clone()).collect();
    let scores = scorer.score(&question.text, &answers)?;
    if scores.len() != answers.len() {
        return Err(Error::backend(
            scorer.name(),
            format!(
                "returned {} scores for {} answers",
                scores.len(),
                answers.len()
            ),
        ));
    }
    for &score in &scores {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::backend(
                scorer.name(),
                format!("score {score} is outside [0, 1]"),
            ));
        }
    }

    let mut ranked: Vec<RankedAnswer> = answers
        .into_iter()
        .zip(scores)
        .map(|(answer, plausibility)| RankedAnswer {
            answer,
            plausibility,
        })
        .collect();
    ranked.sort_by(|a, b| b.plausibility.partial_cmp(&a.plausibility).unwrap());
    ranked.truncate(final_count);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AnswerCluster;

    fn stop() -> StopWordList {
        StopWordList::bundled()
    }

    fn question(id: &str, text: &str) -> Question {
        Question::new(id, text).unwrap()
    }

    fn clusters(specs: &[(u32, &[&str])]) -> GroundTruthClusters {
        GroundTruthClusters::new(
            "gt",
            specs
                .iter()
                .map(|(weight, answers)| {
                    AnswerCluster::new(
                        None,
                        *weight,
                        answers.iter().map(|a| a.to_string()).collect(),
                    )
                    .unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn features_count_shared_content_lemmas() {
        let lex = SynonymLexicon::empty();
        let f = extract_features(
            "Name something an athlete keeps in her refrigerator?",
            "athlete refrigerator",
            &stop(),
            &lex,
        );
        assert_eq!(f.values[0], 2.0);
        assert_eq!(f.values[1], 1.0);
        assert_eq!(f.values[2], 2.0);
        assert_eq!(f.values[3], 1.0);
        assert!((f.values[4] - 20.0 / 32.0).abs() < 1e-12);
        assert_eq!(f.values[5], 0.0);
    }

    #[test]
    fn features_zero_overlap() {
        let lex = SynonymLexicon::empty();
        let f = extract_features("Name a fruit?", "zebra", &stop(), &lex);
        assert_eq!(f.values[0], 0.0);
        assert_eq!(f.values[1], 0.0);
        assert_eq!(f.values[2], 1.0);
        assert_eq!(f.values[3], 0.0);
        assert_eq!(f.values[5], 1.0);
    }

    #[test]
    fn features_empty_answer_all_zero() {
        let lex = SynonymLexicon::empty();
        let f = extract_features("Name a fruit?", "", &stop(), &lex);
        assert_eq!(f.values, [0.0; FEATURE_DIM]);
    }

    #[test]
    fn synonym_feature_uses_the_lexicon() {
        let lex = SynonymLexicon::from_synsets(&[vec!["bike".to_string(), "bicycle".to_string()]]);
        let f = extract_features("Name a part of a bike?", "bicycle", &stop(), &lex);
        assert_eq!(f.values[0], 0.0, "different lemmas");
        assert_eq!(f.values[3], 1.0, "same synonym class");
    }

    fn toy_dataset() -> Vec<(Question, GroundTruthClusters)> {
        vec![
            (
                question("a", "Name something found in a kitchen?"),
                clusters(&[(30, &["refrigerator", "fridge"]), (10, &["sink"])]),
            ),
            (
                question("b", "Name an animal in a zoo?"),
                clusters(&[(20, &["lion"]), (5, &["zebra"])]),
            ),
            (question("c", "Name a fruit?"), clusters(&[(8, &["apple"])])),
        ]
    }

    #[test]
    fn corpus_is_balanced_and_deterministic() {
        let lex = SynonymLexicon::empty();
        let corpus = build_ranker_corpus(&toy_dataset(), 2, 7, &stop(), &lex).unwrap();
        assert!(corpus.skipped.is_empty());
        for id in ["a", "b", "c"] {
            let pos = corpus
                .instances
                .iter()
                .filter(|i| i.question_id == id && i.label == 1)
                .count();
            let neg = corpus
                .instances
                .iter()
                .filter(|i| i.question_id == id && i.label == 0)
                .count();
            assert_eq!(pos, neg, "question {id}");
        }
        // question c has a single cluster, so min(n, #clusters) = 1
        assert_eq!(
            corpus
                .instances
                .iter()
                .filter(|i| i.question_id == "c" && i.label == 1)
                .count(),
            1
        );
        // positives are the first answer of each top cluster
        let a_pos: Vec<&str> = corpus
            .instances
            .iter()
            .filter(|i| i.question_id == "a" && i.label == 1)
            .map(|i| i.answer.as_str())
            .collect();
        assert_eq!(a_pos, ["refrigerator", "sink"]);

        let again = build_ranker_corpus(&toy_dataset(), 2, 7, &stop(), &lex).unwrap();
        assert_eq!(corpus, again);
    }

    #[test]
    fn negatives_never_match_target_gold_forms() {
        let lex =
            SynonymLexicon::from_synsets(&[vec!["fridge".to_string(), "refrigerator".to_string()]]);
        for seed in 0..20 {
            let corpus = build_ranker_corpus(&toy_dataset(), 2, seed, &stop(), &lex).unwrap();
            for instance in corpus.instances.iter().filter(|i| i.label == 0) {
                let (_, gold) = toy_dataset()
                    .into_iter()
                    .find(|(q, _)| q.id == instance.question_id)
                    .unwrap();
                let neg_form = normal_form(&instance.answer, &stop(), &lex);
                for cluster in gold.iter() {
                    for answer in &cluster.answers {
                        assert_ne!(
                            normal_form(answer, &stop(), &lex),
                            neg_form,
                            "negative '{}' collides with gold '{}'",
                            instance.answer,
                            answer
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn exhausted_pools_skip_the_question() {
        let lex = SynonymLexicon::from_synsets(&[vec!["bike".to_string(), "bicycle".to_string()]]);
        let dataset = vec![
            (
                question("a", "Name a vehicle?"),
                clusters(&[(5, &["bike"])]),
            ),
            (
                question("b", "Name something with wheels?"),
                clusters(&[(5, &["bicycle"])]),
            ),
        ];
        let corpus = build_ranker_corpus(&dataset, 1, 3, &stop(), &lex).unwrap();
        assert_eq!(corpus.skipped, ["a", "b"]);
        assert!(corpus.instances.is_empty());
    }

    #[test]
    fn small_datasets_are_rejected() {
        let lex = SynonymLexicon::empty();
        assert!(build_ranker_corpus(&[], 2, 0, &stop(), &lex).is_err());
        let single = vec![(question("a", "Name a fruit?"), clusters(&[(5, &["apple"])]))];
        assert!(build_ranker_corpus(&single, 2, 0, &stop(), &lex).is_err());
    }

    #[test]
    fn corpus_file_round_trip() {
        let instances = vec![
            RankerInstance {
                question_id: "a".into(),
                question_text: "Name a fruit?".into(),
                answer: "apple".into(),
                label: 1,
            },
            RankerInstance {
                question_id: "a".into(),
                question_text: "Name a fruit?".into(),
                answer: "lion".into(),
                label: 0,
            },
        ];
        let file = tempfile::NamedTempFile::new().unwrap();
        write_ranker_corpus(file.path(), &instances).unwrap();
        assert_eq!(load_ranker_corpus(file.path()).unwrap(), instances);
    }

    #[test]
    fn corpus_loader_rejects_bad_labels() {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(
            file.path(),
            "{\"id\":\"a\",\"question\":\"q\",\"answer\":\"x\",\"label\":2}\n",
        )
        .unwrap();
        assert!(load_ranker_corpus(file.path()).is_err());
    }

    fn separable_corpus() -> Vec<RankerInstance> {
        let make = |answer: &str, label: u8| RankerInstance {
            question_id: "q".into(),
            question_text: "Name something about apples and bananas?".into(),
            answer: answer.into(),
            label,
        };
        vec![
            make("apple banana", 1),
            make("banana", 1),
            make("zebra", 0),
            make("yak", 0),
        ]
    }

    #[test]
    fn training_starts_at_ln_two() {
        let lex = SynonymLexicon::empty();
        let trained = train_logistic(
            &separable_corpus(),
            &stop(),
            &lex,
            &TrainOptions {
                learning_rate: 0.5,
                epochs: 3,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(trained.loss_trace.len(), 4);
        assert!((trained.loss_trace[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn training_separates_the_toy_corpus() {
        let lex = SynonymLexicon::empty();
        let corpus = separable_corpus();
        let trained = train_logistic(
            &corpus,
            &stop(),
            &lex,
            &TrainOptions {
                learning_rate: 0.5,
                epochs: 200,
                seed: 0,
            },
        )
        .unwrap();
        for instance in &corpus {
            let features =
                extract_features(&instance.question_text, &instance.answer, &stop(), &lex);
            let v = trained.model.predict(&features);
            if instance.label == 1 {
                assert!(v > 0.5, "positive '{}' scored {v}", instance.answer);
            } else {
                assert!(v < 0.5, "negative '{}' scored {v}", instance.answer);
            }
        }
    }

    #[test]
    fn small_learning_rate_gives_non_increasing_loss() {
        let lex = SynonymLexicon::empty();
        let trained = train_logistic(
            &separable_corpus(),
            &stop(),
            &lex,
            &TrainOptions {
                learning_rate: 0.01,
                epochs: 100,
                seed: 0,
            },
        )
        .unwrap();
        for pair in trained.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "loss rose: {pair:?}");
        }
    }

    #[test]
    fn single_label_corpora_are_rejected() {
        let lex = SynonymLexicon::empty();
        let positives_only: Vec<RankerInstance> = separable_corpus()
            .into_iter()
            .filter(|i| i.label == 1)
            .collect();
        assert!(train_logistic(&positives_only, &stop(), &lex, &TrainOptions::default()).is_err());
        assert!(train_logistic(&[], &stop(), &lex, &TrainOptions::default()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let lex = SynonymLexicon::empty();
        let corpus = separable_corpus();
        let features: Vec<FeatureVector> = corpus
            .iter()
            .map(|i| extract_features(&i.question_text, &i.answer, &stop(), &lex))
            .collect();
        let labels: Vec<u8> = corpus.iter().map(|i| i.label).collect();
        let model = LogisticModel {
            weights: vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.2],
            bias: 0.1,
        };
        let (grad_w, grad_b) = mean_bce_gradient(&model, &features, &labels);
        let h = 1e-6;
        for (d, &analytic) in grad_w.iter().enumerate() {
            let mut plus = model.clone();
            plus.weights[d] += h;
            let mut minus = model.clone();
            minus.weights[d] -= h;
            let fd = (mean_bce_loss(&plus, &features, &labels)
                - mean_bce_loss(&minus, &features, &labels))
                / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 1e-6 * fd.abs().max(1.0),
                "dim {d}: fd={fd} analytic={analytic}"
            );
        }
        let mut plus = model.clone();
        plus.bias += h;
        let mut minus = model.clone();
        minus.bias -= h;
        let fd = (mean_bce_loss(&plus, &features, &labels)
            - mean_bce_loss(&minus, &features, &labels))
            / (2.0 * h);
        assert!((fd - grad_b).abs() <= 1e-6 * fd.abs().max(1.0));
    }

    #[test]
    fn model_file_round_trip_and_version_check() {
        let model = LogisticModel {
            weights: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            bias: -0.25,
        };
        let file = tempfile::NamedTempFile::new().unwrap();
        save_model(&model, file.path()).unwrap();
        assert_eq!(load_model(file.path()).unwrap(), model);

        std::fs::write(
            file.path(),
            r#"{"weights":[0,0,0,0,0,0],"bias":0,"feature_version":"other"}"#,
        )
        .unwrap();
        assert!(load_model(file.path()).is_err());

        std::fs::write(
            file.path(),
            r#"{"weights":[0,0],"bias":0,"feature_version":"lexical-6/1"}"#,
        )
        .unwrap();
        assert!(load_model(file.path()).is_err());
    }

    struct FixedScorer(Vec<f64>);

    impl ScorerBackend for FixedScorer {
        fn name(&self) -> &str {
            "fixed"
        }
        fn score(&self, _question: &str, answers: &[String]) -> Result<Vec<f64>> {
            Ok(self.0[..answers.len()].to_vec())
        }
    }

    fn candidates(texts: &[&str]) -> Vec<Candidate> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Candidate {
                text: t.to_string(),
                confidence: -(i as f64),
            })
            .collect()
    }

    #[test]
    fn ranking_sorts_by_score() {
        let q = question("q", "Name a drink?");
        let scorer = FixedScorer(vec![0.2, 0.9, 0.5]);
        let ranked = rank_answers(&q, &candidates(&["a", "b", "c"]), &scorer, 10).unwrap();
        let order: Vec<&str> = ranked.iter().map(|r| r.answer.as_str()).collect();
        assert_eq!(order, ["b", "c", "a"]);
        assert_eq!(ranked[0].plausibility, 0.9);
    }

    #[test]
    fn constant_scores_preserve_input_order_and_truncate() {
        let q = question("q", "Name a drink?");
        let texts: Vec<String> = (0..12).map(|i| format!("answer{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let scorer = FixedScorer(vec![0.5; 12]);
        let ranked = rank_answers(&q, &candidates(&refs), &scorer, 10).unwrap();
        assert_eq!(ranked.len(), 10);
        for (i, r) in ranked.iter().enumerate() {
            assert_eq!(r.answer, format!("answer{i}"));
        }
    }

    #[test]
    fn out_of_range_scores_name_the_backend() {
        let q = question("q", "Name a drink?");
        let scorer = FixedScorer(vec![1.2]);
        let err = rank_answers(&q, &candidates(&["a"]), &scorer, 10).unwrap_err();
        assert!(err.is_backend());
        assert!(err.to_string().contains("fixed"), "{err}");
    }

    #[test]
    fn untrained_scorer_is_constant_half() {
        let scorer = LogisticScorer::untrained(stop(), SynonymLexicon::empty());
        let scores = scorer
            .score("Name a drink?", &["beer".into(), "coke".into()])
            .unwrap();
        assert_eq!(scores, [0.5, 0.5]);
    }

    #[test]
    fn empty_candidates_rank_to_empty() {
        let q = question("q", "Name a drink?");
        let scorer = FixedScorer(vec![]);
        assert!(rank_answers(&q, &[], &scorer, 10).unwrap().is_empty());
        assert!(rank_answers(&q, &[], &scorer, 0).is_err());
    }
}
