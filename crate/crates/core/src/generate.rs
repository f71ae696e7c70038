//! Prompt assembly and generator-backend mediation: build the marker-framed
//! prompt, request beam candidates, and rank them by summed token
//! log-probability.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::retrieve::KnowledgeSet;
use crate::rewrite::RewrittenQuestion;

/// Raw candidates requested from the generator per prompt unless configured
/// otherwise. Twice the usual retained count, leaving headroom for merges.
pub const DEFAULT_BEAM_WIDTH: usize = 24;

/// Maximum answer length, in generator tokens.
pub const DEFAULT_MAX_ANSWER_TOKENS: usize = 3;

/// The four literal marker strings framing a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerSet {
    pub bos: String,
    pub sep: String,
    pub mask: String,
    pub eos: String,
}

impl MarkerSet {
    pub fn new(
        bos: impl Into<String>,
        sep: impl Into<String>,
        mask: impl Into<String>,
        eos: impl Into<String>,
    ) -> Result<MarkerSet> {
        let markers = MarkerSet {
            bos: bos.into(),
            sep: sep.into(),
            mask: mask.into(),
            eos: eos.into(),
        };
        let all = markers.all();
        if all.iter().any(|m| m.is_empty()) {
            return Err(Error::config("prompt markers must be non-empty"));
        }
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a == b {
                    return Err(Error::config(format!(
                        "prompt markers must be pairwise distinct, got '{a}' twice"
                    )));
                }
            }
        }
        Ok(markers)
    }

    fn all(&self) -> [&str; 4] {
        [&self.bos, &self.sep, &self.mask, &self.eos]
    }
}

impl Default for MarkerSet {
    fn default() -> MarkerSet {
        MarkerSet::new("<BOS>", "<SEP>", "<MASK>", "<EOS>").expect("default markers valid")
    }
}

/// A fully rendered generation prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub markers: MarkerSet,
}

/// Lay out the prompt as BOS, knowledge, SEP, rewritten question, MASK, EOS,
/// joined by single spaces. An empty knowledge set leaves its slot blank but
/// keeps the frame.
pub fn build_prompt(
    knowledge: &KnowledgeSet,
    rq: &RewrittenQuestion,
    markers: &MarkerSet,
) -> Prompt {
    let text = format!(
        "{} {} {} {} {} {}",
        markers.bos, knowledge.rendered, markers.sep, rq.text, markers.mask, markers.eos
    );
    Prompt {
        text,
        markers: markers.clone(),
    }
}

/// One beam candidate as the backend reports it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

/// An answer candidate scored by its summed token log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub confidence: f64,
}

/// Sum the per-token log-probabilities of one raw candidate. Fails on an
/// empty list or on any entry that is positive (or not a number), since a
/// log-probability above zero cannot come from a probability distribution.
pub fn candidate_confidence(raw: &RawCandidate) -> Result<f64> {
    if raw.token_logprobs.is_empty() {
        return Err(Error::data(format!(
            "candidate '{}' has no token log-probabilities",
            raw.text
        )));
    }
    for &lp in &raw.token_logprobs {
        if lp.is_nan() || lp > 0.0 {
            return Err(Error::data(format!(
                "candidate '{}' has invalid token log-probability {lp}",
                raw.text
            )));
        }
    }
    Ok(raw.token_logprobs.iter().sum())
}

/// A generator the pipeline can request candidates from. Implementations
/// must return at most `beam_width` candidates.
pub trait GeneratorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn generate(
        &self,
        prompt: &Prompt,
        beam_width: usize,
        max_answer_tokens: usize,
    ) -> Result<Vec<RawCandidate>>;

    /// Whether concurrent in-flight requests are allowed. Connections default
    /// to one request at a time.
    fn supports_pipelining(&self) -> bool {
        false
    }
}

/// Request up to `beam_width` candidates for the prompt and return them
/// sorted by confidence descending (ties keep backend order). Empty-text
/// candidates are dropped; marker leakage or an over-long batch is treated
/// as a malformed backend response.
pub fn generate_candidates(
    backend: &dyn GeneratorBackend,
    prompt: &Prompt,
    beam_width: usize,
    max_answer_tokens: usize,
) -> Result<Vec<Candidate>> {
    if beam_width == 0 {
        return Err(Error::config("beam_width must be at least 1"));
    }
    if max_answer_tokens == 0 {
        return Err(Error::config("max_answer_tokens must be at least 1"));
    }

    let raw = backend.generate(prompt, beam_width, max_answer_tokens)?;
    if raw.len() > beam_width {
        return Err(Error::backend(
            backend.name(),
            format!(
                "returned {} candidates for a beam width of {beam_width}",
                raw.len()
            ),
        ));
    }

    let mut candidates = Vec::with_capacity(raw.len());
    for item in &raw {
        if item.text.is_empty() {
            continue;
        }
        if prompt.markers.all().iter().any(|m| item.text.contains(m)) {
            return Err(Error::backend(
                backend.name(),
                format!("candidate '{}' leaks a prompt marker", item.text),
            ));
        }
        let confidence = candidate_confidence(item)
            .map_err(|e| Error::backend(backend.name(), e.to_string()))?;
        candidates.push(Candidate {
            text: item.text.clone(),
            confidence,
        });
    }
    candidates.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
    Ok(candidates)
}

/// Serialized candidate list for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub candidates: Vec<Candidate>,
}

pub fn write_candidate_lines(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = CandidateRecord>,
) -> Result<()> {
    jsonl::write_records(path.as_ref(), records)
}

pub fn load_candidate_lines(path: impl AsRef<Path>) -> Result<Vec<CandidateRecord>> {
    Ok(jsonl::read_records(path.as_ref())?
        .into_iter()
        .map(|(_, record)| record)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn knowledge(rendered: &str) -> KnowledgeSet {
        KnowledgeSet {
            items: Vec::new(),
            rendered: rendered.to_string(),
        }
    }

    fn rewritten(text: &str) -> RewrittenQuestion {
        RewrittenQuestion {
            text: text.to_string(),
            matched_prefix: None,
            content: String::new(),
        }
    }

    #[test]
    fn prompt_layout_with_knowledge() {
        let prompt = build_prompt(
            &knowledge("athlete: A person."),
            &rewritten("One thing an athlete eats is"),
            &MarkerSet::default(),
        );
        assert_eq!(
            prompt.text,
            "<BOS> athlete: A person. <SEP> One thing an athlete eats is <MASK> <EOS>"
        );
    }

    #[test]
    fn prompt_keeps_empty_knowledge_slot() {
        let prompt = build_prompt(
            &knowledge(""),
            &rewritten("One fruit is"),
            &MarkerSet::default(),
        );
        assert_eq!(prompt.text, "<BOS>  <SEP> One fruit is <MASK> <EOS>");
    }

    #[test]
    fn prompt_markers_are_configurable() {
        let markers = MarkerSet::new("A", "B", "C", "D").unwrap();
        let prompt = build_prompt(&knowledge("k"), &rewritten("q"), &markers);
        assert_eq!(prompt.text, "A k B q C D");
    }

    #[test]
    fn marker_set_validation() {
        assert!(MarkerSet::new("", "<SEP>", "<MASK>", "<EOS>").is_err());
        assert!(MarkerSet::new("<X>", "<X>", "<MASK>", "<EOS>").is_err());
        assert!(MarkerSet::new("<extra_id_0>", "<SEP>", "<MASK>", "<EOS>").is_ok());
    }

    #[test]
    fn confidence_sums_logprobs() {
        let raw = RawCandidate {
            text: "beer".into(),
            token_logprobs: vec![-0.5],
        };
        assert_eq!(candidate_confidence(&raw).unwrap(), -0.5);
        let raw = RawCandidate {
            text: "ice cream".into(),
            token_logprobs: vec![-0.1, -0.2, -0.3],
        };
        assert!((candidate_confidence(&raw).unwrap() - (-0.6)).abs() < 1e-15);
    }

    #[test]
    fn confidence_rejects_bad_inputs() {
        let empty = RawCandidate {
            text: "x".into(),
            token_logprobs: vec![],
        };
        assert!(candidate_confidence(&empty).is_err());
        let positive = RawCandidate {
            text: "x".into(),
            token_logprobs: vec![-0.1, 0.2],
        };
        assert!(candidate_confidence(&positive).is_err());
        let nan = RawCandidate {
            text: "x".into(),
            token_logprobs: vec![f64::NAN],
        };
        assert!(candidate_confidence(&nan).is_err());
    }

    struct CannedBackend(Vec<RawCandidate>);

    impl GeneratorBackend for CannedBackend {
        fn name(&self) -> &str {
            "canned"
        }
        fn generate(
            &self,
            _prompt: &Prompt,
            _beam_width: usize,
            _max_answer_tokens: usize,
        ) -> Result<Vec<RawCandidate>> {
            Ok(self.0.clone())
        }
    }

    fn raw(text: &str, logprobs: &[f64]) -> RawCandidate {
        RawCandidate {
            text: text.into(),
            token_logprobs: logprobs.to_vec(),
        }
    }

    fn default_prompt() -> Prompt {
        build_prompt(&knowledge("k"), &rewritten("q is"), &MarkerSet::default())
    }

    #[test]
    fn candidates_sorted_by_confidence_with_stable_ties() {
        let backend = CannedBackend(vec![
            raw("slowest", &[-2.0]),
            raw("tie-first", &[-1.0]),
            raw("tie-second", &[-0.5, -0.5]),
            raw("best", &[-0.25]),
        ]);
        let out = generate_candidates(&backend, &default_prompt(), 10, 3).unwrap();
        let texts: Vec<&str> = out.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["best", "tie-first", "tie-second", "slowest"]);
    }

    #[test]
    fn empty_text_candidates_are_dropped() {
        let backend = CannedBackend(vec![raw("", &[-1.0]), raw("kept", &[-2.0])]);
        let out = generate_candidates(&backend, &default_prompt(), 10, 3).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text, "kept");
    }

    #[test]
    fn empty_backend_response_is_valid() {
        let backend = CannedBackend(vec![]);
        assert!(generate_candidates(&backend, &default_prompt(), 10, 3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn overlong_batch_is_a_backend_error() {
        let backend = CannedBackend(vec![raw("a", &[-1.0]), raw("b", &[-1.0])]);
        let err = generate_candidates(&backend, &default_prompt(), 1, 3).unwrap_err();
        assert!(err.is_backend(), "{err}");
    }

    #[test]
    fn marker_leakage_is_a_backend_error() {
        let backend = CannedBackend(vec![raw("word <MASK> word", &[-1.0])]);
        let err = generate_candidates(&backend, &default_prompt(), 10, 3).unwrap_err();
        assert!(err.is_backend(), "{err}");
    }

    #[test]
    fn invalid_logprobs_become_backend_errors() {
        let backend = CannedBackend(vec![raw("x", &[0.5])]);
        let err = generate_candidates(&backend, &default_prompt(), 10, 3).unwrap_err();
        assert!(err.is_backend(), "{err}");
    }

    #[test]
    fn zero_beam_width_rejected() {
        let backend = CannedBackend(vec![]);
        assert!(generate_candidates(&backend, &default_prompt(), 0, 3).is_err());
        assert!(generate_candidates(&backend, &default_prompt(), 1, 0).is_err());
    }

    #[test]
    fn candidate_lines_round_trip() {
        let records = vec![
            CandidateRecord {
                id: "q1".into(),
                candidates: vec![
                    Candidate {
                        text: "beer".into(),
                        confidence: -0.1,
                    },
                    Candidate {
                        text: "ice cream".into(),
                        confidence: -0.25,
                    },
                ],
            },
            CandidateRecord {
                id: "q2".into(),
                candidates: vec![],
            },
        ];
        let file = tempfile::NamedTempFile::new().unwrap();
        write_candidate_lines(file.path(), records.clone()).unwrap();
        assert_eq!(load_candidate_lines(file.path()).unwrap(), records);
    }

    proptest! {
        // Exactly-representable log-probs make sum additivity exact: the
        // confidence of a concatenated token list equals the sum of the two
        // separate confidences.
        #[test]
        fn confidence_is_additive(
            a in proptest::collection::vec(-400i32..=0, 1..8),
            b in proptest::collection::vec(-400i32..=0, 1..8),
        ) {
            let to_lp = |v: &Vec<i32>| v.iter().map(|x| f64::from(*x) / 4.0).collect::<Vec<f64>>();
            let (la, lb) = (to_lp(&a), to_lp(&b));
            let combined = RawCandidate { text: "x".into(), token_logprobs: [la.clone(), lb.clone()].concat() };
            let ca = candidate_confidence(&RawCandidate { text: "x".into(), token_logprobs: la }).unwrap();
            let cb = candidate_confidence(&RawCandidate { text: "x".into(), token_logprobs: lb }).unwrap();
            prop_assert_eq!(candidate_confidence(&combined).unwrap(), ca + cb);
        }

        #[test]
        fn output_is_sorted_and_a_sub_multiset(
            logprobs in proptest::collection::vec(-60i32..=0, 0..12),
        ) {
            let raws: Vec<RawCandidate> = logprobs
                .iter()
                .enumerate()
                .map(|(i, lp)| raw(&format!("c{i}"), &[f64::from(*lp) / 4.0]))
                .collect();
            let backend = CannedBackend(raws.clone());
            let out = generate_candidates(&backend, &default_prompt(), 12, 3).unwrap();
            prop_assert_eq!(out.len(), raws.len());
            for pair in out.windows(2) {
                prop_assert!(pair[0].confidence >= pair[1].confidence);
            }
        }
    }
}
