//! Dictionary-based answer deduplication.
//!
//! Candidates are reduced to a [`NormalForm`] — the set of synonym-class ids
//! of their content lemmas — and candidates sharing a normal form are merged,
//! keeping the one with the highest confidence.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::data::normalize_text;
use crate::error::{Error, Result};
use crate::generate::Candidate;
use crate::retrieve::lemmatize;

/// How many answers survive deduplication by default; two more than the
/// final ranked list so the ranker has something to drop.
pub const DEFAULT_RETAIN: usize = 12;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// A set of lowercase stop words.
#[derive(Debug, Clone, Default)]
pub struct StopWordList {
    words: HashSet<String>,
}

impl StopWordList {
    /// The bundled English list.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }

    /// An empty list (nothing is treated as a stop word).
    pub fn empty() -> Self {
        StopWordList::default()
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        StopWordList {
            words: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
        }
    }

    /// Load from a file with one word per line; `#` starts a comment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        Ok(Self::parse(&text))
    }

    fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| l.to_lowercase())
            .collect();
        StopWordList { words }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Synonym sets merged into transitive-closure classes.
///
/// Each lemma maps to a canonical class id (the lexicographically smallest
/// lemma of its merged class); lemmas absent from every synset are their own
/// singleton class.
#[derive(Debug, Clone, Default)]
pub struct SynonymLexicon {
    class_of: HashMap<String, String>,
}

impl SynonymLexicon {
    /// A lexicon with no synsets: every lemma is its own class.
    pub fn empty() -> Self {
        SynonymLexicon::default()
    }

    /// Build from synsets, merging any synsets that share a lemma.
    pub fn from_synsets<I, S, T>(synsets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = T>,
        T: Into<String>,
    {
        // Union-find over lemma indexes.
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut lemmas: Vec<String> = Vec::new();
        let mut parent: Vec<usize> = Vec::new();

        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }

        for synset in synsets {
            let mut first: Option<usize> = None;
            for lemma in synset {
                let lemma = lemma.into().to_lowercase();
                let idx = *index.entry(lemma.clone()).or_insert_with(|| {
                    lemmas.push(lemma.clone());
                    parent.push(lemmas.len() - 1);
                    lemmas.len() - 1
                });
                match first {
                    None => first = Some(idx),
                    Some(f) => {
                        let (ra, rb) = (find(&mut parent, f), find(&mut parent, idx));
                        if ra != rb {
                            parent[rb] = ra;
                        }
                    }
                }
            }
        }

        // Canonical id: smallest lemma in the class.
        let mut canonical: HashMap<usize, String> = HashMap::new();
        for (i, lemma) in lemmas.iter().enumerate() {
            let root = find(&mut parent, i);
            canonical
                .entry(root)
                .and_modify(|c| {
                    if lemma < c {
                        *c = lemma.clone();
                    }
                })
                .or_insert_with(|| lemma.clone());
        }
        let class_of = (0..lemmas.len())
            .map(|i| {
                let root = find(&mut parent, i);
                (lemmas[i].clone(), canonical[&root].clone())
            })
            .collect();
        SynonymLexicon { class_of }
    }

    /// Load from a file with one synset per line, lemmas space-separated.
    /// `#` starts a comment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut synsets: Vec<Vec<String>> = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            synsets.push(content.split_whitespace().map(str::to_string).collect());
        }
        Ok(Self::from_synsets(synsets))
    }

    /// The synonym-class id of a lemma. Unknown lemmas are their own class.
    pub fn class_of(&self, lemma: &str) -> String {
        self.class_of
            .get(lemma)
            .cloned()
            .unwrap_or_else(|| lemma.to_string())
    }
}

/// The set of synonym-class ids of an answer's content lemmas. Two answers
/// with equal normal forms are considered duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NormalForm {
    class_ids: BTreeSet<String>,
}

impl NormalForm {
    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = &str> {
        self.class_ids.iter().map(String::as_str)
    }
}

/// Normalize, drop stop words, lemmatize, and map each lemma to its synonym
/// class.
pub fn normal_form(answer: &str, stop: &StopWordList, lex: &SynonymLexicon) -> NormalForm {
    let class_ids = normalize_text(answer)
        .iter()
        .filter(|t| !stop.contains(t))
        .map(|t| lex.class_of(&lemmatize(t)))
        .collect();
    NormalForm { class_ids }
}

/// Lemma set without any synonym mapping; the exact-match flavor used by the
/// evaluator's default policy.
pub fn lemma_set(answer: &str, stop: &StopWordList) -> NormalForm {
    let class_ids = normalize_text(answer)
        .iter()
        .filter(|t| !stop.contains(t))
        .map(|t| lemmatize(t))
        .collect();
    NormalForm { class_ids }
}

/// Merge candidates that share a normal form, keeping the highest-confidence
/// member of each group. Expects the input sorted by confidence descending;
/// the output preserves that order. Candidates whose normal form is empty are
/// dropped.
pub fn dedup(
    candidates: &[Candidate],
    stop: &StopWordList,
    lex: &SynonymLexicon,
) -> Vec<Candidate> {
    let mut seen: HashSet<NormalForm> = HashSet::new();
    let mut survivors = Vec::new();
    for candidate in candidates {
        let nf = normal_form(&candidate.text, stop, lex);
        if nf.is_empty() {
            continue;
        }
        if seen.insert(nf) {
            survivors.push(candidate.clone());
        }
    }
    survivors
}

/// Keep the first `limit` candidates (the input is confidence-sorted).
pub fn retain_top(candidates: &[Candidate], limit: usize) -> Vec<Candidate> {
    candidates[..limit.min(candidates.len())].to_vec()
}
