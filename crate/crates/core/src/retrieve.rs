//! Dictionary-knowledge retrieval: lemmatized lookup of keywords in a
//! dictionary dump, query templating, and embedding-scored selection of the
//! definition that fits the question.
//!
//! Dump line format: `{"lemma": "athlete", "definitions": ["..."]}`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{normalize_text, Question};
use crate::dedup::StopWordList;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::keywords::KeywordList;

/// Irregular forms checked before the suffix rules.
const LEMMA_EXCEPTIONS: &[(&str, &str)] = &[
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("people", "person"),
    ("wives", "wife"),
    ("knives", "knife"),
    ("leaves", "leaf"),
    ("lives", "life"),
    ("shelves", "shelf"),
    ("wolves", "wolf"),
    ("halves", "half"),
    ("shoes", "shoe"),
    ("goes", "go"),
    ("heroes", "hero"),
    ("potatoes", "potato"),
    ("tomatoes", "tomato"),
    ("was", "be"),
    ("were", "be"),
    ("is", "be"),
    ("are", "be"),
    ("am", "be"),
    ("been", "be"),
    ("has", "have"),
    ("had", "have"),
    ("does", "do"),
    ("did", "do"),
    ("went", "go"),
    ("gone", "go"),
    ("ran", "run"),
    ("running", "run"),
    ("ate", "eat"),
    ("said", "say"),
    ("made", "make"),
    ("took", "take"),
    ("gave", "give"),
    ("came", "come"),
    ("got", "get"),
    ("saw", "see"),
];

const MIN_STEM: usize = 3;

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u'))
}

/// Drop one letter of a doubled trailing consonant ("stopp" -> "stop").
/// 'l' and 's' stay doubled ("fall", "kiss").
fn undouble(stem: &str) -> String {
    let chars: Vec<char> = stem.chars().collect();
    if chars.len() >= 2 {
        let last = chars[chars.len() - 1];
        if last == chars[chars.len() - 2]
            && last.is_ascii_alphabetic()
            && !matches!(last, 'a' | 'e' | 'i' | 'o' | 'u' | 'l' | 's')
        {
            return chars[..chars.len() - 1].iter().collect();
        }
    }
    stem.to_string()
}

/// Rule-table lemmatizer over lowercase tokens: the irregulars table first,
/// then plural (-ies/-es/-s), -ing, and -ed suffix rules guarded by a minimal
/// stem length of 3.
pub fn lemmatize(token: &str) -> String {
    if let Some((_, lemma)) = LEMMA_EXCEPTIONS.iter().find(|(form, _)| *form == token) {
        return lemma.to_string();
    }

    if let Some(stem) = token.strip_suffix("ies") {
        if stem.len() >= MIN_STEM {
            return format!("{stem}y");
        }
    }
    if token.ends_with("sses")
        || token.ends_with("shes")
        || token.ends_with("ches")
        || token.ends_with("xes")
        || token.ends_with("zes")
        || token.ends_with("oes")
    {
        let stem = &token[..token.len() - 2];
        if stem.len() >= MIN_STEM {
            return stem.to_string();
        }
    }
    if let Some(stem) = token.strip_suffix('s') {
        if stem.len() >= MIN_STEM
            && !stem.ends_with('s')
            && !token.ends_with("us")
            && !token.ends_with("is")
        {
            return stem.to_string();
        }
    }
    if let Some(stem) = token.strip_suffix("ing") {
        if stem.len() >= MIN_STEM && has_vowel(stem) {
            return undouble(stem);
        }
    }
    if let Some(stem) = token.strip_suffix("ed") {
        if stem.len() >= MIN_STEM && has_vowel(stem) && !stem.ends_with('e') {
            return undouble(stem);
        }
    }
    token.to_string()
}

#[derive(Serialize, Deserialize)]
struct DumpRecord {
    lemma: String,
    definitions: Vec<String>,
}

/// Exact-match lookup from lemma to its definition sentences, in dump order.
#[derive(Debug, Clone, Default)]
pub struct DictionaryIndex {
    entries: HashMap<String, Vec<String>>,
}

impl DictionaryIndex {
    pub fn lookup(&self, lemma: &str) -> Option<&[String]> {
        self.entries.get(lemma).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Build the index from a dump file. Repeated records for one lemma append
/// their definitions in file order; lemmas are lowercased.
pub fn build_index(dump_path: impl AsRef<Path>) -> Result<DictionaryIndex> {
    let path = dump_path.as_ref();
    let mut entries: HashMap<String, Vec<String>> = HashMap::new();
    for (line, record) in jsonl::read_records::<DumpRecord>(path)? {
        if record.lemma.is_empty() {
            return Err(Error::parse(path, line, "empty lemma"));
        }
        if record.definitions.is_empty() {
            return Err(Error::parse(
                path,
                line,
                format!("lemma '{}' has no definitions", record.lemma),
            ));
        }
        entries
            .entry(record.lemma.to_lowercase())
            .or_default()
            .extend(record.definitions);
    }
    Ok(DictionaryIndex { entries })
}

/// Write the index back out, one merged record per lemma, sorted by lemma so
/// the output is deterministic.
pub fn write_index(index: &DictionaryIndex, path: impl AsRef<Path>) -> Result<()> {
    let mut lemmas: Vec<&String> = index.entries.keys().collect();
    lemmas.sort();
    jsonl::write_records(
        path.as_ref(),
        lemmas.into_iter().map(|lemma| DumpRecord {
            lemma: lemma.clone(),
            definitions: index.entries[lemma].clone(),
        }),
    )
}

/// Sentence embedder contract. Implementations must be deterministic and
/// always return vectors of length `dim`.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Deterministic bag-of-lemmas reference embedder: content lemmas are hashed
/// into a fixed number of buckets and counted. Dense encoders plug in through
/// the same [`Embedder`] contract.
#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dim: usize,
    stop: StopWordList,
}

pub const REFERENCE_EMBEDDER_DIM: usize = 256;

impl HashedBowEmbedder {
    pub fn new(dim: usize, stop: StopWordList) -> Self {
        HashedBowEmbedder { dim, stop }
    }

    pub fn reference(stop: StopWordList) -> Self {
        Self::new(REFERENCE_EMBEDDER_DIM, stop)
    }

    fn bucket(&self, lemma: &str) -> usize {
        // FNV-1a, fixed so vectors are stable across runs and platforms.
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in lemma.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (hash % self.dim as u64) as usize
    }
}

impl Embedder for HashedBowEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut vector = vec![0.0; self.dim];
        for token in normalize_text(text).iter() {
            if self.stop.contains(token) {
                continue;
            }
            vector[self.bucket(&lemmatize(token))] += 1.0;
        }
        Ok(vector)
    }
}

/// The fixed query prototype used to pick a definition in context.
pub fn make_query(keyword: &str, question: &Question) -> String {
    format!(
        "What is the meaning of word {} in the sentence {}?",
        keyword, question.text
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Score every definition by the scalar product of its embedding with the
/// query embedding and return the argmax (ties -> lowest index) and its score.
pub fn select_definition(
    query: &str,
    definitions: &[String],
    embedder: &dyn Embedder,
) -> Result<(usize, f64)> {
    if definitions.is_empty() {
        return Err(Error::data("select_definition requires definitions"));
    }
    let dim = embedder.dim();
    let query_vec = embedder.embed(query)?;
    if query_vec.len() != dim {
        return Err(Error::data(format!(
            "embedder returned {} values for a declared dimension of {dim}",
            query_vec.len()
        )));
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (idx, definition) in definitions.iter().enumerate() {
        let def_vec = embedder.embed(definition)?;
        if def_vec.len() != dim {
            return Err(Error::data(format!(
                "embedder returned {} values for a declared dimension of {dim}",
                def_vec.len()
            )));
        }
        let score = dot(&query_vec, &def_vec);
        if score > best.1 {
            best = (idx, score);
        }
    }
    Ok(best)
}

/// A keyword paired with the definition sentence selected for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub keyword: String,
    pub definition: String,
    pub score: f64,
}

/// The knowledge set for one question: the selected items in keyword-rank
/// order plus their rendered concatenation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeSet {
    pub items: Vec<KnowledgeItem>,
    pub rendered: String,
}

impl KnowledgeSet {
    fn from_items(items: Vec<KnowledgeItem>) -> Self {
        let rendered = items
            .iter()
            .map(|item| format!("{}: {}", item.keyword, item.definition))
            .collect::<Vec<_>>()
            .join(" ");
        KnowledgeSet { items, rendered }
    }
}

/// Look up each keyword's lemma and select its best definition in the context
/// of the question. Keywords whose lemma is missing from the index are
/// skipped.
pub fn retrieve_knowledge(
    question: &Question,
    keywords: &KeywordList,
    index: &DictionaryIndex,
    embedder: &dyn Embedder,
) -> Result<KnowledgeSet> {
    let mut items = Vec::new();
    for keyword in keywords.iter() {
        let lemma = lemmatize(&keyword.token);
        let Some(definitions) = index.lookup(&lemma) else {
            log::debug!(
                "question '{}': keyword '{}' (lemma '{}') not in dictionary, skipping",
                question.id,
                keyword.token,
                lemma
            );
            continue;
        };
        let query = make_query(&keyword.token, question);
        let (idx, score) = select_definition(&query, definitions, embedder)?;
        items.push(KnowledgeItem {
            keyword: keyword.token.clone(),
            definition: definitions[idx].clone(),
            score,
        });
    }
    Ok(KnowledgeSet::from_items(items))
}
