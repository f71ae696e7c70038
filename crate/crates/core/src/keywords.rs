//! Keyword extraction: corpus-level inverse document frequencies and
//! per-question tf-idf ranking of content tokens.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{normalize_text, Question};
use crate::dedup::StopWordList;
use crate::error::{Error, Result};
use crate::jsonl;

/// How many keywords to keep per question unless configured otherwise.
pub const DEFAULT_KEYWORD_COUNT: usize = 2;

/// Inverse document frequencies over a question corpus. Each question counts
/// once per distinct content token it contains; frequencies are smoothed so
/// unseen tokens still score.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    num_questions: usize,
    values: HashMap<String, f64>,
}

fn idf_value(num_questions: usize, df: usize) -> f64 {
    ((num_questions as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
}

impl IdfTable {
    /// Count document frequencies over the questions (stop words removed,
    /// distinct tokens per question) and convert them to smoothed idf values.
    pub fn build(questions: &[Question], stop: &StopWordList) -> IdfTable {
        let mut df: HashMap<String, usize> = HashMap::new();
        for question in questions {
            let mut seen: HashSet<String> = HashSet::new();
            for token in normalize_text(&question.text) {
                if !stop.contains(&token) && seen.insert(token.clone()) {
                    *df.entry(token).or_default() += 1;
                }
            }
        }
        let num_questions = questions.len();
        let values = df
            .into_iter()
            .map(|(token, count)| (token, idf_value(num_questions, count)))
            .collect();
        IdfTable {
            num_questions,
            values,
        }
    }

    /// The idf of `token`, falling back to the zero-frequency smoothing value
    /// for tokens the corpus never produced.
    pub fn idf(&self, token: &str) -> f64 {
        self.values
            .get(token)
            .copied()
            .unwrap_or_else(|| self.unknown_idf())
    }

    /// The smoothed idf assigned to unseen tokens (document frequency zero).
    pub fn unknown_idf(&self) -> f64 {
        idf_value(self.num_questions, 0)
    }

    pub fn num_questions(&self) -> usize {
        self.num_questions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Write the table as a header line with the corpus size followed by one
    /// line per token, sorted by token.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = serde_json::to_string(&IdfHeader {
            num_questions: self.num_questions,
        })
        .map_err(|e| Error::data(format!("serializing idf header: {e}")))?;
        writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
        let sorted: BTreeMap<&String, f64> = self.values.iter().map(|(t, v)| (t, *v)).collect();
        for (token, idf) in sorted {
            let line = serde_json::to_string(&IdfEntry {
                token: token.clone(),
                idf,
            })
            .map_err(|e| Error::data(format!("serializing idf entry: {e}")))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a table written by [`IdfTable::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<IdfTable> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header = loop {
            match lines.next() {
                None => return Err(Error::parse(path, 1, "missing idf header line")),
                Some((idx, line)) => {
                    let line = line.map_err(|e| Error::io(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str::<IdfHeader>(&line)
                        .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
                }
            }
        };
        let mut values = HashMap::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IdfEntry = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
            if values.insert(entry.token.clone(), entry.idf).is_some() {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("duplicate idf entry for token '{}'", entry.token),
                ));
            }
        }
        Ok(IdfTable {
            num_questions: header.num_questions,
            values,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct IdfHeader {
    num_questions: usize,
}

#[derive(Serialize, Deserialize)]
struct IdfEntry {
    token: String,
    idf: f64,
}

/// One extracted keyword with its tf-idf score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub token: String,
    pub score: f64,
}

/// Keywords for one question, highest score first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeywordList {
    keywords: Vec<Keyword>,
}

impl KeywordList {
    pub fn new(keywords: Vec<Keyword>) -> KeywordList {
        KeywordList { keywords }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Keyword> {
        self.keywords.iter()
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.keywords.iter().map(|k| k.token.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}

/// Rank the question's content tokens by term frequency times idf and keep
/// the top `count`. Ties go to the token that appears earliest in the
/// question.
pub fn extract_keywords(
    question: &Question,
    table: &IdfTable,
    stop: &StopWordList,
    count: usize,
) -> KeywordList {
    let mut order: Vec<String> = Vec::new();
    let mut tf: HashMap<String, usize> = HashMap::new();
    let mut first_pos: HashMap<String, usize> = HashMap::new();
    for (pos, token) in normalize_text(&question.text).into_iter().enumerate() {
        if stop.contains(&token) {
            continue;
        }
        let entry = tf.entry(token.clone()).or_insert(0);
        if *entry == 0 {
            first_pos.insert(token.clone(), pos);
            order.push(token);
        }
        *entry += 1;
    }

    let mut scored: Vec<Keyword> = order
        .into_iter()
        .map(|token| {
            let score = tf[&token] as f64 * table.idf(&token);
            Keyword { token, score }
        })
        .collect();
    // Stable sort on score only: equal scores keep question order, which is
    // first-occurrence order because `order` was built that way.
    debug_assert!(scored
        .windows(2)
        .all(|w| first_pos[&w[0].token] < first_pos[&w[1].token]));
    scored.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    scored.truncate(count);
    KeywordList::new(scored)
}

/// Serialized keywords for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRecord {
    pub id: String,
    pub keywords: Vec<Keyword>,
}

pub fn write_keyword_lines(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = KeywordRecord>,
) -> Result<()> {
    jsonl::write_records(path.as_ref(), records)
}

pub fn load_keyword_lines(path: impl AsRef<Path>) -> Result<Vec<KeywordRecord>> {
    Ok(jsonl::read_records(path.as_ref())?
        .into_iter()
        .map(|(_, record)| record)
        .collect())
}
