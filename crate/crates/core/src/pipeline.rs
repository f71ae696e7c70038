//! End-to-end orchestration: a single flat JSON config describes every
//! artifact and backend, and [`Pipeline::run`] answers a batch of questions
//! through the full keyword → rewrite → knowledge → generate → dedup → rank
//! chain.
//!
//! Questions are processed in parallel but results always come back in input
//! order, and per-question failures are collected rather than aborting the
//! run; only configuration problems are fatal.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{MockGenerator, WireEmbedder, WireGenerator, WireScorer};
use crate::data::{Prediction, Question};
use crate::dedup::{dedup, retain_top, StopWordList, SynonymLexicon, DEFAULT_RETAIN};
use crate::error::{Error, Result};
use crate::generate::{
    build_prompt, generate_candidates, GeneratorBackend, MarkerSet, DEFAULT_BEAM_WIDTH,
    DEFAULT_MAX_ANSWER_TOKENS,
};
use crate::keywords::{extract_keywords, IdfTable, DEFAULT_KEYWORD_COUNT};
use crate::rank::{
    load_model, rank_answers, LogisticModel, LogisticScorer, ScorerBackend, DEFAULT_FINAL_COUNT,
    DEFAULT_TOP_CLUSTERS,
};
use crate::retrieve::{
    retrieve_knowledge, DictionaryIndex, Embedder, HashedBowEmbedder, REFERENCE_EMBEDDER_DIM,
};
use crate::rewrite::{default_rules, load_rules, rewrite, RewriteRule};

/// How a backend is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// In-process reference implementation (fixture-driven for generation).
    #[default]
    Mock,
    /// Child process speaking the wire protocol over stdin/stdout.
    Subprocess,
    /// TCP server speaking the wire protocol.
    Socket,
}

/// Environment variables that override the corresponding endpoint strings.
pub const ENV_GENERATOR_ENDPOINT: &str = "KEPR_GENERATOR_ENDPOINT";
pub const ENV_SCORER_ENDPOINT: &str = "KEPR_SCORER_ENDPOINT";
pub const ENV_EMBEDDER_ENDPOINT: &str = "KEPR_EMBEDDER_ENDPOINT";

fn default_keyword_count() -> usize {
    DEFAULT_KEYWORD_COUNT
}

fn default_top_clusters() -> usize {
    DEFAULT_TOP_CLUSTERS
}

fn default_beam_width() -> usize {
    DEFAULT_BEAM_WIDTH
}

fn default_retain() -> usize {
    DEFAULT_RETAIN
}

fn default_final_count() -> usize {
    DEFAULT_FINAL_COUNT
}

fn default_max_answer_tokens() -> usize {
    DEFAULT_MAX_ANSWER_TOKENS
}

/// The flat key-value run configuration. Unknown keys are rejected so typos
/// surface immediately; relative paths are resolved against the directory
/// containing the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Question dataset; used to build the document-frequency table when no
    /// prebuilt table is given, and by corpus/evaluation commands.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Dictionary dump with per-lemma definitions.
    #[serde(default)]
    pub dictionary: Option<PathBuf>,
    /// Stop-word list; the bundled list is used when omitted.
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    /// Synonym lexicon; answers are matched purely lexically when omitted.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Prebuilt inverse-document-frequency table.
    #[serde(default)]
    pub idf: Option<PathBuf>,
    /// Trained scoring model; an all-zero model (every answer scored 0.5)
    /// is used when omitted.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Question rewriting rules; the built-in table is used when omitted.
    #[serde(default)]
    pub rewrite_rules: Option<PathBuf>,

    /// Keywords kept per question.
    #[serde(default = "default_keyword_count")]
    pub keyword_count: usize,
    /// Answer clusters mined for positives per question when building the
    /// ranker corpus.
    #[serde(default = "default_top_clusters")]
    pub top_clusters: usize,
    /// Candidates requested from the generator.
    #[serde(default = "default_beam_width")]
    pub beam_width: usize,
    /// Deduplicated candidates kept for ranking.
    #[serde(default = "default_retain")]
    pub retain: usize,
    /// Ranked answers emitted per question.
    #[serde(default = "default_final_count")]
    pub final_count: usize,
    /// Token budget per generated answer.
    #[serde(default = "default_max_answer_tokens")]
    pub max_answer_tokens: usize,
    /// Seed for corpus building and training.
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for per-question parallelism; defaults to the number
    /// of available cores. Output order is input order either way.
    #[serde(default)]
    pub workers: Option<usize>,

    /// Prompt markers; the `<BOS>`/`<SEP>`/`<MASK>`/`<EOS>` defaults apply
    /// when omitted.
    #[serde(default)]
    pub marker_bos: Option<String>,
    #[serde(default)]
    pub marker_sep: Option<String>,
    #[serde(default)]
    pub marker_mask: Option<String>,
    #[serde(default)]
    pub marker_eos: Option<String>,

    #[serde(default)]
    pub generator_kind: BackendKind,
    /// Mock: fixture file path. Subprocess: command line. Socket: address.
    #[serde(default)]
    pub generator_endpoint: Option<String>,
    #[serde(default)]
    pub scorer_kind: BackendKind,
    /// Subprocess: command line. Socket: address. Unused by the mock scorer.
    #[serde(default)]
    pub scorer_endpoint: Option<String>,
    #[serde(default)]
    pub embedder_kind: BackendKind,
    /// Subprocess: command line. Socket: address. Unused by the mock
    /// embedder.
    #[serde(default)]
    pub embedder_endpoint: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        serde_json::from_str("{}").expect("empty config deserializes")
    }
}

impl PipelineConfig {
    /// Read a config file, resolve its relative paths, apply endpoint
    /// overrides from the environment, and validate.
    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.apply_endpoint_overrides(|name| std::env::var(name).ok());
        config.validate()?;
        Ok(config)
    }

    /// Rewrite relative artifact paths to be rooted at `base`. The mock
    /// generator's endpoint is a fixture path and is resolved the same way;
    /// subprocess command lines and socket addresses are left alone.
    pub fn resolve_paths(&mut self, base: &Path) {
        for path in [
            &mut self.dataset,
            &mut self.dictionary,
            &mut self.stopwords,
            &mut self.lexicon,
            &mut self.idf,
            &mut self.model,
            &mut self.rewrite_rules,
        ]
        .into_iter()
        .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if self.generator_kind == BackendKind::Mock {
            if let Some(endpoint) = &self.generator_endpoint {
                let path = Path::new(endpoint);
                if path.is_relative() {
                    self.generator_endpoint = Some(base.join(path).to_string_lossy().into_owned());
                }
            }
        }
    }

    /// Replace endpoint strings with values from `get` (normally the process
    /// environment). Only endpoints can be overridden this way.
    pub fn apply_endpoint_overrides(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(value) = get(ENV_GENERATOR_ENDPOINT) {
            self.generator_endpoint = Some(value);
        }
        if let Some(value) = get(ENV_SCORER_ENDPOINT) {
            self.scorer_endpoint = Some(value);
        }
        if let Some(value) = get(ENV_EMBEDDER_ENDPOINT) {
            self.embedder_endpoint = Some(value);
        }
    }

    /// Check cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.keyword_count == 0 {
            return Err(Error::config("keyword_count must be at least 1"));
        }
        if self.top_clusters == 0 {
            return Err(Error::config("top_clusters must be at least 1"));
        }
        if self.beam_width == 0 {
            return Err(Error::config("beam_width must be at least 1"));
        }
        if self.retain == 0 {
            return Err(Error::config("retain must be at least 1"));
        }
        if self.final_count == 0 {
            return Err(Error::config("final_count must be at least 1"));
        }
        if self.max_answer_tokens == 0 {
            return Err(Error::config("max_answer_tokens must be at least 1"));
        }
        if self.final_count > self.retain {
            return Err(Error::config(format!(
                "final_count ({}) cannot exceed retain ({})",
                self.final_count, self.retain
            )));
        }
        for (kind, endpoint, key) in [
            (
                self.generator_kind,
                &self.generator_endpoint,
                "generator_endpoint",
            ),
            (self.scorer_kind, &self.scorer_endpoint, "scorer_endpoint"),
            (
                self.embedder_kind,
                &self.embedder_endpoint,
                "embedder_endpoint",
            ),
        ] {
            if kind != BackendKind::Mock && endpoint.is_none() {
                return Err(Error::config(format!(
                    "{key} is required for {} backends",
                    match kind {
                        BackendKind::Subprocess => "subprocess",
                        BackendKind::Socket => "socket",
                        BackendKind::Mock => unreachable!(),
                    }
                )));
            }
        }
        Ok(())
    }

    fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::config(format!("config key '{key}' is required for this step")))
    }

    pub fn stopwords(&self) -> Result<StopWordList> {
        match &self.stopwords {
            Some(path) => StopWordList::load(path),
            None => Ok(StopWordList::bundled()),
        }
    }

    pub fn lexicon(&self) -> Result<SynonymLexicon> {
        match &self.lexicon {
            Some(path) => SynonymLexicon::load(path),
            None => Ok(SynonymLexicon::empty()),
        }
    }

    pub fn markers(&self) -> Result<MarkerSet> {
        let defaults = MarkerSet::default();
        MarkerSet::new(
            self.marker_bos.as_deref().unwrap_or(&defaults.bos),
            self.marker_sep.as_deref().unwrap_or(&defaults.sep),
            self.marker_mask.as_deref().unwrap_or(&defaults.mask),
            self.marker_eos.as_deref().unwrap_or(&defaults.eos),
        )
    }

    pub fn rewrite_rules(&self) -> Result<Vec<RewriteRule>> {
        match &self.rewrite_rules {
            Some(path) => load_rules(path),
            None => Ok(default_rules()),
        }
    }

    /// Load the prebuilt frequency table, or derive one from the dataset's
    /// questions when only a dataset is configured.
    pub fn idf_table(&self, stop: &StopWordList) -> Result<IdfTable> {
        if let Some(path) = &self.idf {
            return IdfTable::load(path);
        }
        let dataset = Self::require(&self.dataset, "idf (or dataset)")?;
        let questions: Vec<Question> = crate::data::load_dataset(&dataset)?
            .into_iter()
            .map(|(question, _)| question)
            .collect();
        Ok(IdfTable::build(&questions, stop))
    }

    pub fn dictionary_index(&self) -> Result<DictionaryIndex> {
        let path = Self::require(&self.dictionary, "dictionary")?;
        crate::retrieve::build_index(&path)
    }

    /// Load the trained scoring model, or fall back to the all-zero model
    /// that scores every answer 0.5.
    pub fn model(&self) -> Result<LogisticModel> {
        match &self.model {
            Some(path) => load_model(path),
            None => Ok(LogisticModel::zeros()),
        }
    }

    pub fn generator(&self) -> Result<Box<dyn GeneratorBackend>> {
        match self.generator_kind {
            BackendKind::Mock => match &self.generator_endpoint {
                Some(fixture) => Ok(Box::new(MockGenerator::load(fixture)?)),
                None => Ok(Box::new(MockGenerator::default())),
            },
            BackendKind::Subprocess => Ok(Box::new(WireGenerator::subprocess(
                "generator",
                self.generator_endpoint.as_deref().unwrap_or_default(),
            )?)),
            BackendKind::Socket => Ok(Box::new(WireGenerator::socket(
                "generator",
                self.generator_endpoint.as_deref().unwrap_or_default(),
            )?)),
        }
    }

    pub fn scorer(
        &self,
        stop: &StopWordList,
        lexicon: &SynonymLexicon,
    ) -> Result<Box<dyn ScorerBackend>> {
        match self.scorer_kind {
            BackendKind::Mock => Ok(Box::new(LogisticScorer::new(
                self.model()?,
                stop.clone(),
                lexicon.clone(),
            ))),
            BackendKind::Subprocess => Ok(Box::new(WireScorer::subprocess(
                "scorer",
                self.scorer_endpoint.as_deref().unwrap_or_default(),
            )?)),
            BackendKind::Socket => Ok(Box::new(WireScorer::socket(
                "scorer",
                self.scorer_endpoint.as_deref().unwrap_or_default(),
            )?)),
        }
    }

    pub fn embedder(&self, stop: &StopWordList) -> Result<Box<dyn Embedder>> {
        match self.embedder_kind {
            BackendKind::Mock => Ok(Box::new(HashedBowEmbedder::reference(stop.clone()))),
            BackendKind::Subprocess => Ok(Box::new(WireEmbedder::subprocess(
                "embedder",
                self.embedder_endpoint.as_deref().unwrap_or_default(),
                REFERENCE_EMBEDDER_DIM,
            )?)),
            BackendKind::Socket => Ok(Box::new(WireEmbedder::socket(
                "embedder",
                self.embedder_endpoint.as_deref().unwrap_or_default(),
                REFERENCE_EMBEDDER_DIM,
            )?)),
        }
    }
}

/// A question that could not be answered, with the stage error that stopped
/// it. The surrounding run keeps going.
#[derive(Debug)]
pub struct QuestionFailure {
    pub question_id: String,
    pub error: Error,
}

/// Everything a run produced: predictions in input order for the questions
/// that succeeded, and one failure record per question that did not.
#[derive(Debug, Default)]
pub struct PipelineOutcome {
    pub predictions: Vec<Prediction>,
    pub failures: Vec<QuestionFailure>,
}

/// A fully assembled answering pipeline.
pub struct Pipeline {
    stop: StopWordList,
    lexicon: SynonymLexicon,
    idf: IdfTable,
    rules: Vec<RewriteRule>,
    index: DictionaryIndex,
    markers: MarkerSet,
    generator: Box<dyn GeneratorBackend>,
    scorer: Box<dyn ScorerBackend>,
    embedder: Box<dyn Embedder>,
    keyword_count: usize,
    beam_width: usize,
    retain: usize,
    final_count: usize,
    max_answer_tokens: usize,
    workers: Option<usize>,
}

impl Pipeline {
    /// Load every artifact and connect every backend named by the config.
    pub fn from_config(config: &PipelineConfig) -> Result<Pipeline> {
        config.validate()?;
        let stop = config.stopwords()?;
        let lexicon = config.lexicon()?;
        Ok(Pipeline {
            idf: config.idf_table(&stop)?,
            rules: config.rewrite_rules()?,
            index: config.dictionary_index()?,
            markers: config.markers()?,
            generator: config.generator()?,
            scorer: config.scorer(&stop, &lexicon)?,
            embedder: config.embedder(&stop)?,
            keyword_count: config.keyword_count,
            beam_width: config.beam_width,
            retain: config.retain,
            final_count: config.final_count,
            max_answer_tokens: config.max_answer_tokens,
            workers: config.workers,
            stop,
            lexicon,
        })
    }

    /// Run the full chain for one question.
    pub fn answer_question(&self, question: &Question) -> Result<Prediction> {
        let keywords = extract_keywords(question, &self.idf, &self.stop, self.keyword_count);
        let rewritten = rewrite(question, &self.rules);
        let knowledge =
            retrieve_knowledge(question, &keywords, &self.index, self.embedder.as_ref())?;
        let prompt = build_prompt(&knowledge, &rewritten, &self.markers);
        let candidates = generate_candidates(
            self.generator.as_ref(),
            &prompt,
            self.beam_width,
            self.max_answer_tokens,
        )?;
        let deduped = dedup(&candidates, &self.stop, &self.lexicon);
        let kept = retain_top(&deduped, self.retain);
        let ranked = rank_answers(question, &kept, self.scorer.as_ref(), self.final_count)?;
        Prediction::new(
            &question.id,
            ranked.into_iter().map(|r| r.answer).collect::<Vec<_>>(),
        )
    }

    /// Answer a batch of questions in parallel, preserving input order.
    /// Per-question errors become failure records, not run failures.
    pub fn run(&self, questions: &[Question]) -> Result<PipelineOutcome> {
        let mut ids = HashSet::new();
        for question in questions {
            if !ids.insert(question.id.as_str()) {
                return Err(Error::data(format!(
                    "duplicate question id '{}' in pipeline input",
                    question.id
                )));
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.unwrap_or(0))
            .build()
            .map_err(|e| Error::config(format!("building worker pool: {e}")))?;
        let results: Vec<Result<Prediction>> = pool.install(|| {
            questions
                .par_iter()
                .map(|question| self.answer_question(question))
                .collect()
        });
        let mut outcome = PipelineOutcome::default();
        for (question, result) in questions.iter().zip(results) {
            match result {
                Ok(prediction) => outcome.predictions.push(prediction),
                Err(error) => {
                    log::warn!("question '{}' failed: {error}", question.id);
                    outcome.failures.push(QuestionFailure {
                        question_id: question.id.clone(),
                        error,
                    });
                }
            }
        }
        Ok(outcome)
    }
}
