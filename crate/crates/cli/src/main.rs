//! `kepr` — command-line driver for the generate-then-rank answering
//! pipeline.
//!
//! Each pipeline stage is exposed as a subcommand operating on files, so a
//! run can be executed end to end (`kepr pipeline`) or stage by stage with
//! the intermediate artifacts inspected in between. A single flat JSON
//! config names the shared artifacts and backends; subcommand flags override
//! it where it makes sense.
//!
//! Exit codes: 0 on success, 1 for command-line usage errors, 2 for bad
//! data or configuration, 3 when a model backend misbehaves.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use kepr_core::data::{load_dataset, load_predictions, write_predictions, Prediction, Question};
use kepr_core::dedup::{dedup, retain_top};
use kepr_core::eval::{evaluate, keyword_macro_accuracy, standard_schemes, MatchPolicy};
use kepr_core::generate::{
    build_prompt, generate_candidates, load_candidate_lines, write_candidate_lines, CandidateRecord,
};
use kepr_core::jsonl;
use kepr_core::keywords::{extract_keywords, IdfTable, KeywordList, KeywordRecord};
use kepr_core::pipeline::{Pipeline, PipelineConfig};
use kepr_core::rank::{
    build_ranker_corpus, load_ranker_corpus, rank_answers, save_model, train_logistic,
    write_ranker_corpus, TrainOptions,
};
use kepr_core::retrieve::{build_index, retrieve_knowledge, write_index, KnowledgeItem};
use kepr_core::rewrite::rewrite;
use kepr_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "kepr",
    version,
    about = "Generate-then-rank answering for commonsense questions"
)]
struct Cli {
    /// Run configuration file (flat JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the inverse-document-frequency table from a question dataset.
    BuildIdf {
        /// Question dataset (defaults to the configured one).
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Where to write the table.
        #[arg(long)]
        output: PathBuf,
    },
    /// Extract the top-scoring keywords of every question.
    ExtractKeywords {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Keywords to keep per question (defaults to the configured count).
        #[arg(long)]
        count: Option<usize>,
        /// Gold keyword lists; when given, the macro-averaged keyword
        /// accuracy against them is printed.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Rewrite questions into declarative answer stems.
    Rewrite {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Merge a dictionary dump into a definition index.
    BuildIndex {
        /// Dictionary dump, one lemma record per line.
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Select the best definition for each question keyword.
    Retrieve {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Precomputed keyword lists; keywords are extracted on the fly
        /// when omitted.
        #[arg(long)]
        keywords: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate deduplicated, confidence-ordered candidate answers.
    Generate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Merge near-duplicate candidates and keep the most confident ones.
    Dedup {
        /// Candidate lists produced by `generate`.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// How many survivors to keep (defaults to the configured count).
        #[arg(long)]
        retain: Option<usize>,
    },
    /// Mine labeled answer pairs from gold clusters for scorer training.
    BuildRankerCorpus {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Clusters mined for positives per question (defaults to the
        /// configured count).
        #[arg(long)]
        top_clusters: Option<usize>,
    },
    /// Fit the logistic plausibility scorer on a ranker corpus.
    TrainScorer {
        #[arg(long)]
        corpus: PathBuf,
        /// Where to write the trained model.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Re-rank candidate answers by plausibility.
    Rank {
        /// Candidate lists to rank (typically `dedup` output).
        #[arg(long)]
        candidates: PathBuf,
        /// Dataset supplying the question text for each candidate list.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Where to write the ranked predictions.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predictions against gold answer clusters.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Dataset supplying the gold clusters.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also credit answers that only match through the synonym lexicon.
        #[arg(long)]
        synonyms: bool,
        /// Write the full per-question report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the whole answering pipeline and write ranked predictions.
    Pipeline {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

/// Rewritten-question record written by the `rewrite` subcommand.
#[derive(Serialize, Deserialize)]
struct RewriteRecord {
    id: String,
    rewritten: String,
}

/// Per-question knowledge written by the `retrieve` subcommand.
#[derive(Serialize, Deserialize)]
struct KnowledgeRecord {
    id: String,
    items: Vec<KnowledgeItem>,
    rendered: String,
}

/// Gold keyword lists accepted by `extract-keywords --gold`.
#[derive(Serialize, Deserialize)]
struct GoldKeywordRecord {
    id: String,
    keywords: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                let _ = err.print();
                return ExitCode::SUCCESS;
            }
            let _ = err.print();
            return ExitCode::from(1);
        }
    };
    env_logger::init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_backend() { 3 } else { 2 })
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => {
            let mut config = PipelineConfig::default();
            config.apply_endpoint_overrides(|name| std::env::var(name).ok());
            config
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Pick the dataset named on the command line, falling back to the config.
fn dataset_path(flag: Option<PathBuf>, config: &PipelineConfig) -> Result<PathBuf> {
    flag.or_else(|| config.dataset.clone()).ok_or_else(|| {
        Error::config("no dataset given: pass --dataset or set 'dataset' in the config")
    })
}

fn load_questions(path: &Path) -> Result<Vec<Question>> {
    Ok(load_dataset(path)?
        .into_iter()
        .map(|(question, _)| question)
        .collect())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::BuildIdf { dataset, output } => {
            let stop = config.stopwords()?;
            let questions = load_questions(&dataset_path(dataset, &config)?)?;
            let table = IdfTable::build(&questions, &stop);
            table.save(&output)?;
            println!(
                "built idf table over {} questions -> {}",
                questions.len(),
                output.display()
            );
        }
        Command::ExtractKeywords {
            dataset,
            output,
            count,
            gold,
        } => {
            let stop = config.stopwords()?;
            let table = config.idf_table(&stop)?;
            let count = count.unwrap_or(config.keyword_count);
            if count == 0 {
                return Err(Error::config("keyword count must be at least 1"));
            }
            let questions = load_questions(&dataset_path(dataset, &config)?)?;
            let lists: Vec<KeywordList> = questions
                .iter()
                .map(|question| extract_keywords(question, &table, &stop, count))
                .collect();
            jsonl::write_records(
                &output,
                questions
                    .iter()
                    .zip(&lists)
                    .map(|(question, list)| KeywordRecord {
                        id: question.id.clone(),
                        keywords: list.iter().cloned().collect(),
                    }),
            )?;
            println!(
                "extracted keywords for {} questions -> {}",
                questions.len(),
                output.display()
            );
            if let Some(gold_path) = gold {
                let gold_records: HashMap<String, Vec<String>> =
                    jsonl::read_records::<GoldKeywordRecord>(&gold_path)?
                        .into_iter()
                        .map(|(_, record)| (record.id, record.keywords))
                        .collect();
                let gold_lists: Vec<Vec<String>> = questions
                    .iter()
                    .map(|question| {
                        gold_records.get(&question.id).cloned().ok_or_else(|| {
                            Error::data(format!("no gold keywords for question '{}'", question.id))
                        })
                    })
                    .collect::<Result<_>>()?;
                let accuracy = keyword_macro_accuracy(&lists, &gold_lists, count)?;
                println!("keyword accuracy @ {count}: {accuracy:.4}");
            }
        }
        Command::Rewrite { dataset, output } => {
            let rules = config.rewrite_rules()?;
            let questions = load_questions(&dataset_path(dataset, &config)?)?;
            jsonl::write_records(
                &output,
                questions.iter().map(|question| RewriteRecord {
                    id: question.id.clone(),
                    rewritten: rewrite(question, &rules).text,
                }),
            )?;
            println!(
                "rewrote {} questions -> {}",
                questions.len(),
                output.display()
            );
        }
        Command::BuildIndex { dump, output } => {
            let index = build_index(&dump)?;
            write_index(&index, &output)?;
            println!("indexed {} lemmas -> {}", index.len(), output.display());
        }
        Command::Retrieve {
            dataset,
            keywords,
            output,
        } => {
            let stop = config.stopwords()?;
            let index = config.dictionary_index()?;
            let embedder = config.embedder(&stop)?;
            let questions = load_questions(&dataset_path(dataset, &config)?)?;
            let lists: Vec<KeywordList> = match keywords {
                Some(path) => {
                    let by_id: HashMap<String, KeywordList> =
                        jsonl::read_records::<KeywordRecord>(&path)?
                            .into_iter()
                            .map(|(_, record)| (record.id, KeywordList::new(record.keywords)))
                            .collect();
                    questions
                        .iter()
                        .map(|question| {
                            by_id.get(&question.id).cloned().ok_or_else(|| {
                                Error::data(format!("no keywords for question '{}'", question.id))
                            })
                        })
                        .collect::<Result<_>>()?
                }
                None => {
                    let table = config.idf_table(&stop)?;
                    questions
                        .iter()
                        .map(|question| {
                            extract_keywords(question, &table, &stop, config.keyword_count)
                        })
                        .collect()
                }
            };
            let mut records = Vec::with_capacity(questions.len());
            for (question, list) in questions.iter().zip(&lists) {
                let knowledge = retrieve_knowledge(question, list, &index, embedder.as_ref())?;
                records.push(KnowledgeRecord {
                    id: question.id.clone(),
                    items: knowledge.items,
                    rendered: knowledge.rendered,
                });
            }
            jsonl::write_records(&output, records)?;
            println!(
                "retrieved knowledge for {} questions -> {}",
                questions.len(),
                output.display()
            );
        }
        Command::Generate { dataset, output } => {
            let stop = config.stopwords()?;
            let table = config.idf_table(&stop)?;
            let rules = config.rewrite_rules()?;
            let index = config.dictionary_index()?;
            let embedder = config.embedder(&stop)?;
            let generator = config.generator()?;
            let markers = config.markers()?;
            let questions = load_questions(&dataset_path(dataset, &config)?)?;
            let mut records = Vec::with_capacity(questions.len());
            for question in &questions {
                let keywords = extract_keywords(question, &table, &stop, config.keyword_count);
                let rewritten = rewrite(question, &rules);
                let knowledge = retrieve_knowledge(question, &keywords, &index, embedder.as_ref())?;
                let prompt = build_prompt(&knowledge, &rewritten, &markers);
                let candidates = generate_candidates(
                    generator.as_ref(),
                    &prompt,
                    config.beam_width,
                    config.max_answer_tokens,
                )?;
                records.push(CandidateRecord {
                    id: question.id.clone(),
                    candidates,
                });
            }
            write_candidate_lines(&output, records)?;
            println!(
                "generated candidates for {} questions -> {}",
                questions.len(),
                output.display()
            );
        }
        Command::Dedup {
            candidates,
            output,
            retain,
        } => {
            let stop = config.stopwords()?;
            let lexicon = config.lexicon()?;
            let limit = retain.unwrap_or(config.retain);
            if limit == 0 {
                return Err(Error::config("retain must be at least 1"));
            }
            let records = load_candidate_lines(&candidates)?;
            let count = records.len();
            jsonl::write_records(
                &output,
                records.into_iter().map(|record| CandidateRecord {
                    id: record.id,
                    candidates: retain_top(&dedup(&record.candidates, &stop, &lexicon), limit),
                }),
            )?;
            println!(
                "deduplicated {} candidate lists -> {}",
                count,
                output.display()
            );
        }
        Command::BuildRankerCorpus {
            dataset,
            output,
            top_clusters,
        } => {
            let stop = config.stopwords()?;
            let lexicon = config.lexicon()?;
            let n = top_clusters.unwrap_or(config.top_clusters);
            let dataset = load_dataset(&dataset_path(dataset, &config)?)?;
            let corpus = build_ranker_corpus(&dataset, n, config.seed, &stop, &lexicon)?;
            write_ranker_corpus(&output, &corpus.instances)?;
            let positives = corpus.instances.iter().filter(|i| i.label == 1).count();
            println!(
                "mined {} instances ({} positive, {} negative, {} questions skipped) -> {}",
                corpus.instances.len(),
                positives,
                corpus.instances.len() - positives,
                corpus.skipped.len(),
                output.display()
            );
        }
        Command::TrainScorer {
            corpus,
            output,
            learning_rate,
            epochs,
        } => {
            let stop = config.stopwords()?;
            let lexicon = config.lexicon()?;
            let defaults = TrainOptions::default();
            let options = TrainOptions {
                learning_rate: learning_rate.unwrap_or(defaults.learning_rate),
                epochs: epochs.unwrap_or(defaults.epochs),
                seed: config.seed,
            };
            let instances = load_ranker_corpus(&corpus)?;
            let trained = train_logistic(&instances, &stop, &lexicon, &options)?;
            save_model(&trained.model, &output)?;
            println!(
                "trained on {} instances for {} epochs: loss {:.6} -> {:.6}, model -> {}",
                instances.len(),
                options.epochs,
                trained.loss_trace.first().copied().unwrap_or(f64::NAN),
                trained.loss_trace.last().copied().unwrap_or(f64::NAN),
                output.display()
            );
        }
        Command::Rank {
            candidates,
            dataset,
            output,
        } => {
            let stop = config.stopwords()?;
            let lexicon = config.lexicon()?;
            let scorer = config.scorer(&stop, &lexicon)?;
            let questions: HashMap<String, Question> =
                load_questions(&dataset_path(dataset, &config)?)?
                    .into_iter()
                    .map(|question| (question.id.clone(), question))
                    .collect();
            let records = load_candidate_lines(&candidates)?;
            let mut predictions = Vec::with_capacity(records.len());
            for record in records {
                let question = questions.get(&record.id).ok_or_else(|| {
                    Error::data(format!(
                        "candidate list for unknown question '{}'",
                        record.id
                    ))
                })?;
                let ranked = rank_answers(
                    question,
                    &record.candidates,
                    scorer.as_ref(),
                    config.final_count,
                )?;
                predictions.push(Prediction::new(
                    &record.id,
                    ranked.into_iter().map(|r| r.answer).collect::<Vec<_>>(),
                )?);
            }
            write_predictions(&predictions, &output)?;
            println!(
                "ranked answers for {} questions -> {}",
                predictions.len(),
                output.display()
            );
        }
        Command::Evaluate {
            predictions,
            dataset,
            synonyms,
            report,
        } => {
            let stop = config.stopwords()?;
            let lexicon = config.lexicon()?;
            let policy = if synonyms {
                MatchPolicy::SynonymAugmented {
                    stop: &stop,
                    lexicon: &lexicon,
                }
            } else {
                MatchPolicy::ExactNormalized { stop: &stop }
            };
            let predictions = load_predictions(&predictions)?;
            let ground: HashMap<String, kepr_core::data::GroundTruthClusters> =
                load_dataset(&dataset_path(dataset, &config)?)?
                    .into_iter()
                    .map(|(question, clusters)| (question.id, clusters))
                    .collect();
            let schemes = standard_schemes();
            let eval_report = evaluate(&predictions, &ground, &schemes, &policy)?;
            println!(
                "evaluated {} predictions ({})",
                predictions.len(),
                eval_report.policy
            );
            for scheme in &schemes {
                let name = scheme.metric_name();
                println!("{name}: {:.4}", eval_report.per_metric[&name]);
            }
            if let Some(report_path) = report {
                let json = serde_json::to_string_pretty(&eval_report)
                    .map_err(|e| Error::data(format!("serializing report: {e}")))?;
                std::fs::write(&report_path, json + "\n")
                    .map_err(|e| Error::io(&report_path, e))?;
                println!("report -> {}", report_path.display());
            }
        }
        Command::Pipeline { dataset, output } => {
            let questions = load_questions(&dataset_path(dataset, &config)?)?;
            let pipeline = Pipeline::from_config(&config)?;
            let outcome = pipeline.run(&questions)?;
            write_predictions(&outcome.predictions, &output)?;
            for failure in &outcome.failures {
                eprintln!(
                    "question '{}' failed: {}",
                    failure.question_id, failure.error
                );
            }
            println!(
                "answered {}/{} questions -> {}",
                outcome.predictions.len(),
                questions.len(),
                output.display()
            );
        }
    }
    Ok(())
}
