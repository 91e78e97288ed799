//! Synthetic query generation and LLM verification of mined negatives.
//!
//! Generation asks the chat endpoint for persona-styled queries per document
//! (parsed from a numbered list); verification asks for a binary YES/NO
//! relevance label per (query, candidate) pair and removes false negatives.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bm25::MinedNegatives;
use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::llm::{ChatClient, ChatRequest};

/// A query-generation persona: a name plus the generation directive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub instruction: String,
}

/// The three stock personas: keyword, open-ended, and task-oriented.
pub fn default_personas() -> Vec<Persona> {
    vec![
        Persona {
            name: "keyword".to_string(),
            instruction: "You write terse keyword searches: a few content words, no filler."
                .to_string(),
        },
        Persona {
            name: "open_ended".to_string(),
            instruction: "You ask open-ended questions about topics the document covers."
                .to_string(),
        },
        Persona {
            name: "task_oriented".to_string(),
            instruction: "You phrase searches as tasks you need the document to accomplish."
                .to_string(),
        },
    ]
}

/// An LLM-generated query tied to the document it was generated from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub query_id: String,
    pub text: String,
    pub persona: String,
    pub positive_doc_id: String,
}

/// Binary verification outcome for one (query, candidate) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The candidate does not answer the query: a usable hard negative.
    TrueNegative,
    /// The candidate actually answers the query and must be removed.
    FalseNegative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub query_id: String,
    pub doc_id: String,
    pub verdict: Verdict,
    /// The first token of the (possibly re-prompted) completion.
    pub raw_label: String,
}

/// Aggregate verification accounting for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalseNegativeReport {
    pub dataset_name: String,
    pub mined_per_query: usize,
    pub total_mined: usize,
    pub total_false: usize,
    pub rate: f64,
}

impl FalseNegativeReport {
    pub fn render(&self) -> String {
        format!(
            "dataset: {}\nMined negatives per query          {}\nLLM-verified false negative rate   {:.2}%\n",
            self.dataset_name,
            self.mined_per_query,
            self.rate * 100.0
        )
    }
}

/// Editable prompt templates. Placeholders: `{instruction}`, `{n}`,
/// `{document}` for generation; `{query}`, `{document}`, `{positive}` for
/// verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub generation_system: String,
    pub generation: String,
    pub verification_system: String,
    pub verification: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            generation_system: "You write search queries that real users would type.".to_string(),
            generation: "{instruction}\nWrite {n} search queries a user would issue to find the document below. Answer with a numbered list, one query per line.\n\nDocument:\n{document}".to_string(),
            verification_system: "You judge whether a document answers a query.".to_string(),
            verification: "Query: {query}\n\nDocument:\n{document}\n\nDoes this document answer the query? Answer YES or NO.".to_string(),
        }
    }
}

/// Knobs shared by the generation and verification operations.
#[derive(Debug, Clone)]
pub struct SynthgenOptions {
    pub queries_per_persona: usize,
    pub generation_temperature: f64,
    pub verification_temperature: f64,
    pub max_tokens: u32,
    /// Maximum in-flight LLM requests.
    pub concurrency: usize,
    pub templates: PromptTemplates,
}

impl Default for SynthgenOptions {
    fn default() -> Self {
        SynthgenOptions {
            queries_per_persona: 1,
            generation_temperature: 0.7,
            verification_temperature: 0.0,
            max_tokens: 256,
            concurrency: 8,
            templates: PromptTemplates::default(),
        }
    }
}

fn render(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in pairs {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

fn parse_numbered_line(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &trimmed[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    let query = rest.trim();
    (!query.is_empty()).then_some(query)
}

fn parse_numbered_list(completion: &str) -> Vec<String> {
    completion
        .lines()
        .filter_map(parse_numbered_line)
        .map(str::to_string)
        .collect()
}

/// Generates up to `|personas| * queries_per_persona` queries for one
/// document. Case-folded duplicates are removed; a completion that is not a
/// numbered list gets one re-prompt before the document is given up on.
pub fn generate_queries(
    doc: &Document,
    personas: &[Persona],
    queries_per_persona: usize,
    client: &dyn ChatClient,
    opts: &SynthgenOptions,
) -> Result<Vec<SyntheticQuery>> {
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for persona in personas {
        let user = render(
            &opts.templates.generation,
            &[
                ("instruction", persona.instruction.as_str()),
                ("n", &queries_per_persona.to_string()),
                ("document", doc.text.as_str()),
            ],
        );
        let request = ChatRequest {
            system: opts.templates.generation_system.clone(),
            user,
            temperature: opts.generation_temperature,
            max_tokens: opts.max_tokens,
        };
        let mut parsed = parse_numbered_list(&client.chat(&request)?.text);
        if parsed.is_empty() {
            log::warn!(
                "document {:?}, persona {:?}: completion was not a numbered list; re-prompting",
                doc.id,
                persona.name
            );
            parsed = parse_numbered_list(&client.chat(&request)?.text);
        }
        if parsed.is_empty() {
            return Err(Error::UnparseableCompletion {
                doc_id: doc.id.clone(),
            });
        }
        for (k, text) in parsed.into_iter().take(queries_per_persona).enumerate() {
            if text.trim().is_empty() || text.to_lowercase() == doc.text.to_lowercase() {
                continue;
            }
            if !seen.insert(text.to_lowercase()) {
                continue;
            }
            queries.push(SyntheticQuery {
                query_id: format!("{}::{}::{}", doc.id, persona.name, k),
                text,
                persona: persona.name.clone(),
                positive_doc_id: doc.id.clone(),
            });
        }
    }
    Ok(queries)
}

/// Corpus-wide generation outcome.
#[derive(Debug)]
pub struct GenerationOutcome {
    pub queries: Vec<SyntheticQuery>,
    /// Documents skipped after an unparseable completion plus re-prompt.
    pub skipped_docs: usize,
}

/// Runs [`generate_queries`] over the whole corpus with bounded concurrency.
/// Output order follows corpus order regardless of completion order.
pub fn generate_for_corpus(
    corpus: &Corpus,
    personas: &[Persona],
    client: &dyn ChatClient,
    opts: &SynthgenOptions,
) -> Result<GenerationOutcome> {
    let mut names = HashSet::new();
    for p in personas {
        if !names.insert(p.name.as_str()) {
            return Err(Error::Config(format!(
                "persona name {:?} is not unique",
                p.name
            )));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let per_doc: Vec<Result<Vec<SyntheticQuery>>> = pool.install(|| {
        use rayon::prelude::*;
        corpus
            .documents()
            .par_iter()
            .map(|doc| generate_queries(doc, personas, opts.queries_per_persona, client, opts))
            .collect()
    });

    let mut queries = Vec::new();
    let mut skipped = 0usize;
    for result in per_doc {
        match result {
            Ok(batch) => queries.extend(batch),
            Err(Error::UnparseableCompletion { doc_id }) => {
                log::warn!("skipping document {doc_id:?}: unparseable completion");
                skipped += 1;
            }
            Err(other) => return Err(other),
        }
    }
    let mut ids = HashSet::new();
    for q in &queries {
        if !ids.insert(q.query_id.as_str()) {
            return Err(Error::DuplicateQueryId {
                id: q.query_id.clone(),
            });
        }
    }
    Ok(GenerationOutcome {
        queries,
        skipped_docs: skipped,
    })
}

fn first_label(completion: &str) -> String {
    completion
        .split_whitespace()
        .next()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .unwrap_or_default()
}

fn label_to_verdict(label: &str) -> Option<Verdict> {
    match label.to_ascii_uppercase().as_str() {
        "YES" => Some(Verdict::FalseNegative),
        "NO" => Some(Verdict::TrueNegative),
        _ => None,
    }
}

/// Asks the LLM whether `candidate_text` answers the query. YES means the
/// mined negative is actually relevant (a false negative). An unparseable
/// label is re-prompted once and then conservatively kept as a true negative.
pub fn verify_negative(
    query: &SyntheticQuery,
    positive_text: &str,
    candidate_text: &str,
    client: &dyn ChatClient,
    opts: &SynthgenOptions,
) -> Result<VerificationVerdict> {
    let user = render(
        &opts.templates.verification,
        &[
            ("query", query.text.as_str()),
            ("document", candidate_text),
            ("positive", positive_text),
        ],
    );
    let request = ChatRequest {
        system: opts.templates.verification_system.clone(),
        user,
        temperature: opts.verification_temperature,
        max_tokens: 8,
    };
    let mut label = first_label(&client.chat(&request)?.text);
    if label_to_verdict(&label).is_none() {
        label = first_label(&client.chat(&request)?.text);
    }
    let verdict = label_to_verdict(&label).unwrap_or_else(|| {
        log::warn!(
            "query {:?}: unparseable verification label {:?} twice; defaulting to true negative",
            query.query_id,
            label
        );
        Verdict::TrueNegative
    });
    Ok(VerificationVerdict {
        query_id: query.query_id.clone(),
        doc_id: String::new(), // filled by the caller, which knows the id
        verdict,
        raw_label: label,
    })
}

/// Result of [`filter_negatives`].
#[derive(Debug)]
pub struct FilterOutcome {
    /// Surviving candidates per query, original order preserved.
    pub verified: Vec<MinedNegatives>,
    pub report: FalseNegativeReport,
    /// Verdicts that fell back to true negative after two unparseable labels.
    pub defaulted_labels: usize,
    /// Queries whose candidate list emptied out (retained for training:
    /// in-batch terms still supervise them).
    pub zero_negative_queries: Vec<String>,
}

/// Verifies every mined candidate and removes false negatives.
///
/// Verdicts already present in the checkpoint file are reused; new verdicts
/// are appended chunk by chunk, so an aborted run resumes where it stopped.
pub fn filter_negatives(
    queries: &[SyntheticQuery],
    mined: &[MinedNegatives],
    corpus: &Corpus,
    client: &dyn ChatClient,
    opts: &SynthgenOptions,
    mined_per_query: usize,
    checkpoint_path: Option<&Path>,
) -> Result<FilterOutcome> {
    let by_id: HashMap<&str, &SyntheticQuery> =
        queries.iter().map(|q| (q.query_id.as_str(), q)).collect();

    // Pre-resolve every text so dangling ids fail before any LLM call.
    struct Task<'a> {
        query: &'a SyntheticQuery,
        positive_text: &'a str,
        doc_id: &'a str,
        candidate_text: &'a str,
    }
    let mut tasks: Vec<Task> = Vec::new();
    let mut known: HashMap<(String, String), VerificationVerdict> = HashMap::new();
    if let Some(path) = checkpoint_path {
        for verdict in read_verdicts_jsonl(path)? {
            known.insert((verdict.query_id.clone(), verdict.doc_id.clone()), verdict);
        }
    }
    for entry in mined {
        let query = by_id
            .get(entry.query_id.as_str())
            .copied()
            .ok_or_else(|| Error::UnknownQuery {
                id: entry.query_id.clone(),
            })?;
        let positive = corpus
            .get(&query.positive_doc_id)
            .ok_or_else(|| Error::UnknownDoc {
                id: query.positive_doc_id.clone(),
            })?;
        for candidate in &entry.candidates {
            let doc = corpus.get(&candidate.doc_id).ok_or_else(|| Error::UnknownDoc {
                id: candidate.doc_id.clone(),
            })?;
            if known.contains_key(&(entry.query_id.clone(), candidate.doc_id.clone())) {
                continue;
            }
            tasks.push(Task {
                query,
                positive_text: &positive.text,
                doc_id: &candidate.doc_id,
                candidate_text: &doc.text,
            });
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut checkpoint_writer = match checkpoint_path {
        Some(path) => {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
            Some(BufWriter::new(file))
        }
        None => None,
    };

    let chunk_size = opts.concurrency.max(1);
    for chunk in tasks.chunks(chunk_size) {
        let results: Vec<Result<VerificationVerdict>> = pool.install(|| {
            use rayon::prelude::*;
            chunk
                .par_iter()
                .map(|task| {
                    verify_negative(task.query, task.positive_text, task.candidate_text, client, opts)
                        .map(|mut verdict| {
                            verdict.doc_id = task.doc_id.to_string();
                            verdict
                        })
                })
                .collect()
        });
        let mut first_error = None;
        for result in results {
            match result {
                Ok(verdict) => {
                    if let Some(writer) = &mut checkpoint_writer {
                        serde_json::to_writer(&mut *writer, &verdict)?;
                        writer.write_all(b"\n")?;
                    }
                    known.insert((verdict.query_id.clone(), verdict.doc_id.clone()), verdict);
                }
                Err(e) if first_error.is_none() => first_error = Some(e),
                Err(_) => {}
            }
        }
        if let Some(writer) = &mut checkpoint_writer {
            writer.flush()?;
        }
        if let Some(e) = first_error {
            return Err(e);
        }
    }

    let mut verified = Vec::with_capacity(mined.len());
    let mut total_mined = 0usize;
    let mut total_false = 0usize;
    let mut defaulted = 0usize;
    let mut zero_negative_queries = Vec::new();
    for entry in mined {
        let mut survivors = Vec::new();
        for candidate in &entry.candidates {
            total_mined += 1;
            let verdict = &known[&(entry.query_id.clone(), candidate.doc_id.clone())];
            match verdict.verdict {
                Verdict::FalseNegative => total_false += 1,
                Verdict::TrueNegative => {
                    if !verdict.raw_label.eq_ignore_ascii_case("NO") {
                        defaulted += 1;
                    }
                    survivors.push(candidate.clone());
                }
            }
        }
        if survivors.is_empty() {
            log::warn!(
                "query {:?} has no surviving negatives; kept (in-batch terms still supervise it)",
                entry.query_id
            );
            zero_negative_queries.push(entry.query_id.clone());
        }
        verified.push(MinedNegatives {
            query_id: entry.query_id.clone(),
            candidates: survivors,
        });
    }

    let rate = if total_mined > 0 {
        total_false as f64 / total_mined as f64
    } else {
        0.0
    };
    Ok(FilterOutcome {
        verified,
        report: FalseNegativeReport {
            dataset_name: corpus.name().to_string(),
            mined_per_query,
            total_mined,
            total_false,
            rate,
        },
        defaulted_labels: defaulted,
        zero_negative_queries,
    })
}

pub fn write_queries_jsonl<W: Write>(queries: &[SyntheticQuery], mut w: W) -> Result<()> {
    for q in queries {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_queries_jsonl(path: &Path) -> Result<Vec<SyntheticQuery>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut queries = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let q: SyntheticQuery = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !ids.insert(q.query_id.clone()) {
            return Err(Error::DuplicateQueryId { id: q.query_id });
        }
        queries.push(q);
    }
    Ok(queries)
}

pub fn read_verdicts_jsonl(path: &Path) -> Result<Vec<VerificationVerdict>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut verdicts = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let v: VerificationVerdict =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        verdicts.push(v);
    }
    Ok(verdicts)
}
