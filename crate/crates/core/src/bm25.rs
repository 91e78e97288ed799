//! Okapi BM25 inverted index and hard-negative mining.
//!
//! Scoring uses the non-negative idf form `ln(1 + (N - df + 0.5) / (df + 0.5))`
//! with defaults k1 = 1.2, b = 0.75. Ranking ties are always broken by
//! ascending doc id so results are stable across runs and platforms.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::synthgen::SyntheticQuery;

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    /// Term-frequency saturation.
    pub k1: f64,
    /// Document-length normalization, in [0, 1].
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Lowercased Unicode-alphanumeric token spans.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lower in ch.to_lowercase() {
                current.push(lower);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Immutable inverted index over a corpus.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    /// Sorted doc ids; postings refer to positions in this vector.
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    /// term -> (doc position, term frequency), ascending by position.
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    doc_lengths: Vec<usize>,
    avg_doc_length: f64,
}

/// One mined candidate: ranks start at 1, scores are non-increasing by rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeCandidate {
    pub doc_id: String,
    #[serde(rename = "score")]
    pub bm25_score: f64,
    pub rank: usize,
}

/// Builds the inverted index; the corpus must be non-empty.
pub fn build_index(corpus: &Corpus, params: Bm25Params) -> Result<Bm25Index> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let doc_ids: Vec<String> = corpus.documents().iter().map(|d| d.id.clone()).collect();
    let doc_index = doc_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(doc_ids.len());
    for (pos, doc) in corpus.documents().iter().enumerate() {
        let tokens = tokenize(&doc.text);
        doc_lengths.push(tokens.len());
        let mut freqs: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokens {
            *freqs.entry(t).or_insert(0) += 1;
        }
        for (term, tf) in freqs {
            postings.entry(term).or_default().push((pos, tf));
        }
    }
    let avg_doc_length = doc_lengths.iter().sum::<usize>() as f64 / doc_lengths.len() as f64;
    Ok(Bm25Index {
        params,
        doc_ids,
        doc_index,
        postings,
        doc_lengths,
        avg_doc_length,
    })
}

impl Bm25Index {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<usize> {
        self.doc_index.get(doc_id).map(|&p| self.doc_lengths[p])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.doc_index.contains_key(doc_id)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc_len: usize, df: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * doc_len as f64 / self.avg_doc_length;
        self.idf(df) * (tf * (k1 + 1.0)) / (tf + k1 * norm)
    }

    /// BM25 score of one document for the given query terms. Terms absent
    /// from the index contribute 0; an unknown doc id is an error.
    pub fn score(&self, query_terms: &[String], doc_id: &str) -> Result<f64> {
        let &pos = self.doc_index.get(doc_id).ok_or_else(|| Error::UnknownDoc {
            id: doc_id.to_string(),
        })?;
        let doc_len = self.doc_lengths[pos];
        let mut total = 0.0;
        for term in query_terms {
            if let Some(list) = self.postings.get(term) {
                if let Ok(i) = list.binary_search_by_key(&pos, |&(p, _)| p) {
                    total += self.term_weight(list[i].1, doc_len, list.len());
                }
            }
        }
        Ok(total)
    }

    /// The k highest-scoring documents for `query`, excluding `exclude` and
    /// any zero-score document. Ties break by ascending doc id.
    pub fn top_k(&self, query: &str, k: usize, exclude: &HashSet<String>) -> Vec<NegativeCandidate> {
        let terms = tokenize(query);
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in &terms {
            if let Some(list) = self.postings.get(term) {
                let df = list.len();
                for &(pos, tf) in list {
                    *scores.entry(pos).or_insert(0.0) +=
                        self.term_weight(tf, self.doc_lengths[pos], df);
                }
            }
        }
        let mut scored: Vec<(usize, f64)> = scores
            .into_iter()
            .filter(|&(pos, score)| score > 0.0 && !exclude.contains(&self.doc_ids[pos]))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.doc_ids[a.0].cmp(&self.doc_ids[b.0]))
        });
        scored.truncate(k);
        scored
            .into_iter()
            .enumerate()
            .map(|(i, (pos, score))| NegativeCandidate {
                doc_id: self.doc_ids[pos].clone(),
                bm25_score: score,
                rank: i + 1,
            })
            .collect()
    }
}

/// Mines the top-k lexical negatives for a query, excluding its positive.
pub fn mine_hard_negatives(
    index: &Bm25Index,
    query: &SyntheticQuery,
    k: usize,
) -> Result<Vec<NegativeCandidate>> {
    if !index.contains(&query.positive_doc_id) {
        return Err(Error::UnknownDoc {
            id: query.positive_doc_id.clone(),
        });
    }
    let exclude: HashSet<String> = std::iter::once(query.positive_doc_id.clone()).collect();
    Ok(index.top_k(&query.text, k, &exclude))
}

/// Per-query mined candidate list, as written by the `mine` stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinedNegatives {
    pub query_id: String,
    pub candidates: Vec<NegativeCandidate>,
}
