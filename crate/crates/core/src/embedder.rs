//! Uniform embedding interface: query prompt formatting, an OpenAI-compatible
//! HTTP provider, a deterministic mock, and an append-only on-disk cache.
//!
//! Base-model embeddings are computed once and cached; training and
//! evaluation read only the cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bm25::tokenize;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::retry::{classify_ureq, with_retries, AttemptError, RetryPolicy};
use crate::synthgen::SyntheticQuery;

/// Default task instruction prepended to queries for prompted models.
pub const DEFAULT_QUERY_TASK_PROMPT: &str = "Retrieval relevant passage for the given query";

/// Whether queries get an instruction prefix. Documents are never prefixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    None,
    QueryOnly,
}

/// Settings of the frozen base embedding model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub dimension: usize,
    /// Tokens; truncation is delegated to the endpoint.
    pub max_sequence_length: usize,
    pub query_task_prompt: Option<String>,
    pub prompt_mode: PromptMode,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            endpoint_url: String::new(),
            model_name: "mock".to_string(),
            dimension: 256,
            max_sequence_length: 1024,
            query_task_prompt: Some(DEFAULT_QUERY_TASK_PROMPT.to_string()),
            prompt_mode: PromptMode::None,
        }
    }
}

/// A dense vector from the frozen base model, stored un-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
}

impl Embedding {
    pub fn dimension(&self) -> usize {
        self.vector.len()
    }
}

/// What is being embedded; part of the cache key, and queries are formatted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextKind {
    Query,
    Document,
}

impl TextKind {
    fn tag(self) -> &'static str {
        match self {
            TextKind::Query => "query",
            TextKind::Document => "document",
        }
    }
}

/// Applies the instruction prefix to a query. With `prompt_mode = none` the
/// text passes through unchanged.
pub fn format_query(text: &str, config: &EmbedderConfig) -> Result<String> {
    match config.prompt_mode {
        PromptMode::None => Ok(text.to_string()),
        PromptMode::QueryOnly => {
            let task = config.query_task_prompt.as_deref().ok_or_else(|| {
                Error::Config(
                    "prompt_mode = query_only requires a query_task_prompt".to_string(),
                )
            })?;
            Ok(format!("Instruct: {task}\nQuery:{text}"))
        }
    }
}

/// Cache key for one embedded text.
pub fn cache_key(model_name: &str, kind: TextKind, formatted_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_name.as_bytes());
    hasher.update([0]);
    hasher.update(kind.tag().as_bytes());
    hasher.update([0]);
    hasher.update(formatted_text.as_bytes());
    hex::encode(hasher.finalize())
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic bag-of-tokens embedding: each token hashes to one component
/// and a sign, and the sparse result is L2-normalized. Texts sharing tokens
/// get higher cosine similarity.
pub fn mock_embed(text: &str, dimension: usize) -> Embedding {
    assert!(dimension >= 2, "mock_embed requires dimension >= 2");
    let mut vector = vec![0.0f64; dimension];
    for token in tokenize(text) {
        let h = fnv1a64(token.as_bytes());
        let index = (h % dimension as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        vector[index] += sign;
    }
    let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        vector[0] = 1.0;
    } else {
        for x in &mut vector {
            *x /= norm;
        }
    }
    Embedding { vector }
}

/// A batch embedding backend.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// In-process [`mock_embed`] backend.
pub struct MockEmbeddingProvider {
    pub dimension: usize,
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| mock_embed(t, self.dimension).vector)
            .collect())
    }
}

/// OpenAI-compatible `/embeddings` client with the shared retry policy.
pub struct HttpEmbeddingProvider {
    agent: ureq::Agent,
    endpoint_url: String,
    model_name: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl HttpEmbeddingProvider {
    pub fn new(
        endpoint_url: impl Into<String>,
        model_name: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
        timeout: std::time::Duration,
    ) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        HttpEmbeddingProvider {
            agent: config.into(),
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            api_key,
            retry,
        }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let url = format!("{}/embeddings", self.endpoint_url.trim_end_matches('/'));
        let body = serde_json::json!({"model": self.model_name, "input": texts});
        let mut data = with_retries(&self.retry, "embeddings", || {
            let mut req = self
                .agent
                .post(&url)
                .header("content-type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("authorization", &format!("Bearer {key}"));
            }
            let mut response = req.send_json(&body).map_err(classify_ureq)?;
            let parsed: EmbeddingsResponse = response
                .body_mut()
                .read_json()
                .map_err(|e| AttemptError::Fatal(Error::MalformedResponse(e.to_string())))?;
            Ok(parsed.data)
        })?;
        if data.len() != texts.len() {
            return Err(Error::MalformedResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index.unwrap());
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}

/// Append-only `{"key","vector"}` jsonl file with an in-memory index.
pub struct EmbeddingCache {
    index: HashMap<String, Vec<f64>>,
    writer: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    vector: Vec<f64>,
}

impl EmbeddingCache {
    /// Opens (creating if needed) a cache file and loads its index.
    pub fn open(path: &Path) -> Result<Self> {
        let mut index = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord =
                    serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                        path: path.to_path_buf(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                index.insert(record.key, record.vector);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(EmbeddingCache {
            index,
            writer: Some(BufWriter::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    /// Cache without a backing file.
    pub fn in_memory() -> Self {
        EmbeddingCache {
            index: HashMap::new(),
            writer: None,
            path: None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&Vec<f64>> {
        self.index.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn put(&mut self, key: String, vector: Vec<f64>) -> Result<()> {
        if let Some(writer) = &mut self.writer {
            serde_json::to_writer(
                &mut *writer,
                &CacheRecord {
                    key: key.clone(),
                    vector: vector.clone(),
                },
            )?;
            writer.write_all(b"\n")?;
        }
        self.index.insert(key, vector);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(writer) = &mut self.writer {
            writer.flush()?;
        }
        Ok(())
    }
}

/// Embedding front end combining config, provider and cache.
pub struct Embedder {
    config: EmbedderConfig,
    provider: Box<dyn EmbeddingProvider>,
    network_batches: AtomicU64,
}

impl Embedder {
    pub fn new(config: EmbedderConfig, provider: Box<dyn EmbeddingProvider>) -> Self {
        Embedder {
            config,
            provider,
            network_batches: AtomicU64::new(0),
        }
    }

    /// Embedder backed by the deterministic mock.
    pub fn mock(config: EmbedderConfig) -> Self {
        let dimension = config.dimension;
        Embedder::new(config, Box::new(MockEmbeddingProvider { dimension }))
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    /// Number of provider calls made so far (cache hits skip the provider).
    pub fn network_batches(&self) -> u64 {
        self.network_batches.load(Ordering::SeqCst)
    }

    /// Embeds texts in input order. Queries are prompt-formatted first; cache
    /// hits skip the provider entirely.
    pub fn embed_batch(
        &self,
        texts: &[String],
        kind: TextKind,
        cache: &mut EmbeddingCache,
    ) -> Result<Vec<Embedding>> {
        let mut formatted = Vec::with_capacity(texts.len());
        for text in texts {
            let f = match kind {
                TextKind::Query => format_query(text, &self.config)?,
                TextKind::Document => text.clone(),
            };
            if f.chars().count() > 4 * self.config.max_sequence_length {
                log::warn!(
                    "text of {} chars likely exceeds the model's {}-token window; the endpoint will truncate",
                    f.chars().count(),
                    self.config.max_sequence_length
                );
            }
            formatted.push(f);
        }
        let keys: Vec<String> = formatted
            .iter()
            .map(|f| cache_key(&self.config.model_name, kind, f))
            .collect();

        let mut miss_texts = Vec::new();
        let mut miss_keys = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (key, text) in keys.iter().zip(&formatted) {
            if !cache.contains(key) && seen.insert(key.clone()) {
                miss_keys.push(key.clone());
                miss_texts.push(text.clone());
            }
        }
        if !miss_texts.is_empty() {
            self.network_batches.fetch_add(1, Ordering::SeqCst);
            let vectors = self.provider.embed(&miss_texts)?;
            for (key, vector) in miss_keys.into_iter().zip(vectors) {
                if vector.len() != self.config.dimension {
                    return Err(Error::DimensionMismatch {
                        expected: self.config.dimension,
                        got: vector.len(),
                    });
                }
                cache.put(key, vector)?;
            }
        }
        keys.iter()
            .map(|key| {
                cache
                    .get(key)
                    .map(|v| Embedding { vector: v.clone() })
                    .ok_or_else(|| Error::MissingEmbedding {
                        kind: kind.tag(),
                        id: key.clone(),
                    })
            })
            .collect()
    }
}

/// Id-keyed embeddings for a corpus plus a query set; what training and
/// evaluation actually consume.
pub struct EmbeddingStore {
    queries: HashMap<String, Embedding>,
    docs: HashMap<String, Embedding>,
    dimension: usize,
}

const RESOLVE_CHUNK: usize = 128;

impl EmbeddingStore {
    /// Embeds (through the cache) every corpus document and every query.
    pub fn resolve(
        embedder: &Embedder,
        cache: &mut EmbeddingCache,
        corpus: &Corpus,
        queries: &[SyntheticQuery],
    ) -> Result<Self> {
        let mut docs = HashMap::new();
        let doc_list = corpus.documents();
        for chunk in doc_list.chunks(RESOLVE_CHUNK) {
            let texts: Vec<String> = chunk.iter().map(|d| d.text.clone()).collect();
            let embedded = embedder.embed_batch(&texts, TextKind::Document, cache)?;
            for (doc, e) in chunk.iter().zip(embedded) {
                docs.insert(doc.id.clone(), e);
            }
        }
        let mut query_map = HashMap::new();
        for chunk in queries.chunks(RESOLVE_CHUNK) {
            let texts: Vec<String> = chunk.iter().map(|q| q.text.clone()).collect();
            let embedded = embedder.embed_batch(&texts, TextKind::Query, cache)?;
            for (q, e) in chunk.iter().zip(embedded) {
                query_map.insert(q.query_id.clone(), e);
            }
        }
        Ok(EmbeddingStore {
            queries: query_map,
            docs,
            dimension: embedder.config().dimension,
        })
    }

    /// Builds the store strictly from cached vectors; any miss is an error
    /// naming the id.
    pub fn from_cache(
        config: &EmbedderConfig,
        cache: &EmbeddingCache,
        corpus: &Corpus,
        queries: &[SyntheticQuery],
    ) -> Result<Self> {
        let mut docs = HashMap::new();
        for doc in corpus.documents() {
            let key = cache_key(&config.model_name, TextKind::Document, &doc.text);
            let vector = cache.get(&key).ok_or_else(|| Error::MissingEmbedding {
                kind: "document",
                id: doc.id.clone(),
            })?;
            docs.insert(
                doc.id.clone(),
                Embedding {
                    vector: vector.clone(),
                },
            );
        }
        let mut query_map = HashMap::new();
        for q in queries {
            let formatted = format_query(&q.text, config)?;
            let key = cache_key(&config.model_name, TextKind::Query, &formatted);
            let vector = cache.get(&key).ok_or_else(|| Error::MissingEmbedding {
                kind: "query",
                id: q.query_id.clone(),
            })?;
            query_map.insert(
                q.query_id.clone(),
                Embedding {
                    vector: vector.clone(),
                },
            );
        }
        Ok(EmbeddingStore {
            queries: query_map,
            docs,
            dimension: config.dimension,
        })
    }

    pub fn query(&self, query_id: &str) -> Result<&Embedding> {
        self.queries.get(query_id).ok_or_else(|| Error::MissingEmbedding {
            kind: "query",
            id: query_id.to_string(),
        })
    }

    pub fn doc(&self, doc_id: &str) -> Result<&Embedding> {
        self.docs.get(doc_id).ok_or_else(|| Error::MissingEmbedding {
            kind: "document",
            id: doc_id.to_string(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query_only_config() -> EmbedderConfig {
        EmbedderConfig {
            prompt_mode: PromptMode::QueryOnly,
            ..EmbedderConfig::default()
        }
    }

    #[test]
    fn format_query_prepends_instruction() {
        let formatted = format_query("who approved the budget?", &query_only_config()).unwrap();
        assert_eq!(
            formatted,
            "Instruct: Retrieval relevant passage for the given query\nQuery:who approved the budget?"
        );
    }

    #[test]
    fn format_query_identity_without_prompting() {
        let config = EmbedderConfig::default();
        assert_eq!(format_query("any text", &config).unwrap(), "any text");
    }

    #[test]
    fn format_query_missing_task_is_config_error() {
        let config = EmbedderConfig {
            query_task_prompt: None,
            ..query_only_config()
        };
        assert!(matches!(
            format_query("text", &config),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mock_embed_identical_text_has_cosine_one() {
        let a = mock_embed("alpha beta gamma", 64);
        let b = mock_embed("alpha beta gamma", 64);
        assert_eq!(a, b);
        let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
        assert!((dot - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mock_embed_shared_tokens_raise_cosine() {
        let base = mock_embed("a b c", 512);
        let close = mock_embed("a b d", 512);
        let far = mock_embed("x y z", 512);
        let cos = |u: &Embedding, v: &Embedding| -> f64 {
            u.vector.iter().zip(&v.vector).map(|(x, y)| x * y).sum()
        };
        assert!(cos(&base, &close) > cos(&base, &far));
    }

    #[test]
    fn mock_embed_disjoint_tokens_near_orthogonal() {
        // 100 seeded random disjoint pairs, <= 10 tokens each, dim 256.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n_a = rng.random_range(1..=10);
            let n_b = rng.random_range(1..=10);
            let a_tokens: Vec<String> = (0..n_a)
                .map(|_| format!("left{}", rng.random_range(0..100_000)))
                .collect();
            let b_tokens: Vec<String> = (0..n_b)
                .map(|_| format!("right{}", rng.random_range(0..100_000)))
                .collect();
            let a = mock_embed(&a_tokens.join(" "), 256);
            let b = mock_embed(&b_tokens.join(" "), 256);
            let cos: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
            assert!(cos.abs() < 0.2, "disjoint cosine {cos} too large");
        }
    }

    #[test]
    fn cache_round_trip_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let mut cache = EmbeddingCache::open(&path).unwrap();
            cache.put("k1".into(), vec![1.0, 2.0]).unwrap();
            cache.put("k2".into(), vec![3.0, 4.0]).unwrap();
            cache.flush().unwrap();
        }
        let cache = EmbeddingCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        assert_eq!(cache.get("k1"), Some(&vec![1.0, 2.0]));
    }

    #[test]
    fn embed_batch_serves_repeats_from_cache() {
        let embedder = Embedder::mock(EmbedderConfig {
            dimension: 32,
            ..EmbedderConfig::default()
        });
        let mut cache = EmbeddingCache::in_memory();
        let texts = vec!["same text".to_string()];
        let first = embedder
            .embed_batch(&texts, TextKind::Document, &mut cache)
            .unwrap();
        assert_eq!(embedder.network_batches(), 1);
        let second = embedder
            .embed_batch(&texts, TextKind::Document, &mut cache)
            .unwrap();
        assert_eq!(embedder.network_batches(), 1, "second call must hit cache");
        assert_eq!(first, second);
    }

    #[test]
    fn embed_batch_preserves_input_order() {
        let embedder = Embedder::mock(EmbedderConfig {
            dimension: 32,
            ..EmbedderConfig::default()
        });
        let mut cache = EmbeddingCache::in_memory();
        let texts: Vec<String> = vec!["one".into(), "two".into(), "one".into()];
        let out = embedder
            .embed_batch(&texts, TextKind::Document, &mut cache)
            .unwrap();
        assert_eq!(out[0], out[2]);
        assert_ne!(out[0], out[1]);
        assert_eq!(out[0], mock_embed("one", 32));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        struct WrongDim;
        impl EmbeddingProvider for WrongDim {
            fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
                Ok(texts.iter().map(|_| vec![0.0; 512]).collect())
            }
        }
        let embedder = Embedder::new(
            EmbedderConfig {
                dimension: 1024,
                ..EmbedderConfig::default()
            },
            Box::new(WrongDim),
        );
        let mut cache = EmbeddingCache::in_memory();
        let err = embedder
            .embed_batch(&["x".to_string()], TextKind::Document, &mut cache)
            .unwrap_err();
        match err {
            Error::DimensionMismatch { expected, got } => {
                assert_eq!((expected, got), (1024, 512));
            }
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn cache_key_separates_kind_and_model() {
        let k1 = cache_key("m1", TextKind::Query, "text");
        let k2 = cache_key("m1", TextKind::Document, "text");
        let k3 = cache_key("m2", TextKind::Query, "text");
        assert_ne!(k1, k2);
        assert_ne!(k1, k3);
    }
}
