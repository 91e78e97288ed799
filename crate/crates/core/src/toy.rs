//! Synthetic benchmark corpus: clustered documents with shared filler noise.
//!
//! Each cluster has its own topic vocabulary; every document mixes topic
//! tokens with filler words drawn from a corpus-wide pool. The filler overlap
//! across clusters is what makes baseline bag-of-token retrieval noisy, and
//! what an adapter can learn to discount.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document};
use crate::error::Result;

/// Workplace filler vocabulary shared by every cluster. The chat simulator
/// draws from the same pool when it phrases queries.
pub const COMMON_WORDS: &[&str] = &[
    "update", "status", "meeting", "report", "team", "project", "review", "schedule", "budget",
    "plan", "notes", "summary", "deadline", "client", "draft", "email", "thread", "request",
    "approval", "agenda", "minutes", "launch", "release", "issue", "ticket", "feedback", "sync",
    "call", "invoice", "contract", "offsite", "roadmap", "metrics", "quarter", "forecast",
    "headcount", "vendor", "policy", "training", "onboarding",
];

/// Cluster themes; topic tokens are `{theme}{index:02}`.
const THEMES: &[&str] = &[
    "payroll", "kernel", "vaccine", "orbit", "harvest", "tariff", "regatta", "opera",
];

/// Shape of the generated corpus.
#[derive(Debug, Clone)]
pub struct ToyCorpusSpec {
    pub clusters: usize,
    pub docs_per_cluster: usize,
    pub topic_vocab_per_cluster: usize,
    pub topic_tokens_per_doc: usize,
    pub common_tokens_per_doc: usize,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        ToyCorpusSpec {
            clusters: 8,
            docs_per_cluster: 25,
            topic_vocab_per_cluster: 20,
            topic_tokens_per_doc: 8,
            common_tokens_per_doc: 8,
            seed: 42,
        }
    }
}

/// Generates the clustered corpus deterministically from the spec's seed.
pub fn toy_corpus(spec: &ToyCorpusSpec) -> Result<Corpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut documents = Vec::with_capacity(spec.clusters * spec.docs_per_cluster);
    for cluster in 0..spec.clusters {
        let theme = THEMES[cluster % THEMES.len()];
        let topic_vocab: Vec<String> = (0..spec.topic_vocab_per_cluster)
            .map(|j| format!("{theme}{j:02}"))
            .collect();
        for doc in 0..spec.docs_per_cluster {
            let mut topics = topic_vocab.clone();
            topics.shuffle(&mut rng);
            topics.truncate(spec.topic_tokens_per_doc);

            let mut commons: Vec<String> = COMMON_WORDS.iter().map(|w| w.to_string()).collect();
            commons.shuffle(&mut rng);
            commons.truncate(spec.common_tokens_per_doc);

            let mut tokens: Vec<String> = topics.into_iter().chain(commons).collect();
            tokens.shuffle(&mut rng);

            let id = format!("c{cluster}-d{doc:03}");
            documents.push(Document::new(id, tokens.join(" "), "toy"));
        }
    }
    Corpus::from_documents("toy", documents)
}
