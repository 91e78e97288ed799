//! Training-instance assembly and the strict query-level train/eval split.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bm25::MinedNegatives;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::synthgen::SyntheticQuery;

/// One unit of contrastive supervision: a query, its positive document, and
/// its verified hard negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingInstance {
    pub query: SyntheticQuery,
    pub negative_doc_ids: Vec<String>,
}

impl TrainingInstance {
    /// Validates that the positive is absent from the negatives and that the
    /// negative list has no duplicates.
    pub fn new(query: SyntheticQuery, negative_doc_ids: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for id in &negative_doc_ids {
            if *id == query.positive_doc_id {
                return Err(Error::NegativeIsPositive {
                    query_id: query.query_id.clone(),
                    doc_id: id.clone(),
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateDocId { id: id.clone() });
            }
        }
        Ok(TrainingInstance {
            query,
            negative_doc_ids,
        })
    }

    pub fn positive_doc_id(&self) -> &str {
        &self.query.positive_doc_id
    }
}

/// Flat jsonl record for a training instance.
#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    query_id: String,
    query_text: String,
    persona: String,
    positive_doc_id: String,
    negative_doc_ids: Vec<String>,
}

impl From<&TrainingInstance> for InstanceRecord {
    fn from(instance: &TrainingInstance) -> Self {
        InstanceRecord {
            query_id: instance.query.query_id.clone(),
            query_text: instance.query.text.clone(),
            persona: instance.query.persona.clone(),
            positive_doc_id: instance.query.positive_doc_id.clone(),
            negative_doc_ids: instance.negative_doc_ids.clone(),
        }
    }
}

/// Builds one instance per query, truncating verified negatives to the best
/// `k` BM25 ranks. All referenced ids must resolve in the corpus.
pub fn assemble_instances(
    queries: &[SyntheticQuery],
    verified: &[MinedNegatives],
    corpus: &Corpus,
    negatives_per_sample: usize,
) -> Result<Vec<TrainingInstance>> {
    let by_query: HashMap<&str, &MinedNegatives> =
        verified.iter().map(|m| (m.query_id.as_str(), m)).collect();
    let mut instances = Vec::with_capacity(queries.len());
    for query in queries {
        if !corpus.contains(&query.positive_doc_id) {
            return Err(Error::UnknownDoc {
                id: query.positive_doc_id.clone(),
            });
        }
        let negatives: Vec<String> = match by_query.get(query.query_id.as_str()) {
            Some(entry) => entry
                .candidates
                .iter()
                .take(negatives_per_sample)
                .map(|c| c.doc_id.clone())
                .collect(),
            None => Vec::new(),
        };
        for id in &negatives {
            if !corpus.contains(id) {
                return Err(Error::UnknownDoc { id: id.clone() });
            }
        }
        instances.push(TrainingInstance::new(query.clone(), negatives)?);
    }
    Ok(instances)
}

/// A query-level split: every query lives on exactly one side; documents may
/// appear on both.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<TrainingInstance>,
    pub eval: Vec<TrainingInstance>,
    pub seed: u64,
    pub ratio: f64,
}

/// Splits by query id: a seeded shuffle of the sorted query ids, with the
/// first `ceil(ratio * n)` going to train.
pub fn split_by_query(
    instances: &[TrainingInstance],
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio { got: ratio });
    }
    if instances.len() < 2 {
        return Err(Error::TooFewInstances {
            got: instances.len(),
        });
    }
    let mut query_ids: Vec<&str> = instances.iter().map(|i| i.query.query_id.as_str()).collect();
    query_ids.sort_unstable();
    query_ids.dedup();
    if query_ids.len() != instances.len() {
        // one instance per query is a structural requirement of the split
        return Err(Error::Config(
            "split input contains repeated query ids".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    query_ids.shuffle(&mut rng);
    let n_train = (ratio * query_ids.len() as f64).ceil() as usize;
    let train_ids: HashSet<&str> = query_ids[..n_train].iter().copied().collect();

    let mut train = Vec::with_capacity(n_train);
    let mut eval = Vec::with_capacity(instances.len() - n_train);
    for instance in instances {
        if train_ids.contains(instance.query.query_id.as_str()) {
            train.push(instance.clone());
        } else {
            eval.push(instance.clone());
        }
    }
    debug_assert_eq!(train.len() + eval.len(), instances.len());
    Ok(DatasetSplit {
        train,
        eval,
        seed,
        ratio,
    })
}

pub fn write_instances_jsonl<W: Write>(instances: &[TrainingInstance], mut w: W) -> Result<()> {
    for instance in instances {
        serde_json::to_writer(&mut w, &InstanceRecord::from(instance))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_instances_jsonl(path: &Path) -> Result<Vec<TrainingInstance>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut instances = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InstanceRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        instances.push(TrainingInstance::new(
            SyntheticQuery {
                query_id: record.query_id,
                text: record.query_text,
                persona: record.persona,
                positive_doc_id: record.positive_doc_id,
            },
            record.negative_doc_ids,
        )?);
    }
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bm25::NegativeCandidate;
    use crate::corpus::Document;

    fn query(id: &str, positive: &str) -> SyntheticQuery {
        SyntheticQuery {
            query_id: id.to_string(),
            text: format!("query {id}"),
            persona: "keyword".to_string(),
            positive_doc_id: positive.to_string(),
        }
    }

    fn instance(id: &str) -> TrainingInstance {
        TrainingInstance::new(query(id, "p"), vec![]).unwrap()
    }

    fn corpus(n: usize) -> Corpus {
        Corpus::from_documents(
            "c",
            (0..n)
                .map(|i| Document::new(format!("d{i}"), format!("text {i}"), "s"))
                .collect(),
        )
        .unwrap()
    }

    fn candidates(ids: &[&str]) -> Vec<NegativeCandidate> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| NegativeCandidate {
                doc_id: id.to_string(),
                bm25_score: 10.0 - i as f64,
                rank: i + 1,
            })
            .collect()
    }

    #[test]
    fn assemble_truncates_to_best_ranked() {
        let corpus = corpus(30);
        let queries = vec![query("q1", "d0")];
        let ids: Vec<String> = (1..26).map(|i| format!("d{i}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let verified = vec![MinedNegatives {
            query_id: "q1".to_string(),
            candidates: candidates(&id_refs),
        }];
        let instances = assemble_instances(&queries, &verified, &corpus, 20).unwrap();
        assert_eq!(instances[0].negative_doc_ids.len(), 20);
        assert_eq!(instances[0].negative_doc_ids[0], "d1");
        assert_eq!(instances[0].negative_doc_ids[19], "d20");
    }

    #[test]
    fn assemble_allows_empty_negative_list() {
        let corpus = corpus(2);
        let queries = vec![query("q1", "d0")];
        let verified = vec![MinedNegatives {
            query_id: "q1".to_string(),
            candidates: vec![],
        }];
        let instances = assemble_instances(&queries, &verified, &corpus, 8).unwrap();
        assert!(instances[0].negative_doc_ids.is_empty());
    }

    #[test]
    fn assemble_rejects_positive_among_negatives() {
        let corpus = corpus(3);
        let queries = vec![query("q1", "d1")];
        let verified = vec![MinedNegatives {
            query_id: "q1".to_string(),
            candidates: candidates(&["d2", "d1"]),
        }];
        let err = assemble_instances(&queries, &verified, &corpus, 8).unwrap_err();
        match err {
            Error::NegativeIsPositive { query_id, doc_id } => {
                assert_eq!(query_id, "q1");
                assert_eq!(doc_id, "d1");
            }
            other => panic!("expected NegativeIsPositive, got {other:?}"),
        }
    }

    #[test]
    fn assemble_rejects_dangling_ids() {
        let corpus = corpus(2);
        let queries = vec![query("q1", "missing")];
        let err = assemble_instances(&queries, &[], &corpus, 8).unwrap_err();
        assert!(matches!(err, Error::UnknownDoc { .. }));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let instances: Vec<TrainingInstance> = (0..10).map(|i| instance(&format!("q{i}"))).collect();
        let a = split_by_query(&instances, 0.8, 42).unwrap();
        let b = split_by_query(&instances, 0.8, 42).unwrap();
        assert_eq!(a.train.len(), 8);
        assert_eq!(a.eval.len(), 2);
        let ids = |side: &[TrainingInstance]| -> HashSet<String> {
            side.iter().map(|i| i.query.query_id.clone()).collect()
        };
        assert_eq!(ids(&a.train), ids(&b.train));
        assert!(ids(&a.train).is_disjoint(&ids(&a.eval)));
        let mut union: Vec<String> = ids(&a.train).into_iter().chain(ids(&a.eval)).collect();
        union.sort();
        let mut all: Vec<String> = instances.iter().map(|i| i.query.query_id.clone()).collect();
        all.sort();
        assert_eq!(union, all);
    }

    #[test]
    fn different_seed_same_sizes() {
        let instances: Vec<TrainingInstance> = (0..10).map(|i| instance(&format!("q{i}"))).collect();
        let a = split_by_query(&instances, 0.8, 42).unwrap();
        let b = split_by_query(&instances, 0.8, 43).unwrap();
        assert_eq!(b.train.len(), 8);
        assert_eq!(b.eval.len(), 2);
        let ids = |side: &[TrainingInstance]| -> HashSet<String> {
            side.iter().map(|i| i.query.query_id.clone()).collect()
        };
        // with 10 queries the chance of identical membership is tiny
        assert_ne!(ids(&a.train), ids(&b.train));
    }

    #[test]
    fn split_uses_ceiling_rule() {
        let instances: Vec<TrainingInstance> = (0..3).map(|i| instance(&format!("q{i}"))).collect();
        let split = split_by_query(&instances, 0.5, 42).unwrap();
        assert_eq!(split.train.len(), 2);
        assert_eq!(split.eval.len(), 1);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let instances: Vec<TrainingInstance> = (0..3).map(|i| instance(&format!("q{i}"))).collect();
        assert!(matches!(
            split_by_query(&instances, 1.0, 42),
            Err(Error::InvalidRatio { .. })
        ));
        assert!(matches!(
            split_by_query(&instances[..1], 0.5, 42),
            Err(Error::TooFewInstances { got: 1 })
        ));
    }

    #[test]
    fn instances_jsonl_round_trip() {
        let corpus = corpus(5);
        let queries = vec![query("q1", "d0"), query("q2", "d1")];
        let verified = vec![
            MinedNegatives {
                query_id: "q1".to_string(),
                candidates: candidates(&["d2", "d3"]),
            },
            MinedNegatives {
                query_id: "q2".to_string(),
                candidates: candidates(&["d4"]),
            },
        ];
        let instances = assemble_instances(&queries, &verified, &corpus, 8).unwrap();
        let mut buf = Vec::new();
        write_instances_jsonl(&instances, &mut buf).unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, &buf).unwrap();
        let back = read_instances_jsonl(f.path()).unwrap();
        assert_eq!(instances, back);
    }
}
