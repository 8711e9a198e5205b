//! Activation-sparsity feature signatures and the client-similarity registry.
//!
//! A client's signature is the per-group fraction of zero activations in its
//! hidden layer, averaged over its local samples: clients with similar data
//! leave similar sparsity fingerprints. The registry stores pairwise cosine
//! similarities by round, standing in for the on-chain similarity matrix.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fl::{Dataset, ModelParams};

/// An activation counts as zero when its magnitude is at or below this;
/// rectified units produce exact zeros, the slack only absorbs denormals.
pub const ZERO_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SignatureError {
    #[error("empty feature map")]
    EmptyFeatureMap,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("signature lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("similarity {0} outside [0, 1]")]
    ValueOutOfRange(f64),
    #[error("self-similarity must be 1, got {0}")]
    BadSelfSimilarity(f64),
}

/// Per-client vector of zero-activation fractions, one entry per hidden-unit
/// group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSignature(pub Vec<f64>);

impl FeatureSignature {
    pub fn entries(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Fraction of zero entries in one feature map (group of activations).
pub fn sample_signature(feature_map: &[f64]) -> Result<f64, SignatureError> {
    if feature_map.is_empty() {
        return Err(SignatureError::EmptyFeatureMap);
    }
    let zeros = feature_map
        .iter()
        .filter(|v| v.abs() <= ZERO_TOLERANCE)
        .count();
    Ok(zeros as f64 / feature_map.len() as f64)
}

/// Signature of a dataset under a model: the hidden layer is cut into
/// `groups` contiguous blocks and each entry is the mean zero fraction of
/// one block across all samples.
pub fn dataset_signature(
    model: &ModelParams,
    dataset: &Dataset,
    groups: usize,
) -> Result<FeatureSignature, SignatureError> {
    if dataset.is_empty() {
        return Err(SignatureError::EmptyDataset);
    }
    let groups = groups.max(1).min(model.dims.hidden);
    let mut sums = vec![0.0; groups];
    for i in 0..dataset.len() {
        let activations = model.hidden_activations(dataset.features_of(i));
        for (g, block) in blocks(&activations, groups).enumerate() {
            sums[g] += sample_signature(block)?;
        }
    }
    let n = dataset.len() as f64;
    Ok(FeatureSignature(sums.into_iter().map(|s| s / n).collect()))
}

/// Cuts `values` into `groups` contiguous blocks of near-equal size (earlier
/// blocks take the remainder).
fn blocks(values: &[f64], groups: usize) -> impl Iterator<Item = &[f64]> {
    let base = values.len() / groups;
    let extra = values.len() % groups;
    let mut cursor = 0;
    (0..groups).map(move |g| {
        let take = base + usize::from(g < extra);
        let block = &values[cursor..cursor + take];
        cursor += take;
        block
    })
}

/// Cosine similarity of two signatures. Signatures are nonnegative, so the
/// result lies in [0, 1]. A zero-norm signature is similar to nothing: 0.
pub fn cosine_similarity(
    a: &FeatureSignature,
    b: &FeatureSignature,
) -> Result<f64, SignatureError> {
    if a.len() != b.len() {
        return Err(SignatureError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (&x, &y) in a.entries().iter().zip(b.entries()) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        return Ok(0.0);
    }
    // sqrt(na * nb) rather than sqrt(na) * sqrt(nb): for bitwise-identical
    // inputs the quotient is then exactly 1.
    Ok(dot / (norm_a * norm_b).sqrt())
}

/// Round-indexed registry of pairwise client similarities (the smart-contract
/// analog). Writes are serialized by the simulation loop.
#[derive(Debug, Clone, Default)]
pub struct SimilarityRegistry {
    // (low client, high client) -> round -> value
    entries: BTreeMap<(u64, u64), BTreeMap<u64, f64>>,
}

impl SimilarityRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a similarity for a client pair at a round; storage is
    /// symmetric in the pair.
    pub fn record(&mut self, round: u64, i: u64, j: u64, value: f64) -> Result<(), SignatureError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(SignatureError::ValueOutOfRange(value));
        }
        if i == j && value != 1.0 {
            return Err(SignatureError::BadSelfSimilarity(value));
        }
        self.entries
            .entry(pair_key(i, j))
            .or_default()
            .insert(round, value);
        Ok(())
    }

    /// Latest recorded value for the pair at a round at or before `round`,
    /// or `None` if the pair was never recorded that early.
    pub fn query(&self, round: u64, i: u64, j: u64) -> Option<f64> {
        self.entries
            .get(&pair_key(i, j))?
            .range(..=round)
            .next_back()
            .map(|(_, &v)| v)
    }

    /// CSV dump: `round,i,j,value` rows in key order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,i,j,value\n");
        for (&(i, j), rounds) in &self.entries {
            for (&round, &value) in rounds {
                let _ = writeln!(out, "{round},{i},{j},{value}");
            }
        }
        out
    }
}

fn pair_key(i: u64, j: u64) -> (u64, u64) {
    (i.min(j), i.max(j))
}
