//! Append-only DAG of model-update transactions.
//!
//! Every non-genesis node approves exactly two earlier nodes and is sealed by
//! a two-part hash: a body digest over the canonical metadata serialization,
//! and a header digest chaining in both parents' digests. Tips are the nodes
//! nobody has approved yet. Trainers retain first-parent verification paths
//! and can audit them offline against a trusted tip digest.
//!
//! Canonical body serialization (no separators, all little-endian):
//! client_id u64, signature entry count u32 then each entry as an f64 bit
//! pattern, model_accuracy f64, current_epoch u64, validation_node_id u64,
//! timestamp f64. Header = parent_digest_1 || parent_digest_2 || body_hash;
//! node digest = SHA-256(header). Genesis hashes with two all-zero parent
//! digests.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::signature::FeatureSignature;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("timestamp regression: node at {node_time} predates parent at {parent_time}")]
    TimestampRegression { node_time: f64, parent_time: f64 },
    #[error("model accuracy {0} outside [0, 1]")]
    AccuracyOutOfRange(f64),
    #[error("non-finite metadata field {0}")]
    NonFiniteField(&'static str),
    #[error("empty verification path")]
    EmptyPath,
    #[error("unknown tip: no node carries digest {0}")]
    UnknownTip(String),
    #[error("malformed export line {line}: {reason}")]
    MalformedExport { line: usize, reason: String },
}

/// Ledger-unique sequence number, assigned in append order; genesis is 0.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl NodeId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

/// 32-byte SHA-256 digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        bytes.try_into().ok().map(Digest)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("bad digest hex"))
    }
}

/// The on-ledger metadata tuple of one model update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TipMetadata {
    pub client_id: u64,
    pub signature: FeatureSignature,
    pub model_accuracy: f64,
    pub current_epoch: u64,
    pub validation_node_id: u64,
    /// Logical time in simulated seconds; monotone along approval edges.
    pub timestamp: f64,
}

impl TipMetadata {
    /// Canonical byte serialization of the metadata body (see module docs).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let entries = self.signature.entries();
        let mut out = Vec::with_capacity(8 + 4 + entries.len() * 8 + 32);
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for &e in entries {
            out.extend_from_slice(&e.to_le_bytes());
        }
        out.extend_from_slice(&self.model_accuracy.to_le_bytes());
        out.extend_from_slice(&self.current_epoch.to_le_bytes());
        out.extend_from_slice(&self.validation_node_id.to_le_bytes());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out
    }

    fn validate(&self) -> Result<(), LedgerError> {
        if !self.model_accuracy.is_finite() || !(0.0..=1.0).contains(&self.model_accuracy) {
            return Err(LedgerError::AccuracyOutOfRange(self.model_accuracy));
        }
        if !self.timestamp.is_finite() {
            return Err(LedgerError::NonFiniteField("timestamp"));
        }
        if self.signature.entries().iter().any(|e| !e.is_finite()) {
            return Err(LedgerError::NonFiniteField("signature"));
        }
        Ok(())
    }
}

/// Node digest from the two parent digests and the metadata body.
pub fn compute_digest(parent_1: &Digest, parent_2: &Digest, metadata: &TipMetadata) -> Digest {
    let body_hash: [u8; 32] = Sha256::digest(metadata.canonical_bytes()).into();
    let mut header = Sha256::new();
    header.update(parent_1.0);
    header.update(parent_2.0);
    header.update(body_hash);
    Digest(header.finalize().into())
}

/// One ledger entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DagNode {
    pub id: NodeId,
    /// Exactly two parents, except genesis which has none. A parent may be
    /// repeated when fewer than two distinct tips exist.
    pub parents: Vec<NodeId>,
    pub metadata: TipMetadata,
    pub digest: Digest,
}

impl DagNode {
    pub fn is_genesis(&self) -> bool {
        self.parents.is_empty()
    }
}

/// The append-only DAG with tip tracking.
///
/// Forward edges point child -> parent ("approves"); `approvers` holds the
/// transpose. A tip is a node with approver count zero. Appends must be
/// serialized by the caller (the simulation event loop provides the order);
/// reads are pure.
#[derive(Debug, Clone)]
pub struct Ledger {
    nodes: Vec<DagNode>,
    approvers: Vec<Vec<NodeId>>,
    approver_count: Vec<u32>,
}

impl Ledger {
    /// New ledger containing only the genesis node built from `metadata`.
    pub fn new(metadata: TipMetadata) -> Self {
        let digest = compute_digest(&Digest::ZERO, &Digest::ZERO, &metadata);
        Ledger {
            nodes: vec![DagNode {
                id: NodeId(0),
                parents: Vec::new(),
                metadata,
                digest,
            }],
            approvers: vec![Vec::new()],
            approver_count: vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false // genesis always exists
    }

    pub const GENESIS: NodeId = NodeId(0);

    pub fn node(&self, id: NodeId) -> Result<&DagNode, LedgerError> {
        self.nodes
            .get(id.index())
            .ok_or(LedgerError::UnknownNode(id))
    }

    pub fn nodes(&self) -> &[DagNode] {
        &self.nodes
    }

    /// Nodes approving `id` (the transpose adjacency).
    pub fn approvers_of(&self, id: NodeId) -> Result<&[NodeId], LedgerError> {
        self.approvers
            .get(id.index())
            .map(Vec::as_slice)
            .ok_or(LedgerError::UnknownNode(id))
    }

    pub fn approver_count(&self, id: NodeId) -> Result<u32, LedgerError> {
        self.approver_count
            .get(id.index())
            .copied()
            .ok_or(LedgerError::UnknownNode(id))
    }

    /// Appends a node approving the two parents; returns its new id.
    pub fn append_node(
        &mut self,
        parents: (NodeId, NodeId),
        metadata: TipMetadata,
    ) -> Result<NodeId, LedgerError> {
        metadata.validate()?;
        let (p1, p2) = parents;
        let parent_1 = self.node(p1)?;
        let parent_2 = self.node(p2)?;
        let parent_time = parent_1.metadata.timestamp.max(parent_2.metadata.timestamp);
        if metadata.timestamp < parent_time {
            return Err(LedgerError::TimestampRegression {
                node_time: metadata.timestamp,
                parent_time,
            });
        }
        let digest = compute_digest(&parent_1.digest, &parent_2.digest, &metadata);
        let id = NodeId(self.nodes.len() as u64);
        self.nodes.push(DagNode {
            id,
            parents: vec![p1, p2],
            metadata,
            digest,
        });
        self.approvers.push(Vec::new());
        self.approver_count.push(0);
        for p in [p1, p2] {
            self.approvers[p.index()].push(id);
            self.approver_count[p.index()] += 1;
        }
        Ok(id)
    }

    /// Current tips (approver count zero), ascending by id.
    pub fn tips(&self) -> Vec<NodeId> {
        self.approver_count
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| NodeId(i as u64))
            .collect()
    }

    /// Tips partitioned by reachability from `start`: a tip is reachable if
    /// it transitively approves `start` (BFS over the approver edges);
    /// `start` itself counts if it is still a tip.
    pub fn partition_tips(&self, start: NodeId) -> Result<(Vec<NodeId>, Vec<NodeId>), LedgerError> {
        self.node(start)?;
        let mut visited = vec![false; self.nodes.len()];
        let mut queue = VecDeque::new();
        visited[start.index()] = true;
        queue.push_back(start);
        let mut reachable = Vec::new();
        while let Some(node) = queue.pop_front() {
            if self.approver_count[node.index()] == 0 {
                reachable.push(node);
            }
            for &approver in &self.approvers[node.index()] {
                if !visited[approver.index()] {
                    visited[approver.index()] = true;
                    queue.push_back(approver);
                }
            }
        }
        reachable.sort_unstable();
        let unreachable = self
            .tips()
            .into_iter()
            .filter(|t| !visited[t.index()])
            .collect();
        Ok((reachable, unreachable))
    }

    /// Root-ward path from `from_tip` to genesis following first parents.
    /// Each record carries everything needed to recompute digests offline.
    pub fn extract_verification_path(
        &self,
        from_tip: NodeId,
    ) -> Result<Vec<PathRecord>, LedgerError> {
        let mut path = Vec::new();
        let mut cursor = self.node(from_tip)?;
        loop {
            path.push(self.path_record(cursor));
            if cursor.is_genesis() {
                return Ok(path);
            }
            cursor = self.node(cursor.parents[0])?;
        }
    }

    fn path_record(&self, node: &DagNode) -> PathRecord {
        let parent_digests = if node.is_genesis() {
            [Digest::ZERO, Digest::ZERO]
        } else {
            [
                self.nodes[node.parents[0].index()].digest,
                self.nodes[node.parents[1].index()].digest,
            ]
        };
        PathRecord {
            id: node.id,
            parents: node.parents.clone(),
            parent_digests,
            metadata: node.metadata.clone(),
            digest: node.digest,
        }
    }

    /// JSON-lines export, one node per line in id order.
    pub fn export_jsonl(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            let record = ExportRecord::from_node(node);
            out.push_str(&serde_json::to_string(&record).expect("export serialization"));
            out.push('\n');
        }
        out
    }
}

/// One record of a verification path: a full copy of the node plus the hash
/// pointers (parent digests) its own digest commits to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub id: NodeId,
    pub parents: Vec<NodeId>,
    pub parent_digests: [Digest; 2],
    pub metadata: TipMetadata,
    pub digest: Digest,
}

/// Outcome of path verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    TamperedAt(NodeId),
}

/// Verifies a first-parent path against a trusted tip digest.
///
/// Checks, per record: the stored digest recomputes from the recorded parent
/// digests and metadata; the first parent's id and digest match the next
/// record; parent ids precede the node id. The head must carry the trusted
/// digest and the path must end at genesis.
pub fn verify_path(
    path: &[PathRecord],
    trusted_tip_digest: &Digest,
) -> Result<Verdict, LedgerError> {
    let head = path.first().ok_or(LedgerError::EmptyPath)?;
    if head.digest != *trusted_tip_digest {
        return Ok(Verdict::TamperedAt(head.id));
    }
    for (pos, record) in path.iter().enumerate() {
        let is_last = pos + 1 == path.len();
        if record.parents.is_empty() {
            // Only the terminal genesis record may lack parents, and genesis
            // commits to all-zero parent digests.
            if !is_last || record.parent_digests != [Digest::ZERO, Digest::ZERO] {
                return Ok(Verdict::TamperedAt(record.id));
            }
        } else {
            if record.parents.len() != 2 || is_last {
                return Ok(Verdict::TamperedAt(record.id));
            }
            if record.parents.iter().any(|p| *p >= record.id) {
                return Ok(Verdict::TamperedAt(record.id));
            }
            let next = &path[pos + 1];
            if record.parents[0] != next.id || record.parent_digests[0] != next.digest {
                return Ok(Verdict::TamperedAt(record.id));
            }
        }
        let recomputed = compute_digest(
            &record.parent_digests[0],
            &record.parent_digests[1],
            &record.metadata,
        );
        if recomputed != record.digest {
            return Ok(Verdict::TamperedAt(record.id));
        }
    }
    Ok(Verdict::Accepted)
}

/// One line of the JSON-lines ledger export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportRecord {
    pub id: u64,
    pub parents: Vec<u64>,
    pub client_id: u64,
    pub signature: Vec<f64>,
    pub model_accuracy: f64,
    pub current_epoch: u64,
    pub validation_node_id: u64,
    pub timestamp: f64,
    pub digest: String,
}

impl ExportRecord {
    pub fn from_node(node: &DagNode) -> Self {
        ExportRecord {
            id: node.id.0,
            parents: node.parents.iter().map(|p| p.0).collect(),
            client_id: node.metadata.client_id,
            signature: node.metadata.signature.entries().to_vec(),
            model_accuracy: node.metadata.model_accuracy,
            current_epoch: node.metadata.current_epoch,
            validation_node_id: node.metadata.validation_node_id,
            timestamp: node.metadata.timestamp,
            digest: node.digest.to_hex(),
        }
    }

    pub fn metadata(&self) -> TipMetadata {
        TipMetadata {
            client_id: self.client_id,
            signature: FeatureSignature(self.signature.clone()),
            model_accuracy: self.model_accuracy,
            current_epoch: self.current_epoch,
            validation_node_id: self.validation_node_id,
            timestamp: self.timestamp,
        }
    }
}

/// Parses a JSON-lines ledger export.
pub fn parse_export(text: &str) -> Result<Vec<ExportRecord>, LedgerError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ExportRecord =
            serde_json::from_str(line).map_err(|e| LedgerError::MalformedExport {
                line: i + 1,
                reason: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Builds the first-parent verification path ending at genesis for the
/// export record whose digest matches `tip_digest`.
pub fn path_from_export(
    records: &[ExportRecord],
    tip_digest: &Digest,
) -> Result<Vec<PathRecord>, LedgerError> {
    let tip_hex = tip_digest.to_hex();
    let by_id = |id: u64| records.iter().find(|r| r.id == id);
    let tip = records
        .iter()
        .find(|r| r.digest == tip_hex)
        .ok_or_else(|| LedgerError::UnknownTip(tip_hex.clone()))?;
    let mut path = Vec::new();
    let mut cursor = tip;
    loop {
        let parent_digests = if cursor.parents.is_empty() {
            [Digest::ZERO, Digest::ZERO]
        } else {
            let mut digests = [Digest::ZERO, Digest::ZERO];
            for (slot, &pid) in cursor.parents.iter().take(2).enumerate() {
                let parent = by_id(pid).ok_or(LedgerError::UnknownNode(NodeId(pid)))?;
                digests[slot] =
                    Digest::from_hex(&parent.digest).ok_or(LedgerError::MalformedExport {
                        line: 0,
                        reason: format!("bad digest hex on node {pid}"),
                    })?;
            }
            digests
        };
        let digest = Digest::from_hex(&cursor.digest).ok_or(LedgerError::MalformedExport {
            line: 0,
            reason: format!("bad digest hex on node {}", cursor.id),
        })?;
        path.push(PathRecord {
            id: NodeId(cursor.id),
            parents: cursor.parents.iter().map(|&p| NodeId(p)).collect(),
            parent_digests,
            metadata: cursor.metadata(),
            digest,
        });
        if cursor.parents.is_empty() {
            return Ok(path);
        }
        let first = cursor.parents[0];
        cursor = by_id(first).ok_or(LedgerError::UnknownNode(NodeId(first)))?;
    }
}
