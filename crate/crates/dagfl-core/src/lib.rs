//! Deterministic simulator and library for asynchronous federated learning on
//! a DAG ledger.
//!
//! Trainers publish model updates as transactions on an append-only DAG
//! (a tangle): each update approves two earlier transactions, carries a
//! metadata tuple (uploader, feature signature, validation accuracy, epoch,
//! validator, timestamp), and is sealed by a two-parent hash. New updates pick
//! their parents with a three-factor tip selection policy — temporal
//! freshness, reachability from the trainer's own lineage, and measured
//! accuracy with a signature-similarity prefilter — and aggregate the chosen
//! tip models by coordinate-wise averaging before training locally.
//!
//! Everything runs inside a seeded discrete-event simulation: logical clock,
//! heterogeneous client speeds, a simulated peer-to-peer model store, and
//! in-harness baselines (centralized, independent, synchronous FedAvg, pure
//! async) for comparison. Given the same configuration and seed, a run
//! reproduces its event log, ledger, and metrics byte for byte.

pub mod config;
pub mod fl;
pub mod ledger;
pub mod rng;
pub mod selection;
pub mod signature;
pub mod sim;

pub use config::{ConfigError, RunConfig};
pub use ledger::{DagNode, Digest, Ledger, LedgerError, NodeId, PathRecord, TipMetadata, Verdict};
pub use selection::{SelectionConfig, SelectionError};
pub use signature::{FeatureSignature, SignatureError, SimilarityRegistry};
pub use sim::{Policy, RunOutput, RunSummary, SimError};
