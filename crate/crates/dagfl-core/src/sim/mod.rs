//! Deterministic discrete-event simulation of the DAG federated-learning
//! workflow, plus in-harness baselines running on the same substrate.
//!
//! The event loop is the only mutator of the ledger, model store, and
//! similarity registry; events are processed in `(time, sequence)` order, so
//! a `(config, seed)` pair fully determines the event log, the ledger, and
//! every metric.

mod baselines;
pub mod metrics;

pub use metrics::{
    collect_metrics, metrics_csv, parse_replay, replay_jsonl, trace_csv, MetricsRow, ReplayRow,
    RunSummary, TraceRow,
};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use thiserror::Error;

use crate::config::{RunConfig, SpeedFactors};
use crate::fl::{
    evaluate_accuracy, local_train, partition, split_811, Dataset, FlError, ModelDims, ModelParams,
    PartitionSpec, SplitDataset,
};
use crate::ledger::{Ledger, LedgerError, NodeId, PathRecord, TipMetadata};
use crate::rng::stream;
use crate::selection::{
    aggregate, select_tips, Selection, SelectionConfig, SelectionError, SelectorContext,
};
use crate::signature::{
    cosine_similarity, dataset_signature, FeatureSignature, SignatureError, SimilarityRegistry,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
    #[error("selection: {0}")]
    Selection(#[from] SelectionError),
    #[error("training: {0}")]
    Fl(#[from] FlError),
    #[error("signature: {0}")]
    Signature(#[from] SignatureError),
    #[error("replay log is missing a genesis row")]
    NoGenesisRow,
    #[error("replay log: {0}")]
    MalformedReplay(String),
}

/// Coordination policy: the DAG protocol or one of the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    DagAfl,
    Centralized,
    Independent,
    SyncFedAvg,
    PureAsync,
}

impl Policy {
    pub fn from_name(name: &str) -> Option<Policy> {
        match name {
            "dag-afl" => Some(Policy::DagAfl),
            "centralized" => Some(Policy::Centralized),
            "independent" => Some(Policy::Independent),
            "sync-fedavg" => Some(Policy::SyncFedAvg),
            "pure-async" => Some(Policy::PureAsync),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::DagAfl => "dag-afl",
            Policy::Centralized => "centralized",
            Policy::Independent => "independent",
            Policy::SyncFedAvg => "sync-fedavg",
            Policy::PureAsync => "pure-async",
        }
    }
}

/// Simulated P2P layer: models live off-ledger, keyed by node id.
#[derive(Debug, Clone, Default)]
pub struct ModelStore {
    models: Vec<ModelParams>,
}

impl ModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ids are dense and assigned in append order; inserts must follow it.
    pub fn insert(&mut self, id: NodeId, model: ModelParams) {
        assert_eq!(
            id.0 as usize,
            self.models.len(),
            "store out of step with ledger"
        );
        self.models.push(model);
    }

    pub fn get(&self, id: NodeId) -> &ModelParams {
        &self.models[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// One trainer's full state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u64,
    /// Local-epoch duration multiplier (1 = nominal speed).
    pub speed_factor: f64,
    /// Completed train-upload cycles (the T of freshness).
    pub epoch: u64,
    pub latest_node: NodeId,
    pub data: SplitDataset,
    pub model: ModelParams,
    pub signature: Option<FeatureSignature>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    /// Retained first-parent audit path, refreshed after each upload.
    pub verification_path: Vec<PathRecord>,
}

/// Everything a run needs at time zero.
pub struct Bootstrap {
    pub ledger: Ledger,
    pub store: ModelStore,
    pub clients: Vec<ClientState>,
    pub registry: SimilarityRegistry,
    /// Union of the clients' test splits.
    pub global_test: Dataset,
    pub publisher_model: ModelParams,
}

/// Client speed multipliers for a config: explicit list, or log-uniform in
/// [1, 5] drawn from the seed.
pub fn resolve_speed_factors(config: &RunConfig) -> Vec<f64> {
    match &config.speed_factors {
        SpeedFactors::Explicit(factors) => factors.clone(),
        SpeedFactors::Auto => {
            let mut rng = stream(config.seed, "speed");
            (0..config.clients)
                .map(|_| (rng.random_range(0.0..1.0) * 5.0f64.ln()).exp())
                .collect()
        }
    }
}

fn model_dims(config: &RunConfig) -> ModelDims {
    ModelDims {
        input: config.task.num_features(),
        hidden: config.hidden_units,
        output: config.task.num_classes(),
    }
}

/// Publisher bootstrap: genesis ledger entry holding the initial model,
/// partitioned client data, and per-client 8:1:1 splits.
pub fn bootstrap(config: &RunConfig) -> Result<Bootstrap, SimError> {
    let source = config.task.generate(config.samples, config.seed);
    let parts = partition(
        &source,
        &PartitionSpec {
            mode: config.partition,
            clients: config.clients,
            seed: config.seed,
        },
    )?;
    let publisher_model = ModelParams::init(model_dims(config), &mut stream(config.seed, "init"));
    let publisher_id = config.clients as u64;
    let genesis_meta = TipMetadata {
        client_id: publisher_id,
        signature: FeatureSignature(vec![0.0; config.signature_groups]),
        model_accuracy: 0.0,
        current_epoch: 0,
        validation_node_id: publisher_id,
        timestamp: 0.0,
    };
    let ledger = Ledger::new(genesis_meta);
    let mut store = ModelStore::new();
    store.insert(Ledger::GENESIS, publisher_model.clone());
    let speeds = resolve_speed_factors(config);

    let mut splits = Vec::with_capacity(parts.len());
    for (i, part) in parts.iter().enumerate() {
        splits.push(split_811(
            part,
            &mut stream(config.seed, &format!("split/c{i}")),
        )?);
    }
    let test_refs: Vec<&Dataset> = splits.iter().map(|s| &s.test).collect();
    let global_test = Dataset::concat(&test_refs);
    let genesis_path = ledger.extract_verification_path(Ledger::GENESIS)?;
    let test_accuracy = evaluate_accuracy(&publisher_model, &global_test);

    let clients = splits
        .into_iter()
        .enumerate()
        .map(|(i, data)| {
            let val_accuracy = evaluate_accuracy(&publisher_model, &data.validation);
            ClientState {
                client_id: i as u64,
                speed_factor: speeds[i],
                epoch: 0,
                latest_node: Ledger::GENESIS,
                data,
                model: publisher_model.clone(),
                signature: None,
                val_accuracy,
                test_accuracy,
                verification_path: genesis_path.clone(),
            }
        })
        .collect();

    Ok(Bootstrap {
        ledger,
        store,
        clients,
        registry: SimilarityRegistry::new(),
        global_test,
        publisher_model,
    })
}

/// Everything a finished run leaves behind.
pub struct RunOutput {
    pub summary: RunSummary,
    pub metrics: Vec<MetricsRow>,
    pub replay: Vec<ReplayRow>,
    pub trace: Vec<TraceRow>,
    /// The final ledger; `None` for baseline policies.
    pub ledger: Option<Ledger>,
    pub registry: Option<SimilarityRegistry>,
    /// The simulated P2P model store; `None` for baseline policies.
    pub store: Option<ModelStore>,
    /// Final per-client states. For the synchronous policies every client
    /// carries the shared global model.
    pub client_states: Vec<ClientState>,
}

/// Runs the configured policy.
pub fn run_policy(config: &RunConfig, policy: Policy) -> Result<RunOutput, SimError> {
    match policy {
        Policy::DagAfl => run(config),
        other => baselines::run_baseline(config, other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    ClientWake(usize),
    TrainingComplete(usize),
    Upload(usize),
    PublisherCheck,
    Terminate,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl Eq for Event {}

// Reversed so the BinaryHeap pops the earliest (time, seq) first.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct PendingCycle {
    selection: Selection,
    selection_start: f64,
    trained: ModelParams,
    val_accuracy: f64,
}

struct DagSim<'a> {
    config: &'a RunConfig,
    selection_config: SelectionConfig,
    ledger: Ledger,
    store: ModelStore,
    registry: SimilarityRegistry,
    clients: Vec<ClientState>,
    global_test: Dataset,
    pending: Vec<Option<PendingCycle>>,
    queue: BinaryHeap<Event>,
    next_seq: u64,
    halted: bool,
    best_mean_val: f64,
    patience_streak: u32,
    metrics: Vec<MetricsRow>,
    replay: Vec<ReplayRow>,
    trace: Vec<TraceRow>,
}

impl<'a> DagSim<'a> {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event { time, seq, kind });
    }

    fn mean_val_accuracy(&self) -> f64 {
        self.clients.iter().map(|c| c.val_accuracy).sum::<f64>() / self.clients.len() as f64
    }

    fn mean_test_accuracy(&self) -> f64 {
        self.clients.iter().map(|c| c.test_accuracy).sum::<f64>() / self.clients.len() as f64
    }

    fn on_wake(&mut self, client: usize, now: f64, seq: u64) -> Result<(), SimError> {
        if self.halted || self.clients[client].epoch >= self.config.max_global_iters {
            return Ok(());
        }
        let ctx = SelectorContext {
            client_id: self.clients[client].client_id,
            latest_node: self.clients[client].latest_node,
            current_epoch: self.clients[client].epoch,
            now,
        };
        let selection = {
            let store = &self.store;
            let validation = &self.clients[client].data.validation;
            let mut evaluator = |tip: NodeId| evaluate_accuracy(store.get(tip), validation);
            select_tips(
                &self.ledger,
                ctx,
                &self.selection_config,
                &self.registry,
                &mut evaluator,
            )?
        };
        let validation_len = self.clients[client].data.validation.len() as f64;
        let evaluation_time =
            selection.evaluations as f64 * self.config.eval_cost_per_sample * validation_len
                + selection.unreachable_pool as f64 * self.config.registry_query_cost;

        let models: Vec<&ModelParams> = selection
            .chosen
            .iter()
            .map(|&id| self.store.get(id))
            .collect();
        let aggregated = aggregate(&models)?;
        let next_epoch = self.clients[client].epoch + 1;
        let trained = local_train(
            &aggregated,
            &self.clients[client].data.train,
            self.config.local_epochs,
            self.config.lr,
            self.config.batch_size,
            &mut stream(self.config.seed, &format!("train/c{client}/t{next_epoch}")),
        )?;
        let val_accuracy = evaluate_accuracy(&trained, &self.clients[client].data.validation);
        let training_time = self.config.base_epoch_time
            * self.clients[client].speed_factor
            * self.config.local_epochs as f64;

        self.replay.push(ReplayRow::Selection {
            time: now,
            seq,
            client: client as u64,
            epoch: self.clients[client].epoch,
            reachable_pool: selection.reachable_pool,
            unreachable_pool: selection.unreachable_pool,
            quota_reachable: selection.quota_reachable,
            picked_reachable: selection.picked_reachable,
            picked_unreachable: selection.picked_unreachable,
            chosen: selection.chosen.iter().map(|id| id.0).collect(),
            evaluations: selection.evaluations,
        });
        if self.config.trace {
            for score in &selection.scores {
                self.trace.push(TraceRow {
                    time: now,
                    selector: client as u64,
                    tip: score.tip.0,
                    reachable: score.reachable,
                    tipc: score.tipc,
                    freshness: score.freshness,
                    similarity: score.similarity,
                    accuracy: score.measured_accuracy,
                    chosen: score.chosen,
                });
            }
        }

        self.pending[client] = Some(PendingCycle {
            selection,
            selection_start: now,
            trained,
            val_accuracy,
        });
        self.schedule(
            now + evaluation_time + training_time,
            EventKind::TrainingComplete(client),
        );
        Ok(())
    }

    fn on_training_complete(&mut self, client: usize, now: f64) {
        let validation_len = self.clients[client].data.validation.len() as f64;
        let own_eval_time = self.config.eval_cost_per_sample * validation_len;
        self.schedule(now + own_eval_time, EventKind::Upload(client));
    }

    fn on_upload(&mut self, client: usize, now: f64, seq: u64) -> Result<(), SimError> {
        let pending = self.pending[client]
            .take()
            .expect("upload without a pending cycle");
        let new_epoch = self.clients[client].epoch + 1;
        let signature = dataset_signature(
            &pending.trained,
            &self.clients[client].data.train,
            self.config.signature_groups,
        )?;

        // The smart-contract analog records this round's similarities
        // against every peer with a published signature.
        for other in 0..self.clients.len() {
            if other == client {
                continue;
            }
            if let Some(other_sig) = &self.clients[other].signature {
                let value = cosine_similarity(&signature, other_sig)?.clamp(0.0, 1.0);
                self.registry
                    .record(new_epoch, client as u64, other as u64, value)?;
            }
        }

        let parents = (
            pending.selection.chosen[0],
            pending
                .selection
                .chosen
                .get(1)
                .copied()
                .unwrap_or(pending.selection.chosen[0]),
        );
        let metadata = TipMetadata {
            client_id: client as u64,
            signature: signature.clone(),
            model_accuracy: pending.val_accuracy,
            current_epoch: new_epoch,
            validation_node_id: client as u64,
            timestamp: now,
        };
        let node = self.ledger.append_node(parents, metadata)?;
        self.store.insert(node, pending.trained.clone());

        let test_accuracy = evaluate_accuracy(&pending.trained, &self.global_test);
        let state = &mut self.clients[client];
        state.epoch = new_epoch;
        state.model = pending.trained;
        state.signature = Some(signature.clone());
        state.val_accuracy = pending.val_accuracy;
        state.test_accuracy = test_accuracy;
        state.latest_node = node;
        state.verification_path = self.ledger.extract_verification_path(node)?;

        let mean_val = self.mean_val_accuracy();
        let mean_test = self.mean_test_accuracy();
        self.replay.push(ReplayRow::Upload {
            time: now,
            seq,
            client: client as u64,
            node_id: node.0,
            parents: vec![parents.0 .0, parents.1 .0],
            signature: signature.entries().to_vec(),
            model_accuracy: pending.val_accuracy,
            current_epoch: new_epoch,
            validation_node_id: client as u64,
            selection_start: pending.selection_start,
            val_accuracy: pending.val_accuracy,
            test_accuracy,
            mean_val_accuracy: mean_val,
            mean_test_accuracy: mean_test,
        });
        self.metrics.push(MetricsRow {
            time: now,
            client: client as u64,
            epoch: new_epoch,
            event: "upload",
            accuracy: test_accuracy,
        });

        self.schedule(now, EventKind::PublisherCheck);
        if !self.halted && new_epoch < self.config.max_global_iters {
            self.schedule(now, EventKind::ClientWake(client));
        }
        Ok(())
    }

    fn on_publisher_check(&mut self, now: f64) {
        if self.halted {
            return;
        }
        let mean_val = self.mean_val_accuracy();
        if let Some(target) = self.config.target_accuracy {
            if mean_val >= target {
                self.halt(now, metrics::TERMINATED_TARGET);
                return;
            }
        }
        if mean_val > self.best_mean_val {
            self.best_mean_val = mean_val;
            self.patience_streak = 0;
        } else {
            self.patience_streak += 1;
            if self.patience_streak >= self.config.patience {
                self.halt(now, metrics::TERMINATED_PATIENCE);
            }
        }
    }

    fn halt(&mut self, now: f64, reason: &str) {
        self.halted = true;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.replay.push(ReplayRow::Terminate {
            time: now,
            seq,
            reason: reason.to_string(),
        });
        self.schedule(now, EventKind::Terminate);
    }
}

/// Runs the DAG protocol: each client cycles select -> aggregate -> train ->
/// evaluate -> upload until the publisher terminates the task or every
/// client reaches the iteration cap. In-flight cycles complete after the
/// termination decision.
pub fn run(config: &RunConfig) -> Result<RunOutput, SimError> {
    let boot = bootstrap(config)?;
    let genesis = boot.ledger.node(Ledger::GENESIS)?.clone();
    let client_count = boot.clients.len();
    let mut sim = DagSim {
        config,
        selection_config: SelectionConfig {
            select_n: config.select_n,
            lambda: config.lambda,
            alpha: config.alpha,
            prefilter: config.prefilter,
            freshness_mode: config.freshness_mode,
        },
        ledger: boot.ledger,
        store: boot.store,
        registry: boot.registry,
        clients: boot.clients,
        global_test: boot.global_test,
        pending: (0..client_count).map(|_| None).collect(),
        queue: BinaryHeap::new(),
        next_seq: 0,
        halted: false,
        best_mean_val: f64::NEG_INFINITY,
        patience_streak: 0,
        metrics: Vec::new(),
        replay: Vec::new(),
        trace: Vec::new(),
    };

    sim.replay.push(ReplayRow::Genesis {
        time: 0.0,
        seq: 0,
        client_id: genesis.metadata.client_id,
        signature: genesis.metadata.signature.entries().to_vec(),
        model_accuracy: genesis.metadata.model_accuracy,
        current_epoch: genesis.metadata.current_epoch,
        validation_node_id: genesis.metadata.validation_node_id,
        timestamp: genesis.metadata.timestamp,
        digest: genesis.digest.to_hex(),
    });
    for (i, client) in sim.clients.iter().enumerate() {
        sim.replay.push(ReplayRow::Bootstrap {
            time: 0.0,
            seq: i as u64,
            client: client.client_id,
            val_accuracy: client.val_accuracy,
            test_accuracy: client.test_accuracy,
        });
        sim.metrics.push(MetricsRow {
            time: 0.0,
            client: client.client_id,
            epoch: 0,
            event: "bootstrap",
            accuracy: client.test_accuracy,
        });
    }
    for client in 0..client_count {
        sim.schedule(0.0, EventKind::ClientWake(client));
    }

    let mut end_time = 0.0f64;
    while let Some(event) = sim.queue.pop() {
        end_time = end_time.max(event.time);
        match event.kind {
            EventKind::ClientWake(c) => sim.on_wake(c, event.time, event.seq)?,
            EventKind::TrainingComplete(c) => sim.on_training_complete(c, event.time),
            EventKind::Upload(c) => sim.on_upload(c, event.time, event.seq)?,
            EventKind::PublisherCheck => sim.on_publisher_check(event.time),
            EventKind::Terminate => {}
        }
    }
    if !sim.halted {
        let seq = sim.next_seq;
        sim.replay.push(ReplayRow::Terminate {
            time: end_time,
            seq,
            reason: metrics::TERMINATED_MAX_ITERS.to_string(),
        });
    }

    let summary = collect_metrics(&sim.replay, config.target_accuracy);
    Ok(RunOutput {
        summary,
        metrics: sim.metrics,
        replay: sim.replay,
        trace: sim.trace,
        ledger: Some(sim.ledger),
        registry: Some(sim.registry),
        store: Some(sim.store),
        client_states: sim.clients,
    })
}

/// Rebuilds the ledger from a replay log (`genesis` + `upload` rows).
pub fn ledger_from_replay(rows: &[ReplayRow]) -> Result<Ledger, SimError> {
    let genesis = rows
        .iter()
        .find_map(|r| match r {
            ReplayRow::Genesis {
                client_id,
                signature,
                model_accuracy,
                current_epoch,
                validation_node_id,
                timestamp,
                ..
            } => Some(TipMetadata {
                client_id: *client_id,
                signature: FeatureSignature(signature.clone()),
                model_accuracy: *model_accuracy,
                current_epoch: *current_epoch,
                validation_node_id: *validation_node_id,
                timestamp: *timestamp,
            }),
            _ => None,
        })
        .ok_or(SimError::NoGenesisRow)?;
    let mut ledger = Ledger::new(genesis);
    for row in rows {
        if let ReplayRow::Upload {
            time,
            client,
            node_id,
            parents,
            signature,
            model_accuracy,
            current_epoch,
            validation_node_id,
            ..
        } = row
        {
            if parents.len() != 2 {
                return Err(SimError::MalformedReplay(format!(
                    "upload row for node {node_id} lacks two parents"
                )));
            }
            let id = ledger.append_node(
                (NodeId(parents[0]), NodeId(parents[1])),
                TipMetadata {
                    client_id: *client,
                    signature: FeatureSignature(signature.clone()),
                    model_accuracy: *model_accuracy,
                    current_epoch: *current_epoch,
                    validation_node_id: *validation_node_id,
                    timestamp: *time,
                },
            )?;
            if id.0 != *node_id {
                return Err(SimError::MalformedReplay(format!(
                    "upload rows out of order: expected node {node_id}, appended {id}"
                )));
            }
        }
    }
    Ok(ledger)
}
