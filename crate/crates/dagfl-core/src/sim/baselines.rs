//! In-harness baseline policies on the same substrate: centralized pooled
//! training, independent per-client training, synchronous federated
//! averaging, and a pure-async server with fixed 0.5 mixing.

use std::collections::BinaryHeap;

use super::metrics::{self, MetricsRow, ReplayRow};
use super::{bootstrap, collect_metrics, Event, EventKind, Policy, RunOutput, SimError};
use crate::config::RunConfig;
use crate::fl::{evaluate_accuracy, local_train, Dataset, ModelParams};
use crate::rng::stream;

pub(super) fn run_baseline(config: &RunConfig, policy: Policy) -> Result<RunOutput, SimError> {
    match policy {
        Policy::Centralized => run_centralized(config),
        Policy::Independent | Policy::PureAsync => run_async_policy(config, policy),
        Policy::SyncFedAvg => run_sync_fedavg(config),
        Policy::DagAfl => unreachable!("dag-afl is handled by sim::run"),
    }
}

/// Shared bookkeeping: replay/metrics rows, upload ids, and the publisher's
/// termination monitor (target accuracy, then patience on the best mean
/// validation accuracy).
struct Harness {
    replay: Vec<ReplayRow>,
    metrics: Vec<MetricsRow>,
    next_seq: u64,
    next_upload_id: u64,
    halted: bool,
    best_mean_val: f64,
    streak: u32,
    patience: u32,
    target: Option<f64>,
}

impl Harness {
    fn new(config: &RunConfig) -> Self {
        Harness {
            replay: Vec::new(),
            metrics: Vec::new(),
            next_seq: 0,
            next_upload_id: 0,
            halted: false,
            best_mean_val: f64::NEG_INFINITY,
            streak: 0,
            patience: config.patience,
            target: config.target_accuracy,
        }
    }

    fn seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn bootstrap_rows(&mut self, clients: &[super::ClientState]) {
        for client in clients {
            let seq = self.seq();
            self.replay.push(ReplayRow::Bootstrap {
                time: 0.0,
                seq,
                client: client.client_id,
                val_accuracy: client.val_accuracy,
                test_accuracy: client.test_accuracy,
            });
            self.metrics.push(MetricsRow {
                time: 0.0,
                client: client.client_id,
                epoch: 0,
                event: "bootstrap",
                accuracy: client.test_accuracy,
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn upload_row(
        &mut self,
        time: f64,
        client: u64,
        epoch: u64,
        start: f64,
        val: f64,
        test: f64,
        mean_val: f64,
        mean_test: f64,
    ) {
        self.next_upload_id += 1;
        let seq = self.seq();
        self.replay.push(ReplayRow::Upload {
            time,
            seq,
            client,
            node_id: self.next_upload_id,
            parents: Vec::new(),
            signature: Vec::new(),
            model_accuracy: val,
            current_epoch: epoch,
            validation_node_id: client,
            selection_start: start,
            val_accuracy: val,
            test_accuracy: test,
            mean_val_accuracy: mean_val,
            mean_test_accuracy: mean_test,
        });
        self.metrics.push(MetricsRow {
            time,
            client,
            epoch,
            event: "upload",
            accuracy: test,
        });
    }

    fn publisher_check(&mut self, now: f64, mean_val: f64) {
        if self.halted {
            return;
        }
        if let Some(target) = self.target {
            if mean_val >= target {
                self.halt(now, metrics::TERMINATED_TARGET);
                return;
            }
        }
        if mean_val > self.best_mean_val {
            self.best_mean_val = mean_val;
            self.streak = 0;
        } else {
            self.streak += 1;
            if self.streak >= self.patience {
                self.halt(now, metrics::TERMINATED_PATIENCE);
            }
        }
    }

    fn halt(&mut self, now: f64, reason: &str) {
        self.halted = true;
        let seq = self.seq();
        self.replay.push(ReplayRow::Terminate {
            time: now,
            seq,
            reason: reason.to_string(),
        });
    }

    fn finish(&mut self, end_time: f64) {
        if !self.halted {
            let seq = self.seq();
            self.replay.push(ReplayRow::Terminate {
                time: end_time,
                seq,
                reason: metrics::TERMINATED_MAX_ITERS.to_string(),
            });
        }
    }

    fn into_output(self, config: &RunConfig, client_states: Vec<super::ClientState>) -> RunOutput {
        let summary = collect_metrics(&self.replay, config.target_accuracy);
        RunOutput {
            summary,
            metrics: self.metrics,
            replay: self.replay,
            trace: Vec::new(),
            ledger: None,
            registry: None,
            store: None,
            client_states,
        }
    }
}

fn weighted_mean(models: &[ModelParams], weights: &[f64]) -> ModelParams {
    let total: f64 = weights.iter().sum();
    let mut values = vec![0.0; models[0].values.len()];
    for (model, &w) in models.iter().zip(weights) {
        for (acc, v) in values.iter_mut().zip(&model.values) {
            *acc += w * v;
        }
    }
    for v in values.iter_mut() {
        *v /= total;
    }
    ModelParams {
        dims: models[0].dims,
        values,
    }
}

/// One model trained on the pooled data; a round costs the client-shard
/// epoch time scaled by the pool size.
fn run_centralized(config: &RunConfig) -> Result<RunOutput, SimError> {
    let boot = bootstrap(config)?;
    let mut harness = Harness::new(config);
    harness.bootstrap_rows(&boot.clients);

    let train_refs: Vec<&Dataset> = boot.clients.iter().map(|c| &c.data.train).collect();
    let pooled_train = Dataset::concat(&train_refs);
    let val_refs: Vec<&Dataset> = boot.clients.iter().map(|c| &c.data.validation).collect();
    let pooled_val = Dataset::concat(&val_refs);

    let round_time = config.base_epoch_time * config.local_epochs as f64 * config.clients as f64
        + config.eval_cost_per_sample * pooled_val.len() as f64;
    let mut model = boot.publisher_model;
    let mut time = 0.0;
    for round in 1..=config.max_global_iters {
        if harness.halted {
            break;
        }
        let start = time;
        model = local_train(
            &model,
            &pooled_train,
            config.local_epochs,
            config.lr,
            config.batch_size,
            &mut stream(config.seed, &format!("train/central/r{round}")),
        )?;
        time += round_time;
        let val = evaluate_accuracy(&model, &pooled_val);
        let test = evaluate_accuracy(&model, &boot.global_test);
        harness.upload_row(time, 0, round, start, val, test, val, test);
        harness.publisher_check(time, val);
    }
    harness.finish(time);
    let mut clients = boot.clients;
    for client in clients.iter_mut() {
        client.model = model.clone();
    }
    Ok(harness.into_output(config, clients))
}

/// Lock-step federated averaging: every round waits for the slowest client,
/// then averages the local models weighted by shard size.
fn run_sync_fedavg(config: &RunConfig) -> Result<RunOutput, SimError> {
    let boot = bootstrap(config)?;
    let mut harness = Harness::new(config);
    harness.bootstrap_rows(&boot.clients);

    let round_time = boot
        .clients
        .iter()
        .map(|c| {
            config.base_epoch_time * c.speed_factor * config.local_epochs as f64
                + config.eval_cost_per_sample * c.data.validation.len() as f64
        })
        .fold(0.0f64, f64::max);
    let weights: Vec<f64> = boot
        .clients
        .iter()
        .map(|c| c.data.train.len() as f64)
        .collect();

    let mut global = boot.publisher_model;
    let mut time = 0.0;
    for round in 1..=config.max_global_iters {
        if harness.halted {
            break;
        }
        let start = time;
        let locals = boot
            .clients
            .iter()
            .enumerate()
            .map(|(c, client)| {
                local_train(
                    &global,
                    &client.data.train,
                    config.local_epochs,
                    config.lr,
                    config.batch_size,
                    &mut stream(config.seed, &format!("train/c{c}/r{round}")),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        global = weighted_mean(&locals, &weights);
        time += round_time;
        let test = evaluate_accuracy(&global, &boot.global_test);
        let vals: Vec<f64> = boot
            .clients
            .iter()
            .map(|client| evaluate_accuracy(&global, &client.data.validation))
            .collect();
        let mean_val = vals.iter().sum::<f64>() / vals.len() as f64;
        for (c, &val) in vals.iter().enumerate() {
            harness.upload_row(time, c as u64, round, start, val, test, mean_val, test);
        }
        harness.publisher_check(time, mean_val);
    }
    harness.finish(time);
    let mut clients = boot.clients;
    for client in clients.iter_mut() {
        client.model = global.clone();
    }
    Ok(harness.into_output(config, clients))
}

/// Independent training and the pure-async server share one event loop;
/// they differ in what a client pulls at wake and what an upload updates.
fn run_async_policy(config: &RunConfig, policy: Policy) -> Result<RunOutput, SimError> {
    let boot = bootstrap(config)?;
    let mut harness = Harness::new(config);
    harness.bootstrap_rows(&boot.clients);
    let mut clients = boot.clients;
    let mut global = boot.publisher_model;
    let mut pending: Vec<Option<(ModelParams, f64)>> = (0..clients.len()).map(|_| None).collect();

    let mut queue: BinaryHeap<Event> = BinaryHeap::new();
    let mut next_seq = 0u64;
    let mut schedule = |queue: &mut BinaryHeap<Event>, time: f64, kind: EventKind| {
        queue.push(Event {
            time,
            seq: next_seq,
            kind,
        });
        next_seq += 1;
    };
    for c in 0..clients.len() {
        schedule(&mut queue, 0.0, EventKind::ClientWake(c));
    }

    let mut end_time = 0.0f64;
    while let Some(event) = queue.pop() {
        end_time = end_time.max(event.time);
        match event.kind {
            EventKind::ClientWake(c) => {
                if harness.halted || clients[c].epoch >= config.max_global_iters {
                    continue;
                }
                let round = clients[c].epoch + 1;
                let base_model = match policy {
                    Policy::PureAsync => &global,
                    _ => &clients[c].model,
                };
                let trained = local_train(
                    base_model,
                    &clients[c].data.train,
                    config.local_epochs,
                    config.lr,
                    config.batch_size,
                    &mut stream(config.seed, &format!("train/c{c}/t{round}")),
                )?;
                let cycle =
                    config.base_epoch_time * clients[c].speed_factor * config.local_epochs as f64
                        + config.eval_cost_per_sample * clients[c].data.validation.len() as f64;
                pending[c] = Some((trained, event.time));
                schedule(&mut queue, event.time + cycle, EventKind::Upload(c));
            }
            EventKind::Upload(c) => {
                let (trained, start) = pending[c].take().expect("upload without training");
                clients[c].epoch += 1;
                let (val, test) = match policy {
                    Policy::PureAsync => {
                        // FedAsync-style fixed mixing at arrival.
                        global = weighted_mean(&[global.clone(), trained], &[0.5, 0.5]);
                        clients[c].model = global.clone();
                        (
                            evaluate_accuracy(&global, &clients[c].data.validation),
                            evaluate_accuracy(&global, &boot.global_test),
                        )
                    }
                    _ => {
                        clients[c].model = trained;
                        (
                            evaluate_accuracy(&clients[c].model, &clients[c].data.validation),
                            evaluate_accuracy(&clients[c].model, &boot.global_test),
                        )
                    }
                };
                clients[c].val_accuracy = val;
                clients[c].test_accuracy = test;
                let mean_val =
                    clients.iter().map(|x| x.val_accuracy).sum::<f64>() / clients.len() as f64;
                let mean_test =
                    clients.iter().map(|x| x.test_accuracy).sum::<f64>() / clients.len() as f64;
                harness.upload_row(
                    event.time,
                    c as u64,
                    clients[c].epoch,
                    start,
                    val,
                    test,
                    mean_val,
                    mean_test,
                );
                harness.publisher_check(event.time, mean_val);
                if !harness.halted && clients[c].epoch < config.max_global_iters {
                    schedule(&mut queue, event.time, EventKind::ClientWake(c));
                }
            }
            _ => {}
        }
    }
    harness.finish(end_time);
    Ok(harness.into_output(config, clients))
}
