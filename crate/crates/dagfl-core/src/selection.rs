//! Three-factor tip selection and model aggregation.
//!
//! A selecting client partitions the current tips by reachability from its
//! latest node, ranks the reachable side by freshness-weighted measured
//! accuracy, prefilters the unreachable side by signature similarity before
//! measuring only the most similar candidates, and averages the models of
//! the winners.

use thiserror::Error;

use crate::fl::ModelParams;
use crate::ledger::{Ledger, LedgerError, NodeId};
use crate::signature::SimilarityRegistry;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("clock regression: now {now} precedes tip time {tip_time}")]
    ClockRegression { now: f64, tip_time: f64 },
    #[error("empty tip set")]
    EmptyTipSet,
    #[error("no models to aggregate")]
    NothingToAggregate,
    #[error("aggregation dimension mismatch")]
    DimensionMismatch,
}

/// Epoch-proximity factor: `exp(-|T_cur - T_tip|)`, 1 at equal epochs.
pub fn tipc(t_cur: u64, t_tip: u64) -> f64 {
    let gap = t_cur.abs_diff(t_tip) as f64;
    (-gap).exp()
}

/// Freshness of a tip: the epoch-proximity factor damped hyperbolically by
/// dwell time, `tipc * 1 / (1 + alpha * (now - tip_time))`.
pub fn freshness(
    t_cur: u64,
    t_tip: u64,
    now: f64,
    tip_time: f64,
    alpha: f64,
) -> Result<f64, SelectionError> {
    if now < tip_time {
        return Err(SelectionError::ClockRegression { now, tip_time });
    }
    Ok(tipc(t_cur, t_tip) / (1.0 + alpha * (now - tip_time)))
}

/// How the reachable branch combines freshness with measured accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreshnessMode {
    /// Rank by `freshness * accuracy` (default).
    Product,
    /// Rank by accuracy, freshness breaks ties.
    TieBreak,
    /// Rank by accuracy alone.
    Ignore,
}

#[derive(Debug, Clone)]
pub struct SelectionConfig {
    /// Tips to select per upload (the paper's N).
    pub select_n: usize,
    /// Reachable-branch share of the quota.
    pub lambda: f64,
    /// Freshness decay factor.
    pub alpha: f64,
    /// Similarity-prefilter size; `None` means `min(2 * N2, pool)`.
    pub prefilter: Option<usize>,
    pub freshness_mode: FreshnessMode,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            select_n: 2,
            lambda: 0.5,
            alpha: 0.1,
            prefilter: None,
            freshness_mode: FreshnessMode::Product,
        }
    }
}

impl SelectionConfig {
    /// Branch quotas: `N1 = round(lambda * N)`, `N2 = N - N1`.
    pub fn quotas(&self) -> (usize, usize) {
        let n = self.select_n;
        let n1 = ((self.lambda * n as f64).round() as usize).min(n);
        (n1, n - n1)
    }
}

/// Measures a tip model's accuracy on the selector's validation set. The
/// simulation's implementation fetches the model from the store and charges
/// simulated evaluation time.
pub trait TipEvaluator {
    fn measure_accuracy(&mut self, tip: NodeId) -> f64;
}

impl<F: FnMut(NodeId) -> f64> TipEvaluator for F {
    fn measure_accuracy(&mut self, tip: NodeId) -> f64 {
        self(tip)
    }
}

/// The selecting client's view: identity, DAG anchor, and clock.
#[derive(Debug, Clone, Copy)]
pub struct SelectorContext {
    pub client_id: u64,
    /// The client's most recent node; genesis before any upload.
    pub latest_node: NodeId,
    pub current_epoch: u64,
    pub now: f64,
}

/// Per-candidate audit record of one selection.
#[derive(Debug, Clone)]
pub struct TipScore {
    pub tip: NodeId,
    pub reachable: bool,
    pub tipc: f64,
    pub freshness: f64,
    pub similarity: Option<f64>,
    pub measured_accuracy: Option<f64>,
    pub chosen: bool,
}

/// Result of one tip selection.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Selected tips in rank order, reachable picks first.
    pub chosen: Vec<NodeId>,
    pub scores: Vec<TipScore>,
    pub reachable_pool: usize,
    pub unreachable_pool: usize,
    pub quota_reachable: usize,
    pub picked_reachable: usize,
    pub picked_unreachable: usize,
    /// Accuracy measurements performed (drives simulated evaluation cost).
    pub evaluations: usize,
}

struct Candidate {
    tip: NodeId,
    tipc: f64,
    freshness: f64,
    similarity: f64,
    accuracy: f64,
}

/// Selects up to N tips for the given client.
///
/// Reachable tips are all measured and ranked per the freshness mode. The
/// unreachable side is first narrowed to the `p` most registry-similar
/// uploaders, and only those are measured, ranked by accuracy with freshness
/// as tie-break. A branch that cannot fill its quota hands the remainder to
/// the other. With a single tip and N = 2 the tip is repeated; otherwise a
/// short ledger yields fewer than N picks.
pub fn select_tips(
    ledger: &Ledger,
    ctx: SelectorContext,
    config: &SelectionConfig,
    registry: &SimilarityRegistry,
    evaluator: &mut dyn TipEvaluator,
) -> Result<Selection, SelectionError> {
    let (reachable, unreachable) = ledger.partition_tips(ctx.latest_node)?;
    let total_tips = reachable.len() + unreachable.len();
    if total_tips == 0 {
        return Err(SelectionError::EmptyTipSet);
    }
    let n = config.select_n.max(1);
    let (quota_reach, quota_unreach) = config.quotas();

    // Backfill shortfalls across branches before capping by pool size.
    let want_reach = quota_reach + quota_unreach.saturating_sub(unreachable.len());
    let want_unreach = quota_unreach + quota_reach.saturating_sub(reachable.len());
    let from_reach = want_reach.min(reachable.len());
    let from_unreach = want_unreach.min(unreachable.len());

    let mut evaluations = 0;

    // Reachable branch: measure everything, rank by the configured policy.
    let mut reach_ranked: Vec<Candidate> = reachable
        .iter()
        .map(|&tip| {
            let node = ledger.node(tip)?;
            let accuracy = evaluator.measure_accuracy(tip);
            evaluations += 1;
            Ok(Candidate {
                tip,
                tipc: tipc(ctx.current_epoch, node.metadata.current_epoch),
                freshness: freshness(
                    ctx.current_epoch,
                    node.metadata.current_epoch,
                    ctx.now,
                    node.metadata.timestamp,
                    config.alpha,
                )?,
                similarity: 0.0,
                accuracy,
            })
        })
        .collect::<Result<_, SelectionError>>()?;
    match config.freshness_mode {
        FreshnessMode::Product => reach_ranked.sort_by(|a, b| {
            (b.freshness * b.accuracy)
                .total_cmp(&(a.freshness * a.accuracy))
                .then(a.tip.cmp(&b.tip))
        }),
        FreshnessMode::TieBreak => reach_ranked.sort_by(|a, b| {
            b.accuracy
                .total_cmp(&a.accuracy)
                .then(b.freshness.total_cmp(&a.freshness))
                .then(a.tip.cmp(&b.tip))
        }),
        FreshnessMode::Ignore => {
            reach_ranked.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy).then(a.tip.cmp(&b.tip)))
        }
    }

    // Unreachable branch: similarity prefilter, then measure only the top p.
    let mut unreach_all: Vec<Candidate> = unreachable
        .iter()
        .map(|&tip| {
            let node = ledger.node(tip)?;
            let similarity = registry
                .query(u64::MAX, ctx.client_id, node.metadata.client_id)
                .unwrap_or(0.0);
            Ok(Candidate {
                tip,
                tipc: tipc(ctx.current_epoch, node.metadata.current_epoch),
                freshness: freshness(
                    ctx.current_epoch,
                    node.metadata.current_epoch,
                    ctx.now,
                    node.metadata.timestamp,
                    config.alpha,
                )?,
                similarity,
                accuracy: f64::NAN,
            })
        })
        .collect::<Result<_, SelectionError>>()?;
    unreach_all.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.tip.cmp(&b.tip))
    });
    let p_default = config.prefilter.unwrap_or(2 * quota_unreach);
    // The prefilter must at least cover the quota plus any backfill need.
    let p = p_default.max(from_unreach).min(unreachable.len());
    let mut measured: Vec<Candidate> = Vec::with_capacity(p);
    let mut unmeasured: Vec<Candidate> = Vec::new();
    for (i, mut cand) in unreach_all.into_iter().enumerate() {
        if i < p {
            cand.accuracy = evaluator.measure_accuracy(cand.tip);
            evaluations += 1;
            measured.push(cand);
        } else {
            unmeasured.push(cand);
        }
    }
    measured.sort_by(|a, b| {
        b.accuracy
            .total_cmp(&a.accuracy)
            .then(b.freshness.total_cmp(&a.freshness))
            .then(a.tip.cmp(&b.tip))
    });

    let picked_reachable = from_reach;
    let picked_unreachable = from_unreach;
    let mut chosen: Vec<NodeId> = reach_ranked[..from_reach]
        .iter()
        .chain(&measured[..from_unreach])
        .map(|c| c.tip)
        .collect();
    if chosen.len() == 1 && n == 2 {
        chosen.push(chosen[0]);
    }

    let chosen_set: Vec<NodeId> = chosen.clone();
    let mut scores = Vec::with_capacity(total_tips);
    for (list, reachable_flag, has_sim) in [
        (&reach_ranked, true, false),
        (&measured, false, true),
        (&unmeasured, false, true),
    ] {
        for c in list.iter() {
            scores.push(TipScore {
                tip: c.tip,
                reachable: reachable_flag,
                tipc: c.tipc,
                freshness: c.freshness,
                similarity: has_sim.then_some(c.similarity),
                measured_accuracy: c.accuracy.is_finite().then_some(c.accuracy),
                chosen: chosen_set.contains(&c.tip),
            });
        }
    }

    Ok(Selection {
        chosen,
        scores,
        reachable_pool: reachable.len(),
        unreachable_pool: unreachable.len(),
        quota_reachable: quota_reach,
        picked_reachable,
        picked_unreachable,
        evaluations,
    })
}

/// Coordinate-wise arithmetic mean of the given models.
///
/// Computed as `first + mean(model - first)`: tip models cluster in
/// parameter space, so the deltas are small, and a list of identical models
/// averages to that model bit for bit.
pub fn aggregate(models: &[&ModelParams]) -> Result<ModelParams, SelectionError> {
    let first = *models.first().ok_or(SelectionError::NothingToAggregate)?;
    if models.iter().any(|m| m.dims != first.dims) {
        return Err(SelectionError::DimensionMismatch);
    }
    let scale = 1.0 / models.len() as f64;
    let mut values = first.values.clone();
    for (i, v) in values.iter_mut().enumerate() {
        let mut delta = 0.0;
        for model in models {
            delta += model.values[i] - first.values[i];
        }
        *v += delta * scale;
    }
    Ok(ModelParams {
        dims: first.dims,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl::{ModelDims, ModelParams};
    use crate::ledger::TipMetadata;
    use crate::signature::FeatureSignature;
    use std::collections::HashMap;

    fn meta(client: u64, epoch: u64, time: f64) -> TipMetadata {
        TipMetadata {
            client_id: client,
            signature: FeatureSignature(vec![0.5, 0.5]),
            model_accuracy: 0.5,
            current_epoch: epoch,
            validation_node_id: client,
            timestamp: time,
        }
    }

    struct TableEvaluator(HashMap<NodeId, f64>);

    impl TipEvaluator for TableEvaluator {
        fn measure_accuracy(&mut self, tip: NodeId) -> f64 {
            self.0[&tip]
        }
    }

    #[test]
    fn tipc_examples() {
        assert_eq!(tipc(5, 5), 1.0);
        assert!((tipc(5, 3) - (-2.0f64).exp()).abs() < 1e-9);
        assert!((tipc(5, 3) - 0.135335).abs() < 1e-6);
        assert_eq!(tipc(3, 5), tipc(5, 3));
    }

    #[test]
    fn freshness_examples() {
        assert_eq!(freshness(1, 1, 4.0, 4.0, 0.1).unwrap(), 1.0);
        assert!((freshness(1, 1, 10.0, 0.0, 0.1).unwrap() - 0.5).abs() < 1e-12);
        let combined = freshness(3, 1, 10.0, 0.0, 0.1).unwrap();
        assert!((combined - (-2.0f64).exp() * 0.5).abs() < 1e-9);
        assert!((combined - 0.067668).abs() < 1e-6);
    }

    #[test]
    fn freshness_rejects_clock_regression() {
        assert!(matches!(
            freshness(1, 1, 1.0, 2.0, 0.1),
            Err(SelectionError::ClockRegression { .. })
        ));
    }

    #[test]
    fn freshness_is_monotone() {
        let mut prev = f64::INFINITY;
        for dwell in 0..50 {
            let f = freshness(4, 4, dwell as f64, 0.0, 0.1).unwrap();
            assert!(f <= prev && f > 0.0 && f <= 1.0);
            prev = f;
        }
        let mut prev = f64::INFINITY;
        for gap in 0..30 {
            let f = freshness(gap, 0, 5.0, 5.0, 0.1).unwrap();
            assert!(f <= prev);
            prev = f;
        }
    }

    #[test]
    #[allow(clippy::field_reassign_with_default)]
    fn quotas_round_half_up() {
        let mut config = SelectionConfig::default();
        assert_eq!(config.quotas(), (1, 1));
        config.lambda = 1.0;
        assert_eq!(config.quotas(), (2, 0));
        config.lambda = 0.0;
        assert_eq!(config.quotas(), (0, 2));
        config.select_n = 3;
        config.lambda = 0.5;
        assert_eq!(config.quotas(), (2, 1));
    }

    /// Diamond-plus-branch fixture: client 1's anchor reaches two tips, two
    /// other tips hang off genesis independently.
    fn fixture() -> (Ledger, SimilarityRegistry) {
        let mut ledger = Ledger::new(meta(100, 0, 0.0));
        let anchor = ledger
            .append_node((NodeId(0), NodeId(0)), meta(1, 1, 1.0))
            .unwrap();
        ledger
            .append_node((anchor, anchor), meta(2, 1, 2.0))
            .unwrap(); // tip 2, reachable
        ledger
            .append_node((anchor, anchor), meta(3, 1, 2.5))
            .unwrap(); // tip 3, reachable
        ledger
            .append_node((NodeId(0), NodeId(0)), meta(4, 1, 3.0))
            .unwrap(); // tip 4
        ledger
            .append_node((NodeId(0), NodeId(0)), meta(5, 1, 3.5))
            .unwrap(); // tip 5
        let mut registry = SimilarityRegistry::new();
        registry.record(1, 1, 4, 0.9).unwrap();
        registry.record(1, 1, 5, 0.2).unwrap();
        (ledger, registry)
    }

    #[test]
    fn one_pick_per_branch_at_default_lambda() {
        let (ledger, registry) = fixture();
        let mut evaluator = TableEvaluator(HashMap::from([
            (NodeId(2), 0.6),
            (NodeId(3), 0.9),
            (NodeId(4), 0.7),
            (NodeId(5), 0.8),
        ]));
        let ctx = SelectorContext {
            client_id: 1,
            latest_node: NodeId(1),
            current_epoch: 1,
            now: 4.0,
        };
        let sel = select_tips(
            &ledger,
            ctx,
            &SelectionConfig::default(),
            &registry,
            &mut evaluator,
        )
        .unwrap();
        assert_eq!(sel.reachable_pool, 2);
        assert_eq!(sel.unreachable_pool, 2);
        assert_eq!(sel.picked_reachable, 1);
        assert_eq!(sel.picked_unreachable, 1);
        // Reachable: 3 beats 2 on accuracy and freshness.
        // Unreachable: both similar enough to be measured (p = 2), 5 wins on
        // accuracy despite lower similarity.
        assert_eq!(sel.chosen, vec![NodeId(3), NodeId(5)]);
    }

    #[test]
    fn prefilter_skips_dissimilar_uploaders() {
        let (ledger, registry) = fixture();
        let config = SelectionConfig {
            prefilter: Some(1),
            ..SelectionConfig::default()
        };
        let mut evaluator = TableEvaluator(HashMap::from([
            (NodeId(2), 0.6),
            (NodeId(3), 0.9),
            (NodeId(4), 0.7),
            (NodeId(5), 0.8),
        ]));
        let ctx = SelectorContext {
            client_id: 1,
            latest_node: NodeId(1),
            current_epoch: 1,
            now: 4.0,
        };
        let sel = select_tips(&ledger, ctx, &config, &registry, &mut evaluator).unwrap();
        // Only the most similar unreachable uploader (client 4) is measured.
        assert_eq!(sel.chosen, vec![NodeId(3), NodeId(4)]);
        assert_eq!(sel.evaluations, 3); // 2 reachable + 1 prefiltered
        let unmeasured: Vec<_> = sel
            .scores
            .iter()
            .filter(|s| !s.reachable && s.measured_accuracy.is_none())
            .collect();
        assert_eq!(unmeasured.len(), 1);
        assert_eq!(unmeasured[0].tip, NodeId(5));
    }

    #[test]
    fn lambda_one_selects_only_reachable() {
        let (ledger, registry) = fixture();
        let config = SelectionConfig {
            lambda: 1.0,
            ..SelectionConfig::default()
        };
        let mut evaluator = TableEvaluator(HashMap::from([
            (NodeId(2), 0.6),
            (NodeId(3), 0.9),
            (NodeId(4), 0.7),
            (NodeId(5), 0.8),
        ]));
        let ctx = SelectorContext {
            client_id: 1,
            latest_node: NodeId(1),
            current_epoch: 1,
            now: 4.0,
        };
        let sel = select_tips(&ledger, ctx, &config, &registry, &mut evaluator).unwrap();
        assert_eq!(sel.chosen, vec![NodeId(3), NodeId(2)]);
    }

    #[test]
    fn single_tip_is_repeated_for_two_parents() {
        let ledger = Ledger::new(meta(100, 0, 0.0));
        let registry = SimilarityRegistry::new();
        let mut evaluator = TableEvaluator(HashMap::from([(NodeId(0), 0.1)]));
        let ctx = SelectorContext {
            client_id: 1,
            latest_node: NodeId(0),
            current_epoch: 0,
            now: 0.0,
        };
        let sel = select_tips(
            &ledger,
            ctx,
            &SelectionConfig::default(),
            &registry,
            &mut evaluator,
        )
        .unwrap();
        assert_eq!(sel.chosen, vec![NodeId(0), NodeId(0)]);
    }

    #[test]
    fn shortfall_backfills_from_the_other_branch() {
        // Anchor reaches every tip: the unreachable branch is empty, so both
        // picks come from the reachable ranking.
        let (ledger, registry) = fixture();
        let mut evaluator = TableEvaluator(HashMap::from([
            (NodeId(2), 0.6),
            (NodeId(3), 0.9),
            (NodeId(4), 0.7),
            (NodeId(5), 0.8),
        ]));
        let ctx = SelectorContext {
            client_id: 9,
            latest_node: NodeId(0),
            current_epoch: 1,
            now: 4.0,
        };
        let sel = select_tips(
            &ledger,
            ctx,
            &SelectionConfig::default(),
            &registry,
            &mut evaluator,
        )
        .unwrap();
        assert_eq!(sel.unreachable_pool, 0);
        assert_eq!(sel.picked_reachable, 2);
        assert_eq!(sel.chosen.len(), 2);
    }

    #[test]
    fn unreachable_ranking_is_scale_invariant() {
        let (ledger, registry) = fixture();
        let ctx = SelectorContext {
            client_id: 1,
            latest_node: NodeId(1),
            current_epoch: 1,
            now: 4.0,
        };
        let base = HashMap::from([
            (NodeId(2), 0.6),
            (NodeId(3), 0.9),
            (NodeId(4), 0.35),
            (NodeId(5), 0.4),
        ]);
        let mut plain = TableEvaluator(base.clone());
        let picked_plain = select_tips(
            &ledger,
            ctx,
            &SelectionConfig::default(),
            &registry,
            &mut plain,
        )
        .unwrap();
        let mut scaled = TableEvaluator(base.iter().map(|(k, v)| (*k, v * 0.5)).collect());
        let picked_scaled = select_tips(
            &ledger,
            ctx,
            &SelectionConfig::default(),
            &registry,
            &mut scaled,
        )
        .unwrap();
        let unreach = |sel: &Selection| {
            sel.scores
                .iter()
                .filter(|s| !s.reachable && s.chosen)
                .map(|s| s.tip)
                .collect::<Vec<_>>()
        };
        assert_eq!(unreach(&picked_plain), unreach(&picked_scaled));
    }

    #[test]
    fn aggregate_means_coordinatewise() {
        let dims = ModelDims {
            input: 2,
            hidden: 2,
            output: 2,
        };
        let count = dims.param_count();
        let zeros = ModelParams {
            dims,
            values: vec![0.0; count],
        };
        let twos = ModelParams {
            dims,
            values: vec![2.0; count],
        };
        let mean = aggregate(&[&zeros, &twos]).unwrap();
        assert!(mean.values.iter().all(|&v| v == 1.0));

        let same = aggregate(&[&twos, &twos, &twos]).unwrap();
        assert_eq!(same.values, twos.values);
    }

    #[test]
    fn aggregate_matches_two_loop_oracle() {
        use rand::Rng;
        let dims = ModelDims {
            input: 3,
            hidden: 4,
            output: 2,
        };
        let mut rng = crate::rng::stream(5, "agg");
        let models: Vec<ModelParams> = (0..5)
            .map(|_| ModelParams {
                dims,
                values: (0..dims.param_count())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            })
            .collect();
        let refs: Vec<&ModelParams> = models.iter().collect();
        let mean = aggregate(&refs).unwrap();
        for coord in 0..dims.param_count() {
            let mut acc = 0.0;
            for m in &models {
                acc += m.values[coord];
            }
            assert!((mean.values[coord] - acc / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let dims = ModelDims {
            input: 2,
            hidden: 3,
            output: 2,
        };
        let a = ModelParams {
            dims,
            values: (0..dims.param_count()).map(|i| i as f64).collect(),
        };
        let b = ModelParams {
            dims,
            values: (0..dims.param_count())
                .map(|i| (i * i) as f64 * 0.1)
                .collect(),
        };
        let ab = aggregate(&[&a, &b]).unwrap();
        let ba = aggregate(&[&b, &a]).unwrap();
        for (x, y) in ab.values.iter().zip(&ba.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_rejects_mismatched_dims() {
        let a = ModelParams::zeros(ModelDims {
            input: 2,
            hidden: 2,
            output: 2,
        });
        let b = ModelParams::zeros(ModelDims {
            input: 3,
            hidden: 2,
            output: 2,
        });
        assert!(matches!(
            aggregate(&[&a, &b]),
            Err(SelectionError::DimensionMismatch)
        ));
        assert!(matches!(
            aggregate(&[]),
            Err(SelectionError::NothingToAggregate)
        ));
    }
}
