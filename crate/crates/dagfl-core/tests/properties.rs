//! Property tests over randomly grown ledgers and the selection math.

use proptest::prelude::*;

use dagfl_core::fl::{ModelDims, ModelParams};
use dagfl_core::ledger::{compute_digest, Digest, Ledger, NodeId, TipMetadata};
use dagfl_core::selection::{aggregate, freshness, tipc};
use dagfl_core::signature::FeatureSignature;

fn metadata(client: u64, epoch: u64, time: f64, accuracy: f64) -> TipMetadata {
    TipMetadata {
        client_id: client,
        signature: FeatureSignature(vec![accuracy, 1.0 - accuracy, 0.25]),
        model_accuracy: accuracy,
        current_epoch: epoch,
        validation_node_id: client,
        timestamp: time,
    }
}

/// Grows a ledger by interpreting each `(a, b, accuracy)` triple as a pair
/// of parent picks modulo the current size.
fn grow_ledger(appends: &[(usize, usize, f64)]) -> Ledger {
    let mut ledger = Ledger::new(metadata(1000, 0, 0.0, 0.0));
    for (i, &(a, b, accuracy)) in appends.iter().enumerate() {
        let len = ledger.len();
        let p1 = NodeId((a % len) as u64);
        let p2 = NodeId((b % len) as u64);
        let time = (i + 1) as f64;
        ledger
            .append_node(
                (p1, p2),
                metadata(i as u64 % 7, (i / 7) as u64, time, accuracy),
            )
            .expect("valid append");
    }
    ledger
}

fn appends(max: usize) -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
    prop::collection::vec((any::<usize>(), any::<usize>(), 0.0..1.0f64), 0..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tips_match_brute_force_scan(appends in appends(120)) {
        let ledger = grow_ledger(&appends);
        let mut approved = vec![false; ledger.len()];
        for node in ledger.nodes() {
            for p in &node.parents {
                approved[p.0 as usize] = true;
            }
        }
        let expected: Vec<NodeId> = (0..ledger.len() as u64)
            .map(NodeId)
            .filter(|id| !approved[id.0 as usize])
            .collect();
        prop_assert_eq!(ledger.tips(), expected);
    }

    #[test]
    fn edges_point_backwards_and_transpose_agrees(appends in appends(120)) {
        let ledger = grow_ledger(&appends);
        for node in ledger.nodes() {
            for p in &node.parents {
                prop_assert!(*p < node.id);
                prop_assert!(ledger.approvers_of(*p).unwrap().contains(&node.id));
            }
        }
        let forward_edges: usize = ledger.nodes().iter().map(|n| n.parents.len()).sum();
        let transpose_edges: usize = (0..ledger.len() as u64)
            .map(|i| ledger.approvers_of(NodeId(i)).unwrap().len())
            .sum();
        prop_assert_eq!(forward_edges, transpose_edges);
    }

    #[test]
    fn digest_chain_recomputes_from_scratch(appends in appends(500)) {
        let ledger = grow_ledger(&appends);
        for node in ledger.nodes() {
            let (p1, p2) = if node.is_genesis() {
                (Digest::ZERO, Digest::ZERO)
            } else {
                (
                    ledger.node(node.parents[0]).unwrap().digest,
                    ledger.node(node.parents[1]).unwrap().digest,
                )
            };
            prop_assert_eq!(compute_digest(&p1, &p2, &node.metadata), node.digest);
        }
    }

    #[test]
    fn partition_is_exact_and_matches_the_closure_oracle(
        appends in appends(120),
        start_pick in any::<usize>(),
    ) {
        let ledger = grow_ledger(&appends);
        let start = NodeId((start_pick % ledger.len()) as u64);
        let (reachable, unreachable) = ledger.partition_tips(start).unwrap();

        // True partition of the tip set.
        let tips = ledger.tips();
        let mut union: Vec<NodeId> = reachable.iter().chain(&unreachable).copied().collect();
        union.sort_unstable();
        prop_assert_eq!(&union, &tips);
        prop_assert!(reachable.iter().all(|t| !unreachable.contains(t)));

        // Oracle: ancestor sets by dynamic programming over ids.
        let n = ledger.len();
        let mut ancestors: Vec<Vec<bool>> = Vec::with_capacity(n);
        for node in ledger.nodes() {
            let mut set = vec![false; n];
            for p in &node.parents {
                set[p.0 as usize] = true;
                for (i, flag) in ancestors[p.0 as usize].iter().enumerate() {
                    if *flag {
                        set[i] = true;
                    }
                }
            }
            ancestors.push(set);
        }
        let expected: Vec<NodeId> = tips
            .iter()
            .copied()
            .filter(|t| *t == start || ancestors[t.0 as usize][start.0 as usize])
            .collect();
        prop_assert_eq!(reachable, expected);
    }

    #[test]
    fn freshness_never_exceeds_tipc_and_decays(
        t_cur in 0u64..500,
        t_tip in 0u64..500,
        dwell in 0.0..1000.0f64,
        alpha in 1e-3..10.0f64,
    ) {
        let f = freshness(t_cur, t_tip, dwell, 0.0, alpha).unwrap();
        let c = tipc(t_cur, t_tip);
        prop_assert!(f <= c + 1e-15);
        prop_assert!(f > 0.0 && c <= 1.0);
        let further = freshness(t_cur, t_tip, dwell + 1.0, 0.0, alpha).unwrap();
        prop_assert!(further <= f);
    }

    #[test]
    fn aggregate_is_permutation_invariant_and_idempotent(
        seed_values in prop::collection::vec(-1.0..1.0f64, 21),
        swap in (0usize..3, 0usize..3),
    ) {
        let dims = ModelDims { input: 2, hidden: 2, output: 2 };
        let count = dims.param_count();
        let models: Vec<ModelParams> = (0..3)
            .map(|m| ModelParams {
                dims,
                values: (0..count).map(|i| seed_values[(m * count + i) % 21]).collect(),
            })
            .collect();
        let mut shuffled: Vec<&ModelParams> = models.iter().collect();
        shuffled.swap(swap.0, swap.1);
        let base = aggregate(&models.iter().collect::<Vec<_>>()).unwrap();
        let permuted = aggregate(&shuffled).unwrap();
        for (a, b) in base.values.iter().zip(&permuted.values) {
            prop_assert!((a - b).abs() < 1e-12);
        }

        let constant = aggregate(&[&models[0], &models[0], &models[0]]).unwrap();
        prop_assert_eq!(constant.values, models[0].values.clone());
    }
}
