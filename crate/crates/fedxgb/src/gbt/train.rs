//! Plaintext depth-wise boosting: the reference trainer.
//!
//! Gradients are quantized to the fixed-point grid per instance before any
//! aggregation, so gradient sums here are exact dyadic rationals equal to
//! the decoded field sums the federated coordinator sees.

use super::loss::{self, Loss};
use super::split::{self, CandidateSums};
use super::tree::{Forest, Node, Tree};
use super::{BoostParams, GbtError, GradientPair, Instance};
use crate::codec::FixedPointCodec;
use rand::Rng;

/// Draw `k` distinct features and return them in ascending order; the order
/// fixes candidate scan order and therefore tie-breaking.
pub fn subsample_features<R: Rng + ?Sized>(n_features: u32, k: usize, rng: &mut R) -> Vec<u32> {
    let n = n_features as usize;
    if k >= n {
        return (0..n_features).collect();
    }
    let mut pool: Vec<u32> = (0..n_features).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    let mut picked = pool[..k].to_vec();
    picked.sort_unstable();
    picked
}

/// Candidate thresholds for every feature, computed once per dataset and
/// shared verbatim by both training paths.
pub fn all_candidates(data: &[Instance], n_features: u32, max: usize) -> Vec<Vec<f64>> {
    (0..n_features)
        .map(|f| split::feature_candidates(data, f, max))
        .collect()
}

/// Per-instance gradients for every score group, quantized to the grid.
pub fn round_gradients(
    loss_kind: &Loss,
    scores: &[Vec<f64>],
    labels: &[u32],
    codec: &FixedPointCodec,
) -> Vec<Vec<GradientPair>> {
    scores
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let raw = match loss_kind {
                Loss::Logistic => vec![loss::logistic_gradients(row[0], y as f64)],
                Loss::Softmax { .. } => {
                    loss::softmax_gradients(&loss::softmax_probs(row), y as usize)
                }
            };
            raw.into_iter()
                .map(|gp| GradientPair {
                    g: codec.quantize(gp.g).expect("gradients are within range"),
                    h: codec.quantize(gp.h).expect("hessians are within range"),
                })
                .collect()
        })
        .collect()
}

/// Grow one depth-wise tree over the given instance gradients.
pub fn grow_tree(
    data: &[Instance],
    grads: &[GradientPair],
    features: &[u32],
    candidates: &[Vec<f64>],
    params: &BoostParams,
) -> Result<Tree, GbtError> {
    let mut nodes = vec![Node::Leaf { weight: 0.0 }];
    let mut frontier: Vec<(usize, Vec<usize>)> = vec![(0, (0..data.len()).collect())];

    for depth in 0..=params.max_depth {
        let mut next = Vec::new();
        for (node_idx, insts) in frontier {
            let count = insts.len() as u64;
            let g: f64 = insts.iter().map(|&i| grads[i].g).sum();
            let h: f64 = insts.iter().map(|&i| grads[i].h).sum();

            let may_split = depth < params.max_depth
                && insts.len() >= params.min_node_instances.max(1);
            let chosen = if may_split {
                let sums = candidate_sums(data, grads, &insts, features, candidates);
                split::choose_split(count, g, h, &sums, params.lambda)?
                    .filter(|c| split::passes_gate(c.score, params.gamma))
            } else {
                None
            };

            match chosen {
                Some(best) => {
                    let (mut left, mut right) = (Vec::new(), Vec::new());
                    for &i in &insts {
                        if data[i].feature(best.feature) < best.threshold {
                            left.push(i);
                        } else {
                            right.push(i);
                        }
                    }
                    let li = nodes.len() as u32;
                    nodes.push(Node::Leaf { weight: 0.0 });
                    let ri = nodes.len() as u32;
                    nodes.push(Node::Leaf { weight: 0.0 });
                    nodes[node_idx] = Node::Split {
                        feature: best.feature,
                        threshold: best.threshold,
                        left: li,
                        right: ri,
                    };
                    next.push((li as usize, left));
                    next.push((ri as usize, right));
                }
                None => {
                    nodes[node_idx] = Node::Leaf {
                        weight: split::leaf_weight(g, h, params.lambda)?,
                    };
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    Ok(Tree { nodes })
}

/// Left sums for every (feature, threshold) pair in scan order.
fn candidate_sums(
    data: &[Instance],
    grads: &[GradientPair],
    insts: &[usize],
    features: &[u32],
    candidates: &[Vec<f64>],
) -> Vec<CandidateSums> {
    let mut out = Vec::new();
    for &f in features {
        for &thr in &candidates[f as usize] {
            let mut gl = 0.0;
            let mut hl = 0.0;
            let mut count_left = 0u64;
            for &i in insts {
                if data[i].feature(f) < thr {
                    gl += grads[i].g;
                    hl += grads[i].h;
                    count_left += 1;
                }
            }
            out.push(CandidateSums {
                feature: f,
                threshold: thr,
                count_left,
                gl,
                hl,
            });
        }
    }
    out
}

/// Train a boosted ensemble in the clear. The feature stream must be seeded
/// identically to the coordinator's for the two paths to agree.
pub fn train_plaintext<R: Rng + ?Sized>(
    data: &[Instance],
    labels: &[u32],
    n_features: u32,
    params: &BoostParams,
    codec: &FixedPointCodec,
    feature_rng: &mut R,
) -> Result<Forest, GbtError> {
    params.validate()?;
    let candidates = all_candidates(data, n_features, params.max_candidates);
    let groups = params.loss.groups();
    let mut scores = vec![vec![0.0f64; groups]; data.len()];
    let mut forest = Forest::new(params.eta, params.loss);

    for _ in 0..params.rounds {
        let grads = round_gradients(&params.loss, &scores, labels, codec);
        let mut round_trees = Vec::with_capacity(groups);
        for c in 0..groups {
            let features = subsample_features(n_features, params.feature_subsample, feature_rng);
            let class_grads: Vec<GradientPair> = grads.iter().map(|row| row[c]).collect();
            let tree = grow_tree(data, &class_grads, &features, &candidates, params)?;
            for (i, x) in data.iter().enumerate() {
                scores[i][c] += params.eta * tree.predict(x);
            }
            round_trees.push(tree);
        }
        forest.trees.push(round_trees);
    }
    Ok(forest)
}
