//! Acceptance gate: ten end-to-end checks, one per shipping criterion.
//! Each test prints a single verdict line (visible with `--nocapture`) and
//! asserts it. Tolerances are pinned as constants below.

use fedxgb::codec::FixedPointCodec;
use fedxgb::config::{DatasetKind, RunConfig, TopologyConfig};
use fedxgb::crypto::{key_agree, AgreementKeyPair};
use fedxgb::experiment::{self, SweepAxis};
use fedxgb::federation::runner::World;
use fedxgb::federation::messages::{kind, payload_class, PayloadClass};
use fedxgb::federation::{CENTRAL_ID, USER_ID_BASE};
use fedxgb::field::{Field, FieldElement};
use fedxgb::gbt::{loss, Forest, Loss, Node};
use fedxgb::masking::{self, MaskKeyring};
use fedxgb::seccmp::{self, CmpDomain, CmpRequest};
use fedxgb::shamir;
use fedxgb::sim::NETWORK_ID;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeSet;
use std::time::Instant;

/// Leaf weights may differ between the two arms by at most this much.
const LEAF_WEIGHT_TOLERANCE: f64 = 1.0 / 1024.0; // 2^-10
/// Federated vs centralized test accuracy gap limit (1 percentage point).
const ACCURACY_GAP_LIMIT: f64 = 0.01;
/// Dropout-run final accuracy may deviate from the stable-roster run by at
/// most this much (2 percentage points).
const DROPOUT_GAP_LIMIT: f64 = 0.02;
const GRADIENT_RELATIVE_TOLERANCE: f64 = 1e-5;

fn verdict(number: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {number:02} {name}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {number:02} {name} failed: {detail}");
}

fn base_cfg(users: usize, edges: usize, rounds: usize, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.topology = TopologyConfig { users, edges };
    cfg.boost.rounds = rounds;
    cfg.boost.max_depth = 3;
    cfg.dropout.rate = 0.0;
    cfg.dropout.reserve = 0;
    cfg
}

/// Structural equivalence: identical shape and split choices, leaf weights
/// within tolerance. Returns the largest observed leaf gap.
fn forests_equivalent(fed: &Forest, oracle: &Forest) -> Result<f64, String> {
    if fed.trees.len() != oracle.trees.len() {
        return Err(format!(
            "round counts differ: {} vs {}",
            fed.trees.len(),
            oracle.trees.len()
        ));
    }
    let mut max_gap = 0.0f64;
    for (r, (fr, or)) in fed.trees.iter().zip(&oracle.trees).enumerate() {
        if fr.len() != or.len() {
            return Err(format!("round {r}: group counts differ"));
        }
        for (g, (ft, ot)) in fr.iter().zip(or).enumerate() {
            if ft.nodes.len() != ot.nodes.len() {
                return Err(format!("round {r} group {g}: node counts differ"));
            }
            for (i, (fnode, onode)) in ft.nodes.iter().zip(&ot.nodes).enumerate() {
                match (fnode, onode) {
                    (
                        Node::Split {
                            feature: ff,
                            threshold: fthr,
                            left: fl,
                            right: frn,
                        },
                        Node::Split {
                            feature: of,
                            threshold: othr,
                            left: ol,
                            right: orn,
                        },
                    ) => {
                        if ff != of || fthr != othr || fl != ol || frn != orn {
                            return Err(format!(
                                "round {r} group {g} node {i}: split choices differ"
                            ));
                        }
                    }
                    (Node::Leaf { weight: fw }, Node::Leaf { weight: ow }) => {
                        let gap = (fw - ow).abs();
                        max_gap = max_gap.max(gap);
                        if gap > LEAF_WEIGHT_TOLERANCE {
                            return Err(format!(
                                "round {r} group {g} node {i}: leaf gap {gap:e}"
                            ));
                        }
                    }
                    _ => {
                        return Err(format!(
                            "round {r} group {g} node {i}: topology differs"
                        ));
                    }
                }
            }
        }
    }
    Ok(max_gap)
}

#[test]
fn c01_oracle_equivalence() {
    // Five corpus/roster shapes: 100-2000 instances, 5-123 features,
    // 5 or 20 users, 1 or 3 edges, depth 3, 10 rounds, no dropout.
    let configs: Vec<(&str, RunConfig)> = vec![
        ("blobs-100x5 n=5 t=1", {
            let mut c = base_cfg(5, 1, 10, 101);
            c.dataset.kind = DatasetKind::Blobs;
            c.dataset.size = 100;
            c.dataset.blob_features = 5;
            c.boost.max_candidates = 8;
            c
        }),
        ("blobs-400x8x3 n=5 t=3 subsampled-features", {
            let mut c = base_cfg(5, 3, 10, 102);
            c.dataset.kind = DatasetKind::Blobs;
            c.dataset.size = 400;
            c.dataset.blob_features = 8;
            c.dataset.blob_classes = 3;
            c.boost.loss = Loss::Softmax { classes: 3 };
            c.boost.feature_subsample = 5;
            c.boost.max_candidates = 8;
            c
        }),
        ("census-600x123 n=20 t=3", {
            let mut c = base_cfg(20, 3, 10, 103);
            c.dataset.kind = DatasetKind::Census;
            c.dataset.size = 600;
            c.boost.max_candidates = 8;
            c
        }),
        ("digits-200x64x10 n=5 t=3", {
            let mut c = base_cfg(5, 3, 10, 104);
            c.dataset.kind = DatasetKind::Digits;
            c.dataset.size = 200;
            c.boost.loss = Loss::Softmax { classes: 10 };
            c.boost.max_candidates = 4;
            c
        }),
        ("blobs-2000x5 n=20 t=3", {
            let mut c = base_cfg(20, 3, 10, 105);
            c.dataset.kind = DatasetKind::Blobs;
            c.dataset.size = 2000;
            c.dataset.blob_features = 5;
            c
        }),
    ];

    let mut max_gap = 0.0f64;
    let mut slowest = 0.0f64;
    for (name, cfg) in &configs {
        let started = Instant::now();
        let ds = experiment::load_dataset(cfg).expect("corpus");
        let fed = experiment::run_federated(cfg, &ds).expect("federated run");
        let oracle = experiment::run_plaintext(cfg, &ds).expect("reference run");
        let gap = match forests_equivalent(fed.world.forest(), &oracle) {
            Ok(g) => g,
            Err(why) => {
                verdict(1, "oracle-equivalence", false, &format!("{name}: {why}"));
                return;
            }
        };
        max_gap = max_gap.max(gap);
        let secs = started.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        assert!(secs < 120.0, "{name} took {secs:.1}s, budget is 120s");
    }
    verdict(
        1,
        "oracle-equivalence",
        true,
        &format!(
            "{} configs, max leaf gap {max_gap:.1e}, slowest {slowest:.1}s",
            configs.len()
        ),
    );
}

fn census_cfg(seed: u64) -> RunConfig {
    let mut cfg = base_cfg(20, 3, 50, seed);
    cfg.dataset.kind = DatasetKind::Census;
    cfg.dataset.size = 3000; // holdout below leaves 2000 train / 1000 test
    cfg.boost.max_candidates = 8;
    cfg
}

#[test]
fn c02_accuracy_close_to_centralized() {
    let cfg = census_cfg(201);
    let report = experiment::run_compare(&cfg, 1.0 / 3.0).expect("comparison");
    let gap = (report.final_federated_accuracy - report.final_oracle_accuracy).abs();

    // Cross-check both headline numbers against independently tallied
    // confusion matrices.
    let fed_acc = experiment::accuracy_from_confusion(&report.confusion_federated);
    let ora_acc = experiment::accuracy_from_confusion(&report.confusion_oracle);
    assert!((fed_acc - report.final_federated_accuracy).abs() < 1e-12);
    assert!((ora_acc - report.final_oracle_accuracy).abs() < 1e-12);

    verdict(
        2,
        "accuracy-vs-centralized",
        gap < ACCURACY_GAP_LIMIT,
        &format!(
            "federated {:.4} vs centralized {:.4} on held-out third, gap {:.2e} (limit {ACCURACY_GAP_LIMIT})",
            report.final_federated_accuracy, report.final_oracle_accuracy, gap
        ),
    );
}

#[test]
fn c03_dropout_robustness() {
    let base = census_cfg(301);
    let full = experiment::load_dataset(&base).expect("corpus");
    let (train, test) = experiment::holdout_split(&full, 1.0 / 3.0, base.dataset.data_seed);

    let mut finals = Vec::new();
    for rate in [0.0, 0.1, 0.2, 0.3] {
        let mut cfg = base.clone();
        cfg.dropout.rate = rate;
        cfg.dropout.period = 10;
        cfg.dropout.reserve = if rate > 0.0 { 30 } else { 0 };
        let run = experiment::run_federated(&cfg, &train).expect("run completes");
        finals.push(run.world.forest().accuracy(&test.instances, &test.labels));
    }
    let baseline = finals[0];
    let max_gap = finals[1..]
        .iter()
        .map(|a| (a - baseline).abs())
        .fold(0.0f64, f64::max);
    verdict(
        3,
        "dropout-robustness",
        max_gap < DROPOUT_GAP_LIMIT,
        &format!(
            "accuracies {finals:.4?} for 0/10/20/30% dropout, max gap {max_gap:.4} (limit {DROPOUT_GAP_LIMIT})"
        ),
    );
}

#[test]
fn c04_secret_sharing_correctness() {
    let started = Instant::now();
    let field = Field::default();
    let mut rng = ChaCha20Rng::seed_from_u64(401);

    let mut subsets_checked = 0u64;
    for n in 2..=6usize {
        let roster: Vec<u32> = (1..=n as u32).collect();
        for t in 2..=n {
            let secret = field.rand_elem(&mut rng);
            let shares = shamir::share(&field, secret, t, &roster, &mut rng).unwrap();
            for mask in 0u32..(1 << n) {
                let subset: Vec<shamir::Share> = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| shares[i].clone())
                    .collect();
                if subset.len() == t {
                    assert_eq!(shamir::reconstruct(&field, &subset, t).unwrap(), secret);
                    subsets_checked += 1;
                } else if subset.len() == t - 1 {
                    assert!(
                        shamir::reconstruct(&field, &subset, t).is_err(),
                        "below-threshold reconstruction must be refused"
                    );
                    subsets_checked += 1;
                }
            }
        }
    }

    // Large-roster smoke: 300 random subsets at threshold, plus refusals.
    let n = 30usize;
    let t = 16usize;
    let roster: Vec<u32> = (1..=n as u32).collect();
    let secret = field.rand_elem(&mut rng);
    let shares = shamir::share(&field, secret, t, &roster, &mut rng).unwrap();
    for _ in 0..300 {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..t {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
        }
        let subset: Vec<shamir::Share> = idx[..t].iter().map(|&i| shares[i].clone()).collect();
        assert_eq!(shamir::reconstruct(&field, &subset, t).unwrap(), secret);
        assert!(shamir::reconstruct(&field, &subset[..t - 1], t).is_err());
        subsets_checked += 2;
    }

    let secs = started.elapsed().as_secs_f64();
    verdict(
        4,
        "secret-sharing",
        secs < 10.0,
        &format!("{subsets_checked} subset reconstructions in {secs:.2}s (budget 10s)"),
    );
}

#[test]
fn c05_mask_cancellation_and_recovery() {
    let started = Instant::now();
    let field = Field::default();
    let mut rng = ChaCha20Rng::seed_from_u64(501);
    let configs = 1000usize;
    let tag = b"acceptance/agg".as_slice();

    // One agreement-key pool for all trials; each trial still draws fresh
    // secrets, self masks, a fresh round (so every pairwise mask value is
    // new), and runs the full share/reconstruct/agree recovery path.
    const POOL: usize = 30;
    let keys: Vec<AgreementKeyPair> =
        (0..POOL).map(|_| AgreementKeyPair::generate(&mut rng)).collect();
    let mut pair_keys = vec![vec![fedxgb::crypto::SharedKey([0u8; 32]); POOL]; POOL];
    for i in 0..POOL {
        for j in (i + 1)..POOL {
            let k = key_agree(&keys[i], &keys[j].public()).unwrap();
            pair_keys[i][j] = k;
            pair_keys[j][i] = k;
        }
    }

    for trial in 0..configs {
        // Recovery from one drop requires the n-1 surviving deposit shares
        // to reach the majority threshold, so domains start at four members.
        let n = rng.gen_range(4..=30usize);
        let round = trial as u32 + 1;

        let mut rings: Vec<MaskKeyring> =
            (0..n).map(|i| MaskKeyring::new(i as u32 + 1)).collect();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    rings[i].insert_peer(j as u32 + 1, pair_keys[i][j]);
                }
            }
        }

        let secrets: Vec<FieldElement> = (0..n).map(|_| field.rand_elem(&mut rng)).collect();
        let self_masks: Vec<FieldElement> =
            (0..n).map(|_| masking::fresh_self_mask(&field, &mut rng)).collect();
        let masked: Vec<FieldElement> = (0..n)
            .map(|i| rings[i].mask(&field, secrets[i], self_masks[i], round, tag))
            .collect();

        // Full roster: pairwise terms cancel exactly.
        let total = field.sub(
            field.sum(masked.iter().copied()),
            field.sum(self_masks.iter().copied()),
        );
        assert_eq!(total, field.sum(secrets.iter().copied()));

        // One drop: rebuild the dropped key from its deposited shares and
        // correct the survivor aggregate.
        let dropped = rng.gen_range(0..n);
        let roster: Vec<u32> = (1..=n as u32).collect();
        let t = TopologyConfig::user_threshold(n);
        let deposit =
            shamir::share_bytes(&field, &keys[dropped].secret_bytes(), t, &roster, &mut rng)
                .unwrap();
        let survivor_shares: Vec<shamir::VectorShare> = deposit
            .iter()
            .filter(|s| s.index != dropped as u32 + 1)
            .cloned()
            .collect();
        let survivor_pubs: Vec<(u32, fedxgb::crypto::AgreementPublicKey)> = (0..n)
            .filter(|&i| i != dropped)
            .map(|i| (i as u32 + 1, keys[i].public()))
            .collect();
        let recovered =
            masking::recover_mask_keys(&field, &survivor_shares, t, &survivor_pubs).unwrap();

        let survivors: Vec<usize> = (0..n).filter(|&i| i != dropped).collect();
        let partial = field.sub(
            field.sum(survivors.iter().map(|&i| masked[i])),
            field.sum(survivors.iter().map(|&i| self_masks[i])),
        );
        let correction =
            masking::pairwise_correction(&field, dropped as u32 + 1, &recovered, round, tag);
        assert_eq!(
            field.add(partial, correction),
            field.sum(survivors.iter().map(|&i| secrets[i])),
            "survivor aggregate must equal survivor sum after recovery"
        );
    }

    let secs = started.elapsed().as_secs_f64();
    verdict(
        5,
        "mask-cancellation",
        secs < 30.0,
        &format!("{configs} domains exact, each with one recovered drop, in {secs:.1}s (budget 30s)"),
    );
}

#[test]
fn c06_secure_comparison_contract() {
    let started = Instant::now();
    let field = Field::default();
    let codec = FixedPointCodec::new(field, 17, 1 << 20).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(601);
    let domain = CmpDomain::new(3).unwrap();
    let local = CmpDomain::new(1).unwrap();

    let mut checked = 0u64;
    let snap = |v: f64| codec.decode(codec.encode(v).unwrap());
    let mut cases: Vec<(f64, f64)> = Vec::new();
    for _ in 0..10_000 {
        cases.push((
            snap(rng.gen_range(-1000.0..1000.0)),
            snap(rng.gen_range(-1000.0..1000.0)),
        ));
    }
    // Exhaustive small grid, including every tie.
    let grid = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
    for &a in &grid {
        for &b in &grid {
            cases.push((a, b));
        }
    }

    for (i, &(a, b)) in cases.iter().enumerate() {
        let req = CmpRequest::from_values(&codec, a, b).unwrap();
        let dom = if i % 7 == 0 { &local } else { &domain };
        let got = seccmp::run_local(&codec, dom, req, &mut rng).unwrap();
        let expect = a <= b; // greater -> 0, otherwise (including ties) -> 1
        assert_eq!(got, expect, "comparison of ({a}, {b})");
        checked += 1;
    }

    let secs = started.elapsed().as_secs_f64();
    verdict(
        6,
        "secure-comparison",
        secs < 10.0,
        &format!("{checked} pairs agree with plaintext order, ties report 1, in {secs:.1}s (budget 10s)"),
    );
}

#[test]
fn c07_gradient_checks() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(701);
    let eps = 1e-6;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-8);

    let mut worst = 0.0f64;
    for _ in 0..500 {
        let s = rng.gen_range(-6.0..6.0);
        let y = f64::from(rng.gen_range(0..2u32));
        let pair = loss::logistic_gradients(s, y);
        let g_fd = (loss::logistic_loss(s + eps, y) - loss::logistic_loss(s - eps, y)) / (2.0 * eps);
        let h_fd = (loss::logistic_gradients(s + eps, y).g - loss::logistic_gradients(s - eps, y).g)
            / (2.0 * eps);
        worst = worst.max(rel(pair.g, g_fd)).max(rel(pair.h, h_fd));
    }

    for _ in 0..500 {
        let classes = rng.gen_range(3..=6usize);
        let scores: Vec<f64> = (0..classes).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let label = rng.gen_range(0..classes);
        let grads = loss::softmax_gradients(&loss::softmax_probs(&scores), label);
        for c in 0..classes {
            let mut up = scores.clone();
            let mut down = scores.clone();
            up[c] += eps;
            down[c] -= eps;
            let g_fd =
                (loss::softmax_loss(&up, label) - loss::softmax_loss(&down, label)) / (2.0 * eps);
            let h_fd = (loss::softmax_gradients(&loss::softmax_probs(&up), label)[c].g
                - loss::softmax_gradients(&loss::softmax_probs(&down), label)[c].g)
                / (2.0 * eps);
            worst = worst.max(rel(grads[c].g, g_fd)).max(rel(grads[c].h, h_fd));
        }
    }

    let secs = started.elapsed().as_secs_f64();
    verdict(
        7,
        "gradient-checks",
        worst < GRADIENT_RELATIVE_TOLERANCE && secs < 5.0,
        &format!(
            "1000 points, worst relative error {worst:.1e} (limit {GRADIENT_RELATIVE_TOLERANCE:.0e}), {secs:.1}s"
        ),
    );
}

#[test]
fn c08_cost_shape_trends() {
    let mut base = base_cfg(20, 3, 2, 801);
    base.dataset.kind = DatasetKind::Blobs;
    base.dataset.size = 2000;

    let users = experiment::run_sweep(&base, &SweepAxis::Users(vec![10, 20, 40])).unwrap();
    let edges = experiment::run_sweep(&base, &SweepAxis::Edges(vec![1, 2, 3, 5])).unwrap();
    assert!(users.iter().chain(&edges).all(|p| p.ok), "a sweep point failed");

    let user_bytes: Vec<f64> = users.iter().map(|p| p.per_user_bytes).collect();
    let edge_time: Vec<f64> = edges.iter().map(|p| p.per_edge_time).collect();
    let bytes_monotone = user_bytes.windows(2).all(|w| w[1] <= w[0]);
    let time_monotone = edge_time.windows(2).all(|w| w[1] <= w[0]);

    verdict(
        8,
        "cost-shape",
        bytes_monotone && time_monotone,
        &format!(
            "per-user bytes {user_bytes:.0?} non-increasing over users {{10,20,40}}; per-edge time {edge_time:.0?} non-increasing over edges {{1,2,3,5}}"
        ),
    );
}

#[test]
fn c09_determinism() {
    let mut cfg = base_cfg(12, 3, 6, 901);
    cfg.dataset.kind = DatasetKind::Census;
    cfg.dataset.size = 800;
    cfg.dropout.rate = 0.25;
    cfg.dropout.period = 2;
    cfg.dropout.reserve = 12;

    let train = experiment::load_dataset(&cfg).unwrap();
    let a = experiment::run_federated(&cfg, &train).unwrap();
    let b = experiment::run_federated(&cfg, &train).unwrap();

    let same_csv = a.metrics.to_csv() == b.metrics.to_csv();
    let same_transcript = a.metrics.summary.transcript == b.metrics.summary.transcript;
    let same_model =
        experiment::model_json(a.world.forest()) == experiment::model_json(b.world.forest());

    verdict(
        9,
        "determinism",
        same_csv && same_transcript && same_model,
        &format!(
            "two runs: metrics CSV identical = {same_csv}, transcript identical = {same_transcript} ({}), model identical = {same_model}",
            &a.metrics.summary.transcript[..16]
        ),
    );
}

fn role(id: u64, edges: usize) -> &'static str {
    if id == CENTRAL_ID {
        "central"
    } else if id == NETWORK_ID {
        "network"
    } else if id >= USER_ID_BASE {
        "user"
    } else if id as usize <= edges {
        "edge"
    } else {
        "unknown"
    }
}

#[test]
fn c10_privacy_structure_audit() {
    let mut cfg = base_cfg(12, 3, 4, 1001);
    cfg.dataset.kind = DatasetKind::Census;
    cfg.dataset.size = 600;
    cfg.dropout.rate = 0.25;
    cfg.dropout.period = 2;
    cfg.dropout.reserve = 12;

    let train = experiment::load_dataset(&cfg).unwrap();
    let mut world = World::new(&cfg, &train).unwrap();
    world.bus.enable_log();
    world.run().unwrap();
    let log = world.bus.log().unwrap();
    let edges = cfg.topology.edges;

    // Every kind routes only on its designed link.
    let allowed: &[(u16, &str, &str)] = &[
        (kind::SETUP_PARAMS, "central", "edge"),
        (kind::SETUP_PARAMS, "central", "user"),
        (kind::KEY_BUNDLE, "edge", "central"),
        (kind::KEY_BUNDLE, "user", "central"),
        (kind::KEY_DIRECTORY, "central", "edge"),
        (kind::KEY_DIRECTORY, "central", "user"),
        (kind::SECRET_DEPOSIT, "user", "edge"),
        (kind::DEPOSIT_RELAY, "edge", "user"),
        (kind::BLIND_SEED, "edge", "edge"),
        (kind::AGG_REQUEST, "central", "edge"),
        (kind::AGG_REQUEST, "central", "user"),
        (kind::MASKED_UPLOAD, "user", "edge"),
        (kind::SEED_SHARE_RELAY, "edge", "user"),
        (kind::UNMASK_REQUEST, "edge", "user"),
        (kind::SEED_SHARE_REVEAL, "user", "edge"),
        (kind::RECOVERY_SHARE, "user", "edge"),
        (kind::ZONE_AGGREGATE, "edge", "central"),
        (kind::SPLIT_DECISION, "central", "edge"),
        (kind::SPLIT_ANNOUNCE, "central", "user"),
        (kind::CMP_INPUT, "user", "edge"),
        (kind::CMP_BLIND, "edge", "edge"),
        (kind::CMP_BITS, "edge", "user"),
        (kind::LEAF_WEIGHTS, "central", "user"),
        (kind::DROP_NOTICE, "network", "central"),
        (kind::DROP_NOTICE, "network", "edge"),
        (kind::JOIN_NOTICE, "network", "central"),
        (kind::ZONE_UPDATE, "central", "user"),
        (kind::DEPTH_DONE, "user", "central"),
    ];

    let mut seen_kinds = BTreeSet::new();
    for env in log {
        let class = payload_class(env.kind);
        assert!(class.is_some(), "unregistered kind {} on the wire", env.kind);
        let link = (env.kind, role(env.sender, edges), role(env.receiver, edges));
        assert!(
            allowed.contains(&link),
            "kind {} must not cross {} -> {}",
            fedxgb::federation::messages::kind_name(env.kind),
            link.1,
            link.2
        );
        seen_kinds.insert(env.kind);

        // Data-bearing links never carry bare metadata with numbers in it:
        // everything a user sends an edge is a share, a masked value, or a
        // ciphertext, and zone reports to the coordinator are aggregates.
        match (link.1, link.2) {
            ("user", "edge") => assert!(
                matches!(
                    class.unwrap(),
                    PayloadClass::Share | PayloadClass::MaskedValue | PayloadClass::Ciphertext
                ),
                "user->edge kind {} has class {:?}",
                fedxgb::federation::messages::kind_name(env.kind),
                class.unwrap()
            ),
            ("edge", "central") => assert!(
                matches!(env.kind, kind::KEY_BUNDLE | kind::ZONE_AGGREGATE),
                "edge->central may only carry key bundles and zone aggregates"
            ),
            _ => {}
        }

        // The split announcement reveals structure only: no floating-point
        // values (thresholds stay secret-shared to the edges).
        if env.kind == kind::SPLIT_ANNOUNCE {
            let value: serde_json::Value = serde_json::from_slice(&env.payload).unwrap();
            assert!(
                !json_has_float(&value),
                "split announcement must not carry numeric thresholds"
            );
        }
    }

    // The run must actually exercise the sensitive paths we are auditing.
    for required in [
        kind::MASKED_UPLOAD,
        kind::SEED_SHARE_REVEAL,
        kind::RECOVERY_SHARE,
        kind::CMP_INPUT,
        kind::CMP_BLIND,
        kind::BLIND_SEED,
        kind::ZONE_UPDATE,
        kind::JOIN_NOTICE,
        kind::SPLIT_DECISION,
    ] {
        assert!(
            seen_kinds.contains(&required),
            "transcript never exercised kind {}",
            fedxgb::federation::messages::kind_name(required)
        );
    }

    verdict(
        10,
        "privacy-structure",
        true,
        &format!(
            "{} envelopes audited, {} kinds on designed links, user->edge strictly share/masked/ciphertext",
            log.len(),
            seen_kinds.len()
        ),
    );
}

fn json_has_float(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Number(n) => n.as_u64().is_none() && n.as_i64().is_none(),
        serde_json::Value::Array(a) => a.iter().any(json_has_float),
        serde_json::Value::Object(o) => o.values().any(json_has_float),
        _ => false,
    }
}
