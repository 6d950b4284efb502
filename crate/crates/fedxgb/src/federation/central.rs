//! Central coordinator: key ceremony, roster bookkeeping, aggregation
//! scheduling, split decisions, and tree assembly.
//!
//! Tree growth mirrors the plaintext trainer exactly: the same feature
//! subsample stream, the same candidate scan order, the same split-choice
//! kernel, and the same child creation order. The only difference is where
//! per-node gradient sums come from: here they are field sums of zone
//! aggregates, decoded once, which equals the plaintext f64 sums because
//! quantized gradients are dyadic and fit the headroom.

use super::messages::{
    self, kind, AggRequest, DepthDone, DropNotice, JoinNotice, KeyBundle, KeyDirectory,
    LeafWeights, PhaseId, RosterEntry, SetupParams, SplitAnnounce, SplitDecision, ZoneAggregate,
    ZoneUpdate,
};
use super::{edge_id, outgoing, user_id, FedError, Outgoing};
use crate::codec::FixedPointCodec;
use crate::config::{RunConfig, TopologyConfig};
use crate::field::{Field, FieldElement};
use crate::gbt::{split, train, BoostParams, Forest, Node, Tree};
use crate::shamir;
use crate::sim::{CostLedger, Envelope};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// An aggregation in flight: the zones still expected and the running
/// field sum of the zone reports received so far.
struct PendingAgg {
    seq: u64,
    nodes: Vec<u32>,
    features: Vec<u32>,
    value_len: usize,
    waiting: BTreeSet<u32>,
    totals: Vec<FieldElement>,
}

/// One stored tree queued for replay to a newcomer, one wave per split
/// level.
struct CatchupTree {
    round: u32,
    group: u16,
    levels: Vec<LevelInfo>,
    leaves: Vec<(u32, f64)>,
    next_level: usize,
}

#[derive(Default)]
struct LevelInfo {
    splits: Vec<messages::SplitInfo>,
    thresholds: Vec<f64>,
    leaves: Vec<u32>,
}

pub struct CentralNode {
    boost: BoostParams,
    edges: u32,
    field: Field,
    codec: FixedPointCodec,
    cmp_codec: FixedPointCodec,
    headroom_bits: u32,
    n_features: u32,
    n_classes: u32,
    candidates: Vec<Vec<f64>>,

    /// Drives only the per-tree feature subsample, in the same order as the
    /// plaintext trainer consumes it.
    feature_rng: ChaCha20Rng,
    /// Drives protocol sharings; a separate stream so sharing randomness
    /// never perturbs the feature draws.
    proto_rng: ChaCha20Rng,

    setup_wait: BTreeSet<u64>,
    setup_done: bool,
    directory: BTreeMap<u64, KeyBundle>,
    zones: BTreeMap<u32, Vec<RosterEntry>>,
    next_index: BTreeMap<u32, u32>,
    user_zone: BTreeMap<u64, u32>,
    dead: BTreeSet<u64>,
    roster_version: u64,
    pending_join: BTreeMap<u64, u32>,

    forest: Forest,
    round: u32,
    rounds_done: usize,
    in_round: bool,
    group: u16,
    features: Vec<u32>,
    arena: Vec<Node>,
    frontier: Vec<u32>,
    depth: u16,
    round_trees: Vec<Tree>,

    agg_seq: u64,
    pending_agg: Option<PendingAgg>,
    await_done: BTreeSet<u64>,
    done_phase: Option<PhaseId>,

    catchup: VecDeque<CatchupTree>,
    catchup_user: Option<u64>,

    pub cost: CostLedger,
}

impl CentralNode {
    pub fn new(
        cfg: &RunConfig,
        n_features: u32,
        n_classes: u32,
        candidates: Vec<Vec<f64>>,
    ) -> Result<Self, FedError> {
        let field = Field::default();
        let headroom = 1u64 << cfg.codec.headroom_bits;
        let codec = FixedPointCodec::new(field, cfg.codec.fractional_bits, headroom)?;
        let cmp_codec = FixedPointCodec::new(field, cfg.codec.fractional_bits + 1, headroom)?;
        let edges = cfg.topology.edges as u32;

        let mut zones: BTreeMap<u32, Vec<RosterEntry>> =
            (1..=edges).map(|z| (z, Vec::new())).collect();
        let mut user_zone = BTreeMap::new();
        for slot in 0..cfg.topology.users {
            let zone = (slot % cfg.topology.edges) as u32 + 1;
            let index = (slot / cfg.topology.edges) as u32 + 1;
            let id = user_id(slot);
            zones.get_mut(&zone).expect("zone exists").push(RosterEntry {
                user: id,
                index,
            });
            user_zone.insert(id, zone);
        }
        let next_index = zones
            .iter()
            .map(|(&z, members)| (z, members.len() as u32 + 1))
            .collect();

        let mut proto_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        proto_rng.set_stream(1);

        Ok(CentralNode {
            boost: cfg.boost.clone(),
            edges,
            field,
            codec,
            cmp_codec,
            headroom_bits: cfg.codec.headroom_bits,
            n_features,
            n_classes,
            candidates,
            feature_rng: ChaCha20Rng::seed_from_u64(cfg.seed),
            proto_rng,
            setup_wait: BTreeSet::new(),
            setup_done: false,
            directory: BTreeMap::new(),
            zones,
            next_index,
            user_zone,
            dead: BTreeSet::new(),
            roster_version: 0,
            pending_join: BTreeMap::new(),
            forest: Forest::new(cfg.boost.eta, cfg.boost.loss),
            round: 0,
            rounds_done: 0,
            in_round: false,
            group: 0,
            features: Vec::new(),
            arena: Vec::new(),
            frontier: Vec::new(),
            depth: 0,
            round_trees: Vec::new(),
            agg_seq: 0,
            pending_agg: None,
            await_done: BTreeSet::new(),
            done_phase: None,
            catchup: VecDeque::new(),
            catchup_user: None,
            cost: CostLedger::default(),
        })
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn is_setup_complete(&self) -> bool {
        self.setup_done
    }

    pub fn round_in_progress(&self) -> bool {
        self.in_round
    }

    pub fn catchup_in_progress(&self) -> bool {
        self.catchup_user.is_some() || !self.pending_join.is_empty()
    }

    pub fn rounds_done(&self) -> usize {
        self.rounds_done
    }

    fn setup_params(&self) -> SetupParams {
        SetupParams {
            wire_version: messages::WIRE_VERSION,
            field_p: self.field.modulus(),
            fractional_bits: self.codec.fractional_bits(),
            cmp_fractional_bits: self.cmp_codec.fractional_bits(),
            headroom_bits: self.headroom_bits,
            boost: self.boost.clone(),
            n_features: self.n_features,
            n_classes: self.n_classes,
            edges: self.edges,
            candidates: self.candidates.clone(),
            roster_version: self.roster_version,
        }
    }

    fn alive_users(&self) -> Vec<u64> {
        self.zones
            .values()
            .flat_map(|m| m.iter().map(|e| e.user))
            .collect()
    }

    fn edge_ids(&self) -> Vec<u64> {
        (1..=self.edges as u64).collect()
    }

    /// Broadcast the run parameters and start waiting for key bundles.
    pub fn start(&mut self) -> Vec<Outgoing> {
        let params = self.setup_params();
        let mut out = Vec::new();
        for id in self.edge_ids() {
            self.setup_wait.insert(id);
            out.push(outgoing(id, 0, &params));
        }
        for id in self.alive_users() {
            self.setup_wait.insert(id);
            out.push(outgoing(id, 0, &params));
        }
        out
    }

    pub fn handle(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        match env.kind {
            kind::KEY_BUNDLE => self.on_key_bundle(env),
            kind::ZONE_AGGREGATE => self.on_zone_aggregate(env),
            kind::DEPTH_DONE => self.on_depth_done(env),
            kind::DROP_NOTICE => self.on_drop_notice(env),
            kind::JOIN_NOTICE => self.on_join_notice(env),
            other => Err(FedError::UnexpectedMessage {
                kind: other,
                state: "central".into(),
            }),
        }
    }

    fn verify_bundle(&self, id: u64, bundle: &KeyBundle) -> Result<(), FedError> {
        let bytes = KeyBundle::signed_bytes(id, &bundle.agreement, &bundle.signing);
        if crate::crypto::verify(&bundle.signing, &bytes, &bundle.signature) {
            Ok(())
        } else {
            Err(FedError::Protocol(format!(
                "key bundle from {id} has a bad signature"
            )))
        }
    }

    fn on_key_bundle(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        if self.dead.contains(&env.sender) {
            return Ok(Vec::new());
        }
        let bundle: KeyBundle = messages::decode(&env.payload)?;
        self.verify_bundle(env.sender, &bundle)?;
        self.cost.ciphers += 1;

        if !self.setup_done && self.setup_wait.remove(&env.sender) {
            self.directory.insert(env.sender, bundle);
            if self.setup_wait.is_empty() {
                return Ok(self.complete_setup());
            }
            return Ok(Vec::new());
        }
        if self.pending_join.contains_key(&env.sender) {
            self.directory.insert(env.sender, bundle);
            return self.complete_join(env.sender);
        }
        Err(FedError::Protocol(format!(
            "unsolicited key bundle from {}",
            env.sender
        )))
    }

    /// All bundles in: publish the directory, then the initial zone rosters.
    /// The directory goes first so every member can key-agree when its
    /// roster arrives.
    fn complete_setup(&mut self) -> Vec<Outgoing> {
        self.setup_done = true;
        self.roster_version = 1;
        let directory = KeyDirectory {
            entries: self.directory.clone(),
        };
        let mut out = Vec::new();
        for id in self.edge_ids() {
            out.push(outgoing(id, 0, &directory));
        }
        for id in self.alive_users() {
            out.push(outgoing(id, 0, &directory));
        }
        for (&zone, members) in &self.zones {
            let update = ZoneUpdate {
                roster_version: self.roster_version,
                zone,
                members: members.clone(),
                joined: None,
                left: Vec::new(),
            };
            for entry in members {
                out.push(outgoing(entry.user, 0, &update));
            }
        }
        out
    }

    /// Open a boosting round: draw this tree's feature subsample and request
    /// the depth-0 aggregation. The caller must only invoke this between
    /// rounds, after setup and any catch-up completed.
    pub fn begin_round(&mut self) -> Result<Vec<Outgoing>, FedError> {
        if !self.setup_done || self.in_round || self.catchup_in_progress() {
            return Err(FedError::Protocol(
                "round started while the coordinator is busy".into(),
            ));
        }
        self.round = self.rounds_done as u32 + 1;
        self.in_round = true;
        self.group = 0;
        self.round_trees = Vec::new();
        Ok(self.start_tree())
    }

    fn start_tree(&mut self) -> Vec<Outgoing> {
        self.features = train::subsample_features(
            self.n_features,
            self.boost.feature_subsample,
            &mut self.feature_rng,
        );
        self.arena = vec![Node::Leaf { weight: 0.0 }];
        self.frontier = vec![0];
        self.depth = 0;
        self.issue_agg()
    }

    /// Request per-node sums for the current frontier. The final depth can
    /// never split, so it requests only node totals (no candidate columns).
    fn issue_agg(&mut self) -> Vec<Outgoing> {
        self.agg_seq += 1;
        let features = if (self.depth as usize) < self.boost.max_depth {
            self.features.clone()
        } else {
            Vec::new()
        };
        let value_len =
            self.frontier.len() * super::upload_stride(&features, &self.candidates);
        let msg = AggRequest {
            agg_seq: self.agg_seq,
            round: self.round,
            group: self.group,
            depth: self.depth,
            nodes: self.frontier.clone(),
            features: features.clone(),
            rosters: self.zones.clone(),
            roster_version: self.roster_version,
        };
        self.pending_agg = Some(PendingAgg {
            seq: self.agg_seq,
            nodes: self.frontier.clone(),
            features,
            value_len,
            waiting: self.zones.keys().copied().collect(),
            totals: vec![FieldElement::ZERO; value_len],
        });
        // Edges first, so every edge holds the roster snapshot before any
        // user's upload can reach it.
        let mut out = Vec::new();
        for id in self.edge_ids() {
            out.push(outgoing(id, self.round, &msg));
        }
        for id in self.alive_users() {
            out.push(outgoing(id, self.round, &msg));
        }
        out
    }

    fn on_zone_aggregate(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: ZoneAggregate = messages::decode(&env.payload)?;
        let field = self.field;
        let pending = self.pending_agg.as_mut().ok_or_else(|| {
            FedError::Protocol("zone aggregate with no aggregation in flight".into())
        })?;
        if msg.agg_seq != pending.seq || env.sender != edge_id(msg.zone) {
            return Err(FedError::Protocol("zone aggregate out of sequence".into()));
        }
        if !pending.waiting.remove(&msg.zone) {
            return Err(FedError::Protocol("duplicate zone aggregate".into()));
        }
        if msg.ok {
            if msg.values.len() != pending.value_len
                || msg.values.iter().any(|&v| !field.contains(v))
            {
                return Err(FedError::ElementRange);
            }
            for (acc, &v) in pending.totals.iter_mut().zip(&msg.values) {
                *acc = field.add(*acc, v);
            }
        }
        // A zone that could not unmask contributes nothing this aggregation.
        if !pending.waiting.is_empty() {
            return Ok(Vec::new());
        }
        let done = self.pending_agg.take().expect("aggregation present");
        self.cost.reconstructs += 1;
        self.process_depth(done)
    }

    /// Decide every frontier node with the same kernel the plaintext trainer
    /// uses, then either announce the new splits or close out the tree.
    fn process_depth(&mut self, agg: PendingAgg) -> Result<Vec<Outgoing>, FedError> {
        let stride = super::upload_stride(&agg.features, &self.candidates);
        let may_split_depth = (self.depth as usize) < self.boost.max_depth;
        let min_insts = self.boost.min_node_instances.max(1) as u64;

        let mut splits = Vec::new();
        let mut thresholds = Vec::new();
        let mut new_leaves = Vec::new();
        let mut next_frontier = Vec::new();

        for (j, &node) in agg.nodes.iter().enumerate() {
            let base = j * stride;
            let count = agg.totals[base].raw();
            let g = self.codec.decode(agg.totals[base + 1]);
            let h = self.codec.decode(agg.totals[base + 2]);

            let chosen = if may_split_depth && count >= min_insts {
                let mut sums = Vec::new();
                let mut at = base + 3;
                for &f in &agg.features {
                    for &thr in &self.candidates[f as usize] {
                        sums.push(split::CandidateSums {
                            feature: f,
                            threshold: thr,
                            count_left: agg.totals[at].raw(),
                            gl: self.codec.decode(agg.totals[at + 1]),
                            hl: self.codec.decode(agg.totals[at + 2]),
                        });
                        at += 3;
                    }
                }
                split::choose_split(count, g, h, &sums, self.boost.lambda)?
                    .filter(|c| split::passes_gate(c.score, self.boost.gamma))
            } else {
                None
            };

            match chosen {
                Some(best) => {
                    let li = self.arena.len() as u32;
                    self.arena.push(Node::Leaf { weight: 0.0 });
                    let ri = self.arena.len() as u32;
                    self.arena.push(Node::Leaf { weight: 0.0 });
                    self.arena[node as usize] = Node::Split {
                        feature: best.feature,
                        threshold: best.threshold,
                        left: li,
                        right: ri,
                    };
                    splits.push(messages::SplitInfo {
                        node,
                        feature: best.feature,
                        left: li,
                        right: ri,
                    });
                    thresholds.push(best.threshold);
                    next_frontier.push(li);
                    next_frontier.push(ri);
                }
                None => {
                    self.arena[node as usize] = Node::Leaf {
                        weight: split::leaf_weight(g, h, self.boost.lambda)?,
                    };
                    new_leaves.push(node);
                }
            }
        }

        if splits.is_empty() {
            return self.finish_tree();
        }

        let phase = PhaseId {
            round: self.round,
            group: self.group,
            depth: self.depth,
            catchup_user: None,
        };
        let mut out = self.send_wave(phase, &splits, &thresholds, &new_leaves, None)?;
        self.frontier = next_frontier;
        self.depth += 1;
        self.await_done = self.alive_users().into_iter().collect();
        self.done_phase = Some(phase);
        if self.await_done.is_empty() {
            out.extend(self.after_wave()?);
        }
        Ok(out)
    }

    /// Ship one comparison wave: threshold shares to the edges first, then
    /// the split announcement to its audience (all alive users, or just a
    /// catching-up newcomer).
    fn send_wave(
        &mut self,
        phase: PhaseId,
        splits: &[messages::SplitInfo],
        thresholds: &[f64],
        new_leaves: &[u32],
        only: Option<u64>,
    ) -> Result<Vec<Outgoing>, FedError> {
        let encoded: Vec<FieldElement> = thresholds
            .iter()
            .map(|&t| self.cmp_codec.encode(t))
            .collect::<Result<_, _>>()?;
        let roster: Vec<u32> = (1..=self.edges).collect();
        let t = TopologyConfig::edge_threshold(self.edges as usize);
        let shares = shamir::share_vector(&self.field, &encoded, t, &roster, &mut self.proto_rng)?;
        self.cost.shares += self.edges as u64;

        let nodes: Vec<u32> = splits.iter().map(|s| s.node).collect();
        let mut out = Vec::new();
        for share in shares {
            let to = share.index as u64;
            out.push(outgoing(
                to,
                phase.round,
                &SplitDecision {
                    phase,
                    nodes: nodes.clone(),
                    threshold_shares: share,
                },
            ));
        }
        let announce = SplitAnnounce {
            phase,
            splits: splits.to_vec(),
            leaves: new_leaves.to_vec(),
        };
        match only {
            Some(user) => out.push(outgoing(user, phase.round, &announce)),
            None => {
                for id in self.alive_users() {
                    out.push(outgoing(id, phase.round, &announce));
                }
            }
        }
        Ok(out)
    }

    fn on_depth_done(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: DepthDone = messages::decode(&env.payload)?;
        if msg.user != env.sender {
            return Err(FedError::Protocol("depth report for another user".into()));
        }
        if self.dead.contains(&msg.user) {
            return Ok(Vec::new()); // report raced its sender's death
        }
        if self.done_phase != Some(msg.phase) || !self.await_done.remove(&msg.user) {
            return Err(FedError::Protocol("unexpected depth report".into()));
        }
        if self.await_done.is_empty() {
            return self.after_wave();
        }
        Ok(Vec::new())
    }

    /// Every awaited user has routed its instances past the announced
    /// splits: request the next depth, or advance the catch-up replay.
    fn after_wave(&mut self) -> Result<Vec<Outgoing>, FedError> {
        self.done_phase = None;
        if self.catchup_user.is_some() {
            return self.advance_catchup();
        }
        Ok(self.issue_agg())
    }

    /// Close out the tree: every arena slot is a decided leaf or split.
    /// Broadcast the leaf weights, then move to the next group or finish
    /// the round.
    fn finish_tree(&mut self) -> Result<Vec<Outgoing>, FedError> {
        let tree = Tree {
            nodes: self.arena.clone(),
        };
        let leaves: Vec<(u32, f64)> = leaf_entries(&tree);
        let msg = LeafWeights {
            round: self.round,
            group: self.group,
            leaves,
            catchup: false,
        };
        let mut out: Vec<Outgoing> = self
            .alive_users()
            .into_iter()
            .map(|id| outgoing(id, self.round, &msg))
            .collect();
        self.round_trees.push(tree);

        let groups = self.boost.loss.groups() as u16;
        if self.group + 1 < groups {
            self.group += 1;
            out.extend(self.start_tree());
        } else {
            self.forest.trees.push(std::mem::take(&mut self.round_trees));
            self.rounds_done += 1;
            self.in_round = false;
        }
        Ok(out)
    }

    fn on_drop_notice(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: DropNotice = messages::decode(&env.payload)?;
        if !self.dead.insert(msg.user) {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();

        if let Some(&zone) = self.user_zone.get(&msg.user) {
            let members = self.zones.get_mut(&zone).expect("zone exists");
            if members.iter().any(|e| e.user == msg.user) {
                members.retain(|e| e.user != msg.user);
                self.roster_version += 1;
                let update = ZoneUpdate {
                    roster_version: self.roster_version,
                    zone,
                    members: self.zones[&zone].clone(),
                    joined: None,
                    left: vec![msg.user],
                };
                for entry in &self.zones[&zone] {
                    out.push(outgoing(entry.user, self.round, &update));
                }
            }
        }

        self.pending_join.remove(&msg.user);
        if self.catchup_user == Some(msg.user) {
            // The replay's sole audience is gone; abandon it.
            self.catchup.clear();
            self.catchup_user = None;
            self.await_done.clear();
            self.done_phase = None;
        }
        if !self.setup_done && self.setup_wait.remove(&msg.user) && self.setup_wait.is_empty() {
            out.extend(self.complete_setup());
        }
        if self.done_phase.is_some() && self.await_done.remove(&msg.user) && self.await_done.is_empty()
        {
            out.extend(self.after_wave()?);
        }
        Ok(out)
    }

    /// A replacement volunteers for a departed member's zone. It gets the
    /// run parameters; its key bundle continues the admission.
    fn on_join_notice(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: JoinNotice = messages::decode(&env.payload)?;
        let zone = *self.user_zone.get(&msg.replaces).ok_or_else(|| {
            FedError::Protocol(format!("join replaces unknown user {}", msg.replaces))
        })?;
        self.pending_join.insert(msg.user, zone);
        self.user_zone.insert(msg.user, zone);
        Ok(vec![outgoing(msg.user, self.round, &self.setup_params())])
    }

    /// Admit a newcomer: publish its key, extend its zone roster, and queue
    /// a replay of every stored tree so its scores catch up.
    fn complete_join(&mut self, user: u64) -> Result<Vec<Outgoing>, FedError> {
        let zone = self.pending_join.remove(&user).expect("join pending");
        let mut out = Vec::new();

        // Full directory to the newcomer; just the new entry to the rest.
        out.push(outgoing(
            user,
            self.round,
            &KeyDirectory {
                entries: self.directory.clone(),
            },
        ));
        let delta = KeyDirectory {
            entries: BTreeMap::from([(user, self.directory[&user].clone())]),
        };
        for id in self.edge_ids() {
            out.push(outgoing(id, self.round, &delta));
        }
        for id in self.alive_users() {
            out.push(outgoing(id, self.round, &delta));
        }

        let index = *self.next_index.get(&zone).expect("zone exists");
        self.next_index.insert(zone, index + 1);
        self.zones
            .get_mut(&zone)
            .expect("zone exists")
            .push(RosterEntry { user, index });
        self.roster_version += 1;
        let update = ZoneUpdate {
            roster_version: self.roster_version,
            zone,
            members: self.zones[&zone].clone(),
            joined: Some(user),
            left: Vec::new(),
        };
        for entry in &self.zones[&zone] {
            out.push(outgoing(entry.user, self.round, &update));
        }

        self.catchup = self
            .forest
            .trees
            .iter()
            .enumerate()
            .flat_map(|(r, round_trees)| {
                round_trees.iter().enumerate().map(move |(g, tree)| {
                    catchup_tree(r as u32 + 1, g as u16, tree)
                })
            })
            .collect();
        if !self.catchup.is_empty() {
            self.catchup_user = Some(user);
            out.extend(self.advance_catchup()?);
        }
        Ok(out)
    }

    /// Emit the next replay wave for the newcomer, flushing finished trees'
    /// leaf weights along the way.
    fn advance_catchup(&mut self) -> Result<Vec<Outgoing>, FedError> {
        let user = self.catchup_user.expect("catch-up active");
        let mut out = Vec::new();
        while let Some(front) = self.catchup.front_mut() {
            if front.next_level < front.levels.len() {
                let phase = PhaseId {
                    round: front.round,
                    group: front.group,
                    depth: front.next_level as u16,
                    catchup_user: Some(user),
                };
                front.next_level += 1;
                let level = &front.levels[phase.depth as usize];
                let (splits, thresholds, leaves) = (
                    level.splits.clone(),
                    level.thresholds.clone(),
                    level.leaves.clone(),
                );
                out.extend(self.send_wave(phase, &splits, &thresholds, &leaves, Some(user))?);
                self.await_done = BTreeSet::from([user]);
                self.done_phase = Some(phase);
                return Ok(out);
            }
            let done = self.catchup.pop_front().expect("front exists");
            out.push(outgoing(
                user,
                self.round,
                &LeafWeights {
                    round: done.round,
                    group: done.group,
                    leaves: done.leaves,
                    catchup: true,
                },
            ));
        }
        self.catchup_user = None;
        Ok(out)
    }
}

/// Arena leaves with their weights, in index order.
fn leaf_entries(tree: &Tree) -> Vec<(u32, f64)> {
    tree.nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| match n {
            Node::Leaf { weight } => Some((i as u32, *weight)),
            Node::Split { .. } => None,
        })
        .collect()
}

/// Split levels of a stored tree, for depth-by-depth replay. Children are
/// created in arena order, so scanning indices ascending recovers each
/// level's creation order.
fn catchup_tree(round: u32, group: u16, tree: &Tree) -> CatchupTree {
    let mut depth_of = vec![0usize; tree.nodes.len()];
    let mut max_split_depth: Option<usize> = None;
    for (idx, node) in tree.nodes.iter().enumerate() {
        if let Node::Split { left, right, .. } = node {
            depth_of[*left as usize] = depth_of[idx] + 1;
            depth_of[*right as usize] = depth_of[idx] + 1;
            max_split_depth = Some(max_split_depth.map_or(depth_of[idx], |m| m.max(depth_of[idx])));
        }
    }
    let mut levels: Vec<LevelInfo> = match max_split_depth {
        Some(m) => (0..=m).map(|_| LevelInfo::default()).collect(),
        None => Vec::new(),
    };
    for (idx, node) in tree.nodes.iter().enumerate() {
        let d = depth_of[idx];
        match node {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                levels[d].splits.push(messages::SplitInfo {
                    node: idx as u32,
                    feature: *feature,
                    left: *left,
                    right: *right,
                });
                levels[d].thresholds.push(*threshold);
            }
            Node::Leaf { .. } => {
                if d < levels.len() {
                    levels[d].leaves.push(idx as u32);
                }
            }
        }
    }
    CatchupTree {
        round,
        group,
        levels,
        leaves: leaf_entries(tree),
        next_level: 0,
    }
}
