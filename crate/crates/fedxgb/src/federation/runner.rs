//! Single-process federation harness: builds every participant, pumps the
//! bus to quiescence, injects dropout and replacement events, and records
//! per-round metrics.
//!
//! Dropout events fire at fixed round intervals and rotate through three
//! timings: before the round opens (a clean roster exclusion), at the
//! victim's first masked upload (the upload is lost in transit), and at the
//! first zone aggregate of the round (the victim dies mid-protocol with its
//! upload already counted). Each victim is replaced by a fresh identity at
//! the next round boundary, which triggers a key admission and a replay of
//! all stored trees for the newcomer.

use super::central::CentralNode;
use super::edge::EdgeNode;
use super::messages::{self, kind, DropNotice, JoinNotice, Wire};
use super::user::UserNode;
use super::{edge_id, user_id, FedError, CENTRAL_ID, USER_ID_BASE};
use crate::config::RunConfig;
use crate::data::{partition, Dataset};
use crate::gbt::{train, Forest, Instance};
use crate::sim::{Bus, CostLedger, Envelope, RoundRecord, RunMetrics, RunSummary, NETWORK_ID};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

/// Independent deterministic stream for one participant or harness role.
pub fn node_rng(seed: u64, label: &[u8], id: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"fedxgb/node-rng/v1");
    h.update(seed.to_le_bytes());
    h.update(label);
    h.update(id.to_le_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// One participant's slice of the corpus.
struct Slice {
    instance_ids: Vec<u64>,
    data: Vec<Instance>,
    labels: Vec<u32>,
}

enum Interception {
    None,
    /// Discard each victim's first masked upload of the round, killing the
    /// sender at that moment.
    OnUpload { victims: BTreeSet<u64>, round: u32 },
    /// Kill every victim when the round's first zone aggregate is delivered
    /// (that aggregate itself still goes through).
    OnAggregate { victims: Vec<u64>, round: u32 },
}

pub struct World {
    pub cfg: RunConfig,
    pub bus: Bus,
    pub central: CentralNode,
    pub edges: BTreeMap<u64, EdgeNode>,
    pub users: BTreeMap<u64, UserNode>,
    slices: Vec<Slice>,
    /// Data shard held by each user id, including departed ones; a
    /// replacement inherits its predecessor's shard under a fresh identity.
    slot_of: BTreeMap<u64, usize>,
    next_identity: usize,
    joins_left: usize,
    zone_of: BTreeMap<u64, u32>,
    dropout_rng: ChaCha20Rng,
    interception: Interception,
    next_case: u8,
    eval_data: Vec<Instance>,
    eval_labels: Vec<u32>,
}

impl World {
    /// Partition the corpus over the configured users and stand up every
    /// participant. Replacement users admitted after a dropout inherit the
    /// departed user's shard, so the training pool is roster-independent.
    /// The evaluation set is the whole corpus in ascending instance order.
    pub fn new(cfg: &RunConfig, dataset: &Dataset) -> Result<Self, FedError> {
        cfg.validate()
            .map_err(|e| FedError::Protocol(e.to_string()))?;
        let n_users = cfg.topology.users;
        let n_edges = cfg.topology.edges;
        if dataset.len() < n_users {
            return Err(FedError::Protocol(format!(
                "{} instances cannot cover {n_users} users",
                dataset.len()
            )));
        }

        let mut part_rng = node_rng(cfg.seed, b"partition", 0);
        let mut parts = partition::split_round_robin(dataset.len(), n_users, &mut part_rng);
        for p in &mut parts {
            p.sort_unstable();
        }
        let slices: Vec<Slice> = parts
            .iter()
            .map(|idx| Slice {
                instance_ids: idx.iter().map(|&i| i as u64).collect(),
                data: idx.iter().map(|&i| dataset.instances[i].clone()).collect(),
                labels: idx.iter().map(|&i| dataset.labels[i]).collect(),
            })
            .collect();

        let mut eval_idx: Vec<usize> = parts.iter().flatten().copied().collect();
        eval_idx.sort_unstable();
        let eval_data: Vec<Instance> = eval_idx
            .iter()
            .map(|&i| dataset.instances[i].clone())
            .collect();
        let eval_labels: Vec<u32> = eval_idx.iter().map(|&i| dataset.labels[i]).collect();

        let candidates = train::all_candidates(
            &dataset.instances,
            dataset.n_features,
            cfg.boost.max_candidates,
        );
        let central = CentralNode::new(cfg, dataset.n_features, dataset.n_classes, candidates)?;

        let mut users = BTreeMap::new();
        let mut zone_of = BTreeMap::new();
        let mut slot_of = BTreeMap::new();
        for slot in 0..n_users {
            let id = user_id(slot);
            slot_of.insert(id, slot);
            let s = &slices[slot];
            users.insert(
                id,
                UserNode::new(
                    id,
                    node_rng(cfg.seed, b"user", id),
                    s.instance_ids.clone(),
                    s.data.clone(),
                    s.labels.clone(),
                ),
            );
            zone_of.insert(id, (slot % n_edges) as u32 + 1);
        }
        let edges = (1..=n_edges as u32)
            .map(|z| {
                (
                    edge_id(z),
                    EdgeNode::new(z, node_rng(cfg.seed, b"edge", z as u64)),
                )
            })
            .collect();

        Ok(World {
            cfg: cfg.clone(),
            bus: Bus::new(),
            central,
            edges,
            users,
            slices,
            slot_of,
            next_identity: n_users,
            joins_left: cfg.dropout.reserve,
            zone_of,
            dropout_rng: node_rng(cfg.seed, b"dropout", 0),
            interception: Interception::None,
            next_case: 1,
            eval_data,
            eval_labels,
        })
    }

    pub fn forest(&self) -> &Forest {
        self.central.forest()
    }

    pub fn eval_set(&self) -> (&[Instance], &[u32]) {
        (&self.eval_data, &self.eval_labels)
    }

    fn push_outgoing(&mut self, from: u64, outs: Vec<super::Outgoing>) {
        for o in outs {
            self.bus.send(from, o.to, o.kind, o.round, o.payload);
        }
    }

    /// Deliver until the bus drains, dispatching each envelope and feeding
    /// replies back in. Interception hooks fire before dispatch.
    fn pump(&mut self) -> Result<(), FedError> {
        while let Some(env) = self.bus.deliver_next() {
            if self.intercept(&env) {
                continue;
            }
            self.dispatch(&env)?;
        }
        assert!(self.bus.conserves(), "bus lost or duplicated envelopes");
        Ok(())
    }

    fn dispatch(&mut self, env: &Envelope) -> Result<(), FedError> {
        let outs = if env.receiver == CENTRAL_ID {
            self.central.handle(env)?
        } else if env.receiver >= USER_ID_BASE {
            self.users
                .get_mut(&env.receiver)
                .ok_or_else(|| FedError::Protocol(format!("unknown user {}", env.receiver)))?
                .handle(env)?
        } else {
            self.edges
                .get_mut(&env.receiver)
                .ok_or_else(|| FedError::Protocol(format!("unknown edge {}", env.receiver)))?
                .handle(env)?
        };
        self.push_outgoing(env.receiver, outs);
        Ok(())
    }

    /// Returns true when the envelope must be discarded (a mid-upload kill).
    fn intercept(&mut self, env: &Envelope) -> bool {
        match &mut self.interception {
            Interception::OnUpload { victims, round }
                if env.kind == kind::MASKED_UPLOAD
                    && env.round == *round
                    && victims.contains(&env.sender) =>
            {
                victims.remove(&env.sender);
                if victims.is_empty() {
                    self.interception = Interception::None;
                }
                self.kill(env.sender, env.round);
                true
            }
            Interception::OnAggregate { victims, round }
                if env.kind == kind::ZONE_AGGREGATE && env.round == *round =>
            {
                let victims = std::mem::take(victims);
                self.interception = Interception::None;
                for v in victims {
                    self.kill(v, env.round);
                }
                false
            }
            _ => false,
        }
    }

    /// Silence the user and notify the coordinator and its zone's edge.
    fn kill(&mut self, user: u64, round: u32) {
        self.bus.mark_dead(user);
        let notice = messages::encode(&DropNotice { user });
        self.bus.send(
            NETWORK_ID,
            CENTRAL_ID,
            DropNotice::KIND,
            round,
            notice.clone(),
        );
        let zone = self.zone_of[&user];
        self.bus
            .send(NETWORK_ID, edge_id(zone), DropNotice::KIND, round, notice);
    }

    fn alive_user_ids(&self) -> Vec<u64> {
        self.users
            .keys()
            .copied()
            .filter(|&id| !self.bus.is_dead(id))
            .collect()
    }

    /// Stand up a fresh identity over the departed user's shard and walk it
    /// through admission and catch-up before the next round opens.
    fn admit_replacement(&mut self, victim: u64, round: u32) -> Result<(), FedError> {
        assert!(self.joins_left > 0, "dropout reserve exhausted");
        self.joins_left -= 1;
        let slot = self.slot_of[&victim];
        let id = user_id(self.next_identity);
        self.next_identity += 1;
        self.slot_of.insert(id, slot);
        let zone = self.zone_of[&victim];
        self.zone_of.insert(id, zone);
        let s = &self.slices[slot];
        self.users.insert(
            id,
            UserNode::new(
                id,
                node_rng(self.cfg.seed, b"user", id),
                s.instance_ids.clone(),
                s.data.clone(),
                s.labels.clone(),
            ),
        );
        self.bus.send(
            NETWORK_ID,
            CENTRAL_ID,
            JoinNotice::KIND,
            round,
            messages::encode(&JoinNotice {
                user: id,
                replaces: victim,
            }),
        );
        self.pump()
    }

    /// Victims for one dropout event: a deterministic sample of the alive
    /// roster, in ascending id order.
    fn pick_victims(&mut self) -> Vec<u64> {
        let alive = self.alive_user_ids();
        let k = (alive.len() as f64 * self.cfg.dropout.rate).floor() as usize;
        if k == 0 {
            return Vec::new();
        }
        let mut victims: Vec<u64> = alive
            .choose_multiple(&mut self.dropout_rng, k)
            .copied()
            .collect();
        victims.sort_unstable();
        victims
    }

    fn total_cost(&self) -> CostLedger {
        let mut total = self.central.cost;
        for e in self.edges.values() {
            total.merge(&e.cost);
        }
        for u in self.users.values() {
            total.merge(&u.cost);
        }
        total
    }

    /// Run setup and every configured round, returning the metrics table.
    pub fn run(&mut self) -> Result<RunMetrics, FedError> {
        let started = Instant::now();
        let outs = self.central.start();
        self.push_outgoing(CENTRAL_ID, outs);
        self.pump()?;
        if !self.central.is_setup_complete() {
            return Err(FedError::Protocol("setup never completed".into()));
        }

        let dropout_on = self.cfg.dropout.rate > 0.0 && self.cfg.dropout.period > 0;
        let mut awaiting_replacement: Vec<u64> = Vec::new();
        let mut rows = Vec::new();

        for round in 1..=self.cfg.boost.rounds as u32 {
            for victim in std::mem::take(&mut awaiting_replacement) {
                self.admit_replacement(victim, round)?;
            }

            if dropout_on && (round as usize - 1) % self.cfg.dropout.period == 0 {
                let victims = self.pick_victims();
                if !victims.is_empty() {
                    let case = self.next_case;
                    self.next_case = self.next_case % 3 + 1;
                    match case {
                        1 => {
                            for &v in &victims {
                                self.kill(v, round);
                            }
                            self.pump()?;
                        }
                        2 => {
                            self.interception = Interception::OnUpload {
                                victims: victims.iter().copied().collect(),
                                round,
                            };
                        }
                        _ => {
                            self.interception = Interception::OnAggregate {
                                victims: victims.clone(),
                                round,
                            };
                        }
                    }
                    awaiting_replacement = victims;
                }
            }

            let sent_before = self.bus.sent;
            let bytes_before = self.bus.bytes;
            let outs = self.central.begin_round()?;
            self.push_outgoing(CENTRAL_ID, outs);
            self.pump()?;
            assert!(
                matches!(self.interception, Interception::None),
                "an armed dropout never fired"
            );
            if self.central.round_in_progress() {
                return Err(FedError::Protocol(format!("round {round} stalled")));
            }

            let forest = self.central.forest();
            rows.push(RoundRecord {
                round,
                active_users: self.alive_user_ids().len(),
                dropped_users: self.users.len() - self.alive_user_ids().len(),
                messages: self.bus.sent - sent_before,
                bytes: self.bus.bytes - bytes_before,
                sim_time: self
                    .total_cost()
                    .simulated_time(&self.cfg.cost, self.bus.bytes),
                train_accuracy: Some(forest.accuracy(&self.eval_data, &self.eval_labels)),
                train_loss: Some(forest.mean_loss(&self.eval_data, &self.eval_labels)),
            });
        }

        let last = rows.last();
        let summary = RunSummary {
            rounds: rows.len(),
            users: self.cfg.topology.users,
            edges: self.cfg.topology.edges,
            final_accuracy: last.and_then(|r| r.train_accuracy),
            final_loss: last.and_then(|r| r.train_loss),
            total_messages: self.bus.sent,
            total_bytes: self.bus.bytes,
            sim_time: last.map_or(0.0, |r| r.sim_time),
            transcript: self.bus.transcript_digest(),
            wall_ms: started.elapsed().as_millis(),
        };
        Ok(RunMetrics {
            rounds: rows,
            summary,
        })
    }
}
