//! User node: owns a data partition, uploads masked per-node gradient sums,
//! and routes its own instances down trees via share-space comparisons.
//!
//! A user never sends a gradient, feature value, or chosen threshold in the
//! clear: uploads are pairwise-and-self masked, comparison operands leave as
//! threshold shares, and the only plaintext it learns about a split is the
//! feature id and its own routing bits.

use super::messages::{
    self, kind, AggRequest, CmpBits, CmpInput, CmpItem, DepthDone, DepositRelay, KeyBundle,
    KeyDirectory, LeafWeights, MaskedUpload, PhaseId, RecoveryShare, SecretDeposit,
    SeedShareRelay, SeedShareReveal, SetupParams, SplitAnnounce, SplitInfo, UnmaskRequest,
    ZoneUpdate,
};
use super::{edge_id, outgoing, FedError, Outgoing, RunContext, CENTRAL_ID};
use crate::config::TopologyConfig;
use crate::crypto::{self, AgreementKeyPair, BindingContext, SharedKey, SigningIdentity};
use crate::field::FieldElement;
use crate::gbt::{train, GradientPair, Instance};
use crate::masking::{self, MaskKeyring};
use crate::shamir::{self, VectorShare};
use crate::sim::{CostLedger, Envelope};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Splits a user is waiting on comparison bits for.
struct RouteState {
    splits: BTreeMap<u32, SplitInfo>,
    items: Vec<CmpItem>,
}

pub struct UserNode {
    pub id: u64,
    rng: ChaCha20Rng,
    agreement: AgreementKeyPair,
    signing: SigningIdentity,

    ctx: Option<RunContext>,
    edges: u32,
    zone: u32,
    index: u32,
    edge: u64,

    directory: BTreeMap<u64, KeyBundle>,
    peer_keys: BTreeMap<u64, SharedKey>,
    roster_version: u64,
    /// Owner -> my share of the owner's agreement secret (latest deposit).
    deposit_shares: BTreeMap<u64, VectorShare>,
    /// (aggregation, owner) -> my share of the owner's self-mask seed.
    seed_shares: BTreeMap<(u64, u64), VectorShare>,

    /// Globally unique instance ids, ascending, aligned with `data`.
    instance_ids: Vec<u64>,
    data: Vec<Instance>,
    labels: Vec<u32>,
    scores: Vec<Vec<f64>>,
    grads: Vec<Vec<GradientPair>>,
    grads_round: u32,
    /// Instance id -> node index in the tree currently being grown.
    node_of: BTreeMap<u64, u32>,
    pending: BTreeMap<PhaseId, RouteState>,

    pub cost: CostLedger,
}

impl UserNode {
    pub fn new(
        id: u64,
        mut rng: ChaCha20Rng,
        instance_ids: Vec<u64>,
        data: Vec<Instance>,
        labels: Vec<u32>,
    ) -> Self {
        debug_assert_eq!(instance_ids.len(), data.len());
        debug_assert_eq!(labels.len(), data.len());
        let agreement = AgreementKeyPair::generate(&mut rng);
        let signing = SigningIdentity::generate(&mut rng);
        UserNode {
            id,
            rng,
            agreement,
            signing,
            ctx: None,
            edges: 0,
            zone: 0,
            index: 0,
            edge: 0,
            directory: BTreeMap::new(),
            peer_keys: BTreeMap::new(),
            roster_version: 0,
            deposit_shares: BTreeMap::new(),
            seed_shares: BTreeMap::new(),
            instance_ids,
            data,
            labels,
            scores: Vec::new(),
            grads: Vec::new(),
            grads_round: 0,
            node_of: BTreeMap::new(),
            pending: BTreeMap::new(),
            cost: CostLedger::default(),
        }
    }

    pub fn instance_count(&self) -> usize {
        self.data.len()
    }

    pub fn handle(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        match env.kind {
            kind::SETUP_PARAMS => self.on_setup(env),
            kind::KEY_DIRECTORY => self.on_directory(env),
            kind::ZONE_UPDATE => self.on_zone_update(env),
            kind::DEPOSIT_RELAY => self.on_deposit_relay(env),
            kind::AGG_REQUEST => self.on_agg_request(env),
            kind::SEED_SHARE_RELAY => self.on_seed_share_relay(env),
            kind::UNMASK_REQUEST => self.on_unmask_request(env),
            kind::SPLIT_ANNOUNCE => self.on_split_announce(env),
            kind::CMP_BITS => self.on_cmp_bits(env),
            kind::LEAF_WEIGHTS => self.on_leaf_weights(env),
            other => Err(FedError::UnexpectedMessage {
                kind: other,
                state: "user".into(),
            }),
        }
    }

    fn ctx(&self) -> Result<&RunContext, FedError> {
        self.ctx
            .as_ref()
            .ok_or_else(|| FedError::Protocol("user received traffic before setup".into()))
    }

    fn on_setup(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: SetupParams = messages::decode(&env.payload)?;
        if msg.wire_version != messages::WIRE_VERSION {
            return Err(FedError::Protocol(format!(
                "unsupported wire version {}",
                msg.wire_version
            )));
        }
        let ctx = RunContext::from_setup(&msg)?;
        let groups = ctx.boost.loss.groups();
        self.scores = vec![vec![0.0; groups]; self.data.len()];
        self.grads_round = 0;
        self.node_of.clear();
        self.pending.clear();
        self.edges = msg.edges;
        self.roster_version = msg.roster_version;
        self.ctx = Some(ctx);

        let agreement = self.agreement.public();
        let signing = self.signing.public();
        let signature = self
            .signing
            .sign(&KeyBundle::signed_bytes(self.id, &agreement, &signing));
        self.cost.ciphers += 1;
        Ok(vec![outgoing(
            CENTRAL_ID,
            env.round,
            &KeyBundle {
                agreement,
                signing,
                signature,
            },
        )])
    }

    fn on_directory(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: KeyDirectory = messages::decode(&env.payload)?;
        for (uid, bundle) in msg.entries {
            let bytes = KeyBundle::signed_bytes(uid, &bundle.agreement, &bundle.signing);
            if !crypto::verify(&bundle.signing, &bytes, &bundle.signature) {
                return Err(FedError::Protocol(format!(
                    "directory entry for {uid} has a bad signature"
                )));
            }
            self.directory.insert(uid, bundle);
        }
        Ok(Vec::new())
    }

    /// New roster: agree keys with new peers, drop departed ones, and
    /// re-deposit threshold shares of the agreement secret.
    fn on_zone_update(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: ZoneUpdate = messages::decode(&env.payload)?;
        let field = self.ctx()?.field;
        let me = msg
            .members
            .iter()
            .find(|e| e.user == self.id)
            .copied()
            .ok_or_else(|| FedError::Protocol("zone update omits the recipient".into()))?;
        self.zone = msg.zone;
        self.index = me.index;
        self.edge = edge_id(msg.zone);
        self.roster_version = msg.roster_version;

        let members: BTreeSet<u64> = msg.members.iter().map(|e| e.user).collect();
        self.peer_keys.retain(|uid, _| members.contains(uid));
        for entry in &msg.members {
            if entry.user == self.id || self.peer_keys.contains_key(&entry.user) {
                continue;
            }
            let bundle = self.directory.get(&entry.user).ok_or_else(|| {
                FedError::Protocol(format!("no directory entry for peer {}", entry.user))
            })?;
            let key = crypto::key_agree(&self.agreement, &bundle.agreement)?;
            self.peer_keys.insert(entry.user, key);
            self.cost.ciphers += 1;
        }

        let indices: Vec<u32> = msg.members.iter().map(|e| e.index).collect();
        let t = TopologyConfig::user_threshold(indices.len());
        let shares = shamir::share_bytes(
            &field,
            &self.agreement.secret_bytes(),
            t,
            &indices,
            &mut self.rng,
        )?;
        self.cost.shares += indices.len() as u64;
        let mut encrypted = BTreeMap::new();
        for (entry, share) in msg.members.iter().zip(&shares) {
            if entry.user == self.id {
                continue; // own share is useless to anyone: it dies with us
            }
            let binding = BindingContext {
                sender: self.id,
                receiver: entry.user,
                round: 0,
                kind: kind::SECRET_DEPOSIT,
                seq: msg.roster_version,
            };
            let plain = serde_json::to_vec(share).expect("shares serialize");
            encrypted.insert(
                entry.user,
                crypto::encrypt(&self.peer_keys[&entry.user], &binding, &plain),
            );
            self.cost.ciphers += 1;
        }
        Ok(vec![outgoing(
            self.edge,
            env.round,
            &SecretDeposit {
                roster_version: msg.roster_version,
                shares: encrypted,
            },
        )])
    }

    fn decrypt_share(
        &mut self,
        from: u64,
        binding: &BindingContext,
        ciphertext: &[u8],
    ) -> Result<VectorShare, FedError> {
        let key = self.peer_keys.get(&from).ok_or_else(|| {
            FedError::Protocol(format!("ciphertext from unkeyed peer {from}"))
        })?;
        let plain = crypto::decrypt(key, binding, ciphertext)?;
        self.cost.ciphers += 1;
        let share: VectorShare = serde_json::from_slice(&plain)
            .map_err(|e| FedError::Protocol(format!("inner share malformed: {e}")))?;
        let field = self.ctx()?.field;
        if share.values.iter().any(|&v| !field.contains(v)) {
            return Err(FedError::ElementRange);
        }
        Ok(share)
    }

    fn on_deposit_relay(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: DepositRelay = messages::decode(&env.payload)?;
        let binding = BindingContext {
            sender: msg.from,
            receiver: self.id,
            round: 0,
            kind: kind::SECRET_DEPOSIT,
            seq: msg.roster_version,
        };
        let share = self.decrypt_share(msg.from, &binding, &msg.ciphertext)?;
        self.deposit_shares.insert(msg.from, share);
        Ok(Vec::new())
    }

    fn on_seed_share_relay(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: SeedShareRelay = messages::decode(&env.payload)?;
        let binding = BindingContext {
            sender: msg.from,
            receiver: self.id,
            round: 0,
            kind: kind::SEED_SHARE_RELAY,
            seq: msg.agg_seq,
        };
        let share = self.decrypt_share(msg.from, &binding, &msg.ciphertext)?;
        self.seed_shares.insert((msg.agg_seq, msg.from), share);
        Ok(Vec::new())
    }

    /// Build, mask, and upload this user's contribution to one aggregation,
    /// threshold-sharing a fresh self-mask seed to the request roster.
    fn on_agg_request(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: AggRequest = messages::decode(&env.payload)?;
        if msg.round != self.grads_round {
            let ctx = self.ctx()?;
            self.grads =
                train::round_gradients(&ctx.boost.loss, &self.scores, &self.labels, &ctx.codec);
            self.grads_round = msg.round;
        }
        if msg.depth == 0 {
            self.node_of = self.instance_ids.iter().map(|&gid| (gid, 0)).collect();
        }

        let ctx = self.ctx()?;
        let field = ctx.field;
        let values = upload_values(
            ctx,
            &self.data,
            &self.instance_ids,
            &self.node_of,
            &self.grads,
            msg.group as usize,
            &msg.nodes,
            &msg.features,
        )?;

        let roster = msg
            .rosters
            .get(&self.zone)
            .ok_or_else(|| FedError::Protocol("aggregation omits this zone".into()))?;
        if !roster.iter().any(|e| e.user == self.id && e.index == self.index) {
            return Err(FedError::Protocol(
                "request roster does not list this user".into(),
            ));
        }
        let indices: Vec<u32> = roster.iter().map(|e| e.index).collect();
        let t = TopologyConfig::user_threshold(indices.len());

        // Mask against exactly the request roster: pairwise terms cancel
        // over that roster and nothing else.
        let mut keyring = MaskKeyring::new(self.index);
        for entry in roster.iter().filter(|e| e.user != self.id) {
            let key = self.peer_keys.get(&entry.user).ok_or_else(|| {
                FedError::Protocol(format!("no pairwise key for roster peer {}", entry.user))
            })?;
            keyring.insert_peer(entry.index, *key);
        }

        let mut seed = [0u8; 32];
        self.rng.fill(&mut seed);
        let tag = messages::agg_tag(msg.agg_seq);
        let self_masks = masking::self_mask_vector(&field, &seed, msg.round, &tag, values.len());
        let masked = keyring.mask_vector(&field, &values, &self_masks, msg.round, &tag);
        self.cost.masks += values.len() as u64;

        let seed_shares = shamir::share_bytes(&field, &seed, t, &indices, &mut self.rng)?;
        self.cost.shares += indices.len() as u64;
        let mut encrypted = BTreeMap::new();
        for (entry, share) in roster.iter().zip(&seed_shares) {
            if entry.user == self.id {
                self.seed_shares.insert((msg.agg_seq, self.id), share.clone());
                continue;
            }
            let binding = BindingContext {
                sender: self.id,
                receiver: entry.user,
                round: 0,
                kind: kind::SEED_SHARE_RELAY,
                seq: msg.agg_seq,
            };
            let plain = serde_json::to_vec(share).expect("shares serialize");
            encrypted.insert(
                entry.user,
                crypto::encrypt(&self.peer_keys[&entry.user], &binding, &plain),
            );
            self.cost.ciphers += 1;
        }

        Ok(vec![outgoing(
            self.edge,
            msg.round,
            &MaskedUpload {
                agg_seq: msg.agg_seq,
                values: masked,
                seed_shares: encrypted,
            },
        )])
    }

    /// Reveal seed shares for survivors and recovery shares for dropped
    /// members. The two sets must be disjoint: revealing both a member's
    /// seed and its secret would expose that member's pairwise masks.
    fn on_unmask_request(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: UnmaskRequest = messages::decode(&env.payload)?;
        let survivors: BTreeSet<u64> = msg.survivors.iter().copied().collect();
        if msg.dropped.iter().any(|d| survivors.contains(d)) {
            return Err(FedError::Protocol(
                "unmask request lists a member as both survivor and dropped".into(),
            ));
        }
        if msg.dropped.contains(&self.id) {
            return Err(FedError::Protocol(
                "unmask request drops a live responder".into(),
            ));
        }
        let mut out = Vec::new();
        let mut seed_reveals = BTreeMap::new();
        for &owner in &msg.survivors {
            if let Some(share) = self.seed_shares.get(&(msg.agg_seq, owner)) {
                seed_reveals.insert(owner, share.clone());
            }
        }
        out.push(outgoing(
            self.edge,
            env.round,
            &SeedShareReveal {
                agg_seq: msg.agg_seq,
                shares: seed_reveals,
            },
        ));
        if !msg.dropped.is_empty() {
            let mut recovery = BTreeMap::new();
            for &owner in &msg.dropped {
                if let Some(share) = self.deposit_shares.get(&owner) {
                    recovery.insert(owner, share.clone());
                }
            }
            out.push(outgoing(
                self.edge,
                env.round,
                &RecoveryShare {
                    agg_seq: msg.agg_seq,
                    shares: recovery,
                },
            ));
        }
        Ok(out)
    }

    /// Share comparison operands for every owned instance sitting at a node
    /// that split. Instances at fresh leaves simply stay put.
    fn on_split_announce(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: SplitAnnounce = messages::decode(&env.payload)?;
        if let Some(target) = msg.phase.catchup_user {
            if target != self.id {
                return Err(FedError::Protocol(
                    "catch-up wave addressed to another user".into(),
                ));
            }
            if msg.phase.depth == 0 {
                // Replayed trees route from the root again.
                self.node_of = self.instance_ids.iter().map(|&gid| (gid, 0)).collect();
            }
        }
        let splits: BTreeMap<u32, SplitInfo> =
            msg.splits.iter().map(|s| (s.node, *s)).collect();

        let ctx = self.ctx()?;
        let field = ctx.field;
        let mut items = Vec::new();
        let mut operands = Vec::new();
        for (i, gid) in self.instance_ids.iter().enumerate() {
            let Some(&node) = self.node_of.get(gid) else {
                continue;
            };
            let Some(info) = splits.get(&node) else {
                continue;
            };
            items.push(CmpItem {
                instance: *gid,
                node,
            });
            operands.push(ctx.cmp_codec.encode(self.data[i].feature(info.feature))?);
        }
        if items.is_empty() {
            return Ok(vec![outgoing(
                CENTRAL_ID,
                env.round,
                &DepthDone {
                    phase: msg.phase,
                    user: self.id,
                },
            )]);
        }

        let roster: Vec<u32> = (1..=self.edges).collect();
        let t = TopologyConfig::edge_threshold(self.edges as usize);
        let shares = shamir::share_vector(&field, &operands, t, &roster, &mut self.rng)?;
        self.cost.shares += roster.len() as u64;
        self.pending.insert(
            msg.phase,
            RouteState {
                splits,
                items: items.clone(),
            },
        );
        Ok(shares
            .into_iter()
            .map(|share| {
                outgoing(
                    share.index as u64,
                    env.round,
                    &CmpInput {
                        phase: msg.phase,
                        items: items.clone(),
                        share,
                    },
                )
            })
            .collect())
    }

    fn on_cmp_bits(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: CmpBits = messages::decode(&env.payload)?;
        let state = self.pending.remove(&msg.phase).ok_or_else(|| {
            FedError::Protocol("comparison bits for an unknown phase".into())
        })?;
        if msg.items != state.items || msg.bits.len() != msg.items.len() {
            return Err(FedError::Protocol(
                "comparison bits disagree with the submitted batch".into(),
            ));
        }
        for (item, &bit) in msg.items.iter().zip(&msg.bits) {
            let info = &state.splits[&item.node];
            let next = if bit { info.right } else { info.left };
            self.node_of.insert(item.instance, next);
        }
        Ok(vec![outgoing(
            CENTRAL_ID,
            env.round,
            &DepthDone {
                phase: msg.phase,
                user: self.id,
            },
        )])
    }

    fn on_leaf_weights(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: LeafWeights = messages::decode(&env.payload)?;
        let eta = self.ctx()?.boost.eta;
        let group = msg.group as usize;
        if self.scores.first().map_or(true, |row| group >= row.len()) {
            return Err(FedError::Protocol("leaf weights for an unknown group".into()));
        }
        if msg.leaves.len() == 1 && msg.leaves[0].0 == 0 {
            // Root leaf: every instance sits there, whatever node_of says.
            let w = msg.leaves[0].1;
            for row in &mut self.scores {
                row[group] += eta * w;
            }
            return Ok(Vec::new());
        }
        let weights: BTreeMap<u32, f64> = msg.leaves.iter().copied().collect();
        for (i, gid) in self.instance_ids.iter().enumerate() {
            if let Some(node) = self.node_of.get(gid) {
                if let Some(&w) = weights.get(node) {
                    self.scores[i][group] += eta * w;
                }
            }
        }
        Ok(Vec::new())
    }
}

/// Per-node `[count, g, h]` then `[count_left, gl, hl]` for every candidate
/// of every requested feature, nodes in request order. Gradients are dyadic
/// rationals, so the f64 partial sums here are exact and encoding the sum
/// equals summing the encodings.
#[allow(clippy::too_many_arguments)]
fn upload_values(
    ctx: &RunContext,
    data: &[Instance],
    instance_ids: &[u64],
    node_of: &BTreeMap<u64, u32>,
    grads: &[Vec<GradientPair>],
    group: usize,
    nodes: &[u32],
    features: &[u32],
) -> Result<Vec<FieldElement>, FedError> {
    let field = ctx.field;
    let mut by_node: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, gid) in instance_ids.iter().enumerate() {
        if let Some(&node) = node_of.get(gid) {
            by_node.entry(node).or_default().push(i);
        }
    }
    let empty = Vec::new();
    let mut values = Vec::with_capacity(nodes.len() * super::upload_stride(features, &ctx.candidates));
    for node in nodes {
        let mine = by_node.get(node).unwrap_or(&empty);
        let g: f64 = mine.iter().map(|&i| grads[i][group].g).sum();
        let h: f64 = mine.iter().map(|&i| grads[i][group].h).sum();
        values.push(field.elem(mine.len() as u64));
        values.push(ctx.codec.encode(g)?);
        values.push(ctx.codec.encode(h)?);
        for &f in features {
            for &thr in &ctx.candidates[f as usize] {
                let mut count_left = 0u64;
                let mut gl = 0.0;
                let mut hl = 0.0;
                for &i in mine {
                    if data[i].feature(f) < thr {
                        count_left += 1;
                        gl += grads[i][group].g;
                        hl += grads[i][group].h;
                    }
                }
                values.push(field.elem(count_left));
                values.push(ctx.codec.encode(gl)?);
                values.push(ctx.codec.encode(hl)?);
            }
        }
    }
    Ok(values)
}
