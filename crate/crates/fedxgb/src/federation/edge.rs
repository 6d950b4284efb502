//! Edge node: per-zone aggregation with dropout recovery, share relays,
//! and the share-space comparison pipeline.
//!
//! For every aggregation the edge collects masked uploads from its zone,
//! freezes the survivor set, has survivors reveal threshold shares of each
//! other's self-mask seeds (and of dropped members' agreement secrets), and
//! forwards the unmasked zone sum. For comparisons the edge holds threshold
//! shares of chosen split thresholds; all edges but the highest-indexed one
//! blind their difference shares with a shared per-item factor, and the
//! highest one combines the blinded shares into routing bits.

use super::messages::{
    self, kind, AggRequest, BlindSeed, CmpBits, CmpBlind, CmpInput, CmpItem, DepositRelay,
    DropNotice, KeyBundle, KeyDirectory, MaskedUpload, PhaseId, RecoveryShare, RosterEntry,
    SecretDeposit, SeedShareRelay, SeedShareReveal, SetupParams, SplitDecision, UnmaskRequest,
    ZoneAggregate,
};
use super::{outgoing, FedError, Outgoing, RunContext, CENTRAL_ID};
use crate::config::TopologyConfig;
use crate::crypto::{self, AgreementKeyPair, AgreementPublicKey, BindingContext, SharedKey, SigningIdentity};
use crate::field::FieldElement;
use crate::masking;
use crate::seccmp;
use crate::shamir::{self, VectorShare};
use crate::sim::{CostLedger, Envelope};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AggPhase {
    Collect,
    AwaitReveal,
}

struct AggState {
    round: u32,
    roster: Vec<RosterEntry>,
    value_len: usize,
    phase: AggPhase,
    uploads: BTreeMap<u64, Vec<FieldElement>>,
    /// Frozen at the unmask request: members whose uploads are in hand.
    survivors: Vec<u64>,
    dropped: Vec<u64>,
    /// Live survivors the edge still expects reveal traffic from.
    reveal_wait: BTreeSet<u64>,
    seed_reveals: BTreeMap<u64, BTreeMap<u64, VectorShare>>,
    recovery_shares: BTreeMap<u64, BTreeMap<u64, VectorShare>>,
}

pub struct EdgeNode {
    pub id: u64,
    zone: u32,
    rng: ChaCha20Rng,
    agreement: AgreementKeyPair,
    signing: SigningIdentity,
    ctx: Option<RunContext>,
    edges: u32,
    directory: BTreeMap<u64, KeyBundle>,
    edge_keys: BTreeMap<u64, SharedKey>,
    blind_seed: Option<[u8; 32]>,
    dead: BTreeSet<u64>,
    /// Owner -> zone size when the owner's secret was last deposited; fixes
    /// the reconstruction threshold for recovery.
    deposit_sizes: BTreeMap<u64, usize>,
    aggs: BTreeMap<u64, AggState>,
    /// Phase -> split node -> this edge's share of the chosen threshold.
    decisions: BTreeMap<PhaseId, BTreeMap<u32, FieldElement>>,
    /// Combiner only: blinded difference shares collected per batch.
    blinds: BTreeMap<(PhaseId, u64), Vec<(Vec<CmpItem>, VectorShare)>>,
    pub cost: CostLedger,
}

impl EdgeNode {
    pub fn new(zone: u32, mut rng: ChaCha20Rng) -> Self {
        let agreement = AgreementKeyPair::generate(&mut rng);
        let signing = SigningIdentity::generate(&mut rng);
        EdgeNode {
            id: super::edge_id(zone),
            zone,
            rng,
            agreement,
            signing,
            ctx: None,
            edges: 0,
            directory: BTreeMap::new(),
            edge_keys: BTreeMap::new(),
            blind_seed: None,
            dead: BTreeSet::new(),
            deposit_sizes: BTreeMap::new(),
            aggs: BTreeMap::new(),
            decisions: BTreeMap::new(),
            blinds: BTreeMap::new(),
            cost: CostLedger::default(),
        }
    }

    fn ctx(&self) -> Result<&RunContext, FedError> {
        self.ctx
            .as_ref()
            .ok_or_else(|| FedError::Protocol("edge received traffic before setup".into()))
    }

    fn combiner(&self) -> u64 {
        self.edges as u64
    }

    fn is_combiner(&self) -> bool {
        self.id == self.combiner()
    }

    pub fn handle(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        match env.kind {
            kind::SETUP_PARAMS => self.on_setup(env),
            kind::KEY_DIRECTORY => self.on_directory(env),
            kind::BLIND_SEED => self.on_blind_seed(env),
            kind::SECRET_DEPOSIT => self.on_secret_deposit(env),
            kind::DROP_NOTICE => self.on_drop_notice(env),
            kind::AGG_REQUEST => self.on_agg_request(env),
            kind::MASKED_UPLOAD => self.on_masked_upload(env),
            kind::SEED_SHARE_REVEAL => self.on_seed_share_reveal(env),
            kind::RECOVERY_SHARE => self.on_recovery_share(env),
            kind::SPLIT_DECISION => self.on_split_decision(env),
            kind::CMP_INPUT => self.on_cmp_input(env),
            kind::CMP_BLIND => self.on_cmp_blind(env),
            other => Err(FedError::UnexpectedMessage {
                kind: other,
                state: "edge".into(),
            }),
        }
    }

    fn on_setup(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: SetupParams = messages::decode(&env.payload)?;
        self.ctx = Some(RunContext::from_setup(&msg)?);
        self.edges = msg.edges;
        let agreement = self.agreement.public();
        let signing = self.signing.public();
        let signature = self
            .signing
            .sign(&KeyBundle::signed_bytes(self.id, &agreement, &signing));
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

    /// Verify and store the directory, agree keys with the other edges, and
    /// have edge 1 distribute the blinding seed to the non-combiners.
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
        for peer in 1..=self.edges as u64 {
            if peer == self.id || self.edge_keys.contains_key(&peer) {
                continue;
            }
            if let Some(bundle) = self.directory.get(&peer) {
                let key = crypto::key_agree(&self.agreement, &bundle.agreement)?;
                self.edge_keys.insert(peer, key);
                self.cost.ciphers += 1;
            }
        }

        let mut out = Vec::new();
        if self.id == 1 && self.edges >= 2 && self.blind_seed.is_none() {
            let mut seed = [0u8; 32];
            self.rng.fill(&mut seed);
            self.blind_seed = Some(seed);
            for peer in 2..self.edges as u64 {
                let key = self.edge_keys.get(&peer).ok_or_else(|| {
                    FedError::Protocol(format!("no pairwise key for edge {peer}"))
                })?;
                let binding = BindingContext {
                    sender: self.id,
                    receiver: peer,
                    round: 0,
                    kind: kind::BLIND_SEED,
                    seq: 0,
                };
                out.push(outgoing(
                    peer,
                    env.round,
                    &BlindSeed {
                        ciphertext: crypto::encrypt(key, &binding, &seed),
                    },
                ));
                self.cost.ciphers += 1;
            }
        }
        Ok(out)
    }

    fn on_blind_seed(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: BlindSeed = messages::decode(&env.payload)?;
        let key = self.edge_keys.get(&env.sender).ok_or_else(|| {
            FedError::Protocol(format!("blind seed from unkeyed edge {}", env.sender))
        })?;
        let binding = BindingContext {
            sender: env.sender,
            receiver: self.id,
            round: 0,
            kind: kind::BLIND_SEED,
            seq: 0,
        };
        let plain = crypto::decrypt(key, &binding, &msg.ciphertext)?;
        self.cost.ciphers += 1;
        let seed: [u8; 32] = plain
            .try_into()
            .map_err(|_| FedError::Protocol("blind seed has the wrong length".into()))?;
        self.blind_seed = Some(seed);
        Ok(Vec::new())
    }

    /// Relay each encrypted deposit share to its holder, remembering the
    /// sharing size so recovery uses the matching threshold.
    fn on_secret_deposit(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: SecretDeposit = messages::decode(&env.payload)?;
        self.deposit_sizes.insert(env.sender, msg.shares.len() + 1);
        Ok(msg
            .shares
            .into_iter()
            .map(|(holder, ciphertext)| {
                outgoing(
                    holder,
                    env.round,
                    &DepositRelay {
                        roster_version: msg.roster_version,
                        from: env.sender,
                        ciphertext,
                    },
                )
            })
            .collect())
    }

    fn on_drop_notice(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: DropNotice = messages::decode(&env.payload)?;
        self.dead.insert(msg.user);
        let mut out = Vec::new();
        let seqs: Vec<u64> = self.aggs.keys().copied().collect();
        for seq in seqs {
            out.extend(self.advance_agg(seq)?);
        }
        Ok(out)
    }

    fn on_agg_request(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: AggRequest = messages::decode(&env.payload)?;
        let ctx = self.ctx()?;
        let roster = msg.rosters.get(&self.zone).cloned().unwrap_or_default();
        let value_len =
            msg.nodes.len() * super::upload_stride(&msg.features, &ctx.candidates);
        self.aggs.insert(
            msg.agg_seq,
            AggState {
                round: msg.round,
                roster,
                value_len,
                phase: AggPhase::Collect,
                uploads: BTreeMap::new(),
                survivors: Vec::new(),
                dropped: Vec::new(),
                reveal_wait: BTreeSet::new(),
                seed_reveals: BTreeMap::new(),
                recovery_shares: BTreeMap::new(),
            },
        );
        self.advance_agg(msg.agg_seq)
    }

    fn on_masked_upload(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: MaskedUpload = messages::decode(&env.payload)?;
        let field = self.ctx()?.field;
        let state = self.aggs.get_mut(&msg.agg_seq).ok_or_else(|| {
            FedError::Protocol("upload for an unknown aggregation".into())
        })?;
        if state.phase != AggPhase::Collect {
            return Err(FedError::Protocol("upload after the survivor freeze".into()));
        }
        if !state.roster.iter().any(|e| e.user == env.sender) {
            return Err(FedError::Protocol("upload from outside the roster".into()));
        }
        if msg.values.len() != state.value_len
            || msg.values.iter().any(|&v| !field.contains(v))
        {
            return Err(FedError::ElementRange);
        }
        if state.uploads.insert(env.sender, msg.values).is_some() {
            return Err(FedError::Protocol("duplicate upload".into()));
        }
        let round = state.round;
        let mut out: Vec<Outgoing> = msg
            .seed_shares
            .into_iter()
            .map(|(holder, ciphertext)| {
                outgoing(
                    holder,
                    round,
                    &SeedShareRelay {
                        agg_seq: msg.agg_seq,
                        from: env.sender,
                        ciphertext,
                    },
                )
            })
            .collect();
        out.extend(self.advance_agg(msg.agg_seq)?);
        Ok(out)
    }

    fn on_seed_share_reveal(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: SeedShareReveal = messages::decode(&env.payload)?;
        let state = self.aggs.get_mut(&msg.agg_seq).ok_or_else(|| {
            FedError::Protocol("seed reveal for an unknown aggregation".into())
        })?;
        if state.phase != AggPhase::AwaitReveal || !state.reveal_wait.contains(&env.sender) {
            return Err(FedError::Protocol("unsolicited seed reveal".into()));
        }
        state.seed_reveals.insert(env.sender, msg.shares);
        self.advance_agg(msg.agg_seq)
    }

    fn on_recovery_share(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: RecoveryShare = messages::decode(&env.payload)?;
        let state = self.aggs.get_mut(&msg.agg_seq).ok_or_else(|| {
            FedError::Protocol("recovery share for an unknown aggregation".into())
        })?;
        if state.phase != AggPhase::AwaitReveal || !state.reveal_wait.contains(&env.sender) {
            return Err(FedError::Protocol("unsolicited recovery share".into()));
        }
        state.recovery_shares.insert(env.sender, msg.shares);
        self.advance_agg(msg.agg_seq)
    }

    /// Drive one aggregation as far as current traffic allows.
    fn advance_agg(&mut self, seq: u64) -> Result<Vec<Outgoing>, FedError> {
        let Some(state) = self.aggs.get_mut(&seq) else {
            return Ok(Vec::new());
        };
        match state.phase {
            AggPhase::Collect => {
                let expected: Vec<u64> = state
                    .roster
                    .iter()
                    .map(|e| e.user)
                    .filter(|u| !self.dead.contains(u))
                    .collect();
                if !expected.iter().all(|u| state.uploads.contains_key(u)) {
                    return Ok(Vec::new());
                }
                // Freeze: held uploads count, even from members that died
                // after uploading; absent members are recovered around.
                state.survivors = state.uploads.keys().copied().collect();
                state.dropped = state
                    .roster
                    .iter()
                    .map(|e| e.user)
                    .filter(|u| !state.uploads.contains_key(u))
                    .collect();
                if state.survivors.is_empty() {
                    let reply = ZoneAggregate {
                        agg_seq: seq,
                        zone: self.zone,
                        round: state.round,
                        ok: true,
                        values: vec![FieldElement::ZERO; state.value_len],
                    };
                    let round = state.round;
                    self.aggs.remove(&seq);
                    return Ok(vec![outgoing(CENTRAL_ID, round, &reply)]);
                }
                state.phase = AggPhase::AwaitReveal;
                state.reveal_wait = state
                    .survivors
                    .iter()
                    .copied()
                    .filter(|u| !self.dead.contains(u))
                    .collect();
                let request = UnmaskRequest {
                    agg_seq: seq,
                    survivors: state.survivors.clone(),
                    dropped: state.dropped.clone(),
                };
                let round = state.round;
                let targets = state.survivors.clone();
                let mut out: Vec<Outgoing> = targets
                    .into_iter()
                    .map(|u| outgoing(u, round, &request))
                    .collect();
                // All responders may already be dead; re-check immediately.
                out.extend(self.advance_agg(seq)?);
                Ok(out)
            }
            AggPhase::AwaitReveal => {
                state.reveal_wait.retain(|u| !self.dead.contains(u));
                let need_recovery = !state.dropped.is_empty();
                let complete = state.reveal_wait.iter().all(|u| {
                    state.seed_reveals.contains_key(u)
                        && (!need_recovery || state.recovery_shares.contains_key(u))
                });
                if !complete {
                    return Ok(Vec::new());
                }
                let state = self.aggs.remove(&seq).expect("state present");
                let reply = self.finish_agg(seq, state)?;
                Ok(vec![reply])
            }
        }
    }

    /// Reconstruct survivor seeds, strip self masks, correct for dropped
    /// members, and ship the zone sum. Any missing threshold aborts the
    /// zone for this aggregation.
    fn finish_agg(&mut self, seq: u64, state: AggState) -> Result<Outgoing, FedError> {
        let ctx = self.ctx()?;
        let field = ctx.field;
        let tag = messages::agg_tag(seq);
        let t = TopologyConfig::user_threshold(state.roster.len());
        let abort = |zone: u32, round: u32| ZoneAggregate {
            agg_seq: seq,
            zone,
            round,
            ok: false,
            values: Vec::new(),
        };

        let mut totals = vec![FieldElement::ZERO; state.value_len];
        for values in state.uploads.values() {
            for (acc, &v) in totals.iter_mut().zip(values) {
                *acc = field.add(*acc, v);
            }
        }

        for &survivor in &state.survivors {
            let shares: Vec<VectorShare> = state
                .seed_reveals
                .values()
                .filter_map(|m| m.get(&survivor).cloned())
                .collect();
            if shares.len() < t {
                return Ok(outgoing(CENTRAL_ID, state.round, &abort(self.zone, state.round)));
            }
            let bytes = shamir::reconstruct_bytes(&field, &shares, t, 32)?;
            let seed: [u8; 32] = bytes.try_into().expect("seed length fixed");
            self.cost.reconstructs += 1;
            let masks =
                masking::self_mask_vector(&field, &seed, state.round, &tag, state.value_len);
            for (acc, m) in totals.iter_mut().zip(masks) {
                *acc = field.sub(*acc, m);
            }
        }

        if !state.dropped.is_empty() {
            let survivor_pubs: Vec<(u32, AgreementPublicKey)> = state
                .roster
                .iter()
                .filter(|e| state.survivors.contains(&e.user))
                .map(|e| {
                    self.directory
                        .get(&e.user)
                        .map(|b| (e.index, b.agreement))
                        .ok_or_else(|| {
                            FedError::Protocol(format!("no directory entry for {}", e.user))
                        })
                })
                .collect::<Result<_, _>>()?;
            for &gone in &state.dropped {
                let Some(&entry) = state.roster.iter().find(|e| e.user == gone) else {
                    continue;
                };
                let shares: Vec<VectorShare> = state
                    .recovery_shares
                    .values()
                    .filter_map(|m| m.get(&gone).cloned())
                    .collect();
                let t_dep = TopologyConfig::user_threshold(
                    self.deposit_sizes.get(&gone).copied().unwrap_or(0),
                );
                if shares.len() < t_dep || t_dep == 0 {
                    return Ok(outgoing(CENTRAL_ID, state.round, &abort(self.zone, state.round)));
                }
                let keys = masking::recover_mask_keys(&field, &shares, t_dep, &survivor_pubs)?;
                self.cost.reconstructs += 1;
                let correction = masking::pairwise_correction_vector(
                    &field,
                    entry.index,
                    &keys,
                    state.round,
                    &tag,
                    state.value_len,
                );
                self.cost.masks += state.value_len as u64;
                for (acc, c) in totals.iter_mut().zip(correction) {
                    *acc = field.add(*acc, c);
                }
            }
        }

        Ok(outgoing(
            CENTRAL_ID,
            state.round,
            &ZoneAggregate {
                agg_seq: seq,
                zone: self.zone,
                round: state.round,
                ok: true,
                values: totals,
            },
        ))
    }

    fn on_split_decision(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: SplitDecision = messages::decode(&env.payload)?;
        let field = self.ctx()?.field;
        if msg.threshold_shares.index as u64 != self.id
            || msg.threshold_shares.values.len() != msg.nodes.len()
            || msg.threshold_shares.values.iter().any(|&v| !field.contains(v))
        {
            return Err(FedError::ElementRange);
        }
        let by_node = msg
            .nodes
            .iter()
            .copied()
            .zip(msg.threshold_shares.values.iter().copied())
            .collect();
        self.decisions.insert(msg.phase, by_node);
        Ok(Vec::new())
    }

    /// Non-combiners blind their share of (threshold - operand) per item and
    /// forward it; with a single edge the comparison is resolved locally.
    fn on_cmp_input(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: CmpInput = messages::decode(&env.payload)?;
        let ctx = self.ctx()?;
        let field = ctx.field;
        if msg.share.index as u64 != self.id
            || msg.share.values.len() != msg.items.len()
            || msg.items.is_empty()
            || msg.share.values.iter().any(|&v| !field.contains(v))
        {
            return Err(FedError::ElementRange);
        }

        if self.edges == 1 {
            // Degenerate roster: shares are the operands themselves.
            let thresholds = self.decisions.get(&msg.phase).ok_or_else(|| {
                FedError::Protocol("comparison before the split decision".into())
            })?;
            let mut bits = Vec::with_capacity(msg.items.len());
            for (item, &x) in msg.items.iter().zip(&msg.share.values) {
                let thr = *thresholds.get(&item.node).ok_or_else(|| {
                    FedError::Protocol("comparison against an unsplit node".into())
                })?;
                bits.push(field.to_i128(field.sub(thr, x)) <= 0);
            }
            self.cost.compares += msg.items.len() as u64;
            return Ok(vec![outgoing(
                env.sender,
                env.round,
                &CmpBits {
                    phase: msg.phase,
                    items: msg.items,
                    bits,
                },
            )]);
        }

        if self.is_combiner() {
            // The combiner reconstructs from the other edges' blinded
            // shares only; its own raw share stays unused.
            return Ok(Vec::new());
        }

        let thresholds = self.decisions.get(&msg.phase).ok_or_else(|| {
            FedError::Protocol("comparison before the split decision".into())
        })?;
        let seed = self.blind_seed.ok_or_else(|| {
            FedError::Protocol("comparison before the blinding seed arrived".into())
        })?;
        let cmp_codec = ctx.cmp_codec;
        let mut values = Vec::with_capacity(msg.items.len());
        for (item, &x_share) in msg.items.iter().zip(&msg.share.values) {
            let thr_share = *thresholds.get(&item.node).ok_or_else(|| {
                FedError::Protocol("comparison against an unsplit node".into())
            })?;
            let beta = seccmp::blind_factor(&cmp_codec, &seed, &msg.phase.tag(item.instance));
            values.push(seccmp::blinded_difference_share(
                &field, beta, thr_share, x_share,
            ));
        }
        // Blinding is a multiplicative mask, far cheaper than the
        // reconstruction and sign test the combiner performs.
        self.cost.masks += msg.items.len() as u64;
        Ok(vec![outgoing(
            self.combiner(),
            env.round,
            &CmpBlind {
                phase: msg.phase,
                user: env.sender,
                items: msg.items,
                share: VectorShare {
                    index: self.id as u32,
                    values,
                },
            },
        )])
    }

    /// Combiner: once every non-combiner's blinded share for a batch is in,
    /// rebuild the blinded differences, read signs, return routing bits.
    fn on_cmp_blind(&mut self, env: &Envelope) -> Result<Vec<Outgoing>, FedError> {
        let msg: CmpBlind = messages::decode(&env.payload)?;
        if !self.is_combiner() {
            return Err(FedError::UnexpectedMessage {
                kind: kind::CMP_BLIND,
                state: "non-combiner edge".into(),
            });
        }
        let field = self.ctx()?.field;
        if msg.share.values.len() != msg.items.len()
            || msg.share.values.iter().any(|&v| !field.contains(v))
        {
            return Err(FedError::ElementRange);
        }
        let key = (msg.phase, msg.user);
        let batch = self.blinds.entry(key).or_default();
        batch.push((msg.items, msg.share));
        if batch.len() < self.edges as usize - 1 {
            return Ok(Vec::new());
        }
        let batch = self.blinds.remove(&key).expect("batch present");
        let items = batch[0].0.clone();
        if batch.iter().any(|(i, _)| *i != items) {
            return Err(FedError::Protocol(
                "edges disagree on a comparison batch".into(),
            ));
        }
        let shares: Vec<VectorShare> = batch.into_iter().map(|(_, s)| s).collect();
        let t = TopologyConfig::edge_threshold(self.edges as usize);
        let bits = seccmp::combine(&field, &shares, t)?;
        self.cost.reconstructs += items.len() as u64;
        self.cost.compares += items.len() as u64;
        Ok(vec![outgoing(
            msg.user,
            env.round,
            &CmpBits {
                phase: msg.phase,
                items,
                bits,
            },
        )])
    }
}
