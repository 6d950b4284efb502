//! In-memory message bus with per-pair FIFO delivery and a streaming
//! transcript hash.
//!
//! Every envelope is folded into a SHA-256 transcript at send time, so two
//! runs that exchange byte-identical traffic in the same order produce the
//! same transcript digest. The bus also keeps conservation counters: every
//! send is eventually delivered or explicitly voided (recipient dead).

use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Pseudo-participant id used for infrastructure notifications.
pub const NETWORK_ID: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub sender: u64,
    pub receiver: u64,
    /// Message kind tag from the wire registry.
    pub kind: u16,
    pub round: u32,
    /// Strictly increasing per (sender, receiver) pair, assigned by the bus.
    pub pair_seq: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Default)]
pub struct Bus {
    queue: VecDeque<Envelope>,
    next_seq: BTreeMap<(u64, u64), u64>,
    last_delivered: BTreeMap<(u64, u64), u64>,
    dead: BTreeSet<u64>,
    transcript: Option<Sha256>,
    log: Option<Vec<Envelope>>,
    pub sent: u64,
    pub delivered: u64,
    pub voided: u64,
    pub bytes: u64,
    kind_counts: BTreeMap<u16, u64>,
    bytes_by_sender: BTreeMap<u64, u64>,
}

impl Bus {
    pub fn new() -> Self {
        Bus {
            transcript: Some(Sha256::new_with_prefix(b"fedxgb/transcript/v1")),
            ..Bus::default()
        }
    }

    /// Keep a full copy of every envelope (for audit tests).
    pub fn enable_log(&mut self) {
        self.log = Some(Vec::new());
    }

    pub fn log(&self) -> Option<&[Envelope]> {
        self.log.as_deref()
    }

    /// Mark a participant dead: pending and future envelopes to it are
    /// voided at delivery time, and nothing further may be sent by it.
    pub fn mark_dead(&mut self, id: u64) {
        self.dead.insert(id);
    }

    pub fn is_dead(&self, id: u64) -> bool {
        self.dead.contains(&id)
    }

    pub fn send(&mut self, sender: u64, receiver: u64, kind: u16, round: u32, payload: Vec<u8>) {
        if self.dead.contains(&sender) {
            return; // dead participants emit nothing
        }
        let seq = self.next_seq.entry((sender, receiver)).or_insert(0);
        let env = Envelope {
            sender,
            receiver,
            kind,
            round,
            pair_seq: *seq,
            payload,
        };
        *seq += 1;
        self.absorb(&env);
        self.sent += 1;
        self.bytes += env.payload.len() as u64;
        *self.kind_counts.entry(kind).or_insert(0) += 1;
        *self.bytes_by_sender.entry(sender).or_insert(0) += env.payload.len() as u64;
        if let Some(log) = &mut self.log {
            log.push(env.clone());
        }
        self.queue.push_back(env);
    }

    /// Pop the next envelope. Envelopes to dead participants are counted
    /// as voided and skipped.
    pub fn deliver_next(&mut self) -> Option<Envelope> {
        while let Some(env) = self.queue.pop_front() {
            if self.dead.contains(&env.receiver) {
                self.voided += 1;
                continue;
            }
            let key = (env.sender, env.receiver);
            if let Some(&last) = self.last_delivered.get(&key) {
                assert!(env.pair_seq > last, "per-pair FIFO order violated");
            }
            self.last_delivered.insert(key, env.pair_seq);
            self.delivered += 1;
            return Some(env);
        }
        None
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Every sent envelope is delivered, voided, or still queued.
    pub fn conserves(&self) -> bool {
        self.sent == self.delivered + self.voided + self.queue.len() as u64
    }

    pub fn kind_counts(&self) -> &BTreeMap<u16, u64> {
        &self.kind_counts
    }

    /// Total payload bytes sent by one participant.
    pub fn bytes_from(&self, id: u64) -> u64 {
        self.bytes_by_sender.get(&id).copied().unwrap_or(0)
    }

    fn absorb(&mut self, env: &Envelope) {
        if let Some(h) = &mut self.transcript {
            h.update(env.sender.to_le_bytes());
            h.update(env.receiver.to_le_bytes());
            h.update(env.kind.to_le_bytes());
            h.update(env.round.to_le_bytes());
            h.update(env.pair_seq.to_le_bytes());
            h.update((env.payload.len() as u64).to_le_bytes());
            h.update(&env.payload);
        }
    }

    /// Hex digest over all traffic sent so far.
    pub fn transcript_digest(&self) -> String {
        let h = self.transcript.clone().expect("transcript always on");
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_pair_sequences_increase_and_interleave() {
        let mut bus = Bus::new();
        bus.send(1, 2, 7, 0, vec![1]);
        bus.send(1, 3, 7, 0, vec![2]);
        bus.send(1, 2, 7, 0, vec![3]);
        let a = bus.deliver_next().unwrap();
        let b = bus.deliver_next().unwrap();
        let c = bus.deliver_next().unwrap();
        assert_eq!((a.receiver, a.pair_seq), (2, 0));
        assert_eq!((b.receiver, b.pair_seq), (3, 0));
        assert_eq!((c.receiver, c.pair_seq), (2, 1));
        assert!(bus.conserves());
    }

    #[test]
    fn dead_receivers_void_mail_and_dead_senders_stay_silent() {
        let mut bus = Bus::new();
        bus.send(1, 2, 7, 0, vec![]);
        bus.mark_dead(2);
        bus.send(3, 2, 7, 0, vec![]);
        bus.send(2, 1, 7, 0, vec![]);
        assert!(bus.deliver_next().is_none());
        assert_eq!(bus.voided, 2);
        assert_eq!(bus.sent, 2, "dead sender's envelope never entered");
        assert!(bus.conserves());
    }

    #[test]
    fn transcript_is_order_and_content_sensitive() {
        let mut a = Bus::new();
        a.send(1, 2, 7, 0, vec![1, 2]);
        a.send(2, 1, 8, 0, vec![3]);
        let mut b = Bus::new();
        b.send(1, 2, 7, 0, vec![1, 2]);
        b.send(2, 1, 8, 0, vec![3]);
        assert_eq!(a.transcript_digest(), b.transcript_digest());

        let mut c = Bus::new();
        c.send(2, 1, 8, 0, vec![3]);
        c.send(1, 2, 7, 0, vec![1, 2]);
        assert_ne!(a.transcript_digest(), c.transcript_digest());

        let mut d = Bus::new();
        d.send(1, 2, 7, 0, vec![1, 2]);
        d.send(2, 1, 8, 0, vec![4]);
        assert_ne!(a.transcript_digest(), d.transcript_digest());
    }

    #[test]
    fn kind_counts_accumulate() {
        let mut bus = Bus::new();
        bus.send(1, 2, 7, 0, vec![]);
        bus.send(1, 2, 7, 0, vec![]);
        bus.send(1, 2, 9, 0, vec![]);
        assert_eq!(bus.kind_counts().get(&7), Some(&2));
        assert_eq!(bus.kind_counts().get(&9), Some(&1));
    }
}
