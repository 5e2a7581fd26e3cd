//! The adversarial countdown network.
//!
//! Every broadcast puts one envelope per recipient into the network, each
//! carrying a countdown initialized to Δ. At the end of a round whose
//! synchrony flag is true, every countdown must decrease by at least one; in
//! an asynchronous round the adversary decides per envelope, including not at
//! all. An envelope whose countdown reaches zero is handed to its recipient
//! at the start of the next round. So under synchrony a message sent at `t`
//! arrives by `t + Δ`, the adversary can always speed that up to `t + 1`, and
//! during asynchronous stretches envelopes can sit frozen indefinitely. After
//! GST every round is forced synchronous and nothing is lost.
//!
//! Rather than storing a mutable countdown per envelope, the simulator keeps
//! a monotone counter of synchronous round-ends and files each naturally
//! aging envelope under the counter value at which its countdown hits zero.
//! A synchronous round-end then promotes one bucket instead of scanning the
//! queue. Frozen envelopes sit in a parked lane that only a release directive
//! (or nothing) can touch; the parked lane must be empty in any synchronous
//! round, which is exactly the model's "all countdowns decrement" rule.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::ids::{Enc, NodeId, Round};
use crate::msg::Msg;

/// One message copy addressed to one recipient.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub seq: u64,
    pub sender: NodeId,
    pub recipient: NodeId,
    pub send_round: Round,
    pub msg: Arc<Msg>,
}

/// A set of sender/recipient pairs, for delay and release directives.
#[derive(Clone, Debug)]
pub enum PairSpec {
    /// Any envelope with sender or recipient in the set.
    Touching(BTreeSet<NodeId>),
    /// Any envelope crossing between the two sets, either direction.
    Between(BTreeSet<NodeId>, BTreeSet<NodeId>),
}

impl PairSpec {
    pub fn matches(&self, e: &Envelope) -> bool {
        match self {
            PairSpec::Touching(s) => s.contains(&e.sender) || s.contains(&e.recipient),
            PairSpec::Between(a, b) => {
                (a.contains(&e.sender) && b.contains(&e.recipient))
                    || (b.contains(&e.sender) && a.contains(&e.recipient))
            }
        }
    }
}

/// What happens to envelopes enqueued this round.
#[derive(Clone, Debug, Default)]
pub enum StandingDelay {
    /// Age under the countdown rule: arrive Δ synchronous rounds after send.
    #[default]
    Normal,
    /// Countdown zeroed at enqueue: arrive at the start of the next round.
    NextRound,
    /// Like `NextRound`, except matching envelopes are parked frozen until a
    /// release directive moves them on. Only legal while the synchrony flag
    /// is false.
    NextRoundExcept(PairSpec),
}

/// Extra countdown decrements the adversary applies this round to envelopes
/// already in flight.
#[derive(Clone, Debug, Default)]
pub enum ReleaseSpec {
    #[default]
    None,
    /// Zero every countdown: everything in flight arrives next round.
    All,
    Matching(PairSpec),
    /// Each in-flight envelope is zeroed with probability `prob`, decided by
    /// hashing `(salt, seq)` so the choice is deterministic per envelope.
    RandomFraction { prob: f64, salt: u64 },
}

impl ReleaseSpec {
    fn matches(&self, e: &Envelope) -> bool {
        match self {
            ReleaseSpec::None => false,
            ReleaseSpec::All => true,
            ReleaseSpec::Matching(p) => p.matches(e),
            ReleaseSpec::RandomFraction { prob, salt } => {
                let mut enc = Enc::new("release");
                enc.u64(*salt).u64(e.seq);
                let d = enc.finish();
                let x = u64::from_le_bytes(d[..8].try_into().unwrap());
                (x as f64) < prob * (u64::MAX as f64)
            }
        }
    }
}

/// The adversary's network choices for one round.
#[derive(Clone, Debug, Default)]
pub struct NetDirective {
    /// Requested synchrony flag; overridden to true at and after GST.
    pub sync: bool,
    pub standing: StandingDelay,
    pub release: ReleaseSpec,
}

/// A directive broke the model's rules.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ModelFault {
    #[error("round {round}: synchronous round with {count} parked envelope(s)")]
    ParkedUnderSync { round: Round, count: usize },
}

pub struct NetSim {
    delta: u64,
    gst: Option<Round>,
    next_seq: u64,
    /// Number of synchronous round-ends so far.
    s_elapsed: u64,
    /// Naturally aging envelopes, keyed by the `s_elapsed` value at which
    /// their countdown reaches zero.
    buckets: BTreeMap<u64, Vec<Envelope>>,
    parked: Vec<Envelope>,
    due: BTreeMap<Round, Vec<Envelope>>,
    flags: Vec<bool>,
    directive: NetDirective,
}

impl NetSim {
    pub fn new(delta: u64, gst: Option<Round>) -> Self {
        assert!(delta >= 1);
        NetSim {
            delta,
            gst,
            next_seq: 0,
            s_elapsed: 0,
            buckets: BTreeMap::new(),
            parked: Vec::new(),
            due: BTreeMap::new(),
            flags: Vec::new(),
            directive: NetDirective::default(),
        }
    }

    /// Install the round's directive and hand back the envelopes due now,
    /// ordered by recipient then send sequence. Call exactly once per round,
    /// rounds ascending from 0.
    pub fn begin_round(&mut self, t: Round, mut directive: NetDirective) -> Vec<Envelope> {
        debug_assert_eq!(self.flags.len() as u64, t, "rounds must be consecutive");
        if self.gst.is_some_and(|g| t >= g) {
            directive.sync = true;
        }
        self.flags.push(directive.sync);
        self.directive = directive;
        let mut due = self.due.remove(&t).unwrap_or_default();
        debug_assert!(self.due.keys().next().is_none_or(|k| *k > t));
        due.sort_by_key(|e| (e.recipient, e.seq));
        due
    }

    /// Whether the current round's (possibly overridden) flag is synchronous.
    pub fn sync_now(&self) -> bool {
        *self.flags.last().expect("begin_round first")
    }

    /// Enqueue one broadcast: an envelope per listed recipient, placed
    /// according to the standing delay directive. Returns the sequence number
    /// identifying the broadcast.
    pub fn broadcast(
        &mut self,
        t: Round,
        sender: NodeId,
        msg: Arc<Msg>,
        recipients: &[NodeId],
    ) -> u64 {
        let broadcast_seq = self.next_seq;
        for &recipient in recipients {
            let e = Envelope {
                seq: self.next_seq,
                sender,
                recipient,
                send_round: t,
                msg: msg.clone(),
            };
            self.next_seq += 1;
            match &self.directive.standing {
                StandingDelay::Normal => {
                    self.buckets.entry(self.s_elapsed + self.delta).or_default().push(e);
                }
                StandingDelay::NextRound => {
                    self.due.entry(t + 1).or_default().push(e);
                }
                StandingDelay::NextRoundExcept(p) => {
                    if p.matches(&e) {
                        self.parked.push(e);
                    } else {
                        self.due.entry(t + 1).or_default().push(e);
                    }
                }
            }
        }
        broadcast_seq
    }

    /// Apply the release directive and the end-of-round countdown rule.
    pub fn end_round(&mut self, t: Round) -> Result<(), ModelFault> {
        // Releases first: they act on everything in flight, including
        // envelopes enqueued this very round.
        if !matches!(self.directive.release, ReleaseSpec::None) {
            let release = self.directive.release.clone();
            let due = self.due.entry(t + 1).or_default();
            for (_, bucket) in self.buckets.iter_mut() {
                let mut kept = Vec::new();
                for e in bucket.drain(..) {
                    if release.matches(&e) {
                        due.push(e);
                    } else {
                        kept.push(e);
                    }
                }
                *bucket = kept;
            }
            self.buckets.retain(|_, b| !b.is_empty());
            let mut kept = Vec::new();
            for e in self.parked.drain(..) {
                if release.matches(&e) {
                    due.push(e);
                } else {
                    kept.push(e);
                }
            }
            self.parked = kept;
        }

        if self.sync_now() {
            if !self.parked.is_empty() {
                return Err(ModelFault::ParkedUnderSync { round: t, count: self.parked.len() });
            }
            self.s_elapsed += 1;
            if let Some(ready) = self.buckets.remove(&self.s_elapsed) {
                self.due.entry(t + 1).or_default().extend(ready);
            }
        }
        Ok(())
    }

    /// Everything still in flight, in no particular order. Strategies may
    /// inspect this; nothing else should.
    pub fn in_flight(&self) -> impl Iterator<Item = &Envelope> {
        self.buckets
            .values()
            .flatten()
            .chain(self.parked.iter())
            .chain(self.due.values().flatten())
    }

    pub fn in_flight_count(&self) -> usize {
        self.buckets.values().map(Vec::len).sum::<usize>()
            + self.parked.len()
            + self.due.values().map(Vec::len).sum::<usize>()
    }

    /// The synchrony flags recorded so far, one per completed or current
    /// round.
    pub fn schedule(&self) -> &[bool] {
        &self.flags
    }

    pub fn delta(&self) -> u64 {
        self.delta
    }

    pub fn gst(&self) -> Option<Round> {
        self.gst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msg::{ConsensusMsg, Transaction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn msg(tag: &str) -> Arc<Msg> {
        Arc::new(Msg::Consensus(ConsensusMsg::TxGossip { tx: Transaction::new(tag) }))
    }

    fn sync() -> NetDirective {
        NetDirective { sync: true, ..Default::default() }
    }

    fn run_round(net: &mut NetSim, t: Round, d: NetDirective) -> Vec<Envelope> {
        let due = net.begin_round(t, d);
        net.end_round(t).unwrap();
        due
    }

    /// Under full synchrony with no extra decrements an envelope arrives at
    /// the start of round send + Δ: the countdown drops at the end of the
    /// send round and each round after, which is the worst-case latency all
    /// the protocol's receipt cutoffs assume.
    #[test]
    fn synchronous_latency_is_delta() {
        for delta in [1u64, 2, 3, 5] {
            let mut net = NetSim::new(delta, None);
            let due = net.begin_round(0, sync());
            assert!(due.is_empty());
            net.broadcast(0, NodeId(0), msg("a"), &[NodeId(1)]);
            net.end_round(0).unwrap();
            for t in 1..delta {
                assert!(run_round(&mut net, t, sync()).is_empty(), "early at Δ={delta} t={t}");
            }
            let due = net.begin_round(delta, sync());
            assert_eq!(due.len(), 1, "Δ={delta}");
            assert_eq!(due[0].send_round, 0);
            net.end_round(delta).unwrap();
        }
    }

    #[test]
    fn zeroing_a_countdown_delivers_next_round() {
        let mut net = NetSim::new(5, None);
        let d = NetDirective { sync: true, release: ReleaseSpec::All, ..Default::default() };
        let due = net.begin_round(0, d);
        assert!(due.is_empty());
        net.broadcast(0, NodeId(0), msg("a"), &[NodeId(1)]);
        net.end_round(0).unwrap();
        let due = net.begin_round(1, sync());
        assert_eq!(due.len(), 1);
        net.end_round(1).unwrap();

        // Same through the standing NextRound directive.
        let mut net = NetSim::new(5, None);
        let d = NetDirective { sync: true, standing: StandingDelay::NextRound, ..Default::default() };
        net.begin_round(0, d);
        net.broadcast(0, NodeId(0), msg("b"), &[NodeId(1)]);
        net.end_round(0).unwrap();
        assert_eq!(net.begin_round(1, sync()).len(), 1);
    }

    #[test]
    fn asynchronous_rounds_freeze_countdowns() {
        let delta = 2u64;
        let mut net = NetSim::new(delta, None);
        net.begin_round(0, NetDirective::default());
        net.broadcast(0, NodeId(0), msg("a"), &[NodeId(1)]);
        net.end_round(0).unwrap();
        // Five fully asynchronous rounds with no decrements: no aging at all.
        for t in 1..=5 {
            assert!(run_round(&mut net, t, NetDirective::default()).is_empty());
        }
        // Synchrony resumes: Δ round-ends later it arrives.
        for t in 6..6 + delta {
            assert!(run_round(&mut net, t, sync()).is_empty(), "t={t}");
        }
        assert_eq!(net.begin_round(6 + delta, sync()).len(), 1);
    }

    #[test]
    fn parked_envelopes_wait_for_their_release() {
        let cut: BTreeSet<NodeId> = [NodeId(1)].into();
        let mut net = NetSim::new(1, None);
        let d = NetDirective {
            sync: false,
            standing: StandingDelay::NextRoundExcept(PairSpec::Touching(cut.clone())),
            ..Default::default()
        };
        net.begin_round(0, d.clone());
        net.broadcast(0, NodeId(0), msg("a"), &[NodeId(1), NodeId(2)]);
        net.end_round(0).unwrap();
        // The copy to node 2 was zeroed; the copy touching node 1 is parked.
        let due = run_round(&mut net, 1, d.clone());
        assert_eq!(due.len(), 1);
        assert_eq!(due[0].recipient, NodeId(2));
        for t in 2..10 {
            assert!(run_round(&mut net, t, d.clone()).is_empty());
        }
        let rel = NetDirective {
            sync: false,
            release: ReleaseSpec::Matching(PairSpec::Touching(cut)),
            ..Default::default()
        };
        run_round(&mut net, 10, rel);
        let due = net.begin_round(11, sync());
        assert_eq!(due.len(), 1);
        assert_eq!(due[0].recipient, NodeId(1));
        net.end_round(11).unwrap();
    }

    #[test]
    fn parked_envelopes_under_a_synchronous_flag_are_a_model_fault() {
        let cut: BTreeSet<NodeId> = [NodeId(1)].into();
        let mut net = NetSim::new(1, None);
        let d = NetDirective {
            sync: false,
            standing: StandingDelay::NextRoundExcept(PairSpec::Touching(cut)),
            ..Default::default()
        };
        net.begin_round(0, d);
        net.broadcast(0, NodeId(0), msg("a"), &[NodeId(1)]);
        net.end_round(0).unwrap();
        net.begin_round(1, sync());
        assert_eq!(net.end_round(1), Err(ModelFault::ParkedUnderSync { round: 1, count: 1 }));
    }

    #[test]
    fn between_matches_only_cross_partition_pairs() {
        let a: BTreeSet<NodeId> = [NodeId(0), NodeId(1)].into();
        let b: BTreeSet<NodeId> = [NodeId(2)].into();
        let spec = PairSpec::Between(a, b);
        let env = |s: u32, r: u32| Envelope {
            seq: 0,
            sender: NodeId(s),
            recipient: NodeId(r),
            send_round: 0,
            msg: msg("x"),
        };
        assert!(spec.matches(&env(0, 2)));
        assert!(spec.matches(&env(2, 1)));
        assert!(!spec.matches(&env(0, 1)));
        assert!(!spec.matches(&env(3, 2)));
    }

    #[test]
    fn gst_forces_synchrony_and_flushes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..50 {
            let delta = rng.gen_range(1..=3);
            let gst: Round = rng.gen_range(5..40);
            let mut net = NetSim::new(delta, Some(gst));
            let mut sent = 0u64;
            let mut got = 0u64;
            for t in 0..gst + delta + 1 {
                let d = NetDirective {
                    sync: rng.gen_bool(0.5),
                    standing: if rng.gen_bool(0.3) {
                        StandingDelay::NextRound
                    } else {
                        StandingDelay::Normal
                    },
                    release: if rng.gen_bool(0.2) {
                        ReleaseSpec::RandomFraction { prob: 0.5, salt: rng.gen() }
                    } else {
                        ReleaseSpec::None
                    },
                };
                let due = net.begin_round(t, d);
                got += due.len() as u64;
                if t >= gst {
                    assert!(net.sync_now(), "case {case}: flag not forced at {t}");
                }
                if t < gst && rng.gen_bool(0.8) {
                    net.broadcast(t, NodeId(0), msg(&format!("{case}-{t}")), &[NodeId(1)]);
                    sent += 1;
                }
                net.end_round(t).unwrap();
            }
            assert_eq!(got, sent, "case {case}: all pre-GST sends arrive by GST + Δ");
            assert_eq!(net.in_flight_count(), 0);
        }
    }

    #[test]
    fn random_fraction_is_deterministic_and_roughly_proportional() {
        let e = |seq: u64| Envelope {
            seq,
            sender: NodeId(0),
            recipient: NodeId(1),
            send_round: 0,
            msg: msg("x"),
        };
        let spec = ReleaseSpec::RandomFraction { prob: 0.3, salt: 42 };
        let hits = (0..10_000).filter(|s| spec.matches(&e(*s))).count();
        assert!((hits as f64 / 10_000.0 - 0.3).abs() < 0.02, "hits={hits}");
        for s in 0..100 {
            assert_eq!(spec.matches(&e(s)), spec.matches(&e(s)));
        }
    }

    #[test]
    fn deliveries_are_sorted_by_recipient_then_seq() {
        let mut net = NetSim::new(1, None);
        net.begin_round(0, sync());
        net.broadcast(0, NodeId(2), msg("a"), &[NodeId(3), NodeId(1)]);
        net.broadcast(0, NodeId(0), msg("b"), &[NodeId(1)]);
        net.end_round(0).unwrap();
        let due = net.begin_round(1, sync());
        let order: Vec<(NodeId, u64)> = due.iter().map(|e| (e.recipient, e.seq)).collect();
        assert_eq!(order, vec![(NodeId(1), 1), (NodeId(1), 2), (NodeId(3), 0)]);
        net.end_round(1).unwrap();
    }
}
