//! Built-in adversary strategies.
//!
//! A strategy is the whole adversary for one run: each round it chooses the
//! network directive, sees every delivery in the system, and speaks for the
//! corrupted nodes. It never forges an honest signer; the run loop checks
//! that every message a strategy originates is authored by a corrupted node
//! (re-sending an already-originated message is relaying and is fine).
//! Everything a strategy does is a pure function of the trace so far and its
//! seed, so runs replay exactly.
//!
//! Corrupted nodes that are not simply silent run the honest state machine
//! internally as a replica. Deviations are then expressed as routing around
//! those replicas: feeding deliveries late, holding outputs back, splitting
//! outputs across audience subsets, or appending fabrications. That keeps
//! the deviant behavior legible and makes emulated delay literally the
//! honest protocol on a shifted clock.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::consensus::{leader_for_view, view_of_round, NodeState, StepFx};
use crate::ids::{BlockId, MsgId, NodeId, Round, View};
use crate::msg::{Block, ConsensusMsg, Msg, Stage, Transaction};
use crate::netsim::{Envelope, NetDirective, PairSpec, ReleaseSpec, StandingDelay};
use crate::transcript::Transcript;

/// Everything the strategy observes when acting at one round: the full
/// delivery batch (to every node, honest or not) and the transactions the
/// scenario injects this round.
pub struct StrategyIo<'a> {
    pub t: Round,
    pub deliveries: &'a [Envelope],
    pub injections: &'a [(NodeId, Transaction)],
}

/// Audience of one adversarial broadcast.
#[derive(Clone, Debug)]
pub enum Recipients {
    /// Every node except the sender, like an honest broadcast.
    Others,
    /// Exactly these nodes.
    Only(Vec<NodeId>),
}

/// One message sent on behalf of a corrupted node.
pub struct AdvSend {
    pub from: NodeId,
    pub to: Recipients,
    pub msg: Arc<Msg>,
}

impl AdvSend {
    fn to_others(from: NodeId, msg: Arc<Msg>) -> Self {
        AdvSend { from, to: Recipients::Others, msg }
    }
}

/// A deterministic adversary. `directive` is asked at the top of each round,
/// before deliveries pop; `act` runs after the honest nodes have stepped and
/// returns the corrupted nodes' sends for the round.
pub trait Strategy {
    fn corrupt(&self) -> &BTreeSet<NodeId>;
    fn directive(&mut self, t: Round) -> NetDirective;
    fn act(&mut self, io: &StrategyIo<'_>) -> Vec<AdvSend>;
}

fn sync_directive() -> NetDirective {
    NetDirective { sync: true, standing: StandingDelay::Normal, release: ReleaseSpec::None }
}

/// The honest state machine run inside a strategy for one corrupted node.
struct Replica {
    node: NodeState,
}

impl Replica {
    fn new(id: NodeId, n: u32, delta: u64, seed: u64) -> Self {
        Replica { node: NodeState::new(id, n, delta, seed) }
    }

    fn id(&self) -> NodeId {
        self.node.id
    }

    /// One round of the honest protocol; returns the messages an honest node
    /// would broadcast.
    fn step(
        &mut self,
        t: Round,
        delivered: &[Arc<ConsensusMsg>],
        injected: &[Transaction],
    ) -> Vec<Arc<Msg>> {
        let mut fx = StepFx::default();
        self.node.step(t, delivered, injected, &mut fx);
        fx.out.into_iter().map(|e| e.msg).collect()
    }
}

/// Consensus payloads addressed to `node` in this round's batch.
fn consensus_to(io: &StrategyIo<'_>, node: NodeId) -> Vec<Arc<ConsensusMsg>> {
    io.deliveries
        .iter()
        .filter(|e| e.recipient == node)
        .filter_map(|e| e.msg.as_consensus().map(|c| Arc::new(c.clone())))
        .collect()
}

/// Transactions the scenario injects at `node` this round.
fn injected_at(io: &StrategyIo<'_>, node: NodeId) -> Vec<Transaction> {
    io.injections.iter().filter(|(n, _)| *n == node).map(|(_, tx)| tx.clone()).collect()
}

// ---------------------------------------------------------------------------
// Crash and silent censorship

/// Corrupted nodes that never send anything. `async_until` optionally keeps
/// the network asynchronous (all countdowns frozen) before that round, which
/// is how a GST phase is staged in front of an otherwise quiet failure.
pub struct CrashStrategy {
    corrupt: BTreeSet<NodeId>,
    async_until: Option<Round>,
}

/// The listed nodes halt from round 0.
pub fn make_crash(crash_set: BTreeSet<NodeId>, async_until: Option<Round>) -> CrashStrategy {
    CrashStrategy { corrupt: crash_set, async_until }
}

/// The `f` highest-numbered nodes withhold every message, silently censoring
/// the protocol while the network itself stays synchronous.
pub fn make_silent_censor(n: u32, f: u32) -> CrashStrategy {
    assert!(f <= n);
    CrashStrategy { corrupt: (n - f..n).map(NodeId).collect(), async_until: None }
}

impl Strategy for CrashStrategy {
    fn corrupt(&self) -> &BTreeSet<NodeId> {
        &self.corrupt
    }

    fn directive(&mut self, t: Round) -> NetDirective {
        match self.async_until {
            Some(u) if t < u => NetDirective {
                sync: false,
                standing: StandingDelay::Normal,
                release: ReleaseSpec::None,
            },
            _ => sync_directive(),
        }
    }

    fn act(&mut self, _io: &StrategyIo<'_>) -> Vec<AdvSend> {
        Vec::new()
    }
}

// ---------------------------------------------------------------------------
// Split brain

/// Corrupted middle set `P2` playing two worlds at once: toward `P1` it runs
/// one honest persona, toward `P3` another, while the network keeps the two
/// honest sides apart until `gst`. Deliveries are routed to the persona of
/// the sender's side, so each persona's view is one consistent world. After
/// `gst` the partition heals and the corrupted nodes go silent.
pub struct SplitBrainStrategy {
    corrupt: BTreeSet<NodeId>,
    p1: BTreeSet<NodeId>,
    p3: BTreeSet<NodeId>,
    gst: Round,
    delta: u64,
    world1: Vec<Replica>,
    world2: Vec<Replica>,
    /// Persona outputs in transit between corrupted peers, arriving Δ rounds
    /// after emission like any other broadcast.
    inbox1: BTreeMap<Round, Vec<Arc<ConsensusMsg>>>,
    inbox2: BTreeMap<Round, Vec<Arc<ConsensusMsg>>>,
}

pub fn make_split_brain(
    n: u32,
    delta: u64,
    seed: u64,
    p1: BTreeSet<NodeId>,
    p2: BTreeSet<NodeId>,
    p3: BTreeSet<NodeId>,
    gst: Round,
) -> Result<SplitBrainStrategy, String> {
    let mut all = BTreeSet::new();
    for s in [&p1, &p2, &p3] {
        for &x in s {
            if !all.insert(x) {
                return Err(format!("split_brain: node {} appears in two parts", x.0));
            }
        }
    }
    if all != (0..n).map(NodeId).collect() {
        return Err("split_brain: parts must cover exactly the node set".into());
    }
    if p1.is_empty() || p3.is_empty() {
        return Err("split_brain: both honest sides must be nonempty".into());
    }
    let world1 = p2.iter().map(|&c| Replica::new(c, n, delta, seed)).collect();
    let world2 = p2.iter().map(|&c| Replica::new(c, n, delta, seed)).collect();
    Ok(SplitBrainStrategy {
        corrupt: p2,
        p1,
        p3,
        gst,
        delta,
        world1,
        world2,
        inbox1: BTreeMap::new(),
        inbox2: BTreeMap::new(),
    })
}

impl Strategy for SplitBrainStrategy {
    fn corrupt(&self) -> &BTreeSet<NodeId> {
        &self.corrupt
    }

    fn directive(&mut self, t: Round) -> NetDirective {
        if t >= self.gst {
            return sync_directive();
        }
        let cut = PairSpec::Between(self.p1.clone(), self.p3.clone());
        NetDirective {
            sync: false,
            standing: StandingDelay::NextRoundExcept(cut.clone()),
            // Drain the parked lane on the last asynchronous round so the
            // forced-synchronous round at gst finds it empty.
            release: if t + 1 == self.gst { ReleaseSpec::Matching(cut) } else { ReleaseSpec::None },
        }
    }

    fn act(&mut self, io: &StrategyIo<'_>) -> Vec<AdvSend> {
        if io.t >= self.gst {
            // The damage is done once the worlds can compare notes; the
            // corrupted set contributes nothing to reconciliation.
            return Vec::new();
        }
        let mut sends = Vec::new();
        let internal1 = self.inbox1.remove(&io.t).unwrap_or_default();
        let internal2 = self.inbox2.remove(&io.t).unwrap_or_default();
        let mut emitted1 = Vec::new();
        let mut emitted2 = Vec::new();
        for (w, (replicas, internal, side)) in [
            (&mut self.world1, &internal1, &self.p1),
            (&mut self.world2, &internal2, &self.p3),
        ]
        .into_iter()
        .enumerate()
        {
            for r in replicas.iter_mut() {
                let c = r.id();
                let mut feed: Vec<Arc<ConsensusMsg>> = consensus_to(io, c)
                    .into_iter()
                    .filter(|m| {
                        // Classify by envelope sender: before gst a side only
                        // holds content from its own world.
                        io.deliveries.iter().any(|e| {
                            e.recipient == c
                                && e.msg.as_consensus().is_some_and(|x| x.content_id() == m.content_id())
                                && side.contains(&e.sender)
                        })
                    })
                    .collect();
                feed.extend(internal.iter().cloned());
                let inj = injected_at(io, c);
                for msg in r.step(io.t, &feed, &inj) {
                    sends.push(AdvSend {
                        from: c,
                        to: Recipients::Only(side.iter().copied().collect()),
                        msg: msg.clone(),
                    });
                    if let Some(cm) = msg.as_consensus() {
                        if w == 0 {
                            emitted1.push(Arc::new(cm.clone()));
                        } else {
                            emitted2.push(Arc::new(cm.clone()));
                        }
                    }
                }
            }
        }
        self.inbox1.entry(io.t + self.delta).or_default().extend(emitted1);
        self.inbox2.entry(io.t + self.delta).or_default().extend(emitted2);
        sends
    }
}

// ---------------------------------------------------------------------------
// Partition cycler

/// The rotating-partition lower-bound family. The schedule splits the first
/// detection window into `k` equal intervals; in interval `k - j + 1` all
/// traffic touching group `P_j` is delayed to the interval's end. In variant
/// `i` group `P_i` is honest and its delay is real network asynchrony; every
/// other rotating group is corrupted and only emulates the delay by
/// buffering, while the network stays synchronous. `P_0` is crashed
/// throughout and the large group `P_{k+1}` is honest and untouched.
///
/// The emulation reproduces the real-delay timing exactly (with Δ = 1):
/// a real cut parks traffic during directive rounds `[a-1, b-1]` and releases
/// it into round `b`, so the emulating group buffers deliveries of rounds
/// `[a, b-1]` and feeds them to its replica at `b`, holds the replica's
/// outputs of rounds `[a-1, b-2]` and broadcasts them at `b-1` (arriving at
/// `b`), and from `b` onward passes everything through unchanged. The round
/// before the interval is included because a send in it would otherwise
/// already be in flight and arrive inside the interval.
pub struct PartitionCyclerStrategy {
    corrupt: BTreeSet<NodeId>,
    groups: Vec<BTreeSet<NodeId>>,
    real: usize,
    interval: Round,
    k: usize,
    delta: u64,
    replicas: Vec<(usize, Replica)>,
    buffered: HashMap<NodeId, Vec<Arc<ConsensusMsg>>>,
    held: HashMap<NodeId, Vec<Arc<Msg>>>,
}

/// Rounds `[a, b)` of the cut interval for rotating group `j` (1-based).
fn cycler_cut(k: usize, interval: Round, j: usize) -> (Round, Round) {
    let m = (k - j + 1) as Round;
    ((m - 1) * interval, m * interval)
}

pub fn make_partition_cycler(
    n: u32,
    delta: u64,
    seed: u64,
    k: usize,
    groups: Vec<BTreeSet<NodeId>>,
    real: usize,
    window: Round,
) -> Result<PartitionCyclerStrategy, String> {
    if k < 1 || groups.len() != k + 2 {
        return Err(format!("partition_cycler: need groups P_0 .. P_{}", k + 1));
    }
    if window == 0 || window % (k as Round) != 0 {
        return Err(format!("partition_cycler: k = {k} must divide the window {window}"));
    }
    if delta != 1 {
        // The emulated and real cut agree round-for-round only when the
        // synchronous latency equals the next-round latency of the
        // asynchronous standing delay.
        return Err("partition_cycler: requires delta = 1".into());
    }
    if !(1..=k).contains(&real) {
        return Err(format!("partition_cycler: real group index {real} out of 1..={k}"));
    }
    let mut all = BTreeSet::new();
    for g in &groups {
        for &x in g {
            if !all.insert(x) {
                return Err(format!("partition_cycler: node {} appears in two groups", x.0));
            }
        }
    }
    if all != (0..n).map(NodeId).collect() {
        return Err("partition_cycler: groups must cover exactly the node set".into());
    }
    let mut corrupt: BTreeSet<NodeId> = groups[0].clone();
    let mut replicas = Vec::new();
    for j in 1..=k {
        if j == real {
            continue;
        }
        for &c in &groups[j] {
            corrupt.insert(c);
            replicas.push((j, Replica::new(c, n, delta, seed)));
        }
    }
    Ok(PartitionCyclerStrategy {
        corrupt,
        groups,
        real,
        interval: window / k as Round,
        k,
        delta,
        replicas,
        buffered: HashMap::new(),
        held: HashMap::new(),
    })
}

impl Strategy for PartitionCyclerStrategy {
    fn corrupt(&self) -> &BTreeSet<NodeId> {
        &self.corrupt
    }

    fn directive(&mut self, t: Round) -> NetDirective {
        let (a, b) = cycler_cut(self.k, self.interval, self.real);
        let lo = a.saturating_sub(1);
        if t < lo || t > b - 1 {
            return sync_directive();
        }
        let cut = PairSpec::Touching(self.groups[self.real].clone());
        NetDirective {
            sync: false,
            standing: StandingDelay::NextRoundExcept(cut.clone()),
            release: if t == b - 1 { ReleaseSpec::Matching(cut) } else { ReleaseSpec::None },
        }
    }

    fn act(&mut self, io: &StrategyIo<'_>) -> Vec<AdvSend> {
        let _ = self.delta;
        let mut sends = Vec::new();
        for (j, r) in self.replicas.iter_mut() {
            let c = r.id();
            let (a, b) = cycler_cut(self.k, self.interval, *j);
            let incoming = consensus_to(io, c);
            let mut feed = Vec::new();
            if io.t >= a && io.t < b {
                self.buffered.entry(c).or_default().extend(incoming);
            } else {
                if io.t == b {
                    feed.extend(self.buffered.remove(&c).unwrap_or_default());
                }
                feed.extend(incoming);
            }
            // Injections are local input, not network traffic: they reach the
            // replica immediately even while its group is cut off.
            let inj = injected_at(io, c);
            let outs = r.step(io.t, &feed, &inj);
            let hold_lo = a.saturating_sub(1);
            if io.t >= hold_lo && io.t + 2 <= b {
                self.held.entry(c).or_default().extend(outs);
            } else if io.t + 1 == b {
                for msg in self.held.remove(&c).unwrap_or_default().into_iter().chain(outs) {
                    sends.push(AdvSend::to_others(c, msg));
                }
            } else {
                for msg in outs {
                    sends.push(AdvSend::to_others(c, msg));
                }
            }
        }
        sends
    }
}

// ---------------------------------------------------------------------------
// Equivocating leader

/// A single corrupted node that follows the protocol except in the listed
/// views, where as leader it proposes two conflicting blocks, each to a
/// different half of the audience. Honest relaying spreads both halves, so
/// synchronous honest nodes observe the equivocation before their stage-1
/// vote and abstain.
pub struct EquivocatingLeaderStrategy {
    corrupt: BTreeSet<NodeId>,
    node: NodeId,
    views: BTreeSet<View>,
    replica: Replica,
    n: u32,
    delta: u64,
}

pub fn make_equivocating_leader(
    n: u32,
    delta: u64,
    seed: u64,
    node: NodeId,
    views: BTreeSet<View>,
) -> Result<EquivocatingLeaderStrategy, String> {
    for &v in &views {
        let l = leader_for_view(seed, n, v);
        if l != node {
            return Err(format!(
                "equivocating_leader: node {} is not the leader of view {v} (node {} is)",
                node.0, l.0
            ));
        }
    }
    Ok(EquivocatingLeaderStrategy {
        corrupt: BTreeSet::from([node]),
        node,
        views,
        replica: Replica::new(node, n, delta, seed),
        n,
        delta,
    })
}

impl Strategy for EquivocatingLeaderStrategy {
    fn corrupt(&self) -> &BTreeSet<NodeId> {
        &self.corrupt
    }

    fn directive(&mut self, _t: Round) -> NetDirective {
        sync_directive()
    }

    fn act(&mut self, io: &StrategyIo<'_>) -> Vec<AdvSend> {
        let feed = consensus_to(io, self.node);
        let inj = injected_at(io, self.node);
        let v = view_of_round(io.t, self.delta);
        let mut sends = Vec::new();
        for msg in self.replica.step(io.t, &feed, &inj) {
            let twin = match msg.as_consensus() {
                Some(ConsensusMsg::Proposal { block, signer }) if self.views.contains(&v) => {
                    let mut txs = block.txs.clone();
                    txs.reverse();
                    if txs == block.txs {
                        txs.push(Transaction::new(format!("equivocation filler v{v}")));
                    }
                    let other = Block::new(block.view, block.justify.clone(), txs, *signer);
                    Some(Arc::new(Msg::Consensus(ConsensusMsg::Proposal {
                        block: Arc::new(other),
                        signer: *signer,
                    })))
                }
                _ => None,
            };
            match twin {
                Some(other) => {
                    let (mut evens, mut odds) = (Vec::new(), Vec::new());
                    for i in (0..self.n).map(NodeId) {
                        if i == self.node {
                            continue;
                        }
                        if i.0 % 2 == 0 {
                            evens.push(i);
                        } else {
                            odds.push(i);
                        }
                    }
                    sends.push(AdvSend { from: self.node, to: Recipients::Only(evens), msg });
                    sends.push(AdvSend { from: self.node, to: Recipients::Only(odds), msg: other });
                }
                None => sends.push(AdvSend::to_others(self.node, msg)),
            }
        }
        sends
    }
}

// ---------------------------------------------------------------------------
// Transcript framer

/// What the framer changes about its base strategy's evidence. With both
/// fields empty the wrapper is a strict pass-through.
#[derive(Clone, Debug, Default)]
pub struct FramerAlterations {
    /// Honest nodes whose messages are omitted from the fabricated
    /// transcripts, making them look silent.
    pub targets: BTreeSet<NodeId>,
    /// One corrupted node that submits two conflicting transcripts per
    /// boundary, exercising the ⊥ rule.
    pub equivocator: Option<NodeId>,
}

/// Wraps a base strategy and additionally has every corrupted node submit a
/// fabricated receipt snapshot at each super-view boundary. The fabrications
/// are built from messages really observed on the wire (the adversary reads
/// all traffic), so no honest signature is forged; the lie is in what is
/// omitted and in posing as a diligent witness.
pub struct TranscriptFramerStrategy {
    base: Box<dyn Strategy>,
    alter: FramerAlterations,
    delta_prime: Round,
    observed: Vec<(Arc<ConsensusMsg>, Round)>,
    seen: HashSet<MsgId>,
}

pub fn make_transcript_framer(
    base: Box<dyn Strategy>,
    alter: FramerAlterations,
    delta_prime: Round,
) -> Result<TranscriptFramerStrategy, String> {
    if delta_prime == 0 {
        return Err("transcript_framer: delta_prime must be positive".into());
    }
    if let Some(e) = alter.equivocator {
        if !base.corrupt().contains(&e) {
            return Err(format!("transcript_framer: equivocator {} is not corrupted", e.0));
        }
    }
    Ok(TranscriptFramerStrategy {
        base,
        alter,
        delta_prime,
        observed: Vec::new(),
        seen: HashSet::new(),
    })
}

impl Strategy for TranscriptFramerStrategy {
    fn corrupt(&self) -> &BTreeSet<NodeId> {
        self.base.corrupt()
    }

    fn directive(&mut self, t: Round) -> NetDirective {
        self.base.directive(t)
    }

    fn act(&mut self, io: &StrategyIo<'_>) -> Vec<AdvSend> {
        for e in io.deliveries {
            if let Some(c) = e.msg.as_consensus() {
                if self.seen.insert(c.content_id()) {
                    self.observed.push((Arc::new(c.clone()), io.t));
                }
            }
        }
        let mut sends = self.base.act(io);
        let altering = !self.alter.targets.is_empty() || self.alter.equivocator.is_some();
        if altering && io.t > 0 && io.t % self.delta_prime == 0 {
            let entries: Vec<(Arc<ConsensusMsg>, Round)> = self
                .observed
                .iter()
                .filter(|(m, _)| {
                    m.author().is_none_or(|a| !self.alter.targets.contains(&a))
                })
                .cloned()
                .collect();
            for &c in self.base.corrupt().iter() {
                let snap = Transcript::from_entries(c, io.t, entries.clone());
                sends.push(AdvSend::to_others(c, Arc::new(Msg::Account(crate::msg::AccountMsg::Snapshot(snap)))));
                if self.alter.equivocator == Some(c) {
                    let second = Transcript::from_entries(c, io.t, Vec::new());
                    sends.push(AdvSend::to_others(c, Arc::new(Msg::Account(crate::msg::AccountMsg::Snapshot(second)))));
                }
            }
        }
        sends
    }
}

// ---------------------------------------------------------------------------
// Random delay schedules

/// Seeded fuzzing adversary: the synchrony flags follow a Markov chain, the
/// standing-delay and release directives are drawn at random each
/// asynchronous round, and the corrupted nodes run honest replicas whose
/// outputs are randomly suppressed and garnished with junk votes, twin
/// proposals, and opaque noise. Every asynchronous stretch ends with a full
/// release so the parked lane is empty whenever a synchronous round begins.
pub struct RandomDelayStrategy {
    corrupt: BTreeSet<NodeId>,
    n: u32,
    delta: u64,
    flag_rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    flags: Vec<bool>,
    replicas: Vec<Replica>,
    known_blocks: Vec<(View, BlockId)>,
    p_silent: f64,
    p_junk: f64,
}

pub fn make_random_delay(n: u32, delta: u64, seed: u64, f: u32) -> RandomDelayStrategy {
    assert!(f <= n);
    let corrupt: BTreeSet<NodeId> = (n - f..n).map(NodeId).collect();
    let replicas = corrupt.iter().map(|&c| Replica::new(c, n, delta, seed)).collect();
    RandomDelayStrategy {
        corrupt,
        n,
        delta,
        flag_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        act_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d),
        flags: vec![true],
        replicas,
        known_blocks: Vec::new(),
        p_silent: 0.25,
        p_junk: 0.15,
    }
}

impl RandomDelayStrategy {
    fn flag(&mut self, t: Round) -> bool {
        while self.flags.len() as Round <= t {
            let prev = *self.flags.last().unwrap();
            let stay = if prev { 0.7 } else { 0.85 };
            let next = if self.flag_rng.gen_bool(stay) { prev } else { !prev };
            self.flags.push(next);
        }
        self.flags[t as usize]
    }

    fn random_pairs(&mut self) -> PairSpec {
        let pick: BTreeSet<NodeId> = (0..self.n)
            .map(NodeId)
            .filter(|_| self.act_rng.gen_bool(0.3))
            .collect();
        if self.act_rng.gen_bool(0.5) || pick.is_empty() {
            let one = NodeId(self.act_rng.gen_range(0..self.n));
            PairSpec::Touching(BTreeSet::from([one]))
        } else {
            let rest = (0..self.n).map(NodeId).filter(|x| !pick.contains(x)).collect();
            PairSpec::Between(pick, rest)
        }
    }
}

impl Strategy for RandomDelayStrategy {
    fn corrupt(&self) -> &BTreeSet<NodeId> {
        &self.corrupt
    }

    fn directive(&mut self, t: Round) -> NetDirective {
        let now = self.flag(t);
        let next = self.flag(t + 1);
        if now {
            return sync_directive();
        }
        let standing = match self.flag_rng.gen_range(0..4u8) {
            0 => StandingDelay::Normal,
            1 => StandingDelay::NextRound,
            _ => StandingDelay::NextRoundExcept(self.random_pairs()),
        };
        let release = if next {
            ReleaseSpec::All
        } else {
            match self.flag_rng.gen_range(0..8u8) {
                0 => ReleaseSpec::All,
                1 => ReleaseSpec::Matching(self.random_pairs()),
                2 => ReleaseSpec::RandomFraction { prob: self.flag_rng.gen(), salt: t },
                _ => ReleaseSpec::None,
            }
        };
        NetDirective { sync: false, standing, release }
    }

    fn act(&mut self, io: &StrategyIo<'_>) -> Vec<AdvSend> {
        for e in io.deliveries {
            if let Some(ConsensusMsg::Proposal { block, .. }) = e.msg.as_consensus() {
                if !self.known_blocks.iter().any(|(_, id)| *id == block.id) {
                    self.known_blocks.push((block.view, block.id));
                }
            }
        }
        let mut sends = Vec::new();
        let v = view_of_round(io.t, self.delta);
        for r in self.replicas.iter_mut() {
            let c = r.id();
            let feed = consensus_to(io, c);
            let inj = injected_at(io, c);
            let outs = r.step(io.t, &feed, &inj);
            if self.act_rng.gen_bool(self.p_silent) {
                continue;
            }
            for msg in outs {
                // Twin only proposals the replica itself authored; relayed
                // honest proposals must pass through untouched.
                if let Some(ConsensusMsg::Proposal { block, signer }) = msg.as_consensus() {
                    if *signer == c && self.act_rng.gen_bool(0.5) {
                        let mut txs = block.txs.clone();
                        txs.push(Transaction::new(format!("fork bait {c:?} v{v}")));
                        let other = Block::new(block.view, block.justify.clone(), txs, *signer);
                        let twin = Arc::new(Msg::Consensus(ConsensusMsg::Proposal {
                            block: Arc::new(other),
                            signer: *signer,
                        }));
                        let half: Vec<NodeId> =
                            (0..self.n).map(NodeId).filter(|x| x.0 % 2 == 0 && *x != c).collect();
                        sends.push(AdvSend { from: c, to: Recipients::Only(half), msg: twin });
                    }
                }
                sends.push(AdvSend::to_others(c, msg));
            }
            if self.act_rng.gen_bool(self.p_junk) && !self.known_blocks.is_empty() {
                let &(bv, bid) = self.known_blocks.choose(&mut self.act_rng).unwrap();
                let stage = if self.act_rng.gen_bool(0.5) { Stage::Stage1 } else { Stage::Stage2 };
                let view = if self.act_rng.gen_bool(0.5) { bv } else { v };
                let junk = ConsensusMsg::Vote { stage, view, block: bid, signer: c };
                sends.push(AdvSend::to_others(c, Arc::new(Msg::Consensus(junk))));
            }
            if self.act_rng.gen_bool(0.05) {
                let bytes = vec![self.act_rng.gen::<u8>(); 4];
                let noise = ConsensusMsg::Opaque { bytes, signer: c };
                sends.push(AdvSend::to_others(c, Arc::new(Msg::Consensus(noise))));
            }
        }
        sends
    }
}
