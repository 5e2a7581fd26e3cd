//! Ground-truth checkers fed by the omniscient simulation trace.
//!
//! [`LivenessOracle`] decides, each round, whether a timely-liveness
//! violation is in progress: some transaction that every honest node
//! possessed a full window ago is still missing from the current logs of
//! more than τL honest nodes. The world feeds it possession and confirmation
//! events as they happen; the per-round query is O(1).
//!
//! [`SafetyChecker`] watches confirmed logs for consistency: every honest
//! log must be a prefix of the longest honest log seen so far. A divergence
//! is recorded, not panicked on, since some adversary scenarios are built
//! precisely to break safety observably.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ids::{BlockId, NodeId, Round, TxId};

pub struct LivenessOracle {
    window: u64,
    tau_l: u32,
    honest: BTreeSet<NodeId>,
    /// Per transaction: which honest nodes have possessed it (via injection
    /// or gossip), and since when.
    possessed: HashMap<TxId, BTreeMap<NodeId, Round>>,
    /// Round by which all honest nodes possessed the transaction.
    complete_at: HashMap<TxId, Round>,
    /// Honest nodes whose current log contains the transaction.
    in_log: HashMap<TxId, BTreeSet<NodeId>>,
    /// Complete transactions currently missing from more than τL honest
    /// logs, keyed by completion round for the O(1) eligibility check.
    hot: BTreeSet<(Round, TxId)>,
}

impl LivenessOracle {
    pub fn new(window: u64, tau_l: u32, honest: BTreeSet<NodeId>) -> Self {
        LivenessOracle {
            window,
            tau_l,
            honest,
            possessed: HashMap::new(),
            complete_at: HashMap::new(),
            in_log: HashMap::new(),
            hot: BTreeSet::new(),
        }
    }

    fn missing_count(&self, tx: TxId) -> usize {
        let held = self.in_log.get(&tx).map_or(0, |s| s.len());
        self.honest.len() - held
    }

    fn refresh_hot(&mut self, tx: TxId) {
        let Some(at) = self.complete_at.get(&tx).copied() else { return };
        if self.missing_count(tx) > self.tau_l as usize {
            self.hot.insert((at, tx));
        } else {
            self.hot.remove(&(at, tx));
        }
    }

    /// An honest node first held the transaction at round `t` (injection or
    /// gossip receipt). Later calls for the same pair are ignored.
    pub fn possession(&mut self, node: NodeId, tx: TxId, t: Round) {
        if !self.honest.contains(&node) {
            return;
        }
        let per_node = self.possessed.entry(tx).or_default();
        per_node.entry(node).or_insert(t);
        if per_node.len() == self.honest.len() && !self.complete_at.contains_key(&tx) {
            let complete = per_node.values().copied().max().unwrap();
            self.complete_at.insert(tx, complete);
            self.refresh_hot(tx);
        }
    }

    /// An honest node's log grew by these transactions.
    pub fn confirmed(&mut self, node: NodeId, new_txs: &[TxId]) {
        if !self.honest.contains(&node) {
            return;
        }
        for tx in new_txs {
            self.in_log.entry(*tx).or_default().insert(node);
            self.refresh_hot(*tx);
        }
    }

    /// An honest node's log was replaced wholesale (a confirmation that did
    /// not extend the previous chain). Membership is recomputed for every
    /// tracked transaction.
    pub fn log_replaced(&mut self, node: NodeId, log: &HashSet<TxId>) {
        if !self.honest.contains(&node) {
            return;
        }
        let tracked: Vec<TxId> =
            self.possessed.keys().chain(self.in_log.keys()).copied().collect();
        for tx in tracked {
            let held = self.in_log.entry(tx).or_default();
            if log.contains(&tx) {
                held.insert(node);
            } else {
                held.remove(&node);
            }
            self.refresh_hot(tx);
        }
    }

    /// True iff a timely-liveness violation holds at round `t`: some
    /// transaction complete by `t − window` is absent from the round-`t`
    /// logs of more than τL honest nodes.
    pub fn fires(&self, t: Round) -> bool {
        self.hot.first().is_some_and(|(complete, _)| complete + self.window <= t)
    }

    /// The transactions witnessing a violation at round `t`.
    pub fn witnesses(&self, t: Round) -> Vec<TxId> {
        self.hot
            .iter()
            .take_while(|(complete, _)| complete + self.window <= t)
            .map(|(_, tx)| *tx)
            .collect()
    }
}

/// A recorded log divergence between one node and the canonical chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyViolation {
    pub round: Round,
    pub node: NodeId,
    pub height: usize,
    pub ours: BlockId,
    pub canonical: BlockId,
}

#[derive(Default)]
pub struct SafetyChecker {
    canonical: Vec<BlockId>,
    violations: Vec<SafetyViolation>,
    violation_count: u64,
}

impl SafetyChecker {
    const KEEP: usize = 256;

    /// Check a confirmed log against the canonical chain, extending the
    /// canonical chain if this one is longer. Call whenever a log changes.
    pub fn observe(&mut self, t: Round, node: NodeId, log_blocks: &[BlockId]) {
        for (height, (ours, canon)) in
            log_blocks.iter().zip(self.canonical.iter()).enumerate()
        {
            if ours != canon {
                self.violation_count += 1;
                if self.violations.len() < Self::KEEP {
                    self.violations.push(SafetyViolation {
                        round: t,
                        node,
                        height,
                        ours: *ours,
                        canonical: *canon,
                    });
                }
                return;
            }
        }
        if log_blocks.len() > self.canonical.len() {
            self.canonical = log_blocks.to_vec();
        }
    }

    pub fn violations(&self) -> &[SafetyViolation] {
        &self.violations
    }

    pub fn violation_count(&self) -> u64 {
        self.violation_count
    }

    pub fn is_safe(&self) -> bool {
        self.violation_count == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::Enc;
    use crate::msg::Transaction;

    fn honest(ids: &[u32]) -> BTreeSet<NodeId> {
        ids.iter().copied().map(NodeId).collect()
    }

    fn tx(p: &str) -> TxId {
        Transaction::new(p).id
    }

    #[test]
    fn confirmed_everywhere_never_fires() {
        let mut o = LivenessOracle::new(10, 1, honest(&[0, 1, 2]));
        let t1 = tx("a");
        for (i, r) in [(0, 3), (1, 4), (2, 5)] {
            o.possession(NodeId(i), t1, r);
        }
        for i in 0..3 {
            o.confirmed(NodeId(i), &[t1]);
        }
        for t in 0..100 {
            assert!(!o.fires(t));
        }
    }

    #[test]
    fn unconfirmed_transaction_fires_after_the_window() {
        let mut o = LivenessOracle::new(10, 1, honest(&[0, 1, 2, 3]));
        let t1 = tx("a");
        for i in 0..4 {
            o.possession(NodeId(i), t1, 5 + i as u64);
        }
        // Complete at 8; missing from all 4 > τL = 1.
        assert!(!o.fires(17), "window not yet elapsed");
        assert!(o.fires(18));
        assert_eq!(o.witnesses(18), vec![t1]);
        // Confirmations at two nodes leave 2 missing: still > 1.
        o.confirmed(NodeId(0), &[t1]);
        o.confirmed(NodeId(1), &[t1]);
        assert!(o.fires(18));
        // A third settles it: 1 missing is not strictly more than τL.
        o.confirmed(NodeId(2), &[t1]);
        assert!(!o.fires(18));
    }

    #[test]
    fn partial_possession_never_completes() {
        // Input to one honest node only: Def.-style completeness requires
        // all honest nodes.
        let mut o = LivenessOracle::new(10, 0, honest(&[0, 1, 2]));
        o.possession(NodeId(0), tx("a"), 1);
        for t in 0..200 {
            assert!(!o.fires(t));
        }
        // Possession by a non-honest node does not count toward completion.
        let mut o = LivenessOracle::new(10, 0, honest(&[0, 1]));
        o.possession(NodeId(0), tx("b"), 1);
        o.possession(NodeId(5), tx("b"), 1);
        assert!(!o.fires(100));
    }

    #[test]
    fn log_replacement_can_reopen_a_violation() {
        let mut o = LivenessOracle::new(5, 0, honest(&[0, 1]));
        let t1 = tx("a");
        o.possession(NodeId(0), t1, 1);
        o.possession(NodeId(1), t1, 2);
        o.confirmed(NodeId(0), &[t1]);
        o.confirmed(NodeId(1), &[t1]);
        assert!(!o.fires(50));
        // Node 1 switches to a chain without the transaction.
        o.log_replaced(NodeId(1), &HashSet::new());
        assert!(o.fires(50));
        // And back to one that has it.
        o.log_replaced(NodeId(1), &HashSet::from([t1]));
        assert!(!o.fires(50));
    }

    fn bid(tag: u64) -> BlockId {
        let mut e = Enc::new("test-block");
        e.u64(tag);
        BlockId(e.finish())
    }

    #[test]
    fn safety_checker_accepts_prefix_growth() {
        let mut s = SafetyChecker::default();
        let chain: Vec<BlockId> = (0..5).map(bid).collect();
        s.observe(1, NodeId(0), &chain[..2]);
        s.observe(2, NodeId(1), &chain[..4]);
        s.observe(3, NodeId(0), &chain[..3]); // shorter prefix is fine
        s.observe(4, NodeId(2), &chain);
        assert!(s.is_safe());
        assert_eq!(s.violation_count(), 0);
    }

    #[test]
    fn safety_checker_flags_divergence() {
        let mut s = SafetyChecker::default();
        s.observe(1, NodeId(0), &[bid(0), bid(1)]);
        s.observe(2, NodeId(1), &[bid(0), bid(9)]);
        assert!(!s.is_safe());
        let v = &s.violations()[0];
        assert_eq!((v.round, v.node, v.height), (2, NodeId(1), 1));
        assert_eq!(v.ours, bid(9));
        assert_eq!(v.canonical, bid(1));
    }
}
