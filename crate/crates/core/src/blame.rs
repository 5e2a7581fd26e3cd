//! Per-view and per-super-view blame, computed from a single transcript.
//!
//! Everything here is a deterministic function of one node's receipt claims.
//! The transcript owner asks, for each view: given what I had received and
//! when, which nodes failed to send something the protocol obligated them to
//! send? Three rules, one per phase. Writing `base = 12Δv`:
//!
//! * B1: if the transcript holds exactly one leader-signed view-`v` proposal
//!   overall, received by `base+3Δ`, valid on the material received by then,
//!   and justified at least as high as any lock an honest node could have
//!   held at `base` — then every node ought to have stage-1 voted for it, and
//!   the vote ought to have arrived by `base+5Δ`. Nodes without one are
//!   blamed.
//! * B2: if some valid view-`v` block has a stage-1 certificate whose votes
//!   all arrived by `base+6Δ`, every node ought to have cast a stage-2 vote.
//!   A node escapes with a stage-2 vote, received by `base+8Δ`, for any
//!   view-`v` block certifiable from material received by `base+8Δ` — the
//!   voter may legitimately have seen a different certificate complete first,
//!   and whatever certificate it used reaches the owner one hop later. A vote
//!   for a never-certified block does not count.
//! * B3: if every transaction the owner received by `base+Δ` sits in the log
//!   recomputable from the transcript as of `base+9Δ`, the view was live from
//!   where the owner stands, and every node ought to have sent `VoteLive`,
//!   arriving by `base+11Δ`.
//!
//! Super-view blame is the union over the member views. The receipt-aware
//! reconstruction of certificates, block validity, and confirmed logs lives
//! in [`TranscriptIndex`]; its log recomputation mirrors the node state
//! machine exactly, which the tests check by replaying one against the
//! other.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::ops::Range;
use std::sync::Arc;

use crate::consensus::{leader_for_view, quorum_threshold};
use crate::ids::{BlockId, NodeId, Round, TxId, View};
use crate::msg::{Block, ConsensusMsg, Stage};
use crate::transcript::Transcript;

/// The partition of a span of views into super-views: `g` super-views of
/// `k_views` consecutive views each, beginning at `start_view`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SuperViewIndex {
    pub start_view: View,
    pub k_views: u64,
    pub g: u64,
}

impl SuperViewIndex {
    /// Views belonging to super-view `u` (0-based within this index).
    pub fn views_of(&self, u: u64) -> Range<View> {
        debug_assert!(u < self.g);
        let lo = self.start_view + (u * self.k_views) as View;
        lo..lo + self.k_views as View
    }

    /// Super-view length in rounds.
    pub fn delta_prime(&self, delta: u64) -> u64 {
        12 * delta * self.k_views
    }

    /// First round covered by the index.
    pub fn first_round(&self, delta: u64) -> Round {
        self.start_view as u64 * 12 * delta
    }

    /// One past the last round covered.
    pub fn end_round(&self, delta: u64) -> Round {
        self.first_round(delta) + self.delta_prime(delta) * self.g
    }
}

/// Receipt-aware indexes over one transcript, with the validity, certificate,
/// and log reconstructions the blame rules need. Build once per transcript;
/// the per-view blame results are memoized.
pub struct TranscriptIndex {
    pub owner: NodeId,
    pub as_of: Round,
    n: u32,
    delta: u64,
    seed: u64,

    blocks: HashMap<BlockId, (Arc<Block>, Round)>,
    proposals: BTreeMap<View, Vec<(Arc<Block>, NodeId, Round)>>,
    votes: HashMap<(Stage, View, BlockId), BTreeMap<NodeId, Round>>,
    /// Receipt round at which a quorum of distinct votes was complete.
    qc_at: HashMap<(Stage, View, BlockId), Round>,
    votelive: HashMap<View, BTreeMap<NodeId, Round>>,
    txs: BTreeMap<TxId, Round>,

    first_valid_memo: HashMap<BlockId, Option<Round>>,
    blame_memo: HashMap<View, BTreeSet<NodeId>>,
}

impl TranscriptIndex {
    pub fn build(tr: &Transcript, n: u32, delta: u64, seed: u64) -> Self {
        let mut ix = TranscriptIndex {
            owner: tr.owner,
            as_of: tr.as_of,
            n,
            delta,
            seed,
            blocks: HashMap::new(),
            proposals: BTreeMap::new(),
            votes: HashMap::new(),
            qc_at: HashMap::new(),
            votelive: HashMap::new(),
            txs: BTreeMap::new(),
            first_valid_memo: HashMap::new(),
            blame_memo: HashMap::new(),
        };
        for (m, r) in tr.entries() {
            match &**m {
                ConsensusMsg::Proposal { block, signer } => {
                    match ix.blocks.get_mut(&block.id) {
                        Some(e) => e.1 = e.1.min(r),
                        None => {
                            ix.blocks.insert(block.id, (block.clone(), r));
                        }
                    }
                    ix.proposals.entry(block.view).or_default().push((block.clone(), *signer, r));
                }
                ConsensusMsg::Vote { stage, view, block, signer } => {
                    let e = ix.votes.entry((*stage, *view, *block)).or_default();
                    let cur = e.entry(*signer).or_insert(r);
                    *cur = (*cur).min(r);
                }
                ConsensusMsg::VoteLive { view, signer } => {
                    let e = ix.votelive.entry(*view).or_default();
                    let cur = e.entry(*signer).or_insert(r);
                    *cur = (*cur).min(r);
                }
                ConsensusMsg::TxGossip { tx } => {
                    let cur = ix.txs.entry(tx.id).or_insert(r);
                    *cur = (*cur).min(r);
                }
                ConsensusMsg::Opaque { .. } => {}
            }
        }
        let q = quorum_threshold(n) as usize;
        for (key, votes) in &ix.votes {
            if votes.len() >= q {
                let mut receipts: Vec<Round> = votes.values().copied().collect();
                receipts.sort_unstable();
                ix.qc_at.insert(*key, receipts[q - 1]);
            }
        }
        ix
    }

    fn quorum(&self) -> u32 {
        quorum_threshold(self.n)
    }

    /// Earliest receipt round at which a quorum of stage-`stage` votes for
    /// `(view, block)` was complete, if ever.
    pub fn qc_complete_at(&self, stage: Stage, view: View, block: BlockId) -> Option<Round> {
        self.qc_at.get(&(stage, view, block)).copied()
    }

    /// Earliest receipt round at which `block` was valid: the block and its
    /// whole ancestry received, every justify certificate's votes received in
    /// full. `None` if the transcript never validates it.
    pub fn first_valid(&mut self, id: BlockId) -> Option<Round> {
        if id == crate::msg::genesis_id() {
            return Some(0);
        }
        if let Some(r) = self.first_valid_memo.get(&id) {
            return *r;
        }
        let mut path: Vec<(BlockId, Round)> = Vec::new();
        let mut cur = id;
        let mut base: Round = 0;
        let verdict = loop {
            if cur == crate::msg::genesis_id() {
                break Some(());
            }
            if let Some(r) = self.first_valid_memo.get(&cur) {
                match r {
                    Some(r) => {
                        base = *r;
                        break Some(());
                    }
                    None => break None,
                }
            }
            let Some((b, received)) = self.blocks.get(&cur) else { break None };
            let (b, received) = (b.clone(), *received);
            if b.justify.view >= b.view || b.justify.stage != Stage::Stage1 {
                break None;
            }
            let mut at = received;
            if b.justify.is_genesis() {
                path.push((cur, at));
                break Some(());
            }
            let parent = b.justify.block;
            match self.blocks.get(&parent) {
                Some((p, _)) if p.view == b.justify.view => {}
                _ => break None,
            }
            let distinct: BTreeSet<NodeId> = b.justify.signers.iter().copied().collect();
            if (distinct.len() as u32) < self.quorum() || distinct.len() != b.justify.signers.len()
            {
                break None;
            }
            match self.votes.get(&(Stage::Stage1, b.justify.view, parent)) {
                Some(votes) if b.justify.signers.iter().all(|s| votes.contains_key(s)) => {
                    for s in &b.justify.signers {
                        at = at.max(votes[s]);
                    }
                }
                _ => break None,
            }
            path.push((cur, at));
            cur = parent;
        };
        match verdict {
            None => {
                for (b, _) in path {
                    self.first_valid_memo.insert(b, None);
                }
                self.first_valid_memo.insert(cur, None);
                None
            }
            Some(()) => {
                // Walk back up accumulating: a block is valid once it and
                // every ancestor below it is.
                let mut acc = base;
                for (b, at) in path.into_iter().rev() {
                    acc = acc.max(at);
                    self.first_valid_memo.insert(b, Some(acc));
                }
                let r = self.first_valid_memo[&id];
                debug_assert!(r.is_some());
                r
            }
        }
    }

    pub fn valid_at(&mut self, id: BlockId, t: Round) -> bool {
        self.first_valid(id).is_some_and(|r| r <= t)
    }

    /// The highest view of any stage-1 certificate constructible from entries
    /// received by `12Δv`: an upper bound on the lock any honest node could
    /// have held when view `v` began. −1 when only the genesis sentinel
    /// qualifies.
    pub fn infer_max_lock_view(&mut self, v: View) -> View {
        let t = 12 * self.delta * v as u64;
        let keys: Vec<(View, BlockId)> = self
            .qc_at
            .iter()
            .filter(|((stage, _, _), at)| *stage == Stage::Stage1 && **at <= t)
            .map(|((_, view, block), _)| (*view, *block))
            .collect();
        let mut best = -1;
        for (view, block) in keys {
            if view > best && self.valid_at(block, t) {
                best = view;
            }
        }
        best
    }

    /// The confirmed log computable from the transcript as of round `t`,
    /// reproducing the node state machine's confirmation rule: among blocks
    /// with both certificates and validity established by `t`, the winner has
    /// the highest view, then the earliest adoption round, then the smallest
    /// id. Returns the winner's chain transactions.
    pub fn log_at(&mut self, t: Round) -> HashSet<TxId> {
        let keys: Vec<(View, BlockId, Round)> = self
            .qc_at
            .iter()
            .filter(|((stage, _, _), _)| *stage == Stage::Stage2)
            .map(|((_, view, block), at)| (*view, *block, *at))
            .collect();
        let mut winner: Option<(View, Round, BlockId)> = None;
        for (view, block, qc2) in keys {
            if qc2 > t {
                continue;
            }
            let Some(qc1) = self.qc_complete_at(Stage::Stage1, view, block) else { continue };
            if qc1 > t {
                continue;
            }
            let Some(fv) = self.first_valid(block) else { continue };
            let adopt = qc1.max(qc2).max(fv);
            if adopt > t {
                continue;
            }
            let cand = (view, adopt, block);
            // Highest view; then earliest adoptable; then smallest id.
            let better = match winner {
                None => true,
                Some(w) => cand.0 > w.0 || (cand.0 == w.0 && (cand.1, cand.2) < (w.1, w.2)),
            };
            if better {
                winner = Some(cand);
            }
        }
        let mut out = HashSet::new();
        if let Some((_, _, tip)) = winner {
            let mut cur = tip;
            while cur != crate::msg::genesis_id() {
                let (b, _) = &self.blocks[&cur];
                out.extend(b.txs.iter().map(|tx| tx.id));
                cur = b.parent();
            }
        }
        out
    }

    /// Blame set for view `v` per rules B1–B3. Requires the transcript to
    /// cover the whole view.
    pub fn blame_view(&mut self, v: View) -> BTreeSet<NodeId> {
        assert!(v >= 0, "blame is defined for running views");
        let d = self.delta;
        let base = 12 * d * v as u64;
        assert!(
            self.as_of >= base + 12 * d,
            "transcript as_of {} does not cover view {v}",
            self.as_of
        );
        if let Some(b) = self.blame_memo.get(&v) {
            return b.clone();
        }
        let mut blamed = BTreeSet::new();
        let all: Vec<NodeId> = (0..self.n).map(NodeId).collect();
        let leader = leader_for_view(self.seed, self.n, v);

        // B1: obligation to stage-1 vote for the unique leader proposal.
        let mut leader_blocks: BTreeMap<BlockId, (Arc<Block>, Round)> = BTreeMap::new();
        if let Some(props) = self.proposals.get(&v) {
            for (block, signer, r) in props {
                if *signer == leader {
                    let e = leader_blocks.entry(block.id).or_insert((block.clone(), *r));
                    e.1 = e.1.min(*r);
                }
            }
        }
        if leader_blocks.len() == 1 {
            let (id, (block, received)) = leader_blocks.into_iter().next().unwrap();
            if received <= base + 3 * d
                && self.valid_at(id, base + 3 * d)
                && block.justify.view >= self.infer_max_lock_view(v)
            {
                let voters = self.votes.get(&(Stage::Stage1, v, id));
                for p in &all {
                    let voted =
                        voters.is_some_and(|vs| vs.get(p).is_some_and(|r| *r <= base + 5 * d));
                    if !voted {
                        blamed.insert(*p);
                    }
                }
            }
        }

        // B2: obligation to stage-2 vote once a stage-1 certificate is out.
        let s1_keys: Vec<BlockId> = self
            .qc_at
            .iter()
            .filter(|((stage, view, _), _)| *stage == Stage::Stage1 && *view == v)
            .map(|((_, _, block), _)| *block)
            .collect();
        let mut certified_6: Vec<BlockId> = Vec::new();
        let mut certified_8: Vec<BlockId> = Vec::new();
        for block in s1_keys {
            let at = self.qc_at[&(Stage::Stage1, v, block)];
            if at <= base + 8 * d && self.valid_at(block, base + 8 * d) {
                certified_8.push(block);
                if at <= base + 6 * d && self.valid_at(block, base + 6 * d) {
                    certified_6.push(block);
                }
            }
        }
        if !certified_6.is_empty() {
            for p in &all {
                let escaped = certified_8.iter().any(|b| {
                    self.votes
                        .get(&(Stage::Stage2, v, *b))
                        .is_some_and(|vs| vs.get(p).is_some_and(|r| *r <= base + 8 * d))
                });
                if !escaped {
                    blamed.insert(*p);
                }
            }
        }

        // B3: obligation to declare the view live when the owner's own
        // material shows every early transaction confirmed in time.
        let log = self.log_at(base + 9 * d);
        let all_confirmed =
            self.txs.iter().all(|(tx, r)| *r > base + d || log.contains(tx));
        if all_confirmed {
            for p in &all {
                let declared = self
                    .votelive
                    .get(&v)
                    .is_some_and(|vs| vs.get(p).is_some_and(|r| *r <= base + 11 * d));
                if !declared {
                    blamed.insert(*p);
                }
            }
        }

        self.blame_memo.insert(v, blamed.clone());
        blamed
    }

    /// Union of per-view blame over super-view `u` of `index`.
    pub fn blame_superview(&mut self, index: &SuperViewIndex, u: u64) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        for v in index.views_of(u) {
            out.extend(self.blame_view(v));
        }
        out
    }
}
