//! Receipt transcripts.
//!
//! A transcript is one node's claim about what it received and when: a list
//! of `(message, receipt round)` pairs together with the round `as_of` up to
//! which the claim extends. Honest nodes produce them by sealing their real
//! receipt log; nothing stops a corrupt node from submitting an arbitrary
//! one, which is why the adjudicator sanitizes before it reads.
//!
//! Storage is chunked. A node seals its open entries into an immutable chunk
//! whenever it snapshots, and every later snapshot shares the earlier chunks
//! by reference, so a run with many snapshot boundaries keeps one copy of
//! each entry rather than one copy per snapshot.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ids::{Enc, MsgId, NodeId, Round};
use crate::msg::ConsensusMsg;

/// An immutable run of receipt-log entries in arrival order.
#[derive(Debug)]
pub struct TranscriptChunk {
    entries: Vec<(Arc<ConsensusMsg>, Round)>,
}

impl TranscriptChunk {
    pub fn new(entries: Vec<(Arc<ConsensusMsg>, Round)>) -> Self {
        TranscriptChunk { entries }
    }
}

/// One node's receipt claim as of a given round.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "TranscriptWire", from = "TranscriptWire")]
pub struct Transcript {
    pub owner: NodeId,
    pub as_of: Round,
    chunks: Vec<Arc<TranscriptChunk>>,
    digest: MsgId,
}

impl Transcript {
    pub fn from_chunks(owner: NodeId, as_of: Round, chunks: Vec<Arc<TranscriptChunk>>) -> Self {
        let digest = compute_digest(owner, as_of, chunks.iter().flat_map(|c| c.entries.iter()));
        Transcript { owner, as_of, chunks, digest }
    }

    /// Build from a flat entry list. This is the constructor adversarial
    /// submissions go through; entries need not respect `as_of`.
    pub fn from_entries(
        owner: NodeId,
        as_of: Round,
        entries: Vec<(Arc<ConsensusMsg>, Round)>,
    ) -> Self {
        Self::from_chunks(owner, as_of, vec![Arc::new(TranscriptChunk::new(entries))])
    }

    /// Entries in arrival order.
    pub fn entries(&self) -> impl Iterator<Item = (&Arc<ConsensusMsg>, Round)> {
        self.chunks.iter().flat_map(|c| c.entries.iter()).map(|(m, r)| (m, *r))
    }

    pub fn len(&self) -> usize {
        self.chunks.iter().map(|c| c.entries.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest receipt round claimed, if any entry exists. A well-formed
    /// transcript has `max_receipt() <= as_of`.
    pub fn max_receipt(&self) -> Option<Round> {
        self.entries().map(|(_, r)| r).max()
    }

    /// Content digest over owner, `as_of`, and every entry. Two transcripts
    /// with the same entries in the same order collide regardless of how the
    /// entries are chunked.
    pub fn digest(&self) -> MsgId {
        self.digest
    }
}

fn compute_digest<'a>(
    owner: NodeId,
    as_of: Round,
    entries: impl Iterator<Item = &'a (Arc<ConsensusMsg>, Round)>,
) -> MsgId {
    let mut e = Enc::new("transcript");
    e.u32(owner.0).u64(as_of);
    for (m, r) in entries {
        e.id(&m.content_id().0).u64(*r);
    }
    MsgId(e.finish())
}

/// Equality is content equality: same owner, `as_of`, and entry sequence.
/// Comparing digests covers all of these.
impl PartialEq for Transcript {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest
    }
}

impl Eq for Transcript {}

#[derive(Serialize, Deserialize)]
struct TranscriptWire {
    owner: NodeId,
    as_of: Round,
    entries: Vec<(ConsensusMsg, Round)>,
}

impl From<Transcript> for TranscriptWire {
    fn from(t: Transcript) -> Self {
        TranscriptWire {
            owner: t.owner,
            as_of: t.as_of,
            entries: t.entries().map(|(m, r)| ((**m).clone(), r)).collect(),
        }
    }
}

impl From<TranscriptWire> for Transcript {
    fn from(w: TranscriptWire) -> Self {
        Transcript::from_entries(
            w.owner,
            w.as_of,
            w.entries.into_iter().map(|(m, r)| (Arc::new(m), r)).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::NodeId;
    use crate::msg::Transaction;

    fn gossip(p: &str) -> Arc<ConsensusMsg> {
        Arc::new(ConsensusMsg::TxGossip { tx: Transaction::new(p) })
    }

    #[test]
    fn digest_ignores_chunk_boundaries() {
        let e1 = (gossip("a"), 3u64);
        let e2 = (gossip("b"), 5u64);
        let flat = Transcript::from_entries(NodeId(2), 10, vec![e1.clone(), e2.clone()]);
        let split = Transcript::from_chunks(
            NodeId(2),
            10,
            vec![
                Arc::new(TranscriptChunk::new(vec![e1.clone()])),
                Arc::new(TranscriptChunk::new(vec![e2.clone()])),
            ],
        );
        assert_eq!(flat.digest(), split.digest());
        // Order, receipts, owner, and as_of all matter.
        let reordered = Transcript::from_entries(NodeId(2), 10, vec![e2.clone(), e1.clone()]);
        assert_ne!(flat.digest(), reordered.digest());
        let late = Transcript::from_entries(NodeId(2), 10, vec![e1.clone(), (e2.0.clone(), 6)]);
        assert_ne!(flat.digest(), late.digest());
        let other_owner = Transcript::from_entries(NodeId(3), 10, vec![e1.clone(), e2.clone()]);
        assert_ne!(flat.digest(), other_owner.digest());
        let other_as_of = Transcript::from_entries(NodeId(2), 11, vec![e1, e2]);
        assert_ne!(flat.digest(), other_as_of.digest());
    }

    #[test]
    fn serde_round_trip_preserves_digest_and_entries() {
        let t = Transcript::from_entries(NodeId(1), 24, vec![(gossip("x"), 1), (gossip("y"), 24)]);
        let json = serde_json::to_string(&t).unwrap();
        let back: Transcript = serde_json::from_str(&json).unwrap();
        assert_eq!(back.owner, t.owner);
        assert_eq!(back.as_of, t.as_of);
        assert_eq!(back.digest(), t.digest());
        assert_eq!(back.len(), 2);
        assert_eq!(back.max_receipt(), Some(24));
    }
}
