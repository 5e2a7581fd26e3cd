//! Protocol messages, blocks, and quorum certificates.
//!
//! Signatures are ideal: a message carries the identity of its author and the
//! simulator refuses to enqueue a freshly-originated message whose author is
//! not the sending node. Relaying therefore cannot alter or forge content,
//! only move it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ids::{BlockId, Enc, MsgId, NodeId, Round, TxId, View};

/// A client transaction. The id is the digest of the payload, so ids are
/// collision-free as long as payloads are distinct.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub payload: String,
}

impl Transaction {
    pub fn new(payload: impl Into<String>) -> Self {
        let payload = payload.into();
        let mut e = Enc::new("tx");
        e.bytes(payload.as_bytes());
        Transaction { id: TxId(e.finish()), payload }
    }
}

/// Voting stages. Stage-1 certifies a proposal; stage-2 certifies a stage-1
/// certificate and is what makes a block confirmable.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
}

/// A quorum certificate: at least `quorum_threshold(n)` distinct stage votes
/// for `(view, block)` from exactly the listed signers.
///
/// The genesis sentinel (view −1, genesis block, no signers) is the one
/// certificate that is valid without votes; it roots the block tree and is the
/// initial lock of every node.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct QuorumCert {
    pub stage: Stage,
    pub view: View,
    pub block: BlockId,
    pub signers: Vec<NodeId>,
}

impl QuorumCert {
    /// The sentinel stage-1 certificate for the genesis block.
    pub fn genesis() -> Self {
        QuorumCert { stage: Stage::Stage1, view: -1, block: genesis_id(), signers: Vec::new() }
    }

    pub fn is_genesis(&self) -> bool {
        self.view == -1 && self.block == genesis_id() && self.signers.is_empty()
    }

    fn encode(&self, e: &mut Enc) {
        e.u32(match self.stage {
            Stage::Stage1 => 1,
            Stage::Stage2 => 2,
        });
        e.i64(self.view).id(&self.block.0).u64(self.signers.len() as u64);
        for s in &self.signers {
            e.u32(s.0);
        }
    }
}

/// A block: a view, a justifying stage-1 certificate naming the parent, the
/// carried transactions, and the proposer. `id` is the digest of the rest.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Block {
    pub view: View,
    pub justify: QuorumCert,
    pub txs: Vec<Transaction>,
    pub proposer: NodeId,
    pub id: BlockId,
}

impl Block {
    pub fn new(view: View, justify: QuorumCert, txs: Vec<Transaction>, proposer: NodeId) -> Self {
        let mut e = Enc::new("block");
        e.i64(view);
        justify.encode(&mut e);
        e.u64(txs.len() as u64);
        for tx in &txs {
            e.id(&tx.id.0);
        }
        e.u32(proposer.0);
        let id = BlockId(e.finish());
        Block { view, justify, txs, proposer, id }
    }

    pub fn parent(&self) -> BlockId {
        self.justify.block
    }
}

/// Id of the genesis block (view −1, no transactions, no proposer).
pub fn genesis_id() -> BlockId {
    BlockId(Enc::new("genesis").finish())
}

/// Consensus-layer messages. These are the messages that appear in transcripts
/// and that the blame rules inspect.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConsensusMsg {
    /// A leader's proposal for `block.view`, signed by `signer`.
    Proposal { block: Arc<Block>, signer: NodeId },
    /// A stage vote for `(view, block)`, signed by `signer`.
    Vote { stage: Stage, view: View, block: BlockId, signer: NodeId },
    /// The per-view liveness vote: "every transaction I had pending at the
    /// start of view `view` is in my confirmed log".
    VoteLive { view: View, signer: NodeId },
    /// Transaction gossip. Unsigned: anyone may forward a transaction.
    TxGossip { tx: Transaction },
    /// Bytes that parse as no known variant. Recorded in the transcript,
    /// semantically ignored. Only adversaries produce these.
    Opaque { bytes: Vec<u8>, signer: NodeId },
}

impl ConsensusMsg {
    /// The claimed author, if the variant is signed.
    pub fn author(&self) -> Option<NodeId> {
        match self {
            ConsensusMsg::Proposal { signer, .. }
            | ConsensusMsg::Vote { signer, .. }
            | ConsensusMsg::VoteLive { signer, .. }
            | ConsensusMsg::Opaque { signer, .. } => Some(*signer),
            ConsensusMsg::TxGossip { .. } => None,
        }
    }

    pub fn content_id(&self) -> MsgId {
        let mut e = match self {
            ConsensusMsg::Proposal { block, signer } => {
                let mut e = Enc::new("proposal");
                e.id(&block.id.0).u32(signer.0);
                e
            }
            ConsensusMsg::Vote { stage, view, block, signer } => {
                let mut e = Enc::new("vote");
                e.u32(match stage {
                    Stage::Stage1 => 1,
                    Stage::Stage2 => 2,
                })
                .i64(*view)
                .id(&block.0)
                .u32(signer.0);
                e
            }
            ConsensusMsg::VoteLive { view, signer } => {
                let mut e = Enc::new("votelive");
                e.i64(*view).u32(signer.0);
                e
            }
            ConsensusMsg::TxGossip { tx } => {
                let mut e = Enc::new("txgossip");
                e.id(&tx.id.0);
                e
            }
            ConsensusMsg::Opaque { bytes, signer } => {
                let mut e = Enc::new("opaque");
                e.bytes(bytes).u32(signer.0);
                e
            }
        };
        let _ = &mut e;
        MsgId(e.finish())
    }
}

/// Accountability-layer messages. They ride the same network but are kept out
/// of consensus transcripts: a transcript records the consensus messages a
/// node received, not the bookkeeping about transcripts themselves.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AccountMsg {
    /// A signed transcript snapshot, broadcast at super-view boundaries.
    Snapshot(crate::transcript::Transcript),
    /// "I ran adjudication for the violation detected at `violation_round`
    /// and accuse these nodes." Signed by `accuser`.
    Accusation { accuser: NodeId, accused: Vec<NodeId>, violation_round: Round },
}

impl AccountMsg {
    pub fn author(&self) -> NodeId {
        match self {
            AccountMsg::Snapshot(t) => t.owner,
            AccountMsg::Accusation { accuser, .. } => *accuser,
        }
    }

    pub fn content_id(&self) -> MsgId {
        match self {
            AccountMsg::Snapshot(t) => {
                let mut e = Enc::new("snapshot");
                e.id(&t.digest().0);
                MsgId(e.finish())
            }
            AccountMsg::Accusation { accuser, accused, violation_round } => {
                let mut e = Enc::new("accusation");
                e.u32(accuser.0).u64(*violation_round).u64(accused.len() as u64);
                for a in accused {
                    e.u32(a.0);
                }
                MsgId(e.finish())
            }
        }
    }
}

/// Anything that can travel over the simulated network.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Msg {
    Consensus(ConsensusMsg),
    Account(AccountMsg),
}

impl Msg {
    pub fn content_id(&self) -> MsgId {
        match self {
            Msg::Consensus(m) => m.content_id(),
            Msg::Account(m) => m.content_id(),
        }
    }

    /// Claimed author for signature enforcement. `None` means unsigned
    /// content that anyone may originate.
    pub fn author(&self) -> Option<NodeId> {
        match self {
            Msg::Consensus(m) => m.author(),
            Msg::Account(m) => Some(m.author()),
        }
    }

    pub fn as_consensus(&self) -> Option<&ConsensusMsg> {
        match self {
            Msg::Consensus(m) => Some(m),
            Msg::Account(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tx_ids_depend_only_on_payload() {
        assert_eq!(Transaction::new("a").id, Transaction::new("a").id);
        assert_ne!(Transaction::new("a").id, Transaction::new("b").id);
    }

    #[test]
    fn block_ids_commit_to_justify_and_txs() {
        let b1 = Block::new(0, QuorumCert::genesis(), vec![Transaction::new("a")], NodeId(0));
        let b2 = Block::new(0, QuorumCert::genesis(), vec![Transaction::new("b")], NodeId(0));
        assert_ne!(b1.id, b2.id);
        let b3 = Block::new(1, QuorumCert::genesis(), vec![Transaction::new("a")], NodeId(0));
        assert_ne!(b1.id, b3.id);
    }

    #[test]
    fn vote_content_ids_distinguish_stage_and_signer() {
        let v = |stage, signer| ConsensusMsg::Vote {
            stage,
            view: 3,
            block: genesis_id(),
            signer: NodeId(signer),
        };
        assert_ne!(v(Stage::Stage1, 0).content_id(), v(Stage::Stage2, 0).content_id());
        assert_ne!(v(Stage::Stage1, 0).content_id(), v(Stage::Stage1, 1).content_id());
        assert_eq!(v(Stage::Stage2, 4).content_id(), v(Stage::Stage2, 4).content_id());
    }

    #[test]
    fn genesis_sentinel_is_recognized() {
        assert!(QuorumCert::genesis().is_genesis());
        let mut qc = QuorumCert::genesis();
        qc.view = 0;
        assert!(!qc.is_genesis());
    }
}
