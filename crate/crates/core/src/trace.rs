//! The event log a run produces.
//!
//! Every observable step of a simulation appends one event: sends,
//! deliveries, the per-round synchrony flag, protocol actions, accountability
//! outputs, and oracle verdicts. Serialized as JSON lines with the stable
//! field triple `{round, kind, payload}`; the field names and payload shapes
//! are the replay contract, so changing them breaks recorded traces.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ids::{BlockId, MsgId, NodeId, Round, TxId, View};
use crate::msg::{AccountMsg, ConsensusMsg, Msg, Stage};

/// Compact reference to a message inside send/deliver events: enough to
/// correlate without repeating payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsgRef {
    pub id: MsgId,
    pub kind: MsgKind,
    pub author: Option<NodeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Proposal,
    Vote,
    VoteLive,
    TxGossip,
    Opaque,
    Snapshot,
    Accusation,
}

impl MsgRef {
    pub fn of(m: &Msg) -> Self {
        let kind = match m {
            Msg::Consensus(c) => match c {
                ConsensusMsg::Proposal { .. } => MsgKind::Proposal,
                ConsensusMsg::Vote { .. } => MsgKind::Vote,
                ConsensusMsg::VoteLive { .. } => MsgKind::VoteLive,
                ConsensusMsg::TxGossip { .. } => MsgKind::TxGossip,
                ConsensusMsg::Opaque { .. } => MsgKind::Opaque,
            },
            Msg::Account(a) => match a {
                AccountMsg::Snapshot(_) => MsgKind::Snapshot,
                AccountMsg::Accusation { .. } => MsgKind::Accusation,
            },
        };
        MsgRef { id: m.content_id(), kind, author: m.author() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventPayload {
    /// A node handed an envelope batch to the network (one event per
    /// broadcast, not per recipient).
    Send { from: NodeId, seq: u64, relay: bool, msg: MsgRef },
    /// One envelope reached one recipient.
    Deliver { to: NodeId, from: NodeId, seq: u64, msg: MsgRef },
    /// The adversary's synchrony choice for this round.
    SyncFlag { value: bool },
    Vote { node: NodeId, stage: Stage, view: View, block: BlockId },
    Proposal { node: NodeId, view: View, block: BlockId, justify_view: View, txs: usize },
    Confirm {
        node: NodeId,
        view: View,
        block: BlockId,
        extends: bool,
        log_len: usize,
        new_txs: Vec<TxId>,
    },
    Votelive { node: NodeId, view: View },
    /// A node sealed and broadcast a receipt snapshot.
    Transcript { node: NodeId, as_of: Round, digest: MsgId, entries: usize },
    Accusation { accuser: NodeId, accused: Vec<NodeId>, violation_round: Round },
    Certificate { accused: NodeId, violation_round: Round, supporters: Vec<NodeId> },
    /// Verdict of a ground-truth oracle evaluated during the run.
    Oracle { name: String, ok: bool, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub round: Round,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// Where events go. Large sweeps run with `Null`; tests inspect `Memory`;
/// the CLI streams `Jsonl`.
pub enum TraceSink {
    Null,
    Memory(Vec<TraceEvent>),
    Jsonl { out: Box<dyn Write + Send>, err: Option<std::io::Error> },
}

impl TraceSink {
    pub fn memory() -> Self {
        TraceSink::Memory(Vec::new())
    }

    pub fn jsonl(out: Box<dyn Write + Send>) -> Self {
        TraceSink::Jsonl { out, err: None }
    }

    pub fn emit(&mut self, ev: &TraceEvent) {
        match self {
            TraceSink::Null => {}
            TraceSink::Memory(v) => v.push(ev.clone()),
            TraceSink::Jsonl { out, err } => {
                if err.is_some() {
                    return;
                }
                let line = serde_json::to_string(ev).expect("trace events always serialize");
                if let Err(e) = out.write_all(line.as_bytes()).and_then(|_| out.write_all(b"\n")) {
                    *err = Some(e);
                }
            }
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        match self {
            TraceSink::Memory(v) => v,
            _ => &[],
        }
    }

    /// Flush and surface any deferred write error.
    pub fn finish(&mut self) -> std::io::Result<()> {
        match self {
            TraceSink::Jsonl { out, err } => {
                if let Some(e) = err.take() {
                    return Err(e);
                }
                out.flush()
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msg::genesis_id;

    fn samples() -> Vec<TraceEvent> {
        let mref = MsgRef { id: MsgId([7; 32]), kind: MsgKind::Vote, author: Some(NodeId(2)) };
        vec![
            TraceEvent {
                round: 0,
                payload: EventPayload::Send { from: NodeId(2), seq: 9, relay: false, msg: mref },
            },
            TraceEvent {
                round: 1,
                payload: EventPayload::Deliver { to: NodeId(0), from: NodeId(2), seq: 9, msg: mref },
            },
            TraceEvent { round: 1, payload: EventPayload::SyncFlag { value: false } },
            TraceEvent {
                round: 4,
                payload: EventPayload::Vote {
                    node: NodeId(1),
                    stage: Stage::Stage1,
                    view: 0,
                    block: genesis_id(),
                },
            },
            TraceEvent {
                round: 2,
                payload: EventPayload::Proposal {
                    node: NodeId(3),
                    view: 0,
                    block: genesis_id(),
                    justify_view: -1,
                    txs: 2,
                },
            },
            TraceEvent {
                round: 9,
                payload: EventPayload::Confirm {
                    node: NodeId(0),
                    view: 0,
                    block: genesis_id(),
                    extends: true,
                    log_len: 2,
                    new_txs: vec![TxId([1; 32])],
                },
            },
            TraceEvent { round: 10, payload: EventPayload::Votelive { node: NodeId(0), view: 0 } },
            TraceEvent {
                round: 48,
                payload: EventPayload::Transcript {
                    node: NodeId(0),
                    as_of: 48,
                    digest: MsgId([9; 32]),
                    entries: 31,
                },
            },
            TraceEvent {
                round: 50,
                payload: EventPayload::Accusation {
                    accuser: NodeId(0),
                    accused: vec![NodeId(3)],
                    violation_round: 48,
                },
            },
            TraceEvent {
                round: 52,
                payload: EventPayload::Certificate {
                    accused: NodeId(3),
                    violation_round: 48,
                    supporters: vec![NodeId(0), NodeId(1)],
                },
            },
            TraceEvent {
                round: 60,
                payload: EventPayload::Oracle {
                    name: "timely_violation".into(),
                    ok: false,
                    detail: "tx missing from 3 logs".into(),
                },
            },
        ]
    }

    #[test]
    fn every_event_kind_round_trips_through_json() {
        for ev in samples() {
            let line = serde_json::to_string(&ev).unwrap();
            let back: TraceEvent = serde_json::from_str(&line).unwrap();
            assert_eq!(back, ev, "line: {line}");
        }
    }

    #[test]
    fn wire_shape_is_round_kind_payload() {
        let ev = TraceEvent { round: 3, payload: EventPayload::SyncFlag { value: true } };
        let v: serde_json::Value = serde_json::to_value(&ev).unwrap();
        assert_eq!(v["round"], 3);
        assert_eq!(v["kind"], "sync_flag");
        assert_eq!(v["payload"]["value"], true);
    }

    #[derive(Clone, Default)]
    struct SharedBuf(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

    impl Write for SharedBuf {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn jsonl_sink_writes_one_parseable_line_per_event() {
        let buf = SharedBuf::default();
        let mut sink = TraceSink::jsonl(Box::new(buf.clone()));
        for ev in samples() {
            sink.emit(&ev);
        }
        sink.finish().unwrap();
        let bytes = buf.0.lock().unwrap().clone();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), samples().len());
        for (line, ev) in lines.iter().zip(samples()) {
            let back: TraceEvent = serde_json::from_str(line).unwrap();
            assert_eq!(back, ev);
        }
    }
}
