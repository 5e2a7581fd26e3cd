//! The per-node accountability engine layered on top of consensus.
//!
//! Each node runs one [`AccountState`] next to its [`NodeState`]. Per round
//! it does the protocol's accountability duties: (a) at every super-view
//! boundary it broadcasts a signed snapshot of its transcript; (b) when the
//! liveness detector fires at round `t` it waits out the bundle-assembly
//! deadline `t + Δ′g`, runs ψ over the snapshots it holds, and broadcasts one
//! accusation; (c) it continuously aggregates received accusations into
//! certificates of guilt once a strict majority of accusers names the same
//! node for the same violation round.
//!
//! Certificates are local objects: the protocol's end state is "some honest
//! node holds a certificate", so nothing here re-broadcasts them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adjudicate::{psi, sanitize_bundle, PsiParams, PsiReport, TranscriptBundle};
use crate::blame::SuperViewIndex;
use crate::consensus::{Emission, NodeState};
use crate::ids::{MsgId, NodeId, Round, View};
use crate::msg::{AccountMsg, Msg};
use crate::transcript::Transcript;

/// Accountability-layer parameters. `k_views` consecutive views form a
/// super-view of `Δ′ = 12Δ·k_views` rounds; `g` super-views form the
/// detection window and the evidence index.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AccountParams {
    pub psi: PsiParams,
    pub k_views: u64,
    pub g: u64,
}

impl AccountParams {
    pub fn delta_prime(&self) -> u64 {
        12 * self.psi.delta * self.k_views
    }

    /// Δ′·g: detection lookback, bundle-assembly allowance, and half the
    /// certificate-completeness deadline.
    pub fn window(&self) -> u64 {
        self.delta_prime() * self.g
    }

    pub fn majority(&self) -> usize {
        (self.psi.n / 2 + 1) as usize
    }
}

/// One node's accusation after a ψ run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accusation {
    pub accuser: NodeId,
    pub accused: BTreeSet<NodeId>,
    pub violation_round: Round,
}

/// A strict majority of distinct accusers naming the same node for the same
/// violation round.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateOfGuilt {
    pub accused: NodeId,
    pub violation_round: Round,
    pub supporting: Vec<Accusation>,
}

/// True iff no view lying fully inside `[t − window, t]` has reached a
/// VoteLive quorum in `node`'s received set: every recent view looks dead.
pub fn detect_potential_violation(node: &NodeState, t: Round, window: u64) -> bool {
    assert!(t >= window, "detector needs a full window of history");
    let period = 12 * node.delta;
    let lo = (t - window).div_ceil(period) as View;
    let hi = ((t + 1) / period) as View; // exclusive
    lo >= hi || !node.votelive_quorum_in(lo, hi)
}

/// What one accountability step did, for the world loop to ship and log.
#[derive(Default, Debug)]
pub struct AccountFx {
    pub out: Vec<Emission>,
    /// Rounds at which the detector newly fired (rising edges).
    pub detections: Vec<Round>,
    /// Local ψ runs this round, keyed by the violation round they answer.
    pub psi_runs: Vec<(Round, PsiReport)>,
    /// The sanitized bundle each of those runs adjudicated, for offline
    /// replay. Cheap to keep: transcripts share their chunk storage.
    pub bundles: Vec<(Round, TranscriptBundle)>,
    pub accusations: Vec<Accusation>,
    pub certificates: Vec<CertificateOfGuilt>,
    /// Boundary snapshot broadcast this round: (as_of, digest, entry count).
    pub snapshot: Option<(Round, MsgId, usize)>,
}

pub struct AccountState {
    pub id: NodeId,
    pub params: AccountParams,
    seen: HashSet<MsgId>,
    /// Received (and own) snapshots: as_of → owner → distinct transcripts.
    /// Two distinct ones are already proof of equivocation, so at most two
    /// are kept per owner.
    snapshots: BTreeMap<Round, BTreeMap<NodeId, Vec<Transcript>>>,
    /// First accusation seen per (accuser, violation_round); later ones from
    /// the same accuser for the same round are equivocation and ignored.
    accusations: HashMap<(NodeId, Round), Accusation>,
    support: HashMap<(NodeId, Round), BTreeSet<NodeId>>,
    certified: HashSet<(NodeId, Round)>,
    certificates: Vec<CertificateOfGuilt>,
    detector_live: bool,
    /// Evaluation round → violation rounds whose ψ run is due then.
    due_psi: BTreeMap<Round, Vec<Round>>,
}

impl AccountState {
    pub fn new(id: NodeId, params: AccountParams) -> Self {
        AccountState {
            id,
            params,
            seen: HashSet::new(),
            snapshots: BTreeMap::new(),
            accusations: HashMap::new(),
            support: HashMap::new(),
            certified: HashSet::new(),
            certificates: Vec::new(),
            detector_live: false,
            due_psi: BTreeMap::new(),
        }
    }

    pub fn certificates(&self) -> &[CertificateOfGuilt] {
        &self.certificates
    }

    /// The accountability round hook. Call once per round, after the
    /// consensus step for the same round.
    pub fn step(
        &mut self,
        t: Round,
        node: &mut NodeState,
        delivered: &[Arc<AccountMsg>],
        fx: &mut AccountFx,
    ) {
        for m in delivered {
            self.ingest(m, fx);
        }
        let dp = self.params.delta_prime();
        if t > 0 && t % dp == 0 {
            self.broadcast_snapshot(t, node, fx);
        }
        if let Some(violations) = self.due_psi.remove(&t) {
            for violation_round in violations {
                self.run_psi(violation_round, fx);
            }
        }
        let w = self.params.window();
        if t >= w {
            let firing = detect_potential_violation(node, t, w);
            if firing && !self.detector_live {
                fx.detections.push(t);
                self.due_psi.entry(t + w).or_default().push(t);
            }
            self.detector_live = firing;
        }
    }

    fn ingest(&mut self, m: &Arc<AccountMsg>, fx: &mut AccountFx) {
        if !self.seen.insert(m.content_id()) {
            return;
        }
        fx.out.push(Emission { msg: Arc::new(Msg::Account((**m).clone())), relay: true });
        match &**m {
            AccountMsg::Snapshot(tr) => self.store_snapshot(tr.clone()),
            AccountMsg::Accusation { accuser, accused, violation_round } => {
                let acc = Accusation {
                    accuser: *accuser,
                    accused: accused.iter().copied().collect(),
                    violation_round: *violation_round,
                };
                self.aggregate(acc, fx);
            }
        }
    }

    fn store_snapshot(&mut self, tr: Transcript) {
        let slot = self.snapshots.entry(tr.as_of).or_default().entry(tr.owner).or_default();
        if slot.len() < 2 && !slot.iter().any(|prev| *prev == tr) {
            slot.push(tr);
        }
    }

    fn broadcast_snapshot(&mut self, t: Round, node: &mut NodeState, fx: &mut AccountFx) {
        let tr = node.snapshot(t);
        fx.snapshot = Some((t, tr.digest(), tr.len()));
        let msg = AccountMsg::Snapshot(tr.clone());
        self.seen.insert(msg.content_id());
        fx.out.push(Emission { msg: Arc::new(Msg::Account(msg)), relay: false });
        self.store_snapshot(tr);
        // Retention: snapshots older than two windows can no longer feed any
        // ψ run. Evaluations look back at most window + Δ′ rounds.
        let horizon = t.saturating_sub(2 * self.params.window());
        self.snapshots = self.snapshots.split_off(&horizon);
    }

    /// All submissions held for boundary `as_of`, sanitized into a bundle.
    pub fn assemble_bundle(&self, as_of: Round) -> TranscriptBundle {
        let submissions: Vec<Transcript> = self
            .snapshots
            .get(&as_of)
            .into_iter()
            .flat_map(|per_owner| per_owner.values().flatten().cloned())
            .collect();
        sanitize_bundle(self.params.psi.n, as_of, &submissions)
    }

    fn run_psi(&mut self, violation_round: Round, fx: &mut AccountFx) {
        let p = &self.params;
        let dp = p.delta_prime();
        let boundary = violation_round / dp * dp;
        let index = SuperViewIndex {
            start_view: ((boundary - p.window()) / (12 * p.psi.delta)) as View,
            k_views: p.k_views,
            g: p.g,
        };
        let bundle = self.assemble_bundle(boundary);
        let report = psi(&bundle, &index, &p.psi);
        fx.bundles.push((violation_round, bundle));
        let accusation = Accusation {
            accuser: self.id,
            accused: report.accused.clone(),
            violation_round,
        };
        fx.psi_runs.push((violation_round, report));
        let msg = AccountMsg::Accusation {
            accuser: self.id,
            accused: accusation.accused.iter().copied().collect(),
            violation_round,
        };
        self.seen.insert(msg.content_id());
        fx.out.push(Emission { msg: Arc::new(Msg::Account(msg)), relay: false });
        fx.accusations.push(accusation.clone());
        self.aggregate(accusation, fx);
    }

    fn aggregate(&mut self, acc: Accusation, fx: &mut AccountFx) {
        let key = (acc.accuser, acc.violation_round);
        if self.accusations.contains_key(&key) {
            return;
        }
        self.accusations.insert(key, acc.clone());
        for p in &acc.accused {
            let support = self.support.entry((*p, acc.violation_round)).or_default();
            support.insert(acc.accuser);
            if support.len() >= self.params.majority()
                && self.certified.insert((*p, acc.violation_round))
            {
                let supporting = support
                    .iter()
                    .map(|accuser| self.accusations[&(*accuser, acc.violation_round)].clone())
                    .collect();
                let cert = CertificateOfGuilt {
                    accused: *p,
                    violation_round: acc.violation_round,
                    supporting,
                };
                self.certificates.push(cert.clone());
                fx.certificates.push(cert);
            }
        }
    }
}
