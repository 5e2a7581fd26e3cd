//! Scenario configuration and the simulation run loop.
//!
//! A scenario is a complete, serializable description of one run: node
//! count, timing, adversary, accountability parameters, and the transaction
//! injection schedule. `run` turns a scenario into a `RunOutcome`: a summary
//! report plus the final node states, which tests and the adjudication
//! tooling inspect directly.
//!
//! The loop is single-threaded and strictly round-ordered, so a scenario and
//! a seed determine every event. Per round: the strategy picks the network
//! directive, due envelopes pop, honest nodes step consensus and then the
//! accountability layer, their broadcasts are enqueued, the strategy acts
//! for the corrupted nodes, and the round ends. The loop also enforces the
//! one rule strategies cannot break: a message originated on behalf of a
//! node must be authored by a corrupted node.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::account::{AccountFx, AccountParams, AccountState};
use crate::adjudicate::{PsiParams, TranscriptBundle};
use crate::adversary::{
    make_crash, make_equivocating_leader, make_partition_cycler, make_random_delay,
    make_silent_censor, make_split_brain, make_transcript_framer, FramerAlterations, Recipients,
    Strategy, StrategyIo,
};
use crate::consensus::{NodeState, StepFx};
use crate::ids::{MsgId, NodeId, Round, TxId, View};
use crate::msg::{AccountMsg, ConsensusMsg, Msg, Transaction};
use crate::netsim::{ModelFault, NetSim};
use crate::oracle::{LivenessOracle, SafetyChecker, SafetyViolation};
use crate::sched::validate_x_psync;
use crate::trace::{EventPayload, MsgRef, TraceEvent, TraceSink};
use crate::Frac;

/// One scheduled transaction input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub round: Round,
    pub node: u32,
    pub payload: String,
}

/// Accountability-layer parameters. Absent when a scenario only exercises
/// consensus (small node counts have no admissible `tau_al_max` at all).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountabilityConfig {
    pub tau_al_max: u32,
    #[serde(with = "crate::fracfmt")]
    pub x: Frac,
    #[serde(with = "crate::fracfmt")]
    pub delta_x: Frac,
    pub k_views: u64,
    pub g: u64,
}

/// The adversary families, each under its stable registry name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryConfig {
    /// No corrupted nodes, fully synchronous network.
    Honest,
    /// The listed nodes halt; optionally the network is asynchronous (all
    /// countdowns frozen) before `async_until`.
    Crash {
        crash_set: Vec<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        async_until: Option<Round>,
    },
    /// The `f` highest-numbered nodes withhold everything.
    SilentCensor { f: u32 },
    /// Corrupted `p2` runs one persona toward `p1` and another toward `p3`
    /// while the network keeps the honest sides apart until the scenario's
    /// `gst`.
    SplitBrain { p1: Vec<u32>, p2: Vec<u32>, p3: Vec<u32> },
    /// The rotating-partition family over the first detection window.
    /// `groups` is `P_0 .. P_{k+1}`; variant `real` is the index of the one
    /// rotating group whose delay is real network asynchrony.
    PartitionCycler { k: usize, groups: Vec<Vec<u32>>, real: usize },
    /// A corrupted leader proposing two conflicting blocks in each listed
    /// view.
    EquivocatingLeader { node: u32, views: Vec<View> },
    /// Wraps a base adversary; the corrupted nodes additionally submit
    /// fabricated transcripts at every super-view boundary.
    TranscriptFramer {
        base: Box<AdversaryConfig>,
        #[serde(default)]
        targets: Vec<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        equivocator: Option<u32>,
    },
    /// Seeded fuzzer: random delay schedules and randomly misbehaving
    /// corrupted nodes.
    RandomDelay { f: u32 },
}

/// A full run description. Serialized form is the on-disk scenario format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: u32,
    pub delta: u64,
    pub seed: u64,
    pub horizon: Round,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gst: Option<Round>,
    pub adversary: AdversaryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accountability: Option<AccountabilityConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub injections: Vec<Injection>,
    /// Recipient set whose consensus-layer delivery stream is digested for
    /// indistinguishability comparisons. Accountability bookkeeping is not
    /// part of the digest: which nodes audit is not a protocol observable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Vec<u32>>,
    /// Liveness-oracle window override; defaults to the accountability
    /// window when that layer is configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_window: Option<u64>,
}

impl ScenarioConfig {
    pub fn from_json(s: &str) -> Result<Self, String> {
        let cfg: ScenarioConfig = serde_json::from_str(s).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n == 0 {
            return Err("n must be positive".into());
        }
        if self.delta == 0 {
            return Err("delta must be positive".into());
        }
        if self.horizon == 0 {
            return Err("horizon must be positive".into());
        }
        for inj in &self.injections {
            if inj.node >= self.n {
                return Err(format!("injection at node {} out of range", inj.node));
            }
            if inj.round >= self.horizon {
                return Err(format!("injection at round {} beyond the horizon", inj.round));
            }
        }
        if let Some(p) = &self.projection {
            if p.iter().any(|&x| x >= self.n) {
                return Err("projection set mentions a node out of range".into());
            }
        }
        if let Some(acc) = &self.accountability {
            let n = self.n as i64;
            let tau = acc.tau_al_max as i64;
            if 3 * tau <= n || 2 * tau >= n {
                return Err(format!(
                    "tau_al_max = {tau} must satisfy n/3 < tau_al_max < n/2 for n = {n}"
                ));
            }
            let s = acc.x + acc.delta_x;
            if acc.x < Frac::new(0, 1) || acc.delta_x < Frac::new(0, 1) || s >= Frac::new(1, 2) {
                return Err("need 0 <= x, 0 <= delta_x and x + delta_x < 1/2".into());
            }
            if acc.k_views == 0 || acc.g == 0 {
                return Err("k_views and g must be positive".into());
            }
        }
        match &self.adversary {
            AdversaryConfig::SplitBrain { .. } if self.gst.is_none() => {
                Err("split_brain needs a gst for the partition to heal at".into())
            }
            AdversaryConfig::PartitionCycler { .. } if self.accountability.is_none() => {
                Err("partition_cycler needs accountability parameters for its window".into())
            }
            AdversaryConfig::TranscriptFramer { .. } if self.accountability.is_none() => {
                Err("transcript_framer needs accountability parameters for its boundaries".into())
            }
            _ => Ok(()),
        }
    }

    fn account_params(&self) -> Option<AccountParams> {
        self.accountability.as_ref().map(|acc| AccountParams {
            psi: PsiParams {
                n: self.n,
                tau_al_max: acc.tau_al_max,
                x: acc.x,
                delta_x: acc.delta_x,
                delta: self.delta,
                seed: self.seed,
            },
            k_views: acc.k_views,
            g: acc.g,
        })
    }

    /// Build the configured adversary. Separated out so tests can also run
    /// hand-made strategies via `run_with`.
    pub fn build_strategy(&self) -> Result<Box<dyn Strategy>, String> {
        build_strategy_inner(self, &self.adversary)
    }
}

fn idset(v: &[u32]) -> BTreeSet<NodeId> {
    v.iter().map(|&x| NodeId(x)).collect()
}

fn build_strategy_inner(
    cfg: &ScenarioConfig,
    adv: &AdversaryConfig,
) -> Result<Box<dyn Strategy>, String> {
    let check_range = |nodes: &[u32], what: &str| {
        match nodes.iter().find(|&&x| x >= cfg.n) {
            Some(x) => Err(format!("{what}: node {x} out of range")),
            None => Ok(()),
        }
    };
    match adv {
        AdversaryConfig::Honest => Ok(Box::new(make_crash(BTreeSet::new(), None))),
        AdversaryConfig::Crash { crash_set, async_until } => {
            check_range(crash_set, "crash")?;
            Ok(Box::new(make_crash(idset(crash_set), *async_until)))
        }
        AdversaryConfig::SilentCensor { f } => {
            if *f > cfg.n {
                return Err("silent_censor: f exceeds n".into());
            }
            Ok(Box::new(make_silent_censor(cfg.n, *f)))
        }
        AdversaryConfig::SplitBrain { p1, p2, p3 } => {
            let gst = cfg.gst.ok_or("split_brain needs gst")?;
            let s = make_split_brain(
                cfg.n,
                cfg.delta,
                cfg.seed,
                idset(p1),
                idset(p2),
                idset(p3),
                gst,
            )?;
            Ok(Box::new(s))
        }
        AdversaryConfig::PartitionCycler { k, groups, real } => {
            let params = cfg.account_params().ok_or("partition_cycler needs accountability")?;
            let window = params.window() as Round;
            let groups = groups.iter().map(|g| idset(g)).collect();
            let s = make_partition_cycler(cfg.n, cfg.delta, cfg.seed, *k, groups, *real, window)?;
            Ok(Box::new(s))
        }
        AdversaryConfig::EquivocatingLeader { node, views } => {
            check_range(&[*node], "equivocating_leader")?;
            let s = make_equivocating_leader(
                cfg.n,
                cfg.delta,
                cfg.seed,
                NodeId(*node),
                views.iter().copied().collect(),
            )?;
            Ok(Box::new(s))
        }
        AdversaryConfig::TranscriptFramer { base, targets, equivocator } => {
            check_range(targets, "transcript_framer targets")?;
            let params = cfg.account_params().ok_or("transcript_framer needs accountability")?;
            let base = build_strategy_inner(cfg, base)?;
            let alter = FramerAlterations {
                targets: idset(targets),
                equivocator: equivocator.map(NodeId),
            };
            let s = make_transcript_framer(base, alter, params.delta_prime() as Round)?;
            Ok(Box::new(s))
        }
        AdversaryConfig::RandomDelay { f } => {
            if *f > cfg.n {
                return Err("random_delay: f exceeds n".into());
            }
            Ok(Box::new(make_random_delay(cfg.n, cfg.delta, cfg.seed, *f)))
        }
    }
}

/// Per-transaction liveness bookkeeping in the report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxStat {
    pub id: TxId,
    pub payload: String,
    pub injected: Round,
    /// First round some honest node's log contains the transaction.
    pub first_confirmed: Option<Round>,
    /// First round every honest node's log contains it.
    pub all_honest_confirmed: Option<Round>,
}

/// One distinct certificate of guilt, with everyone who independently holds
/// it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub accused: NodeId,
    pub violation_round: Round,
    pub holders: Vec<NodeId>,
}

/// One distinct adjudication outcome, with the number of honest judges whose
/// local ψ run produced exactly this accused set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationSummary {
    pub violation_round: Round,
    pub accused: Vec<NodeId>,
    pub judges: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub n: u32,
    pub rounds: Round,
    /// No pair of honest logs ever disagreed on a common prefix.
    pub safe: bool,
    pub safety_violations: u64,
    pub first_divergence: Option<SafetyViolation>,
    /// First round the ground-truth liveness oracle fired, if ever.
    pub oracle_fired: Option<Round>,
    /// First round any honest node confirmed a nonempty block.
    pub first_tx_confirm: Option<Round>,
    pub tx_stats: Vec<TxStat>,
    pub accusation_count: u64,
    /// distinct (violation round, accused set) ψ outcomes across judges.
    pub adjudications: Vec<AdjudicationSummary>,
    pub certificates: Vec<CertificateSummary>,
    /// Distinct nodes certified for the earliest violation round; 0 when no
    /// certificate formed.
    pub achieved_ident: u64,
    /// Whether the realized synchrony flags satisfy the declared x-partial
    /// synchrony bound, when accountability parameters declare one.
    pub conformant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conformance_detail: Option<String>,
    /// Digest of the delivery stream restricted to the projection set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_digest: Option<String>,
}

/// Everything a finished run leaves behind. Corrupted slots hold `None`:
/// whatever state the adversary kept is not part of the protocol.
pub struct RunOutcome {
    pub report: RunReport,
    pub honest: Vec<NodeId>,
    pub nodes: Vec<Option<NodeState>>,
    pub accounts: Vec<Option<AccountState>>,
    pub flags: Vec<bool>,
    /// First captured sanitized bundle per adjudicated violation round.
    pub bundles: Vec<(Round, TranscriptBundle)>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("network model fault: {0}")]
    Model(#[from] ModelFault),
    #[error("round {round}: node {from:?} originated a message authored by honest {author:?}")]
    Forgery { round: Round, from: NodeId, author: NodeId },
}

/// Run a scenario with its configured adversary.
pub fn run(cfg: &ScenarioConfig, sink: &mut TraceSink) -> Result<RunOutcome, RunError> {
    cfg.validate().map_err(RunError::Config)?;
    let strategy = cfg.build_strategy().map_err(RunError::Config)?;
    run_with(cfg, strategy, sink)
}

/// Run a scenario under an explicit strategy, bypassing the registry.
pub fn run_with(
    cfg: &ScenarioConfig,
    mut strategy: Box<dyn Strategy>,
    sink: &mut TraceSink,
) -> Result<RunOutcome, RunError> {
    cfg.validate().map_err(RunError::Config)?;
    let n = cfg.n;
    let corrupt = strategy.corrupt().clone();
    if let Some(x) = corrupt.iter().find(|c| c.0 >= n) {
        return Err(RunError::Config(format!("corrupt node {} out of range", x.0)));
    }
    let honest: Vec<NodeId> = (0..n).map(NodeId).filter(|x| !corrupt.contains(x)).collect();
    let honest_set: BTreeSet<NodeId> = honest.iter().copied().collect();
    let params = cfg.account_params();

    let mut nodes: Vec<Option<NodeState>> = (0..n)
        .map(|i| {
            let id = NodeId(i);
            honest_set.contains(&id).then(|| NodeState::new(id, n, cfg.delta, cfg.seed))
        })
        .collect();
    let mut accounts: Vec<Option<AccountState>> = (0..n)
        .map(|i| {
            let id = NodeId(i);
            match (&params, honest_set.contains(&id)) {
                (Some(p), true) => Some(AccountState::new(id, p.clone())),
                _ => None,
            }
        })
        .collect();

    let mut net = NetSim::new(cfg.delta, cfg.gst);
    let tau_l = (n.saturating_sub(1)) / 3;
    let oracle_window = cfg
        .oracle_window
        .or_else(|| params.as_ref().map(|p| p.window()));
    let mut oracle = oracle_window.map(|w| LivenessOracle::new(w, tau_l, honest_set.clone()));
    let mut safety = SafetyChecker::default();

    let mut injections: BTreeMap<Round, Vec<(NodeId, Transaction)>> = BTreeMap::new();
    for inj in &cfg.injections {
        injections
            .entry(inj.round)
            .or_default()
            .push((NodeId(inj.node), Transaction::new(inj.payload.clone())));
    }
    let mut tx_stats: BTreeMap<TxId, TxStat> = BTreeMap::new();
    for inj in &cfg.injections {
        let tx = Transaction::new(inj.payload.clone());
        tx_stats
            .entry(tx.id)
            .and_modify(|s| s.injected = s.injected.min(inj.round))
            .or_insert(TxStat {
                id: tx.id,
                payload: inj.payload.clone(),
                injected: inj.round,
                first_confirmed: None,
                all_honest_confirmed: None,
            });
    }
    let mut confirmed_by: HashMap<TxId, BTreeSet<NodeId>> = HashMap::new();

    let tracing = !matches!(sink, TraceSink::Null);
    let mut flags = Vec::with_capacity(cfg.horizon as usize);
    let mut originated: HashSet<MsgId> = HashSet::new();
    let projection: Option<BTreeSet<NodeId>> = cfg.projection.as_ref().map(|p| idset(p));
    let mut proj_hash = projection.as_ref().map(|_| Sha256::new());
    let mut oracle_fired: Option<Round> = None;
    let mut first_tx_confirm: Option<Round> = None;
    let mut accusation_count: u64 = 0;
    let mut adjudications: BTreeMap<(Round, Vec<NodeId>), u32> = BTreeMap::new();
    let mut bundles: BTreeMap<Round, TranscriptBundle> = BTreeMap::new();
    let all_nodes: Vec<NodeId> = (0..n).map(NodeId).collect();

    for t in 0..cfg.horizon {
        let directive = strategy.directive(t);
        let deliveries = net.begin_round(t, directive);
        flags.push(net.sync_now());
        if tracing {
            sink.emit(&TraceEvent {
                round: t,
                payload: EventPayload::SyncFlag { value: net.sync_now() },
            });
            for e in &deliveries {
                sink.emit(&TraceEvent {
                    round: t,
                    payload: EventPayload::Deliver {
                        to: e.recipient,
                        from: e.sender,
                        seq: e.seq,
                        msg: MsgRef::of(&e.msg),
                    },
                });
            }
        }
        if let (Some(h), Some(kept)) = (&mut proj_hash, &projection) {
            let mut lines: Vec<(NodeId, NodeId, MsgId)> = deliveries
                .iter()
                .filter(|e| kept.contains(&e.recipient) && e.msg.as_consensus().is_some())
                .map(|e| (e.recipient, e.sender, e.msg.content_id()))
                .collect();
            lines.sort();
            h.update(t.to_le_bytes());
            for (to, from, id) in lines {
                h.update(to.0.to_le_bytes());
                h.update(from.0.to_le_bytes());
                h.update(id.0);
            }
        }

        let round_inj = injections.get(&t).cloned().unwrap_or_default();

        // Sort this round's deliveries per honest recipient, splitting the
        // consensus and accountability planes.
        let mut cons_in: Vec<Vec<Arc<ConsensusMsg>>> = vec![Vec::new(); n as usize];
        let mut acct_in: Vec<Vec<Arc<AccountMsg>>> = vec![Vec::new(); n as usize];
        for e in &deliveries {
            if !honest_set.contains(&e.recipient) {
                continue;
            }
            let slot = e.recipient.0 as usize;
            match &*e.msg {
                Msg::Consensus(c) => cons_in[slot].push(Arc::new(c.clone())),
                Msg::Account(a) => acct_in[slot].push(Arc::new(a.clone())),
            }
            if let Some(orc) = &mut oracle {
                match &*e.msg {
                    Msg::Consensus(ConsensusMsg::TxGossip { tx }) => {
                        orc.possession(e.recipient, tx.id, t);
                    }
                    Msg::Consensus(ConsensusMsg::Proposal { block, .. }) => {
                        for tx in &block.txs {
                            orc.possession(e.recipient, tx.id, t);
                        }
                    }
                    _ => {}
                }
            }
        }

        for &id in &honest {
            let slot = id.0 as usize;
            let node = nodes[slot].as_mut().expect("honest slots are populated");
            let inj: Vec<Transaction> =
                round_inj.iter().filter(|(x, _)| *x == id).map(|(_, tx)| tx.clone()).collect();
            if let Some(orc) = &mut oracle {
                for tx in &inj {
                    orc.possession(id, tx.id, t);
                }
            }
            let mut fx = StepFx::default();
            node.step(t, &cons_in[slot], &inj, &mut fx);

            if let Some(ci) = &fx.confirmed {
                let chain: Vec<crate::ids::BlockId> =
                    node.log_blocks.iter().map(|b| b.id).collect();
                safety.observe(t, id, &chain);
                if let Some(orc) = &mut oracle {
                    if ci.extends {
                        orc.confirmed(id, &ci.new_txs);
                    } else {
                        let log: HashSet<TxId> = node.log.iter().copied().collect();
                        orc.log_replaced(id, &log);
                    }
                }
                if !ci.new_txs.is_empty() && first_tx_confirm.is_none() {
                    first_tx_confirm = Some(t);
                }
                for txid in &ci.new_txs {
                    if let Some(stat) = tx_stats.get_mut(txid) {
                        if stat.first_confirmed.is_none() {
                            stat.first_confirmed = Some(t);
                        }
                        let set = confirmed_by.entry(*txid).or_default();
                        set.insert(id);
                        if set.len() == honest.len() && stat.all_honest_confirmed.is_none() {
                            stat.all_honest_confirmed = Some(t);
                        }
                    }
                }
            }
            if tracing {
                if let Some(b) = &fx.proposed {
                    sink.emit(&TraceEvent {
                        round: t,
                        payload: EventPayload::Proposal {
                            node: id,
                            view: b.view,
                            block: b.id,
                            justify_view: b.justify.view,
                            txs: b.txs.len(),
                        },
                    });
                }
                for &(stage, view, block) in &fx.votes {
                    sink.emit(&TraceEvent {
                        round: t,
                        payload: EventPayload::Vote { node: id, stage, view, block },
                    });
                }
                if let Some(view) = fx.votelive {
                    sink.emit(&TraceEvent { round: t, payload: EventPayload::Votelive { node: id, view } });
                }
                if let Some(ci) = &fx.confirmed {
                    sink.emit(&TraceEvent {
                        round: t,
                        payload: EventPayload::Confirm {
                            node: id,
                            view: ci.view,
                            block: ci.block,
                            extends: ci.extends,
                            log_len: ci.log_len,
                            new_txs: ci.new_txs.clone(),
                        },
                    });
                }
            }
            for em in &fx.out {
                originated.insert(em.msg.content_id());
                let others: Vec<NodeId> = all_nodes.iter().copied().filter(|x| *x != id).collect();
                let seq = net.broadcast(t, id, em.msg.clone(), &others);
                if tracing {
                    sink.emit(&TraceEvent {
                        round: t,
                        payload: EventPayload::Send {
                            from: id,
                            seq,
                            relay: em.relay,
                            msg: MsgRef::of(&em.msg),
                        },
                    });
                }
            }

            if let Some(acct) = accounts[slot].as_mut() {
                let mut afx = AccountFx::default();
                acct.step(t, node, &acct_in[slot], &mut afx);
                accusation_count += afx.accusations.len() as u64;
                for (round, report) in &afx.psi_runs {
                    let key = (*round, report.accused.iter().copied().collect::<Vec<_>>());
                    *adjudications.entry(key).or_insert(0u32) += 1;
                }
                for (round, bundle) in afx.bundles.drain(..) {
                    bundles.entry(round).or_insert(bundle);
                }
                if tracing {
                    if let Some((as_of, digest, entries)) = &afx.snapshot {
                        sink.emit(&TraceEvent {
                            round: t,
                            payload: EventPayload::Transcript {
                                node: id,
                                as_of: *as_of,
                                digest: *digest,
                                entries: *entries,
                            },
                        });
                    }
                    for a in &afx.accusations {
                        sink.emit(&TraceEvent {
                            round: t,
                            payload: EventPayload::Accusation {
                                accuser: a.accuser,
                                accused: a.accused.iter().copied().collect(),
                                violation_round: a.violation_round,
                            },
                        });
                    }
                    for c in &afx.certificates {
                        sink.emit(&TraceEvent {
                            round: t,
                            payload: EventPayload::Certificate {
                                accused: c.accused,
                                violation_round: c.violation_round,
                                supporters: c.supporting.iter().map(|a| a.accuser).collect(),
                            },
                        });
                    }
                }
                for em in &afx.out {
                    originated.insert(em.msg.content_id());
                    let others: Vec<NodeId> =
                        all_nodes.iter().copied().filter(|x| *x != id).collect();
                    let seq = net.broadcast(t, id, em.msg.clone(), &others);
                    if tracing {
                        sink.emit(&TraceEvent {
                            round: t,
                            payload: EventPayload::Send {
                                from: id,
                                seq,
                                relay: em.relay,
                                msg: MsgRef::of(&em.msg),
                            },
                        });
                    }
                }
            }
        }

        let io = StrategyIo { t, deliveries: &deliveries, injections: &round_inj };
        for send in strategy.act(&io) {
            if let Some(author) = send.msg.author() {
                if !corrupt.contains(&author) && !originated.contains(&send.msg.content_id()) {
                    return Err(RunError::Forgery { round: t, from: send.from, author });
                }
            }
            originated.insert(send.msg.content_id());
            let recipients: Vec<NodeId> = match &send.to {
                Recipients::Others => {
                    all_nodes.iter().copied().filter(|x| *x != send.from).collect()
                }
                Recipients::Only(v) => v.clone(),
            };
            let seq = net.broadcast(t, send.from, send.msg.clone(), &recipients);
            if tracing {
                sink.emit(&TraceEvent {
                    round: t,
                    payload: EventPayload::Send {
                        from: send.from,
                        seq,
                        relay: false,
                        msg: MsgRef::of(&send.msg),
                    },
                });
            }
        }

        if let Some(orc) = &oracle {
            if oracle_fired.is_none() && orc.fires(t) {
                oracle_fired = Some(t);
                if tracing {
                    let witnesses = orc.witnesses(t);
                    sink.emit(&TraceEvent {
                        round: t,
                        payload: EventPayload::Oracle {
                            name: "liveness".into(),
                            ok: false,
                            detail: format!("{} transaction(s) stuck past the window", witnesses.len()),
                        },
                    });
                }
            }
        }

        net.end_round(t)?;
    }

    let conformance = cfg.accountability.as_ref().map(|acc| {
        let dp = params.as_ref().expect("accountability params exist").delta_prime();
        validate_x_psync(&flags, dp, acc.g, acc.x)
    });
    let (conformant, conformance_detail) = match conformance {
        None => (None, None),
        Some(c) if c.is_ok() => (Some(true), None),
        Some(c) => (Some(false), Some(format!("{c:?}"))),
    };

    let mut cert_index: BTreeMap<(NodeId, Round), Vec<NodeId>> = BTreeMap::new();
    for &id in &honest {
        if let Some(acct) = &accounts[id.0 as usize] {
            for c in acct.certificates() {
                cert_index.entry((c.accused, c.violation_round)).or_default().push(id);
            }
        }
    }
    let achieved_ident = cert_index
        .keys()
        .map(|(_, round)| *round)
        .min()
        .map_or(0, |earliest| {
            cert_index
                .keys()
                .filter(|(_, round)| *round == earliest)
                .map(|(accused, _)| *accused)
                .collect::<BTreeSet<_>>()
                .len() as u64
        });
    let certificates = cert_index
        .into_iter()
        .map(|((accused, violation_round), holders)| CertificateSummary {
            accused,
            violation_round,
            holders,
        })
        .collect();
    let adjudications = adjudications
        .into_iter()
        .map(|((violation_round, accused), judges)| AdjudicationSummary {
            violation_round,
            accused,
            judges,
        })
        .collect();

    let report = RunReport {
        name: cfg.name.clone(),
        seed: cfg.seed,
        n,
        rounds: cfg.horizon,
        safe: safety.is_safe(),
        safety_violations: safety.violation_count(),
        first_divergence: safety.violations().first().cloned(),
        oracle_fired,
        first_tx_confirm,
        tx_stats: tx_stats.into_values().collect(),
        accusation_count,
        certificates,
        adjudications,
        achieved_ident,
        conformant,
        conformance_detail,
        projection_digest: proj_hash.map(|h| hex::encode(h.finalize())),
    };
    let bundles = bundles.into_iter().collect();
    Ok(RunOutcome { report, honest, nodes, accounts, flags, bundles })
}
