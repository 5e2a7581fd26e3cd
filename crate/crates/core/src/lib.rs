//! Deterministic round-based simulation of an accountably-live BFT protocol.
//!
//! The crate is organized around a synchronous round clock. A view spans 12Δ
//! rounds; within a view the protocol proposes at +2Δ, casts stage-1 votes at
//! +4Δ, casts stage-2 votes (and updates locks) at +7Δ, confirms as soon as
//! both quorum certificates are visible, and casts a liveness vote at +10Δ.
//! Everything else in the crate hangs off that clock:
//!
//! * [`consensus`] — the per-node state machine, pure and replayable.
//! * [`netsim`] — the adversarial countdown network and the world loop.
//! * [`sched`] — synchrony schedules and the x-partial-synchrony validator.
//! * [`adversary`] — built-in attack strategies (crash, censor, split-brain,
//!   partition cycler, equivocating leader, transcript framer, fuzzing).
//! * [`transcript`] / [`blame`] — signed message-receipt transcripts and the
//!   per-view blame rules computed from them.
//! * [`adjudicate`] — the offline adjudication pipeline that turns a bundle of
//!   transcripts into a set of accused nodes, with audit artifacts.
//! * [`account`] — the in-protocol accountability layer: snapshot broadcast,
//!   violation detection, accusations, certificates of guilt.
//! * [`oracle`] — the ground-truth timely-liveness violation oracle.
//! * [`analysis`] — closed forms for the achievability/impossibility frontier.
//! * [`scenario`] — run configuration, reports, and the top-level runner.
//! * [`trace`] — the JSONL event stream every run emits.
//!
//! All randomness is derived from explicit seeds, every map that feeds an
//! output is iterated in a stable order, and reruns of a configuration are
//! byte-identical.

pub mod account;
pub mod adjudicate;
pub mod adversary;
pub mod analysis;
pub mod blame;
pub mod consensus;
pub mod ids;
pub mod msg;
pub mod netsim;
pub mod oracle;
pub mod scenario;
pub mod sched;
pub mod trace;
pub mod transcript;

pub use ids::{BlockId, MsgId, NodeId, Round, TxId, View};
pub use scenario::{run, RunOutcome, RunReport, ScenarioConfig};

/// Serde adapter rendering a [`Frac`] as the string `"num/den"` (or a bare
/// integer when the denominator is 1), so config files read naturally.
/// Accepts both forms on input.
pub mod fracfmt {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::Frac;

    pub fn serialize<S: Serializer>(f: &Frac, s: S) -> Result<S::Ok, S::Error> {
        if *f.denom() == 1 {
            s.serialize_str(&f.numer().to_string())
        } else {
            s.serialize_str(&format!("{}/{}", f.numer(), f.denom()))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Frac, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(D::Error::custom)
    }

    pub fn parse(raw: &str) -> Result<Frac, String> {
        let mk = |n: i64, d: i64| {
            if d == 0 {
                Err(format!("zero denominator in {raw:?}"))
            } else {
                Ok(Frac::new(n, d))
            }
        };
        match raw.split_once('/') {
            Some((n, d)) => {
                let n = n.trim().parse().map_err(|e| format!("bad numerator {n:?}: {e}"))?;
                let d = d.trim().parse().map_err(|e| format!("bad denominator {d:?}: {e}"))?;
                mk(n, d)
            }
            None => {
                let n = raw.trim().parse().map_err(|e| format!("bad fraction {raw:?}: {e}"))?;
                mk(n, 1)
            }
        }
    }
}

/// Exact fraction used wherever the source algebra keeps a rational (x, δx,
/// quota comparisons). Never a float: thresholds are compared cross-multiplied.
pub type Frac = num_rational::Ratio<i64>;
