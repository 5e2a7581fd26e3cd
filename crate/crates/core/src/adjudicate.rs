//! The ψ adjudication rule: from a sanitized bundle of transcripts to a set
//! of accused nodes, with every intermediate exposed for offline audit.
//!
//! The pipeline is a straight composition. Sanitize the submitted transcripts
//! into one-or-⊥ per node; run the blame rules over each transcript to get a
//! blame matrix; threshold each super-view's columns into the
//! popularly-accused set `PA(u)`; connect super-views whose `PA` sets overlap
//! heavily; keep the super-views that are both well-populated and
//! well-connected; accuse the nodes that appear in more than an
//! `(x+δx)`-fraction of those. Each stage is a pure deterministic function,
//! and all the fraction comparisons are exact.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::blame::{SuperViewIndex, TranscriptIndex};
use crate::ids::{NodeId, Round};
use crate::transcript::Transcript;
use crate::Frac;

/// At most one transcript per node, ⊥ (None) for nodes that submitted
/// nothing usable. Index position is the owner id.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TranscriptBundle {
    pub as_of: Round,
    pub transcripts: Vec<Option<Transcript>>,
}

impl TranscriptBundle {
    pub fn submitted(&self) -> usize {
        self.transcripts.iter().filter(|t| t.is_some()).count()
    }
}

/// Everything ψ needs besides the bundle and the super-view partition.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PsiParams {
    pub n: u32,
    pub tau_al_max: u32,
    #[serde(with = "crate::fracfmt")]
    pub x: Frac,
    #[serde(with = "crate::fracfmt")]
    pub delta_x: Frac,
    pub delta: u64,
    pub seed: u64,
}

impl PsiParams {
    pub fn x_total(&self) -> Frac {
        self.x + self.delta_x
    }
}

/// Reduce raw submissions to one-or-⊥ per node. A node ends up ⊥ if it
/// submitted nothing for this `as_of`, submitted two distinct transcripts
/// (equivocation), or its single submission is malformed: entries past
/// `as_of`, duplicated entries, or a mismatched owner tag.
pub fn sanitize_bundle(n: u32, as_of: Round, submissions: &[Transcript]) -> TranscriptBundle {
    let mut per_node: Vec<Vec<&Transcript>> = vec![Vec::new(); n as usize];
    for tr in submissions {
        if tr.owner.index() >= n as usize || tr.as_of != as_of {
            continue;
        }
        let slot = &mut per_node[tr.owner.index()];
        if !slot.iter().any(|prev| **prev == *tr) {
            slot.push(tr);
        }
    }
    let transcripts = per_node
        .into_iter()
        .map(|candidates| match candidates.as_slice() {
            [single] if well_formed(single) => Some((*single).clone()),
            _ => None,
        })
        .collect();
    TranscriptBundle { as_of, transcripts }
}

fn well_formed(tr: &Transcript) -> bool {
    let mut seen = BTreeSet::new();
    tr.entries().all(|(m, r)| r <= tr.as_of && seen.insert(m.content_id()))
}

/// Blame[p][u][p′], stored as the blamed set per owner row and super-view.
/// Rows for ⊥ transcripts are empty.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlameMatrix {
    pub rows: Vec<Vec<BTreeSet<NodeId>>>,
    pub submitted: Vec<bool>,
}

impl BlameMatrix {
    pub fn compute(bundle: &TranscriptBundle, index: &SuperViewIndex, params: &PsiParams) -> Self {
        assert!(
            bundle.as_of >= index.end_round(params.delta),
            "bundle as_of {} does not cover the index (ends {})",
            bundle.as_of,
            index.end_round(params.delta)
        );
        let empty = vec![BTreeSet::new(); index.g as usize];
        let mut rows = Vec::with_capacity(bundle.transcripts.len());
        let mut submitted = Vec::with_capacity(bundle.transcripts.len());
        for tr in &bundle.transcripts {
            match tr {
                None => {
                    rows.push(empty.clone());
                    submitted.push(false);
                }
                Some(tr) => {
                    let mut ix =
                        TranscriptIndex::build(tr, params.n, params.delta, params.seed);
                    rows.push((0..index.g).map(|u| ix.blame_superview(index, u)).collect());
                    submitted.push(true);
                }
            }
        }
        BlameMatrix { rows, submitted }
    }
}

/// Nodes blamed for super-view `u` by at least `n − τALmax` transcript rows.
pub fn compute_pa(matrix: &BlameMatrix, u: u64, n: u32, tau_al_max: u32) -> BTreeSet<NodeId> {
    assert!(tau_al_max * 2 < n, "requires τALmax < n/2");
    let threshold = (n - tau_al_max) as usize;
    let mut out = BTreeSet::new();
    for p in (0..n).map(NodeId) {
        let count = matrix.rows.iter().filter(|row| row[u as usize].contains(&p)).count();
        if count >= threshold {
            out.insert(p);
        }
    }
    out
}

/// Edges between super-views whose popularly-accused sets overlap in at
/// least `2n/3 − τALmax` nodes. The comparison is exact: `3·|∩| ≥ 2n − 3τ`.
pub fn build_overlap_graph(pa: &[BTreeSet<NodeId>], n: u32, tau_al_max: u32) -> Vec<(u64, u64)> {
    let mut edges = Vec::new();
    for u in 0..pa.len() {
        for w in u + 1..pa.len() {
            let common = pa[u].intersection(&pa[w]).count();
            if 3 * common as i64 >= 2 * n as i64 - 3 * tau_al_max as i64 {
                edges.push((u as u64, w as u64));
            }
        }
    }
    edges
}

/// Critical super-views: popularly-accused set of at least ⌈n/3⌉ nodes and
/// overlap-graph degree strictly above `(x+δx)|U|`.
pub fn select_critical(
    pa: &[BTreeSet<NodeId>],
    edges: &[(u64, u64)],
    x_total: Frac,
    n: u32,
) -> Vec<u64> {
    let total = pa.len() as i64;
    let mut deg = vec![0i64; pa.len()];
    for (u, w) in edges {
        deg[*u as usize] += 1;
        deg[*w as usize] += 1;
    }
    let min_pa = n.div_ceil(3) as usize;
    (0..pa.len() as u64)
        .filter(|u| {
            pa[*u as usize].len() >= min_pa
                && deg[*u as usize] * x_total.denom() > x_total.numer() * total
        })
        .collect()
}

/// Final thresholding: accuse the nodes appearing in strictly more than an
/// `(x+δx)` fraction of the critical super-views' popularly-accused sets.
pub fn accuse(
    pa: &[BTreeSet<NodeId>],
    critical: &[u64],
    x_total: Frac,
    n: u32,
) -> BTreeSet<NodeId> {
    let threshold = x_total * Frac::from_integer(critical.len() as i64);
    let mut accused = BTreeSet::new();
    for p in (0..n).map(NodeId) {
        let count = critical.iter().filter(|u| pa[**u as usize].contains(&p)).count();
        if Frac::from_integer(count as i64) > threshold {
            accused.insert(p);
        }
    }
    accused
}

/// The full ψ run with all intermediates, serializable for offline audit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsiReport {
    pub pa: Vec<BTreeSet<NodeId>>,
    pub edges: Vec<(u64, u64)>,
    pub critical: Vec<u64>,
    pub accused: BTreeSet<NodeId>,
}

/// Compose the whole pipeline. An empty critical set yields an empty accused
/// set: insufficient evidence, not an error.
pub fn psi(bundle: &TranscriptBundle, index: &SuperViewIndex, params: &PsiParams) -> PsiReport {
    assert!(
        params.x_total() * Frac::from_integer(2) < Frac::from_integer(1),
        "requires x + δx < 1/2"
    );
    assert!(
        3 * params.tau_al_max > params.n && 2 * params.tau_al_max < params.n,
        "requires n/3 < τALmax < n/2"
    );
    let matrix = BlameMatrix::compute(bundle, index, params);
    let pa: Vec<BTreeSet<NodeId>> = (0..index.g)
        .map(|u| compute_pa(&matrix, u, params.n, params.tau_al_max))
        .collect();
    let edges = build_overlap_graph(&pa, params.n, params.tau_al_max);
    let critical = select_critical(&pa, &edges, params.x_total(), params.n);
    let accused = accuse(&pa, &critical, params.x_total(), params.n);
    PsiReport { pa, edges, critical, accused }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::leader_for_view;
    use crate::ids::View;
    use crate::msg::{Block, ConsensusMsg, QuorumCert, Stage, Transaction};
    use std::sync::Arc;

    fn tr(owner: u32, as_of: Round, entries: Vec<(ConsensusMsg, Round)>) -> Transcript {
        Transcript::from_entries(
            NodeId(owner),
            as_of,
            entries.into_iter().map(|(m, r)| (Arc::new(m), r)).collect(),
        )
    }

    fn gossip(p: &str) -> ConsensusMsg {
        ConsensusMsg::TxGossip { tx: Transaction::new(p) }
    }

    #[test]
    fn sanitize_keeps_unique_well_formed_submissions() {
        let subs = vec![tr(0, 10, vec![]), tr(1, 10, vec![(gossip("a"), 3)])];
        let bundle = sanitize_bundle(3, 10, &subs);
        assert!(bundle.transcripts[0].is_some());
        assert!(bundle.transcripts[1].is_some());
        assert!(bundle.transcripts[2].is_none(), "no submission is ⊥");
        assert_eq!(bundle.submitted(), 2);
    }

    #[test]
    fn sanitize_drops_equivocating_and_malformed_submissions() {
        let a = tr(0, 10, vec![(gossip("a"), 1)]);
        let b = tr(0, 10, vec![(gossip("b"), 1)]);
        let bundle = sanitize_bundle(2, 10, &[a.clone(), b]);
        assert!(bundle.transcripts[0].is_none(), "two distinct transcripts → ⊥");

        // The same transcript twice is not equivocation.
        let bundle = sanitize_bundle(2, 10, &[a.clone(), a.clone()]);
        assert!(bundle.transcripts[0].is_some());

        // Receipt beyond as_of → ⊥.
        let late = tr(1, 10, vec![(gossip("c"), 11)]);
        let bundle = sanitize_bundle(2, 10, &[late]);
        assert!(bundle.transcripts[1].is_none());

        // Duplicate entry content → ⊥.
        let dup = tr(1, 10, vec![(gossip("c"), 3), (gossip("c"), 4)]);
        let bundle = sanitize_bundle(2, 10, &[dup]);
        assert!(bundle.transcripts[1].is_none());

        // Wrong as_of or out-of-range owner is simply not part of this bundle.
        let other = tr(1, 9, vec![]);
        let stray = tr(7, 10, vec![]);
        let bundle = sanitize_bundle(2, 10, &[other, stray]);
        assert!(bundle.transcripts.iter().all(|t| t.is_none()));
    }

    fn matrix_from(rows: Vec<Vec<Vec<u32>>>) -> BlameMatrix {
        let submitted = vec![true; rows.len()];
        BlameMatrix {
            rows: rows
                .into_iter()
                .map(|row| row.into_iter().map(|s| s.into_iter().map(NodeId).collect()).collect())
                .collect(),
            submitted,
        }
    }

    #[test]
    fn pa_thresholds_are_exact() {
        // n=30, τALmax=12: 18 blaming rows needed.
        let mut rows = vec![vec![vec![]; 1]; 30];
        for row in rows.iter_mut().take(17) {
            row[0] = vec![5];
        }
        let m = matrix_from(rows.clone());
        assert!(compute_pa(&m, 0, 30, 12).is_empty(), "17 rows miss the threshold");

        rows[17][0] = vec![5];
        let m = matrix_from(rows.clone());
        assert_eq!(compute_pa(&m, 0, 30, 12), BTreeSet::from([NodeId(5)]));

        // All rows blaming always clears it.
        let all = matrix_from(vec![vec![vec![9]]; 30]);
        assert_eq!(compute_pa(&all, 0, 30, 12), BTreeSet::from([NodeId(9)]));
    }

    #[test]
    fn overlap_graph_uses_the_exact_rational_threshold() {
        // n=12, τALmax=6 (the τ = n/2 boundary): threshold 2n/3 − τ = n/6 = 2.
        let pa: Vec<BTreeSet<NodeId>> = vec![
            [0, 1, 2].into_iter().map(NodeId).collect(),
            [1, 2, 3].into_iter().map(NodeId).collect(),
            [3, 4, 5].into_iter().map(NodeId).collect(),
            BTreeSet::new(),
        ];
        let edges = build_overlap_graph(&pa, 12, 6);
        // |0∩1| = 2 ≥ 2 ✓; |1∩2| = 1 ✗; |0∩2| = 0 ✗; empty set never overlaps.
        assert_eq!(edges, vec![(0, 1)]);

        // Equal PA sets of size ⌈n/3⌉ always connect once τALmax ≥ n/3:
        // n=9, τ=4 → threshold 2·9/3−4 = 2, |PA| = 3 ≥ 2.
        let s: BTreeSet<NodeId> = [0, 1, 2].into_iter().map(NodeId).collect();
        let edges = build_overlap_graph(&[s.clone(), s], 9, 4);
        assert_eq!(edges, vec![(0, 1)]);

        // Non-multiple-of-three n: n=10, τ=4 → 3|∩| ≥ 20−12 = 8 → |∩| ≥ 3.
        let a: BTreeSet<NodeId> = [0, 1, 2].into_iter().map(NodeId).collect();
        let b: BTreeSet<NodeId> = [0, 1, 2, 3].into_iter().map(NodeId).collect();
        let c: BTreeSet<NodeId> = [1, 2, 3].into_iter().map(NodeId).collect();
        assert_eq!(build_overlap_graph(&[a, b, c], 10, 4), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn critical_selection_requires_population_and_degree() {
        // |U| = 6, x+δx = 1/3 → degree strictly above 2. Four super-views
        // share a PA of size ⌈9/3⌉ = 3 (complete subgraph, degree 3); one has
        // a big PA but sits isolated; one is well-connected but sparse.
        let s: BTreeSet<NodeId> = [0, 1, 2].into_iter().map(NodeId).collect();
        let lone: BTreeSet<NodeId> = [6, 7, 8].into_iter().map(NodeId).collect();
        let pa = vec![s.clone(), s.clone(), s.clone(), s.clone(), lone, BTreeSet::new()];
        let edges = build_overlap_graph(&pa, 9, 4);
        let critical = select_critical(&pa, &edges, Frac::new(1, 3), 9);
        assert_eq!(critical, vec![0, 1, 2, 3]);

        // Degree exactly at the threshold is not enough: |U|=6, x+δx=1/2,
        // complete graph on 4 gives degree 3 = (1/2)·6, excluded.
        let critical = select_critical(&pa, &edges, Frac::new(1, 2), 9);
        assert!(critical.is_empty());

        // All-empty PA sets → ∅.
        let pa = vec![BTreeSet::new(); 5];
        assert!(select_critical(&pa, &[], Frac::new(1, 3), 9).is_empty());
    }

    /// Build the transcript a node would hold after `views` fully synchronous
    /// views in which `silent` nodes sent nothing and everyone else followed
    /// the protocol (with Δ = 1, genesis-justified single-block views).
    fn censored_run_transcript(
        owner: u32,
        n: u32,
        seed: u64,
        views: View,
        silent: &[u32],
    ) -> Transcript {
        let mut entries = Vec::new();
        for v in 0..views {
            let base = 12 * v as Round;
            let leader = leader_for_view(seed, n, v);
            let tx = Transaction::new(format!("tx-{v}"));
            let b = Arc::new(Block::new(v, QuorumCert::genesis(), vec![tx.clone()], leader));
            entries.push((ConsensusMsg::TxGossip { tx }, base));
            if silent.contains(&leader.0) {
                // Leaderless view: nothing happens, nobody is obligated.
                continue;
            }
            entries.push((ConsensusMsg::Proposal { block: b.clone(), signer: leader }, base + 3));
            for s in 0..n {
                if silent.contains(&s) {
                    continue;
                }
                entries.push((
                    ConsensusMsg::Vote { stage: Stage::Stage1, view: v, block: b.id, signer: NodeId(s) },
                    base + 5,
                ));
                entries.push((
                    ConsensusMsg::Vote { stage: Stage::Stage2, view: v, block: b.id, signer: NodeId(s) },
                    base + 8,
                ));
                entries.push((ConsensusMsg::VoteLive { view: v, signer: NodeId(s) }, base + 11));
            }
        }
        tr(owner, 12 * views as Round, entries)
    }

    fn params_n9() -> PsiParams {
        PsiParams {
            n: 9,
            tau_al_max: 4,
            x: Frac::new(1, 4),
            delta_x: Frac::new(1, 12),
            delta: 1,
            seed: 11,
        }
    }

    #[test]
    fn psi_accuses_a_censoring_coalition_and_nobody_else() {
        // n = 9, τALmax = 4, f = 3 silent nodes, 8 super-views of 2 views.
        // Honest nodes (6 of them, ≥ n − τALmax = 5) all submit; every
        // honest-leader view blames exactly the silent set.
        let params = params_n9();
        let index = SuperViewIndex { start_view: 0, k_views: 2, g: 8 };
        let silent = [6, 7, 8];
        let subs: Vec<Transcript> = (0..9)
            .filter(|p| !silent.contains(p))
            .map(|p| censored_run_transcript(p, 9, params.seed, 16, &silent))
            .collect();
        let bundle = sanitize_bundle(9, index.end_round(1), &subs);
        assert_eq!(bundle.submitted(), 6);
        let report = psi(&bundle, &index, &params);
        let want: BTreeSet<NodeId> = silent.into_iter().map(NodeId).collect();
        for u in &report.critical {
            assert_eq!(report.pa[*u as usize], want);
        }
        assert!(!report.critical.is_empty(), "honest-leader super-views are critical");
        assert_eq!(report.accused, want);
    }

    #[test]
    fn psi_with_no_evidence_returns_empty() {
        // All-honest run: nobody blames anybody, U′ = ∅, accused = ∅.
        let params = params_n9();
        let index = SuperViewIndex { start_view: 0, k_views: 2, g: 4 };
        let subs: Vec<Transcript> = (0..9)
            .map(|p| censored_run_transcript(p, 9, params.seed, 8, &[]))
            .collect();
        let bundle = sanitize_bundle(9, index.end_round(1), &subs);
        let report = psi(&bundle, &index, &params);
        assert!(report.critical.is_empty());
        assert!(report.accused.is_empty());

        // An entirely-⊥ bundle behaves the same.
        let empty = sanitize_bundle(9, index.end_round(1), &[]);
        let report = psi(&empty, &index, &params);
        assert!(report.accused.is_empty());
    }

    #[test]
    fn psi_is_deterministic_and_serializable() {
        let params = params_n9();
        let index = SuperViewIndex { start_view: 0, k_views: 2, g: 8 };
        let silent = [6, 7, 8];
        let subs: Vec<Transcript> = (0..6)
            .map(|p| censored_run_transcript(p, 9, params.seed, 16, &silent))
            .collect();
        let bundle = sanitize_bundle(9, index.end_round(1), &subs);
        let a = psi(&bundle, &index, &params);
        let b = psi(&bundle, &index, &params);
        assert_eq!(a.accused, b.accused);
        assert_eq!(a.pa, b.pa);
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.critical, b.critical);

        let json = serde_json::to_string(&bundle).unwrap();
        let back: TranscriptBundle = serde_json::from_str(&json).unwrap();
        let c = psi(&back, &index, &params);
        assert_eq!(c.accused, a.accused);

        let report_json = serde_json::to_string(&a).unwrap();
        let report: PsiReport = serde_json::from_str(&report_json).unwrap();
        assert_eq!(report.accused, a.accused);
    }
}
