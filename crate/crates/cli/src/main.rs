//! Command-line front end: run scenarios to disk artifacts, re-adjudicate
//! saved bundles, check synchrony schedules, and tabulate the identification
//! frontier.
//!
//! Exit codes are a stable contract: 0 success, 2 usage or configuration
//! problems, 3 a breached invariant (an honest node certified guilty, a
//! network model fault, a schedule violation, or a replay mismatch).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acclive_core::adjudicate::{psi, TranscriptBundle};
use acclive_core::blame::SuperViewIndex;
use acclive_core::scenario::{run, RunError, RunReport, ScenarioConfig};
use acclive_core::sched::{validate_x_psync, Conformance};
use acclive_core::trace::TraceSink;
use acclive_core::{Frac, NodeId, Round, View};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "acclive", version, about = "Deterministic accountably-live BFT simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a scenario; write trace.jsonl, report.json, metrics.csv, the
    /// resolved config, and one bundle file per adjudication into --out.
    Run {
        /// Scenario config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Replace the config's seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Replace the config's horizon (rounds).
        #[arg(long)]
        horizon: Option<Round>,
    },
    /// Run the offline adjudicator over a bundle file and print the verdict
    /// with its audit artifacts.
    Adjudicate {
        /// Bundle JSON (a saved `bundle-*.json` or a bare transcript bundle).
        #[arg(long)]
        bundle: PathBuf,
        /// Scenario config supplying the adjudication parameters.
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a recorded synchrony schedule against its x-partial-synchrony
    /// declaration.
    Validate {
        /// Schedule JSON: {"delta_prime", "g", "x", "flags"}.
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Evaluate achievable and converse identification counts across an x
    /// grid and write them as CSV.
    Frontier {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        tau_al_max: u32,
        /// Comma-separated fractions, e.g. "1/20,1/10,1/4". Defaults to
        /// 1/20 through 9/20.
        #[arg(long)]
        grid: Option<String>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-adjudicate every bundle a run saved and compare against the run's
    /// recorded adjudications.
    Replay {
        /// A directory previously produced by `run --out`.
        #[arg(long)]
        out: PathBuf,
    },
}

/// On-disk form of one saved adjudication.
#[derive(Serialize, Deserialize)]
struct SavedBundle {
    violation_round: Round,
    bundle: TranscriptBundle,
}

/// Schedule file consumed by `validate`.
#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    delta_prime: u64,
    g: u64,
    #[serde(with = "acclive_core::fracfmt")]
    x: Frac,
    flags: Vec<bool>,
}

fn verbose() -> bool {
    std::env::var("ACCLIVE_LOG").is_ok_and(|v| !v.is_empty() && v != "0" && v != "off")
}

fn log(msg: &str) {
    if verbose() {
        eprintln!("acclive: {msg}");
    }
}

const OK: u8 = 0;
const USAGE: u8 = 2;
const BREACH: u8 = 3;

fn usage_err(msg: &str) -> u8 {
    eprintln!("error: {msg}");
    USAGE
}

fn breach(msg: &str) -> u8 {
    eprintln!("invariant breach: {msg}");
    BREACH
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run { config, out, seed_override, horizon } => {
            cmd_run(&config, &out, seed_override, horizon)
        }
        Cmd::Adjudicate { bundle, config } => cmd_adjudicate(&bundle, &config),
        Cmd::Validate { schedule } => cmd_validate(&schedule),
        Cmd::Frontier { n, tau_al_max, grid, out } => cmd_frontier(n, tau_al_max, grid, &out),
        Cmd::Replay { out } => cmd_replay(&out),
    };
    ExitCode::from(code)
}

fn load_config(path: &Path) -> Result<ScenarioConfig, String> {
    let raw = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    ScenarioConfig::from_json(&raw).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_run(
    config: &Path,
    out: &Path,
    seed_override: Option<u64>,
    horizon: Option<Round>,
) -> u8 {
    let mut cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return usage_err(&e),
    };
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    if let Err(e) = cfg.validate() {
        return usage_err(&format!("after overrides: {e}"));
    }
    if let Err(e) = fs::create_dir_all(out) {
        return usage_err(&format!("cannot create {}: {e}", out.display()));
    }
    log(&format!("running {} for {} rounds (seed {})", cfg.name, cfg.horizon, cfg.seed));

    let trace_path = out.join("trace.jsonl");
    let trace_file = match fs::File::create(&trace_path) {
        Ok(f) => f,
        Err(e) => return usage_err(&format!("cannot create {}: {e}", trace_path.display())),
    };
    let mut sink = TraceSink::jsonl(Box::new(BufWriter::new(trace_file)));
    let outcome = match run(&cfg, &mut sink) {
        Ok(o) => o,
        Err(RunError::Config(e)) => return usage_err(&e),
        Err(e @ (RunError::Model(_) | RunError::Forgery { .. })) => return breach(&e.to_string()),
    };
    if let Err(e) = sink.finish() {
        return usage_err(&format!("cannot flush trace: {e}"));
    }

    if let Err(e) = write_json(&out.join("config.json"), &cfg)
        .and_then(|()| write_json(&out.join("report.json"), &outcome.report))
        .and_then(|()| write_metrics(&out.join("metrics.csv"), &outcome.report))
    {
        return usage_err(&e);
    }
    for (violation_round, bundle) in &outcome.bundles {
        let saved = SavedBundle { violation_round: *violation_round, bundle: bundle.clone() };
        let path = out.join(format!("bundle-{violation_round}.json"));
        if let Err(e) = write_json(&path, &saved) {
            return usage_err(&e);
        }
    }
    log(&format!(
        "wrote {} artifacts ({} adjudication bundle(s))",
        out.display(),
        outcome.bundles.len()
    ));

    let honest: BTreeSet<NodeId> = outcome.honest.iter().copied().collect();
    for id in &outcome.honest {
        let Some(acct) = outcome.accounts[id.0 as usize].as_ref() else { continue };
        for cert in acct.certificates() {
            if honest.contains(&cert.accused) {
                return breach(&format!(
                    "honest node {} holds a certificate of guilt against honest node {}",
                    id.0, cert.accused.0
                ));
            }
        }
    }

    let r = &outcome.report;
    println!(
        "{}: {} rounds, safe={}, oracle_fired={:?}, certificates={}, conformant={:?}",
        r.name,
        r.rounds,
        r.safe,
        r.oracle_fired,
        r.certificates.len(),
        r.conformant
    );
    OK
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| format!("cannot serialize {}: {e}", path.display()))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn write_metrics(path: &Path, report: &RunReport) -> Result<(), String> {
    let file = fs::File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record([
        "tx_id",
        "payload",
        "injected",
        "first_confirmed",
        "all_honest_confirmed",
        "latency_all_honest",
    ])
    .map_err(|e| e.to_string())?;
    for st in &report.tx_stats {
        let opt = |r: Option<Round>| r.map(|x| x.to_string()).unwrap_or_default();
        let latency = st.all_honest_confirmed.map(|r| (r - st.injected).to_string());
        w.write_record([
            st.id.to_string(),
            st.payload.clone(),
            st.injected.to_string(),
            opt(st.first_confirmed),
            opt(st.all_honest_confirmed),
            latency.unwrap_or_default(),
        ])
        .map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// Rebuild the super-view index a bundle was adjudicated under. The bundle's
/// `as_of` is the window boundary the in-protocol run used.
fn index_for(cfg: &ScenarioConfig, as_of: Round) -> Result<SuperViewIndex, String> {
    let acc = cfg
        .accountability
        .as_ref()
        .ok_or("config has no accountability section, nothing to adjudicate")?;
    let dp = 12 * cfg.delta * acc.k_views;
    let window = dp * acc.g;
    if as_of < window || as_of % dp != 0 {
        return Err(format!(
            "bundle as_of {as_of} is not a window boundary (delta_prime {dp}, window {window})"
        ));
    }
    Ok(SuperViewIndex {
        start_view: ((as_of - window) / (12 * cfg.delta)) as View,
        k_views: acc.k_views,
        g: acc.g,
    })
}

fn psi_params(cfg: &ScenarioConfig) -> Result<acclive_core::adjudicate::PsiParams, String> {
    let acc = cfg.accountability.as_ref().ok_or("config has no accountability section")?;
    Ok(acclive_core::adjudicate::PsiParams {
        n: cfg.n,
        tau_al_max: acc.tau_al_max,
        x: acc.x,
        delta_x: acc.delta_x,
        delta: cfg.delta,
        seed: cfg.seed,
    })
}

fn load_bundle(path: &Path) -> Result<TranscriptBundle, String> {
    let raw =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    if let Ok(saved) = serde_json::from_str::<SavedBundle>(&raw) {
        return Ok(saved.bundle);
    }
    serde_json::from_str::<TranscriptBundle>(&raw)
        .map_err(|e| format!("{} is not a bundle: {e}", path.display()))
}

fn cmd_adjudicate(bundle_path: &Path, config: &Path) -> u8 {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return usage_err(&e),
    };
    let bundle = match load_bundle(bundle_path) {
        Ok(b) => b,
        Err(e) => return usage_err(&e),
    };
    let (params, index) = match psi_params(&cfg).and_then(|p| Ok((p, index_for(&cfg, bundle.as_of)?)))
    {
        Ok(x) => x,
        Err(e) => return usage_err(&e),
    };
    log(&format!(
        "adjudicating {} submitted transcript(s) as of round {}",
        bundle.submitted(),
        bundle.as_of
    ));
    let report = psi(&bundle, &index, &params);
    match serde_json::to_string_pretty(&report) {
        Ok(s) => println!("{s}"),
        Err(e) => return usage_err(&format!("cannot serialize verdict: {e}")),
    }
    OK
}

fn cmd_validate(schedule: &Path) -> u8 {
    let raw = match fs::read_to_string(schedule) {
        Ok(r) => r,
        Err(e) => return usage_err(&format!("cannot read {}: {e}", schedule.display())),
    };
    let sched: ScheduleFile = match serde_json::from_str(&raw) {
        Ok(s) => s,
        Err(e) => return usage_err(&format!("{}: {e}", schedule.display())),
    };
    if sched.delta_prime == 0 || sched.g == 0 {
        return usage_err("delta_prime and g must be positive");
    }
    if sched.x < Frac::new(0, 1) || sched.x > Frac::new(1, 1) {
        return usage_err("x must lie in [0, 1]");
    }
    match validate_x_psync(&sched.flags, sched.delta_prime, sched.g, sched.x) {
        Conformance::Ok => {
            println!("ok");
            OK
        }
        Conformance::OkVacuous => {
            println!("ok (schedule shorter than one window at every alignment)");
            OK
        }
        Conformance::Violation { offset, window_start } => {
            println!(
                "violation: window starting at round {window_start} (partition alignment offset \
                 {offset}) has too few synchronous periods"
            );
            BREACH
        }
    }
}

fn cmd_frontier(n: u32, tau_al_max: u32, grid: Option<String>, out: &Path) -> u8 {
    let grid: Vec<Frac> = match grid {
        None => (1..=9).map(|j| Frac::new(j, 20)).collect(),
        Some(spec) => {
            let mut parsed = Vec::new();
            for part in spec.split(',') {
                match acclive_core::fracfmt::parse(part.trim()) {
                    Ok(f) => parsed.push(f),
                    Err(e) => return usage_err(&format!("grid entry {part:?}: {e}")),
                }
            }
            parsed
        }
    };
    if grid.is_empty() {
        return usage_err("empty x grid");
    }
    let table = acclive_core::analysis::frontier_table(n, tau_al_max, &grid);
    let file = match fs::File::create(out) {
        Ok(f) => f,
        Err(e) => return usage_err(&format!("cannot create {}: {e}", out.display())),
    };
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    if let Err(e) = w
        .write_record(["x", "n", "tau_al_max", "achievable", "converse_upper", "regime"])
        .and_then(|()| {
            for pt in &table {
                let opt = |v: Option<i64>| v.map(|x| x.to_string()).unwrap_or_default();
                w.write_record([
                    pt.x.to_string(),
                    pt.n.to_string(),
                    pt.tau_al_max.to_string(),
                    opt(pt.achievable_ident),
                    opt(pt.converse_upper),
                    pt.regime.to_string(),
                ])?;
            }
            Ok(())
        })
        .and_then(|()| w.flush().map_err(Into::into))
    {
        return usage_err(&format!("cannot write {}: {e}", out.display()));
    }
    log(&format!("wrote {} frontier rows", table.len()));
    OK
}

fn cmd_replay(out: &Path) -> u8 {
    let cfg = match load_config(&out.join("config.json")) {
        Ok(c) => c,
        Err(e) => return usage_err(&e),
    };
    let report: RunReport = match fs::read_to_string(out.join("report.json"))
        .map_err(|e| e.to_string())
        .and_then(|raw| serde_json::from_str(&raw).map_err(|e| e.to_string()))
    {
        Ok(r) => r,
        Err(e) => return usage_err(&format!("{}/report.json: {e}", out.display())),
    };

    let mut saved: Vec<SavedBundle> = Vec::new();
    let entries = match fs::read_dir(out) {
        Ok(e) => e,
        Err(e) => return usage_err(&format!("cannot list {}: {e}", out.display())),
    };
    for entry in entries {
        let Ok(entry) = entry else { continue };
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if !name.starts_with("bundle-") || !name.ends_with(".json") {
            continue;
        }
        let raw = match fs::read_to_string(entry.path()) {
            Ok(r) => r,
            Err(e) => return usage_err(&format!("cannot read {name}: {e}")),
        };
        match serde_json::from_str::<SavedBundle>(&raw) {
            Ok(s) => saved.push(s),
            Err(e) => return usage_err(&format!("{name}: {e}")),
        }
    }
    saved.sort_by_key(|s| s.violation_round);

    let mut recorded: BTreeMap<Round, Vec<Vec<NodeId>>> = BTreeMap::new();
    for adj in &report.adjudications {
        recorded.entry(adj.violation_round).or_default().push(adj.accused.clone());
    }
    if saved.is_empty() && recorded.is_empty() {
        println!("nothing to replay: the run adjudicated nothing");
        return OK;
    }
    let params = match psi_params(&cfg) {
        Ok(p) => p,
        Err(e) => return usage_err(&e),
    };
    let mut mismatches = 0u32;
    for s in &saved {
        let index = match index_for(&cfg, s.bundle.as_of) {
            Ok(i) => i,
            Err(e) => return usage_err(&e),
        };
        let verdict = psi(&s.bundle, &index, &params);
        let accused: Vec<NodeId> = verdict.accused.iter().copied().collect();
        let matched = recorded
            .get(&s.violation_round)
            .is_some_and(|rows| rows.iter().any(|r| *r == accused));
        if matched {
            println!(
                "round {}: accused {:?} matches the run",
                s.violation_round,
                accused.iter().map(|x| x.0).collect::<Vec<_>>()
            );
        } else {
            println!(
                "round {}: replay accused {:?}, run recorded {:?}",
                s.violation_round,
                accused.iter().map(|x| x.0).collect::<Vec<_>>(),
                recorded.get(&s.violation_round)
            );
            mismatches += 1;
        }
    }
    let missing: Vec<Round> = recorded
        .keys()
        .filter(|r| !saved.iter().any(|s| s.violation_round == **r))
        .copied()
        .collect();
    if !missing.is_empty() {
        return usage_err(&format!("no bundle file for adjudication round(s) {missing:?}"));
    }
    if mismatches > 0 {
        return breach(&format!("{mismatches} adjudication(s) failed to reproduce"));
    }
    println!("replayed {} adjudication(s), all match", saved.len());
    OK
}
