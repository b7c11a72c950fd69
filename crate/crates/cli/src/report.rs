//! Plain-text summaries.

use std::fmt::Write;

use ivote_core::bruteforce::BenchReport;
use ivote_core::certscan::FootprintReport;
use ivote_core::sim::{AttackReport, Metrics, SimReport};

use crate::analyze::{AnalysisReport, Source};

fn duration(secs: f64) -> String {
    const UNITS: [(f64, &str); 5] = [
        (31_557_600.0, "years"),
        (86_400.0, "days"),
        (3600.0, "h"),
        (60.0, "min"),
        (1.0, "s"),
    ];
    for (scale, unit) in UNITS {
        if secs >= scale {
            return format!("{:.3} {unit}", secs / scale);
        }
    }
    format!("{:.3} ms", secs * 1e3)
}

pub fn simulation(r: &SimReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "seed {}  voters {}  proxy {:?}  iterations {}",
        r.seed, r.voters, r.proxy, r.params.iterations
    );
    let _ = writeln!(s, "receipts     {} ({} unique)", r.receipts, r.unique_receipts);
    let _ = writeln!(s, "read-backs   {} matched", r.verified);
    let _ = writeln!(s, "re-votes     {} rejected", r.revotes_rejected);
    let _ = writeln!(s, "failures     {}", r.failures);
    for (race, counts) in &r.tally {
        let line: Vec<String> = counts.iter().map(|(c, n)| format!("{c} {n}")).collect();
        let _ = writeln!(s, "{race}: {}", line.join(", "));
    }
    for o in r.outcomes.iter().filter(|o| o.error.is_some()) {
        let _ = writeln!(s, "  {}: {}", o.identity, o.error.as_deref().unwrap_or(""));
    }
    s
}

pub fn attack(r: &AttackReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} scenario, seed {}, {} voters: {}",
        r.scenario,
        r.seed,
        r.voters,
        if r.success { "succeeded" } else { "FAILED" }
    );
    match &r.metrics {
        Metrics::Crack {
            targets,
            cracked,
            timed_out,
            tried,
            space,
        } => {
            let _ = writeln!(
                s,
                "cracked {cracked}/{targets}, {timed_out} out of time, {tried} candidates tried (space {space} each)"
            );
        }
        Metrics::Inject {
            sessions,
            harvested,
            correct,
            slow_sessions,
            slow_harvested,
            page_length_preserved,
        } => {
            let _ = writeln!(s, "harvested {harvested} pairs from {sessions} sessions, {correct} correct");
            let _ = writeln!(s, "slow typists: {slow_harvested} pairs from {slow_sessions} sessions");
            let _ = writeln!(s, "page length preserved: {page_length_preserved}");
        }
        Metrics::Substitute {
            targets,
            recovered,
            substituted,
            accepted,
            readback_mismatches,
            untouched_correct,
            untouched,
        } => {
            let _ = writeln!(
                s,
                "targets {targets}, credentials recovered {recovered}, ballots substituted {substituted}, accepted {accepted}"
            );
            let _ = writeln!(
                s,
                "read-back mismatches {readback_mismatches}; untouched voters verified {untouched_correct}/{untouched}"
            );
        }
        Metrics::Link {
            same_device,
            linked_correct,
            linked_wrong,
            other_device,
            other_device_linked,
        } => {
            let _ = writeln!(s, "same device: {linked_correct}/{same_device} linked, {linked_wrong} wrong");
            let _ = writeln!(s, "other device: {other_device_linked}/{other_device} linked");
        }
        Metrics::Partials {
            targets,
            recovered,
            full_history,
            last_matches_cast,
        } => {
            let _ = writeln!(s, "targets {targets}, credentials recovered {recovered}");
            let _ = writeln!(
                s,
                "full partial history {full_history}, last partial equals cast vote {last_matches_cast}"
            );
        }
    }
    for p in &r.problems {
        let _ = writeln!(s, "  {p}");
    }
    s
}

pub fn bench(r: &BenchReport) -> String {
    let e = &r.extrapolation;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} candidates at {} iterations on {} worker(s) ({} cores available) in {:.3} s",
        r.sample_candidates, r.iterations, r.workers, r.available_cores, r.elapsed_secs
    );
    let _ = writeln!(s, "candidates/s        {:.1}", r.candidates_per_sec);
    let _ = writeln!(
        s,
        "iterations/s        {:.4e}  ({:.4e} per core)",
        r.hashes_per_second, r.per_core_hashes_per_second
    );
    let _ = writeln!(s, "sha1 compressions/s {:.4e}", r.sha1_compressions_per_sec);
    let _ = writeln!(s, "known iVoteID       {}  ${:.4}", duration(e.known_id_secs), e.known_id_cost_usd);
    let _ = writeln!(
        s,
        "full space          {}  ${:.0}",
        duration(e.full_space_secs),
        e.full_space_cost_usd
    );
    s
}

pub fn scan(r: &FootprintReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} endpoints, {} certificates, {} failures; target {}",
        r.scanned,
        r.clusters.len(),
        r.failures.len(),
        r.target
    );
    for (fp, c) in &r.clusters {
        let eps: Vec<String> = c.endpoints.iter().map(ToString::to_string).collect();
        let mark = if c.covers_target { " covers target" } else { "" };
        let _ = writeln!(s, "{}  {} SANs  {}{mark}", &fp[..16], c.san_count, c.subject);
        let _ = writeln!(s, "    {}", eps.join(", "));
    }
    if !r.coverage.is_empty() {
        let _ = writeln!(s, "{} other names share the covering certificate(s)", r.cohabitants.len());
    }
    for f in &r.failures {
        let _ = writeln!(s, "failed {}: {}", f.endpoint, f.reason);
    }
    s
}

pub fn analysis(r: &AnalysisReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} sessions, {} messages, {} distinct login ids",
        r.sessions, r.messages, r.login_ids
    );
    let _ = writeln!(
        s,
        "credentials harvested {}, cracked {}; partial votes opened {}",
        r.harvested, r.cracked, r.partials
    );
    let _ = writeln!(s, "identities linked to a casting session {}", r.linked.len());
    for d in &r.details {
        let Some(c) = &d.credentials else {
            if let Some(e) = &d.crack_error {
                let _ = writeln!(s, "  session {}: {e}", d.session_id);
            }
            continue;
        };
        let how = match d.source {
            Some(Source::Crack) => "cracked",
            _ => "harvested",
        };
        let _ = writeln!(
            s,
            "  session {}: {how} {} / {}, {} partials",
            d.session_id,
            c.ivote_id(),
            c.pin(),
            d.partials.unwrap_or(0)
        );
    }
    s
}
