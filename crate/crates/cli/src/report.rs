//! Rendering of status reports.
//!
//! `--format table` prints one tab-separated record per line, the first
//! field naming the record type:
//!
//! ```text
//! count     STATE  N
//! workunit  WU_ID  STATE  CLIENT_ID|-  FAILED_ATTEMPTS
//! result    RESULT_ID  WU_ID  CLIENT_ID  STATE
//! client    CLIENT_ID  USER_ID  INVENTORY_FILES  INVENTORY_BYTES  live|lost
//! credit    USER_ID  CREDIT
//! ```
//!
//! `count` lines cover every state, zero counts included, in the order
//! PENDING, WAITING_FOR_DATA, READY, ASSIGNED, DONE, FAILED.

use std::fmt::Write;

use locflow_core::protocol::StatusReport;
use locflow_core::WorkunitState;

pub const STATES: [WorkunitState; 6] = [
    WorkunitState::Pending,
    WorkunitState::WaitingForData,
    WorkunitState::Ready,
    WorkunitState::Assigned,
    WorkunitState::Done,
    WorkunitState::Failed,
];

pub fn table(r: &StatusReport) -> String {
    let mut out = String::new();
    for st in STATES {
        let _ = writeln!(out, "count\t{st}\t{}", r.count(st));
    }
    for w in &r.workunits {
        let client = w.client_id.as_ref().map_or("-", |c| c.as_str());
        let _ = writeln!(
            out,
            "workunit\t{}\t{}\t{client}\t{}",
            w.wu_id, w.state, w.failed_attempts
        );
    }
    for x in &r.results {
        let _ = writeln!(
            out,
            "result\t{}\t{}\t{}\t{}",
            x.result_id,
            x.wu_id,
            x.client_id,
            x.state.as_str()
        );
    }
    for c in &r.clients {
        let _ = writeln!(
            out,
            "client\t{}\t{}\t{}\t{}\t{}",
            c.client_id,
            c.user_id,
            c.inventory_files,
            c.inventory_bytes,
            if c.lost { "lost" } else { "live" }
        );
    }
    for row in &r.leaderboard {
        let _ = writeln!(out, "credit\t{}\t{:.3}", row.user_id, row.credit);
    }
    out
}

pub fn human(r: &StatusReport) -> String {
    let mut out = String::new();
    let scope = r
        .job
        .as_deref()
        .map_or("all jobs".to_owned(), |j| format!("job {j}"));
    let _ = writeln!(out, "{scope}: {} workunits", r.total);
    let counts: Vec<String> = STATES
        .iter()
        .filter(|s| r.count(**s) > 0)
        .map(|s| format!("{} {s}", r.count(*s)))
        .collect();
    if !counts.is_empty() {
        let _ = writeln!(out, "  {}", counts.join(", "));
    }
    if !r.workunits.is_empty() {
        let width = r
            .workunits
            .iter()
            .map(|w| w.wu_id.as_str().len())
            .max()
            .unwrap_or(0);
        let _ = writeln!(out, "\nworkunits");
        for w in &r.workunits {
            let _ = write!(
                out,
                "  {:width$}  {:16}",
                w.wu_id.as_str(),
                w.state.as_str()
            );
            if let Some(c) = &w.client_id {
                let _ = write!(out, "  on {c}");
            }
            if w.failed_attempts > 0 {
                let _ = write!(out, "  ({} failed)", w.failed_attempts);
            }
            out.push('\n');
        }
    }
    if !r.clients.is_empty() {
        let _ = writeln!(out, "\nclients");
        for c in &r.clients {
            let _ = writeln!(
                out,
                "  {}  user {}  {} files, {} bytes{}",
                c.client_id,
                c.user_id,
                c.inventory_files,
                c.inventory_bytes,
                if c.lost { "  (lost)" } else { "" }
            );
        }
    }
    if !r.leaderboard.is_empty() {
        let _ = writeln!(out, "\ncredit");
        for (rank, row) in r.leaderboard.iter().enumerate() {
            let _ = writeln!(out, "  {:>3}. {}  {:.3}", rank + 1, row.user_id, row.credit);
        }
    }
    out
}
