//! Comma-separated report of simulator runs.
//!
//! | column              | meaning                                                     |
//! |---------------------|-------------------------------------------------------------|
//! | `kind`              | `sim` for a simulated run, `baseline` for serial execution  |
//! | `placement`         | `strict`, `replicate` or `get-input`; empty on baselines    |
//! | `events`            | events of the pipeline                                      |
//! | `clients`           | simulated clients; 1 on baselines                           |
//! | `overhead_secs`     | per-interaction overhead; 0 on baselines                    |
//! | `makespan_secs`     | first submission to last workunit completion                |
//! | `baseline_secs`     | serial execution time of the same pipeline                  |
//! | `ratio`             | makespan / baseline                                         |
//! | `messages`          | protocol messages exchanged                                 |
//! | `bytes_input`       | input-file bytes moved between machines                     |
//! | `bytes_other`       | application, environment and upload bytes                   |
//! | `locality_fraction` | compute jobs run where their inputs were produced or fetched |
//! | `get_input_runs`    | get-input runs dispatched                                   |
//! | `timeouts`          | results that missed their deadline                          |
//! | `unfinished`        | workunits not terminal at the end of the run                |
//!
//! Times have three decimals, fractions four.

use std::fmt::Write;

use crate::sim::{RunKind, SimReport};

pub const REPORT_COLUMNS: &[&str] = &[
    "kind",
    "placement",
    "events",
    "clients",
    "overhead_secs",
    "makespan_secs",
    "baseline_secs",
    "ratio",
    "messages",
    "bytes_input",
    "bytes_other",
    "locality_fraction",
    "get_input_runs",
    "timeouts",
    "unfinished",
];

fn ratio(makespan: f64, baseline: f64) -> f64 {
    if baseline > 0.0 {
        makespan / baseline
    } else {
        0.0
    }
}

/// One row per report, in order.
pub fn emit_report(reports: &[SimReport]) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for r in reports {
        let (kind, placement) = match r.kind {
            RunKind::Sim => ("sim", r.placement.as_str()),
            RunKind::Baseline => ("baseline", ""),
        };
        let _ = writeln!(
            out,
            "{kind},{placement},{},{},{:.3},{:.3},{:.3},{:.4},{},{},{},{:.4},{},{},{}",
            r.events,
            r.n_clients,
            r.overhead_secs,
            r.makespan_secs,
            r.baseline_secs,
            ratio(r.makespan_secs, r.baseline_secs),
            r.messages_exchanged,
            r.bytes_moved_input,
            r.bytes_moved_other,
            r.locality_fraction,
            r.get_input_runs,
            r.timeouts,
            r.unfinished,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_muon_pipeline, simulate, sweep, SimConfig};

    #[test]
    fn one_report_is_one_row() {
        let config = SimConfig::default();
        let r = simulate(&config, &build_muon_pipeline(100).unwrap()).unwrap();
        let csv = emit_report(&[r]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], REPORT_COLUMNS.join(","));
        assert!(lines[1].starts_with("sim,strict,100,1,40.000,"));
        assert_eq!(lines[1].split(',').count(), REPORT_COLUMNS.len());
    }

    #[test]
    fn two_groups_three_sizes_and_baselines() {
        let reports = sweep(&SimConfig::default(), &[100, 1000], &[1, 2, 8]).unwrap();
        let csv = emit_report(&reports);
        let rows: Vec<_> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 8);
        assert_eq!(
            rows.iter().filter(|r| r.starts_with("baseline,,")).count(),
            2
        );
        assert!(rows.contains(&"baseline,,100,1,0.000,1300.000,1300.000,1.0000,0,0,0,1.0000,0,0,0"));
        assert_eq!(
            csv,
            emit_report(&sweep(&SimConfig::default(), &[100, 1000], &[1, 2, 8]).unwrap())
        );
    }
}
