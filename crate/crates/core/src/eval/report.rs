use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{latency_stats, success_rates, LatencyStats, SuccessRates, TrialRecord};
use super::trials::{EvalConfig, EvalRun};
use super::EvalError;
use crate::policyd::LatencyProfile;

/// The only part of a report that changes between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub generated_at: String,
    pub tool: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub header: ReportHeader,
    pub policy: String,
    pub protocol: String,
    pub horizon: usize,
    pub trials: u32,
    pub base_seed: u64,
    pub latency_profile: LatencyProfile,
    pub rates: SuccessRates,
    /// Include the any-two-successes rate in the table.
    pub show_any2: bool,
    pub latency: Option<LatencyStats>,
    pub records: Vec<TrialRecord>,
}

impl EvalReport {
    pub fn build(config: &EvalConfig, run: &EvalRun, show_any2: bool) -> Result<Self, EvalError> {
        for r in &run.records {
            r.validate()?;
        }
        let latency = match latency_stats(&run.latencies_ms, config.horizon) {
            Ok(s) => Some(s),
            Err(EvalError::EmptySamples) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            header: ReportHeader {
                generated_at: chrono::Utc::now().to_rfc3339(),
                tool: format!("vilas {}", env!("CARGO_PKG_VERSION")),
            },
            policy: config.policy.to_string(),
            protocol: config.protocol.to_string(),
            horizon: config.horizon,
            trials: config.trials,
            base_seed: config.base_seed,
            latency_profile: config.latency,
            rates: success_rates(&run.records)?,
            show_any2,
            latency,
            records: run.records.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
    }

    pub fn table(&self) -> String {
        let label = format!("{} ({})", self.policy, self.protocol);
        let mut out = table_header(self.show_any2);
        out.push_str(&table_row(&label, self.latency.as_ref(), self.horizon, Some(&self.rates), self.show_any2));
        out.push_str(&format!(
            "\n{} usable trials, {} aborted\n",
            self.rates.usable, self.rates.aborted
        ));
        out
    }

    /// Write `report.json`, `table.txt` and one run log per trial under
    /// `dir/runlogs/`.
    pub fn write(&self, dir: &Path, logs: &[Vec<crate::broker::RunEvent>]) -> Result<PathBuf, EvalError> {
        let io = |p: &Path, e: std::io::Error| EvalError::Io(format!("{}: {e}", p.display()));
        let logs_dir = dir.join("runlogs");
        fs::create_dir_all(&logs_dir).map_err(|e| io(&logs_dir, e))?;
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()).map_err(|e| io(&json, e))?;
        let table = dir.join("table.txt");
        fs::write(&table, self.table()).map_err(|e| io(&table, e))?;
        for (rec, log) in self.records.iter().zip(logs) {
            let p = logs_dir.join(format!("trial_{:03}.jsonl", rec.trial_id));
            let mut f = std::io::BufWriter::new(fs::File::create(&p).map_err(|e| io(&p, e))?);
            for ev in log {
                serde_json::to_writer(&mut f, ev).map_err(|e| EvalError::Io(e.to_string()))?;
                f.write_all(b"\n").map_err(|e| io(&p, e))?;
            }
            f.flush().map_err(|e| io(&p, e))?;
        }
        Ok(json)
    }
}

const COLS: [(&str, usize); 9] = [
    ("Policy", 18),
    ("Mean", 10),
    ("Median", 10),
    ("Std", 9),
    ("P95", 10),
    ("H", 4),
    ("Per-step", 10),
    ("Single", 7),
    ("Multi", 7),
];

pub fn table_header(any2: bool) -> String {
    let mut s: String = COLS.iter().map(|(n, w)| format!("{n:<w$}")).collect();
    if any2 {
        s.push_str("Any-2");
    }
    s.truncate(s.trim_end().len());
    s.push('\n');
    s
}

pub fn fmt_ms(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$} ms")
}

pub fn fmt_pct(rate: f64) -> String {
    format!("{:.0}%", rate * 100.0)
}

/// One Table-1-style line. Latencies at one decimal, per-step cost at two,
/// rates as whole percentages.
pub fn table_row(
    label: &str,
    stats: Option<&LatencyStats>,
    horizon: usize,
    rates: Option<&SuccessRates>,
    any2: bool,
) -> String {
    let dash = || "-".to_owned();
    let cells = [
        label.to_owned(),
        stats.map_or_else(dash, |s| fmt_ms(s.mean_ms, 1)),
        stats.map_or_else(dash, |s| fmt_ms(s.median_ms, 1)),
        stats.map_or_else(dash, |s| fmt_ms(s.std_ms, 1)),
        stats.map_or_else(dash, |s| fmt_ms(s.p95_ms, 1)),
        horizon.to_string(),
        stats.map_or_else(dash, |s| fmt_ms(s.per_step_ms, 2)),
        rates.map_or_else(dash, |r| fmt_pct(r.single)),
        rates.map_or_else(dash, |r| fmt_pct(r.multi)),
    ];
    let mut s: String = cells
        .iter()
        .zip(COLS)
        .map(|(c, (_, w))| format!("{c:<w$}"))
        .collect();
    if any2 {
        s.push_str(&rates.map_or_else(dash, |r| fmt_pct(r.multi_any2)));
    }
    s.truncate(s.trim_end().len());
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_step_cells() {
        for (mean, h, cell) in [(73.8, 50, "1.48 ms"), (82.8, 50, "1.66 ms"), (63.6, 16, "3.98 ms")] {
            let s = latency_stats(&[mean], h).unwrap();
            assert_eq!(fmt_ms(s.per_step_ms, 2), cell);
            assert!(table_row("x", Some(&s), h, None, false).contains(cell));
        }
        assert_eq!(fmt_pct(0.82), "82%");
        assert_eq!(fmt_pct(1.0), "100%");
    }
}
