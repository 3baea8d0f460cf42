//! Machine-readable run reports: one record per check, a line-oriented text
//! encoding with a stable schema, an optional JSON encoding, and the action
//! table artifacts (CSV and plot data).

use serde::Serialize;
use std::fmt::Write as _;

pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Warn,
    Skip,
}

/// One verification record.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub status: CheckStatus,
    pub residual: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: Option<String>,
    pub elapsed_ms: u128,
}

/// A full scenario run.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub format: u32,
    pub scenario: String,
    pub command: String,
    pub seed: u64,
    pub tol_scale: f64,
    pub checks: Vec<CheckRecord>,
    /// Set when a numeric method (integrator, Newton, quadrature) failed.
    pub numeric_failure: Option<String>,
}

impl Report {
    pub fn new(scenario: &str, command: &str, seed: u64, tol_scale: f64) -> Report {
        Report {
            format: REPORT_FORMAT,
            scenario: scenario.to_string(),
            command: command.to_string(),
            seed,
            tol_scale,
            checks: Vec::new(),
            numeric_failure: None,
        }
    }

    pub fn push(
        &mut self,
        name: &str,
        status: CheckStatus,
        residual: Option<f64>,
        threshold: Option<f64>,
        detail: Option<String>,
        elapsed_ms: u128,
    ) {
        self.checks.push(CheckRecord {
            name: name.to_string(),
            status,
            residual,
            threshold,
            detail,
            elapsed_ms,
        });
    }

    pub fn pass_check(&mut self, name: &str, residual: f64, threshold: f64, elapsed_ms: u128) {
        let status = if residual <= threshold { CheckStatus::Pass } else { CheckStatus::Fail };
        self.push(name, status, Some(residual), Some(threshold), None, elapsed_ms);
    }

    pub fn skip(&mut self, name: &str, why: &str) {
        self.push(name, CheckStatus::Skip, None, None, Some(why.to_string()), 0);
    }

    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail).count()
    }

    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.status == CheckStatus::Pass).count()
    }

    pub fn all_passed(&self) -> bool {
        self.failed() == 0 && self.numeric_failure.is_none()
    }

    /// Line-oriented text encoding. Deterministic: fixed order, fixed float
    /// formatting, '\n' line ends. Timings are reported only through the
    /// JSON encoding so that identical runs render byte-identically.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dirac-aa-report format={}", self.format);
        let _ = writeln!(
            out,
            "scenario={} command={} seed={} tol_scale={}",
            self.scenario,
            self.command,
            self.seed,
            fmt_float(self.tol_scale)
        );
        for c in &self.checks {
            let status = match c.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Fail => "fail",
                CheckStatus::Warn => "warn",
                CheckStatus::Skip => "skip",
            };
            let _ = write!(out, "check name={} status={status}", c.name);
            if let Some(r) = c.residual {
                let _ = write!(out, " residual={}", fmt_float(r));
            }
            if let Some(t) = c.threshold {
                let _ = write!(out, " threshold={}", fmt_float(t));
            }
            if let Some(d) = &c.detail {
                let _ = write!(out, " detail=\"{}\"", d.replace('"', "'"));
            }
            let _ = writeln!(out);
        }
        if let Some(nf) = &self.numeric_failure {
            let _ = writeln!(out, "numeric_failure \"{}\"", nf.replace('"', "'"));
        }
        let _ = writeln!(
            out,
            "summary status={} passed={} failed={} skipped={}",
            if self.all_passed() { "pass" } else { "fail" },
            self.passed(),
            self.failed(),
            self.checks.iter().filter(|c| c.status == CheckStatus::Skip).count()
        );
        out
    }

    pub fn render_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn fmt_float(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.6e}")
    }
}

/// Rows of the action table: level values, actions, frequency entries.
#[derive(Debug, Clone, Serialize)]
pub struct ActionTable {
    pub level_names: Vec<String>,
    pub p: usize,
    pub rows: Vec<ActionRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionRow {
    pub levels: Vec<f64>,
    pub actions: Vec<f64>,
    pub frequencies: Vec<f64>,
}

impl ActionTable {
    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        let mut cols: Vec<String> = self.level_names.clone();
        for k in 1..=self.p {
            cols.push(format!("A{k}"));
        }
        for i in 1..=self.p {
            for j in 1..=self.p {
                cols.push(format!("freq_{i}_{j}"));
            }
        }
        let _ = writeln!(out, "{}", cols.join(","));
        for row in &self.rows {
            let vals: Vec<String> = row
                .levels
                .iter()
                .chain(&row.actions)
                .chain(&row.frequencies)
                .map(|v| format!("{v:.12e}"))
                .collect();
            let _ = writeln!(out, "{}", vals.join(","));
        }
        out
    }

    /// Whitespace-column data file for generic plotting tools.
    pub fn render_plotdata(&self) -> String {
        let mut out = String::new();
        let mut cols: Vec<String> = self.level_names.clone();
        for k in 1..=self.p {
            cols.push(format!("A{k}"));
        }
        for i in 1..=self.p {
            for j in 1..=self.p {
                cols.push(format!("freq_{i}_{j}"));
            }
        }
        let _ = writeln!(out, "# {}", cols.join(" "));
        for row in &self.rows {
            let vals: Vec<String> = row
                .levels
                .iter()
                .chain(&row.actions)
                .chain(&row.frequencies)
                .map(|v| format!("{v:.12e}"))
                .collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_rendering_is_stable() {
        let mut r = Report::new("demo", "check-dirac", 0, 1.0);
        r.pass_check("frame-isotropy", 1.2e-16, 1e-10, 3);
        r.pass_check("closedness", 0.5, 1e-9, 7);
        r.skip("actions", "no torus block");
        let text = r.render_text();
        assert!(text.starts_with("dirac-aa-report format=1\n"));
        assert!(text.contains("check name=frame-isotropy status=pass"));
        assert!(text.contains("check name=closedness status=fail"));
        assert!(text.contains("summary status=fail passed=1 failed=1 skipped=1"));
        // Byte-identical on re-render.
        assert_eq!(text, r.render_text());
    }

    #[test]
    fn csv_layout() {
        let t = ActionTable {
            level_names: vec!["z".into()],
            p: 1,
            rows: vec![ActionRow {
                levels: vec![0.5],
                actions: vec![1.25],
                frequencies: vec![2.0],
            }],
        };
        let csv = t.render_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "z,A1,freq_1_1");
        let row = lines.next().unwrap();
        assert!(row.starts_with("5.") && row.contains(",1.25"));
    }
}
