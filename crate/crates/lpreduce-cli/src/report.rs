//! Invariant reports: named residuals with tolerances, rendered as a
//! versioned line-oriented text format.
//!
//! Schema (`invariant-report v1`), one record per line:
//!
//! ```text
//! invariant-report v1
//! command <run|validate|compare>
//! <key> <value>                      # metadata preamble, ordered
//! check <name> value <v> tol <t> <pass|fail>
//! info <name> value <v>              # reported, never gated
//! summary checks <n> failures <k>
//! overall <pass|fail>
//! ```
//!
//! A check passes when `value < tol` (strict, so a zero tolerance fails
//! everything). Residuals and tolerances render in
//! scientific notation with shortest round-trip digits, so a report is
//! byte-deterministic for a fixed seed and configuration.

use std::fmt::Write as _;

pub const REPORT_VERSION: &str = "v1";

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
}

impl Check {
    /// Strictly less than, so a zero tolerance fails every check (including
    /// exactly-zero residuals) and a NaN residual can never pass.
    pub fn pass(&self) -> bool {
        self.value < self.tol
    }
}

#[derive(Debug, Clone)]
pub struct Info {
    pub name: String,
    pub value: f64,
}

/// One command's worth of residuals plus context.
#[derive(Debug, Clone)]
pub struct InvariantReport {
    pub command: &'static str,
    meta: Vec<(String, String)>,
    checks: Vec<Check>,
    infos: Vec<Info>,
}

impl InvariantReport {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            meta: Vec::new(),
            checks: Vec::new(),
            infos: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn check(&mut self, name: &str, value: f64, tol: f64) {
        self.checks.push(Check {
            name: name.to_string(),
            value,
            tol,
        });
    }

    pub fn info(&mut self, name: &str, value: f64) {
        self.infos.push(Info {
            name: name.to_string(),
            value,
        });
    }

    pub fn checks(&self) -> &[Check] {
        &self.checks
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass()).count()
    }

    pub fn all_pass(&self) -> bool {
        self.failures() == 0
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "invariant-report {REPORT_VERSION}");
        let _ = writeln!(out, "command {}", self.command);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "{k} {v}");
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "check {} value {:e} tol {:e} {}",
                c.name,
                c.value,
                c.tol,
                if c.pass() { "pass" } else { "fail" }
            );
        }
        for i in &self.infos {
            let _ = writeln!(out, "info {} value {:e}", i.name, i.value);
        }
        let _ = writeln!(
            out,
            "summary checks {} failures {}",
            self.checks.len(),
            self.failures()
        );
        let _ = writeln!(out, "overall {}", if self.all_pass() { "pass" } else { "fail" });
        out
    }
}

/// Track the running maximum of a named residual across sample points.
#[derive(Debug, Default)]
pub struct MaxTracker {
    entries: Vec<(String, f64, f64)>,
}

impl MaxTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fold `value` into the maximum for `name`, registering the tolerance on
    /// first sight. The insertion order of names is preserved.
    pub fn update(&mut self, name: &str, value: f64, tol: f64) {
        match self.entries.iter_mut().find(|(n, _, _)| n == name) {
            Some((_, v, _)) => *v = v.max(value),
            None => self.entries.push((name.to_string(), value, tol)),
        }
    }

    pub fn emit(self, report: &mut InvariantReport) {
        for (name, value, tol) in self.entries {
            report.check(&name, value, tol);
        }
    }
}
