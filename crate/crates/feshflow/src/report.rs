//! Structured verdicts produced by the verification suites.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// A conditional check whose hypotheses did not hold numerically.
    Skipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `value` is a residual norm that must stay below `limit`.
    Identity,
    /// `value` is a measured quantity bounded above by `limit`.
    Bound,
}

/// One verified statement. Passes iff `value ≤ limit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub case: String,
    pub kind: CheckKind,
    pub value: f64,
    pub limit: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lhs_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs_norm: Option<f64>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn verdict(value: f64, limit: f64) -> Status {
    if value <= limit {
        Status::Pass
    } else {
        Status::Fail
    }
}

impl CheckRecord {
    pub fn identity(name: &str, case: &str, residual: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            case: case.into(),
            kind: CheckKind::Identity,
            value: residual,
            limit: tol,
            lhs_norm: None,
            rhs_norm: None,
            status: verdict(residual, tol),
            note: None,
        }
    }

    pub fn bound(name: &str, case: &str, value: f64, bound: f64) -> Self {
        Self { kind: CheckKind::Bound, ..Self::identity(name, case, value, bound) }
    }

    /// A bound checked only when `hypothesis` holds.
    pub fn conditional(name: &str, case: &str, value: f64, bound: f64, hypothesis: bool) -> Self {
        let mut rec = Self::bound(name, case, value, bound);
        if !hypothesis {
            rec.status = Status::Skipped;
            rec.note = Some("hypothesis not satisfied; skipped".into());
        }
        rec
    }

    /// A boolean statement.
    pub fn flag(name: &str, case: &str, holds: bool) -> Self {
        Self::identity(name, case, if holds { 0.0 } else { 1.0 }, 0.0)
    }

    pub fn with_norms(mut self, lhs: f64, rhs: f64) -> Self {
        self.lhs_norm = Some(lhs);
        self.rhs_norm = Some(rhs);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }

    /// `limit − value`; negative on failure.
    pub fn margin(&self) -> f64 {
        self.limit - self.value
    }
}

/// A hypothesis evaluated numerically: holds iff `value < limit`
/// (or `≤` when `inclusive`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub case: String,
    pub value: f64,
    pub limit: f64,
    pub inclusive: bool,
    pub holds: bool,
}

impl Condition {
    pub fn strict(name: &str, case: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), case: case.into(), value, limit, inclusive: false, holds: value < limit }
    }

    pub fn inclusive(name: &str, case: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), case: case.into(), value, limit, inclusive: true, holds: value <= limit }
    }

    pub fn margin(&self) -> f64 {
        self.limit - self.value
    }
}

/// Verdicts of one suite.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub suite: String,
    pub checks: Vec<CheckRecord>,
    pub conditions: Vec<Condition>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pass: usize,
    pub fail: usize,
    pub skipped: usize,
}

impl FlowReport {
    pub fn new(suite: &str) -> Self {
        Self { suite: suite.into(), ..Default::default() }
    }

    pub fn push(&mut self, rec: CheckRecord) {
        self.checks.push(rec);
    }

    pub fn extend(&mut self, recs: impl IntoIterator<Item = CheckRecord>) {
        self.checks.extend(recs);
    }

    pub fn condition(&mut self, c: Condition) -> bool {
        let h = c.holds;
        self.conditions.push(c);
        h
    }

    pub fn merge(&mut self, other: FlowReport) {
        self.checks.extend(other.checks);
        self.conditions.extend(other.conditions);
        self.notes.extend(other.notes);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckRecord::passed)
    }

    pub fn counts(&self) -> Counts {
        let mut c = Counts::default();
        for r in &self.checks {
            match r.status {
                Status::Pass => c.pass += 1,
                Status::Fail => c.fail += 1,
                Status::Skipped => c.skipped += 1,
            }
        }
        c
    }

    /// Largest value among checks named `name` that were not skipped.
    pub fn worst(&self, name: &str) -> Option<f64> {
        self.checks
            .iter()
            .filter(|r| r.name == name && r.status != Status::Skipped)
            .map(|r| r.value)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|r| r.status == Status::Fail)
    }
}
