//! Machine-readable run reports. Every emitted number is a check record
//! carrying its tolerance and verdict.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = "<")]
    Below,
    #[serde(rename = ">=")]
    AtLeast,
    /// `|value − reference| ≤ tolerance`.
    #[serde(rename = "~")]
    Near,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::Below => "<",
            Relation::AtLeast => ">=",
            Relation::Near => "~",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    pub pass: bool,
}

impl CheckRecord {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self::make(name, value, Relation::AtMost, tolerance, None, value <= tolerance)
    }

    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::make(name, value, Relation::Below, bound, None, value < bound)
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::make(name, value, Relation::AtLeast, bound, None, value >= bound)
    }

    pub fn near(name: impl Into<String>, value: f64, reference: f64, tolerance: f64) -> Self {
        let pass = (value - reference).abs() <= tolerance;
        Self::make(name, value, Relation::Near, tolerance, Some(reference), pass)
    }

    fn make(
        name: impl Into<String>,
        value: f64,
        relation: Relation,
        tolerance: f64,
        reference: Option<f64>,
        pass: bool,
    ) -> Self {
        // NaN compares false, so a non-finite value never passes.
        Self {
            name: name.into(),
            value,
            relation,
            tolerance,
            reference,
            pass: pass && value.is_finite(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stamp {
    pub version: String,
    pub seed: u64,
    /// Seconds since the Unix epoch (`SOURCE_DATE_EPOCH` when set).
    pub timestamp: u64,
}

impl Stamp {
    pub fn now(seed: u64) -> Self {
        let timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or_else(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub model: String,
    pub n: usize,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
    /// Files written next to the report.
    pub artifacts: Vec<String>,
    pub stamp: Stamp,
}

impl RunReport {
    pub fn new(command: &str, model: &str, n: usize, checks: Vec<CheckRecord>, stamp: Stamp) -> Self {
        let mut seen = std::collections::HashSet::new();
        for c in &checks {
            assert!(seen.insert(c.name.as_str()), "check {} listed twice", c.name);
        }
        let pass = checks.iter().all(|c| c.pass);
        Self {
            command: command.into(),
            model: model.into(),
            n,
            checks,
            pass,
            artifacts: Vec::new(),
            stamp,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
