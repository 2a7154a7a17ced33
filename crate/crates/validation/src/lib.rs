//! Acceptance criteria as named checks. Each check compares the library
//! against an independent oracle and reports a one-line outcome.

pub mod benchmark;
pub mod geometry;
pub mod lifecycle;
pub mod loss;
pub mod metrics;
pub mod mot17;
pub mod network;
pub mod smoke;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// Result of one check.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn pass(detail: impl Into<String>) -> Self {
        Self {
            passed: true,
            detail: detail.into(),
        }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self {
            passed: false,
            detail: detail.into(),
        }
    }

    /// Passes when every failure list is empty; details join with `; `.
    pub fn from_failures(summary: String, failures: Vec<String>) -> Self {
        if failures.is_empty() {
            Self::pass(summary)
        } else {
            Self::fail(format!("{summary}; {}", failures.join("; ")))
        }
    }
}

pub struct Criterion {
    pub name: &'static str,
    /// Wall-clock limit; exceeding it fails the criterion.
    pub budget: Option<Duration>,
    pub check: fn() -> Outcome,
}

pub fn criteria() -> Vec<Criterion> {
    let secs = |s| Some(Duration::from_secs(s));
    vec![
        Criterion {
            name: "metric-oracles",
            budget: secs(10),
            check: metrics::check,
        },
        Criterion {
            name: "hungarian-brute-force",
            budget: secs(5),
            check: geometry::check_hungarian,
        },
        Criterion {
            name: "iou-giou-oracle",
            budget: None,
            check: geometry::check_boxes,
        },
        Criterion {
            name: "deformable-attention-decoder-audit",
            budget: secs(60),
            check: network::check,
        },
        Criterion {
            name: "query-lifecycle",
            budget: None,
            check: lifecycle::check,
        },
        Criterion {
            name: "loss-bookkeeping",
            budget: None,
            check: loss::check,
        },
        Criterion {
            name: "overfit-smoke",
            budget: secs(15 * 60),
            check: smoke::check,
        },
        Criterion {
            name: "desk-benchmark",
            budget: secs(4 * 3600),
            check: benchmark::check,
        },
        Criterion {
            name: "mot17-plumbing",
            budget: None,
            check: mot17::check,
        },
    ]
}

/// Runs a criterion, turning panics and overruns into failures.
pub fn run(c: &Criterion) -> (Outcome, Duration) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Outcome::fail(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    match c.budget {
        Some(b) if took > b && outcome.passed => (
            Outcome::fail(format!("{} (took {:.1} s, limit {:.0} s)", outcome.detail, took.as_secs_f64(), b.as_secs_f64())),
            took,
        ),
        _ => (outcome, took),
    }
}
