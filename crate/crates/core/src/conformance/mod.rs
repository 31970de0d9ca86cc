//! Contract suite every back-end must pass.
//!
//! A [`Deployment`] wraps one running implementation (plus whatever it
//! needs to create accounts). [`run_suite`] builds a fresh deployment per
//! clause and returns one row per clause.

mod clauses;
mod deployments;

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::api::{Graffiti, Session};
use crate::clock::ManualClock;
use crate::error::Result;
use crate::model::Scheme;

pub use clauses::{clauses, snapshot_delta_trial};
pub use deployments::{CsDeployment, LocalDeployment, MetaDeployment, RemoteDeployment};

/// One running implementation under test.
pub trait Deployment {
    fn graffiti(&self) -> Arc<dyn Graffiti>;

    /// Logs in `handle`, creating the account first where needed.
    fn login(&self, handle: &str) -> Result<Session>;

    /// Scheme of urls minted by `put`.
    fn scheme(&self) -> Scheme;

    /// Clock driving the implementation, when the test controls it.
    fn clock(&self) -> Option<ManualClock>;

    fn retention_ms(&self) -> u64;

    fn supports_allowed(&self) -> bool {
        true
    }
}

pub type Factory<'a> = dyn Fn() -> Box<dyn Deployment> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Needs {
    Nothing,
    Allowed,
    Clock,
}

pub struct Clause {
    pub id: &'static str,
    pub description: &'static str,
    pub(crate) needs: Needs,
    pub(crate) run: fn(&dyn Deployment) -> std::result::Result<(), String>,
}

impl fmt::Debug for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Clause").field("id", &self.id).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail(String),
    Skipped(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ClauseResult {
    pub id: String,
    pub description: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformanceReport {
    pub implementation: String,
    pub rows: Vec<ClauseResult>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl ConformanceReport {
    pub fn passed(&self) -> usize {
        self.count(|o| matches!(o, Outcome::Pass))
    }

    pub fn failed(&self) -> usize {
        self.count(|o| matches!(o, Outcome::Fail(_)))
    }

    pub fn skipped(&self) -> usize {
        self.count(|o| matches!(o, Outcome::Skipped(_)))
    }

    /// Every applicable clause passed.
    pub fn all_passed(&self) -> bool {
        self.failed() == 0 && self.passed() > 0
    }

    fn count(&self, f: impl Fn(&Outcome) -> bool) -> usize {
        self.rows.iter().filter(|r| f(&r.outcome)).count()
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            let (mark, detail) = match &row.outcome {
                Outcome::Pass => ("pass", String::new()),
                Outcome::Fail(why) => ("FAIL", format!("  ({why})")),
                Outcome::Skipped(why) => ("skip", format!("  ({why})")),
            };
            writeln!(f, "{mark}  {:<44} {}{detail}", row.id, row.description)?;
        }
        write!(
            f,
            "{}: {} passed, {} failed, {} skipped in {:.1?}",
            self.implementation,
            self.passed(),
            self.failed(),
            self.skipped(),
            self.elapsed
        )
    }
}

/// Runs every clause against fresh deployments from `factory`.
pub fn run_suite(implementation: &str, factory: &Factory<'_>) -> ConformanceReport {
    let start = Instant::now();
    let mut rows = Vec::new();
    for clause in clauses() {
        let deployment = factory();
        let outcome = match clause.needs {
            Needs::Allowed if !deployment.supports_allowed() => {
                Outcome::Skipped("allowed lists not supported".into())
            }
            Needs::Clock if deployment.clock().is_none() => Outcome::Skipped("clock not controllable".into()),
            _ => {
                let run = clause.run;
                let d: &dyn Deployment = deployment.as_ref();
                match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(d))) {
                    Ok(Ok(())) => Outcome::Pass,
                    Ok(Err(why)) => Outcome::Fail(why),
                    Err(panic) => Outcome::Fail(panic_message(panic)),
                }
            }
        };
        rows.push(ClauseResult {
            id: clause.id.to_string(),
            description: clause.description.to_string(),
            outcome,
        });
    }
    ConformanceReport { implementation: implementation.to_string(), rows, elapsed: start.elapsed() }
}

fn panic_message(panic: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("panicked: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("panicked: {s}")
    } else {
        "panicked".into()
    }
}
