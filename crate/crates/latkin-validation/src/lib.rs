//! Acceptance checks for `latkin` live in `tests/acceptance.rs`; this crate
//! only holds the verdict bookkeeping they share.
//!
//! The package sorts after the others in the workspace so that a failing
//! criterion does not keep `cargo test --workspace` from running the rest.

use std::fmt;
use std::time::Duration;

#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {}: {} ({}; {:.1}s)",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Passed and total counts.
pub fn tally(v: &[Verdict]) -> (usize, usize) {
    (v.iter().filter(|x| x.pass).count(), v.len())
}
