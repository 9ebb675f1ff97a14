//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p cytogate-cli --test acceptance`.

mod cascade;
mod numeric;
mod pipeline;
mod service;

#[path = "../../../core/tests/support/friedman_oracle.rs"]
mod friedman_oracle;
#[path = "../../../core/tests/support/gradcheck.rs"]
mod gradcheck;
#[path = "../../../core/tests/support/matching_oracle.rs"]
mod matching_oracle;
#[path = "../../../core/tests/support/sandwich.rs"]
mod sandwich;
#[path = "../../../core/tests/support/stats_oracle.rs"]
mod stats_oracle;
#[path = "../../../core/tests/support/table1_oracle.rs"]
mod table1_oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

/// `Ok(detail)` on pass, `Err(detail)` on failure.
pub type Outcome = Result<String, String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_cytogate"))
}

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "cascade exhaustiveness", cascade::exhaustiveness),
        (2, "cascade oracle equivalence", cascade::oracle_equivalence),
        (3, "hand-trace table", cascade::hand_trace),
        (4, "stats tile invariance", numeric::stats_tiling),
        (5, "matching oracle", numeric::matching),
        (6, "bounded-metric sandwich", numeric::sandwich),
        (7, "friedman correctness", numeric::friedman),
        (8, "end-to-end synthetic pipeline", pipeline::end_to_end),
        (9, "classifier gradient check", numeric::gradient_check),
        (10, "cv splitter", numeric::cv_splitter),
        (11, "resampler", numeric::resampler),
        (12, "service cache coherence", service::cache_coherence),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
