use std::collections::HashSet;
use std::time::Instant;

use cytogate_core::cascade::{annotation_stains, enumerate_outcomes, CompiledProgram, RuleProgram};

use crate::table1_oracle::table1_oracle;
use crate::{ensure, repo_root, Outcome};

pub fn exhaustiveness() -> Outcome {
    let start = Instant::now();
    let table = enumerate_outcomes(&RuleProgram::table1(), &annotation_stains()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let violations = table.violations().count();
    let resolved = table.counts().values().sum::<usize>();
    ensure(table.rows.len() == 131_072, || format!("{} vectors", table.rows.len()))?;
    ensure(violations == 0, || format!("{violations} exclusivity violations"))?;
    ensure(resolved == 131_072, || format!("{resolved} vectors with an outcome"))?;
    ensure(secs < 10.0, || format!("enumeration took {secs:.2}s"))?;
    Ok(format!("131072 vectors, 0 violations, enumerated in {secs:.2}s"))
}

pub fn oracle_equivalence() -> Outcome {
    let stains = annotation_stains();
    let table = enumerate_outcomes(&RuleProgram::table1(), &stains).map_err(|e| e.to_string())?;
    let mut mismatches = 0;
    for (v, row) in table.rows.iter().enumerate() {
        let positive: HashSet<&str> = stains
            .iter()
            .enumerate()
            .filter(|(i, _)| (v >> i) & 1 == 1)
            .map(|(_, s)| s.as_str())
            .collect();
        let (name, step) = table1_oracle(&positive);
        match row {
            Ok(r) if r.outcome.as_str() == name && r.step.unwrap_or(0) == step => {}
            _ => mismatches += 1,
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    Ok("0 mismatches over 131072 vectors".into())
}

/// Rows of the markdown tables in docs/hand_trace.md as (positive stains, outcome, step).
fn documented_traces() -> Result<Vec<(Vec<String>, String, u32)>, String> {
    let path = repo_root().join("docs/hand_trace.md");
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for line in text.lines() {
        let cells: Vec<&str> = line.trim().trim_matches('|').split('|').map(str::trim).collect();
        if cells.len() < 3 {
            continue;
        }
        let Ok(step) = cells[2].parse::<u32>() else { continue };
        let positive = if cells[0] == "(none)" {
            vec![]
        } else {
            cells[0].split(',').map(|s| s.trim().to_string()).collect()
        };
        rows.push((positive, cells[1].to_string(), step));
    }
    Ok(rows)
}

pub fn hand_trace() -> Outcome {
    let rows = documented_traces()?;
    ensure(rows.len() == 25, || format!("expected 17 + 8 documented rows, found {}", rows.len()))?;
    let stains = annotation_stains();
    let single_set: HashSet<&str> = rows[..17].iter().flat_map(|(p, _, _)| p.iter().map(String::as_str)).collect();
    ensure(single_set.len() == 17 && stains.iter().all(|s| single_set.contains(s.as_str())), || {
        "single-stain table does not cover the 17 stains".into()
    })?;
    let c = CompiledProgram::new(&RuleProgram::table1(), &stains).map_err(|e| e.to_string())?;
    let mut wrong = Vec::new();
    for (positive, outcome, step) in &rows {
        let names: Vec<&str> = positive.iter().map(String::as_str).collect();
        match c.evaluate(c.vector_of(&names)) {
            Ok(r) if r.outcome.as_str() == outcome && r.step.unwrap_or(0) == *step => {}
            Ok(r) => wrong.push(format!("{names:?}: got {} at {:?}", r.outcome, r.step)),
            Err(v) => wrong.push(format!("{names:?}: violation {v:?}")),
        }
    }
    ensure(wrong.is_empty(), || wrong.join("; "))?;
    Ok("17 single-stain and 8 multi-stain rows match".into())
}
