//! Rule-program interpreter.
//!
//! A program is compiled against a concrete stain order into bitmask
//! predicates; each instance then walks the steps with its own state
//! (alive flag, group memberships, annotation), so outcomes never depend on
//! other instances.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::program::{Action, AtomKind, ExcludeMode, Expr, RuleProgram, Scope};
use crate::classes::{CellClass, Outcome};
use crate::stats::PositivityMatrix;

/// Largest stain universe `enumerate_outcomes` accepts.
pub const MAX_ENUMERATION_STAINS: usize = 20;
const MAX_ATOMS: usize = 64;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("positivity matrix has no column for stain {0:?}")]
    MissingStain(String),
    #[error("program references {0} distinct stains or groups, more than the supported {MAX_ATOMS}")]
    TooManyAtoms(usize),
    #[error("cannot enumerate {count} stains, limit is {MAX_ENUMERATION_STAINS}")]
    TooManyStains { count: usize },
    #[error(
        "exclusivity violation for instance {instance_id}: steps {} and {} both annotate positivity vector [{}]",
        .violation.first_step, .violation.second_step, .violation.positive_stains.join(", ")
    )]
    Exclusivity { instance_id: u32, violation: Violation },
    #[error("malformed label table: {0}")]
    Table(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CascadeError>;

/// Two final annotations fired for one positivity vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub positive_stains: Vec<String>,
    pub first_step: u32,
    pub first_class: CellClass,
    pub second_step: u32,
    pub second_class: CellClass,
}

/// Outcome for one vector plus the step that decided it (`None` for unlabeled).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resolution {
    pub outcome: Outcome,
    pub step: Option<u32>,
}

#[derive(Clone, Debug)]
enum Pred {
    Stain(usize, bool),
    Group(usize, bool),
    Not(Box<Pred>),
    And(Vec<Pred>),
    Or(Vec<Pred>),
}

impl Pred {
    #[inline]
    fn eval(&self, stains: u64, groups: u64) -> bool {
        match self {
            Pred::Stain(i, pos) => ((stains >> i) & 1 == 1) == *pos,
            Pred::Group(i, pos) => ((groups >> i) & 1 == 1) == *pos,
            Pred::Not(p) => !p.eval(stains, groups),
            Pred::And(ps) => ps.iter().all(|p| p.eval(stains, groups)),
            Pred::Or(ps) => ps.iter().any(|p| p.eval(stains, groups)),
        }
    }
}

#[derive(Clone, Debug)]
enum CompiledAction {
    Define(usize),
    Kill(Option<usize>),
    Drop(usize),
    Annotate(CellClass, Option<usize>),
}

#[derive(Clone, Debug)]
struct CompiledStep {
    number: u32,
    action: CompiledAction,
    pred: Pred,
}

/// A program bound to a stain order. Bit `i` of a vector is stain `stains[i]`.
#[derive(Clone, Debug)]
pub struct CompiledProgram {
    stains: Vec<String>,
    groups: Vec<String>,
    steps: Vec<CompiledStep>,
}

impl CompiledProgram {
    /// Binds `program` to `stains`; every stain the program mentions must be present.
    pub fn new(program: &RuleProgram, stains: &[String]) -> Result<Self> {
        if stains.len() > MAX_ATOMS {
            return Err(CascadeError::TooManyAtoms(stains.len()));
        }
        for s in program.stains() {
            if !stains.contains(&s) {
                return Err(CascadeError::MissingStain(s));
            }
        }
        let groups = program.groups();
        if groups.len() > MAX_ATOMS {
            return Err(CascadeError::TooManyAtoms(groups.len()));
        }
        let stain_idx = |n: &str| stains.iter().position(|s| s == n).expect("checked above");
        let group_idx = |n: &str| groups.iter().position(|g| g == n).expect("parser checked");
        fn compile(e: &Expr, si: &dyn Fn(&str) -> usize, gi: &dyn Fn(&str) -> usize) -> Pred {
            match e {
                Expr::Atom {
                    kind: AtomKind::Stain,
                    name,
                    positive,
                } => Pred::Stain(si(name), *positive),
                Expr::Atom {
                    kind: AtomKind::Group,
                    name,
                    positive,
                } => Pred::Group(gi(name), *positive),
                Expr::Not(e) => Pred::Not(Box::new(compile(e, si, gi))),
                Expr::And(es) => Pred::And(es.iter().map(|e| compile(e, si, gi)).collect()),
                Expr::Or(es) => Pred::Or(es.iter().map(|e| compile(e, si, gi)).collect()),
            }
        }
        let scope_idx = |s: &Scope| match s {
            Scope::All => None,
            Scope::Group(g) => Some(group_idx(g)),
        };
        let steps = program
            .steps
            .iter()
            .map(|s| CompiledStep {
                number: s.number,
                pred: compile(&s.predicate, &stain_idx, &group_idx),
                action: match &s.action {
                    Action::DefineGroup(g) => CompiledAction::Define(group_idx(g)),
                    Action::Exclude {
                        scope,
                        mode: ExcludeMode::Kill,
                    } => CompiledAction::Kill(scope_idx(scope)),
                    Action::Exclude {
                        scope,
                        mode: ExcludeMode::Drop,
                    } => CompiledAction::Drop(scope_idx(scope).expect("parser rejects DROP on all")),
                    Action::Annotate { class, scope } => CompiledAction::Annotate(*class, scope_idx(scope)),
                },
            })
            .collect();
        Ok(Self {
            stains: stains.to_vec(),
            groups,
            steps,
        })
    }

    pub fn stains(&self) -> &[String] {
        &self.stains
    }

    /// Runs the cascade for one positivity vector.
    pub fn evaluate(&self, vector: u64) -> std::result::Result<Resolution, Violation> {
        let mut groups = 0u64;
        let mut annotated: Option<(CellClass, u32)> = None;
        let in_scope = |scope: &Option<usize>, groups: u64| match scope {
            None => true,
            Some(g) => (groups >> g) & 1 == 1,
        };
        for step in &self.steps {
            match &step.action {
                CompiledAction::Define(g) => {
                    if step.pred.eval(vector, groups) {
                        groups |= 1 << g;
                    } else {
                        groups &= !(1 << g);
                    }
                }
                // annotated instances are out of further consideration
                CompiledAction::Kill(scope) => {
                    if annotated.is_none() && in_scope(scope, groups) && step.pred.eval(vector, groups) {
                        return Ok(Resolution {
                            outcome: Outcome::Excluded,
                            step: Some(step.number),
                        });
                    }
                }
                CompiledAction::Drop(g) => {
                    if annotated.is_none() && (groups >> g) & 1 == 1 && step.pred.eval(vector, groups) {
                        groups &= !(1 << g);
                    }
                }
                CompiledAction::Annotate(class, scope) => {
                    if in_scope(scope, groups) && step.pred.eval(vector, groups) {
                        if let Some((first_class, first_step)) = annotated {
                            return Err(Violation {
                                positive_stains: self.positive_names(vector),
                                first_step,
                                first_class,
                                second_step: step.number,
                                second_class: *class,
                            });
                        }
                        annotated = Some((*class, step.number));
                    }
                }
            }
        }
        Ok(match annotated {
            Some((c, n)) => Resolution {
                outcome: Outcome::Class(c),
                step: Some(n),
            },
            None => Resolution {
                outcome: Outcome::Unlabeled,
                step: None,
            },
        })
    }

    /// Membership of every group as evaluated at its definition step,
    /// ignoring exclusions and drops.
    pub fn defined_groups(&self, vector: u64) -> BTreeMap<String, bool> {
        let mut groups = 0u64;
        for step in &self.steps {
            if let CompiledAction::Define(g) = step.action {
                if step.pred.eval(vector, groups) {
                    groups |= 1 << g;
                }
            }
        }
        self.groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.clone(), (groups >> i) & 1 == 1))
            .collect()
    }

    pub fn positive_names(&self, vector: u64) -> Vec<String> {
        self.stains
            .iter()
            .enumerate()
            .filter(|(i, _)| (vector >> i) & 1 == 1)
            .map(|(_, s)| s.clone())
            .collect()
    }

    /// Vector with exactly the named stains positive. Unknown names are ignored.
    pub fn vector_of(&self, positive: &[&str]) -> u64 {
        self.stains
            .iter()
            .enumerate()
            .filter(|(_, s)| positive.contains(&s.as_str()))
            .fold(0, |v, (i, _)| v | (1 << i))
    }
}

/// Per-instance cascade outcomes, in positivity-matrix row order.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelAssignment {
    pub ids: Vec<u32>,
    pub resolutions: Vec<Resolution>,
}

impl LabelAssignment {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn outcome_of(&self, id: u32) -> Option<Outcome> {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map(|p| self.resolutions[p].outcome)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, Resolution)> + '_ {
        self.ids.iter().copied().zip(self.resolutions.iter().copied())
    }

    /// Count per outcome, all 16 outcomes present (zeros included).
    pub fn counts(&self) -> BTreeMap<Outcome, usize> {
        let mut m: BTreeMap<Outcome, usize> = Outcome::all().map(|o| (o, 0)).collect();
        for r in &self.resolutions {
            *m.get_mut(&r.outcome).unwrap() += 1;
        }
        m
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["instance_id", "outcome", "step_index"])?;
        for (id, r) in self.iter() {
            out.write_record([
                id.to_string(),
                r.outcome.to_string(),
                r.step.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.iter().take(3).ne(["instance_id", "outcome", "step_index"]) {
            return Err(CascadeError::Table(
                "label header must be instance_id,outcome,step_index".into(),
            ));
        }
        let mut ids = Vec::new();
        let mut resolutions = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            ids.push(
                rec[0]
                    .parse()
                    .map_err(|e| CascadeError::Table(format!("instance_id: {e}")))?,
            );
            let outcome = rec[1].parse().map_err(CascadeError::Table)?;
            let step = if rec[2].is_empty() {
                None
            } else {
                Some(
                    rec[2]
                        .parse()
                        .map_err(|e| CascadeError::Table(format!("step_index: {e}")))?,
                )
            };
            resolutions.push(Resolution { outcome, step });
        }
        Ok(Self { ids, resolutions })
    }
}

/// Runs the program over every instance of the positivity matrix.
pub fn run_cascade(program: &RuleProgram, pm: &PositivityMatrix) -> Result<LabelAssignment> {
    let used = program.stains();
    for s in &used {
        if pm.stain_index(s).is_none() {
            return Err(CascadeError::MissingStain(s.clone()));
        }
    }
    let compiled = CompiledProgram::new(program, &used)?;
    let columns: Vec<usize> = used.iter().map(|s| pm.stain_index(s).unwrap()).collect();
    let resolutions = (0..pm.len())
        .into_par_iter()
        .map(|row| {
            let vector = columns
                .iter()
                .enumerate()
                .filter(|&(_, &c)| pm.get(row, c))
                .fold(0u64, |v, (bit, _)| v | (1 << bit));
            compiled.evaluate(vector).map_err(|violation| CascadeError::Exclusivity {
                instance_id: pm.ids[row],
                violation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabelAssignment {
        ids: pm.ids.clone(),
        resolutions,
    })
}

/// Outcome of every positivity vector over a stain universe.
#[derive(Clone, Debug)]
pub struct OutcomeTable {
    pub stains: Vec<String>,
    /// Indexed by vector; bit `i` is `stains[i]`.
    pub rows: Vec<std::result::Result<Resolution, Violation>>,
}

impl OutcomeTable {
    pub fn counts(&self) -> BTreeMap<Outcome, usize> {
        let mut m: BTreeMap<Outcome, usize> = Outcome::all().map(|o| (o, 0)).collect();
        for r in self.rows.iter().flatten() {
            *m.get_mut(&r.outcome).unwrap() += 1;
        }
        m
    }

    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.rows.iter().filter_map(|r| r.as_ref().err())
    }

    pub fn get(&self, vector: u64) -> &std::result::Result<Resolution, Violation> {
        &self.rows[vector as usize]
    }
}

/// Evaluates the program on all 2^n vectors over `stains`.
pub fn enumerate_outcomes(program: &RuleProgram, stains: &[String]) -> Result<OutcomeTable> {
    if stains.len() > MAX_ENUMERATION_STAINS {
        return Err(CascadeError::TooManyStains { count: stains.len() });
    }
    let compiled = CompiledProgram::new(program, stains)?;
    let rows = (0..1u64 << stains.len())
        .into_par_iter()
        .map(|v| compiled.evaluate(v))
        .collect();
    Ok(OutcomeTable {
        stains: stains.to_vec(),
        rows,
    })
}
