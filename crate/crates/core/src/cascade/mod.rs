//! Declarative labelling cascade: rule programs, their interpreter and the
//! exhaustive outcome enumeration used to verify them.

mod interp;
mod program;

pub use interp::{
    enumerate_outcomes, run_cascade, CascadeError, CompiledProgram, LabelAssignment, OutcomeTable,
    Resolution, Violation, MAX_ENUMERATION_STAINS,
};
pub use program::{
    parse_rule_program, Action, AtomKind, ExcludeMode, Expr, ParseError, RuleProgram, Scope, Step,
    TABLE1_RULES, TABLE1_STEP10_GLOBAL_RULES, TABLE1_STEP13_LITERAL_RULES,
};

/// The 17 stains used for annotation. DAPI is listed but no shipped rule reads it.
pub const ANNOTATION_STAINS: [&str; 17] = [
    "NaKATPase", "PanCK", "Muc2", "CgA", "Vimentin", "DAPI", "SMA", "Sox9", "OLFM4", "Lysozyme",
    "CD45", "CD20", "CD68", "CD11B", "CD3d", "CD8", "CD4",
];

pub fn annotation_stains() -> Vec<String> {
    ANNOTATION_STAINS.iter().map(|s| s.to_string()).collect()
}
