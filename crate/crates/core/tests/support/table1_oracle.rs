//! Straight-line re-statement of the 31-step labelling cascade, written
//! without the rule interpreter. Used as an oracle only.
//!
//! Interpretation matches the shipped rules: step 10 is restricted to the
//! Progenitor group, step 13 excludes SMA+ instances that are Immune+, step
//! 16 only removes Epi membership, annotations are final.

#![allow(dead_code)]

use std::collections::HashSet;

/// Returns `(outcome, step)`; `step` is 0 for unlabeled.
pub fn table1_oracle(positive: &HashSet<&str>) -> (&'static str, u32) {
    let p = |s: &str| positive.contains(s);
    let (nak, panck, muc2, cga) = (p("NaKATPase"), p("PanCK"), p("Muc2"), p("CgA"));
    let (vim, sma) = (p("Vimentin"), p("SMA"));
    let (sox9, olfm4, lyso) = (p("Sox9"), p("OLFM4"), p("Lysozyme"));
    let (cd45, cd20, cd68, cd11b) = (p("CD45"), p("CD20"), p("CD68"), p("CD11B"));
    let (cd3d, cd8, cd4) = (p("CD3d"), p("CD8"), p("CD4"));

    let mut epi = nak || panck || muc2 || cga; // 1
    let stroma = vim || sma; // 2
    if epi && stroma {
        return ("excluded", 3);
    }
    let immune = cd45 || cd20 || cd68 || cd11b || lyso || cd3d || cd8 || cd4; // 4
    if cd68 && (cd3d || cd20 || cd4 || cd8 || cd11b) {
        return ("excluded", 5);
    }
    if cd11b && (cd3d || cd20 || cd4 || cd8 || cd68) {
        return ("excluded", 6);
    }
    if cd20 && (cd3d || cd4 || cd8) {
        return ("excluded", 7);
    }
    if (!cd3d && !cd45 && (cd4 || cd8)) || (cd4 && cd8) {
        return ("excluded", 8);
    }
    let progenitor = sox9 || olfm4; // 9
    if progenitor && !epi && !stroma {
        return ("excluded", 10);
    }
    if muc2 && (immune || progenitor || sma) {
        return ("excluded", 11);
    }
    if cga && (immune || sma || progenitor || muc2) {
        return ("excluded", 12);
    }
    if sma && immune {
        return ("excluded", 13);
    }
    if immune && progenitor {
        return ("excluded", 14);
    }
    if !epi && !stroma && !progenitor && !immune {
        return ("excluded", 15);
    }
    if epi && immune {
        epi = false; // 16
    }

    let mut hits: Vec<(&'static str, u32)> = Vec::new();
    if epi && muc2 && !progenitor {
        hits.push(("goblet", 17));
    }
    if epi && cga && !progenitor {
        hits.push(("enteroendocrine", 18));
    }
    if epi && !cga && !progenitor && !muc2 {
        hits.push(("enterocyte", 19));
    }
    let fibro_stromal = stroma && !immune; // 20
    if fibro_stromal && sma && !progenitor {
        hits.push(("fibroblast", 21));
    }
    if fibro_stromal && !sma && !progenitor {
        hits.push(("stromal_undetermined", 22));
    }
    let no_t = !cd3d && !cd8 && !cd4;
    if immune && lyso && !cd68 && !cd11b && !progenitor && !cd20 && no_t {
        hits.push(("myeloid", 23));
    }
    if immune && cd4 && !progenitor {
        hits.push(("helper_t", 24));
    }
    if immune && cd8 && !progenitor {
        hits.push(("cytotoxic_t", 25));
    }
    if immune && cd3d && !cd4 && !cd8 {
        hits.push(("t_cell_receptor", 26));
    }
    if immune && cd11b && !progenitor && no_t {
        hits.push(("monocyte", 27));
    }
    if immune && cd68 && !progenitor && no_t {
        hits.push(("macrophage", 28));
    }
    if immune && cd20 && !cd68 && !progenitor && no_t {
        hits.push(("b_cell", 29));
    }
    if immune && cd45 && !cd20 && !cd68 && !progenitor && no_t && !cd11b && !lyso {
        hits.push(("leukocyte", 30));
    }
    if progenitor {
        hits.push(("progenitor", 31));
    }
    match hits.as_slice() {
        [] => ("unlabeled", 0),
        [one] => *one,
        _ => ("conflict", hits[1].1),
    }
}
