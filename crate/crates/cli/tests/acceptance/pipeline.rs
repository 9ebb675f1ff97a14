use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cytogate_core::cv::{Cohort, FoldPlan};
use cytogate_core::synth::{COHORT_FILE, RENDER_CHANNELS};
use serde_json::Value;

use crate::{bin, ensure, Outcome};

const STEPS: &str = "3000";
const BATCH: &str = "128";
const LR: &str = "0.2";

fn run(args: &[OsString]) -> Result<Vec<u8>, String> {
    let out = Command::new(bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "cytogate {} failed: {}",
            args.first().map(|a| a.to_string_lossy()).unwrap_or_default(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn args<I, S>(items: I) -> Vec<OsString>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    items.into_iter().map(Into::into).collect()
}

pub fn end_to_end() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let data = root.join("cohort");
    run(&args([OsString::from("synth"), "--out".into(), data.clone().into(), "--seed".into(), "7".into()]))?;

    let cohort = Cohort::load(&data.join(COHORT_FILE)).map_err(|e| e.to_string())?;
    let labels_dir = root.join("labels");
    std::fs::create_dir_all(&labels_dir).map_err(|e| e.to_string())?;
    let mut patch_args = args(["patches", "--channels", &RENDER_CHANNELS.join(","), "--out"]);
    patch_args.push(root.join("ds").into());
    for row in &cohort.rows {
        let bundle = data.join(&row.slide_id);
        let labels = labels_dir.join(format!("{}.csv", row.slide_id));
        run(&args([
            OsString::from("label"),
            "--bundle".into(),
            bundle.clone().into(),
            "--out".into(),
            labels.clone().into(),
        ]))?;
        patch_args.extend(args([OsString::from("--bundle"), bundle.into(), "--labels".into(), labels.into()]));
    }
    run(&patch_args)?;

    let plan: FoldPlan = serde_json::from_slice(&run(&args([
        OsString::from("split"),
        "--cohort".into(),
        data.join(COHORT_FILE).into(),
        "--seed".into(),
        "7".into(),
    ]))?)
    .map_err(|e| e.to_string())?;
    let fold = &plan.folds[0];
    let slides_of = |patients: &[String]| -> Vec<String> {
        cohort
            .rows
            .iter()
            .filter(|r| patients.contains(&r.patient_id))
            .map(|r| r.slide_id.clone())
            .collect()
    };
    let fit_patients: Vec<String> = fold.train.iter().chain(&fold.val).cloned().collect();
    let fit_slides = slides_of(&fit_patients);
    let test_slides = slides_of(&fold.test);
    let overlap: BTreeSet<&String> = fit_slides.iter().filter(|s| test_slides.contains(s)).collect();
    ensure(overlap.is_empty(), || format!("slides in both train and test: {overlap:?}"))?;

    let model = root.join("model.cgsm");
    run(&args([
        OsString::from("train"),
        "--data".into(),
        root.join("ds").into(),
        "--out".into(),
        model.clone().into(),
        "--steps".into(),
        STEPS.into(),
        "--batch-size".into(),
        BATCH.into(),
        "--lr".into(),
        LR.into(),
        "--slides".into(),
        fit_slides.join(",").into(),
    ]))?;
    let preds = root.join("preds");
    run(&args([
        OsString::from("predict"),
        "--model".into(),
        model.into(),
        "--data".into(),
        root.join("ds").into(),
        "--out-dir".into(),
        preds.clone().into(),
    ]))?;

    let report_path = root.join("report.json");
    let mut eval_args = args([OsString::from("eval"), "--out".into(), report_path.clone().into()]);
    for s in &test_slides {
        let bundle = data.join(s);
        eval_args.extend(args([
            OsString::from("--pred"),
            bundle.clone().into(),
            "--truth".into(),
            bundle.into(),
            "--pred-classes".into(),
            preds.join(format!("{s}.csv")).into(),
            "--truth-classes".into(),
            labels_dir.join(format!("{s}.csv")).into(),
        ]));
    }
    run(&eval_args)?;
    let secs = start.elapsed().as_secs_f64();
    check_report(&report_path, test_slides.len(), fold.test.len(), secs)
}

fn check_report(path: &Path, slides: usize, patients: usize, secs: f64) -> Outcome {
    let report: Value = serde_json::from_slice(&std::fs::read(path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let cm = &report["classification"];
    let accuracy = cm["accuracy"].as_f64().ok_or("report has no accuracy")?;
    let pairs = cm["pair_count"].as_u64().unwrap_or(0);
    let per_class = cm["per_class"].as_array().ok_or("report has no per-class rows")?;
    ensure(per_class.len() == 14, || format!("{} per-class rows", per_class.len()))?;
    let mut min_ppv = f64::INFINITY;
    let mut bad = Vec::new();
    for row in per_class {
        let class = row["class"].as_str().unwrap_or("?");
        match row["ppv"].as_f64() {
            Some(p) => {
                min_ppv = min_ppv.min(p);
                if p < 0.9 {
                    bad.push(format!("{class} ppv {p:.3}"));
                }
            }
            None => bad.push(format!("{class} ppv undefined")),
        }
    }
    ensure(accuracy >= 0.95, || format!("accuracy {accuracy:.4} < 0.95"))?;
    ensure(bad.is_empty(), || bad.join(", "))?;
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "{patients} held-out patients ({slides} slides, {pairs} instances): accuracy {accuracy:.4}, min class PPV {min_ppv:.3}"
    ))
}
