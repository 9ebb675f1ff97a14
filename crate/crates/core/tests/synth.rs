use cytogate_core::cascade::RuleProgram;
use cytogate_core::cv::CohortRow;
use cytogate_core::metrics::load_class_csv;
use cytogate_core::pipeline::{extract_labelled_patches, label_bundle};
use cytogate_core::slide::{Disease, Site, SlideBundle};
use cytogate_core::stats::ThresholdSet;
use cytogate_core::synth::{generate_slide, SynthConfig, RENDER_CHANNELS, TARGETS_FILE, THRESHOLDS_FILE};
use cytogate_core::Outcome;

#[test]
fn gating_recovers_intended_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let row = CohortRow {
        slide_id: "s01".into(),
        patient_id: "p01".into(),
        site: Site::TerminalIleum,
        disease: Disease::Diseased,
    };
    let cfg = SynthConfig::default();
    let slide = generate_slide(dir.path(), row, &cfg, 99).unwrap();
    let bundle = SlideBundle::open(dir.path()).unwrap();
    let th = ThresholdSet::load(&dir.path().join(THRESHOLDS_FILE)).unwrap();
    let labelled = label_bundle(&bundle, &th, &RuleProgram::table1()).unwrap();
    assert_eq!(labelled.labels.len(), slide.instances.len());
    for inst in &slide.instances {
        assert_eq!(labelled.labels.outcome_of(inst.id), Some(inst.target), "instance {}", inst.id);
        let s = labelled.stats.get(inst.id).unwrap();
        assert!((s.centroid_x - inst.cx).abs() < 1.0 && (s.centroid_y - inst.cy).abs() < 1.0);
    }
    let targets = load_class_csv(&dir.path().join(TARGETS_FILE)).unwrap();
    assert_eq!(targets.len(), slide.instances.len());

    let ds = extract_labelled_patches(&bundle, &labelled.stats, &labelled.labels, &RENDER_CHANNELS).unwrap();
    let classed = slide.instances.iter().filter(|i| matches!(i.target, Outcome::Class(_))).count();
    assert_eq!(ds.len(), classed);
    assert_eq!(ds.feature_len(), 3 * 41 * 41);
}
