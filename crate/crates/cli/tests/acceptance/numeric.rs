use std::collections::BTreeSet;

use cytogate_core::cv::{covers_all, make_folds, Cohort};
use cytogate_core::metrics::{friedman_test, match_instances};
use cytogate_core::patches::{resample_bicubic, resampled_extent};
use cytogate_core::raster::Grid;
use cytogate_core::slide::{write_bundle, ChannelRaster, Disease, InstanceMap, Site, SlideManifest};
use cytogate_core::stats::compute_stats_tiled;
use cytogate_core::synth::cohort_layout;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::friedman_oracle::friedman_reference;
use crate::gradcheck::gradient_relative_error;
use crate::matching_oracle::{brute_force_pairs, random_maps};
use crate::sandwich::sandwich_trial;
use crate::stats_oracle::naive_stats;
use crate::{bin, ensure, Outcome};

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

pub fn stats_tiling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut instances = 0;
    for fixture in 0..20 {
        let (w, h) = (rng.random_range(1..=256usize), rng.random_range(1..=256usize));
        let n_ids = rng.random_range(1..80u32);
        let mut ids = Grid::new(w, h);
        for _ in 0..n_ids * 2 {
            let id = rng.random_range(1..=n_ids);
            let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
            let (bw, bh) = (rng.random_range(1..40), rng.random_range(1..40));
            for yy in y..(y + bh).min(h) {
                for xx in x..(x + bw).min(w) {
                    ids.set(xx, yy, id);
                }
            }
        }
        let channels: Vec<Grid<u16>> = (0..3)
            .map(|_| Grid::from_vec(w, h, (0..w * h).map(|_| rng.random()).collect()))
            .collect();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let manifest = SlideManifest {
            slide_id: format!("f{fixture}"),
            patient_id: "p".into(),
            site: Site::AscendingColon,
            disease: Disease::Normal,
            width_px: w as u32,
            height_px: h as u32,
            microns_per_pixel: 0.5,
            bit_depth: 16,
            channels: vec![],
            instance_map: None,
            channel_files: Default::default(),
        };
        let rasters: Vec<ChannelRaster> = channels
            .iter()
            .enumerate()
            .map(|(i, g)| ChannelRaster {
                name: format!("c{i}"),
                grid: g.clone(),
            })
            .collect();
        let bundle = write_bundle(dir.path(), &manifest, &rasters, Some(&InstanceMap::new(ids.clone(), 0.5)))
            .map_err(|e| e.to_string())?;
        let oracle = naive_stats(&ids, &channels);
        instances += oracle.len();
        for tile in [8, 33, 64, w.max(h)] {
            let t = compute_stats_tiled(&bundle, &["c0", "c1", "c2"], tile, tile).map_err(|e| e.to_string())?;
            ensure(t.rows.len() == oracle.len(), || {
                format!("fixture {fixture} tile {tile}: {} rows, oracle {}", t.rows.len(), oracle.len())
            })?;
            for row in &t.rows {
                let o = oracle
                    .get(&row.id)
                    .ok_or_else(|| format!("fixture {fixture}: id {} not in oracle", row.id))?;
                ensure(row.area_px == o.area, || {
                    format!("fixture {fixture} tile {tile} id {}: area {} vs {}", row.id, row.area_px, o.area)
                })?;
                let mut errs = vec![rel(row.centroid_x, o.cx), rel(row.centroid_y, o.cy)];
                errs.extend(row.means.iter().zip(&o.means).map(|(a, b)| rel(*a, *b)));
                let e = errs.into_iter().fold(0.0, f64::max);
                worst = worst.max(e);
                ensure(e <= 1e-9, || format!("fixture {fixture} tile {tile} id {}: relative error {e:e}", row.id))?;
            }
        }
    }
    Ok(format!("20 fixtures, {instances} instances, tiles {{8,33,64,full}}, worst relative error {worst:.1e}"))
}

pub fn matching() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut total = 0;
    for case in 0..100 {
        let (pred, truth) = random_maps(&mut rng);
        let m = match_instances(&pred, &truth).map_err(|e| e.to_string())?;
        let got: Vec<(u32, u32)> = m.pairs.iter().map(|p| (p.pred, p.truth)).collect();
        let want = brute_force_pairs(&pred, &truth);
        ensure(got == want, || format!("case {case}: {got:?} vs brute force {want:?}"))?;
        let preds: BTreeSet<u32> = got.iter().map(|p| p.0).collect();
        let truths: BTreeSet<u32> = got.iter().map(|p| p.1).collect();
        ensure(preds.len() == got.len() && truths.len() == got.len(), || {
            format!("case {case}: an instance is paired twice")
        })?;
        total += got.len();
    }
    Ok(format!("100 map pairs, {total} matched pairs, all equal to brute force and unique"))
}

pub fn sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let violations: usize = (0..1000).map(|_| sandwich_trial(&mut rng)).sum();
    ensure(violations == 0, || format!("{violations} bound violations in 1000 trials"))?;
    Ok("1000 trials, 0 violations".into())
}

pub fn friedman() -> Outcome {
    let constant = vec![vec![0.7; 4]; 6];
    let r = friedman_test(&constant).map_err(|e| e.to_string())?;
    ensure(r.statistic == 0.0 && r.p_value == 1.0, || {
        format!("constant input gave Q={} p={}", r.statistic, r.p_value)
    })?;

    let r3 = friedman_test(&vec![vec![1.0, 2.0, 3.0]; 3]).map_err(|e| e.to_string())?;
    ensure((r3.statistic - 6.0).abs() <= 1e-12, || format!("3x3 fixture Q={}", r3.statistic))?;
    ensure((r3.p_value - 0.0498).abs() <= 1e-3, || format!("3x3 fixture p={}", r3.p_value))?;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut dq, mut dp) = (0.0f64, 0.0f64);
    for i in 0..50 {
        let n = rng.random_range(2..20);
        let k = rng.random_range(2..8);
        let ties = i % 2 == 0;
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        let v: f64 = rng.random();
                        if ties {
                            (v * 3.0).floor()
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let r = friedman_test(&m).map_err(|e| e.to_string())?;
        let (q, p) = friedman_reference(&m);
        dq = dq.max((r.statistic - q).abs());
        dp = dp.max((r.p_value - p).abs());
        ensure((r.statistic - q).abs() <= 1e-9 && (r.p_value - p).abs() <= 1e-8, || {
            format!("matrix {i}: Q {} vs {q}, p {} vs {p}", r.statistic, r.p_value)
        })?;
    }
    Ok(format!("constant Q=0 p=1; 3x3 Q=6 p={:.6}; 50 random matrices max |dQ|={dq:.1e} |dp|={dp:.1e}", r3.p_value))
}

pub fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let errs: Vec<f64> = (0..20).map(|_| gradient_relative_error(&mut rng)).collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    ensure(worst <= 1e-5, || format!("worst relative error {worst:e}"))?;
    Ok(format!("20 instances, worst relative error {worst:.1e}"))
}

pub fn cv_splitter() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cohort = Cohort::new(cohort_layout()).map_err(|e| e.to_string())?;
    let csv_path = dir.path().join("cohort.csv");
    cohort
        .write_csv(std::fs::File::create(&csv_path).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let patients: BTreeSet<String> = cohort.patients().into_iter().collect();
    let mut plans = Vec::new();
    for _ in 0..2 {
        let out = std::process::Command::new(bin())
            .args(["split", "--cohort"])
            .arg(&csv_path)
            .args(["--seed", "7"])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        plans.push(out.stdout);
    }
    ensure(plans[0] == plans[1], || "two runs with seed 7 differ".into())?;
    let plan: cytogate_core::cv::FoldPlan = serde_json::from_slice(&plans[0]).map_err(|e| e.to_string())?;
    ensure(plan == make_folds(&cohort, 7).map_err(|e| e.to_string())?, || {
        "CLI plan differs from library plan".into()
    })?;
    ensure(plan.folds.len() == 5, || format!("{} folds", plan.folds.len()))?;
    let mut tested = Vec::new();
    for (i, f) in plan.folds.iter().enumerate() {
        ensure((f.train.len(), f.val.len(), f.test.len()) == (12, 4, 4), || {
            format!("fold {i}: {}/{}/{}", f.train.len(), f.val.len(), f.test.len())
        })?;
        let all: BTreeSet<String> = f.train.iter().chain(&f.val).chain(&f.test).cloned().collect();
        ensure(all == patients, || format!("fold {i} does not use every patient exactly once"))?;
        for (name, subset) in [("train", &f.train), ("val", &f.val), ("test", &f.test)] {
            ensure(covers_all(&cohort, subset), || format!("fold {i} {name} lacks a site or status"))?;
        }
        tested.extend(f.test.iter().cloned());
    }
    tested.sort();
    ensure(tested == patients.iter().cloned().collect::<Vec<_>>(), || {
        "test sets do not partition the patients".into()
    })?;
    Ok("5 folds of 12/4/4 patients, test sets partition 20 patients, 15/15 subsets covered, reproducible".into())
}

pub fn resampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let (w, h) = (rng.random_range(1..60), rng.random_range(1..60));
        let g = Grid::from_vec(w, h, (0..w * h).map(|_| rng.random_range(0.0..65535.0f32)).collect());
        let r = resample_bicubic(&g, 0.37, 0.37).map_err(|e| e.to_string())?;
        ensure(r.width == w && r.height == h && r.data == g.data, || {
            format!("identity resample of {w}x{h} changed the grid")
        })?;
    }
    let mut worst = 0.0f64;
    for &(src, dst) in &[(0.32, 0.5), (0.5, 0.32), (0.25, 1.0), (1.0, 0.3)] {
        for _ in 0..5 {
            let (w, h) = (rng.random_range(3..80), rng.random_range(3..80));
            let c = rng.random_range(1.0..60000.0f32);
            let r = resample_bicubic(&Grid::filled(w, h, c), src, dst).map_err(|e| e.to_string())?;
            for &v in &r.data {
                worst = worst.max(rel(v as f64, c as f64));
            }
        }
    }
    ensure(worst <= 1e-6, || format!("constant drifted by {worst:e}"))?;
    let g = Grid::filled(100, 100, 1.0f32);
    let r = resample_bicubic(&g, 0.32, 0.5).map_err(|e| e.to_string())?;
    ensure(resampled_extent(100, 0.32, 0.5) == 64 && r.width == 64 && r.height == 64, || {
        format!("100 px at 0.32 -> {}x{} at 0.5", r.width, r.height)
    })?;
    Ok(format!("identity bit-exact, constant drift {worst:.1e}, 100 px @0.32 -> 64 px @0.5"))
}
