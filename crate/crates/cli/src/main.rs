use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cytogate_core::cascade::{enumerate_outcomes, run_cascade, LabelAssignment, RuleProgram, ANNOTATION_STAINS};
use cytogate_core::classifier::{train, write_predictions, SoftmaxModel, TrainConfig};
use cytogate_core::cv::{make_folds, Cohort};
use cytogate_core::metrics::{evaluate, load_class_csv, write_per_class_csv, ParentMap, SlideEvaluation};
use cytogate_core::patches::PatchDataset;
use cytogate_core::pipeline::{extract_labelled_patches, label_bundle};
use cytogate_core::raster::Grid;
use cytogate_core::slide::{write_png_gray, InstanceMap, SlideBundle};
use cytogate_core::stats::{apply_thresholds, compute_stats_tiled, InstanceStatsTable, PositivityMatrix, ThresholdSet};
use cytogate_core::synth::{generate_cohort, SynthConfig, THRESHOLDS_FILE};
use cytogate_core::Outcome;
use cytogate_service::AppState;

#[derive(Parser)]
#[command(name = "cytogate", version, about = "MxIF gating, rule-cascade labelling and nucleus classification tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a bundle's manifest.
    Inspect { bundle: PathBuf },
    /// Sum channels into one clamped raster (segmentation input).
    Merge {
        bundle: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        channels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-instance area, centroid and mean intensities.
    Stats {
        bundle: PathBuf,
        /// Defaults to every channel of the bundle.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<String>,
        #[arg(long, default_value_t = 512)]
        tile: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold a stats table into a positivity matrix.
    Gate {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a rule program over a positivity matrix, or gate and label a bundle directly.
    Label(LabelArgs),
    /// Outcome of every positivity vector over the annotation stains.
    Enumerate {
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Write `vector,<stain>...,outcome,step_index` rows here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut fixed-size patches around labelled instances.
    Patches(PatchesArgs),
    /// Train the softmax baseline on a patch dataset.
    Train(TrainArgs),
    /// Classify a patch dataset; writes one CSV per slide.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Patient-level five-fold split with site and disease coverage.
    Split {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection and classification metrics for predicted against reference instances.
    Eval(EvalArgs),
    /// HTTP threshold tuning service.
    Serve {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
        /// Directory served for every path outside /api.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
    /// Generate a synthetic cohort of slide bundles.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Slide width and height in pixels.
        #[arg(long, default_value_t = 320)]
        size: u32,
    },
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, conflicts_with = "bundle", required_unless_present = "bundle")]
    positivity: Option<PathBuf>,
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// With --bundle; defaults to the bundle's thresholds.json.
    #[arg(long, requires = "bundle")]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PatchesArgs {
    /// Repeat together with --labels, one pair per slide.
    #[arg(long, required = true)]
    bundle: Vec<PathBuf>,
    #[arg(long, required = true)]
    labels: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    channels: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().steps)]
    steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Only train on patches from these slides.
    #[arg(long, value_delimiter = ',')]
    slides: Vec<String>,
    /// Write the per-step mini-batch loss, one value per line.
    #[arg(long)]
    loss_trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted instance map: a bundle directory or a raw u32 file (needs --size).
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    /// `instance_id,class` CSV, one per --pred.
    #[arg(long, required = true)]
    pred_classes: Vec<PathBuf>,
    /// `instance_id,class` or label CSV, one per --truth.
    #[arg(long, required = true)]
    truth_classes: Vec<PathBuf>,
    /// Parent-class JSON; reference labels are then parent names.
    #[arg(long)]
    parents: Option<PathBuf>,
    /// Use the built-in parent map.
    #[arg(long, conflicts_with = "parents")]
    default_parents: bool,
    /// WIDTHxHEIGHT of raw instance maps.
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_csv: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn load_rules(path: Option<&Path>) -> Result<RuleProgram> {
    match path {
        None => Ok(RuleProgram::table1()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RuleProgram::parse(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn bundle(path: &Path) -> Result<SlideBundle> {
    SlideBundle::open(path).with_context(|| format!("opening bundle {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Inspect { bundle: path } => {
            let b = bundle(&path)?;
            println!("{}", serde_json::to_string_pretty(b.manifest())?);
        }
        Command::Merge { bundle: path, channels, out } => {
            let b = bundle(&path)?;
            let names: Vec<&str> = channels.iter().map(String::as_str).collect();
            let merged = b.merge_channels_sum(&names)?;
            write_png_gray(&out, &merged.grid, b.manifest().bit_depth)?;
        }
        Command::Stats { bundle: path, channels, tile, out } => {
            let b = bundle(&path)?;
            let names: Vec<&str> = if channels.is_empty() {
                b.channels().iter().map(String::as_str).collect()
            } else {
                channels.iter().map(String::as_str).collect()
            };
            let table = compute_stats_tiled(&b, &names, tile, tile)?;
            table.write_csv(output(out.as_deref())?)?;
        }
        Command::Gate { stats, thresholds, out } => {
            let table = InstanceStatsTable::read_csv(open(&stats)?)?;
            let th = ThresholdSet::load(&thresholds)?;
            apply_thresholds(&table, &th)?.write_csv(output(out.as_deref())?)?;
        }
        Command::Label(args) => label(args)?,
        Command::Enumerate { rules, out } => enumerate(rules.as_deref(), out.as_deref())?,
        Command::Patches(args) => patches(args)?,
        Command::Train(args) => train_cmd(args)?,
        Command::Predict { model, data, out_dir } => predict(&model, &data, &out_dir)?,
        Command::Split { cohort, seed, out } => {
            let cohort = Cohort::load(&cohort)?;
            let plan = make_folds(&cohort, seed)?;
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &plan)?;
            writeln!(w)?;
        }
        Command::Eval(args) => eval(args)?,
        Command::Serve {
            root,
            rules,
            port,
            bind,
            static_dir,
        } => {
            let program = load_rules(rules.as_deref())?;
            let state = AppState::open(&root, program, static_dir)
                .with_context(|| format!("scanning {}", root.display()))?;
            for w in &state.warnings {
                log::warn!("{w}");
            }
            log::info!("{} slide(s) loaded", state.slides.len());
            tokio::runtime::Runtime::new()?.block_on(cytogate_service::serve(state, SocketAddr::new(bind, port)))?;
        }
        Command::Synth { out, seed, size } => {
            let cfg = SynthConfig {
                seed,
                width: size,
                height: size,
                ..SynthConfig::default()
            };
            let c = generate_cohort(&out, &cfg)?;
            let n: usize = c.slides.iter().map(|s| s.instances.len()).sum();
            log::info!("wrote {} slides with {n} instances to {}", c.slides.len(), out.display());
        }
    }
    Ok(())
}

fn label(args: LabelArgs) -> Result<()> {
    let program = load_rules(args.rules.as_deref())?;
    let labels: LabelAssignment = match (&args.positivity, &args.bundle) {
        (Some(pm), _) => {
            let pm = PositivityMatrix::read_csv(open(pm)?)?;
            run_cascade(&program, &pm)?
        }
        (None, Some(dir)) => {
            let b = bundle(dir)?;
            let th_path = args.thresholds.clone().unwrap_or_else(|| dir.join(THRESHOLDS_FILE));
            let th = ThresholdSet::load(&th_path).with_context(|| format!("loading {}", th_path.display()))?;
            label_bundle(&b, &th, &program)?.labels
        }
        (None, None) => bail!("either --positivity or --bundle is required"),
    };
    let counts = labels.counts();
    let summary: Vec<String> = counts.iter().filter(|(_, &n)| n > 0).map(|(o, n)| format!("{o}={n}")).collect();
    log::info!("{} instances: {}", labels.len(), summary.join(" "));
    labels.write_csv(output(args.out.as_deref())?)?;
    Ok(())
}

fn enumerate(rules: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let program = load_rules(rules)?;
    let stains: Vec<String> = ANNOTATION_STAINS.iter().map(|s| s.to_string()).collect();
    let table = enumerate_outcomes(&program, &stains)?;
    let violations = table.violations().count();
    let counts = table.counts();
    println!("vectors\t{}", table.rows.len());
    for o in Outcome::all() {
        println!("{o}\t{}", counts[&o]);
    }
    println!("violations\t{violations}");
    if let Some(path) = out {
        let mut w = output(Some(path))?;
        write!(w, "vector")?;
        for s in &stains {
            write!(w, ",{s}")?;
        }
        writeln!(w, ",outcome,step_index")?;
        for (v, r) in table.rows.iter().enumerate() {
            write!(w, "{v}")?;
            for bit in 0..stains.len() {
                write!(w, ",{}", (v >> bit) & 1)?;
            }
            match r {
                Ok(res) => writeln!(w, ",{},{}", res.outcome, res.step.map(|s| s.to_string()).unwrap_or_default())?,
                Err(_) => writeln!(w, ",violation,")?,
            }
        }
    }
    if violations > 0 {
        bail!("{violations} vector(s) violate exclusivity");
    }
    Ok(())
}

fn patches(args: PatchesArgs) -> Result<()> {
    if args.bundle.len() != args.labels.len() {
        bail!("--bundle and --labels must be given the same number of times");
    }
    let channels: Vec<&str> = args.channels.iter().map(String::as_str).collect();
    let mut ds = PatchDataset::new(args.channels.clone());
    for (dir, labels_path) in args.bundle.iter().zip(&args.labels) {
        let b = bundle(dir)?;
        let labels = LabelAssignment::read_csv(open(labels_path)?)
            .with_context(|| format!("reading {}", labels_path.display()))?;
        let stats = compute_stats_tiled(&b, &[], 512, 512)?;
        let part = extract_labelled_patches(&b, &stats, &labels, &channels)?;
        log::info!("{}: {} patches", b.manifest().slide_id, part.len());
        ds.extend(part)?;
    }
    ds.write(&args.out)?;
    let info = ds.info();
    for (c, n) in &info.class_counts {
        log::info!("{c}: {n}");
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut ds = PatchDataset::read(&args.data)?;
    if !args.slides.is_empty() {
        ds = ds.filter(|r| args.slides.contains(&r.slide_id));
    }
    let cfg = TrainConfig {
        steps: args.steps,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        seed: args.seed,
    };
    let outcome = train(&ds, &cfg)?;
    if let Some(last) = outcome.loss_trace.last() {
        log::info!("trained {} steps on {} patches, final batch loss {last:.5}", cfg.steps, ds.len());
    }
    outcome.model.save(&args.out)?;
    if let Some(p) = &args.loss_trace {
        let mut w = output(Some(p))?;
        for l in &outcome.loss_trace {
            writeln!(w, "{l}")?;
        }
    }
    Ok(())
}

fn predict(model: &Path, data: &Path, out_dir: &Path) -> Result<()> {
    let model = SoftmaxModel::load(model)?;
    let ds = PatchDataset::read(data)?;
    let preds = model.predict_dataset(&ds)?;
    let mut by_slide: BTreeMap<&str, Vec<(u32, _)>> = BTreeMap::new();
    for (rec, p) in ds.records.iter().zip(preds) {
        by_slide.entry(&rec.slide_id).or_default().push((rec.instance_id, p));
    }
    std::fs::create_dir_all(out_dir)?;
    for (slide, rows) in by_slide {
        let path = out_dir.join(format!("{slide}.csv"));
        write_predictions(output(Some(&path))?, &model.classes, rows)?;
    }
    Ok(())
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s.split_once('x').context("--size must look like WIDTHxHEIGHT")?;
    Ok((w.parse()?, h.parse()?))
}

fn instance_map(path: &Path, size: Option<(usize, usize)>) -> Result<Grid<u32>> {
    if path.is_dir() {
        return Ok(bundle(path)?.read_instance_map()?.grid);
    }
    let Some((w, h)) = size else {
        bail!("{} is a raw instance map; pass --size", path.display());
    };
    Ok(InstanceMap::read_raw(path, w, h, 1.0)?.grid)
}

fn eval(args: EvalArgs) -> Result<()> {
    let n = args.pred.len();
    if args.truth.len() != n || args.pred_classes.len() != n || args.truth_classes.len() != n {
        bail!("--pred, --truth, --pred-classes and --truth-classes must be given the same number of times");
    }
    let size = args.size.as_deref().map(parse_size).transpose()?;
    let parents = match (&args.parents, args.default_parents) {
        (Some(p), _) => Some(ParentMap::load(p)?),
        (None, true) => Some(ParentMap::default()),
        (None, false) => None,
    };
    let mut slides = Vec::with_capacity(n);
    for i in 0..n {
        slides.push(SlideEvaluation {
            pred_map: instance_map(&args.pred[i], size)?,
            truth_map: instance_map(&args.truth[i], size)?,
            pred_classes: load_class_csv(&args.pred_classes[i])
                .with_context(|| format!("reading {}", args.pred_classes[i].display()))?,
            truth_classes: load_class_csv(&args.truth_classes[i])
                .with_context(|| format!("reading {}", args.truth_classes[i].display()))?,
        });
    }
    let report = evaluate(&slides, parents.as_ref())?;
    let mut w = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    if let Some(p) = &args.emit_csv {
        write_per_class_csv(&report, output(Some(p))?)?;
    }
    Ok(())
}
