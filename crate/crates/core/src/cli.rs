//! Command-line front end.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::describer::{Describer, HttpConfig, HttpDescriber, MockDescriber};
use crate::detector::{run_stream, DetectorConfig, EmissionRecord};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_corpus, group_by_video, render_table, Embedder, EvalConfig, HttpEmbedder, HttpEmbedderConfig, MockEmbedder};
use crate::model::{read_annotations_jsonl, validate_annotations, write_annotations_jsonl, AnnotationSet, FrameScores};
use crate::pipeline::{process_video, run_pipeline, DurationBounds, HttpLanguageModel, LanguageModel, MockLanguageModel, PipelineConfig};
use crate::scoring::{
    infer_scores, read_features_csv, read_scores_csv, train_scorer, write_features_csv, write_scores_csv, FeatureSequence,
    ScorerConfig, ScorerModel,
};
use crate::simulator::{gen_annotations, gen_features, gen_scores_for, SimConfig};
use crate::stream::{run_video, StreamConfig};

/// Every module setting, loadable from one JSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub scorer: ScorerConfig,
    pub stream: StreamConfig,
    pub eval: EvalConfig,
    pub describer: HttpConfig,
    pub embedder: HttpEmbedderConfig,
    pub llm: HttpConfig,
    pub pipeline: PipelineConfig,
    /// Worker threads for per-video work; 0 uses every core.
    pub jobs: usize,
}

impl RunConfig {
    /// Reads either a bare config or a previously written effective config.
    pub fn load(path: &Path) -> Result<Self> {
        let v: Value = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let inner = match v.get("config") {
            Some(c) if v.get("subcommand").is_some() => c.clone(),
            _ => v,
        };
        serde_json::from_value(inner).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

#[derive(Parser, Debug)]
#[command(name = "hierstream", version, about = "Streaming hierarchical action localization and description")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-video work (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SimFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub videos: Option<usize>,
    /// Logit noise standard deviation of simulated scores.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub zero_gap_prob: Option<f64>,
    #[arg(long)]
    pub fps: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DetectorFlags {
    #[arg(long)]
    pub start_threshold: Option<f64>,
    #[arg(long)]
    pub drop_delta: Option<f64>,
    #[arg(long)]
    pub min_progress: Option<f64>,
    /// Disable progress-drop boundaries.
    #[arg(long)]
    pub actionness_only: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ScoreSource {
    /// Directory of `<video_id>.csv` score streams.
    #[arg(long, conflicts_with_all = ["model", "features"])]
    pub scores: Option<PathBuf>,
    /// Trained scorer; requires --features.
    #[arg(long, requires = "features")]
    pub model: Option<PathBuf>,
    /// Directory of `<video_id>.csv` feature sequences.
    #[arg(long, requires = "model")]
    pub features: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Mock,
    Http,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Table,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic annotations, score streams and features.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Train the recurrent scorer on features and annotations.
    Train {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Detect instance boundaries online and write emissions.
    Detect {
        #[command(flatten)]
        source: ScoreSource,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        detector: DetectorFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Detect and describe every instance, then the goal.
    Describe {
        #[command(flatten)]
        source: ScoreSource,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Backend::Mock)]
        describer: Backend,
        /// Frame handle pattern with `{video}`, `{index}` and `{t}`.
        #[arg(long)]
        handles: Option<String>,
        /// Progress fractions for early descriptions, e.g. 0.25,0.5,0.75.
        #[arg(long, value_delimiter = ',')]
        partial: Option<Vec<f64>>,
        #[command(flatten)]
        detector: DetectorFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Score emissions against annotations.
    Evaluate {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        emissions: PathBuf,
        #[arg(long, value_delimiter = ',')]
        tiou: Option<Vec<f64>>,
        #[arg(long)]
        topk: Option<usize>,
        #[arg(long, value_enum, default_value_t = Backend::Mock)]
        embedder: Backend,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        report: ReportFormat,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build step and goal annotations from substep-only annotations.
    Pipeline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Step caption clusters; 0 keeps proposed captions.
        #[arg(long)]
        k: Option<usize>,
        /// Step duration bounds in seconds as `min,max`.
        #[arg(long, value_parser = parse_bounds)]
        bounds: Option<DurationBounds>,
        #[arg(long, value_enum, default_value_t = Backend::Mock)]
        client: Backend,
        #[arg(long, value_enum, default_value_t = Backend::Mock)]
        embedder: Backend,
        /// Group size used by the mock client.
        #[arg(long, default_value_t = 2)]
        window: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate, optionally train, detect, describe and evaluate.
    E2e {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
        /// Score with a scorer trained on separate simulated videos.
        #[arg(long)]
        train: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        detector: DetectorFlags,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Train { .. } => "train",
            Command::Detect { .. } => "detect",
            Command::Describe { .. } => "describe",
            Command::Evaluate { .. } => "evaluate",
            Command::Pipeline { .. } => "pipeline",
            Command::E2e { .. } => "e2e",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Train { common, .. }
            | Command::Detect { common, .. }
            | Command::Describe { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Pipeline { common, .. }
            | Command::E2e { common, .. } => common,
        }
    }
}

/// 0 success, 1 usage, 2 data or validation, 3 transport.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Transport(_) | Error::Parse { .. } => 3,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

impl SimFlags {
    fn apply(&self, c: &mut SimConfig) {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.videos {
            c.videos = v;
        }
        if let Some(v) = self.noise {
            c.noise_sigma = v;
        }
        if let Some(v) = self.zero_gap_prob {
            c.zero_gap_prob = v;
        }
        if let Some(v) = self.fps {
            c.fps = v;
        }
    }
}

impl DetectorFlags {
    fn apply(&self, c: &mut DetectorConfig) {
        if self.actionness_only {
            *c = DetectorConfig { drop_delta: DetectorConfig::actionness_only().drop_delta, ..*c };
        }
        if let Some(v) = self.start_threshold {
            c.start_threshold = v;
        }
        if let Some(v) = self.drop_delta {
            c.drop_delta = v;
        }
        if let Some(v) = self.min_progress {
            c.min_progress_for_drop = v;
        }
    }
}

fn parse_bounds(s: &str) -> std::result::Result<DurationBounds, String> {
    let (a, b) = s.split_once(',').ok_or("expected min,max")?;
    let min: f64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let max: f64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if !(min >= 0.0 && max > min) {
        return Err(format!("need 0 <= min < max, got {min},{max}"));
    }
    Ok(DurationBounds { min, max })
}

fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// `out.jsonl` -> `out.<suffix>` next to it.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_effective(path: &Path, subcommand: &str, args: Value, cfg: &RunConfig) -> Result<()> {
    write_json(path, &json!({ "subcommand": subcommand, "args": args, "config": cfg }))
}

fn read_annotations(path: &Path) -> Result<Vec<AnnotationSet>> {
    let sets = read_annotations_jsonl(BufReader::new(File::open(path)?))?;
    for a in &sets {
        if let Some(v) = validate_annotations(a).first() {
            return Err(Error::data(format!("{}: video {}: {}", path.display(), a.video_id, v.reason)));
        }
    }
    Ok(sets)
}

fn write_records(path: &Path, records: &[EmissionRecord]) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<EmissionRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

/// `<video_id>.csv` files of a directory, sorted by video id.
fn csv_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "csv") {
            let id = p.file_stem().unwrap().to_string_lossy().into_owned();
            out.push((id, p));
        }
    }
    if out.is_empty() {
        return Err(Error::data(format!("no .csv files in {}", dir.display())));
    }
    out.sort();
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    model: ScorerModel,
    loss_trace: Vec<f64>,
}

fn load_model(path: &Path) -> Result<ScorerModel> {
    let saved: SavedModel = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    saved.model.check_shape()?;
    Ok(saved.model)
}

fn load_streams(source: &ScoreSource, jobs: usize) -> Result<Vec<(String, Vec<FrameScores>)>> {
    match (&source.scores, &source.model, &source.features) {
        (Some(dir), _, _) => par_map(jobs, &csv_files(dir)?, |(id, p)| {
            Ok((id.clone(), read_scores_csv(BufReader::new(File::open(p)?))?))
        }),
        (None, Some(model), Some(features)) => {
            let model = load_model(model)?;
            par_map(jobs, &csv_files(features)?, |(id, p)| {
                let seq = read_features_csv(BufReader::new(File::open(p)?))?;
                Ok((id.clone(), infer_scores(&model, &seq)?))
            })
        }
        _ => Err(Error::config("give either --scores or --model with --features")),
    }
}

fn source_args(source: &ScoreSource) -> Value {
    json!({ "scores": source.scores, "model": source.model, "features": source.features })
}

fn make_describer(kind: Backend, cfg: &RunConfig) -> Box<dyn Describer> {
    match kind {
        Backend::Mock => Box::new(MockDescriber::new()),
        Backend::Http => Box::new(HttpDescriber::new(cfg.describer.clone())),
    }
}

fn make_embedder(kind: Backend, cfg: &RunConfig) -> Box<dyn Embedder> {
    match kind {
        Backend::Mock => Box::new(MockEmbedder::default()),
        Backend::Http => Box::new(HttpEmbedder::new(cfg.embedder.clone())),
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<()> {
    let mut cfg = base_config(cmd.common())?;
    let name = cmd.name();
    match cmd {
        Command::Simulate { out, sim, .. } => {
            sim.apply(&mut cfg.sim);
            simulate(&out, &cfg)?;
            write_effective(&out.join("config.json"), name, json!({ "out": out }), &cfg)
        }
        Command::Train { annotations, features, out, epochs, seed, .. } => {
            if let Some(e) = epochs {
                cfg.scorer.epochs = e;
            }
            let anns = read_annotations(&annotations)?;
            let seqs: Vec<FeatureSequence> = anns
                .iter()
                .map(|a| {
                    let p = features.join(format!("{}.csv", a.video_id));
                    read_features_csv(BufReader::new(File::open(&p)?))
                })
                .collect::<Result<_>>()?;
            let outcome = train_scorer(&seqs, &anns, &cfg.scorer, seed)?;
            write_json(&out, &SavedModel { model: outcome.model, loss_trace: outcome.loss_trace })?;
            let args = json!({ "annotations": annotations, "features": features, "out": out, "seed": seed });
            write_effective(&sibling(&out, "config.json"), name, args, &cfg)
        }
        Command::Detect { source, out, detector, .. } => {
            detector.apply(&mut cfg.stream.detector);
            cfg.stream.detector.validate()?;
            let streams = load_streams(&source, cfg.jobs)?;
            let det = cfg.stream.detector;
            let per_video = par_map(cfg.jobs, &streams, |(id, scores)| {
                Ok(run_stream(scores, &det)?
                    .iter()
                    .map(|e| EmissionRecord::from_emission(e, Some(id), false))
                    .collect::<Vec<_>>())
            })?;
            write_records(&out, &per_video.concat())?;
            let mut args = source_args(&source);
            args["out"] = json!(out);
            write_effective(&sibling(&out, "config.json"), name, args, &cfg)
        }
        Command::Describe { source, out, describer, handles, partial, detector, .. } => {
            detector.apply(&mut cfg.stream.detector);
            if let Some(h) = handles {
                cfg.stream.handle_template = h;
            }
            if let Some(p) = partial {
                cfg.stream.partial_fractions = p;
            }
            cfg.stream.validate()?;
            let streams = load_streams(&source, cfg.jobs)?;
            let d = make_describer(describer, &cfg);
            let jobs = match describer {
                Backend::Http if cfg.jobs == 0 => cfg.describer.in_flight.max(1),
                Backend::Http => cfg.jobs.min(cfg.describer.in_flight.max(1)),
                Backend::Mock => cfg.jobs,
            };
            let outputs = par_map(jobs, &streams, |(id, scores)| Ok((id.clone(), run_video(id, scores, &cfg.stream, d.as_ref())?)))?;
            let records: Vec<EmissionRecord> = outputs.iter().flat_map(|(id, o)| o.records(id)).collect();
            write_records(&out, &records)?;
            let partials: Vec<Value> = outputs
                .iter()
                .flat_map(|(id, o)| o.partials.iter().map(move |p| json!({ "video_id": id, "partial": p })))
                .collect();
            if !partials.is_empty() {
                let mut w = create(&sibling(&out, "partials.jsonl"))?;
                for p in partials {
                    serde_json::to_writer(&mut w, &p)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
            let mut args = source_args(&source);
            args["out"] = json!(out);
            args["describer"] = json!(format!("{describer:?}").to_lowercase());
            write_effective(&sibling(&out, "config.json"), name, args, &cfg)
        }
        Command::Evaluate { annotations, emissions, tiou, topk, embedder, report, out, .. } => {
            if let Some(t) = tiou {
                cfg.eval.thresholds = t;
            }
            if let Some(k) = topk {
                cfg.eval.topk = k;
            }
            let anns = read_annotations(&annotations)?;
            let preds = group_by_video(&read_records(&emissions)?)?;
            let e = make_embedder(embedder, &cfg);
            let r = evaluate_corpus(&anns, &preds, &cfg.eval, e.as_ref())?;
            let text = match report {
                ReportFormat::Json => serde_json::to_string_pretty(&r)? + "\n",
                ReportFormat::Table => render_table(&r),
            };
            match &out {
                Some(p) => {
                    create(p)?.write_all(text.as_bytes())?;
                    let args = json!({ "annotations": annotations, "emissions": emissions, "out": out });
                    write_effective(&sibling(p, "config.json"), name, args, &cfg)?;
                }
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Pipeline { input, out, k, bounds, client, embedder, window, seed, .. } => {
            if let Some(k) = k {
                cfg.pipeline.k = k;
            }
            if bounds.is_some() {
                cfg.pipeline.bounds = bounds;
            }
            if let Some(s) = seed {
                cfg.pipeline.seed = s;
            }
            let videos = read_annotations(&input)?;
            let llm: Box<dyn LanguageModel> = match client {
                Backend::Mock => Box::new(MockLanguageModel { window }),
                Backend::Http => Box::new(HttpLanguageModel::new(cfg.llm.clone())),
            };
            let e = make_embedder(embedder, &cfg);
            let outcomes = par_map(cfg.jobs, &videos, |a| process_video(a, llm.as_ref(), &cfg.pipeline))?;
            let (sets, canon) = run_pipeline(&videos, &outcomes, &cfg.pipeline, e.as_ref(), llm.as_ref())?;
            write_annotations_jsonl(create(&out)?, &sets)?;
            write_json(
                &sibling(&out, "report.json"),
                &json!({
                    "videos": outcomes.iter().map(|o| json!({ "video_id": o.video_id, "consistency": o.report })).collect::<Vec<_>>(),
                    "representatives": canon.as_ref().map(|c| &c.representatives),
                    "objective_trace": canon.as_ref().map(|c| &c.kmeans.objective_trace),
                }),
            )?;
            let args = json!({ "input": input, "out": out, "window": window });
            write_effective(&sibling(&out, "config.json"), name, args, &cfg)
        }
        Command::E2e { out, sim, train, epochs, detector, .. } => {
            sim.apply(&mut cfg.sim);
            detector.apply(&mut cfg.stream.detector);
            if let Some(e) = epochs {
                cfg.scorer.epochs = e;
            }
            let report = e2e(&out, &cfg, train)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            create(&out.join("report.json"))?.write_all(text.as_bytes())?;
            print!("{text}");
            write_effective(&out.join("config.json"), name, json!({ "out": out, "train": train }), &cfg)
        }
    }
}

fn simulate(out: &Path, cfg: &RunConfig) -> Result<Vec<AnnotationSet>> {
    let anns = gen_annotations(&cfg.sim)?;
    write_annotations_jsonl(create(&out.join("annotations.jsonl"))?, &anns)?;
    fs::create_dir_all(out.join("scores"))?;
    fs::create_dir_all(out.join("features"))?;
    let indexed: Vec<(usize, &AnnotationSet)> = anns.iter().enumerate().collect();
    par_map(cfg.jobs, &indexed, |&(i, a)| {
        let scores = gen_scores_for(&cfg.sim, i, a, &cfg.scorer.histogram)?;
        let mut w = create(&out.join("scores").join(format!("{}.csv", a.video_id)))?;
        write_scores_csv(&mut w, &scores)?;
        w.flush()?;
        let features = gen_features(a, &cfg.sim, i)?;
        let mut w = create(&out.join("features").join(format!("{}.csv", a.video_id)))?;
        write_features_csv(&mut w, &features)?;
        w.flush()?;
        Ok(())
    })?;
    Ok(anns)
}

/// Report written by `e2e`; contains no timing so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub seed: u64,
    pub videos: usize,
    pub trained: bool,
    pub final_train_loss: Option<f64>,
    pub emitted_instances: usize,
    pub describer_calls: usize,
    pub evaluation: crate::metrics::EvalReport,
}

pub fn e2e(out: &Path, cfg: &RunConfig, train: bool) -> Result<E2eReport> {
    cfg.stream.validate()?;
    let anns = simulate(out, cfg)?;
    let indexed: Vec<(usize, &AnnotationSet)> = anns.iter().enumerate().collect();

    let (streams, final_loss) = if train {
        if cfg.scorer.feature_dim != cfg.sim.feature_dim {
            return Err(Error::config(format!(
                "scorer.feature_dim {} differs from sim.feature_dim {}",
                cfg.scorer.feature_dim, cfg.sim.feature_dim
            )));
        }
        // train on separately seeded videos, evaluate on the simulated ones
        let train_sim = SimConfig { seed: cfg.sim.seed.wrapping_add(0x9e37_79b9_7f4a_7c15), ..cfg.sim.clone() };
        let train_anns = gen_annotations(&train_sim)?;
        let train_feats = train_anns
            .iter()
            .enumerate()
            .map(|(i, a)| gen_features(a, &train_sim, i))
            .collect::<Result<Vec<_>>>()?;
        let outcome = train_scorer(&train_feats, &train_anns, &cfg.scorer, cfg.sim.seed)?;
        write_json(
            &out.join("model.json"),
            &SavedModel { model: outcome.model.clone(), loss_trace: outcome.loss_trace.clone() },
        )?;
        let streams = par_map(cfg.jobs, &indexed, |&(i, a)| infer_scores(&outcome.model, &gen_features(a, &cfg.sim, i)?))?;
        (streams, outcome.loss_trace.last().copied())
    } else {
        let streams = par_map(cfg.jobs, &indexed, |&(i, a)| gen_scores_for(&cfg.sim, i, a, &cfg.scorer.histogram))?;
        (streams, None)
    };

    let describer = MockDescriber::new();
    let jobs: Vec<(&AnnotationSet, &Vec<FrameScores>)> = anns.iter().zip(&streams).collect();
    let outputs = par_map(cfg.jobs, &jobs, |(a, s)| run_video(&a.video_id, s, &cfg.stream, &describer))?;
    let records: Vec<EmissionRecord> = anns.iter().zip(&outputs).flat_map(|(a, o)| o.records(&a.video_id)).collect();
    write_records(&out.join("emissions.jsonl"), &records)?;

    let evaluation = evaluate_corpus(&anns, &group_by_video(&records)?, &cfg.eval, &MockEmbedder::default())?;
    Ok(E2eReport {
        seed: cfg.sim.seed,
        videos: anns.len(),
        trained: train,
        final_train_loss: final_loss,
        emitted_instances: records.iter().filter(|r| r.level != crate::model::HierarchyLevel::Goal).count(),
        describer_calls: outputs.iter().map(|o| o.describer_calls).sum(),
        evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_family() {
        assert_eq!(exit_code(&Error::config("x")), 1);
        assert_eq!(exit_code(&Error::data("x")), 2);
        assert_eq!(exit_code(&Error::Transport("x".into())), 3);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["hierstream", "no-such-command"]), 1);
        assert_eq!(run(["hierstream", "--help"]), 0);
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = SimConfig { seed: 1, videos: 3, ..Default::default() };
        SimFlags { seed: Some(9), ..Default::default() }.apply(&mut c);
        assert_eq!((c.seed, c.videos), (9, 3));
        let mut d = DetectorConfig::default();
        DetectorFlags { actionness_only: true, ..Default::default() }.apply(&mut d);
        assert!(!d.drops_enabled());
    }

    #[test]
    fn bounds_flag() {
        assert_eq!(parse_bounds("1.5, 20").unwrap(), DurationBounds { min: 1.5, max: 20.0 });
        assert!(parse_bounds("5,1").is_err());
        assert!(parse_bounds("5").is_err());
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(sibling(Path::new("out/em.jsonl"), "config.json"), PathBuf::from("out/em.config.json"));
    }
}
