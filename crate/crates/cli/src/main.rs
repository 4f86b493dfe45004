use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;

use posevent::config::{load_section, MetricSettings, PipelineConfig, Seeds};
use posevent::encoding::{
    assemble_multi_variant_dataset, load_dataset, save_dataset, EncodingConfig, NormalizationMode,
};
use posevent::io::{
    load_candidates, load_timeline, load_track, save_candidates, save_timeline, save_track,
};
use posevent::metrics::{evaluate_events, pck};
use posevent::model::{
    calibrate_theta, default_theta, extract_events, theta_grid, train, Arch, Model, TrainConfig,
};
use posevent::report::{indicator_plot_svg, indicators_csv, json_to_csv, parse_indicators_csv};
use posevent::swim::{detect_swim_start, SwimRuleConfig};
use posevent::synth::{generate_runner, generate_swim_start, perturb, NoiseModel, RunnerParams, SwimStartParams};
use posevent::tracker::{track_athlete, TrackerConfig};
use posevent::{EventSet, EventType, Track};

/// Pose-based athlete tracking and motion event detection.
#[derive(Parser)]
#[command(name = "posevent", version)]
struct Cli {
    /// Pipeline configuration (TOML, or JSON with a `.json` extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for commands that process several recordings.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic recordings with ground-truth events.
    Synth(SynthArgs),
    /// Select the athlete track from per-frame pose candidates.
    Track(TrackArgs),
    /// Detect swim-start events from per-camera athlete tracks.
    SwimDetect(SwimDetectArgs),
    /// Build a training dataset from tracks and event files.
    Encode(EncodeArgs),
    /// Train the event model.
    Train(TrainArgs),
    /// Predict events on a track.
    Infer(InferArgs),
    /// Choose the event threshold that maximizes F1 on labelled tracks.
    Calibrate(CalibrateArgs),
    /// Compare predicted and ground-truth events.
    EvalEvents(EvalEventsArgs),
    /// Keypoint accuracy of predicted against ground-truth poses.
    EvalPose(EvalPoseArgs),
    /// Convert a report or render an indicator plot.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Runner,
    Swim,
}

#[derive(Args)]
struct SynthArgs {
    kind: SynthKind,
    /// Generator parameters (JSON or TOML); defaults when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Keypoint noise applied to the generated candidates.
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of recordings; more than one are written to numbered
    /// subdirectories.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    /// Candidates file, or a directory of them.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output track file, or a directory when the input is one.
    #[arg(long)]
    out: PathBuf,
    /// Also write every ranked track as JSON.
    #[arg(long)]
    dump_all_tracks: Option<PathBuf>,
}

#[derive(Args)]
struct SwimDetectArgs {
    /// Track files of cameras 0 to 3 in order; `none` marks a camera
    /// without a track.
    #[arg(long, num_args = 1.., required = true)]
    tracks: Vec<String>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    /// Track files, one per video.
    #[arg(long, num_args = 1.., required = true)]
    track: Vec<PathBuf>,
    /// Ground-truth event files, in the same order as `--track`.
    #[arg(long, num_args = 1.., required = true)]
    events: Vec<PathBuf>,
    #[arg(long)]
    mode: Option<NormalizationMode>,
    #[arg(long)]
    tmax: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    track: PathBuf,
    #[arg(long)]
    mode: Option<NormalizationMode>,
    /// Occurrence threshold on `f - b`.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dump_indicators: Option<PathBuf>,
    /// Render the predicted indicators as SVG.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Ground truth drawn into the plot.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Track files, one per video.
    #[arg(long, num_args = 1.., required = true)]
    track: Vec<PathBuf>,
    /// Ground-truth event files, in the same order as `--track`.
    #[arg(long, num_args = 1.., required = true)]
    events: Vec<PathBuf>,
    /// Matching tolerance in frames.
    #[arg(long, default_value_t = 1)]
    dt: usize,
}

#[derive(Args)]
struct EvalEventsArgs {
    /// Predicted event files (or directories of `*.json`).
    #[arg(long, num_args = 1.., required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth event files, matched to `--pred` by position.
    #[arg(long, num_args = 1.., required = true)]
    gt: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    dt: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalPoseArgs {
    /// Predicted poses as a track file.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth poses as a track file.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
    Plot,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, value_enum)]
    format: ReportFormat,
    /// Report JSON (json and csv formats) or indicator CSV (plot format).
    #[arg(long = "in")]
    input: PathBuf,
    /// Predicted events shown in the plot.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Ground-truth events shown in the plot.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Domain(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<posevent::Error>() {
            Some(posevent::Error::Config(_)) => Failure::Usage(e),
            Some(posevent::Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
                Failure::Usage(e)
            }
            _ => Failure::Domain(e),
        }
    }
}

impl From<posevent::Error> for Failure {
    fn from(e: posevent::Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

struct Ctx {
    config_path: Option<PathBuf>,
    pipeline: PipelineConfig,
}

impl Ctx {
    fn load(path: Option<PathBuf>) -> std::result::Result<Self, Failure> {
        let pipeline = match &path {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        Ok(Ctx { config_path: path, pipeline })
    }

    /// Settings of one stage: the matching table of the configuration file
    /// (or the whole file when it only holds that stage), else `fallback`.
    fn section<T: DeserializeOwned + Default>(&self, name: &str, fallback: T) -> std::result::Result<T, Failure> {
        match &self.config_path {
            Some(p) => Ok(load_section(p, name)?),
            None => Ok(fallback),
        }
    }
}

/// Apply a command-line override, warning when it contradicts the
/// configuration file.
fn override_with<T: PartialEq + std::fmt::Debug + Copy>(
    has_config: bool,
    name: &str,
    slot: &mut T,
    flag: Option<T>,
) {
    if let Some(v) = flag {
        if has_config && *slot != v {
            warn!("--{name} {v:?} overrides the configured value {:?}", *slot);
        }
        *slot = v;
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .expect("global pool is configured once");
    }
    let result = Ctx::load(cli.config.clone()).and_then(|ctx| run(&ctx, cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(ctx: &Ctx, command: Command) -> CmdResult {
    match command {
        Command::Synth(a) => synth(ctx, a),
        Command::Track(a) => track(ctx, a),
        Command::SwimDetect(a) => swim_detect(ctx, a),
        Command::Encode(a) => encode(ctx, a),
        Command::Train(a) => train_cmd(ctx, a),
        Command::Infer(a) => infer(ctx, a),
        Command::Calibrate(a) => calibrate(ctx, a),
        Command::EvalEvents(a) => eval_events(ctx, a),
        Command::EvalPose(a) => eval_pose(ctx, a),
        Command::Report(a) => report(a),
    }
}

fn read_params<T: DeserializeOwned + Default>(path: Option<&Path>, section: &str) -> std::result::Result<T, Failure> {
    match path {
        Some(p) => Ok(load_section(p, section)?),
        None => Ok(T::default()),
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(ctx: &Ctx, a: SynthArgs) -> CmdResult {
    let mut seeds: Seeds = ctx.pipeline.seeds;
    override_with(ctx.config_path.is_some(), "seed", &mut seeds.data, a.seed);
    let noise: Option<NoiseModel> = match &a.noise {
        Some(p) => Some(load_section(p, "noise")?),
        None => None,
    };
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let dirs: Vec<PathBuf> = if a.count == 1 {
        vec![a.out_dir.clone()]
    } else {
        (0..a.count).map(|i| a.out_dir.join(format!("{i:03}"))).collect()
    };
    let noisy = |rec: posevent::CameraRecording, i: usize| -> posevent::Result<posevent::CameraRecording> {
        match noise {
            Some(n) => perturb(&rec, &NoiseModel { seed: n.seed.wrapping_add(seeds.data).wrapping_add(i as u64), ..n }),
            None => Ok(rec),
        }
    };
    match a.kind {
        SynthKind::Runner => {
            let params: RunnerParams = read_params(a.params.as_deref(), "runner")?;
            params.validate()?;
            dirs.par_iter().enumerate().try_for_each(|(i, dir)| -> anyhow::Result<()> {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds.data.wrapping_add(i as u64));
                let (rec, events) = generate_runner(&params, &mut rng)?;
                save_candidates(&dir.join("candidates.jsonl"), &noisy(rec, i)?)?;
                save_timeline(&dir.join("events.json"), &events)?;
                Ok(())
            })?;
        }
        SynthKind::Swim => {
            let params: SwimStartParams = read_params(a.params.as_deref(), "swim")?;
            params.validate()?;
            dirs.par_iter().enumerate().try_for_each(|(i, dir)| -> anyhow::Result<()> {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds.data.wrapping_add(i as u64));
                let scene = generate_swim_start(&params, &mut rng)?;
                for (c, rec) in scene.recordings.into_iter().enumerate() {
                    save_candidates(&dir.join(format!("cam{c}.jsonl")), &noisy(rec, 4 * i + c)?)?;
                }
                save_timeline(&dir.join("events.json"), &scene.events)?;
                write_text(
                    &dir.join("swim_rules.json"),
                    &serde_json::to_string_pretty(&params.rule_config()).expect("serializable"),
                )?;
                Ok(())
            })?;
        }
    }
    info!("wrote {} recording(s) to {}", dirs.len(), a.out_dir.display());
    Ok(())
}

fn track(ctx: &Ctx, a: TrackArgs) -> CmdResult {
    let cfg: TrackerConfig = ctx.section("tracker", ctx.pipeline.tracker)?;
    cfg.validate()?;
    let recordings = load_candidates(&a.input, None)?;
    let is_dir = a.input.is_dir();
    let names: Vec<PathBuf> = if is_dir {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&a.input)
            .with_context(|| format!("reading {}", a.input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files
            .iter()
            .map(|p| a.out.join(p.file_name().expect("listed file")))
            .collect()
    } else {
        vec![a.out.clone()]
    };
    let results: Vec<anyhow::Result<Vec<serde_json::Value>>> = recordings
        .par_iter()
        .zip(&names)
        .map(|(rec, out)| {
            let (selected, ranked) = track_athlete(rec, &cfg)
                .ok_or_else(|| anyhow!("no athlete track found in camera '{}'", rec.camera_id))?;
            save_track(out, &selected)?;
            Ok(ranked
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "track_frame_range": [r.track.t1, r.track.t2],
                        "ranks": r.ranks,
                        "total": r.total,
                    })
                })
                .collect())
        })
        .collect();
    let mut dump = Vec::new();
    for (r, out) in results.into_iter().zip(&names) {
        let ranked = r.map_err(Failure::Domain)?;
        dump.push(serde_json::json!({ "track": out, "ranked": ranked }));
    }
    if let Some(path) = &a.dump_all_tracks {
        let value = if is_dir { serde_json::Value::Array(dump) } else { dump.remove(0)["ranked"].take() };
        write_text(path, &serde_json::to_string_pretty(&value).expect("serializable"))?;
    }
    Ok(())
}

fn swim_detect(ctx: &Ctx, a: SwimDetectArgs) -> CmdResult {
    let cfg: SwimRuleConfig = ctx.section("swim", ctx.pipeline.swim)?;
    cfg.validate()?;
    let tracks: Vec<Option<Track>> = a
        .tracks
        .iter()
        .map(|t| match t.as_str() {
            "none" | "-" => Ok(None),
            path => load_track(Path::new(path), None).map(Some),
        })
        .collect::<posevent::Result<_>>()?;
    if tracks.iter().all(Option::is_none) {
        return Err(Failure::Domain(anyhow!("no camera has an athlete track")));
    }
    let mut events = detect_swim_start(&tracks, &cfg);
    if let Some(fps) = a.fps {
        events.fps = fps;
    }
    save_timeline(&a.out, &events)?;
    Ok(())
}

fn encode(ctx: &Ctx, a: EncodeArgs) -> CmdResult {
    if a.track.len() != a.events.len() {
        return Err(usage(format!(
            "{} --track files but {} --events files",
            a.track.len(),
            a.events.len()
        )));
    }
    let has_config = ctx.config_path.is_some();
    let mut enc: EncodingConfig = ctx.section("encoding", ctx.pipeline.encoding)?;
    override_with(has_config, "mode", &mut enc.mode, a.mode);
    override_with(has_config, "tmax", &mut enc.t_max, a.tmax);
    enc.validate()?;
    let poses = a
        .track
        .par_iter()
        .map(|p| load_track(p, None).map(|t| t.poses()))
        .collect::<posevent::Result<Vec<_>>>()?;
    let events = a
        .events
        .iter()
        .map(|p| load_timeline(p))
        .collect::<posevent::Result<Vec<_>>>()?;
    let set = assemble_multi_variant_dataset(&[poses], &events, &enc)?;
    if set.is_empty() {
        return Err(Failure::Domain(anyhow!(
            "no training windows: every track is shorter than s = {}",
            enc.s
        )));
    }
    save_dataset(&a.out, &set)?;
    info!("{} windows written to {}", set.len(), a.out.display());
    Ok(())
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> CmdResult {
    let has_config = ctx.config_path.is_some();
    let mut cfg: TrainConfig = ctx.section("train", ctx.pipeline.train)?;
    override_with(has_config, "epochs", &mut cfg.epochs, a.epochs);
    override_with(has_config, "batch-size", &mut cfg.batch_size, a.batch_size);
    override_with(has_config, "lr", &mut cfg.lr, a.lr);
    let mut seed = ctx.pipeline.seeds.train;
    override_with(has_config, "seed", &mut seed, a.seed);
    cfg.validate()?;
    let set = load_dataset(&a.data)?;
    let mut arch: Arch = ctx.section("arch", ctx.pipeline.arch)?;
    arch.keypoints = set.k;
    arch.validate()?;
    if arch.receptive_field() != set.s {
        return Err(usage(format!(
            "dataset windows have s = {} frames but the architecture's receptive field is {}",
            set.s,
            arch.receptive_field()
        )));
    }
    let outcome = train(&set, arch, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    for (e, l) in outcome.epoch_loss.iter().enumerate() {
        info!("epoch {e}: loss {l:.6}");
    }
    let encoding = EncodingConfig {
        mode: set.mode,
        t_max: set.t_max,
        s: set.s,
        ..ctx.section("encoding", ctx.pipeline.encoding)?
    };
    let model = Model { params: outcome.params, encoding };
    model.save(&a.out)?;
    println!("{}", model.params.checksum());
    Ok(())
}

fn infer(ctx: &Ctx, a: InferArgs) -> CmdResult {
    let mut model = Model::load(&a.model)?;
    let has_config = ctx.config_path.is_some();
    override_with(true, "mode", &mut model.encoding.mode, a.mode);
    let metrics: MetricSettings = ctx.section("metrics", ctx.pipeline.metrics.clone())?;
    let mut theta = metrics.theta.unwrap_or_else(|| default_theta(model.encoding.t_max));
    override_with(has_config, "theta", &mut theta, a.theta);
    let track = load_track(&a.track, Some(model.params.arch().keypoints))?;
    let poses = track.poses();
    let series = model.infer(&poses)?;
    let fps = match &a.gt {
        Some(p) => load_timeline(p)?.fps,
        None => 0.0,
    };
    let mut local = extract_events(&series, theta, metrics.rho_sup, fps);
    // Indices are relative to the track start; report absolute frames.
    let mut events = EventSet::new(fps);
    for tl in std::mem::take(&mut local.timelines).into_values() {
        let occ = tl.occurrences().iter().map(|t| t + track.t1).collect();
        events.insert(posevent::EventTimeline::new(tl.event_type, occ)?);
    }
    save_timeline(&a.out, &events)?;
    if let Some(p) = &a.dump_indicators {
        write_text(p, &indicators_csv(&series))?;
    }
    if let Some(p) = &a.plot {
        let gt = match &a.gt {
            Some(g) => Some(shift(&load_timeline(g)?, track.t1)?),
            None => None,
        };
        let title = a.track.display().to_string();
        write_text(p, &indicator_plot_svg(&series, &shift(&events, track.t1)?, gt.as_ref(), &title))?;
    }
    Ok(())
}

fn calibrate(ctx: &Ctx, a: CalibrateArgs) -> CmdResult {
    if a.track.len() != a.events.len() {
        return Err(usage(format!(
            "{} --track files but {} --events files",
            a.track.len(),
            a.events.len()
        )));
    }
    let model = Model::load(&a.model)?;
    let metrics: MetricSettings = ctx.section("metrics", ctx.pipeline.metrics.clone())?;
    let k = model.params.arch().keypoints;
    let labelled = a
        .track
        .par_iter()
        .zip(&a.events)
        .map(|(t, e)| -> posevent::Result<_> {
            let track = load_track(t, Some(k))?;
            let series = model.infer(&track.poses())?;
            Ok((series, shift(&load_timeline(e)?, track.t1)?))
        })
        .collect::<posevent::Result<Vec<_>>>()?;
    let (series, truth): (Vec<_>, Vec<_>) = labelled.into_iter().unzip();
    let theta = calibrate_theta(&series, &truth, &theta_grid(model.encoding.t_max), metrics.rho_sup, a.dt);
    println!("{theta}");
    Ok(())
}

/// Events relative to a track starting at `t1`, dropping earlier ones.
fn shift(events: &EventSet, t1: usize) -> posevent::Result<EventSet> {
    let mut out = EventSet::new(events.fps);
    for tl in events.timelines.values() {
        let occ = tl.occurrences().iter().filter(|&&t| t >= t1).map(|t| t - t1).collect();
        out.insert(posevent::EventTimeline::new(tl.event_type, occ)?);
    }
    Ok(out)
}

fn expand_json_inputs(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn eval_events(ctx: &Ctx, a: EvalEventsArgs) -> CmdResult {
    let has_config = ctx.config_path.is_some();
    let metrics: MetricSettings = ctx.section("metrics", ctx.pipeline.metrics.clone())?;
    let mut dts = metrics.dts.clone();
    if let Some(d) = a.dt {
        if has_config && d != dts {
            warn!("--dt {d:?} overrides the configured value {dts:?}");
        }
        dts = d;
    }
    if dts.is_empty() {
        return Err(usage("--dt needs at least one tolerance"));
    }
    let pred_paths = expand_json_inputs(&a.pred)?;
    let gt_paths = expand_json_inputs(&a.gt)?;
    if pred_paths.len() != gt_paths.len() {
        return Err(usage(format!(
            "{} prediction files but {} ground-truth files",
            pred_paths.len(),
            gt_paths.len()
        )));
    }
    let pred = pred_paths.iter().map(|p| load_timeline(p)).collect::<posevent::Result<Vec<_>>>()?;
    let gt = gt_paths.iter().map(|p| load_timeline(p)).collect::<posevent::Result<Vec<_>>>()?;
    let mut types: Vec<EventType> = gt.iter().flat_map(|g| g.timelines.keys().copied()).collect();
    types.sort();
    types.dedup();
    let report = evaluate_events(&pred, &gt, &types, &dts);
    let text = serde_json::to_string_pretty(&report).expect("serializable");
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn eval_pose(ctx: &Ctx, a: EvalPoseArgs) -> CmdResult {
    let has_config = ctx.config_path.is_some();
    let metrics: MetricSettings = ctx.section("metrics", ctx.pipeline.metrics.clone())?;
    let mut alphas = metrics.alphas.clone();
    if let Some(al) = a.alpha {
        if has_config && al != alphas {
            warn!("--alpha {al:?} overrides the configured value {alphas:?}");
        }
        alphas = al;
    }
    if alphas.iter().any(|x| !(*x > 0.0)) {
        return Err(usage("--alpha values must be positive"));
    }
    let pred = load_track(&a.pred, None)?;
    let gt = load_track(&a.gt, None)?;
    if pred.t1 != gt.t1 || pred.len() != gt.len() {
        return Err(Failure::Domain(anyhow!(
            "pose files cover different frames: [{}, {}] and [{}, {}]",
            pred.t1,
            pred.t2,
            gt.t1,
            gt.t2
        )));
    }
    let (pp, gp) = (pred.poses(), gt.poses());
    let rows: Vec<serde_json::Value> = alphas
        .iter()
        .map(|&alpha| serde_json::json!({ "alpha": alpha, "pck": pck(&pp, &gp, alpha) }))
        .collect();
    let text = serde_json::to_string_pretty(&serde_json::json!({ "entries": rows })).expect("serializable");
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn report(a: ReportArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.input)
        .map_err(|e| posevent::Error::Io { path: a.input.clone(), source: e })?;
    match a.format {
        ReportFormat::Json => {
            let value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", a.input.display()))?;
            write_text(&a.out, &serde_json::to_string_pretty(&value).expect("serializable"))?;
        }
        ReportFormat::Csv => {
            let value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", a.input.display()))?;
            write_text(&a.out, &json_to_csv(&value)?)?;
        }
        ReportFormat::Plot => {
            // The plot only needs t_max for scaling, which the CSV already encodes.
            let series = parse_indicators_csv(&text, 0)?;
            let pred = match &a.pred {
                Some(p) => load_timeline(p)?,
                None => EventSet::new(0.0),
            };
            let gt = match &a.gt {
                Some(p) => Some(load_timeline(p)?),
                None => None,
            };
            let title = a.title.unwrap_or_else(|| a.input.display().to_string());
            write_text(&a.out, &indicator_plot_svg(&series, &pred, gt.as_ref(), &title))?;
        }
    }
    Ok(())
}
