use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchorseg::cues::CueSet;
use anchorseg::diffusion::LossTerms;
use anchorseg::eval::{otsu_binarize, overlay, MetricsReport};
use anchorseg::frame::VideoSequence;
use anchorseg::io::{self, png, DatasetLayout, MaskFiles, PipelineConfig, SyntheticSceneSpec};
use anchorseg::map::GroundTruthMask;
use anchorseg::nn::{Checkpoint, FeatureExtractor};
use anchorseg::pipeline::{self, FoldModel, Workspace, CUE_GRID};
use anchorseg::training::{ExperimentSetting, SupervisionMode, TrainConfig};
use anchorseg::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "anchorseg", version, about = "Unsupervised surgical instrument segmentation")]
struct Cli {
    #[command(flatten)]
    global: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_setting)]
    setting: Option<ExperimentSetting>,
    /// Percentage of frames with ground-truth anchors: 0, 50 or 100.
    #[arg(long, global = true, value_parser = parse_supervision)]
    supervision: Option<SupervisionMode>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

fn parse_setting(s: &str) -> std::result::Result<ExperimentSetting, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_supervision(s: &str) -> std::result::Result<SupervisionMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum Grid {
    Loss,
    Cues,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Compute (or reuse cached) cue maps for the dataset.
    Cues,
    /// Fuse cues into anchors and export them as 16-bit maps.
    Anchors,
    /// Train a network per split and write checkpoints and the training log.
    Train,
    /// Write probability maps and Otsu masks for every frame.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Score trained checkpoints against ground truth.
    Eval {
        /// A single checkpoint; defaults to those written by `train` in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Generate the synthetic benchmark in the dataset layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        videos: usize,
        /// Scene parameters (TOML); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Run the loss-combination and/or cue-combination grids.
    Ablate {
        #[arg(long, value_enum, default_value_t = Grid::Both)]
        grid: Grid,
    },
}

/// Exclusive ownership of an output directory for the lifetime of a run.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(_) => Err(Error::InvalidArgument(format!(
                "{} is in use by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut c = match &o.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = o.seed {
        c.seed = s;
    }
    if let Some(s) = o.setting {
        c.train.setting = s;
    }
    if let Some(s) = o.supervision {
        c.train.supervision = s;
    }
    if let Some(p) = &o.output {
        c.output = p.clone();
    }
    c.validate()?;
    Ok(c)
}

struct Loaded {
    layout: DatasetLayout,
    videos: Vec<VideoSequence>,
}

fn load(c: &PipelineConfig) -> Result<Loaded> {
    let layout = DatasetLayout::new(&c.dataset);
    let videos = io::load_dataset(&layout, Some(c.resolution))?;
    log::info!("loaded {} videos from {}", videos.len(), c.dataset.display());
    Ok(Loaded { layout, videos })
}

fn cues(c: &PipelineConfig, videos: &[VideoSequence]) -> Result<Vec<Vec<CueSet>>> {
    let provider = c.cues.objectness.build();
    let (sets, _, stats) = io::cache_cues(videos, provider.as_ref(), c.cues.location, &c.cache_dir())?;
    log::info!("cue cache: {} hits, {} recomputed", stats.hits, stats.recomputed);
    Ok(sets)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn checkpoint_name(fold: Option<usize>) -> String {
    match fold {
        Some(f) => format!("fold{f}.safetensors"),
        None => "model.safetensors".into(),
    }
}

fn snapshot(train: &TrainConfig, model: &FoldModel, ids: &[String]) -> serde_json::Value {
    serde_json::json!({
        "train": train,
        "fold": model.fold,
        "train_videos": model.train_videos.iter().map(|v| &ids[*v]).collect::<Vec<_>>(),
        "test_videos": model.test_videos.iter().map(|v| &ids[*v]).collect::<Vec<_>>(),
    })
}

fn cmd_train(c: &PipelineConfig) -> Result<()> {
    let _lock = OutputLock::acquire(&c.output)?;
    c.save(&c.output.join("config.toml"))?;
    let data = load(c)?;
    let sets = cues(c, &data.videos)?;
    let backbone = c.backbone.build()?;
    let ws = Workspace::new(&data.videos, &sets, &backbone)?;
    let masks = MaskFiles::new(data.layout.clone(), Some(c.resolution));
    let train = c.train_config();
    let anchors = ws.anchors(&train, Some(&masks))?;
    let log_path = c.output.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let models = pipeline::train_models(&train, &ws, &anchors, Some(&mut log))?;
    log.flush().map_err(io_err(&log_path))?;
    let ids = ws.video_ids();
    for m in &models {
        let path = c.output.join(checkpoint_name(m.fold));
        Checkpoint::new(m.network.clone(), snapshot(&train, m, &ids)).save(&path)?;
        println!("wrote {}", path.display());
    }
    println!("mask files read during training: {}", masks.reads());
    Ok(())
}

/// Video ids a checkpoint is evaluated on; all videos when unrecorded.
fn test_videos(ck: &Checkpoint, ids: &[String]) -> Vec<usize> {
    match ck.config.get("test_videos").and_then(|v| v.as_array()) {
        Some(list) => list
            .iter()
            .filter_map(|v| v.as_str())
            .filter_map(|name| ids.iter().position(|i| i == name))
            .collect(),
        None => (0..ids.len()).collect(),
    }
}

fn find_checkpoints(c: &PipelineConfig, explicit: Option<&Path>) -> Result<Vec<PathBuf>> {
    if let Some(p) = explicit {
        if !p.is_file() {
            return Err(Error::Checkpoint(format!("no checkpoint at {}", p.display())));
        }
        return Ok(vec![p.to_path_buf()]);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(&c.output)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("safetensors"))
                .collect()
        })
        .unwrap_or_default();
    found.sort();
    if found.is_empty() {
        return Err(Error::Checkpoint(format!(
            "no checkpoint found in {}; run `train` first or pass --checkpoint",
            c.output.display()
        )));
    }
    Ok(found)
}

fn cmd_eval(c: &PipelineConfig, checkpoint: Option<&Path>) -> Result<()> {
    let paths = find_checkpoints(c, checkpoint)?;
    let _lock = OutputLock::acquire(&c.output)?;
    let data = load(c)?;
    let masks = MaskFiles::new(data.layout.clone(), Some(c.resolution));
    let gts = masks.load_all(&data.videos)?;
    let sets = cues(c, &data.videos)?;
    let backbone = c.backbone.build()?;
    let ws = Workspace::new(&data.videos, &sets, &backbone)?;
    let ids = ws.video_ids();
    let train = c.train_config();
    let mut models = Vec::new();
    for p in &paths {
        let ck = Checkpoint::load(p)?;
        let fold = ck.config.get("fold").and_then(|f| f.as_u64()).map(|f| f as usize);
        models.push(FoldModel {
            fold,
            test_videos: test_videos(&ck, &ids),
            train_videos: Vec::new(),
            network: ck.network,
            records: Vec::new(),
        });
    }
    let (report, per_fold) = pipeline::evaluate_models(&train, &ws, &models, &gts)?;
    let dir = c.output.join("eval");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    report.write_json(&dir.join("report.json"))?;
    report.write_jsonl(&dir.join("frames.jsonl"))?;
    let mut table = report.to_table();
    if per_fold.len() > 1 {
        table.push_str("\n\nPer fold:\n");
        table.push_str(&MetricsReport::table_header("Fold"));
        for r in &per_fold {
            table.push('\n');
            table.push_str(&r.table_row(&r.labels.fold.map_or("-".into(), |f| f.to_string())));
        }
    }
    if c.eval.score_anchors {
        let anchors = ws.anchors(&train, Some(&masks))?;
        for source in [anchorseg::eval::ScoreSource::PositiveAnchor, anchorseg::eval::ScoreSource::NegativeAnchorComplement] {
            let r = pipeline::score_anchors(&train, &ws, &anchors, source, &gts)?;
            table.push('\n');
            table.push_str(&r.table_row(source.name()));
        }
    }
    write_text(&dir.join("table.md"), &table)?;
    if c.eval.overlays {
        for m in &models {
            for &v in &m.test_videos {
                for (frame, prepared) in data.videos[v].frames().iter().zip(&ws.prepared[v].frames) {
                    let p = m.network.forward(&prepared.input)?;
                    let (mask, _) = otsu_binarize(&p)?;
                    let img = overlay(&frame.rgb, &mask, gts.get(&frame.label()))?;
                    png::save_rgb(&dir.join("overlays").join(&frame.video_id).join(format!("{}.png", frame.stem)), &img)?;
                }
            }
        }
    }
    println!("{table}");
    Ok(())
}

fn cmd_infer(c: &PipelineConfig, checkpoint: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let _lock = OutputLock::acquire(&c.output)?;
    let data = load(c)?;
    let dir = c.output.join("predictions");
    for video in &data.videos {
        for frame in video.frames() {
            let p = ck.network.predict(frame)?;
            let (mask, _) = otsu_binarize(&p)?;
            let base = dir.join(&frame.video_id);
            png::save_prob_map(&base.join(format!("{}.prob.png", frame.stem)), &p)?;
            png::save_mask(&base.join(format!("{}.mask.png", frame.stem)), &mask)?;
        }
    }
    println!("wrote predictions to {}", dir.display());
    Ok(())
}

fn cmd_cues(c: &PipelineConfig) -> Result<()> {
    let data = load(c)?;
    let provider = c.cues.objectness.build();
    let dir = c.cache_dir();
    let (_, manifest, stats) = io::cache_cues(&data.videos, provider.as_ref(), c.cues.location, &dir)?;
    println!(
        "{} frames cached in {} ({} hits, {} recomputed, {} hash mismatches)",
        manifest.frames.len(),
        dir.display(),
        stats.hits,
        stats.recomputed,
        stats.hash_mismatches
    );
    Ok(())
}

fn cmd_anchors(c: &PipelineConfig) -> Result<()> {
    let _lock = OutputLock::acquire(&c.output)?;
    let data = load(c)?;
    let sets = cues(c, &data.videos)?;
    let masks = MaskFiles::new(data.layout.clone(), Some(c.resolution));
    let train = c.train_config();
    let dir = c.output.join("anchors");
    for (video, cue_sets) in data.videos.iter().zip(&sets) {
        let anchors = anchorseg::training::prepare_anchors(video, cue_sets, &train.cues, train.supervision, Some(&masks))?;
        for (frame, a) in video.frames().iter().zip(&anchors) {
            let base = dir.join(&frame.video_id);
            png::save_prob_map(&base.join(format!("{}.pos.png", frame.stem)), a.positive())?;
            png::save_prob_map(&base.join(format!("{}.neg.png", frame.stem)), a.negative())?;
        }
    }
    println!("wrote anchors to {}", dir.display());
    Ok(())
}

fn cmd_synth(c: &PipelineConfig, out: &Path, videos: usize, spec: Option<&Path>, frames: Option<usize>) -> Result<()> {
    let mut base = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            toml::from_str::<SyntheticSceneSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSceneSpec::default(),
    };
    base.seed = c.seed;
    if let Some(t) = frames {
        base.frames = t;
    }
    let layout = DatasetLayout::new(out);
    for (video, masks) in io::generate_benchmark(&base, videos)? {
        io::write_video(&layout, &video, Some(&masks))?;
    }
    let spec_text = toml::to_string_pretty(&base).expect("spec serializes");
    write_text(&out.join("synthetic_spec.toml"), &spec_text)?;
    println!("wrote {videos} synthetic videos to {}", out.display());
    Ok(())
}

fn cmd_ablate(c: &PipelineConfig, grid: Grid) -> Result<()> {
    let _lock = OutputLock::acquire(&c.output)?;
    let data = load(c)?;
    let masks = MaskFiles::new(data.layout.clone(), Some(c.resolution));
    let gts: BTreeMap<String, GroundTruthMask> = masks.load_all(&data.videos)?;
    let sets = cues(c, &data.videos)?;
    let backbone = c.backbone.build()?;
    log::info!("backbone {} (D={})", backbone.name(), backbone.channels());
    let ws = Workspace::new(&data.videos, &sets, &backbone)?;
    let train = c.train_config();
    let mut text = String::new();
    if matches!(grid, Grid::Loss | Grid::Both) {
        let rows = pipeline::loss_ablation(&train, &ws, Some(&masks), &gts, &LossTerms::ABLATION_GRID)?;
        text.push_str(&format!("Loss combinations ({}, {} supervision)\n\n", train.setting, train.supervision));
        text.push_str(&pipeline::loss_table(&rows));
    }
    if matches!(grid, Grid::Cues | Grid::Both) {
        let rows = pipeline::cue_ablation(&train, &ws, Some(&masks), &gts, &CUE_GRID)?;
        text.push_str(&format!("\nCue combinations ({})\n\n", train.setting));
        text.push_str(&pipeline::cue_table(&rows));
    }
    write_text(&c.output.join("ablation.md"), &text)?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let c = load_config(&cli.global)?;
    match cli.command {
        Command::Cues => cmd_cues(&c),
        Command::Anchors => cmd_anchors(&c),
        Command::Train => cmd_train(&c),
        Command::Infer { checkpoint } => cmd_infer(&c, &checkpoint),
        Command::Eval { checkpoint } => cmd_eval(&c, checkpoint.as_deref()),
        Command::Synth { out, videos, spec, frames } => cmd_synth(&c, &out, videos, spec.as_deref(), frames),
        Command::Ablate { grid } => cmd_ablate(&c, grid),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
