use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use aio_core::frontend::{compute_logspec, SpectrogramConfig, StemSpectrogram};
use aio_core::io::{
    decode_spectrogram, decode_utf8, decode_weights, encode_spectrogram, encode_weights, format_beat_annotation,
    format_segment_annotation, load_stem_dir, parse_beat_annotation, parse_config_file, parse_segment_annotation,
    read_wav_mono, serialize_result, write_atomic, MergeTable, ResultDocument,
};
use aio_core::metrics::{aggregate, evaluate_track, render_table, Annotation, EvalOptions, MetricsReport, Task};
use aio_core::model::{model_forward, model_grad_check, param_count, ModelConfig};
use aio_core::numerics::Tensor;
use aio_core::postproc::{analyze_activations, DbnConfig};
use aio_core::training::{history_jsonl, make_toy_dataset, stem_names, train, TrainConfig};
use clap::{Args, ValueEnum};
use rayon::prelude::*;

use crate::Failure;

/// Relative error at or above which `gradcheck` fails.
const GRADCHECK_LIMIT: f64 = 1e-4;

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Directory of per-stem WAV files, or an `.aio` spectrogram.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run on the mixture: `mix.wav` if the directory has one, else the
    /// stems summed.
    #[arg(long)]
    no_demix: bool,
    /// Keep per-frame activations in the result.
    #[arg(long)]
    activations: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Directory of `<id>.json` result documents.
    #[arg(long)]
    est: PathBuf,
    /// Directory of `<id>.beats` and `<id>.segments` annotations.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "beat,downbeat,segment,label")]
    tasks: Vec<String>,
    #[arg(long, value_enum, default_value = "table")]
    report: ReportFormat,
    /// Tracks scored at once; defaults to the thread pool size.
    #[arg(long)]
    jobs: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    tracks: usize,
    /// Seconds per track.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long)]
    out: PathBuf,
    /// Preset name or key=value file.
    #[arg(long, default_value = "tiny")]
    config: String,
    /// Override one model or training setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write the epoch history as JSON lines.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Write the synthetic tracks as `.aio`, `.beats` and `.segments` files.
    #[arg(long)]
    export: Option<PathBuf>,
    /// Print every epoch instead of every 25th.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "tiny")]
    config: String,
    /// Frames of the random input.
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

#[derive(Args)]
pub struct ParamsArgs {
    #[arg(long, default_value = "default")]
    config: String,
}

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> Failure {
    move |e| Failure::Data(format!("{context}: {e}"))
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(data(path.display()))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    let bytes = read(path)?;
    decode_utf8(&bytes).map(str::to_owned).map_err(data(path.display()))
}

/// Atomic write, creating missing parent directories.
fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(data(dir.display()))?;
    }
    write_atomic(path, bytes).map_err(data(path.display()))
}

/// A preset name, or a config file over the given training base.
fn resolve_config(spec: &str, train_base: TrainConfig) -> Result<(ModelConfig, TrainConfig), Failure> {
    if let Ok(cfg) = ModelConfig::preset(spec) {
        return Ok((cfg, train_base));
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(Failure::Usage(format!(
            "--config {spec:?} is neither a preset (default, small, tiny) nor a file"
        )));
    }
    parse_config_file(&read_text(path)?, &train_base).map_err(data(path.display()))
}

fn track_id(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "track".into())
}

/// The input as the spectrogram the model expects. Without demixing a
/// `mix.wav` fills the first stem and the others stay silent, so the
/// model's sum over stems is the mixture itself.
fn load_input(args: &AnalyzeArgs, cfg: &ModelConfig) -> Result<StemSpectrogram<f32>, Failure> {
    let input = &args.input;
    if input.is_file() {
        return decode_spectrogram(&read(input)?).map_err(data(input.display()));
    }
    if !input.is_dir() {
        return Err(Failure::Data(format!("{}: no such file or directory", input.display())));
    }
    let spec_cfg = SpectrogramConfig::default();
    let names = stem_names(cfg.num_stems);
    let mix = input.join("mix.wav");
    if args.no_demix && mix.is_file() {
        let (samples, rate) = read_wav_mono(&mix).map_err(data(mix.display()))?;
        if rate != spec_cfg.sample_rate {
            return Err(Failure::Data(format!(
                "{} is at {rate} Hz, expected {} Hz",
                mix.display(),
                spec_cfg.sample_rate
            )));
        }
        let logspec: Tensor<f32> = compute_logspec(&samples, &spec_cfg).map_err(data(mix.display()))?;
        let silent = Tensor::zeros(logspec.shape().to_vec());
        let named = names
            .into_iter()
            .enumerate()
            .map(|(i, n)| (n, if i == 0 { logspec.clone() } else { silent.clone() }))
            .collect();
        return StemSpectrogram::from_stems(named, spec_cfg.fps()).map_err(data(mix.display()));
    }
    load_stem_dir(input, &names, &spec_cfg).map_err(data(input.display()))
}

pub fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let mut weights = decode_weights::<f32>(&read(&args.weights)?).map_err(data(args.weights.display()))?;
    if args.no_demix {
        weights.config.use_demix = false;
    }
    let cfg = weights.config.clone();
    let spec = load_input(&args, &cfg)?;
    if let Some(w) = cfg.length_warning(spec.frames()) {
        eprintln!("warning: {w}");
    }
    let acts = model_forward(&spec, &weights)?;
    let result = analyze_activations(&acts, &cfg.labels, &DbnConfig::default())?;
    let json = serialize_result(&result, &track_id(&args.input), cfg.fps, args.activations.then_some(&acts))?;
    write(&args.out, json.as_bytes())
}

fn load_reference(dir: &Path, id: &str, duration: f64, tasks: &[Task]) -> Result<Annotation, Failure> {
    let needs = |t: &[Task]| tasks.iter().any(|x| t.contains(x));
    let beats = if needs(&[Task::Beat, Task::Downbeat]) {
        let path = dir.join(format!("{id}.beats"));
        parse_beat_annotation(&read_text(&path)?).map_err(data(path.display()))?
    } else {
        Vec::new()
    };
    let segments = if needs(&[Task::Segment, Task::Label]) {
        let path = dir.join(format!("{id}.segments"));
        parse_segment_annotation(&read_text(&path)?, duration, &MergeTable::builtin())
            .map_err(data(path.display()))?
    } else {
        parse_segment_annotation("", duration, &MergeTable::builtin())?
    };
    let ann = Annotation { beats, segments, duration };
    ann.validate().map_err(data(id))?;
    Ok(ann)
}

fn evaluate_one(path: &Path, reference: &Path, opts: &EvalOptions) -> Result<(String, MetricsReport), Failure> {
    let doc = ResultDocument::from_json(&read_text(path)?).map_err(data(path.display()))?;
    let id = track_id(path);
    let est = doc.to_result().map_err(data(path.display()))?;
    let ann = load_reference(reference, &id, est.duration, &opts.tasks)?;
    let rep = evaluate_track(&est, &ann, opts).map_err(data(&id))?;
    Ok((id, rep))
}

/// `{"mean": {...}, "tracks": {"<id>": {...}}}` with sorted keys.
fn json_report(mean: &MetricsReport, rows: &[(String, MetricsReport)]) -> String {
    let obj = |r: &MetricsReport| r.to_json().trim_end().to_string();
    let tracks: Vec<String> = rows
        .iter()
        .map(|(id, r)| format!("{}:{}", serde_json::Value::from(id.as_str()), obj(r)))
        .collect();
    format!("{{\"mean\":{},\"tracks\":{{{}}}}}\n", obj(mean), tracks.join(","))
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let mut tasks = args
        .tasks
        .iter()
        .map(|t| Task::parse(t).map_err(|e| Failure::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    tasks.sort();
    tasks.dedup();
    let opts = EvalOptions { tasks, ..EvalOptions::default() };
    let jobs = match args.jobs {
        Some(0) => return Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(j) => j.min(rayon::current_num_threads()),
        None => rayon::current_num_threads(),
    };
    for dir in [&args.est, &args.reference] {
        if !dir.is_dir() {
            return Err(Failure::Data(format!("{} is not a directory", dir.display())));
        }
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&args.est)
        .map_err(data(args.est.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Data(format!("no .json results in {}", args.est.display())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let rows = pool.install(|| {
        files
            .par_iter()
            .map(|f| evaluate_one(f, &args.reference, &opts))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| r.clone()).collect();
    let mean = aggregate(&reports);
    let text = match args.report {
        ReportFormat::Json => json_report(&mean, &rows),
        ReportFormat::Table => {
            let mut table_rows = rows;
            table_rows.push(("mean".into(), mean));
            render_table(&table_rows)
        }
    };
    match &args.out {
        Some(path) => write(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn train_toy(args: TrainToyArgs) -> Result<(), Failure> {
    if args.tracks == 0 {
        return Err(Failure::Usage("--tracks must be at least 1".into()));
    }
    let (mut model, mut cfg) = resolve_config(&args.config, TrainConfig::toy())?;
    cfg.seed = args.seed;
    for o in &args.overrides {
        let known = cfg.set(o).map_err(Failure::Usage)?;
        if !known {
            model.set(o).map_err(Failure::Usage)?;
        }
    }
    model.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;

    let tracks = make_toy_dataset::<f32>(args.seed, args.tracks, args.duration, &model)?;
    if let Some(dir) = &args.export {
        fs::create_dir_all(dir).map_err(data(dir.display()))?;
        for (i, t) in tracks.iter().enumerate() {
            let id = format!("toy{i:02}");
            write(&dir.join(format!("{id}.aio")), &encode_spectrogram(&t.spec)?)?;
            write(&dir.join(format!("{id}.beats")), format_beat_annotation(&t.annotation.beats).as_bytes())?;
            write(
                &dir.join(format!("{id}.segments")),
                format_segment_annotation(&t.annotation.segments).as_bytes(),
            )?;
        }
    }
    let pairs: Vec<_> = tracks.iter().map(|t| (t.spec.clone(), t.annotation.clone())).collect();
    let start = Instant::now();
    let every = if args.verbose { 1 } else { 25 };
    let outcome = train(&model, &cfg, &pairs, &pairs, &mut |r| {
        if r.epoch % every == 0 {
            eprintln!(
                "epoch {:>4}  train {:.4}  val {:.4}  lr {:.5}{}  {:.0}s",
                r.epoch,
                r.train_loss,
                r.val_loss,
                r.lr,
                if r.swa_active { "  swa" } else { "" },
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    eprintln!(
        "stopped after {} epochs ({:?}), {} averaged snapshots",
        outcome.history.len(),
        outcome.stop,
        outcome.swa_models
    );
    write(&args.out, &encode_weights(&outcome.weights)?)?;
    if let Some(path) = &args.history {
        write(path, history_jsonl(&outcome.history).as_bytes())?;
    }
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let (cfg, _) = resolve_config(&args.config, TrainConfig::default())?;
    if args.frames == 0 {
        return Err(Failure::Usage("--frames must be at least 1".into()));
    }
    let rep = model_grad_check(&cfg, args.frames, args.seed)?;
    println!(
        "max relative error {:.3e} over {} entries",
        rep.max_relative_error, rep.entries_checked
    );
    if rep.max_relative_error < GRADCHECK_LIMIT {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient check failed: limit is {GRADCHECK_LIMIT:e}")))
    }
}

pub fn params(args: ParamsArgs) -> Result<(), Failure> {
    let (cfg, _) = resolve_config(&args.config, TrainConfig::default())?;
    println!("{}", param_count(&cfg));
    Ok(())
}
