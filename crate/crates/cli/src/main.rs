use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::info;

use eegvtd::analysis::{self, ErpConfig};
use eegvtd::dataset::{build_dataset, build_training_set, DatasetConfig};
use eegvtd::format::{
    read_recording, read_schedule, write_recording, write_schedule, ScheduleMeta,
};
use eegvtd::metrics::{
    match_detections, per_class_f_beta, precision_recall, FBetaForm, MetricConfig,
    DEFAULT_MATCH_TOLERANCE,
};
use eegvtd::model::{
    calibrate, load_model, save_model, train, CalibrationConfig, HierarchicalModel, NetConfig,
    TrainConfig,
};
use eegvtd::stream::{
    infer_remote, read_detections, serve_replay, write_detection_row, write_detections,
    OnlineConfig, ReplayConfig,
};
use eegvtd::synth::{make_schedule, render_eeg, StimulusProfile, SynthConfig, VideoKind};
use eegvtd::{ClassId, EventSchedule, Recording};

/// Video-target detection from streamed EEG: synthesis, training, live
/// replay, online inference, evaluation and analysis.
#[derive(Debug, Parser)]
#[command(name = "eegvtd", version)]
struct Cli {
    /// key=value file supplying defaults for any flag; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic recording and its schedule.
    Generate(GenerateArgs),
    /// Train a model on one or more recordings.
    Train(TrainArgs),
    /// Fine-tune a model on calibration data.
    Calibrate(CalibrateArgs),
    /// Replay a recording over TCP in real time.
    Serve(ServeArgs),
    /// Receive a live stream and emit detections.
    InferOnline(InferArgs),
    /// Score detections against a schedule.
    Evaluate(EvaluateArgs),
    /// Grand-average ERPs per class.
    AnalyzeErp(ErpArgs),
    /// Channel importance by occlusion and input gradients.
    AnalyzeSaliency(SaliencyArgs),
    /// Run the built-in metric, gradient and protocol checks.
    Selftest,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// video1, video2n or video2ai.
    #[arg(long)]
    profile: VideoKind,
    /// Writes PREFIX.eegr and PREFIX.schedule.csv.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long)]
    events_per_class: Option<usize>,
    /// Multiplies every ERP amplitude.
    #[arg(long, default_value_t = 1.0)]
    erp_scale: f64,
    /// Rotation burst RMS in µV; the profile default when omitted.
    #[arg(long)]
    confound_amp: Option<f64>,
    #[arg(long)]
    background_sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training recording; repeat for several sessions.
    #[arg(long, required = true)]
    recording: Vec<PathBuf>,
    /// Schedule for each recording, in the same order.
    #[arg(long, required = true)]
    schedule: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0.0001)]
    weight_decay: f64,
    #[arg(long, default_value_t = 14)]
    nontarget_per_event: usize,
    /// Per-epoch mean loss as CSV.
    #[arg(long)]
    loss_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    recording: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr_scale: f64,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long)]
    loss_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    recording: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = 40.0)]
    chunk_ms: f64,
    /// Send as fast as the client reads.
    #[arg(long)]
    no_pacing: bool,
    /// Sessions to serve before exiting.
    #[arg(long, default_value_t = 1)]
    sessions: usize,
}

#[derive(Debug, Args)]
struct InferArgs {
    /// host:port of the replay server.
    #[arg(long)]
    connect: String,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    threshold: f64,
    #[arg(long, default_value_t = 25)]
    infer_stride: usize,
    #[arg(long, default_value_t = 3)]
    consecutive: usize,
    #[arg(long, default_value_t = 250)]
    refractory: usize,
    #[arg(long, default_value_t = 64)]
    queue_capacity: usize,
    /// Detections CSV, appended as they are emitted.
    #[arg(long)]
    emit: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    /// recall (default) or literal.
    #[arg(long, default_value = "recall")]
    fbeta_form: FBetaForm,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = DEFAULT_MATCH_TOLERANCE)]
    tolerance: usize,
}

#[derive(Debug, Args)]
struct ErpArgs {
    #[arg(long)]
    recording: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "Cz,C3,C4")]
    channels: Vec<String>,
    #[arg(long, default_value_t = 3.0)]
    horizon_s: f64,
    #[arg(long, default_value_t = 0.2)]
    baseline_s: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SaliencyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    recording: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the electrode layout table.
    #[arg(long)]
    layout_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
}

fn main() -> ExitCode {
    let cli = match parse_args(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            // clap errors carry their own formatting and exit codes
            if let Some(ce) = e.downcast_ref::<clap::Error>() {
                ce.exit();
            }
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    init_logging(&cli.log_level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format(|buf, record| {
            let component = record.target().rsplit("::").next().unwrap_or("eegvtd");
            writeln!(
                buf,
                "{} {} {} {}",
                record.level(),
                buf.timestamp_millis(),
                component,
                record.args()
            )
        })
        .try_init();
}

fn command() -> clap::Command {
    build_command(true)
}

/// With `enforce_required` off, flags the config file may supply are not
/// demanded yet.
fn build_command(enforce_required: bool) -> clap::Command {
    let mut cmd = Cli::command().args_override_self(true);
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    for name in names {
        cmd = cmd.mut_subcommand(name, |s| {
            let s = s.args_override_self(true);
            if enforce_required {
                s
            } else {
                s.mut_args(|a| a.required(false))
            }
        });
    }
    cmd
}

/// Parses argv, then re-parses with `--config` entries placed ahead of the
/// explicit flags so the latter override them.
fn parse_args(argv: Vec<OsString>) -> Result<Cli> {
    let matches = build_command(false).try_get_matches_from(&argv)?;
    let Some(path) = matches.get_one::<PathBuf>("config").cloned() else {
        let matches = command().try_get_matches_from(&argv)?;
        return Ok(Cli::from_arg_matches(&matches)?);
    };
    let (sub_name, sub_matches) = matches.subcommand().context("missing subcommand")?;
    let entries = read_config(&path)?;
    let cmd = command();
    let sub = cmd
        .find_subcommand(sub_name)
        .context("unknown subcommand")?;
    let known_anywhere = |key: &str| {
        cmd.get_arguments()
            .chain(cmd.get_subcommands().flat_map(|s| s.get_arguments()))
            .any(|a| a.get_long() == Some(key))
    };
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in &entries {
        if !known_anywhere(key) {
            bail!("{}: unknown key {key:?}", path.display());
        }
        if key == "config" {
            bail!("{}: nested config files are not supported", path.display());
        }
        let in_sub = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()));
        let (arg, scope) = match in_sub {
            Some(a) => (a, sub_matches),
            None => match cmd
                .get_arguments()
                .find(|a| a.get_long() == Some(key.as_str()))
            {
                Some(a) => (a, &matches),
                None => continue,
            },
        };
        let explicit = scope.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine);
        if explicit {
            continue;
        }
        if arg.get_action().takes_values() {
            for v in value.split(';') {
                injected.push(format!("--{key}={v}").into());
            }
        } else {
            match value.as_str() {
                "true" | "1" | "yes" => injected.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                other => bail!(
                    "{}: {key} expects true or false, got {other:?}",
                    path.display()
                ),
            }
        }
    }
    let pos = argv
        .iter()
        .position(|a| a == sub_name)
        .context("subcommand not found in arguments")?;
    let mut merged = argv[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&argv[pos + 1..]);
    let matches = command().try_get_matches_from(merged)?;
    Ok(Cli::from_arg_matches(&matches)?)
}

fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut out: Vec<(String, String)> = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected key=value", path.display(), i + 1))?;
        let key = k.trim().replace('_', "-");
        if seen.insert(key.clone(), i + 1).is_some() {
            bail!("{}:{}: duplicate key {key:?}", path.display(), i + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate(a) => generate(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Calibrate(a) => calibrate_cmd(a, seed),
        Command::Serve(a) => serve(a),
        Command::InferOnline(a) => infer_online(a),
        Command::Evaluate(a) => evaluate(a),
        Command::AnalyzeErp(a) => analyze_erp(a, seed),
        Command::AnalyzeSaliency(a) => analyze_saliency(a),
        Command::Selftest => selftest(seed),
    }
}

fn load_recording(path: &Path) -> Result<Recording> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_recording(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_schedule(path: &Path, rec: Option<&Recording>) -> Result<EventSchedule> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_schedule(BufReader::new(f), rec.map(ScheduleMeta::of))
        .with_context(|| format!("reading {}", path.display()))
}

fn load_model_file(path: &Path) -> Result<HierarchicalModel> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_model(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn generate(a: GenerateArgs, seed: u64) -> Result<()> {
    let mut profile = StimulusProfile::for_kind(a.profile);
    if let Some(n) = a.events_per_class {
        profile.events_per_class = n;
    }
    let mut cfg = SynthConfig::for_profile(&profile).with_erp_scale(a.erp_scale);
    cfg.seed = seed;
    if let Some(c) = a.confound_amp {
        cfg.confound_amp = c;
    }
    if let Some(s) = a.background_sigma {
        cfg.background_sigma = s;
    }
    let schedule = make_schedule(&profile, seed)?;
    let rec = render_eeg(&schedule, &cfg)?;
    let rec_path = with_suffix(&a.out_prefix, ".eegr");
    let sched_path = with_suffix(&a.out_prefix, ".schedule.csv");
    let mut w = create(&rec_path)?;
    write_recording(&rec, &mut w)?;
    w.flush()?;
    let mut w = create(&sched_path)?;
    write_schedule(&schedule, &mut w)?;
    w.flush()?;
    info!(
        "{}: {} channels x {} samples, {} targets, {} dynamics events",
        a.profile,
        rec.n_channels(),
        rec.n_samples(),
        schedule.targets().len(),
        schedule.dynamics().len()
    );
    println!("{}\n{}", rec_path.display(), sched_path.display());
    Ok(())
}

fn write_trace(path: &Option<PathBuf>, report: &eegvtd::model::TrainReport) -> Result<()> {
    if let Some(p) = path {
        let mut w = create(p)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, seed: u64) -> Result<()> {
    ensure!(
        a.recording.len() == a.schedule.len(),
        "{} recordings but {} schedules",
        a.recording.len(),
        a.schedule.len()
    );
    let train_cfg = TrainConfig {
        batch_size: a.batch_size,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        seed,
        ..TrainConfig::default()
    };
    train_cfg.validate()?;
    let mut sessions = Vec::new();
    for (r, s) in a.recording.iter().zip(&a.schedule) {
        let rec = load_recording(r)?;
        let sched = load_schedule(s, Some(&rec))?;
        sessions.push((rec, sched));
    }
    let n_channels = sessions[0].0.n_channels();
    ensure!(
        sessions.iter().all(|(r, _)| r.n_channels() == n_channels),
        "recordings differ in channel count"
    );
    let ds_cfg = DatasetConfig {
        nontarget_per_event: a.nontarget_per_event,
        ..DatasetConfig::default()
    };
    let data = build_training_set(&sessions, &ds_cfg, seed)?;
    info!(
        "training on {} epochs from {} sessions",
        data.len(),
        sessions.len()
    );
    let model = HierarchicalModel::new(
        NetConfig {
            n_channels,
            ..NetConfig::default()
        },
        seed,
    )?;
    let (model, report) = train(&model, &data, &train_cfg)?;
    if let Some(last) = report.loss_trace.last() {
        info!("final mean loss {last:.5}");
    }
    let mut w = create(&a.out)?;
    save_model(&model, &mut w)?;
    w.flush()?;
    write_trace(&a.loss_trace, &report)?;
    println!("{}", a.out.display());
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs, seed: u64) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let rec = load_recording(&a.recording)?;
    let sched = load_schedule(&a.schedule, Some(&rec))?;
    let data = build_training_set(&[(rec, sched)], &DatasetConfig::default(), seed)?;
    let cfg = CalibrationConfig {
        base: TrainConfig {
            learning_rate: a.lr,
            batch_size: a.batch_size,
            seed,
            ..TrainConfig::default()
        },
        lr_scale: a.lr_scale,
        epochs: a.epochs,
    };
    let (model, report) = calibrate(&model, &data, &cfg)?;
    info!(
        "calibrated on {} epochs for {} passes",
        data.len(),
        report.loss_trace.len()
    );
    let mut w = create(&a.out)?;
    save_model(&model, &mut w)?;
    w.flush()?;
    write_trace(&a.loss_trace, &report)?;
    println!("{}", a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    ensure!(a.sessions >= 1, "--sessions must be at least 1");
    let rec = load_recording(&a.recording)?;
    let sched = load_schedule(&a.schedule, Some(&rec))?;
    let cfg = ReplayConfig {
        chunk_ms: a.chunk_ms,
        speed: if a.no_pacing { None } else { Some(a.speed) },
    };
    cfg.frames_per_chunk(rec.sampling_rate())?;
    let listener = TcpListener::bind((a.host.as_str(), a.port))
        .with_context(|| format!("binding {}:{}", a.host, a.port))?;
    info!("listening on {}", listener.local_addr()?);
    for _ in 0..a.sessions {
        serve_replay(&rec, &sched, &cfg, &listener)?;
    }
    Ok(())
}

fn infer_online(a: InferArgs) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let cfg = OnlineConfig {
        infer_stride: a.infer_stride,
        trigger_threshold: a.threshold,
        consecutive_required: a.consecutive,
        refractory: a.refractory,
    };
    cfg.validate()?;
    let mut sink = match &a.emit {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "time,class,confidence")?;
            w.flush()?;
            Some(w)
        }
        None => None,
    };
    let (dets, summary) = infer_remote(a.connect.as_str(), &model, cfg, a.queue_capacity, |d| {
        info!(
            "detection at sample {} class {} confidence {:.3}",
            d.time, d.class_id, d.confidence
        );
        if let Some(w) = sink.as_mut() {
            write_detection_row(d, &mut *w)?;
            w.flush()?;
        }
        Ok(())
    })?;
    info!(
        "session: {} frames, {} blocks, {} gaps, {} markers in {:.2?}",
        summary.frames,
        summary.blocks,
        summary.gaps,
        summary.markers.len(),
        summary.elapsed
    );
    if sink.is_none() {
        write_detections(&dets, std::io::stdout().lock())?;
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    ensure!(a.beta > 0.0, "--beta must be positive");
    let f =
        File::open(&a.detections).with_context(|| format!("opening {}", a.detections.display()))?;
    let mut dets = read_detections(BufReader::new(f))?;
    dets.sort_by_key(|d| d.time);
    let sched = load_schedule(&a.schedule, None)?;
    let m = match_detections(&dets, &sched, a.tolerance)?;
    let cfg = MetricConfig {
        beta: a.beta,
        form: a.fbeta_form,
    };
    let f = per_class_f_beta(&m.cm, &cfg);
    println!("confusion (rows true, cols predicted):\n{}", m.cm);
    println!("class,precision,recall,f_beta");
    for c in ClassId::ALL {
        let (p, r) = precision_recall(&m.cm, c);
        println!("{c},{p:.6},{r:.6},{:.6}", f[c.index()]);
    }
    println!("macro_f_beta,{:.6}", f.iter().sum::<f64>() / 3.0);
    Ok(())
}

fn analyze_erp(a: ErpArgs, seed: u64) -> Result<()> {
    let rec = load_recording(&a.recording)?;
    let sched = load_schedule(&a.schedule, Some(&rec))?;
    let channels: Vec<&str> = a.channels.iter().map(String::as_str).collect();
    let cfg = ErpConfig {
        horizon_s: a.horizon_s,
        baseline_s: a.baseline_s,
        nontarget_trials: None,
        seed,
    };
    let erp = analysis::grand_average_erp(&rec, &sched, &channels, &cfg)?;
    for note in &erp.notes {
        log::warn!("{note}");
    }
    for c in &erp.classes {
        info!("{}: {} trials", c.class, c.n_trials);
    }
    let mut w = create(&a.out)?;
    analysis::write_erp_csv(&erp, &mut w)?;
    w.flush()?;
    println!("{}", a.out.display());
    Ok(())
}

fn analyze_saliency(a: SaliencyArgs) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let rec = load_recording(&a.recording)?;
    let sched = load_schedule(&a.schedule, Some(&rec))?;
    ensure!(
        rec.n_channels() == model.config().n_channels,
        "recording has {} channels, model expects {}",
        rec.n_channels(),
        model.config().n_channels
    );
    let epochs = build_dataset(&rec, &sched, &DatasetConfig::default(), 0)?;
    let cfg = MetricConfig {
        beta: a.beta,
        ..MetricConfig::default()
    };
    let occ = analysis::occlusion_saliency(&model, &epochs, &cfg)?;
    let grad = analysis::gradient_saliency(&model, &epochs)?;
    info!(
        "baseline window-level macro F_beta {:.4} over {} epochs",
        occ.baseline,
        epochs.len()
    );
    let mut w = create(&a.out)?;
    analysis::write_saliency_csv(rec.channel_names(), &occ.importance, &grad, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.layout_out {
        let mut w = create(p)?;
        analysis::write_layout_csv(&mut w)?;
        w.flush()?;
    }
    println!("{}", a.out.display());
    Ok(())
}

fn selftest(seed: u64) -> Result<()> {
    let results = eegvtd::selftest::run_all(seed);
    for r in &results {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    ensure!(failed == 0, "{failed} self-test check(s) failed");
    Ok(())
}
