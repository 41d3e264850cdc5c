//! `mirage`: simulate rooms, build datasets, train the echo regressor,
//! evaluate it against GCC-PHAT and localize recordings.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors
//! (bad flags, malformed JSON, invalid inputs).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mirage_core::aggregate;
use mirage_core::baseline;
use mirage_core::dataset::{self, Condition, Dataset, GenerationConfig, SourceSpec};
use mirage_core::dsp::{self, WavFormat};
use mirage_core::eval;
use mirage_core::geometry::aoa_from_tdoa;
use mirage_core::model::{self, Model, TrainConfig};
use mirage_core::roomsim::{self, MicIndex};
use mirage_core::{Constants, Error, FaceId, MicPair, RoomBox, SceneSpec, VirtualArray};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "mirage", version, about = "Echo-aware two-microphone sound source localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scene and write both RIRs plus the scene description.
    Simulate(SimulateArgs),
    /// Generate a training dataset of (feature, echo-time) records.
    Dataset(DatasetArgs),
    /// Generate the test conditions (wn, wn+n, sp, sp+n) over shared scenes.
    Testset(TestsetArgs),
    /// Train the echo-time regressor on a dataset file.
    Train(TrainArgs),
    /// Evaluate a model on test files and write report.md / report.csv.
    Evaluate(EvaluateArgs),
    /// Estimate azimuth and elevation from a two-channel recording.
    Localize(LocalizeArgs),
    /// GCC-PHAT TDOA and angle of arrival for a two-channel recording.
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct Common {
    /// Master seed for all randomness.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Maximum number of worker threads (default: all cores).
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Scene JSON to simulate instead of drawing one from --seed.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Image order (default: derived from the Sabine RT60).
    #[arg(long)]
    max_order: Option<usize>,
}

#[derive(Args)]
struct DatasetArgs {
    #[command(flatten)]
    common: Common,
    /// Output dataset file; sidecars are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes to draw (default 10000, or 90000 with --full-scale).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    full_scale: bool,
    /// Additive noise SNR in dB, or "inf" for none.
    #[arg(long, value_parser = parse_snr)]
    snr: Option<f64>,
    /// Use WAV files from this directory as sources instead of white noise.
    #[arg(long)]
    wav_dir: Option<PathBuf>,
    /// Replace pruned scenes with further draws until exactly n records exist.
    #[arg(long)]
    exact_n: bool,
}

#[derive(Args)]
struct TestsetArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory for <condition>.mird files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = dataset::DEFAULT_TEST_SCENES)]
    n: usize,
    /// Speech WAV directory; required for the sp conditions.
    #[arg(long)]
    wav_dir: Option<PathBuf>,
    /// Comma-separated conditions (default: wn,wn+n plus sp,sp+n when --wav-dir is given).
    #[arg(long, value_delimiter = ',')]
    conditions: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// Test files; the condition name is the file stem.
    #[arg(long, required = true, num_args = 1..)]
    test: Vec<PathBuf>,
    /// Also evaluate GCC-PHAT on the identical audio.
    #[arg(long)]
    baseline: bool,
    /// Directory for report.md and report.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    mic1: PathBuf,
    #[arg(long)]
    mic2: PathBuf,
    /// JSON with room, close_face and mics (a scene file works too).
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Write the angular spectrum as CSV (azimuth, elevation, psi).
    #[arg(long)]
    spectrum: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    mic1: PathBuf,
    #[arg(long)]
    mic2: PathBuf,
    /// Optional geometry JSON for the speed of sound and spacing.
    #[arg(long)]
    geometry: Option<PathBuf>,
}

/// Array geometry needed for localization.
#[derive(Deserialize)]
struct Geometry {
    room: RoomBox,
    close_face: FaceId,
    mics: MicPair,
    #[serde(default)]
    constants: Constants,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::Json(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn parse_snr(s: &str) -> Result<f64, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("expected dB value or \"inf\", got {s:?}"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> CliResult {
    let scene: SceneSpec = match &a.scene {
        Some(p) => read_json(p)?,
        None => roomsim::sample_scene(a.common.seed)?,
    };
    scene.validate()?;
    let v = scene.echo_times()?;
    let order = a.max_order.unwrap_or_else(|| roomsim::default_max_order(&scene));
    let r1 = roomsim::simulate_rir(&scene, MicIndex::First, order)?;
    let r2 = roomsim::simulate_rir(&scene, MicIndex::Second, order)?;
    fs::create_dir_all(&a.out)?;
    for (name, rir) in [("rir_mic1.wav", &r1), ("rir_mic2.wav", &r2)] {
        let sig = dsp::Signal::new(rir.samples.clone(), rir.fs);
        dsp::write_wav(&a.out.join(name), &sig, WavFormat::Float32)?;
    }
    fs::write(a.out.join("scene.json"), serde_json::to_string_pretty(&scene).map_err(Error::from)? + "\n")?;
    println!("TDOA {:.9e}", v.tdoa);
    println!("iTDOA {:.9e}", v.itdoa);
    println!("TDOE {:.9e}", v.tdoe);
    println!("direct_delay {:.9e}", r1.meta.direct_delay);
    println!("first_echo_delay {:.9e}", r1.meta.first_echo_delay);
    println!("rt60_sabine {:.6}", roomsim::rt60_sabine(&scene)?);
    Ok(())
}

fn make_dataset(a: DatasetArgs) -> CliResult {
    let n = a.n.unwrap_or(if a.full_scale { dataset::FULL_SCALE_TRAIN_SCENES } else { dataset::DEFAULT_TRAIN_SCENES });
    let source = match &a.wav_dir {
        Some(dir) => SourceSpec::Speech { files: dataset::list_wavs(dir)? },
        None => SourceSpec::WhiteNoise { seconds: dataset::WHITE_NOISE_SECONDS },
    };
    let cfg = GenerationConfig {
        source,
        snr_db: a.snr.filter(|s| s.is_finite()),
        exact_n: a.exact_n,
        ..GenerationConfig::white(a.common.seed, n)
    };
    let ds = dataset::generate_dataset_with_progress(&cfg, a.common.parallelism, |done, kept| {
        log::info!("{done} scenes drawn, {kept} kept");
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    ds.save(&a.out)?;
    print_stats(&a.out, &ds.stats);
    Ok(())
}

fn print_stats(path: &Path, s: &dataset::DatasetStats) {
    println!(
        "{}: {} records ({} drawn, {} pruned, {} failed, prune rate {:.4})",
        path.display(),
        s.kept,
        s.attempted,
        s.pruned,
        s.failed,
        s.prune_rate
    );
    if let Some(r) = &s.rt60 {
        println!(
            "rt60 min {:.3} median {:.3} mean {:.3} max {:.3} s; {:.1}% in [0.02, 0.30] s",
            r.min,
            r.median,
            r.mean,
            r.max,
            100.0 * r.fraction_in_range
        );
    }
}

fn testset(a: TestsetArgs) -> CliResult {
    let conditions = if a.conditions.is_empty() {
        let mut c = vec![Condition::WhiteNoise, Condition::WhiteNoiseNoisy];
        if a.wav_dir.is_some() {
            c.extend([Condition::Speech, Condition::SpeechNoisy]);
        }
        c
    } else {
        a.conditions.iter().map(|s| Condition::parse(s)).collect::<Result<_, _>>()?
    };
    let written =
        dataset::generate_testset(a.n, a.common.seed, &conditions, a.wav_dir.as_deref(), &a.out, a.common.parallelism)?;
    for (_, path, stats) in &written {
        print_stats(path, stats);
    }
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let ds = Dataset::load(&a.data)?;
    let (tr, va) = dataset::train_val_split(ds.len(), a.common.seed)?;
    let config = TrainConfig {
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        dropout: a.dropout,
        patience: a.patience,
        learning_rate: a.lr,
        seed: a.common.seed,
        ..TrainConfig::default()
    };
    log::info!("training on {} records, validating on {}", tr.len(), va.len());
    let outcome = model::train_with_progress(&ds.samples(&tr), &ds.samples(&va), &config, |r| {
        println!(
            "epoch {:>3} train_loss {:.6} val_nrmse {:.4} {:.4} {:.4}",
            r.epoch + 1,
            r.train_loss,
            r.val_nrmse[0],
            r.val_nrmse[1],
            r.val_nrmse[2]
        );
    })?;
    let m = &outcome.model;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    m.save(&a.out)?;
    println!(
        "best epoch {} val_nrmse tdoa {:.4} itdoa {:.4} tdoe {:.4}",
        outcome.best_epoch + 1,
        m.val_nrmse[0],
        m.val_nrmse[1],
        m.val_nrmse[2]
    );
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> CliResult {
    let model = Model::load(&a.model)?;
    let tests: Vec<(String, &Path)> = a
        .test
        .iter()
        .map(|p| (p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(), p.as_path()))
        .collect();
    let report = dataset::with_workers(a.common.parallelism, || eval::evaluate(&model, &tests, a.baseline))??;
    report.save(&a.out)?;
    print!("{}", report.to_markdown());
    Ok(())
}

fn load_pair(mic1: &Path, mic2: &Path) -> Result<(dsp::Signal, dsp::Signal), Failure> {
    let s1 = dsp::read_wav(mic1)?;
    let s2 = dsp::read_wav(mic2)?;
    if s1.fs != s2.fs || s1.len() != s2.len() {
        return Err(Failure::Usage("the two recordings differ in sample rate or length".into()));
    }
    Ok((s1, s2))
}

fn localize(a: LocalizeArgs) -> CliResult {
    let g: Geometry = read_json(&a.geometry)?;
    g.constants.validate()?;
    let va = VirtualArray::new(&g.mics, &g.room, g.close_face)?;
    let model = Model::load(&a.model)?;
    let (s1, s2) = load_pair(&a.mic1, &a.mic2)?;
    if s1.fs != g.constants.fs {
        return Err(Failure::Usage(format!("recordings are at {} Hz, geometry expects {}", s1.fs, g.constants.fs)));
    }
    let (doa, map, v) = dataset::with_workers(a.common.parallelism, || {
        aggregate::localize(&s1, &s2, &model, &va, &g.constants)
    })??;
    log::info!("echo times: tdoa {:.4e} itdoa {:.4e} tdoe {:.4e}", v.tdoa, v.itdoa, v.tdoe);
    if let Some(path) = &a.spectrum {
        map.save_csv(path)?;
    }
    println!("{} {}", doa.azimuth, doa.elevation);
    Ok(())
}

fn run_baseline(a: BaselineArgs) -> CliResult {
    let k = match &a.geometry {
        Some(p) => read_json::<Geometry>(p)?.constants,
        None => Constants::default(),
    };
    let (s1, s2) = load_pair(&a.mic1, &a.mic2)?;
    let tau = baseline::estimate_tdoa_gcc(&s1, &s2, &k)?;
    println!("tdoa {tau:.9e}");
    println!("aoa {:.4}", aoa_from_tdoa(tau, &k));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Dataset(a) => make_dataset(a),
        Command::Testset(a) => testset(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Localize(a) => localize(a),
        Command::Baseline(a) => run_baseline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
