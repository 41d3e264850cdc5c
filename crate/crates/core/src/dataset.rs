//! Seeded generation of (feature, echo-time) records, pruning, splits and
//! the on-disk dataset format.
//!
//! A dataset `name.mird` is accompanied by `name.scenes.json` (the scene of
//! every stored record) and `name.stats.json` (generation settings, counts
//! and RT60 statistics). Every record is a pure function of the master seed
//! and its index, so files do not depend on the worker count.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, FeatureVector, Signal, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::geometry::EchoTimes;
use crate::model::Samples;
use crate::roomsim::{self, SceneSpec};

pub const DATASET_MAGIC: &[u8; 4] = b"MIRD";
pub const DATASET_VERSION: u32 = 1;
/// Records with |iTDOA| below this (seconds) are discarded.
pub const PRUNE_ITDOA: f64 = 1e-6;
pub const DEFAULT_TRAIN_SCENES: usize = 10_000;
pub const FULL_SCALE_TRAIN_SCENES: usize = 90_000;
pub const DEFAULT_TEST_SCENES: usize = 200;
pub const WHITE_NOISE_SECONDS: f64 = 1.0;
pub const TEST_SNR_DB: f64 = 10.0;
/// Test scenes draw from a different seed stream than training scenes.
pub const TEST_STREAM_OFFSET: u64 = 1 << 63;

/// What is played at the source position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    WhiteNoise { seconds: f64 },
    /// Files are used round-robin by record index.
    Speech { files: Vec<PathBuf> },
}

/// Everything that determines the content of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub master_seed: u64,
    pub n: usize,
    pub source: SourceSpec,
    /// Additive white noise SNR in dB; `None` for noiseless recordings.
    pub snr_db: Option<f64>,
    /// Keep drawing further indices until `n` records survive pruning.
    pub exact_n: bool,
    pub stream_offset: u64,
}

impl GenerationConfig {
    pub fn white(master_seed: u64, n: usize) -> Self {
        Self {
            master_seed,
            n,
            source: SourceSpec::WhiteNoise { seconds: WHITE_NOISE_SECONDS },
            snr_db: None,
            exact_n: false,
            stream_offset: 0,
        }
    }
}

/// Independent seeds of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordSeeds {
    pub scene: u64,
    pub source: u64,
    pub noise: [u64; 2],
}

pub fn record_seeds(master_seed: u64, stream: u64) -> RecordSeeds {
    let mut base = ChaCha8Rng::seed_from_u64(master_seed);
    base.set_stream(stream);
    let mut rng = ChaCha8Rng::seed_from_u64(base.next_u64());
    RecordSeeds { scene: rng.next_u64(), source: rng.next_u64(), noise: [rng.next_u64(), rng.next_u64()] }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub index: u64,
    pub scene: SceneSpec,
    pub x: FeatureVector,
    pub v: EchoTimes,
    pub rt60: f64,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<()> {
        if self.v.itdoa.abs() < PRUNE_ITDOA {
            return Err(Error::format(format!("record {} violates the pruning rule", self.index)));
        }
        if self.x.x.len() != FEATURE_DIM || self.x.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!("record {} has invalid features", self.index)));
        }
        if !self.v.to_array().iter().all(|t| t.is_finite()) || !self.rt60.is_finite() {
            return Err(Error::format(format!("record {} has non-finite targets", self.index)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordOutcome {
    Kept(Box<DatasetRecord>),
    Pruned { index: u64 },
}

/// Source waveforms resolved for generation.
#[derive(Debug, Clone)]
pub enum SourceAudio {
    WhiteNoise { seconds: f64 },
    Speech(Arc<Vec<Signal>>),
}

impl SourceAudio {
    /// Loads speech files, resampling to `fs` and peak-normalizing.
    pub fn resolve(spec: &SourceSpec, fs: u32) -> Result<Self> {
        match spec {
            SourceSpec::WhiteNoise { seconds } => Ok(Self::WhiteNoise { seconds: *seconds }),
            SourceSpec::Speech { files } => {
                if files.is_empty() {
                    return Err(Error::invalid("speech conditions need at least one WAV file"));
                }
                let sigs = files
                    .iter()
                    .map(|p| {
                        let s = dsp::read_wav(p)?;
                        let s = if s.fs == fs { s } else { dsp::resample_linear(&s, fs) };
                        if !(s.power() > 0.0) {
                            return Err(Error::invalid(format!("{} is silent", p.display())));
                        }
                        Ok(s.peak_normalized())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::Speech(Arc::new(sigs)))
            }
        }
    }

    fn signal(&self, index: u64, seed: u64, fs: u32) -> Result<Signal> {
        match self {
            Self::WhiteNoise { seconds } => dsp::white_noise(*seconds, fs, seed),
            Self::Speech(sigs) => Ok(sigs[(index % sigs.len() as u64) as usize].clone()),
        }
    }
}

/// WAV files of a directory in name order.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no WAV files in {}", dir.display())));
    }
    Ok(files)
}

/// The two microphone signals of a scene.
pub fn render_audio(
    scene: &SceneSpec,
    source: &SourceAudio,
    index: u64,
    seeds: &RecordSeeds,
    snr_db: Option<f64>,
) -> Result<(Signal, Signal)> {
    let fs = scene.constants.fs;
    let src = source.signal(index, seeds.source, fs)?;
    let (r1, r2) = roomsim::simulate_pair(scene)?;
    let mut y1 = dsp::convolve(&src, &r1)?;
    let mut y2 = dsp::convolve(&src, &r2)?;
    if let Some(snr) = snr_db {
        y1 = dsp::add_noise_snr(&y1, snr, seeds.noise[0])?;
        y2 = dsp::add_noise_snr(&y2, snr, seeds.noise[1])?;
    }
    Ok((y1, y2))
}

/// Features rounded to `f32` so that stored and in-memory records agree.
pub fn feature_vector(y1: &Signal, y2: &Signal) -> Result<FeatureVector> {
    let fv = dsp::features(&dsp::stft(y1)?, &dsp::stft(y2)?)?;
    FeatureVector::new(fv.x.iter().map(|&v| f64::from(v as f32)).collect())
}

pub fn generate_record(cfg: &GenerationConfig, source: &SourceAudio, index: u64) -> Result<RecordOutcome> {
    let seeds = record_seeds(cfg.master_seed, cfg.stream_offset.wrapping_add(index));
    let scene = roomsim::sample_scene(seeds.scene)?;
    let v = scene.echo_times()?;
    if v.itdoa.abs() < PRUNE_ITDOA {
        return Ok(RecordOutcome::Pruned { index });
    }
    let (y1, y2) = render_audio(&scene, source, index, &seeds, cfg.snr_db)?;
    let x = feature_vector(&y1, &y2)?;
    let rt60 = roomsim::rt60_sabine(&scene)?;
    Ok(RecordOutcome::Kept(Box::new(DatasetRecord { index, scene, x, v, rt60 })))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rt60Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    /// Fraction of kept records with Sabine RT60 in [0.02, 0.30] s.
    pub fraction_in_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub generation: GenerationConfig,
    pub attempted: usize,
    pub kept: usize,
    pub pruned: usize,
    pub failed: usize,
    pub prune_rate: f64,
    pub rt60: Option<Rt60Stats>,
}

fn rt60_stats(values: &[f64]) -> Option<Rt60Stats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    Some(Rt60Stats {
        min: v[0],
        max: v[n - 1],
        mean: v.iter().sum::<f64>() / n as f64,
        median,
        fraction_in_range: v.iter().filter(|t| (0.02..=0.30).contains(*t)).count() as f64 / n as f64,
    })
}

/// In-memory dataset: stored records in index order plus generation info.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub stats: DatasetStats,
}

fn thread_pool(parallelism: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(p) = parallelism {
        b = b.num_threads(p.max(1));
    }
    b.build().map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

/// Runs `f` with parallel work capped at `parallelism` workers (all cores
/// when `None`).
pub fn with_workers<R: Send>(parallelism: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(thread_pool(parallelism)?.install(f))
}

/// Generates records `0..n` (and beyond, in exact-n mode).
pub fn generate_dataset(cfg: &GenerationConfig, parallelism: Option<usize>) -> Result<Dataset> {
    generate_dataset_with_progress(cfg, parallelism, |_, _| {})
}

pub fn generate_dataset_with_progress(
    cfg: &GenerationConfig,
    parallelism: Option<usize>,
    mut progress: impl FnMut(usize, usize),
) -> Result<Dataset> {
    if cfg.n == 0 {
        return Err(Error::invalid("dataset size must be at least 1"));
    }
    let source = SourceAudio::resolve(&cfg.source, roomsim::sample_scene(0)?.constants.fs)?;
    let pool = thread_pool(parallelism)?;
    let mut records = Vec::with_capacity(cfg.n);
    let (mut pruned, mut failed, mut next) = (0, 0, 0u64);
    const CHUNK: u64 = 256;
    loop {
        let want = if cfg.exact_n { (cfg.n - records.len()) as u64 } else { cfg.n as u64 - next };
        if want == 0 {
            break;
        }
        let end = next + want.min(CHUNK);
        let outcomes: Vec<(u64, Result<RecordOutcome>)> =
            pool.install(|| (next..end).into_par_iter().map(|i| (i, generate_record(cfg, &source, i))).collect());
        for (i, outcome) in outcomes {
            match outcome {
                Ok(RecordOutcome::Kept(r)) => records.push(*r),
                Ok(RecordOutcome::Pruned { .. }) => pruned += 1,
                Err(e) => {
                    log::warn!("record {i} skipped: {e}");
                    failed += 1;
                }
            }
        }
        next = end;
        progress(next as usize, records.len());
        if cfg.exact_n && next > 100 * cfg.n as u64 + 1000 {
            return Err(Error::Internal("exact-n generation is not converging".into()));
        }
    }
    let attempted = next as usize;
    let rt60: Vec<f64> = records.iter().map(|r| r.rt60).collect();
    let stats = DatasetStats {
        generation: cfg.clone(),
        attempted,
        kept: records.len(),
        pruned,
        failed,
        prune_rate: pruned as f64 / attempted as f64,
        rt60: rt60_stats(&rt60),
    };
    Ok(Dataset { records, stats })
}

#[derive(Serialize, Deserialize)]
struct SceneEntry {
    index: u64,
    scene: SceneSpec,
}

/// `<stem>.scenes.json` next to `path`.
pub fn scenes_path(path: &Path) -> PathBuf {
    sidecar(path, "scenes.json")
}

/// `<stem>.stats.json` next to `path`.
pub fn stats_path(path: &Path) -> PathBuf {
    sidecar(path, "stats.json")
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.records.len() * (40 + 4 * FEATURE_DIM));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.index.to_le_bytes());
            for t in r.v.to_array() {
                out.extend_from_slice(&t.to_le_bytes());
            }
            out.extend_from_slice(&r.rt60.to_le_bytes());
            for &x in &r.x.x {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    /// Writes the binary file and both sidecars.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        let scenes: Vec<SceneEntry> =
            self.records.iter().map(|r| SceneEntry { index: r.index, scene: r.scene.clone() }).collect();
        write_json(&scenes_path(path), &scenes)?;
        write_json(&stats_path(path), &self.stats)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let scenes: Vec<SceneEntry> = serde_json::from_slice(&fs::read(scenes_path(path))?)
            .map_err(|e| Error::format(format!("bad scene sidecar: {e}")))?;
        let stats: DatasetStats = serde_json::from_slice(&fs::read(stats_path(path))?)
            .map_err(|e| Error::format(format!("bad stats sidecar: {e}")))?;
        let records = parse_records(&bytes, scenes)?;
        if records.len() != stats.kept {
            return Err(Error::format("stats sidecar disagrees with the record count"));
        }
        Ok(Self { records, stats })
    }

    /// Feature matrix and targets for training.
    pub fn samples(&self, indices: &[usize]) -> Samples {
        let mut s = Samples::new(FEATURE_DIM);
        s.x.reserve(indices.len() * FEATURE_DIM);
        for &i in indices {
            let r = &self.records[i];
            s.push(&r.x.x, r.v.to_array());
        }
        s
    }

    pub fn all_samples(&self) -> Samples {
        self.samples(&(0..self.len()).collect::<Vec<_>>())
    }
}

fn parse_records(bytes: &[u8], scenes: Vec<SceneEntry>) -> Result<Vec<DatasetRecord>> {
    let truncated = || Error::format("dataset file is truncated");
    if bytes.len() < 20 || &bytes[..4] != DATASET_MAGIC {
        return Err(Error::format("not a dataset file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DATASET_VERSION {
        return Err(Error::format(format!("unsupported dataset version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    if dim != FEATURE_DIM {
        return Err(Error::format(format!("feature dimension {dim}, expected {FEATURE_DIM}")));
    }
    let rec_len = 40 + 4 * dim;
    let body = &bytes[20..];
    if body.len() != count.checked_mul(rec_len).ok_or_else(truncated)? {
        return Err(if body.len() < count * rec_len { truncated() } else { Error::format("trailing bytes in dataset") });
    }
    if scenes.len() != count {
        return Err(Error::format(format!("header holds {count} records but the sidecar {}", scenes.len())));
    }
    let f64_at = |c: &[u8], o: usize| f64::from_le_bytes(c[o..o + 8].try_into().unwrap());
    let mut out = Vec::with_capacity(count);
    for (chunk, entry) in body.chunks_exact(rec_len).zip(scenes) {
        let index = u64::from_le_bytes(chunk[..8].try_into().unwrap());
        if index != entry.index {
            return Err(Error::format(format!("record {index} does not match sidecar entry {}", entry.index)));
        }
        let v = EchoTimes { tdoa: f64_at(chunk, 8), itdoa: f64_at(chunk, 16), tdoe: f64_at(chunk, 24) };
        let rt60 = f64_at(chunk, 32);
        let x = chunk[40..]
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        let r = DatasetRecord { index, scene: entry.scene, x: FeatureVector { x }, v, rt60 };
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Seeded shuffle of `0..n` cut into consecutive parts of the given
/// fractions; the last part takes the rounding remainder.
pub fn split(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid("split fractions must be positive and sum to 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(fractions.len());
    let mut start = 0;
    for (i, f) in fractions.iter().enumerate() {
        let end = if i + 1 == fractions.len() { n } else { start + (f * n as f64).round() as usize };
        let end = end.min(n);
        if end <= start {
            return Err(Error::invalid(format!("split part {i} would be empty")));
        }
        parts.push(order[start..end].to_vec());
        start = end;
    }
    Ok(parts)
}

/// 90/10 train/validation split.
pub fn train_val_split(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut parts = split(n, &[0.9, 0.1], seed)?;
    let val = parts.pop().unwrap();
    Ok((parts.pop().unwrap(), val))
}

/// Test condition: source kind and whether noise is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "wn")]
    WhiteNoise,
    #[serde(rename = "wn+n")]
    WhiteNoiseNoisy,
    #[serde(rename = "sp")]
    Speech,
    #[serde(rename = "sp+n")]
    SpeechNoisy,
}

impl Condition {
    pub const ALL: [Condition; 4] =
        [Condition::WhiteNoise, Condition::WhiteNoiseNoisy, Condition::Speech, Condition::SpeechNoisy];

    pub fn name(self) -> &'static str {
        match self {
            Condition::WhiteNoise => "wn",
            Condition::WhiteNoiseNoisy => "wn+n",
            Condition::Speech => "sp",
            Condition::SpeechNoisy => "sp+n",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown condition {s:?} (expected wn, wn+n, sp or sp+n)")))
    }

    pub fn is_speech(self) -> bool {
        matches!(self, Condition::Speech | Condition::SpeechNoisy)
    }

    pub fn snr_db(self) -> Option<f64> {
        matches!(self, Condition::WhiteNoiseNoisy | Condition::SpeechNoisy).then_some(TEST_SNR_DB)
    }

    pub fn file_name(self) -> String {
        format!("{}.mird", self.name())
    }

    pub fn generation(self, master_seed: u64, n: usize, speech: &[PathBuf]) -> GenerationConfig {
        GenerationConfig {
            master_seed,
            n,
            source: if self.is_speech() {
                SourceSpec::Speech { files: speech.to_vec() }
            } else {
                SourceSpec::WhiteNoise { seconds: WHITE_NOISE_SECONDS }
            },
            snr_db: self.snr_db(),
            exact_n: false,
            stream_offset: TEST_STREAM_OFFSET,
        }
    }
}

/// Writes one file per condition into `out_dir`, all over the same scenes.
pub fn generate_testset(
    n: usize,
    master_seed: u64,
    conditions: &[Condition],
    wav_dir: Option<&Path>,
    out_dir: &Path,
    parallelism: Option<usize>,
) -> Result<Vec<(Condition, PathBuf, DatasetStats)>> {
    let needs_speech = conditions.iter().any(|c| c.is_speech());
    let speech = match (needs_speech, wav_dir) {
        (false, _) => Vec::new(),
        (true, Some(dir)) => list_wavs(dir)?,
        (true, None) => return Err(Error::invalid("speech conditions need --wav-dir")),
    };
    fs::create_dir_all(out_dir)?;
    let mut out = Vec::new();
    for &c in conditions {
        let ds = generate_dataset(&c.generation(master_seed, n, &speech), parallelism)?;
        let path = out_dir.join(c.file_name());
        ds.save(&path)?;
        out.push((c, path, ds.stats));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MicPair, Vec3};

    #[test]
    fn record_seeds_differ_per_index_and_repeat() {
        let a = record_seeds(42, 0);
        assert_eq!(a, record_seeds(42, 0));
        assert_ne!(a, record_seeds(42, 1));
        assert_ne!(a, record_seeds(43, 0));
        assert_ne!(a.scene, a.source);
    }

    #[test]
    fn symmetric_scene_is_pruned() {
        // Mic pair axis perpendicular to the source direction and parallel to
        // the surface: both the direct and the image TDOA vanish.
        let mut scene = roomsim::sample_scene(3).unwrap();
        scene.close_face = crate::geometry::FaceId::ZMin;
        scene.mics = MicPair::new(Vec3::new(1.95, 2.0, 0.2), Vec3::new(2.05, 2.0, 0.2)).unwrap();
        scene.source = Vec3::new(2.0, 2.5, 1.2);
        let v = scene.echo_times().unwrap();
        assert!(v.itdoa.abs() < PRUNE_ITDOA);
        let rec = DatasetRecord { index: 0, scene, x: FeatureVector { x: vec![0.0; FEATURE_DIM] }, v, rt60: 0.1 };
        assert!(rec.validate().is_err());
    }

    #[test]
    fn small_dataset_round_trip_and_invariants() {
        let cfg = GenerationConfig::white(1, 12);
        let ds = generate_dataset(&cfg, Some(1)).unwrap();
        assert!(ds.len() <= 12 && !ds.is_empty());
        assert_eq!(ds.stats.attempted, 12);
        assert_eq!(ds.stats.kept + ds.stats.pruned + ds.stats.failed, 12);
        let d_over_c = 0.10 / 343.0;
        for r in &ds.records {
            r.validate().unwrap();
            assert!(r.v.tdoa.abs() <= d_over_c + 1e-12);
            assert_eq!(r.v, r.scene.echo_times().unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.mird");
        ds.save(&path).unwrap();
        assert!(scenes_path(&path).ends_with("train.scenes.json"));
        let back = Dataset::load(&path).unwrap();
        assert_eq!(back, ds);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(Dataset::load(&path), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(Dataset::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn generation_is_independent_of_worker_count() {
        let cfg = GenerationConfig::white(9, 6);
        let a = generate_dataset(&cfg, Some(1)).unwrap();
        let b = generate_dataset(&cfg, Some(3)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn exact_n_fills_up() {
        let cfg = GenerationConfig { exact_n: true, ..GenerationConfig::white(2, 5) };
        let ds = generate_dataset(&cfg, Some(1)).unwrap();
        assert_eq!(ds.len(), 5);
        let idx: Vec<u64> = ds.records.iter().map(|r| r.index).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn split_properties() {
        let (tr, va) = train_val_split(100, 5).unwrap();
        assert_eq!((tr.len(), va.len()), (90, 10));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(train_val_split(100, 5).unwrap(), (tr, va));
        assert!(split(100, &[0.5, 0.4], 1).is_err());
        assert!(split(3, &[0.9, 0.1], 1).is_err());
    }

    #[test]
    fn rt60_statistics() {
        let s = rt60_stats(&[0.1, 0.4, 0.2, 0.01]).unwrap();
        assert_eq!(s.min, 0.01);
        assert_eq!(s.max, 0.4);
        assert!((s.median - 0.15).abs() < 1e-12);
        assert_eq!(s.fraction_in_range, 0.5);
        assert!(rt60_stats(&[]).is_none());
    }

    #[test]
    fn condition_names() {
        for c in Condition::ALL {
            assert_eq!(Condition::parse(c.name()).unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{}\"", c.name()));
        }
        assert!(Condition::parse("xx").is_err());
        assert_eq!(Condition::WhiteNoiseNoisy.snr_db(), Some(10.0));
    }

    #[test]
    fn testset_shares_scenes_and_requires_wavs_for_speech() {
        let dir = tempfile::tempdir().unwrap();
        let wav_dir = dir.path().join("wavs");
        fs::create_dir(&wav_dir).unwrap();
        assert!(generate_testset(3, 1, &[Condition::Speech], Some(&wav_dir), dir.path(), Some(1)).is_err());
        assert!(generate_testset(3, 1, &[Condition::Speech], None, dir.path(), Some(1)).is_err());

        let tone = Signal::new((0..24_000).map(|i| (i as f64 * 0.05).sin()).collect(), 16_000);
        dsp::write_wav(&wav_dir.join("a.wav"), &tone, dsp::WavFormat::Pcm16).unwrap();
        let out = generate_testset(4, 1, &Condition::ALL, Some(&wav_dir), dir.path(), Some(1)).unwrap();
        assert_eq!(out.len(), 4);
        let sidecars: Vec<Vec<u8>> = out.iter().map(|(_, p, _)| fs::read(scenes_path(p)).unwrap()).collect();
        assert!(sidecars.windows(2).all(|w| w[0] == w[1]));
        let wn = Dataset::load(&out[0].1).unwrap();
        let wn_noisy = Dataset::load(&out[1].1).unwrap();
        assert_ne!(wn.records[0].x, wn_noisy.records[0].x);
        // Test scenes differ from training scenes with the same seed.
        let train = generate_dataset(&GenerationConfig::white(1, 4), Some(1)).unwrap();
        assert_ne!(train.records[0].scene, wn.records[0].scene);
    }
}
