//! Signals, STFT and the ILD/IPD feature front-end, plus WAV and raw-float
//! I/O.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::roomsim::Rir;

pub const NFFT: usize = 1024;
pub const HOP: usize = 512;
pub const N_BINS: usize = NFFT / 2 + 1;
/// Number of ILD bins (DC dropped).
pub const ILD_BINS: usize = NFFT / 2;
/// Number of IPD bins (DC and Nyquist dropped).
pub const IPD_BINS: usize = NFFT / 2 - 1;
pub const FEATURE_DIM: usize = ILD_BINS + 2 * IPD_BINS;
/// Floor applied to magnitudes before division and logarithms.
pub const MAG_FLOOR: f64 = 1e-12;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub fs: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, fs: u32) -> Self {
        Self { samples, fs }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.fs)
    }

    /// Scales so the largest absolute sample is 1 (no-op for silence).
    pub fn peak_normalized(mut self) -> Self {
        let peak = self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            self.samples.iter_mut().for_each(|v| *v /= peak);
        }
        self
    }
}

/// One-sided STFT, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_frames: usize,
    pub fs: u32,
}

impl Spectrogram {
    pub fn from_frames(data: Vec<Complex64>, n_frames: usize, fs: u32) -> Result<Self> {
        if n_frames == 0 || data.len() != n_frames * N_BINS {
            return Err(Error::invalid("spectrogram data does not match frame count"));
        }
        Ok(Self { data, n_frames, fs })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        N_BINS
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * N_BINS..(t + 1) * N_BINS]
    }

    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.data[t * N_BINS + f]
    }

    pub fn map(&self, mut g: impl FnMut(usize, Complex64) -> Complex64) -> Spectrogram {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| g(i % N_BINS, v))
            .collect();
        Spectrogram { data, n_frames: self.n_frames, fs: self.fs }
    }

    pub(crate) fn frames(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(N_BINS)
    }

    /// Center frequency of bin `f`, Hz.
    pub fn bin_hz(&self, f: usize) -> f64 {
        f as f64 * f64::from(self.fs) / NFFT as f64
    }
}

/// The ILD/IPD input vector: `[ILD (512), Re IPD (511), Im IPD (511)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub x: Vec<f64>,
}

impl FeatureVector {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.len() != FEATURE_DIM {
            return Err(Error::invalid(format!("feature vector has {} entries, expected {FEATURE_DIM}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature vector contains non-finite values"));
        }
        Ok(Self { x })
    }

    pub fn ild(&self) -> &[f64] {
        &self.x[..ILD_BINS]
    }

    pub fn ipd_re(&self) -> &[f64] {
        &self.x[ILD_BINS..ILD_BINS + IPD_BINS]
    }

    pub fn ipd_im(&self) -> &[f64] {
        &self.x[ILD_BINS + IPD_BINS..]
    }
}

/// I.i.d. standard Gaussian noise, deterministic per seed.
pub fn white_noise(duration_s: f64, fs: u32, seed: u64) -> Result<Signal> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::invalid("duration must be positive"));
    }
    let n = (duration_s * f64::from(fs)).round() as usize;
    Ok(Signal::new(gaussian(n, seed), fs))
}

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Full linear convolution of two sequences via FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let fwd = forward_plan(n);
    let inv = inverse_plan(n);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(n, Complex64::new(0.0, 0.0));
        v
    };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len].iter().map(|v| v.re * scale).collect()
}

/// Source signal filtered by a room impulse response.
pub fn convolve(sig: &Signal, rir: &Rir) -> Result<Signal> {
    if sig.fs != rir.fs {
        return Err(Error::invalid(format!("sample rate mismatch: {} vs {}", sig.fs, rir.fs)));
    }
    Ok(Signal::new(fft_convolve(&sig.samples, &rir.samples), sig.fs))
}

/// Adds white Gaussian noise scaled to the requested SNR; `+inf` leaves
/// the signal untouched.
pub fn add_noise_snr(sig: &Signal, snr_db: f64, seed: u64) -> Result<Signal> {
    let p_sig = sig.power();
    if !(p_sig > 0.0) {
        return Err(Error::invalid("signal has zero energy; SNR is undefined"));
    }
    if snr_db == f64::INFINITY {
        return Ok(sig.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("SNR must be finite or +inf"));
    }
    let noise = gaussian(sig.len(), seed);
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let gain = (p_sig / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = sig.samples.iter().zip(&noise).map(|(s, n)| s + gain * n).collect();
    Ok(Signal::new(samples, sig.fs))
}

/// Periodic Hann window of length [`NFFT`].
pub fn hann_window() -> Vec<f64> {
    (0..NFFT)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / NFFT as f64).cos())
        .collect()
}

/// Hann-windowed STFT with 1024-point frames and 50% overlap.
pub fn stft(sig: &Signal) -> Result<Spectrogram> {
    if sig.len() < NFFT {
        return Err(Error::invalid(format!("signal has {} samples, STFT needs at least {NFFT}", sig.len())));
    }
    let n_frames = (sig.len() - NFFT) / HOP + 1;
    let window = hann_window();
    let fft = forward_plan(NFFT);
    let mut data = Vec::with_capacity(n_frames * N_BINS);
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..n_frames {
        let frame = &sig.samples[t * HOP..t * HOP + NFFT];
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex64::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend_from_slice(&buf[..N_BINS]);
    }
    Spectrogram::from_frames(data, n_frames, sig.fs)
}

/// Frame-averaged ILD and IPD of channel 2 relative to channel 1.
pub fn features(spec1: &Spectrogram, spec2: &Spectrogram) -> Result<FeatureVector> {
    if spec1.n_frames != spec2.n_frames || spec1.fs != spec2.fs {
        return Err(Error::invalid("spectrogram shapes differ"));
    }
    let mut ild = vec![0.0; ILD_BINS];
    let mut ipd = vec![Complex64::new(0.0, 0.0); IPD_BINS];
    for (f1, f2) in spec1.frames().zip(spec2.frames()) {
        for f in 1..=ILD_BINS {
            let a1 = f1[f].norm().max(MAG_FLOOR);
            let a2 = f2[f].norm().max(MAG_FLOOR);
            ild[f - 1] += (a2 / a1).ln();
            if f <= IPD_BINS {
                let cross = f2[f] * f1[f].conj();
                ipd[f - 1] += cross / (a1 * a2).max(MAG_FLOOR);
            }
        }
    }
    let inv_t = 1.0 / spec1.n_frames as f64;
    let mut x = Vec::with_capacity(FEATURE_DIM);
    x.extend(ild.iter().map(|v| v * inv_t));
    x.extend(ipd.iter().map(|v| v.re * inv_t));
    x.extend(ipd.iter().map(|v| v.im * inv_t));
    FeatureVector::new(x)
}

/// Linear-interpolation resampling.
pub fn resample_linear(sig: &Signal, fs: u32) -> Signal {
    if sig.fs == fs || sig.is_empty() {
        return Signal::new(sig.samples.clone(), fs);
    }
    let ratio = f64::from(sig.fs) / f64::from(fs);
    let n = ((sig.len() as f64) / ratio).floor().max(1.0) as usize;
    let last = sig.len() - 1;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 * ratio;
            let k = (t.floor() as usize).min(last);
            let frac = t - k as f64;
            let next = sig.samples[(k + 1).min(last)];
            sig.samples[k] * (1.0 - frac) + next * frac
        })
        .collect();
    Signal::new(samples, fs)
}

/// Reads a mono WAV file (integer PCM or 32-bit float).
pub fn read_wav(path: &Path) -> Result<Signal> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::invalid(format!("{} has {} channels; mono expected", path.display(), spec.channels)));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    Ok(Signal::new(samples, spec.sample_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn write_wav(path: &Path, sig: &Signal, format: WavFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec { channels: 1, sample_rate: sig.fs, bits_per_sample: bits, sample_format };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &sig.samples {
        match format {
            WavFormat::Pcm16 => w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?,
            WavFormat::Float32 => w.write_sample(s as f32)?,
        }
    }
    w.finalize()?;
    Ok(())
}

/// Writes samples as consecutive little-endian `f32`.
pub fn write_raw_f32(path: &Path, samples: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &s in samples {
        w.write_all(&(s as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_raw_f32(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format("raw f32 file length is not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roomsim::RirMeta;
    use proptest::prelude::*;

    fn rir(samples: Vec<f64>) -> Rir {
        Rir { samples, fs: 16_000, meta: RirMeta { direct_delay: 0.0, first_echo_delay: 0.0 } }
    }

    fn direct_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    #[test]
    fn white_noise_properties() {
        let s = white_noise(1.0, 16_000, 4).unwrap();
        assert_eq!(s.len(), 16_000);
        assert_eq!(s, white_noise(1.0, 16_000, 4).unwrap());
        let big = white_noise(1_000_000.0 / 16_000.0, 16_000, 5).unwrap();
        let mean = big.samples.iter().sum::<f64>() / big.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!(white_noise(0.0, 16_000, 1).is_err());
    }

    #[test]
    fn convolution_identity_and_shift() {
        let s = white_noise(0.01, 16_000, 1).unwrap();
        let id = convolve(&s, &rir(vec![1.0])).unwrap();
        for (a, b) in id.samples.iter().zip(&s.samples) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut delayed = vec![0.0; 6];
        delayed[5] = 1.0;
        let sh = convolve(&s, &rir(delayed)).unwrap();
        assert_eq!(sh.len(), s.len() + 5);
        for i in 0..s.len() {
            assert!((sh.samples[i + 5] - s.samples[i]).abs() < 1e-12);
        }
        let other = Rir { fs: 8_000, ..rir(vec![1.0]) };
        assert!(convolve(&s, &other).is_err());
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let a = white_noise(64.0 / 16_000.0, 16_000, 7).unwrap().samples;
        let b = white_noise(16.0 / 16_000.0, 16_000, 8).unwrap().samples;
        let fast = fft_convolve(&a, &b);
        let slow = direct_convolution(&a, &b);
        assert_eq!(fast.len(), slow.len());
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    fn snr_db(clean: &Signal, noisy: &Signal) -> f64 {
        let noise: Vec<f64> = noisy.samples.iter().zip(&clean.samples).map(|(a, b)| a - b).collect();
        let p_n = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
        10.0 * (clean.power() / p_n).log10()
    }

    #[test]
    fn noise_at_requested_snr() {
        let s = white_noise(1.0, 16_000, 2).unwrap();
        let n10 = add_noise_snr(&s, 10.0, 3).unwrap();
        assert!((snr_db(&s, &n10) - 10.0).abs() < 0.1);
        let n0 = add_noise_snr(&s, 0.0, 3).unwrap();
        assert!((snr_db(&s, &n0)).abs() < 10.0 * 1.01f64.log10());
        assert_eq!(add_noise_snr(&s, f64::INFINITY, 3).unwrap(), s);
        let silent = Signal::new(vec![0.0; 100], 16_000);
        assert!(add_noise_snr(&silent, 10.0, 1).is_err());
    }

    #[test]
    fn stft_frame_count_and_errors() {
        let s = white_noise(1.0, 16_000, 1).unwrap();
        let spec = stft(&s).unwrap();
        assert_eq!(spec.n_frames(), 30);
        assert_eq!(spec.n_bins(), 513);
        assert!(stft(&Signal::new(vec![0.0; 1023], 16_000)).is_err());
        let zero = stft(&Signal::new(vec![0.0; 4096], 16_000)).unwrap();
        assert!(zero.frames().flatten().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn stft_concentrates_bin_centered_tone() {
        let bin = 100;
        let s: Vec<f64> = (0..4096)
            .map(|n| (2.0 * PI * bin as f64 * n as f64 / NFFT as f64).sin())
            .collect();
        let spec = stft(&Signal::new(s, 16_000)).unwrap();
        for frame in spec.frames() {
            let total: f64 = frame.iter().map(|v| v.norm_sqr()).sum();
            // Hann leaks a quarter of the center energy into each neighbour.
            let at_bin = frame[bin].norm_sqr();
            assert!((at_bin / total - 2.0 / 3.0).abs() < 1e-9);
            let lobe: f64 = frame[bin - 1..=bin + 1].iter().map(|v| v.norm_sqr()).sum();
            assert!(lobe / total > 0.9);
        }
    }

    fn noise_spec(seed: u64) -> Spectrogram {
        stft(&white_noise(0.5, 16_000, seed).unwrap()).unwrap()
    }

    #[test]
    fn identical_channels() {
        let s = noise_spec(1);
        let fv = features(&s, &s).unwrap();
        assert_eq!(fv.x.len(), 1534);
        assert!(fv.ild().iter().all(|v| v.abs() < 1e-12));
        assert!(fv.ipd_re().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(fv.ipd_im().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gain_only_changes_ild() {
        let s = noise_spec(2);
        let s2 = s.map(|_, v| v * 2.0);
        let fv = features(&s, &s2).unwrap();
        assert!(fv.ild().iter().all(|v| (v - 2f64.ln()).abs() < 1e-12));
        assert!(fv.ipd_re().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn pure_delay_gives_phase_ramp() {
        let s = noise_spec(3);
        let tau0 = 2.7e-4;
        let fs = 16_000.0;
        let s2 = s.map(|f, v| v * Complex64::from_polar(1.0, -2.0 * PI * f as f64 * fs / NFFT as f64 * tau0));
        let fv = features(&s, &s2).unwrap();
        for f in 1..=IPD_BINS {
            let expect = Complex64::from_polar(1.0, -2.0 * PI * f as f64 * fs / NFFT as f64 * tau0);
            let got = Complex64::new(fv.ipd_re()[f - 1], fv.ipd_im()[f - 1]);
            assert!((got - expect).norm() < 1e-12);
            assert!((got.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn features_reject_mismatched_shapes() {
        let a = noise_spec(1);
        let b = stft(&white_noise(0.25, 16_000, 1).unwrap()).unwrap();
        assert!(features(&a, &b).is_err());
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Signal::new(vec![0.0, 0.5, -0.25, 0.125], 16_000);
        let p = dir.path().join("a.wav");
        write_wav(&p, &s, WavFormat::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), s);
        write_wav(&p, &s, WavFormat::Pcm16).unwrap();
        let back = read_wav(&p).unwrap();
        for (a, b) in back.samples.iter().zip(&s.samples) {
            assert!((a - b).abs() < 1e-4);
        }
        let raw = dir.path().join("a.f32");
        write_raw_f32(&raw, &s.samples).unwrap();
        assert_eq!(read_raw_f32(&raw).unwrap(), s.samples);
    }

    #[test]
    fn resampling_keeps_duration() {
        let s = Signal::new((0..44_100).map(|i| (i as f64 * 0.01).sin()).collect(), 44_100);
        let r = resample_linear(&s, 16_000);
        assert_eq!(r.fs, 16_000);
        assert_eq!(r.len(), 16_000);
        assert!((r.samples[100] - (100.0 * 44_100.0 / 16_000.0 * 0.01f64).sin()).abs() < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ipd_bounded_and_gain_invariant(seed in 0u64..1000, g in 0.01..100.0f64, seed2 in 0u64..1000) {
            let a = noise_spec(seed);
            let b = noise_spec(seed2 + 1000);
            let fv = features(&a, &b).unwrap();
            prop_assert_eq!(fv.x.len(), FEATURE_DIM);
            for (re, im) in fv.ipd_re().iter().zip(fv.ipd_im()) {
                prop_assert!((re * re + im * im).sqrt() <= 1.0 + 1e-12);
            }
            let scaled = features(&a.map(|_, v| v * g), &b.map(|_, v| v * g)).unwrap();
            for (x, y) in fv.x.iter().zip(&scaled.x) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
