//! GCC-PHAT angular spectrum and TDOA estimation for the real microphone
//! pair.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::dsp::{self, Signal, Spectrogram, IPD_BINS, MAG_FLOOR};
use crate::error::{Error, Result};
use crate::geometry::Constants;

/// Uniform grid of candidate delays, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl TauGrid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo < hi) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("bad delay grid [{lo}, {hi}] step {step}")));
        }
        Ok(Self { lo, hi, step })
    }

    /// Default search grid: ±1.5·d/c at 1/(8·fs), symmetric about zero.
    pub fn default_for(k: &Constants) -> Self {
        let step = 1.0 / (8.0 * k.fs_f64());
        let half = (1.5 * k.max_tdoa() / step).floor();
        Self { lo: -half * step, hi: half * step, step }
    }

    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tau(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    pub fn taus(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.tau(i))
    }
}

/// Frame sum of the PHAT-weighted cross-spectrum `M1·conj(M2)`, bins
/// 1..=511.
fn phat_cross_spectrum(spec1: &Spectrogram, spec2: &Spectrogram) -> Result<Vec<Complex64>> {
    if spec1.n_frames() != spec2.n_frames() || spec1.fs != spec2.fs {
        return Err(Error::invalid("spectrogram shapes differ"));
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); IPD_BINS];
    for t in 0..spec1.n_frames() {
        let (f1, f2) = (spec1.frame(t), spec2.frame(t));
        for (f, slot) in acc.iter_mut().enumerate() {
            let x = f1[f + 1] * f2[f + 1].conj();
            *slot += x / x.norm().max(MAG_FLOOR);
        }
    }
    Ok(acc)
}

/// Ψ_GCC evaluated on every delay of `grid`.
pub fn gcc_phat_spectrum(spec1: &Spectrogram, spec2: &Spectrogram, grid: &TauGrid) -> Result<Vec<f64>> {
    let cross = phat_cross_spectrum(spec1, spec2)?;
    let hz: Vec<f64> = (1..=IPD_BINS).map(|f| spec1.bin_hz(f)).collect();
    Ok(grid
        .taus()
        .map(|tau| {
            cross
                .iter()
                .zip(&hz)
                .map(|(c, &f)| (c * Complex64::from_polar(1.0, -2.0 * PI * f * tau)).re)
                .sum()
        })
        .collect())
}

/// Grid argmax refined by a parabola through the peak and its neighbours.
pub fn interpolated_peak(values: &[f64], grid: &TauGrid) -> f64 {
    let (i, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    if i == 0 || i + 1 >= values.len() {
        return grid.tau(i);
    }
    let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    grid.tau(i) + offset * grid.step
}

pub fn estimate_tdoa_on_grid(spec1: &Spectrogram, spec2: &Spectrogram, grid: &TauGrid) -> Result<f64> {
    let psi = gcc_phat_spectrum(spec1, spec2, grid)?;
    Ok(interpolated_peak(&psi, grid))
}

/// GCC-PHAT TDOA of channel 2 relative to channel 1, seconds.
pub fn estimate_tdoa_gcc(sig1: &Signal, sig2: &Signal, k: &Constants) -> Result<f64> {
    let s1 = dsp::stft(sig1)?;
    let s2 = dsp::stft(sig2)?;
    estimate_tdoa_on_grid(&s1, &s2, &TauGrid::default_for(k))
}
