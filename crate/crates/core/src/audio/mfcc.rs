use std::f64::consts::PI;

use ndarray::{s, Array2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MFCC front-end settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    /// Waveforms at other rates are resampled to this rate first.
    pub sample_rate_hz: u32,
    pub window_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    pub n_mfcc: usize,
    /// Append first-order regression deltas.
    pub deltas: bool,
    pub delta_window: usize,
    pub pre_emphasis: f64,
    /// Mel energies are clamped to this value before the logarithm.
    pub energy_floor: f64,
    pub f_min_hz: f64,
    /// Upper band edge; `None` means Nyquist.
    pub f_max_hz: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate_hz: 16_000,
            window_s: 0.025,
            hop_s: 0.010,
            n_mels: 40,
            n_mfcc: 13,
            deltas: true,
            delta_window: 2,
            pre_emphasis: 0.97,
            energy_floor: 1e-10,
            f_min_hz: 0.0,
            f_max_hz: None,
        }
    }
}

impl MfccConfig {
    /// Feature dimension `D_S`.
    pub fn feature_dim(&self) -> usize {
        if self.deltas {
            2 * self.n_mfcc
        } else {
            self.n_mfcc
        }
    }

    pub fn window_len(&self) -> usize {
        (self.window_s * self.sample_rate_hz as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_s * self.sample_rate_hz as f64).round() as usize
    }

    /// Exact hop in seconds after rounding to whole samples.
    pub fn effective_hop_s(&self) -> f64 {
        self.hop_len() as f64 / self.sample_rate_hz as f64
    }

    /// Value of coefficient 0 for a frame whose mel energies all sit at the
    /// floor (e.g. digital silence): the orthonormal DCT of a constant
    /// log-spectrum.
    pub fn silence_c0(&self) -> f64 {
        (self.n_mels as f64).sqrt() * self.energy_floor.ln()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mfcc: {m}")));
        if self.sample_rate_hz == 0 {
            return bad("sample_rate_hz must be positive");
        }
        if self.window_len() < 2 || self.hop_len() == 0 {
            return bad("window and hop must span at least one sample");
        }
        if self.n_mels == 0 || self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return bad("need 0 < n_mfcc <= n_mels");
        }
        if !(self.energy_floor > 0.0) {
            return bad("energy_floor must be positive");
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        let f_max = self.f_max_hz.unwrap_or(nyquist);
        if !(self.f_min_hz >= 0.0 && self.f_min_hz < f_max && f_max <= nyquist) {
            return bad("band edges must satisfy 0 <= f_min < f_max <= nyquist");
        }
        Ok(())
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the `n_fft / 2 + 1` power-spectrum bins.
fn mel_filterbank(cfg: &MfccConfig, n_fft: usize) -> Array2<f64> {
    let sr = cfg.sample_rate_hz as f64;
    let bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min_hz), hz_to_mel(cfg.f_max_hz.unwrap_or(sr / 2.0)));
    let edges: Vec<f64> =
        (0..cfg.n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)).collect();
    let mut fb = Array2::zeros((cfg.n_mels, bins));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sr / n_fft as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Linear-interpolation resampling.
pub fn resample_linear(signal: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    if from_hz == to_hz || signal.is_empty() {
        return signal.to_vec();
    }
    let ratio = from_hz as f64 / to_hz as f64;
    let n_out = ((signal.len() as f64) / ratio).floor() as usize;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            let a = signal[j];
            let b = *signal.get(j + 1).unwrap_or(&a);
            a + (b - a) * frac
        })
        .collect()
}

/// Computes MFCC (and optionally delta) features, one row per hop.
///
/// The row count is `1 + (len - window) / hop` after resampling to the
/// configured rate; frame `j` starts at `j * hop` samples.
pub fn extract_mfcc(waveform: &[f64], sample_rate_hz: u32, cfg: &MfccConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    if sample_rate_hz == 0 {
        return Err(Error::Audio("sample rate must be positive".into()));
    }
    if waveform.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("waveform sample".into()));
    }
    let signal = resample_linear(waveform, sample_rate_hz, cfg.sample_rate_hz);
    let (win, hop) = (cfg.window_len(), cfg.hop_len());
    if signal.len() < win {
        return Err(Error::Audio(format!("waveform has {} samples, one analysis window needs {win}", signal.len())));
    }
    let n_frames = 1 + (signal.len() - win) / hop;
    let n_fft = win.next_power_of_two();
    let fb = mel_filterbank(cfg, n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let window: Vec<f64> = (0..win).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (win - 1) as f64).cos()).collect();
    let dct = dct_matrix(cfg.n_mfcc, cfg.n_mels);

    let mut ceps = Array2::zeros((n_frames, cfg.n_mfcc));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = ndarray::Array1::zeros(n_fft / 2 + 1);
    for f in 0..n_frames {
        let frame = &signal[f * hop..f * hop + win];
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..win {
            let prev = if i == 0 { 0.0 } else { frame[i - 1] };
            buf[i].re = (frame[i] - cfg.pre_emphasis * prev) * window[i];
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        let log_mel = fb.dot(&power).mapv(|e: f64| e.max(cfg.energy_floor).ln());
        ceps.row_mut(f).assign(&dct.dot(&log_mel));
    }
    if !cfg.deltas {
        return Ok(ceps);
    }
    let deltas = regression_deltas(&ceps, cfg.delta_window);
    let mut out = Array2::zeros((n_frames, 2 * cfg.n_mfcc));
    out.slice_mut(s![.., ..cfg.n_mfcc]).assign(&ceps);
    out.slice_mut(s![.., cfg.n_mfcc..]).assign(&deltas);
    Ok(out)
}

/// Orthonormal DCT-II rows `0..n_out` for inputs of length `n_in`.
fn dct_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let n = n_in as f64;
    Array2::from_shape_fn((n_out, n_in), |(k, m)| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (PI * k as f64 * (m as f64 + 0.5) / n).cos()
    })
}

/// Regression deltas over `±window` frames with edge frames repeated.
fn regression_deltas(x: &Array2<f64>, window: usize) -> Array2<f64> {
    let n = x.nrows();
    if window == 0 {
        return Array2::zeros(x.dim());
    }
    let denom: f64 = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    let mut out = Array2::zeros(x.dim());
    for t in 0..n {
        let mut row = out.row_mut(t);
        for k in 1..=window {
            let fwd = x.row((t + k).min(n - 1));
            let back = x.row(t.saturating_sub(k));
            row.scaled_add(k as f64 / denom, &(&fwd - &back));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, sr: u32) -> Vec<f64> {
        let n = (secs * sr as f64) as usize;
        (0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect()
    }

    #[test]
    fn silence_is_floor_constant() {
        let cfg = MfccConfig::default();
        let feats = extract_mfcc(&vec![0.0; 16_000], 16_000, &cfg).unwrap();
        assert_eq!(feats.ncols(), 26);
        assert_eq!(feats.nrows(), 1 + (16_000 - 400) / 160);
        // reference: naive orthonormal DCT of the constant log spectrum
        let m = cfg.n_mels as f64;
        let level = cfg.energy_floor.ln();
        let reference: Vec<f64> = (0..cfg.n_mfcc)
            .map(|k| {
                let s = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                (0..cfg.n_mels).map(|i| s * level * (PI * k as f64 * (i as f64 + 0.5) / m).cos()).sum()
            })
            .collect();
        assert!((reference[0] - cfg.silence_c0()).abs() < 1e-9);
        for row in feats.rows() {
            assert!((row[0] - cfg.silence_c0()).abs() < 1e-9);
            for k in 1..cfg.n_mfcc {
                assert!(row[k].abs() < 1e-9, "c{k} = {}", row[k]);
                assert!((row[k] - reference[k]).abs() < 1e-9);
            }
            assert!(row.slice(s![cfg.n_mfcc..]).iter().all(|d| d.abs() < 1e-9));
        }
    }

    #[test]
    fn deterministic_and_pitch_sensitive() {
        let cfg = MfccConfig::default();
        let a = extract_mfcc(&sine(440.0, 0.5, 16_000), 16_000, &cfg).unwrap();
        let b = extract_mfcc(&sine(440.0, 0.5, 16_000), 16_000, &cfg).unwrap();
        assert_eq!(a, b);
        let c = extract_mfcc(&sine(880.0, 0.5, 16_000), 16_000, &cfg).unwrap();
        let dist: f64 = (&a.row(10) - &c.row(10)).mapv(|v| v * v).sum().sqrt();
        assert!(dist > 0.0);
    }

    #[test]
    fn too_short_is_error() {
        let cfg = MfccConfig::default();
        assert!(matches!(extract_mfcc(&[], 16_000, &cfg), Err(Error::Audio(_))));
        assert!(extract_mfcc(&[0.1; 399], 16_000, &cfg).is_err());
        assert!(extract_mfcc(&[0.1; 400], 16_000, &cfg).is_ok());
    }

    #[test]
    fn resampling_halves_length() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y = resample_linear(&x, 32_000, 16_000);
        assert_eq!(y.len(), 50);
        assert_eq!(y[3], 6.0);
    }

    #[test]
    fn filterbank_rows_cover_band() {
        let cfg = MfccConfig::default();
        let fb = mel_filterbank(&cfg, 512);
        for row in fb.rows() {
            assert!(row.sum() > 0.0);
            assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }
}
