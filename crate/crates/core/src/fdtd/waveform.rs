use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformKind {
    GaussianModulatedSine,
    ContinuousSine,
}

/// Source voltage waveform.
///
/// The Gaussian pulse is `A·exp(-((t-t0)/τ)²)·sin(2πf0(t-t0) + φ)` with
/// `t0 = 3.5τ + delay`. `bandwidth_ghz` is the full width at -10 dB of the
/// spectrum. The continuous sine ramps up over three periods with a raised
/// cosine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceWaveform {
    pub kind: WaveformKind,
    pub center_frequency_ghz: f64,
    pub bandwidth_ghz: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub delay_s: f64,
}

const RAMP_PERIODS: f64 = 3.0;

impl Default for SourceWaveform {
    /// Pulse covering 50–120 GHz at -10 dB with DC suppressed by more than
    /// 60 dB.
    fn default() -> Self {
        SourceWaveform {
            kind: WaveformKind::GaussianModulatedSine,
            center_frequency_ghz: 85.0,
            bandwidth_ghz: 68.0,
            amplitude: 1.0,
            delay_s: 0.0,
        }
    }
}

impl SourceWaveform {
    pub fn continuous(frequency_ghz: f64, amplitude: f64) -> Self {
        SourceWaveform {
            kind: WaveformKind::ContinuousSine,
            center_frequency_ghz: frequency_ghz,
            bandwidth_ghz: 0.0,
            amplitude,
            delay_s: 0.0,
        }
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        SourceWaveform { amplitude, ..self }
    }

    pub fn with_delay(self, delay_s: f64) -> Self {
        SourceWaveform { delay_s, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency_ghz > 0.0) {
            return Err(Error::Validation("waveform centre frequency must be positive".into()));
        }
        if self.kind == WaveformKind::GaussianModulatedSine && !(self.bandwidth_ghz > 0.0) {
            return Err(Error::Validation("gaussian waveform needs a positive bandwidth".into()));
        }
        if !self.amplitude.is_finite() || !(self.delay_s >= 0.0) {
            return Err(Error::Validation("waveform amplitude/delay must be finite".into()));
        }
        Ok(())
    }

    /// Gaussian envelope width τ (s).
    pub fn tau(&self) -> f64 {
        // exp(-(π τ B/2)²) = 10^(-10/20)
        2.0 * (10f64.ln() / 2.0).sqrt() / (PI * self.bandwidth_ghz * 1e9)
    }

    fn omega(&self) -> f64 {
        2.0 * PI * self.center_frequency_ghz * 1e9
    }

    fn t0(&self) -> f64 {
        match self.kind {
            WaveformKind::GaussianModulatedSine => 3.5 * self.tau() + self.delay_s,
            WaveformKind::ContinuousSine => self.delay_s,
        }
    }

    /// Value at time `t` with an extra carrier phase `phase` (rad).
    pub fn value(&self, t: f64, phase: f64) -> f64 {
        let u = t - self.t0();
        match self.kind {
            WaveformKind::GaussianModulatedSine => {
                let x = u / self.tau();
                self.amplitude * (-x * x).exp() * (self.omega() * u + phase).sin()
            }
            WaveformKind::ContinuousSine => {
                if u <= 0.0 {
                    return 0.0;
                }
                let ramp_t = RAMP_PERIODS / (self.center_frequency_ghz * 1e9);
                let ramp = if u >= ramp_t {
                    1.0
                } else {
                    0.5 * (1.0 - (PI * u / ramp_t).cos())
                };
                self.amplitude * ramp * (self.omega() * u + phase).sin()
            }
        }
    }

    /// Time after which the source is negligible; `None` for a continuous
    /// source.
    pub fn extinction_time(&self) -> Option<f64> {
        match self.kind {
            WaveformKind::GaussianModulatedSine => Some(2.0 * self.t0() - self.delay_s),
            WaveformKind::ContinuousSine => None,
        }
    }

    /// Band over which the spectrum stays within 40 dB of its peak (GHz).
    pub fn usable_band_ghz(&self) -> (f64, f64) {
        match self.kind {
            WaveformKind::GaussianModulatedSine => {
                let half = (100f64.ln()).sqrt() / (PI * self.tau()) / 1e9;
                (
                    (self.center_frequency_ghz - half).max(0.0),
                    self.center_frequency_ghz + half,
                )
            }
            WaveformKind::ContinuousSine => {
                let f = self.center_frequency_ghz;
                (f * (1.0 - 1e-9), f * (1.0 + 1e-9))
            }
        }
    }

    pub fn check_band(&self, freq_ghz: f64) -> Result<()> {
        let (lo, hi) = self.usable_band_ghz();
        if freq_ghz < lo || freq_ghz > hi {
            return Err(Error::Bandwidth {
                freq_ghz,
                lo_ghz: lo,
                hi_ghz: hi,
            });
        }
        Ok(())
    }

    /// Discrete Fourier transform of the waveform sampled at
    /// `(n + offset)·dt` for `n` in `n0..n1`, matching the solver's
    /// accumulation.
    pub fn dft(&self, freq_hz: f64, dt: f64, offset: f64, n0: usize, n1: usize) -> Complex64 {
        let w = 2.0 * PI * freq_hz;
        let mut acc = Complex64::new(0.0, 0.0);
        for n in n0..n1 {
            let t = (n as f64 + offset) * dt;
            acc += self.value(t, 0.0) * Complex64::from_polar(dt, -w * t);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum_db(w: &SourceWaveform, f_ghz: f64) -> f64 {
        let dt = 1e-13;
        let n = (2.0 * w.extinction_time().unwrap() / dt) as usize;
        let peak = w.dft(w.center_frequency_ghz * 1e9, dt, 0.0, 0, n).norm();
        20.0 * (w.dft(f_ghz * 1e9, dt, 0.0, 0, n).norm() / peak).log10()
    }

    #[test]
    fn default_pulse_suppresses_dc() {
        let w = SourceWaveform::default();
        assert!(spectrum_db(&w, 0.0) < -60.0, "{}", spectrum_db(&w, 0.0));
    }

    #[test]
    fn default_pulse_covers_50_to_120() {
        let w = SourceWaveform::default();
        for f in [50.0, 60.0, 110.0, 120.0] {
            assert!(spectrum_db(&w, f) > -12.0, "{f}: {}", spectrum_db(&w, f));
        }
        assert!((spectrum_db(&w, 85.0 + 34.0) + 10.0).abs() < 0.3);
    }

    #[test]
    fn band_check() {
        let w = SourceWaveform::default();
        assert!(w.check_band(60.0).is_ok());
        assert!(matches!(w.check_band(300.0), Err(Error::Bandwidth { .. })));
    }

    #[test]
    fn zero_bandwidth_gaussian_is_invalid() {
        let w = SourceWaveform {
            bandwidth_ghz: 0.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn continuous_ramps_from_zero() {
        let w = SourceWaveform::continuous(60.0, 2.0);
        assert_eq!(w.value(0.0, 0.0), 0.0);
        let t = 10.25 / 60e9;
        assert!((w.value(t, 0.0) - 2.0).abs() < 1e-9);
    }
}
