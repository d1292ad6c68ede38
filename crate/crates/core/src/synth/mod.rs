//! Additive synthesis from spectral peaks with hysteresis-smoothed retuning.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acoustics::SpectralPeakSet;
use crate::error::{Error, Result};

/// Envelope ceiling; `tanh` rounds to exactly 1 for large arguments.
pub const MAX_AMPLITUDE: f64 = 1.0 - 1e-9;

/// `A = tanh(α|p'|)`, kept strictly below one.
pub fn amplitude_envelope(p_prime: f64, alpha: f64) -> f64 {
    let a = (alpha * p_prime.abs()).tanh();
    if a.is_nan() {
        return 0.0;
    }
    a.min(MAX_AMPLITUDE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HysteresisSpec {
    /// A new peak must exceed this multiple of the weakest oscillator's weight.
    pub attack_ratio: f64,
    /// Blocks a retired oscillator keeps sounding; also the minimum spacing
    /// between admissions.
    pub hold_blocks: u32,
    /// Maximum relative frequency change per block.
    pub slew_limit: f64,
    /// Weight smoothing time constant in seconds.
    pub smoothing_time: f64,
    /// Relative frequency distance within which a peak is the same partial.
    pub capture_ratio: f64,
    /// Per-block weight factor while holding.
    pub hold_decay: f64,
}

impl Default for HysteresisSpec {
    fn default() -> Self {
        Self {
            attack_ratio: 1.25,
            hold_blocks: 4,
            slew_limit: 0.03,
            smoothing_time: 0.05,
            capture_ratio: 0.15,
            hold_decay: 0.5,
        }
    }
}

impl HysteresisSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.attack_ratio > 1.0) || !self.attack_ratio.is_finite() {
            return Err(Error::Config(format!("attack_ratio must exceed 1, got {}", self.attack_ratio)));
        }
        if !(self.slew_limit > 0.0 && self.slew_limit < 1.0) {
            return Err(Error::Config(format!("slew_limit must lie in (0, 1), got {}", self.slew_limit)));
        }
        if !(self.smoothing_time >= 0.0) || !self.smoothing_time.is_finite() {
            return Err(Error::Config(format!("smoothing_time must be >= 0, got {}", self.smoothing_time)));
        }
        if !(self.capture_ratio > 0.0 && self.capture_ratio < 1.0) {
            return Err(Error::Config(format!("capture_ratio must lie in (0, 1), got {}", self.capture_ratio)));
        }
        if !(self.hold_decay > 0.0 && self.hold_decay <= 1.0) {
            return Err(Error::Config(format!("hold_decay must lie in (0, 1], got {}", self.hold_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub alpha: f64,
    pub sample_rate: u32,
    pub block_size: usize,
    pub max_oscillators: usize,
    pub fallback_omega_d: f64,
    pub hysteresis: HysteresisSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0e3,
            sample_rate: 44100,
            block_size: 512,
            max_oscillators: 8,
            fallback_omega_d: TAU * 220.0,
            hysteresis: HysteresisSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Config("block_size must be positive".into()));
        }
        if self.max_oscillators == 0 {
            return Err(Error::Config("max_oscillators must be positive".into()));
        }
        if !(self.fallback_omega_d > 0.0) || self.fallback_omega_d >= PI * self.sample_rate as f64 {
            return Err(Error::Config(format!(
                "fallback_omega_d must lie in (0, π·sample_rate), got {}",
                self.fallback_omega_d
            )));
        }
        self.hysteresis.validate()
    }

    pub fn block_duration(&self) -> f64 {
        self.block_size as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    pub omega: f64,
    pub weight: f64,
    pub phase: f64,
    /// Consecutive blocks without a matching peak.
    pub unmatched_blocks: u32,
    /// Remaining blocks for a displaced oscillator; `None` while it holds a slot.
    pub retiring: Option<u32>,
    pub fallback: bool,
    pub age: u64,
}

impl Oscillator {
    fn new(omega: f64, weight: f64, phase: f64) -> Self {
        Self {
            omega,
            weight,
            phase: phase.rem_euclid(TAU),
            unmatched_blocks: 0,
            retiring: None,
            fallback: false,
            age: 0,
        }
    }
}

/// Steady tone at `ω_d` and full weight.
pub fn fallback_tone(config: &SynthConfig) -> Oscillator {
    Oscillator {
        fallback: true,
        ..Oscillator::new(config.fallback_omega_d, 1.0, 0.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OscillatorBank {
    oscillators: Vec<Oscillator>,
    amplitude: f64,
    cooldown: u32,
    fallback_phase: f64,
    samples_rendered: u64,
    /// Blocks in which an oscillator was admitted into a bank that already sounded.
    pub retune_events: u64,
    pub updates: u64,
}

impl OscillatorBank {
    pub fn new(config: &SynthConfig) -> Self {
        Self {
            oscillators: Vec::with_capacity(2 * config.max_oscillators + 1),
            ..Self::default()
        }
    }

    pub fn oscillators(&self) -> &[Oscillator] {
        &self.oscillators
    }

    pub fn len(&self) -> usize {
        self.oscillators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oscillators.is_empty()
    }

    pub fn fallback_engaged(&self) -> bool {
        self.oscillators.iter().any(|o| o.fallback)
    }

    pub fn weight_sum(&self) -> f64 {
        self.oscillators.iter().map(|o| o.weight).sum()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn time(&self, sample_rate: u32) -> f64 {
        self.samples_rendered as f64 / sample_rate as f64
    }

    /// Sounding frequencies, slot oscillators first.
    pub fn frequencies_hz(&self) -> Vec<f64> {
        self.oscillators.iter().map(|o| o.omega / TAU).collect()
    }

    fn normalize(&mut self) {
        let total = self.weight_sum();
        if total > 0.0 {
            for o in &mut self.oscillators {
                o.weight /= total;
            }
        }
    }
}

/// One analysis hop of bank maintenance.
pub fn update_bank(bank: &mut OscillatorBank, peaks: &SpectralPeakSet, config: &SynthConfig) {
    let spec = &config.hysteresis;
    let beta = if spec.smoothing_time > 0.0 {
        1.0 - (-config.block_duration() / spec.smoothing_time).exp()
    } else {
        1.0
    };
    bank.updates += 1;
    bank.cooldown = bank.cooldown.saturating_sub(1);
    let was_sounding = bank.oscillators.iter().any(|o| !o.fallback);

    // displaced oscillators run out their hold and leave
    bank.oscillators.retain_mut(|o| match o.retiring.as_mut() {
        Some(left) if *left <= 1 => false,
        Some(left) => {
            *left -= 1;
            o.weight *= spec.hold_decay;
            true
        }
        None => true,
    });

    let mut peak_claimed = vec![false; peaks.len()];
    let mut matched = vec![false; bank.oscillators.len()];
    for (pi, peak) in peaks.peaks.iter().enumerate() {
        let best = bank
            .oscillators
            .iter()
            .enumerate()
            .filter(|(i, o)| !matched[*i] && !o.fallback && o.retiring.is_none())
            .map(|(i, o)| (i, (peak.omega - o.omega).abs() / o.omega))
            .filter(|&(_, d)| d <= spec.capture_ratio)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = best {
            let o = &mut bank.oscillators[i];
            let max_step = spec.slew_limit * o.omega;
            o.omega += (peak.omega - o.omega).clamp(-max_step, max_step);
            o.weight += beta * (peak.weight - o.weight);
            o.unmatched_blocks = 0;
            matched[i] = true;
            peak_claimed[pi] = true;
        }
    }

    let mut removed_fallback_phase = None;
    let mut keep = matched.iter();
    bank.oscillators.retain_mut(|o| {
        let was_matched = *keep.next().unwrap_or(&true);
        if was_matched || o.retiring.is_some() {
            return true;
        }
        o.unmatched_blocks += 1;
        o.weight *= spec.hold_decay;
        let stay = o.unmatched_blocks < spec.hold_blocks.max(1);
        if !stay && o.fallback {
            removed_fallback_phase = Some(o.phase);
        }
        stay
    });
    if let Some(phase) = removed_fallback_phase {
        bank.fallback_phase = phase;
    }

    let empty = bank.oscillators.iter().all(|o| o.retiring.is_some());
    if bank.cooldown == 0 || empty {
        let mut admitted = false;
        for (pi, peak) in peaks.peaks.iter().enumerate() {
            if peak_claimed[pi] || peak.omega <= 0.0 {
                continue;
            }
            let slots = bank.oscillators.iter().filter(|o| o.retiring.is_none()).count();
            let osc = Oscillator::new(peak.omega, peak.weight, peak.phase);
            if slots < config.max_oscillators {
                bank.oscillators.push(osc);
                admitted = true;
                continue;
            }
            let weakest = bank
                .oscillators
                .iter()
                .enumerate()
                .filter(|(_, o)| o.retiring.is_none())
                .min_by(|a, b| a.1.weight.total_cmp(&b.1.weight))
                .map(|(i, o)| (i, o.weight));
            if let Some((i, w)) = weakest {
                if peak.weight > spec.attack_ratio * w {
                    let displaced = &mut bank.oscillators[i];
                    if displaced.fallback {
                        bank.fallback_phase = displaced.phase;
                    }
                    displaced.retiring = Some(spec.hold_blocks);
                    displaced.fallback = false;
                    bank.oscillators.push(osc);
                    admitted = true;
                }
            }
        }
        if admitted {
            bank.cooldown = spec.hold_blocks;
            if was_sounding {
                bank.retune_events += 1;
            }
        }
    }

    bank.oscillators.retain(|o| o.retiring != Some(0));
    if bank.oscillators.is_empty() && peaks.is_empty() {
        bank.oscillators.push(Oscillator {
            phase: bank.fallback_phase,
            ..fallback_tone(config)
        });
    }
    for o in &mut bank.oscillators {
        o.age += 1;
    }
    bank.normalize();
}

/// Renders `out.len()` samples, ramping the amplitude linearly from the
/// previous block's value to `amplitude`. Performs no allocation.
pub fn render_into(bank: &mut OscillatorBank, amplitude: f64, sample_rate: u32, out: &mut [f32]) {
    let a0 = bank.amplitude;
    let a1 = amplitude.clamp(0.0, MAX_AMPLITUDE);
    let n = out.len();
    let inv_rate = 1.0 / sample_rate as f64;
    for (i, s) in out.iter_mut().enumerate() {
        let a = if a0 == a1 { a1 } else { a0 + (a1 - a0) * (i + 1) as f64 / n as f64 };
        let mut acc = 0.0;
        for o in bank.oscillators.iter_mut() {
            acc += o.weight * o.phase.sin();
            o.phase += o.omega * inv_rate;
            if o.phase >= TAU {
                o.phase -= TAU;
            }
        }
        *s = (a * acc).clamp(-1.0, 1.0) as f32;
    }
    bank.amplitude = a1;
    bank.samples_rendered += n as u64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioBlock {
    pub samples: Vec<f32>,
    pub start_time: f64,
}

pub fn render_block(bank: &mut OscillatorBank, amplitude: f64, config: &SynthConfig) -> AudioBlock {
    let start_time = bank.time(config.sample_rate);
    let mut samples = vec![0.0; config.block_size];
    render_into(bank, amplitude, config.sample_rate, &mut samples);
    AudioBlock { samples, start_time }
}

/// Mono 16-bit PCM.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io = |e: hound::Error| Error::Io(e.to_string());
    let mut writer = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in samples {
        writer
            .write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)
            .map_err(io)?;
    }
    writer.finalize().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics::SpectralPeak;

    fn peaks(parts: &[(f64, f64)]) -> SpectralPeakSet {
        let total: f64 = parts.iter().map(|p| p.1).sum();
        SpectralPeakSet {
            peaks: parts
                .iter()
                .enumerate()
                .map(|(i, &(hz, m))| SpectralPeak {
                    bin: i + 1,
                    omega: TAU * hz,
                    magnitude: m,
                    phase: 0.0,
                    weight: m / total,
                })
                .collect(),
            window: None,
        }
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(amplitude_envelope(0.0, 3.0), 0.0);
        assert_eq!(amplitude_envelope(-0.4, 2.0), amplitude_envelope(0.4, 2.0));
        assert!((amplitude_envelope(0.5, 2.0) - 0.76159).abs() < 1e-5);
        assert!(amplitude_envelope(1e6, 1e6) < 1.0);
        assert!(amplitude_envelope(1.0, 1.0) <= amplitude_envelope(2.0, 1.0));
    }

    #[test]
    fn fallback_when_nothing_to_play() {
        let cfg = SynthConfig::default();
        let mut bank = OscillatorBank::new(&cfg);
        update_bank(&mut bank, &SpectralPeakSet::default(), &cfg);
        assert!(bank.fallback_engaged());
        assert_eq!(bank.oscillators()[0].omega, cfg.fallback_omega_d);
        let block = render_block(&mut bank, 0.3, &cfg);
        assert!(block.samples.iter().any(|s| s.abs() > 0.0));

        // peaks reappear: the tone fades through the hold rather than cutting out
        update_bank(&mut bank, &peaks(&[(300.0, 1.0)]), &cfg);
        assert!(bank.fallback_engaged());
        assert_eq!(bank.len(), 2);
        for _ in 0..cfg.hysteresis.hold_blocks {
            update_bank(&mut bank, &peaks(&[(300.0, 1.0)]), &cfg);
        }
        assert!(!bank.fallback_engaged());
        assert!((bank.weight_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_peaks_are_a_fixed_point() {
        let cfg = SynthConfig::default();
        let mut bank = OscillatorBank::new(&cfg);
        let p = peaks(&[(120.0, 2.0), (300.0, 1.0)]);
        update_bank(&mut bank, &p, &cfg);
        let before = bank.frequencies_hz();
        update_bank(&mut bank, &p, &cfg);
        assert_eq!(bank.frequencies_hz(), before);
        assert_eq!(bank.retune_events, 0);
    }

    #[test]
    fn slew_is_bounded() {
        let cfg = SynthConfig::default();
        let mut bank = OscillatorBank::new(&cfg);
        update_bank(&mut bank, &peaks(&[(120.0, 1.0)]), &cfg);
        update_bank(&mut bank, &peaks(&[(125.0, 1.0)]), &cfg);
        let hz = bank.frequencies_hz()[0];
        assert!((hz - 123.6).abs() < 1e-9, "{hz}");
    }

    #[test]
    fn weak_newcomer_is_rejected_when_full() {
        let cfg = SynthConfig {
            max_oscillators: 2,
            ..SynthConfig::default()
        };
        let mut bank = OscillatorBank::new(&cfg);
        let base = [(100.0, 1.0), (400.0, 1.0)];
        for _ in 0..10 {
            update_bank(&mut bank, &peaks(&base), &cfg);
        }
        let members = bank.frequencies_hz();
        // newcomer at 1.1x the weakest member
        let w = bank.oscillators()[0].weight;
        let mut p = peaks(&base);
        p.peaks.push(SpectralPeak {
            bin: 9,
            omega: TAU * 900.0,
            magnitude: 1.1,
            phase: 0.0,
            weight: 1.1 * w,
        });
        update_bank(&mut bank, &p, &cfg);
        assert_eq!(bank.frequencies_hz(), members);
    }

    #[test]
    fn abab_flapping_is_rate_limited() {
        let cfg = SynthConfig::default();
        let a: Vec<(f64, f64)> = (0..8).map(|i| (100.0 * 1.5f64.powi(i), 1.0)).collect();
        let b: Vec<(f64, f64)> = (0..8).map(|i| (123.0 * 1.5f64.powi(i), 1.0)).collect();
        let mut bank = OscillatorBank::new(&cfg);
        let mut events = Vec::new();
        for block in 0..64 {
            let before = bank.retune_events;
            update_bank(&mut bank, &peaks(if block % 2 == 0 { &a } else { &b }), &cfg);
            if bank.retune_events > before {
                events.push(block);
            }
            assert!((bank.weight_sum() - 1.0).abs() < 1e-9);
        }
        assert!(!events.is_empty());
        for w in events.windows(2) {
            assert!(w[1] - w[0] >= cfg.hysteresis.hold_blocks as usize);
        }
    }

    #[test]
    fn zero_amplitude_renders_silence() {
        let cfg = SynthConfig::default();
        let mut bank = OscillatorBank::new(&cfg);
        update_bank(&mut bank, &peaks(&[(220.0, 1.0)]), &cfg);
        let block = render_block(&mut bank, 0.0, &cfg);
        assert!(block.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn single_oscillator_follows_sine_envelope() {
        let cfg = SynthConfig::default();
        let mut bank = OscillatorBank::new(&cfg);
        update_bank(&mut bank, &peaks(&[(220.0, 1.0)]), &cfg);
        bank.amplitude = 0.5;
        let block = render_block(&mut bank, 0.5, &cfg);
        for (i, s) in block.samples.iter().enumerate() {
            let expect = 0.5 * (TAU * 220.0 * i as f64 / 44100.0).sin();
            assert!((*s as f64 - expect).abs() < 1e-6);
            assert!(s.abs() <= 0.5);
        }
    }

    #[test]
    fn split_render_matches_long_render() {
        let cfg = SynthConfig::default();
        let mut bank = OscillatorBank::new(&cfg);
        update_bank(&mut bank, &peaks(&[(220.0, 2.0), (331.0, 1.0)]), &cfg);
        bank.amplitude = 0.4;
        let mut split = bank.clone();
        let mut long = vec![0.0f32; 1024];
        render_into(&mut bank, 0.4, 44100, &mut long);
        let mut parts = vec![0.0f32; 1024];
        let (x, y) = parts.split_at_mut(300);
        render_into(&mut split, 0.4, 44100, x);
        render_into(&mut split, 0.4, 44100, y);
        assert_eq!(long, parts);

        let step: f64 = bank.oscillators().iter().map(|o| o.weight * o.omega).sum::<f64>() / 44100.0 * 0.4 * 1.0001;
        assert!(long.windows(2).all(|w| ((w[1] - w[0]) as f64).abs() <= step));
    }

    #[test]
    fn wav_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav(&path, &[0.0, 0.5, -1.0, 1.0], 44100).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        assert_eq!(bytes.len(), 44 + 8);
        let data: Vec<i16> = bytes[44..].chunks(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
        assert_eq!(data, vec![0, 16384, -32767, 32767]);
    }
}
