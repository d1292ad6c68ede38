//! Headless runs: force logs, per-window analysis tables, recorded audio.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Engine, EngineConfig};
use crate::acoustics::{AcousticPipeline, AcousticsConfig, AnalysisFrame, ForceSample, ObserverConfig};
use crate::error::{Error, Result};
use crate::fluid::StepDiagnostics;
use crate::geometry::Vec3;
use crate::synth::render_block;

/// One line of a run log (JSON lines).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        dt: f64,
        source: Vec3,
        observer: ObserverConfig,
        acoustics: AcousticsConfig,
    },
    Force(ForceSample),
}

pub struct RunLogWriter<W: Write> {
    out: W,
}

impl<W: Write> RunLogWriter<W> {
    pub fn new(mut out: W, config: &EngineConfig) -> Result<Self> {
        let header = LogRecord::Header {
            dt: config.solver.dt,
            source: config.sphere.center,
            observer: config.observer.clone(),
            acoustics: config.acoustics.clone(),
        };
        write_record(&mut out, &header)?;
        Ok(Self { out })
    }

    pub fn force(&mut self, sample: &ForceSample) -> Result<()> {
        write_record(&mut self.out, &LogRecord::Force(*sample))
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

fn write_record(out: &mut impl Write, record: &LogRecord) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out, "{line}")?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub source: Vec3,
    pub observer: ObserverConfig,
    pub acoustics: AcousticsConfig,
    pub samples: Vec<ForceSample>,
}

impl RunLog {
    pub fn read(input: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut samples = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: LogRecord = serde_json::from_str(&line)
                .map_err(|e| Error::InvalidArgument(format!("run log line {}: {e}", i + 1)))?;
            match record {
                LogRecord::Header {
                    source,
                    observer,
                    acoustics,
                    ..
                } => {
                    if header.is_some() {
                        return Err(Error::InvalidArgument(format!("run log line {}: second header", i + 1)));
                    }
                    header = Some((source, observer, acoustics));
                }
                LogRecord::Force(s) => {
                    if header.is_none() {
                        return Err(Error::InvalidArgument("run log has no header".into()));
                    }
                    samples.push(s);
                }
            }
        }
        let (source, observer, acoustics) =
            header.ok_or_else(|| Error::InvalidArgument("run log has no header".into()))?;
        Ok(Self {
            source,
            observer,
            acoustics,
            samples,
        })
    }

    /// Replays the samples through a fresh pipeline.
    pub fn analyze(&self) -> Result<Vec<AnalysisFrame>> {
        let mut pipeline = AcousticPipeline::new(self.acoustics.clone(), self.observer.clone(), self.source)?;
        let mut frames = Vec::new();
        for s in &self.samples {
            if let Some(f) = pipeline.push(*s)? {
                frames.push(f);
            }
        }
        Ok(frames)
    }
}

/// Columns: time, |p'|, peak frequencies (Hz) and weights, `;`-separated.
pub fn write_frames_csv(frames: &[AnalysisFrame], mut out: impl Write) -> Result<()> {
    writeln!(out, "time,p_prime_abs,peak_freqs_hz,peak_weights")?;
    for f in frames {
        let freqs: Vec<String> = f.peaks.peaks.iter().map(|p| format!("{:.6}", p.freq_hz())).collect();
        let weights: Vec<String> = f.peaks.peaks.iter().map(|p| format!("{:.6}", p.weight)).collect();
        writeln!(
            out,
            "{:.9},{:.9e},{},{}",
            f.time,
            f.p_prime.abs(),
            freqs.join(";"),
            weights.join(";")
        )?;
    }
    Ok(())
}

pub const DIAGNOSTICS_HEADER: &str =
    "step,time,divergence_before,divergence_after,max_divergence,solver_method,solver_iterations,solver_residual,step_seconds";

pub fn diagnostics_row(step: u64, time: f64, d: &StepDiagnostics) -> String {
    let method = match d.solver_method {
        Some(m) => serde_json::to_value(m)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
        None => String::new(),
    };
    format!(
        "{step},{time:.9},{:.6e},{:.6e},{:.6e},{method},{},{:.3e},{:.6}",
        d.divergence_before, d.divergence_after, d.max_divergence, d.solver_iterations, d.solver_residual, d.step_seconds
    )
}

/// Renders `seconds` of audio, advancing the simulation at the configured
/// real-time step rate. Returns the samples and the number of steps taken.
pub fn record_audio(engine: &mut Engine, seconds: f64) -> Result<(Vec<f32>, u64)> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::InvalidArgument("seconds must be positive".into()));
    }
    let synth = engine.analysis.synth().clone();
    let total = (seconds * synth.sample_rate as f64).round() as usize;
    let steps_per_block = engine.simulation.config().target_steps_per_second as f64 * synth.block_duration();
    let mut owed = 0.0;
    let mut steps = 0u64;
    let mut out = Vec::with_capacity(total + synth.block_size);
    while out.len() < total {
        owed += steps_per_block;
        while owed >= 1.0 {
            engine.step()?;
            owed -= 1.0;
            steps += 1;
        }
        let amplitude = engine.analysis.amplitude();
        let block = render_block(engine.analysis.bank_mut(), amplitude, &synth);
        out.extend_from_slice(&block.samples);
    }
    out.truncate(total);
    Ok((out, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;

    #[test]
    fn log_roundtrip_and_rejects() {
        let config = EngineConfig::default();
        let mut w = RunLogWriter::new(Vec::new(), &config).unwrap();
        let s = ForceSample {
            t: 0.001,
            force: Vec3::new(1.0, -2.0, 0.5),
        };
        w.force(&s).unwrap();
        let bytes = w.finish().unwrap();
        let log = RunLog::read(bytes.as_slice()).unwrap();
        assert_eq!(log.samples, vec![s]);
        assert_eq!(log.observer, config.observer);
        assert!(RunLog::read(&b"{\"type\":\"force\",\"t\":0,\"force\":[0,0,0]}\n"[..]).is_err());
        assert!(RunLog::read(&b""[..]).is_err());
    }

    #[test]
    fn recording_has_requested_length() {
        let config = EngineConfig {
            grid: GridSpec::unit_cube(25),
            ..EngineConfig::default()
        };
        let mut engine = Engine::new(config).unwrap();
        let (samples, steps) = record_audio(&mut engine, 0.1).unwrap();
        assert_eq!(samples.len(), 4410);
        assert_eq!(steps, 3);
        assert!(samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    }
}
