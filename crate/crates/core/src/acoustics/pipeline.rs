use serde::{Deserialize, Serialize};

use super::{
    detect_peaks, force_derivative, fwh_pressure, retarded_delay, sliding_spectrum, ForceHistory, ForceSample,
    ObserverConfig, RetardedQueue, SpectralPeakSet, DEFAULT_QUADRATURE_POINTS,
};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcousticsConfig {
    pub window_length: usize,
    pub hop: usize,
    pub max_peaks: usize,
    pub min_prominence: f64,
    pub quadrature_points: usize,
}

impl Default for AcousticsConfig {
    fn default() -> Self {
        Self {
            window_length: 256,
            hop: 64,
            max_peaks: 8,
            min_prominence: 0.05,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
        }
    }
}

impl AcousticsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length < 4 {
            return Err(Error::Config(format!("window_length must be at least 4, got {}", self.window_length)));
        }
        if self.hop == 0 || self.hop > self.window_length {
            return Err(Error::Config(format!("hop must lie in 1..={}, got {}", self.window_length, self.hop)));
        }
        if !(0.0..=1.0).contains(&self.min_prominence) {
            return Err(Error::Config(format!("min_prominence must lie in [0, 1], got {}", self.min_prominence)));
        }
        if self.quadrature_points == 0 {
            return Err(Error::Config("quadrature_points must be positive".into()));
        }
        Ok(())
    }
}

/// Output of one analysis hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisFrame {
    pub time: f64,
    pub p_prime: f64,
    pub peaks: SpectralPeakSet,
}

/// Force history, far-field pressure and hop-driven spectral analysis.
#[derive(Clone, Debug)]
pub struct AcousticPipeline {
    config: AcousticsConfig,
    observer: ObserverConfig,
    source: Vec3,
    history: ForceHistory,
    queue: RetardedQueue,
    since_analysis: usize,
    p_prime: f64,
    peaks: SpectralPeakSet,
}

impl AcousticPipeline {
    pub fn new(config: AcousticsConfig, observer: ObserverConfig, source: Vec3) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            history: ForceHistory::new(config.window_length + 2),
            config,
            observer,
            source,
            queue: RetardedQueue::default(),
            since_analysis: 0,
            p_prime: 0.0,
            peaks: SpectralPeakSet::default(),
        })
    }

    pub fn config(&self) -> &AcousticsConfig {
        &self.config
    }

    pub fn observer(&self) -> &ObserverConfig {
        &self.observer
    }

    pub fn set_observer(&mut self, observer: ObserverConfig) {
        self.observer = observer;
        self.queue.clear();
    }

    pub fn history(&self) -> &ForceHistory {
        &self.history
    }

    pub fn p_prime(&self) -> f64 {
        self.p_prime
    }

    pub fn peaks(&self) -> &SpectralPeakSet {
        &self.peaks
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.queue.clear();
        self.since_analysis = 0;
        self.p_prime = 0.0;
        self.peaks = SpectralPeakSet::default();
    }

    /// Records one force sample; returns a frame every `hop` samples once the
    /// window is full.
    pub fn push(&mut self, sample: ForceSample) -> Result<Option<AnalysisFrame>> {
        self.history.push(sample)?;
        let emitted = match force_derivative(&self.history) {
            Ok(d) => fwh_pressure(&d, &self.observer, &self.source),
            Err(_) => 0.0,
        };
        self.p_prime = if self.observer.use_retarded_time {
            self.queue
                .push(sample.t, retarded_delay(&self.observer, &self.source), emitted);
            self.queue.advance(sample.t)
        } else {
            emitted
        };

        self.since_analysis += 1;
        let series = self.history.derivative_series();
        if series.len() < self.config.window_length || self.since_analysis < self.config.hop {
            return Ok(None);
        }
        self.since_analysis = 0;
        let dt = self.history.dt().unwrap_or(1.0);
        let spectrum = sliding_spectrum(&series, self.config.window_length, self.config.hop, dt)?;
        self.peaks = detect_peaks(&spectrum, self.config.max_peaks, self.config.min_prominence);
        Ok(Some(AnalysisFrame {
            time: sample.t,
            p_prime: self.p_prime,
            peaks: self.peaks.clone(),
        }))
    }
}
