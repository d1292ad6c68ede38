//! Simulation → force → analysis → synthesis orchestration, steering
//! commands and the streaming service.

mod channels;
mod offline;
mod server;
mod wire;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::acoustics::{
    surface_force, AcousticPipeline, AcousticsConfig, ForceSample, ObserverConfig, SpectralPeakSet, SurfaceQuadrature,
};
use crate::error::{Error, Result};
use crate::fluid::{FlowState, FluidSolver, ForcingSpec, SolveMethod, SolverConfig, StepDiagnostics};
use crate::geometry::{build_narrow_band, GridSpec, NarrowBand, Obstacle, SphereSurface, Vec3, DEFAULT_HALF_WIDTH_CELLS};
use crate::synth::{amplitude_envelope, update_bank, OscillatorBank, SynthConfig};

pub use channels::{Broadcast, DropOldestQueue, Mailbox};
pub use offline::{
    diagnostics_row, record_audio, write_frames_csv, LogRecord, RunLog, RunLogWriter, DIAGNOSTICS_HEADER,
};
pub use server::{run_loop, serve, ServerHandle};
pub use wire::{decode_f32_array, encode_f32_array, ClientMessage, Reply, ServerMessage, WirePeak};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub grid: GridSpec,
    pub sphere: SphereSurface,
    pub band_half_width_cells: f64,
    pub solver: SolverConfig,
    pub observer: ObserverConfig,
    pub acoustics: AcousticsConfig,
    pub synth: SynthConfig,
    pub obstacles: Vec<Obstacle>,
    pub target_steps_per_second: u32,
    pub snapshot_stride: u32,
    pub listen_address: String,
    pub force_queue_capacity: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            sphere: SphereSurface::default(),
            band_half_width_cells: DEFAULT_HALF_WIDTH_CELLS,
            solver: SolverConfig::default(),
            observer: ObserverConfig::default(),
            acoustics: AcousticsConfig::default(),
            synth: SynthConfig::default(),
            obstacles: vec![Obstacle {
                center_direction: Vec3::new(1.0, 0.0, 0.3).normalize(),
                geodesic_radius: 0.08,
                height: 0.03,
            }],
            target_steps_per_second: 30,
            snapshot_stride: 5,
            listen_address: "127.0.0.1:8765".into(),
            force_queue_capacity: 1024,
        }
    }
}

impl EngineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.sphere.validate()?;
        self.sphere
            .check_fits(&self.grid, self.band_half_width_cells * self.grid.spacing())?;
        self.solver.validate()?;
        self.observer
            .validate(&self.sphere)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.acoustics.validate()?;
        self.synth.validate()?;
        for o in &self.obstacles {
            o.clone()
                .validated(&self.sphere)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.snapshot_stride == 0 {
            return Err(Error::Config("snapshot_stride must be at least 1".into()));
        }
        if self.target_steps_per_second == 0 {
            return Err(Error::Config("target_steps_per_second must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Command {
    AddObstacle(Obstacle),
    RemoveObstacle(usize),
    SetForcing(ForcingSpec),
    SetObserver(Vec3),
    Pause,
    Resume,
    Reset,
    SetDt(f64),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiagnostics {
    pub divergence: f64,
    pub solver_iterations: usize,
    pub solver_method: Option<SolveMethod>,
    pub step_seconds: f64,
    pub overruns: u64,
    pub dropped_force_samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: u64,
    pub step: u64,
    pub time: f64,
    pub paused: bool,
    /// Pressure at the quadrature lattice nodes.
    pub pressure: Vec<f32>,
    pub speed: Vec<f32>,
    pub obstacles: Vec<Obstacle>,
    pub p_prime: f64,
    pub peaks: SpectralPeakSet,
    pub diagnostics: SnapshotDiagnostics,
    pub error: Option<String>,
}

/// Parameters for client-side synthesis, one per analysis hop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioParams {
    pub epoch: u64,
    pub time: f64,
    pub amplitude: f64,
    pub p_prime: f64,
    pub peaks: SpectralPeakSet,
}

/// Work item crossing from the simulation to the analysis task.
#[derive(Clone, Debug, PartialEq)]
pub enum AnalysisInput {
    Sample { epoch: u64, timeline: u64, sample: ForceSample },
    Observer(ObserverConfig),
}

/// Sole owner and writer of the flow state.
#[derive(Debug)]
pub struct Simulation {
    config: EngineConfig,
    band: Arc<NarrowBand>,
    solver: FluidSolver,
    quadrature: SurfaceQuadrature,
    state: FlowState,
    observer: ObserverConfig,
    paused: bool,
    epoch: u64,
    timeline: u64,
    last: Option<StepDiagnostics>,
    error: Option<String>,
}

impl Simulation {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let band = Arc::new(build_narrow_band(&config.grid, &config.sphere, config.band_half_width_cells)?);
        let solver = FluidSolver::new(band.clone(), config.solver.clone())?;
        let quadrature = SurfaceQuadrature::new(&band, config.acoustics.quadrature_points)?;
        let obstacles = validated_obstacles(&config)?;
        let state = solver.initial_state(obstacles);
        Ok(Self {
            observer: config.observer.clone(),
            config,
            band,
            solver,
            quadrature,
            state,
            paused: false,
            epoch: 0,
            timeline: 0,
            last: None,
            error: None,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn band(&self) -> &Arc<NarrowBand> {
        &self.band
    }

    pub fn solver(&self) -> &FluidSolver {
        &self.solver
    }

    pub fn quadrature(&self) -> &SurfaceQuadrature {
        &self.quadrature
    }

    pub fn state(&self) -> &FlowState {
        &self.state
    }

    pub fn observer(&self) -> &ObserverConfig {
        &self.observer
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn timeline(&self) -> u64 {
        self.timeline
    }

    pub fn last_diagnostics(&self) -> Option<&StepDiagnostics> {
        self.last.as_ref()
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    /// Validates and applies one command. Nothing changes on rejection.
    pub fn apply(&mut self, command: &Command) -> std::result::Result<Option<AnalysisInput>, String> {
        match command {
            Command::AddObstacle(o) => {
                let o = o.clone().validated(&self.config.sphere).map_err(|e| e.to_string())?;
                self.state.obstacles.push(o);
                self.solver.impose_obstacles(&mut self.state);
            }
            Command::RemoveObstacle(i) => {
                if *i >= self.state.obstacles.len() {
                    return Err(format!(
                        "obstacle index {i} out of range ({} present)",
                        self.state.obstacles.len()
                    ));
                }
                self.state.obstacles.remove(*i);
                self.solver.impose_obstacles(&mut self.state);
            }
            Command::SetForcing(f) => self.solver.set_forcing(f.clone()).map_err(|e| e.to_string())?,
            Command::SetObserver(position) => {
                let observer = ObserverConfig {
                    position: *position,
                    ..self.observer.clone()
                };
                observer.validate(&self.config.sphere).map_err(|e| e.to_string())?;
                self.observer = observer.clone();
                return Ok(Some(AnalysisInput::Observer(observer)));
            }
            Command::Pause => self.paused = true,
            Command::Resume => {
                self.paused = false;
                self.error = None;
            }
            Command::Reset => {
                self.reset().map_err(|e| e.to_string())?;
                return Ok(Some(AnalysisInput::Observer(self.observer.clone())));
            }
            Command::SetDt(dt) => {
                self.solver.set_dt(*dt).map_err(|e| e.to_string())?;
                self.timeline += 1;
            }
        }
        Ok(None)
    }

    /// Returns to the configured initial state under a new epoch.
    pub fn reset(&mut self) -> Result<()> {
        self.solver.set_forcing(self.config.solver.forcing.clone())?;
        self.solver.set_dt(self.config.solver.dt)?;
        self.state = self.solver.initial_state(validated_obstacles(&self.config)?);
        self.observer = self.config.observer.clone();
        self.epoch += 1;
        self.timeline += 1;
        self.last = None;
        self.error = None;
        Ok(())
    }

    /// One fluid step and its force sample. A solver failure pauses the
    /// simulation and leaves the state untouched.
    pub fn step(&mut self) -> Result<AnalysisInput> {
        match self.solver.step(&self.state) {
            Ok((next, diag)) => {
                self.state = next;
                self.last = Some(diag);
                let sample = surface_force(&self.state.p, &self.quadrature, self.state.time);
                Ok(AnalysisInput::Sample {
                    epoch: self.epoch,
                    timeline: self.timeline,
                    sample,
                })
            }
            Err(e) => {
                warn!("step {} failed: {e}; pausing", self.state.step_count + 1);
                self.paused = true;
                self.error = Some(e.to_string());
                Err(e)
            }
        }
    }

    pub fn snapshot(&self, p_prime: f64, peaks: SpectralPeakSet, overruns: u64, dropped: u64) -> Snapshot {
        let diag = self.last.clone().unwrap_or_default();
        Snapshot {
            epoch: self.epoch,
            step: self.state.step_count,
            time: self.state.time,
            paused: self.paused,
            pressure: self.quadrature.sample(&self.state.p).into_iter().map(|v| v as f32).collect(),
            speed: self.quadrature.sample_speed(&self.state.u).into_iter().map(|v| v as f32).collect(),
            obstacles: self.state.obstacles.clone(),
            p_prime,
            peaks,
            diagnostics: SnapshotDiagnostics {
                divergence: diag.divergence_after,
                solver_iterations: diag.solver_iterations,
                solver_method: diag.solver_method,
                step_seconds: diag.step_seconds,
                overruns,
                dropped_force_samples: dropped,
            },
            error: self.error.clone(),
        }
    }
}

fn validated_obstacles(config: &EngineConfig) -> Result<Vec<Obstacle>> {
    config
        .obstacles
        .iter()
        .map(|o| o.clone().validated(&config.sphere))
        .collect()
}

/// Acoustic pipeline plus oscillator bank; owned by the analysis task.
#[derive(Debug)]
pub struct Analysis {
    pipeline: AcousticPipeline,
    synth: SynthConfig,
    bank: OscillatorBank,
    epoch: u64,
    timeline: u64,
    amplitude: f64,
}

impl Analysis {
    pub fn new(config: &EngineConfig) -> Result<Self> {
        Ok(Self {
            pipeline: AcousticPipeline::new(config.acoustics.clone(), config.observer.clone(), config.sphere.center)?,
            bank: OscillatorBank::new(&config.synth),
            synth: config.synth.clone(),
            epoch: 0,
            timeline: 0,
            amplitude: 0.0,
        })
    }

    pub fn pipeline(&self) -> &AcousticPipeline {
        &self.pipeline
    }

    pub fn bank(&self) -> &OscillatorBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut OscillatorBank {
        &mut self.bank
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn synth(&self) -> &SynthConfig {
        &self.synth
    }

    /// Consumes one input; emits audio parameters on every analysis hop.
    pub fn process(&mut self, input: AnalysisInput) -> Result<Option<AudioParams>> {
        match input {
            AnalysisInput::Observer(o) => {
                self.pipeline.set_observer(o);
                Ok(None)
            }
            AnalysisInput::Sample { epoch, timeline, sample } => {
                if epoch != self.epoch {
                    self.epoch = epoch;
                    self.bank = OscillatorBank::new(&self.synth);
                    self.amplitude = 0.0;
                    self.pipeline.reset();
                }
                if timeline != self.timeline {
                    self.timeline = timeline;
                    self.pipeline.reset();
                }
                let frame = self.pipeline.push(sample)?;
                self.amplitude = amplitude_envelope(self.pipeline.p_prime(), self.synth.alpha);
                Ok(frame.map(|f| {
                    update_bank(&mut self.bank, &f.peaks, &self.synth);
                    AudioParams {
                        epoch,
                        time: f.time,
                        amplitude: self.amplitude,
                        p_prime: f.p_prime,
                        peaks: f.peaks,
                    }
                }))
            }
        }
    }
}

/// Per-step timing of a headless run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTimings {
    pub steps: u64,
    pub total_seconds: f64,
    pub advect_seconds: f64,
    pub project_seconds: f64,
    pub acoustics_seconds: f64,
    pub solver_iterations: u64,
}

impl StepTimings {
    pub fn steps_per_second(&self) -> f64 {
        if self.total_seconds > 0.0 {
            self.steps as f64 / self.total_seconds
        } else {
            0.0
        }
    }
}

/// The whole pipeline on one thread, without pacing. Deterministic.
#[derive(Debug)]
pub struct Engine {
    pub simulation: Simulation,
    pub analysis: Analysis,
    pub timings: StepTimings,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        let analysis = Analysis::new(&config)?;
        Ok(Self {
            simulation: Simulation::new(config)?,
            analysis,
            timings: StepTimings::default(),
        })
    }

    pub fn command(&mut self, command: &Command) -> std::result::Result<(), String> {
        if let Some(input) = self.simulation.apply(command)? {
            self.analysis.process(input).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    /// One step through the full pipeline; `None` audio output between hops.
    pub fn step(&mut self) -> Result<(ForceSample, Option<AudioParams>)> {
        let started = Instant::now();
        let input = self.simulation.step()?;
        let fluid_done = Instant::now();
        let sample = match &input {
            AnalysisInput::Sample { sample, .. } => *sample,
            AnalysisInput::Observer(_) => unreachable!("step emits samples"),
        };
        let params = self.analysis.process(input)?;
        let t = &mut self.timings;
        t.steps += 1;
        t.total_seconds += started.elapsed().as_secs_f64();
        t.acoustics_seconds += fluid_done.elapsed().as_secs_f64();
        if let Some(d) = self.simulation.last_diagnostics() {
            t.advect_seconds += d.advect_seconds;
            t.project_seconds += d.project_seconds;
            t.solver_iterations += d.solver_iterations as u64;
        }
        Ok((sample, params))
    }

    /// Runs `steps` steps, collecting the audio parameter stream.
    pub fn advance(&mut self, steps: usize) -> Result<Vec<AudioParams>> {
        let mut out = Vec::new();
        for _ in 0..steps {
            if let (_, Some(p)) = self.step()? {
                out.push(p);
            }
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.simulation.snapshot(
            self.analysis.pipeline().p_prime(),
            self.analysis.pipeline().peaks().clone(),
            0,
            0,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EngineConfig {
        EngineConfig {
            grid: GridSpec::unit_cube(25),
            ..EngineConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let c = EngineConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(EngineConfig::from_json(&text).unwrap(), c);
        let partial = EngineConfig::from_json(r#"{"snapshot_stride": 3}"#).unwrap();
        assert_eq!(partial.snapshot_stride, 3);
        assert!(EngineConfig::from_json(r#"{"snapshot_stride": 0}"#).is_err());
    }

    #[test]
    fn command_json_shape() {
        let c: Command = serde_json::from_str(r#"{"kind":"set_dt","value":0.002}"#).unwrap();
        assert_eq!(c, Command::SetDt(0.002));
        let c: Command = serde_json::from_str(r#"{"kind":"pause"}"#).unwrap();
        assert_eq!(c, Command::Pause);
        let c: Command = serde_json::from_str(r#"{"kind":"remove_obstacle","value":1}"#).unwrap();
        assert_eq!(c, Command::RemoveObstacle(1));
    }

    #[test]
    fn invalid_commands_change_nothing() {
        let mut sim = Simulation::new(small()).unwrap();
        let before = sim.state().clone();
        let bad = Obstacle {
            center_direction: Vec3::z(),
            geodesic_radius: 0.0,
            height: 0.1,
        };
        assert!(sim.apply(&Command::AddObstacle(bad)).is_err());
        assert!(sim.apply(&Command::SetObserver(Vec3::repeat(0.5))).is_err());
        assert!(sim.apply(&Command::RemoveObstacle(7)).is_err());
        assert!(sim.apply(&Command::SetDt(-1.0)).is_err());
        assert_eq!(sim.state(), &before);
    }

    #[test]
    fn reset_restores_initial_state() {
        let mut engine = Engine::new(small()).unwrap();
        let fresh = engine.simulation.state().clone();
        engine.advance(5).unwrap();
        engine.command(&Command::SetDt(2e-3)).unwrap();
        engine.command(&Command::Reset).unwrap();
        assert_eq!(engine.simulation.state(), &fresh);
        assert_eq!(engine.simulation.epoch(), 1);
    }

    #[test]
    fn added_obstacle_pins_velocity() {
        let mut engine = Engine::new(small()).unwrap();
        engine.advance(3).unwrap();
        let o = Obstacle {
            center_direction: Vec3::new(0.0, 1.0, 0.2),
            geodesic_radius: 0.1,
            height: 0.02,
        };
        engine.command(&Command::AddObstacle(o)).unwrap();
        engine.advance(1).unwrap();
        let snap = engine.snapshot();
        assert_eq!(snap.obstacles.len(), 2);
        let mask = engine.simulation.solver().mask();
        let u = &engine.simulation.state().u;
        assert!(mask.interior_count() > 0);
        for o in 0..u.len() {
            if mask.is_interior(o) {
                assert_eq!(u.values()[o], Vec3::zeros());
            }
        }
    }
}
