//! Surface force integration, compact far-field radiation and spectral
//! analysis of the force derivative.

mod pipeline;
mod spectrum;

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::band_fields::{locate, BandScalarField, Stencil};
use crate::error::{Error, Result};
use crate::geometry::{NarrowBand, NodeSet, SphereSurface, Vec3};

pub use pipeline::{AcousticPipeline, AcousticsConfig, AnalysisFrame};
pub use spectrum::{detect_peaks, hann_window, sliding_spectrum, Spectrum, Taper, SpectralPeak, SpectralPeakSet, WindowInfo};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserverConfig {
    pub position: Vec3,
    pub c0: f64,
    pub use_retarded_time: bool,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            position: Vec3::new(0.5, 0.5, 10.5),
            c0: 343.0,
            use_retarded_time: false,
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self, surface: &SphereSurface) -> Result<()> {
        if !(self.c0 > 0.0) || !self.c0.is_finite() {
            return Err(Error::InvalidArgument(format!("speed of sound must be positive, got {}", self.c0)));
        }
        if !self.position.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("observer position is not finite".into()));
        }
        if (self.position - surface.center).norm() <= surface.radius {
            return Err(Error::InvalidArgument("observer must lie outside the sphere".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceSample {
    pub t: f64,
    pub force: Vec3,
}

/// Fibonacci lattice on the unit sphere.
pub fn fibonacci_directions(count: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

pub const DEFAULT_QUADRATURE_POINTS: usize = 2000;

/// Equal-weight quadrature nodes on the sphere with cached interpolation
/// stencils into the band.
#[derive(Clone, Debug)]
pub struct SurfaceQuadrature {
    directions: Vec<Vec3>,
    points: Vec<Vec3>,
    stencils: Vec<Stencil>,
    weight: f64,
}

impl SurfaceQuadrature {
    pub fn new(band: &NarrowBand, count: usize) -> Result<Self> {
        Self::on_nodes(band.nodes(), band.surface(), count)
    }

    pub fn on_nodes(nodes: &NodeSet, surface: &SphereSurface, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("quadrature needs at least one point".into()));
        }
        let directions = fibonacci_directions(count);
        let points: Vec<Vec3> = directions.iter().map(|n| surface.point_at(n)).collect();
        let stencils = points
            .iter()
            .map(|y| {
                locate(nodes, y).map_err(|_| {
                    Error::Config(format!("quadrature node ({:.4}, {:.4}, {:.4}) is outside the band", y.x, y.y, y.z))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            directions,
            points,
            stencils,
            weight: 4.0 * PI * surface.radius * surface.radius / count as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Field values interpolated at every quadrature node.
    pub fn sample(&self, field: &BandScalarField) -> Vec<f64> {
        self.stencils.iter().map(|s| s.eval(field.values())).collect()
    }

    pub fn sample_speed(&self, u: &crate::band_fields::BandVectorField) -> Vec<f64> {
        self.stencils.iter().map(|s| s.eval_vec(u.values()).norm()).collect()
    }

    /// `F = Σ p(y_i) n_i w_i`.
    pub fn integrate_pressure(&self, p: &BandScalarField) -> Vec3 {
        self.stencils
            .iter()
            .zip(&self.directions)
            .fold(Vec3::zeros(), |acc, (s, n)| acc + s.eval(p.values()) * n)
            * self.weight
    }
}

pub fn surface_force(p: &BandScalarField, quadrature: &SurfaceQuadrature, t: f64) -> ForceSample {
    ForceSample {
        t,
        force: quadrature.integrate_pressure(p),
    }
}

/// Bounded force history with uniform sample spacing.
#[derive(Clone, Debug)]
pub struct ForceHistory {
    samples: VecDeque<ForceSample>,
    capacity: usize,
    dt: Option<f64>,
}

impl ForceHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            samples: VecDeque::with_capacity(capacity.max(2)),
            capacity: capacity.max(2),
            dt: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> Option<f64> {
        self.dt
    }

    pub fn latest(&self) -> Option<&ForceSample> {
        self.samples.back()
    }

    pub fn samples(&self) -> impl Iterator<Item = &ForceSample> {
        self.samples.iter()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
        self.dt = None;
    }

    pub fn push(&mut self, sample: ForceSample) -> Result<()> {
        if !sample.t.is_finite() || !sample.force.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument("force sample is not finite".into()));
        }
        if let Some(last) = self.samples.back() {
            let step = sample.t - last.t;
            if !(step > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "force samples must be strictly increasing in time ({} after {})",
                    sample.t, last.t
                )));
            }
            match self.dt {
                None => self.dt = Some(step),
                Some(dt) => {
                    let tol = 1e-12 * dt + 4.0 * f64::EPSILON * sample.t.abs();
                    if (step - dt).abs() > tol {
                        return Err(Error::InvalidArgument(format!(
                            "non-uniform force sampling: step {step} against {dt}"
                        )));
                    }
                }
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        Ok(())
    }

    /// Centered differences at every interior sample, oldest first.
    pub fn derivative_series(&self) -> Vec<Vec3> {
        let Some(dt) = self.dt else { return Vec::new() };
        let s = &self.samples;
        (1..s.len().saturating_sub(1))
            .map(|i| (s[i + 1].force - s[i - 1].force) / (2.0 * dt))
            .collect()
    }
}

pub fn force_derivative(history: &ForceHistory) -> Result<Vec3> {
    let n = history.len();
    let dt = match history.dt {
        Some(dt) if n >= 2 => dt,
        _ => return Err(Error::NotReady("force derivative needs two samples")),
    };
    let s = &history.samples;
    if n >= 3 {
        Ok((s[n - 1].force - s[n - 3].force) / (2.0 * dt))
    } else {
        Ok((s[1].force - s[0].force) / dt)
    }
}

/// Compact low-Mach far-field pressure `i_r · dF/dt / (4π c0 r)`.
pub fn fwh_pressure(dfdt: &Vec3, observer: &ObserverConfig, source_position: &Vec3) -> f64 {
    let d = observer.position - source_position;
    let r = d.norm();
    d.dot(dfdt) / (4.0 * PI * observer.c0 * r * r)
}

/// Propagation delay from source to observer.
pub fn retarded_delay(observer: &ObserverConfig, source_position: &Vec3) -> f64 {
    (observer.position - source_position).norm() / observer.c0
}

/// Emissions held back until their arrival time at the observer.
#[derive(Clone, Debug, Default)]
pub struct RetardedQueue {
    pending: VecDeque<(f64, f64)>,
    current: f64,
}

impl RetardedQueue {
    pub fn push(&mut self, emission_time: f64, delay: f64, value: f64) {
        self.pending.push_back((emission_time + delay, value));
    }

    /// Latest arrival at or before `now`; zero before the first arrival.
    pub fn advance(&mut self, now: f64) -> f64 {
        while let Some(&(arrival, value)) = self.pending.front() {
            if arrival > now + 1e-12 * now.abs().max(1.0) {
                break;
            }
            self.current = value;
            self.pending.pop_front();
        }
        self.current
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn clear(&mut self) {
        self.pending.clear();
        self.current = 0.0;
    }
}
