//! Inviscid Euler time stepping on the narrow band: semi-Lagrangian
//! advection, localized forcing, Neumann pressure projection and obstacle
//! boundary conditions.

pub mod advect;
pub mod obstacles;
pub mod operators;
pub mod poisson;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::band_fields::{BandScalarField, BandVectorField, CpExtension};
use crate::error::{Error, Result};
use crate::geometry::{tangent_project, NarrowBand, Obstacle, Vec3};

pub use advect::{Backtrace, BoxDeparture, Departure, TubeDeparture};
pub use obstacles::{enforce_obstacle_bc, ObstacleMask};
pub use operators::{divergence, gradient, interior_norms};
pub use poisson::{
    assemble_laplacian, solve_pressure, solve_pressure_with_guess, PoissonOperator, PressureSolution, SolveMethod,
    SolverLimits,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingMode {
    /// Circulates around the forcing center: `t̂ = normalize(n × c)`.
    Swirl,
    /// Pushes along the tangential part of a fixed direction.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForcingSpec {
    pub center_direction: Vec3,
    pub angular_width: f64,
    pub strength: f64,
    pub mode: ForcingMode,
    /// Push direction for [`ForcingMode::Constant`].
    pub direction: Vec3,
}

impl Default for ForcingSpec {
    fn default() -> Self {
        Self {
            center_direction: Vec3::z(),
            angular_width: 0.4,
            strength: 20.0,
            mode: ForcingMode::Swirl,
            direction: Vec3::x(),
        }
    }
}

impl ForcingSpec {
    pub fn validate(&self) -> Result<()> {
        let len = self.center_direction.norm();
        if !(len > 1e-12) || !len.is_finite() {
            return Err(Error::InvalidArgument("forcing center_direction must be nonzero".into()));
        }
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return Err(Error::InvalidArgument(format!("forcing strength must be >= 0, got {}", self.strength)));
        }
        if !(self.angular_width > 0.0 && self.angular_width < std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!(
                "forcing angular_width must lie in (0, π), got {}",
                self.angular_width
            )));
        }
        if self.mode == ForcingMode::Constant && !(self.direction.norm() > 1e-12) {
            return Err(Error::InvalidArgument("constant forcing needs a nonzero direction".into()));
        }
        Ok(())
    }

    /// Tangential forcing acceleration at a point with unit normal `n`.
    pub fn acceleration(&self, n: &Vec3) -> Vec3 {
        let c = self.center_direction.normalize();
        let theta = n.dot(&c).clamp(-1.0, 1.0).acos();
        let magnitude = self.strength * (-theta * theta / (2.0 * self.angular_width * self.angular_width)).exp();
        let raw = match self.mode {
            ForcingMode::Swirl => n.cross(&c),
            ForcingMode::Constant => tangent_project(&self.direction, n),
        };
        let len = raw.norm();
        // the swirl direction has no limit at the pole; zero completes it
        if len < 1e-12 {
            return Vec3::zeros();
        }
        magnitude * raw / len
    }

    pub fn field(&self, band: &NarrowBand) -> BandVectorField {
        BandVectorField::from_values(band.normals().iter().map(|n| self.acceleration(n)).collect())
    }
}

/// `u += dt · f`.
pub fn apply_forcing(u: &BandVectorField, forcing: &BandVectorField, dt: f64) -> BandVectorField {
    BandVectorField::from_values(u.values().iter().zip(forcing.values()).map(|(u, f)| u + dt * f).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub dt: f64,
    pub rho0: f64,
    pub forcing: ForcingSpec,
    pub direct_solver_threshold: usize,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            rho0: 1.0,
            forcing: ForcingSpec::default(),
            direct_solver_threshold: 8000,
            cg_tolerance: 1e-8,
            cg_max_iterations: 2000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.rho0 > 0.0) || !self.rho0.is_finite() {
            return Err(Error::Config(format!("rho0 must be positive, got {}", self.rho0)));
        }
        if !(self.cg_tolerance > 0.0 && self.cg_tolerance < 1.0) {
            return Err(Error::Config(format!("cg_tolerance must lie in (0, 1), got {}", self.cg_tolerance)));
        }
        if self.cg_max_iterations == 0 {
            return Err(Error::Config("cg_max_iterations must be positive".into()));
        }
        self.forcing.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn limits(&self) -> SolverLimits {
        SolverLimits {
            direct_solver_threshold: self.direct_solver_threshold,
            cg_tolerance: self.cg_tolerance,
            cg_max_iterations: self.cg_max_iterations,
        }
    }
}

/// The single mutable simulation state.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub u: BandVectorField,
    pub p: BandScalarField,
    pub rho: BandScalarField,
    pub obstacles: Vec<Obstacle>,
    pub time: f64,
    pub step_count: u64,
}

impl FlowState {
    pub fn at_rest(len: usize, rho0: f64, obstacles: Vec<Obstacle>) -> Self {
        Self {
            u: BandVectorField::zeros(len),
            p: BandScalarField::zeros(len),
            rho: BandScalarField::constant(len, rho0),
            obstacles,
            time: 0.0,
            step_count: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Band-interior RMS divergence before and after the projection.
    pub divergence_before: f64,
    pub divergence_after: f64,
    pub max_divergence: f64,
    pub solver_method: Option<SolveMethod>,
    pub solver_iterations: usize,
    pub solver_residual: f64,
    pub max_backtrack_cells: f64,
    pub advect_seconds: f64,
    pub project_seconds: f64,
    pub step_seconds: f64,
}

/// Owns the precomputed operators for one band and advances [`FlowState`].
#[derive(Debug)]
pub struct FluidSolver {
    band: Arc<NarrowBand>,
    extension: CpExtension,
    laplacian: PoissonOperator,
    departure: TubeDeparture,
    config: SolverConfig,
    forcing: BandVectorField,
    mask: ObstacleMask,
}

impl FluidSolver {
    pub fn new(band: Arc<NarrowBand>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let extension = CpExtension::new(&band)?;
        let laplacian = assemble_laplacian(band.nodes());
        if band.len() <= config.direct_solver_threshold {
            laplacian.factorize();
        }
        let departure = TubeDeparture::new(band.surface(), band.half_width(), band.spacing());
        let forcing = config.forcing.field(&band);
        let mask = ObstacleMask::new(&band, &[]);
        Ok(Self {
            band,
            extension,
            laplacian,
            departure,
            config,
            forcing,
            mask,
        })
    }

    pub fn band(&self) -> &Arc<NarrowBand> {
        &self.band
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn extension(&self) -> &CpExtension {
        &self.extension
    }

    pub fn laplacian(&self) -> &PoissonOperator {
        &self.laplacian
    }

    pub fn mask(&self) -> &ObstacleMask {
        &self.mask
    }

    pub fn initial_state(&self, obstacles: Vec<Obstacle>) -> FlowState {
        FlowState::at_rest(self.band.len(), self.config.rho0, obstacles)
    }

    pub fn set_forcing(&mut self, forcing: ForcingSpec) -> Result<()> {
        forcing.validate()?;
        self.forcing = forcing.field(&self.band);
        self.config.forcing = forcing;
        Ok(())
    }

    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        self.config.dt = dt;
        Ok(())
    }

    fn sync_obstacles(&mut self, obstacles: &[Obstacle]) {
        if self.mask.obstacles() != obstacles {
            self.mask = ObstacleMask::new(&self.band, obstacles);
        }
    }

    /// Rebuilds the obstacle mask for `state` and applies the boundary
    /// conditions to its velocity.
    pub fn impose_obstacles(&mut self, state: &mut FlowState) {
        self.sync_obstacles(&state.obstacles);
        enforce_obstacle_bc(&mut state.u, &self.mask);
    }

    /// Semi-Lagrangian transport of a scalar, CP-extended.
    pub fn advect_scalar(&self, u: &BandVectorField, field: &BandScalarField, dt: f64) -> Result<BandScalarField> {
        let bt = Backtrace::compute(self.band.nodes(), &self.departure, u, dt)?;
        Ok(self.extension.cp_extend(&bt.scalar(field)))
    }

    /// Semi-Lagrangian transport of a vector field, CP-extended and tangent.
    pub fn advect_vector(&self, u: &BandVectorField, field: &BandVectorField, dt: f64) -> Result<BandVectorField> {
        let bt = Backtrace::compute(self.band.nodes(), &self.departure, u, dt)?;
        Ok(self.extension.cp_extend_vector(&bt.vector(field)))
    }

    /// `ρ' = advect(u, ρ) + dt·S`, CP-extended.
    pub fn scalar_transport(
        &self,
        rho: &BandScalarField,
        u: &BandVectorField,
        source: Option<&BandScalarField>,
        dt: f64,
    ) -> Result<BandScalarField> {
        let bt = Backtrace::compute(self.band.nodes(), &self.departure, u, dt)?;
        let mut next = bt.scalar(rho);
        if let Some(s) = source {
            for (r, s) in next.values_mut().iter_mut().zip(s.values()) {
                *r += dt * s;
            }
        }
        Ok(self.extension.cp_extend(&next))
    }

    /// Pressure projection of `u_star`, followed by extension and obstacle BCs.
    pub fn project(
        &self,
        u_star: &BandVectorField,
        previous_pressure: Option<&BandScalarField>,
    ) -> Result<(BandVectorField, PressureSolution)> {
        let nodes = self.band.nodes();
        let SolverConfig { dt, rho0, .. } = self.config;
        let mut rhs = divergence(nodes, u_star);
        rhs.values_mut().iter_mut().for_each(|d| *d *= rho0 / dt);
        let solution = solve_pressure_with_guess(&self.laplacian, &rhs, previous_pressure, &self.config.limits())?;
        let grad = gradient(nodes, &solution.pressure);
        let corrected = BandVectorField::from_values(
            u_star
                .values()
                .iter()
                .zip(grad.values())
                .map(|(u, g)| u - (dt / rho0) * g)
                .collect(),
        );
        let mut u = self.extension.cp_extend_vector(&corrected);
        enforce_obstacle_bc(&mut u, &self.mask);
        Ok((u, solution))
    }

    /// One full time step. The input state is left untouched on error.
    pub fn step(&mut self, state: &FlowState) -> Result<(FlowState, StepDiagnostics)> {
        let started = Instant::now();
        self.sync_obstacles(&state.obstacles);
        let dt = self.config.dt;
        let nodes = self.band.nodes();

        let u0 = self.extension.cp_extend_vector(&state.u);
        let bt = Backtrace::compute(nodes, &self.departure, &u0, dt)?;
        let advected = self.extension.cp_extend_vector(&bt.vector(&u0));
        let mut u_star = apply_forcing(&advected, &self.forcing, dt);
        enforce_obstacle_bc(&mut u_star, &self.mask);
        let advect_seconds = started.elapsed().as_secs_f64();

        let (div_before, _) = interior_norms(nodes, &divergence(nodes, &u_star));
        let project_start = Instant::now();
        let (mut u, pressure) = self.project(&u_star, Some(&state.p))?;
        let project_seconds = project_start.elapsed().as_secs_f64();
        enforce_obstacle_bc(&mut u, &self.mask);
        let mut u = self.extension.cp_extend_vector(&u);
        // extension re-interpolates obstacle interiors, so the BC runs last
        enforce_obstacle_bc(&mut u, &self.mask);

        let rho = self.scalar_transport(&state.rho, &u, None, dt)?;
        let (div_after, max_div) = interior_norms(nodes, &divergence(nodes, &u));

        let next = FlowState {
            u,
            p: pressure.pressure,
            rho,
            obstacles: state.obstacles.clone(),
            time: state.time + dt,
            step_count: state.step_count + 1,
        };
        let diagnostics = StepDiagnostics {
            divergence_before: div_before,
            divergence_after: div_after,
            max_divergence: max_div,
            solver_method: Some(pressure.method),
            solver_iterations: pressure.iterations,
            solver_residual: pressure.residual,
            max_backtrack_cells: bt.max_displacement_cells,
            advect_seconds,
            project_seconds,
            step_seconds: started.elapsed().as_secs_f64(),
        };
        Ok((next, diagnostics))
    }
}
