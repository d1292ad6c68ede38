//! Manufactured-solution verification on the unit cube.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::band_fields::{BandScalarField, BandVectorField};
use crate::error::{Error, Result};
use crate::fluid::{divergence, Backtrace, BoxDeparture};
use crate::geometry::{GridSpec, NodeSet, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmsSample {
    pub u: Vec3,
    pub rho: f64,
    pub p: f64,
}

pub fn mms_fields(x: &Vec3) -> MmsSample {
    let (sx, cx) = (PI * x.x).sin_cos();
    let (sy, cy) = (PI * x.y).sin_cos();
    let (sz, cz) = (PI * x.z).sin_cos();
    MmsSample {
        u: Vec3::new(sx * cy * sz, -cx * sy * sz, sx * sy * cz),
        rho: 1.0 + 0.1 * sx * sy * sz,
        p: 1.0 + 0.05 * cx * cy * cz,
    }
}

/// `J[i][j] = ∂u_i/∂x_j`.
fn velocity_jacobian(x: &Vec3) -> Matrix3<f64> {
    let (sx, cx) = (PI * x.x).sin_cos();
    let (sy, cy) = (PI * x.y).sin_cos();
    let (sz, cz) = (PI * x.z).sin_cos();
    PI * Matrix3::new(
        cx * cy * sz, -sx * sy * sz, sx * cy * cz,
        sx * sy * sz, -cx * cy * sz, -cx * sy * cz,
        cx * sy * cz, sx * cy * cz, -sx * sy * sz,
    )
}

fn density_gradient(x: &Vec3) -> Vec3 {
    let (sx, cx) = (PI * x.x).sin_cos();
    let (sy, cy) = (PI * x.y).sin_cos();
    let (sz, cz) = (PI * x.z).sin_cos();
    0.1 * PI * Vec3::new(cx * sy * sz, sx * cy * sz, sx * sy * cz)
}

fn pressure_gradient(x: &Vec3) -> Vec3 {
    let (sx, cx) = (PI * x.x).sin_cos();
    let (sy, cy) = (PI * x.y).sin_cos();
    let (sz, cz) = (PI * x.z).sin_cos();
    -0.05 * PI * Vec3::new(sx * cy * cz, cx * sy * cz, cx * cy * sz)
}

/// Momentum forcing `f = −[(u·∇)u + ∇p/ρ₀]`.
pub fn forcing_f(x: &Vec3, rho0: f64) -> Vec3 {
    let u = mms_fields(x).u;
    -(velocity_jacobian(x) * u + pressure_gradient(x) / rho0)
}

/// Density source `S = −∇·(ρu)`.
pub fn scalar_source_s(x: &Vec3) -> f64 {
    let MmsSample { u, rho, .. } = mms_fields(x);
    -(rho * velocity_jacobian(x).trace() + u.dot(&density_gradient(x)))
}

/// Root-mean-square of the pointwise error.
pub fn l2_error<T: ErrorNorm>(numeric: &[T], analytic: &[T]) -> f64 {
    assert_eq!(numeric.len(), analytic.len(), "l2_error needs matching sample sets");
    if numeric.is_empty() {
        return 0.0;
    }
    let sum: f64 = numeric.iter().zip(analytic).map(|(a, b)| a.squared_distance(b)).sum();
    (sum / numeric.len() as f64).sqrt()
}

pub trait ErrorNorm {
    fn squared_distance(&self, other: &Self) -> f64;
}

impl ErrorNorm for f64 {
    fn squared_distance(&self, other: &Self) -> f64 {
        (self - other) * (self - other)
    }
}

impl ErrorNorm for Vec3 {
    fn squared_distance(&self, other: &Self) -> f64 {
        (self - other).norm_squared()
    }
}

/// Least-squares slope of `log(e)` against `log(h)`.
pub fn fit_slope(h: &[f64], e: &[f64]) -> Result<f64> {
    if h.len() != e.len() || h.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two matching points".into()));
    }
    if h.iter().chain(e).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument("log of a non-positive error or spacing is undefined".into()));
    }
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct spacings".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRates {
    pub velocity: f64,
    pub density: f64,
    pub divergence: f64,
}

pub fn convergence_rates(rows: &[MmsRow]) -> Result<ConvergenceRates> {
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let col = |f: fn(&MmsRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(ConvergenceRates {
        velocity: fit_slope(&h, &col(|r| r.l2_u))?,
        density: fit_slope(&h, &col(|r| r.l2_rho))?,
        divergence: fit_slope(&h, &col(|r| r.l2_div))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmsConfig {
    pub resolutions: Vec<usize>,
    pub rho0: f64,
    pub steps: usize,
    pub dt: f64,
}

impl Default for MmsConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![11, 13, 15, 17],
            rho0: 1.0,
            steps: 1,
            dt: 0.08,
        }
    }
}

impl MmsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::Config("at least one resolution is required".into()));
        }
        if self.resolutions.iter().any(|&r| r < 3) {
            return Err(Error::Config("resolutions must be at least 3".into()));
        }
        if self.resolutions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("resolutions must be strictly increasing".into()));
        }
        if !(self.rho0 > 0.0) || !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config("rho0 and dt must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmsRow {
    pub resolution: usize,
    pub h: f64,
    pub l2_u: f64,
    pub l2_rho: f64,
    pub l2_div: f64,
    pub max_div: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmsReport {
    pub config: MmsConfig,
    pub rows: Vec<MmsRow>,
    /// `None` with fewer than two rows.
    pub rates: Option<ConvergenceRates>,
    /// Set when a resolution failed and the report is partial.
    pub failure: Option<String>,
}

/// Mantissa with three decimals and a signed two-digit exponent.
pub fn sci(v: f64) -> String {
    let s = format!("{v:.3e}");
    match s.split_once('e') {
        Some((m, e)) => {
            let exp: i32 = e.parse().unwrap_or(0);
            format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
        }
        None => s,
    }
}

impl MmsReport {
    pub fn header(&self) -> String {
        format!(
            "# MMS verification: dt={}, steps={}, rho0={}, nodes=interior, norm=rms, projection=off",
            self.config.dt, self.config.steps, self.config.rho0
        )
    }

    pub fn console_lines(&self) -> Vec<String> {
        let mut lines = vec![self.header()];
        for r in &self.rows {
            lines.push(format!(
                "Resolution={}: L2_u={}, L2_rho={}, L2_div={}",
                r.resolution,
                sci(r.l2_u),
                sci(r.l2_rho),
                sci(r.l2_div)
            ));
        }
        if let Some(rates) = &self.rates {
            lines.push(format!(
                "Convergence rates: velocity={:.2}, density={:.2}, divergence={:.2}",
                rates.velocity, rates.density, rates.divergence
            ));
        }
        if let Some(f) = &self.failure {
            lines.push(format!("Verification aborted: {f}"));
        }
        lines
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("r,h,L2_u,L2_rho,L2_div,max_div\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.9},{:.6e},{:.6e},{:.6e},{:.6e}",
                r.resolution, r.h, r.l2_u, r.l2_rho, r.l2_div, r.max_div
            );
        }
        if let Some(rates) = &self.rates {
            let _ = writeln!(
                out,
                "slope,,{:.6},{:.6},{:.6},",
                rates.velocity, rates.density, rates.divergence
            );
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Fields after the configured number of forced steps at one resolution.
#[derive(Clone, Debug)]
pub struct MmsRun {
    pub nodes: NodeSet,
    pub u: BandVectorField,
    pub rho: BandScalarField,
}

pub fn run_resolution(resolution: usize, config: &MmsConfig) -> Result<MmsRun> {
    let grid = GridSpec::unit_cube(resolution);
    grid.validate()?;
    let nodes = NodeSet::full(&grid);
    let departure = BoxDeparture {
        min: grid.domain_min,
        max: grid.domain_max,
    };
    let dt = config.dt;
    let f = BandVectorField::sample(&nodes, |x| forcing_f(x, config.rho0));
    let s = BandScalarField::sample(&nodes, scalar_source_s);
    let mut u = BandVectorField::sample(&nodes, |x| mms_fields(x).u);
    let mut rho = BandScalarField::sample(&nodes, |x| mms_fields(x).rho);
    for _ in 0..config.steps {
        let bt = Backtrace::compute(&nodes, &departure, &u, dt)?;
        let mut next = bt.vector(&u);
        for (v, f) in next.values_mut().iter_mut().zip(f.values()) {
            *v += dt * f;
        }
        u = next;
        let bt = Backtrace::compute(&nodes, &departure, &u, dt)?;
        let mut next = bt.scalar(&rho);
        for (r, s) in next.values_mut().iter_mut().zip(s.values()) {
            *r += dt * s;
        }
        rho = next;
        if !u.is_finite() || !rho.is_finite() {
            return Err(Error::SolverFailure {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
    }
    Ok(MmsRun { nodes, u, rho })
}

pub fn measure(run: &MmsRun) -> MmsRow {
    let nodes = &run.nodes;
    let interior: Vec<usize> = (0..nodes.len()).filter(|&o| nodes.is_interior(o)).collect();
    let exact: Vec<MmsSample> = interior.iter().map(|&o| mms_fields(&nodes.position(o))).collect();
    let u_num: Vec<Vec3> = interior.iter().map(|&o| run.u.values()[o]).collect();
    let u_ref: Vec<Vec3> = exact.iter().map(|e| e.u).collect();
    let r_num: Vec<f64> = interior.iter().map(|&o| run.rho.values()[o]).collect();
    let r_ref: Vec<f64> = exact.iter().map(|e| e.rho).collect();
    let div = divergence(nodes, &run.u);
    let d_num: Vec<f64> = interior.iter().map(|&o| div.values()[o]).collect();
    let zeros = vec![0.0; d_num.len()];
    MmsRow {
        resolution: nodes.grid().resolution,
        h: nodes.spacing(),
        l2_u: l2_error(&u_num, &u_ref),
        l2_rho: l2_error(&r_num, &r_ref),
        l2_div: l2_error(&d_num, &zeros),
        max_div: d_num.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
    }
}

pub fn run_verification(config: &MmsConfig) -> Result<MmsReport> {
    config.validate()?;
    let mut rows = Vec::new();
    let mut failure = None;
    for &r in &config.resolutions {
        match run_resolution(r, config) {
            Ok(run) => rows.push(measure(&run)),
            Err(e) => {
                failure = Some(format!("resolution {r}: {e}"));
                break;
            }
        }
    }
    let rates = if rows.len() >= 2 { Some(convergence_rates(&rows)?) } else { None };
    Ok(MmsReport {
        config: config.clone(),
        rows,
        rates,
        failure,
    })
}
