//! Cartesian grid, narrow band around the sphere, closest-point map and
//! obstacle geometry.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Sentinel in the dense grid → ordinal lookup for nodes outside a node set.
const ABSENT: u32 = u32::MAX;

/// Uniform cubic lattice with `resolution` points per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    pub domain_min: Vec3,
    pub domain_max: Vec3,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::unit_cube(33)
    }
}

impl GridSpec {
    pub fn unit_cube(resolution: usize) -> Self {
        Self {
            resolution,
            domain_min: Vec3::zeros(),
            domain_max: Vec3::repeat(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 3 {
            return Err(Error::Config(format!(
                "grid resolution must be at least 3, got {}",
                self.resolution
            )));
        }
        let extent = self.domain_max - self.domain_min;
        if extent.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::Config("domain_max must exceed domain_min on every axis".into()));
        }
        let tol = 1e-12 * extent.max();
        if (extent.x - extent.y).abs() > tol || (extent.x - extent.z).abs() > tol {
            return Err(Error::Config("grid spacing must be equal on all axes".into()));
        }
        Ok(())
    }

    /// Grid spacing `h`.
    pub fn spacing(&self) -> f64 {
        (self.domain_max.x - self.domain_min.x) / (self.resolution - 1) as f64
    }

    pub fn num_points(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        let r = self.resolution;
        i + r * (j + r * k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.spacing();
        self.domain_min + Vec3::new(i as f64 * h, j as f64 * h, k as f64 * h)
    }

    pub fn midpoint(&self) -> Vec3 {
        0.5 * (self.domain_min + self.domain_max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereSurface {
    pub radius: f64,
    #[serde(default = "default_center")]
    pub center: Vec3,
}

fn default_center() -> Vec3 {
    Vec3::repeat(0.5)
}

impl Default for SphereSurface {
    fn default() -> Self {
        Self {
            radius: 0.35,
            center: default_center(),
        }
    }
}

impl SphereSurface {
    pub fn new(radius: f64, center: Vec3) -> Self {
        Self { radius, center }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::Config(format!("sphere radius must be positive, got {}", self.radius)));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("sphere center must be finite".into()));
        }
        Ok(())
    }

    /// Checks that the sphere plus `margin` lies strictly inside the grid domain.
    pub fn check_fits(&self, grid: &GridSpec, margin: f64) -> Result<()> {
        let reach = self.radius + margin;
        for a in 0..3 {
            if self.center[a] - reach <= grid.domain_min[a] || self.center[a] + reach >= grid.domain_max[a] {
                return Err(Error::Config(format!(
                    "sphere (radius {}, margin {margin}) does not fit inside the grid on axis {a}",
                    self.radius
                )));
            }
        }
        Ok(())
    }

    /// Unit outward normal at the closest point of `x`.
    pub fn normal(&self, x: &Vec3) -> Result<Vec3> {
        let d = x - self.center;
        let norm = d.norm();
        if norm < 1e-12 * self.radius {
            return Err(Error::DegeneratePoint(format!(
                "({}, {}, {}) coincides with the sphere center",
                x.x, x.y, x.z
            )));
        }
        Ok(d / norm)
    }

    /// Unit direction of an on-surface point, rejecting points off the sphere.
    pub fn surface_direction(&self, y: &Vec3) -> Result<Vec3> {
        let d = y - self.center;
        let offset = (d.norm() - self.radius).abs();
        let tolerance = 1e-9 * self.radius;
        if offset > tolerance {
            return Err(Error::OffSurface { offset, tolerance });
        }
        Ok(d / d.norm())
    }

    pub fn point_at(&self, direction: &Vec3) -> Vec3 {
        self.center + self.radius * direction.normalize()
    }

    /// Great-circle distance between two unit directions.
    pub fn geodesic_distance(&self, a: &Vec3, b: &Vec3) -> f64 {
        self.radius * a.dot(b).clamp(-1.0, 1.0).acos()
    }
}

/// Projects `x` onto the sphere along the radial direction.
pub fn closest_point(x: &Vec3, surface: &SphereSurface) -> Result<Vec3> {
    Ok(surface.center + surface.radius * surface.normal(x)?)
}

/// Removes the component of `v` along the unit normal `n`.
pub fn tangent_project(v: &Vec3, n: &Vec3) -> Vec3 {
    v - v.dot(n) * n
}

/// A rigid, immovable bump on the sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center_direction: Vec3,
    pub geodesic_radius: f64,
    pub height: f64,
}

impl Obstacle {
    /// Builds a validated obstacle. Any nonzero `center_direction` is normalized.
    pub fn new(center_direction: Vec3, geodesic_radius: f64, height: f64, surface: &SphereSurface) -> Result<Self> {
        let obstacle = Self {
            center_direction,
            geodesic_radius,
            height,
        };
        obstacle.validated(surface)
    }

    pub fn validated(mut self, surface: &SphereSurface) -> Result<Self> {
        let len = self.center_direction.norm();
        if !(len > 1e-12) || !len.is_finite() {
            return Err(Error::InvalidArgument("obstacle center_direction must be a nonzero vector".into()));
        }
        self.center_direction /= len;
        let max_radius = std::f64::consts::PI * surface.radius;
        if !(self.geodesic_radius > 0.0 && self.geodesic_radius < max_radius) {
            return Err(Error::InvalidArgument(format!(
                "obstacle geodesic_radius must lie in (0, {max_radius}), got {}",
                self.geodesic_radius
            )));
        }
        if !(self.height >= 0.0) || !self.height.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "obstacle height must be non-negative, got {}",
                self.height
            )));
        }
        Ok(self)
    }

    pub fn gaussian_width(&self) -> f64 {
        0.5 * self.geodesic_radius
    }
}

/// Geodesic signed distance to the obstacle rim: negative inside.
pub fn obstacle_sdf(obstacle: &Obstacle, y: &Vec3, surface: &SphereSurface) -> Result<f64> {
    let dir = surface.surface_direction(y)?;
    Ok(surface.geodesic_distance(&dir, &obstacle.center_direction) - obstacle.geodesic_radius)
}

/// Rendering-only vertex displacement by Gaussian bumps centered on each obstacle.
pub fn bump_displacement(vertex: &Vec3, obstacles: &[Obstacle], surface: &SphereSurface) -> Vec3 {
    let d = vertex - surface.center;
    let n = d.normalize();
    let lift: f64 = obstacles
        .iter()
        .map(|o| {
            let dist = surface.geodesic_distance(&n, &o.center_direction);
            let sigma = o.gaussian_width();
            o.height * (-dist * dist / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    vertex + lift * n
}

/// A subset of grid nodes with a bijective ordinal numbering.
#[derive(Clone, Debug)]
pub struct NodeSet {
    grid: GridSpec,
    spacing: f64,
    nodes: Vec<[u32; 3]>,
    lookup: Vec<u32>,
}

impl NodeSet {
    pub fn from_predicate(grid: &GridSpec, mut keep: impl FnMut(&Vec3) -> bool) -> Self {
        let r = grid.resolution;
        let mut nodes = Vec::new();
        let mut lookup = vec![ABSENT; grid.num_points()];
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    if keep(&grid.point(i, j, k)) {
                        lookup[grid.linear_index(i, j, k)] = nodes.len() as u32;
                        nodes.push([i as u32, j as u32, k as u32]);
                    }
                }
            }
        }
        Self {
            spacing: grid.spacing(),
            grid: grid.clone(),
            nodes,
            lookup,
        }
    }

    /// Every node of the grid.
    pub fn full(grid: &GridSpec) -> Self {
        Self::from_predicate(grid, |_| true)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index(&self, ordinal: usize) -> [usize; 3] {
        let [i, j, k] = self.nodes[ordinal];
        [i as usize, j as usize, k as usize]
    }

    pub fn indices(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.nodes.iter().map(|&[i, j, k]| [i as usize, j as usize, k as usize])
    }

    pub fn position(&self, ordinal: usize) -> Vec3 {
        let [i, j, k] = self.index(ordinal);
        self.grid.point(i, j, k)
    }

    pub fn ordinal(&self, i: usize, j: usize, k: usize) -> Option<usize> {
        let r = self.grid.resolution;
        if i >= r || j >= r || k >= r {
            return None;
        }
        match self.lookup[self.grid.linear_index(i, j, k)] {
            ABSENT => None,
            o => Some(o as usize),
        }
    }

    /// Ordinal of the neighbor one step along `axis` in direction `step` (±1).
    pub fn neighbor(&self, ordinal: usize, axis: usize, step: isize) -> Option<usize> {
        let mut idx = self.index(ordinal);
        let moved = idx[axis] as isize + step;
        if moved < 0 {
            return None;
        }
        idx[axis] = moved as usize;
        self.ordinal(idx[0], idx[1], idx[2])
    }

    /// True when all six face neighbors are members.
    pub fn is_interior(&self, ordinal: usize) -> bool {
        (0..3).all(|a| self.neighbor(ordinal, a, -1).is_some() && self.neighbor(ordinal, a, 1).is_some())
    }
}

/// Grid nodes in a tube around the sphere, with closest points and normals.
#[derive(Clone, Debug)]
pub struct NarrowBand {
    nodes: NodeSet,
    surface: SphereSurface,
    half_width: f64,
    closest_points: Vec<Vec3>,
    normals: Vec<Vec3>,
}

pub const DEFAULT_HALF_WIDTH_CELLS: f64 = 3.0;

/// Collects the grid points within `half_width_cells · h` of the sphere.
pub fn build_narrow_band(grid: &GridSpec, surface: &SphereSurface, half_width_cells: f64) -> Result<NarrowBand> {
    grid.validate()?;
    surface.validate()?;
    if !(half_width_cells > 0.0) {
        return Err(Error::Config(format!("band half-width must be positive, got {half_width_cells}")));
    }
    let half_width = half_width_cells * grid.spacing();
    let nodes = NodeSet::from_predicate(grid, |x| {
        let dist = (x - surface.center).norm();
        dist >= 1e-12 * surface.radius && (dist - surface.radius).abs() <= half_width
    });
    if nodes.is_empty() {
        return Err(Error::Config("narrow band is empty; check sphere placement against the grid".into()));
    }
    let mut closest_points = Vec::with_capacity(nodes.len());
    let mut normals = Vec::with_capacity(nodes.len());
    for o in 0..nodes.len() {
        let x = nodes.position(o);
        let n = surface.normal(&x)?;
        normals.push(n);
        closest_points.push(surface.center + surface.radius * n);
    }
    Ok(NarrowBand {
        nodes,
        surface: surface.clone(),
        half_width,
        closest_points,
        normals,
    })
}

impl NarrowBand {
    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn surface(&self) -> &SphereSurface {
        &self.surface
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        self.nodes.spacing()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn closest_points(&self) -> &[Vec3] {
        &self.closest_points
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn position(&self, ordinal: usize) -> Vec3 {
        self.nodes.position(ordinal)
    }
}
