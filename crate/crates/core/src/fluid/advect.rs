//! Semi-Lagrangian backtracking on a node set.

use crate::band_fields::{locate, BandScalarField, BandVectorField, Stencil};
use crate::error::{Error, Result};
use crate::geometry::{NodeSet, SphereSurface, Vec3};

/// Maps a backtracked departure point to one whose stencil is available.
pub trait Departure {
    fn fold(&self, x: Vec3) -> Vec3;

    /// Last-resort position when the folded point still misses the node set.
    fn fallback(&self, x: Vec3) -> Vec3 {
        x
    }
}

/// Departure rule for a narrow band: points are pulled radially into the
/// shell where every trilinear corner is a band node.
#[derive(Clone, Debug)]
pub struct TubeDeparture {
    surface: SphereSurface,
    inner: f64,
    outer: f64,
}

impl TubeDeparture {
    pub fn new(surface: &SphereSurface, half_width: f64, spacing: f64) -> Self {
        let reach = (half_width - 3f64.sqrt() * spacing).max(0.0) * (1.0 - 1e-9);
        Self {
            surface: surface.clone(),
            inner: surface.radius - reach,
            outer: surface.radius + reach,
        }
    }
}

impl Departure for TubeDeparture {
    fn fold(&self, x: Vec3) -> Vec3 {
        let d = x - self.surface.center;
        let r = d.norm();
        if r >= self.inner && r <= self.outer {
            return x;
        }
        if r < 1e-12 * self.surface.radius {
            return self.surface.center + self.surface.radius * Vec3::z();
        }
        // re-project to the sphere, then clamp the radius into the tube
        self.surface.center + d * (r.clamp(self.inner, self.outer) / r)
    }

    fn fallback(&self, x: Vec3) -> Vec3 {
        let d = x - self.surface.center;
        let r = d.norm();
        if r < 1e-12 * self.surface.radius {
            return self.surface.center + self.surface.radius * Vec3::z();
        }
        self.surface.center + d * (self.surface.radius / r)
    }
}

/// Clamps departure points into an axis-aligned box.
#[derive(Clone, Debug)]
pub struct BoxDeparture {
    pub min: Vec3,
    pub max: Vec3,
}

impl Departure for BoxDeparture {
    fn fold(&self, x: Vec3) -> Vec3 {
        Vec3::new(
            x.x.clamp(self.min.x, self.max.x),
            x.y.clamp(self.min.y, self.max.y),
            x.z.clamp(self.min.z, self.max.z),
        )
    }
}

/// Interpolation stencils of every node's departure point for one velocity field.
#[derive(Clone, Debug)]
pub struct Backtrace {
    stencils: Vec<Stencil>,
    /// Largest backtrack displacement, in grid cells.
    pub max_displacement_cells: f64,
}

impl Backtrace {
    pub fn compute(nodes: &NodeSet, departure: &impl Departure, velocity: &BandVectorField, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("advection time step must be positive, got {dt}")));
        }
        if velocity.len() != nodes.len() {
            return Err(Error::InvalidArgument("velocity length does not match the node set".into()));
        }
        let mut max_disp: f64 = 0.0;
        let stencils = velocity
            .values()
            .iter()
            .enumerate()
            .map(|(o, u)| {
                let x = nodes.position(o);
                max_disp = max_disp.max(dt * u.norm());
                let target = departure.fold(x - dt * u);
                locate(nodes, &target).or_else(|_| locate(nodes, &departure.fallback(target)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stencils,
            max_displacement_cells: max_disp / nodes.spacing(),
        })
    }

    pub fn scalar(&self, field: &BandScalarField) -> BandScalarField {
        BandScalarField::from_values(self.stencils.iter().map(|s| s.eval(field.values())).collect())
    }

    pub fn vector(&self, field: &BandVectorField) -> BandVectorField {
        BandVectorField::from_values(self.stencils.iter().map(|s| s.eval_vec(field.values())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GridSpec;

    #[test]
    fn zero_velocity_is_identity() {
        let nodes = NodeSet::full(&GridSpec::unit_cube(7));
        let dep = BoxDeparture {
            min: Vec3::zeros(),
            max: Vec3::repeat(1.0),
        };
        let f = BandScalarField::sample(&nodes, |x| (x.x * 5.0).sin() * x.y + x.z);
        let bt = Backtrace::compute(&nodes, &dep, &BandVectorField::zeros(nodes.len()), 0.1).unwrap();
        assert_eq!(bt.scalar(&f), f);
        assert_eq!(bt.max_displacement_cells, 0.0);
    }

    #[test]
    fn uniform_flow_translates_linear_field() {
        let nodes = NodeSet::full(&GridSpec::unit_cube(11));
        let dep = BoxDeparture {
            min: Vec3::zeros(),
            max: Vec3::repeat(1.0),
        };
        let u = Vec3::new(0.3, -0.2, 0.1);
        let lin = |x: &Vec3| 1.5 * x.x - x.y + 0.25 * x.z;
        let f = BandScalarField::sample(&nodes, lin);
        let dt = 0.5;
        let bt = Backtrace::compute(&nodes, &dep, &BandVectorField::from_values(vec![u; nodes.len()]), dt).unwrap();
        let g = bt.scalar(&f);
        for o in 0..nodes.len() {
            let x = nodes.position(o);
            let back = x - dt * u;
            if back.iter().all(|c| (0.0..=1.0).contains(c)) {
                assert!((g.values()[o] - lin(&back)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn non_positive_dt_is_rejected() {
        let nodes = NodeSet::full(&GridSpec::unit_cube(3));
        let dep = BoxDeparture {
            min: Vec3::zeros(),
            max: Vec3::repeat(1.0),
        };
        assert!(Backtrace::compute(&nodes, &dep, &BandVectorField::zeros(nodes.len()), 0.0).is_err());
    }

    #[test]
    fn tube_fold_keeps_points_in_shell() {
        let s = SphereSurface::default();
        let dep = TubeDeparture::new(&s, 0.3, 0.1);
        let far = dep.fold(s.center + Vec3::new(2.0, 0.0, 0.0));
        assert!(((far - s.center).norm() - (s.radius + 0.3 - 3f64.sqrt() * 0.1)).abs() < 1e-9);
        let inside = s.center + Vec3::new(0.0, s.radius + 0.01, 0.0);
        assert_eq!(dep.fold(inside), inside);
    }
}
