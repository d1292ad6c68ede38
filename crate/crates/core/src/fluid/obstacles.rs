use crate::band_fields::BandVectorField;
use crate::geometry::{obstacle_sdf, tangent_project, NarrowBand, Obstacle, Vec3};

/// Per-point classification of the band against an obstacle set.
///
/// Interior points carry `φ(CP(x)) < 0` for some obstacle; collar points
/// satisfy `0 ≤ φ < h` and store the geodesic-outward rim direction.
#[derive(Clone, Debug, Default)]
pub struct ObstacleMask {
    interior: Vec<bool>,
    collar: Vec<(usize, Vec3)>,
    obstacles: Vec<Obstacle>,
}

impl ObstacleMask {
    pub fn new(band: &NarrowBand, obstacles: &[Obstacle]) -> Self {
        let surface = band.surface();
        let collar_width = band.spacing();
        let mut interior = vec![false; band.len()];
        let mut collar = Vec::new();
        for (o, cp) in band.closest_points().iter().enumerate() {
            let n = band.normals()[o];
            for ob in obstacles {
                // closest points lie on the sphere by construction
                let phi = obstacle_sdf(ob, cp, surface).unwrap_or(f64::INFINITY);
                if phi < 0.0 {
                    interior[o] = true;
                } else if phi < collar_width {
                    let m = -tangent_project(&ob.center_direction, &n);
                    let len = m.norm();
                    if len > 1e-12 {
                        collar.push((o, m / len));
                    }
                }
            }
        }
        Self {
            interior,
            collar,
            obstacles: obstacles.to_vec(),
        }
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn is_interior(&self, ordinal: usize) -> bool {
        self.interior.get(ordinal).copied().unwrap_or(false)
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    pub fn collar(&self) -> &[(usize, Vec3)] {
        &self.collar
    }
}

/// No-slip inside obstacles; inflow across the rim is removed in the collar.
pub fn enforce_obstacle_bc(u: &mut BandVectorField, mask: &ObstacleMask) {
    let values = u.values_mut();
    for &(o, m) in &mask.collar {
        let un = values[o].dot(&m);
        if un < 0.0 {
            values[o] -= un * m;
        }
    }
    for (v, &inside) in values.iter_mut().zip(&mask.interior) {
        if inside {
            *v = Vec3::zeros();
        }
    }
}
