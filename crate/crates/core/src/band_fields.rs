//! Fields sampled on band nodes, trilinear interpolation and the
//! closest-point extension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{tangent_project, NarrowBand, NodeSet, Vec3};

/// One real value per node, in node-set ordinal order.
#[derive(Clone, Debug, PartialEq)]
pub struct BandScalarField {
    values: Vec<f64>,
}

impl BandScalarField {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self { values: vec![value; len] }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    /// Samples `f` at every node position.
    pub fn sample(nodes: &NodeSet, mut f: impl FnMut(&Vec3) -> f64) -> Self {
        Self {
            values: (0..nodes.len()).map(|o| f(&nodes.position(o))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_snapshot(&self, nodes: &NodeSet) -> FieldSnapshot {
        FieldSnapshot {
            resolution: nodes.grid().resolution,
            indices: nodes.indices().map(|[i, j, k]| [i as u32, j as u32, k as u32]).collect(),
            values: self.values.clone(),
        }
    }
}

/// Three-component field; every component lives on the same node set.
#[derive(Clone, Debug, PartialEq)]
pub struct BandVectorField {
    values: Vec<Vec3>,
}

impl BandVectorField {
    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![Vec3::zeros(); len],
        }
    }

    pub fn from_values(values: Vec<Vec3>) -> Self {
        Self { values }
    }

    pub fn sample(nodes: &NodeSet, mut f: impl FnMut(&Vec3) -> Vec3) -> Self {
        Self {
            values: (0..nodes.len()).map(|o| f(&nodes.position(o))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Vec3] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec3] {
        &mut self.values
    }

    pub fn component(&self, axis: usize) -> BandScalarField {
        BandScalarField::from_values(self.values.iter().map(|v| v[axis]).collect())
    }

    pub fn from_components(x: &BandScalarField, y: &BandScalarField, z: &BandScalarField) -> Self {
        assert!(x.len() == y.len() && y.len() == z.len(), "component lengths differ");
        Self {
            values: (0..x.len())
                .map(|o| Vec3::new(x.values()[o], y.values()[o], z.values()[o]))
                .collect(),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }
}

/// Flat, band-ordered export of a field together with its index map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub resolution: usize,
    pub indices: Vec<[u32; 3]>,
    pub values: Vec<f64>,
}

/// The eight cell corners around a query point and its in-cell fractions.
///
/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)` from the
/// cell base.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub corners: [u32; 8],
    pub frac: [f64; 3],
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 1.0 {
        b
    } else {
        a + t * (b - a)
    }
}

#[inline]
fn lerp3(a: &Vec3, b: &Vec3, t: f64) -> Vec3 {
    Vec3::new(lerp(a.x, b.x, t), lerp(a.y, b.y, t), lerp(a.z, b.z, t))
}

impl Stencil {
    /// Nested-lerp evaluation; exact on constants and at nodes.
    pub fn eval(&self, values: &[f64]) -> f64 {
        let v = |c: usize| values[self.corners[c] as usize];
        let [tx, ty, tz] = self.frac;
        let a = lerp(lerp(v(0), v(1), tx), lerp(v(2), v(3), tx), ty);
        let b = lerp(lerp(v(4), v(5), tx), lerp(v(6), v(7), tx), ty);
        lerp(a, b, tz)
    }

    pub fn eval_vec(&self, values: &[Vec3]) -> Vec3 {
        let v = |c: usize| &values[self.corners[c] as usize];
        let [tx, ty, tz] = self.frac;
        let a = lerp3(&lerp3(v(0), v(1), tx), &lerp3(v(2), v(3), tx), ty);
        let b = lerp3(&lerp3(v(4), v(5), tx), &lerp3(v(6), v(7), tx), ty);
        lerp3(&a, &b, tz)
    }
}

/// Finds the interpolation stencil of `x`. Corners carrying zero weight may
/// be absent from the node set.
pub fn locate(nodes: &NodeSet, x: &Vec3) -> Result<Stencil> {
    let grid = nodes.grid();
    let h = nodes.spacing();
    let r = grid.resolution;
    let out = || Error::OutOfBand { x: x.x, y: x.y, z: x.z };
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let mut t = (x[a] - grid.domain_min[a]) / h;
        if !t.is_finite() {
            return Err(out());
        }
        let snapped = t.round();
        if (t - snapped).abs() < 1e-12 * r as f64 {
            t = snapped;
        }
        if t < 0.0 || t > (r - 1) as f64 {
            return Err(out());
        }
        let b = (t.floor() as usize).min(r - 2);
        base[a] = b;
        frac[a] = t - b as f64;
    }
    let mut corners = [0u32; 8];
    for (c, slot) in corners.iter_mut().enumerate() {
        let mut idx = base;
        for a in 0..3 {
            // a zero fraction lets the upper corner alias the lower one
            if (c >> a) & 1 == 1 && frac[a] != 0.0 {
                idx[a] += 1;
            }
        }
        *slot = nodes.ordinal(idx[0], idx[1], idx[2]).ok_or_else(out)? as u32;
    }
    Ok(Stencil { corners, frac })
}

/// Trilinear interpolation of a node-set field at `x`.
pub fn trilinear_interpolate(nodes: &NodeSet, field: &BandScalarField, x: &Vec3) -> Result<f64> {
    Ok(locate(nodes, x)?.eval(field.values()))
}

/// Cached closest-point extension operator for one band.
#[derive(Clone, Debug)]
pub struct CpExtension {
    stencils: Vec<Stencil>,
    normals: Vec<Vec3>,
}

impl CpExtension {
    pub fn new(band: &NarrowBand) -> Result<Self> {
        let stencils = band
            .closest_points()
            .iter()
            .map(|cp| locate(band.nodes(), cp))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Config(format!("band too thin for closest-point extension: {e}")))?;
        Ok(Self {
            stencils,
            normals: band.normals().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.stencils.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stencils.is_empty()
    }

    /// Replaces each band value with the interpolated value at its closest point.
    pub fn cp_extend(&self, field: &BandScalarField) -> BandScalarField {
        debug_assert_eq!(field.len(), self.stencils.len());
        BandScalarField::from_values(self.stencils.iter().map(|s| s.eval(field.values())).collect())
    }

    /// Componentwise extension followed by projection onto each point's tangent plane.
    pub fn cp_extend_vector(&self, field: &BandVectorField) -> BandVectorField {
        debug_assert_eq!(field.len(), self.stencils.len());
        BandVectorField::from_values(
            self.stencils
                .iter()
                .zip(&self.normals)
                .map(|(s, n)| tangent_project(&s.eval_vec(field.values()), n))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_narrow_band, GridSpec, SphereSurface};
    use approx::assert_relative_eq;

    fn band(r: usize) -> NarrowBand {
        build_narrow_band(&GridSpec::unit_cube(r), &SphereSurface::default(), 3.0).unwrap()
    }

    #[test]
    fn interpolation_is_nodal() {
        let b = band(15);
        let f = BandScalarField::sample(b.nodes(), |x| (3.0 * x.x).sin() + x.y * x.z);
        for o in (0..b.len()).step_by(7) {
            let v = trilinear_interpolate(b.nodes(), &f, &b.position(o)).unwrap();
            assert_eq!(v, f.values()[o]);
        }
    }

    #[test]
    fn interpolation_reproduces_linear_fields() {
        let nodes = NodeSet::full(&GridSpec::unit_cube(9));
        let lin = |x: &Vec3| 2.0 * x.x + 3.0 * x.y - x.z;
        let f = BandScalarField::sample(&nodes, lin);
        for q in [Vec3::new(0.13, 0.77, 0.41), Vec3::new(0.999, 0.5, 0.0), Vec3::new(0.3, 0.3, 0.3)] {
            assert_relative_eq!(trilinear_interpolate(&nodes, &f, &q).unwrap(), lin(&q), epsilon = 1e-13);
        }
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let nodes = NodeSet::full(&GridSpec::unit_cube(5));
        let f = BandScalarField::sample(&nodes, |x| (x.x * 7.0).cos() + x.y * x.y - x.z.powi(3));
        let h = 0.25;
        let center = Vec3::new(1.5 * h, 0.5 * h, 2.5 * h);
        let mut mean = 0.0;
        for c in 0..8 {
            let (i, j, k) = (1 + (c & 1), (c >> 1) & 1, 2 + ((c >> 2) & 1));
            mean += f.values()[nodes.ordinal(i, j, k).unwrap()] / 8.0;
        }
        assert_relative_eq!(trilinear_interpolate(&nodes, &f, &center).unwrap(), mean, epsilon = 1e-14);
    }

    #[test]
    fn missing_corner_is_out_of_band() {
        let b = band(11);
        let f = BandScalarField::zeros(b.len());
        let center = b.surface().center;
        assert!(matches!(
            trilinear_interpolate(b.nodes(), &f, &(center + Vec3::new(0.01, 0.02, 0.03))),
            Err(Error::OutOfBand { .. })
        ));
        assert!(trilinear_interpolate(b.nodes(), &f, &Vec3::new(1.5, 0.5, 0.5)).is_err());
    }

    #[test]
    fn extension_preserves_constants_exactly() {
        let b = band(13);
        let ext = CpExtension::new(&b).unwrap();
        let f = BandScalarField::constant(b.len(), 2.75);
        assert_eq!(ext.cp_extend(&f), f);
    }

    #[test]
    fn radial_distance_extends_to_radius() {
        let b = band(21);
        let ext = CpExtension::new(&b).unwrap();
        let c = b.surface().center;
        let f = BandScalarField::sample(b.nodes(), |x| (x - c).norm());
        let h = b.spacing();
        let e = ext.cp_extend(&f);
        let worst = e.values().iter().fold(0.0f64, |m, v| m.max((v - b.surface().radius).abs()));
        assert!(worst <= 10.0 * h * h, "worst {worst}");
    }

    #[test]
    fn extension_is_linear() {
        let b = band(13);
        let ext = CpExtension::new(&b).unwrap();
        let f = BandScalarField::sample(b.nodes(), |x| x.x.sin());
        let g = BandScalarField::sample(b.nodes(), |x| x.y * x.z);
        let combo = BandScalarField::from_values(
            f.values().iter().zip(g.values()).map(|(a, b)| 2.0 * a - 0.5 * b).collect(),
        );
        let (ef, eg, ec) = (ext.cp_extend(&f), ext.cp_extend(&g), ext.cp_extend(&combo));
        for o in 0..b.len() {
            let expect = 2.0 * ef.values()[o] - 0.5 * eg.values()[o];
            assert!((ec.values()[o] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn extended_vectors_are_tangent() {
        let b = band(15);
        let ext = CpExtension::new(&b).unwrap();
        let v = BandVectorField::from_values(vec![Vec3::new(0.3, -1.0, 0.2); b.len()]);
        let e = ext.cp_extend_vector(&v);
        for (o, w) in e.values().iter().enumerate() {
            assert!(w.dot(&b.normals()[o]).abs() <= 1e-9 * w.norm().max(1.0));
        }
        let radial = BandVectorField::from_values(b.normals().to_vec());
        let e = ext.cp_extend_vector(&radial);
        assert!(e.max_norm() < 0.05, "radial residue {}", e.max_norm());
    }

    #[test]
    fn rigid_rotation_survives_extension() {
        let b = band(21);
        let ext = CpExtension::new(&b).unwrap();
        let c = b.surface().center;
        let omega = Vec3::new(0.0, 0.0, 1.0);
        let rot = |x: &Vec3| omega.cross(&(x - c));
        let v = BandVectorField::sample(b.nodes(), rot);
        let e = ext.cp_extend_vector(&v);
        let h = b.spacing();
        for o in 0..b.len() {
            // the extension evaluates the field at the closest point
            let expect = rot(&b.closest_points()[o]);
            assert!((e.values()[o] - expect).norm() <= 10.0 * h * h);
        }
    }
}
