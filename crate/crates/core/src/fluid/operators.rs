//! Ambient-frame finite differences on a node set: centered where both
//! neighbors exist, one-sided at the edges.

use crate::band_fields::{BandScalarField, BandVectorField};
use crate::geometry::{NodeSet, Vec3};

#[inline]
fn axis_derivative(nodes: &NodeSet, o: usize, axis: usize, value: impl Fn(usize) -> f64) -> f64 {
    let h = nodes.spacing();
    match (nodes.neighbor(o, axis, -1), nodes.neighbor(o, axis, 1)) {
        (Some(m), Some(p)) => (value(p) - value(m)) / (2.0 * h),
        (None, Some(p)) => (value(p) - value(o)) / h,
        (Some(m), None) => (value(o) - value(m)) / h,
        (None, None) => 0.0,
    }
}

pub fn divergence(nodes: &NodeSet, u: &BandVectorField) -> BandScalarField {
    let v = u.values();
    BandScalarField::from_values(
        (0..nodes.len())
            .map(|o| (0..3).map(|a| axis_derivative(nodes, o, a, |i| v[i][a])).sum())
            .collect(),
    )
}

pub fn gradient(nodes: &NodeSet, p: &BandScalarField) -> BandVectorField {
    let v = p.values();
    BandVectorField::from_values(
        (0..nodes.len())
            .map(|o| {
                Vec3::new(
                    axis_derivative(nodes, o, 0, |i| v[i]),
                    axis_derivative(nodes, o, 1, |i| v[i]),
                    axis_derivative(nodes, o, 2, |i| v[i]),
                )
            })
            .collect(),
    )
}

/// Root-mean-square and maximum magnitude of `field` over the nodes whose
/// six face neighbors are all members.
pub fn interior_norms(nodes: &NodeSet, field: &BandScalarField) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut count = 0usize;
    for (o, v) in field.values().iter().enumerate() {
        if nodes.is_interior(o) {
            sum += v * v;
            max = max.max(v.abs());
            count += 1;
        }
    }
    if count == 0 {
        return (0.0, 0.0);
    }
    ((sum / count as f64).sqrt(), max)
}
