//! Plot data as plain CSV polylines.

use std::io::{self, Write};

use nalgebra::{DMatrix, Vector2};

use quantswitch::linalg::sym_eigen;
use quantswitch::simulate::Trajectory;
use quantswitch::Error;

/// Samples `{x : xᵀPx = level}` at `points` equally spaced angles by mapping
/// the unit circle through the eigenbasis of `P`.
pub fn ellipsoid_polyline(p: &DMatrix<f64>, level: f64, points: usize) -> Result<Vec<[f64; 2]>, Error> {
    if p.nrows() != 2 || p.ncols() != 2 {
        return Err(Error::UnsupportedDimension(p.nrows()));
    }
    let (values, vectors) = sym_eigen(p);
    if !(values[0] > 0.0) {
        return Err(Error::Parameter {
            name: "P",
            detail: "matrix is not positive definite".into(),
        });
    }
    let axes = Vector2::new((level / values[0]).sqrt(), (level / values[1]).sqrt());
    Ok((0..points)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / points as f64;
            let local = Vector2::new(axes[0] * theta.cos(), axes[1] * theta.sin());
            let x0 = vectors[(0, 0)] * local[0] + vectors[(0, 1)] * local[1];
            let x1 = vectors[(1, 0)] * local[0] + vectors[(1, 1)] * local[1];
            [x0, x1]
        })
        .collect())
}

pub fn write_polyline<W: Write>(points: &[[f64; 2]], closed: bool, out: &mut W) -> io::Result<()> {
    writeln!(out, "x1,x2")?;
    for p in points {
        writeln!(out, "{:.16e},{:.16e}", p[0], p[1])?;
    }
    if closed {
        if let Some(p) = points.first() {
            writeln!(out, "{:.16e},{:.16e}", p[0], p[1])?;
        }
    }
    Ok(())
}

/// Phase-plane path of a two-state trajectory.
pub fn write_phase_path<W: Write>(trajectory: &Trajectory, out: &mut W) -> io::Result<()> {
    writeln!(out, "t,x1,x2")?;
    for e in &trajectory.events {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", e.t, e.x[0], e.x[1])?;
    }
    Ok(())
}
