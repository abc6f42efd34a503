//! Finite static quantizers over axis-aligned box partitions.
//!
//! A partition is a finite list of [`Cell`]s, each a box with a per-axis
//! closure convention and a quantization point. Product partitions built from
//! per-axis bands (such as [`build_log_quantizer`]) additionally keep the axis
//! structure so that lookups are a binary search per axis.
//!
//! Boundary ownership follows the logarithmic quantizer literally: the
//! deadzone `[-ξ₀, ξ₀]` is closed, positive bands are `(lo, hi]` and negative
//! bands `[-hi, -lo)`. Every shared boundary therefore belongs to the cell
//! closer to the origin.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// One interval of a per-axis quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
    pub upper_closed: bool,
    pub value: f64,
}

impl Band {
    fn contains(&self, x: f64) -> bool {
        let above = if self.lower_closed { x >= self.lower } else { x > self.lower };
        let below = if self.upper_closed { x <= self.upper } else { x < self.upper };
        above && below
    }
}

/// A box-shaped partition cell `𝒬_j` with quantization point `q_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: usize,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub lower_closed: Vec<bool>,
    pub upper_closed: Vec<bool>,
    pub q: DVector<f64>,
}

impl Cell {
    /// Builds a cell, enforcing `lower < upper` and `q = 0` whenever the
    /// closure contains the origin.
    pub fn new(
        id: usize,
        lower: DVector<f64>,
        upper: DVector<f64>,
        lower_closed: Vec<bool>,
        upper_closed: Vec<bool>,
        q: DVector<f64>,
    ) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n || q.len() != n || lower_closed.len() != n || upper_closed.len() != n {
            return Err(Error::Partition {
                cell: id,
                detail: "inconsistent dimensions".into(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l < u)) {
            return Err(Error::Partition {
                cell: id,
                detail: "degenerate box (lower >= upper)".into(),
            });
        }
        let cell = Self {
            id,
            lower,
            upper,
            lower_closed,
            upper_closed,
            q,
        };
        if cell.closure_contains_origin() && cell.q.amax() != 0.0 {
            return Err(Error::Partition {
                cell: id,
                detail: "closure contains the origin but q != 0".into(),
            });
        }
        Ok(cell)
    }

    /// Closed box `[lower, upper]`.
    pub fn closed(id: usize, lower: &[f64], upper: &[f64], q: &[f64]) -> Result<Self> {
        let n = lower.len();
        Self::new(
            id,
            DVector::from_row_slice(lower),
            DVector::from_row_slice(upper),
            vec![true; n],
            vec![true; n],
            DVector::from_row_slice(q),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..self.dim()).all(|i| {
            let v = x[i];
            let above = if self.lower_closed[i] { v >= self.lower[i] } else { v > self.lower[i] };
            let below = if self.upper_closed[i] { v <= self.upper[i] } else { v < self.upper[i] };
            above && below
        })
    }

    pub fn closure_contains_origin(&self) -> bool {
        self.lower.iter().all(|&l| l <= 0.0) && self.upper.iter().all(|&u| u >= 0.0)
    }

    /// Point of the closed box nearest to `x`.
    pub fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| x[i].clamp(self.lower[i], self.upper[i])),
        )
    }

    /// `min_{x∈𝒬_j} ‖x‖`.
    pub fn min_norm(&self) -> f64 {
        self.clamp(&DVector::zeros(self.dim())).norm()
    }

    /// `max_{x∈𝒬_j} ‖q_j − x‖`, attained at a vertex.
    pub fn max_deviation(&self) -> f64 {
        let n = self.dim();
        (0..(1usize << n))
            .map(|mask| {
                (0..n)
                    .map(|i| {
                        let v = if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] };
                        (self.q[i] - v).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Vertices of the closed box.
    pub fn vertices(&self) -> impl Iterator<Item = DVector<f64>> + '_ {
        let n = self.dim();
        (0..(1usize << n)).map(move |mask| {
            DVector::from_iterator(
                n,
                (0..n).map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] }),
            )
        })
    }
}

/// `min_{x∈𝒬_j} ‖x‖`.
pub fn cell_min_norm(cell: &Cell) -> f64 {
    cell.min_norm()
}

/// `max_{x∈𝒬_j} ‖q_j − x‖`.
pub fn cell_max_deviation(cell: &Cell) -> f64 {
    cell.max_deviation()
}

/// A finite partition together with the radius of the ball it tiles.
#[derive(Debug, Clone)]
pub struct QuantizerPartition {
    cells: Vec<Cell>,
    coverage_radius: f64,
    axes: Option<Vec<Vec<Band>>>,
}

impl QuantizerPartition {
    /// Partition from an explicit cell list. Disjointness and coverage of the
    /// ball are the caller's responsibility; lookups scan the list.
    pub fn from_cells(cells: Vec<Cell>, coverage_radius: f64) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Parameter {
                name: "cells",
                detail: "empty partition".into(),
            });
        }
        let n = cells[0].dim();
        for (i, c) in cells.iter().enumerate() {
            if c.dim() != n || c.id != i {
                return Err(Error::Partition {
                    cell: i,
                    detail: "cells must share one dimension and be numbered 0..".into(),
                });
            }
        }
        Ok(Self {
            cells,
            coverage_radius,
            axes: None,
        })
    }

    /// Cartesian-product partition from per-axis bands. Each axis must tile
    /// an interval without gaps, bands sorted ascending.
    pub fn from_axes(axes: Vec<Vec<Band>>, coverage_radius: f64) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(Error::Parameter {
                name: "axes",
                detail: "every axis needs at least one band".into(),
            });
        }
        for (ai, bands) in axes.iter().enumerate() {
            for w in bands.windows(2) {
                if w[0].upper != w[1].lower || w[0].upper_closed == w[1].lower_closed {
                    return Err(Error::Parameter {
                        name: "axes",
                        detail: format!("axis {ai}: bands must abut with exactly one owner"),
                    });
                }
            }
            let lo = bands[0].lower;
            let hi = bands[bands.len() - 1].upper;
            if lo > -coverage_radius || hi < coverage_radius {
                return Err(Error::Parameter {
                    name: "coverage_radius",
                    detail: format!("axis {ai} spans [{lo}, {hi}], too short for radius {coverage_radius}"),
                });
            }
        }
        let n = axes.len();
        let counts: Vec<usize> = axes.iter().map(Vec::len).collect();
        let total: usize = counts.iter().product();
        let mut cells = Vec::with_capacity(total);
        for id in 0..total {
            let mut rem = id;
            let mut picks = Vec::with_capacity(n);
            for &c in &counts {
                picks.push(rem % c);
                rem /= c;
            }
            let band = |i: usize| &axes[i][picks[i]];
            cells.push(Cell::new(
                id,
                DVector::from_iterator(n, (0..n).map(|i| band(i).lower)),
                DVector::from_iterator(n, (0..n).map(|i| band(i).upper)),
                (0..n).map(|i| band(i).lower_closed).collect(),
                (0..n).map(|i| band(i).upper_closed).collect(),
                DVector::from_iterator(n, (0..n).map(|i| band(i).value)),
            )?);
        }
        Ok(Self {
            cells,
            coverage_radius,
            axes: Some(axes),
        })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: usize) -> &Cell {
        &self.cells[id]
    }

    pub fn dim(&self) -> usize {
        self.cells[0].dim()
    }

    pub fn coverage_radius(&self) -> f64 {
        self.coverage_radius
    }

    /// Cell containing `x`, without the coverage check.
    pub fn locate(&self, x: &DVector<f64>) -> Option<usize> {
        match &self.axes {
            Some(axes) => {
                let mut id = 0;
                let mut stride = 1;
                for (i, bands) in axes.iter().enumerate() {
                    let v = x[i];
                    // Bands are sorted: first band whose upper end reaches v.
                    let mut k = bands.partition_point(|b| b.upper < v);
                    while k < bands.len() && !bands[k].contains(v) {
                        k += 1;
                    }
                    if k == bands.len() {
                        return None;
                    }
                    id += k * stride;
                    stride *= bands.len();
                }
                Some(id)
            }
            None => self.cells.iter().position(|c| c.contains(x)),
        }
    }

    /// `Q(x)` and the owning cell.
    pub fn quantize(&self, x: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
        let norm = x.norm();
        if !(norm <= self.coverage_radius) {
            return Err(Error::OutOfRange {
                norm,
                radius: self.coverage_radius,
            });
        }
        let id = self.locate(x).ok_or(Error::OutOfRange {
            norm,
            radius: self.coverage_radius,
        })?;
        Ok((self.cells[id].q.clone(), id))
    }

    /// Cells whose closure meets the ball `B(radius)`.
    pub fn cells_meeting_ball(&self, radius: f64) -> Vec<usize> {
        self.cells
            .iter()
            .filter(|c| c.min_norm() <= radius)
            .map(|c| c.id)
            .collect()
    }
}

/// Product logarithmic quantizer: deadzone `[-ξ₀, ξ₀] → 0`, band
/// `(ξ₀ηᵏ, ξ₀ηᵏ⁺¹] → ξ₀(ηᵏ + ηᵏ⁺¹)/2` for `k < levels`, mirrored for negatives.
pub fn build_log_quantizer(xi0: f64, eta: f64, levels: usize, dim: usize) -> Result<QuantizerPartition> {
    if !(xi0 > 0.0 && xi0.is_finite()) {
        return Err(Error::Parameter {
            name: "xi0",
            detail: format!("must be > 0, got {xi0}"),
        });
    }
    if !(eta > 1.0 && eta.is_finite()) {
        return Err(Error::Parameter {
            name: "eta",
            detail: format!("must be > 1, got {eta}"),
        });
    }
    if dim == 0 {
        return Err(Error::Parameter {
            name: "dim",
            detail: "must be >= 1".into(),
        });
    }
    let edges: Vec<f64> = (0..=levels).map(|k| xi0 * eta.powi(k as i32)).collect();
    let mut bands = Vec::with_capacity(2 * levels + 1);
    for k in (0..levels).rev() {
        bands.push(Band {
            lower: -edges[k + 1],
            upper: -edges[k],
            lower_closed: true,
            upper_closed: false,
            value: -0.5 * (edges[k] + edges[k + 1]),
        });
    }
    bands.push(Band {
        lower: -xi0,
        upper: xi0,
        lower_closed: true,
        upper_closed: true,
        value: 0.0,
    });
    for k in 0..levels {
        bands.push(Band {
            lower: edges[k],
            upper: edges[k + 1],
            lower_closed: false,
            upper_closed: true,
            value: 0.5 * (edges[k] + edges[k + 1]),
        });
    }
    QuantizerPartition::from_axes(vec![bands; dim], edges[levels])
}

/// Cells that meet the ellipsoid `{xᵀPx ≤ level}`, found through its
/// enclosing ball of radius `√(level/λ_min(P))`. Conservative superset.
pub fn cells_covering_ellipsoid(
    partition: &QuantizerPartition,
    p: &DMatrix<f64>,
    level: f64,
) -> Result<Vec<usize>> {
    let (lmin, _) = linalg::extreme_eigenvalues(p);
    if !(lmin > 0.0) {
        return Err(Error::Parameter {
            name: "P",
            detail: "must be positive definite".into(),
        });
    }
    let radius = (level.max(0.0) / lmin).sqrt();
    if radius > partition.coverage_radius() * (1.0 + 1e-12) {
        return Err(Error::OutOfRange {
            norm: radius,
            radius: partition.coverage_radius(),
        });
    }
    Ok(partition.cells_meeting_ball(radius))
}

/// `log₂|𝒮_f| + log₂|𝒫|` bits transmitted per sampling instant.
pub fn bits_per_sample(cell_count: usize, mode_count: usize) -> f64 {
    (cell_count as f64).log2() + (mode_count as f64).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn reference_quantizer() -> QuantizerPartition {
        build_log_quantizer(0.08, 1.2, 38, 2).unwrap()
    }

    #[test]
    fn deadzone_maps_to_zero() {
        let qz = reference_quantizer();
        let (q, _) = qz.quantize(&v(&[0.05, -0.05])).unwrap();
        assert_eq!(q, v(&[0.0, 0.0]));
    }

    #[test]
    fn first_band_value() {
        let qz = reference_quantizer();
        let (q, _) = qz.quantize(&v(&[0.09, 0.0])).unwrap();
        assert_relative_eq!(q[0], 0.088, epsilon = 1e-15);
        assert_eq!(q[1], 0.0);
    }

    #[test]
    fn deadzone_edge_is_closed() {
        let qz = reference_quantizer();
        assert_eq!(qz.quantize(&v(&[0.08, -0.08])).unwrap().0, v(&[0.0, 0.0]));
    }

    #[test]
    fn shared_edges_belong_to_inner_band() {
        let qz = reference_quantizer();
        let edge = 0.08 * 1.2;
        let (qp, _) = qz.quantize(&v(&[edge, 0.0])).unwrap();
        assert_relative_eq!(qp[0], 0.088, epsilon = 1e-15);
        let (qn, _) = qz.quantize(&v(&[-edge, 0.0])).unwrap();
        assert_relative_eq!(qn[0], -0.088, epsilon = 1e-15);
    }

    #[test]
    fn origin_quantizes_to_zero() {
        let qz = reference_quantizer();
        assert_eq!(qz.quantize(&v(&[0.0, 0.0])).unwrap().0, v(&[0.0, 0.0]));
    }

    #[test]
    fn out_of_coverage_is_an_error() {
        let qz = reference_quantizer();
        let r = qz.coverage_radius();
        assert!(matches!(
            qz.quantize(&v(&[r, 1.0])),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn rejects_eta_at_most_one() {
        assert!(build_log_quantizer(0.08, 1.0, 10, 2).is_err());
        assert!(build_log_quantizer(0.08, 0.5, 10, 2).is_err());
    }

    #[test]
    fn min_norm_examples() {
        let a = Cell::closed(0, &[1.0, 1.0], &[2.0, 2.0], &[1.5, 1.5]).unwrap();
        assert_relative_eq!(cell_min_norm(&a), 2f64.sqrt(), epsilon = 1e-15);
        let b = Cell::closed(0, &[-1.0, 3.0], &[1.0, 4.0], &[0.0, 3.5]).unwrap();
        assert_relative_eq!(cell_min_norm(&b), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn max_deviation_examples() {
        let c = Cell::closed(0, &[0.0, 0.0], &[2.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(cell_max_deviation(&c), 2.0 * 2f64.sqrt(), epsilon = 1e-15);
        let d = Cell::closed(0, &[0.5, 0.5], &[2.5, 2.5], &[1.5, 1.5]).unwrap();
        assert_relative_eq!(cell_max_deviation(&d), 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn origin_cell_must_quantize_to_zero() {
        let err = Cell::closed(0, &[-1.0, -1.0], &[1.0, 1.0], &[0.5, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Partition { .. }));
    }

    #[test]
    fn degenerate_cell_rejected() {
        assert!(Cell::closed(0, &[1.0, 0.0], &[1.0, 1.0], &[1.0, 0.5]).is_err());
    }

    #[test]
    fn zero_level_gives_origin_cells() {
        let qz = reference_quantizer();
        let ids = cells_covering_ellipsoid(&qz, &DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(ids.len(), 1);
        assert!(qz.cell(ids[0]).closure_contains_origin());
    }

    #[test]
    fn unit_sphere_cover_matches_box_ball_test() {
        let qz = reference_quantizer();
        let ids = cells_covering_ellipsoid(&qz, &DMatrix::identity(2, 2), 1.0).unwrap();
        for c in qz.cells() {
            assert_eq!(ids.contains(&c.id), c.min_norm() <= 1.0);
        }
    }

    #[test]
    fn ellipsoid_beyond_coverage_errors() {
        let qz = reference_quantizer();
        let r = qz.coverage_radius();
        assert!(cells_covering_ellipsoid(&qz, &DMatrix::identity(2, 2), 4.0 * r * r).is_err());
    }

    #[test]
    fn scan_and_axis_lookup_agree() {
        let qz = reference_quantizer();
        let scan = QuantizerPartition::from_cells(qz.cells().to_vec(), qz.coverage_radius()).unwrap();
        for x in [[0.08, 0.0960001], [-0.096, 0.08], [5.0, -7.5], [-0.0800001, 60.0]] {
            let x = v(&x);
            assert_eq!(qz.quantize(&x).unwrap(), scan.quantize(&x).unwrap());
        }
    }

    #[test]
    fn bit_count() {
        assert_relative_eq!(bits_per_sample(1024, 2), 11.0, epsilon = 1e-12);
    }
}
