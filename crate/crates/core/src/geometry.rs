//! Axis-aligned boxes, the uniform state lattice and the quantization
//! relation between continuous states and grid cells.
//!
//! Cells are half-open per dimension, `[lower + k*eta, lower + (k+1)*eta)`,
//! except that the closed upper bound of a non-periodic dimension belongs to
//! the last cell. Obstacle marking uses closed-box intersection instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for divisibility and axis-alignment checks.
pub const GEOMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty box dimension")]
    ZeroDimension,
    #[error("inverted bounds in dimension {dim}: {lower} > {upper}")]
    Inverted { dim: usize, lower: f64, upper: f64 },
    #[error("non-finite coordinate in dimension {dim}")]
    NonFinite { dim: usize },
    #[error("cell width must be positive in dimension {dim}, got {eta}")]
    NonPositiveEta { dim: usize, eta: f64 },
    #[error("bounds width {width} is not a multiple of eta {eta} in dimension {dim}")]
    NotDivisible { dim: usize, width: f64, eta: f64 },
    #[error("coordinate {value} outside bounds [{lower}, {upper}] in dimension {dim}")]
    OutOfBounds {
        dim: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("cell index {index:?} out of range")]
    InvalidIndex { index: Vec<i64> },
    #[error("four vertices do not form an axis-aligned rectangle")]
    NonAxisAligned,
    #[error("negative side length {side} in dimension {dim}")]
    NegativeSide { dim: usize, side: f64 },
}

/// Closed axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperRect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl HyperRect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GeometryError> {
        let r = Self { lower, upper };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.lower.len() != self.upper.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.lower.len(),
                actual: self.upper.len(),
            });
        }
        if self.lower.is_empty() {
            return Err(GeometryError::ZeroDimension);
        }
        for (dim, (&lower, &upper)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lower.is_finite() || !upper.is_finite() {
                return Err(GeometryError::NonFinite { dim });
            }
            if lower > upper {
                return Err(GeometryError::Inverted { dim, lower, upper });
            }
        }
        Ok(())
    }

    /// Box centered at `center` with half-widths `radius`.
    pub fn from_center_radius(center: &[f64], radius: &[f64]) -> Self {
        Self {
            lower: center.iter().zip(radius).map(|(c, r)| c - r).collect(),
            upper: center.iter().zip(radius).map(|(c, r)| c + r).collect(),
        }
    }

    pub fn point(p: &[f64]) -> Self {
        Self {
            lower: p.to_vec(),
            upper: p.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn contains_rect(&self, other: &HyperRect) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(other.lower.iter().zip(&other.upper))
            .all(|((l, u), (ol, ou))| l <= ol && ou <= u)
    }

    /// Closed intersection test (touching faces count).
    pub fn intersects(&self, other: &HyperRect) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(other.lower.iter().zip(&other.upper))
            .all(|((l, u), (ol, ou))| l <= ou && ol <= u)
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &HyperRect) -> HyperRect {
        HyperRect {
            lower: self
                .lower
                .iter()
                .zip(&other.lower)
                .map(|(a, b)| a.min(*b))
                .collect(),
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(a, b)| a.max(*b))
                .collect(),
        }
    }

    /// Minkowski sum with the box `[-margin, margin]` in the listed dimensions.
    pub fn inflate(&self, dims: &[usize], margin: f64) -> HyperRect {
        let mut r = self.clone();
        for &d in dims {
            r.lower[d] -= margin;
            r.upper[d] += margin;
        }
        r
    }

    /// Intersection with `other`, clipped; `None` when disjoint.
    pub fn clip(&self, other: &HyperRect) -> Option<HyperRect> {
        if !self.intersects(other) {
            return None;
        }
        Some(HyperRect {
            lower: self
                .lower
                .iter()
                .zip(&other.lower)
                .map(|(a, b)| a.max(*b))
                .collect(),
            upper: self
                .upper
                .iter()
                .zip(&other.upper)
                .map(|(a, b)| a.min(*b))
                .collect(),
        })
    }
}

/// The three ways a rectangular region may be described.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RectEncoding {
    /// Four corners of a 2-D axis-aligned rectangle, in any order.
    #[serde(rename = "vertices4")]
    FourVertices { vertices: [[f64; 2]; 4] },
    /// Two opposite corners.
    Diagonal { a: Vec<f64>, b: Vec<f64> },
    /// Center point and full side lengths.
    CenterSides { center: Vec<f64>, sides: Vec<f64> },
}

impl RectEncoding {
    pub fn dim(&self) -> usize {
        match self {
            RectEncoding::FourVertices { .. } => 2,
            RectEncoding::Diagonal { a, .. } => a.len(),
            RectEncoding::CenterSides { center, .. } => center.len(),
        }
    }

    /// The diagonal-corner form of a canonical box.
    pub fn from_rect(r: &HyperRect) -> Self {
        RectEncoding::Diagonal {
            a: r.lower.clone(),
            b: r.upper.clone(),
        }
    }
}

/// Converts any encoding into its canonical box (per-coordinate min/max).
pub fn rect_from_encoding(encoding: &RectEncoding) -> Result<HyperRect, GeometryError> {
    let rect = match encoding {
        RectEncoding::FourVertices { vertices } => {
            let xs: Vec<f64> = vertices.iter().map(|v| v[0]).collect();
            let ys: Vec<f64> = vertices.iter().map(|v| v[1]).collect();
            let (x0, x1) = min_max(&xs);
            let (y0, y1) = min_max(&ys);
            // each corner of the bounding box must be hit exactly once
            let mut used = [false; 4];
            for corner in [[x0, y0], [x1, y0], [x1, y1], [x0, y1]] {
                let hit = vertices.iter().enumerate().position(|(i, v)| {
                    !used[i]
                        && (v[0] - corner[0]).abs() <= GEOMETRY_TOL
                        && (v[1] - corner[1]).abs() <= GEOMETRY_TOL
                });
                match hit {
                    Some(i) => used[i] = true,
                    None => return Err(GeometryError::NonAxisAligned),
                }
            }
            HyperRect {
                lower: vec![x0, y0],
                upper: vec![x1, y1],
            }
        }
        RectEncoding::Diagonal { a, b } => {
            if a.len() != b.len() {
                return Err(GeometryError::DimensionMismatch {
                    expected: a.len(),
                    actual: b.len(),
                });
            }
            HyperRect {
                lower: a.iter().zip(b).map(|(p, q)| p.min(*q)).collect(),
                upper: a.iter().zip(b).map(|(p, q)| p.max(*q)).collect(),
            }
        }
        RectEncoding::CenterSides { center, sides } => {
            if center.len() != sides.len() {
                return Err(GeometryError::DimensionMismatch {
                    expected: center.len(),
                    actual: sides.len(),
                });
            }
            if let Some((dim, &side)) = sides.iter().enumerate().find(|(_, s)| **s < 0.0) {
                return Err(GeometryError::NegativeSide { dim, side });
            }
            HyperRect {
                lower: center.iter().zip(sides).map(|(c, s)| c - 0.5 * s).collect(),
                upper: center.iter().zip(sides).map(|(c, s)| c + 0.5 * s).collect(),
            }
        }
    };
    rect.validate()?;
    Ok(rect)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// A grid cell, addressed both per dimension and by row-major flat id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub multi_index: Vec<usize>,
    pub flat_id: usize,
}

/// Uniform lattice of cells over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    bounds: HyperRect,
    eta: Vec<f64>,
    periodic: Vec<bool>,
    counts: Vec<usize>,
    strides: Vec<usize>,
}

impl UniformGrid {
    /// Builds a grid. Non-periodic widths must be multiples of `eta`; a
    /// periodic dimension is split into `ceil(width / eta)` equal cells.
    pub fn new(bounds: HyperRect, eta: Vec<f64>, periodic: Vec<bool>) -> Result<Self, GeometryError> {
        bounds.validate()?;
        let n = bounds.dim();
        for len in [eta.len(), periodic.len()] {
            if len != n {
                return Err(GeometryError::DimensionMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        let mut counts = Vec::with_capacity(n);
        let mut cell_eta = Vec::with_capacity(n);
        for dim in 0..n {
            let e = eta[dim];
            if !(e > 0.0) || !e.is_finite() {
                return Err(GeometryError::NonPositiveEta { dim, eta: e });
            }
            let width = bounds.upper[dim] - bounds.lower[dim];
            let ratio = width / e;
            let nearest = ratio.round();
            let divisible = (ratio - nearest).abs() <= GEOMETRY_TOL * ratio.max(1.0) && nearest >= 1.0;
            if divisible {
                counts.push(nearest as usize);
                cell_eta.push(if periodic[dim] { width / nearest } else { e });
            } else if periodic[dim] && width > 0.0 {
                let count = ratio.ceil();
                counts.push(count as usize);
                cell_eta.push(width / count);
            } else {
                return Err(GeometryError::NotDivisible { dim, width, eta: e });
            }
        }
        let mut strides = vec![1usize; n];
        for dim in (0..n.saturating_sub(1)).rev() {
            strides[dim] = strides[dim + 1] * counts[dim + 1];
        }
        Ok(Self {
            bounds,
            eta: cell_eta,
            periodic,
            counts,
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &HyperRect {
        &self.bounds
    }

    /// Effective cell widths.
    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_cells(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn half_eta(&self) -> Vec<f64> {
        self.eta.iter().map(|e| 0.5 * e).collect()
    }

    fn width(&self, dim: usize) -> f64 {
        self.bounds.upper[dim] - self.bounds.lower[dim]
    }

    /// Lower face of cell `k` along `dim`.
    #[inline]
    pub fn cell_lower(&self, dim: usize, k: usize) -> f64 {
        self.bounds.lower[dim] + k as f64 * self.eta[dim]
    }

    /// Upper face of cell `k` along `dim`.
    #[inline]
    pub fn cell_upper(&self, dim: usize, k: usize) -> f64 {
        if k + 1 == self.counts[dim] {
            self.bounds.upper[dim]
        } else {
            self.bounds.lower[dim] + (k + 1) as f64 * self.eta[dim]
        }
    }

    /// Maps a periodic coordinate into `[lower, upper)`; other coordinates
    /// are returned unchanged.
    pub fn wrap_coord(&self, dim: usize, v: f64) -> f64 {
        if !self.periodic[dim] || (self.bounds.lower[dim] <= v && v < self.bounds.upper[dim]) {
            return v;
        }
        let lo = self.bounds.lower[dim];
        let w = self.width(dim);
        let r = lo + (v - lo).rem_euclid(w);
        if r >= self.bounds.upper[dim] {
            lo
        } else {
            r
        }
    }

    pub fn wrap(&self, x: &mut [f64]) {
        for (dim, v) in x.iter_mut().enumerate() {
            *v = self.wrap_coord(dim, *v);
        }
    }

    /// Distance beyond a bound that is treated as rounding noise: states
    /// this close outside are snapped onto the bound and boxes this close
    /// outside do not count as leaving the domain.
    pub fn boundary_slack(&self, dim: usize) -> f64 {
        let lo = self.bounds.lower[dim];
        let hi = self.bounds.upper[dim];
        32.0 * f64::EPSILON * (lo.abs() + hi.abs() + (hi - lo))
    }

    fn coord_index(&self, dim: usize, v: f64) -> Result<usize, GeometryError> {
        let v = self.wrap_coord(dim, v);
        let lo = self.bounds.lower[dim];
        let hi = self.bounds.upper[dim];
        let slack = self.boundary_slack(dim);
        let v = if v < lo && v >= lo - slack {
            lo
        } else if v > hi && v <= hi + slack {
            hi
        } else {
            v
        };
        if !v.is_finite() || v < lo || v > hi {
            return Err(GeometryError::OutOfBounds {
                dim,
                value: v,
                lower: lo,
                upper: hi,
            });
        }
        let last = self.counts[dim] - 1;
        let mut k = (((v - lo) / self.eta[dim]).floor().max(0.0) as usize).min(last);
        // align with the faces exactly as cell_lower/cell_upper compute them
        while k > 0 && v < self.cell_lower(dim, k) {
            k -= 1;
        }
        while k < last && v >= self.cell_upper(dim, k) {
            k += 1;
        }
        Ok(k)
    }

    /// The cell containing `x` (the quantization relation).
    pub fn cell_of(&self, x: &[f64]) -> Result<CellIndex, GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let multi = (0..self.dim())
            .map(|d| self.coord_index(d, x[d]))
            .collect::<Result<Vec<_>, _>>()?;
        let flat_id = self.flatten(&multi);
        Ok(CellIndex {
            multi_index: multi,
            flat_id,
        })
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.counts)
            .map(|(s, c)| (flat / s) % c)
            .collect()
    }

    pub fn index_from_flat(&self, flat: usize) -> Result<CellIndex, GeometryError> {
        if flat >= self.num_cells() {
            return Err(GeometryError::InvalidIndex {
                index: vec![flat as i64],
            });
        }
        Ok(CellIndex {
            multi_index: self.unflatten(flat),
            flat_id: flat,
        })
    }

    pub fn index_from_multi(&self, multi: &[i64]) -> Result<CellIndex, GeometryError> {
        if multi.len() != self.dim()
            || multi
                .iter()
                .zip(&self.counts)
                .any(|(&k, &c)| k < 0 || k as usize >= c)
        {
            return Err(GeometryError::InvalidIndex {
                index: multi.to_vec(),
            });
        }
        let m: Vec<usize> = multi.iter().map(|&k| k as usize).collect();
        Ok(CellIndex {
            flat_id: self.flatten(&m),
            multi_index: m,
        })
    }

    /// Center point of a cell.
    pub fn center_of(&self, c: &CellIndex) -> Result<Vec<f64>, GeometryError> {
        if c.multi_index.len() != self.dim()
            || c.multi_index.iter().zip(&self.counts).any(|(k, n)| k >= n)
        {
            return Err(GeometryError::InvalidIndex {
                index: c.multi_index.iter().map(|&k| k as i64).collect(),
            });
        }
        Ok(self.center_of_multi(&c.multi_index))
    }

    pub fn center_of_multi(&self, multi: &[usize]) -> Vec<f64> {
        multi
            .iter()
            .enumerate()
            .map(|(d, &k)| self.bounds.lower[d] + (k as f64 + 0.5) * self.eta[d])
            .collect()
    }

    pub fn center_of_flat(&self, flat: usize) -> Vec<f64> {
        self.center_of_multi(&self.unflatten(flat))
    }

    /// Closed box of a cell.
    pub fn cell_box(&self, multi: &[usize]) -> HyperRect {
        HyperRect {
            lower: multi
                .iter()
                .enumerate()
                .map(|(d, &k)| self.cell_lower(d, k))
                .collect(),
            upper: multi
                .iter()
                .enumerate()
                .map(|(d, &k)| self.cell_upper(d, k))
                .collect(),
        }
    }

    /// Unwrapped cell indices along `dim` whose closed box meets `[a, b]`.
    /// For periodic dimensions the range may leave `0..count`.
    fn overlap_range(&self, dim: usize, a: f64, b: f64) -> Option<(i64, i64)> {
        let lo = self.bounds.lower[dim];
        let e = self.eta[dim];
        let count = self.counts[dim] as i64;
        if self.periodic[dim] {
            if b - a >= self.width(dim) {
                return Some((0, count - 1));
            }
            let face = |k: i64| lo + k as f64 * e;
            let mut k0 = ((a - lo) / e).floor() as i64;
            while face(k0 + 1) < a {
                k0 += 1;
            }
            while face(k0) > a {
                k0 -= 1;
            }
            // include the lower neighbor when `a` sits exactly on a face
            if face(k0) == a {
                k0 -= 1;
            }
            let mut k1 = ((b - lo) / e).floor() as i64;
            while face(k1) > b {
                k1 -= 1;
            }
            while face(k1 + 1) <= b {
                k1 += 1;
            }
            if k1 - k0 + 1 >= count {
                return Some((0, count - 1));
            }
            return Some((k0, k1));
        }
        if b < lo || a > self.bounds.upper[dim] {
            return None;
        }
        let last = count - 1;
        let mut k0 = (((a - lo) / e).floor() as i64).clamp(0, last);
        while k0 > 0 && self.cell_upper(dim, (k0 - 1) as usize) >= a {
            k0 -= 1;
        }
        while k0 < last && self.cell_upper(dim, k0 as usize) < a {
            k0 += 1;
        }
        let mut k1 = (((b - lo) / e).floor() as i64).clamp(0, last);
        while k1 < last && self.cell_lower(dim, (k1 + 1) as usize) <= b {
            k1 += 1;
        }
        while k1 > 0 && self.cell_lower(dim, k1 as usize) > b {
            k1 -= 1;
        }
        (k0 <= k1).then_some((k0, k1))
    }

    /// Flat ids of every cell whose closed box meets the closed box `r`,
    /// in increasing order. Periodic dimensions wrap.
    pub fn cells_overlapping_ids(&self, r: &HyperRect) -> Vec<usize> {
        let n = self.dim();
        let mut per_dim: Vec<Vec<usize>> = Vec::with_capacity(n);
        for d in 0..n {
            let Some((k0, k1)) = self.overlap_range(d, r.lower[d], r.upper[d]) else {
                return Vec::new();
            };
            let count = self.counts[d] as i64;
            let mut ks: Vec<usize> = (k0..=k1).map(|k| k.rem_euclid(count) as usize).collect();
            if self.periodic[d] {
                ks.sort_unstable();
                ks.dedup();
            }
            per_dim.push(ks);
        }
        let mut out = Vec::with_capacity(per_dim.iter().map(Vec::len).product());
        let mut cursor = vec![0usize; n];
        'outer: loop {
            let flat: usize = (0..n).map(|d| per_dim[d][cursor[d]] * self.strides[d]).sum();
            out.push(flat);
            for d in (0..n).rev() {
                cursor[d] += 1;
                if cursor[d] < per_dim[d].len() {
                    continue 'outer;
                }
                cursor[d] = 0;
            }
            break;
        }
        out
    }

    pub fn cells_overlapping(&self, r: &HyperRect) -> Vec<CellIndex> {
        self.cells_overlapping_ids(r)
            .into_iter()
            .map(|flat| CellIndex {
                multi_index: self.unflatten(flat),
                flat_id: flat,
            })
            .collect()
    }

    /// Flat ids of cells whose closed box lies inside `r`.
    pub fn cells_inside_ids(&self, r: &HyperRect) -> Vec<usize> {
        self.cells_overlapping_ids(r)
            .into_iter()
            .filter(|&flat| r.contains_rect(&self.cell_box(&self.unflatten(flat))))
            .collect()
    }

    /// True when the closed box leaves the bounds in a non-periodic
    /// dimension by more than [`UniformGrid::boundary_slack`].
    pub fn exits_bounds(&self, r: &HyperRect) -> bool {
        (0..self.dim()).any(|d| {
            let slack = self.boundary_slack(d);
            !self.periodic[d] && (r.lower[d] < self.bounds.lower[d] - slack || r.upper[d] > self.bounds.upper[d] + slack)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(lo: f64, hi: f64, eta: f64) -> UniformGrid {
        UniformGrid::new(HyperRect::new(vec![lo], vec![hi]).unwrap(), vec![eta], vec![false]).unwrap()
    }

    #[test]
    fn lower_corner_maps_to_first_cell() {
        let g = line(0.0, 4.0, 1.0);
        let c = g.cell_of(&[0.0]).unwrap();
        assert_eq!(c.flat_id, 0);
        assert_eq!(g.center_of(&c).unwrap(), vec![0.5]);
    }

    #[test]
    fn face_belongs_to_upper_cell() {
        let g = line(0.0, 4.0, 1.0);
        assert_eq!(g.cell_of(&[1.0]).unwrap().flat_id, 1);
        // closed upper bound folds into the last cell
        assert_eq!(g.cell_of(&[4.0]).unwrap().flat_id, 3);
    }

    #[test]
    fn two_dim_lookup_matches_brute_force() {
        let g = UniformGrid::new(
            HyperRect::new(vec![0.0, 0.0], vec![4.0, 4.0]).unwrap(),
            vec![0.5, 0.5],
            vec![false, false],
        )
        .unwrap();
        let x = [1.3, 3.9];
        // brute force: the unique half-open cell containing x
        let mut hits = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                let b = g.cell_box(&[i, j]);
                if b.lower[0] <= x[0] && x[0] < b.upper[0] && b.lower[1] <= x[1] && x[1] < b.upper[1] {
                    hits.push(vec![i, j]);
                }
            }
        }
        assert_eq!(hits, vec![vec![2, 7]]);
        assert_eq!(g.cell_of(&x).unwrap().multi_index, vec![2, 7]);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let g = line(0.0, 4.0, 1.0);
        assert!(matches!(g.cell_of(&[4.5]), Err(GeometryError::OutOfBounds { .. })));
        assert!(matches!(g.cell_of(&[-1e-9]), Err(GeometryError::OutOfBounds { .. })));
    }

    #[test]
    fn periodic_center() {
        let g = UniformGrid::new(
            HyperRect::new(vec![-PI], vec![PI]).unwrap(),
            vec![PI / 2.0],
            vec![true],
        )
        .unwrap();
        let c = g.index_from_multi(&[3]).unwrap();
        let center = g.center_of(&c).unwrap()[0];
        assert!((center - 3.0 * PI / 4.0).abs() < 1e-15);
        assert!(matches!(
            g.index_from_multi(&[4]),
            Err(GeometryError::InvalidIndex { .. })
        ));
    }

    #[test]
    fn periodic_non_divisible_width_is_split_evenly() {
        let g = UniformGrid::new(HyperRect::new(vec![-PI], vec![PI]).unwrap(), vec![0.2], vec![true]).unwrap();
        assert_eq!(g.counts(), &[32]);
        assert!(g.eta()[0] <= 0.2);
    }

    #[test]
    fn non_divisible_bounds_rejected() {
        let err = UniformGrid::new(HyperRect::new(vec![0.0], vec![1.0]).unwrap(), vec![0.3], vec![false]);
        assert!(matches!(err, Err(GeometryError::NotDivisible { .. })));
        let ok = UniformGrid::new(HyperRect::new(vec![0.0], vec![4.0]).unwrap(), vec![0.2], vec![false]);
        assert_eq!(ok.unwrap().counts(), &[20]);
    }

    #[test]
    fn overlapping_whole_bounds_is_every_cell() {
        let g = UniformGrid::new(
            HyperRect::new(vec![0.0, 0.0], vec![2.0, 3.0]).unwrap(),
            vec![0.5, 0.5],
            vec![false, false],
        )
        .unwrap();
        let ids = g.cells_overlapping_ids(g.bounds());
        assert_eq!(ids, (0..g.num_cells()).collect::<Vec<_>>());
    }

    #[test]
    fn overlapping_cell_box_includes_face_neighbors() {
        let g = UniformGrid::new(
            HyperRect::new(vec![0.0, 0.0], vec![4.0, 4.0]).unwrap(),
            vec![1.0, 1.0],
            vec![false, false],
        )
        .unwrap();
        let r = g.cell_box(&[1, 1]);
        let got = g.cells_overlapping_ids(&r);
        let brute: Vec<usize> = (0..g.num_cells())
            .filter(|&f| g.cell_box(&g.unflatten(f)).intersects(&r))
            .collect();
        assert_eq!(got, brute);
        // closed boxes also touch diagonally
        assert_eq!(got.len(), 9);
    }

    #[test]
    fn overlapping_point_at_center_is_one_cell() {
        let g = line(0.0, 4.0, 1.0);
        let ids = g.cells_overlapping_ids(&HyperRect::point(&[2.5]));
        assert_eq!(ids, vec![2]);
    }

    #[test]
    fn overlapping_wraps_periodic_dimension() {
        let g = UniformGrid::new(HyperRect::new(vec![0.0], vec![4.0]).unwrap(), vec![1.0], vec![true]).unwrap();
        let ids = g.cells_overlapping_ids(&HyperRect::new(vec![3.5], vec![4.5]).unwrap());
        assert_eq!(ids, vec![0, 3]);
        let all = g.cells_overlapping_ids(&HyperRect::new(vec![-3.0], vec![3.0]).unwrap());
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn encodings() {
        let d = rect_from_encoding(&RectEncoding::Diagonal {
            a: vec![3.0, 1.0],
            b: vec![1.0, 4.0],
        })
        .unwrap();
        assert_eq!(d, HyperRect::new(vec![1.0, 1.0], vec![3.0, 4.0]).unwrap());
        let c = rect_from_encoding(&RectEncoding::CenterSides {
            center: vec![2.0, 2.0],
            sides: vec![2.0, 4.0],
        })
        .unwrap();
        assert_eq!(c, HyperRect::new(vec![1.0, 0.0], vec![3.0, 4.0]).unwrap());
        let v = rect_from_encoding(&RectEncoding::FourVertices {
            vertices: [[1.0, 1.0], [3.0, 1.0], [3.0, 4.0], [1.0, 4.0]],
        })
        .unwrap();
        assert_eq!(v, d);
    }

    #[test]
    fn encoding_errors() {
        let skew = RectEncoding::FourVertices {
            vertices: [[0.0, 0.0], [2.0, 0.5], [2.0, 2.0], [0.0, 2.0]],
        };
        assert_eq!(rect_from_encoding(&skew), Err(GeometryError::NonAxisAligned));
        let neg = RectEncoding::CenterSides {
            center: vec![0.0, 0.0],
            sides: vec![1.0, -1.0],
        };
        assert!(matches!(rect_from_encoding(&neg), Err(GeometryError::NegativeSide { dim: 1, .. })));
    }
}
