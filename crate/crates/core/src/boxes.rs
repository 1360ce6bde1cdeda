//! Integer-anchored hyperboxes over a quantized state grid.
//!
//! Every set the synthesis loop manipulates is a finite union of grid
//! cells, so all set algebra here is exact integer arithmetic. Real
//! coordinates only appear when a box is handed to reachability or to an
//! encoder.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("degenerate domain in dimension {dim}: lower {lower} is not below upper {upper}")]
    DegenerateDomain { dim: usize, lower: f64, upper: f64 },
    #[error("grid resolution must be positive and finite, got {0}")]
    NonPositiveResolution(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("no grid cell lies inside the safe set")]
    EmptySafeSet,
    #[error("box is already a basis cell")]
    AlreadyBasis,
    #[error("box sets are defined over different grids")]
    GridMismatch,
    #[error("coordinate {value} in dimension {dim} is not on a grid line")]
    NotAligned { dim: usize, value: f64 },
    #[error("box {0:?} is empty or leaves the grid")]
    InvalidBox(GridBox),
    #[error("basis index {0} is out of range")]
    IndexOutOfRange(u64),
}

/// Closed real-valued box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RealBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, BoxError> {
        if lo.len() != hi.len() {
            return Err(BoxError::DimMismatch { expected: lo.len(), got: hi.len() });
        }
        for (j, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l <= h) {
                return Err(BoxError::DegenerateDomain { dim: j, lower: *l, upper: *h });
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn point(x: &[f64]) -> Self {
        Self { lo: x.to_vec(), hi: x.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains_point(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }

    pub fn contains_box(&self, other: &RealBox) -> bool {
        (0..self.dim()).all(|j| other.lo[j] >= self.lo[j] && other.hi[j] <= self.hi[j])
    }

    /// Closed intersection test; boxes sharing a face intersect.
    pub fn intersects(&self, other: &RealBox) -> bool {
        (0..self.dim()).all(|j| self.lo[j] <= other.hi[j] && other.lo[j] <= self.hi[j])
    }
}

/// Open box `]lo, hi[` used as an obstacle in the inclusion encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl OpenBox {
    /// True when the closed box `b` has a point in common with the open interior.
    pub fn hits(&self, b: &RealBox) -> bool {
        (0..self.lo.len()).all(|j| b.hi[j] > self.lo[j] && b.lo[j] < self.hi[j])
    }

    /// Closed-closure intersection, the pruning rule.
    pub fn closure_meets(&self, b: &RealBox) -> bool {
        (0..self.lo.len()).all(|j| b.hi[j] >= self.lo[j] && b.lo[j] <= self.hi[j])
    }

    /// Grow the box by `margin` on every side.
    pub fn inflate(&self, margin: f64) -> OpenBox {
        OpenBox { lo: self.lo.iter().map(|v| v - margin).collect(), hi: self.hi.iter().map(|v| v + margin).collect() }
    }
}

/// Quantization of the state domain into basis cells of side `d_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    d_min: f64,
    cells: Vec<i64>,
}

fn cell_count(span: f64, d: f64) -> i64 {
    let ratio = span / d;
    let nearest = ratio.round();
    // Spans that are an exact multiple of d_min up to rounding noise must not
    // pick up a sliver cell.
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        (nearest as i64).max(1)
    } else {
        (ratio.ceil() as i64).max(1)
    }
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, d_min: f64) -> Result<Self, BoxError> {
        if lower.len() != upper.len() {
            return Err(BoxError::DimMismatch { expected: lower.len(), got: upper.len() });
        }
        if !(d_min > 0.0) || !d_min.is_finite() {
            return Err(BoxError::NonPositiveResolution(d_min));
        }
        for (j, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(BoxError::DegenerateDomain { dim: j, lower: *l, upper: *u });
            }
        }
        let cells = lower.iter().zip(&upper).map(|(l, u)| cell_count(u - l, d_min)).collect();
        Ok(Self { lower, upper, d_min, cells })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn cells(&self) -> &[i64] {
        &self.cells
    }

    /// Total number of basis cells.
    pub fn n_basis(&self) -> u64 {
        self.cells.iter().map(|&c| c as u64).product()
    }

    /// Real coordinate of grid line `k` in dimension `j`.
    ///
    /// Lines outside `0..=cells` are virtual and continue at spacing `d_min`
    /// beyond the domain; they only occur in obstacle covers.
    pub fn coord(&self, j: usize, k: i64) -> f64 {
        if k <= 0 {
            self.lower[j] + k as f64 * self.d_min
        } else if k >= self.cells[j] {
            self.upper[j] + (k - self.cells[j]) as f64 * self.d_min
        } else {
            (self.lower[j] + k as f64 * self.d_min).min(self.upper[j])
        }
    }

    pub fn domain(&self) -> RealBox {
        RealBox { lo: self.lower.clone(), hi: self.upper.clone() }
    }

    pub fn full_box(&self) -> GridBox {
        GridBox { lo: vec![0; self.dim()], hi: self.cells.clone() }
    }

    pub fn real_box(&self, b: &GridBox) -> RealBox {
        RealBox {
            lo: (0..self.dim()).map(|j| self.coord(j, b.lo[j])).collect(),
            hi: (0..self.dim()).map(|j| self.coord(j, b.hi[j])).collect(),
        }
    }

    fn open_box(&self, b: &GridBox) -> OpenBox {
        let r = self.real_box(b);
        OpenBox { lo: r.lo, hi: r.hi }
    }

    /// Row-major index of the cell whose lower corner is `lo` (dim 0 slowest).
    pub fn cell_index(&self, lo: &[i64]) -> u64 {
        let mut idx = 0u64;
        for j in 0..self.dim() {
            idx = idx * self.cells[j] as u64 + lo[j] as u64;
        }
        idx
    }

    pub fn index_to_cell(&self, mut idx: u64) -> Vec<i64> {
        let mut lo = vec![0i64; self.dim()];
        for j in (0..self.dim()).rev() {
            let c = self.cells[j] as u64;
            lo[j] = (idx % c) as i64;
            idx /= c;
        }
        lo
    }

    pub fn contains_box(&self, b: &GridBox) -> bool {
        b.dim() == self.dim() && (0..self.dim()).all(|j| 0 <= b.lo[j] && b.lo[j] < b.hi[j] && b.hi[j] <= self.cells[j])
    }

    /// Grid line index of `value` in dimension `j`, if it lies on one.
    pub fn align(&self, j: usize, value: f64) -> Option<i64> {
        let tol = 1e-9 * self.d_min.max(value.abs() * 1e-3);
        let k = ((value - self.lower[j]) / self.d_min).round() as i64;
        let k = k.clamp(0, self.cells[j]);
        for cand in [k - 1, k, k + 1] {
            if (0..=self.cells[j]).contains(&cand) && (self.coord(j, cand) - value).abs() <= tol {
                return Some(cand);
            }
        }
        None
    }

    /// Converts a real box whose corners sit on grid lines into a grid box.
    pub fn align_box(&self, b: &RealBox) -> Result<GridBox, BoxError> {
        if b.dim() != self.dim() {
            return Err(BoxError::DimMismatch { expected: self.dim(), got: b.dim() });
        }
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            lo.push(self.align(j, b.lo[j]).ok_or(BoxError::NotAligned { dim: j, value: b.lo[j] })?);
            hi.push(self.align(j, b.hi[j]).ok_or(BoxError::NotAligned { dim: j, value: b.hi[j] })?);
        }
        let g = GridBox { lo, hi };
        if !self.contains_box(&g) {
            return Err(BoxError::InvalidBox(g));
        }
        Ok(g)
    }
}

/// Box in grid coordinates, `[lo, hi)` in cell indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl GridBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self, BoxError> {
        if lo.len() != hi.len() {
            return Err(BoxError::DimMismatch { expected: lo.len(), got: hi.len() });
        }
        let b = Self { lo, hi };
        if b.lo.iter().zip(&b.hi).any(|(l, h)| l >= h) {
            return Err(BoxError::InvalidBox(b));
        }
        Ok(b)
    }

    pub fn cell(lo: &[i64]) -> Self {
        Self { lo: lo.to_vec(), hi: lo.iter().map(|v| v + 1).collect() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_basis(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| h - l == 1)
    }

    pub fn volume(&self) -> u64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) as u64).product()
    }

    pub fn contains(&self, other: &GridBox) -> bool {
        (0..self.dim()).all(|j| self.lo[j] <= other.lo[j] && other.hi[j] <= self.hi[j])
    }

    pub fn contains_cell(&self, lo: &[i64]) -> bool {
        (0..self.dim()).all(|j| self.lo[j] <= lo[j] && lo[j] < self.hi[j])
    }

    pub fn intersect(&self, other: &GridBox) -> Option<GridBox> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let l = self.lo[j].max(other.lo[j]);
            let h = self.hi[j].min(other.hi[j]);
            if l >= h {
                return None;
            }
            lo.push(l);
            hi.push(h);
        }
        Some(GridBox { lo, hi })
    }

    /// `self \ other` as at most `2n` disjoint pieces.
    pub fn subtract(&self, other: &GridBox) -> Vec<GridBox> {
        if self.intersect(other).is_none() {
            return vec![self.clone()];
        }
        let mut pieces = Vec::new();
        let mut rem = self.clone();
        for j in 0..self.dim() {
            if rem.lo[j] < other.lo[j] {
                let mut p = rem.clone();
                p.hi[j] = other.lo[j];
                pieces.push(p);
                rem.lo[j] = other.lo[j];
            }
            if rem.hi[j] > other.hi[j] {
                let mut p = rem.clone();
                p.lo[j] = other.hi[j];
                pieces.push(p);
                rem.hi[j] = other.hi[j];
            }
        }
        pieces
    }

    /// Lower corners of every basis cell inside the box, row-major order.
    pub fn cells(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::with_capacity(self.volume() as usize);
        let mut cur = self.lo.clone();
        loop {
            out.push(cur.clone());
            let mut j = self.dim();
            loop {
                if j == 0 {
                    return out;
                }
                j -= 1;
                cur[j] += 1;
                if cur[j] < self.hi[j] {
                    break;
                }
                cur[j] = self.lo[j];
            }
        }
    }
}

/// Split a non-basis box in two along its longest side.
///
/// Ties go to the lowest dimension; the cut sits at the floor midpoint.
pub fn partition_box(b: &GridBox) -> Result<(GridBox, GridBox), BoxError> {
    if b.is_basis() {
        return Err(BoxError::AlreadyBasis);
    }
    let mut axis = 0;
    for j in 1..b.dim() {
        if b.hi[j] - b.lo[j] > b.hi[axis] - b.lo[axis] {
            axis = j;
        }
    }
    let mid = b.lo[axis] + (b.hi[axis] - b.lo[axis]) / 2;
    let mut left = b.clone();
    let mut right = b.clone();
    left.hi[axis] = mid;
    right.lo[axis] = mid;
    Ok((left, right))
}

/// Merge unit boxes along dim 0 into maximal runs, then merge equal runs
/// along each higher dimension in turn. Output is sorted by `lo`.
fn merge_runs(mut boxes: Vec<GridBox>, dim: usize) -> Vec<GridBox> {
    for d in 0..dim {
        type Key = (Vec<i64>, Vec<i64>);
        let mut groups: BTreeMap<Key, Vec<(i64, i64)>> = BTreeMap::new();
        for b in boxes.drain(..) {
            let mut klo = b.lo.clone();
            let mut khi = b.hi.clone();
            klo.remove(d);
            khi.remove(d);
            groups.entry((klo, khi)).or_default().push((b.lo[d], b.hi[d]));
        }
        for ((klo, khi), mut spans) in groups {
            spans.sort_unstable();
            let mut merged: Vec<(i64, i64)> = Vec::new();
            for (l, h) in spans {
                match merged.last_mut() {
                    Some(last) if last.1 == l => last.1 = h,
                    _ => merged.push((l, h)),
                }
            }
            for (l, h) in merged {
                let mut lo = klo.clone();
                let mut hi = khi.clone();
                lo.insert(d, l);
                hi.insert(d, h);
                boxes.push(GridBox { lo, hi });
            }
        }
    }
    boxes.sort();
    boxes
}

/// Finite disjoint union of grid boxes.
#[derive(Debug, Clone)]
pub struct BoxSet {
    grid: Arc<GridSpec>,
    boxes: Vec<GridBox>,
}

impl BoxSet {
    pub fn empty(grid: Arc<GridSpec>) -> Self {
        Self { grid, boxes: Vec::new() }
    }

    pub fn full(grid: Arc<GridSpec>) -> Self {
        let b = grid.full_box();
        Self { grid, boxes: vec![b] }
    }

    /// Builds a set from boxes that may overlap.
    pub fn from_boxes(grid: Arc<GridSpec>, boxes: Vec<GridBox>) -> Result<Self, BoxError> {
        let mut out: Vec<GridBox> = Vec::new();
        for b in boxes {
            if !grid.contains_box(&b) {
                return Err(BoxError::InvalidBox(b));
            }
            let mut pieces = vec![b];
            for o in &out {
                pieces = pieces.iter().flat_map(|p| p.subtract(o)).collect();
            }
            out.extend(pieces);
        }
        out.sort();
        Ok(Self { grid, boxes: out })
    }

    /// Builds a set from boxes the caller guarantees are pairwise disjoint.
    pub fn from_disjoint(grid: Arc<GridSpec>, mut boxes: Vec<GridBox>) -> Result<Self, BoxError> {
        for b in &boxes {
            if !grid.contains_box(b) {
                return Err(BoxError::InvalidBox(b.clone()));
            }
        }
        boxes.sort();
        for i in 0..boxes.len() {
            for k in i + 1..boxes.len() {
                if boxes[i].intersect(&boxes[k]).is_some() {
                    return Err(BoxError::InvalidBox(boxes[k].clone()));
                }
            }
        }
        Ok(Self { grid, boxes })
    }

    pub fn from_indices(grid: Arc<GridSpec>, indices: &[u64]) -> Result<Self, BoxError> {
        let n = grid.n_basis();
        let mut cells = Vec::with_capacity(indices.len());
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &i in &sorted {
            if i >= n {
                return Err(BoxError::IndexOutOfRange(i));
            }
            cells.push(GridBox::cell(&grid.index_to_cell(i)));
        }
        let dim = grid.dim();
        Ok(Self { grid, boxes: merge_runs(cells, dim) })
    }

    pub fn grid(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn boxes(&self) -> &[GridBox] {
        &self.boxes
    }

    pub fn real_boxes(&self) -> Vec<RealBox> {
        self.boxes.iter().map(|b| self.grid.real_box(b)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Number of basis cells, `|Δ(S)|`.
    pub fn cardinality(&self) -> u64 {
        self.boxes.iter().map(GridBox::volume).sum()
    }

    /// Sorted row-major basis indices `Δ(S)`.
    pub fn basis_indices(&self) -> Vec<u64> {
        let mut idx: Vec<u64> = self.boxes.iter().flat_map(|b| b.cells()).map(|c| self.grid.cell_index(&c)).collect();
        idx.sort_unstable();
        idx
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.grid.n_basis() as usize];
        for b in &self.boxes {
            for c in b.cells() {
                m[self.grid.cell_index(&c) as usize] = true;
            }
        }
        m
    }

    fn check_grid(&self, other: &BoxSet) -> Result<(), BoxError> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(BoxError::GridMismatch)
        }
    }

    pub fn union(&self, other: &BoxSet) -> Result<BoxSet, BoxError> {
        let extra = other.difference(self)?;
        let mut boxes = self.boxes.clone();
        boxes.extend(extra.boxes);
        boxes.sort();
        Ok(BoxSet { grid: self.grid.clone(), boxes })
    }

    pub fn intersect(&self, other: &BoxSet) -> Result<BoxSet, BoxError> {
        self.check_grid(other)?;
        let mut boxes: Vec<GridBox> =
            self.boxes.iter().flat_map(|a| other.boxes.iter().filter_map(move |b| a.intersect(b))).collect();
        boxes.sort();
        Ok(BoxSet { grid: self.grid.clone(), boxes })
    }

    pub fn difference(&self, other: &BoxSet) -> Result<BoxSet, BoxError> {
        self.check_grid(other)?;
        let mut boxes = Vec::new();
        for a in &self.boxes {
            let mut pieces = vec![a.clone()];
            for b in &other.boxes {
                if pieces.is_empty() {
                    break;
                }
                pieces = pieces.iter().flat_map(|p| p.subtract(b)).collect();
            }
            boxes.extend(pieces);
        }
        boxes.sort();
        Ok(BoxSet { grid: self.grid.clone(), boxes })
    }

    pub fn complement(&self) -> BoxSet {
        BoxSet::full(self.grid.clone()).difference(self).expect("same grid")
    }

    /// `Δ(self) = Δ(other)`.
    pub fn equals(&self, other: &BoxSet) -> Result<bool, BoxError> {
        self.check_grid(other)?;
        let n = self.cardinality();
        Ok(n == other.cardinality() && self.intersect(other)?.cardinality() == n)
    }

    pub fn is_subset_of(&self, other: &BoxSet) -> Result<bool, BoxError> {
        Ok(self.difference(other)?.is_empty())
    }

    /// Re-expresses the set with run-merged boxes.
    pub fn compacted(&self) -> BoxSet {
        let cells = self.boxes.iter().flat_map(|b| b.cells()).map(|c| GridBox::cell(&c)).collect();
        BoxSet { grid: self.grid.clone(), boxes: merge_runs(cells, self.grid.dim()) }
    }

    /// Whether some closed box of the set contains `x` (expanded by `tol`).
    pub fn contains_point(&self, x: &[f64], tol: f64) -> bool {
        self.boxes.iter().any(|b| self.grid.real_box(b).contains_point(x, tol))
    }
}

/// Inner quantization of the convex set `{x : n·x ≤ c}`: every cell whose
/// corners all satisfy each halfspace.
pub fn quantize_safe_set(grid: Arc<GridSpec>, halfspaces: &[(Vec<f64>, f64)]) -> Result<BoxSet, BoxError> {
    let n = grid.dim();
    for (normal, _) in halfspaces {
        if normal.len() != n {
            return Err(BoxError::DimMismatch { expected: n, got: normal.len() });
        }
    }
    let mut cells = Vec::new();
    for idx in 0..grid.n_basis() {
        let lo = grid.index_to_cell(idx);
        let rb = grid.real_box(&GridBox::cell(&lo));
        let ok = halfspaces.iter().all(|(normal, offset)| {
            // The worst corner maximizes n·x independently per coordinate.
            let worst: f64 =
                (0..n).map(|j| if normal[j] >= 0.0 { normal[j] * rb.hi[j] } else { normal[j] * rb.lo[j] }).sum();
            worst <= offset + 1e-12 * (1.0 + offset.abs())
        });
        if ok {
            cells.push(GridBox::cell(&lo));
        }
    }
    if cells.is_empty() {
        return Err(BoxError::EmptySafeSet);
    }
    Ok(BoxSet { boxes: merge_runs(cells, n), grid })
}

/// Direct-box form of the safe-set quantization for grid-aligned boxes.
pub fn quantize_boxes(grid: Arc<GridSpec>, boxes: &[RealBox]) -> Result<BoxSet, BoxError> {
    let aligned = boxes.iter().map(|b| grid.align_box(b)).collect::<Result<Vec<_>, _>>()?;
    let set = BoxSet::from_boxes(grid, aligned)?;
    if set.is_empty() {
        return Err(BoxError::EmptySafeSet);
    }
    Ok(set)
}

/// Complement of `t` in the grid as open boxes, run-merged.
pub fn complement_open_boxes(grid: &GridSpec, t: &BoxSet) -> Vec<OpenBox> {
    complement_grid_boxes(grid, t).iter().map(|b| grid.open_box(b)).collect()
}

fn complement_grid_boxes(grid: &GridSpec, t: &BoxSet) -> Vec<GridBox> {
    let mask = t.mask();
    let cells = mask
        .iter()
        .enumerate()
        .filter(|(_, inside)| !**inside)
        .map(|(i, _)| GridBox::cell(&grid.index_to_cell(i as u64)))
        .collect();
    merge_runs(cells, grid.dim())
}

/// Cell occupancy over the grid padded by one virtual layer on every side.
struct Occupancy<'a> {
    grid: &'a GridSpec,
    mask: Vec<bool>,
}

impl Occupancy<'_> {
    /// True when the cell is outside `t` (either a complement cell or padding).
    fn free(&self, lo: &[i64]) -> bool {
        let g = self.grid;
        if (0..g.dim()).any(|j| lo[j] < 0 || lo[j] >= g.cells[j]) {
            return true;
        }
        !self.mask[g.cell_index(lo) as usize]
    }

    fn all_free(&self, b: &GridBox) -> bool {
        b.cells().iter().all(|c| self.free(c))
    }

    fn in_padded(&self, j: usize, k: i64) -> bool {
        -1 <= k && k <= self.grid.cells[j] + 1
    }

    /// Grows `b` one layer at a time while the added layer is free.
    fn maximalize(&self, mut b: GridBox) -> GridBox {
        loop {
            let mut grown = false;
            for j in 0..b.dim() {
                if self.in_padded(j, b.lo[j] - 1) {
                    let mut layer = b.clone();
                    layer.hi[j] = b.lo[j];
                    layer.lo[j] = b.lo[j] - 1;
                    if self.all_free(&layer) {
                        b.lo[j] -= 1;
                        grown = true;
                    }
                }
                if self.in_padded(j, b.hi[j] + 1) {
                    let mut layer = b.clone();
                    layer.lo[j] = b.hi[j];
                    layer.hi[j] = b.hi[j] + 1;
                    if self.all_free(&layer) {
                        b.hi[j] += 1;
                        grown = true;
                    }
                }
            }
            if !grown {
                return b;
            }
        }
    }
}

/// Obstacle cover of `X \ t` whose open members leave no cracks.
///
/// The plain complement boxes are pairwise disjoint, so a point on a face
/// shared by two of them (or on the domain boundary) lies in no open member
/// even though it is outside `t`. Degenerate boxes such as MPC point states
/// could slip through such a crack. Here each merged box is grown by whole
/// free layers, one virtual layer past the domain allowed, and every grid
/// face or corner whose surrounding cells are all free gets a covering box.
/// Afterwards a closed box inside `X` meets no member iff it lies in `t`.
pub fn obstacle_cover(grid: &GridSpec, t: &BoxSet) -> Vec<OpenBox> {
    obstacle_cover_grid(grid, t).iter().map(|b| grid.open_box(b)).collect()
}

pub(crate) fn obstacle_cover_grid(grid: &GridSpec, t: &BoxSet) -> Vec<GridBox> {
    let occ = Occupancy { grid, mask: t.mask() };
    let n = grid.dim();
    let mut out: Vec<GridBox> = Vec::new();
    for b in complement_grid_boxes(grid, t) {
        let m = occ.maximalize(b);
        if !out.contains(&m) {
            out.push(m);
        }
    }
    // Sweep every lattice point of the doubled grid; even coordinates are
    // grid lines, odd ones are cell interiors.
    let ext: Vec<i64> = grid.cells.iter().map(|c| 2 * c + 1).collect();
    let mut g = vec![0i64; n];
    'sweep: loop {
        if g.iter().any(|v| v % 2 == 0) {
            let block = GridBox {
                lo: g.iter().map(|&v| if v % 2 == 0 { v / 2 - 1 } else { (v - 1) / 2 }).collect(),
                hi: g.iter().map(|&v| if v % 2 == 0 { v / 2 + 1 } else { (v + 1) / 2 }).collect(),
            };
            if occ.all_free(&block) && !out.iter().any(|o| o.contains(&block)) {
                out.push(occ.maximalize(block));
            }
        }
        let mut j = n;
        loop {
            if j == 0 {
                break 'sweep;
            }
            j -= 1;
            g[j] += 1;
            if g[j] < ext[j] {
                break;
            }
            g[j] = 0;
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Obstacles whose closure meets `fbar`; the rest cannot constrain a box
/// inside `fbar`.
pub fn prune_obstacles(fbar: &RealBox, obstacles: &[OpenBox]) -> Vec<OpenBox> {
    obstacles.iter().filter(|o| o.closure_meets(fbar)).cloned().collect()
}

/// Exact test that a closed box lies in the domain and misses every obstacle.
pub fn box_avoids(b: &RealBox, domain: &RealBox, obstacles: &[OpenBox]) -> bool {
    domain.contains_box(b) && obstacles.iter().all(|o| !o.hits(b))
}
