//! Uniform-grid domains and node sets.
//!
//! A domain lives on a tensor lattice covering an axis-aligned bounding box.
//! Nodes strictly inside the open set are *omega* nodes; the *closure* adds
//! every lattice neighbour (including diagonal ones) of an omega node, and the
//! remaining closure nodes form the discrete boundary. Cells are the lattice
//! cells whose corners are all closure nodes. Each cell hands an equal share
//! of its volume to its corners (trapezoidal node weights) and, per axis, to
//! its edges parallel to that axis (trapezoidal edge weights).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Relative slack used for all geometric comparisons (in units of `h`).
const GEOM_TOL: f64 = 1e-9;

/// Per-axis `[lower, upper]` extents.
pub type Extents = Vec<[f64; 2]>;

/// Domain description as read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub dimension: usize,
    pub h: f64,
    #[serde(rename = "box")]
    pub bounding_box: Extents,
    #[serde(default)]
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Open rectangle; defaults to the bounding box.
    Rectangle {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rect: Option<Extents>,
    },
    /// Interior of the union of closed rectangles.
    Union { rects: Vec<Extents> },
    /// Explicit node mask, one string per lattice row, top row first.
    /// `#` marks an omega node, `.` anything else.
    Mask { rows: Vec<String> },
}

impl Default for Shape {
    fn default() -> Self {
        Shape::Rectangle { rect: None }
    }
}

impl DomainSpec {
    /// Open rectangle filling `bounding_box`.
    pub fn rectangle(h: f64, bounding_box: Extents) -> Self {
        DomainSpec {
            dimension: bounding_box.len(),
            h,
            bounding_box,
            shape: Shape::default(),
        }
    }

    pub fn unit_interval(h: f64) -> Self {
        Self::rectangle(h, vec![[0.0, 1.0]])
    }

    pub fn unit_square(h: f64) -> Self {
        Self::rectangle(h, vec![[0.0, 1.0], [0.0, 1.0]])
    }

    pub fn with_h(&self, h: f64) -> Self {
        DomainSpec { h, ..self.clone() }
    }
}

/// Fingerprint of a domain; node sets and grid functions carry it so that
/// mixing objects from different domains is caught.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainId(pub u64);

/// One lattice cell with all corners in the closure. Corner order is
/// `anchor, anchor+e_x, anchor+e_y, anchor+e_x+e_y` (first two only in 1D),
/// given as closure positions.
#[derive(Clone, Debug)]
pub struct Cell {
    pub corners: [usize; 4],
}

impl Cell {
    pub fn anchor(&self) -> usize {
        self.corners[0]
    }
}

/// Lattice edge between two closure nodes, `head = tail + e_axis`, with the
/// cell volume it carries: each cell splits `h^N` evenly over its edges
/// parallel to a given axis.
#[derive(Clone, Copy, Debug)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub axis: usize,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct GridDomain {
    id: DomainId,
    spec: DomainSpec,
    dimension: usize,
    h: f64,
    lower: [f64; 2],
    counts: [usize; 2],
    omega_mask: Vec<bool>,
    closure: Vec<usize>,
    position: Vec<usize>,
    in_omega: Vec<bool>,
    weights: Vec<f64>,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    bandwidth: usize,
}

impl GridDomain {
    pub fn build(spec: &DomainSpec) -> Result<Self> {
        let dim = spec.dimension;
        if dim != 1 && dim != 2 {
            return Err(Error::BadSpec(format!("dimension must be 1 or 2, got {dim}")));
        }
        if spec.bounding_box.len() != dim {
            return Err(Error::BadSpec(format!(
                "bounding box has {} axes, dimension is {dim}",
                spec.bounding_box.len()
            )));
        }
        let h = spec.h;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::BadSpec(format!("grid spacing must be positive, got {h}")));
        }
        let mut lower = [0.0; 2];
        let mut counts = [1usize; 2];
        for (axis, &[lo, hi]) in spec.bounding_box.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::BadSpec(format!("empty extent [{lo}, {hi}] on axis {axis}")));
            }
            let cells = (hi - lo) / h;
            if cells < 1.0 - GEOM_TOL {
                return Err(Error::BadSpec(format!(
                    "h = {h} exceeds the box extent {} on axis {axis}",
                    hi - lo
                )));
            }
            lower[axis] = lo;
            counts[axis] = (cells + GEOM_TOL).floor() as usize + 1;
        }
        let total = counts[0] * counts[1];
        if total > 50_000_000 {
            return Err(Error::BadSpec(format!("{total} lattice nodes is beyond desk scale")));
        }

        let lattice = Lattice { dim, h, lower, counts };
        let mut omega_mask = match &spec.shape {
            Shape::Rectangle { rect } => {
                let rect = rect.as_ref().unwrap_or(&spec.bounding_box);
                check_extents(rect, dim, "rect")?;
                (0..total)
                    .map(|g| lattice.strictly_inside(g, rect))
                    .collect::<Vec<_>>()
            }
            Shape::Union { rects } => {
                if rects.is_empty() {
                    return Err(Error::BadSpec("union of zero rectangles".into()));
                }
                for r in rects {
                    check_extents(r, dim, "union member")?;
                }
                (0..total)
                    .map(|g| lattice.interior_of_union(g, rects))
                    .collect()
            }
            Shape::Mask { rows } => lattice.parse_mask(rows)?,
        };
        // Omega nodes need their whole neighbourhood on the lattice.
        for (g, m) in omega_mask.iter_mut().enumerate() {
            if *m && lattice.on_box_edge(g) {
                if matches!(spec.shape, Shape::Mask { .. }) {
                    return Err(Error::BadSpec(format!(
                        "mask marks node {g} on the bounding-box edge as interior"
                    )));
                }
                *m = false;
            }
        }
        if !omega_mask.iter().any(|&m| m) {
            return Err(Error::EmptyDomain);
        }

        let mut in_closure = vec![false; total];
        for g in (0..total).filter(|&g| omega_mask[g]) {
            lattice.for_each_neighbour(g, |n| in_closure[n] = true);
        }
        let closure: Vec<usize> = (0..total).filter(|&g| in_closure[g]).collect();
        let mut position = vec![NONE; total];
        for (k, &g) in closure.iter().enumerate() {
            position[g] = k;
        }
        let in_omega = closure.iter().map(|&g| omega_mask[g]).collect();

        let corner_count = 1usize << dim;
        let share = h.powi(dim as i32) / corner_count as f64;
        let mut weights = vec![0.0; closure.len()];
        let mut cells = Vec::new();
        // (tail, axis) -> (head, accumulated weight)
        let mut edge_slots: Vec<(usize, f64)> = vec![(NONE, 0.0); 2 * closure.len()];
        let edge_share = h.powi(dim as i32) / (corner_count / 2) as f64;
        let [nx, ny] = counts;
        for j in 0..ny.saturating_sub(if dim == 2 { 1 } else { 0 }) {
            for i in 0..nx - 1 {
                let anchor = i + nx * j;
                let grid_corners = if dim == 1 {
                    [anchor, anchor + 1, NONE, NONE]
                } else {
                    [anchor, anchor + 1, anchor + nx, anchor + nx + 1]
                };
                let mut corners = [NONE; 4];
                let mut complete = true;
                for c in 0..corner_count {
                    let pos = position[grid_corners[c]];
                    if pos == NONE {
                        complete = false;
                        break;
                    }
                    corners[c] = pos;
                }
                if !complete {
                    continue;
                }
                for &c in &corners[..corner_count] {
                    weights[c] += share;
                }
                let parallel: &[(usize, usize, usize)] = if dim == 1 {
                    &[(0, 1, 0)]
                } else {
                    &[(0, 1, 0), (2, 3, 0), (0, 2, 1), (1, 3, 1)]
                };
                for &(t, hd, axis) in parallel {
                    let slot = &mut edge_slots[2 * corners[t] + axis];
                    slot.0 = corners[hd];
                    slot.1 += edge_share;
                }
                cells.push(Cell { corners });
            }
        }
        let edges: Vec<Edge> = edge_slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.0 != NONE)
            .map(|(k, &(head, weight))| Edge { tail: k / 2, head, axis: k % 2, weight })
            .collect();
        let bandwidth = edges.iter().map(|e| e.head - e.tail).max().unwrap_or(0);

        let id = fingerprint(dim, h, lower, counts, &omega_mask);
        Ok(GridDomain {
            id,
            spec: spec.clone(),
            dimension: dim,
            h,
            lower,
            counts,
            omega_mask,
            closure,
            position,
            in_omega,
            weights,
            cells,
            edges,
            bandwidth,
        })
    }

    pub fn id(&self) -> DomainId {
        self.id
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Lattice node counts per axis (the second entry is 1 in 1D).
    pub fn counts(&self) -> [usize; 2] {
        self.counts
    }

    pub fn lower(&self) -> [f64; 2] {
        self.lower
    }

    /// Cell volume `h^N`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dimension as i32)
    }

    pub fn omega_mask(&self) -> &[bool] {
        &self.omega_mask
    }

    /// Grid indices of the closure nodes, sorted.
    pub fn closure_nodes(&self) -> &[usize] {
        &self.closure
    }

    pub fn len(&self) -> usize {
        self.closure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closure.is_empty()
    }

    pub fn omega_nodes(&self) -> Vec<usize> {
        self.closure
            .iter()
            .zip(&self.in_omega)
            .filter_map(|(&g, &o)| o.then_some(g))
            .collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.closure
            .iter()
            .zip(&self.in_omega)
            .filter_map(|(&g, &o)| (!o).then_some(g))
            .collect()
    }

    /// Whether the closure node at `pos` is an omega node.
    pub fn is_omega_position(&self, pos: usize) -> bool {
        self.in_omega[pos]
    }

    /// Closure position of grid node `grid`, if it is a closure node.
    pub fn position(&self, grid: usize) -> Option<usize> {
        self.position.get(grid).copied().filter(|&p| p != NONE)
    }

    pub fn grid_index(&self, pos: usize) -> usize {
        self.closure[pos]
    }

    /// Trapezoidal weights per closure position.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Largest closure-position offset between the ends of an edge.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Sum of all node weights (the discrete measure of the closure, which
    /// equals the total cell volume).
    pub fn quadrature_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Sum of node weights over omega nodes only.
    pub fn omega_mass(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.in_omega)
            .filter_map(|(&w, &o)| o.then_some(w))
            .sum()
    }

    /// Coordinates of a lattice node.
    pub fn grid_coords(&self, grid: usize) -> [f64; 2] {
        self.lattice().coords(grid)
    }

    /// Coordinates of a closure node.
    pub fn coords(&self, pos: usize) -> [f64; 2] {
        self.grid_coords(self.closure[pos])
    }

    /// Grid index of the lattice node nearest to `point`, or `None` when the
    /// point lies outside the bounding box by more than half a step.
    pub fn nearest_grid_node(&self, point: &[f64]) -> Option<usize> {
        if point.len() != self.dimension {
            return None;
        }
        let mut idx = [0usize; 2];
        for axis in 0..self.dimension {
            let t = (point[axis] - self.lower[axis]) / self.h;
            let k = t.round();
            if !(k > -1.0 + GEOM_TOL && k < self.counts[axis] as f64 - GEOM_TOL) || (t - k).abs() > 0.5 + GEOM_TOL {
                return None;
            }
            idx[axis] = k as usize;
        }
        Some(idx[0] + self.counts[0] * idx[1])
    }

    /// Number of 4-connected (2-connected in 1D) components of the omega nodes.
    pub fn omega_component_count(&self) -> usize {
        let lattice = self.lattice();
        let total = self.omega_mask.len();
        let mut seen = vec![false; total];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..total {
            if !self.omega_mask[start] || seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(g) = queue.pop_front() {
                lattice.for_each_axis_neighbour(g, |n| {
                    if self.omega_mask[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                });
            }
        }
        components
    }

    /// True when `other` lives on the same lattice (dimension, spacing,
    /// origin and node counts), so grid indices mean the same points.
    pub fn same_lattice(&self, other: &GridDomain) -> bool {
        self.dimension == other.dimension
            && self.h.to_bits() == other.h.to_bits()
            && self.lower.map(f64::to_bits) == other.lower.map(f64::to_bits)
            && self.counts == other.counts
    }

    pub fn node_set(&self, selector: &Selector) -> Result<NodeSet> {
        let tol = GEOM_TOL * self.h;
        let select = |pred: &dyn Fn([f64; 2]) -> bool| -> Vec<usize> {
            self.closure
                .iter()
                .copied()
                .filter(|&g| pred(self.grid_coords(g)))
                .collect()
        };
        let members = match selector {
            Selector::Empty => Vec::new(),
            Selector::Closure => self.closure.clone(),
            Selector::Boundary => self.boundary_nodes(),
            Selector::Omega => self.omega_nodes(),
            Selector::Indices { indices } => {
                for &g in indices {
                    if self.position(g).is_none() {
                        return Err(Error::OutOfDomain { node: g });
                    }
                }
                indices.clone()
            }
            Selector::Ball { center, radius } => {
                self.check_point(center)?;
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidArgument(format!("ball radius {radius}")));
                }
                select(&|x| self.distance(x, center) <= radius + tol)
            }
            Selector::Box { lower, upper } => {
                self.check_point(lower)?;
                self.check_point(upper)?;
                select(&|x| (0..self.dimension).all(|a| x[a] >= lower[a] - tol && x[a] <= upper[a] + tol))
            }
            Selector::HalfSpace { normal, offset } => {
                self.check_point(normal)?;
                select(&|x| (0..self.dimension).map(|a| x[a] * normal[a]).sum::<f64>() >= offset - tol)
            }
            Selector::Point { point } => {
                self.check_point(point)?;
                match self.nearest_grid_node(point) {
                    Some(g) if self.position(g).is_some() => vec![g],
                    _ => return Err(Error::PointOutOfDomain { point: point.clone() }),
                }
            }
            Selector::Union { members } => {
                let mut acc = self.empty_set();
                for s in members {
                    acc = acc.union(&self.node_set(s)?)?;
                }
                return Ok(acc);
            }
        };
        Ok(NodeSet::from_members(self.id, members))
    }

    pub fn empty_set(&self) -> NodeSet {
        NodeSet::from_members(self.id, Vec::new())
    }

    pub fn closure_set(&self) -> NodeSet {
        NodeSet::from_members(self.id, self.closure.clone())
    }

    /// All closure nodes within Euclidean distance `radius` of some member of `set`.
    pub fn dilate(&self, set: &NodeSet, radius: f64) -> Result<NodeSet> {
        self.check_set(set)?;
        if !(radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("dilation radius {radius}")));
        }
        let reach = (radius / self.h + GEOM_TOL).floor() as isize;
        let limit = radius + GEOM_TOL * self.h;
        let [nx, ny] = self.counts;
        let mut out = Vec::new();
        for &g in set.members() {
            let (i0, j0) = ((g % nx) as isize, (g / nx) as isize);
            let jr = if self.dimension == 2 { reach } else { 0 };
            for dj in -jr..=jr {
                for di in -reach..=reach {
                    let (i, j) = (i0 + di, j0 + dj);
                    if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                        continue;
                    }
                    let n = i as usize + nx * j as usize;
                    let dist = self.h * ((di * di + dj * dj) as f64).sqrt();
                    if dist <= limit && self.position(n).is_some() {
                        out.push(n);
                    }
                }
            }
        }
        Ok(NodeSet::from_members(self.id, out))
    }

    /// Errors unless `set` belongs to this domain.
    pub fn check_set(&self, set: &NodeSet) -> Result<()> {
        if set.domain() != self.id {
            return Err(Error::DomainMismatch);
        }
        Ok(())
    }

    /// Closure positions of the members of `set`.
    pub fn positions_of(&self, set: &NodeSet) -> Result<Vec<usize>> {
        self.check_set(set)?;
        set.members()
            .iter()
            .map(|&g| self.position(g).ok_or(Error::OutOfDomain { node: g }))
            .collect()
    }

    /// Per-closure-position membership mask of `set`.
    pub fn mask_of(&self, set: &NodeSet) -> Result<Vec<bool>> {
        let mut mask = vec![false; self.len()];
        for p in self.positions_of(set)? {
            mask[p] = true;
        }
        Ok(mask)
    }

    /// Node set from a per-closure-position mask.
    pub fn set_from_mask(&self, mask: &[bool]) -> NodeSet {
        let members = mask
            .iter()
            .enumerate()
            .filter_map(|(p, &m)| m.then_some(self.closure[p]))
            .collect();
        NodeSet::from_members(self.id, members)
    }

    fn check_point(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dimension || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "expected {} finite coordinates, got {v:?}",
                self.dimension
            )));
        }
        Ok(())
    }

    fn distance(&self, x: [f64; 2], c: &[f64]) -> f64 {
        (0..self.dimension).map(|a| (x[a] - c[a]).powi(2)).sum::<f64>().sqrt()
    }

    fn lattice(&self) -> Lattice {
        Lattice {
            dim: self.dimension,
            h: self.h,
            lower: self.lower,
            counts: self.counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selector {
    Empty,
    Closure,
    Boundary,
    Omega,
    /// Explicit grid indices.
    Indices { indices: Vec<usize> },
    /// Closed Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Closed axis-aligned box.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{x : x·normal >= offset}`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// The lattice node nearest to `point`.
    Point { point: Vec<f64> },
    Union { members: Vec<Selector> },
}

/// A subset of the closure nodes of one domain, held as sorted grid indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeSet {
    domain: DomainId,
    members: Vec<usize>,
}

impl NodeSet {
    pub(crate) fn from_members(domain: DomainId, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        NodeSet { domain, members }
    }

    /// Builds a set from grid indices, checking each against the closure.
    pub fn from_indices(domain: &GridDomain, indices: Vec<usize>) -> Result<Self> {
        domain.node_set(&Selector::Indices { indices })
    }

    pub fn domain(&self) -> DomainId {
        self.domain
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, grid: usize) -> bool {
        self.members.binary_search(&grid).is_ok()
    }

    pub fn union(&self, other: &NodeSet) -> Result<NodeSet> {
        self.same_domain(other)?;
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut a, mut b) = (self.members.iter().peekable(), other.members.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(&&x), Some(&&y)) => {
                    if x <= y {
                        out.push(x);
                        a.next();
                        if x == y {
                            b.next();
                        }
                    } else {
                        out.push(y);
                        b.next();
                    }
                }
                (Some(_), None) => out.extend(a.by_ref().copied()),
                (None, Some(_)) => out.extend(b.by_ref().copied()),
                (None, None) => break,
            }
        }
        Ok(NodeSet { domain: self.domain, members: out })
    }

    pub fn intersection(&self, other: &NodeSet) -> Result<NodeSet> {
        self.same_domain(other)?;
        let members = self.members.iter().copied().filter(|g| other.contains(*g)).collect();
        Ok(NodeSet { domain: self.domain, members })
    }

    pub fn difference(&self, other: &NodeSet) -> Result<NodeSet> {
        self.same_domain(other)?;
        let members = self.members.iter().copied().filter(|g| !other.contains(*g)).collect();
        Ok(NodeSet { domain: self.domain, members })
    }

    pub fn is_subset(&self, other: &NodeSet) -> Result<bool> {
        self.same_domain(other)?;
        Ok(self.members.iter().all(|g| other.contains(*g)))
    }

    /// Reinterprets the set on another domain over the same lattice.
    pub fn transfer(&self, target: &GridDomain) -> Result<NodeSet> {
        for &g in &self.members {
            if target.position(g).is_none() {
                return Err(Error::OutOfDomain { node: g });
            }
        }
        Ok(NodeSet { domain: target.id(), members: self.members.clone() })
    }

    fn same_domain(&self, other: &NodeSet) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::DomainMismatch);
        }
        Ok(())
    }
}

fn check_extents(e: &Extents, dim: usize, what: &str) -> Result<()> {
    if e.len() != dim || e.iter().any(|&[lo, hi]| !(lo.is_finite() && hi.is_finite() && lo < hi)) {
        return Err(Error::BadSpec(format!("{what} extents {e:?} invalid for dimension {dim}")));
    }
    Ok(())
}

fn fingerprint(dim: usize, h: f64, lower: [f64; 2], counts: [usize; 2], mask: &[bool]) -> DomainId {
    let mut hasher = Sha256::new();
    hasher.update((dim as u64).to_le_bytes());
    hasher.update(h.to_bits().to_le_bytes());
    for a in 0..2 {
        hasher.update(lower[a].to_bits().to_le_bytes());
        hasher.update((counts[a] as u64).to_le_bytes());
    }
    for (g, &m) in mask.iter().enumerate() {
        if m {
            hasher.update((g as u64).to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    DomainId(u64::from_le_bytes(bytes))
}

#[derive(Clone, Copy)]
struct Lattice {
    dim: usize,
    h: f64,
    lower: [f64; 2],
    counts: [usize; 2],
}

impl Lattice {
    fn index(&self, g: usize) -> [usize; 2] {
        [g % self.counts[0], g / self.counts[0]]
    }

    fn coords(&self, g: usize) -> [f64; 2] {
        let [i, j] = self.index(g);
        let y = if self.dim == 2 { self.lower[1] + j as f64 * self.h } else { 0.0 };
        [self.lower[0] + i as f64 * self.h, y]
    }

    fn on_box_edge(&self, g: usize) -> bool {
        let idx = self.index(g);
        (0..self.dim).any(|a| idx[a] == 0 || idx[a] + 1 == self.counts[a])
    }

    fn strictly_inside(&self, g: usize, rect: &Extents) -> bool {
        let x = self.coords(g);
        let tol = GEOM_TOL * self.h;
        (0..self.dim).all(|a| x[a] > rect[a][0] + tol && x[a] < rect[a][1] - tol)
    }

    /// A point is interior to a union of closed boxes iff every open orthant
    /// around it starts inside some box.
    fn interior_of_union(&self, g: usize, rects: &[Extents]) -> bool {
        let x = self.coords(g);
        let eta = 1e-6 * self.h;
        let orthants = 1usize << self.dim;
        (0..orthants).all(|s| {
            let probe: Vec<f64> = (0..self.dim)
                .map(|a| if s >> a & 1 == 1 { x[a] + eta } else { x[a] - eta })
                .collect();
            rects.iter().any(|r| {
                (0..self.dim).all(|a| {
                    let tol = GEOM_TOL * self.h;
                    probe[a] >= r[a][0] - tol
                        && probe[a] <= r[a][1] + tol
                        && x[a] >= r[a][0] - tol
                        && x[a] <= r[a][1] + tol
                })
            })
        })
    }

    fn parse_mask(&self, rows: &[String]) -> Result<Vec<bool>> {
        let [nx, ny] = self.counts;
        if rows.len() != ny {
            return Err(Error::BadSpec(format!("mask has {} rows, lattice has {ny}", rows.len())));
        }
        let mut mask = vec![false; nx * ny];
        for (r, row) in rows.iter().enumerate() {
            let j = ny - 1 - r;
            let chars: Vec<char> = row.chars().collect();
            if chars.len() != nx {
                return Err(Error::BadSpec(format!(
                    "mask row {r} has {} columns, lattice has {nx}",
                    chars.len()
                )));
            }
            for (i, c) in chars.into_iter().enumerate() {
                mask[i + nx * j] = match c {
                    '#' => true,
                    '.' => false,
                    other => return Err(Error::BadSpec(format!("mask character {other:?}"))),
                };
            }
        }
        Ok(mask)
    }

    /// Visits the full `3^N` neighbourhood of `g` (including `g`).
    fn for_each_neighbour(&self, g: usize, mut f: impl FnMut(usize)) {
        let [i, j] = self.index(g);
        let jr = if self.dim == 2 { 1 } else { 0 };
        for dj in -jr..=jr {
            for di in -1isize..=1 {
                let (a, b) = (i as isize + di, j as isize + dj);
                if a >= 0 && b >= 0 && (a as usize) < self.counts[0] && (b as usize) < self.counts[1] {
                    f(a as usize + self.counts[0] * b as usize);
                }
            }
        }
    }

    fn for_each_axis_neighbour(&self, g: usize, mut f: impl FnMut(usize)) {
        let [i, j] = self.index(g);
        let nx = self.counts[0];
        if i > 0 {
            f(g - 1);
        }
        if i + 1 < nx {
            f(g + 1);
        }
        if self.dim == 2 {
            if j > 0 {
                f(g - nx);
            }
            if j + 1 < self.counts[1] {
                f(g + nx);
            }
        }
    }
}
