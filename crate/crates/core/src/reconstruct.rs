//! Graph reconstruction from patched line segments.
//!
//! Every `I` chord contributes two provisional endpoint vertices and one
//! edge. Chords of neighboring `I` cells that nearly touch share a vertex
//! (union-find, merged at the centroid). `X` cells become a junction vertex
//! at the mean intersection of their neighbors' supporting lines. `T` cells
//! pair up neighbors that continue each other with a plain edge, so crossing
//! roads stay separate paths.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{PatchClass, PatchGrid, RoadGraph, CONTAINMENT_TOL};
use crate::geometry::{
    angle_difference, point_segment_distance, segment_intersection, shape_distance, LineSegment, PatchRect, Point,
};

/// Final vertices closer than this are merged.
pub const MERGE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("invalid reconstruction parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructParams {
    /// Distance threshold in pixels.
    pub tau_d: f64,
    /// Angle threshold in degrees.
    pub tau_a: f64,
    /// Neighborhood radius in cells (Chebyshev).
    pub neighbor_radius: usize,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        Self { tau_d: 2.0, tau_a: 15.0, neighbor_radius: 1 }
    }
}

impl ReconstructParams {
    pub fn validate(&self) -> Result<(), ReconstructError> {
        if !(self.tau_d > 0.0 && self.tau_d.is_finite()) {
            return Err(ReconstructError::InvalidParams("tau_d must be positive"));
        }
        if !(self.tau_a > 0.0 && self.tau_a <= 90.0) {
            return Err(ReconstructError::InvalidParams("tau_a must lie in (0, 90]"));
        }
        if self.neighbor_radius == 0 {
            return Err(ReconstructError::InvalidParams("neighbor_radius must be at least 1"));
        }
        Ok(())
    }
}

/// Union-find over provisional vertices; each set is placed at the centroid
/// of its members.
#[derive(Debug, Clone)]
pub struct VertexMergeSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl VertexMergeSet {
    pub fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }

    /// Set index of every member, numbered by first appearance, plus the
    /// centroid of each set.
    pub fn centroids(&mut self, positions: &[Point]) -> (Vec<usize>, Vec<Point>) {
        let mut label = vec![usize::MAX; self.len()];
        let mut root_label = HashMap::new();
        let mut sums: Vec<(Point, usize)> = Vec::new();
        for v in 0..self.len() {
            let root = self.find(v);
            let id = *root_label.entry(root).or_insert_with(|| {
                sums.push((Point::new(0.0, 0.0), 0));
                sums.len() - 1
            });
            label[v] = id;
            sums[id].0 = sums[id].0 + positions[v];
            sums[id].1 += 1;
        }
        let centers = sums.into_iter().map(|(s, n)| s * (1.0 / n as f64)).collect();
        (label, centers)
    }
}

/// `I` cells within Chebyshev distance `radius` of `(row, col)`, row-major,
/// excluding the cell itself.
pub fn neighbors(grid: &PatchGrid, row: usize, col: usize, radius: usize) -> Vec<usize> {
    let r0 = row.saturating_sub(radius);
    let c0 = col.saturating_sub(radius);
    let r1 = (row + radius).min(grid.rows().saturating_sub(1));
    let c1 = (col + radius).min(grid.cols().saturating_sub(1));
    let mut out = Vec::new();
    for r in r0..=r1 {
        for c in c0..=c1 {
            if (r, c) != (row, col) && grid.cell(r, c).class() == PatchClass::I {
                out.push(grid.index(r, c));
            }
        }
    }
    out
}

/// Endpoint of `l` (0 for `a`, 1 for `b`) nearer to `other`; ties go to `a`.
fn nearer_endpoint_to_segment(l: &LineSegment, other: &LineSegment) -> usize {
    let da = point_segment_distance(l.a, other);
    let db = point_segment_distance(l.b, other);
    usize::from(db < da)
}

fn nearer_endpoint_to_point(l: &LineSegment, q: Point) -> usize {
    usize::from(l.b.distance(q) < l.a.distance(q))
}

fn endpoint(l: &LineSegment, which: usize) -> Point {
    if which == 0 {
        l.a
    } else {
        l.b
    }
}

/// Endpoints joined by an `I`-`I` connection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    /// 0 for `l_i.a`, 1 for `l_i.b`.
    pub end_i: usize,
    pub end_j: usize,
    /// Mean of the two cross point-to-segment distances.
    pub distance: f64,
}

/// Decides whether two chords share an endpoint.
pub fn connect_i(l_i: &LineSegment, l_j: &LineSegment, tau_d: f64) -> Option<Joint> {
    let end_i = nearer_endpoint_to_segment(l_i, l_j);
    let end_j = nearer_endpoint_to_segment(l_j, l_i);
    let d = 0.5 * (point_segment_distance(endpoint(l_j, end_j), l_i) + point_segment_distance(endpoint(l_i, end_i), l_j));
    (d <= tau_d).then_some(Joint { end_i, end_j, distance: d })
}

/// Junction placement for an `X` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct XResolution {
    pub vertex: Point,
    /// `(neighbor index, endpoint)` pairs linked to `vertex`.
    pub connections: Vec<(usize, usize)>,
    /// No pairwise intersection fell inside the cell.
    pub fallback: bool,
}

/// Places the junction of an `X` cell from its neighbor chords.
///
/// Returns `None` with fewer than two neighbors.
pub fn resolve_x(rect: &PatchRect, neighbors: &[LineSegment]) -> Option<XResolution> {
    if neighbors.len() < 2 {
        return None;
    }
    let mut participates = vec![false; neighbors.len()];
    let mut sum = Point::new(0.0, 0.0);
    let mut count = 0usize;
    for i in 0..neighbors.len() {
        for j in i + 1..neighbors.len() {
            if let Some(p) = segment_intersection(&neighbors[i], &neighbors[j]) {
                if rect.contains(p, CONTAINMENT_TOL) {
                    sum = sum + p;
                    count += 1;
                    participates[i] = true;
                    participates[j] = true;
                }
            }
        }
    }
    if count > 0 {
        let vertex = sum * (1.0 / count as f64);
        let connections = (0..neighbors.len())
            .filter(|&i| participates[i])
            .map(|i| (i, nearer_endpoint_to_point(&neighbors[i], vertex)))
            .collect();
        return Some(XResolution { vertex, connections, fallback: false });
    }
    let center = rect.center();
    let ends: Vec<usize> = neighbors.iter().map(|l| nearer_endpoint_to_point(l, center)).collect();
    let mut sum = Point::new(0.0, 0.0);
    for (l, &e) in neighbors.iter().zip(&ends) {
        sum = sum + endpoint(l, e);
    }
    let vertex = sum * (1.0 / neighbors.len() as f64);
    Some(XResolution { vertex, connections: ends.into_iter().enumerate().collect(), fallback: true })
}

/// Edge across a `T` cell between two neighbor chords.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TLink {
    pub seg_i: usize,
    pub end_i: usize,
    pub seg_j: usize,
    pub end_j: usize,
}

/// `l` prolonged past its endpoint nearer to `toward` by `reach` pixels.
fn extend_toward(l: &LineSegment, toward: Point, reach: f64) -> LineSegment {
    if l.is_degenerate() {
        return *l;
    }
    let near = nearer_endpoint_to_point(l, toward);
    let (keep, tip) = if near == 0 { (l.b, l.a) } else { (l.a, l.b) };
    let dir = (tip - keep) * (1.0 / l.length());
    LineSegment::new(keep, tip + dir * reach)
}

/// Pairs neighbor chords of a `T` cell that continue each other.
///
/// Chords on opposite sides of the cell are a patch apart, so each is first
/// prolonged through the cell by the patch diagonal before taking the shape
/// distance. Candidates within `tau_d` and `tau_a` are accepted greedily by
/// ascending distance, then endpoint gap; every chord is used at most once.
pub fn resolve_t(rect: &PatchRect, neighbors: &[LineSegment], tau_d: f64, tau_a: f64) -> Vec<TLink> {
    let reach = rect.size_f() * std::f64::consts::SQRT_2;
    let center = rect.center();
    let extended: Vec<LineSegment> = neighbors.iter().map(|l| extend_toward(l, center, reach)).collect();
    let mut candidates = Vec::new();
    for i in 0..neighbors.len() {
        for j in i + 1..neighbors.len() {
            let Ok(angle) = angle_difference(&neighbors[i], &neighbors[j]) else {
                continue;
            };
            if angle > tau_a {
                continue;
            }
            let d = shape_distance(&extended[i], &extended[j]);
            if d > tau_d {
                continue;
            }
            let mut best = (f64::INFINITY, 0, 0);
            for ei in 0..2 {
                for ej in 0..2 {
                    let gap = endpoint(&neighbors[i], ei).distance(endpoint(&neighbors[j], ej));
                    if gap < best.0 {
                        best = (gap, ei, ej);
                    }
                }
            }
            candidates.push((d, best.0, TLink { seg_i: i, end_i: best.1, seg_j: j, end_j: best.2 }));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut used = vec![false; neighbors.len()];
    let mut out = Vec::new();
    for (_, _, link) in candidates {
        if used[link.seg_i] || used[link.seg_j] {
            continue;
        }
        used[link.seg_i] = true;
        used[link.seg_j] = true;
        out.push(link);
    }
    out
}

/// An accepted `I`-`I` connection before merging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IConnection {
    /// Grid indices, `cell_i < cell_j`.
    pub cell_i: usize,
    pub cell_j: usize,
    pub joint: Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Diagnostic {
    /// An `X` cell with fewer than two `I` neighbors was left out.
    XSkipped { row: usize, col: usize, neighbors: usize },
    /// No neighbor intersection fell inside the `X` cell; the centroid of
    /// the nearer endpoints was used.
    XFallback { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub graph: RoadGraph,
    pub connections: Vec<IConnection>,
    pub diagnostics: Vec<Diagnostic>,
}

enum CellWork {
    Links(Vec<IConnection>),
    Junction { resolution: XResolution, cells: Vec<usize> },
    Crossing { links: Vec<TLink>, cells: Vec<usize> },
    Skipped(Diagnostic),
    Nothing,
}

/// Builds a road graph from `grid`.
pub fn reconstruct_graph(grid: &PatchGrid, params: &ReconstructParams) -> Result<RoadGraph, ReconstructError> {
    reconstruct_detailed(grid, params).map(|r| r.graph)
}

/// [`reconstruct_graph`] with the raw `I`-`I` connections and diagnostics.
pub fn reconstruct_detailed(grid: &PatchGrid, params: &ReconstructParams) -> Result<Reconstruction, ReconstructError> {
    params.validate()?;
    let i_cells = grid.i_cells();
    let slot: HashMap<usize, usize> = i_cells.iter().enumerate().map(|(s, &k)| (k, s)).collect();
    let seg = |k: usize| *grid.cells()[k].segment().expect("I cell");

    let work: Vec<CellWork> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (row, col) = grid.position(k);
            let class = grid.cells()[k].class();
            if class == PatchClass::Background {
                return CellWork::Nothing;
            }
            let near = neighbors(grid, row, col, params.neighbor_radius);
            match class {
                PatchClass::I => {
                    let l = seg(k);
                    CellWork::Links(
                        near.into_iter()
                            .filter(|&j| j > k)
                            .filter_map(|j| {
                                connect_i(&l, &seg(j), params.tau_d)
                                    .map(|joint| IConnection { cell_i: k, cell_j: j, joint })
                            })
                            .collect(),
                    )
                }
                PatchClass::X => {
                    let segs: Vec<LineSegment> = near.iter().map(|&j| seg(j)).collect();
                    match resolve_x(&grid.rect(row, col), &segs) {
                        Some(resolution) => CellWork::Junction { resolution, cells: near },
                        None => CellWork::Skipped(Diagnostic::XSkipped { row, col, neighbors: near.len() }),
                    }
                }
                PatchClass::T => {
                    let segs: Vec<LineSegment> = near.iter().map(|&j| seg(j)).collect();
                    let links = resolve_t(&grid.rect(row, col), &segs, params.tau_d, params.tau_a);
                    CellWork::Crossing { links, cells: near }
                }
                PatchClass::Background => unreachable!(),
            }
        })
        .collect();

    // Provisional vertices: 2s and 2s+1 are the endpoints of the s-th I cell.
    let mut positions: Vec<Point> = Vec::with_capacity(2 * i_cells.len());
    for &k in &i_cells {
        let l = seg(k);
        positions.push(l.a);
        positions.push(l.b);
    }
    let vid = |k: usize, end: usize| 2 * slot[&k] + end;
    let mut merge = VertexMergeSet::new(positions.len());
    let mut connections = Vec::new();
    let mut diagnostics = Vec::new();
    // Edges reference provisional ids; junctions get ids past the endpoints.
    let mut edges: Vec<(usize, usize)> = (0..i_cells.len()).map(|s| (2 * s, 2 * s + 1)).collect();
    let mut junctions: Vec<Point> = Vec::new();

    for (k, w) in work.into_iter().enumerate() {
        let (row, col) = grid.position(k);
        match w {
            CellWork::Links(links) => {
                for c in links {
                    merge.union(vid(c.cell_i, c.joint.end_i), vid(c.cell_j, c.joint.end_j));
                    connections.push(c);
                }
            }
            CellWork::Junction { resolution, cells } => {
                if resolution.fallback {
                    diagnostics.push(Diagnostic::XFallback { row, col });
                }
                let id = positions.len() + junctions.len();
                junctions.push(resolution.vertex);
                for (n, end) in resolution.connections {
                    edges.push((id, vid(cells[n], end)));
                }
            }
            CellWork::Crossing { links, cells } => {
                for t in links {
                    edges.push((vid(cells[t.seg_i], t.end_i), vid(cells[t.seg_j], t.end_j)));
                }
            }
            CellWork::Skipped(d) => diagnostics.push(d),
            CellWork::Nothing => {}
        }
    }

    let (label, mut vertices) = merge.centroids(&positions);
    let base = vertices.len();
    vertices.extend(junctions);
    let map = |v: usize| if v < label.len() { label[v] } else { base + v - label.len() };
    let edges: Vec<(usize, usize)> = edges.into_iter().map(|(a, b)| (map(a), map(b))).collect();
    let graph = assemble(vertices, edges);
    Ok(Reconstruction { graph, connections, diagnostics })
}

/// Merges vertices within [`MERGE_EPS`], drops self-loops and duplicate
/// edges, and removes vertices left without edges.
fn assemble(vertices: Vec<Point>, edges: Vec<(usize, usize)>) -> RoadGraph {
    let mut merge = VertexMergeSet::new(vertices.len());
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let key = |p: Point| ((p.x / MERGE_EPS).floor() as i64, (p.y / MERGE_EPS).floor() as i64);
    for (v, &p) in vertices.iter().enumerate() {
        let (kx, ky) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = buckets.get(&(kx + dx, ky + dy)) {
                    for &u in list {
                        if vertices[u].distance(p) <= MERGE_EPS {
                            merge.union(u, v);
                        }
                    }
                }
            }
        }
        buckets.entry((kx, ky)).or_default().push(v);
    }
    let (label, centers) = merge.centroids(&vertices);

    let mut seen = std::collections::HashSet::new();
    let mut kept = Vec::new();
    for (a, b) in edges {
        let (a, b) = (label[a], label[b]);
        if a != b && seen.insert((a.min(b), a.max(b))) {
            kept.push((a, b));
        }
    }
    let mut used = vec![usize::MAX; centers.len()];
    let mut out_vertices = Vec::new();
    let mut out_edges = Vec::with_capacity(kept.len());
    for (a, b) in kept {
        let mut id = |v: usize| {
            if used[v] == usize::MAX {
                used[v] = out_vertices.len();
                out_vertices.push(centers[v]);
            }
            used[v]
        };
        let (ia, ib) = (id(a), id(b));
        out_edges.push((ia, ib));
    }
    RoadGraph::new(out_vertices, out_edges).expect("assembled graph is valid")
}
