//! Encoding of vector road graphs into patched line segments.
//!
//! The image is cut into non-overlapping `p × p` patches. Each patch is
//! classified by the number of road traversals crossing it: none gives a
//! background patch, exactly one gives an `I` patch carrying a single chord,
//! and several give an `X` patch (the roads meet at a junction inside the
//! patch) or a `T` patch (they cross without meeting, e.g. an overpass).

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{
    clip_polyline_to_rect, perpendicular_line_distance, point_segment_distance, polyline_length,
    LineSegment, PatchRect, Point,
};

/// Default patch edge length in pixels.
pub const DEFAULT_PATCH_SIZE: u32 = 8;

/// Pieces shorter than this do not count as a traversal.
pub const MIN_PIECE_LENGTH: f64 = 0.5;

/// Chord endpoints may sit this far outside their patch.
pub const CONTAINMENT_TOL: f64 = 1e-6;

/// Two edges meeting at a junction continue the same road when the turn
/// between them is at most this many degrees.
pub const STROKE_MAX_TURN_DEG: f64 = 45.0;

/// I-patches whose traversal deviates from its chord by more than this are
/// reported as curved.
pub const CURVATURE_WARN_PX: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge {edge}: vertex index {index} out of range ({count} vertices)")]
    IndexOutOfRange { edge: usize, index: usize, count: usize },
    #[error("edge {edge}: self-loop on vertex {vertex}")]
    SelfLoop { edge: usize, vertex: usize },
    #[error("edge {edge}: duplicate of edge {first}")]
    DuplicateEdge { edge: usize, first: usize },
    #[error("vertex {vertex}: non-finite coordinate")]
    NonFinite { vertex: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("patch size must be positive")]
    ZeroPatchSize,
    #[error("image {width}x{height} is not divisible into {patch_size}px patches")]
    NotDivisible { width: u32, height: u32, patch_size: u32 },
    #[error("cell ({row}, {col}) is outside the {rows}x{cols} grid")]
    CellOutOfRange { row: usize, col: usize, rows: usize, cols: usize },
    #[error("cell ({row}, {col}): segment endpoint ({x}, {y}) lies outside the patch")]
    SegmentOutsidePatch { row: usize, col: usize, x: f64, y: f64 },
    #[error("cell ({row}, {col}): segment has non-finite coordinates")]
    NonFiniteSegment { row: usize, col: usize },
}

/// Undirected road graph with vertices in image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoadGraph {
    vertices: Vec<Point>,
    edges: Vec<(usize, usize)>,
}

impl RoadGraph {
    pub fn new(vertices: Vec<Point>, edges: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        for (vertex, p) in vertices.iter().enumerate() {
            if !p.is_finite() {
                return Err(GraphError::NonFinite { vertex });
            }
        }
        let mut seen = std::collections::HashMap::with_capacity(edges.len());
        for (edge, &(i, j)) in edges.iter().enumerate() {
            for index in [i, j] {
                if index >= vertices.len() {
                    return Err(GraphError::IndexOutOfRange { edge, index, count: vertices.len() });
                }
            }
            if i == j {
                return Err(GraphError::SelfLoop { edge, vertex: i });
            }
            if let Some(&first) = seen.get(&(i.min(j), i.max(j))) {
                return Err(GraphError::DuplicateEdge { edge, first });
            }
            seen.insert((i.min(j), i.max(j)), edge);
        }
        Ok(Self { vertices, edges })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Path graph through `points` in order.
    pub fn path(points: &[Point]) -> Result<Self, GraphError> {
        let edges = (1..points.len()).map(|k| (k - 1, k)).collect();
        Self::new(points.to_vec(), edges)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.vertices.len()];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn edge_segment(&self, edge: usize) -> LineSegment {
        let (i, j) = self.edges[edge];
        LineSegment::new(self.vertices[i], self.vertices[j])
    }

    pub fn total_length(&self) -> f64 {
        (0..self.edges.len()).map(|e| self.edge_segment(e).length()).sum()
    }

    /// Copy with every vertex moved by `offset`.
    pub fn translated(&self, offset: Point) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&p| p + offset).collect(),
            edges: self.edges.clone(),
        }
    }

    /// Adjacency lists of `(edge index, neighbor vertex)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            adj[i].push((e, j));
            adj[j].push((e, i));
        }
        adj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatchClass {
    Background,
    I,
    X,
    T,
}

impl PatchClass {
    /// Number of patch classes.
    pub const COUNT: usize = 4;

    pub fn code(self) -> u8 {
        match self {
            PatchClass::Background => 0,
            PatchClass::I => 1,
            PatchClass::X => 2,
            PatchClass::T => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PatchClass::Background),
            1 => Some(PatchClass::I),
            2 => Some(PatchClass::X),
            3 => Some(PatchClass::T),
            _ => None,
        }
    }
}

impl fmt::Display for PatchClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchClass::Background => "B",
            PatchClass::I => "I",
            PatchClass::X => "X",
            PatchClass::T => "T",
        })
    }
}

/// One patch record. Only `I` cells carry a segment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Cell {
    #[default]
    Background,
    I(LineSegment),
    X,
    T,
}

impl Cell {
    pub fn class(&self) -> PatchClass {
        match self {
            Cell::Background => PatchClass::Background,
            Cell::I(_) => PatchClass::I,
            Cell::X => PatchClass::X,
            Cell::T => PatchClass::T,
        }
    }

    pub fn segment(&self) -> Option<&LineSegment> {
        match self {
            Cell::I(seg) => Some(seg),
            _ => None,
        }
    }

    pub fn is_foreground(&self) -> bool {
        !matches!(self, Cell::Background)
    }
}

/// `rows × cols` lattice of patch records, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    patch_size: u32,
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
}

impl PatchGrid {
    /// All-background grid covering a `width × height` image.
    pub fn new(width: u32, height: u32, patch_size: u32) -> Result<Self, GridError> {
        if patch_size == 0 {
            return Err(GridError::ZeroPatchSize);
        }
        if width % patch_size != 0 || height % patch_size != 0 {
            return Err(GridError::NotDivisible { width, height, patch_size });
        }
        let rows = (height / patch_size) as usize;
        let cols = (width / patch_size) as usize;
        Ok(Self { patch_size, rows, cols, cells: vec![Cell::Background; rows * cols] })
    }

    pub fn patch_size(&self) -> u32 {
        self.patch_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn width(&self) -> u32 {
        self.cols as u32 * self.patch_size
    }

    pub fn height(&self) -> u32 {
        self.rows as u32 * self.patch_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn rect(&self, row: usize, col: usize) -> PatchRect {
        PatchRect::new(row, col, self.patch_size)
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.cells[self.index(row, col)]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Iterates `(row, col, cell)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Cell)> + '_ {
        self.cells.iter().enumerate().map(move |(k, c)| (k / self.cols, k % self.cols, c))
    }

    /// Row-major indices of all `I` cells.
    pub fn i_cells(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&k| matches!(self.cells[k], Cell::I(_))).collect()
    }

    pub fn class_counts(&self) -> [usize; PatchClass::COUNT] {
        let mut counts = [0; PatchClass::COUNT];
        for c in &self.cells {
            counts[c.class().code() as usize] += 1;
        }
        counts
    }

    pub fn set(&mut self, row: usize, col: usize, cell: Cell) -> Result<(), GridError> {
        if row >= self.rows || col >= self.cols {
            return Err(GridError::CellOutOfRange { row, col, rows: self.rows, cols: self.cols });
        }
        if let Cell::I(seg) = &cell {
            self.check_segment(row, col, seg)?;
        }
        let k = self.index(row, col);
        self.cells[k] = cell;
        Ok(())
    }

    fn check_segment(&self, row: usize, col: usize, seg: &LineSegment) -> Result<(), GridError> {
        if !seg.is_finite() {
            return Err(GridError::NonFiniteSegment { row, col });
        }
        let rect = self.rect(row, col);
        for p in seg.endpoints() {
            if !rect.contains(p, CONTAINMENT_TOL) {
                return Err(GridError::SegmentOutsidePatch { row, col, x: p.x, y: p.y });
            }
        }
        Ok(())
    }

    /// Replaces the segment of the `I` cell at row-major `index`, clamping its
    /// endpoints into the cell footprint. Non-`I` cells are left untouched.
    pub fn set_segment_clamped(&mut self, index: usize, seg: LineSegment) {
        let (row, col) = self.position(index);
        let rect = self.rect(row, col);
        if let Cell::I(s) = &mut self.cells[index] {
            *s = LineSegment::new(rect.clamp(seg.a), rect.clamp(seg.b));
        }
    }

    /// Re-checks every cell invariant.
    pub fn validate(&self) -> Result<(), GridError> {
        for (row, col, cell) in self.iter() {
            if let Cell::I(seg) = cell {
                self.check_segment(row, col, seg)?;
            }
        }
        Ok(())
    }

    /// Same classes as `self`, same segment-or-not pattern.
    pub fn same_layout(&self, other: &PatchGrid) -> bool {
        self.patch_size == other.patch_size
            && self.rows == other.rows
            && self.cols == other.cols
            && self.cells.iter().zip(&other.cells).all(|(a, b)| a.class() == b.class())
    }
}

/// A maximal road: a sequence of graph vertices. Consecutive edges through a
/// vertex of degree two always continue the road; at junctions the two
/// straightest incident edges continue each other.
#[derive(Debug, Clone, PartialEq)]
pub struct Stroke {
    pub vertices: Vec<usize>,
}

/// Road decomposition of a graph.
#[derive(Debug, Clone)]
pub struct RoadStrokes<'g> {
    graph: &'g RoadGraph,
    strokes: Vec<Stroke>,
    polylines: Vec<Vec<Point>>,
    bboxes: Vec<(Point, Point)>,
    degrees: Vec<usize>,
}

impl<'g> RoadStrokes<'g> {
    pub fn new(graph: &'g RoadGraph) -> Self {
        let strokes = decompose_strokes(graph);
        let polylines: Vec<Vec<Point>> = strokes
            .iter()
            .map(|s| s.vertices.iter().map(|&v| graph.vertices()[v]).collect())
            .collect();
        let bboxes = polylines
            .iter()
            .map(|poly| {
                poly.iter().fold(
                    (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
                    |(lo, hi), p| {
                        (Point::new(lo.x.min(p.x), lo.y.min(p.y)), Point::new(hi.x.max(p.x), hi.y.max(p.y)))
                    },
                )
            })
            .collect();
        Self { graph, strokes, polylines, bboxes, degrees: graph.degrees() }
    }

    pub fn strokes(&self) -> &[Stroke] {
        &self.strokes
    }

    pub fn polylines(&self) -> &[Vec<Point>] {
        &self.polylines
    }

    /// Road pieces inside `rect`, one per traversal.
    pub fn traversals(&self, rect: &PatchRect) -> Vec<Vec<Point>> {
        let mut pieces = Vec::new();
        for (poly, (lo, hi)) in self.polylines.iter().zip(&self.bboxes) {
            if hi.x < rect.min_x() || lo.x > rect.max_x() || hi.y < rect.min_y() || lo.y > rect.max_y() {
                continue;
            }
            for piece in clip_polyline_to_rect(poly, rect) {
                if polyline_length(&piece) < MIN_PIECE_LENGTH {
                    continue;
                }
                if runs_along_border(&piece, rect) && !border_owned(&piece, rect) {
                    continue;
                }
                pieces.push(piece);
            }
        }
        pieces
    }

    fn classify(&self, pieces: &[Vec<Point>], rect: &PatchRect) -> PatchClass {
        classify_with_degrees(pieces, self.graph, &self.degrees, rect)
    }
}

fn runs_along_border(piece: &[Point], rect: &PatchRect) -> bool {
    let all = |f: &dyn Fn(&Point) -> bool| piece.iter().all(f);
    all(&|p| p.x == rect.min_x())
        || all(&|p| p.x == rect.max_x())
        || all(&|p| p.y == rect.min_y())
        || all(&|p| p.y == rect.max_y())
}

/// A road lying on a shared border belongs to the patch on the left of its
/// travel direction (left as seen in the y-down image).
fn border_owned(piece: &[Point], rect: &PatchRect) -> bool {
    piece.windows(2).all(|w| {
        let d = w[1] - w[0];
        let len = d.norm();
        if len == 0.0 {
            return true;
        }
        let left = Point::new(d.y / len, -d.x / len);
        rect.contains_strict(w[0].midpoint(w[1]) + left * 1e-6)
    })
}

fn decompose_strokes(g: &RoadGraph) -> Vec<Stroke> {
    let adj = g.adjacency();
    let verts = g.vertices();
    // next[v][slot] = slot of the continuing edge at v, if any.
    let mut next: Vec<Vec<Option<usize>>> = adj.iter().map(|a| vec![None; a.len()]).collect();
    for v in 0..verts.len() {
        let inc = &adj[v];
        if inc.len() == 2 {
            next[v][0] = Some(1);
            next[v][1] = Some(0);
        } else if inc.len() >= 3 {
            let mut pairs = Vec::new();
            for s in 0..inc.len() {
                for t in s + 1..inc.len() {
                    let d1 = verts[inc[s].1] - verts[v];
                    let d2 = verts[inc[t].1] - verts[v];
                    // Straight continuation means the two outgoing directions are opposite.
                    let cos = d1.dot(d2) / (d1.norm() * d2.norm());
                    let turn = 180.0 - cos.clamp(-1.0, 1.0).acos().to_degrees();
                    if turn <= STROKE_MAX_TURN_DEG {
                        pairs.push((turn, s, t));
                    }
                }
            }
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            for (_, s, t) in pairs {
                if next[v][s].is_none() && next[v][t].is_none() {
                    next[v][s] = Some(t);
                    next[v][t] = Some(s);
                }
            }
        }
    }

    let slot_of = |v: usize, e: usize| adj[v].iter().position(|&(edge, _)| edge == e).expect("edge incident");
    let mut visited = vec![false; g.edge_count()];
    let mut strokes = Vec::new();

    let walk = |start: usize, slot: usize, visited: &mut Vec<bool>| -> Vec<usize> {
        let mut out = vec![start];
        let (mut v, mut slot) = (start, slot);
        loop {
            let (e, w) = adj[v][slot];
            if visited[e] {
                break;
            }
            visited[e] = true;
            out.push(w);
            let arrive = slot_of(w, e);
            match next[w][arrive] {
                Some(s) => {
                    v = w;
                    slot = s;
                }
                None => break,
            }
        }
        out
    };

    for v in 0..verts.len() {
        for slot in 0..adj[v].len() {
            if next[v][slot].is_none() && !visited[adj[v][slot].0] {
                strokes.push(Stroke { vertices: walk(v, slot, &mut visited) });
            }
        }
    }
    // Whatever is left forms closed loops.
    for e in 0..g.edge_count() {
        if !visited[e] {
            let v = g.edges()[e].0;
            strokes.push(Stroke { vertices: walk(v, slot_of(v, e), &mut visited) });
        }
    }
    strokes
}

/// Road pieces of `g` inside `rect`; the list length is the traversal count.
pub fn traversals_in_patch(g: &RoadGraph, rect: &PatchRect) -> Vec<Vec<Point>> {
    RoadStrokes::new(g).traversals(rect)
}

pub fn classify_patch(pieces: &[Vec<Point>], g: &RoadGraph, rect: &PatchRect) -> PatchClass {
    classify_with_degrees(pieces, g, &g.degrees(), rect)
}

fn classify_with_degrees(
    pieces: &[Vec<Point>],
    g: &RoadGraph,
    degrees: &[usize],
    rect: &PatchRect,
) -> PatchClass {
    match pieces.len() {
        0 => return PatchClass::Background,
        1 => return PatchClass::I,
        _ => {}
    }
    let junction = g.vertices().iter().enumerate().any(|(v, &p)| {
        if !rect.contains(p, 0.0) {
            return false;
        }
        degrees[v] >= 3 || pieces.iter().filter(|piece| piece.contains(&p)).count() >= 2
    });
    if junction {
        PatchClass::X
    } else {
        PatchClass::T
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("a traversal needs at least two points")]
pub struct ShortPieceError;

/// Segment from the first to the last point of a traversal.
pub fn chord_of_piece(piece: &[Point]) -> Result<LineSegment, ShortPieceError> {
    match (piece.first(), piece.last()) {
        (Some(&a), Some(&b)) if piece.len() >= 2 => Ok(LineSegment::new(a, b)),
        _ => Err(ShortPieceError),
    }
}

/// Largest distance of a traversal point from its chord.
pub fn chord_deviation(piece: &[Point], chord: &LineSegment) -> f64 {
    piece
        .iter()
        .map(|&p| {
            if chord.is_degenerate() {
                perpendicular_line_distance(p, chord)
            } else {
                point_segment_distance(p, chord)
            }
        })
        .fold(0.0, f64::max)
}

/// An `I` patch whose road bends away from the chord.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvedCell {
    pub row: usize,
    pub col: usize,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub grid: PatchGrid,
    pub curved: Vec<CurvedCell>,
}

pub fn encode_graph(g: &RoadGraph, width: u32, height: u32, patch_size: u32) -> Result<PatchGrid, GridError> {
    encode_graph_detailed(g, width, height, patch_size).map(|e| e.grid)
}

/// Encodes `g` and reports `I` patches whose chord underfits a curved road.
pub fn encode_graph_detailed(
    g: &RoadGraph,
    width: u32,
    height: u32,
    patch_size: u32,
) -> Result<Encoding, GridError> {
    let mut grid = PatchGrid::new(width, height, patch_size)?;
    let strokes = RoadStrokes::new(g);
    let cols = grid.cols();
    let encoded: Vec<(Cell, Option<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let rect = PatchRect::new(k / cols, k % cols, patch_size);
            let pieces = strokes.traversals(&rect);
            match strokes.classify(&pieces, &rect) {
                PatchClass::Background => (Cell::Background, None),
                PatchClass::I => {
                    let chord = chord_of_piece(&pieces[0]).expect("clipped pieces have two points");
                    (Cell::I(chord), Some(chord_deviation(&pieces[0], &chord)))
                }
                PatchClass::X => (Cell::X, None),
                PatchClass::T => (Cell::T, None),
            }
        })
        .collect();

    let mut curved = Vec::new();
    for (k, (cell, deviation)) in encoded.into_iter().enumerate() {
        let (row, col) = grid.position(k);
        if let Some(dev) = deviation.filter(|&d| d > CURVATURE_WARN_PX) {
            curved.push(CurvedCell { row, col, max_deviation: dev });
        }
        grid.set(row, col, cell)?;
    }
    Ok(Encoding { grid, curved })
}

/// Distinct unordered vertex pairs that are edges of `g`.
pub fn edge_set(g: &RoadGraph) -> HashSet<(usize, usize)> {
    g.edges().iter().map(|&(i, j)| (i.min(j), i.max(j))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    fn plus_graph(center: Point, arm: f64) -> RoadGraph {
        RoadGraph::new(
            vec![
                center,
                center + p(arm, 0.0),
                center + p(0.0, arm),
                center + p(-arm, 0.0),
                center + p(0.0, -arm),
            ],
            vec![(0, 1), (0, 2), (0, 3), (0, 4)],
        )
        .unwrap()
    }

    #[test]
    fn graph_rejects_bad_edges() {
        let pts = vec![p(0.0, 0.0), p(1.0, 0.0)];
        assert!(matches!(
            RoadGraph::new(pts.clone(), vec![(0, 2)]),
            Err(GraphError::IndexOutOfRange { index: 2, .. })
        ));
        assert!(matches!(RoadGraph::new(pts.clone(), vec![(1, 1)]), Err(GraphError::SelfLoop { .. })));
        assert!(matches!(
            RoadGraph::new(pts.clone(), vec![(0, 1), (1, 0)]),
            Err(GraphError::DuplicateEdge { edge: 1, first: 0 })
        ));
        assert!(matches!(
            RoadGraph::new(vec![p(f64::NAN, 0.0)], vec![]),
            Err(GraphError::NonFinite { vertex: 0 })
        ));
    }

    #[test]
    fn strokes_continue_straight_through_junctions() {
        let g = plus_graph(p(20.0, 20.0), 10.0);
        let strokes = RoadStrokes::new(&g);
        assert_eq!(strokes.strokes().len(), 2);
        let mut lens: Vec<usize> = strokes.strokes().iter().map(|s| s.vertices.len()).collect();
        lens.sort();
        assert_eq!(lens, vec![3, 3]);

        // T junction: a through road plus one branch.
        let t = RoadGraph::new(
            vec![p(0.0, 0.0), p(10.0, 0.0), p(20.0, 0.0), p(10.0, 10.0)],
            vec![(0, 1), (1, 2), (1, 3)],
        )
        .unwrap();
        assert_eq!(RoadStrokes::new(&t).strokes().len(), 2);

        // A closed loop is one stroke that returns to its start.
        let square = RoadGraph::new(
            vec![p(0.0, 0.0), p(10.0, 0.0), p(10.0, 10.0), p(0.0, 10.0)],
            vec![(0, 1), (1, 2), (2, 3), (3, 0)],
        )
        .unwrap();
        let s = RoadStrokes::new(&square);
        assert_eq!(s.strokes().len(), 1);
        assert_eq!(s.strokes()[0].vertices.first(), s.strokes()[0].vertices.last());
    }

    #[test]
    fn traversal_counts() {
        let rect = PatchRect::new(1, 1, 8);
        assert!(traversals_in_patch(&RoadGraph::empty(), &rect).is_empty());

        let road = RoadGraph::path(&[p(0.0, 12.0), p(32.0, 12.0)]).unwrap();
        assert_eq!(traversals_in_patch(&road, &rect).len(), 1);

        // Oracle: flood traversal over the plus shape, one road per pair of
        // opposite arms that both reach into the patch.
        let plus = plus_graph(p(12.0, 12.0), 10.0);
        let adj = plus.adjacency();
        let arms_inside: Vec<usize> = adj[0]
            .iter()
            .filter(|&&(e, _)| {
                let seg = plus.edge_segment(e);
                crate::geometry::point_segment_distance(rect.center(), &seg) < 8.0
            })
            .map(|&(_, w)| w)
            .collect();
        let through_roads = arms_inside
            .iter()
            .filter(|&&w| {
                arms_inside.iter().any(|&u| {
                    let a = plus.vertices()[w] - plus.vertices()[0];
                    let b = plus.vertices()[u] - plus.vertices()[0];
                    a.dot(b) < 0.0
                })
            })
            .count()
            / 2;
        assert_eq!(through_roads, 2);
        assert_eq!(traversals_in_patch(&plus, &rect).len(), through_roads);
    }

    #[test]
    fn short_corner_graze_is_ignored() {
        let rect = PatchRect::new(0, 0, 8);
        // Cuts the corner at (8, 0) over ~0.28 px.
        let g = RoadGraph::path(&[p(7.8, -1.0), p(9.0, 0.2)]).unwrap();
        assert!(traversals_in_patch(&g, &rect).is_empty());
    }

    #[test]
    fn border_road_goes_to_left_patch() {
        // Eastbound along y = 8: visual left is north, i.e. row 0.
        let g = RoadGraph::path(&[p(0.0, 8.0), p(16.0, 8.0)]).unwrap();
        assert_eq!(traversals_in_patch(&g, &PatchRect::new(0, 0, 8)).len(), 1);
        assert_eq!(traversals_in_patch(&g, &PatchRect::new(1, 0, 8)).len(), 0);
        let west = RoadGraph::path(&[p(16.0, 8.0), p(0.0, 8.0)]).unwrap();
        assert_eq!(traversals_in_patch(&west, &PatchRect::new(0, 0, 8)).len(), 0);
        assert_eq!(traversals_in_patch(&west, &PatchRect::new(1, 0, 8)).len(), 1);
    }

    #[test]
    fn classification() {
        let rect = PatchRect::new(1, 1, 8);
        assert_eq!(classify_patch(&[], &RoadGraph::empty(), &rect), PatchClass::Background);

        let road = RoadGraph::path(&[p(0.0, 12.0), p(32.0, 12.0)]).unwrap();
        let pieces = traversals_in_patch(&road, &rect);
        assert_eq!(classify_patch(&pieces, &road, &rect), PatchClass::I);

        let cross = plus_graph(p(12.0, 12.0), 10.0);
        let pieces = traversals_in_patch(&cross, &rect);
        // Enumeration of the shared-vertex predicate.
        let shared = cross
            .vertices()
            .iter()
            .filter(|v| rect.contains(**v, 0.0) && pieces.iter().filter(|pc| pc.contains(v)).count() >= 2)
            .count();
        assert_eq!(shared, 1);
        assert_eq!(classify_patch(&pieces, &cross, &rect), PatchClass::X);

        let overpass = RoadGraph::new(
            vec![p(0.0, 12.0), p(24.0, 12.0), p(12.0, 0.0), p(12.0, 24.0)],
            vec![(0, 1), (2, 3)],
        )
        .unwrap();
        let pieces = traversals_in_patch(&overpass, &rect);
        assert_eq!(pieces.len(), 2);
        let shared = overpass
            .vertices()
            .iter()
            .filter(|v| rect.contains(**v, 0.0) && pieces.iter().filter(|pc| pc.contains(v)).count() >= 2)
            .count();
        assert_eq!(shared, 0);
        assert_eq!(classify_patch(&pieces, &overpass, &rect), PatchClass::T);
    }

    #[test]
    fn chords() {
        assert_eq!(
            chord_of_piece(&[p(0.0, 4.0), p(8.0, 4.0)]).unwrap(),
            LineSegment::from_coords(0.0, 4.0, 8.0, 4.0)
        );
        assert_eq!(
            chord_of_piece(&[p(0.0, 4.0), p(4.0, 4.0), p(4.0, 8.0)]).unwrap(),
            LineSegment::from_coords(0.0, 4.0, 4.0, 8.0)
        );
        assert_eq!(
            chord_of_piece(&[p(0.0, 4.0), p(3.0, 4.0)]).unwrap(),
            LineSegment::from_coords(0.0, 4.0, 3.0, 4.0)
        );
        assert_eq!(chord_of_piece(&[p(1.0, 1.0)]), Err(ShortPieceError));
    }

    #[test]
    fn encode_empty_and_non_divisible() {
        let grid = encode_graph(&RoadGraph::empty(), 64, 64, DEFAULT_PATCH_SIZE).unwrap();
        assert_eq!(grid.class_counts(), [64, 0, 0, 0]);
        assert!(matches!(
            encode_graph(&RoadGraph::empty(), 60, 64, 8),
            Err(GridError::NotDivisible { .. })
        ));
    }

    #[test]
    fn encode_horizontal_road() {
        let g = RoadGraph::path(&[p(0.0, 20.0), p(64.0, 20.0)]).unwrap();
        let grid = encode_graph(&g, 64, 64, 8).unwrap();
        // Oracle: a patch holds the road iff some sample of the centerline falls
        // strictly inside its footprint.
        for (row, col, cell) in grid.iter() {
            let rect = grid.rect(row, col);
            let hit = (0..=640).any(|k| rect.contains_strict(p(k as f64 * 0.1, 20.0)));
            assert_eq!(cell.class() == PatchClass::I, hit, "cell ({row}, {col})");
            if let Cell::I(seg) = cell {
                assert_eq!(row, 2);
                assert_eq!(seg.a.y, 20.0);
                assert_eq!(seg.b.y, 20.0);
                assert_eq!((seg.b.x - seg.a.x).abs(), 8.0);
            }
        }
        assert_eq!(grid.class_counts()[1], 8);
    }

    #[test]
    fn encode_plus_junction() {
        let g = plus_graph(p(28.0, 28.0), 24.0);
        let grid = encode_graph(&g, 64, 64, 8).unwrap();
        assert_eq!(grid.cell(3, 3).class(), PatchClass::X);
        assert_eq!(grid.class_counts()[2], 1);
        assert_eq!(grid.class_counts()[3], 0);
        assert_eq!(grid.cell(3, 4).class(), PatchClass::I);
        assert_eq!(grid.cell(2, 3).class(), PatchClass::I);
    }

    #[test]
    fn encode_reports_curved_patch() {
        let g = RoadGraph::path(&[p(0.0, 1.0), p(4.0, 7.5), p(8.0, 1.0)]).unwrap();
        let enc = encode_graph_detailed(&g, 16, 16, 8).unwrap();
        assert_eq!(enc.grid.cell(0, 0).class(), PatchClass::I);
        assert_eq!(enc.curved.len(), 1);
        assert!(enc.curved[0].max_deviation > 6.0);
    }

    #[test]
    fn grid_rejects_segment_outside_cell() {
        let mut grid = PatchGrid::new(16, 16, 8).unwrap();
        let err = grid.set(0, 0, Cell::I(LineSegment::from_coords(0.0, 0.0, 9.0, 4.0))).unwrap_err();
        assert!(matches!(err, GridError::SegmentOutsidePatch { .. }));
        assert!(grid.set(2, 0, Cell::X).is_err());
    }

    fn road_graph() -> impl Strategy<Value = RoadGraph> {
        prop::collection::vec((4.0..52.0f64, 4.0..60.0f64), 2..6).prop_map(|pts| {
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| p(x, y)).collect();
            let mut dedup: Vec<Point> = Vec::new();
            for q in pts {
                if dedup.last().is_none_or(|l| l.distance(q) > 1.0) {
                    dedup.push(q);
                }
            }
            if dedup.len() < 2 {
                dedup.push(dedup[0] + p(3.0, 1.0));
            }
            RoadGraph::path(&dedup).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn encoding_invariants(g in road_graph()) {
            let grid = encode_graph(&g, 64, 64, 8).unwrap();
            grid.validate().unwrap();
            let strokes = RoadStrokes::new(&g);
            let degrees = g.degrees();
            for (row, col, cell) in grid.iter() {
                let rect = grid.rect(row, col);
                match cell {
                    Cell::Background => {
                        let pieces = traversals_in_patch(&g, &rect);
                        prop_assert!(pieces.is_empty());
                    }
                    Cell::I(seg) => {
                        for e in seg.endpoints() {
                            let on_border = (e.x - rect.min_x()).abs() < 1e-9
                                || (e.x - rect.max_x()).abs() < 1e-9
                                || (e.y - rect.min_y()).abs() < 1e-9
                                || (e.y - rect.max_y()).abs() < 1e-9;
                            let at_end = g.vertices().iter().enumerate().any(|(v, q)| degrees[v] == 1 && *q == e);
                            prop_assert!(on_border || at_end);
                        }
                    }
                    _ => prop_assert!(strokes.traversals(&rect).len() >= 2),
                }
            }
        }

        #[test]
        fn encoding_is_translation_equivariant(g in road_graph()) {
            let base = encode_graph(&g, 72, 64, 8).unwrap();
            let shifted = encode_graph(&g.translated(p(8.0, 0.0)), 72, 64, 8).unwrap();
            for (row, col, cell) in base.iter() {
                if col + 1 >= base.cols() {
                    continue;
                }
                let moved = shifted.cell(row, col + 1);
                prop_assert_eq!(cell.class(), moved.class());
                if let (Cell::I(a), Cell::I(b)) = (cell, moved) {
                    prop_assert!((a.a.x + 8.0 - b.a.x).abs() < 1e-9 && (a.b.x + 8.0 - b.b.x).abs() < 1e-9);
                    prop_assert!((a.a.y - b.a.y).abs() < 1e-9 && (a.b.y - b.b.y).abs() < 1e-9);
                }
            }
            prop_assert_eq!(shifted.cell(0, 0).class(), PatchClass::Background);
        }
    }
}
