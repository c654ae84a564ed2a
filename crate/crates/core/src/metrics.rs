//! Graph similarity scores: APLS and TOPO.
//!
//! Both compare a proposal graph against a ground-truth graph through
//! positions snapped onto the other graph's edges and shortest-path
//! (geodesic) distances along edges.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;
use thiserror::Error;

use crate::codec::RoadGraph;
use crate::geometry::{LineSegment, Point};

/// Distances below this (px) are treated as zero.
const EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("ground-truth graph has no edges")]
    EmptyGroundTruth,
    #[error("invalid metric parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AplsParams {
    pub control_point_spacing: f64,
    pub snap_radius: f64,
}

impl Default for AplsParams {
    fn default() -> Self {
        Self { control_point_spacing: 16.0, snap_radius: 8.0 }
    }
}

impl AplsParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        if !(self.control_point_spacing > 0.0 && self.control_point_spacing.is_finite()) {
            return Err(MetricError::InvalidParams("control_point_spacing must be positive"));
        }
        if !(self.snap_radius > 0.0 && self.snap_radius.is_finite()) {
            return Err(MetricError::InvalidParams("snap_radius must be positive"));
        }
        Ok(())
    }
}

/// How marbles are paired with holes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Matching {
    /// One-to-one by ascending distance.
    #[default]
    Greedy,
    /// Maximum-cardinality bipartite matching.
    Maximum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopoParams {
    pub seed_interval: f64,
    pub match_radius: f64,
    /// Geodesic radius of the sampled sub-graphs.
    pub propagation_radius: f64,
    pub marble_interval: f64,
    pub matching: Matching,
}

impl Default for TopoParams {
    fn default() -> Self {
        Self {
            seed_interval: 16.0,
            match_radius: 8.0,
            propagation_radius: 300.0,
            marble_interval: 5.0,
            matching: Matching::Greedy,
        }
    }
}

impl TopoParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        for v in [self.seed_interval, self.match_radius, self.propagation_radius, self.marble_interval] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MetricError::InvalidParams("all TOPO distances must be positive"));
            }
        }
        if self.marble_interval > self.propagation_radius {
            return Err(MetricError::InvalidParams("marble_interval exceeds propagation_radius"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TopoScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TopoScore {
    pub fn from_counts(c: &TopoCounts) -> Self {
        let precision = if c.marbles > 0 { c.matched as f64 / c.marbles as f64 } else { 0.0 };
        let recall = if c.holes > 0 { c.matched as f64 / c.holes as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1 }
    }
}

/// Marble and hole tallies, per seed or aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TopoCounts {
    pub holes: usize,
    pub marbles: usize,
    pub matched: usize,
}

impl std::ops::Add for TopoCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { holes: self.holes + o.holes, marbles: self.marbles + o.marbles, matched: self.matched + o.matched }
    }
}

/// Subdivides every edge so that none is longer than `spacing`.
///
/// Original vertices keep their indices; new vertices follow them.
pub fn densify(g: &RoadGraph, spacing: f64) -> Result<RoadGraph, MetricError> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(MetricError::InvalidParams("spacing must be positive"));
    }
    let mut vertices = g.vertices().to_vec();
    let mut edges = Vec::with_capacity(g.edge_count());
    for &(u, v) in g.edges() {
        let (a, b) = (g.vertices()[u], g.vertices()[v]);
        let n = ((a.distance(b) / spacing) - 1e-12).ceil().max(1.0) as usize;
        let mut prev = u;
        for k in 1..n {
            let id = vertices.len();
            vertices.push(LineSegment::new(a, b).point_at(k as f64 / n as f64));
            edges.push((prev, id));
            prev = id;
        }
        edges.push((prev, v));
    }
    Ok(RoadGraph::new(vertices, edges).expect("subdivision keeps the graph valid"))
}

/// A position on a graph: a vertex, or a point strictly inside an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Vertex(usize),
    OnEdge { edge: usize, t: f64 },
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A graph prepared for snapping and shortest-path queries.
pub struct Network<'g> {
    graph: &'g RoadGraph,
    lengths: Vec<f64>,
    adjacency: Vec<Vec<(usize, usize)>>,
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl<'g> Network<'g> {
    /// `cell` sets the spatial bucket size used for snapping.
    pub fn new(graph: &'g RoadGraph, cell: f64) -> Self {
        let lengths = (0..graph.edge_count()).map(|e| graph.edge_segment(e).length()).collect();
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for e in 0..graph.edge_count() {
            let s = graph.edge_segment(e);
            let (x0, x1) = (s.a.x.min(s.b.x), s.a.x.max(s.b.x));
            let (y0, y1) = (s.a.y.min(s.b.y), s.a.y.max(s.b.y));
            for bx in (x0 / cell).floor() as i64..=(x1 / cell).floor() as i64 {
                for by in (y0 / cell).floor() as i64..=(y1 / cell).floor() as i64 {
                    buckets.entry((bx, by)).or_default().push(e);
                }
            }
        }
        Self { graph, lengths, adjacency: graph.adjacency(), cell, buckets }
    }

    pub fn graph(&self) -> &RoadGraph {
        self.graph
    }

    pub fn point(&self, loc: Location) -> Point {
        match loc {
            Location::Vertex(v) => self.graph.vertices()[v],
            Location::OnEdge { edge, t } => self.graph.edge_segment(edge).point_at(t),
        }
    }

    fn location_on_edge(&self, edge: usize, t: f64) -> Location {
        let (u, v) = self.graph.edges()[edge];
        let len = self.lengths[edge];
        if t * len <= EPS {
            Location::Vertex(u)
        } else if (1.0 - t) * len <= EPS {
            Location::Vertex(v)
        } else {
            Location::OnEdge { edge, t }
        }
    }

    /// Nearest location within `radius` of `q`; ties go to the lower edge index.
    pub fn snap(&self, q: Point, radius: f64) -> Option<(Location, f64)> {
        let lo = ((q.x - radius) / self.cell).floor() as i64;
        let hi = ((q.x + radius) / self.cell).floor() as i64;
        let lo_y = ((q.y - radius) / self.cell).floor() as i64;
        let hi_y = ((q.y + radius) / self.cell).floor() as i64;
        let mut best: Option<(usize, f64, f64)> = None;
        for bx in lo..=hi {
            for by in lo_y..=hi_y {
                let Some(list) = self.buckets.get(&(bx, by)) else {
                    continue;
                };
                for &e in list {
                    let s = self.graph.edge_segment(e);
                    let d = s.direction();
                    let nn = d.norm_sq();
                    let t = if nn == 0.0 { 0.0 } else { ((q - s.a).dot(d) / nn).clamp(0.0, 1.0) };
                    let dist = s.point_at(t).distance(q);
                    let better = match best {
                        None => true,
                        Some((be, bd, _)) => dist < bd || (dist == bd && e < be),
                    };
                    if better {
                        best = Some((e, dist, t));
                    }
                }
            }
        }
        best.filter(|&(_, d, _)| d <= radius).map(|(e, d, t)| (self.location_on_edge(e, t), d))
    }

    /// Shortest-path distance from `src` to every vertex.
    pub fn distances(&self, src: Location) -> Vec<f64> {
        let n = self.graph.vertex_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        match src {
            Location::Vertex(v) => {
                dist[v] = 0.0;
                heap.push(HeapItem(0.0, v));
            }
            Location::OnEdge { edge, t } => {
                let (u, v) = self.graph.edges()[edge];
                let len = self.lengths[edge];
                dist[u] = t * len;
                dist[v] = dist[v].min((1.0 - t) * len);
                heap.push(HeapItem(dist[u], u));
                heap.push(HeapItem(dist[v], v));
            }
        }
        while let Some(HeapItem(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(e, w) in &self.adjacency[v] {
                let nd = d + self.lengths[e];
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(HeapItem(nd, w));
                }
            }
        }
        dist
    }

    /// Geodesic distance from `src` (with its vertex distances) to `dst`.
    pub fn distance_between(&self, dist: &[f64], src: Location, dst: Location) -> f64 {
        match dst {
            Location::Vertex(w) => dist[w],
            Location::OnEdge { edge, t } => {
                let (u, v) = self.graph.edges()[edge];
                let len = self.lengths[edge];
                let mut d = (dist[u] + t * len).min(dist[v] + (1.0 - t) * len);
                if let Location::OnEdge { edge: e0, t: t0 } = src {
                    if e0 == edge {
                        d = d.min((t - t0).abs() * len);
                    }
                }
                d
            }
        }
    }
}

/// Directional and symmetric APLS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AplsReport {
    pub gt_to_prop: f64,
    pub prop_to_gt: f64,
    pub score: f64,
}

/// Average path length similarity of `prop` against `gt`.
pub fn apls(gt: &RoadGraph, prop: &RoadGraph, params: &AplsParams) -> Result<f64, MetricError> {
    apls_detailed(gt, prop, params).map(|r| r.score)
}

pub fn apls_detailed(gt: &RoadGraph, prop: &RoadGraph, params: &AplsParams) -> Result<AplsReport, MetricError> {
    params.validate()?;
    if gt.edge_count() == 0 {
        return Err(MetricError::EmptyGroundTruth);
    }
    if prop.edge_count() == 0 {
        return Ok(AplsReport { gt_to_prop: 0.0, prop_to_gt: 0.0, score: 0.0 });
    }
    let gt_dense = densify(gt, params.control_point_spacing)?;
    let prop_dense = densify(prop, params.control_point_spacing)?;
    let gt_net = Network::new(&gt_dense, params.control_point_spacing);
    let prop_net = Network::new(&prop_dense, params.control_point_spacing);
    let gt_to_prop = directional_apls(&gt_net, &prop_net, params.snap_radius);
    let prop_to_gt = directional_apls(&prop_net, &gt_net, params.snap_radius);
    Ok(AplsReport { gt_to_prop, prop_to_gt, score: 0.5 * (gt_to_prop + prop_to_gt) })
}

/// `1 − mean penalty` over control-point pairs of `a` connected in `a`.
///
/// Control points are the vertices of `a`, each snapped onto `b`.
pub fn directional_apls(a: &Network, b: &Network, snap_radius: f64) -> f64 {
    let n = a.graph().vertex_count();
    let snapped: Vec<Option<Location>> =
        a.graph().vertices().iter().map(|&q| b.snap(q, snap_radius).map(|(l, _)| l)).collect();
    let (sum, count) = (0..n)
        .into_par_iter()
        .map(|i| {
            let da = a.distances(Location::Vertex(i));
            let db = snapped[i].map(|s| (s, b.distances(s)));
            let mut sum = 0.0;
            let mut count = 0usize;
            for j in i + 1..n {
                let l_a = da[j];
                if !l_a.is_finite() || l_a <= EPS {
                    continue;
                }
                count += 1;
                let penalty = match (&db, snapped[j]) {
                    (Some((si, dist)), Some(sj)) => {
                        let l_b = b.distance_between(dist, *si, sj);
                        if l_b.is_finite() {
                            ((l_a - l_b).abs() / l_a).min(1.0)
                        } else {
                            1.0
                        }
                    }
                    _ => 1.0,
                };
                sum += penalty;
            }
            (sum, count)
        })
        .reduce(|| (0.0, 0), |x, y| (x.0 + y.0, x.1 + y.1));
    if count == 0 {
        return 0.0;
    }
    1.0 - sum / count as f64
}

/// Points at geodesic distance `k · interval` (`k = 0, 1, …`) from `src`,
/// up to `radius`.
pub fn ring_points(net: &Network, src: Location, radius: f64, interval: f64) -> Vec<Point> {
    let g = net.graph();
    let dist = net.distances(src);
    let mut out = Vec::new();
    let k_max = (radius / interval + 1e-9).floor() as i64;
    let level = |k: i64| k as f64 * interval;

    let node_points = |p: Point, d: f64, out: &mut Vec<Point>| {
        if !d.is_finite() || d > radius + EPS {
            return;
        }
        let k = (d / interval).round() as i64;
        if k <= k_max && (d - level(k)).abs() <= EPS {
            out.push(p);
        }
    };
    for (v, &p) in g.vertices().iter().enumerate() {
        node_points(p, dist[v], &mut out);
    }

    // Pieces (from, to, d_from, d_to, length); the source edge is split.
    let mut pieces = Vec::with_capacity(g.edge_count() + 1);
    for (e, &(u, v)) in g.edges().iter().enumerate() {
        let (pu, pv) = (g.vertices()[u], g.vertices()[v]);
        match src {
            Location::OnEdge { edge, t } if edge == e => {
                let ps = net.point(src);
                node_points(ps, 0.0, &mut out);
                let len = net.lengths[e];
                pieces.push((ps, pu, 0.0, dist[u], t * len));
                pieces.push((ps, pv, 0.0, dist[v], (1.0 - t) * len));
            }
            _ => pieces.push((pu, pv, dist[u], dist[v], net.lengths[e])),
        }
    }

    for (pa, pb, da, db, len) in pieces {
        if len <= 2.0 * EPS {
            continue;
        }
        // Offset from `pa` where the two approach directions meet.
        let peak = 0.5 * (db - da + len);
        if da.is_finite() {
            let hi = if db.is_finite() { peak.min(len - EPS) } else { len - EPS };
            let first = ((da + EPS) / interval).floor() as i64 + 1;
            for k in first.max(0)..=k_max {
                let a = level(k) - da;
                if a > hi {
                    break;
                }
                if a > EPS {
                    out.push(pa + (pb - pa) * (a / len));
                }
            }
        }
        if db.is_finite() {
            // Strictly before the peak so a point on it is emitted once.
            let hi = if da.is_finite() { (len - peak - EPS).min(len - EPS) } else { len - EPS };
            let first = ((db + EPS) / interval).floor() as i64 + 1;
            for k in first.max(0)..=k_max {
                let b = level(k) - db;
                if b > hi {
                    break;
                }
                if b > EPS {
                    out.push(pb + (pa - pb) * (b / len));
                }
            }
        }
    }
    out
}

/// Number of one-to-one pairs between `holes` and `marbles` within `radius`.
pub fn match_points(holes: &[Point], marbles: &[Point], radius: f64, matching: Matching) -> usize {
    let cell = radius.max(EPS);
    let key = |p: Point| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (h, &p) in holes.iter().enumerate() {
        buckets.entry(key(p)).or_default().push(h);
    }
    // Candidate holes of each marble, ascending by (distance, hole index).
    let mut candidates: Vec<Vec<(f64, usize)>> = Vec::with_capacity(marbles.len());
    for &m in marbles {
        let (kx, ky) = key(m);
        let mut c = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = buckets.get(&(kx + dx, ky + dy)) {
                    for &h in list {
                        let d = holes[h].distance(m);
                        if d <= radius {
                            c.push((d, h));
                        }
                    }
                }
            }
        }
        c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        candidates.push(c);
    }
    match matching {
        Matching::Greedy => {
            let mut pairs: Vec<(f64, usize, usize)> = candidates
                .iter()
                .enumerate()
                .flat_map(|(m, c)| c.iter().map(move |&(d, h)| (d, h, m)))
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut hole_used = vec![false; holes.len()];
            let mut marble_used = vec![false; marbles.len()];
            let mut matched = 0;
            for (_, h, m) in pairs {
                if !hole_used[h] && !marble_used[m] {
                    hole_used[h] = true;
                    marble_used[m] = true;
                    matched += 1;
                }
            }
            matched
        }
        Matching::Maximum => maximum_matching(&candidates, holes.len()),
    }
}

/// Augmenting-path bipartite matching; `adj[m]` lists the holes of marble `m`.
fn maximum_matching(adj: &[Vec<(f64, usize)>], holes: usize) -> usize {
    let mut owner = vec![usize::MAX; holes];
    let mut matched = 0;
    for m in 0..adj.len() {
        let mut seen = vec![false; holes];
        if augment(m, adj, &mut owner, &mut seen) {
            matched += 1;
        }
    }
    matched
}

fn augment(m: usize, adj: &[Vec<(f64, usize)>], owner: &mut [usize], seen: &mut [bool]) -> bool {
    for &(_, h) in &adj[m] {
        if seen[h] {
            continue;
        }
        seen[h] = true;
        if owner[h] == usize::MAX || augment(owner[h], adj, owner, seen) {
            owner[h] = m;
            return true;
        }
    }
    false
}

/// TOPO score of `prop` against `gt`.
pub fn topo(gt: &RoadGraph, prop: &RoadGraph, params: &TopoParams) -> Result<TopoScore, MetricError> {
    topo_counts(gt, prop, params).map(|per_seed| {
        let total = per_seed.into_iter().fold(TopoCounts::default(), |a, b| a + b);
        TopoScore::from_counts(&total)
    })
}

/// Marble/hole tallies for every seed, in seed order.
pub fn topo_counts(gt: &RoadGraph, prop: &RoadGraph, params: &TopoParams) -> Result<Vec<TopoCounts>, MetricError> {
    params.validate()?;
    if gt.edge_count() == 0 {
        return Err(MetricError::EmptyGroundTruth);
    }
    // Seeds are spaced along the ground truth, but rings grow on the ground
    // truth itself so that identical graphs yield identical point sets.
    let seeds = densify(gt, params.seed_interval)?;
    let gt_net = Network::new(gt, params.seed_interval);
    let prop_net = Network::new(prop, params.seed_interval);
    let seed_net = Network::new(&seeds, params.seed_interval);
    let counts = (0..seeds.vertex_count())
        .into_par_iter()
        .filter(|&s| !seed_net.adjacency[s].is_empty())
        .map(|s| {
            let at = seeds.vertices()[s];
            let (src, _) = gt_net.snap(at, params.match_radius).expect("seed lies on the ground truth");
            let holes = ring_points(&gt_net, src, params.propagation_radius, params.marble_interval);
            let Some((loc, _)) = prop_net.snap(at, params.match_radius) else {
                return TopoCounts { holes: holes.len(), marbles: 0, matched: 0 };
            };
            let marbles = ring_points(&prop_net, loc, params.propagation_radius, params.marble_interval);
            let matched = match_points(&holes, &marbles, params.match_radius, params.matching);
            TopoCounts { holes: holes.len(), marbles: marbles.len(), matched }
        })
        .collect();
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn densify_counts() {
        let g = RoadGraph::path(&[p(0.0, 0.0), p(10.0, 0.0)]).unwrap();
        assert_eq!(densify(&g, 20.0).unwrap(), g);
        let d = densify(&g, 4.0).unwrap();
        assert_eq!(d.edge_count(), 3);
        assert_abs_diff_eq!(d.total_length(), 10.0, epsilon = 1e-12);
        assert_eq!(densify(&g, 5.0).unwrap().edge_count(), 2);
        assert!(densify(&g, 0.0).is_err());
    }

    #[test]
    fn snap_prefers_nearest_edge() {
        let g = RoadGraph::new(vec![p(0.0, 0.0), p(20.0, 0.0), p(0.0, 5.0), p(20.0, 5.0)], vec![(0, 1), (2, 3)])
            .unwrap();
        let net = Network::new(&g, 8.0);
        let (loc, d) = net.snap(p(10.0, 4.0), 8.0).unwrap();
        assert_eq!(loc, Location::OnEdge { edge: 1, t: 0.5 });
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);
        assert!(net.snap(p(10.0, 30.0), 8.0).is_none());
        assert_eq!(net.snap(p(-1.0, 0.0), 8.0).unwrap().0, Location::Vertex(0));
    }

    #[test]
    fn distances_from_edge_interior() {
        let g = RoadGraph::path(&[p(0.0, 0.0), p(10.0, 0.0), p(10.0, 10.0)]).unwrap();
        let net = Network::new(&g, 8.0);
        let src = Location::OnEdge { edge: 0, t: 0.3 };
        let d = net.distances(src);
        assert_abs_diff_eq!(d[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[2], 17.0, epsilon = 1e-12);
        let same = net.distance_between(&d, src, Location::OnEdge { edge: 0, t: 0.8 });
        assert_abs_diff_eq!(same, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn apls_identity_and_empty() {
        let g = RoadGraph::path(&[p(0.0, 0.0), p(50.0, 0.0), p(50.0, 40.0)]).unwrap();
        let params = AplsParams::default();
        assert_eq!(apls(&g, &g, &params).unwrap(), 1.0);
        assert_eq!(apls(&g, &RoadGraph::empty(), &params).unwrap(), 0.0);
        assert_eq!(apls(&RoadGraph::empty(), &g, &params), Err(MetricError::EmptyGroundTruth));
    }

    #[test]
    fn ring_points_on_a_path() {
        let g = RoadGraph::path(&[p(0.0, 0.0), p(12.0, 0.0)]).unwrap();
        let net = Network::new(&g, 8.0);
        let mut xs: Vec<f64> =
            ring_points(&net, Location::OnEdge { edge: 0, t: 0.5 }, 300.0, 5.0).iter().map(|q| q.x).collect();
        xs.sort_by(f64::total_cmp);
        let expected = [1.0, 6.0, 11.0];
        assert_eq!(xs.len(), expected.len());
        for (x, e) in xs.iter().zip(expected) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-9);
        }
    }

    #[test]
    fn ring_points_on_a_cycle_meet_once() {
        // Square of perimeter 40; from a corner both directions meet at 20.
        let g = RoadGraph::new(
            vec![p(0.0, 0.0), p(10.0, 0.0), p(10.0, 10.0), p(0.0, 10.0)],
            vec![(0, 1), (1, 2), (2, 3), (3, 0)],
        )
        .unwrap();
        let net = Network::new(&g, 8.0);
        let pts = ring_points(&net, Location::Vertex(0), 300.0, 5.0);
        // Distances 0, 5 (x2), 10 (x2), 15 (x2), 20 (x1).
        assert_eq!(pts.len(), 8);
    }

    #[test]
    fn matching_strategies() {
        let holes = [p(0.0, 0.0), p(6.0, 0.0)];
        let marbles = [p(3.0, 0.0), p(-4.0, 0.0)];
        // Greedy takes the 3.0 tie at hole 0, leaving marble at -4 with nothing.
        assert_eq!(match_points(&holes, &marbles, 8.0, Matching::Greedy), 1);
        assert_eq!(match_points(&holes, &marbles, 8.0, Matching::Maximum), 2);
        assert_eq!(match_points(&holes, &[], 8.0, Matching::Greedy), 0);
    }

    #[test]
    fn topo_identity_and_empty() {
        let g = RoadGraph::path(&[p(0.0, 0.0), p(60.0, 0.0), p(60.0, 50.0)]).unwrap();
        let params = TopoParams::default();
        let s = topo(&g, &g, &params).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let e = topo(&g, &RoadGraph::empty(), &params).unwrap();
        assert_eq!((e.precision, e.recall, e.f1), (0.0, 0.0, 0.0));
        assert!(topo(&RoadGraph::empty(), &g, &params).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(AplsParams { snap_radius: 0.0, ..Default::default() }.validate().is_err());
        assert!(TopoParams { marble_interval: 400.0, ..Default::default() }.validate().is_err());
        assert!(TopoParams { seed_interval: f64::NAN, ..Default::default() }.validate().is_err());
    }
}
