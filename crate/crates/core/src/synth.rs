//! Seeded synthetic road scenes.
//!
//! Roads run through patch centers (`8k + 4` for the default patch size) so
//! junctions sit in the middle of a patch, parallel roads are at least three
//! patches apart, and junction angles stay well above 30°.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{RoadGraph, DEFAULT_PATCH_SIZE};
use crate::geometry::{point_segment_distance, Point};
use crate::raster::SoftMask;

/// Largest random rotation applied to plus and overpass arms, in degrees.
pub const ARM_JITTER_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scene {
    /// Regular lattice of straight roads.
    Grid,
    /// One four-way junction.
    Plus,
    /// Two roads crossing without a junction.
    Overpass,
    /// Irregular lattice with some blocks missing.
    Manhattan,
}

impl Scene {
    pub const ALL: [Scene; 4] = [Scene::Grid, Scene::Plus, Scene::Overpass, Scene::Manhattan];

    pub fn name(self) -> &'static str {
        match self {
            Scene::Grid => "grid",
            Scene::Plus => "plus",
            Scene::Overpass => "overpass",
            Scene::Manhattan => "manhattan",
        }
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown scene '{0}' (expected grid, plus, overpass or manhattan)")]
pub struct UnknownScene(pub String);

impl FromStr for Scene {
    type Err = UnknownScene;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scene::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| UnknownScene(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub scene: Scene,
    pub graph: RoadGraph,
    pub width: u32,
    pub height: u32,
}

fn center_of(cell: usize) -> f64 {
    let p = DEFAULT_PATCH_SIZE as f64;
    cell as f64 * p + 0.5 * p
}

pub fn generate(scene: Scene, seed: u64) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (graph, size) = match scene {
        Scene::Grid => (lattice(&mut rng, 16, 3..=5, 1.0), 128),
        Scene::Plus => (plus(&mut rng), 128),
        Scene::Overpass => (overpass(&mut rng), 128),
        Scene::Manhattan => (lattice(&mut rng, 32, 3..=6, 0.8), 256),
    };
    SynthScene { scene, graph, width: size, height: size }
}

/// Cell indices from `first` with random gaps, staying at least two cells
/// inside the far border.
fn lattice_lines(rng: &mut ChaCha8Rng, cells: usize, gaps: std::ops::RangeInclusive<usize>) -> Vec<usize> {
    let mut out = vec![rng.random_range(2..=3)];
    loop {
        let next = out[out.len() - 1] + rng.random_range(gaps.clone());
        if next + 2 >= cells {
            break;
        }
        out.push(next);
    }
    out
}

/// Roads along random lattice lines; each lattice block edge is kept with
/// probability `keep`. Roads overrun the outer lattice lines by two cells so
/// that outer junctions are four-way.
fn lattice(rng: &mut ChaCha8Rng, cells: usize, gaps: std::ops::RangeInclusive<usize>, keep: f64) -> RoadGraph {
    let xs = lattice_lines(rng, cells, gaps.clone());
    let ys = lattice_lines(rng, cells, gaps);
    let mut cols: Vec<usize> = vec![xs[0] - 2];
    cols.extend(&xs);
    cols.push(xs[xs.len() - 1] + 2);
    let mut rows: Vec<usize> = vec![ys[0] - 2];
    rows.extend(&ys);
    rows.push(ys[ys.len() - 1] + 2);

    let (nc, nr) = (cols.len(), rows.len());
    let id = |r: usize, c: usize| r * nc + c;
    let on_lattice_row = |r: usize| r > 0 && r + 1 < nr;
    let on_lattice_col = |c: usize| c > 0 && c + 1 < nc;
    let mut edges = Vec::new();
    for r in 0..nr {
        for c in 0..nc {
            // Horizontal road pieces exist on lattice rows only.
            if c + 1 < nc && on_lattice_row(r) {
                let stub = c == 0 || c + 2 == nc;
                if stub || rng.random_bool(keep) {
                    edges.push((id(r, c), id(r, c + 1)));
                }
            }
            if r + 1 < nr && on_lattice_col(c) {
                let stub = r == 0 || r + 2 == nr;
                if stub || rng.random_bool(keep) {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
    }
    let mut vertices = Vec::with_capacity(nr * nc);
    for &r in &rows {
        for &c in &cols {
            vertices.push(Point::new(center_of(c), center_of(r)));
        }
    }
    compact(vertices, edges)
}

/// Drops vertices without edges and renumbers the rest.
fn compact(vertices: Vec<Point>, edges: Vec<(usize, usize)>) -> RoadGraph {
    let mut map = vec![usize::MAX; vertices.len()];
    let mut out = Vec::new();
    let mut remap = |v: usize| {
        if map[v] == usize::MAX {
            map[v] = out.len();
            out.push(vertices[v]);
        }
        map[v]
    };
    let edges: Vec<(usize, usize)> = edges.into_iter().map(|(a, b)| (remap(a), remap(b))).collect();
    RoadGraph::new(out, edges).expect("synthetic graph is valid")
}

fn jittered_direction(rng: &mut ChaCha8Rng, base_deg: f64) -> Point {
    let a = (base_deg + rng.random_range(-ARM_JITTER_DEG..=ARM_JITTER_DEG)).to_radians();
    Point::new(a.cos(), a.sin())
}

fn plus(rng: &mut ChaCha8Rng) -> RoadGraph {
    let c = Point::new(center_of(rng.random_range(7..=8)), center_of(rng.random_range(7..=8)));
    let mut vertices = vec![c];
    let mut edges = Vec::new();
    for k in 0..4 {
        let d = jittered_direction(rng, 90.0 * k as f64);
        vertices.push(c + d * rng.random_range(36.0..=52.0));
        edges.push((0, k + 1));
    }
    RoadGraph::new(vertices, edges).expect("plus graph is valid")
}

fn overpass(rng: &mut ChaCha8Rng) -> RoadGraph {
    let c = Point::new(center_of(rng.random_range(7..=8)), center_of(rng.random_range(7..=8)));
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    for base in [0.0, 90.0] {
        let d = jittered_direction(rng, base);
        let (back, ahead) = (rng.random_range(36.0..=52.0), rng.random_range(36.0..=52.0));
        edges.push((vertices.len(), vertices.len() + 1));
        vertices.push(c - d * back);
        vertices.push(c + d * ahead);
    }
    RoadGraph::new(vertices, edges).expect("overpass graph is valid")
}

/// Binary centerline mask: a pixel is on when its center lies within half a
/// pixel of an edge.
pub fn centerline_mask(g: &RoadGraph, width: u32, height: u32) -> SoftMask {
    let (w, h) = (width as usize, height as usize);
    let mut values = vec![0.0; w * h];
    for e in 0..g.edge_count() {
        let s = g.edge_segment(e);
        let x0 = (s.a.x.min(s.b.x) - 1.0).floor().max(0.0) as usize;
        let y0 = (s.a.y.min(s.b.y) - 1.0).floor().max(0.0) as usize;
        let x1 = ((s.a.x.max(s.b.x) + 1.0).ceil().max(0.0) as usize).min(w);
        let y1 = ((s.a.y.max(s.b.y) + 1.0).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let q = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                if point_segment_distance(q, &s) <= 0.5 {
                    values[y * w + x] = 1.0;
                }
            }
        }
    }
    SoftMask::from_values(width, height, values).expect("binary values are in range")
}
