use std::collections::HashSet;

use palis::codec::{encode_graph, Cell, PatchGrid, RoadGraph};
use palis::fitter::{fit_palis, perturb_segments, FitConfig, MONOTONE_SLACK};
use palis::formats::{parse_graph, parse_grid, quantize, write_graph, write_grid, GraphFile};
use palis::geometry::{point_segment_distance, projection_param, LineSegment, PatchRect, Point};
use palis::metrics::{apls, densify, topo, AplsParams, TopoParams};
use palis::raster::{compose_soft_mask, dice_loss, rasterize_patch, RasterParams, SoftMask};
use palis::reconstruct::{reconstruct_detailed, ReconstructParams};
use palis::synth::{generate, Scene};
use proptest::prelude::*;

fn in_patch(rect: PatchRect) -> impl Strategy<Value = Point> {
    let s = rect.size_f();
    (0.0..s, 0.0..s).prop_map(move |(x, y)| rect.origin() + Point::new(x, y))
}

fn patch_segment(rect: PatchRect) -> impl Strategy<Value = LineSegment> {
    (in_patch(rect), in_patch(rect))
        .prop_filter("non-degenerate", |(a, b)| a.distance(*b) > 1e-3)
        .prop_map(|(a, b)| LineSegment::new(a, b))
}

/// Polyline roads across a 64×64 image.
fn road_graph() -> impl Strategy<Value = RoadGraph> {
    prop::collection::vec(prop::collection::vec((2.0..62.0f64, 2.0..62.0f64), 2..5), 1..4).prop_map(|roads| {
        let mut vertices = Vec::new();
        let mut edges = Vec::new();
        for road in roads {
            let base = vertices.len();
            vertices.extend(road.iter().map(|&(x, y)| Point::new(x, y)));
            edges.extend((base..base + road.len() - 1).map(|v| (v, v + 1)));
        }
        RoadGraph::new(vertices, edges).unwrap()
    })
}

fn synthetic_scene() -> impl Strategy<Value = (Scene, u64)> {
    (prop::sample::select(Scene::ALL.to_vec()), 0u64..1000)
}

fn permuted(g: &RoadGraph, seed: u64) -> RoadGraph {
    let n = g.vertex_count();
    // Multiplicative shuffle; 7919 is prime and larger than any graph here.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (v as u64 * 7919 + seed) % (n as u64 * 7919 + 1));
    let mut new_index = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let vertices = order.iter().map(|&old| g.vertices()[old]).collect();
    let mut edges: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v)| (new_index[v], new_index[u])).collect();
    edges.reverse();
    RoadGraph::new(vertices, edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn raster_values_in_unit_interval_and_monotone(l in patch_segment(PatchRect::new(1, 2, 8))) {
        let rect = PatchRect::new(1, 2, 8);
        let params = RasterParams::default();
        let c = rasterize_patch(&l, &rect, &params);
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for (k, &v) in c.iter().enumerate() {
            prop_assert!(v > 0.0 && v <= 1.0);
            let q = rect.pixel_center(k / 8, k % 8);
            let s = projection_param(q, &l).unwrap();
            let d = point_segment_distance(q, &l);
            if (0.0..=1.0).contains(&s) { inside.push((d, v)) } else { outside.push((d, v)) }
        }
        for group in [&mut inside, &mut outside] {
            group.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in group.windows(2) {
                prop_assert!(w[1].1 <= w[0].1 + 1e-15);
            }
        }
    }

    #[test]
    fn composition_is_local(g in road_graph(), pick in 0usize..64, l in patch_segment(PatchRect::new(0, 0, 8))) {
        let grid = encode_graph(&g, 64, 64, 8).unwrap();
        let cells = grid.i_cells();
        prop_assume!(!cells.is_empty());
        let k = cells[pick % cells.len()];
        let (row, col) = grid.position(k);
        let rect = grid.rect(row, col);
        let mut moved = grid.clone();
        moved.set(row, col, Cell::I(LineSegment::new(l.a + rect.origin(), l.b + rect.origin()))).unwrap();
        let params = RasterParams::default();
        let (a, b) = (compose_soft_mask(&grid, &params), compose_soft_mask(&moved, &params));
        for y in 0..64u32 {
            for x in 0..64u32 {
                let q = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                if !rect.contains(q, 0.0) {
                    prop_assert_eq!(a.get(x, y), b.get(x, y));
                }
            }
        }
    }

    #[test]
    fn dice_symmetric_and_zero_on_self(a in prop::collection::vec(0.0..=1.0f64, 36), b in prop::collection::vec(0.0..=1.0f64, 36)) {
        let a = SoftMask::from_values(6, 6, a).unwrap();
        let b = SoftMask::from_values(6, 6, b).unwrap();
        prop_assert!((dice_loss(&a, &b).unwrap() - dice_loss(&b, &a).unwrap()).abs() < 1e-15);
        if a.values().iter().map(|v| v * v).sum::<f64>() > 0.0 {
            prop_assert!(dice_loss(&a, &a).unwrap() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mask_fit_is_monotone_contained_and_deterministic(g in road_graph(), seed in 0u64..1000) {
        let truth = encode_graph(&g, 64, 64, 8).unwrap();
        let cfg = FitConfig { max_iters: 60, seed, ..Default::default() };
        let target = compose_soft_mask(&truth, &cfg.raster);
        let init = perturb_segments(&truth, 2.0, seed);
        let (fitted, report) = fit_palis(&init, &target, &cfg).unwrap();
        prop_assert!(report.losses.iter().all(|l| l.is_finite()));
        prop_assert!(report.losses.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK));
        prop_assert!(report.final_loss <= report.losses.first().copied().unwrap_or(0.0) + MONOTONE_SLACK);
        for (row, col, cell) in fitted.iter() {
            if let Cell::I(s) = cell {
                let rect = fitted.rect(row, col);
                prop_assert!(rect.contains(s.a, 0.0) && rect.contains(s.b, 0.0));
            }
        }
        let again = fit_palis(&perturb_segments(&truth, 2.0, seed), &target, &cfg).unwrap();
        prop_assert_eq!(again, (fitted, report));
    }
}

fn reconstruction_input() -> impl Strategy<Value = PatchGrid> {
    (synthetic_scene(), 0.0..1.5f64, any::<u64>()).prop_map(|((scene, seed), amp, jitter_seed)| {
        let s = generate(scene, seed);
        let grid = encode_graph(&s.graph, s.width, s.height, 8).unwrap();
        perturb_segments(&grid, amp, jitter_seed)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn merged_vertices_are_distinct_unless_joined(grid in reconstruction_input()) {
        let r = reconstruct_detailed(&grid, &ReconstructParams::default()).unwrap();
        let g = &r.graph;
        let joined: HashSet<(usize, usize)> = g.edges().iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
        let v = g.vertices();
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                if v[i].distance(v[j]) <= 1e-6 {
                    prop_assert!(joined.contains(&(i, j)), "vertices {} and {} coincide", i, j);
                }
            }
        }
        // Rebuilding validates indices, self-loops and duplicates.
        prop_assert!(RoadGraph::new(g.vertices().to_vec(), g.edges().to_vec()).is_ok());
    }

    #[test]
    fn raising_tau_d_keeps_connections(grid in reconstruction_input()) {
        let mut previous: Option<HashSet<(usize, usize, usize, usize)>> = None;
        for tau_d in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let r = reconstruct_detailed(&grid, &ReconstructParams { tau_d, ..Default::default() }).unwrap();
            let set: HashSet<_> =
                r.connections.iter().map(|c| (c.cell_i, c.cell_j, c.joint.end_i, c.joint.end_j)).collect();
            if let Some(prev) = &previous {
                prop_assert!(prev.is_subset(&set), "tau_d {} dropped a connection", tau_d);
            }
            previous = Some(set);
        }
    }
}

/// Road graph with coordinates on a 1/64 px lattice so translations by
/// quarter pixels are exact.
fn lattice_graph() -> impl Strategy<Value = RoadGraph> {
    road_graph().prop_map(|g| {
        let snap = |v: f64| (v * 64.0).round() / 64.0;
        let vertices = g.vertices().iter().map(|p| Point::new(snap(p.x), snap(p.y))).collect();
        RoadGraph::new(vertices, g.edges().to_vec()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scores_lie_in_unit_interval(gt in road_graph(), prop_graph in road_graph()) {
        let a = apls(&gt, &prop_graph, &AplsParams::default()).unwrap();
        let t = topo(&gt, &prop_graph, &TopoParams::default()).unwrap();
        for v in [a, t.precision, t.recall, t.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn apls_ignores_indexing(gt in road_graph(), prop_graph in road_graph(), seed in 0u64..100) {
        let params = AplsParams::default();
        let base = apls(&gt, &prop_graph, &params).unwrap();
        let shuffled = apls(&permuted(&gt, seed), &permuted(&prop_graph, seed + 1), &params).unwrap();
        prop_assert!((base - shuffled).abs() < 1e-9, "{} vs {}", base, shuffled);
    }

    #[test]
    fn scores_ignore_rigid_translation(gt in lattice_graph(), prop_graph in lattice_graph(), dx in -400i32..400, dy in -400i32..400) {
        let offset = Point::new(dx as f64 * 0.25, dy as f64 * 0.25);
        let (gt2, prop2) = (gt.translated(offset), prop_graph.translated(offset));
        let a = apls(&gt, &prop_graph, &AplsParams::default()).unwrap();
        let a2 = apls(&gt2, &prop2, &AplsParams::default()).unwrap();
        prop_assert!((a - a2).abs() < 1e-9, "{} vs {}", a, a2);
        let t = topo(&gt, &prop_graph, &TopoParams::default()).unwrap();
        let t2 = topo(&gt2, &prop2, &TopoParams::default()).unwrap();
        prop_assert!((t.recall - t2.recall).abs() < 1e-9 && (t.precision - t2.precision).abs() < 1e-9);
    }

    #[test]
    fn densify_keeps_length_and_bounds_edges(g in road_graph(), spacing in 0.5..40.0f64) {
        let d = densify(&g, spacing).unwrap();
        prop_assert!((d.total_length() - g.total_length()).abs() < 1e-9);
        for e in 0..d.edge_count() {
            prop_assert!(d.edge_segment(e).length() <= spacing + 1e-9);
        }
        prop_assert_eq!(&d.vertices()[..g.vertex_count()], g.vertices());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn removing_proposal_edges_never_raises_recall(scene in synthetic_scene(), drops in prop::collection::vec(any::<prop::sample::Index>(), 1..4)) {
        let s = generate(scene.0, scene.1);
        let params = TopoParams::default();
        let mut prop_graph = s.graph.clone();
        let mut recall = topo(&s.graph, &prop_graph, &params).unwrap().recall;
        for pick in drops {
            if prop_graph.edge_count() == 0 {
                break;
            }
            let drop = pick.index(prop_graph.edge_count());
            let edges: Vec<(usize, usize)> =
                prop_graph.edges().iter().enumerate().filter(|&(e, _)| e != drop).map(|(_, &uv)| uv).collect();
            prop_graph = RoadGraph::new(prop_graph.vertices().to_vec(), edges).unwrap();
            let next = topo(&s.graph, &prop_graph, &params).unwrap().recall;
            prop_assert!(next <= recall + 1e-12, "recall rose from {} to {}", recall, next);
            recall = next;
        }
    }
}

fn quantized_graph() -> impl Strategy<Value = GraphFile> {
    (road_graph(), 1u32..1000, 1u32..1000).prop_map(|(g, width, height)| {
        let vertices = g.vertices().iter().map(|p| Point::new(quantize(p.x), quantize(p.y))).collect();
        GraphFile { width, height, graph: RoadGraph::new(vertices, g.edges().to_vec()).unwrap() }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn graph_text_round_trips(file in quantized_graph()) {
        let text = write_graph(&file);
        let back = parse_graph(&text).unwrap();
        prop_assert_eq!(&back, &file);
        prop_assert_eq!(write_graph(&back), text);
    }

    #[test]
    fn grid_text_round_trips(g in road_graph()) {
        let text = write_grid(&encode_graph(&g, 64, 64, 8).unwrap());
        // Canonical files are fixed points of parse then write.
        let grid = parse_grid(&text).unwrap();
        prop_assert_eq!(write_grid(&grid), text.clone());
        prop_assert_eq!(parse_grid(&write_grid(&grid)).unwrap(), grid);
    }

    #[test]
    fn mangled_grids_are_rejected_or_valid(g in road_graph(), at in any::<prop::sample::Index>(), byte in 0x20u8..0x7f) {
        let mut text = write_grid(&encode_graph(&g, 64, 64, 8).unwrap()).into_bytes();
        let k = at.index(text.len());
        text[k] = byte;
        if let Ok(text) = String::from_utf8(text) {
            if let Ok(grid) = parse_grid(&text) {
                prop_assert!(grid.validate().is_ok());
            }
        }
    }
}
