//! Direct fitting of patched segments.
//!
//! [`fit_palis`] moves the endpoints of every `I` cell so that the composed
//! soft mask matches a target centerline mask under the DICE loss, using the
//! analytic rasterizer gradients. [`fit_vector_supervised`] is the
//! vector-label alternative: an L1 loss against per-cell reference
//! segments, either orientation-sorted or with arbitrary orientation.
//!
//! Both keep each segment inside its own cell footprint after every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{Cell, PatchGrid};
use crate::geometry::{LineSegment, PatchRect, Point};
use crate::raster::{backward, rasterize_patch, RasterError, RasterParams, SoftMask, DICE_EPS};

/// Slack allowed when checking that a gradient step did not raise the loss.
pub const MONOTONE_SLACK: f64 = 1e-9;

const MOMENTUM: f64 = 0.9;

/// Fraction of a cell's peak target value that counts as road when
/// initializing from a mask.
pub const RIDGE_LEVEL: f64 = 0.9;

/// Per-cell step lengths never grow beyond this multiple of the learning rate.
pub const MAX_RATE_GROWTH: f64 = 20.0;

/// A cell whose step length fell below this (px) has stopped moving.
const MIN_RATE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("target is {target_w}x{target_h} but the grid covers {grid_w}x{grid_h}")]
    DimensionMismatch { grid_w: u32, grid_h: u32, target_w: u32, target_h: u32 },
    #[error("label grid layout differs from the fitted grid at cell ({row}, {col})")]
    LabelMismatch { row: usize, col: usize },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    GradientDescent,
    Momentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorMode {
    /// Label orientation is arbitrary and redrawn at every iteration.
    Unsorted,
    /// Both sides are canonicalized (left endpoint first).
    Sorted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Initial per-cell step length in pixels.
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the loss changes by less than this between iterations.
    pub tol: f64,
    pub optimizer: Optimizer,
    pub raster: RasterParams,
    /// Seed for every random draw made during a fit.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_iters: 500,
            tol: 1e-10,
            optimizer: Optimizer::GradientDescent,
            raster: RasterParams::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FitError::InvalidConfig("learning_rate must be positive"));
        }
        if self.max_iters == 0 {
            return Err(FitError::InvalidConfig("max_iters must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(FitError::InvalidConfig("tol must be non-negative"));
        }
        self.raster.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    /// Loss before each step; its length is the number of iterations used.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    /// Per-`I`-cell endpoint error against a reference, when one was attached.
    pub endpoint_errors: Option<Vec<f64>>,
}

impl FitReport {
    pub fn iterations(&self) -> usize {
        self.losses.len()
    }

    /// Records the endpoint error of `fitted` against `reference`.
    pub fn attach_reference(&mut self, fitted: &PatchGrid, reference: &PatchGrid) {
        self.endpoint_errors = Some(endpoint_errors(fitted, reference));
    }

    pub fn mean_endpoint_error(&self) -> Option<f64> {
        self.endpoint_errors.as_ref().map(|e| mean(e))
    }

    /// Line-delimited `iteration loss` log.
    pub fn to_log(&self) -> String {
        self.losses
            .iter()
            .enumerate()
            .map(|(k, l)| format!("{k} {l:.12e}\n"))
            .collect()
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Mean endpoint distance between two segments, taking the better of the two
/// endpoint pairings.
pub fn segment_endpoint_error(pred: &LineSegment, reference: &LineSegment) -> f64 {
    let straight = 0.5 * (pred.a.distance(reference.a) + pred.b.distance(reference.b));
    let swapped = 0.5 * (pred.a.distance(reference.b) + pred.b.distance(reference.a));
    straight.min(swapped)
}

/// Endpoint error of every cell that is `I` in both grids, row-major.
pub fn endpoint_errors(fitted: &PatchGrid, reference: &PatchGrid) -> Vec<f64> {
    fitted
        .cells()
        .iter()
        .zip(reference.cells())
        .filter_map(|(a, b)| match (a, b) {
            (Cell::I(p), Cell::I(r)) => Some(segment_endpoint_error(p, r)),
            _ => None,
        })
        .collect()
}

pub fn mean_endpoint_error(fitted: &PatchGrid, reference: &PatchGrid) -> f64 {
    mean(&endpoint_errors(fitted, reference))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitStrategy {
    /// Horizontal segment of length `p/2` centered in the cell.
    Centered,
    /// `Centered`, then every coordinate jittered uniformly by up to `amplitude` px.
    Jittered { amplitude: f64 },
}

/// Overwrites every `I` segment with an initial guess.
pub fn initialize_segments(grid: &PatchGrid, strategy: InitStrategy, seed: u64) -> PatchGrid {
    let mut out = grid.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quarter = 0.25 * grid.patch_size() as f64;
    for k in grid.i_cells() {
        let (row, col) = grid.position(k);
        let c = grid.rect(row, col).center();
        let mut seg = LineSegment::new(c - Point::new(quarter, 0.0), c + Point::new(quarter, 0.0));
        if let InitStrategy::Jittered { amplitude } = strategy {
            seg = jitter(&seg, amplitude, &mut rng);
        }
        out.set_segment_clamped(k, seg);
    }
    out
}

/// Initializes every `I` segment from the target mass inside its cell.
///
/// Only pixels at or above [`RIDGE_LEVEL`] times the cell maximum count. The
/// segment runs through their weighted centroid along their principal axis
/// and spans them plus half a pixel. Cells without target mass get the
/// centered default.
pub fn initialize_from_mask(grid: &PatchGrid, target: &SoftMask) -> Result<PatchGrid, FitError> {
    if grid.width() != target.width() || grid.height() != target.height() {
        return Err(FitError::DimensionMismatch {
            grid_w: grid.width(),
            grid_h: grid.height(),
            target_w: target.width(),
            target_h: target.height(),
        });
    }
    let mut out = initialize_segments(grid, InitStrategy::Centered, 0);
    let p = grid.patch_size() as usize;
    for k in grid.i_cells() {
        let (row, col) = grid.position(k);
        let rect = grid.rect(row, col);
        let values = footprint(target, grid, k);
        let peak = values.iter().copied().fold(0.0, f64::max);
        if peak <= 0.0 {
            continue;
        }
        let pixel = |idx: usize| rect.pixel_center(idx / p, idx % p);
        // Soft targets are blurred well beyond the road, so only the ridge
        // near the peak takes part.
        let ridge: Vec<(Point, f64)> = values
            .iter()
            .enumerate()
            .filter(|&(_, &w)| w >= RIDGE_LEVEL * peak)
            .map(|(idx, &w)| (pixel(idx), w))
            .collect();
        let mass: f64 = ridge.iter().map(|&(_, w)| w).sum();
        let mut c = Point::new(0.0, 0.0);
        for &(q, w) in &ridge {
            c = c + q * w;
        }
        c = c * (1.0 / mass);
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for &(q, w) in &ridge {
            let d = q - c;
            sxx += w * d.x * d.x;
            sxy += w * d.x * d.y;
            syy += w * d.y * d.y;
        }
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let dir = Point::new(theta.cos(), theta.sin());
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(q, _) in &ridge {
            let t = (q - c).dot(dir);
            lo = lo.min(t);
            hi = hi.max(t);
        }
        let seg = LineSegment::new(rect.clamp(c + dir * (lo - 0.5)), rect.clamp(c + dir * (hi + 0.5)));
        out.set_segment_clamped(k, seg);
    }
    Ok(out)
}

/// Moves every coordinate of every `I` segment by up to `amplitude` px.
pub fn perturb_segments(grid: &PatchGrid, amplitude: f64, seed: u64) -> PatchGrid {
    let mut out = grid.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in grid.i_cells() {
        let seg = *grid.cells()[k].segment().expect("I cell");
        out.set_segment_clamped(k, jitter(&seg, amplitude, &mut rng));
    }
    out
}

fn jitter(seg: &LineSegment, amplitude: f64, rng: &mut ChaCha8Rng) -> LineSegment {
    if amplitude <= 0.0 {
        return *seg;
    }
    let mut d = || rng.random_range(-amplitude..=amplitude);
    LineSegment::from_coords(seg.a.x + d(), seg.a.y + d(), seg.b.x + d(), seg.b.y + d())
}

fn write_segments(grid: &mut PatchGrid, cells: &[usize], coords: &[[f64; 4]]) {
    for (&k, c) in cells.iter().zip(coords) {
        grid.set_segment_clamped(k, LineSegment::from_coords(c[0], c[1], c[2], c[3]));
    }
}

fn footprint(target: &SoftMask, grid: &PatchGrid, k: usize) -> Vec<f64> {
    let p = grid.patch_size() as usize;
    let width = grid.width() as usize;
    let (row, col) = grid.position(k);
    let mut out = Vec::with_capacity(p * p);
    for i in 0..p {
        let start = (row * p + i) * width + col * p;
        out.extend_from_slice(&target.values()[start..start + p]);
    }
    out
}

/// Overlap and squared-mass contributions of one rendered patch.
fn local_sums(patch: &[f64], target: &[f64]) -> (f64, f64) {
    patch.iter().zip(target).fold((0.0, 0.0), |(o, s), (&a, &b)| (o + a * b, s + a * a))
}

fn dice_from_sums(overlap: f64, pred_sq: f64, target_sq: f64) -> f64 {
    1.0 - (2.0 * overlap + DICE_EPS) / (pred_sq + target_sq + DICE_EPS)
}

/// Per-cell state of the mask fit.
struct CellFit {
    index: usize,
    rect: PatchRect,
    target: Vec<f64>,
    segment: LineSegment,
    overlap: f64,
    pred_sq: f64,
    rate: f64,
    velocity: [f64; 4],
}

/// Fits the `I` segments of `grid` to `target` by descending the DICE loss.
///
/// Each iteration takes one projected gradient step per cell, moving the
/// cell's farthest-moving endpoint by that cell's step length (initially
/// `learning_rate` px). Steps are accepted cell by cell only if the global
/// loss does not rise; a rejected step is dropped and that cell's step
/// length halved, an accepted one grows it by a quarter up to
/// `MAX_RATE_GROWTH × learning_rate`. The loss trace is therefore
/// non-increasing.
pub fn fit_palis(grid: &PatchGrid, target: &SoftMask, cfg: &FitConfig) -> Result<(PatchGrid, FitReport), FitError> {
    cfg.validate()?;
    if grid.width() != target.width() || grid.height() != target.height() {
        return Err(FitError::DimensionMismatch {
            grid_w: grid.width(),
            grid_h: grid.height(),
            target_w: target.width(),
            target_h: target.height(),
        });
    }
    let params = cfg.raster;
    let mut current = grid.clone();
    let mut report = FitReport::default();
    let target_sq: f64 = target.values().iter().map(|v| v * v).sum();
    let mut cells: Vec<CellFit> = grid
        .i_cells()
        .into_par_iter()
        .map(|k| {
            let (row, col) = grid.position(k);
            let rect = grid.rect(row, col);
            let segment = *grid.cells()[k].segment().expect("I cell");
            let target = footprint(target, grid, k);
            let (overlap, pred_sq) = local_sums(&rasterize_patch(&segment, &rect, &params), &target);
            CellFit { index: k, rect, target, segment, overlap, pred_sq, rate: cfg.learning_rate, velocity: [0.0; 4] }
        })
        .collect();
    let totals = |cells: &[CellFit]| -> (f64, f64) {
        cells.iter().fold((0.0, 0.0), |(o, s), c| (o + c.overlap, s + c.pred_sq))
    };
    let (overlap, pred_sq) = totals(&cells);
    let mut loss = dice_from_sums(overlap, pred_sq, target_sq);
    if cells.is_empty() {
        report.final_loss = loss;
        return Ok((current, report));
    }
    let max_rate = MAX_RATE_GROWTH * cfg.learning_rate;

    for _ in 0..cfg.max_iters {
        report.losses.push(loss);
        let (mut overlap, mut pred_sq) = totals(&cells);
        let num = 2.0 * overlap + DICE_EPS;
        let den = pred_sq + target_sq + DICE_EPS;

        // Proposals depend only on the state at the start of the iteration.
        let proposals: Vec<Option<(LineSegment, [f64; 4], f64, f64)>> = cells
            .par_iter()
            .map(|c| {
                let patch = rasterize_patch(&c.segment, &c.rect, &params);
                let upstream: Vec<f64> = patch
                    .iter()
                    .zip(&c.target)
                    .map(|(&s, &t)| -(2.0 * t * den - num * 2.0 * s) / (den * den))
                    .collect();
                let g = backward(&c.segment, &c.rect, &params, &upstream).as_array();
                let reach = (g[0] * g[0] + g[1] * g[1]).sqrt().max((g[2] * g[2] + g[3] * g[3]).sqrt());
                if reach == 0.0 || !reach.is_finite() {
                    return None;
                }
                let mut velocity = [0.0; 4];
                let mut coords = c.segment.coords();
                for k in 0..4 {
                    let step = c.rate * g[k] / reach;
                    velocity[k] = match cfg.optimizer {
                        Optimizer::GradientDescent => step,
                        Optimizer::Momentum => MOMENTUM * c.velocity[k] + step,
                    };
                    coords[k] -= velocity[k];
                }
                let moved = LineSegment::from_coords(coords[0], coords[1], coords[2], coords[3]);
                let moved = LineSegment::new(c.rect.clamp(moved.a), c.rect.clamp(moved.b));
                let (o, s) = local_sums(&rasterize_patch(&moved, &c.rect, &params), &c.target);
                Some((moved, velocity, o, s))
            })
            .collect();

        let mut new_loss = loss;
        let mut accepted = 0usize;
        for (c, proposal) in cells.iter_mut().zip(proposals) {
            let Some((moved, velocity, o, s)) = proposal else {
                continue;
            };
            let trial_overlap = overlap - c.overlap + o;
            let trial_pred_sq = pred_sq - c.pred_sq + s;
            let trial = dice_from_sums(trial_overlap, trial_pred_sq, target_sq);
            if trial <= new_loss {
                new_loss = trial;
                overlap = trial_overlap;
                pred_sq = trial_pred_sq;
                c.segment = moved;
                c.overlap = o;
                c.pred_sq = s;
                c.velocity = velocity;
                c.rate = (c.rate * 1.25).min(max_rate);
                accepted += 1;
            } else {
                c.rate *= 0.5;
                c.velocity = [0.0; 4];
            }
        }
        // Recompute from the cell sums to keep rounding from accumulating.
        let (overlap, pred_sq) = totals(&cells);
        new_loss = dice_from_sums(overlap, pred_sq, target_sq);
        let delta = loss - new_loss;
        loss = new_loss;
        let stalled = cells.iter().all(|c| c.rate < MIN_RATE);
        // An iteration with every step rejected only shrank step lengths.
        if (accepted > 0 && delta.abs() < cfg.tol) || stalled {
            break;
        }
    }
    for c in &cells {
        current.set_segment_clamped(c.index, c.segment);
    }
    report.final_loss = loss;
    Ok((current, report))
}

/// Orders endpoints so the first has the smaller `x`, ties broken by smaller `y`.
pub fn canonicalize_segment(l: &LineSegment) -> LineSegment {
    if (l.b.x, l.b.y) < (l.a.x, l.a.y) {
        l.reversed()
    } else {
        *l
    }
}

/// Sum of absolute coordinate differences, optionally after canonicalizing both sides.
pub fn l1_vector_loss(pred: &LineSegment, label: &LineSegment, sorted: bool) -> f64 {
    let (p, l) = if sorted { (canonicalize_segment(pred), canonicalize_segment(label)) } else { (*pred, *label) };
    p.coords().iter().zip(l.coords()).map(|(a, b)| (a - b).abs()).sum()
}

/// Fits the `I` segments of `grid` to per-cell vector labels under the L1 loss.
///
/// Every coordinate steps toward its label coordinate by at most
/// `learning_rate`, landing on it exactly when closer than that. In
/// `Unsorted` mode each label's orientation is redrawn at every iteration.
pub fn fit_vector_supervised(
    grid: &PatchGrid,
    labels: &PatchGrid,
    mode: VectorMode,
    cfg: &FitConfig,
) -> Result<(PatchGrid, FitReport), FitError> {
    if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(FitError::InvalidConfig("learning_rate must be positive"));
    }
    if !grid.same_layout(labels) {
        let k = grid
            .cells()
            .iter()
            .zip(labels.cells())
            .position(|(a, b)| a.class() != b.class())
            .unwrap_or(0);
        let (row, col) = grid.position(k);
        return Err(FitError::LabelMismatch { row, col });
    }
    let cells = grid.i_cells();
    let sorted = mode == VectorMode::Sorted;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = grid.clone();
    let mut report = FitReport::default();
    let label_segs: Vec<LineSegment> = cells.iter().map(|&k| *labels.cells()[k].segment().expect("I cell")).collect();

    let total_loss = |g: &PatchGrid, labels: &[LineSegment]| -> f64 {
        cells
            .iter()
            .zip(labels)
            .map(|(&k, l)| l1_vector_loss(g.cells()[k].segment().expect("I cell"), l, sorted))
            .sum()
    };

    for _ in 0..cfg.max_iters {
        let drawn: Vec<LineSegment> = label_segs
            .iter()
            .map(|l| match mode {
                VectorMode::Sorted => canonicalize_segment(l),
                VectorMode::Unsorted => {
                    if rng.random::<bool>() {
                        l.reversed()
                    } else {
                        *l
                    }
                }
            })
            .collect();
        report.losses.push(total_loss(&current, &drawn));
        let coords: Vec<[f64; 4]> = cells
            .iter()
            .zip(&drawn)
            .map(|(&k, label)| {
                let seg = current.cells()[k].segment().expect("I cell");
                let pred = if sorted { canonicalize_segment(seg) } else { *seg };
                let mut out = pred.coords();
                for (c, target) in out.iter_mut().zip(label.coords()) {
                    // Subgradient of |c - target| is sign(c - target), 0 at the label.
                    let diff = target - *c;
                    *c += diff.signum() * diff.abs().min(cfg.learning_rate);
                }
                out
            })
            .collect();
        write_segments(&mut current, &cells, &coords);
    }
    let final_labels: Vec<LineSegment> =
        if sorted { label_segs.iter().map(canonicalize_segment).collect() } else { label_segs.clone() };
    report.final_loss = total_loss(&current, &final_labels);
    Ok((current, report))
}
