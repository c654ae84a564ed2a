//! Soft rasterization of patched segments and the DICE loss.
//!
//! Each `I` patch renders its own segment into its own `p × p` footprint:
//!
//! ```text
//! C(q) = exp(-d(l, q)^2 * t / tau_inv)
//! ```
//!
//! where `d` is the distance from the pixel center `q` to the closed segment
//! `l`, and `t` is `t_in` when the foot of the perpendicular lands on the
//! segment and `t_out` otherwise. Inside the projection band `d` is the
//! distance to the supporting line; past an endpoint it is the distance to
//! that endpoint. `tau_inv` sets the lateral width of the footprint and
//! `t_out` how sharply it ends past the endpoints.
//!
//! Gradients are exact chain-rule partials of `d^2` with the regime of each
//! pixel (inside, past `a`, past `b`) held at its forward-pass value.

use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{Cell, PatchGrid};
use crate::geometry::{perpendicular_line_distance, projection_param, LineSegment, PatchRect, Point};

/// Smoothing constant of the DICE quotient.
pub const DICE_EPS: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("mask dimensions must be positive, got {width}x{height}")]
    EmptyMask { width: u32, height: u32 },
    #[error("mask has {got} values, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("mask value {value} at index {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch { left_w: u32, left_h: u32, right_w: u32, right_h: u32 },
    #[error("invalid raster parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterParams {
    /// Sharpness divisor; larger values widen the footprint.
    pub tau_inv: f64,
    /// Projection factor for pixels whose foot falls outside the segment.
    pub t_out: f64,
    /// Projection factor for pixels whose foot falls on the segment.
    pub t_in: f64,
}

impl Default for RasterParams {
    fn default() -> Self {
        Self { tau_inv: 8.0, t_out: 10.0, t_in: 1.0 }
    }
}

impl RasterParams {
    pub fn new(tau_inv: f64, t_out: f64, t_in: f64) -> Result<Self, RasterError> {
        let params = Self { tau_inv, t_out, t_in };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        if !(self.tau_inv > 0.0 && self.tau_inv.is_finite()) {
            return Err(RasterError::InvalidParams("tau_inv must be positive"));
        }
        if !(self.t_in >= 0.0 && self.t_out >= self.t_in && self.t_out.is_finite()) {
            return Err(RasterError::InvalidParams("projection factors need t_out >= t_in >= 0"));
        }
        Ok(())
    }
}

/// Row-major `width × height` field of values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl SoftMask {
    pub fn zeros(width: u32, height: u32) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyMask { width, height });
        }
        Ok(Self { width, height, values: vec![0.0; width as usize * height as usize] })
    }

    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyMask { width, height });
        }
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(RasterError::LengthMismatch { expected, got: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(RasterError::ValueOutOfRange { index, value });
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// 8-bit preview, `round(255 * value)` per pixel.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|v| (255.0 * v).round() as u8).collect()
    }

    fn check_same_dims(&self, other: &SoftMask) -> Result<(), RasterError> {
        if self.width != other.width || self.height != other.height {
            return Err(RasterError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }
}

/// Partial derivatives of a scalar loss with respect to one segment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EndpointGradient {
    pub d_ax: f64,
    pub d_ay: f64,
    pub d_bx: f64,
    pub d_by: f64,
}

impl EndpointGradient {
    pub fn as_array(&self) -> [f64; 4] {
        [self.d_ax, self.d_ay, self.d_bx, self.d_by]
    }

    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Where the perpendicular foot of a pixel lands relative to the segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Regime {
    Inside,
    BeforeA,
    AfterB,
    Degenerate,
}

fn regime(l: &LineSegment, q: Point) -> Regime {
    match projection_param(q, l) {
        Ok(s) if s < 0.0 => Regime::BeforeA,
        Ok(s) if s > 1.0 => Regime::AfterB,
        Ok(_) => Regime::Inside,
        Err(_) => Regime::Degenerate,
    }
}

/// Value of a single pixel together with its projection regime.
fn pixel_value(l: &LineSegment, q: Point, params: &RasterParams) -> (f64, Regime) {
    let regime = regime(l, q);
    let (t, d_sq) = match regime {
        Regime::Inside => {
            let d = perpendicular_line_distance(q, l);
            (params.t_in, d * d)
        }
        Regime::BeforeA => (params.t_out, (q - l.a).norm_sq()),
        Regime::AfterB => (params.t_out, (q - l.b).norm_sq()),
        Regime::Degenerate => (params.t_in, (q - l.a.midpoint(l.b)).norm_sq()),
    };
    ((-d_sq * t / params.tau_inv).exp(), regime)
}

/// Renders one segment into the `p × p` footprint of `rect`, row-major.
pub fn rasterize_patch(l: &LineSegment, rect: &PatchRect, params: &RasterParams) -> Vec<f64> {
    let p = rect.size as usize;
    let mut out = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            out.push(pixel_value(l, rect.pixel_center(i, j), params).0);
        }
    }
    out
}

/// Tiles the footprints of all `I` cells; other cells stay zero.
pub fn compose_soft_mask(grid: &PatchGrid, params: &RasterParams) -> SoftMask {
    let p = grid.patch_size() as usize;
    let width = grid.width() as usize;
    let patches: Vec<(usize, Vec<f64>)> = grid
        .i_cells()
        .into_par_iter()
        .map(|k| {
            let (row, col) = grid.position(k);
            let seg = grid.cells()[k].segment().expect("I cell has a segment");
            (k, rasterize_patch(seg, &grid.rect(row, col), params))
        })
        .collect();
    let mut values = vec![0.0; width * grid.height() as usize];
    for (k, patch) in patches {
        let (row, col) = grid.position(k);
        for i in 0..p {
            let start = (row * p + i) * width + col * p;
            values[start..start + p].copy_from_slice(&patch[i * p..(i + 1) * p]);
        }
    }
    SoftMask { width: grid.width(), height: grid.height(), values }
}

/// As [`compose_soft_mask`], checking the grid covers a `width × height` image.
pub fn compose_soft_mask_checked(
    grid: &PatchGrid,
    width: u32,
    height: u32,
    params: &RasterParams,
) -> Result<SoftMask, RasterError> {
    if grid.width() != width || grid.height() != height {
        return Err(RasterError::DimensionMismatch {
            left_w: grid.width(),
            left_h: grid.height(),
            right_w: width,
            right_h: height,
        });
    }
    if width == 0 || height == 0 {
        return Err(RasterError::EmptyMask { width, height });
    }
    Ok(compose_soft_mask(grid, params))
}

struct DiceSums {
    overlap: f64,
    pred_sq: f64,
    target_sq: f64,
}

fn dice_sums(s: &SoftMask, target: &SoftMask) -> Result<DiceSums, RasterError> {
    s.check_same_dims(target)?;
    let (overlap, pred_sq, target_sq) = s
        .values
        .iter()
        .zip(&target.values)
        .fold((0.0, 0.0, 0.0), |(o, ps, ts), (&a, &b)| (o + a * b, ps + a * a, ts + b * b));
    Ok(DiceSums { overlap, pred_sq, target_sq })
}

/// `1 - (2·Σ s·t + ε) / (Σ s² + Σ t² + ε)` with `ε = 1`.
pub fn dice_loss(s: &SoftMask, target: &SoftMask) -> Result<f64, RasterError> {
    let sums = dice_sums(s, target)?;
    let num = 2.0 * sums.overlap + DICE_EPS;
    let den = sums.pred_sq + sums.target_sq + DICE_EPS;
    Ok(1.0 - num / den)
}

/// Per-pixel `∂loss/∂s` of [`dice_loss`].
pub fn dice_backward(s: &SoftMask, target: &SoftMask) -> Result<Vec<f64>, RasterError> {
    let sums = dice_sums(s, target)?;
    let num = 2.0 * sums.overlap + DICE_EPS;
    let den = sums.pred_sq + sums.target_sq + DICE_EPS;
    let den_sq = den * den;
    Ok(s
        .values
        .iter()
        .zip(&target.values)
        .map(|(&a, &b)| -(2.0 * b * den - num * 2.0 * a) / den_sq)
        .collect())
}

/// Gradient of `Σ upstream · C` over the footprint of `rect` with respect to
/// the endpoints of `l`. `upstream` is patch-local, row-major, `p × p`.
pub fn backward(l: &LineSegment, rect: &PatchRect, params: &RasterParams, upstream: &[f64]) -> EndpointGradient {
    let p = rect.size as usize;
    assert_eq!(upstream.len(), p * p, "upstream must cover the patch");
    let mut grad = EndpointGradient::default();
    let u = l.direction();
    let n = u.norm_sq();
    for i in 0..p {
        for j in 0..p {
            let g = upstream[i * p + j];
            if g == 0.0 {
                continue;
            }
            let q = rect.pixel_center(i, j);
            let (value, regime) = pixel_value(l, q, params);
            let t = if matches!(regime, Regime::BeforeA | Regime::AfterB) { params.t_out } else { params.t_in };
            // dC/d(d²)
            let scale = g * value * (-t / params.tau_inv);
            match regime {
                Regime::Degenerate => {
                    // d² = |q - m|², m the midpoint; each endpoint carries half.
                    let m = l.a.midpoint(l.b);
                    let gx = -(q.x - m.x) * scale;
                    let gy = -(q.y - m.y) * scale;
                    grad.d_ax += gx;
                    grad.d_ay += gy;
                    grad.d_bx += gx;
                    grad.d_by += gy;
                    continue;
                }
                Regime::BeforeA => {
                    grad.d_ax += -2.0 * (q.x - l.a.x) * scale;
                    grad.d_ay += -2.0 * (q.y - l.a.y) * scale;
                    continue;
                }
                Regime::AfterB => {
                    grad.d_bx += -2.0 * (q.x - l.b.x) * scale;
                    grad.d_by += -2.0 * (q.y - l.b.y) * scale;
                    continue;
                }
                Regime::Inside => {}
            }
            // d² = c² / n with c = u × (q - a), n = |u|².
            let w = q - l.a;
            let c = u.cross(w);
            let dc = [u.y - w.y, w.x - u.x, w.y, -w.x];
            let dn = [-2.0 * u.x, -2.0 * u.y, 2.0 * u.x, 2.0 * u.y];
            let mut partial = [0.0; 4];
            for k in 0..4 {
                partial[k] = (2.0 * c * dc[k] * n - c * c * dn[k]) / (n * n) * scale;
            }
            grad.d_ax += partial[0];
            grad.d_ay += partial[1];
            grad.d_bx += partial[2];
            grad.d_by += partial[3];
        }
    }
    grad
}

/// Endpoint gradients of every cell (zero for non-`I` cells) given the
/// full-image upstream gradient.
pub fn backward_grid(grid: &PatchGrid, params: &RasterParams, upstream: &[f64]) -> Vec<EndpointGradient> {
    let p = grid.patch_size() as usize;
    let width = grid.width() as usize;
    assert_eq!(upstream.len(), width * grid.height() as usize, "upstream must cover the image");
    (0..grid.len())
        .into_par_iter()
        .map(|k| match &grid.cells()[k] {
            Cell::I(seg) => {
                let (row, col) = grid.position(k);
                let mut local = Vec::with_capacity(p * p);
                for i in 0..p {
                    let start = (row * p + i) * width + col * p;
                    local.extend_from_slice(&upstream[start..start + p]);
                }
                backward(seg, &grid.rect(row, col), params, &local)
            }
            _ => EndpointGradient::default(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(ax: f64, ay: f64, bx: f64, by: f64) -> LineSegment {
        LineSegment::from_coords(ax, ay, bx, by)
    }

    /// Direct scalar evaluation of the falloff, independent of `pixel_value`.
    fn falloff(d: f64, t: f64, tau_inv: f64) -> f64 {
        (-(d * d) * t / tau_inv).exp()
    }

    #[test]
    fn spot_values() {
        let params = RasterParams::default();
        let rect = PatchRect::new(0, 0, 8);
        // Horizontal segment through the centers of row 4.
        let l = seg(0.5, 4.5, 6.5, 4.5);
        let out = rasterize_patch(&l, &rect, &params);
        assert_eq!(out[4 * 8 + 3], 1.0);
        // Row 2 lies 2 px above, foot on the segment.
        assert_abs_diff_eq!(out[2 * 8 + 3], falloff(2.0, 1.0, 8.0), epsilon = 1e-12);
        assert_abs_diff_eq!(out[2 * 8 + 3], 0.606_530_659_712_633, epsilon = 1e-9);
        // Pixel (4, 6) sits 2 px past b on the supporting line.
        let short = seg(0.5, 4.5, 4.5, 4.5);
        let q = rect.pixel_center(4, 6);
        assert!(projection_param(q, &short).unwrap() > 1.0);
        assert_abs_diff_eq!(rasterize_patch(&short, &rect, &params)[4 * 8 + 6], falloff(2.0, 10.0, 8.0), epsilon = 1e-12);
        assert_abs_diff_eq!(falloff(2.0, 10.0, 8.0), 0.006_737_946_999_085, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_segment_uses_point_distance_with_t_in() {
        let params = RasterParams::default();
        let rect = PatchRect::new(0, 0, 8);
        let l = seg(3.5, 3.5, 3.5, 3.5);
        let out = rasterize_patch(&l, &rect, &params);
        assert_eq!(out[3 * 8 + 3], 1.0);
        assert_abs_diff_eq!(out[3 * 8 + 5], falloff(2.0, 1.0, 8.0), epsilon = 1e-12);
    }

    #[test]
    fn width_and_length_semantics() {
        let rect = PatchRect::new(0, 0, 16);
        let l = seg(4.5, 8.5, 10.5, 8.5);
        let half_width = |tau: f64| {
            let params = RasterParams { tau_inv: tau, ..Default::default() };
            let out = rasterize_patch(&l, &rect, &params);
            (0..16).filter(|&i| out[i * 16 + 7] >= 0.5).count()
        };
        assert!(half_width(1.0) <= half_width(4.0));
        assert!(half_width(4.0) < half_width(16.0));

        // 3 px past b along the line vs 3 px beside the midpoint.
        let along = rect.pixel_center(8, 13);
        let beside = rect.pixel_center(5, 7);
        let no_proj = RasterParams { t_out: 1.0, ..Default::default() };
        assert_abs_diff_eq!(pixel_value(&l, beside, &no_proj).0, falloff(3.0, 1.0, 8.0), epsilon = 1e-12);
        assert_abs_diff_eq!(pixel_value(&l, along, &no_proj).0, pixel_value(&l, beside, &no_proj).0, epsilon = 1e-15);
        let with_proj = RasterParams::default();
        assert!(pixel_value(&l, along, &with_proj).0 < pixel_value(&l, beside, &with_proj).0);
        assert_abs_diff_eq!(pixel_value(&l, along, &with_proj).0, falloff(3.0, 10.0, 8.0), epsilon = 1e-15);
    }

    fn grid_with(cells: &[(usize, usize, LineSegment)]) -> PatchGrid {
        let mut grid = PatchGrid::new(32, 32, 8).unwrap();
        for &(r, c, s) in cells {
            grid.set(r, c, Cell::I(s)).unwrap();
        }
        grid
    }

    #[test]
    fn compose_empty_and_single() {
        let params = RasterParams::default();
        let empty = PatchGrid::new(32, 32, 8).unwrap();
        assert!(compose_soft_mask(&empty, &params).values().iter().all(|&v| v == 0.0));

        let grid = grid_with(&[(1, 2, seg(16.0, 12.0, 24.0, 12.0))]);
        let mask = compose_soft_mask(&grid, &params);
        for y in 0..32 {
            for x in 0..32 {
                let inside = (16..24).contains(&x) && (8..16).contains(&y);
                assert_eq!(mask.get(x, y) > 0.0, inside, "({x}, {y})");
            }
        }
    }

    #[test]
    fn compose_matches_per_pixel_oracle() {
        let params = RasterParams::default();
        let segs = [(1, 1, seg(8.0, 12.0, 16.0, 12.0)), (1, 2, seg(16.0, 12.0, 24.0, 12.0))];
        let mask = compose_soft_mask(&grid_with(&segs), &params);
        for y in 0..32u32 {
            for x in 0..32u32 {
                let q = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                let expected = segs
                    .iter()
                    .find(|(r, c, _)| (x as usize) / 8 == *c && (y as usize) / 8 == *r)
                    .map(|(_, _, l)| {
                        let d = (q.y - l.a.y).abs();
                        let s = (q.x - l.a.x) / (l.b.x - l.a.x);
                        falloff(d, if (0.0..=1.0).contains(&s) { 1.0 } else { 10.0 }, 8.0)
                    })
                    .unwrap_or(0.0);
                assert_abs_diff_eq!(mask.get(x, y), expected, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn compose_is_local() {
        let params = RasterParams::default();
        let a = compose_soft_mask(&grid_with(&[(1, 1, seg(8.0, 12.0, 16.0, 12.0)), (1, 2, seg(16.0, 12.0, 24.0, 12.0))]), &params);
        let b = compose_soft_mask(&grid_with(&[(1, 1, seg(8.0, 10.0, 16.0, 14.0)), (1, 2, seg(16.0, 12.0, 24.0, 12.0))]), &params);
        for y in 0..32 {
            for x in 0..32 {
                if !((8..16).contains(&x) && (8..16).contains(&y)) {
                    assert_eq!(a.get(x, y), b.get(x, y));
                }
            }
        }
    }

    fn mask(values: Vec<f64>, w: u32) -> SoftMask {
        let h = values.len() as u32 / w;
        SoftMask::from_values(w, h, values).unwrap()
    }

    #[test]
    fn dice_cases() {
        let ones = mask(vec![1.0; 100], 10);
        assert_eq!(dice_loss(&ones, &ones).unwrap(), 0.0);

        let mut a = vec![0.0; 4];
        let mut b = vec![0.0; 4];
        a[0] = 1.0;
        b[3] = 1.0;
        // Oracle: direct summation.
        let inter: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let sq: f64 = a.iter().chain(&b).map(|x| x * x).sum();
        let expected = 1.0 - (2.0 * inter + 1.0) / (sq + 1.0);
        assert_abs_diff_eq!(expected, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dice_loss(&mask(a, 2), &mask(b, 2)).unwrap(), expected, epsilon = 1e-15);

        let mut big_a = vec![0.0; 2000];
        let mut big_b = vec![0.0; 2000];
        big_a[..1000].fill(1.0);
        big_b[1000..].fill(1.0);
        assert!(dice_loss(&mask(big_a, 40), &mask(big_b, 40)).unwrap() > 0.999);

        let zero = SoftMask::zeros(3, 3).unwrap();
        assert_eq!(dice_loss(&zero, &zero).unwrap(), 0.0);
        assert!(matches!(
            dice_loss(&zero, &SoftMask::zeros(3, 4).unwrap()),
            Err(RasterError::DimensionMismatch { .. })
        ));
        assert!(dice_backward(&zero, &SoftMask::zeros(4, 3).unwrap()).is_err());
    }

    fn fd_dice(s: &SoftMask, target: &SoftMask, k: usize, h: f64) -> f64 {
        let mut plus = s.values.clone();
        let mut minus = s.values.clone();
        plus[k] += h;
        minus[k] -= h;
        let loss = |v: Vec<f64>| {
            let m = SoftMask { width: s.width, height: s.height, values: v };
            dice_loss(&m, target).unwrap()
        };
        (loss(plus) - loss(minus)) / (2.0 * h)
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let ones = mask(vec![1.0; 16], 4);
        let g = dice_backward(&ones, &ones).unwrap();
        for (k, &gk) in g.iter().enumerate() {
            assert_abs_diff_eq!(gk, g[0], epsilon = 1e-15);
            assert_abs_diff_eq!(gk, fd_dice(&ones, &ones, k, 1e-6), epsilon = 1e-8);
        }

        let zero = SoftMask::zeros(4, 4).unwrap();
        let g = dice_backward(&zero, &zero).unwrap();
        for (k, &gk) in g.iter().enumerate() {
            assert!(gk.is_finite());
            assert_abs_diff_eq!(gk, fd_dice(&zero, &zero, k, 1e-6), epsilon = 1e-8);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = mask((0..64).map(|_| rng.random::<f64>()).collect(), 8);
        let t = mask((0..64).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect(), 8);
        let g = dice_backward(&s, &t).unwrap();
        for (k, &gk) in g.iter().enumerate() {
            assert_abs_diff_eq!(gk, fd_dice(&s, &t, k, 1e-6), epsilon = 1e-8);
        }
    }

    #[test]
    fn dice_gradient_negative_on_missed_overlap() {
        let target = mask(vec![1.0, 1.0, 0.0, 0.0], 2);
        let s = mask(vec![0.5, 0.9, 0.0, 0.0], 2);
        let g = dice_backward(&s, &target).unwrap();
        assert!(g[0] < 0.0 && g[1] < 0.0);
    }

    fn loss_for(l: &LineSegment, rect: &PatchRect, params: &RasterParams, upstream: &[f64]) -> f64 {
        rasterize_patch(l, rect, params).iter().zip(upstream).map(|(c, g)| c * g).sum()
    }

    fn near_switch(l: &LineSegment, q: Point) -> bool {
        let s = projection_param(q, l).unwrap();
        let len = l.length();
        (s * len).abs() < 1e-3 || ((s - 1.0) * len).abs() < 1e-3
    }

    #[test]
    fn backward_matches_finite_differences() {
        let params = RasterParams::default();
        let rect = PatchRect::new(2, 3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pt = |rng: &mut ChaCha8Rng| rect.origin() + Point::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0));
            let l = loop {
                let cand = LineSegment::new(pt(&mut rng), pt(&mut rng));
                if cand.length() >= 2.0 {
                    break cand;
                }
            };
            let upstream: Vec<f64> = (0..64)
                .map(|k| {
                    let q = rect.pixel_center(k / 8, k % 8);
                    if near_switch(&l, q) { 0.0 } else { rng.random_range(-1.0..1.0) }
                })
                .collect();
            let grad = backward(&l, &rect, &params, &upstream).as_array();
            let h = 1e-4;
            for k in 0..4 {
                let mut plus = l.coords();
                let mut minus = l.coords();
                plus[k] += h;
                minus[k] -= h;
                let f = |c: [f64; 4]| loss_for(&seg(c[0], c[1], c[2], c[3]), &rect, &params, &upstream);
                let fd = (f(plus) - f(minus)) / (2.0 * h);
                let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-4, "partial {k}: analytic {} vs fd {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn backward_zero_upstream_and_mirror() {
        let params = RasterParams::default();
        let rect = PatchRect::new(0, 0, 8);
        let l = seg(1.2, 2.0, 6.1, 5.3);
        assert_eq!(backward(&l, &rect, &params, &[0.0; 64]), EndpointGradient::default());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let upstream: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mirrored_up: Vec<f64> = (0..64).map(|k| upstream[(k / 8) * 8 + 7 - k % 8]).collect();
        let m = seg(8.0 - 1.2, 2.0, 8.0 - 6.1, 5.3);
        let g = backward(&l, &rect, &params, &upstream);
        let gm = backward(&m, &rect, &params, &mirrored_up);
        assert_abs_diff_eq!(gm.d_ax, -g.d_ax, epsilon = 1e-12);
        assert_abs_diff_eq!(gm.d_ay, g.d_ay, epsilon = 1e-12);
        assert_abs_diff_eq!(gm.d_bx, -g.d_bx, epsilon = 1e-12);
        assert_abs_diff_eq!(gm.d_by, g.d_by, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_backward_matches_finite_differences() {
        let params = RasterParams::default();
        let rect = PatchRect::new(0, 0, 8);
        let l = seg(3.3, 4.1, 3.3, 4.1);
        let upstream: Vec<f64> = (0..64).map(|k| ((k * 7) % 5) as f64 - 2.0).collect();
        let g = backward(&l, &rect, &params, &upstream);
        // Moving both endpoints together keeps the segment degenerate.
        let h = 1e-5;
        let f = |dx: f64, dy: f64| loss_for(&seg(3.3 + dx, 4.1 + dy, 3.3 + dx, 4.1 + dy), &rect, &params, &upstream);
        let fd_x = (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h);
        let fd_y = (f(0.0, h) - f(0.0, -h)) / (2.0 * h);
        assert_abs_diff_eq!(g.d_ax + g.d_bx, fd_x, epsilon = 1e-6);
        assert_abs_diff_eq!(g.d_ay + g.d_by, fd_y, epsilon = 1e-6);
    }

    #[test]
    fn values_in_unit_interval_and_monotone() {
        let params = RasterParams::default();
        let rect = PatchRect::new(0, 0, 8);
        let l = seg(1.0, 1.0, 7.0, 6.0);
        let out = rasterize_patch(&l, &rect, &params);
        assert!(out.iter().all(|&v| v > 0.0 && v <= 1.0));
        let mut prev = 2.0;
        for k in 0..20 {
            let v = falloff(k as f64 * 0.5, 1.0, params.tau_inv);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn params_validation() {
        assert!(RasterParams::new(0.0, 10.0, 1.0).is_err());
        assert!(RasterParams::new(8.0, 0.5, 1.0).is_err());
        assert!(RasterParams::new(8.0, 10.0, 1.0).is_ok());
        assert!(SoftMask::from_values(1, 1, vec![1.5]).is_err());
        assert!(SoftMask::from_values(2, 1, vec![0.5]).is_err());
    }
}
