//! Flat-buffer views of grids and graphs for foreign callers.
//!
//! A [`FlatGrid`] holds one class code per cell (`0` background, `1` I,
//! `2` X, `3` T) and four coordinates per cell, row-major. Coordinates of
//! non-`I` cells are ignored on the way in and written as zeros on the way
//! out.

use thiserror::Error;

use crate::codec::{Cell, GraphError, GridError, PatchClass, PatchGrid, RoadGraph};
use crate::geometry::{LineSegment, Point};
use crate::raster::{backward_grid, compose_soft_mask_checked, RasterError, RasterParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlatError {
    #[error("{what} buffer holds {got} values, expected {expected}")]
    SizeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("cell {index}: class code {code} is not one of 0, 1, 2, 3")]
    BadClassCode { index: usize, code: u8 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatGrid {
    pub patch_size: u32,
    pub rows: usize,
    pub cols: usize,
    pub classes: Vec<u8>,
    pub segments: Vec<f64>,
}

impl FlatGrid {
    pub fn from_grid(grid: &PatchGrid) -> Self {
        let mut classes = Vec::with_capacity(grid.len());
        let mut segments = Vec::with_capacity(4 * grid.len());
        for cell in grid.cells() {
            classes.push(cell.class().code());
            segments.extend(cell.segment().map_or([0.0; 4], |s| s.coords()));
        }
        Self { patch_size: grid.patch_size(), rows: grid.rows(), cols: grid.cols(), classes, segments }
    }

    pub fn to_grid(&self) -> Result<PatchGrid, FlatError> {
        let n = self.rows * self.cols;
        if self.classes.len() != n {
            return Err(FlatError::SizeMismatch { what: "class", expected: n, got: self.classes.len() });
        }
        if self.segments.len() != 4 * n {
            return Err(FlatError::SizeMismatch { what: "segment", expected: 4 * n, got: self.segments.len() });
        }
        let p = self.patch_size;
        let mut grid = PatchGrid::new(self.cols as u32 * p, self.rows as u32 * p, p)?;
        for (index, &code) in self.classes.iter().enumerate() {
            let class = PatchClass::from_code(code).ok_or(FlatError::BadClassCode { index, code })?;
            let s = &self.segments[4 * index..4 * index + 4];
            let cell = match class {
                PatchClass::Background => continue,
                PatchClass::I => Cell::I(LineSegment::from_coords(s[0], s[1], s[2], s[3])),
                PatchClass::X => Cell::X,
                PatchClass::T => Cell::T,
            };
            grid.set(index / self.cols, index % self.cols, cell)?;
        }
        Ok(grid)
    }
}

/// Vertex coordinates (`x, y` pairs) and edge endpoint indices (`i, j` pairs).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatGraph {
    pub nodes: Vec<f64>,
    pub edges: Vec<u64>,
}

impl FlatGraph {
    pub fn from_graph(g: &RoadGraph) -> Self {
        Self {
            nodes: g.vertices().iter().flat_map(|v| [v.x, v.y]).collect(),
            edges: g.edges().iter().flat_map(|&(i, j)| [i as u64, j as u64]).collect(),
        }
    }

    pub fn to_graph(&self) -> Result<RoadGraph, FlatError> {
        if self.nodes.len() % 2 != 0 {
            return Err(FlatError::SizeMismatch {
                what: "node",
                expected: self.nodes.len() + 1,
                got: self.nodes.len(),
            });
        }
        if self.edges.len() % 2 != 0 {
            return Err(FlatError::SizeMismatch {
                what: "edge",
                expected: self.edges.len() + 1,
                got: self.edges.len(),
            });
        }
        let vertices = self.nodes.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        // Indices beyond usize saturate and are caught as out of range.
        let edges = self
            .edges
            .chunks_exact(2)
            .map(|c| (usize::try_from(c[0]).unwrap_or(usize::MAX), usize::try_from(c[1]).unwrap_or(usize::MAX)))
            .collect();
        Ok(RoadGraph::new(vertices, edges)?)
    }
}

/// Soft mask of a flat grid over a `width × height` image, row-major.
pub fn rasterize_flat(flat: &FlatGrid, width: u32, height: u32, params: &RasterParams) -> Result<Vec<f64>, FlatError> {
    let grid = flat.to_grid()?;
    Ok(compose_soft_mask_checked(&grid, width, height, params)?.values().to_vec())
}

/// Endpoint gradients, four per cell (zeros for non-`I` cells).
pub fn backward_flat(
    flat: &FlatGrid,
    width: u32,
    height: u32,
    params: &RasterParams,
    upstream: &[f64],
) -> Result<Vec<f64>, FlatError> {
    let grid = flat.to_grid()?;
    if grid.width() != width || grid.height() != height {
        return Err(FlatError::Raster(RasterError::DimensionMismatch {
            left_w: grid.width(),
            left_h: grid.height(),
            right_w: width,
            right_h: height,
        }));
    }
    let expected = width as usize * height as usize;
    if upstream.len() != expected {
        return Err(FlatError::SizeMismatch { what: "upstream", expected, got: upstream.len() });
    }
    params.validate()?;
    Ok(backward_grid(&grid, params, upstream).iter().flat_map(|g| g.as_array()).collect())
}
