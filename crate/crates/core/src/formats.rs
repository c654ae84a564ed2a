//! File formats: graph and grid documents, float rasters, 8-bit masks, SVG.
//!
//! Graph and grid documents are JSON written in one canonical layout with
//! every coordinate printed to exactly six fractional digits, so
//! `serialize(parse(file)) == file` for any file this module wrote.
//!
//! Float rasters are `PLSF` files:
//!
//! ```text
//! offset  size  content
//! 0       4     b"PLSF"
//! 4       4     width,  u32 little-endian
//! 8       4     height, u32 little-endian
//! 12      4     reserved, must be 0
//! 16      4·w·h f32 little-endian values, row-major
//! ```
//!
//! 8-bit masks are binary PGM (`P5`, max value 255).

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::codec::{Cell, GraphError, GridError, PatchClass, PatchGrid, RoadGraph};
use crate::geometry::{LineSegment, Point};
use crate::raster::SoftMask;

pub const GRAPH_FORMAT_VERSION: u32 = 1;
pub const GRID_FORMAT_VERSION: u32 = 1;
pub const FLOAT_RASTER_MAGIC: &[u8; 4] = b"PLSF";
pub const FLOAT_RASTER_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed document at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{extra} unexpected bytes after the payload")]
    TrailingData { extra: usize },
    #[error("{location}: index {index} out of range ({len} available)")]
    IndexOutOfRange { location: String, index: usize, len: usize },
    #[error("{location}: {message}")]
    Invariant { location: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FormatError {
    fn from_json(e: serde_json::Error) -> Self {
        FormatError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

/// Six fractional digits, with negative zero printed as zero.
fn num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

/// Rounds `v` to the nearest value representable in a text document.
pub fn quantize(v: f64) -> f64 {
    num(v).parse().expect("formatted number parses")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphFile {
    pub width: u32,
    pub height: u32,
    pub graph: RoadGraph,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    version: u32,
    width: u32,
    height: u32,
    nodes: Vec<[f64; 2]>,
    edges: Vec<[usize; 2]>,
}

pub fn write_graph(file: &GraphFile) -> String {
    let g = &file.graph;
    let mut s = String::new();
    writeln!(s, "{{").unwrap();
    writeln!(s, "  \"version\": {GRAPH_FORMAT_VERSION},").unwrap();
    writeln!(s, "  \"width\": {},", file.width).unwrap();
    writeln!(s, "  \"height\": {},", file.height).unwrap();
    let nodes: Vec<String> = g.vertices().iter().map(|v| format!("[{}, {}]", num(v.x), num(v.y))).collect();
    write_list(&mut s, "nodes", &nodes, true);
    let edges: Vec<String> = g.edges().iter().map(|(i, j)| format!("[{i}, {j}]")).collect();
    write_list(&mut s, "edges", &edges, false);
    writeln!(s, "}}").unwrap();
    s
}

fn write_list(s: &mut String, key: &str, items: &[String], trailing_comma: bool) {
    let comma = if trailing_comma { "," } else { "" };
    if items.is_empty() {
        writeln!(s, "  \"{key}\": []{comma}").unwrap();
        return;
    }
    writeln!(s, "  \"{key}\": [").unwrap();
    for (k, item) in items.iter().enumerate() {
        let sep = if k + 1 < items.len() { "," } else { "" };
        writeln!(s, "    {item}{sep}").unwrap();
    }
    writeln!(s, "  ]{comma}").unwrap();
}

pub fn parse_graph(text: &str) -> Result<GraphFile, FormatError> {
    let raw: RawGraph = serde_json::from_str(text).map_err(FormatError::from_json)?;
    if raw.version != GRAPH_FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion { found: raw.version, expected: GRAPH_FORMAT_VERSION });
    }
    let vertices: Vec<Point> = raw.nodes.iter().map(|n| Point::new(n[0], n[1])).collect();
    let edges: Vec<(usize, usize)> = raw.edges.iter().map(|e| (e[0], e[1])).collect();
    let graph = RoadGraph::new(vertices, edges).map_err(|e| match e {
        GraphError::IndexOutOfRange { edge, index, count } => {
            FormatError::IndexOutOfRange { location: format!("edges[{edge}]"), index, len: count }
        }
        GraphError::SelfLoop { edge, .. } | GraphError::DuplicateEdge { edge, .. } => {
            FormatError::Invariant { location: format!("edges[{edge}]"), message: e.to_string() }
        }
        GraphError::NonFinite { vertex } => {
            FormatError::Invariant { location: format!("nodes[{vertex}]"), message: e.to_string() }
        }
    })?;
    Ok(GraphFile { width: raw.width, height: raw.height, graph })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCell {
    row: usize,
    col: usize,
    class: String,
    #[serde(default)]
    segment: Option<[f64; 4]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    version: u32,
    patch_size: u32,
    width: u32,
    height: u32,
    cells: Vec<RawCell>,
}

/// Foreground cells only, row-major.
pub fn write_grid(grid: &PatchGrid) -> String {
    let mut s = String::new();
    writeln!(s, "{{").unwrap();
    writeln!(s, "  \"version\": {GRID_FORMAT_VERSION},").unwrap();
    writeln!(s, "  \"patch_size\": {},", grid.patch_size()).unwrap();
    writeln!(s, "  \"width\": {},", grid.width()).unwrap();
    writeln!(s, "  \"height\": {},", grid.height()).unwrap();
    let cells: Vec<String> = grid
        .iter()
        .filter(|(_, _, c)| c.is_foreground())
        .map(|(row, col, c)| match c.segment() {
            Some(l) => format!(
                "{{\"row\": {row}, \"col\": {col}, \"class\": \"I\", \"segment\": [{}, {}, {}, {}]}}",
                num(l.a.x),
                num(l.a.y),
                num(l.b.x),
                num(l.b.y)
            ),
            None => format!("{{\"row\": {row}, \"col\": {col}, \"class\": \"{}\"}}", c.class()),
        })
        .collect();
    write_list(&mut s, "cells", &cells, false);
    writeln!(s, "}}").unwrap();
    s
}

pub fn parse_grid(text: &str) -> Result<PatchGrid, FormatError> {
    let raw: RawGrid = serde_json::from_str(text).map_err(FormatError::from_json)?;
    if raw.version != GRID_FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion { found: raw.version, expected: GRID_FORMAT_VERSION });
    }
    let mut grid = PatchGrid::new(raw.width, raw.height, raw.patch_size)
        .map_err(|e| FormatError::Invariant { location: "header".into(), message: e.to_string() })?;
    let mut seen = vec![false; grid.len()];
    for (k, c) in raw.cells.iter().enumerate() {
        let location = format!("cells[{k}] (row {}, col {})", c.row, c.col);
        if c.row >= grid.rows() {
            return Err(FormatError::IndexOutOfRange { location, index: c.row, len: grid.rows() });
        }
        if c.col >= grid.cols() {
            return Err(FormatError::IndexOutOfRange { location, index: c.col, len: grid.cols() });
        }
        let invariant = |message: String| FormatError::Invariant { location: location.clone(), message };
        let index = grid.index(c.row, c.col);
        if std::mem::replace(&mut seen[index], true) {
            return Err(invariant("cell listed twice".into()));
        }
        let class = match c.class.as_str() {
            "B" => PatchClass::Background,
            "I" => PatchClass::I,
            "X" => PatchClass::X,
            "T" => PatchClass::T,
            other => return Err(invariant(format!("unknown class {other:?}"))),
        };
        let cell = match (class, c.segment) {
            (PatchClass::I, Some(s)) => Cell::I(LineSegment::from_coords(s[0], s[1], s[2], s[3])),
            (PatchClass::I, None) => return Err(invariant("class I requires a segment".into())),
            (_, Some(_)) => return Err(invariant(format!("class {class} cannot carry a segment"))),
            (PatchClass::X, None) => Cell::X,
            (PatchClass::T, None) => Cell::T,
            (PatchClass::Background, None) => Cell::Background,
        };
        grid.set(c.row, c.col, cell).map_err(|e: GridError| invariant(e.to_string()))?;
    }
    Ok(grid)
}

/// Raw 32-bit float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatRaster {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl FloatRaster {
    pub fn from_mask(mask: &SoftMask) -> Self {
        Self { width: mask.width(), height: mask.height(), values: mask.values().iter().map(|&v| v as f32).collect() }
    }

    pub fn to_mask(&self) -> Result<SoftMask, FormatError> {
        SoftMask::from_values(self.width, self.height, self.values.iter().map(|&v| f64::from(v)).collect())
            .map_err(|e| FormatError::Invariant { location: "payload".into(), message: e.to_string() })
    }
}

pub fn write_float_raster(r: &FloatRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(FLOAT_RASTER_HEADER_LEN + 4 * r.values.len());
    out.extend_from_slice(FLOAT_RASTER_MAGIC);
    out.extend_from_slice(&r.width.to_le_bytes());
    out.extend_from_slice(&r.height.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in &r.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

pub fn parse_float_raster(bytes: &[u8]) -> Result<FloatRaster, FormatError> {
    if bytes.len() < 4 || &bytes[..4] != FLOAT_RASTER_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "PLSF",
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < FLOAT_RASTER_HEADER_LEN {
        return Err(FormatError::Truncated { expected: FLOAT_RASTER_HEADER_LEN, got: bytes.len() });
    }
    let width = le_u32(bytes, 4);
    let height = le_u32(bytes, 8);
    let reserved = le_u32(bytes, 12);
    if reserved != 0 {
        return Err(FormatError::BadHeader(format!("reserved field is {reserved}, expected 0")));
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(FLOAT_RASTER_HEADER_LEN))
        .ok_or_else(|| FormatError::BadHeader(format!("{width}x{height} raster is too large")))?;
    if bytes.len() < expected {
        return Err(FormatError::Truncated { expected, got: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingData { extra: bytes.len() - expected });
    }
    let values = bytes[FLOAT_RASTER_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect();
    Ok(FloatRaster { width, height, values })
}

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl ByteMask {
    pub fn from_mask(mask: &SoftMask) -> Self {
        Self { width: mask.width(), height: mask.height(), data: mask.to_bytes() }
    }

    /// Values scaled to `[0, 1]`.
    pub fn to_mask(&self) -> Result<SoftMask, FormatError> {
        SoftMask::from_values(self.width, self.height, self.data.iter().map(|&b| f64::from(b) / 255.0).collect())
            .map_err(|e| FormatError::Invariant { location: "payload".into(), message: e.to_string() })
    }
}

pub fn write_pgm(m: &ByteMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width, m.height).into_bytes();
    out.extend_from_slice(&m.data);
    out
}

pub fn parse_pgm(bytes: &[u8]) -> Result<ByteMask, FormatError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(FormatError::BadMagic {
            expected: "P5",
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments before each header number.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let name = ["width", "height", "max value"][k];
            return Err(FormatError::BadHeader(format!("missing {name} at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| FormatError::BadHeader(format!("number at byte {start} is too large")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(FormatError::BadHeader(format!("expected whitespace after the header at byte {pos}")));
    }
    pos += 1;
    let [width, height, max] = fields;
    if max != 255 {
        return Err(FormatError::BadHeader(format!("max value {max}, only 255 is supported")));
    }
    let (width, height) = match (u32::try_from(width), u32::try_from(height)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => return Err(FormatError::BadHeader(format!("{width}x{height} raster is too large"))),
    };
    let n = width as usize * height as usize;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(FormatError::Truncated { expected: pos + n, got: bytes.len() });
    }
    if payload.len() > n {
        return Err(FormatError::TrailingData { extra: payload.len() - n });
    }
    Ok(ByteMask { width, height, data: payload.to_vec() })
}

pub fn read_graph_file(path: &Path) -> Result<GraphFile, FormatError> {
    parse_graph(&fs::read_to_string(path)?)
}

pub fn read_grid_file(path: &Path) -> Result<PatchGrid, FormatError> {
    parse_grid(&fs::read_to_string(path)?)
}

/// Reads a target mask from a `PLSF` raster or a PGM file, by magic.
pub fn read_mask_file(path: &Path) -> Result<SoftMask, FormatError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P5") {
        parse_pgm(&bytes)?.to_mask()
    } else {
        parse_float_raster(&bytes)?.to_mask()
    }
}

fn class_tint(class: PatchClass) -> Option<&'static str> {
    match class {
        PatchClass::Background => None,
        PatchClass::I => Some("#4f8fd6"),
        PatchClass::X => Some("#d64f4f"),
        PatchClass::T => Some("#9b59d0"),
    }
}

/// Deterministic SVG overlay: optional soft-mask underlay and patch tinting,
/// edges as orange lines, junctions (degree ≥ 3) as red dots.
pub fn render_svg(
    g: &RoadGraph,
    width: u32,
    height: u32,
    grid: Option<&PatchGrid>,
    mask: Option<&SoftMask>,
) -> String {
    let f = |v: f64| format!("{v:.3}");
    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    )
    .unwrap();
    writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>").unwrap();
    if let Some(mask) = mask {
        writeln!(s, "<g id=\"mask\" fill=\"#000000\">").unwrap();
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let v = mask.get(x, y);
                if v > 0.0 {
                    writeln!(s, "<rect x=\"{x}\" y=\"{y}\" width=\"1\" height=\"1\" fill-opacity=\"{}\"/>", f(v))
                        .unwrap();
                }
            }
        }
        writeln!(s, "</g>").unwrap();
    }
    if let Some(grid) = grid {
        let p = grid.patch_size();
        writeln!(s, "<g id=\"patches\" fill-opacity=\"0.25\">").unwrap();
        for (row, col, cell) in grid.iter() {
            if let Some(color) = class_tint(cell.class()) {
                writeln!(
                    s,
                    "<rect x=\"{}\" y=\"{}\" width=\"{p}\" height=\"{p}\" fill=\"{color}\"/>",
                    col as u32 * p,
                    row as u32 * p
                )
                .unwrap();
            }
        }
        writeln!(s, "</g>").unwrap();
    }
    if g.edge_count() > 0 {
        writeln!(s, "<g id=\"edges\" stroke=\"#ff8c00\" stroke-width=\"1.5\" stroke-linecap=\"round\">").unwrap();
        for e in 0..g.edge_count() {
            let l = g.edge_segment(e);
            writeln!(s, "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>", f(l.a.x), f(l.a.y), f(l.b.x), f(l.b.y))
                .unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }
    let junctions: Vec<Point> =
        g.degrees().iter().zip(g.vertices()).filter(|(&d, _)| d >= 3).map(|(_, &v)| v).collect();
    if !junctions.is_empty() {
        writeln!(s, "<g id=\"junctions\" fill=\"#e00000\">").unwrap();
        for v in junctions {
            writeln!(s, "<circle cx=\"{}\" cy=\"{}\" r=\"2\"/>", f(v.x), f(v.y)).unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }
    writeln!(s, "</svg>").unwrap();
    s
}
