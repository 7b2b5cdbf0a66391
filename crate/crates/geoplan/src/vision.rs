//! The select-process pipeline: candidate masks are proposed, one is selected
//! for a component description, post-processed according to the component's
//! geometry token, and back-projected through depth into a part point cloud.
//!
//! File formats: masks are binary PGM (P5, max 255, non-zero = true); depth
//! images are PFM (`Pf`, little-endian float32, rows bottom-to-top) holding
//! millimeters, with values ≤ 0 marking invalid pixels.

use crate::dsl::GeometricComponentRef;
use crate::geometry::{GeometryError, PointCloud, Vec3};
use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("mask provider returned no candidates")]
    NoCandidates,
    #[error("processed mask is empty")]
    EmptyProcessedMask,
    #[error("only {points} valid depth points; need at least 3")]
    InsufficientDepth { points: usize },
    #[error("no mask processing rule for geometry `{0}`")]
    UnknownGeometry(String),
    #[error("selector chose index {index} of {count} candidates")]
    SelectorOutOfRange { index: usize, count: usize },
    #[error("selector fixture exhausted")]
    SelectorExhausted,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad raster file: {0}")]
    Format(String),
}

/// H×W boolean raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "mask dimensions must be at least 1x1");
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|v| *v)
    }
}

/// H×W depths in meters; NaN or non-positive entries are invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![f64::NAN; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let d = self.data[row * self.width + col];
        (d.is_finite() && d > 0.0).then_some(d)
    }

    pub fn set(&mut self, row: usize, col: usize, meters: f64) {
        self.data[row * self.width + col] = meters;
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Opaque tag identifying the image a provider/selector is working on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageHandle(pub String);

/// Source of class-agnostic candidate masks.
pub trait MaskProvider {
    fn propose(&mut self, image: &ImageHandle) -> Result<Vec<Mask>, VisionError>;
}

/// Chooses the candidate that best matches a component description.
pub trait MaskSelector {
    fn select(&mut self, image: &ImageHandle, candidates: &[Mask], description: &str) -> Result<usize, VisionError>;
}

/// Serves a fixed candidate list; the simulator's ground-truth path.
pub struct StaticMaskProvider {
    pub masks: Vec<Mask>,
}

impl MaskProvider for StaticMaskProvider {
    fn propose(&mut self, _image: &ImageHandle) -> Result<Vec<Mask>, VisionError> {
        Ok(self.masks.clone())
    }
}

/// Replays an ordered list of chosen indices, one per query.
pub struct FixtureSelector {
    indices: VecDeque<usize>,
}

impl FixtureSelector {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        Self {
            indices: indices.into_iter().collect(),
        }
    }

    /// Loads one index per line; `#` comments and blank lines are skipped.
    pub fn from_file(path: &Path) -> Result<Self, VisionError> {
        let text = std::fs::read_to_string(path)?;
        let mut indices = VecDeque::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let idx = line
                .parse()
                .map_err(|_| VisionError::Format(format!("bad selector index line `{line}`")))?;
            indices.push_back(idx);
        }
        Ok(Self { indices })
    }
}

impl MaskSelector for FixtureSelector {
    fn select(&mut self, _image: &ImageHandle, candidates: &[Mask], _description: &str) -> Result<usize, VisionError> {
        let index = self.indices.pop_front().ok_or(VisionError::SelectorExhausted)?;
        if index >= candidates.len() {
            return Err(VisionError::SelectorOutOfRange {
                index,
                count: candidates.len(),
            });
        }
        Ok(index)
    }
}

/// Rows the boundary trace is shifted down, mirroring the reference
/// post-processing.
const EDGE_SHIFT_ROWS: usize = 3;

/// Boundary pixels (true with at least one false 4-neighbor, grid edges count
/// as false), shifted down three rows; the top three rows are forced false.
pub fn find_edges(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut out = Mask::new(w, h);
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            let boundary = r == 0
                || c == 0
                || r == h - 1
                || c == w - 1
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1);
            if boundary {
                let shifted = r + EDGE_SHIFT_ROWS;
                if shifted < h {
                    out.set(shifted, c, true);
                }
            }
        }
    }
    for r in 0..EDGE_SHIFT_ROWS.min(h) {
        for c in 0..w {
            out.set(r, c, false);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

/// Keeps only the extreme true pixel per scanline: rows for left/right,
/// columns for top/bottom.
pub fn side_extreme(mask: &Mask, side: Side) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut out = Mask::new(w, h);
    match side {
        Side::Left | Side::Right => {
            for r in 0..h {
                let mut cols = (0..w).filter(|&c| mask.get(r, c));
                let hit = if side == Side::Left { cols.next() } else { cols.next_back() };
                if let Some(c) = hit {
                    out.set(r, c, true);
                }
            }
        }
        Side::Top | Side::Bottom => {
            for c in 0..w {
                let mut rows = (0..h).filter(|&r| mask.get(r, c));
                let hit = if side == Side::Top { rows.next() } else { rows.next_back() };
                if let Some(r) = hit {
                    out.set(r, c, true);
                }
            }
        }
    }
    out
}

/// True pixels within one pixel (Chebyshev) of the mask's pixel centroid; the
/// nearest true pixel when the centroid block misses the mask.
pub fn centroid_region(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut out = Mask::new(w, h);
    let mut sum_r = 0.0;
    let mut sum_c = 0.0;
    let mut count = 0usize;
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) {
                sum_r += r as f64;
                sum_c += c as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return out;
    }
    let cr = (sum_r / count as f64).round() as i64;
    let cc = (sum_c / count as f64).round() as i64;
    let mut any = false;
    for dr in -1..=1i64 {
        for dc in -1..=1i64 {
            let (r, c) = (cr + dr, cc + dc);
            if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask.get(r as usize, c as usize) {
                out.set(r as usize, c as usize, true);
                any = true;
            }
        }
    }
    if !any {
        let mut best = None;
        for r in 0..h {
            for c in 0..w {
                if mask.get(r, c) {
                    let d = (r as i64 - cr).pow(2) + (c as i64 - cc).pow(2);
                    if best.map(|(bd, _, _)| d < bd).unwrap_or(true) {
                        best = Some((d, r, c));
                    }
                }
            }
        }
        if let Some((_, r, c)) = best {
            out.set(r, c, true);
        }
    }
    out
}

/// Mask post-processing dispatch by geometry token.
pub fn process_mask(geometry: &str, mask: &Mask) -> Result<Mask, VisionError> {
    match geometry {
        "the left edge" => Ok(side_extreme(mask, Side::Left)),
        "the right edge" => Ok(side_extreme(mask, Side::Right)),
        "the top edge" => Ok(side_extreme(mask, Side::Top)),
        "the bottom edge" => Ok(side_extreme(mask, Side::Bottom)),
        "the edge" | "the edges" => Ok(find_edges(mask)),
        "the center" | "the center point" => Ok(centroid_region(mask)),
        "the area" | "the plane" | "the normal" | "the axis" | "the heading" | "the heading direction" => {
            Ok(mask.clone())
        }
        other => Err(VisionError::UnknownGeometry(other.to_string())),
    }
}

/// Back-projects every true pixel with valid depth through the pinhole model:
/// pixel (u, v) at depth d maps to ((u−cx)d/fx, (v−cy)d/fy, d) in the camera
/// frame. Fewer than 3 projected points is an error.
pub fn back_project(mask: &Mask, depth: &DepthImage, k: &CameraIntrinsics) -> Result<PointCloud, VisionError> {
    let mut points = Vec::new();
    for r in 0..mask.height().min(depth.height()) {
        for c in 0..mask.width().min(depth.width()) {
            if !mask.get(r, c) {
                continue;
            }
            let Some(d) = depth.get(r, c) else { continue };
            let u = c as f64;
            let v = r as f64;
            points.push(Vec3::new((u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d));
        }
    }
    if points.len() < 3 {
        return Err(VisionError::InsufficientDepth { points: points.len() });
    }
    Ok(PointCloud::new(points)?)
}

/// The select-process pipeline for one component: propose, select, process by
/// geometry token, back-project.
pub fn parse_component(
    image: &ImageHandle,
    depth: &DepthImage,
    intrinsics: &CameraIntrinsics,
    component: &GeometricComponentRef,
    provider: &mut dyn MaskProvider,
    selector: &mut dyn MaskSelector,
) -> Result<PointCloud, VisionError> {
    let candidates = provider.propose(image)?;
    if candidates.is_empty() {
        return Err(VisionError::NoCandidates);
    }
    let index = selector.select(image, &candidates, &component.canonical_text())?;
    if index >= candidates.len() {
        return Err(VisionError::SelectorOutOfRange {
            index,
            count: candidates.len(),
        });
    }
    let processed = process_mask(&component.geometry, &candidates[index])?;
    if !processed.any() {
        return Err(VisionError::EmptyProcessedMask);
    }
    back_project(&processed, depth, intrinsics)
}

// ---------------------------------------------------------------------------
// Raster file IO
// ---------------------------------------------------------------------------

pub fn write_mask_pgm(mask: &Mask, path: &Path) -> Result<(), VisionError> {
    let mut out = Vec::with_capacity(mask.width * mask.height + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", mask.width, mask.height).as_bytes());
    for v in &mask.data {
        out.push(if *v { 255 } else { 0 });
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

fn read_header_tokens(data: &[u8], count: usize) -> Result<(Vec<String>, usize), VisionError> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < data.len() && (data[i] as char).is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < data.len() && !(data[i] as char).is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(VisionError::Format("truncated raster header".into()));
        }
        tokens.push(String::from_utf8_lossy(&data[start..i]).to_string());
    }
    // One whitespace byte separates the header from the payload.
    i += 1;
    Ok((tokens, i))
}

pub fn read_mask_pgm(path: &Path) -> Result<Mask, VisionError> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let (tokens, offset) = read_header_tokens(&data, 4)?;
    if tokens[0] != "P5" {
        return Err(VisionError::Format(format!("expected P5 magic, got {}", tokens[0])));
    }
    let width: usize = tokens[1].parse().map_err(|_| VisionError::Format("bad width".into()))?;
    let height: usize = tokens[2].parse().map_err(|_| VisionError::Format("bad height".into()))?;
    if data.len() < offset + width * height {
        return Err(VisionError::Format("PGM payload truncated".into()));
    }
    let mut mask = Mask::new(width, height);
    for r in 0..height {
        for c in 0..width {
            mask.set(r, c, data[offset + r * width + c] > 0);
        }
    }
    Ok(mask)
}

/// Depth as PFM: grayscale float32 in millimeters, scale −1.0 (little
/// endian), rows stored bottom-to-top per the format convention.
pub fn write_depth_pfm(depth: &DepthImage, path: &Path) -> Result<(), VisionError> {
    let mut out = Vec::new();
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).as_bytes());
    for r in (0..depth.height).rev() {
        for c in 0..depth.width {
            let mm = match depth.get(r, c) {
                Some(m) => (m * 1000.0) as f32,
                None => 0.0f32,
            };
            out.extend_from_slice(&mm.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_depth_pfm(path: &Path) -> Result<DepthImage, VisionError> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let (tokens, offset) = read_header_tokens(&data, 4)?;
    if tokens[0] != "Pf" {
        return Err(VisionError::Format(format!("expected Pf magic, got {}", tokens[0])));
    }
    let width: usize = tokens[1].parse().map_err(|_| VisionError::Format("bad width".into()))?;
    let height: usize = tokens[2].parse().map_err(|_| VisionError::Format("bad height".into()))?;
    let scale: f64 = tokens[3].parse().map_err(|_| VisionError::Format("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(VisionError::Format("big-endian PFM is not supported".into()));
    }
    if data.len() < offset + width * height * 4 {
        return Err(VisionError::Format("PFM payload truncated".into()));
    }
    let mut depth = DepthImage::new(width, height);
    let mut i = offset;
    for r in (0..height).rev() {
        for c in 0..width {
            let mm = f32::from_le_bytes([data[i], data[i + 1], data[i + 2], data[i + 3]]);
            i += 4;
            if mm > 0.0 {
                depth.set(r, c, mm as f64 / 1000.0);
            }
        }
    }
    Ok(depth)
}
