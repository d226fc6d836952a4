//! Radar point cloud to BEV pseudo-image.
//!
//! Points are binned into vertical pillars over a regular ground-plane grid,
//! each point is lifted by a shared linear layer and max-pooled per pillar,
//! the feature enhancement / compression stack widens then narrows the
//! per-pillar vector, and the result is scattered back onto the dense grid.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, BatchNormParams, FeatureMap, PointwiseSpec};

/// Number of geometric channels prepended/appended to the raw point features:
/// `x, y, z` in front, `x - xc, y - yc` at the back.
pub const GEOMETRIC_CHANNELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub features: Vec<f32>,
}

/// One sweep of radar returns. Every point carries `num_features` extra channels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RadarFrame {
    num_features: usize,
    points: Vec<RadarPoint>,
}

impl RadarFrame {
    pub fn new(num_features: usize) -> Self {
        Self { num_features, points: Vec::new() }
    }

    pub fn from_points(num_features: usize, points: Vec<RadarPoint>) -> Result<Self> {
        let mut frame = Self::new(num_features);
        for p in points {
            frame.push(p)?;
        }
        Ok(frame)
    }

    pub fn push(&mut self, point: RadarPoint) -> Result<()> {
        if point.features.len() != self.num_features {
            return Err(Error::config(format!(
                "point has {} features, frame expects {}",
                point.features.len(),
                self.num_features
            )));
        }
        if !(point.x.is_finite() && point.y.is_finite() && point.z.is_finite()) {
            return Err(Error::config("point coordinates must be finite"));
        }
        self.points.push(point);
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn points(&self) -> &[RadarPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    pub cell_size: f64,
}

impl Default for GridSpec {
    /// 80 m × 80 m ahead of the sensor at 0.5 m cells: a 160 × 160 grid.
    fn default() -> Self {
        Self { x_range: [0.0, 80.0], y_range: [-40.0, 40.0], z_range: [-2.5, 2.5], cell_size: 0.5 }
    }
}

impl GridSpec {
    fn cells_along(&self, range: [f64; 2], axis: &str) -> Result<usize> {
        let extent = range[1] - range[0];
        if !extent.is_finite() || extent <= 0.0 {
            return Err(Error::config(format!("grid {axis} range must be increasing, got {range:?}")));
        }
        let cells = extent / self.cell_size;
        let rounded = cells.round();
        if rounded < 1.0 || (cells - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::config(format!(
                "grid {axis} extent {extent} is not a whole number of {} m cells",
                self.cell_size
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.cell_size.is_finite() || self.cell_size <= 0.0 {
            return Err(Error::config(format!("grid cell_size must be positive, got {}", self.cell_size)));
        }
        self.cells_along(self.x_range, "x")?;
        self.cells_along(self.y_range, "y")?;
        if self.z_range[1].is_nan() || self.z_range[0].is_nan() || self.z_range[1] <= self.z_range[0] {
            return Err(Error::config(format!("grid z range must be increasing, got {:?}", self.z_range)));
        }
        Ok(())
    }

    /// Grid rows (along y) and columns (along x).
    pub fn dims(&self) -> Result<(usize, usize)> {
        self.validate()?;
        Ok((self.cells_along(self.y_range, "y")?, self.cells_along(self.x_range, "x")?))
    }

    /// Cell index for a point, or `None` when it falls outside the ranges.
    ///
    /// x and y ranges are half-open `[min, max)`; z is closed.
    pub fn cell_of(&self, x: f64, y: f64, z: f64, rows: usize, cols: usize) -> Option<(usize, usize)> {
        let inside = x >= self.x_range[0]
            && x < self.x_range[1]
            && y >= self.y_range[0]
            && y < self.y_range[1]
            && z >= self.z_range[0]
            && z <= self.z_range[1];
        if !inside {
            return None;
        }
        let row = ((y - self.y_range[0]) / self.cell_size).floor() as usize;
        let col = ((x - self.x_range[0]) / self.cell_size).floor() as usize;
        (row < rows && col < cols).then_some((row, col))
    }

    /// Metric center of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (self.x_range[0] + (col as f64 + 0.5) * self.cell_size, self.y_range[0] + (row as f64 + 0.5) * self.cell_size)
    }
}

/// Filter counts of the three consecutive 1×1 layers of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FecConfig {
    pub f1: usize,
    pub f2: usize,
    pub f3: usize,
}

impl Default for FecConfig {
    fn default() -> Self {
        Self { f1: 32, f2: 128, f3: 12 }
    }
}

impl FecConfig {
    /// The middle layer must widen (`f1 < f2`), the last must narrow
    /// (`f2 > f3`) and the output may not be wider than the input (`f1 >= f3`).
    pub fn validate(&self) -> Result<()> {
        let FecConfig { f1, f2, f3 } = *self;
        if f1 == 0 || f2 == 0 || f3 == 0 {
            return Err(Error::config(format!("FEC filters must be positive, got ({f1},{f2},{f3})")));
        }
        if f1 >= f2 {
            return Err(Error::config(format!("FEC filters violate f1 < f2 (f1={f1}, f2={f2})")));
        }
        if f2 <= f3 {
            return Err(Error::config(format!("FEC filters violate f2 > f3 (f2={f2}, f3={f3})")));
        }
        if f1 < f3 {
            return Err(Error::config(format!("FEC filters violate f1 >= f3 (f1={f1}, f3={f3})")));
        }
        Ok(())
    }
}

/// Points of one non-empty grid cell, already augmented.
#[derive(Debug, Clone, PartialEq)]
pub struct Pillar {
    pub row: usize,
    pub col: usize,
    pub points: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarSet {
    pub rows: usize,
    pub cols: usize,
    /// Length of each augmented point vector.
    pub point_dim: usize,
    /// In order of first occupancy.
    pub pillars: Vec<Pillar>,
    pub dropped_out_of_range: usize,
    pub dropped_overflow: usize,
}

impl PillarSet {
    pub fn len(&self) -> usize {
        self.pillars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pillars.is_empty()
    }

    pub fn assigned_points(&self) -> usize {
        self.pillars.iter().map(|p| p.points.len()).sum()
    }
}

pub fn augmented_point_dim(num_features: usize) -> usize {
    num_features + GEOMETRIC_CHANNELS
}

/// Bins a frame into pillars.
///
/// Each stored point becomes `[x, y, z, features.., x - xc, y - yc]` where
/// `(xc, yc)` is the center of its cell. Once a pillar holds
/// `max_points_per_pillar` points, later points for that cell are dropped.
pub fn pillarize(frame: &RadarFrame, grid: &GridSpec, max_points_per_pillar: usize) -> Result<PillarSet> {
    if max_points_per_pillar == 0 {
        return Err(Error::config("max_points_per_pillar must be positive"));
    }
    let (rows, cols) = grid.dims()?;
    let point_dim = augmented_point_dim(frame.num_features());
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut set =
        PillarSet { rows, cols, point_dim, pillars: Vec::new(), dropped_out_of_range: 0, dropped_overflow: 0 };
    for p in frame.points() {
        let Some((row, col)) = grid.cell_of(p.x as f64, p.y as f64, p.z as f64, rows, cols) else {
            set.dropped_out_of_range += 1;
            continue;
        };
        let slot = *index.entry((row, col)).or_insert_with(|| {
            set.pillars.push(Pillar { row, col, points: Vec::new() });
            set.pillars.len() - 1
        });
        let pillar = &mut set.pillars[slot];
        if pillar.points.len() >= max_points_per_pillar {
            set.dropped_overflow += 1;
            continue;
        }
        let (xc, yc) = grid.cell_center(row, col);
        let mut v = Vec::with_capacity(point_dim);
        v.extend_from_slice(&[p.x, p.y, p.z]);
        v.extend_from_slice(&p.features);
        v.push((p.x as f64 - xc) as f32);
        v.push((p.y as f64 - yc) as f32);
        pillar.points.push(v);
    }
    Ok(set)
}

/// Row-major matrix of one feature vector per pillar.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarFeatures {
    dim: usize,
    data: Vec<f32>,
}

impl PillarFeatures {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::config(format!(
                "pillar feature buffer of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    fn map_rows(&self, out_dim: usize, mut f: impl FnMut(&[f32], &mut [f32])) -> Self {
        let mut data = vec![0.0; self.rows() * out_dim];
        for (x, y) in self.data.chunks_exact(self.dim).zip(data.chunks_exact_mut(out_dim)) {
            f(x, y);
        }
        Self { dim: out_dim, data }
    }
}

/// Shared per-point linear layer followed by a max over each pillar's points.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarFeatureNet {
    pub linear: PointwiseSpec,
    /// Only the plain PointPillars encoder normalizes here.
    pub norm: Option<BatchNormParams>,
    pub activation: Activation,
}

impl PillarFeatureNet {
    pub fn out_dim(&self) -> usize {
        self.linear.out_channels()
    }

    pub fn forward(&self, pillars: &PillarSet) -> Result<PillarFeatures> {
        if self.linear.in_channels() != pillars.point_dim {
            return Err(Error::config(format!(
                "pillar feature net expects {}-d points, pillars carry {}-d points",
                self.linear.in_channels(),
                pillars.point_dim
            )));
        }
        if let Some(norm) = &self.norm {
            if norm.channels() != self.out_dim() {
                return Err(Error::config("pillar feature net norm width differs from linear output"));
            }
        }
        let dim = self.out_dim();
        let mut data = vec![f32::NEG_INFINITY; pillars.len() * dim];
        let mut scratch = vec![0.0; dim];
        for (pillar, acc) in pillars.pillars.iter().zip(data.chunks_exact_mut(dim)) {
            for point in &pillar.points {
                self.linear.apply_vector(point, &mut scratch);
                if let Some(norm) = &self.norm {
                    norm.apply_vector(&mut scratch);
                }
                for (a, &v) in acc.iter_mut().zip(&scratch) {
                    *a = a.max(self.activation.apply(v));
                }
            }
            // max(+0, -0) is unspecified; fold signed zeros so the result is order-free bitwise.
            for a in acc.iter_mut() {
                *a += 0.0;
            }
        }
        PillarFeatures::new(dim, data)
    }
}

/// The two extra 1×1 layers: widen to `f2`, then compress to `f3`. No normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FecStack {
    pub enhance: PointwiseSpec,
    pub compress: PointwiseSpec,
    pub activation: Activation,
}

pub fn fec_forward(features: &PillarFeatures, config: &FecConfig, stack: &FecStack) -> Result<PillarFeatures> {
    config.validate()?;
    let shapes = [
        (stack.enhance.in_channels(), config.f1),
        (stack.enhance.out_channels(), config.f2),
        (stack.compress.in_channels(), config.f2),
        (stack.compress.out_channels(), config.f3),
        (features.dim(), config.f1),
    ];
    if shapes.iter().any(|(a, b)| a != b) {
        return Err(Error::config(format!(
            "FEC weights are not shaped {}->{}->{} for {}-d input",
            config.f1,
            config.f2,
            config.f3,
            features.dim()
        )));
    }
    let act = stack.activation;
    let enhanced = features.map_rows(config.f2, |x, y| {
        stack.enhance.apply_vector(x, y);
        y.iter_mut().for_each(|v| *v = act.apply(*v));
    });
    Ok(enhanced.map_rows(config.f3, |x, y| {
        stack.compress.apply_vector(x, y);
        y.iter_mut().for_each(|v| *v = act.apply(*v));
    }))
}

/// Places each pillar's vector at its cell; every other cell is zero.
pub fn scatter_to_pseudo_image(pillars: &PillarSet, features: &PillarFeatures) -> Result<FeatureMap> {
    if features.rows() != pillars.len() {
        return Err(Error::config(format!("{} feature rows for {} pillars", features.rows(), pillars.len())));
    }
    let mut map = FeatureMap::zeros(pillars.rows, pillars.cols, features.dim());
    for (i, p) in pillars.pillars.iter().enumerate() {
        if p.row >= pillars.rows || p.col >= pillars.cols {
            return Err(Error::config(format!("pillar ({}, {}) outside the grid", p.row, p.col)));
        }
        map.pixel_mut(p.row, p.col).copy_from_slice(features.row(i));
    }
    Ok(map)
}

/// Inverse of [`scatter_to_pseudo_image`] at the occupied cells.
pub fn gather_pillar_features(map: &FeatureMap, pillars: &PillarSet) -> PillarFeatures {
    let mut data = Vec::with_capacity(pillars.len() * map.channels());
    for p in &pillars.pillars {
        data.extend_from_slice(map.pixel(p.row, p.col));
    }
    PillarFeatures { dim: map.channels(), data }
}
