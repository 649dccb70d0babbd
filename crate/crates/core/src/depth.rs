//! Dense depth maps, cross-check uncertainty refinement, and k-NN depth
//! feature aggregation.
//!
//! The refinement step takes two depth observations of the same scene,
//! marks pixels where they disagree by more than a threshold as uncertain,
//! and either removes those pixels or replaces them with the mean.

use thiserror::Error;

use crate::geometry::Point2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("depth map dimensions differ: {a_w}x{a_h} vs {b_w}x{b_h}")]
    DimensionMismatch {
        a_w: u32,
        a_h: u32,
        b_w: u32,
        b_h: u32,
    },
    #[error("threshold must be > 0, got {0}")]
    InvalidThreshold(f64),
    #[error("pixel ({x}, {y}) outside {w}x{h} map or invalid")]
    InvalidPixel { x: i64, y: i64, w: u32, h: u32 },
    #[error("found {got} valid neighbors in the search window; need {need}")]
    InsufficientNeighbors { got: usize, need: usize },
}

/// Per-pixel depth with a validity mask. Valid pixels hold finite depth > 0.
#[derive(Debug, Clone)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl PartialEq for DepthMap {
    /// Invalid pixels compare equal regardless of their stored (NaN) value.
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.valid == other.valid
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.valid)
                .all(|((a, b), ok)| !ok || a == b)
    }
}

impl DepthMap {
    /// All pixels invalid.
    pub fn new_invalid(width: u32, height: u32) -> Self {
        let n = (width as usize) * (height as usize);
        DepthMap {
            width,
            height,
            values: vec![f64::NAN; n],
            valid: vec![false; n],
        }
    }

    /// Builds from raw values; non-finite or non-positive entries become
    /// invalid pixels.
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), (width as usize) * (height as usize));
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        DepthMap {
            width,
            height,
            values,
            valid,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn idx(&self, x: u32, y: u32) -> usize {
        (y as usize) * (self.width as usize) + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let i = self.idx(x, y);
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, x: u32, y: u32, depth: f64) {
        let i = self.idx(x, y);
        self.values[i] = depth;
        self.valid[i] = depth.is_finite() && depth > 0.0;
    }

    pub fn invalidate(&mut self, x: u32, y: u32) {
        let i = self.idx(x, y);
        self.values[i] = f64::NAN;
        self.valid[i] = false;
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.valid[self.idx(x, y)]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Row-major values with NaN at invalid pixels.
    pub fn values(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.values
            .iter()
            .zip(self.valid.iter())
            .map(|(v, ok)| ok.then_some(*v))
    }

    fn same_dims(&self, other: &DepthMap) -> Result<(), DepthError> {
        if self.width != other.width || self.height != other.height {
            return Err(DepthError::DimensionMismatch {
                a_w: self.width,
                a_h: self.height,
                b_w: other.width,
                b_h: other.height,
            });
        }
        Ok(())
    }
}

/// Per-pixel uncertainty flags (true = uncertain).
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMask {
    width: u32,
    height: u32,
    flags: Vec<bool>,
}

impl UncertaintyMask {
    pub fn is_uncertain(&self, x: u32, y: u32) -> bool {
        self.flags[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn uncertain_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }
}

/// How refinement handles uncertain pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    /// Invalidate uncertain pixels (the default).
    Remove,
    /// Replace uncertain pixels with the mean of the two observations.
    Mean,
}

/// Marks pixels where the two observations differ by more than `tau`.
/// Pixels invalid in either map are always uncertain.
pub fn uncertainty_mask(
    a: &DepthMap,
    b: &DepthMap,
    tau: f64,
) -> Result<UncertaintyMask, DepthError> {
    a.same_dims(b)?;
    if !(tau > 0.0) {
        return Err(DepthError::InvalidThreshold(tau));
    }
    let flags = a
        .values
        .iter()
        .zip(&a.valid)
        .zip(b.values.iter().zip(&b.valid))
        .map(|((&va, &oka), (&vb, &okb))| {
            if oka && okb {
                (va - vb).abs() > tau
            } else {
                true
            }
        })
        .collect();
    Ok(UncertaintyMask {
        width: a.width,
        height: a.height,
        flags,
    })
}

/// Cross-check refinement of depth observation `a` against `b`.
pub fn refine_depth(
    a: &DepthMap,
    b: &DepthMap,
    tau: f64,
    mode: RefineMode,
) -> Result<DepthMap, DepthError> {
    let mask = uncertainty_mask(a, b, tau)?;
    let mut out = a.clone();
    for y in 0..a.height {
        for x in 0..a.width {
            if !mask.is_uncertain(x, y) {
                continue;
            }
            match mode {
                RefineMode::Remove => out.invalidate(x, y),
                RefineMode::Mean => match (a.get(x, y), b.get(x, y)) {
                    (Some(da), Some(db)) => out.set(x, y, (da + db) / 2.0),
                    // One-sided observations cannot be averaged.
                    _ => out.invalidate(x, y),
                },
            }
        }
    }
    Ok(out)
}

/// K-NN feature aggregation parameters: neighbor count, search window, and
/// a two-layer MLP mapping the k sorted depth differences to a local
/// feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct KfaParams {
    pub k: usize,
    /// Half-width of the square search window around the query pixel.
    pub window_radius: u32,
    /// Hidden layer: `hidden_dim × k` weights, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output layer: `out_dim × hidden_dim` weights, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl KfaParams {
    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    pub fn out_dim(&self) -> usize {
        self.b2.len()
    }

    /// Zero-weight parameters with the given shape.
    pub fn zeros(k: usize, window_radius: u32, hidden_dim: usize, out_dim: usize) -> Self {
        KfaParams {
            k,
            window_radius,
            w1: vec![0.0; hidden_dim * k],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; out_dim * hidden_dim],
            b2: vec![0.0; out_dim],
        }
    }

    fn mlp(&self, input: &[f64]) -> Vec<f64> {
        let h = self.hidden_dim();
        let mut hidden = vec![0.0; h];
        for (r, out) in hidden.iter_mut().enumerate() {
            let mut acc = self.b1[r];
            for (c, x) in input.iter().enumerate() {
                acc += self.w1[r * self.k + c] * x;
            }
            *out = acc.max(0.0);
        }
        let o = self.out_dim();
        let mut out = vec![0.0; o];
        for (r, v) in out.iter_mut().enumerate() {
            let mut acc = self.b2[r];
            for (c, x) in hidden.iter().enumerate() {
                acc += self.w2[r * h + c] * x;
            }
            *v = acc;
        }
        out
    }
}

/// Nearest valid pixels around `(x, y)` within the window, sorted by image
/// distance with row-major tie-breaks; the query pixel itself is excluded.
fn nearest_valid_neighbors(
    depth: &DepthMap,
    x: u32,
    y: u32,
    k: usize,
    window_radius: u32,
) -> Vec<(u32, u32)> {
    let r = window_radius as i64;
    let (xi, yi) = (x as i64, y as i64);
    let mut candidates: Vec<(i64, i64, u32, u32)> = Vec::new();
    for dy in -r..=r {
        let ny = yi + dy;
        if ny < 0 || ny >= depth.height as i64 {
            continue;
        }
        for dx in -r..=r {
            let nx = xi + dx;
            if nx < 0 || nx >= depth.width as i64 {
                continue;
            }
            if nx == xi && ny == yi {
                continue;
            }
            if depth.is_valid(nx as u32, ny as u32) {
                let d2 = dx * dx + dy * dy;
                candidates.push((d2, ny * depth.width as i64 + nx, nx as u32, ny as u32));
            }
        }
    }
    candidates.sort_by_key(|&(d2, rm, _, _)| (d2, rm));
    candidates
        .into_iter()
        .take(k)
        .map(|(_, _, nx, ny)| (nx, ny))
        .collect()
}

/// Aggregates the local depth neighborhood of a pixel into a feature
/// vector: gather the k nearest valid pixels, form the sorted vector of
/// depth differences `d_j − d_i`, and pass it through the MLP.
///
/// Using differences rather than raw depths makes the feature invariant to
/// a global additive depth offset.
pub fn kfa_aggregate(
    depth: &DepthMap,
    pixel: &Point2,
    params: &KfaParams,
) -> Result<Vec<f64>, DepthError> {
    let x = pixel.x.round() as i64;
    let y = pixel.y.round() as i64;
    if x < 0 || y < 0 || x >= depth.width as i64 || y >= depth.height as i64 {
        return Err(DepthError::InvalidPixel {
            x,
            y,
            w: depth.width,
            h: depth.height,
        });
    }
    let (x, y) = (x as u32, y as u32);
    let di = depth.get(x, y).ok_or(DepthError::InvalidPixel {
        x: x as i64,
        y: y as i64,
        w: depth.width,
        h: depth.height,
    })?;

    let neighbors = nearest_valid_neighbors(depth, x, y, params.k, params.window_radius);
    if neighbors.len() < params.k {
        return Err(DepthError::InsufficientNeighbors {
            got: neighbors.len(),
            need: params.k,
        });
    }
    let mut diffs: Vec<f64> = neighbors
        .iter()
        .map(|&(nx, ny)| depth.get(nx, ny).expect("neighbor is valid") - di)
        .collect();
    diffs.sort_by(|a, b| a.partial_cmp(b).expect("finite depths"));
    Ok(params.mlp(&diffs))
}
