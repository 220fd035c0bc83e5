use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayViewMut3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::forward::RealImage;

const BOUNDS_TOL: f64 = 1e-9;

/// Per-pixel displacements in pixels, indexed `[component, x, y_line, frame]`.
///
/// Component 0 displaces along `x` (u1), component 1 along `y_line` (u2).
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField {
    data: Array4<f64>,
}

impl DeformationField {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        if data.shape()[0] != 2 {
            return Err(shape_err(format!(
                "deformation field needs 2 components, got {}",
                data.shape()[0]
            )));
        }
        if data.shape()[1..].iter().any(|&d| d == 0) {
            return Err(shape_err("deformation field dimensions must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("deformation field"));
        }
        Ok(Self { data })
    }

    pub fn zeros(n_x: usize, n_y: usize, n_t: usize) -> Self {
        Self {
            data: Array4::zeros((2, n_x, n_y, n_t)),
        }
    }

    pub fn constant(n_x: usize, n_y: usize, n_t: usize, c: [f64; 2]) -> Self {
        let mut data = Array4::zeros((2, n_x, n_y, n_t));
        data.index_axis_mut(Axis(0), 0).fill(c[0]);
        data.index_axis_mut(Axis(0), 1).fill(c[1]);
        Self { data }
    }

    /// Stacks `[2, x, y]` frames along time.
    pub fn from_frames(frames: &[Array3<f64>]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| shape_err("deformation field needs at least one frame"))?;
        let (c, n_x, n_y) = first.dim();
        let mut data = Array4::zeros((c, n_x, n_y, frames.len()));
        for (t, f) in frames.iter().enumerate() {
            if f.dim() != (c, n_x, n_y) {
                return Err(shape_err(format!("field frame {t} is {:?}", f.dim())));
            }
            data.index_axis_mut(Axis(3), t).assign(f);
        }
        Self::new(data)
    }

    pub fn n_x(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_y(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn n_t(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, f64> {
        self.data.index_axis(Axis(3), t)
    }

    pub fn frame_mut(&mut self, t: usize) -> ArrayViewMut3<'_, f64> {
        self.data.index_axis_mut(Axis(3), t)
    }

    /// Applies `f` to every frame in parallel, keeping frame order.
    pub fn map_frames<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(ArrayView3<'_, f64>) -> Array3<f64> + Sync,
    {
        let frames: Vec<_> = (0..self.n_t())
            .into_par_iter()
            .map(|t| f(self.frame(t)))
            .collect();
        Self::from_frames(&frames)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    /// Scaling-and-squaring steps applied to the field before sampling.
    pub integration_steps: usize,
}

impl Default for WarpConfig {
    fn default() -> Self {
        Self {
            integration_steps: 2,
        }
    }
}

/// Bilinear sample with coordinates clamped to the grid.
pub(crate) fn sample_clamped(img: ArrayView2<'_, f64>, px: f64, py: f64) -> f64 {
    let (n_x, n_y) = img.dim();
    let (i0, tx) = split(px.clamp(0.0, (n_x - 1) as f64), n_x);
    let (j0, ty) = split(py.clamp(0.0, (n_y - 1) as f64), n_y);
    let i1 = (i0 + 1).min(n_x - 1);
    let j1 = (j0 + 1).min(n_y - 1);
    let a = img[[i0, j0]] * (1.0 - ty) + img[[i0, j1]] * ty;
    let b = img[[i1, j0]] * (1.0 - ty) + img[[i1, j1]] * ty;
    a * (1.0 - tx) + b * tx
}

fn split(p: f64, n: usize) -> (usize, f64) {
    if n < 2 {
        return (0, 0.0);
    }
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, p - i0 as f64)
}

fn in_bounds(p: f64, n: usize) -> bool {
    p >= -BOUNDS_TOL && p <= (n - 1) as f64 + BOUNDS_TOL
}

/// `I(x + d(x))` by bilinear sampling; samples outside the grid are zero
/// and flagged invalid.
pub fn warp_displacement(img: ArrayView2<'_, f64>, d: ArrayView3<'_, f64>) -> (Array2<f64>, Array2<bool>) {
    let (n_x, n_y) = img.dim();
    let mut out = Array2::zeros((n_x, n_y));
    let mut valid = Array2::from_elem((n_x, n_y), false);
    for x in 0..n_x {
        for y in 0..n_y {
            let px = x as f64 + d[[0, x, y]];
            let py = y as f64 + d[[1, x, y]];
            if in_bounds(px, n_x) && in_bounds(py, n_y) {
                out[[x, y]] = sample_clamped(img, px, py);
                valid[[x, y]] = true;
            }
        }
    }
    (out, valid)
}

/// `I(x + d(x))` with coordinates clamped to the grid edge.
pub fn warp_edge(img: ArrayView2<'_, f64>, d: ArrayView3<'_, f64>) -> Array2<f64> {
    let (n_x, n_y) = img.dim();
    Array2::from_shape_fn((n_x, n_y), |(x, y)| {
        sample_clamped(img, x as f64 + d[[0, x, y]], y as f64 + d[[1, x, y]])
    })
}

fn compose_self(v: &Array3<f64>) -> Array3<f64> {
    let (_, n_x, n_y) = v.dim();
    let u0 = v.index_axis(Axis(0), 0);
    let u1 = v.index_axis(Axis(0), 1);
    let mut out = v.clone();
    for x in 0..n_x {
        for y in 0..n_y {
            let px = x as f64 + v[[0, x, y]];
            let py = y as f64 + v[[1, x, y]];
            out[[0, x, y]] += sample_clamped(u0, px, py);
            out[[1, x, y]] += sample_clamped(u1, px, py);
        }
    }
    out
}

/// Scaling and squaring: `v / 2^steps`, then `steps` self-compositions
/// `v ← v + v∘(id + v)`.
pub fn integrate_field(v: ArrayView3<'_, f64>, steps: usize) -> Array3<f64> {
    let mut cur = v.to_owned() / 2f64.powi(steps as i32);
    for _ in 0..steps {
        cur = compose_self(&cur);
    }
    cur
}

/// Displacement of the flow `ẋ = v(x)` after unit time, by forward Euler.
pub fn integrate_euler(v: ArrayView3<'_, f64>, substeps: usize) -> Array3<f64> {
    let (_, n_x, n_y) = v.dim();
    let h = 1.0 / substeps as f64;
    let u0 = v.index_axis(Axis(0), 0);
    let u1 = v.index_axis(Axis(0), 1);
    let mut out = Array3::zeros(v.raw_dim());
    for x in 0..n_x {
        for y in 0..n_y {
            let (mut px, mut py) = (x as f64, y as f64);
            for _ in 0..substeps {
                let dx = sample_clamped(u0, px, py);
                let dy = sample_clamped(u1, px, py);
                px += h * dx;
                py += h * dy;
            }
            out[[0, x, y]] = px - x as f64;
            out[[1, x, y]] = py - y as f64;
        }
    }
    out
}

/// Field `v` with `integrate_field(v, steps) ≈ d`, by fixed-point iteration.
pub fn field_log(d: ArrayView3<'_, f64>, steps: usize) -> Array3<f64> {
    if steps == 0 {
        return d.to_owned();
    }
    let mut v = d.to_owned();
    for _ in 0..50 {
        let r = &d - &integrate_field(v.view(), steps);
        let change = r.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        v += &r;
        if change < 1e-10 {
            break;
        }
    }
    v
}

/// Warps one frame with the integrated field.
pub fn warp(img: ArrayView2<'_, f64>, field: ArrayView3<'_, f64>, cfg: &WarpConfig) -> Result<(Array2<f64>, Array2<bool>)> {
    if field.shape()[0] != 2 || field.shape()[1..] != *img.shape() {
        return Err(shape_err(format!(
            "field {:?} does not match image {:?}",
            field.shape(),
            img.shape()
        )));
    }
    if cfg.integration_steps == 0 {
        return Ok(warp_displacement(img, field));
    }
    let d = integrate_field(field, cfg.integration_steps);
    Ok(warp_displacement(img, d.view()))
}

/// Warps every frame of a sequence with its own field.
pub fn warp_sequence(
    images: &RealImage,
    field: &DeformationField,
    cfg: &WarpConfig,
) -> Result<(RealImage, Array3<bool>)> {
    let (n_x, n_y, n_t) = images.dims();
    if (field.n_x(), field.n_y(), field.n_t()) != (n_x, n_y, n_t) {
        return Err(shape_err(format!(
            "field {:?} does not match sequence {:?}",
            field.data().shape(),
            images.data().shape()
        )));
    }
    let warped: Vec<_> = (0..n_t)
        .into_par_iter()
        .map(|t| warp(images.frame(t), field.frame(t), cfg))
        .collect::<Result<_>>()?;
    let mut out = Array3::zeros((n_x, n_y, n_t));
    let mut valid = Array3::from_elem((n_x, n_y, n_t), false);
    for (t, (w, v)) in warped.into_iter().enumerate() {
        out.index_axis_mut(Axis(2), t).assign(&w);
        valid.index_axis_mut(Axis(2), t).assign(&v);
    }
    Ok((RealImage::new(out)?, valid))
}

/// Mean absolute forward difference over both axes and both components,
/// normalized by `2·n·n_t`; differences at the trailing edge are zero.
pub fn smoothness_loss(field: &DeformationField) -> f64 {
    let d = field.data();
    let (_, n_x, n_y, n_t) = d.dim();
    let dx = &d.slice(s![.., 1.., .., ..]) - &d.slice(s![.., ..n_x - 1, .., ..]);
    let dy = &d.slice(s![.., .., 1.., ..]) - &d.slice(s![.., .., ..n_y - 1, ..]);
    let total: f64 = dx.iter().chain(dy.iter()).map(|v| v.abs()).sum();
    total / (2 * n_x * n_y * n_t) as f64
}

/// Mean Euclidean distance between two `[2, x, y]` fields, optionally over a mask.
pub fn mean_endpoint_error(a: ArrayView3<'_, f64>, b: ArrayView3<'_, f64>, mask: Option<ArrayView2<'_, bool>>) -> f64 {
    let (_, n_x, n_y) = a.dim();
    let mut total = 0.0;
    let mut count = 0usize;
    for x in 0..n_x {
        for y in 0..n_y {
            if mask.is_some_and(|m| !m[[x, y]]) {
                continue;
            }
            let e0 = a[[0, x, y]] - b[[0, x, y]];
            let e1 = a[[1, x, y]] - b[[1, x, y]];
            total += (e0 * e0 + e1 * e1).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
