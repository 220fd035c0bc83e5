use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, ArrayViewMut2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{shape_err, Error, Result};

/// Multi-coil, multi-frame k-space indexed `[x, y_line, coil, frame]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicKSpace {
    data: Array4<Complex64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KSpaceShape {
    pub n_x: usize,
    pub n_y: usize,
    pub n_c: usize,
    pub n_t: usize,
}

impl DynamicKSpace {
    pub fn new(data: Array4<Complex64>) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(shape_err(format!(
                "k-space dimensions must be positive, got {:?}",
                data.shape()
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("k-space"));
        }
        Ok(Self { data })
    }

    pub fn zeros(n_x: usize, n_y: usize, n_c: usize, n_t: usize) -> Self {
        assert!(n_x > 0 && n_y > 0 && n_c > 0 && n_t > 0);
        Self {
            data: Array4::zeros((n_x, n_y, n_c, n_t)),
        }
    }

    pub(crate) fn from_raw(data: Array4<Complex64>) -> Self {
        debug_assert!(data.shape().iter().all(|&d| d > 0));
        Self { data }
    }

    pub fn shape(&self) -> KSpaceShape {
        let s = self.data.shape();
        KSpaceShape {
            n_x: s[0],
            n_y: s[1],
            n_c: s[2],
            n_t: s[3],
        }
    }

    pub fn data(&self) -> &Array4<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array4<Complex64> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array4<Complex64> {
        self.data
    }

    /// Coil data of one frame, indexed `[x, y_line, coil]`.
    pub fn frame(&self, t: usize) -> ArrayView3<'_, Complex64> {
        self.data.index_axis(Axis(3), t)
    }

    pub fn select_frames(&self, frames: &[usize]) -> Result<Self> {
        let n_t = self.shape().n_t;
        if frames.is_empty() || frames.iter().any(|&t| t >= n_t) {
            return Err(shape_err(format!(
                "frame selection {frames:?} out of range for {n_t} frames"
            )));
        }
        Ok(Self::from_raw(self.data.select(Axis(3), frames)))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Image sequence indexed `[x, y_line, frame]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicImage<T> {
    data: Array3<T>,
}

pub type ComplexImage = DynamicImage<Complex64>;
pub type RealImage = DynamicImage<f64>;

impl<T: Clone> DynamicImage<T> {
    pub fn new(data: Array3<T>) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(shape_err(format!(
                "image dimensions must be positive, got {:?}",
                data.shape()
            )));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_raw(data: Array3<T>) -> Self {
        debug_assert!(data.shape().iter().all(|&d| d > 0));
        Self { data }
    }

    /// Stacks frames `[x, y_line]` along a trailing frame axis.
    pub fn from_frames(frames: &[Array2<T>]) -> Result<Self>
    where
        T: Default,
    {
        let first = frames
            .first()
            .ok_or_else(|| shape_err("cannot build an image from zero frames"))?;
        let (n_x, n_y) = first.dim();
        let mut data = Array3::from_elem((n_x, n_y, frames.len()), T::default());
        for (t, f) in frames.iter().enumerate() {
            if f.dim() != (n_x, n_y) {
                return Err(shape_err(format!(
                    "frame {t} is {:?}, expected {:?}",
                    f.dim(),
                    (n_x, n_y)
                )));
            }
            data.index_axis_mut(Axis(2), t).assign(f);
        }
        Self::new(data)
    }

    pub fn n_x(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_y(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_t(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> &Array3<T> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<T> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array3<T> {
        self.data
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, T> {
        self.data.index_axis(Axis(2), t)
    }

    pub fn frame_mut(&mut self, t: usize) -> ArrayViewMut2<'_, T> {
        self.data.index_axis_mut(Axis(2), t)
    }

    pub fn frames(&self) -> Vec<Array2<T>> {
        (0..self.n_t()).map(|t| self.frame(t).to_owned()).collect()
    }
}

impl ComplexImage {
    pub fn zeros(n_x: usize, n_y: usize, n_t: usize) -> Self {
        Self::from_raw(Array3::zeros((n_x, n_y, n_t)))
    }

    pub fn abs(&self) -> RealImage {
        RealImage::from_raw(self.data.mapv(|v| v.norm()))
    }
}

impl RealImage {
    pub fn to_complex(&self) -> ComplexImage {
        ComplexImage::from_raw(self.data.mapv(|v| Complex64::new(v, 0.0)))
    }

    /// Repeats a single frame `n_t` times.
    pub fn repeat_frame(frame: ArrayView2<'_, f64>, n_t: usize) -> Result<Self> {
        let frames = vec![frame.to_owned(); n_t];
        Self::from_frames(&frames)
    }
}

/// Coil sensitivity profiles indexed `[x, y_line, coil, frame]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities {
    data: Array4<Complex64>,
}

impl CoilSensitivities {
    pub fn new(data: Array4<Complex64>) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(shape_err(format!(
                "sensitivity dimensions must be positive, got {:?}",
                data.shape()
            )));
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("coil sensitivities"));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_raw(data: Array4<Complex64>) -> Self {
        Self { data }
    }

    /// Unit sensitivity for a single coil.
    pub fn unit(n_x: usize, n_y: usize, n_t: usize) -> Self {
        Self::from_raw(Array4::from_elem(
            (n_x, n_y, 1, n_t),
            Complex64::new(1.0, 0.0),
        ))
    }

    pub fn shape(&self) -> KSpaceShape {
        let s = self.data.shape();
        KSpaceShape {
            n_x: s[0],
            n_y: s[1],
            n_c: s[2],
            n_t: s[3],
        }
    }

    pub fn data(&self) -> &Array4<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array4<Complex64> {
        &mut self.data
    }

    pub fn into_inner(self) -> Array4<Complex64> {
        self.data
    }

    pub fn frame(&self, t: usize) -> ArrayView3<'_, Complex64> {
        self.data.index_axis(Axis(3), t)
    }

    /// Largest `|Σ_k |S^k|² − 1|` over all pixels and frames.
    pub fn normalization_deviation(&self) -> f64 {
        let s = self.shape();
        let mut worst = 0.0f64;
        for t in 0..s.n_t {
            for x in 0..s.n_x {
                for y in 0..s.n_y {
                    let e: f64 = (0..s.n_c)
                        .map(|k| self.data[[x, y, k, t]].norm_sqr())
                        .sum();
                    worst = worst.max((e - 1.0).abs());
                }
            }
        }
        worst
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.normalization_deviation() <= tol
    }

    /// Broadcasts one frame's profiles to `n_t` frames.
    pub fn repeat_frame(frame: ArrayView3<'_, Complex64>, n_t: usize) -> Self {
        let (n_x, n_y, n_c) = frame.dim();
        let mut data = Array4::zeros((n_x, n_y, n_c, n_t));
        for t in 0..n_t {
            data.index_axis_mut(Axis(3), t).assign(&frame);
        }
        Self::from_raw(data)
    }
}

/// Binary phase-encode line selection indexed `[y_line, frame]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    lines: Array2<bool>,
}

impl SamplingMask {
    pub fn new(lines: Array2<bool>) -> Result<Self> {
        if lines.shape().iter().any(|&d| d == 0) {
            return Err(shape_err(format!(
                "mask dimensions must be positive, got {:?}",
                lines.shape()
            )));
        }
        Ok(Self { lines })
    }

    pub fn empty(n_y: usize, n_t: usize) -> Self {
        Self {
            lines: Array2::from_elem((n_y, n_t), false),
        }
    }

    pub fn full(n_y: usize, n_t: usize) -> Self {
        Self {
            lines: Array2::from_elem((n_y, n_t), true),
        }
    }

    /// Builds a mask from per-frame line index lists.
    pub fn from_lines(n_y: usize, frames: &[Vec<usize>]) -> Result<Self> {
        if n_y == 0 || frames.is_empty() {
            return Err(shape_err("mask needs at least one line and one frame"));
        }
        let mut lines = Array2::from_elem((n_y, frames.len()), false);
        for (t, idx) in frames.iter().enumerate() {
            for &l in idx {
                if l >= n_y {
                    return Err(shape_err(format!("line {l} out of range for n_y = {n_y}")));
                }
                lines[[l, t]] = true;
            }
        }
        Ok(Self { lines })
    }

    pub fn n_y(&self) -> usize {
        self.lines.shape()[0]
    }

    pub fn n_t(&self) -> usize {
        self.lines.shape()[1]
    }

    pub fn lines(&self) -> &Array2<bool> {
        &self.lines
    }

    pub fn is_set(&self, line: usize, frame: usize) -> bool {
        self.lines[[line, frame]]
    }

    pub fn set(&mut self, line: usize, frame: usize, value: bool) {
        self.lines[[line, frame]] = value;
    }

    pub fn frame_lines(&self, frame: usize) -> Vec<usize> {
        self.lines
            .column(frame)
            .iter()
            .enumerate()
            .filter_map(|(l, &on)| on.then_some(l))
            .collect()
    }

    pub fn count(&self, frame: usize) -> usize {
        self.lines.column(frame).iter().filter(|&&b| b).count()
    }

    pub fn counts(&self) -> Vec<usize> {
        (0..self.n_t()).map(|t| self.count(t)).collect()
    }

    /// True when every line set in `other` is also set here.
    pub fn contains(&self, other: &SamplingMask) -> bool {
        self.lines.dim() == other.lines.dim()
            && self
                .lines
                .iter()
                .zip(other.lines.iter())
                .all(|(&a, &b)| a || !b)
    }

    pub fn union(&self, other: &SamplingMask) -> Result<SamplingMask> {
        if self.lines.dim() != other.lines.dim() {
            return Err(shape_err(format!(
                "mask union of {:?} and {:?}",
                self.lines.dim(),
                other.lines.dim()
            )));
        }
        let mut lines = self.lines.clone();
        lines.zip_mut_with(&other.lines, |a, &b| *a |= b);
        Ok(SamplingMask { lines })
    }

    /// True when all frame columns are identical.
    pub fn is_unified(&self) -> bool {
        let first = self.lines.column(0);
        self.lines.columns().into_iter().all(|c| c == first)
    }

    /// Mask with a single frame, replicated `n_t` times.
    pub fn repeat(frame_lines: &[usize], n_y: usize, n_t: usize) -> Result<Self> {
        Self::from_lines(n_y, &vec![frame_lines.to_vec(); n_t])
    }

    pub fn to_u8(&self) -> Array2<u8> {
        self.lines.mapv(u8::from)
    }

    pub fn fraction(&self) -> f64 {
        let on = self.lines.iter().filter(|&&b| b).count();
        on as f64 / self.lines.len() as f64
    }
}

#[derive(Serialize, Deserialize)]
struct MaskJson {
    n_y: usize,
    n_t: usize,
    lines: Vec<Vec<usize>>,
}

impl Serialize for SamplingMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MaskJson {
            n_y: self.n_y(),
            n_t: self.n_t(),
            lines: (0..self.n_t()).map(|t| self.frame_lines(t)).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SamplingMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = MaskJson::deserialize(deserializer)?;
        if raw.lines.len() != raw.n_t {
            return Err(serde::de::Error::custom(format!(
                "mask lists {} frames but n_t = {}",
                raw.lines.len(),
                raw.n_t
            )));
        }
        SamplingMask::from_lines(raw.n_y, &raw.lines).map_err(serde::de::Error::custom)
    }
}
