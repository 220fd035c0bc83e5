//! Centered, orthonormal 2D FFT.
//!
//! Both directions apply `ifftshift` before and `fftshift` after the
//! transform and scale by `1/sqrt(n_x·n_y)`, so the DC bin sits at index
//! `(n_x/2, n_y/2)` and the transform is unitary.

use std::sync::Arc;

use ndarray::{Array2, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::types::ComplexImage;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Forward,
    Inverse,
}

/// Planned centered transform for one `(n_x, n_y)` grid.
#[derive(Clone)]
pub struct CenteredFft2 {
    n_x: usize,
    n_y: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CenteredFft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CenteredFft2")
            .field("n_x", &self.n_x)
            .field("n_y", &self.n_y)
            .finish()
    }
}

impl CenteredFft2 {
    pub fn new(n_x: usize, n_y: usize) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(shape_err(format!("FFT of a {n_x}x{n_y} grid")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_x,
            n_y,
            fwd_x: planner.plan_fft_forward(n_x),
            inv_x: planner.plan_fft_inverse(n_x),
            fwd_y: planner.plan_fft_forward(n_y),
            inv_y: planner.plan_fft_inverse(n_y),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_x, self.n_y)
    }

    pub fn forward(&self, frame: &mut ArrayViewMut2<'_, Complex64>) {
        self.apply(frame, Direction::Forward);
    }

    pub fn inverse(&self, frame: &mut ArrayViewMut2<'_, Complex64>) {
        self.apply(frame, Direction::Inverse);
    }

    /// Centered orthonormal 1D inverse transform along the line axis only.
    pub fn inverse_lines(&self, lane: &mut [Complex64]) {
        assert_eq!(lane.len(), self.n_y);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_y];
        centered_1d(lane.iter_mut(), &mut buf, self.inv_y.as_ref());
    }

    /// Centered orthonormal 1D inverse transform along the readout axis only.
    pub fn inverse_readout(&self, lane: &mut [Complex64]) {
        assert_eq!(lane.len(), self.n_x);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_x];
        centered_1d(lane.iter_mut(), &mut buf, self.inv_x.as_ref());
    }

    fn apply(&self, frame: &mut ArrayViewMut2<'_, Complex64>, dir: Direction) {
        assert_eq!(
            frame.dim(),
            (self.n_x, self.n_y),
            "frame does not match the planned FFT grid"
        );
        let (fx, fy) = match dir {
            Direction::Forward => (&self.fwd_x, &self.fwd_y),
            Direction::Inverse => (&self.inv_x, &self.inv_y),
        };
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_x.max(self.n_y)];
        for lane in frame.lanes_mut(Axis(0)) {
            centered_1d(lane.into_iter(), &mut buf[..self.n_x], fx.as_ref());
        }
        for lane in frame.lanes_mut(Axis(1)) {
            centered_1d(lane.into_iter(), &mut buf[..self.n_y], fy.as_ref());
        }
    }
}

fn centered_1d<'a>(
    lane: impl Iterator<Item = &'a mut Complex64>,
    buf: &mut [Complex64],
    fft: &dyn Fft<f64>,
) {
    let n = buf.len();
    let half = n / 2;
    let mut refs: Vec<&mut Complex64> = lane.collect();
    debug_assert_eq!(refs.len(), n);
    // ifftshift
    for (k, slot) in buf.iter_mut().enumerate() {
        *slot = *refs[(k + half) % n];
    }
    fft.process(buf);
    let scale = 1.0 / (n as f64).sqrt();
    // fftshift
    for (k, r) in refs.iter_mut().enumerate() {
        **r = buf[(k + n - half) % n] * scale;
    }
}

pub fn fft2c(frame: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let (n_x, n_y) = frame.dim();
    let plan = CenteredFft2::new(n_x, n_y)?;
    let mut out = frame.clone();
    plan.forward(&mut out.view_mut());
    Ok(out)
}

pub fn ifft2c(frame: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let (n_x, n_y) = frame.dim();
    let plan = CenteredFft2::new(n_x, n_y)?;
    let mut out = frame.clone();
    plan.inverse(&mut out.view_mut());
    Ok(out)
}

/// Frame-wise centered orthonormal FFT of an image sequence.
pub fn fft2_centered(img: &ComplexImage) -> Result<ComplexImage> {
    let plan = CenteredFft2::new(img.n_x(), img.n_y())?;
    let mut out = img.clone();
    for t in 0..out.n_t() {
        plan.forward(&mut out.frame_mut(t));
    }
    Ok(out)
}

pub fn ifft2_centered(img: &ComplexImage) -> Result<ComplexImage> {
    let plan = CenteredFft2::new(img.n_x(), img.n_y())?;
    let mut out = img.clone();
    for t in 0..out.n_t() {
        plan.inverse(&mut out.frame_mut(t));
    }
    Ok(out)
}
