//! Zero-filled reconstruction and an unrolled ADMM solver with the
//! structure of vSHARP, using fixed proximal denoisers.
//!
//! Each of the `T` rounds performs
//! `z ← prox(x + m/λ)`, then `T_x` gradient steps on
//! `½‖T(x) − y‖² + λ‖x − z + m/λ‖²`, then `m ← m + λ(x − z)`.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::forward::{
    CenteredFft2, CoilSensitivities, ComplexImage, DynamicKSpace, EncodingOperator, RealImage,
    SamplingMask,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Denoiser {
    Identity,
    TvProx { iters: usize, weight: f64 },
    SoftThreshold { weight: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    /// ADMM rounds `T`.
    pub iterations: usize,
    /// Gradient steps `T_x` per data-consistency update.
    pub x_steps: usize,
    /// Per-round `λ^t`; empty means 1.0 for every round.
    pub lambdas: Vec<f64>,
    pub x_step_size: f64,
    pub denoiser: Denoiser,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            x_steps: 6,
            lambdas: Vec::new(),
            x_step_size: 0.4,
            denoiser: Denoiser::TvProx {
                iters: 20,
                weight: 0.005,
            },
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("reconstruction: {m}")));
        if self.iterations > 0 && self.x_steps == 0 {
            return bad("x_steps must be at least 1 when iterations > 0");
        }
        if !self.lambdas.is_empty() && self.lambdas.len() != self.iterations {
            return bad("lambdas must have one entry per iteration");
        }
        if self.lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad("lambdas must be positive");
        }
        if !(self.x_step_size > 0.0) {
            return bad("x_step_size must be positive");
        }
        match self.denoiser {
            Denoiser::TvProx { weight, .. } | Denoiser::SoftThreshold { weight } if !(weight >= 0.0) => {
                bad("denoiser weight must be non-negative")
            }
            _ => Ok(()),
        }
    }

    pub fn lambda(&self, t: usize) -> f64 {
        self.lambdas.get(t).copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub x: ComplexImage,
    pub z: ComplexImage,
    pub m: ComplexImage,
}

/// Coil-combined inverse FFT of (already masked) k-space.
pub fn zero_filled(kspace: &DynamicKSpace, sens: &CoilSensitivities) -> Result<ComplexImage> {
    let s = kspace.shape();
    if s != sens.shape() {
        return Err(shape_err(format!("k-space {s:?} vs sensitivities {:?}", sens.shape())));
    }
    let plan = CenteredFft2::new(s.n_x, s.n_y)?;
    let frames: Vec<Array2<Complex64>> = (0..s.n_t)
        .into_par_iter()
        .map(|t| {
            let coils = crate::forward::ops::coil_images(&plan, kspace.frame(t));
            crate::forward::reduce_coils(coils.view(), sens.frame(t)).expect("shapes checked")
        })
        .collect();
    ComplexImage::from_frames(&frames)
}

pub fn admm_init(kspace: &DynamicKSpace, sens: &CoilSensitivities) -> Result<AdmmState> {
    let x = zero_filled(kspace, sens)?;
    let (n_x, n_y, n_t) = x.dims();
    Ok(AdmmState {
        z: x.clone(),
        m: ComplexImage::zeros(n_x, n_y, n_t),
        x,
    })
}

fn soft(v: f64, thr: f64) -> f64 {
    v.signum() * (v.abs() - thr).max(0.0)
}

/// Chambolle's dual projection for `argmin_z ½‖z − v‖² + θ·TV(z)`, with the
/// real and imaginary channels coupled in the isotropic TV norm.
pub fn tv_prox(v: ArrayView2<'_, Complex64>, theta: f64, iters: usize) -> Array2<Complex64> {
    if theta == 0.0 || iters == 0 {
        return v.to_owned();
    }
    let (n_x, n_y) = v.dim();
    let tau = 0.125;
    let zero = Complex64::new(0.0, 0.0);
    let mut px = Array2::from_elem((n_x, n_y), zero);
    let mut py = Array2::from_elem((n_x, n_y), zero);
    let div = |px: &Array2<Complex64>, py: &Array2<Complex64>| {
        Array2::from_shape_fn((n_x, n_y), |(x, y)| {
            let dx = if x + 1 < n_x { px[[x, y]] } else { zero } - if x > 0 { px[[x - 1, y]] } else { zero };
            let dy = if y + 1 < n_y { py[[x, y]] } else { zero } - if y > 0 { py[[x, y - 1]] } else { zero };
            dx + dy
        })
    };
    for _ in 0..iters {
        let w = div(&px, &py) - v.mapv(|c| c / theta);
        for x in 0..n_x {
            for y in 0..n_y {
                let gx = if x + 1 < n_x { w[[x + 1, y]] - w[[x, y]] } else { zero };
                let gy = if y + 1 < n_y { w[[x, y + 1]] - w[[x, y]] } else { zero };
                let norm = (gx.norm_sqr() + gy.norm_sqr()).sqrt();
                let d = 1.0 + tau * norm;
                px[[x, y]] = (px[[x, y]] + gx * tau) / d;
                py[[x, y]] = (py[[x, y]] + gy * tau) / d;
            }
        }
    }
    &v - &div(&px, &py).mapv(|c| c * theta)
}

fn denoise(v: &Array3<Complex64>, lambda: f64, denoiser: Denoiser) -> Array3<Complex64> {
    match denoiser {
        Denoiser::Identity => v.clone(),
        Denoiser::SoftThreshold { weight } => {
            let thr = weight / lambda;
            v.mapv(|c| Complex64::new(soft(c.re, thr), soft(c.im, thr)))
        }
        Denoiser::TvProx { iters, weight } => {
            let theta = weight / lambda;
            let frames: Vec<_> = (0..v.shape()[2])
                .into_par_iter()
                .map(|t| tv_prox(v.index_axis(Axis(2), t), theta, iters))
                .collect();
            let mut out = v.clone();
            for (t, f) in frames.into_iter().enumerate() {
                out.index_axis_mut(Axis(2), t).assign(&f);
            }
            out
        }
    }
}

/// `z = prox(x + m/λ)`.
pub fn z_step(state: &AdmmState, lambda: f64, denoiser: Denoiser) -> ComplexImage {
    let arg = state.x.data() + &state.m.data().mapv(|c| c / lambda);
    ComplexImage::from_raw(denoise(&arg, lambda, denoiser))
}

/// Gradient of the x-step objective at `x`.
pub fn x_step_gradient(
    op: &EncodingOperator<'_>,
    x: &ComplexImage,
    z_new: &ComplexImage,
    m: &ComplexImage,
    lambda: f64,
    kspace: &DynamicKSpace,
) -> Result<ComplexImage> {
    let dc = op.residual_gradient(x, kspace)?;
    let mut g = dc.into_inner();
    ndarray::Zip::from(&mut g)
        .and(x.data())
        .and(z_new.data())
        .and(m.data())
        .for_each(|g, &x, &z, &m| *g += (x - z + m / lambda) * (2.0 * lambda));
    Ok(ComplexImage::from_raw(g))
}

/// `½‖T(x) − y‖² + λ‖x − z + m/λ‖²`.
pub fn x_step_objective(
    op: &EncodingOperator<'_>,
    x: &ComplexImage,
    z_new: &ComplexImage,
    m: &ComplexImage,
    lambda: f64,
    kspace: &DynamicKSpace,
) -> Result<f64> {
    let misfit = op.data_misfit(x, kspace)?;
    let prox: f64 = x
        .data()
        .iter()
        .zip(z_new.data().iter())
        .zip(m.data().iter())
        .map(|((&x, &z), &m)| (x - z + m / lambda).norm_sqr())
        .sum();
    Ok(misfit + lambda * prox)
}

/// `steps` gradient-descent updates of `x` starting from `state.x`.
#[allow(clippy::too_many_arguments)]
pub fn x_step(
    state: &AdmmState,
    z_new: &ComplexImage,
    lambda: f64,
    kspace: &DynamicKSpace,
    sens: &CoilSensitivities,
    mask: &SamplingMask,
    steps: usize,
    step_size: f64,
) -> Result<ComplexImage> {
    let op = EncodingOperator::new(sens, mask)?;
    let mut x = state.x.clone();
    for _ in 0..steps {
        let g = x_step_gradient(&op, &x, z_new, &state.m, lambda, kspace)?;
        x.data_mut().zip_mut_with(g.data(), |a, &b| *a -= b * step_size);
    }
    Ok(x)
}

/// `m + λ(x − z)`.
pub fn m_step(state: &AdmmState, z_new: &ComplexImage, x_new: &ComplexImage, lambda: f64) -> ComplexImage {
    let mut m = state.m.data().clone();
    ndarray::Zip::from(&mut m)
        .and(x_new.data())
        .and(z_new.data())
        .for_each(|m, &x, &z| *m += (x - z) * lambda);
    ComplexImage::from_raw(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub complex: ComplexImage,
    pub magnitude: RealImage,
}

/// Runs `T` ADMM rounds from the zero-filled start.
pub fn vsharp_reconstruct(
    kspace: &DynamicKSpace,
    sens: &CoilSensitivities,
    mask: &SamplingMask,
    cfg: &ReconConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let masked = crate::forward::apply_mask(kspace, mask)?;
    let mut state = admm_init(&masked, sens)?;
    for t in 0..cfg.iterations {
        let lambda = cfg.lambda(t);
        let z = z_step(&state, lambda, cfg.denoiser);
        let x = x_step(&state, &z, lambda, &masked, sens, mask, cfg.x_steps, cfg.x_step_size)?;
        let m = m_step(&state, &z, &x, lambda);
        state = AdmmState { x, z, m };
    }
    if state.x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reconstruction"));
    }
    Ok(Reconstruction {
        magnitude: state.x.abs(),
        complex: state.x,
    })
}

/// Sum over frames of the masked k-space residual norm.
pub fn data_consistency_residual(
    x: &ComplexImage,
    kspace: &DynamicKSpace,
    sens: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<f64> {
    let op = EncodingOperator::new(sens, mask)?;
    let masked = crate::forward::apply_mask(kspace, mask)?;
    let tx = op.forward(x)?;
    let r: f64 = tx
        .data()
        .iter()
        .zip(masked.data().iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(r.sqrt())
}
