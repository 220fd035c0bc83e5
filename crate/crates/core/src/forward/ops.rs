use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use super::fft::CenteredFft2;
use super::types::{CoilSensitivities, ComplexImage, DynamicKSpace, RealImage, SamplingMask};
use crate::error::{shape_err, Error, Result};

/// Root-sum-of-squares over the coil axis of `[x, y_line, coil]` data.
pub fn rss(coil_images: ArrayView3<'_, Complex64>) -> Array2<f64> {
    coil_images.map_axis(Axis(2), |lane| {
        lane.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    })
}

/// `RSS ∘ F⁻¹` applied frame by frame.
pub fn rss_image(kspace: &DynamicKSpace) -> RealImage {
    let s = kspace.shape();
    let plan = CenteredFft2::new(s.n_x, s.n_y).expect("k-space dims are positive");
    let frames: Vec<Array2<f64>> = (0..s.n_t)
        .into_par_iter()
        .map(|t| rss(coil_images(&plan, kspace.frame(t)).view()))
        .collect();
    RealImage::from_frames(&frames).expect("frames share a shape")
}

/// Inverse FFT of each coil of one frame.
pub(crate) fn coil_images(plan: &CenteredFft2, frame: ArrayView3<'_, Complex64>) -> Array3<Complex64> {
    let mut out = frame.to_owned();
    for k in 0..out.shape()[2] {
        plan.inverse(&mut out.index_axis_mut(Axis(2), k));
    }
    out
}

/// `C_S`: splits a single-channel frame into coil images `S^k ⊙ image`.
pub fn expand_coils(
    image: ArrayView2<'_, Complex64>,
    sens: ArrayView3<'_, Complex64>,
) -> Result<Array3<Complex64>> {
    let (n_x, n_y, n_c) = sens.dim();
    if image.dim() != (n_x, n_y) {
        return Err(shape_err(format!(
            "image {:?} vs sensitivities {:?}",
            image.dim(),
            (n_x, n_y)
        )));
    }
    let mut out = Array3::zeros((n_x, n_y, n_c));
    for k in 0..n_c {
        Zip::from(out.index_axis_mut(Axis(2), k))
            .and(sens.index_axis(Axis(2), k))
            .and(image)
            .for_each(|o, &s, &v| *o = s * v);
    }
    Ok(out)
}

/// `R_S`: coil combination `Σ_k conj(S^k) ⊙ v_k`, the adjoint of [`expand_coils`].
pub fn reduce_coils(
    coil_images: ArrayView3<'_, Complex64>,
    sens: ArrayView3<'_, Complex64>,
) -> Result<Array2<Complex64>> {
    if coil_images.dim() != sens.dim() {
        return Err(shape_err(format!(
            "coil images {:?} vs sensitivities {:?}",
            coil_images.dim(),
            sens.dim()
        )));
    }
    let (n_x, n_y, n_c) = sens.dim();
    let mut out = Array2::zeros((n_x, n_y));
    for k in 0..n_c {
        Zip::from(&mut out)
            .and(sens.index_axis(Axis(2), k))
            .and(coil_images.index_axis(Axis(2), k))
            .for_each(|o, &s, &v| *o += s.conj() * v);
    }
    Ok(out)
}

/// Zeroes every sample whose phase-encode line is not acquired in its frame.
pub fn apply_mask(kspace: &DynamicKSpace, mask: &SamplingMask) -> Result<DynamicKSpace> {
    let s = kspace.shape();
    check_mask(mask, s.n_y, s.n_t)?;
    let mut data = kspace.data().clone();
    for t in 0..s.n_t {
        for y in 0..s.n_y {
            if !mask.is_set(y, t) {
                data.slice_mut(ndarray::s![.., y, .., t])
                    .fill(Complex64::new(0.0, 0.0));
            }
        }
    }
    Ok(DynamicKSpace::from_raw(data))
}

fn check_mask(mask: &SamplingMask, n_y: usize, n_t: usize) -> Result<()> {
    if mask.n_y() != n_y || mask.n_t() != n_t {
        return Err(shape_err(format!(
            "mask is {}x{} (lines x frames), data needs {n_y}x{n_t}",
            mask.n_y(),
            mask.n_t()
        )));
    }
    Ok(())
}

/// The per-frame encoding `T = M ∘ F ∘ C_S` and its adjoint `C_S* ∘ F⁻¹ ∘ M`.
#[derive(Debug, Clone)]
pub struct EncodingOperator<'a> {
    sens: &'a CoilSensitivities,
    mask: &'a SamplingMask,
    plan: CenteredFft2,
}

impl<'a> EncodingOperator<'a> {
    pub fn new(sens: &'a CoilSensitivities, mask: &'a SamplingMask) -> Result<Self> {
        let s = sens.shape();
        check_mask(mask, s.n_y, s.n_t)?;
        Ok(Self {
            sens,
            mask,
            plan: CenteredFft2::new(s.n_x, s.n_y)?,
        })
    }

    /// Like [`EncodingOperator::new`] but rejects sensitivities whose
    /// `Σ_k |S^k|²` deviates from one by more than `tol` anywhere.
    pub fn validated(sens: &'a CoilSensitivities, mask: &'a SamplingMask, tol: f64) -> Result<Self> {
        let deviation = sens.normalization_deviation();
        if deviation > tol {
            return Err(Error::NotNormalized { deviation });
        }
        Self::new(sens, mask)
    }

    pub fn sensitivities(&self) -> &CoilSensitivities {
        self.sens
    }

    pub fn mask(&self) -> &SamplingMask {
        self.mask
    }

    fn check_image(&self, x: &ComplexImage) -> Result<()> {
        let s = self.sens.shape();
        if x.dims() != (s.n_x, s.n_y, s.n_t) {
            return Err(shape_err(format!(
                "image {:?} vs operator {:?}",
                x.dims(),
                (s.n_x, s.n_y, s.n_t)
            )));
        }
        Ok(())
    }

    fn check_kspace(&self, y: &DynamicKSpace) -> Result<()> {
        if y.shape() != self.sens.shape() {
            return Err(shape_err(format!(
                "k-space {:?} vs operator {:?}",
                y.shape(),
                self.sens.shape()
            )));
        }
        Ok(())
    }

    fn forward_frame(&self, x: ArrayView2<'_, Complex64>, t: usize) -> Array3<Complex64> {
        let mut coils = expand_coils(x, self.sens.frame(t)).expect("shapes checked");
        for k in 0..coils.shape()[2] {
            let mut c = coils.index_axis_mut(Axis(2), k);
            self.plan.forward(&mut c);
            for (y, mut line) in c.axis_iter_mut(Axis(1)).enumerate() {
                if !self.mask.is_set(y, t) {
                    line.fill(Complex64::new(0.0, 0.0));
                }
            }
        }
        coils
    }

    fn adjoint_frame(&self, y: ArrayView3<'_, Complex64>, t: usize) -> Array2<Complex64> {
        let mut coils = y.to_owned();
        for k in 0..coils.shape()[2] {
            let mut c = coils.index_axis_mut(Axis(2), k);
            for (l, mut line) in c.axis_iter_mut(Axis(1)).enumerate() {
                if !self.mask.is_set(l, t) {
                    line.fill(Complex64::new(0.0, 0.0));
                }
            }
            self.plan.inverse(&mut c);
        }
        reduce_coils(coils.view(), self.sens.frame(t)).expect("shapes checked")
    }

    pub fn forward(&self, x: &ComplexImage) -> Result<DynamicKSpace> {
        self.check_image(x)?;
        let s = self.sens.shape();
        let frames: Vec<Array3<Complex64>> = (0..s.n_t)
            .into_par_iter()
            .map(|t| self.forward_frame(x.frame(t), t))
            .collect();
        let mut data = Array4::zeros((s.n_x, s.n_y, s.n_c, s.n_t));
        for (t, f) in frames.iter().enumerate() {
            data.index_axis_mut(Axis(3), t).assign(f);
        }
        Ok(DynamicKSpace::from_raw(data))
    }

    pub fn adjoint(&self, y: &DynamicKSpace) -> Result<ComplexImage> {
        self.check_kspace(y)?;
        let s = self.sens.shape();
        let frames: Vec<Array2<Complex64>> = (0..s.n_t)
            .into_par_iter()
            .map(|t| self.adjoint_frame(y.frame(t), t))
            .collect();
        ComplexImage::from_frames(&frames)
    }

    /// `T*(T(x) − y)`, the gradient of `½‖T(x) − y‖²`.
    pub fn residual_gradient(&self, x: &ComplexImage, y: &DynamicKSpace) -> Result<ComplexImage> {
        self.check_image(x)?;
        self.check_kspace(y)?;
        let s = self.sens.shape();
        let frames: Vec<Array2<Complex64>> = (0..s.n_t)
            .into_par_iter()
            .map(|t| {
                let mut r = self.forward_frame(x.frame(t), t);
                r -= &y.frame(t);
                self.adjoint_frame(r.view(), t)
            })
            .collect();
        ComplexImage::from_frames(&frames)
    }

    /// `½ Σ_τ ‖T(x_τ) − y_τ‖²`.
    pub fn data_misfit(&self, x: &ComplexImage, y: &DynamicKSpace) -> Result<f64> {
        let tx = self.forward(x)?;
        self.check_kspace(y)?;
        let mut acc = 0.0;
        for t in 0..y.shape().n_t {
            for l in 0..y.shape().n_y {
                if !self.mask.is_set(l, t) {
                    // Unacquired samples of y are treated as zero.
                    let lane = y.data().slice(ndarray::s![.., l, .., t]);
                    acc += lane.iter().map(|v| v.norm_sqr()).sum::<f64>();
                    continue;
                }
                let a = tx.data().slice(ndarray::s![.., l, .., t]);
                let b = y.data().slice(ndarray::s![.., l, .., t]);
                acc += a
                    .iter()
                    .zip(b.iter())
                    .map(|(p, q)| (p - q).norm_sqr())
                    .sum::<f64>();
            }
        }
        Ok(0.5 * acc)
    }
}

pub fn forward_operator(
    x: &ComplexImage,
    sens: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<DynamicKSpace> {
    EncodingOperator::new(sens, mask)?.forward(x)
}

pub fn adjoint_operator(
    y: &DynamicKSpace,
    sens: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<ComplexImage> {
    EncodingOperator::new(sens, mask)?.adjoint(y)
}

/// `⟨a, b⟩ = Σ conj(a)·b`.
pub fn inner<'a, I>(a: I, b: I) -> Complex64
where
    I: IntoIterator<Item = &'a Complex64>,
{
    a.into_iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |acc, (p, q)| acc + p.conj() * q)
}
