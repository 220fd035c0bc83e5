//! Coil sensitivity estimation from the autocalibration lines.
//!
//! Raw profiles are the coil images of the ACS-only k-space divided by their
//! root-sum-of-squares. A classical refinement (identity or Gaussian
//! smoothing) stands where a learned refinement would sit, and the result
//! is normalized so that `Σ_k conj(S^k)·S^k = 1` at every pixel.

use ndarray::{Array4, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::gaussian_smooth;
use crate::forward::ops::coil_images;
use crate::forward::{rss, CenteredFft2, CoilSensitivities, DynamicKSpace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Refinement {
    None,
    GaussianSmooth { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    /// Added to the RSS denominator so zero-signal pixels stay finite.
    pub epsilon_div: f64,
    pub refinement: Refinement,
    /// Give pixels without any coil signal a uniform profile before
    /// normalizing instead of failing.
    pub fill_empty: bool,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            epsilon_div: 1e-12,
            refinement: Refinement::None,
            fill_empty: true,
        }
    }
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_div > 0.0) {
            return Err(Error::Config("epsilon_div must be positive".into()));
        }
        if let Refinement::GaussianSmooth { sigma } = self.refinement {
            if !(sigma > 0.0) {
                return Err(Error::Config("smoothing sigma must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `S̃^k = F⁻¹(ỹ_k) ⊘ (RSS_k F⁻¹(ỹ_k) + ε)` per frame.
pub fn estimate_from_acs(acs_kspace: &DynamicKSpace, epsilon_div: f64) -> Result<CoilSensitivities> {
    let s = acs_kspace.shape();
    for t in 0..s.n_t {
        if acs_kspace.frame(t).iter().all(|v| v.norm_sqr() == 0.0) {
            return Err(Error::EmptyAutocalibration { frame: t });
        }
    }
    let plan = CenteredFft2::new(s.n_x, s.n_y)?;
    let frames: Vec<_> = (0..s.n_t)
        .into_par_iter()
        .map(|t| {
            let mut coils = coil_images(&plan, acs_kspace.frame(t));
            let denom = rss(coils.view());
            for ((x, y, _), v) in coils.indexed_iter_mut() {
                *v /= denom[[x, y]] + epsilon_div;
            }
            coils
        })
        .collect();
    let mut data = Array4::zeros((s.n_x, s.n_y, s.n_c, s.n_t));
    for (t, f) in frames.iter().enumerate() {
        data.index_axis_mut(Axis(3), t).assign(f);
    }
    CoilSensitivities::new(data)
}

pub fn refine(sens: &CoilSensitivities, refinement: Refinement) -> CoilSensitivities {
    match refinement {
        Refinement::None => sens.clone(),
        Refinement::GaussianSmooth { sigma } => {
            let mut out = sens.clone();
            let s = sens.shape();
            for t in 0..s.n_t {
                for k in 0..s.n_c {
                    let plane = sens.data().slice(ndarray::s![.., .., k, t]);
                    let smoothed = gaussian_smooth::<Complex64>(plane, sigma);
                    out.data_mut()
                        .slice_mut(ndarray::s![.., .., k, t])
                        .assign(&smoothed);
                }
            }
            out
        }
    }
}

/// Replaces pixels with `Σ_k |S^k|² = 0` by the uniform profile `1/√n_c`.
pub fn fill_empty(sens: &CoilSensitivities) -> CoilSensitivities {
    let mut out = sens.clone();
    let s = sens.shape();
    let uniform = Complex64::new(1.0 / (s.n_c as f64).sqrt(), 0.0);
    for mut lane in out.data_mut().lanes_mut(Axis(2)) {
        if lane.iter().all(|v| v.norm_sqr() == 0.0) {
            lane.fill(uniform);
        }
    }
    out
}

/// Divides each pixel by `sqrt(Σ_k |S^k|²)`.
pub fn normalize(sens: &CoilSensitivities) -> Result<CoilSensitivities> {
    let s = sens.shape();
    let mut zero = Vec::new();
    let mut count = 0usize;
    for t in 0..s.n_t {
        for x in 0..s.n_x {
            for y in 0..s.n_y {
                let e: f64 = (0..s.n_c)
                    .map(|k| sens.data()[[x, y, k, t]].norm_sqr())
                    .sum();
                if e == 0.0 {
                    count += 1;
                    if zero.len() < 16 {
                        zero.push((x, y, t));
                    }
                }
            }
        }
    }
    if count > 0 {
        return Err(Error::ZeroSensitivity {
            count,
            pixels: zero,
        });
    }
    let mut out = sens.clone();
    for mut lane in out.data_mut().lanes_mut(Axis(2)) {
        let n = lane.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        lane.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Estimate, refine, optionally fill empty pixels, then normalize.
pub fn estimate(acs_kspace: &DynamicKSpace, cfg: &SensitivityConfig) -> Result<CoilSensitivities> {
    cfg.validate()?;
    let raw = estimate_from_acs(acs_kspace, cfg.epsilon_div)?;
    let refined = refine(&raw, cfg.refinement);
    let refined = if cfg.fill_empty { fill_empty(&refined) } else { refined };
    normalize(&refined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::fft2c;
    use ndarray::{Array2, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    /// k-space whose coil images are exactly `imgs[k]`.
    fn kspace_of(imgs: &[Array2<Complex64>]) -> DynamicKSpace {
        let (nx, ny) = imgs[0].dim();
        let mut data = Array4::zeros((nx, ny, imgs.len(), 1));
        for (k, im) in imgs.iter().enumerate() {
            data.slice_mut(ndarray::s![.., .., k, 0]).assign(&fft2c(im).unwrap());
        }
        DynamicKSpace::new(data).unwrap()
    }

    #[test]
    fn single_coil_gives_unit_modulus_with_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let img = Array2::from_shape_fn((6, 6), |_| rand_c(&mut rng) + Complex64::new(2.0, 0.0));
        let s = estimate_from_acs(&kspace_of(&[img.clone()]), 1e-12).unwrap();
        for ((x, y), v) in img.indexed_iter() {
            let e = s.data()[[x, y, 0, 0]];
            assert!((e.norm() - 1.0).abs() < 1e-10);
            assert!((e - v / v.norm()).norm() < 1e-10);
        }
    }

    #[test]
    fn identical_coils_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let img = Array2::from_shape_fn((6, 6), |_| rand_c(&mut rng) + Complex64::new(2.0, 0.0));
        let s = estimate_from_acs(&kspace_of(&[img.clone(), img]), 1e-12).unwrap();
        for x in 0..6 {
            for y in 0..6 {
                let a = s.data()[[x, y, 0, 0]];
                let b = s.data()[[x, y, 1, 0]];
                assert!((a - b).norm() < 1e-12);
                assert!((a.norm() - 1.0 / 2f64.sqrt()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn three_coils_match_pointwise_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let imgs: Vec<_> = (0..3)
            .map(|_| Array2::from_shape_fn((8, 8), |_| rand_c(&mut rng)))
            .collect();
        let y = kspace_of(&imgs);
        let s = estimate_from_acs(&y, 1e-12).unwrap();
        let back: Vec<_> = (0..3)
            .map(|k| crate::forward::ifft2c(&y.data().slice(ndarray::s![.., .., k, 0]).to_owned()).unwrap())
            .collect();
        for x in 0..8 {
            for yy in 0..8 {
                let r: f64 = back.iter().map(|b| b[[x, yy]].norm_sqr()).sum::<f64>().sqrt();
                for k in 0..3 {
                    let expect = back[k][[x, yy]] / (r + 1e-12);
                    assert!((s.data()[[x, yy, k, 0]] - expect).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn empty_acs_frame_is_an_error() {
        let mut data = Array4::from_elem((4, 4, 2, 2), Complex64::new(1.0, 0.0));
        data.slice_mut(ndarray::s![.., .., .., 1]).fill(Complex64::new(0.0, 0.0));
        let y = DynamicKSpace::new(data).unwrap();
        assert!(matches!(
            estimate_from_acs(&y, 1e-12),
            Err(Error::EmptyAutocalibration { frame: 1 })
        ));
    }

    #[test]
    fn refine_identity_and_constant_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = CoilSensitivities::new(Array4::from_shape_fn((5, 7, 2, 2), |_| rand_c(&mut rng))).unwrap();
        assert_eq!(refine(&s, Refinement::None), s);
        let c = CoilSensitivities::new(Array4::from_elem((6, 6, 2, 1), Complex64::new(0.3, -0.4))).unwrap();
        let r = refine(&c, Refinement::GaussianSmooth { sigma: 2.3 });
        assert!(r
            .data()
            .iter()
            .all(|v| (v - Complex64::new(0.3, -0.4)).norm() < 1e-14));
    }

    #[test]
    fn refine_impulse_matches_direct_convolution() {
        let n = 15;
        let mut data = Array4::zeros((n, n, 1, 1));
        data[[7, 7, 0, 0]] = Complex64::new(1.0, 2.0);
        let s = CoilSensitivities::new(data).unwrap();
        let r = refine(&s, Refinement::GaussianSmooth { sigma: 1.0 });
        // Direct 2D oracle: truncated (radius 3) normalized Gaussian weight.
        let w = |d: i32| (-(d * d) as f64 / 2.0).exp();
        let norm: f64 = (-3..=3).map(w).sum();
        for x in 0..n {
            for y in 0..n {
                let (dx, dy) = (x as i32 - 7, y as i32 - 7);
                let expect = if dx.abs() <= 3 && dy.abs() <= 3 {
                    w(dx) * w(dy) / (norm * norm)
                } else {
                    0.0
                };
                let got = r.data()[[x, y, 0, 0]];
                assert!((got - Complex64::new(expect, 2.0 * expect)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn normalize_cases() {
        let two = CoilSensitivities::new(Array4::from_elem((3, 3, 1, 1), Complex64::new(2.0, 0.0))).unwrap();
        let n = normalize(&two).unwrap();
        assert!(n.data().iter().all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let s = CoilSensitivities::new(Array4::from_shape_fn((12, 10, 3, 2), |_| rand_c(&mut rng))).unwrap();
        let n = normalize(&s).unwrap();
        for _ in 0..1000 {
            let (x, y, t) = (rng.random_range(0..12), rng.random_range(0..10), rng.random_range(0..2));
            let e: f64 = (0..3).map(|k| n.data()[[x, y, k, t]].norm_sqr()).sum();
            assert!((e - 1.0).abs() < 1e-10);
        }
        let again = normalize(&n).unwrap();
        for (a, b) in again.data().iter().zip(n.data().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn normalize_reports_zero_pixels() {
        let mut data = Array4::from_elem((4, 4, 2, 1), Complex64::new(1.0, 0.0));
        data.slice_mut(ndarray::s![1, 2, .., 0]).fill(Complex64::new(0.0, 0.0));
        let s = CoilSensitivities::new(data).unwrap();
        match normalize(&s) {
            Err(Error::ZeroSensitivity { count, pixels }) => {
                assert_eq!(count, 1);
                assert_eq!(pixels, vec![(1, 2, 0)]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let filled = normalize(&fill_empty(&s)).unwrap();
        assert!(filled.is_normalized(1e-12));
    }
}
