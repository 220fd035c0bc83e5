//! Deformation fields, scaling-and-squaring warps and classical registration.
//!
//! Fields map reference coordinates into the moving frame: warping applies
//! `I'(x) = I(x + φ(x))` where `φ` is the field integrated over
//! [`WarpConfig::integration_steps`] scaling-and-squaring steps. Solvers
//! estimate a raw displacement and, when integration is enabled, return the
//! field whose integral reproduces it, so that warping with the same
//! configuration aligns the moving frame to the reference.

mod field;
pub mod pyramid;
mod solvers;

use ndarray::{Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::forward::RealImage;

pub use field::{
    field_log, integrate_euler, integrate_field, mean_endpoint_error, smoothness_loss, warp,
    warp_displacement, warp_edge, warp_sequence, DeformationField, WarpConfig,
};
pub use solvers::{demons, demons_multilevel, optical_flow_ilk, optical_flow_tvl1, Tvl1Params};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RegMethodConfig {
    Demons {
        iterations: usize,
        sigma: f64,
        #[serde(default = "demons_levels")]
        levels: usize,
    },
    OpticalFlowIlk {
        radius: usize,
        warps: usize,
        #[serde(default = "yes")]
        prefilter: bool,
    },
    OpticalFlowTvl1 {
        attachment: f64,
        tightness: f64,
        warps: usize,
        iterations: usize,
        tol: f64,
    },
}

fn demons_levels() -> usize {
    3
}

fn yes() -> bool {
    true
}

impl Default for RegMethodConfig {
    fn default() -> Self {
        Self::demons()
    }
}

impl RegMethodConfig {
    pub fn demons() -> Self {
        Self::Demons {
            iterations: 10,
            sigma: 1.0,
            levels: demons_levels(),
        }
    }

    pub fn ilk() -> Self {
        Self::OpticalFlowIlk {
            radius: 5,
            warps: 3,
            prefilter: true,
        }
    }

    pub fn tvl1() -> Self {
        Self::OpticalFlowTvl1 {
            attachment: 15.0,
            tightness: 0.3,
            warps: 3,
            iterations: 5,
            tol: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Demons { iterations, sigma, levels } => iterations > 0 && sigma >= 0.0 && levels > 0,
            Self::OpticalFlowIlk { radius, warps, .. } => radius > 0 && warps > 0,
            Self::OpticalFlowTvl1 { attachment, tightness, warps, iterations, tol } => {
                attachment > 0.0 && tightness > 0.0 && warps > 0 && iterations > 0 && tol >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid registration parameters {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub method: RegMethodConfig,
    pub warp: WarpConfig,
}

/// Field aligning `moving` to `reference` under `cfg.warp`.
pub fn register_pair(
    moving: ArrayView2<'_, f64>,
    reference: ArrayView2<'_, f64>,
    cfg: &RegistrationConfig,
) -> Result<Array3<f64>> {
    cfg.method.validate()?;
    if moving.dim() != reference.dim() {
        return Err(shape_err(format!(
            "moving {:?} vs reference {:?}",
            moving.dim(),
            reference.dim()
        )));
    }
    if moving.iter().chain(reference.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("registration input"));
    }
    let d = match cfg.method {
        RegMethodConfig::Demons { iterations, sigma, levels } => {
            demons_multilevel(moving, reference, iterations, sigma, levels)
        }
        RegMethodConfig::OpticalFlowIlk { radius, warps, prefilter } => {
            optical_flow_ilk(moving, reference, radius, warps, prefilter)
        }
        RegMethodConfig::OpticalFlowTvl1 { attachment, tightness, warps, iterations, tol } => {
            let p = Tvl1Params { attachment, tightness, warps, iterations, tol, prefilter: false };
            optical_flow_tvl1(moving, reference, &p)
        }
    };
    Ok(field_log(d.view(), cfg.warp.integration_steps))
}

/// Registers every frame of `moving` to `reference`, in parallel.
pub fn register_sequence(
    moving: &RealImage,
    reference: ArrayView2<'_, f64>,
    cfg: &RegistrationConfig,
) -> Result<DeformationField> {
    let frames: Vec<_> = (0..moving.n_t())
        .into_par_iter()
        .map(|t| register_pair(moving.frame(t), reference, cfg))
        .collect::<Result<_>>()?;
    DeformationField::from_frames(&frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Axis};

    fn blob(n: usize, cx: f64, cy: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(x, y)| {
            let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (-r2 / 50.0).exp()
        })
    }

    #[test]
    fn sequence_of_shifts_and_delegation() {
        let n = 40;
        let r = blob(n, 20.0, 20.0);
        let frames: Vec<_> = (0..3).map(|t| blob(n, 20.0 + t as f64, 20.0)).collect();
        let seq = RealImage::from_frames(&frames).unwrap();
        let cfg = RegistrationConfig::default();
        let f = register_sequence(&seq, r.view(), &cfg).unwrap();
        assert_eq!(f.n_t(), 3);
        let mask = r.mapv(|v| v > 0.3);
        for t in 0..3 {
            let d = integrate_field(f.frame(t), cfg.warp.integration_steps);
            let u: Vec<f64> = d
                .index_axis(Axis(0), 0)
                .indexed_iter()
                .filter(|(ix, _)| mask[*ix])
                .map(|(_, &v)| v)
                .collect();
            let mean = u.iter().sum::<f64>() / u.len() as f64;
            assert!((mean - t as f64).abs() < 0.4, "frame {t}: {mean}");
        }
        let single = RealImage::from_frames(&frames[2..]).unwrap();
        let fs = register_sequence(&single, r.view(), &cfg).unwrap();
        assert_eq!(fs.frame(0), register_pair(frames[2].view(), r.view(), &cfg).unwrap());
    }

    #[test]
    fn warp_with_returned_field_aligns() {
        let n = 40;
        let r = blob(n, 20.0, 20.0);
        let m = blob(n, 22.0, 19.0);
        let cfg = RegistrationConfig::default();
        let v = register_pair(m.view(), r.view(), &cfg).unwrap();
        let (w, _) = warp(m.view(), v.view(), &cfg.warp).unwrap();
        let before: f64 = (&m - &r).mapv(|e| e * e).sum();
        let after: f64 = (&w - &r).mapv(|e| e * e).sum();
        assert!(after < 0.1 * before, "{after} vs {before}");
    }

    #[test]
    fn rejects_bad_input() {
        let a = Array2::<f64>::zeros((8, 8));
        let mut b = a.clone();
        b[[1, 1]] = f64::NAN;
        let cfg = RegistrationConfig::default();
        assert!(matches!(register_pair(b.view(), a.view(), &cfg), Err(Error::NonFinite(_))));
        assert!(register_pair(a.view(), Array2::zeros((8, 7)).view(), &cfg).is_err());
        let bad = RegistrationConfig { method: RegMethodConfig::Demons { iterations: 0, sigma: 1.0, levels: 1 }, ..cfg };
        assert!(matches!(register_pair(a.view(), a.view(), &bad), Err(Error::Config(_))));
    }
}
