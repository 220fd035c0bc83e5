//! Image-domain padding, percentile normalization and center cropping.

use ndarray::{s, Array4, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::forward::{CenteredFft2, DynamicImage, DynamicKSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Target `(n_x, n_y)` for image-domain zero padding.
    pub pad_to: Option<[usize; 2]>,
    /// Percentile of the ACS magnitudes used as the scale; `None` disables
    /// normalization.
    pub normalize_percentile: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { pad_to: None, normalize_percentile: Some(99.5) }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(q) = self.normalize_percentile {
            if !(q > 0.0 && q <= 100.0) {
                return Err(Error::Config(format!("percentile {q} outside (0, 100]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    /// Crop size as fractions of the pre-padding `(n_x, n_y)`.
    pub crop: [f64; 2],
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { crop: [1.0 / 3.0, 0.5] }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config(format!("crop fractions {:?} must lie in (0, 1]", self.crop)));
        }
        Ok(())
    }
}

/// Zero-pads every coil image to `(p_x, p_y)` and transforms back. The
/// original grid starts at `p/2 - n/2` so both centers coincide.
pub fn pad_kspace(kspace: &DynamicKSpace, pad_to: [usize; 2]) -> Result<DynamicKSpace> {
    let sh = kspace.shape();
    let [p_x, p_y] = pad_to;
    if p_x < sh.n_x || p_y < sh.n_y {
        return Err(Error::InvalidInput(format!(
            "pad target {p_x}x{p_y} is smaller than the data {}x{}",
            sh.n_x, sh.n_y
        )));
    }
    if (p_x, p_y) == (sh.n_x, sh.n_y) {
        return Ok(kspace.clone());
    }
    let (ox, oy) = (p_x / 2 - sh.n_x / 2, p_y / 2 - sh.n_y / 2);
    let small = CenteredFft2::new(sh.n_x, sh.n_y)?;
    let big = CenteredFft2::new(p_x, p_y)?;
    let mut out = Array4::<Complex64>::zeros((p_x, p_y, sh.n_c, sh.n_t));
    for t in 0..sh.n_t {
        for k in 0..sh.n_c {
            let mut img = kspace.data().slice(s![.., .., k, t]).to_owned();
            small.inverse(&mut img.view_mut());
            let mut dst = out.slice_mut(s![.., .., k, t]);
            dst.slice_mut(s![ox..ox + sh.n_x, oy..oy + sh.n_y]).assign(&img);
            big.forward(&mut dst);
        }
    }
    DynamicKSpace::new(out)
}

/// Percentile with linear interpolation between order statistics at
/// position `q/100·(N-1)`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("percentile of an empty set".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("percentile input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Percentile of `|y|` over the given lines of every readout, coil and frame.
pub fn normalization_scale(kspace: &DynamicKSpace, lines: &[usize], q: f64) -> Result<f64> {
    if lines.is_empty() {
        return Err(Error::EmptyAutocalibration { frame: 0 });
    }
    let mags: Vec<f64> = lines
        .iter()
        .flat_map(|&l| kspace.data().index_axis(Axis(1), l).iter().map(|v| v.norm()).collect::<Vec<_>>())
        .collect();
    let s = percentile(&mags, q)?;
    if s <= 0.0 {
        return Err(Error::InvalidInput("normalization scale is zero".into()));
    }
    Ok(s)
}

pub fn scale_kspace(kspace: &DynamicKSpace, factor: f64) -> DynamicKSpace {
    DynamicKSpace::new(kspace.data().mapv(|v| v * factor)).expect("shape is unchanged")
}

/// Crop of `⌊base·f⌋` pixels per axis, centered with ties toward the lower
/// index.
pub fn postprocess_crop<T: Clone>(
    img: &DynamicImage<T>,
    fractions: [f64; 2],
    base: (usize, usize),
) -> Result<DynamicImage<T>> {
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidInput(format!("crop fractions {fractions:?} must lie in (0, 1]")));
    }
    let size = |n: usize, f: f64| ((n as f64 * f + 1e-9).floor() as usize).max(1);
    let (c_x, c_y) = (size(base.0, fractions[0]), size(base.1, fractions[1]));
    if c_x > img.n_x() || c_y > img.n_y() {
        return Err(shape_err(format!(
            "crop {c_x}x{c_y} exceeds image {}x{}",
            img.n_x(),
            img.n_y()
        )));
    }
    let (x0, y0) = ((img.n_x() - c_x) / 2, (img.n_y() - c_y) / 2);
    DynamicImage::new(img.data().slice(s![x0..x0 + c_x, y0..y0 + c_y, ..]).to_owned())
}
