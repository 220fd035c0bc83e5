//! Synthetic dynamic multi-coil phantoms with known ground truth.
//!
//! Objects are sums of smooth Gaussian ellipses in normalized coordinates
//! (`[-1, 1]` across each axis). Moving frames are the reference deformed by
//! an analytic motion so that `moving_τ(x + d_τ(x)) = reference(x)` holds
//! exactly for the returned raw displacements `d_τ`.

use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    forward_operator, CoilSensitivities, ComplexImage, DynamicKSpace, RealImage, SamplingMask,
};
use crate::registration::DeformationField;
use crate::sensitivity::normalize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    Static,
    /// Every moving frame is the reference shifted by `(dx, dy)` pixels.
    Translation { dx: f64, dy: f64 },
    /// Frame `τ` is the reference scaled about `center` (pixels, default the
    /// grid center) by `1 + amplitude·sin(π(τ+1)/(n_t+1))`.
    Contraction {
        amplitude: f64,
        #[serde(default)]
        center: Option<[f64; 2]>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub intensity: f64,
}

impl Ellipse {
    fn value(&self, u: f64, v: f64) -> f64 {
        let a = (u - self.center[0]) / self.axes[0];
        let b = (v - self.center[1]) / self.axes[1];
        self.intensity * (-2.0 * (a * a + b * b)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub n_c: usize,
    /// Number of moving frames; the full sequence has one more.
    pub n_t: usize,
    pub motion: Motion,
    pub ellipses: Vec<Ellipse>,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn default_ellipses() -> Vec<Ellipse> {
    let e = |c: [f64; 2], a: [f64; 2], i: f64| Ellipse {
        center: c,
        axes: a,
        intensity: i,
    };
    vec![
        e([0.0, 0.0], [0.7, 0.6], 0.45),
        e([0.05, -0.1], [0.3, 0.28], 0.6),
        e([0.05, -0.1], [0.14, 0.13], 0.5),
        e([-0.35, 0.3], [0.15, 0.2], 0.4),
        e([0.35, 0.35], [0.12, 0.1], 0.3),
    ]
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_x: 64,
            n_y: 64,
            n_c: 4,
            n_t: 11,
            motion: Motion::Contraction {
                amplitude: 0.1,
                center: None,
            },
            ellipses: default_ellipses(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    /// Default geometry with ellipse positions, sizes and intensities
    /// jittered by `seed`.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut j = |s: f64| rng.random_range(-s..s);
        let ellipses = default_ellipses()
            .into_iter()
            .map(|e| Ellipse {
                center: [e.center[0] + j(0.06), e.center[1] + j(0.06)],
                axes: [e.axes[0] * (1.0 + j(0.15)), e.axes[1] * (1.0 + j(0.15))],
                intensity: e.intensity * (1.0 + j(0.2)),
            })
            .collect();
        Self {
            ellipses,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("phantom: {m}")));
        if self.n_x < 8 || self.n_y < 8 {
            return bad(format!("grid {}x{} is smaller than 8x8", self.n_x, self.n_y));
        }
        if self.n_c == 0 || self.n_t == 0 {
            return bad("coil and frame counts must be positive".into());
        }
        if self.ellipses.is_empty() {
            return bad("at least one ellipse is required".into());
        }
        if self.ellipses.iter().any(|e| !(e.axes[0] > 0.0 && e.axes[1] > 0.0)) {
            return bad("ellipse axes must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        match self.motion {
            Motion::Contraction { amplitude, .. } if !(0.0..0.5).contains(&amplitude) => {
                bad(format!("contraction amplitude {amplitude} outside [0, 0.5)"))
            }
            Motion::Translation { dx, dy } if !(dx.is_finite() && dy.is_finite()) => {
                bad("translation must be finite".into())
            }
            _ => Ok(()),
        }
    }

    /// Index of the reference inside the full `n_t + 1` frame sequence.
    pub fn reference_index(&self) -> usize {
        self.n_t / 2
    }
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub moving: RealImage,
    pub reference: Array2<f64>,
    /// Raw displacements with `moving_τ(x + d_τ(x)) = reference(x)`.
    pub true_fields: DeformationField,
    /// Normalized sensitivities, one (identical) frame per sequence frame.
    pub sens: CoilSensitivities,
    /// Pixels where the reference exceeds 10% of its maximum.
    pub object_mask: Array2<bool>,
    pub reference_index: usize,
}

impl Phantom {
    /// Moving frames with the reference inserted at `reference_index`.
    pub fn full_sequence(&self) -> RealImage {
        let mut frames = self.moving.frames();
        frames.insert(self.reference_index, self.reference.clone());
        RealImage::from_frames(&frames).expect("frames share a shape")
    }
}

struct Grid {
    n_x: usize,
    n_y: usize,
}

impl Grid {
    fn to_unit(&self, x: f64, y: f64) -> (f64, f64) {
        let hx = (self.n_x - 1) as f64 / 2.0;
        let hy = (self.n_y - 1) as f64 / 2.0;
        ((x - hx) / (self.n_x as f64 / 2.0), (y - hy) / (self.n_y as f64 / 2.0))
    }

    fn center(&self) -> [f64; 2] {
        [(self.n_x - 1) as f64 / 2.0, (self.n_y - 1) as f64 / 2.0]
    }
}

fn object_at(ellipses: &[Ellipse], grid: &Grid, x: f64, y: f64) -> f64 {
    let (u, v) = grid.to_unit(x, y);
    ellipses.iter().map(|e| e.value(u, v)).sum()
}

fn frame_scale(amplitude: f64, t: usize, n_t: usize) -> f64 {
    1.0 + amplitude * (std::f64::consts::PI * (t + 1) as f64 / (n_t + 1) as f64).sin()
}

fn coil_profiles(grid: &Grid, n_c: usize) -> Array3<Complex64> {
    let mut out = Array3::zeros((grid.n_x, grid.n_y, n_c));
    for k in 0..n_c {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / n_c as f64;
        let (cu, cv) = (1.1 * angle.cos(), 1.1 * angle.sin());
        for x in 0..grid.n_x {
            for y in 0..grid.n_y {
                let (u, v) = grid.to_unit(x as f64, y as f64);
                let r2 = (u - cu).powi(2) + (v - cv).powi(2);
                let mag = (-r2 / (2.0 * 0.8 * 0.8)).exp();
                let phase = 0.4 * k as f64 + 0.6 * (u * angle.cos() + v * angle.sin());
                out[[x, y, k]] = Complex64::from_polar(mag, phase);
            }
        }
    }
    out
}

pub fn generate(cfg: &PhantomConfig) -> Result<Phantom> {
    cfg.validate()?;
    let grid = Grid {
        n_x: cfg.n_x,
        n_y: cfg.n_y,
    };
    let reference = Array2::from_shape_fn((cfg.n_x, cfg.n_y), |(x, y)| {
        object_at(&cfg.ellipses, &grid, x as f64, y as f64)
    });
    let mut moving = Array3::zeros((cfg.n_x, cfg.n_y, cfg.n_t));
    let mut fields = Array4::zeros((2, cfg.n_x, cfg.n_y, cfg.n_t));
    for t in 0..cfg.n_t {
        for x in 0..cfg.n_x {
            for y in 0..cfg.n_y {
                let (px, py) = (x as f64, y as f64);
                let (value, d) = match cfg.motion {
                    Motion::Static => (reference[[x, y]], [0.0, 0.0]),
                    Motion::Translation { dx, dy } => {
                        (object_at(&cfg.ellipses, &grid, px - dx, py - dy), [dx, dy])
                    }
                    Motion::Contraction { amplitude, center } => {
                        let c = center.unwrap_or(grid.center());
                        let s = frame_scale(amplitude, t, cfg.n_t);
                        let src = (c[0] + (px - c[0]) / s, c[1] + (py - c[1]) / s);
                        (
                            object_at(&cfg.ellipses, &grid, src.0, src.1),
                            [(s - 1.0) * (px - c[0]), (s - 1.0) * (py - c[1])],
                        )
                    }
                };
                moving[[x, y, t]] = value;
                fields[[0, x, y, t]] = d[0];
                fields[[1, x, y, t]] = d[1];
            }
        }
    }
    let peak = reference.iter().cloned().fold(0.0, f64::max);
    let object_mask = reference.mapv(|v| v > 0.1 * peak);

    let coils = coil_profiles(&grid, cfg.n_c);
    let raw = CoilSensitivities::repeat_frame(coils.view(), cfg.n_t + 1);
    let sens = normalize(&raw)?;

    Ok(Phantom {
        moving: RealImage::new(moving)?,
        reference,
        true_fields: DeformationField::new(fields)?,
        sens,
        object_mask,
        reference_index: cfg.reference_index(),
    })
}

/// `F(C_S(x))` per frame plus circular complex Gaussian noise whose
/// real and imaginary parts each have standard deviation `σ/√2`.
pub fn synthesize_kspace(
    truth: &ComplexImage,
    sens: &CoilSensitivities,
    noise_sigma: f64,
    seed: u64,
) -> Result<DynamicKSpace> {
    let full = SamplingMask::full(truth.n_y(), truth.n_t());
    let mut y = forward_operator(truth, sens, &full)?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma / 2f64.sqrt())
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in y.data_mut().iter_mut() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    Ok(y)
}

/// Fully sampled k-space of the whole sequence (reference included).
pub fn phantom_kspace(phantom: &Phantom, cfg: &PhantomConfig) -> Result<DynamicKSpace> {
    synthesize_kspace(&phantom.full_sequence().to_complex(), &phantom.sens, cfg.noise_sigma, cfg.seed)
}
