//! Phase-encode line selection under an exact per-frame budget.
//!
//! The budget `round(n_y / R)` (at least one) counts every acquired line,
//! autocalibration lines included. All samplers break ties toward the lower
//! line index, so every mask is deterministic given its inputs.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::forward::{CenteredFft2, CoilSensitivities, DynamicKSpace, RealImage, SamplingMask};
use crate::metrics::ssim2d;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    PhaseSpecific,
    Unified,
}

/// Equispaced pattern offset: a fixed value, or drawn from a seed (one draw
/// per frame in phase-specific mode, one shared draw in unified mode).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Offset {
    Fixed(usize),
    Seeded(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Energy,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    AcsOnly,
    Equispaced { offset: Offset },
    KtEquispaced { offset: Offset },
    DatasetOptimized,
    Adaptive { scorer: ScorerKind },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Acs,
    /// ACS plus an equispaced pattern at `(R + 4)×` when `R > 4`.
    EquispacedFused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub acceleration: f64,
    pub center_fraction: f64,
    pub mode: SamplingMode,
    pub scheme: Scheme,
    pub init: InitKind,
    /// Offset of the equispaced part of a fused initial mask.
    pub init_offset: Offset,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            acceleration: 4.0,
            center_fraction: 0.04,
            mode: SamplingMode::PhaseSpecific,
            scheme: Scheme::Adaptive {
                scorer: ScorerKind::Energy,
            },
            init: InitKind::Acs,
            init_offset: Offset::Seeded(0),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.acceleration >= 1.0 && self.acceleration.is_finite()) {
            return Err(Error::Config(format!(
                "acceleration must be at least 1, got {}",
                self.acceleration
            )));
        }
        if !(0.0..=1.0).contains(&self.center_fraction) {
            return Err(Error::Config(format!(
                "center_fraction must lie in [0, 1], got {}",
                self.center_fraction
            )));
        }
        if self.mode == SamplingMode::Unified && matches!(self.scheme, Scheme::KtEquispaced { .. }) {
            return Err(Error::KtUnified);
        }
        Ok(())
    }

    pub fn budget(&self, n_y: usize) -> usize {
        budget(n_y, self.acceleration)
    }

    /// Checks that the ACS region fits inside the budget for `n_y` lines.
    pub fn validate_for(&self, n_y: usize) -> Result<()> {
        self.validate()?;
        let forced = acs_lines(n_y, self.center_fraction).len();
        let b = self.budget(n_y);
        if b < forced && self.scheme != Scheme::AcsOnly {
            return Err(Error::BudgetTooSmall {
                budget: b,
                forced,
                frame: 0,
            });
        }
        Ok(())
    }
}

/// Pre-binarization line scores `[y_line, frame]`; higher is more valuable.
#[derive(Clone, Debug, PartialEq)]
pub struct LineScores {
    scores: Array2<f64>,
}

impl LineScores {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("line scores"));
        }
        if scores.is_empty() {
            return Err(shape_err("line scores must not be empty"));
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            scores: &self.scores * c,
        }
    }
}

/// `round(n_y / R)` with halves rounded away from zero, at least one.
pub fn budget(n_y: usize, acceleration: f64) -> usize {
    ((n_y as f64 / acceleration).round() as usize).clamp(1, n_y.max(1))
}

/// The `⌈fraction·n_y⌉` contiguous lines centered on `n_y/2`.
pub fn acs_lines(n_y: usize, center_fraction: f64) -> Vec<usize> {
    let count = ((center_fraction * n_y as f64 - 1e-9).ceil().max(0.0) as usize).min(n_y);
    let start = (n_y / 2).saturating_sub(count / 2).min(n_y - count);
    (start..start + count).collect()
}

pub fn acs_mask(n_y: usize, center_fraction: f64, n_t: usize) -> Result<SamplingMask> {
    SamplingMask::repeat(&acs_lines(n_y, center_fraction), n_y, n_t)
}

fn stride(acceleration: f64) -> usize {
    (acceleration.floor() as usize).max(1)
}

fn resolve_offsets(offset: Offset, stride: usize, n_t: usize, mode: SamplingMode) -> Result<Vec<usize>> {
    match offset {
        Offset::Fixed(o) if o >= stride => Err(Error::Config(format!(
            "offset {o} must be smaller than the stride {stride}"
        ))),
        Offset::Fixed(o) => Ok(vec![o; n_t]),
        Offset::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(match mode {
                SamplingMode::Unified => vec![rng.random_range(0..stride); n_t],
                SamplingMode::PhaseSpecific => (0..n_t).map(|_| rng.random_range(0..stride)).collect(),
            })
        }
    }
}

/// Lines of the progression `offset + k·stride` score above every other line;
/// within each group lines nearer the center rank first.
fn progression_scores(n_y: usize, stride: usize, offset: usize) -> Vec<f64> {
    let c = (n_y / 2) as f64;
    (0..n_y)
        .map(|l| {
            let d = (l as f64 - c).abs() / n_y as f64;
            if l % stride == offset % stride {
                2.0 - d
            } else {
                -d
            }
        })
        .collect()
}

fn progression_mask(
    n_y: usize,
    acceleration: f64,
    center_fraction: f64,
    offsets: &[usize],
    mode: SamplingMode,
) -> Result<SamplingMask> {
    let s = stride(acceleration);
    let n_t = offsets.len();
    let mut scores = Array2::zeros((n_y, n_t));
    for (t, &o) in offsets.iter().enumerate() {
        for (l, v) in progression_scores(n_y, s, o).into_iter().enumerate() {
            scores[[l, t]] = v;
        }
    }
    let forced = acs_mask(n_y, center_fraction, n_t)?;
    binarize_budget(&LineScores::new(scores)?, budget(n_y, acceleration), &forced, mode)
}

/// ACS plus the equispaced progression `{o, o+⌊R⌋, …}`, trimmed to the
/// budget by dropping the progression lines farthest from the center (or
/// padded with the nearest remaining lines when the progression is short).
pub fn equispaced_mask(
    n_y: usize,
    acceleration: f64,
    center_fraction: f64,
    offset: Offset,
    n_t: usize,
    mode: SamplingMode,
) -> Result<SamplingMask> {
    let offsets = resolve_offsets(offset, stride(acceleration), n_t, mode)?;
    progression_mask(n_y, acceleration, center_fraction, &offsets, mode)
}

/// Equispaced with the offset of frame `τ` advanced to `(o + τ) mod ⌊R⌋`.
pub fn kt_equispaced_mask(
    n_y: usize,
    acceleration: f64,
    center_fraction: f64,
    offset: Offset,
    n_t: usize,
    mode: SamplingMode,
) -> Result<SamplingMask> {
    if mode == SamplingMode::Unified {
        return Err(Error::KtUnified);
    }
    let s = stride(acceleration);
    let base = resolve_offsets(offset, s, 1, SamplingMode::Unified)?[0];
    let offsets: Vec<usize> = (0..n_t).map(|t| (base + t) % s).collect();
    progression_mask(n_y, acceleration, center_fraction, &offsets, mode)
}

/// Initial mask `M⁰` used to acquire the data that informs adaptive scoring.
pub fn init_mask(n_y: usize, n_t: usize, cfg: &SamplerConfig) -> Result<SamplingMask> {
    match cfg.init {
        InitKind::EquispacedFused if cfg.acceleration > 4.0 => equispaced_mask(
            n_y,
            cfg.acceleration + 4.0,
            cfg.center_fraction,
            cfg.init_offset,
            n_t,
            cfg.mode,
        ),
        _ => acs_mask(n_y, cfg.center_fraction, n_t),
    }
}

fn top_lines(scores: &[f64], forced: &[bool], budget: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&l| !forced[l]).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let n_forced = forced.iter().filter(|&&f| f).count();
    let mut picked: Vec<usize> = (0..scores.len()).filter(|&l| forced[l]).collect();
    picked.extend(order.into_iter().take(budget - n_forced));
    picked.sort_unstable();
    picked
}

/// Forced lines plus the highest-scoring others, exactly `budget` per frame.
pub fn binarize_budget(
    scores: &LineScores,
    budget: usize,
    forced: &SamplingMask,
    mode: SamplingMode,
) -> Result<SamplingMask> {
    let (n_y, n_t) = scores.scores.dim();
    if (forced.n_y(), forced.n_t()) != (n_y, n_t) {
        return Err(shape_err(format!(
            "scores are {n_y}x{n_t}, forced mask is {}x{}",
            forced.n_y(),
            forced.n_t()
        )));
    }
    if budget > n_y {
        return Err(Error::InvalidInput(format!("budget {budget} exceeds {n_y} lines")));
    }
    match mode {
        SamplingMode::PhaseSpecific => {
            let mut frames = Vec::with_capacity(n_t);
            for t in 0..n_t {
                let f: Vec<bool> = forced.lines().column(t).to_vec();
                let n_forced = f.iter().filter(|&&b| b).count();
                if n_forced > budget {
                    return Err(Error::BudgetTooSmall {
                        budget,
                        forced: n_forced,
                        frame: t,
                    });
                }
                let s: Vec<f64> = scores.scores.column(t).to_vec();
                frames.push(top_lines(&s, &f, budget));
            }
            SamplingMask::from_lines(n_y, &frames)
        }
        SamplingMode::Unified => {
            let summed = scores.scores.sum_axis(Axis(1)).to_vec();
            let f: Vec<bool> = (0..n_y)
                .map(|l| forced.lines().row(l).iter().any(|&b| b))
                .collect();
            let n_forced = f.iter().filter(|&&b| b).count();
            if n_forced > budget {
                return Err(Error::BudgetTooSmall {
                    budget,
                    forced: n_forced,
                    frame: 0,
                });
            }
            SamplingMask::repeat(&top_lines(&summed, &f, budget), n_y, n_t)
        }
    }
}

/// Produces line scores from initially acquired data.
pub trait Scorer: Sync {
    fn score(
        &self,
        init_kspace: &DynamicKSpace,
        init_mask: &SamplingMask,
        sens: &CoilSensitivities,
        mode: SamplingMode,
        budget: usize,
    ) -> Result<LineScores>;
}

/// Extrapolates per-line k-space energy from the acquired lines.
///
/// On each side of the center a power law `log E ≈ a + b·log(1 + d)` is
/// fitted to the acquired lines (`d` = distance from the center line); the
/// fit residuals are linearly interpolated between acquired lines so that
/// frame-specific structure in the initial data carries over to the scores.
#[derive(Clone, Copy, Debug, Default)]
pub struct EnergyScorer;

fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx < 1e-12 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = (sxy / sxx).min(0.0);
    Some((my - b * mx, b))
}

impl EnergyScorer {
    fn frame_scores(energy: &[f64], acquired: &[bool]) -> Vec<f64> {
        let n_y = energy.len();
        let c = n_y / 2;
        let dist = |l: usize| (l as f64 - c as f64).abs();
        let logd = |l: usize| (1.0 + dist(l)).ln();
        let mut scores = vec![0.0; n_y];
        let pts = |range: &mut dyn Iterator<Item = usize>| -> Vec<(usize, f64, f64)> {
            range
                .filter(|&l| acquired[l] && energy[l] > 0.0)
                .map(|l| (l, logd(l), energy[l].ln()))
                .collect()
        };
        let left = pts(&mut (0..=c.min(n_y - 1)));
        let right = pts(&mut (c.min(n_y - 1)..n_y));
        let xy = |p: &[(usize, f64, f64)]| p.iter().map(|q| (q.1, q.2)).collect::<Vec<_>>();
        let pooled: Vec<(f64, f64)> = xy(&left).into_iter().chain(xy(&right)).collect();
        let fallback = fit_line(&pooled).unwrap_or_else(|| {
            let my = if pooled.is_empty() {
                0.0
            } else {
                pooled.iter().map(|p| p.1 + 2.0 * p.0).sum::<f64>() / pooled.len() as f64
            };
            (my, -2.0)
        });
        for (side, lines) in [(&left, 0..=c.min(n_y - 1)), (&right, c.min(n_y - 1)..=n_y - 1)] {
            let (a, b) = fit_line(&xy(side)).unwrap_or(fallback);
            let resid: Vec<(usize, f64)> = side.iter().map(|&(l, x, y)| (l, y - (a + b * x))).collect();
            for l in lines {
                if acquired[l] && energy[l] > 0.0 {
                    scores[l] = energy[l].ln();
                    continue;
                }
                let lower = resid.iter().rev().find(|r| r.0 < l);
                let upper = resid.iter().find(|r| r.0 > l);
                let r = match (lower, upper) {
                    (Some(p), Some(q)) => {
                        let w = (l - p.0) as f64 / (q.0 - p.0) as f64;
                        p.1 * (1.0 - w) + q.1 * w
                    }
                    _ => 0.0,
                };
                scores[l] = a + b * logd(l) + r;
            }
        }
        // Rounding keeps mirror-image predictions tied after rescaling the data.
        for (l, s) in scores.iter_mut().enumerate() {
            *s = (*s * 1e8).round() / 1e8 - 1e-9 * dist(l);
        }
        scores
    }
}

impl Scorer for EnergyScorer {
    fn score(
        &self,
        init_kspace: &DynamicKSpace,
        init_mask: &SamplingMask,
        _sens: &CoilSensitivities,
        _mode: SamplingMode,
        _budget: usize,
    ) -> Result<LineScores> {
        let s = init_kspace.shape();
        check_mask(init_mask, s.n_y, s.n_t)?;
        let mut out = Array2::zeros((s.n_y, s.n_t));
        for t in 0..s.n_t {
            let frame = init_kspace.frame(t);
            let energy: Vec<f64> = (0..s.n_y)
                .map(|l| {
                    frame
                        .index_axis(Axis(1), l)
                        .iter()
                        .map(|v| v.norm_sqr())
                        .sum()
                })
                .collect();
            let acquired: Vec<bool> = init_mask.lines().column(t).to_vec();
            for (l, v) in Self::frame_scores(&energy, &acquired).into_iter().enumerate() {
                out[[l, t]] = v;
            }
        }
        LineScores::new(out)
    }
}

/// Ranks lines by the order in which greedy zero-filled SSIM selection on
/// the fully sampled case would add them.
#[derive(Clone, Debug)]
pub struct OracleScorer {
    pub item: CorpusItem,
}

impl Scorer for OracleScorer {
    fn score(
        &self,
        _init_kspace: &DynamicKSpace,
        init_mask: &SamplingMask,
        _sens: &CoilSensitivities,
        mode: SamplingMode,
        budget: usize,
    ) -> Result<LineScores> {
        let n_y = init_mask.n_y();
        let n_t = init_mask.n_t();
        let engine = Greedy::new(std::slice::from_ref(&self.item))?;
        let mut scores = Array2::from_shape_fn((n_y, n_t), |(l, _)| {
            -((l as f64 - (n_y / 2) as f64).abs()) / n_y as f64
        });
        let groups: Vec<Vec<usize>> = match mode {
            SamplingMode::PhaseSpecific => (0..n_t).map(|t| vec![t]).collect(),
            SamplingMode::Unified => vec![(0..n_t).collect()],
        };
        for frames in groups {
            let forced: Vec<usize> = (0..n_y)
                .filter(|&l| frames.iter().any(|&t| init_mask.is_set(l, t)))
                .collect();
            let picks = engine.select(&frames, &forced, budget)?;
            for &t in &frames {
                for &l in &forced {
                    scores[[l, t]] = 2.0 * n_y as f64;
                }
                for (rank, &l) in picks.iter().enumerate() {
                    scores[[l, t]] = (n_y - rank) as f64;
                }
            }
        }
        LineScores::new(scores)
    }
}

fn check_mask(mask: &SamplingMask, n_y: usize, n_t: usize) -> Result<()> {
    if (mask.n_y(), mask.n_t()) != (n_y, n_t) {
        return Err(shape_err(format!(
            "mask {}x{} vs data {n_y}x{n_t}",
            mask.n_y(),
            mask.n_t()
        )));
    }
    Ok(())
}

/// Scores lines from the initial data and fills the budget, always keeping
/// the initial and ACS lines.
pub fn adaptive_mask(
    init_kspace: &DynamicKSpace,
    init: &SamplingMask,
    sens: &CoilSensitivities,
    cfg: &SamplerConfig,
    scorer: &dyn Scorer,
) -> Result<SamplingMask> {
    cfg.validate()?;
    let s = init_kspace.shape();
    check_mask(init, s.n_y, s.n_t)?;
    let forced = init.union(&acs_mask(s.n_y, cfg.center_fraction, s.n_t)?)?;
    let b = cfg.budget(s.n_y);
    let at_budget = match cfg.mode {
        SamplingMode::PhaseSpecific => forced.counts().iter().all(|&c| c == b),
        SamplingMode::Unified => forced.is_unified() && forced.count(0) == b,
    };
    if at_budget {
        return Ok(forced);
    }
    let scores = scorer.score(init_kspace, &forced, sens, cfg.mode, b)?;
    binarize_budget(&scores, b, &forced, cfg.mode)
}

/// Fully sampled case used for mask optimization.
#[derive(Clone, Debug)]
pub struct CorpusItem {
    pub kspace: DynamicKSpace,
    pub sens: CoilSensitivities,
    /// Ground-truth magnitudes, one frame per k-space frame.
    pub target: RealImage,
}

/// Incremental zero-filled images: adding line `l` to frame `t` adds
/// `e_l(y)·Σ_k conj(S_k(x,y))·a_{k,l}(x)`, where `a_{k,l}` is the readout
/// inverse FFT of the line and `e_l` the line-axis inverse FFT of a unit
/// impulse at `l`.
struct Greedy<'a> {
    items: &'a [CorpusItem],
    /// `[item][frame]` readout transforms `[x, line, coil]`.
    lines: Vec<Vec<Array3<Complex64>>>,
    /// `e[[l, y]]`.
    basis: Array2<Complex64>,
    n_x: usize,
    n_y: usize,
}

impl<'a> Greedy<'a> {
    fn new(items: &'a [CorpusItem]) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyCorpus)?;
        let s = first.kspace.shape();
        for it in items {
            if it.kspace.shape() != s || it.sens.shape() != s || it.target.dims() != (s.n_x, s.n_y, s.n_t) {
                return Err(shape_err("corpus items must share one shape"));
            }
        }
        let plan = CenteredFft2::new(s.n_x, s.n_y)?;
        let mut basis = Array2::zeros((s.n_y, s.n_y));
        for l in 0..s.n_y {
            let mut lane = vec![Complex64::new(0.0, 0.0); s.n_y];
            lane[l] = Complex64::new(1.0, 0.0);
            plan.inverse_lines(&mut lane);
            for (y, v) in lane.into_iter().enumerate() {
                basis[[l, y]] = v;
            }
        }
        let lines = items
            .iter()
            .map(|it| {
                (0..s.n_t)
                    .map(|t| {
                        let mut f = it.kspace.frame(t).to_owned();
                        for l in 0..s.n_y {
                            for k in 0..s.n_c {
                                let mut lane: Vec<Complex64> =
                                    f.slice(ndarray::s![.., l, k]).to_vec();
                                plan.inverse_readout(&mut lane);
                                f.slice_mut(ndarray::s![.., l, k])
                                    .assign(&ndarray::Array1::from(lane));
                            }
                        }
                        f
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            items,
            lines,
            basis,
            n_x: s.n_x,
            n_y: s.n_y,
        })
    }

    fn contribution(&self, item: usize, t: usize, l: usize) -> Array2<Complex64> {
        let sens = self.items[item].sens.frame(t);
        let a = &self.lines[item][t];
        let n_c = a.shape()[2];
        let mut out = Array2::zeros((self.n_x, self.n_y));
        for x in 0..self.n_x {
            let mut coil = [Complex64::new(0.0, 0.0); 1];
            for y in 0..self.n_y {
                coil[0] = Complex64::new(0.0, 0.0);
                for k in 0..n_c {
                    coil[0] += sens[[x, y, k]].conj() * a[[x, l, k]];
                }
                out[[x, y]] = coil[0] * self.basis[[l, y]];
            }
        }
        out
    }

    fn image(&self, item: usize, t: usize, lines: &[usize]) -> Array2<Complex64> {
        let mut z = Array2::zeros((self.n_x, self.n_y));
        for &l in lines {
            z += &self.contribution(item, t, l);
        }
        z
    }

    fn quality(&self, item: usize, t: usize, img: ArrayView2<'_, Complex64>) -> Result<f64> {
        let mag = img.mapv(|v| v.norm());
        ssim2d(self.items[item].target.frame(t), mag.view(), None)
    }

    /// Mean zero-filled SSIM over items and `frames` for a given line set.
    fn score_set(&self, frames: &[usize], lines: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.items.len() {
            for &t in frames {
                total += self.quality(i, t, self.image(i, t, lines).view())?;
            }
        }
        Ok(total / (self.items.len() * frames.len()) as f64)
    }

    /// Greedy additions to `forced` until `budget` lines, in pick order.
    fn select(&self, frames: &[usize], forced: &[usize], budget: usize) -> Result<Vec<usize>> {
        if forced.len() > budget {
            return Err(Error::BudgetTooSmall {
                budget,
                forced: forced.len(),
                frame: frames.first().copied().unwrap_or(0),
            });
        }
        let mut current: Vec<Vec<Array2<Complex64>>> = (0..self.items.len())
            .map(|i| frames.iter().map(|&t| self.image(i, t, forced)).collect())
            .collect();
        let mut chosen: Vec<bool> = (0..self.n_y).map(|l| forced.contains(&l)).collect();
        let mut picks = Vec::new();
        while forced.len() + picks.len() < budget {
            let candidates: Vec<usize> = (0..self.n_y).filter(|&l| !chosen[l]).collect();
            let values: Vec<f64> = candidates
                .par_iter()
                .map(|&l| {
                    let mut total = 0.0;
                    for (i, imgs) in current.iter().enumerate() {
                        for (j, &t) in frames.iter().enumerate() {
                            let trial = &imgs[j] + &self.contribution(i, t, l);
                            total += self.quality(i, t, trial.view())?;
                        }
                    }
                    Ok(total)
                })
                .collect::<Result<_>>()?;
            let mut best = 0;
            for (k, v) in values.iter().enumerate() {
                if *v > values[best] {
                    best = k;
                }
            }
            let l = candidates[best];
            for (i, imgs) in current.iter_mut().enumerate() {
                for (j, &t) in frames.iter().enumerate() {
                    imgs[j] += &self.contribution(i, t, l);
                }
            }
            chosen[l] = true;
            picks.push(l);
        }
        Ok(picks)
    }
}

/// Mean zero-filled SSIM of `mask` over the corpus.
pub fn corpus_quality(corpus: &[CorpusItem], mask: &SamplingMask) -> Result<f64> {
    let g = Greedy::new(corpus)?;
    let mut total = 0.0;
    for t in 0..mask.n_t() {
        total += g.score_set(&[t], &mask.frame_lines(t))?;
    }
    Ok(total / mask.n_t() as f64)
}

/// Greedy forward selection from the ACS lines maximizing mean zero-filled
/// SSIM across the corpus, per frame or jointly over all frames.
pub fn dataset_optimized_mask(corpus: &[CorpusItem], cfg: &SamplerConfig) -> Result<SamplingMask> {
    cfg.validate()?;
    let g = Greedy::new(corpus)?;
    let s = corpus[0].kspace.shape();
    let forced = acs_lines(s.n_y, cfg.center_fraction);
    let b = cfg.budget(s.n_y);
    match cfg.mode {
        SamplingMode::Unified => {
            let frames: Vec<usize> = (0..s.n_t).collect();
            let mut lines = forced.clone();
            lines.extend(g.select(&frames, &forced, b)?);
            SamplingMask::repeat(&lines, s.n_y, s.n_t)
        }
        SamplingMode::PhaseSpecific => {
            let per_frame = (0..s.n_t)
                .map(|t| {
                    let mut lines = forced.clone();
                    lines.extend(g.select(&[t], &forced, b)?);
                    Ok(lines)
                })
                .collect::<Result<Vec<_>>>()?;
            SamplingMask::from_lines(s.n_y, &per_frame)
        }
    }
}
