//! Image quality metrics and the reconstruction/registration losses.
//!
//! SSIM uses uniform 7×7 windows (7×7×3 in time for the sequence variant),
//! stride one and valid positions only. Window statistics use the
//! population variance. `c1 = (0.01·L)²`, `c2 = (0.03·L)²` where the data
//! range `L` defaults to `max(f) − min(f)` of the ground truth `f`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::forward::RealImage;
use crate::registration::{smoothness_loss, DeformationField};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_TEMPORAL_WINDOW: usize = 3;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn data_range_of<'a>(values: impl Iterator<Item = &'a f64>, supplied: Option<f64>) -> Result<f64> {
    if let Some(l) = supplied {
        if !(l > 0.0) || !l.is_finite() {
            return Err(Error::InvalidInput(format!("data range must be positive, got {l}")));
        }
        return Ok(l);
    }
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let l = hi - lo;
    if l > 0.0 {
        Ok(l)
    } else {
        Err(Error::ZeroDataRange)
    }
}

/// Sums over every length-`w` run along `axis` (valid positions only).
fn window_sums(a: &Array3<f64>, axis: usize, w: usize) -> Array3<f64> {
    let mut dim = a.raw_dim();
    dim[axis] = a.shape()[axis] + 1 - w;
    Array3::from_shape_fn(dim, |(i, j, k)| {
        (0..w)
            .map(|o| match axis {
                0 => a[[i + o, j, k]],
                1 => a[[i, j + o, k]],
                _ => a[[i, j, k + o]],
            })
            .sum()
    })
}

fn box_sums(a: &Array3<f64>, win: [usize; 3]) -> Array3<f64> {
    let s = window_sums(a, 0, win[0]);
    let s = window_sums(&s, 1, win[1]);
    window_sums(&s, 2, win[2])
}

/// Mean SSIM over all valid `win`-sized windows of two equally shaped volumes.
fn ssim_volume(f: ArrayView3<'_, f64>, d: ArrayView3<'_, f64>, win: [usize; 3], l: f64) -> f64 {
    let f = f.to_owned();
    let d = d.to_owned();
    let n = (win[0] * win[1] * win[2]) as f64;
    let sf = box_sums(&f, win);
    let sd = box_sums(&d, win);
    let sff = box_sums(&(&f * &f), win);
    let sdd = box_sums(&(&d * &d), win);
    let sfd = box_sums(&(&f * &d), win);
    let c1 = (K1 * l).powi(2);
    let c2 = (K2 * l).powi(2);
    let mut total = 0.0;
    for ((((a, b), aa), bb), ab) in sf.iter().zip(&sd).zip(&sff).zip(&sdd).zip(&sfd) {
        let mf = a / n;
        let md = b / n;
        let vf = aa / n - mf * mf;
        let vd = bb / n - md * md;
        let cov = ab / n - mf * md;
        total += ((2.0 * mf * md + c1) * (2.0 * cov + c2))
            / ((mf * mf + md * md + c1) * (vf + vd + c2));
    }
    total / sf.len() as f64
}

fn check_same(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(shape_err(format!("metric inputs {a:?} and {b:?}")));
    }
    Ok(())
}

/// 2D SSIM of `d` against the ground truth `f`.
pub fn ssim2d(f: ArrayView2<'_, f64>, d: ArrayView2<'_, f64>, data_range: Option<f64>) -> Result<f64> {
    check_same(f.shape(), d.shape())?;
    let (nx, ny) = f.dim();
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::FrameTooSmall(nx, ny));
    }
    let l = data_range_of(f.iter(), data_range)?;
    Ok(ssim_volume(
        f.insert_axis(Axis(2)),
        d.insert_axis(Axis(2)),
        [SSIM_WINDOW, SSIM_WINDOW, 1],
        l,
    ))
}

pub fn ssim3d(f: &RealImage, d: &RealImage, data_range: Option<f64>) -> Result<f64> {
    ssim3d_with_window(f, d, data_range, SSIM_TEMPORAL_WINDOW)
}

/// Sequence SSIM with a `7×7×t_window` window.
pub fn ssim3d_with_window(
    f: &RealImage,
    d: &RealImage,
    data_range: Option<f64>,
    t_window: usize,
) -> Result<f64> {
    check_same(f.data().shape(), d.data().shape())?;
    let (nx, ny, nt) = f.dims();
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::FrameTooSmall(nx, ny));
    }
    if t_window == 0 || nt < t_window {
        return Err(Error::TooFewFrames(nt));
    }
    let l = data_range_of(f.data().iter(), data_range)?;
    Ok(ssim_volume(
        f.data().view(),
        d.data().view(),
        [SSIM_WINDOW, SSIM_WINDOW, t_window],
        l,
    ))
}

/// `20·log10(max(f) / RMSE(f, d))`; identical inputs give `+∞`.
pub fn psnr(f: ArrayView2<'_, f64>, d: ArrayView2<'_, f64>) -> Result<f64> {
    check_same(f.shape(), d.shape())?;
    let mse = f
        .iter()
        .zip(d.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / f.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

/// `‖f − d‖² / ‖f‖²`.
pub fn nmse(f: ArrayView2<'_, f64>, d: ArrayView2<'_, f64>) -> Result<f64> {
    check_same(f.shape(), d.shape())?;
    let den: f64 = f.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::ZeroGroundTruth);
    }
    let num: f64 = f.iter().zip(d.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(num / den)
}

/// NMSE over a whole sequence.
pub fn nmse_sequence(f: &RealImage, d: &RealImage) -> Result<f64> {
    check_same(f.data().shape(), d.data().shape())?;
    let flat = |a: &RealImage| a.data().view().into_shape_with_order((a.data().len(), 1)).map(|v| v.to_owned());
    let (a, b) = (
        flat(f).map_err(|e| shape_err(e.to_string()))?,
        flat(d).map_err(|e| shape_err(e.to_string()))?,
    );
    nmse(a.view(), b.view())
}

pub fn mae(f: &RealImage, d: &RealImage) -> Result<f64> {
    check_same(f.data().shape(), d.data().shape())?;
    let s: f64 = f.data().iter().zip(d.data().iter()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / f.data().len() as f64)
}

/// Mean over frames of `metric(reference, registered_τ)`.
pub fn phase_averaged<F>(metric: F, registered: &RealImage, reference: ArrayView2<'_, f64>) -> Result<f64>
where
    F: Fn(ArrayView2<'_, f64>, ArrayView2<'_, f64>) -> Result<f64>,
{
    let n_t = registered.n_t();
    let mut total = 0.0;
    for t in 0..n_t {
        total += metric(reference, registered.frame(t))?;
    }
    Ok(total / n_t as f64)
}

/// `(1 − mean ssim2d) + (1 − ssim3d) + MAE` of `x_hat` against `x`.
pub fn l_rec(x_hat: &RealImage, x: &RealImage) -> Result<f64> {
    check_same(x_hat.data().shape(), x.data().shape())?;
    let n_t = x.n_t();
    let mut s2 = 0.0;
    for t in 0..n_t {
        s2 += ssim2d(x.frame(t), x_hat.frame(t), None)?;
    }
    s2 /= n_t as f64;
    let s3 = ssim3d(x, x_hat, None)?;
    Ok((1.0 - s2) + (1.0 - s3) + mae(x, x_hat)?)
}

/// Similarity of `x_reg` to the repeated reference plus field smoothness.
pub fn l_reg(x_reg: &RealImage, x_ref: ArrayView2<'_, f64>, field: &DeformationField) -> Result<f64> {
    let repeated = RealImage::repeat_frame(x_ref, x_reg.n_t())?;
    Ok(l_rec(x_reg, &repeated)? + smoothness_loss(field))
}

pub fn total_loss(l_rec: f64, l_reg: f64, alpha: f64, beta: f64) -> f64 {
    alpha * l_rec + beta * l_reg
}

/// `+∞` PSNR values are written as JSON `null`.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub ssim: f64,
    #[serde(with = "inf_as_null")]
    pub psnr: f64,
    pub nmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ssim: f64,
    #[serde(with = "inf_as_null")]
    pub psnr: f64,
    pub nmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub l_rec: f64,
    pub l_reg: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_frame: Vec<FrameMetrics>,
    pub phase_averaged: MetricSummary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub losses: Option<Losses>,
}

impl MetricsReport {
    /// Per-frame SSIM/PSNR/NMSE of every registered frame against the reference.
    pub fn evaluate(registered: &RealImage, reference: ArrayView2<'_, f64>) -> Result<Self> {
        let per_frame = (0..registered.n_t())
            .map(|t| {
                let d = registered.frame(t);
                Ok(FrameMetrics {
                    frame: t,
                    ssim: ssim2d(reference, d, None)?,
                    psnr: psnr(reference, d)?,
                    nmse: nmse(reference, d)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_frame.len() as f64;
        let mean = |g: fn(&FrameMetrics) -> f64| per_frame.iter().map(g).sum::<f64>() / n;
        let phase_averaged = MetricSummary {
            ssim: mean(|m| m.ssim),
            psnr: mean(|m| m.psnr),
            nmse: mean(|m| m.nmse),
        };
        Ok(Self {
            per_frame,
            phase_averaged,
            losses: None,
        })
    }

    pub fn with_losses(mut self, losses: Losses) -> Self {
        self.losses = Some(losses);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per frame followed by a `mean` summary row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let fmt = |v: f64| {
            if v.is_infinite() {
                "inf".to_string()
            } else {
                format!("{v}")
            }
        };
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["frame", "ssim", "psnr", "nmse"]).map_err(csv_err)?;
        for m in &self.per_frame {
            w.write_record([m.frame.to_string(), fmt(m.ssim), fmt(m.psnr), fmt(m.nmse)])
                .map_err(csv_err)?;
        }
        let s = &self.phase_averaged;
        w.write_record(["mean".to_string(), fmt(s.ssim), fmt(s.psnr), fmt(s.nmse)])
            .map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Brute-force window statistics, kept for tests of the fast path.
#[cfg(test)]
pub(crate) fn ssim_brute(f: &Array3<f64>, d: &Array3<f64>, win: [usize; 3], l: f64) -> f64 {
    let (nx, ny, nt) = f.dim();
    let (c1, c2) = ((K1 * l).powi(2), (K2 * l).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=nx - win[0] {
        for j in 0..=ny - win[1] {
            for k in 0..=nt - win[2] {
                let mut a = Vec::new();
                let mut b = Vec::new();
                for x in i..i + win[0] {
                    for y in j..j + win[1] {
                        for t in k..k + win[2] {
                            a.push(f[[x, y, t]]);
                            b.push(d[[x, y, t]]);
                        }
                    }
                }
                let n = a.len() as f64;
                let ma = a.iter().sum::<f64>() / n;
                let mb = b.iter().sum::<f64>() / n;
                let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / n;
                let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / n;
                let cv = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / n;
                total += ((2.0 * ma * mb + c1) * (2.0 * cv + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random2(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> Array2<f64> {
        Array2::from_shape_fn((nx, ny), |_| rng.random::<f64>())
    }

    fn range(a: &Array2<f64>) -> f64 {
        let hi = a.iter().cloned().fold(f64::MIN, f64::max);
        let lo = a.iter().cloned().fold(f64::MAX, f64::min);
        hi - lo
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let x = random2(&mut rng, 12, 9);
        assert_eq!(ssim2d(x.view(), x.view(), None).unwrap(), 1.0);
        let seq = RealImage::new(Array3::from_shape_fn((9, 8, 4), |_| rng.random())).unwrap();
        assert_eq!(ssim3d(&seq, &seq, None).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_shift_matches_scalar_formula() {
        let f = Array2::from_elem((7, 7), 0.5);
        let d = Array2::from_elem((7, 7), 0.52);
        let l = 1.0;
        let c1 = 1e-4;
        let expect = (2.0 * 0.5 * 0.52 + c1) / (0.25 + 0.52 * 0.52 + c1);
        let got = ssim2d(f.view(), d.view(), Some(l)).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim2d_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for (nx, ny) in [(16, 16), (7, 7), (32, 20), (9, 31)] {
            let f = random2(&mut rng, nx, ny);
            let d = random2(&mut rng, nx, ny);
            let fast = ssim2d(f.view(), d.view(), None).unwrap();
            let slow = ssim_brute(
                &f.clone().insert_axis(Axis(2)),
                &d.clone().insert_axis(Axis(2)),
                [7, 7, 1],
                range(&f),
            );
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim3d_matches_brute_force_and_constant_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let f = Array3::from_shape_fn((10, 12, 6), |_| rng.random::<f64>());
        let d = Array3::from_shape_fn((10, 12, 6), |_| rng.random::<f64>());
        let l = {
            let hi = f.iter().cloned().fold(f64::MIN, f64::max);
            let lo = f.iter().cloned().fold(f64::MAX, f64::min);
            hi - lo
        };
        let fast = ssim3d(&RealImage::new(f.clone()).unwrap(), &RealImage::new(d.clone()).unwrap(), None).unwrap();
        assert!((fast - ssim_brute(&f, &d, [7, 7, 3], l)).abs() < 1e-10);

        let a = random2(&mut rng, 11, 10);
        let b = random2(&mut rng, 11, 10);
        let sa = RealImage::repeat_frame(a.view(), 5).unwrap();
        let sb = RealImage::repeat_frame(b.view(), 5).unwrap();
        let s3 = ssim3d(&sa, &sb, None).unwrap();
        let s2 = ssim2d(a.view(), b.view(), None).unwrap();
        assert!((s3 - s2).abs() < 1e-6);
    }

    #[test]
    fn ssim_errors() {
        let small = Array2::<f64>::zeros((6, 9));
        assert!(matches!(ssim2d(small.view(), small.view(), Some(1.0)), Err(Error::FrameTooSmall(6, 9))));
        let flat = Array2::from_elem((8, 8), 1.0);
        assert!(matches!(ssim2d(flat.view(), flat.view(), None), Err(Error::ZeroDataRange)));
        let two = RealImage::new(Array3::zeros((8, 8, 2))).unwrap();
        assert!(matches!(ssim3d(&two, &two, Some(1.0)), Err(Error::TooFewFrames(2))));
    }

    #[test]
    fn ssim_symmetric_with_shared_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let f = random2(&mut rng, 10, 10);
        let d = random2(&mut rng, 10, 10);
        let a = ssim2d(f.view(), d.view(), Some(1.0)).unwrap();
        let b = ssim2d(d.view(), f.view(), Some(1.0)).unwrap();
        assert!((a - b).abs() < 1e-14);
        assert!(a < 1.0);
    }

    #[test]
    fn psnr_cases() {
        let f = array![[1.0, 0.0]];
        let d = array![[0.0, 0.0]];
        let p = psnr(f.view(), d.view()).unwrap();
        assert!((p - 20.0 * (1.0 / 0.5f64.sqrt()).log10()).abs() < 1e-12);
        assert!((p - 3.0103).abs() < 1e-4);
        assert_eq!(psnr(f.view(), f.view()).unwrap(), f64::INFINITY);
        let fs = f.mapv(|v| v * 3.5);
        let ds = d.mapv(|v| v * 3.5);
        assert!((psnr(fs.view(), ds.view()).unwrap() - p).abs() < 1e-12);
    }

    #[test]
    fn nmse_cases() {
        let f = array![[2.0, 0.0]];
        assert!((nmse(f.view(), array![[1.0, 0.0]].view()).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(nmse(f.view(), f.view()).unwrap(), 0.0);
        assert_eq!(nmse(f.view(), Array2::zeros((1, 2)).view()).unwrap(), 1.0);
        let z = Array2::<f64>::zeros((2, 2));
        assert!(matches!(nmse(z.view(), z.view()), Err(Error::ZeroGroundTruth)));
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let g = random2(&mut rng, 5, 5);
        let c = 0.3;
        let scaled = g.mapv(|v| v * c);
        assert!((nmse(g.view(), scaled.view()).unwrap() - (1.0 - c).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn phase_average_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let r = random2(&mut rng, 8, 8);
        let same = RealImage::repeat_frame(r.view(), 3).unwrap();
        let ssim = |a: ArrayView2<f64>, b: ArrayView2<f64>| ssim2d(a, b, None);
        assert_eq!(phase_averaged(ssim, &same, r.view()).unwrap(), 1.0);

        let frames: Vec<_> = (0..4).map(|_| random2(&mut rng, 8, 8)).collect();
        let seq = RealImage::from_frames(&frames).unwrap();
        let manual: f64 = frames.iter().map(|f| nmse(r.view(), f.view()).unwrap()).sum::<f64>() / 4.0;
        let got = phase_averaged(nmse, &seq, r.view()).unwrap();
        assert!((got - manual).abs() < 1e-14);
        let mut rev = frames.clone();
        rev.reverse();
        let rev = RealImage::from_frames(&rev).unwrap();
        assert!((phase_averaged(nmse, &rev, r.view()).unwrap() - got).abs() < 1e-14);

        let one = RealImage::from_frames(&frames[..1]).unwrap();
        assert_eq!(
            phase_averaged(psnr, &one, r.view()).unwrap(),
            psnr(r.view(), frames[0].view()).unwrap()
        );
    }

    #[test]
    fn losses_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let x = RealImage::new(Array3::from_shape_fn((9, 9, 4), |_| rng.random())).unwrap();
        let y = RealImage::new(Array3::from_shape_fn((9, 9, 4), |_| rng.random())).unwrap();
        assert_eq!(l_rec(&x, &x).unwrap(), 0.0);
        let s2 = (0..4).map(|t| ssim2d(x.frame(t), y.frame(t), None).unwrap()).sum::<f64>() / 4.0;
        let parts = (1.0 - s2) + (1.0 - ssim3d(&x, &y, None).unwrap()) + mae(&x, &y).unwrap();
        assert!((l_rec(&y, &x).unwrap() - parts).abs() < 1e-12);

        let r = random2(&mut rng, 9, 9);
        let rep = RealImage::repeat_frame(r.view(), 4).unwrap();
        let constant = DeformationField::constant(9, 9, 4, [1.5, -0.5]);
        assert_eq!(l_reg(&rep, r.view(), &constant).unwrap(), 0.0);
        let zero = DeformationField::zeros(9, 9, 4);
        assert_eq!(l_reg(&y, r.view(), &zero).unwrap(), l_rec(&y, &rep).unwrap());

        assert_eq!(total_loss(1.5, 2.0, 1.0, 1.0), 3.5);
        assert_eq!(total_loss(1.5, 2.0, 0.0, 1.0), 2.0);
        assert_eq!(total_loss(1.5, 2.0, 2.0, 0.5), 4.0);
    }

    #[test]
    fn report_mean_and_serialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let r = random2(&mut rng, 8, 8);
        let mut frames: Vec<_> = (0..3).map(|_| random2(&mut rng, 8, 8)).collect();
        frames[1] = r.clone();
        let seq = RealImage::from_frames(&frames).unwrap();
        let rep = MetricsReport::evaluate(&seq, r.view()).unwrap();
        let mean_ssim = rep.per_frame.iter().map(|m| m.ssim).sum::<f64>() / 3.0;
        assert!((rep.phase_averaged.ssim - mean_ssim).abs() < 1e-12);
        assert!(rep.phase_averaged.psnr.is_infinite());
        let json = rep.to_json().unwrap();
        assert!(json.contains("\"psnr\": null"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(2).unwrap().contains(",inf,"));
        assert!(text.lines().last().unwrap().starts_with("mean,"));
    }
}
