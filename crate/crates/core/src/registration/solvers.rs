//! Classical dense registration solvers.
//!
//! Each returns a raw displacement `d` (shape `[2, x, y]`) such that
//! `moving(x + d(x)) ≈ reference(x)`.

use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};

use crate::filters::{box_mean, gaussian_smooth, gradient, median3};

use super::field::{warp_displacement, warp_edge};
use super::pyramid;

const DEMONS_DENOMINATOR_EPS: f64 = 1e-9;

/// Thirion's demons with the fixed-image gradient and Gaussian smoothing of
/// the accumulated field after every update.
pub fn demons(
    moving: ArrayView2<'_, f64>,
    fixed: ArrayView2<'_, f64>,
    iterations: usize,
    sigma: f64,
    init: Option<Array3<f64>>,
) -> Array3<f64> {
    let (n_x, n_y) = fixed.dim();
    let (gx, gy) = gradient(fixed);
    let mut d = init.unwrap_or_else(|| Array3::zeros((2, n_x, n_y)));
    for _ in 0..iterations {
        let (mw, valid) = warp_displacement(moving, d.view());
        for x in 0..n_x {
            for y in 0..n_y {
                if !valid[[x, y]] {
                    continue;
                }
                let speed = fixed[[x, y]] - mw[[x, y]];
                let (g0, g1) = (gx[[x, y]], gy[[x, y]]);
                let denom = g0 * g0 + g1 * g1 + speed * speed;
                if denom < DEMONS_DENOMINATOR_EPS {
                    continue;
                }
                d[[0, x, y]] += speed * g0 / denom;
                d[[1, x, y]] += speed * g1 / denom;
            }
        }
        if sigma > 0.0 {
            for c in 0..2 {
                let sm = gaussian_smooth(d.index_axis(Axis(0), c), sigma);
                d.index_axis_mut(Axis(0), c).assign(&sm);
            }
        }
    }
    d
}

/// Demons run coarse-to-fine over `levels` pyramid levels.
pub fn demons_multilevel(
    moving: ArrayView2<'_, f64>,
    fixed: ArrayView2<'_, f64>,
    iterations: usize,
    sigma: f64,
    levels: usize,
) -> Array3<f64> {
    if levels <= 1 {
        return demons(moving, fixed, iterations, sigma, None);
    }
    coarse_to_fine(moving, fixed, 8, levels, |m, f, init| {
        demons(m, f, iterations, sigma, Some(init))
    })
}

fn coarse_to_fine<F>(
    moving: ArrayView2<'_, f64>,
    reference: ArrayView2<'_, f64>,
    min_size: usize,
    max_levels: usize,
    solve: F,
) -> Array3<f64>
where
    F: Fn(ArrayView2<'_, f64>, ArrayView2<'_, f64>, Array3<f64>) -> Array3<f64>,
{
    let pm = pyramid::build(moving, min_size, max_levels);
    let pr = pyramid::build(reference, min_size, max_levels);
    let (n_x, n_y) = pr[0].dim();
    let mut flow = solve(pm[0].view(), pr[0].view(), Array3::zeros((2, n_x, n_y)));
    for (m, r) in pm.iter().zip(&pr).skip(1) {
        let init = pyramid::resize_flow(&flow, r.dim());
        flow = solve(m.view(), r.view(), init);
    }
    flow
}

fn median_flow(flow: &mut Array3<f64>) {
    for c in 0..2 {
        let m = median3(flow.index_axis(Axis(0), c));
        flow.index_axis_mut(Axis(0), c).assign(&m);
    }
}

fn ilk_level(
    reference: ArrayView2<'_, f64>,
    moving: ArrayView2<'_, f64>,
    mut flow: Array3<f64>,
    radius: usize,
    warps: usize,
    prefilter: bool,
) -> Array3<f64> {
    for _ in 0..warps {
        if prefilter {
            median_flow(&mut flow);
        }
        let mw = warp_edge(moving, flow.view());
        let (g0, g1) = gradient(mw.view());
        let err = &g0 * &flow.index_axis(Axis(0), 0) + &g1 * &flow.index_axis(Axis(0), 1) + &reference - &mw;
        let a00 = box_mean((&g0 * &g0).view(), radius);
        let a01 = box_mean((&g0 * &g1).view(), radius);
        let a11 = box_mean((&g1 * &g1).view(), radius);
        let b0 = box_mean((&g0 * &err).view(), radius);
        let b1 = box_mean((&g1 * &err).view(), radius);
        let mut next = Array3::zeros(flow.raw_dim());
        Zip::indexed(&a00).for_each(|(x, y), &p| {
            let (q, r) = (a01[[x, y]], a11[[x, y]]);
            let det = p * r - q * q;
            if det.abs() < 1e-14 {
                return;
            }
            next[[0, x, y]] = (r * b0[[x, y]] - q * b1[[x, y]]) / det;
            next[[1, x, y]] = (p * b1[[x, y]] - q * b0[[x, y]]) / det;
        });
        flow = next;
    }
    flow
}

/// Iterative Lucas-Kanade with a uniform window of the given radius.
pub fn optical_flow_ilk(
    moving: ArrayView2<'_, f64>,
    reference: ArrayView2<'_, f64>,
    radius: usize,
    warps: usize,
    prefilter: bool,
) -> Array3<f64> {
    coarse_to_fine(moving, reference, 16, 10, |m, r, init| {
        ilk_level(r, m, init, radius, warps, prefilter)
    })
}

#[derive(Clone, Copy, Debug)]
pub struct Tvl1Params {
    pub attachment: f64,
    pub tightness: f64,
    pub warps: usize,
    pub iterations: usize,
    pub tol: f64,
    pub prefilter: bool,
}

fn forward_diff(a: ArrayView2<'_, f64>, axis: usize) -> Array2<f64> {
    let mut g = Array2::zeros(a.raw_dim());
    let (n_x, n_y) = a.dim();
    if axis == 0 && n_x > 1 {
        let d = &a.slice(s![1.., ..]) - &a.slice(s![..n_x - 1, ..]);
        g.slice_mut(s![..n_x - 1, ..]).assign(&d);
    } else if axis == 1 && n_y > 1 {
        let d = &a.slice(s![.., 1..]) - &a.slice(s![.., ..n_y - 1]);
        g.slice_mut(s![.., ..n_y - 1]).assign(&d);
    }
    g
}

fn tvl1_level(
    reference: ArrayView2<'_, f64>,
    moving: ArrayView2<'_, f64>,
    flow0: Array3<f64>,
    p: &Tvl1Params,
) -> Array3<f64> {
    let (n_x, n_y) = reference.dim();
    let dt = 0.5 / 2.0;
    let reg_iterations = 2;
    let f0 = p.attachment * p.tightness;
    let f1 = dt / p.tightness;
    let tol = p.tol * (n_x * n_y) as f64;

    let mut flow = flow0;
    let mut previous = flow.clone();
    // proj[component][axis]
    let mut proj = vec![vec![Array2::<f64>::zeros((n_x, n_y)); 2]; 2];
    for _ in 0..p.warps {
        if p.prefilter {
            median_flow(&mut flow);
        }
        let mw = warp_edge(moving, flow.view());
        let (g0, g1) = gradient(mw.view());
        let ni = (&g0 * &g0 + &g1 * &g1).mapv(|v| if v == 0.0 { 1.0 } else { v });
        let rho0 = &mw - &reference - &g0 * &flow.index_axis(Axis(0), 0) - &g1 * &flow.index_axis(Axis(0), 1);
        for _ in 0..p.iterations {
            let mut aux = flow.clone();
            for x in 0..n_x {
                for y in 0..n_y {
                    let (a, b) = (g0[[x, y]], g1[[x, y]]);
                    let rho = rho0[[x, y]] + a * flow[[0, x, y]] + b * flow[[1, x, y]];
                    let n = ni[[x, y]];
                    let k = if rho.abs() <= f0 * n { rho / n } else { f0 * rho.signum() };
                    aux[[0, x, y]] -= k * a;
                    aux[[1, x, y]] -= k * b;
                }
            }
            flow = aux.clone();
            for c in 0..2 {
                for _ in 0..reg_iterations {
                    let gx = forward_diff(flow.index_axis(Axis(0), c), 0);
                    let gy = forward_diff(flow.index_axis(Axis(0), c), 1);
                    let norm = (&gx * &gx + &gy * &gy).mapv(|v| 1.0 + f1 * v.sqrt());
                    proj[c][0] = (&proj[c][0] - &(gx * dt)) / &norm;
                    proj[c][1] = (&proj[c][1] - &(gy * dt)) / &norm;
                    let mut d = -(&proj[c][0] + &proj[c][1]);
                    {
                        let src = proj[c][0].slice(s![..n_x - 1, ..]).to_owned();
                        let mut dst = d.slice_mut(s![1.., ..]);
                        dst += &src;
                    }
                    {
                        let src = proj[c][1].slice(s![.., ..n_y - 1]).to_owned();
                        let mut dst = d.slice_mut(s![.., 1..]);
                        dst += &src;
                    }
                    let updated = &aux.index_axis(Axis(0), c) + &d;
                    flow.index_axis_mut(Axis(0), c).assign(&updated);
                }
            }
        }
        let change: f64 = previous.iter().zip(flow.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        if change < tol {
            break;
        }
        previous = flow.clone();
    }
    flow
}

/// TV-L1 optical flow solved by alternating a pointwise data step with
/// Chambolle-style projections on each flow component.
pub fn optical_flow_tvl1(moving: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>, p: &Tvl1Params) -> Array3<f64> {
    coarse_to_fine(moving, reference, 16, 10, |m, r, init| tvl1_level(r, m, init, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::field::mean_endpoint_error;

    fn blob(n: usize, cx: f64, cy: f64, w: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(x, y)| {
            let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (-r2 / (2.0 * w * w)).exp()
        })
    }

    fn support(img: &Array2<f64>, thr: f64) -> Array2<bool> {
        img.mapv(|v| v > thr)
    }

    fn translation(n: usize, t: [f64; 2]) -> Array3<f64> {
        let mut f = Array3::zeros((2, n, n));
        f.index_axis_mut(Axis(0), 0).fill(t[0]);
        f.index_axis_mut(Axis(0), 1).fill(t[1]);
        f
    }

    #[test]
    fn identical_images_give_near_zero_fields() {
        let r = blob(32, 15.0, 17.0, 5.0);
        let tv = Tvl1Params { attachment: 15.0, tightness: 0.3, warps: 3, iterations: 5, tol: 1e-2, prefilter: false };
        let fields = [
            demons(r.view(), r.view(), 10, 1.0, None),
            optical_flow_ilk(r.view(), r.view(), 5, 3, true),
            optical_flow_tvl1(r.view(), r.view(), &tv),
        ];
        for f in fields {
            let m = mean_endpoint_error(f.view(), Array3::zeros(f.raw_dim()).view(), None);
            assert!(m < 0.1, "mean magnitude {m}");
        }
    }

    #[test]
    fn demons_recovers_blob_translation() {
        let r = blob(48, 24.0, 24.0, 7.0);
        // moving(x) = reference(x - 3): the truth is d = (3, 0).
        let m = blob(48, 27.0, 24.0, 7.0);
        let mask = support(&r, 0.2);
        let truth = translation(48, [3.0, 0.0]);
        let single = demons(m.view(), r.view(), 10, 1.0, None);
        let multi = demons_multilevel(m.view(), r.view(), 10, 1.0, 3);
        let e1 = mean_endpoint_error(single.view(), truth.view(), Some(mask.view()));
        let e3 = mean_endpoint_error(multi.view(), truth.view(), Some(mask.view()));
        assert!(e3 < 0.5, "endpoint error {e3}");
        assert!(e3 < e1);
    }

    #[test]
    fn optical_flow_recovers_blob_translation() {
        let r = blob(48, 24.0, 24.0, 7.0);
        let m = blob(48, 26.0, 23.0, 7.0);
        let truth = translation(48, [2.0, -1.0]);
        let mask = support(&r, 0.2);
        let ilk = optical_flow_ilk(m.view(), r.view(), 5, 3, true);
        assert!(mean_endpoint_error(ilk.view(), truth.view(), Some(mask.view())) < 0.5);
        let tv = Tvl1Params { attachment: 15.0, tightness: 0.3, warps: 3, iterations: 5, tol: 1e-2, prefilter: false };
        let tvf = optical_flow_tvl1(m.view(), r.view(), &tv);
        assert!(mean_endpoint_error(tvf.view(), truth.view(), Some(mask.view())) < 0.5);
    }
}
