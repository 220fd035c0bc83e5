//! Small separable filters and finite-difference helpers on 2D grids.

use ndarray::{Array2, ArrayView2};

/// How samples beyond the grid edge are filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Repeat the edge sample.
    Nearest,
    /// Half-sample symmetric: `b a | a b`.
    Reflect,
    /// Whole-sample symmetric: `c b | a b c`.
    Mirror,
}

impl Boundary {
    pub fn index(self, i: isize, n: usize) -> usize {
        let n = n as isize;
        if (0..n).contains(&i) {
            return i as usize;
        }
        if n == 1 {
            return 0;
        }
        match self {
            Boundary::Nearest => i.clamp(0, n - 1) as usize,
            Boundary::Reflect => {
                let m = i.rem_euclid(2 * n);
                (if m >= n { 2 * n - 1 - m } else { m }) as usize
            }
            Boundary::Mirror => {
                let m = i.rem_euclid(2 * n - 2);
                (if m >= n { 2 * n - 2 - m } else { m }) as usize
            }
        }
    }
}

/// Sampled Gaussian truncated at `ceil(3σ)` and normalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    gaussian_kernel_radius(sigma, (3.0 * sigma).ceil() as usize)
}

pub fn gaussian_kernel_radius(sigma: f64, radius: usize) -> Vec<f64> {
    assert!(sigma > 0.0, "gaussian sigma must be positive");
    let radius = radius as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn convolve_axis<T>(src: ArrayView2<'_, T>, kernel: &[f64], axis: usize, bc: Boundary) -> Array2<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
{
    let (n_x, n_y) = src.dim();
    let radius = (kernel.len() / 2) as isize;
    Array2::from_shape_fn((n_x, n_y), |(x, y)| {
        let mut acc = T::default();
        for (o, &w) in kernel.iter().enumerate() {
            let d = o as isize - radius;
            let (sx, sy) = if axis == 0 {
                (bc.index(x as isize + d, n_x), y)
            } else {
                (x, bc.index(y as isize + d, n_y))
            };
            acc = acc + src[[sx, sy]] * w;
        }
        acc
    })
}

/// Separable Gaussian smoothing with edge replication.
pub fn gaussian_smooth<T>(src: ArrayView2<'_, T>, sigma: f64) -> Array2<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
{
    separable(src, &gaussian_kernel(sigma), Boundary::Nearest)
}

/// Applies the same 1D kernel along both axes.
pub fn separable<T>(src: ArrayView2<'_, T>, kernel: &[f64], bc: Boundary) -> Array2<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
{
    let tmp = convolve_axis(src, kernel, 0, bc);
    convolve_axis(tmp.view(), kernel, 1, bc)
}

/// Central differences in the interior, one-sided at the borders.
pub fn gradient(src: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let (n_x, n_y) = src.dim();
    let diff = |a: f64, b: f64, h: f64| (a - b) / h;
    let gx = Array2::from_shape_fn((n_x, n_y), |(x, y)| {
        if n_x < 2 {
            0.0
        } else if x == 0 {
            diff(src[[1, y]], src[[0, y]], 1.0)
        } else if x == n_x - 1 {
            diff(src[[x, y]], src[[x - 1, y]], 1.0)
        } else {
            diff(src[[x + 1, y]], src[[x - 1, y]], 2.0)
        }
    });
    let gy = Array2::from_shape_fn((n_x, n_y), |(x, y)| {
        if n_y < 2 {
            0.0
        } else if y == 0 {
            diff(src[[x, 1]], src[[x, 0]], 1.0)
        } else if y == n_y - 1 {
            diff(src[[x, y]], src[[x, y - 1]], 1.0)
        } else {
            diff(src[[x, y + 1]], src[[x, y - 1]], 2.0)
        }
    });
    (gx, gy)
}

/// Box mean over a `(2r+1)²` window with whole-sample mirrored borders.
pub fn box_mean(src: ArrayView2<'_, f64>, radius: usize) -> Array2<f64> {
    let w = 1.0 / (2 * radius + 1) as f64;
    separable(src, &vec![w; 2 * radius + 1], Boundary::Mirror)
}

/// 3x3 median with edge replication.
pub fn median3(src: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n_x, n_y) = src.dim();
    Array2::from_shape_fn((n_x, n_y), |(x, y)| {
        let mut w = [0.0f64; 9];
        let mut i = 0;
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                let sx = (x as isize + dx).clamp(0, n_x as isize - 1) as usize;
                let sy = (y as isize + dy).clamp(0, n_y as isize - 1) as usize;
                w[i] = src[[sx, sy]];
                i += 1;
            }
        }
        w.sort_by(|a, b| a.total_cmp(b));
        w[4]
    })
}
