use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::filters::{gaussian_kernel_radius, separable, Boundary};

use super::field::sample_clamped;

/// Halves the grid (rounding up) after anti-alias smoothing.
pub fn reduce(img: ArrayView2<'_, f64>) -> Array2<f64> {
    let sigma = 2.0 * 2.0 / 6.0;
    let k = gaussian_kernel_radius(sigma, (4.0 * sigma + 0.5) as usize);
    let smoothed = separable(img, &k, Boundary::Reflect);
    let (n_x, n_y) = img.dim();
    resize_bilinear(smoothed.view(), (n_x.div_ceil(2), n_y.div_ceil(2)))
}

/// Pixel-center aligned bilinear resize.
pub fn resize_bilinear(img: ArrayView2<'_, f64>, shape: (usize, usize)) -> Array2<f64> {
    let (n_x, n_y) = img.dim();
    let sx = n_x as f64 / shape.0 as f64;
    let sy = n_y as f64 / shape.1 as f64;
    Array2::from_shape_fn(shape, |(x, y)| {
        sample_clamped(img, (x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
    })
}

/// Coarse-to-fine image stack; the first entry is the coarsest level.
pub fn build(img: ArrayView2<'_, f64>, min_size: usize, max_levels: usize) -> Vec<Array2<f64>> {
    let mut levels = vec![img.to_owned()];
    let mut size = img.dim().0.min(img.dim().1);
    while levels.len() < max_levels && size as f64 > 2.0 * min_size as f64 {
        let next = reduce(levels.last().expect("non-empty").view());
        size = next.dim().0.min(next.dim().1);
        levels.push(next);
    }
    levels.reverse();
    levels
}

/// Nearest-neighbour upsampling of a `[2, x, y]` flow with displacements
/// rescaled to the new grid.
pub fn resize_flow(flow: &Array3<f64>, shape: (usize, usize)) -> Array3<f64> {
    let (_, n_x, n_y) = flow.dim();
    let zoom = |o: usize, n: usize| if o > 1 { (n - 1) as f64 / (o - 1) as f64 } else { 0.0 };
    let (zx, zy) = (zoom(shape.0, n_x), zoom(shape.1, n_y));
    let scale = [shape.0 as f64 / n_x as f64, shape.1 as f64 / n_y as f64];
    let mut out = Array3::zeros((2, shape.0, shape.1));
    for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        for ((x, y), v) in plane.indexed_iter_mut() {
            let sx = ((x as f64 * zx + 0.5).floor() as usize).min(n_x - 1);
            let sy = ((y as f64 * zy + 0.5).floor() as usize).min(n_y - 1);
            *v = scale[c] * flow[[c, sx, sy]];
        }
    }
    out
}
