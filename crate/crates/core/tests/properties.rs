use dynmri::forward::{adjoint_operator, forward_operator, inner, CoilSensitivities, ComplexImage, DynamicKSpace, SamplingMask};
use dynmri::metrics::{nmse, psnr, ssim2d};
use dynmri::pipeline::{percentile, postprocess_crop};
use dynmri::registration::{integrate_field, warp, warp_displacement, WarpConfig};
use dynmri::sampling::{
    acs_lines, binarize_budget, budget, equispaced_mask, kt_equispaced_mask, LineScores, Offset, SamplingMode,
};
use dynmri::sensitivity::normalize;
use dynmri::forward::RealImage;
use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operator_pair_is_adjoint(nx in 1usize..=16, ny in 1usize..=16, nc in 1usize..=4, nt in 1usize..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = CoilSensitivities::new(Array4::from_shape_fn((nx, ny, nc, nt), |_| rand_c(&mut rng))).unwrap();
        let x = ComplexImage::new(Array3::from_shape_fn((nx, ny, nt), |_| rand_c(&mut rng))).unwrap();
        let y = DynamicKSpace::new(Array4::from_shape_fn((nx, ny, nc, nt), |_| rand_c(&mut rng))).unwrap();
        let m = SamplingMask::new(Array2::from_shape_fn((ny, nt), |_| rng.random_bool(0.5))).unwrap();
        let lhs = inner(forward_operator(&x, &s, &m).unwrap().data().iter(), y.data().iter());
        let rhs = inner(x.data().iter(), adjoint_operator(&y, &s, &m).unwrap().data().iter());
        let scale = lhs.norm().max(rhs.norm()).max(1e-300);
        prop_assert!((lhs - rhs).norm() / scale < 1e-9 || (lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn normalization_is_exact_and_idempotent(nx in 1usize..=12, ny in 1usize..=12, nc in 1usize..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = CoilSensitivities::new(Array4::from_shape_fn((nx, ny, nc, 2), |_| rand_c(&mut rng))).unwrap();
        let n = normalize(&s).unwrap();
        prop_assert!(n.normalization_deviation() <= 1e-10);
        let nn = normalize(&n).unwrap();
        for (a, b) in n.data().iter().zip(nn.data().iter()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn binarize_is_budget_exact_and_scale_invariant(
        n_y in 1usize..=24, n_t in 1usize..=4, seed in any::<u64>(), c in 1e-6f64..1e6, unified in any::<bool>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if unified { SamplingMode::Unified } else { SamplingMode::PhaseSpecific };
        let scores = LineScores::new(Array2::from_shape_fn((n_y, n_t), |_| rng.random_range(0.0..1.0))).unwrap();
        let forced_lines: Vec<usize> = (0..n_y).filter(|_| rng.random_bool(0.2)).collect();
        let forced = SamplingMask::repeat(&forced_lines, n_y, n_t).unwrap();
        let b = rng.random_range(forced_lines.len()..=n_y);
        let m = binarize_budget(&scores, b, &forced, mode).unwrap();
        prop_assert!(m.counts().iter().all(|&k| k == b));
        prop_assert!(m.contains(&forced));
        if unified {
            prop_assert!(m.is_unified());
        }
        prop_assert_eq!(binarize_budget(&scores.scaled(c), b, &forced, mode).unwrap(), m);
    }

    #[test]
    fn equispaced_masks_hit_the_budget(n_y in 16usize..=256, r_idx in 0usize..3, off in any::<u64>(), frac in 0.0f64..0.1) {
        let r = [4.0, 6.0, 8.0][r_idx];
        let n_t = 9;
        let acs = acs_lines(n_y, frac);
        prop_assume!(acs.len() <= budget(n_y, r));
        for mode in [SamplingMode::PhaseSpecific, SamplingMode::Unified] {
            let m = equispaced_mask(n_y, r, frac, Offset::Seeded(off), n_t, mode).unwrap();
            prop_assert!(m.counts().iter().all(|&k| k == budget(n_y, r)));
            prop_assert!(m.contains(&SamplingMask::repeat(&acs, n_y, n_t).unwrap()));
        }
        let kt = kt_equispaced_mask(n_y, r, frac, Offset::Seeded(off), n_t, SamplingMode::PhaseSpecific).unwrap();
        prop_assert!(kt.counts().iter().all(|&k| k == budget(n_y, r)));
        let stride = r as usize;
        if budget(n_y, r) > acs.len() {
            for start in 0..=n_t - stride {
                let mut residues = vec![false; stride];
                for t in start..start + stride {
                    for l in kt.frame_lines(t).into_iter().filter(|l| !acs.contains(l)) {
                        residues[l % stride] = true;
                    }
                }
                prop_assert!(residues.iter().all(|&b| b), "frames from {start}: {residues:?}");
            }
        }
    }

    #[test]
    fn zero_field_is_identity_and_integer_shifts_are_exact(n in 8usize..=20, dx in -3i32..=3, dy in -3i32..=3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
        let (w, _) = warp(img.view(), Array3::zeros((2, n, n)).view(), &WarpConfig::default()).unwrap();
        prop_assert!(w.iter().zip(img.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
        let mut d = Array3::zeros((2, n, n));
        d.index_axis_mut(ndarray::Axis(0), 0).fill(dx as f64);
        d.index_axis_mut(ndarray::Axis(0), 1).fill(dy as f64);
        let (s, valid) = warp_displacement(img.view(), d.view());
        for ((x, y), &v) in s.indexed_iter() {
            let (sx, sy) = (x as i32 + dx, y as i32 + dy);
            if valid[[x, y]] {
                prop_assert_eq!(v, img[[sx as usize, sy as usize]]);
            } else {
                prop_assert!(sx < 0 || sy < 0 || sx >= n as i32 || sy >= n as i32);
            }
        }
        let constant = integrate_field(d.view(), 4);
        prop_assert!(constant.iter().zip(d.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn metrics_fixed_points(nx in 7usize..=20, ny in 7usize..=20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Array2::from_shape_fn((nx, ny), |_| rng.random::<f64>());
        let d = Array2::from_shape_fn((nx, ny), |_| rng.random::<f64>());
        prop_assert_eq!(ssim2d(f.view(), f.view(), None).unwrap(), 1.0);
        prop_assert_eq!(nmse(f.view(), f.view()).unwrap(), 0.0);
        prop_assert_eq!(psnr(f.view(), f.view()).unwrap(), f64::INFINITY);
        let s = ssim2d(f.view(), d.view(), None).unwrap();
        prop_assert!(s <= 1.0 && s >= -1.0);
    }

    #[test]
    fn percentile_is_monotone_and_bounded(v in proptest::collection::vec(-1e3f64..1e3, 1..50), q1 in 0.0f64..100.0, q2 in 0.0f64..100.0) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let (a, b) = (percentile(&v, lo).unwrap(), percentile(&v, hi).unwrap());
        prop_assert!(a <= b);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= min && b <= max);
    }

    #[test]
    fn crop_is_centered(nx in 1usize..=30, ny in 1usize..=30, fx in 0.05f64..=1.0, fy in 0.05f64..=1.0) {
        let img = RealImage::new(Array3::from_shape_fn((nx, ny, 1), |(x, y, _)| (x * 1000 + y) as f64)).unwrap();
        let c = postprocess_crop(&img, [fx, fy], (nx, ny)).unwrap();
        let (cx, cy, _) = c.dims();
        prop_assert_eq!(c.data()[[0, 0, 0]], (((nx - cx) / 2) * 1000 + (ny - cy) / 2) as f64);
        let (left, right) = ((nx - cx) / 2, nx - cx - (nx - cx) / 2);
        prop_assert!(right == left || right == left + 1);
    }
}
