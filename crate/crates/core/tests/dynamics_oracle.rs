use gridsynth_core::dynamics::{bicycle_f, integrate, propagate_box, Bicycle, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REFERENCE: &str = include_str!("data/bicycle_f_reference.csv");
const REL_TOL: f64 = 1e-12;

fn reference_rows() -> Vec<([f64; 3], [f64; 2], [f64; 3])> {
    REFERENCE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
            ([v[0], v[1], v[2]], [v[3], v[4]], [v[5], v[6], v[7]])
        })
        .collect()
}

#[test]
fn bicycle_matches_high_precision_reference() {
    let rows = reference_rows();
    assert_eq!(rows.len(), 1000);
    let mut worst = 0.0f64;
    for (x, u, exact) in rows {
        let got = bicycle_f(&x, &u);
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = got.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err / scale);
    }
    assert!(worst <= REL_TOL, "worst relative error {worst:e}");
}

#[test]
fn slip_angle_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let u = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let f0 = bicycle_f(&[1.0, 1.0, 0.0], &u);
        let expected = u[1].tan() / 2.0 * f0[0];
        assert!((f0[1] - expected).abs() <= REL_TOL * f0[0].abs().max(f0[1].abs()));

        let x3 = rng.gen_range(-3.0..3.0);
        let f = bicycle_f(&[0.0, 0.0, x3], &u);
        if f[0].abs() > 1e-3 {
            let t = (Bicycle::slip_angle(u[1]) + x3).tan();
            assert!((f[1] / f[0] - t).abs() <= 1e-10 * t.abs().max(1.0));
        }
    }
}

#[test]
fn growth_matrix_bounds_sampled_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-6;
    let mut sup_c = 0.0f64;
    for _ in 0..2000 {
        let u = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let x = [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0), rng.gen_range(-3.1..3.1)];
        let l = Bicycle.growth_matrix(&u);
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            let fp = bicycle_f(&xp, &u);
            let fm = bicycle_f(&xm, &u);
            for i in 0..3 {
                let d = ((fp[i] - fm[i]) / (2.0 * eps)).abs();
                assert!(d <= l[i * 3 + j] + 1e-6, "entry ({i},{j}) at u={u:?}: {d} > {}", l[i * 3 + j]);
            }
        }
        sup_c = sup_c.max(l[2]);
    }
    // the sup over U of the column-3 entry sits at |u| = (1, 1)
    let alpha_max = (1f64.tan() / 2.0).atan();
    let c_max = 1.0 / alpha_max.cos();
    assert!(sup_c <= c_max + 1e-15);
    assert_eq!(Bicycle.growth_matrix(&[1.0, -1.0])[2], c_max);
}

#[test]
fn growth_matrix_is_attained() {
    // |d f_1 / d x_3| reaches c when the heading makes sin(alpha + x3) = 1
    let u = [0.7, 0.4];
    let alpha = Bicycle::slip_angle(u[1]);
    let x3 = std::f64::consts::FRAC_PI_2 - alpha;
    let eps = 1e-6;
    let d = (bicycle_f(&[0.0, 0.0, x3 + eps], &u)[0] - bicycle_f(&[0.0, 0.0, x3 - eps], &u)[0]) / (2.0 * eps);
    assert!((d.abs() - Bicycle.growth_matrix(&u)[2]).abs() < 1e-8);
}

fn fine_rk4(x0: &[f64], u: &[f64], tau: f64, substeps: usize) -> Vec<f64> {
    let h = tau / substeps as f64;
    let f = |x: &[f64]| bicycle_f(x, u).to_vec();
    let mut x = x0.to_vec();
    let axpy = |x: &[f64], k: &[f64], s: f64| x.iter().zip(k).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    for _ in 0..substeps {
        let k1 = f(&x);
        let k2 = f(&axpy(&x, &k1, h / 2.0));
        let k3 = f(&axpy(&x, &k2, h / 2.0));
        let k4 = f(&axpy(&x, &k3, h));
        for i in 0..3 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

#[test]
fn propagated_box_contains_dense_samples() {
    let center = [0.0, 0.0, 0.0];
    let radius = [0.1, 0.1, 0.1];
    let u = [1.0, 0.0];
    let p = propagate_box(&Bicycle, &center, &radius, &u, 0.3, 5).unwrap();
    assert!(p.radius.iter().zip(&radius).all(|(a, b)| a >= b));
    let b = p.rect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let x0: Vec<f64> = (0..3).map(|i| center[i] + rng.gen_range(-radius[i]..=radius[i])).collect();
        let x1 = fine_rk4(&x0, &u, 0.3, 100);
        assert!(b.contains_point(&x1), "{x1:?} outside {b:?}");
    }
}

#[test]
fn propagated_box_contains_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let center = [rng.gen_range(0.5..3.5), rng.gen_range(0.5..3.5), rng.gen_range(-2.5..2.5)];
        let radius = [rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3)];
        let u = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
        let p = propagate_box(&Bicycle, &center, &radius, &u, 0.3, 5).unwrap();
        for s in 0..20 {
            let x0: Vec<f64> = if s < 8 {
                // corners
                (0..3).map(|i| center[i] + if (s >> i) & 1 == 1 { radius[i] } else { -radius[i] }).collect()
            } else {
                (0..3).map(|i| center[i] + rng.gen_range(-1.0..=1.0) * radius[i]).collect()
            };
            let x1 = integrate(&Bicycle, &x0, &u, 0.3, 5).unwrap();
            for i in 0..3 {
                let mut d = x1[i] - p.center[i];
                if i == 2 {
                    let w = 2.0 * std::f64::consts::PI;
                    d -= (d / w).round() * w;
                }
                assert!(d.abs() <= p.radius[i], "dim {i}: |{d}| > {} (u={u:?}, r={radius:?})", p.radius[i]);
            }
        }
    }
}

#[test]
fn rk4_is_fourth_order() {
    let x0 = [1.0, 1.0, 0.3];
    let u = [1.0, 0.8];
    let tau = 3.0;
    let reference = fine_rk4(&x0, &u, tau, 1000);
    let err = |n: usize| {
        let x = integrate(&Bicycle, &x0, &u, tau, n).unwrap();
        // the heading is exact (constant rate) and wraps, so compare positions
        (0..2).map(|i| (x[i] - reference[i]).abs()).fold(0.0, f64::max)
    };
    for n in [5usize, 10, 20] {
        let ratio = err(n) / err(2 * n);
        assert!(ratio >= 8.0, "n={n}: ratio {ratio}");
    }
}
