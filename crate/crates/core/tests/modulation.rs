use bubbleflow::correction::{error_k, BubbleMotion, RealRate, TimeWindow};
use bubbleflow::modulation::*;
use bubbleflow::profiles::{kernel_z, w_profile, BubbleSpec, KERNEL_INDICES};
use bubbleflow::vec3::{add, scale};
use bubbleflow::Error;
use proptest::prelude::*;

const T: f64 = 0.01;

fn plain(t: f64, kappa: f64) -> (f64, f64) {
    lambda_star(t, T, kappa, LambdaStarVariant::Plain)
}

/// Closed-form `Ktilde` and its first two derivatives.
fn ktilde(z: f64) -> (f64, f64, f64) {
    let e = (-z / 4.0).exp();
    let k = 2.0 * (1.0 - e) / z;
    let k1 = 2.0 * (e / (4.0 * z) - (1.0 - e) / (z * z));
    let k2 = 2.0 * (-e / (16.0 * z) - e / (2.0 * z * z) + 2.0 * (1.0 - e) / (z * z * z));
    (k, k1, k2)
}

/// Composite Simpson on `rho = u / (1 - u)`, independent of the library
/// quadrature and kernel code.
fn gamma1_simpson(tau: f64, n: usize) -> f64 {
    let f = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let rho = u / (1.0 - u);
        let jac = 1.0 / ((1.0 - u) * (1.0 - u));
        let d = 1.0 + rho * rho;
        let w_rho = -2.0 / d;
        let cos_w = (rho * rho - 1.0) / d;
        let z = tau * d;
        let (k, k1, k2) = ktilde(z);
        -rho.powi(3) * w_rho.powi(3) * (k + 2.0 * z * k1 * rho * rho / d - 4.0 * cos_w * z * z * k2) * jac
    };
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn gamma1_matches_simpson_oracle_at_one() {
    let lib = gamma1(1.0).unwrap();
    let oracle = gamma1_simpson(1.0, 1_000_000);
    assert!((lib - oracle).abs() < 1e-6, "{lib} vs {oracle}");
    assert!((lib - -0.083_376_627_9).abs() < 1e-8);
}

#[test]
fn gamma1_small_and_large_tau() {
    let small = gamma1(1e-4).unwrap();
    let tau: f64 = 1e-4;
    assert!((small - 1.0).abs() <= 1.1 * tau * (1.0 + tau.ln().abs()));
    let large = gamma1(100.0).unwrap();
    assert!(large.abs() <= 1.1 / 100.0);
}

#[test]
fn gamma_profiles_at_zero() {
    // the bracket reduces to Ktilde(0) = 1/2 and int rho^3 w_rho^3 = -2
    assert!((gamma_profile(1e-12, GAMMA1_PUBLISHED).unwrap() - 1.0).abs() < 1e-9);
    assert!((gamma_profile(1e-12, GAMMA1_PROJECTED).unwrap() - 2.0).abs() < 1e-9);
}

#[test]
fn lambda_star_examples() {
    let (v, _) = plain(0.005, 1.0);
    assert!((v - 1.781e-4).abs() < 5e-8);
    let (near, _) = plain(T - 1e-14, 1.0);
    assert!(near < 1e-15);
    for i in 0..50 {
        let t = -T + 2.0 * T * i as f64 / 50.0;
        let (_, d) = plain(t, 1.7);
        let upsilon = (T - t).ln().powi(2) * d;
        assert!((upsilon + 1.7).abs() < 1e-14);
    }
}

#[test]
fn matched_kappa_is_linear() {
    assert!((matched_kappa(-2.0, T) - 2.0 * matched_kappa(-1.0, T)).abs() < 1e-15);
}

#[test]
fn ansatz_residual_shrinks_toward_final_time() {
    let kappa = matched_kappa(-1.0, T);
    let mut mesh: Vec<f64> = (0..400).map(|i| -T + T * i as f64 / 400.0).collect();
    mesh.extend(graded_time_mesh(T, 800, 1e-13));
    let rates = mesh.iter().map(|&s| plain(s, kappa).1).collect();
    let traj = ParamTrajectory::from_rate(mesh, rates).unwrap();
    let res: Vec<f64> = [1e-3, 1e-6, 1e-9, 1e-12]
        .iter()
        .map(|g| reduced_residual_lambda(&traj, -1.0, T - g).unwrap().abs())
        .collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
    assert!(res[3] < 0.25);
}

#[test]
fn residual_of_exact_quadrature() {
    // rate -1 on [-T, T): residual = -log((t + T) / lambda^2) + |a|
    let mesh = vec![-T, 0.0, T];
    let traj = ParamTrajectory::from_rate(mesh, vec![-1.0; 3]).unwrap();
    let t = 0.004;
    let lam = traj.lambda_at(t);
    assert!((lam - (T - t)).abs() < 1e-15);
    let r = reduced_residual_lambda(&traj, -0.3, t).unwrap();
    assert!((r - (0.3 - ((t + T) / (lam * lam)).ln())).abs() < 1e-12);
}

#[test]
fn solve_lambda_acceptance_shape() {
    let mesh = graded_time_mesh(T, 400, 1e-10);
    let sol = solve_lambda(-1.0, &mesh, SolveOptions::default()).unwrap();
    let traj = &sol.trajectory;
    let start = traj.time_mesh.iter().position(|&t| t >= 0.0).unwrap();
    let lam = &traj.lambda[start..];
    assert!(lam[..lam.len() - 1].iter().all(|&l| l > 0.0));
    assert!(lam.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(*lam.last().unwrap(), 0.0);
    let profile = residual_profile(traj, -1.0).unwrap();
    let keep = profile.len() - profile.len() / 50;
    let worst = profile[..keep].iter().fold(0.0f64, |m, (_, r)| m.max(r.abs()));
    assert!(worst < 1e-3, "worst residual {worst}");
}

#[test]
fn solve_lambda_linear_with_frozen_endpoint() {
    let mesh = graded_time_mesh(T, 240, 1e-8);
    let opts = SolveOptions {
        endpoint: EndpointMode::Frozen,
        tol: 1e-11,
        ..Default::default()
    };
    let a = solve_lambda(-1.0, &mesh, opts).unwrap().trajectory;
    let b = solve_lambda(-2.0, &mesh, opts).unwrap().trajectory;
    for (x, y) in a.lambda_dot.iter().zip(&b.lambda_dot) {
        assert!((y - 2.0 * x).abs() <= 1e-6 * x.abs().max(1e-12), "{x} {y}");
    }
}

#[test]
fn solve_lambda_sign_condition() {
    let mesh = graded_time_mesh(T, 400, 1e-10);
    assert!(matches!(
        solve_lambda(1.0, &mesh, SolveOptions::default()),
        Err(Error::SignConditionViolated { .. })
    ));
}

#[test]
fn omega0_examples() {
    assert_eq!(omega0(-3.0, 0.0).unwrap(), 0.0);
    assert!((omega0(-1.5, -1.5).unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    assert!((omega0(-2.0, 2.0).unwrap() + std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    assert!(omega0(1.0, 0.0).is_err());
}

fn r_inv_sq(t: f64, gamma: f64) -> f64 {
    plain(t, 1.0).0.powf(2.0 * gamma)
}

#[test]
fn solve_xi_zero_samples() {
    let mesh = graded_time_mesh(T, 100, 1e-8);
    let samples: Vec<_> = mesh.iter().map(|&t| (t, [0.0, 0.0])).collect();
    let xi = solve_xi(&samples, [0.2, 0.0], T, 0.25).unwrap();
    assert!(xi.xi.iter().all(|x| *x == [0.2, 0.0]));
}

#[test]
fn solve_xi_power_law() {
    let q = [0.3, 0.0];
    let mesh = graded_time_mesh(T, 400, 1e-12);
    let samples: Vec<_> = mesh.iter().map(|&t| (t, [r_inv_sq(t, 0.25), 0.0])).collect();
    let xi = solve_xi(&samples, q, T, 0.25).unwrap();
    let p = xi.fitted_exponent(q, T, 1e-8, 1e-4);
    assert!((p - 1.5).abs() < 0.1, "exponent {p}");

    let flipped: Vec<_> = samples
        .iter()
        .enumerate()
        .map(|(i, (t, v))| (*t, [if i % 3 == 0 { -v[0] } else { v[0] }, 0.0]))
        .collect();
    let xf = solve_xi(&flipped, q, T, 0.25).unwrap();
    for (a, b) in xf.xi.iter().zip(&xi.xi) {
        assert!((a[0] - q[0]).abs() <= (b[0] - q[0]).abs() + 1e-18);
    }
}

#[test]
fn solve_xi_detects_growth() {
    let mesh = graded_time_mesh(T, 200, 1e-10);
    let samples: Vec<_> = mesh.iter().map(|&t| (t, [1.0, 0.0])).collect();
    assert!(matches!(
        solve_xi(&samples, [0.0, 0.0], T, 0.25),
        Err(Error::GrowthViolation { .. })
    ));
}

fn chi(y: [f64; 2], r: f64) -> f64 {
    let rho = y[0].hypot(y[1]);
    if rho < 2.0 * r {
        w_profile(rho).w_rho.powi(2)
    } else {
        0.0
    }
}

#[test]
fn orthogonality_recovers_single_kernel() {
    let spec = BubbleSpec::boundary(0.1, 0.0);
    let r = 3.0;
    let h = |y: [f64; 2]| scale(chi(y, r), kernel_z(0, 1, &spec, y).unwrap());
    let c = orthogonality_coeffs(h, &spec, r).unwrap();
    assert!((c.coeffs[0] - c.norms[0]).abs() < 1e-10 * c.norms[0]);
    for k in 1..6 {
        assert!(c.coeffs[k].abs() < 1e-10, "{:?}", KERNEL_INDICES[k]);
    }
    assert!((c.weights()[0] - 1.0).abs() < 1e-10);
    let y = [0.7, 0.4];
    let hb = c.hbar(&spec, y).unwrap();
    let direct = h(y);
    for i in 0..3 {
        assert!((hb[i] - direct[i]).abs() < 1e-10);
    }
}

#[test]
fn orthogonality_kills_mode_three() {
    let spec = BubbleSpec::interior(0.2, 0.4, [0.1, 0.5]);
    let h = |y: [f64; 2]| {
        let rho = y[0].hypot(y[1]);
        let th = y[1].atan2(y[0]);
        let fr = spec.profile().frame([0.1 + 0.2 * y[0], 0.5 + 0.2 * y[1]]).unwrap();
        let a = rho / (1.0 + rho.powi(3));
        add(scale(a * (3.0 * th).cos(), fr[0]), scale(a * (3.0 * th).sin(), fr[1]))
    };
    let c = orthogonality_coeffs(h, &spec, 4.0).unwrap();
    assert!(c.coeffs.iter().all(|v| v.abs() < 1e-10), "{:?}", c.coeffs);
}

#[test]
fn orthogonality_ignores_outside_support() {
    let spec = BubbleSpec::boundary(0.1, 0.0);
    let h = |y: [f64; 2]| if y[0].hypot(y[1]) > 6.0 { [1.0, 2.0, 3.0] } else { [0.0; 3] };
    let c = orthogonality_coeffs(h, &spec, 3.0).unwrap();
    assert!(c.coeffs.iter().all(|v| *v == 0.0));
}

#[test]
fn error_projection_matches_gamma_form() {
    let t = T / 2.0;
    let (lam, ldot) = plain(t, 1.0);
    let spec = BubbleSpec::boundary(lam, 0.0);
    let rate = RealRate(|s: f64| plain(s, 1.0).1);
    let motion = BubbleMotion {
        lambda_dot: ldot,
        xi_dot: [0.0, 0.0],
    };
    let window = TimeWindow::from_final_time(T);
    let r = lam.powf(-0.25);
    // the lambda_* trajectory is pure mode 0, so one ray suffices
    let c01 = bubbleflow::quad::integrate_breaks(
        |rho| {
            let e = error_k(&rate, &spec, &motion, rho, 0.0, t, window).unwrap().total();
            let z = kernel_z(0, 1, &spec, [rho, 0.0]).unwrap();
            let fr = spec.profile().frame([lam * rho, 0.0]).unwrap();
            let h = e.reconstruct(&fr);
            std::f64::consts::TAU * rho * (h[0] * z[0] + h[1] * z[1] + h[2] * z[2])
        },
        &[0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 2.0 * r],
        bubbleflow::quad::QuadOptions::with_tol(1e-12, 1e-9),
    )
    .unwrap();
    let b01 = lam / std::f64::consts::TAU * c01;
    let form = b01_gamma_form(|s| plain(s, 1.0).1, lam, t, -T, GAMMA1_PROJECTED).unwrap();
    assert!((b01 - form).abs() < 0.05 * form.abs(), "{b01} vs {form}");
    let published = b01_gamma_form(|s| plain(s, 1.0).1, lam, t, -T, GAMMA1_PUBLISHED).unwrap();
    assert!((b01 / published) > 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn orthogonality_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = BubbleSpec::boundary(0.1, 0.0);
        let f = |y: [f64; 2]| [y[0].sin(), y[1] * y[0], (y[0] + y[1]).cos()];
        let g = |y: [f64; 2]| [1.0 / (1.0 + y[0] * y[0]), y[1], 0.3];
        let cf = orthogonality_coeffs(f, &spec, 2.0).unwrap();
        let cg = orthogonality_coeffs(g, &spec, 2.0).unwrap();
        let cs = orthogonality_coeffs(|y| add(scale(a, f(y)), scale(b, g(y))), &spec, 2.0).unwrap();
        for k in 0..6 {
            let expect = a * cf.coeffs[k] + b * cg.coeffs[k];
            prop_assert!((cs.coeffs[k] - expect).abs() < 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn upsilon_constant(t in -0.0099f64..0.0099, kappa in 0.1f64..5.0) {
        let (_, d) = plain(t, kappa);
        prop_assert!(((T - t).ln().powi(2) * d + kappa).abs() < 1e-13 * kappa);
    }

    #[test]
    fn omega0_in_principal_branch(div in -10.0f64..-1e-6, curl in -10.0f64..10.0) {
        let w = omega0(div, curl).unwrap();
        prop_assert!(w.abs() < std::f64::consts::FRAC_PI_2);
        prop_assert!((w.tan() - curl / div).abs() < 1e-9 * (1.0 + (curl / div).abs()));
    }
}

#[test]
fn gamma1_bounds_share_one_constant() {
    let b = gamma1_bounds(40).unwrap();
    assert!(b.constant.is_finite() && b.constant < 2.0, "{b:?}");
    assert!(b.near > 0.5 && b.far > 0.5, "{b:?}");
}

#[test]
fn solved_rate_is_flat_in_the_final_decade() {
    let mesh = graded_time_mesh(T, 400, 1e-10);
    let sol = solve_lambda(-1.0, &mesh, SolveOptions::default()).unwrap();
    let f = rate_flatness(&sol.trajectory, 0.02).unwrap();
    assert!(f.samples.len() > 10);
    assert!(f.max_deviation < 0.1, "{f:?}");
}
