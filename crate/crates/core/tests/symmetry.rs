use bubbleflow::halfspace_sim::{seed_state, SeedConfig, SimGrid, Stepper};
use bubbleflow::profiles::{geometric_mesh, BubbleSpec, ModeFunction};
use bubbleflow::symmetry::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn generic_fields(x: [f64; 2]) -> FieldSample {
    let raw = [
        (1.3 * x[0] + 0.4 * x[1]).sin() + 0.2,
        (0.7 * x[0] - 1.1 * x[1]).cos(),
        1.5 + 0.3 * x[0] * x[1] + 0.2 * x[1],
    ];
    let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
    FieldSample {
        u: [raw[0] / n, raw[1] / n, raw[2] / n],
        v: [(x[0] + 2.0 * x[1]).sin(), (0.5 * x[0]).cos() * x[1] + 0.1],
        p: x[0] * x[0] + x[1].sin(),
    }
}

fn symmetric_fields(x: [f64; 2]) -> FieldSample {
    let s = x[1];
    let raw = [(0.5 * x[0] + 0.3 * s * s).cos(), 0.6 + 0.2 * x[0], 0.5 * s];
    let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
    FieldSample {
        u: [raw[0] / n, raw[1] / n, raw[2] / n],
        v: [(0.5 * x[0] - 0.3 * s * s).sin(), 0.5 * s * x[0].cos()],
        p: 0.5 * s * s + 0.3 * x[0],
    }
}

#[test]
fn symmetric_grid_commutes_to_rounding() {
    for f in [generic_fields as fn([f64; 2]) -> FieldSample, symmetric_fields] {
        let d = residual_commutes_with_reflection(OffsetGrid { n: 64, l: 1.0, offset: 0.0 }, 0.7, f);
        assert!(d < 1e-9, "deviation {d}");
    }
}

#[test]
fn offset_grid_deviation_is_second_order() {
    let (devs, order) = commutation_order(&[32, 64, 128], 1.0, 0.25, 0.7, generic_fields).unwrap();
    assert!(devs.iter().all(|d| *d > 0.0));
    assert!((order - 2.0).abs() < 0.1, "order {order}, deviations {devs:?}");
}

#[test]
fn antisymmetric_director_perturbation_keeps_second_order() {
    let perturbed = |x: [f64; 2]| {
        let mut s = symmetric_fields(x);
        // even u3 perturbation leaves the symmetry class
        s.u[2] += 0.2 * (0.5 * x[0] + 0.2 * x[1] * x[1]).cos();
        s
    };
    let (_, order) = commutation_order(&[64, 128, 256], 1.0, 0.25, 1.0, perturbed).unwrap();
    assert!((order - 2.0).abs() < 0.1, "order {order}");
}

#[test]
fn e2_projection_vanishes_with_reflected_bubble() {
    let xs = boundary_samples(-1.0, 1.0, 100);
    let with = boundary_e2_projection(&PairConfig::standard(true), &xs);
    let without = boundary_e2_projection(&PairConfig::standard(false), &xs);
    assert!(with < 1e-12, "with reflection {with}");
    assert!(without > 1e-3, "without reflection {without}");
}

#[test]
fn e2_projection_without_reflection_fades_with_distance() {
    let xs = boundary_samples(-1.0, 1.0, 100);
    let mut last = f64::INFINITY;
    for xi2 in [0.3, 1.0, 3.0, 10.0, 30.0] {
        let mut cfg = PairConfig::standard(false);
        cfg.interior.xi[1] = xi2;
        let p = boundary_e2_projection(&cfg, &xs);
        assert!(p < last, "xi2 = {xi2}: {p} not below {last}");
        last = p;
    }
    // the interaction goes through the 1/r tail of the interior bubble
    assert!(last < 0.05 * boundary_e2_projection(&PairConfig::standard(false), &xs));
}

#[test]
fn transported_term_vanishes_on_symmetric_state_and_detects_faults() {
    let mut cfg = SeedConfig::two_bubble(1.0 / 64.0).unwrap();
    cfg.boundary.lambda = 0.15;
    cfg.interior.lambda = 0.12;
    cfg.with_phi0 = false;
    let mut state = seed_state(&cfg).unwrap();
    // v = 0 gives exactly zero
    assert_eq!(transported_term_boundary_check(&state, cfg.boundary.xi[0]), 0.0);
    let stepper = Stepper::new(state.grid);
    let h = state.grid.h();
    for _ in 0..20 {
        stepper.step(&mut state, h * h / 8.0).unwrap();
    }
    let clean = transported_term_boundary_check(&state, cfg.boundary.xi[0]);
    assert!(clean < 1e-10, "symmetric state {clean}");
    let n = state.grid.n;
    for i in 0..n {
        state.v[i][1] = 0.5;
    }
    let faulty = transported_term_boundary_check(&state, cfg.boundary.xi[0]);
    assert!(faulty > 1e-3, "fault not detected: {faulty}");
}

#[test]
fn pressure_neumann_chain_holds_on_simulated_state() {
    let mut cfg = SeedConfig::two_bubble(1.0 / 64.0).unwrap();
    cfg.boundary.lambda = 0.15;
    cfg.interior.lambda = 0.12;
    cfg.with_phi0 = false;
    let run = |n: usize| {
        let mut c = cfg.clone();
        c.grid = SimGrid::new(n, 1.0).unwrap();
        let mut state = seed_state(&c).unwrap();
        let stepper = Stepper::new(state.grid);
        let dt = 1.0 / (128.0 * 128.0 * 8.0);
        for _ in 0..40 {
            stepper.step(&mut state, dt).unwrap();
        }
        pressure_neumann_chain(&state)
    };
    let coarse = run(128);
    let fine = run(256);
    // every ingredient is a one-sided consistency error, shrinking under refinement
    assert!(fine.d22_v2 < 0.5 * coarse.d22_v2, "{coarse:?} {fine:?}");
    assert!(fine.director_term < 0.5 * coarse.director_term, "{coarse:?} {fine:?}");
    assert!(fine.d2_p < 0.5 * coarse.d2_p, "{coarse:?} {fine:?}");
}

fn modes(second: f64) -> Vec<ModeFunction> {
    let rho = geometric_mesh(0.05, 20.0, 1.2);
    (-2..=2)
        .map(|k| {
            let vals = rho
                .iter()
                .map(|&r| {
                    let f = r / (1.0 + r * r) * (1.0 + 0.1 * k as f64);
                    Complex64::new(f, if k == 0 { second * f } else { 0.5 * second * f })
                })
                .collect();
            ModeFunction::new(k, rho.clone(), vals).unwrap()
        })
        .collect()
}

#[test]
fn modes_with_real_coefficients_are_symmetric() {
    let r = mode_expansion_symmetry_check(&modes(0.0), 32).unwrap();
    assert!(r.defect < 1e-12, "{r:?}");
    assert_eq!(r.second_component, 0.0);
}

#[test]
fn unit_second_component_breaks_symmetry() {
    let rho = geometric_mesh(0.05, 20.0, 1.2);
    let m = ModeFunction::new(0, rho.clone(), rho.iter().map(|_| Complex64::new(0.0, 1.0)).collect()).unwrap();
    let r = mode_expansion_symmetry_check(&[m], 32).unwrap();
    assert!(r.defect > 0.5, "{r:?}");
    assert_eq!(r.worst_mode, Some(0));
}

#[test]
fn parity_defect_is_linear_in_second_component() {
    let base = mode_expansion_symmetry_check(&modes(1e-3), 32).unwrap().defect;
    for s in [1e-2, 1e-1, 1.0] {
        let d = mode_expansion_symmetry_check(&modes(s), 32).unwrap().defect;
        let ratio = d / base / (s / 1e-3);
        assert!((ratio - 1.0).abs() < 1e-9, "scale {s}: ratio {ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn e2_projection_vanishes_for_random_pairs(
        lambda in 0.02f64..0.3,
        omega in -3.0f64..3.0,
        xi1 in -0.5f64..0.5,
        xi2 in 0.05f64..1.0,
        lambda_dot in -1.0f64..1.0,
        b in -0.5f64..0.5,
    ) {
        let cfg = PairConfig {
            boundary: Some(BubbleSpec::boundary(0.1, b)),
            interior: BubbleSpec::interior(lambda, omega, [xi1, xi2]),
            with_reflection: true,
            lambda_dot,
            omega_dot: 0.2,
            xi_dot: [0.1, -0.3],
        };
        let p = boundary_e2_projection(&cfg, &boundary_samples(-1.0, 1.0, 100));
        prop_assert!(p < 1e-12, "projection {}", p);
    }

    #[test]
    fn parity_defect_vanishes_iff_second_components_vanish(s in -1.0f64..1.0) {
        let r = mode_expansion_symmetry_check(&modes(s), 16).unwrap();
        if s == 0.0 {
            prop_assert!(r.defect < 1e-12);
        } else {
            prop_assert!(r.defect > 1e-3 * s.abs());
        }
    }
}
