use bubbleflow::error::Error;
use bubbleflow::halfspace_sim::*;
use bubbleflow::profiles::{BubbleKind, BubbleSpec};
use bubbleflow::spectral::Spectral2;
use bubbleflow::vec3::{self, Vec3};
use proptest::prelude::*;
use std::f64::consts::PI;

fn zero_background() -> Background {
    Background {
        origin: [0.0; 2],
        value: [0.0; 3],
        gradient: [[0.0; 3]; 2],
    }
}

/// Exact bubble in the fit convention (`Q_*` or `Q_omega Q_*`).
fn exact(spec: BubbleSpec) -> impl Fn([f64; 2]) -> Vec3 {
    let fit = BubbleFit {
        spec,
        background: zero_background(),
        residual: 0.0,
        peak: spec.xi,
    };
    move |x| fitted_value(&fit, x)
}

fn smooth_director(x: [f64; 2]) -> Vec3 {
    [
        (1.3 * x[0]).sin() + 0.3 * x[1],
        1.0 + 0.2 * (2.0 * x[1]).cos(),
        0.6 * x[1] * (1.0 + 0.5 * x[0]),
    ]
}

fn small_seed(n: usize) -> HalfSpaceState {
    let mut cfg = SeedConfig::two_bubble(2.0 / n as f64).unwrap();
    cfg.boundary.lambda = 0.15;
    cfg.interior.lambda = 0.12;
    cfg.with_phi0 = false;
    seed_state(&cfg).unwrap()
}

fn stepped_seed(n: usize, steps: usize) -> HalfSpaceState {
    let mut state = small_seed(n);
    let stepper = Stepper::new(state.grid);
    let h = state.grid.h();
    for _ in 0..steps {
        stepper.step(&mut state, h * h / 8.0).unwrap();
    }
    state
}

#[test]
fn grid_rejects_bad_sizes() {
    assert!(SimGrid::new(15, 1.0).is_err());
    assert!(SimGrid::new(8, 1.0).is_err());
    assert!(SimGrid::new(64, -1.0).is_err());
    assert!(SimGrid::with_spacing(0.3, 1.0).is_err());
    assert_eq!(SimGrid::with_spacing(1.0 / 256.0, 1.0).unwrap().n, 512);
}

#[test]
fn extend_then_restrict_is_bitwise_identity() {
    let state = stepped_seed(128, 10);
    let full = extend_reflect(&state).unwrap();
    assert!(full.parity_defect() < 1e-14);
    let mut copy = state.clone();
    copy.u.iter_mut().for_each(|u| *u = [9.0; 3]);
    copy.v.iter_mut().for_each(|v| *v = [9.0; 2]);
    copy.p.iter_mut().for_each(|p| *p = 9.0);
    full.restrict_into(&mut copy);
    assert_eq!(copy.u, state.u);
    assert_eq!(copy.v, state.v);
    assert_eq!(copy.p, state.p);
}

#[test]
fn broken_boundary_parity_is_rejected() {
    let mut state = small_seed(64);
    state.u[5][2] = 1e-6;
    assert!(matches!(extend_reflect(&state), Err(Error::ParityViolation { .. })));
    let mut state = small_seed(64);
    state.v[7][1] = 1e-6;
    assert!(matches!(extend_reflect(&state), Err(Error::ParityViolation { .. })));
    let stepper = Stepper::new(state.grid);
    assert!(matches!(stepper.step(&mut state, 1e-5), Err(Error::ParityViolation { .. })));
    // below the tolerance the state is accepted
    let mut state = small_seed(64);
    state.u[5][2] = 1e-10;
    assert!(extend_reflect(&state).is_ok());
}

#[test]
fn time_step_above_stability_limit_is_rejected() {
    let mut state = small_seed(128);
    let h = state.grid.h();
    assert!(matches!(hmhf_step(&mut state, 0.3 * h * h), Err(Error::CflViolation { .. })));
    assert!(matches!(ns_step(&mut state, 0.3 * h * h), Err(Error::CflViolation { .. })));
    let stepper = Stepper::new(state.grid);
    assert!(matches!(stepper.step(&mut state, 0.3 * h * h), Err(Error::CflViolation { .. })));
    assert!(stepper.step(&mut state, 0.25 * h * h).is_ok());
}

#[test]
fn static_boundary_bubble_moves_at_truncation_order() {
    let drift = |n: usize| {
        let grid = SimGrid::new(n, 1.0).unwrap();
        let spec = BubbleSpec::boundary(0.25, 0.05);
        let mut state = HalfSpaceState::from_director(grid, 4, 0.1, exact(spec)).unwrap();
        let before = state.u.clone();
        let h = grid.h();
        let dt = h * h / 8.0;
        hmhf_step(&mut state, dt).unwrap();
        let change = before
            .iter()
            .zip(&state.u)
            .map(|(a, b)| vec3::norm(vec3::sub(*a, *b)))
            .fold(0.0, f64::max);
        change / dt
    };
    let (coarse, fine) = (drift(64), drift(128));
    let order = (coarse / fine).log2();
    assert!(order > 1.7, "speeds {coarse:e} {fine:e}, order {order}");
}

#[test]
fn director_flow_decreases_dirichlet_energy() {
    let grid = SimGrid::new(64, 1.0).unwrap();
    let mut state = HalfSpaceState::from_director(grid, 4, 0.1, smooth_director).unwrap();
    let sp = Spectral2::new(grid.n, grid.l);
    let h = grid.h();
    let mut last = energy_snapshot(&state, &sp).unwrap().dirichlet;
    for _ in 0..30 {
        hmhf_step(&mut state, h * h / 8.0).unwrap();
        let e = energy_snapshot(&state, &sp).unwrap().dirichlet;
        assert!(e < last, "{e} not below {last}");
        last = e;
    }
    assert!(state.unit_defect() < 1e-14);
}

#[test]
fn constant_director_leaves_fluid_at_rest() {
    let grid = SimGrid::new(64, 1.0).unwrap();
    let mut state = HalfSpaceState::from_director(grid, 4, 0.5, |_| [0.0, 1.0, 0.0]).unwrap();
    let stepper = Stepper::new(grid);
    let h = grid.h();
    for _ in 0..5 {
        stepper.step(&mut state, h * h / 8.0).unwrap();
    }
    assert!(state.v.iter().all(|v| v[0].abs() < 1e-15 && v[1].abs() < 1e-15));
    assert!(state.u.iter().all(|u| *u == [0.0, 1.0, 0.0]));
}

#[test]
fn zero_coupling_reduces_to_director_flow() {
    let grid = SimGrid::new(64, 1.0).unwrap();
    let mut coupled = HalfSpaceState::from_director(grid, 4, 0.0, smooth_director).unwrap();
    let mut alone = coupled.clone();
    let stepper = Stepper::new(grid);
    let dt = grid.h() * grid.h() / 8.0;
    for _ in 0..5 {
        stepper.step(&mut coupled, dt).unwrap();
        hmhf_step(&mut alone, dt).unwrap();
    }
    assert!(coupled.v.iter().all(|v| *v == [0.0, 0.0]));
    let d = coupled
        .u
        .iter()
        .zip(&alone.u)
        .map(|(a, b)| vec3::norm(vec3::sub(*a, *b)))
        .fold(0.0, f64::max);
    assert!(d < 1e-14, "difference {d:e}");
}

#[test]
fn velocity_stays_divergence_free() {
    let state = stepped_seed(128, 20);
    assert!(state.v.iter().any(|v| v[0] != 0.0));
    let full = extend_reflect(&state).unwrap();
    let sp = Spectral2::new(state.grid.n, state.grid.l);
    let d1 = sp.derivative(&full.v1, 0);
    let d2 = sp.derivative(&full.v2, 1);
    let div = d1.iter().zip(&d2).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
    assert!(div < 1e-10, "max |div v| = {div:e}");
}

#[test]
fn local_energy_of_exact_bubbles() {
    let grid = SimGrid::new(512, 1.0).unwrap();
    let interior = BubbleSpec::interior(0.02, 0.4, [0.1, 0.5]);
    let state = HalfSpaceState::from_director(grid, 4, 0.1, exact(interior)).unwrap();
    let e = local_energy(&state, interior.xi, 0.3).unwrap();
    // the tail outside the disc carries 8 pi lambda^2 / (lambda^2 + R^2)
    let tail = 8.0 * PI * 0.02f64.powi(2) / (0.02f64.powi(2) + 0.09);
    assert!(((e + tail) / (8.0 * PI) - 1.0).abs() < 0.01, "interior {e}");

    let boundary = BubbleSpec::boundary(0.02, -0.2);
    let state = HalfSpaceState::from_director(grid, 4, 0.1, exact(boundary)).unwrap();
    let e = local_energy(&state, boundary.xi, 0.3).unwrap();
    assert!(((e + 0.5 * tail) / (4.0 * PI) - 1.0).abs() < 0.01, "boundary {e}");
    assert!(local_energy(&state, boundary.xi, 2.0 * grid.h()).is_err());
}

#[test]
fn fit_recovers_exact_bubbles() {
    let grid = SimGrid::new(512, 1.0).unwrap();
    let cases = [
        BubbleSpec::boundary(0.01, -0.1234),
        BubbleSpec::interior(0.01, 0.7, [0.2113, 0.3071]),
    ];
    for spec in cases {
        let affine = |x: [f64; 2]| [0.02 + 0.1 * x[0], 0.0, -0.05 * x[1]];
        let bubble = exact(spec);
        let state = HalfSpaceState::from_director(grid, 4, 0.1, |x| vec3::add(bubble(x), affine(x))).unwrap();
        // the field is renormalized, so only the bare bubble is recovered exactly
        let bare = HalfSpaceState::from_director(grid, 4, 0.1, exact(spec)).unwrap();
        let fit = fit_bubble(&bare, spec.xi, 0.1).unwrap();
        assert_eq!(fit.spec.kind, spec.kind);
        assert!((fit.spec.lambda - spec.lambda).abs() < 1e-6, "{fit:?}");
        assert!((fit.spec.omega - spec.omega).abs() < 1e-6, "{fit:?}");
        assert!((fit.spec.xi[0] - spec.xi[0]).abs() < 1e-6 && (fit.spec.xi[1] - spec.xi[1]).abs() < 1e-6);
        assert!(fit.residual < 1e-8, "{fit:?}");
        // a perturbed field still gives a nearby fit
        let near = fit_bubble(&state, spec.xi, 0.1).unwrap();
        assert!((near.spec.lambda / spec.lambda - 1.0).abs() < 0.05, "{near:?}");
    }
}

#[test]
fn flat_director_has_no_peak() {
    let grid = SimGrid::new(64, 1.0).unwrap();
    let state = HalfSpaceState::from_director(grid, 4, 0.1, |x| [0.1 * x[0], 1.0, 0.1 * x[1]]).unwrap();
    assert!(matches!(fit_bubble(&state, [0.0, 0.2], 0.3), Err(Error::NoPeak)));
}

#[test]
fn forcing_of_exact_bubble_is_divergence_free_to_second_order() {
    let spec = BubbleSpec::boundary(0.25, 0.05);
    let max_div = |n: usize| {
        let grid = SimGrid::new(n, 1.0).unwrap();
        let state = HalfSpaceState::from_director(grid, 4, 0.1, exact(spec)).unwrap();
        let asm = forcing_assemble(&state, &[], 0, 0.5).unwrap();
        let m = n + 1;
        let mut d: f64 = 0.0;
        for big_j in 0..m {
            for i in 0..m {
                let x = [grid.coord(i), grid.coord(big_j)];
                // away from the center, where the gradient is resolved alike on both grids
                if (x[0] - spec.xi[0]).hypot(x[1]) > 0.1 && x[0].abs() < 0.6 && x[1].abs() < 0.6 {
                    let v = asm.divergence[big_j * m + i];
                    d = d.max(v[0].hypot(v[1]));
                }
            }
        }
        d
    };
    let (coarse, fine) = (max_div(64), max_div(128));
    assert!((coarse / fine).log2() > 1.7, "{coarse:e} {fine:e}");
}

#[test]
fn constant_director_has_zero_forcing() {
    let grid = SimGrid::new(64, 1.0).unwrap();
    let state = HalfSpaceState::from_director(grid, 4, 0.1, |_| [0.6, 0.8, 0.0]).unwrap();
    let spec = BubbleSpec::boundary(0.2, 0.0);
    let asm = forcing_assemble(&state, &[exact_profile(spec)], 2, 0.4).unwrap();
    assert!(asm.tensor.iter().all(|t| *t == [0.0; 3]));
    assert!(asm.divergence.iter().all(|d| *d == [0.0; 2]));
    assert_eq!(asm.modes.len(), 1);
    assert_eq!(asm.modes[0].iter().map(|m| m.k).collect::<Vec<_>>(), vec![-2, -1, 0, 1, 2]);
}

fn exact_profile(spec: BubbleSpec) -> bubbleflow::profiles::Profile {
    BubbleFit {
        spec,
        background: zero_background(),
        residual: 0.0,
        peak: spec.xi,
    }
    .profile()
}

#[test]
fn mode_forcing_picks_out_the_perturbed_mode() {
    let grid = SimGrid::new(128, 1.0).unwrap();
    let spec = BubbleSpec::interior(0.15, 0.0, [0.0, 0.45]);
    let prof = exact_profile(spec);
    let eps = 1e-2;
    let state = HalfSpaceState::from_director(grid, 4, 0.1, |x| {
        let u = prof.value(x);
        let Ok(fr) = prof.frame(x) else { return u };
        let (dx, dy) = (x[0] - spec.xi[0], x[1] - spec.xi[1]);
        let r = dx.hypot(dy) / spec.lambda;
        let th = dy.atan2(dx);
        // mode 2 in the tangent frame, cut off before the boundary
        let a = eps * r * r / (1.0 + r * r * r) * (2.0 * th).cos();
        vec3::add(u, vec3::scale(a, fr[0]))
    })
    .unwrap();
    let asm = forcing_assemble(&state, &[prof], 3, 0.35).unwrap();
    let size = |k: i32| {
        let mode = asm.modes[0].iter().find(|m| m.k == k).unwrap();
        mode.tensor.iter().map(|t| t.iter().map(|c| c.abs()).fold(0.0, f64::max)).fold(0.0, f64::max)
    };
    let (m2, mm2) = (size(2), size(-2));
    for k in [-3, -1, 0, 1, 3] {
        assert!(size(k) < 0.1 * m2.max(mm2), "mode {k}: {} vs {m2} {mm2}", size(k));
    }
}

#[test]
fn weighted_norm_of_the_weight_is_one() {
    let p = NormParams {
        nu: 1.5,
        a: 0.5,
        theta: 0.1,
        gamma: 0.2,
        sigma0: 0.1,
        t_final: 0.2,
        lambda: 0.05,
        lambda0: 0.1,
        r: 4.0,
        r0: 4.0,
        q: vec![[0.0, 0.0]],
    };
    let weight = |x: [f64; 2]| {
        let rho = x[0].hypot(x[1]) / p.lambda;
        p.lambda.powf(p.nu) * (1.0 + rho).powf(-p.a)
    };
    let f = SampledField::sample([-0.5, 0.0], 1.0 / 64.0, 65, 33, |x| vec![weight(x)]);
    let v = weighted_sup_norm(&f, NormId::InnerRhs, &p).unwrap();
    assert!((v - 1.0).abs() < 1e-12, "{v}");
    let rotated = SampledField::sample([-0.5, 0.0], 1.0 / 64.0, 65, 33, |x| vec![0.6 * weight(x), 0.8 * weight(x)]);
    assert!((weighted_sup_norm(&rotated, NormId::InnerRhs, &p).unwrap() - 1.0).abs() < 1e-12);
    let zero = SampledField::sample([-0.5, 0.0], 1.0 / 64.0, 65, 33, |_| vec![0.0, 0.0]);
    for id in [NormId::OuterRhs, NormId::OuterSolution, NormId::InnerRhs, NormId::Velocity, NormId::Forcing] {
        assert_eq!(weighted_sup_norm(&zero, id, &p).unwrap(), 0.0);
    }
    let mut none = p.clone();
    none.q.clear();
    assert!(weighted_sup_norm(&f, NormId::InnerRhs, &none).is_err());
}

#[test]
fn snapshot_layout() {
    let state = small_seed(32);
    let fields = snapshot_fields(&state);
    assert_eq!(fields.len(), 6);
    let (nx, ny) = (32, 17);
    let refs: Vec<&[f64]> = fields.iter().map(|f| f.as_slice()).collect();
    let mut buf = Vec::new();
    write_snapshot(&mut buf, nx, ny, state.grid.h(), &refs).unwrap();
    assert_eq!(buf.len(), 32 + 6 * nx * ny * 8);
    let word = |k: usize| u64::from_le_bytes(buf[8 * k..8 * k + 8].try_into().unwrap());
    assert_eq!((word(0), word(1), word(2)), (32, 17, 6));
    assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), state.grid.h());
    let first = f64::from_le_bytes(buf[32..40].try_into().unwrap());
    assert_eq!(first, state.u_at(0, 0)[0]);
    assert!(write_snapshot(&mut Vec::new(), nx, ny, 0.1, &[&[0.0; 3]]).is_err());
}

#[test]
fn short_run_keeps_invariants() {
    let mut state = small_seed(128);
    let bubbles = [BubbleSpec::boundary(0.15, -0.3), BubbleSpec::interior(0.12, 0.0, [0.35, 0.4])];
    let h = state.grid.h();
    let opts = RunOptions {
        dt: h * h / 8.0,
        steps: 40,
        fit_every: 20,
    };
    let rep = run(&mut state, &bubbles, &opts).unwrap();
    assert_eq!(rep.stop, StopReason::Completed);
    assert_eq!(rep.records.len(), 40);
    assert!(rep.energy_monotone());
    assert!(rep.max_parity_defect < 1e-10);
    assert!(rep.max_unit_defect < 1e-12);
    assert_eq!(rep.fits.len(), 3);
    assert_eq!(rep.boundary_lambdas().len(), 3);
    assert!(rep.fits.iter().all(|(_, f)| f[0].spec.kind == BubbleKind::Boundary));
}

#[test]
fn coarse_grid_detects_blowup_and_stops_cleanly() {
    let mut cfg = SeedConfig::two_bubble(1.0 / 32.0).unwrap();
    cfg.with_phi0 = false;
    // lambda far below the grid spacing: the gradient is not resolved
    cfg.boundary.lambda = 0.01;
    let mut state = seed_state(&cfg).unwrap();
    let h = state.grid.h();
    let opts = RunOptions {
        dt: h * h / 8.0,
        steps: 10,
        fit_every: 0,
    };
    let rep = run(&mut state, &[cfg.boundary, cfg.interior], &opts).unwrap();
    assert!(matches!(rep.stop, StopReason::Blowup { .. }), "{:?}", rep.stop);
    assert_eq!(rep.records.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn steps_preserve_unit_length_and_parity(
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
        c in 0.2f64..1.5,
        eps0 in 0.0f64..1.0,
    ) {
        let grid = SimGrid::new(64, 1.0).unwrap();
        let mut state = HalfSpaceState::from_director(grid, 4, eps0, |x| {
            [a + (2.0 * x[0]).sin(), c + b * x[1] * x[1], x[1] * (1.0 + b * x[0])]
        }).unwrap();
        let stepper = Stepper::new(grid);
        let dt = grid.h() * grid.h() / 8.0;
        for _ in 0..5 {
            stepper.step(&mut state, dt).unwrap();
        }
        prop_assert!(state.unit_defect() < 1e-14);
        prop_assert!(state.parity_defect < 1e-12);
        prop_assert!(boundary_parity_defect(&state) < 1e-12);
    }

    #[test]
    fn reflection_round_trip_for_random_fields(s in -2.0f64..2.0, k in 0.5f64..3.0) {
        let grid = SimGrid::new(32, 1.0).unwrap();
        let state = HalfSpaceState::from_director(grid, 4, 0.3, |x| {
            [(k * x[0]).cos(), s, (k * x[1]).sin()]
        }).unwrap();
        let full = extend_reflect(&state).unwrap();
        prop_assert_eq!(full.parity_defect(), 0.0);
        let mut back = state.clone();
        full.restrict_into(&mut back);
        prop_assert_eq!(back.u, state.u);
    }
}
