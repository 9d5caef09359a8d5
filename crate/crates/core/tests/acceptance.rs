//! End-to-end acceptance: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture`. The
//! Stokes and simulation criteria take a few minutes on one core.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use bubbleflow::cli::{self, boundary_track, onset_consistency};
use bubbleflow::config::{Config, SimulateConfig};
use bubbleflow::error::Result;
use bubbleflow::halfspace_sim::{self, Background, BubbleFit, HalfSpaceState, RunOptions, SimGrid, StopReason};
use bubbleflow::modulation::{self, SolveOptions};
use bubbleflow::profiles::{self, BubbleSpec};
use bubbleflow::stokes::{self, BoundKind, ConcentratedForcing, GreenOptions};
use bubbleflow::symmetry::{self, PairConfig};

struct Outcome {
    pass: bool,
    summary: String,
}

fn outcome(pass: bool, summary: String) -> Result<Outcome> {
    Ok(Outcome { pass, summary })
}

fn c1_bubble_energy() -> Result<Outcome> {
    let t = Instant::now();
    let e = profiles::bubble_energy()?;
    let err = (e - 8.0 * PI).abs();
    let secs = t.elapsed().as_secs_f64();
    outcome(err < 1e-6 && secs < 1.0, format!("|E - 8pi| = {err:.3e} (< 1e-6), {secs:.2} s (< 1 s)"))
}

fn c2_kernel_annihilation() -> Result<Outcome> {
    let study = profiles::kernel_annihilation_study(&[1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0])?;
    let worst_order = study.orders.iter().fold(0.0f64, |m, o| m.max((o - 2.0).abs()));
    let mut modes = 0.0f64;
    for k in [0, 1, -1] {
        modes = modes.max(profiles::mode_kernel_residual(k, 1e-3)?);
    }
    outcome(
        worst_order <= 0.1 && modes < 1e-6,
        format!("orders {:?}, max |order - 2| = {worst_order:.3e} (<= 0.1); mode residual {modes:.3e} (< 1e-6)", study.orders.map(|o| (o * 1e4).round() / 1e4)),
    )
}

fn c3_moments() -> Result<Outcome> {
    let [a, b] = profiles::profile_moments()?;
    let (ea, eb) = ((a - 2.0).abs(), b.abs());
    outcome(ea < 1e-8 && eb < 1e-8, format!("|m1 - 2| = {ea:.3e}, |m2| = {eb:.3e} (< 1e-8)"))
}

fn c4_gamma1() -> Result<Outcome> {
    let t = Instant::now();
    let g = modulation::gamma1_bounds(40)?;
    // held out: the midpoints must stay within the usual margin of C
    let mut worst = 0.0f64;
    for k in 0..39 {
        let s = 6.0 * (k as f64 + 0.5) / 39.0;
        let tau = 10f64.powf(-6.0 + s);
        worst = worst.max((modulation::gamma1(tau)? - 1.0).abs() / (tau * (1.0 + tau.ln().abs())));
        let tau = 10f64.powf(s);
        worst = worst.max(tau * modulation::gamma1(tau)?.abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        g.constant.is_finite() && worst <= stokes::BOUND_MARGIN * g.constant && secs < 10.0,
        format!(
            "C = {:.4} (near {:.4}, far {:.4}); midpoint max {worst:.4} (<= {} C); {secs:.2} s (< 10 s)",
            g.constant, g.near, g.far, stokes::BOUND_MARGIN
        ),
    )
}

fn c5_modulation_rate() -> Result<Outcome> {
    let t = Instant::now();
    let (a_star, tf) = (-1.0, 0.01);
    let mesh = modulation::graded_time_mesh(tf, 400, 1e-10);
    let sol = modulation::solve_lambda(a_star, &mesh, SolveOptions::default())?;
    let flat = modulation::rate_flatness(&sol.trajectory, 0.02)?;
    let profile = modulation::residual_profile(&sol.trajectory, a_star)?;
    let keep = profile.len() - profile.len() / 50;
    let res = profile[..keep].iter().fold(0.0f64, |m, r| m.max(r.1.abs()));
    let secs = t.elapsed().as_secs_f64();
    // independent look at the raw ratio at the last retained node
    let n = sol.trajectory.time_mesh.len() - sol.trajectory.time_mesh.len() / 50 - 1;
    let tn = sol.trajectory.time_mesh[n];
    let raw = sol.trajectory.lambda[n] / ((tf - tn) / (tf - tn).ln().powi(2));
    outcome(
        flat.max_deviation <= 0.1 && res < 1e-3 && secs < 30.0,
        format!(
            "flatness {:.3} (<= 0.10) over {} nodes, mean ratio {:.4} (last kept {raw:.4}); residual {res:.3e} (< 1e-3); {secs:.2} s (< 30 s)",
            flat.max_deviation, flat.samples.len(), flat.mean
        ),
    )
}

fn c6_stokes() -> Result<Outcome> {
    let t = Instant::now();
    let (g, p) = cli::homogeneity_defects()?;
    let samples = stokes::random_samples(1000, 2024);
    let mut bounds = Vec::new();
    let mut ok_bounds = true;
    for kind in [BoundKind::Pressure, BoundKind::Reflected] {
        let r = stokes::bound_check(&samples, kind)?;
        ok_bounds &= r.pass && r.c >= 0.125;
        bounds.push(format!("{kind:?} (C {:.3}, c {:.3})", r.constant, r.c));
    }
    let mut routes = 0.0f64;
    for flow in cli::manufactured_flows() {
        routes = routes.max(cli::route_disagreement(&flow, 0.1)?.0);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        g < 1e-8 && p < 1e-8 && ok_bounds && routes < 1e-3 && secs < 300.0,
        format!(
            "homogeneity G* {g:.1e}, P {p:.1e} (< 1e-8); bounds {}; routes {routes:.3e} (< 1e-3); {secs:.0} s (< 300 s)",
            bounds.join(", ")
        ),
    )
}

fn c7_forced_velocity() -> Result<Outcome> {
    let tf = 0.01;
    let f = ConcentratedForcing::new(0.6, 1.5, 0.0, tf, modulation::matched_kappa(-1.0, tf))?;
    let times: Vec<f64> = [0.25, 0.375, 0.5, 0.625, 0.75].iter().map(|s| s * tf).collect();
    let opts = GreenOptions {
        rel_tol: 1e-6,
        ..Default::default()
    };
    let r = stokes::forced_velocity_bound(&f, &times, &[0.0, 0.5, 2.0, 8.0, 32.0, 128.0], &[0.0, 0.5, PI / 2.0], &opts)?;
    let worst = r.per_time.iter().fold(0.0f64, |m, p| m.max(p.1)) / r.constant;
    outcome(
        r.pass,
        format!("C = {:.4}, largest ratio / C = {worst:.3} (<= {})", r.constant, stokes::BOUND_MARGIN),
    )
}

fn c10_quanta() -> Result<Outcome> {
    let grid = SimGrid::new(512, 1.0)?;
    let exact = |spec: BubbleSpec| {
        let fit = BubbleFit {
            spec,
            background: Background {
                origin: [0.0; 2],
                value: [0.0; 3],
                gradient: [[0.0; 3]; 2],
            },
            residual: 0.0,
            peak: spec.xi,
        };
        move |x: [f64; 2]| halfspace_sim::fitted_value(&fit, x)
    };
    let interior = BubbleSpec::interior(0.02, 0.4, [0.1, 0.5]);
    let s = HalfSpaceState::from_director(grid, 4, 0.1, exact(interior))?;
    let ei = halfspace_sim::local_energy(&s, interior.xi, 0.3)? / (8.0 * PI) - 1.0;
    let boundary = BubbleSpec::boundary(0.02, -0.2);
    let s = HalfSpaceState::from_director(grid, 4, 0.1, exact(boundary))?;
    let eb = halfspace_sim::local_energy(&s, boundary.xi, 0.3)? / (4.0 * PI) - 1.0;
    outcome(
        ei.abs() < 0.01 && eb.abs() < 0.01,
        format!("interior E/8pi - 1 = {ei:.4}, boundary E/4pi - 1 = {eb:.4} (|.| < 0.01)"),
    )
}

struct RunOutcomes {
    energy: Outcome,
    parity: f64,
    onset: Outcome,
}

/// The seeded two-bubble run behind criteria 8, 9 and 11.
fn seeded_run() -> Result<RunOutcomes> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/two_bubble.cfg");
    let sc = SimulateConfig::from_config(&Config::load(&path)?)?;
    let h = sc.seed.grid.h();
    assert_eq!(h, 1.0 / 256.0);
    assert_eq!(sc.dt, h * h / 8.0);
    assert_eq!(sc.steps, 500);
    let t = Instant::now();
    let mut state = halfspace_sim::seed_state(&sc.seed)?;
    let opts = RunOptions {
        dt: sc.dt,
        steps: sc.steps,
        fit_every: sc.fit_every,
    };
    let mut parity = 0.0f64;
    let rep = halfspace_sim::run_with(&mut state, &[sc.seed.boundary, sc.seed.interior], &opts, |_, st| {
        parity = parity.max(st.parity_defect);
        Ok(())
    })?;
    let secs = t.elapsed().as_secs_f64();
    let steps = rep.records.len();
    let energy = Outcome {
        pass: rep.max_energy_increase < 0.0 && rep.relative_residual < 0.05 && secs < 600.0,
        summary: format!(
            "{steps} steps, max step change {:.3e} (< 0), residual {:.3e} (< 5e-2), {secs:.0} s (< 600 s)",
            rep.max_energy_increase, rep.relative_residual
        ),
    };
    let track = boundary_track(&rep);
    let (not_decreasing, mismatch) = onset_consistency(&track);
    let stop = match rep.stop {
        StopReason::Completed => "completed".to_string(),
        StopReason::Blowup { t, .. } => format!("BlowupDetected at t = {t:.3e}"),
    };
    let onset = Outcome {
        pass: track.len() >= 3 && not_decreasing == 0 && mismatch == 0,
        summary: format!(
            "{} fits, lambda {:.5} -> {:.5}, {not_decreasing} non-decreasing intervals, {mismatch} sign mismatches, run {stop}",
            track.len(),
            track.first().map_or(f64::NAN, |p| p.1),
            track.last().map_or(f64::NAN, |p| p.1)
        ),
    };
    Ok(RunOutcomes {
        energy,
        parity: parity.max(state.parity_defect),
        onset,
    })
}

fn c9_symmetry(parity: Result<f64>) -> Result<Outcome> {
    let parity = parity?;
    let xs = symmetry::boundary_samples(-1.0, 1.0, 100);
    let with = symmetry::boundary_e2_projection(&PairConfig::standard(true), &xs);
    let without = symmetry::boundary_e2_projection(&PairConfig::standard(false), &xs);
    outcome(
        parity < 1e-10 && with < 1e-12 && without > 1e-3,
        format!("parity {parity:.3e} (< 1e-10); E2 with reflection {with:.3e} (< 1e-12), without {without:.3e} (> 1e-3)"),
    )
}

fn report(id: u32, name: &str, r: Result<Outcome>) -> bool {
    let (pass, text) = match r {
        Ok(o) => (o.pass, o.summary),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("{} criterion {id:>2} {name}: {text}", if pass { "PASS" } else { "FAIL" });
    pass
}

#[test]
fn acceptance() {
    let mut all = true;
    all &= report(1, "bubble energy", c1_bubble_energy());
    all &= report(2, "kernel annihilation", c2_kernel_annihilation());
    all &= report(3, "moment identities", c3_moments());
    all &= report(4, "Gamma_1 bounds", c4_gamma1());
    all &= report(5, "modulation rate", c5_modulation_rate());
    all &= report(6, "Stokes Green tensor", c6_stokes());
    all &= report(7, "forced-velocity bound", c7_forced_velocity());
    let run = seeded_run();
    let (energy, parity, onset) = match run {
        Ok(r) => (Ok(r.energy), Ok(r.parity), Ok(r.onset)),
        Err(e) => {
            let msg = e.to_string();
            let err = || bubbleflow::Error::InvalidArgument(format!("seeded run failed: {msg}"));
            (Err(err()), Err(err()), Err(err()))
        }
    };
    all &= report(8, "energy law", energy);
    all &= report(9, "symmetry", c9_symmetry(parity));
    all &= report(10, "concentration quanta", c10_quanta());
    all &= report(11, "blow-up onset consistency", onset);
    assert!(all, "some acceptance criteria failed");
}
