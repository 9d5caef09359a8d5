//! Scenario runner behind the `bubbleflow` binary: the verification suites,
//! the modulation solve and the simulator, with CSV/JSON output.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::config::{Config, SimulateConfig};
use crate::error::{Error, Result};
use crate::halfspace_sim::{self, RunOptions, SeedConfig, StopReason, Stepper};
use crate::modulation::{self, LambdaStarVariant, SolveOptions};
use crate::profiles::{self, BubbleKind, ModeFunction, KERNEL_INDICES};
use crate::stokes::{self, BoundKind, GreenOptions, ManufacturedFlow, ReflectionGrid};
use crate::symmetry::{self, FieldSample, OffsetGrid, PairConfig};

#[derive(Debug, Parser)]
#[command(name = "bubbleflow", about = "Bubbling verification suites and half-space simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overridden by BUBBLEFLOW_OUT).
    #[arg(long, global = true, default_value = "bubbleflow-out")]
    pub out: PathBuf,
    /// Worker threads for the data-parallel loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed of the random sample sets.
    #[arg(long, global = true, default_value_t = 2024)]
    pub seed: u64,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Bubble energy, moment identities and kernel annihilation.
    VerifyProfiles,
    /// Green tensor homogeneity, pointwise bounds and route agreement.
    VerifyStokes,
    /// Solves the scale equation and writes `t,lambda,lambda_star_ratio,residual`.
    RunModulation {
        #[arg(long = "a-star", allow_hyphen_values = true)]
        a_star: Option<f64>,
        #[arg(long = "T")]
        t_final: Option<f64>,
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Runs the seeded two-bubble simulation described by `--config`.
    Simulate,
    /// Reflection calculus and boundary parity checks.
    CheckSymmetry,
    /// Every suite; `simulate` only when a config is given.
    All,
}

/// One line of a suite summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `None` when the check has no numeric threshold.
    pub tolerance: Option<f64>,
    pub pass: bool,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance: Some(tolerance),
            pass: value <= tolerance,
        }
    }

    /// Passes when `value > tolerance`.
    pub fn above(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance: Some(tolerance),
            pass: value > tolerance,
        }
    }

    pub fn with_pass(name: impl Into<String>, value: f64, tolerance: Option<f64>, pass: bool) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            pass,
        }
    }
}

/// Free-form report payload (fitted constants, worst offenders, tables).
#[derive(Debug, Clone, PartialEq)]
pub enum Detail {
    Num(f64),
    Text(String),
    List(Vec<Detail>),
    Map(Vec<(String, Detail)>),
}

impl From<f64> for Detail {
    fn from(v: f64) -> Self {
        Detail::Num(v)
    }
}

impl From<&str> for Detail {
    fn from(v: &str) -> Self {
        Detail::Text(v.to_string())
    }
}

impl From<Vec<f64>> for Detail {
    fn from(v: Vec<f64>) -> Self {
        Detail::List(v.into_iter().map(Detail::Num).collect())
    }
}

fn map(entries: Vec<(&str, Detail)>) -> Detail {
    Detail::Map(entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub suite: String,
    pub checks: Vec<Check>,
    pub details: Vec<(String, Detail)>,
    pub wall_time: f64,
}

/// Full precision: 17 significant digits, scientific notation.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn write_detail(out: &mut String, d: &Detail) {
    match d {
        Detail::Num(v) => out.push_str(&fmt_num(*v)),
        Detail::Text(s) => out.push_str(&json_str(s)),
        Detail::List(items) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                write_detail(out, item);
            }
            out.push(']');
        }
        Detail::Map(entries) => {
            out.push('{');
            for (k, (key, item)) in entries.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "{}: ", json_str(key));
                write_detail(out, item);
            }
            out.push('}');
        }
    }
}

impl Report {
    fn new(suite: &str, checks: Vec<Check>, details: Vec<(&str, Detail)>, started: Instant) -> Self {
        Report {
            suite: suite.to_string(),
            checks,
            details: details.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            wall_time: started.elapsed().as_secs_f64(),
        }
    }

    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    /// `{suite, checks: [{name, value, tolerance, pass}], details, wall_time}`.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{{\n  \"suite\": {},\n  \"checks\": [", json_str(&self.suite));
        for (k, c) in self.checks.iter().enumerate() {
            let _ = write!(
                s,
                "    {{\"name\": {}, \"value\": {}, \"tolerance\": {}, \"pass\": {}}}",
                json_str(&c.name),
                fmt_num(c.value),
                c.tolerance.map_or("null".to_string(), fmt_num),
                c.pass
            );
            s.push_str(if k + 1 < self.checks.len() { ",\n" } else { "\n" });
        }
        s.push_str("  ],\n  \"details\": ");
        let details = Detail::Map(self.details.clone());
        write_detail(&mut s, &details);
        let _ = write!(s, ",\n  \"wall_time\": {}\n}}\n", fmt_num(self.wall_time));
        s
    }
}

// ---------------------------------------------------------------- scenarios

/// Point triples `(x, y, t)` of the homogeneity checks.
pub const HOMOGENEITY_POINTS: [([f64; 2], [f64; 2], f64); 4] = [
    ([0.3, 0.4], [-0.2, 0.25], 0.05),
    ([1.1, 0.05], [0.9, 0.3], 0.2),
    ([-0.5, 1.2], [0.4, 0.01], 0.7),
    ([0.0, 0.6], [0.0, 0.6], 0.01),
];

/// The three manufactured forcings of the route comparison.
pub fn manufactured_flows() -> Vec<ManufacturedFlow> {
    vec![
        ManufacturedFlow::new(&[(1.0, [0.2, 0.6], 0.4)]),
        ManufacturedFlow::new(&[(1.0, [-0.5, 0.8], 0.3), (-0.7, [0.6, 0.4], 0.5)]),
        ManufacturedFlow::new(&[(2.0, [0.0, 0.15], 0.35)]),
    ]
}

/// Smooth fields outside the symmetry class, used for the commutation order.
pub fn generic_fields(x: [f64; 2]) -> FieldSample {
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

/// Mode functions `k = -2..=2` whose second components are `second` times
/// the first.
pub fn sample_modes(second: f64) -> Result<Vec<ModeFunction>> {
    let rho = profiles::geometric_mesh(0.05, 20.0, 1.2);
    (-2..=2)
        .map(|k| {
            let vals = rho
                .iter()
                .map(|&r| {
                    let f = r / (1.0 + r * r) * (1.0 + 0.1 * k as f64);
                    num_complex::Complex64::new(f, second * f)
                })
                .collect();
            ModeFunction::new(k, rho.clone(), vals)
        })
        .collect()
}

/// Relative sup difference of the green and reflection routes on a block of
/// interior nodes of a 256^2 grid.
pub fn route_disagreement(flow: &ManufacturedFlow, t: f64) -> Result<(f64, f64)> {
    let g = ReflectionGrid { n: 256, l: 4.0, steps: 1 };
    let r = stokes::stokes_solve_reflection(flow.forcing(), &g, t)?;
    let mut nodes = Vec::new();
    for j in (128..176).step_by(8) {
        for i in (100..156).step_by(8) {
            nodes.push((i, j));
        }
    }
    let xs: Vec<[f64; 2]> = nodes.iter().map(|&(i, j)| r.point(i, j)).collect();
    let vg = stokes::stokes_solve_green_many(flow.forcing(), &xs, t, &GreenOptions::default())?;
    let (mut diff, mut sup) = (0.0f64, 0.0f64);
    for (k, &(i, j)) in nodes.iter().enumerate() {
        let a = r.at(i, j);
        diff = diff.max((a[0] - vg[k].v[0]).hypot(a[1] - vg[k].v[1]));
        sup = sup.max(a[0].hypot(a[1]));
    }
    Ok((diff / sup, sup))
}

/// Largest relative deviation from homogeneity of `G*` (degree -4) and `P`
/// (degree -3) over [`HOMOGENEITY_POINTS`] and `lambda` in `{0.5, 2}`.
pub fn homogeneity_defects() -> Result<(f64, f64)> {
    let (mut g, mut p) = (0.0f64, 0.0f64);
    let sc = |v: [f64; 2], l: f64| [l * v[0], l * v[1]];
    for (x, y, t) in HOMOGENEITY_POINTS {
        for l in [0.5, 2.0] {
            for (i, j) in [(0, 0), (0, 1), (1, 1)] {
                let a = stokes::green_gstar(i, j, x, y, t)?;
                let b = stokes::green_gstar(i, j, sc(x, l), sc(y, l), l * l * t)?;
                if a != 0.0 {
                    g = g.max((b * l.powi(4) - a).abs() / a.abs());
                }
            }
            let a = stokes::pressure_p(0, x, y, t)?;
            let b = stokes::pressure_p(0, sc(x, l), sc(y, l), l * l * t)?;
            if a != 0.0 {
                p = p.max((b * l.powi(3) - a).abs() / a.abs());
            }
        }
    }
    Ok((g, p))
}

// ---------------------------------------------------------------- suites

pub fn profiles_suite() -> Result<Report> {
    let started = Instant::now();
    let mut checks = Vec::new();
    let e = profiles::bubble_energy()?;
    checks.push(Check::below("bubble_energy_minus_8pi", (e - 8.0 * PI).abs(), 1e-6));
    let [m1, m2] = profiles::profile_moments()?;
    checks.push(Check::below("moment_rho_wrho2_minus_2", (m1 - 2.0).abs(), 1e-8));
    checks.push(Check::below("moment_cos_w_wrho2", m2.abs(), 1e-8));
    let study = profiles::kernel_annihilation_study(&[1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0])?;
    let mut table = Vec::new();
    for (k, (p, q)) in KERNEL_INDICES.iter().enumerate() {
        let name = format!("kernel_z{p}{q}_order_minus_2");
        checks.push(Check::below(name, (study.orders[k] - 2.0).abs(), 0.1));
        let res: Vec<f64> = study.residuals.iter().map(|r| r[k]).collect();
        table.push(map(vec![
            ("p", (*p as f64).into()),
            ("q", (*q as f64).into()),
            ("order", study.orders[k].into()),
            ("residuals", res.into()),
        ]));
    }
    for k in [-1, 0, 1] {
        let r = profiles::mode_kernel_residual(k, 1e-3)?;
        checks.push(Check::below(format!("mode_kernel_residual_k{k}"), r, 1e-6));
    }
    Ok(Report::new(
        "verify-profiles",
        checks,
        vec![
            ("bubble_energy", e.into()),
            ("moments", vec![m1, m2].into()),
            ("kernel_spacings", study.spacings.clone().into()),
            ("kernels", Detail::List(table)),
        ],
        started,
    ))
}

pub fn stokes_suite(seed: u64) -> Result<Report> {
    let started = Instant::now();
    let mut checks = Vec::new();
    let mut details = Vec::new();
    let (g, p) = homogeneity_defects()?;
    checks.push(Check::below("gstar_homogeneity", g, 1e-8));
    checks.push(Check::below("pressure_homogeneity", p, 1e-8));
    let samples = stokes::random_samples(1000, seed);
    let mut constants = Vec::new();
    for (kind, name) in [(BoundKind::Pressure, "pressure"), (BoundKind::Reflected, "gstar")] {
        let r = stokes::bound_check(&samples, kind)?;
        checks.push(Check::with_pass(format!("{name}_bound_c"), r.c, Some(0.125), r.pass && r.c >= 0.125));
        let loc = r.max_location;
        constants.push(map(vec![
            ("kernel", name.into()),
            ("c", r.c.into()),
            ("constant", r.constant.into()),
            ("least_squares_c", r.ls_c.into()),
            ("max_violation", r.max_violation.into()),
            (
                "max_location",
                map(vec![
                    ("x", vec![loc.x[0], loc.x[1]].into()),
                    ("y", vec![loc.y[0], loc.y[1]].into()),
                    ("t", loc.t.into()),
                    ("i", (loc.i as f64).into()),
                    ("j", (loc.j as f64).into()),
                ]),
            ),
        ]));
    }
    details.push(("bounds", Detail::List(constants)));
    let mut agreement = Vec::new();
    for (k, flow) in manufactured_flows().iter().enumerate() {
        let (rel, sup) = route_disagreement(flow, 0.1)?;
        checks.push(Check::below(format!("routes_agree_forcing_{}", k + 1), rel, 1e-3));
        agreement.push(map(vec![("relative_difference", rel.into()), ("sup_velocity", sup.into())]));
    }
    details.push(("route_agreement", Detail::List(agreement)));
    let tf = 0.01;
    let f = stokes::ConcentratedForcing::new(0.6, 1.5, 0.0, tf, modulation::matched_kappa(-1.0, tf))?;
    let times: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|s| s * tf).collect();
    let opts = GreenOptions {
        rel_tol: 1e-6,
        ..Default::default()
    };
    let r = stokes::forced_velocity_bound(&f, &times, &[0.0, 0.5, 2.0, 8.0, 32.0, 128.0], &[0.0, 0.5, PI / 2.0], &opts)?;
    let worst = r.per_time.iter().fold(0.0f64, |m, p| m.max(p.1)) / r.constant;
    checks.push(Check::with_pass("forced_velocity_bound", worst, Some(stokes::BOUND_MARGIN), r.pass));
    details.push((
        "forced_velocity",
        map(vec![
            ("constant", r.constant.into()),
            ("per_time", Detail::List(r.per_time.iter().map(|p| vec![p.0, p.1].into()).collect())),
        ]),
    ));
    Ok(Report::new("verify-stokes", checks, details, started))
}

/// Parameters of `run-modulation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationParams {
    pub a_star: f64,
    pub t_final: f64,
    pub nodes: usize,
}

impl Default for ModulationParams {
    fn default() -> Self {
        ModulationParams {
            a_star: -1.0,
            t_final: 0.01,
            nodes: 400,
        }
    }
}

/// Returns the summary and the CSV table.
pub fn modulation_suite(p: ModulationParams) -> Result<(Report, String)> {
    let started = Instant::now();
    let mesh = modulation::graded_time_mesh(p.t_final, p.nodes, 1e-10);
    let sol = modulation::solve_lambda(p.a_star, &mesh, SolveOptions::default())?;
    let traj = &sol.trajectory;
    let kappa = modulation::matched_kappa(p.a_star, p.t_final);
    let profile = modulation::residual_profile(traj, p.a_star)?;
    let mut csv = String::from("t,lambda,lambda_star_ratio,residual\n");
    let first = traj.time_mesh.iter().position(|&t| t >= 0.0).unwrap_or(0);
    for (k, (t, res)) in profile.iter().enumerate() {
        let lam = traj.lambda[first + k];
        let star = modulation::lambda_star(*t, p.t_final, kappa, LambdaStarVariant::Plain).0;
        let _ = writeln!(csv, "{},{},{},{}", fmt_num(*t), fmt_num(lam), fmt_num(lam / star), fmt_num(*res));
    }
    let keep = profile.len() - profile.len() / 50;
    let worst = profile[..keep].iter().fold(0.0f64, |m, r| m.max(r.1.abs()));
    let flat = modulation::rate_flatness(traj, 0.02)?;
    let lam = &traj.lambda[first..];
    let increases = lam.windows(2).filter(|w| w[1] >= w[0]).count();
    let gamma = modulation::gamma1_bounds(40)?;
    let checks = vec![
        Check::below("rate_flatness", flat.max_deviation, 0.1),
        Check::below("collocation_residual", worst, 1e-3),
        Check::below("lambda_increases", increases as f64, 0.0),
        Check::with_pass("gamma1_bound_constant", gamma.constant, None, gamma.constant.is_finite()),
    ];
    let report = Report::new(
        "run-modulation",
        checks,
        vec![
            ("a_star", p.a_star.into()),
            ("T", p.t_final.into()),
            ("nodes", (p.nodes as f64).into()),
            ("history_kappa", sol.history_kappa.into()),
            ("flatness_mean_ratio", flat.mean.into()),
            ("gamma1_near", gamma.near.into()),
            ("gamma1_far", gamma.far.into()),
        ],
        started,
    );
    Ok((report, csv))
}

pub fn symmetry_suite() -> Result<Report> {
    let started = Instant::now();
    let mut checks = Vec::new();
    let mut details = Vec::new();
    let exact = symmetry::residual_commutes_with_reflection(OffsetGrid { n: 64, l: 1.0, offset: 0.0 }, 0.7, generic_fields);
    checks.push(Check::below("commutation_symmetric_grid", exact, 1e-9));
    let (devs, order) = symmetry::commutation_order(&[32, 64, 128], 1.0, 0.25, 0.7, generic_fields)?;
    checks.push(Check::below("commutation_order_minus_2", (order - 2.0).abs(), 0.1));
    details.push(("commutation_deviations", devs.into()));
    let xs = symmetry::boundary_samples(-1.0, 1.0, 100);
    let with = symmetry::boundary_e2_projection(&PairConfig::standard(true), &xs);
    let without = symmetry::boundary_e2_projection(&PairConfig::standard(false), &xs);
    checks.push(Check::below("e2_projection_with_reflection", with, 1e-12));
    checks.push(Check::above("e2_projection_without_reflection", without, 1e-3));
    let clean = symmetry::mode_expansion_symmetry_check(&sample_modes(0.0)?, 32)?;
    checks.push(Check::below("mode_parity_real_coefficients", clean.defect, 1e-12));
    let broken = symmetry::mode_expansion_symmetry_check(&sample_modes(0.3)?, 32)?;
    checks.push(Check::above("mode_parity_detects_second_component", broken.defect, 1e-3));
    details.push((
        "mode_parity_worst",
        map(vec![
            ("defect", broken.defect.into()),
            ("worst_mode", broken.worst_mode.map_or(Detail::Text("none".into()), |k| (k as f64).into())),
        ]),
    ));
    let small = |n: usize, steps: usize, dt: f64| -> Result<halfspace_sim::HalfSpaceState> {
        let mut cfg = SeedConfig::two_bubble(2.0 / n as f64)?;
        cfg.boundary.lambda = 0.15;
        cfg.interior.lambda = 0.12;
        cfg.with_phi0 = false;
        let mut state = halfspace_sim::seed_state(&cfg)?;
        let stepper = Stepper::new(state.grid);
        for _ in 0..steps {
            stepper.step(&mut state, dt)?;
        }
        Ok(state)
    };
    let dt = 1.0 / (128.0 * 128.0 * 8.0);
    let coarse = small(128, 40, dt)?;
    let transported = symmetry::transported_term_boundary_check(&coarse, -0.3);
    checks.push(Check::below("transported_term_on_boundary", transported, 1e-10));
    checks.push(Check::below("boundary_parity_defect", coarse.parity_defect, 1e-10));
    let fine = small(256, 40, dt)?;
    let (a, b) = (symmetry::pressure_neumann_chain(&coarse), symmetry::pressure_neumann_chain(&fine));
    checks.push(Check::below("neumann_d22_v2_refinement_ratio", b.d22_v2 / a.d22_v2, 0.5));
    checks.push(Check::below("neumann_director_term_refinement_ratio", b.director_term / a.director_term, 0.5));
    checks.push(Check::below("neumann_d2_p_refinement_ratio", b.d2_p / a.d2_p, 0.5));
    details.push((
        "neumann_chain",
        map(vec![
            ("coarse", vec![a.d22_v2, a.director_term, a.d2_p].into()),
            ("fine", vec![b.d22_v2, b.director_term, b.d2_p].into()),
        ]),
    ));
    Ok(Report::new("check-symmetry", checks, details, started))
}

/// Fitted boundary scales and the sampled boundary divergence at each
/// fitting time, `(t, lambda, d1 Phi1 + d2 Phi3)`.
pub fn boundary_track(rep: &halfspace_sim::RunReport) -> Vec<(f64, f64, f64)> {
    rep.fits
        .iter()
        .filter_map(|(t, f)| {
            f.iter()
                .find(|b| b.spec.kind == BubbleKind::Boundary)
                .map(|b| (*t, b.spec.lambda, b.background.boundary_divergence()))
        })
        .collect()
}

/// Onset consistency of a track: the number of fitting intervals on which
/// `lambda` did not decrease, and on which the sign of its change disagreed
/// with the sign of the sampled divergence at the interval start.
pub fn onset_consistency(track: &[(f64, f64, f64)]) -> (usize, usize) {
    let mut not_decreasing = 0;
    let mut sign_mismatch = 0;
    for w in track.windows(2) {
        let d = w[1].1 - w[0].1;
        if d >= 0.0 {
            not_decreasing += 1;
        }
        if (d < 0.0) != (w[0].2 < 0.0) {
            sign_mismatch += 1;
        }
    }
    (not_decreasing, sign_mismatch)
}

/// Runs the simulation, writing the per-step CSV and optional snapshots into
/// `out`.
pub fn simulate_suite(sc: &SimulateConfig, out: &Path) -> Result<Report> {
    let started = Instant::now();
    let mut state = halfspace_sim::seed_state(&sc.seed)?;
    let bubbles = [sc.seed.boundary, sc.seed.interior];
    let opts = RunOptions {
        dt: sc.dt,
        steps: sc.steps,
        fit_every: sc.fit_every,
    };
    let every = sc.snapshot_every;
    let report = halfspace_sim::run_with(&mut state, &bubbles, &opts, |step, st| {
        if every == 0 || step % every != 0 {
            return Ok(());
        }
        let fields = halfspace_sim::snapshot_fields(st);
        let refs: Vec<&[f64]> = fields.iter().map(|f| f.as_slice()).collect();
        let g = st.grid;
        let mut file = std::io::BufWriter::new(std::fs::File::create(out.join(format!("snapshot_{step:06}.bin")))?);
        halfspace_sim::write_snapshot(&mut file, g.n, g.half_rows(), g.h(), &refs)?;
        file.flush()?;
        Ok(())
    })?;
    let records = &report.records;
    let nb = bubbles.len();
    let mut csv = String::from("t,E_kin,E_dir,residual");
    for k in 1..=nb {
        let _ = write!(csv, ",lambda_fit_{k}");
    }
    csv.push('\n');
    for r in records {
        let _ = write!(csv, "{},{},{},{}", fmt_num(r.t), fmt_num(r.kinetic), fmt_num(r.dirichlet), fmt_num(r.residual));
        for k in 0..nb {
            let _ = write!(csv, ",{}", fmt_num(r.lambda_fit.get(k).copied().unwrap_or(f64::NAN)));
        }
        csv.push('\n');
    }
    std::fs::write(out.join("simulate.csv"), csv)?;
    let relres_u = {
        let (res, rate) = records
            .iter()
            .fold((0.0, 0.0), |(a, b), r| (a + r.residual_unweighted.abs(), b + r.rate.abs()));
        if rate > 0.0 {
            res / rate
        } else {
            0.0
        }
    };
    let (stop, max_inc, relres, unit) = (
        report.stop,
        report.max_energy_increase,
        report.relative_residual,
        report.max_unit_defect,
    );
    let track = boundary_track(&report);
    let (not_decreasing, mismatch) = onset_consistency(&track);
    let checks = vec![
        Check::with_pass("energy_max_step_increase", max_inc, Some(0.0), max_inc < 0.0),
        Check::below("energy_law_relative_residual", relres, 0.05),
        Check::below("boundary_parity_defect", state.parity_defect, 1e-10),
        Check::below("unit_length_defect", unit, 1e-12),
        Check::below("boundary_lambda_non_decreasing_intervals", not_decreasing as f64, 0.0),
        Check::below("lambda_dot_sign_mismatches", mismatch as f64, 0.0),
    ];
    let stop_detail = match stop {
        StopReason::Completed => map(vec![("reason", "completed".into())]),
        StopReason::Blowup { t, grad_max } => map(vec![
            ("reason", "blowup_detected".into()),
            ("t", t.into()),
            ("grad_max", grad_max.into()),
        ]),
    };
    Ok(Report::new(
        "simulate",
        checks,
        vec![
            ("steps", (records.len() as f64).into()),
            ("stop", stop_detail),
            ("relative_residual_unweighted", relres_u.into()),
            (
                "boundary_fits",
                Detail::List(track.iter().map(|(t, l, d)| vec![*t, *l, *d].into()).collect()),
            ),
        ],
        started,
    ))
}

// ---------------------------------------------------------------- driver

/// Output directory: `BUBBLEFLOW_OUT` wins over `--out`.
pub fn output_dir(flag: &Path) -> PathBuf {
    match std::env::var_os("BUBBLEFLOW_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag.to_path_buf(),
    }
}

fn write_report(out: &Path, file: &str, r: &Report) -> Result<()> {
    std::fs::write(out.join(file), r.to_json())?;
    Ok(())
}

fn modulation_params(cmd: &Command, cfg: &Config) -> Result<ModulationParams> {
    let d = ModulationParams::default();
    let mut p = ModulationParams {
        a_star: cfg.get_or("modulation.a_star", d.a_star)?,
        t_final: cfg.get_or("modulation.T", d.t_final)?,
        nodes: cfg.get_or("modulation.nodes", d.nodes)?,
    };
    if let Command::RunModulation { a_star, t_final, nodes } = cmd {
        p.a_star = a_star.unwrap_or(p.a_star);
        p.t_final = t_final.unwrap_or(p.t_final);
        p.nodes = nodes.unwrap_or(p.nodes);
    }
    Ok(p)
}

/// Runs the requested command. Every summary is written before a
/// `SuiteFailure` is returned.
pub fn run(cli: &Cli) -> Result<Vec<Report>> {
    if let Some(n) = cli.threads {
        // a pool built earlier in the process wins; nothing else to do then
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let out = output_dir(&cli.out);
    std::fs::create_dir_all(&out)?;
    let mut reports = Vec::new();
    let cmd = &cli.command;
    let all = matches!(cmd, Command::All);
    if all || matches!(cmd, Command::VerifyProfiles) {
        let r = profiles_suite()?;
        write_report(&out, "verify-profiles.json", &r)?;
        reports.push(r);
    }
    if all || matches!(cmd, Command::VerifyStokes) {
        let r = stokes_suite(cli.seed)?;
        write_report(&out, "verify-stokes.json", &r)?;
        reports.push(r);
    }
    if all || matches!(cmd, Command::RunModulation { .. }) {
        let (r, csv) = modulation_suite(modulation_params(cmd, &cfg)?)?;
        std::fs::write(out.join("modulation.csv"), csv)?;
        write_report(&out, "run-modulation.json", &r)?;
        reports.push(r);
    }
    if all || matches!(cmd, Command::CheckSymmetry) {
        let r = symmetry_suite()?;
        write_report(&out, "check-symmetry.json", &r)?;
        reports.push(r);
    }
    if matches!(cmd, Command::Simulate) || (all && cli.config.is_some()) {
        let sc = SimulateConfig::from_config(&cfg)?;
        let r = simulate_suite(&sc, &out)?;
        write_report(&out, "simulate.json", &r)?;
        reports.push(r);
    }
    if all {
        let checks = reports
            .iter()
            .flat_map(|r| {
                r.checks.iter().map(move |c| Check {
                    name: format!("{}/{}", r.suite, c.name),
                    ..c.clone()
                })
            })
            .collect();
        let agg = Report {
            suite: "all".into(),
            checks,
            details: Vec::new(),
            wall_time: reports.iter().map(|r| r.wall_time).sum(),
        };
        write_report(&out, "all.json", &agg)?;
        reports.push(agg);
    }
    let last = reports.last().expect("every command produces a report");
    let failed = last.failed();
    if failed > 0 {
        return Err(Error::SuiteFailure {
            suite: last.suite.clone(),
            failed,
        });
    }
    Ok(reports)
}
