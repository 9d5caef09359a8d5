//! Reduced dynamics of the modulation parameters: the `Gamma_1` profile,
//! the scale equation and its `lambda_*` solution, the rotation `omega_0`,
//! and the center trajectory.

use rayon::prelude::*;

use crate::correction::{fitted_exponent, g_derivatives};
use crate::error::{Error, Result};
use crate::profiles::{kernel_z, w_profile, BubbleSpec, KERNEL_INDICES};
use crate::quad::{integrate_to_infinity, integrate_vec_breaks, QuadOptions};
use crate::vec3::{dot, Vec3};

/// Tolerance demanded of `gamma1`.
pub const GAMMA1_TOL: f64 = 1e-8;

/// Coefficients `(c_K, c_zK, c_zzK)` of the bracket
/// `c_K Kt + c_zK zeta Kt_zeta rho^2 / (1 + rho^2) - c_zzK cos w zeta^2 Kt_zetazeta`
/// in a `Gamma_1`-type profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaWeights(pub f64, pub f64, pub f64);

/// Weights of the published `Gamma_1`.
pub const GAMMA1_PUBLISHED: GammaWeights = GammaWeights(1.0, 2.0, 4.0);

/// Weights obtained by projecting the error terms `K_01 + K_02` onto
/// `Z_{0,1}` directly; they differ from the published ones in the first and
/// last slot.
pub const GAMMA1_PROJECTED: GammaWeights = GammaWeights(2.0, 2.0, 1.0);

/// `Gamma_1(tau)`, the memory weight of the mode-0 orthogonality condition.
///
/// Equals 1 at `tau = 0` and is negligible beyond `tau ~ 50`.
pub fn gamma1(tau: f64) -> Result<f64> {
    gamma_profile(tau, GAMMA1_PUBLISHED)
}

/// `-int_0^inf rho^3 w_rho^3 [bracket](tau (1 + rho^2)) drho` for the given
/// bracket weights.
pub fn gamma_profile(tau: f64, weights: GammaWeights) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma1 needs tau > 0, got {tau}")));
    }
    let GammaWeights(ck, czk, czzk) = weights;
    let f = |rho: f64| {
        let wp = w_profile(rho);
        let d = 1.0 + rho * rho;
        let b = 0.25 * tau * d;
        let (g, g1, g2) = g_derivatives(b);
        // Ktilde(zeta) = g(zeta / 4) / 2 and its scaled derivatives.
        let k = 0.5 * g;
        let zk = 0.5 * b * g1;
        let z2k = 0.5 * b * b * g2;
        let w3 = wp.w_rho * wp.w_rho * wp.w_rho;
        -rho * rho * rho * w3 * (ck * k + czk * zk * rho * rho / d - czzk * wp.cos_w * z2k)
    };
    // Panels resolve both the unit scale of the profile and the crossover
    // radius tau^{-1/2} of the kernel.
    let rc = tau.powf(-0.5);
    let mut breaks = vec![0.0];
    let mut x = 1e-3;
    while x < 64.0f64.max(16.0 * rc) {
        breaks.push(x);
        x *= 2.0;
    }
    for m in [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
        breaks.push(rc * m);
    }
    breaks.retain(|b| b.is_finite());
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    let opts = QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-11,
        max_intervals: 4000,
    };
    integrate_to_infinity(f, &breaks, opts)
}

/// The two normalizations of the scale ansatz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaStarVariant {
    /// `lambda_* = kappa (T - t) / |log(T - t)|^2`, rate `-kappa / |log(T - t)|^2`.
    #[default]
    Plain,
    /// Both value and rate carry the extra factor `|log T|`.
    LogNormalized,
}

/// Value and leading-order rate of the scale ansatz.
///
/// The rate is the one the ansatz prescribes, `-kappa / |log(T - t)|^2`
/// (times `|log T|` for the normalized variant); it agrees with the time
/// derivative of the value up to a relative `O(1 / |log(T - t)|)`. Both are
/// zero for `t >= T`. Assumes `T - t < 1` so that the logarithm is nonzero.
pub fn lambda_star(t: f64, t_final: f64, kappa: f64, variant: LambdaStarVariant) -> (f64, f64) {
    let gap = t_final - t;
    if gap <= 0.0 {
        return (0.0, 0.0);
    }
    let l2 = gap.ln().powi(2);
    let c = match variant {
        LambdaStarVariant::Plain => kappa,
        LambdaStarVariant::LogNormalized => kappa * t_final.ln().abs(),
    };
    (c * gap / l2, -c / l2)
}

/// `kappa` for which the plain ansatz solves the scale equation at `t = T`:
/// `kappa = |a| |log 2T|`.
pub fn matched_kappa(a_star: f64, t_final: f64) -> f64 {
    a_star.abs() * (2.0 * t_final).ln().abs()
}

/// Sampled trajectory of the modulation parameters.
///
/// `lambda_dot` is piecewise linear on `time_mesh`; `lambda` holds its
/// exact antiderivative at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTrajectory {
    pub time_mesh: Vec<f64>,
    pub lambda: Vec<f64>,
    pub lambda_dot: Vec<f64>,
    pub omega: Vec<f64>,
    pub xi: Vec<[f64; 2]>,
    pub t_final: f64,
}

impl ParamTrajectory {
    /// Trajectory with `lambda(T) = 0` built from the rate samples; rotation
    /// and center are zero.
    pub fn from_rate(time_mesh: Vec<f64>, lambda_dot: Vec<f64>) -> Result<Self> {
        check_mesh(&time_mesh)?;
        if lambda_dot.len() != time_mesh.len() {
            return Err(Error::InvalidArgument("rate samples do not match the mesh".into()));
        }
        let lambda = integrate_back(&time_mesh, &lambda_dot, 0.0);
        let n = time_mesh.len();
        Ok(ParamTrajectory {
            t_final: time_mesh[n - 1],
            time_mesh,
            lambda,
            lambda_dot,
            omega: vec![0.0; n],
            xi: vec![[0.0; 2]; n],
        })
    }

    /// Constant scale `lambda0 > 0` with zero rate.
    pub fn frozen(time_mesh: Vec<f64>, lambda0: f64) -> Result<Self> {
        check_mesh(&time_mesh)?;
        let n = time_mesh.len();
        Ok(ParamTrajectory {
            t_final: time_mesh[n - 1],
            time_mesh,
            lambda: vec![lambda0; n],
            lambda_dot: vec![0.0; n],
            omega: vec![0.0; n],
            xi: vec![[0.0; 2]; n],
        })
    }

    fn segment(&self, t: f64) -> usize {
        let m = &self.time_mesh;
        (m.partition_point(|&x| x <= t).max(1) - 1).min(m.len() - 2)
    }

    /// Piecewise linear rate at `t`.
    pub fn lambda_dot_at(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let (t0, t1) = (self.time_mesh[i], self.time_mesh[i + 1]);
        let f = (t - t0) / (t1 - t0);
        self.lambda_dot[i] * (1.0 - f) + self.lambda_dot[i + 1] * f
    }

    /// Scale at `t`, integrating the rate exactly from the node below.
    pub fn lambda_at(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let (t0, t1) = (self.time_mesh[i], self.time_mesh[i + 1]);
        let slope = (self.lambda_dot[i + 1] - self.lambda_dot[i]) / (t1 - t0);
        let d = t - t0;
        self.lambda[i] + d * self.lambda_dot[i] + 0.5 * slope * d * d
    }
}

fn check_mesh(mesh: &[f64]) -> Result<()> {
    if mesh.len() < 2 || mesh.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("time mesh must be strictly increasing with at least two nodes".into()));
    }
    Ok(())
}

/// Antiderivative of a piecewise linear rate, pinned to `end` at the last node.
fn integrate_back(mesh: &[f64], rate: &[f64], end: f64) -> Vec<f64> {
    let n = mesh.len();
    let mut out = vec![0.0; n];
    out[n - 1] = end;
    for i in (0..n - 1).rev() {
        out[i] = out[i + 1] - 0.5 * (mesh[i + 1] - mesh[i]) * (rate[i] + rate[i + 1]);
    }
    out
}

/// [`integrate_back`] for a rate that vanishes at the blow-up time like
/// `1 / log^2(T - s)`: the last segment, where a linear rate would miss half
/// of the integral, uses that profile scaled to the rate at its left node.
fn integrate_back_to_blowup(mesh: &[f64], rate: &[f64]) -> Vec<f64> {
    let n = mesh.len();
    let g = mesh[n - 1] - mesh[n - 2];
    let mut out = integrate_back(mesh, rate, 0.0);
    if !(g < 1.0) {
        return out;
    }
    // int_0^g du / log^2 u = g int_0^inf e^-s / (log g - s)^2 ds
    let lg = g.ln();
    let tail = integrate_to_infinity(|s| (-s).exp() / (lg - s).powi(2), &[0.0, 1.0, 4.0, 16.0], QuadOptions::default())
        .map(|v| g * v * lg * lg)
        .unwrap_or(g);
    let shift = -tail * rate[n - 2] - out[n - 2];
    for v in out.iter_mut().take(n - 1) {
        *v += shift;
    }
    out
}

/// `int_{s0}^{e} (v(s) - c) / (t - s) ds` for `v` linear from `v0` at `s0`
/// to `v1` at `s1`, with `e <= s1` and the distance `t - s` floored at `u_min`.
#[allow(clippy::too_many_arguments)]
fn segment_memory(s0: f64, s1: f64, v0: f64, v1: f64, e: f64, t: f64, c: f64, u_min: f64) -> f64 {
    let u0 = t - s0;
    let u1 = (t - e.min(s1)).max(u_min);
    if u0 <= u1 {
        return 0.0;
    }
    let slope = (v1 - v0) / (s1 - s0);
    // v(s) - c = a + b u with u = t - s.
    let a = v0 + slope * u0 - c;
    let b = -slope;
    a * (u0 / u1).ln() + b * (u0 - u1)
}

/// `int_{-T}^{t - lambda^2} (lambda'(s) - lambda'(t)) / (t - s) ds`, exact for
/// the piecewise linear rate.
fn regular_part(mesh: &[f64], rate: &[f64], t: f64, lambda_sq: f64, rate_t: f64) -> f64 {
    let upper = t - lambda_sq;
    let mut acc = 0.0;
    for i in 0..mesh.len() - 1 {
        if mesh[i] >= upper {
            break;
        }
        acc += segment_memory(mesh[i], mesh[i + 1], rate[i], rate[i + 1], t, t, rate_t, lambda_sq);
        if mesh[i + 1] >= t {
            // the segment straddling t: the part beyond t never contributes
            break;
        }
    }
    acc
}

fn rate_between(mesh: &[f64], rate: &[f64], i: usize, t: f64) -> f64 {
    let f = (t - mesh[i]) / (mesh[i + 1] - mesh[i]);
    rate[i] * (1.0 - f) + rate[i + 1] * f
}

/// Residual of the scale equation at `t`:
/// `int_{-T}^{t - lambda(t)^2} lambda'(s) / (t - s) ds + |a_star|`.
///
/// The singular part is integrated in closed form:
/// `lambda'(t) log((t + T) / lambda^2)` plus the regular remainder.
pub fn reduced_residual_lambda(traj: &ParamTrajectory, a_star: f64, t: f64) -> Result<f64> {
    if !(a_star < 0.0) {
        return Err(Error::SignConditionViolated { value: a_star });
    }
    let lam = traj.lambda_at(t);
    if !(lam > 0.0) {
        return Err(Error::InvalidArgument(format!("scale vanishes at t = {t}")));
    }
    Ok(residual_with(&traj.time_mesh, &traj.lambda_dot, t, lam * lam, a_star))
}

fn residual_with(mesh: &[f64], rate: &[f64], t: f64, lambda_sq: f64, a_star: f64) -> f64 {
    let i = (mesh.partition_point(|&x| x <= t).max(1) - 1).min(mesh.len() - 2);
    let rate_t = rate_between(mesh, rate, i, t);
    let lower = mesh[0];
    regular_part(mesh, rate, t, lambda_sq, rate_t) + rate_t * ((t - lower) / lambda_sq).ln() + a_star.abs()
}

/// How the moving endpoint `t - lambda(t)^2` is treated by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EndpointMode {
    /// Endpoint follows the current iterate.
    #[default]
    Moving,
    /// Endpoint uses the plain ansatz with `kappa = |log 2T|`, independent of
    /// `a_star`; the equation is then linear in the rate.
    Frozen,
}

/// Settings of the fixed-point solve for the scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub relaxation: f64,
    pub max_sweeps: usize,
    /// Stop once every residual is below `tol * |a_star|`.
    pub tol: f64,
    /// Uniform history nodes on `[-T, 0)`.
    pub history_nodes: usize,
    pub endpoint: EndpointMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            relaxation: 0.5,
            max_sweeps: 5000,
            tol: 1e-9,
            history_nodes: 200,
            endpoint: EndpointMode::Moving,
        }
    }
}

/// Minimum number of solver nodes on `[0, T]`.
pub const MIN_SOLVE_NODES: usize = 200;

/// `nodes` points on `[0, T]` geometrically graded toward `T`: the gaps
/// `T - t` run from `T` down to `T * min_ratio`, then `T` itself.
pub fn graded_time_mesh(t_final: f64, nodes: usize, min_ratio: f64) -> Vec<f64> {
    let m = nodes.max(3) - 1;
    let mut out: Vec<f64> = (0..m)
        .map(|i| {
            let f = i as f64 / (m - 1) as f64;
            t_final - t_final * min_ratio.powf(f)
        })
        .collect();
    out.push(t_final);
    out
}

/// Result of `solve_lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution {
    /// Trajectory on `[-T, T]`; the part on `[-T, 0)` is the history.
    pub trajectory: ParamTrajectory,
    /// `kappa` of the plain ansatz used as history.
    pub history_kappa: f64,
    /// Picard sweeps summed over all shooting passes.
    pub sweeps: usize,
}

/// Solves the scale equation
/// `int_{-T}^{t - lambda^2} lambda'(s) / (t - s) ds = -|a_star|` on `mesh`
/// (covering `[0, T]`), with the plain ansatz as history on `[-T, 0)`.
///
/// The rate is piecewise linear, every collocation integral is exact, and
/// the rate is updated by relaxed Picard sweeps starting from the ansatz.
/// The history `kappa` is then adjusted by secant steps until the solved
/// rate at `t = 0` joins the history continuously; starting from the
/// matched `kappa` alone leaves a jump that makes `lambda` increase near 0
/// when `|log T|` is moderate.
pub fn solve_lambda(a_star: f64, mesh: &[f64], opts: SolveOptions) -> Result<LambdaSolution> {
    if !(a_star < 0.0) {
        return Err(Error::SignConditionViolated { value: a_star });
    }
    check_mesh(mesh)?;
    if mesh.len() < MIN_SOLVE_NODES {
        return Err(Error::MeshTooCoarse {
            nodes: mesh.len(),
            required: MIN_SOLVE_NODES,
        });
    }
    let t_final = *mesh.last().unwrap();
    if mesh[0] != 0.0 || !(t_final > 0.0 && t_final < 0.5) {
        return Err(Error::InvalidArgument("mesh must run from 0 to some T in (0, 1/2)".into()));
    }
    let hist = opts.history_nodes.max(2);
    let mut full: Vec<f64> = (0..hist).map(|i| -t_final + t_final * i as f64 / hist as f64).collect();
    let first = full.len();
    full.extend_from_slice(mesh);
    let ansatz_rate = |kappa: f64| lambda_star(0.0, t_final, kappa, LambdaStarVariant::Plain).1;

    let mut sweeps = 0;
    let mut kappa = matched_kappa(a_star, t_final);
    let mut prev: Option<(f64, f64)> = None;
    for _pass in 0..40 {
        let (rate, lambda, used) = picard(&full, first, a_star, kappa, opts)?;
        sweeps += used;
        let jump = rate[first] - ansatz_rate(kappa);
        let done = jump.abs() <= 1e-10 * ansatz_rate(kappa).abs();
        if done {
            let mut trajectory = ParamTrajectory::from_rate(full, rate)?;
            trajectory.lambda = lambda;
            return Ok(LambdaSolution {
                trajectory,
                history_kappa: kappa,
                sweeps,
            });
        }
        let next = match prev {
            Some((k0, j0)) if j0 != jump => kappa - jump * (kappa - k0) / (jump - j0),
            // the rate jump is about d(ansatz rate)/d kappa times the kappa error
            _ => kappa * 1.1,
        };
        prev = Some((kappa, jump));
        kappa = next;
        if !(kappa > 0.0) {
            break;
        }
    }
    Err(Error::NoConvergence {
        sweeps,
        max_residual: f64::NAN,
        residual_profile: Vec::new(),
    })
}

/// Relaxed Picard sweeps on the rate at the nodes `first..n-1` with the
/// history fixed by `kappa`; returns rate, scale and the sweep count.
fn picard(full: &[f64], first: usize, a_star: f64, kappa: f64, opts: SolveOptions) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = full.len();
    let t_final = full[n - 1];
    let mut rate: Vec<f64> = full.iter().map(|&s| lambda_star(s, t_final, kappa, LambdaStarVariant::Plain).1).collect();
    let frozen_sq: Vec<f64> = full
        .iter()
        .map(|&s| lambda_star(s, t_final, (2.0 * t_final).ln().abs(), LambdaStarVariant::Plain).0.powi(2))
        .collect();
    // collocation nodes: the solver mesh without its endpoint T
    let nodes: Vec<usize> = (first..n - 1).collect();
    let scale = a_star.abs();
    let mut residuals = vec![0.0; nodes.len()];
    for sweep in 0..opts.max_sweeps {
        let lambda = integrate_back_to_blowup(full, &rate);
        let lam_sq: Vec<f64> = match opts.endpoint {
            EndpointMode::Moving => lambda.iter().map(|l| l * l).collect(),
            EndpointMode::Frozen => frozen_sq.clone(),
        };
        if nodes.iter().any(|&i| !(lam_sq[i] > 0.0)) {
            return Err(Error::NoConvergence {
                sweeps: sweep,
                max_residual: f64::INFINITY,
                residual_profile: residuals,
            });
        }
        let updates: Vec<(f64, f64)> = nodes
            .par_iter()
            .map(|&i| {
                let t = full[i];
                let reg = regular_part(full, &rate, t, lam_sq[i], rate[i]);
                let log = ((t - full[0]) / lam_sq[i]).ln();
                let res = reg + rate[i] * log + scale;
                (res, (-scale - reg) / log)
            })
            .collect();
        let mut worst = 0.0f64;
        for (k, (res, _)) in updates.iter().enumerate() {
            residuals[k] = *res;
            worst = worst.max(res.abs());
        }
        if worst < opts.tol * scale {
            return Ok((rate, lambda, sweep));
        }
        for (k, &i) in nodes.iter().enumerate() {
            rate[i] += opts.relaxation * (updates[k].1 - rate[i]);
        }
    }
    Err(Error::NoConvergence {
        sweeps: opts.max_sweeps,
        max_residual: residuals.iter().fold(0.0f64, |m, r| m.max(r.abs())),
        residual_profile: residuals,
    })
}

/// Residual of the scale equation at every node of `traj` in `[0, T)`,
/// evaluated with the trajectory's own endpoint.
pub fn residual_profile(traj: &ParamTrajectory, a_star: f64) -> Result<Vec<(f64, f64)>> {
    traj.time_mesh
        .iter()
        .copied()
        .filter(|&t| t >= 0.0 && t < traj.t_final)
        .map(|t| reduced_residual_lambda(traj, a_star, t).map(|r| (t, r)))
        .collect()
}

/// Rate ratio `lambda(t) / [(T - t) / |log(T - t)|^2]` over the final
/// decade of `T - t` before the last retained node.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFlatness {
    /// `(t, ratio)` in the window.
    pub samples: Vec<(f64, f64)>,
    pub mean: f64,
    /// Largest `|ratio / mean - 1|`.
    pub max_deviation: f64,
}

/// Flatness of the solved rate: the last `drop_fraction` of the solver
/// nodes on `[0, T)` is discarded, and the window is the decade of `T - t`
/// ending at the last retained node.
pub fn rate_flatness(traj: &ParamTrajectory, drop_fraction: f64) -> Result<RateFlatness> {
    let tf = traj.t_final;
    let nodes: Vec<usize> = (0..traj.time_mesh.len())
        .filter(|&i| traj.time_mesh[i] >= 0.0 && traj.time_mesh[i] < tf)
        .collect();
    let keep = nodes.len() - (drop_fraction * nodes.len() as f64).ceil() as usize;
    if keep < 2 {
        return Err(Error::MeshTooCoarse { nodes: keep, required: 2 });
    }
    let last_gap = tf - traj.time_mesh[nodes[keep - 1]];
    let samples: Vec<(f64, f64)> = nodes[..keep]
        .iter()
        .filter_map(|&i| {
            let t = traj.time_mesh[i];
            let gap = tf - t;
            (gap <= 10.0 * last_gap).then(|| (t, traj.lambda[i] * gap.ln().powi(2) / gap))
        })
        .collect();
    let mean = crate::quad::pairwise_sum(&samples.iter().map(|s| s.1).collect::<Vec<_>>()) / samples.len() as f64;
    let max_deviation = samples.iter().fold(0.0f64, |m, s| m.max((s.1 / mean - 1.0).abs()));
    Ok(RateFlatness {
        samples,
        mean,
        max_deviation,
    })
}

/// One constant covering both regimes of `Gamma_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gamma1Bounds {
    /// Largest `|Gamma_1 - 1| / (tau (1 + |log tau|))` on `[1e-6, 1]`.
    pub near: f64,
    /// Largest `tau |Gamma_1|` on `[1, 1e6]`.
    pub far: f64,
    /// `max(near, far)`.
    pub constant: f64,
}

/// Samples `Gamma_1` at `samples` log-spaced points on each of `[1e-6, 1]`
/// and `[1, 1e6]`.
pub fn gamma1_bounds(samples: usize) -> Result<Gamma1Bounds> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let at = |lo: f64, k: usize| 10f64.powf(lo + 6.0 * k as f64 / (samples - 1) as f64);
    let (mut near, mut far) = (0.0f64, 0.0f64);
    for k in 0..samples {
        let tau = at(-6.0, k);
        near = near.max((gamma1(tau)? - 1.0).abs() / (tau * (1.0 + tau.ln().abs())));
        let tau = at(0.0, k);
        far = far.max(tau * gamma1(tau)?.abs());
    }
    Ok(Gamma1Bounds {
        near,
        far,
        constant: near.max(far),
    })
}

/// Rotation angle `omega_0 = arctan(curl / div)`, principal branch in
/// `(-pi/2, pi/2)`.
pub fn omega0(div_val: f64, curl_val: f64) -> Result<f64> {
    if !(div_val < 0.0) {
        return Err(Error::SignConditionViolated { value: div_val });
    }
    Ok((curl_val / div_val).atan())
}

/// Center trajectory recovered from sampled velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct XiTrajectory {
    pub time_mesh: Vec<f64>,
    pub xi: Vec<[f64; 2]>,
    /// `max |xi - q| / (T - t)^{1 + 2 gamma}` over the earlier half of the
    /// samples.
    pub fitted_c: f64,
    /// Largest ratio of `|xi - q| / (T - t)^{1 + 2 gamma}` to `fitted_c`.
    pub worst_ratio: f64,
}

impl XiTrajectory {
    /// Log-log slope of `|xi - q|` against `T - t` over samples whose gap
    /// lies in `[gap_lo, gap_hi]`.
    pub fn fitted_exponent(&self, q: [f64; 2], t_final: f64, gap_lo: f64, gap_hi: f64) -> f64 {
        let (mut gaps, mut devs) = (Vec::new(), Vec::new());
        for (t, x) in self.time_mesh.iter().zip(&self.xi) {
            let g = t_final - t;
            let d = (x[0] - q[0]).hypot(x[1] - q[1]);
            if g >= gap_lo && g <= gap_hi && d > 0.0 {
                gaps.push(g);
                devs.push(d);
            }
        }
        fitted_exponent(&gaps, &devs)
    }
}

/// Integrates `xi' = samples` backward from `xi(T) = q` by the trapezoid
/// rule and checks `|xi(t) - q| <= C (T - t)^{1 + 2 gamma_star}`.
///
/// `C` is fitted on the earlier half of the samples; a later ratio more than
/// ten times larger is reported as `GrowthViolation`. The last sample must sit
/// at `T`.
pub fn solve_xi(samples: &[(f64, [f64; 2])], q: [f64; 2], t_final: f64, gamma_star: f64) -> Result<XiTrajectory> {
    let n = samples.len();
    if n < 4 || samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidArgument("need at least four samples on an increasing mesh".into()));
    }
    if (samples[n - 1].0 - t_final).abs() > 1e-12 * t_final.abs().max(1.0) {
        return Err(Error::InvalidArgument("last sample must sit at the final time".into()));
    }
    if !(gamma_star > 0.0 && gamma_star < 0.5) {
        return Err(Error::InvalidArgument(format!("gamma_star = {gamma_star} outside (0, 1/2)")));
    }
    let mut xi = vec![q; n];
    for i in (0..n - 1).rev() {
        let h = samples[i + 1].0 - samples[i].0;
        for c in 0..2 {
            xi[i][c] = xi[i + 1][c] - 0.5 * h * (samples[i].1[c] + samples[i + 1].1[c]);
        }
    }
    let p = 1.0 + 2.0 * gamma_star;
    let ratios: Vec<f64> = samples[..n - 1]
        .iter()
        .zip(&xi)
        .map(|((t, _), x)| (x[0] - q[0]).hypot(x[1] - q[1]) / (t_final - t).powf(p))
        .collect();
    let half = ratios.len() / 2;
    let fitted_c = ratios[..half.max(1)].iter().fold(0.0f64, |m, r| m.max(*r));
    let worst = ratios.iter().fold(0.0f64, |m, r| m.max(*r));
    let worst_ratio = if fitted_c > 0.0 {
        worst / fitted_c
    } else if worst > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    if worst_ratio > 10.0 {
        return Err(Error::GrowthViolation { ratio: worst_ratio });
    }
    Ok(XiTrajectory {
        time_mesh: samples.iter().map(|s| s.0).collect(),
        xi,
        fitted_c,
        worst_ratio,
    })
}

/// Kernel projections of a tangent field on `B_{2R}` in local coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityCoeffs {
    /// `int_{B_2R} h . Z_{p,q}` in the order of `KERNEL_INDICES`.
    pub coeffs: [f64; 6],
    /// `int chi |Z_{p,q}|^2` with `chi = w_rho^2` on `B_2R`.
    pub norms: [f64; 6],
    pub r_cut: f64,
}

impl OrthogonalityCoeffs {
    /// Coefficient of `chi Z_{p,q}` in the projected field `hbar`.
    pub fn weights(&self) -> [f64; 6] {
        let mut w = [0.0; 6];
        for k in 0..6 {
            w[k] = self.coeffs[k] / self.norms[k];
        }
        w
    }

    /// Projected field `hbar(y) = sum weight chi Z_{p,q}(y)`.
    pub fn hbar(&self, spec: &BubbleSpec, y: [f64; 2]) -> Result<Vec3> {
        let rho = y[0].hypot(y[1]);
        let mut out = [0.0; 3];
        if rho >= 2.0 * self.r_cut {
            return Ok(out);
        }
        let chi = w_profile(rho).w_rho.powi(2);
        for (k, (p, q)) in KERNEL_INDICES.iter().enumerate() {
            let z = kernel_z(*p, *q, spec, y)?;
            for c in 0..3 {
                out[c] += self.weights()[k] * chi * z[c];
            }
        }
        Ok(out)
    }
}

/// Angular nodes of the polar quadrature in `orthogonality_coeffs`.
pub const ORTHO_ANGLES: usize = 64;

/// Projections of `h` (a function of the local variable `y`) onto the six
/// kernels over `B_{2R}`, with the `chi`-weighted kernel norms.
///
/// Radial panels are adaptive; the angular rule is the 64-point trapezoid,
/// exact for angular modes below 64.
pub fn orthogonality_coeffs<H>(h: H, spec: &BubbleSpec, r_cut: f64) -> Result<OrthogonalityCoeffs>
where
    H: Fn([f64; 2]) -> Vec3,
{
    if !(r_cut > 0.0) {
        return Err(Error::InvalidArgument("cutoff radius must be positive".into()));
    }
    let outer = 2.0 * r_cut;
    let angles: Vec<(f64, f64)> = (0..ORTHO_ANGLES)
        .map(|j| {
            let th = std::f64::consts::TAU * (j as f64 + 0.5) / ORTHO_ANGLES as f64;
            (th.cos(), th.sin())
        })
        .collect();
    let dth = std::f64::consts::TAU / ORTHO_ANGLES as f64;
    let mut failure = None;
    let integrand = |rho: f64| -> [f64; 12] {
        let mut acc = [0.0; 12];
        if rho <= 0.0 {
            return acc;
        }
        let chi = w_profile(rho).w_rho.powi(2);
        for &(c, s) in &angles {
            let y = [rho * c, rho * s];
            let hv = h(y);
            for (k, (p, q)) in KERNEL_INDICES.iter().enumerate() {
                match kernel_z(*p, *q, spec, y) {
                    Ok(z) => {
                        acc[k] += dot(hv, z) * rho * dth;
                        acc[6 + k] += chi * dot(z, z) * rho * dth;
                    }
                    Err(e) => failure = Some(e),
                }
            }
        }
        acc
    };
    let mut breaks = vec![0.0];
    let mut x = 0.125;
    while x < outer {
        breaks.push(x);
        x *= 2.0;
    }
    breaks.push(outer);
    let opts = QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-11,
        max_intervals: 4000,
    };
    let res = integrate_vec_breaks(integrand, &breaks, opts)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut coeffs = [0.0; 6];
    let mut norms = [0.0; 6];
    coeffs.copy_from_slice(&res.value[..6]);
    norms.copy_from_slice(&res.value[6..]);
    Ok(OrthogonalityCoeffs { coeffs, norms, r_cut })
}

/// `int_{-T}^t lambda'(s) Gamma(lambda(t)^2 / (t - s)) ds / (t - s) - 2 lambda'(t)`,
/// the leading part of the mode-0 projection of the error terms, for the
/// profile with the given weights.
pub fn b01_gamma_form<F: Fn(f64) -> f64>(
    rate: F,
    lambda_t: f64,
    t: f64,
    lower: f64,
    weights: GammaWeights,
) -> Result<f64> {
    let l2 = lambda_t * lambda_t;
    let mut err = None;
    let f = |s: f64| {
        let u = t - s;
        if u <= 0.0 {
            return [0.0];
        }
        match gamma_profile(l2 / u, weights) {
            Ok(g) => [rate(s) * g / u],
            Err(e) => {
                err = Some(e);
                [0.0]
            }
        }
    };
    // graded toward t, down to well below the scale lambda^2
    let mut breaks = vec![lower];
    let mut gap = (t - lower) / 2.0;
    while gap > 1e-4 * l2 {
        breaks.push(t - gap);
        gap /= 2.0;
    }
    breaks.push(t);
    let opts = QuadOptions {
        abs_tol: 1e-12,
        rel_tol: 1e-9,
        max_intervals: 4000,
    };
    let v = integrate_vec_breaks(f, &breaks, opts)?.value[0];
    if let Some(e) = err {
        return Err(e);
    }
    Ok(v - 2.0 * rate(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma1_limits() {
        assert!((gamma1(1e-9).unwrap() - 1.0).abs() < 1e-6);
        let big = gamma1(1e6).unwrap();
        assert!(big.abs() * 1e6 < 10.0);
        assert!(gamma1(0.0).is_err());
    }

    #[test]
    fn lambda_star_closed_form() {
        let (v, d) = lambda_star(0.005, 0.01, 1.0, LambdaStarVariant::Plain);
        assert!((v - 0.005 / 200f64.ln().powi(2)).abs() < 1e-18);
        assert!((v - 1.781e-4).abs() < 1e-7);
        assert!(d < 0.0);
        assert_eq!(lambda_star(0.01, 0.01, 1.0, LambdaStarVariant::Plain), (0.0, 0.0));
        let (vn, _) = lambda_star(0.005, 0.01, 1.0, LambdaStarVariant::LogNormalized);
        assert!((vn / v - 0.01f64.ln().abs()).abs() < 1e-12);
    }

    #[test]
    fn omega0_branches() {
        assert_eq!(omega0(-1.0, 0.0).unwrap(), 0.0);
        assert!((omega0(-2.0, -2.0).unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((omega0(-2.0, 2.0).unwrap() + std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!(matches!(omega0(0.0, 1.0), Err(Error::SignConditionViolated { .. })));
    }

    #[test]
    fn segment_memory_matches_quadrature() {
        let (s0, s1, v0, v1, t, c) = (0.1, 0.3, 2.0, -1.0, 0.45, 0.7);
        let exact = segment_memory(s0, s1, v0, v1, s1, t, c, 0.0);
        let num = crate::quad::integrate(
            |s| (v0 + (v1 - v0) * (s - s0) / (s1 - s0) - c) / (t - s),
            s0,
            s1,
            QuadOptions::default(),
        )
        .unwrap();
        assert!((exact - num).abs() < 1e-12);
    }

    #[test]
    fn frozen_trajectory_residual_is_a() {
        let mesh: Vec<f64> = (0..=20).map(|i| -0.01 + 0.001 * i as f64).collect();
        let traj = ParamTrajectory::frozen(mesh, 0.01).unwrap();
        let r = reduced_residual_lambda(&traj, -0.7, 0.004).unwrap();
        assert!((r - 0.7).abs() < 1e-15);
        assert!(matches!(
            reduced_residual_lambda(&traj, 0.5, 0.004),
            Err(Error::SignConditionViolated { .. })
        ));
    }

    #[test]
    fn solve_rejects_positive_a() {
        let mesh = graded_time_mesh(0.01, 400, 1e-10);
        assert!(matches!(
            solve_lambda(1.0, &mesh, SolveOptions::default()),
            Err(Error::SignConditionViolated { .. })
        ));
        let coarse = graded_time_mesh(0.01, 50, 1e-10);
        assert!(matches!(
            solve_lambda(-1.0, &coarse, SolveOptions::default()),
            Err(Error::MeshTooCoarse { .. })
        ));
    }
}
