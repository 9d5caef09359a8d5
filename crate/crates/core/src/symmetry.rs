//! Checks of the reflection calculus: commutation of the system residual
//! with the reflection, the boundary projection of the interior pair error,
//! the transport term on the boundary, the parity of mode expansions, and
//! the Neumann condition of the pressure.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::halfspace_sim::HalfSpaceState;
use crate::profiles::{w2, w2_jacobian, BubbleSpec, ModeFunction, Profile};
use crate::vec3::{self, axpy, dot, mat_vec, scale, sub, Vec3, Q_STAR};

/// Values of `(u, v, P)` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub u: Vec3,
    pub v: [f64; 2],
    pub p: f64,
}

/// Parity of the six residual components `(R_u, R_v, div v)`.
const RESIDUAL_PARITY: [f64; 6] = [1.0, 1.0, -1.0, 1.0, -1.0, 1.0];

/// Reflection of a field sample to the mirror point.
pub fn reflect_sample(s: FieldSample) -> FieldSample {
    FieldSample {
        u: [s.u[0], s.u[1], -s.u[2]],
        v: [s.v[0], -s.v[1]],
        p: s.p,
    }
}

/// Grid `x1 = -l + i h`, `x2 = -l + (j + offset) h`, `i, j = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetGrid {
    pub n: usize,
    pub l: f64,
    /// Row offset in units of `h`; `0` makes the grid mirror symmetric.
    pub offset: f64,
}

impl OffsetGrid {
    pub fn h(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    fn point(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.h();
        [-self.l + i as f64 * h, -self.l + (j as f64 + self.offset) * h]
    }
}

/// Finite-difference residual `(R_u, R_v, div v)` of the stationary part of
/// the system at every node two cells away from the edge (zero elsewhere):
/// `R_u = Lap u + |grad u|^2 u - v . grad u` and
/// `R_v = Lap v - v . grad v - grad P - eps0 div(grad u (.) grad u - |grad u|^2 Id / 2)`.
pub fn discrete_residual<F>(grid: OffsetGrid, eps0: f64, fields: F) -> Vec<[f64; 6]>
where
    F: Fn([f64; 2]) -> FieldSample + Sync,
{
    let m = grid.n + 1;
    let h = grid.h();
    let samples: Vec<FieldSample> = (0..m * m)
        .into_par_iter()
        .map(|k| fields(grid.point(k % m, k / m)))
        .collect();
    let d = |k: usize, step: usize, f: &dyn Fn(&FieldSample) -> f64| (f(&samples[k + step]) - f(&samples[k - step])) / (2.0 * h);
    let lap = |k: usize, f: &dyn Fn(&FieldSample) -> f64| {
        ((f(&samples[k + 1]) + f(&samples[k - 1])) + (f(&samples[k + m]) + f(&samples[k - m])) - 4.0 * f(&samples[k])) / (h * h)
    };
    // forcing tensor on the nodes one cell in from the edge
    let mut tensor = vec![[0.0; 3]; m * m];
    for j in 1..m - 1 {
        for i in 1..m - 1 {
            let k = j * m + i;
            let mut g = [[0.0; 3]; 2];
            for c in 0..3 {
                g[0][c] = d(k, 1, &|s| s.u[c]);
                g[1][c] = d(k, m, &|s| s.u[c]);
            }
            let t11 = dot(g[0], g[0]);
            let t22 = dot(g[1], g[1]);
            let half = 0.5 * (t11 + t22);
            tensor[k] = [t11 - half, dot(g[0], g[1]), t22 - half];
        }
    }
    let mut out = vec![[0.0; 6]; m * m];
    for j in 2..m - 2 {
        for i in 2..m - 2 {
            let k = j * m + i;
            let s = samples[k];
            let mut r = [0.0; 6];
            let mut gu = [[0.0; 3]; 2];
            for c in 0..3 {
                gu[0][c] = d(k, 1, &|q| q.u[c]);
                gu[1][c] = d(k, m, &|q| q.u[c]);
            }
            let gsq = dot(gu[0], gu[0]) + dot(gu[1], gu[1]);
            for c in 0..3 {
                r[c] = lap(k, &|q| q.u[c]) + gsq * s.u[c] - s.v[0] * gu[0][c] - s.v[1] * gu[1][c];
            }
            let div_t = [
                (tensor[k + 1][0] - tensor[k - 1][0] + tensor[k + m][1] - tensor[k - m][1]) / (2.0 * h),
                (tensor[k + 1][1] - tensor[k - 1][1] + tensor[k + m][2] - tensor[k - m][2]) / (2.0 * h),
            ];
            let gp = [d(k, 1, &|q| q.p), d(k, m, &|q| q.p)];
            for c in 0..2 {
                let gv = [d(k, 1, &|q| q.v[c]), d(k, m, &|q| q.v[c])];
                r[3 + c] = lap(k, &|q| q.v[c]) - s.v[0] * gv[0] - s.v[1] * gv[1] - gp[c] - eps0 * div_t[c];
            }
            r[5] = d(k, 1, &|q| q.v[0]) + d(k, m, &|q| q.v[1]);
            out[k] = r;
        }
    }
    out
}

/// `sup |R_h[reflected fields] - reflection of R_h[fields]|` on `grid`.
///
/// The reflection of a grid function reads the mirror row, interpolated
/// linearly in `x2` when the grid is not mirror symmetric. On a symmetric
/// grid (`offset = 0`) the central stencils make the two agree to rounding
/// for any fields; otherwise the deviation is the `O(h^2)` interpolation
/// error.
pub fn residual_commutes_with_reflection<F>(grid: OffsetGrid, eps0: f64, fields: F) -> f64
where
    F: Fn([f64; 2]) -> FieldSample + Sync,
{
    let m = grid.n + 1;
    let direct = discrete_residual(grid, eps0, &fields);
    let reflected = discrete_residual(grid, eps0, |x: [f64; 2]| reflect_sample(fields([x[0], -x[1]])));
    // x2 of row j maps to row position n - j - 2 offset
    let shift = 2.0 * grid.offset;
    let mut worst: f64 = 0.0;
    for j in 2..m - 2 {
        let pos = (grid.n - j) as f64 - shift;
        let lo = pos.floor();
        let w = pos - lo;
        let lo = lo as isize;
        let hi = if w > 0.0 { lo + 1 } else { lo };
        if lo < 2 || hi > (m - 3) as isize {
            continue;
        }
        let (lo, hi) = (lo as usize, hi as usize);
        for i in 2..m - 2 {
            let a = &direct[lo * m + i];
            let b = &direct[hi * m + i];
            let r = &reflected[j * m + i];
            for c in 0..6 {
                let mirror = RESIDUAL_PARITY[c] * ((1.0 - w) * a[c] + w * b[c]);
                worst = worst.max((r[c] - mirror).abs());
            }
        }
    }
    worst
}

/// Observed convergence order of the deviation over a refinement sequence:
/// least-squares slope of `log deviation` against `log h`.
pub fn commutation_order<F>(ns: &[usize], l: f64, offset: f64, eps0: f64, fields: F) -> Result<(Vec<f64>, f64)>
where
    F: Fn([f64; 2]) -> FieldSample + Sync,
{
    if ns.len() < 2 {
        return Err(Error::InvalidArgument("need at least two grids".into()));
    }
    let devs: Vec<f64> = ns
        .iter()
        .map(|&n| residual_commutes_with_reflection(OffsetGrid { n, l, offset }, eps0, &fields))
        .collect();
    let xs: Vec<f64> = ns.iter().map(|&n| (2.0 * l / n as f64).ln()).collect();
    let ys: Vec<f64> = devs.iter().map(|d| d.ln()).collect();
    Ok((devs, slope(&xs, &ys)))
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Boundary bubble plus an interior bubble (and optionally its mirror
/// image), all in the `Q_omega W1` closed form, with modulation rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairConfig {
    /// Boundary bubble; `None` studies the interior pair alone.
    pub boundary: Option<BubbleSpec>,
    pub interior: BubbleSpec,
    pub with_reflection: bool,
    pub lambda_dot: f64,
    pub omega_dot: f64,
    /// Rate of the interior center; its mirror image moves with the
    /// reflected rate.
    pub xi_dot: [f64; 2],
}

impl PairConfig {
    /// The configuration of the boundary check: `lambda = 0.1`,
    /// `xi = (0.2, 0.3)`, `omega = 0.4`, a boundary bubble at the origin and
    /// a shrinking, drifting interior bubble.
    pub fn standard(with_reflection: bool) -> Self {
        PairConfig {
            boundary: Some(BubbleSpec::boundary(0.1, 0.0)),
            interior: BubbleSpec::interior(0.1, 0.4, [0.2, 0.3]),
            with_reflection,
            lambda_dot: -0.5,
            omega_dot: 0.3,
            xi_dot: [0.2, -0.1],
        }
    }
}

/// One `M W2((x - c) / lambda)` term with analytic derivatives.
struct Term {
    prof: Profile,
    /// Rates of `(lambda, c1, c2)` and of the rotation angle.
    lambda_dot: f64,
    c_dot: [f64; 2],
    omega_dot: f64,
}

impl Term {
    /// Value, Jacobian, Laplacian and time derivative at `x`.
    fn eval(&self, x: [f64; 2]) -> (Vec3, [Vec3; 2], Vec3, Vec3) {
        let p = &self.prof;
        let y = p.local(x);
        let val = mat_vec(&p.m, w2(y));
        let jac = p.jacobian(x);
        // each term is a harmonic map: Lap U = -|grad U|^2 U
        let lap = scale(-p.grad_sq(x), val);
        // d/dt W2((x - c)/lambda) = -grad_y W2 . (c_dot + y lambda_dot) / lambda
        let j = w2_jacobian(y);
        let vel = [self.c_dot[0] + y[0] * self.lambda_dot, self.c_dot[1] + y[1] * self.lambda_dot];
        let dw = axpy(scale(-vel[0] / p.lambda, j[0]), -vel[1] / p.lambda, j[1]);
        let mut dt = mat_vec(&p.m, dw);
        // d/dt Q_omega = omega_dot G Q_omega, G the generator of rotations about e3
        let g = [-val[1], val[0], 0.0];
        dt = axpy(dt, self.omega_dot, g);
        (val, jac, lap, dt)
    }
}

/// `W1`-form profile `Q_omega Q_* W2` centred at `c`.
fn w1_profile(omega: f64, lambda: f64, c: [f64; 2]) -> Profile {
    Profile {
        m: vec3::mat_mul(&vec3::q_omega(omega), &Q_STAR),
        center: c,
        lambda,
    }
}

fn pair_terms(cfg: &PairConfig) -> Vec<Term> {
    let b = cfg.interior;
    let mut terms = vec![Term {
        prof: w1_profile(b.omega, b.lambda, b.xi),
        lambda_dot: cfg.lambda_dot,
        c_dot: cfg.xi_dot,
        omega_dot: cfg.omega_dot,
    }];
    if cfg.with_reflection {
        terms.push(Term {
            prof: w1_profile(b.omega, b.lambda, [b.xi[0], -b.xi[1]]),
            lambda_dot: cfg.lambda_dot,
            c_dot: [cfg.xi_dot[0], -cfg.xi_dot[1]],
            omega_dot: cfg.omega_dot,
        });
    }
    if let Some(bd) = cfg.boundary {
        terms.push(Term {
            prof: w1_profile(0.0, bd.lambda, bd.xi),
            lambda_dot: 0.0,
            c_dot: [0.0; 2],
            omega_dot: 0.0,
        });
    }
    terms
}

/// `S(u) = -d_t u + Lap u + |grad u|^2 u` for the sum of the terms.
fn error_operator(terms: &[Term], x: [f64; 2]) -> Vec3 {
    let mut u = [0.0; 3];
    let mut g = [[0.0; 3]; 2];
    let mut lap = [0.0; 3];
    let mut dt = [0.0; 3];
    for t in terms {
        let (v, j, l, d) = t.eval(x);
        u = vec3::add(u, v);
        g[0] = vec3::add(g[0], j[0]);
        g[1] = vec3::add(g[1], j[1]);
        lap = vec3::add(lap, l);
        dt = vec3::add(dt, d);
    }
    let gsq = dot(g[0], g[0]) + dot(g[1], g[1]);
    axpy(sub(lap, dt), gsq, u)
}

/// `Q_omega E2` of the boundary frame at a point of `x2 = 0`.
fn boundary_e2(omega: f64, xi1: f64, x: [f64; 2]) -> Option<Vec3> {
    let dx = x[0] - xi1;
    let r = dx.hypot(x[1]);
    if r == 0.0 {
        return None;
    }
    let e2 = [-x[1] / r, 0.0, dx / r];
    Some(mat_vec(&vec3::q_omega(omega), e2))
}

/// `sup |S(pair) . Q_omega E2|` over the boundary points `x1`, evaluated
/// from the closed-form bubbles.
pub fn boundary_e2_projection(cfg: &PairConfig, x1: &[f64]) -> f64 {
    let terms = pair_terms(cfg);
    let xi1 = cfg.boundary.map_or(cfg.interior.xi[0], |b| b.xi[0]);
    x1.par_iter()
        .map(|&s| {
            let x = [s, 0.0];
            boundary_e2(cfg.interior.omega, xi1, x).map_or(0.0, |e| dot(error_operator(&terms, x), e).abs())
        })
        .reduce(|| 0.0, f64::max)
}

/// Evenly spaced boundary sample points on `[a, b]`.
pub fn boundary_samples(a: f64, b: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| a + (b - a) * (k as f64 + 0.5) / count as f64).collect()
}

/// `sup |(v . grad u) . E2| on x2 = 0` for the boundary bubble at `xi1`.
/// Derivatives across the boundary are one-sided (second order) so that a
/// state violating the boundary conditions is measured, not masked.
pub fn transported_term_boundary_check(state: &HalfSpaceState, xi1: f64) -> f64 {
    let g = state.grid;
    let h = g.h();
    let mut worst: f64 = 0.0;
    for i in 1..g.n {
        let x = state.point(i, 0);
        let Some(e2) = boundary_e2(0.0, xi1, x) else { continue };
        let v = state.v_at(i, 0);
        if v == [0.0, 0.0] {
            continue;
        }
        let d1 = scale(0.5 / h, sub(state.u_at(i + 1, 0), state.u_at(i - 1, 0)));
        let (u0, u1, u2) = (state.u_at(i, 0), state.u_at(i, 1), state.u_at(i, 2));
        let mut d2 = [0.0; 3];
        for c in 0..3 {
            d2[c] = (-3.0 * u0[c] + 4.0 * u1[c] - u2[c]) / (2.0 * h);
        }
        let transport = axpy(scale(v[0], d1), v[1], d2);
        worst = worst.max(dot(transport, e2).abs());
    }
    worst
}

/// Parity defect of a boundary inner field given by its Fourier modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeParityReport {
    /// `sup |phi(y*) - S phi(y)|`, `S = diag(1, 1, -1)`.
    pub defect: f64,
    /// `sup_k sup |phi_{k,2}|`.
    pub second_component: f64,
    /// Mode with the largest contribution to the defect.
    pub worst_mode: Option<i32>,
}

/// Rebuilds `phi = sum_k Re(e^{ik theta} phi_k) E1 + Im(e^{ik theta} phi_k) E2`
/// in the frame of the unit boundary bubble at the mesh radii and
/// `ntheta` angles in `(0, pi)`, and measures its reflection defect.
pub fn mode_expansion_symmetry_check(modes: &[ModeFunction], ntheta: usize) -> Result<ModeParityReport> {
    if ntheta == 0 {
        return Err(Error::InvalidArgument("need at least one angle".into()));
    }
    let prof = BubbleSpec::boundary(1.0, 0.0).profile();
    let angles: Vec<f64> = (0..ntheta)
        .map(|j| std::f64::consts::PI * (j as f64 + 0.5) / ntheta as f64)
        .collect();
    let mut defect: f64 = 0.0;
    let mut worst_mode = None;
    let mut worst_part: f64 = 0.0;
    for mode in modes {
        let mut part: f64 = 0.0;
        for (&rho, &c) in mode.rho_mesh.iter().zip(&mode.values) {
            if rho == 0.0 {
                continue;
            }
            for &th in &angles {
                let eval = |theta: f64| -> Result<Vec3> {
                    let x = [rho * theta.cos(), rho * theta.sin()];
                    let f = prof.frame(x)?;
                    let z = num_complex::Complex64::from_polar(1.0, mode.k as f64 * theta) * c;
                    Ok(axpy(scale(z.re, f[0]), z.im, f[1]))
                };
                let up = eval(th)?;
                let down = eval(-th)?;
                let mirrored = [up[0], up[1], -up[2]];
                part = part.max(vec3::norm(sub(down, mirrored)));
            }
        }
        if part > worst_part {
            worst_part = part;
            worst_mode = Some(mode.k);
        }
        defect = defect.max(part);
    }
    // modes add linearly; a per-mode sup is a lower bound, so also check the sum
    let total = summed_defect(modes, &prof, &angles)?;
    let second_component = modes
        .iter()
        .flat_map(|m| m.values.iter().map(|c| c.im.abs()))
        .fold(0.0, f64::max);
    Ok(ModeParityReport {
        defect: defect.max(total),
        second_component,
        worst_mode,
    })
}

fn summed_defect(modes: &[ModeFunction], prof: &Profile, angles: &[f64]) -> Result<f64> {
    let Some(first) = modes.first() else { return Ok(0.0) };
    if modes.iter().any(|m| m.rho_mesh != first.rho_mesh) {
        // modes on different meshes are only checked one by one
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for (r, &rho) in first.rho_mesh.iter().enumerate() {
        if rho == 0.0 {
            continue;
        }
        for &th in angles {
            let eval = |theta: f64| -> Result<Vec3> {
                let x = [rho * theta.cos(), rho * theta.sin()];
                let f = prof.frame(x)?;
                let mut out = [0.0; 3];
                for m in modes {
                    let z = num_complex::Complex64::from_polar(1.0, m.k as f64 * theta) * m.values[r];
                    out = axpy(axpy(out, z.re, f[0]), z.im, f[1]);
                }
                Ok(out)
            };
            let up = eval(th)?;
            let down = eval(-th)?;
            worst = worst.max(vec3::norm(sub(down, [up[0], up[1], -up[2]])));
        }
    }
    Ok(worst)
}

/// The chain behind the Neumann condition of the pressure, measured on the
/// boundary row of a state with one-sided differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannChain {
    /// `sup |d22 v2|`, which vanishes by incompressibility and
    /// `d2 v1 = 0` on the boundary (`d22 v2 = -d1 d2 v1`).
    pub d22_v2: f64,
    /// `sup |d2 u_k d22 u_k + d11 u_k d2 u_k|`.
    pub director_term: f64,
    /// `sup |d2 P|`.
    pub d2_p: f64,
}

pub fn pressure_neumann_chain(state: &HalfSpaceState) -> NeumannChain {
    let g = state.grid;
    let h = g.h();
    let n = g.n;
    let one_sided_d1 = |f: &dyn Fn(usize) -> f64| (-3.0 * f(0) + 4.0 * f(1) - f(2)) / (2.0 * h);
    let one_sided_d2 = |f: &dyn Fn(usize) -> f64| (2.0 * f(0) - 5.0 * f(1) + 4.0 * f(2) - f(3)) / (h * h);
    let mut out = NeumannChain {
        d22_v2: 0.0,
        director_term: 0.0,
        d2_p: 0.0,
    };
    for i in 1..n - 1 {
        let v2 = |j: usize| state.v[j * n + i][1];
        let p = |j: usize| state.p[j * n + i];
        out.d22_v2 = out.d22_v2.max(one_sided_d2(&v2).abs());
        out.d2_p = out.d2_p.max(one_sided_d1(&p).abs());
        let mut term = 0.0;
        for c in 0..3 {
            let uc = |j: usize| state.u_at(i, j)[c];
            let d11 = (state.u_at(i + 1, 0)[c] - 2.0 * state.u_at(i, 0)[c] + state.u_at(i - 1, 0)[c]) / (h * h);
            let d2 = one_sided_d1(&uc);
            term += d2 * one_sided_d2(&uc) + d11 * d2;
        }
        out.director_term = out.director_term.max(term.abs());
    }
    out
}

