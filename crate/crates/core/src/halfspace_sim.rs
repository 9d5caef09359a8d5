//! Coupled director/fluid solver on a truncated half space.
//!
//! The state lives on the half box `[-l, l] x [0, l]`. Every step extends it
//! to the doubled square by the reflection rules (`u1, u2, v1, P` even,
//! `u3, v2` odd in `x2`), advances there and restricts back, so the
//! boundary conditions hold by parity. The director uses the vertex nodes
//! `x = -l + i h`, `i = 0..=n`, with a frozen outer ring of width `ring`;
//! the fluid uses the periodic `n x n` nodes of the same lattice.
//!
//! The coupling terms are discretized so that the discrete energy identity
//! is exact in space: the director moves by `P_u(Lap_h u - v . D u)` and the
//! fluid is forced by `-eps0 (P_u Lap_h u) . D_i u`, which is the divergence
//! of `grad u (.) grad u - |grad u|^2 / 2` up to a gradient and `O(h^2)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::correction::{phi0_eval, RealRate, TimeWindow};
use crate::error::{Error, Result};
use crate::modulation::{lambda_star, matched_kappa, LambdaStarVariant};
use crate::profiles::{geometric_mesh, w2, Ansatz, AnsatzConfig, BubbleKind, BubbleSpec, Profile};
use crate::spectral::Spectral2;
use crate::vec3::{self, axpy, dot, mat_vec, scale, sub, Vec3, Q_STAR};

/// Largest boundary value of `u3` or `v2` accepted by [`extend_reflect`].
pub const PARITY_TOL: f64 = 1e-8;

/// Lattice shared by the director and the fluid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    /// Number of cells across the doubled square (even).
    pub n: usize,
    pub l: f64,
}

impl SimGrid {
    pub fn new(n: usize, l: f64) -> Result<Self> {
        if n < 16 || n % 2 != 0 {
            return Err(Error::InvalidArgument(format!("grid size {n} must be even and at least 16")));
        }
        if !(l > 0.0) {
            return Err(Error::InvalidArgument("box half-width must be positive".into()));
        }
        Ok(SimGrid { n, l })
    }

    /// Grid for spacing `h` on `[-l, l]`.
    pub fn with_spacing(h: f64, l: f64) -> Result<Self> {
        let n = (2.0 * l / h).round() as usize;
        if ((2.0 * l / n as f64) - h).abs() > 1e-12 * h {
            return Err(Error::InvalidArgument(format!("spacing {h} does not divide the box width {}", 2.0 * l)));
        }
        SimGrid::new(n, l)
    }

    pub fn h(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.h()
    }

    /// Rows of the half box, `x2 = j h` for `j = 0..=n/2`.
    pub fn half_rows(&self) -> usize {
        self.n / 2 + 1
    }

    /// Director node count per row of the doubled grid.
    fn m(&self) -> usize {
        self.n + 1
    }
}

/// Sign of each director component under the reflection.
const U_PARITY: [f64; 3] = [1.0, 1.0, -1.0];

/// Simulation state on the half box.
#[derive(Debug, Clone)]
pub struct HalfSpaceState {
    pub grid: SimGrid,
    /// Director, `(n + 1) x (n/2 + 1)`, index `j (n + 1) + i`.
    pub u: Vec<Vec3>,
    /// Velocity, `n x (n/2 + 1)` (the `x1 = l` column is the periodic copy
    /// of `x1 = -l`), index `j n + i`.
    pub v: Vec<[f64; 2]>,
    /// Pressure on the velocity nodes, zero mean over the doubled square.
    pub p: Vec<f64>,
    pub t: f64,
    pub eps0: f64,
    /// Width in nodes of the frozen director ring.
    pub ring: usize,
    /// Largest reflection defect of the doubled fields seen by any step.
    pub parity_defect: f64,
}

impl HalfSpaceState {
    /// Director given pointwise on the half box (normalized), fluid at rest.
    pub fn from_director<F: Fn([f64; 2]) -> Vec3>(grid: SimGrid, ring: usize, eps0: f64, f: F) -> Result<Self> {
        if ring < 2 || 4 * ring >= grid.n {
            return Err(Error::InvalidArgument(format!("ring width {ring} does not fit the grid")));
        }
        let m = grid.m();
        let rows = grid.half_rows();
        let mut u = Vec::with_capacity(m * rows);
        for j in 0..rows {
            for i in 0..m {
                let x = [grid.coord(i), j as f64 * grid.h()];
                let mut val = f(x);
                if j == 0 {
                    // odd in x2, zero on the boundary
                    val[2] = 0.0;
                }
                let d = crate::profiles::Direction3::normalize(val)
                    .ok_or_else(|| Error::InvalidArgument(format!("director vanishes at {x:?}")))?;
                u.push(d.components());
            }
        }
        let nv = grid.n * rows;
        Ok(HalfSpaceState {
            grid,
            u,
            v: vec![[0.0; 2]; nv],
            p: vec![0.0; nv],
            t: 0.0,
            eps0,
            ring,
            parity_defect: 0.0,
        })
    }

    pub fn u_at(&self, i: usize, j: usize) -> Vec3 {
        self.u[j * self.grid.m() + i]
    }

    pub fn v_at(&self, i: usize, j: usize) -> [f64; 2] {
        self.v[j * self.grid.n + i]
    }

    /// Node coordinates of half-box director node `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.grid.coord(i), j as f64 * self.grid.h()]
    }

    /// Largest `||u| - 1|` over the director nodes.
    pub fn unit_defect(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, u| m.max((vec3::norm(*u) - 1.0).abs()))
    }
}

/// Fields on the doubled square.
#[derive(Debug, Clone)]
pub struct FullFields {
    pub grid: SimGrid,
    /// `(n + 1)^2` director values, index `J (n + 1) + i`, `x2 = -l + J h`.
    pub u: Vec<Vec3>,
    /// Periodic `n x n` velocity and pressure, index `J n + i`.
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub p: Vec<f64>,
}

/// Half-box row and sign for doubled row `big_j` (period `n` or `n + 1`
/// rows, `x2 = -l + big_j h`).
fn half_row(n: usize, big_j: usize) -> (usize, bool) {
    let mid = n / 2;
    if big_j >= mid {
        (big_j - mid, false)
    } else {
        (mid - big_j, true)
    }
}

/// Boundary parity defect of the stored half state: `|u3|` and `|v2|` on
/// `x2 = 0` and `|v2|` on the self-mirrored row `x2 = l`.
pub fn boundary_parity_defect(state: &HalfSpaceState) -> f64 {
    let g = state.grid;
    let m = g.m();
    let top = g.n / 2;
    let mut d: f64 = 0.0;
    for i in 0..m {
        d = d.max(state.u[i][2].abs());
    }
    for i in 0..g.n {
        d = d.max(state.v[i][1].abs()).max(state.v[top * g.n + i][1].abs());
    }
    d
}

/// Extends the half state to the doubled square.
pub fn extend_reflect(state: &HalfSpaceState) -> Result<FullFields> {
    let defect = boundary_parity_defect(state);
    if defect > PARITY_TOL {
        return Err(Error::ParityViolation { defect });
    }
    let g = state.grid;
    let (n, m) = (g.n, g.m());
    let mut u = vec![[0.0; 3]; m * m];
    for big_j in 0..m {
        let (j, flip) = half_row(n, big_j);
        for i in 0..m {
            let mut val = state.u[j * m + i];
            if flip {
                val[2] = -val[2];
            }
            u[big_j * m + i] = val;
        }
    }
    let mut v1 = vec![0.0; n * n];
    let mut v2 = vec![0.0; n * n];
    let mut p = vec![0.0; n * n];
    for big_j in 0..n {
        let (j, flip) = half_row(n, big_j);
        for i in 0..n {
            let k = j * n + i;
            let o = big_j * n + i;
            v1[o] = state.v[k][0];
            // row 0 is the self-mirrored row x2 = -l = l, stored as is
            v2[o] = if flip && big_j != 0 { -state.v[k][1] } else { state.v[k][1] };
            p[o] = state.p[k];
        }
    }
    Ok(FullFields { grid: g, u, v1, v2, p })
}

impl FullFields {
    /// Largest deviation from the reflection symmetry over all fields.
    pub fn parity_defect(&self) -> f64 {
        let (n, m) = (self.grid.n, self.grid.m());
        let mut d: f64 = 0.0;
        for big_j in 0..m {
            let mirror = n - big_j;
            for i in 0..m {
                let a = self.u[big_j * m + i];
                let b = self.u[mirror * m + i];
                for c in 0..3 {
                    d = d.max((a[c] - U_PARITY[c] * b[c]).abs());
                }
            }
        }
        for big_j in 0..n {
            let mirror = (n - big_j) % n;
            for i in 0..n {
                let (o, r) = (big_j * n + i, mirror * n + i);
                d = d
                    .max((self.v1[o] - self.v1[r]).abs())
                    .max((self.v2[o] + self.v2[r]).abs())
                    .max((self.p[o] - self.p[r]).abs());
            }
        }
        d
    }

    /// Restriction to the half box; the inverse of [`extend_reflect`] on
    /// symmetric fields.
    pub fn restrict_into(&self, state: &mut HalfSpaceState) {
        let (n, m) = (self.grid.n, self.grid.m());
        let mid = n / 2;
        for j in 0..self.grid.half_rows() {
            let src = (mid + j) * m;
            state.u[j * m..(j + 1) * m].copy_from_slice(&self.u[src..src + m]);
        }
        for j in 0..self.grid.half_rows() {
            let big_j = (mid + j) % n;
            for i in 0..n {
                let o = big_j * n + i;
                state.v[j * n + i] = [self.v1[o], self.v2[o]];
                state.p[j * n + i] = self.p[o];
            }
        }
    }
}

/// Director nodes that move (outside the frozen ring).
fn free_range(g: SimGrid, ring: usize) -> std::ops::Range<usize> {
    ring..g.n + 1 - ring
}

/// Central first differences of the director at a doubled-grid node.
#[inline]
fn central_grad(u: &[Vec3], m: usize, i: usize, big_j: usize, h: f64) -> [Vec3; 2] {
    let k = big_j * m + i;
    let s = 0.5 / h;
    [scale(s, sub(u[k + 1], u[k - 1])), scale(s, sub(u[k + m], u[k - m]))]
}

/// Five-point Laplacian, summed symmetrically so that mirrored nodes give
/// mirrored results bit for bit.
#[inline]
fn laplacian(u: &[Vec3], m: usize, i: usize, big_j: usize, h: f64) -> Vec3 {
    let k = big_j * m + i;
    let s = 1.0 / (h * h);
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = s * (((u[k + 1][c] + u[k - 1][c]) + (u[k + m][c] + u[k - m][c])) - 4.0 * u[k][c]);
    }
    out
}

/// `w - (u . w) u / |u|^2`.
#[inline]
fn project(u: Vec3, w: Vec3) -> Vec3 {
    axpy(w, -dot(u, w) / dot(u, u), u)
}

/// Tension `P_u Lap_h u` at every free node (zero elsewhere).
fn tension(u: &[Vec3], g: SimGrid, ring: usize) -> Vec<Vec3> {
    let m = g.m();
    let h = g.h();
    let free = free_range(g, ring);
    let mut out = vec![[0.0; 3]; m * m];
    out.par_chunks_mut(m).enumerate().for_each(|(big_j, row)| {
        if !free.contains(&big_j) {
            return;
        }
        for i in free.clone() {
            let k = big_j * m + i;
            row[i] = project(u[k], laplacian(u, m, i, big_j, h));
        }
    });
    out
}

/// Right-hand side `P_u(Lap_h u - v . D u)` of the director equation.
fn director_rhs(u: &[Vec3], v: Option<(&[f64], &[f64])>, g: SimGrid, ring: usize) -> Vec<Vec3> {
    let (n, m) = (g.n, g.m());
    let h = g.h();
    let free = free_range(g, ring);
    let mut out = vec![[0.0; 3]; m * m];
    out.par_chunks_mut(m).enumerate().for_each(|(big_j, row)| {
        if !free.contains(&big_j) {
            return;
        }
        for i in free.clone() {
            let k = big_j * m + i;
            let mut w = laplacian(u, m, i, big_j, h);
            if let Some((v1, v2)) = v {
                let vk = big_j * n + i;
                let d = central_grad(u, m, i, big_j, h);
                w = axpy(axpy(w, -v1[vk], d[0]), -v2[vk], d[1]);
            }
            row[i] = project(u[k], w);
        }
    });
    out
}

/// Largest central-difference `|grad u|` over the free nodes.
pub fn max_gradient(full: &FullFields, ring: usize) -> f64 {
    let g = full.grid;
    let m = g.m();
    let h = g.h();
    let free = free_range(g, ring);
    let mut best: f64 = 0.0;
    for big_j in free.clone() {
        for i in free.clone() {
            let d = central_grad(&full.u, m, i, big_j, h);
            best = best.max((dot(d[0], d[0]) + dot(d[1], d[1])).sqrt());
        }
    }
    best
}

/// Heun step of the director on the doubled grid, renormalized last.
fn advance_director(full: &mut FullFields, v: Option<(&[f64], &[f64])>, ring: usize, dt: f64) {
    let g = full.grid;
    let free = free_range(g, ring);
    let m = g.m();
    let k1 = director_rhs(&full.u, v, g, ring);
    let mid: Vec<Vec3> = full.u.iter().zip(&k1).map(|(u, k)| axpy(*u, dt, *k)).collect();
    let k2 = director_rhs(&mid, v, g, ring);
    for big_j in free.clone() {
        for i in free.clone() {
            let k = big_j * m + i;
            let next = axpy(full.u[k], 0.5 * dt, vec3::add(k1[k], k2[k]));
            full.u[k] = scale(1.0 / vec3::norm(next), next);
        }
    }
}

fn cfl_check(g: SimGrid, dt: f64) -> Result<()> {
    let limit = g.h() * g.h() / 4.0;
    if !(dt > 0.0) || dt > limit {
        return Err(Error::CflViolation { dt, limit });
    }
    Ok(())
}

fn blowup_check(full: &FullFields, ring: usize, t: f64) -> Result<()> {
    let grad_max = max_gradient(full, ring);
    if grad_max > 0.5 / full.grid.h() {
        return Err(Error::BlowupDetected { t, grad_max });
    }
    Ok(())
}

/// One explicit step of the transported map flow with the current velocity.
///
/// On `BlowupDetected` the state has already been advanced; the error only
/// reports that the grid no longer resolves the concentration.
pub fn hmhf_step(state: &mut HalfSpaceState, dt: f64) -> Result<()> {
    cfl_check(state.grid, dt)?;
    let mut full = extend_reflect(state)?;
    let (v1, v2) = (full.v1.clone(), full.v2.clone());
    let moving = v1.iter().chain(&v2).any(|x| *x != 0.0);
    advance_director(&mut full, moving.then_some((&v1[..], &v2[..])), state.ring, dt);
    state.parity_defect = state.parity_defect.max(full.parity_defect());
    full.restrict_into(state);
    state.t += dt;
    blowup_check(&full, state.ring, state.t)
}

/// Fluid forcing `-eps0 (P_u Lap_h u) . D_i u` on the periodic nodes.
fn fluid_forcing(u: &[Vec3], g: SimGrid, ring: usize, eps0: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (g.n, g.m());
    let h = g.h();
    let tau = tension(u, g, ring);
    let mut f1 = vec![0.0; n * n];
    let mut f2 = vec![0.0; n * n];
    let free = free_range(g, ring);
    for big_j in free.clone() {
        for i in free.clone() {
            let k = big_j * m + i;
            let d = central_grad(u, m, i, big_j, h);
            f1[big_j * n + i] = -eps0 * dot(tau[k], d[0]);
            f2[big_j * n + i] = -eps0 * dot(tau[k], d[1]);
        }
    }
    (f1, f2)
}

/// `(e^z - 1) / z`.
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        z.exp_m1() / z
    }
}

fn drop_nyquist(f: &mut [Complex64], n: usize) {
    let zero = Complex64::new(0.0, 0.0);
    for k in 0..n {
        f[(n / 2) * n + k] = zero;
        f[k * n + n / 2] = zero;
    }
}

/// Exponential step of the fluid driven by `f` and advection, with
/// spectral Leray projection; the pressure is the gradient part removed.
fn advance_fluid(full: &mut FullFields, sp: &Spectral2, f: (Vec<f64>, Vec<f64>), dt: f64) -> Result<()> {
    let n = sp.n;
    let h = full.grid.h();
    let vmax = full
        .v1
        .iter()
        .zip(&full.v2)
        .fold(0.0f64, |a, (x, y)| a.max(x.hypot(*y)));
    if dt * vmax > h {
        return Err(Error::CflViolation { dt, limit: h / vmax });
    }
    let (mut g1, mut g2) = f;
    let v1h = sp.forward(&full.v1);
    let v2h = sp.forward(&full.v2);
    if vmax > 0.0 {
        let d = |vh: &[Complex64], axis: usize| {
            let mut w = vh.to_vec();
            for j in 0..n {
                for i in 0..n {
                    let (k1, k2) = sp.wave(i, j);
                    let nyq = if axis == 0 { i == n / 2 } else { j == n / 2 };
                    let k = if nyq { 0.0 } else if axis == 0 { k1 } else { k2 };
                    w[j * n + i] *= Complex64::new(0.0, k);
                }
            }
            sp.inverse(w)
        };
        let (d11, d12, d21, d22) = (d(&v1h, 0), d(&v1h, 1), d(&v2h, 0), d(&v2h, 1));
        for k in 0..n * n {
            g1[k] -= full.v1[k] * d11[k] + full.v2[k] * d12[k];
            g2[k] -= full.v1[k] * d21[k] + full.v2[k] * d22[k];
        }
    }
    let mut g1h = sp.forward(&g1);
    let mut g2h = sp.forward(&g2);
    // The Nyquist modes are their own mirror images; Leray projection there
    // would feed the even v1 into the odd v2, so they are dropped.
    drop_nyquist(&mut g1h, n);
    drop_nyquist(&mut g2h, n);
    let mut ph = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..n {
        for i in 0..n {
            let (k1, k2) = sp.wave(i, j);
            let kk = k1 * k1 + k2 * k2;
            if kk > 0.0 {
                let m = j * n + i;
                ph[m] = -Complex64::i() * (g1h[m] * k1 + g2h[m] * k2) / kk;
            }
        }
    }
    sp.leray(&mut g1h, &mut g2h);
    let mut n1 = v1h;
    let mut n2 = v2h;
    for j in 0..n {
        for i in 0..n {
            let (k1, k2) = sp.wave(i, j);
            let z = -(k1 * k1 + k2 * k2) * dt;
            let (e, w) = (z.exp(), dt * phi1(z));
            let m = j * n + i;
            n1[m] = n1[m] * e + g1h[m] * w;
            n2[m] = n2[m] * e + g2h[m] * w;
        }
    }
    sp.leray(&mut n1, &mut n2);
    full.v1 = sp.inverse(n1);
    full.v2 = sp.inverse(n2);
    full.p = sp.inverse(ph);
    Ok(())
}

/// One fluid step forced by the current director.
pub fn ns_step(state: &mut HalfSpaceState, dt: f64) -> Result<()> {
    cfl_check(state.grid, dt)?;
    let mut full = extend_reflect(state)?;
    let sp = Spectral2::new(state.grid.n, state.grid.l);
    let f = fluid_forcing(&full.u, state.grid, state.ring, state.eps0);
    advance_fluid(&mut full, &sp, f, dt)?;
    state.parity_defect = state.parity_defect.max(full.parity_defect());
    full.restrict_into(state);
    state.t += dt;
    Ok(())
}

/// Reusable stepper holding the FFT plans.
pub struct Stepper {
    sp: Spectral2,
}

impl Stepper {
    pub fn new(grid: SimGrid) -> Self {
        Stepper {
            sp: Spectral2::new(grid.n, grid.l),
        }
    }

    /// Coupled step: both sub-steps read the fields at the old time level.
    pub fn step(&self, state: &mut HalfSpaceState, dt: f64) -> Result<()> {
        cfl_check(state.grid, dt)?;
        let mut full = extend_reflect(state)?;
        let f = fluid_forcing(&full.u, state.grid, state.ring, state.eps0);
        let (v1, v2) = (full.v1.clone(), full.v2.clone());
        let moving = v1.iter().chain(&v2).any(|x| *x != 0.0);
        advance_director(&mut full, moving.then_some((&v1[..], &v2[..])), state.ring, dt);
        advance_fluid(&mut full, &self.sp, f, dt)?;
        state.parity_defect = state.parity_defect.max(full.parity_defect());
        full.restrict_into(state);
        state.t += dt;
        blowup_check(&full, state.ring, state.t)
    }
}

/// Energy terms of one state, all over the half space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySnapshot {
    /// `1/2 int |v|^2`.
    pub kinetic: f64,
    /// `1/2 int |grad u|^2` (edge form, the exact discrete energy).
    pub dirichlet: f64,
    /// `int |Lap u + |grad u|^2 u|^2`, with the tension `P_u Lap_h u`.
    pub tension_sq: f64,
    /// `int |grad v|^2`.
    pub viscous: f64,
}

impl EnergySnapshot {
    /// `1/2 int |v|^2 + eps0/2 int |grad u|^2`, the dissipated quantity.
    pub fn weighted_total(&self, eps0: f64) -> f64 {
        self.kinetic + eps0 * self.dirichlet
    }

    pub fn weighted_dissipation(&self, eps0: f64) -> f64 {
        self.viscous + eps0 * self.tension_sq
    }
}

pub fn energy_snapshot(state: &HalfSpaceState, sp: &Spectral2) -> Result<EnergySnapshot> {
    let full = extend_reflect(state)?;
    let g = state.grid;
    let (n, m) = (g.n, g.m());
    let h = g.h();
    let mut dir = 0.0;
    for big_j in 0..m {
        let mut row = 0.0;
        for i in 0..m {
            let k = big_j * m + i;
            if i + 1 < m {
                let d = sub(full.u[k + 1], full.u[k]);
                row += dot(d, d);
            }
            if big_j + 1 < m {
                let d = sub(full.u[k + m], full.u[k]);
                row += dot(d, d);
            }
        }
        dir += row;
    }
    let tau = tension(&full.u, g, state.ring);
    let ten: f64 = tau.iter().map(|t| dot(*t, *t)).sum::<f64>() * h * h;
    let kin: f64 = full.v1.iter().zip(&full.v2).map(|(a, b)| a * a + b * b).sum::<f64>() * h * h;
    let mut visc = 0.0;
    if full.v1.iter().chain(&full.v2).any(|x| *x != 0.0) {
        let a = sp.forward(&full.v1);
        let b = sp.forward(&full.v2);
        for j in 0..n {
            for i in 0..n {
                let (mut k1, mut k2) = sp.wave(i, j);
                if i == n / 2 {
                    k1 = 0.0;
                }
                if j == n / 2 {
                    k2 = 0.0;
                }
                let o = j * n + i;
                visc += (k1 * k1 + k2 * k2) * (a[o].norm_sqr() + b[o].norm_sqr());
            }
        }
        visc *= h * h / (n * n) as f64;
    }
    // the doubled square counts every half-space quantity twice
    Ok(EnergySnapshot {
        kinetic: 0.25 * kin,
        dirichlet: 0.25 * dir,
        tension_sq: 0.5 * ten,
        viscous: 0.5 * visc,
    })
}

/// Energy balance over one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub kinetic: f64,
    pub dirichlet: f64,
    pub tension_sq: f64,
    /// `d/dt (1/2 int |v|^2 + eps0/2 int |grad u|^2)` by differencing.
    pub rate: f64,
    /// `rate + int |grad v|^2 + eps0 int |tension|^2` (midpoint dissipation);
    /// the law that holds for the coupled system.
    pub residual: f64,
    /// The same with unit weight on the director terms; it coincides with
    /// `residual` only for `eps0 = 1`.
    pub residual_unweighted: f64,
}

/// Energy law residual between two consecutive states.
pub fn energy(prev: &EnergySnapshot, next: &EnergySnapshot, dt: f64, eps0: f64) -> EnergyReport {
    let rate = (next.weighted_total(eps0) - prev.weighted_total(eps0)) / dt;
    let diss = 0.5 * (prev.weighted_dissipation(eps0) + next.weighted_dissipation(eps0));
    let rate_u = (next.kinetic + next.dirichlet - prev.kinetic - prev.dirichlet) / dt;
    let diss_u = 0.5 * (prev.viscous + prev.tension_sq + next.viscous + next.tension_sq);
    EnergyReport {
        kinetic: next.kinetic,
        dirichlet: next.dirichlet,
        tension_sq: next.tension_sq,
        rate,
        residual: rate + diss,
        residual_unweighted: rate_u + diss_u,
    }
}

/// Fourth-order central gradient where the stencil fits, second order next
/// to the frozen ring.
fn diag_grad(u: &[Vec3], m: usize, i: usize, big_j: usize, h: f64) -> [Vec3; 2] {
    let k = big_j * m + i;
    if i >= 2 && i + 2 < m && big_j >= 2 && big_j + 2 < m {
        let s = 1.0 / (12.0 * h);
        let d = |step: usize| {
            let mut out = [0.0; 3];
            for c in 0..3 {
                out[c] = s * (8.0 * (u[k + step][c] - u[k - step][c]) - (u[k + 2 * step][c] - u[k - 2 * step][c]));
            }
            out
        };
        [d(1), d(m)]
    } else {
        central_grad(u, m, i, big_j, h)
    }
}

/// `int |grad u|^2` over the disc of `radius` around `center`, intersected
/// with the half space (a half disc when the center is on the boundary).
pub fn local_energy(state: &HalfSpaceState, center: [f64; 2], radius: f64) -> Result<f64> {
    let g = state.grid;
    let h = g.h();
    if radius < 4.0 * h {
        return Err(Error::InvalidArgument(format!("radius {radius} is below 4 h = {}", 4.0 * h)));
    }
    let full = extend_reflect(state)?;
    let m = g.m();
    let mid = g.n / 2;
    let mut total = 0.0;
    for big_j in mid..m - 1 {
        let x2 = (big_j - mid) as f64 * h;
        // trapezoid weight on the boundary row
        let w = if big_j == mid { 0.5 } else { 1.0 };
        for i in 1..m - 1 {
            let x1 = g.coord(i);
            if (x1 - center[0]).hypot(x2 - center[1]) > radius {
                continue;
            }
            let d = diag_grad(&full.u, m, i, big_j, h);
            total += w * (dot(d[0], d[0]) + dot(d[1], d[1]));
        }
    }
    Ok(total * h * h)
}

/// Least-squares bubble fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BubbleFit {
    /// Fitted modulation parameters; `kind` is `Boundary` when the peak
    /// sits on `x2 = 0`.
    pub spec: BubbleSpec,
    pub background: Background,
    /// Weighted RMS of `u - (M W2 + background)` over the fitting window.
    pub residual: f64,
    pub peak: [f64; 2],
}

impl BubbleFit {
    /// Profile used in the fit: `Q_*` on the boundary, `Q_omega Q_*` inside
    /// (the convention of the mixed ansatz).
    pub fn profile(&self) -> Profile {
        model_profile(&self.spec)
    }
}

fn model_profile(spec: &BubbleSpec) -> Profile {
    let m = match spec.kind {
        BubbleKind::Boundary => Q_STAR,
        _ => vec3::mat_mul(&vec3::q_omega(spec.omega), &Q_STAR),
    };
    Profile {
        m,
        center: spec.xi,
        lambda: spec.lambda,
    }
}

/// Fits a bubble near `near`, searching the director nodes within
/// `search_radius`. A peak within `2 h` of the boundary is fitted as a
/// boundary bubble.
pub fn fit_bubble(state: &HalfSpaceState, near: [f64; 2], search_radius: f64) -> Result<BubbleFit> {
    let g = state.grid;
    let h = g.h();
    let full = extend_reflect(state)?;
    let m = g.m();
    let mid = g.n / 2;
    let free = free_range(g, state.ring);
    let mut samples = Vec::new();
    for big_j in mid..m {
        if !free.contains(&big_j) {
            continue;
        }
        let x2 = (big_j - mid) as f64 * h;
        for i in free.clone() {
            let x1 = g.coord(i);
            if (x1 - near[0]).hypot(x2 - near[1]) <= search_radius {
                let d = diag_grad(&full.u, m, i, big_j, h);
                samples.push(((dot(d[0], d[0]) + dot(d[1], d[1])).sqrt(), [x1, x2]));
            }
        }
    }
    if samples.len() < 9 {
        return Err(Error::NoPeak);
    }
    let (gmax, peak) = samples.iter().fold((0.0, [0.0; 2]), |acc, s| if s.0 > acc.0 { *s } else { acc });
    let mut mags: Vec<f64> = samples.iter().map(|s| s.0).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let background = mags[mags.len() / 2];
    if gmax < 2.0 * background || gmax == 0.0 {
        return Err(Error::NoPeak);
    }
    let boundary = peak[1] <= 2.0 * h;
    let lambda0 = 8f64.sqrt() / gmax;
    // first pass: hard window around the gradient peak
    let pts = gather_points(&full, state.ring, peak, (3.0 * lambda0).max(4.0 * h), None);
    let spec0 = if boundary {
        BubbleSpec::boundary(lambda0, peak[0])
    } else {
        BubbleSpec::interior(lambda0, initial_omega(&pts, peak), peak)
    };
    let fit = gauss_newton(&pts, spec0, peak)?;
    let (spec, background, residual) = weighted_passes(&full, state.ring, fit, 3)?;
    Ok(BubbleFit {
        spec,
        background,
        residual,
        peak,
    })
}

/// Refits a bubble starting from a previous fit, keeping its kind. Used
/// along a run, where a fresh peak search could jump to the other bubble.
pub fn refit_bubble(state: &HalfSpaceState, previous: &BubbleSpec) -> Result<BubbleFit> {
    let full = extend_reflect(state)?;
    let width = (1.5 * previous.lambda).max(2.0 * state.grid.h());
    let pts = gather_points(&full, state.ring, previous.xi, 4.0 * width, Some(width));
    if pts.len() < 9 {
        return Err(Error::NoPeak);
    }
    let fit = gauss_newton(&pts, *previous, previous.xi)?;
    let (spec, background, residual) = weighted_passes(&full, state.ring, fit, 3)?;
    Ok(BubbleFit {
        spec,
        background,
        residual,
        peak: previous.xi,
    })
}

/// Half-space director nodes within `radius` of `center`, optionally with
/// Gaussian weights of the given width.
fn gather_points(full: &FullFields, ring: usize, center: [f64; 2], radius: f64, width: Option<f64>) -> Vec<FitPoint> {
    let g = full.grid;
    let h = g.h();
    let m = g.m();
    let mid = g.n / 2;
    let free = free_range(g, ring);
    let mut pts = Vec::new();
    for big_j in mid..m {
        if !free.contains(&big_j) {
            continue;
        }
        let x2 = (big_j - mid) as f64 * h;
        // boundary row: half of its mirror-symmetric cell lies in the half space
        let row_w = if big_j == mid { 0.5 } else { 1.0 };
        for i in free.clone() {
            let x1 = g.coord(i);
            let r = (x1 - center[0]).hypot(x2 - center[1]);
            if r <= radius {
                let w = width.map_or(1.0, |s| (-0.5 * (r / s).powi(2)).exp());
                pts.push(FitPoint {
                    x: [x1, x2],
                    u: full.u[big_j * m + i],
                    w: row_w * w,
                });
            }
        }
    }
    pts
}

/// Gaussian weights centred on the fitted bubble, iterated towards a fixed
/// point so the result depends continuously on the state.
fn weighted_passes(
    full: &FullFields,
    ring: usize,
    mut fit: (BubbleSpec, Background, f64),
    passes: usize,
) -> Result<(BubbleSpec, Background, f64)> {
    let h = full.grid.h();
    for _ in 0..passes {
        let spec = fit.0;
        let width = (1.5 * spec.lambda).max(2.0 * h);
        let pts = gather_points(full, ring, spec.xi, 4.0 * width, Some(width));
        if pts.len() < 9 {
            break;
        }
        fit = gauss_newton(&pts, spec, spec.xi)?;
    }
    Ok(fit)
}

/// A director sample with its least-squares weight.
#[derive(Debug, Clone, Copy)]
struct FitPoint {
    x: [f64; 2],
    u: Vec3,
    w: f64,
}

/// Rotation angle from the first two components near the peak, where
/// `Q_omega Q_* W2 ~ Q_omega (0, -1, 0)`.
fn initial_omega(pts: &[FitPoint], peak: [f64; 2]) -> f64 {
    let core = pts
        .iter()
        .min_by(|a, b| {
            let da = (a.x[0] - peak[0]).hypot(a.x[1] - peak[1]);
            let db = (b.x[0] - peak[0]).hypot(b.x[1] - peak[1]);
            da.partial_cmp(&db).unwrap()
        })
        .map(|p| p.u)
        .unwrap_or([0.0, -1.0, 0.0]);
    // Q_omega (0, -1) = (sin omega, -cos omega)
    core[0].atan2(-core[1])
}

fn spec_params(spec: &BubbleSpec) -> Vec<f64> {
    match spec.kind {
        BubbleKind::Boundary => vec![spec.lambda.ln(), spec.xi[0]],
        _ => vec![spec.lambda.ln(), spec.omega, spec.xi[0], spec.xi[1]],
    }
}

fn params_spec(kind: BubbleKind, p: &[f64]) -> BubbleSpec {
    match kind {
        BubbleKind::Boundary => BubbleSpec::boundary(p[0].exp(), p[1]),
        _ => BubbleSpec::interior(p[0].exp(), p[1], [p[2], p[3]]),
    }
}

/// Affine background absorbed by the fit (the other bubbles, the outer
/// field and the corrections, to first order around the peak).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Background {
    pub origin: [f64; 2],
    pub value: Vec3,
    /// `d/dx1` and `d/dx2` of the background.
    pub gradient: [Vec3; 2],
}

impl Background {
    pub fn at(&self, x: [f64; 2]) -> Vec3 {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        axpy(axpy(self.value, d[0], self.gradient[0]), d[1], self.gradient[1])
    }

    /// `d1 B1 + d2 B3`, the divergence entering the boundary sign condition.
    pub fn boundary_divergence(&self) -> f64 {
        self.gradient[0][0] + self.gradient[1][2]
    }
}

/// Weighted least-squares affine fit of `diffs` (variable projection).
fn affine_fit(pts: &[FitPoint], origin: [f64; 2], diffs: &[Vec3]) -> Background {
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut b = [nalgebra::Vector3::<f64>::zeros(); 3];
    for (p, d) in pts.iter().zip(diffs) {
        let basis = nalgebra::Vector3::new(1.0, p.x[0] - origin[0], p.x[1] - origin[1]);
        a += basis * basis.transpose() * p.w;
        for c in 0..3 {
            b[c] += basis * (d[c] * p.w);
        }
    }
    let inv = a.try_inverse().unwrap_or_else(nalgebra::Matrix3::zeros);
    let s: Vec<nalgebra::Vector3<f64>> = b.iter().map(|v| inv * v).collect();
    Background {
        origin,
        value: [s[0][0], s[1][0], s[2][0]],
        gradient: [[s[0][1], s[1][1], s[2][1]], [s[0][2], s[1][2], s[2][2]]],
    }
}

/// Levenberg-Marquardt on the nonlinear parameters with the affine
/// background eliminated at every evaluation.
fn gauss_newton(pts: &[FitPoint], spec0: BubbleSpec, origin: [f64; 2]) -> Result<(BubbleSpec, Background, f64)> {
    let kind = spec0.kind;
    let wsum: f64 = pts.iter().map(|p| p.w).sum();
    let resid = |p: &[f64]| -> (Vec<f64>, Background) {
        let prof = model_profile(&params_spec(kind, p));
        let diffs: Vec<Vec3> = pts.iter().map(|q| sub(q.u, prof.value(q.x))).collect();
        let bg = affine_fit(pts, origin, &diffs);
        let r = pts
            .iter()
            .zip(&diffs)
            .flat_map(|(q, d)| scale(q.w.sqrt(), sub(*d, bg.at(q.x))))
            .collect();
        (r, bg)
    };
    let mut p = spec_params(&spec0);
    let (mut r, mut bg) = resid(&p);
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    let mut mu = 1e-3;
    for _ in 0..200 {
        let np = p.len();
        let mut jac = DMatrix::zeros(r.len(), np);
        for a in 0..np {
            let step = 1e-7 * p[a].abs().max(1e-2);
            let mut q = p.clone();
            q[a] += step;
            let (rp, _) = resid(&q);
            q[a] = p[a] - step;
            let (rm, _) = resid(&q);
            for (row, (x, y)) in rp.iter().zip(&rm).enumerate() {
                jac[(row, a)] = (x - y) / (2.0 * step);
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..np {
                a[(d, d)] += mu * jtj[(d, d)].max(1e-300);
            }
            let Some(delta) = a.lu().solve(&(-&grad)) else {
                mu *= 10.0;
                continue;
            };
            let q: Vec<f64> = p.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
            let (rq, bq) = resid(&q);
            let cq: f64 = rq.iter().map(|x| x * x).sum();
            if cq < cost {
                let rel = (cost - cq) / cost.max(1e-300);
                p = q;
                r = rq;
                bg = bq;
                cost = cq;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-14 || delta.norm() < 1e-13 {
                    return Ok(finish(kind, &p, bg, cost, wsum));
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok(finish(kind, &p, bg, cost, wsum))
}

fn finish(kind: BubbleKind, p: &[f64], bg: Background, cost: f64, wsum: f64) -> (BubbleSpec, Background, f64) {
    let mut spec = params_spec(kind, p);
    spec.omega = (spec.omega + PI).rem_euclid(2.0 * PI) - PI;
    (spec, bg, (cost / (3.0 * wsum)).sqrt())
}

/// Forcing tensor `grad u (.) grad u - |grad u|^2 Id / 2` as `(T11, T12, T22)`.
pub type ForcingTensor = [f64; 3];

/// Linearized forcing of one Fourier mode around a bubble.
#[derive(Debug, Clone)]
pub struct ModeForcing {
    pub k: i32,
    /// `grad U (.) grad phi_k + grad phi_k (.) grad U - (grad U : grad phi_k) Id`
    /// on the doubled director grid (zero outside the window).
    pub tensor: Vec<ForcingTensor>,
    pub divergence: Vec<[f64; 2]>,
}

/// Output of [`forcing_assemble`] on the doubled director grid.
#[derive(Debug, Clone)]
pub struct ForcingAssembly {
    pub tensor: Vec<ForcingTensor>,
    /// Central-difference divergence of `tensor` (zero next to the ring).
    pub divergence: Vec<[f64; 2]>,
    /// Per bubble, modes `-kmax..=kmax`.
    pub modes: Vec<Vec<ModeForcing>>,
}

fn tensor_from(a: [Vec3; 2], b: [Vec3; 2]) -> ForcingTensor {
    // symmetric bilinear form: a (.) b + b (.) a - (a : b) Id, halved for a = b
    let t11 = dot(a[0], b[0]);
    let t22 = dot(a[1], b[1]);
    let t12 = 0.5 * (dot(a[0], b[1]) + dot(a[1], b[0]));
    let tr = 0.5 * (t11 + t22);
    [t11 - tr, t12, t22 - tr]
}

fn tensor_divergence(t: &[ForcingTensor], m: usize, lo: usize, hi: usize, h: f64) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0; 2]; m * m];
    let s = 0.5 / h;
    for big_j in lo + 1..hi - 1 {
        for i in lo + 1..hi - 1 {
            let k = big_j * m + i;
            let d1 = |c: usize| s * (t[k + 1][c] - t[k - 1][c]);
            let d2 = |c: usize| s * (t[k + m][c] - t[k - m][c]);
            out[k] = [d1(0) + d2(1), d1(1) + d2(2)];
        }
    }
    out
}

/// Assembles the forcing tensor of the director, its divergence, and the
/// linearized mode-`k` parts around each profile in `bubbles` (within
/// `window` of its center).
pub fn forcing_assemble(state: &HalfSpaceState, bubbles: &[Profile], kmax: usize, window: f64) -> Result<ForcingAssembly> {
    let g = state.grid;
    let h = g.h();
    let full = extend_reflect(state)?;
    let m = g.m();
    let free = free_range(g, state.ring);
    let mut tensor = vec![[0.0; 3]; m * m];
    for big_j in free.clone() {
        for i in free.clone() {
            let d = central_grad(&full.u, m, i, big_j, h);
            tensor[big_j * m + i] = tensor_from(d, d);
        }
    }
    let divergence = tensor_divergence(&tensor, m, free.start, free.end, h);
    let mut modes = Vec::new();
    for prof in bubbles {
        modes.push(mode_forcing(&full, state.ring, prof, kmax, window)?);
    }
    Ok(ForcingAssembly {
        tensor,
        divergence,
        modes,
    })
}

/// Bilinear interpolation of a node field on the doubled director grid.
fn bilinear<T: Copy>(f: &[T], g: SimGrid, x: [f64; 2], zero: T, add: impl Fn(T, f64, T) -> T) -> T {
    let m = g.m();
    let h = g.h();
    let s = (x[0] + g.l) / h;
    let r = (x[1] + g.l) / h;
    let i = (s.floor() as usize).min(m - 2);
    let j = (r.floor() as usize).min(m - 2);
    let (a, b) = (s - i as f64, r - j as f64);
    let mut out = zero;
    out = add(out, (1.0 - a) * (1.0 - b), f[j * m + i]);
    out = add(out, a * (1.0 - b), f[j * m + i + 1]);
    out = add(out, (1.0 - a) * b, f[(j + 1) * m + i]);
    add(out, a * b, f[(j + 1) * m + i + 1])
}

fn mode_forcing(full: &FullFields, ring: usize, prof: &Profile, kmax: usize, window: f64) -> Result<Vec<ModeForcing>> {
    let g = full.grid;
    let h = g.h();
    let m = g.m();
    let free = free_range(g, ring);
    let inside = |i: usize, big_j: usize| {
        let x = [g.coord(i), g.coord(big_j)];
        free.contains(&i) && free.contains(&big_j) && (x[0] - prof.center[0]).hypot(x[1] - prof.center[1]) <= window
    };
    // complex tangent coordinates phi . E1 + i phi . E2 of phi = u - U
    let mut coords = vec![Complex64::new(0.0, 0.0); m * m];
    for big_j in 0..m {
        for i in 0..m {
            let x = [g.coord(i), g.coord(big_j)];
            let Ok(fr) = prof.frame(x) else { continue };
            let phi = sub(full.u[big_j * m + i], prof.value(x));
            coords[big_j * m + i] = Complex64::new(dot(phi, fr[0]), dot(phi, fr[1]));
        }
    }
    let nth = 64;
    let nr = ((window / (0.5 * h)).ceil() as usize).max(8);
    let dr = window / nr as f64;
    let mut planner = rustfft::FftPlanner::new();
    let fft = planner.plan_fft_forward(nth);
    // spectra[ir][k index]
    let mut spectra = Vec::with_capacity(nr + 1);
    for ir in 0..=nr {
        let r = ir as f64 * dr;
        let mut buf: Vec<Complex64> = (0..nth)
            .map(|a| {
                let th = 2.0 * PI * a as f64 / nth as f64;
                let x = [prof.center[0] + r * th.cos(), prof.center[1] + r * th.sin()];
                bilinear(&coords, g, x, Complex64::new(0.0, 0.0), |acc, w, v| acc + v * w)
            })
            .collect();
        fft.process(&mut buf);
        buf.iter_mut().for_each(|z| *z /= nth as f64);
        spectra.push(buf);
    }
    let coef = |k: i32, r: f64| -> Complex64 {
        let idx = k.rem_euclid(nth as i32) as usize;
        let s = (r / dr).min(nr as f64 - 1e-12);
        let a = s.floor() as usize;
        let w = s - a as f64;
        spectra[a][idx] * (1.0 - w) + spectra[a + 1][idx] * w
    };
    let mut out = Vec::new();
    for k in -(kmax as i32)..=kmax as i32 {
        let mut phik = vec![[0.0; 3]; m * m];
        for big_j in 0..m {
            for i in 0..m {
                if !inside(i, big_j) {
                    continue;
                }
                let x = [g.coord(i), g.coord(big_j)];
                let Ok(fr) = prof.frame(x) else { continue };
                let (dx, dy) = (x[0] - prof.center[0], x[1] - prof.center[1]);
                let r = dx.hypot(dy);
                let th = dy.atan2(dx);
                let c = coef(k, r) * Complex64::from_polar(1.0, k as f64 * th);
                phik[big_j * m + i] = axpy(scale(c.re, fr[0]), c.im, fr[1]);
            }
        }
        let mut tensor = vec![[0.0; 3]; m * m];
        for big_j in free.start + 1..free.end - 1 {
            for i in free.start + 1..free.end - 1 {
                if !(inside(i, big_j) && inside(i + 1, big_j) && inside(i - 1, big_j) && inside(i, big_j + 1) && inside(i, big_j - 1)) {
                    continue;
                }
                let x = [g.coord(i), g.coord(big_j)];
                let du = prof.jacobian(x);
                let dp = central_grad(&phik, m, i, big_j, h);
                // linearization of the quadratic tensor: twice the polarized form
                let t = tensor_from(du, dp);
                tensor[big_j * m + i] = [2.0 * t[0], 2.0 * t[1], 2.0 * t[2]];
            }
        }
        let divergence = tensor_divergence(&tensor, m, free.start, free.end, h);
        out.push(ModeForcing { k, tensor, divergence });
    }
    Ok(out)
}

/// Identifiers of the weighted sup norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormId {
    /// Outer right-hand side norm with weights `1 + rho_1 + rho_1' + rho_2 + rho_3`.
    OuterRhs,
    /// Single-time part of the outer solution norm: value, gradient,
    /// Hessian and the spatial Holder seminorm of the gradient.
    OuterSolution,
    /// Inner right-hand side `lambda^nu (1 + rho)^-a`.
    InnerRhs,
    /// Velocity `lambda^(nu-1) / (1 + rho)`.
    Velocity,
    /// Forcing `lambda^(nu-2) (1 + rho^(a+1))^-1` with the gradient part.
    Forcing,
}

/// Parameters of the weighted norms at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub nu: f64,
    pub a: f64,
    pub theta: f64,
    pub gamma: f64,
    pub sigma0: f64,
    pub t_final: f64,
    /// `lambda_*(t)` and `lambda_*(0)`.
    pub lambda: f64,
    pub lambda0: f64,
    /// `R(t)` and `R(0)`.
    pub r: f64,
    pub r0: f64,
    /// Concentration points; the first one is used by the single-center
    /// norms.
    pub q: Vec<[f64; 2]>,
}

/// Vector field sampled on a uniform grid, index `j nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub x0: [f64; 2],
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub components: Vec<Vec<f64>>,
}

impl SampledField {
    pub fn sample<F: Fn([f64; 2]) -> Vec<f64>>(x0: [f64; 2], h: f64, nx: usize, ny: usize, f: F) -> Self {
        let mut comps: Vec<Vec<f64>> = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let v = f([x0[0] + i as f64 * h, x0[1] + j as f64 * h]);
                if comps.is_empty() {
                    comps = vec![Vec::with_capacity(nx * ny); v.len()];
                }
                for (c, val) in comps.iter_mut().zip(v) {
                    c.push(val);
                }
            }
        }
        SampledField {
            x0,
            h,
            nx,
            ny,
            components: comps,
        }
    }

    fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x0[0] + i as f64 * self.h, self.x0[1] + j as f64 * self.h]
    }

    fn magnitude(&self, k: usize) -> f64 {
        self.components.iter().map(|c| c[k] * c[k]).sum::<f64>().sqrt()
    }

    /// Central (one-sided at the edges) derivative of component `c`.
    fn deriv(&self, c: usize, i: usize, j: usize, axis: usize) -> f64 {
        let f = &self.components[c];
        let (n, pos, stride) = if axis == 0 { (self.nx, i, 1) } else { (self.ny, j, self.nx) };
        let k = j * self.nx + i;
        if pos == 0 {
            (f[k + stride] - f[k]) / self.h
        } else if pos + 1 == n {
            (f[k] - f[k - stride]) / self.h
        } else {
            (f[k + stride] - f[k - stride]) / (2.0 * self.h)
        }
    }

    /// Gradient of every component at node `(i, j)`: `[c][axis]`.
    fn gradient(&self, i: usize, j: usize) -> Vec<[f64; 2]> {
        (0..self.components.len())
            .map(|c| [self.deriv(c, i, j, 0), self.deriv(c, i, j, 1)])
            .collect()
    }
}

fn frob(g: &[[f64; 2]]) -> f64 {
    g.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum::<f64>().sqrt()
}

/// Discrete sup of `|field| / weight` for the chosen norm.
pub fn weighted_sup_norm(field: &SampledField, norm: NormId, p: &NormParams) -> Result<f64> {
    if field.components.is_empty() {
        return Ok(0.0);
    }
    let q0 = *p
        .q
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one concentration point is required".into()))?;
    let rho = |x: [f64; 2], q: [f64; 2]| (x[0] - q[0]).hypot(x[1] - q[1]) / p.lambda;
    let mut best: f64 = 0.0;
    match norm {
        NormId::OuterRhs => {
            let lr = p.lambda * p.r;
            for j in 0..field.ny {
                for i in 0..field.nx {
                    let x = field.point(i, j);
                    let mut w = 1.0 + p.t_final.powf(-p.sigma0);
                    let mut outside_all = true;
                    let mut inv_sq = 0.0;
                    for q in &p.q {
                        let d = (x[0] - q[0]).hypot(x[1] - q[1]);
                        if d <= 3.0 * lr {
                            w += p.lambda.powf(p.theta) / lr;
                        }
                        if d < lr {
                            outside_all = false;
                        }
                        inv_sq += 1.0 / (d * d);
                    }
                    if outside_all {
                        w += p.t_final.powf(-p.sigma0) * p.lambda.powf(1.0 - p.sigma0) * inv_sq;
                    }
                    best = best.max(field.magnitude(j * field.nx + i) / w);
                }
            }
        }
        NormId::InnerRhs => {
            for j in 0..field.ny {
                for i in 0..field.nx {
                    let w = p.lambda.powf(p.nu) * (1.0 + rho(field.point(i, j), q0)).powf(-p.a);
                    best = best.max(field.magnitude(j * field.nx + i) / w);
                }
            }
        }
        NormId::Velocity => {
            for j in 0..field.ny {
                for i in 0..field.nx {
                    let w = p.lambda.powf(p.nu - 1.0) / (1.0 + rho(field.point(i, j), q0));
                    best = best.max(field.magnitude(j * field.nx + i) / w);
                }
            }
        }
        NormId::Forcing => {
            let (mut v, mut dv) = (0.0f64, 0.0f64);
            for j in 0..field.ny {
                for i in 0..field.nx {
                    let y = rho(field.point(i, j), q0);
                    let k = j * field.nx + i;
                    v = v.max(p.lambda.powf(2.0 - p.nu) * (1.0 + y.powf(p.a + 1.0)) * field.magnitude(k));
                    dv = dv.max(p.lambda.powf(3.0 - p.nu) * (1.0 + y.powf(p.a + 2.0)) * frob(&field.gradient(i, j)));
                }
            }
            best = v + dv;
        }
        NormId::OuterSolution => {
            let (mut sup, mut gsup, mut hsup) = (0.0f64, 0.0f64, 0.0f64);
            let grads: Vec<Vec<[f64; 2]>> = (0..field.ny)
                .flat_map(|j| (0..field.nx).map(move |i| (i, j)))
                .map(|(i, j)| field.gradient(i, j))
                .collect();
            for j in 0..field.ny {
                for i in 0..field.nx {
                    let k = j * field.nx + i;
                    sup = sup.max(field.magnitude(k));
                    gsup = gsup.max(frob(&grads[k]));
                    // Hessian from differences of the gradient
                    if i > 0 && i + 1 < field.nx && j > 0 && j + 1 < field.ny {
                        let mut hs = 0.0;
                        for c in 0..field.components.len() {
                            for axis in 0..2 {
                                let d1 = (grads[k + 1][c][axis] - grads[k - 1][c][axis]) / (2.0 * field.h);
                                let d2 = (grads[k + field.nx][c][axis] - grads[k - field.nx][c][axis]) / (2.0 * field.h);
                                hs += d1 * d1 + d2 * d2;
                            }
                        }
                        hsup = hsup.max(hs.sqrt());
                    }
                }
            }
            // Holder seminorm of the gradient over pairs closer than 2 lambda R
            let reach = 2.0 * p.lambda * p.r;
            let span = (reach / field.h).floor() as isize;
            let mut holder: f64 = 0.0;
            for j in 0..field.ny as isize {
                for i in 0..field.nx as isize {
                    let k = (j as usize) * field.nx + i as usize;
                    for dj in 0..=span {
                        for di in -span..=span {
                            if (dj == 0 && di <= 0) || ((di * di + dj * dj) as f64).sqrt() * field.h > reach {
                                continue;
                            }
                            let (i2, j2) = (i + di, j + dj);
                            if i2 < 0 || j2 >= field.ny as isize || i2 >= field.nx as isize {
                                continue;
                            }
                            let k2 = (j2 as usize) * field.nx + i2 as usize;
                            let diff: Vec<[f64; 2]> = grads[k]
                                .iter()
                                .zip(&grads[k2])
                                .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
                                .collect();
                            let dist2 = ((di * di + dj * dj) as f64) * field.h * field.h;
                            holder = holder.max(frob(&diff) / dist2.powf(p.gamma));
                        }
                    }
                }
            }
            let l0t = p.lambda0.powf(-p.theta);
            best = l0t / (p.t_final.ln().abs() * p.lambda0 * p.r0) * sup
                + l0t * gsup
                + hsup
                + p.lambda.powf(-p.theta) * (p.lambda * p.r).powf(2.0 * p.gamma) * holder;
        }
    }
    Ok(best)
}

/// Seeding of the two-bubble run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedConfig {
    pub grid: SimGrid,
    pub ring: usize,
    pub eps0: f64,
    /// Blow-up time used for the scale history of the correction.
    pub t_final: f64,
    /// Target value of `d1 Phi_out,1 + d2 Phi_out,3` at the boundary point.
    pub a_star: f64,
    pub boundary: BubbleSpec,
    /// Interior bubble (`omega = 0`; the mixed ansatz is unit length near
    /// its centers only then).
    pub interior: BubbleSpec,
    /// Radius of the smooth cutoff of the outer field around the boundary
    /// point.
    pub outer_radius: f64,
    pub with_phi0: bool,
}

impl SeedConfig {
    /// The configuration of the energy-law run: `h = 1/256` on `[-1, 1]`.
    pub fn two_bubble(h: f64) -> Result<Self> {
        Ok(SeedConfig {
            grid: SimGrid::with_spacing(h, 1.0)?,
            ring: 4,
            eps0: 0.1,
            t_final: 0.2,
            a_star: -1.0,
            boundary: BubbleSpec::boundary(0.05, -0.3),
            interior: BubbleSpec::interior(0.05, 0.0, [0.35, 0.4]),
            outer_radius: 0.5,
            with_phi0: true,
        })
    }
}

/// Smooth cutoff: 1 below `r0 / 2`, 0 above `r0`.
fn cutoff(r: f64, r0: f64) -> f64 {
    let s = (2.0 * r / r0 - 1.0).clamp(0.0, 1.0);
    if s <= 0.0 {
        return 1.0;
    }
    if s >= 1.0 {
        return 0.0;
    }
    let f = |z: f64| if z > 0.0 { (-1.0 / z).exp() } else { 0.0 };
    f(1.0 - s) / (f(1.0 - s) + f(s))
}

/// Outer field `Z*_0 = (a/2) chi (x1 - q1, 0, x2)`, in the symmetry class,
/// with `d1 Z1 + d2 Z3 = a` at `q`.
pub fn outer_field(x: [f64; 2], q1: f64, a_star: f64, radius: f64) -> Vec3 {
    let r = (x[0] - q1).hypot(x[1]);
    let c = 0.5 * a_star * cutoff(r, radius);
    [c * (x[0] - q1), 0.0, c * x[1]]
}

/// Radial correction profile tabulated on a geometric mesh.
struct RadialTable {
    r: Vec<f64>,
    f: Vec<f64>,
}

impl RadialTable {
    fn eval(&self, r: f64) -> f64 {
        let n = self.r.len();
        if r <= self.r[0] {
            return self.f[0] * r / self.r[0];
        }
        if r >= self.r[n - 1] {
            return self.f[n - 1];
        }
        let k = self.r.partition_point(|&s| s <= r) - 1;
        let w = (r / self.r[k]).ln() / (self.r[k + 1] / self.r[k]).ln();
        self.f[k] * (1.0 - w) + self.f[k + 1] * w
    }
}

/// `phi_0` at `t = 0` for a bubble whose scale follows the ansatz rate
/// rescaled to start from `spec.lambda`.
fn phi0_table(spec: &BubbleSpec, cfg: &SeedConfig, r_max: f64) -> Result<RadialTable> {
    let kappa = matched_kappa(cfg.a_star, cfg.t_final);
    let (l0, _) = lambda_star(0.0, cfg.t_final, kappa, LambdaStarVariant::Plain);
    let c = spec.lambda / l0;
    let t_final = cfg.t_final;
    let rate = RealRate(move |s: f64| c * lambda_star(s, t_final, kappa, LambdaStarVariant::Plain).1);
    let r = geometric_mesh(0.05 * cfg.grid.h(), r_max, 1.08);
    let window = TimeWindow::from_final_time(cfg.t_final);
    let f = r
        .iter()
        .map(|&ri| phi0_eval(&rate, spec, ri, 0.0, window).map(|z| z.re))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RadialTable { r, f })
}

/// Seeded director `U_* + Phi_0 + Z*_0` (normalized) with the fluid at rest.
pub fn seed_state(cfg: &SeedConfig) -> Result<HalfSpaceState> {
    if cfg.boundary.kind != BubbleKind::Boundary || cfg.interior.kind != BubbleKind::Interior {
        return Err(Error::ConfigMismatch("seed needs one boundary and one interior bubble".into()));
    }
    if cfg.interior.omega != 0.0 {
        return Err(Error::InvalidArgument("the seeded interior bubble must have omega = 0".into()));
    }
    if !(cfg.t_final > 0.0 && cfg.t_final < 0.5) {
        return Err(Error::InvalidArgument("t_final must lie in (0, 1/2)".into()));
    }
    let ansatz = Ansatz::build(&[cfg.boundary, cfg.interior], AnsatzConfig::Mixed)?;
    let r_max = 3.0 * cfg.grid.l;
    let tables = if cfg.with_phi0 {
        Some((phi0_table(&cfg.boundary, cfg, r_max)?, phi0_table(&cfg.interior, cfg, r_max)?))
    } else {
        None
    };
    let q1 = cfg.boundary.xi[0];
    HalfSpaceState::from_director(cfg.grid, cfg.ring, cfg.eps0, |x| {
        let mut u = vec3::add(ansatz.value(x), outer_field(x, q1, cfg.a_star, cfg.outer_radius));
        if let Some((tb, ti)) = &tables {
            for (k, (s, prof)) in ansatz.terms.iter().enumerate() {
                let table = if k == 0 { tb } else { ti };
                let (dx, dy) = (x[0] - prof.center[0], x[1] - prof.center[1]);
                let r = dx.hypot(dy);
                if r == 0.0 {
                    continue;
                }
                let phi = table.eval(r);
                let local = [phi * dx / r, phi * dy / r, 0.0];
                u = axpy(u, *s, mat_vec(&prof.m, local));
            }
        }
        u
    })
}

/// Sampled `d1 Phi_1 + d2 Phi_3` at the boundary point, where
/// `Phi = u - fitted bubble`, from a least-squares plane fit
/// over the half annulus `[r_in, r_out]`.
pub fn sampled_outer_divergence(state: &HalfSpaceState, fit: &BubbleFit, r_in: f64, r_out: f64) -> Result<f64> {
    let g = state.grid;
    let prof = fit.profile();
    let q = fit.spec.xi;
    let rows = g.half_rows();
    let mut a = DMatrix::<f64>::zeros(0, 0);
    let mut rows_a: Vec<[f64; 3]> = Vec::new();
    let (mut b1, mut b3) = (Vec::new(), Vec::new());
    for j in 0..rows {
        for i in 0..g.m() {
            let x = state.point(i, j);
            let r = (x[0] - q[0]).hypot(x[1] - q[1]);
            if r < r_in || r > r_out {
                continue;
            }
            let phi = sub(state.u_at(i, j), prof.value(x));
            rows_a.push([1.0, x[0] - q[0], x[1] - q[1]]);
            b1.push(phi[0]);
            b3.push(phi[2]);
        }
    }
    if rows_a.len() < 6 {
        return Err(Error::InvalidArgument("annulus holds too few nodes".into()));
    }
    a = a.resize(rows_a.len(), 3, 0.0);
    for (k, r) in rows_a.iter().enumerate() {
        for c in 0..3 {
            a[(k, c)] = r[c];
        }
    }
    let svd = a.svd(true, true);
    let s1 = svd
        .solve(&DVector::from_vec(b1), 1e-12)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let s3 = svd
        .solve(&DVector::from_vec(b3), 1e-12)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(s1[1] + s3[2])
}

/// Options of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub dt: f64,
    pub steps: usize,
    /// Refit the bubbles every this many steps (0 disables fitting).
    pub fit_every: usize,
}

/// Why the run ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopReason {
    Completed,
    /// The grid stopped resolving the concentration.
    Blowup { t: f64, grad_max: f64 },
}

/// One line of the per-step log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub kinetic: f64,
    pub dirichlet: f64,
    /// Weighted total `1/2 int |v|^2 + eps0/2 int |grad u|^2`.
    pub total: f64,
    pub rate: f64,
    pub residual: f64,
    pub residual_unweighted: f64,
    /// Latest fitted scales, boundary first.
    pub lambda_fit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub records: Vec<StepRecord>,
    pub stop: StopReason,
    /// `(t, fits)` at every fitting time.
    pub fits: Vec<(f64, Vec<BubbleFit>)>,
    /// Largest single-step increase of the weighted total (negative when the
    /// energy decreased every step).
    pub max_energy_increase: f64,
    /// `sum |residual| / sum |rate|` over the run.
    pub relative_residual: f64,
    pub max_parity_defect: f64,
    pub max_unit_defect: f64,
}

impl RunReport {
    pub fn energy_monotone(&self) -> bool {
        self.max_energy_increase < 0.0
    }

    /// Fitted boundary scale at each fitting time.
    pub fn boundary_lambdas(&self) -> Vec<(f64, f64)> {
        self.fits
            .iter()
            .filter_map(|(t, f)| f.iter().find(|b| b.spec.kind == BubbleKind::Boundary).map(|b| (*t, b.spec.lambda)))
            .collect()
    }
}

fn refit(state: &HalfSpaceState, guesses: &[BubbleSpec]) -> Result<Vec<BubbleFit>> {
    guesses.iter().map(|b| refit_bubble(state, b)).collect()
}

/// Runs the coupled system, recording the energy balance every step and the
/// bubble fits every `fit_every` steps. Stops cleanly on `BlowupDetected`.
pub fn run(state: &mut HalfSpaceState, bubbles: &[BubbleSpec], opts: &RunOptions) -> Result<RunReport> {
    run_with(state, bubbles, opts, |_, _| Ok(()))
}

/// [`run`] with a hook called after every completed step (with the step
/// number), e.g. to write snapshots.
pub fn run_with<F>(state: &mut HalfSpaceState, bubbles: &[BubbleSpec], opts: &RunOptions, mut observe: F) -> Result<RunReport>
where
    F: FnMut(usize, &HalfSpaceState) -> Result<()>,
{
    let stepper = Stepper::new(state.grid);
    let mut prev = energy_snapshot(state, &stepper.sp)?;
    let mut guesses: Vec<BubbleSpec> = bubbles.to_vec();
    let mut fits = Vec::new();
    if opts.fit_every > 0 {
        let f = refit(state, &guesses)?;
        guesses = f.iter().map(|b| b.spec).collect();
        fits.push((state.t, f));
    }
    let mut records = Vec::with_capacity(opts.steps);
    let (mut max_inc, mut sum_res, mut sum_rate) = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut unit: f64 = 0.0;
    let mut stop = StopReason::Completed;
    for step in 1..=opts.steps {
        let outcome = stepper.step(state, opts.dt);
        match outcome {
            Ok(()) => {}
            Err(Error::BlowupDetected { t, grad_max }) => stop = StopReason::Blowup { t, grad_max },
            Err(e) => return Err(e),
        }
        let next = energy_snapshot(state, &stepper.sp)?;
        let rep = energy(&prev, &next, opts.dt, state.eps0);
        max_inc = max_inc.max(next.weighted_total(state.eps0) - prev.weighted_total(state.eps0));
        sum_res += rep.residual.abs();
        sum_rate += rep.rate.abs();
        unit = unit.max(state.unit_defect());
        if opts.fit_every > 0 && (step % opts.fit_every == 0 || stop != StopReason::Completed) {
            let f = refit(state, &guesses)?;
            guesses = f.iter().map(|b| b.spec).collect();
            fits.push((state.t, f));
        }
        records.push(StepRecord {
            step,
            t: state.t,
            kinetic: next.kinetic,
            dirichlet: next.dirichlet,
            total: next.weighted_total(state.eps0),
            rate: rep.rate,
            residual: rep.residual,
            residual_unweighted: rep.residual_unweighted,
            lambda_fit: guesses.iter().map(|b| b.lambda).collect(),
        });
        prev = next;
        observe(step, state)?;
        if stop != StopReason::Completed {
            break;
        }
    }
    Ok(RunReport {
        records,
        stop,
        fits,
        max_energy_increase: max_inc,
        relative_residual: if sum_rate > 0.0 { sum_res / sum_rate } else { 0.0 },
        max_parity_defect: state.parity_defect,
        max_unit_defect: unit,
    })
}

/// Writes fields as a flat little-endian binary: a header of `u64` values
/// `(nx, ny, field count)` and the `f64` spacing, then each field row-major.
pub fn write_snapshot<W: std::io::Write>(out: &mut W, nx: usize, ny: usize, h: f64, fields: &[&[f64]]) -> Result<()> {
    for v in [nx as u64, ny as u64, fields.len() as u64] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&h.to_le_bytes())?;
    for f in fields {
        if f.len() != nx * ny {
            return Err(Error::InvalidArgument(format!("field has {} values, expected {}", f.len(), nx * ny)));
        }
        for v in *f {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Director components and velocity of the half state as snapshot fields
/// on the `n x (n/2 + 1)` velocity nodes.
pub fn snapshot_fields(state: &HalfSpaceState) -> Vec<Vec<f64>> {
    let g = state.grid;
    let rows = g.half_rows();
    let mut out = vec![Vec::with_capacity(g.n * rows); 6];
    for j in 0..rows {
        for i in 0..g.n {
            let u = state.u_at(i, j);
            let v = state.v_at(i, j);
            out[0].push(u[0]);
            out[1].push(u[1]);
            out[2].push(u[2]);
            out[3].push(v[0]);
            out[4].push(v[1]);
            out[5].push(state.p[j * g.n + i]);
        }
    }
    out
}

/// The bubble profile `M W2` of a fit evaluated pointwise (for tests and
/// diagnostics).
pub fn fitted_value(fit: &BubbleFit, x: [f64; 2]) -> Vec3 {
    vec3::add(mat_vec(&fit.profile().m, w2(fit.profile().local(x))), fit.background.at(x))
}
