//! Unsteady Stokes flow in the half plane with Navier slip
//! (`d2 v1 = v2 = 0` on `x2 = 0`): Green's kernels, solution routes and
//! pointwise-bound checks.
//!
//! Two independent routes compute the velocity generated by a solenoidal
//! forcing `F` (`div F = 0`, `F2 = 0` on the boundary):
//!
//! * [`stokes_solve_green`]: space-time quadrature of a kernel
//!   representation. The default [`GreenRoute::SlipImage`] uses the image
//!   kernels `Gamma(x - y) + Gamma(x - y*)` for `v1` and
//!   `Gamma(x - y) - Gamma(x - y*)` for `v2` (pressure zero), which is the
//!   exact solution for solenoidal forcing. [`GreenRoute::AsPublished`]
//!   evaluates `G0 + G*` with the accumulated forcing literally.
//! * [`stokes_solve_reflection`]: even/odd extension to the doubled
//!   periodic square, Leray projection and exact spectral heat propagation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::modulation::{lambda_star, LambdaStarVariant};
use crate::quad::{fixed_rule, integrate_breaks, integrate_to_infinity, integrate_vec_breaks, pairwise_sum, QuadOptions};
use crate::spectral::Spectral2;
use num_complex::Complex64;

use std::f64::consts::PI;

/// Gaussian window: `exp(-r^2 / 4t) < 1e-16` beyond `TRUNCATION * sqrt(t)`.
pub const TRUNCATION: f64 = 12.2;

/// Heat kernel `exp(-|x|^2 / 4t) / (4 pi t)`.
pub fn heat_kernel(x: [f64; 2], t: f64) -> f64 {
    (-(x[0] * x[0] + x[1] * x[1]) / (4.0 * t)).exp() / (4.0 * PI * t)
}

/// Fundamental solution of the Laplacian, `log|z| / (2 pi)`.
pub fn log_kernel(z: [f64; 2]) -> Result<f64> {
    let r = z[0].hypot(z[1]);
    if r == 0.0 {
        return Err(Error::OriginSingular);
    }
    Ok(r.ln() / (2.0 * PI))
}

/// Mirror image `(y1, -y2)`.
pub fn reflect(y: [f64; 2]) -> [f64; 2] {
    [y[0], -y[1]]
}

/// One kernel evaluation point. Component indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreensEval {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub t: f64,
    pub i: usize,
    pub j: usize,
}

impl GreensEval {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) {
            return Err(Error::InvalidArgument(format!("t must be positive, got {}", self.t)));
        }
        if self.y[1] < 0.0 || self.x[1] < 0.0 {
            return Err(Error::InvalidArgument("points must lie in the closed half plane".into()));
        }
        if self.i > 1 || self.j > 1 {
            return Err(Error::InvalidArgument("component index out of range".into()));
        }
        Ok(())
    }

    /// Distance to the mirrored source, `|x - y*|`.
    pub fn dist_image(&self) -> f64 {
        (self.x[0] - self.y[0]).hypot(self.x[1] + self.y[1])
    }
}

/// `G0_ij = delta_ij (Gamma(x - y, t) - Gamma(x - y*, t))`.
pub fn green_g0(i: usize, j: usize, x: [f64; 2], y: [f64; 2], t: f64) -> f64 {
    if i != j {
        return 0.0;
    }
    let d = [x[0] - y[0], x[1] - y[1]];
    let di = [x[0] - y[0], x[1] + y[1]];
    heat_kernel(d, t) - heat_kernel(di, t)
}

/// Derivatives of `E(u, a)` used against the Gaussian along the `z1` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineKernel {
    /// `d1 E`, odd in `u`.
    E1,
    /// `d1 d2 E`, odd in `u`.
    E12,
    /// `d2 d2 E`, even in `u`.
    E22,
}

impl LineKernel {
    fn eval(self, u: f64, a: f64) -> f64 {
        let q = u * u + a * a;
        match self {
            LineKernel::E1 => u / (2.0 * PI * q),
            LineKernel::E12 => -u * a / (PI * q * q),
            LineKernel::E22 => (u * u - a * a) / (2.0 * PI * q * q),
        }
    }

    fn odd(self) -> bool {
        !matches!(self, LineKernel::E22)
    }
}

fn line_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-12,
        max_intervals: 4000,
    }
}

/// `int_R K(u, a) exp(-(d - u)^2 / 4t) du`, folded onto `u >= 0` so that
/// odd kernels see the difference of the two Gaussian tails.
fn line_moment(kind: LineKernel, d: f64, a: f64, t: f64) -> Result<f64> {
    let st = t.sqrt();
    let w = d.abs() + TRUNCATION * st;
    let sign = if kind.odd() { -1.0 } else { 1.0 };
    let mut breaks = vec![0.0, w];
    for m in [0.25, 1.0, 4.0, 16.0] {
        breaks.push(m * a);
    }
    for k in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0] {
        breaks.push(d.abs() + k * st);
    }
    breaks.retain(|b| *b >= 0.0 && *b <= w);
    breaks.sort_by(|p, q| p.partial_cmp(q).unwrap());
    breaks.dedup();
    let r = integrate_vec_breaks(
        |u| {
            let g = (-(d - u) * (d - u) / (4.0 * t)).exp() + sign * (-(d + u) * (d + u) / (4.0 * t)).exp();
            let v = kind.eval(u, a) * g;
            [v, v.abs()]
        },
        &breaks,
        line_opts(),
    )?;
    Ok(r.value[0])
}

/// Prefactor `d_{y2} Gamma` of the line convolutions without the `z1`
/// Gaussian: `-(y2 / 2t) exp(-y2^2 / 4t) / (4 pi t)`.
fn line_prefactor(y2: f64, t: f64) -> f64 {
    -(y2 / (2.0 * t)) * (-(y2 * y2) / (4.0 * t)).exp() / (4.0 * PI * t)
}

/// The two distinct entries of `G*`: `(diagonal, off-diagonal)`.
fn gstar_pair(x: [f64; 2], y: [f64; 2], t: f64) -> Result<(f64, f64)> {
    let d = x[0] - y[0];
    let h = x[1] + y[1];
    let gi = heat_kernel([d, h], t);
    let d12 = d * h / (4.0 * t * t) * gi;
    let d22 = (h * h / (4.0 * t * t) - 1.0 / (2.0 * t)) * gi;
    let pre = line_prefactor(y[1], t);
    let (j1, j2) = if pre == 0.0 {
        (0.0, 0.0)
    } else {
        (
            pre * line_moment(LineKernel::E12, d, x[1], t)?,
            pre * line_moment(LineKernel::E22, d, x[1], t)?,
        )
    };
    Ok((-2.0 * d22 - 4.0 * j2, -2.0 * d12 - 4.0 * j1))
}

/// Reflected part of the Green's tensor, `G*_ij(x, y, t)`.
pub fn green_gstar(i: usize, j: usize, x: [f64; 2], y: [f64; 2], t: f64) -> Result<f64> {
    GreensEval { x, y, t, i, j }.validate()?;
    let (diag, off) = gstar_pair(x, y, t)?;
    Ok(if i == j { diag } else { off })
}

/// Pressure tensor `P_j(x, y, t)`; `P_1` (0-based index 1) vanishes.
pub fn pressure_p(j: usize, x: [f64; 2], y: [f64; 2], t: f64) -> Result<f64> {
    GreensEval { x, y, t, i: 0, j }.validate()?;
    if j == 1 {
        return Ok(0.0);
    }
    let pre = line_prefactor(y[1], t);
    if pre == 0.0 {
        return Ok(0.0);
    }
    Ok(4.0 * pre * line_moment(LineKernel::E1, x[0] - y[0], x[1], t)?)
}

/// Concentration feature of a forcing: a center and its length scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub center: [f64; 2],
    pub scale: f64,
}

/// Decay data of a concentrated divergence-form forcing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayMeta {
    pub nu: f64,
    pub a: f64,
    pub q: [f64; 2],
}

/// Solenoidal forcing `F(x, t)` on the closed half plane.
///
/// Implementations only need to be correct for `x2 >= 0`; the solvers
/// extend `F1` evenly and `F2` oddly.
pub trait SolenoidalForcing: Sync {
    fn value(&self, x: [f64; 2], t: f64) -> [f64; 2];
    /// `g[i][j] = d_j F_i`.
    fn gradient(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2];
    /// Centers and length scales where the forcing varies (images included
    /// or not; they only steer quadrature breakpoints).
    fn features(&self, t: f64) -> Vec<Feature>;
    fn decay(&self) -> Option<DecayMeta> {
        None
    }
}

/// Largest divergence and boundary normal component over `points`.
pub fn solenoidal_defect(f: &dyn SolenoidalForcing, points: &[[f64; 2]], t: f64) -> (f64, f64) {
    let mut div = 0.0f64;
    let mut normal = 0.0f64;
    for &p in points {
        let g = f.gradient(p, t);
        div = div.max((g[0][0] + g[1][1]).abs());
        normal = normal.max(f.value([p[0], 0.0], t)[1].abs());
    }
    (div, normal)
}

/// `F = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroForcing;

impl SolenoidalForcing for ZeroForcing {
    fn value(&self, _: [f64; 2], _: f64) -> [f64; 2] {
        [0.0; 2]
    }
    fn gradient(&self, _: [f64; 2], _: f64) -> [[f64; 2]; 2] {
        [[0.0; 2]; 2]
    }
    fn features(&self, _: f64) -> Vec<Feature> {
        Vec::new()
    }
}

/// Which derivative of a Gaussian blob enters the stream function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamOp {
    Plain,
    Laplacian,
}

/// `amp (alpha + beta t) op[exp(-|x - c|^2 / sigma^2)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamTerm {
    pub amp: f64,
    pub center: [f64; 2],
    pub sigma: f64,
    pub op: StreamOp,
    pub rate: (f64, f64),
}

/// `n`-th derivative of `exp(-r^2 / s^2)` via Hermite polynomials.
fn gauss_deriv(n: usize, r: f64, s: f64) -> f64 {
    let u = r / s;
    let (mut h0, mut h1) = (1.0, 2.0 * u);
    let h = match n {
        0 => h0,
        _ => {
            for k in 1..n {
                let h2 = 2.0 * u * h1 - 2.0 * k as f64 * h0;
                h0 = h1;
                h1 = h2;
            }
            h1
        }
    };
    (-1.0 / s).powi(n as i32) * h * (-u * u).exp()
}

/// Forcing `F = (d2 psi, -d1 psi)` from a sum of Gaussian stream terms.
/// Built from odd pairs (a blob and its mirror with opposite sign) so that
/// `psi` is odd in `x2` and `F` lies in the symmetry class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StreamForcing {
    pub terms: Vec<StreamTerm>,
}

impl StreamForcing {
    /// Adds a blob at `c` (with `c2 > 0`) together with its negative mirror.
    pub fn odd_pair(mut self, amp: f64, c: [f64; 2], sigma: f64, op: StreamOp, rate: (f64, f64)) -> Self {
        self.terms.push(StreamTerm { amp, center: c, sigma, op, rate });
        self.terms.push(StreamTerm {
            amp: -amp,
            center: reflect(c),
            sigma,
            op,
            rate,
        });
        self
    }

    /// `d1^n1 d2^n2 psi`.
    pub fn psi_deriv(&self, x: [f64; 2], t: f64, n1: usize, n2: usize) -> f64 {
        let mut s = 0.0;
        for term in &self.terms {
            let coef = term.amp * (term.rate.0 + term.rate.1 * t);
            if coef == 0.0 {
                continue;
            }
            let r1 = x[0] - term.center[0];
            let r2 = x[1] - term.center[1];
            let g = |a: usize, b: usize| gauss_deriv(a, r1, term.sigma) * gauss_deriv(b, r2, term.sigma);
            s += coef
                * match term.op {
                    StreamOp::Plain => g(n1, n2),
                    StreamOp::Laplacian => g(n1 + 2, n2) + g(n1, n2 + 2),
                };
        }
        s
    }
}

impl SolenoidalForcing for StreamForcing {
    fn value(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        [self.psi_deriv(x, t, 0, 1), -self.psi_deriv(x, t, 1, 0)]
    }
    fn gradient(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        let d11 = self.psi_deriv(x, t, 1, 1);
        [
            [d11, self.psi_deriv(x, t, 0, 2)],
            [-self.psi_deriv(x, t, 2, 0), -d11],
        ]
    }
    fn features(&self, _: f64) -> Vec<Feature> {
        self.terms
            .iter()
            .map(|s| Feature {
                center: s.center,
                scale: s.sigma,
            })
            .collect()
    }
}

/// Manufactured flow `v = t curl psi_v` and the forcing
/// `F = dv/dt - Lap v` that generates it from rest (pressure zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ManufacturedFlow {
    stream: StreamForcing,
    forcing: StreamForcing,
}

impl ManufacturedFlow {
    /// `blobs`: `(amp, center, sigma)` with `center2 > 0`; each gets a
    /// negative mirror image.
    pub fn new(blobs: &[(f64, [f64; 2], f64)]) -> Self {
        let mut stream = StreamForcing::default();
        let mut forcing = StreamForcing::default();
        for &(amp, c, s) in blobs {
            stream = stream.odd_pair(amp, c, s, StreamOp::Plain, (0.0, 1.0));
            forcing = forcing
                .odd_pair(amp, c, s, StreamOp::Plain, (1.0, 0.0))
                .odd_pair(amp, c, s, StreamOp::Laplacian, (0.0, -1.0));
        }
        ManufacturedFlow { stream, forcing }
    }

    pub fn forcing(&self) -> &StreamForcing {
        &self.forcing
    }

    pub fn velocity(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        self.stream.value(x, t)
    }
}

/// Divergence-form forcing concentrated at a boundary point `q` on the
/// scale `lambda_*(t)`:
/// `F_D = div F` with `F = [[0, psi], [-psi, 0]]`,
/// `psi = lambda^(nu - 2) Psi((x - q) / lambda)`,
/// `Psi(y) = y2 (1 + |y|^2)^(-(a + 2) / 2)`, so that
/// `|F| <~ lambda^(nu-2) / (1 + |y|^(a+1))` and
/// `|grad F| <~ lambda^(nu-3) / (1 + |y|^(a+2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentratedForcing {
    pub nu: f64,
    pub a: f64,
    pub q1: f64,
    pub t_final: f64,
    pub kappa: f64,
}

impl ConcentratedForcing {
    pub fn new(nu: f64, a: f64, q1: f64, t_final: f64, kappa: f64) -> Result<Self> {
        if !(nu > 0.0) || !(a > 1.0) {
            return Err(Error::InvalidArgument(format!("need nu > 0 and a > 1, got nu = {nu}, a = {a}")));
        }
        if !(t_final > 0.0 && t_final < 1.0) || !(kappa > 0.0) {
            return Err(Error::InvalidArgument("need 0 < T < 1 and kappa > 0".into()));
        }
        Ok(ConcentratedForcing { nu, a, q1, t_final, kappa })
    }

    pub fn lambda(&self, t: f64) -> f64 {
        lambda_star(t, self.t_final, self.kappa, LambdaStarVariant::Plain).0
    }

    /// `psi` itself (the entry of the divergence-form potential).
    pub fn potential(&self, x: [f64; 2], t: f64) -> f64 {
        let l = self.lambda(t);
        let y = [(x[0] - self.q1) / l, x[1] / l];
        let qq = 1.0 + y[0] * y[0] + y[1] * y[1];
        l.powf(self.nu - 2.0) * y[1] * qq.powf(-(self.a + 2.0) / 2.0)
    }

    /// First and second derivatives of `Psi` at `y`:
    /// `(d1, d2, d11, d12, d22)`.
    fn psi_derivs(&self, y: [f64; 2]) -> [f64; 5] {
        let p = (self.a + 2.0) / 2.0;
        let qq = 1.0 + y[0] * y[0] + y[1] * y[1];
        let q0 = qq.powf(-p);
        let q1 = q0 / qq;
        let q2 = q1 / qq;
        let (y1, y2) = (y[0], y[1]);
        let c = 4.0 * p * (p + 1.0);
        [
            -2.0 * p * y1 * y2 * q1,
            q0 - 2.0 * p * y2 * y2 * q1,
            -2.0 * p * y2 * q1 + c * y1 * y1 * y2 * q2,
            -2.0 * p * y1 * q1 + c * y1 * y2 * y2 * q2,
            -6.0 * p * y2 * q1 + c * y2 * y2 * y2 * q2,
        ]
    }
}

impl SolenoidalForcing for ConcentratedForcing {
    fn value(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        let l = self.lambda(t);
        let d = self.psi_derivs([(x[0] - self.q1) / l, x[1] / l]);
        let s = l.powf(self.nu - 3.0);
        [s * d[1], -s * d[0]]
    }
    fn gradient(&self, x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        let l = self.lambda(t);
        let d = self.psi_derivs([(x[0] - self.q1) / l, x[1] / l]);
        let s = l.powf(self.nu - 4.0);
        [[s * d[3], s * d[4]], [-s * d[2], -s * d[3]]]
    }
    fn features(&self, t: f64) -> Vec<Feature> {
        vec![Feature {
            center: [self.q1, 0.0],
            scale: self.lambda(t),
        }]
    }
    fn decay(&self) -> Option<DecayMeta> {
        Some(DecayMeta {
            nu: self.nu,
            a: self.a,
            q: [self.q1, 0.0],
        })
    }
}

/// Kernel representation used by [`stokes_solve_green`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GreenRoute {
    /// `v_i = int int (Gamma(x - y) + s_i Gamma(x - y*)) F_i`, `s = (+1, -1)`,
    /// pressure zero.
    #[default]
    SlipImage,
    /// `G0` term plus `G*` against the accumulated forcing, pressure from
    /// `P`, evaluated with fixed product rules.
    AsPublished,
}

/// Options of the green route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenOptions {
    pub route: GreenRoute,
    /// Relative tolerance of the outer (time) quadrature; inner levels use
    /// a tenth of it.
    pub rel_tol: f64,
    /// Time nodes of the triangular product rule (`AsPublished`).
    pub time_nodes: usize,
    /// Panels per direction of the spatial product rule (`AsPublished`).
    pub space_panels: usize,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions {
            route: GreenRoute::SlipImage,
            rel_tol: 1e-7,
            time_nodes: 48,
            space_panels: 6,
        }
    }
}

/// Velocity and pressure at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesPoint {
    pub v: [f64; 2],
    pub p: f64,
}

fn extended(f: &dyn SolenoidalForcing, y: [f64; 2], t: f64, parity: [f64; 2]) -> [f64; 2] {
    if y[1] >= 0.0 {
        f.value(y, t)
    } else {
        let v = f.value(reflect(y), t);
        [parity[0] * v[0], parity[1] * v[1]]
    }
}

fn sorted_unique(mut v: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    v.push(lo);
    v.push(hi);
    v.retain(|b| *b >= lo && *b <= hi && b.is_finite());
    v.sort_by(|p, q| p.partial_cmp(q).unwrap());
    v.dedup_by(|p, q| (*p - *q).abs() <= 1e-14 * hi.abs().max(1.0));
    v
}

/// Features of `f` at time `t` together with their mirror images, without
/// duplicates.
fn mirrored_features(f: &dyn SolenoidalForcing, t: f64) -> Vec<Feature> {
    let mut out: Vec<Feature> = Vec::new();
    for ft in f.features(t) {
        for c in [ft.center, reflect(ft.center)] {
            let dup = out.iter().any(|o| o.center == c && o.scale == ft.scale);
            if !dup {
                out.push(Feature { center: c, scale: ft.scale });
            }
        }
    }
    out
}

/// Rough `sup |F|` over `[0, t]`, sampled at `x`, the features and their
/// flanks; sets the absolute error scale of the green route.
fn forcing_scale(f: &dyn SolenoidalForcing, x: [f64; 2], t: f64) -> f64 {
    let mut m = 0.0f64;
    for tau in [0.0, 0.25 * t, 0.5 * t, 0.75 * t, t] {
        let mut pts = vec![x];
        for ft in f.features(tau) {
            for (a, b) in [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (0.5, 0.5)] {
                pts.push([ft.center[0] + a * ft.scale, ft.center[1] + b * ft.scale]);
            }
        }
        for p in pts {
            let v = extended(f, p, tau, [1.0, 1.0]);
            m = m.max(v[0].abs()).max(v[1].abs());
        }
    }
    m
}

/// `int_0^t int_{R^2} Gamma(x - y, t - tau) F^ext(y, tau) dy dtau` with the
/// parity `F^ext(y) = parity * F(y*)` below the axis.
fn heat_convolve(f: &dyn SolenoidalForcing, x: [f64; 2], t: f64, parity: [f64; 2], rel_tol: f64) -> Result<[f64; 2]> {
    let scale = forcing_scale(f, x, t);
    if scale == 0.0 {
        return Ok([0.0; 2]);
    }
    let feats_t = mirrored_features(f, t);
    let mut sb = vec![0.0, t];
    for ft in &feats_t {
        let l2 = ft.scale * ft.scale;
        let dist2 = (x[0] - ft.center[0]).powi(2) + (x[1] - ft.center[1]).powi(2);
        // grading toward s = 0 only matters while the Gaussian is wider
        // than the feature
        let mut s = l2;
        while s > 1e-2 * l2.min(dist2.max(l2)) && sb.len() < 60 {
            sb.push(s);
            s /= 8.0;
        }
        sb.push(dist2 / 4.0);
    }
    let sb = sorted_unique(sb, 0.0, t);
    let space_abs = 0.1 * rel_tol * scale;
    let mut err: Option<Error> = None;
    let r = integrate_vec_breaks(
        |s| {
            if s <= 0.0 {
                return extended(f, x, t, parity);
            }
            match space_convolve(f, x, t - s, s, parity, space_abs) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    [0.0; 2]
                }
            }
        },
        &sb,
        QuadOptions {
            abs_tol: rel_tol * scale * t,
            rel_tol,
            max_intervals: 400,
        },
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(r.value)
}

/// `int Gamma(x - y, s) F^ext(y, tau) dy` in polar coordinates around `x`,
/// truncated where the Gaussian drops below `1e-16`, to absolute accuracy
/// `abs_tol`.
fn space_convolve(
    f: &dyn SolenoidalForcing,
    x: [f64; 2],
    tau: f64,
    s: f64,
    parity: [f64; 2],
    abs_tol: f64,
) -> Result<[f64; 2]> {
    let ss = s.sqrt();
    let rmax = TRUNCATION * ss;
    let mut rb: Vec<f64> = [2.0, 4.0, 6.0].iter().map(|m| m * ss).collect();
    let mut ab = Vec::new();
    for ft in mirrored_features(f, tau) {
        let dx = ft.center[0] - x[0];
        let dy = ft.center[1] - x[1];
        let dc = dx.hypot(dy);
        if dc - 10.0 * ft.scale > rmax {
            continue;
        }
        for m in [-8.0, -2.0, 0.0, 2.0, 8.0] {
            rb.push(dc + m * ft.scale);
        }
        if dc > ft.scale {
            let th = dy.atan2(dx);
            ab.push(th.rem_euclid(2.0 * PI));
            for m in [2.0, 8.0] {
                let w = m * ft.scale / dc;
                if w < 1.0 {
                    ab.push((th - w).rem_euclid(2.0 * PI));
                    ab.push((th + w).rem_euclid(2.0 * PI));
                }
            }
        }
    }
    let rb = sorted_unique(rb, 0.0, rmax);
    let ab = sorted_unique(ab, 0.0, 2.0 * PI);
    let opts = QuadOptions {
        abs_tol,
        rel_tol: 0.0,
        max_intervals: 400,
    };
    // the radial integral is weighted by d(phi) / (2 pi) in effect
    let inner = QuadOptions {
        abs_tol: 0.1 * abs_tol / (2.0 * PI),
        ..opts
    };
    let mut err: Option<Error> = None;
    let r = integrate_vec_breaks(
        |phi| {
            let (sn, cs) = phi.sin_cos();
            let res = integrate_vec_breaks(
                |r| {
                    let y = [x[0] + r * cs, x[1] + r * sn];
                    let w = r * (-r * r / (4.0 * s)).exp() / (4.0 * PI * s);
                    let v = extended(f, y, tau, parity);
                    [w * v[0], w * v[1]]
                },
                &rb,
                inner,
            );
            match res {
                Ok(v) => v.value,
                Err(e) => {
                    err.get_or_insert(e);
                    [0.0; 2]
                }
            }
        },
        &ab,
        opts,
    )?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok(r.value)
}

/// Velocity (and pressure) at `x` and time `t` generated from rest by the
/// solenoidal forcing `f`.
pub fn stokes_solve_green(f: &dyn SolenoidalForcing, x: [f64; 2], t: f64, opts: &GreenOptions) -> Result<StokesPoint> {
    if !(t > 0.0) || x[1] < 0.0 {
        return Err(Error::InvalidArgument("need t > 0 and x in the closed half plane".into()));
    }
    match opts.route {
        GreenRoute::SlipImage => {
            let v = heat_convolve(f, x, t, [1.0, -1.0], opts.rel_tol)?;
            Ok(StokesPoint { v, p: 0.0 })
        }
        GreenRoute::AsPublished => {
            // the d2 d2 E line kernel is hypersingular on the boundary
            if x[1] <= 0.0 {
                return Err(Error::InvalidArgument("the published representation needs x2 > 0".into()));
            }
            let v0 = heat_convolve(f, x, t, [-1.0, -1.0], opts.rel_tol)?;
            let (vs, p) = published_reflected_part(f, x, t, opts)?;
            Ok(StokesPoint {
                v: [v0[0] + vs[0], v0[1] + vs[1]],
                p,
            })
        }
    }
}

/// Velocities at many points; evaluated in parallel, returned in input order.
pub fn stokes_solve_green_many(
    f: &dyn SolenoidalForcing,
    xs: &[[f64; 2]],
    t: f64,
    opts: &GreenOptions,
) -> Result<Vec<StokesPoint>> {
    xs.par_iter().map(|&x| stokes_solve_green(f, x, t, opts)).collect()
}

/// `int_0^t int G*(x, y, t - tau) int_0^tau F(y, s) ds dy dtau` and the
/// pressure `int_0^t int P . F`, by a fixed product rule in space and a
/// triangular trapezoid rule in time whose inner accumulation is a running
/// prefix sum per spatial node.
fn published_reflected_part(
    f: &dyn SolenoidalForcing,
    x: [f64; 2],
    t: f64,
    opts: &GreenOptions,
) -> Result<([f64; 2], f64)> {
    let m = opts.time_nodes.max(2);
    let dt = t / m as f64;
    let taus: Vec<f64> = (0..=m).map(|k| k as f64 * dt).collect();
    let (mut lo1, mut hi1, mut hi2) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for &tau in &taus {
        for ft in f.features(tau) {
            lo1 = lo1.min(ft.center[0] - 10.0 * ft.scale);
            hi1 = hi1.max(ft.center[0] + 10.0 * ft.scale);
            hi2 = hi2.max(ft.center[1].abs() + 10.0 * ft.scale);
        }
    }
    if !lo1.is_finite() {
        return Ok(([0.0; 2], 0.0));
    }
    let (y1s, w1s) = fixed_rule(lo1, hi1, opts.space_panels);
    let (y2s, w2s) = fixed_rule(0.0, hi2, opts.space_panels);
    let mut nodes = Vec::with_capacity(y1s.len() * y2s.len());
    for (a, wa) in y1s.iter().zip(&w1s) {
        for (b, wb) in y2s.iter().zip(&w2s) {
            nodes.push(([*a, *b], wa * wb));
        }
    }
    let contrib: Vec<Result<[f64; 3]>> = nodes
        .par_iter()
        .map(|&(y, wy)| {
            let mut acc = [0.0; 2];
            let mut prev = f.value(y, 0.0);
            let mut out = [0.0; 3];
            for k in 1..=m {
                let cur = f.value(y, taus[k]);
                acc[0] += 0.5 * dt * (prev[0] + cur[0]);
                acc[1] += 0.5 * dt * (prev[1] + cur[1]);
                prev = cur;
                let s = t - taus[k];
                if s <= 0.0 {
                    continue;
                }
                let wt = if k == m { 0.5 * dt } else { dt };
                let (dg, og) = gstar_pair(x, y, s)?;
                out[0] += wt * wy * (dg * acc[0] + og * acc[1]);
                out[1] += wt * wy * (og * acc[0] + dg * acc[1]);
                out[2] += wt * wy * pressure_p(0, x, y, s)? * cur[0];
            }
            // tau = 0 carries no accumulated forcing; only the pressure term
            // sees F(y, 0)
            let f0 = f.value(y, 0.0);
            out[2] += 0.5 * dt * wy * pressure_p(0, x, y, t)? * f0[0];
            Ok(out)
        })
        .collect();
    let mut cols = [Vec::new(), Vec::new(), Vec::new()];
    for c in contrib {
        let c = c?;
        for k in 0..3 {
            cols[k].push(c[k]);
        }
    }
    Ok((
        [pairwise_sum(&cols[0]), pairwise_sum(&cols[1])],
        pairwise_sum(&cols[2]),
    ))
}

/// Grid and time stepping of the reflection route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionGrid {
    /// Nodes per side of the doubled square.
    pub n: usize,
    /// Half width of the doubled square `[-l, l)^2`.
    pub l: f64,
    /// Time panels on `[0, t]`; the forcing is linear in time on each.
    pub steps: usize,
}

/// Velocity on the doubled square.
#[derive(Debug)]
pub struct ReflectionField {
    pub spectral: Spectral2,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

impl ReflectionField {
    /// Velocity at node `(i, j)`.
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        let m = self.spectral.idx(i, j);
        [self.v1[m], self.v2[m]]
    }

    /// Node coordinates.
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.spectral.coord(i), self.spectral.coord(j)]
    }

    /// Largest violation of `v1` even / `v2` odd across `x2 = 0`.
    pub fn parity_defect(&self) -> f64 {
        let n = self.spectral.n;
        let mut d = 0.0f64;
        for j in 0..n / 2 {
            let jm = n - 1 - j;
            for i in 0..n {
                let a = self.at(i, j);
                let b = self.at(i, jm);
                d = d.max((a[0] - b[0]).abs()).max((a[1] + b[1]).abs());
            }
        }
        d
    }
}

/// `phi1(z) = (1 - e^-z) / z` and `psi(z) = (1 - e^-z - z e^-z) / z^2`.
fn etd_weights(z: f64) -> (f64, f64) {
    if z < 1e-3 {
        (1.0 - z / 2.0 + z * z / 6.0, 0.5 - z / 3.0 + z * z / 8.0)
    } else {
        let e = (-z).exp();
        ((1.0 - e) / z, (1.0 - e - z * e) / (z * z))
    }
}

/// Extends `f` (even `F1`, odd `F2`) onto the doubled square, Leray
/// projects, and propagates with the exact heat semigroup; the forcing is
/// interpolated linearly in time between `steps + 1` samples.
pub fn stokes_solve_reflection(f: &dyn SolenoidalForcing, grid: &ReflectionGrid, t: f64) -> Result<ReflectionField> {
    if !(t > 0.0) || grid.n < 8 || grid.n % 2 != 0 || grid.steps == 0 {
        return Err(Error::InvalidArgument("need t > 0, even n >= 8 and steps >= 1".into()));
    }
    let sp = Spectral2::new(grid.n, grid.l);
    let n = grid.n;
    let dt = t / grid.steps as f64;
    let sample = |tau: f64| -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let mut f1 = vec![0.0; n * n];
        let mut f2 = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let v = extended(f, [sp.coord(i), sp.coord(j)], tau, [1.0, -1.0]);
                f1[sp.idx(i, j)] = v[0];
                f2[sp.idx(i, j)] = v[1];
            }
        }
        let mut h1 = sp.forward(&f1);
        let mut h2 = sp.forward(&f2);
        let frac = sp.high_band_fraction(&h1).max(sp.high_band_fraction(&h2));
        if frac > 1e-12 {
            return Err(Error::GridResolutionTooCoarse {
                detail: format!("forcing keeps {frac:.3e} of its spectral energy in the top third at t = {tau}"),
            });
        }
        sp.leray(&mut h1, &mut h2);
        Ok((h1, h2))
    };
    let mut acc1 = vec![Complex64::new(0.0, 0.0); n * n];
    let mut acc2 = acc1.clone();
    let mut prev = sample(0.0)?;
    for step in 0..grid.steps {
        let t1 = (step + 1) as f64 * dt;
        let cur = sample(t1)?;
        for j in 0..n {
            for i in 0..n {
                let (k1, k2) = sp.wave(i, j);
                let kk = k1 * k1 + k2 * k2;
                let m = sp.idx(i, j);
                let decay = (-kk * (t - t1)).exp();
                let (p1, ps) = etd_weights(kk * dt);
                // the older sample weighs sigma / dt, sigma = t1 - tau
                let w_old = dt * ps * decay;
                let w_new = dt * (p1 - ps) * decay;
                acc1[m] += prev.0[m] * w_old + cur.0[m] * w_new;
                acc2[m] += prev.1[m] * w_old + cur.1[m] * w_new;
            }
        }
        prev = cur;
    }
    let v1 = sp.inverse(acc1);
    let v2 = sp.inverse(acc2);
    Ok(ReflectionField { spectral: sp, v1, v2 })
}

/// Vector field sampled on the doubled square (values for every node,
/// symmetric extension included).
#[derive(Debug)]
pub struct GridField {
    pub spectral: Spectral2,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

impl GridField {
    /// Samples `g` on the upper half and extends it evenly (`F1`) and
    /// oddly (`F2`).
    pub fn sample<G: Fn([f64; 2]) -> [f64; 2]>(n: usize, l: f64, g: G) -> Self {
        let sp = Spectral2::new(n, l);
        let mut f1 = vec![0.0; n * n];
        let mut f2 = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let x = [sp.coord(i), sp.coord(j)];
                let v = if x[1] >= 0.0 {
                    g(x)
                } else {
                    let w = g(reflect(x));
                    [w[0], -w[1]]
                };
                f1[sp.idx(i, j)] = v[0];
                f2[sp.idx(i, j)] = v[1];
            }
        }
        GridField { spectral: sp, f1, f2 }
    }

    /// Spectral divergence.
    pub fn divergence(&self) -> Vec<f64> {
        let a = self.spectral.derivative(&self.f1, 0);
        let b = self.spectral.derivative(&self.f2, 1);
        a.iter().zip(&b).map(|(p, q)| p + q).collect()
    }

    /// Largest nodal magnitude.
    pub fn sup(&self) -> f64 {
        self.f1.iter().zip(&self.f2).fold(0.0f64, |m, (a, b)| m.max(a.hypot(*b)))
    }

    /// Share of `int |F|` carried through the outer edge of the square.
    pub fn edge_flux_fraction(&self) -> f64 {
        let n = self.spectral.n;
        let h = self.spectral.h();
        let mut edge = 0.0;
        let mut total = 0.0;
        for j in 0..n {
            for i in 0..n {
                let m = self.spectral.idx(i, j);
                let a = self.f1[m].hypot(self.f2[m]);
                total += a * h * h;
                if i == 0 || i == n - 1 || j == 0 || j == n - 1 {
                    edge += a * h;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            edge / total
        }
    }
}

/// Tolerance on [`GridField::edge_flux_fraction`] for the projection.
pub const EDGE_FLUX_TOL: f64 = 1e-6;

/// Helmholtz projection onto divergence-free fields with vanishing normal
/// trace, computed spectrally on the reflected square: the even/odd
/// extension turns the Neumann problem of the half plane into a periodic
/// one, whose Leray projection restricts back to the half-plane projector.
pub fn helmholtz_project(field: &GridField) -> Result<GridField> {
    let flux = field.edge_flux_fraction();
    if flux > EDGE_FLUX_TOL {
        return Err(Error::DomainTooSmall { flux });
    }
    let sp = Spectral2::new(field.spectral.n, field.spectral.l);
    let mut h1 = sp.forward(&field.f1);
    let mut h2 = sp.forward(&field.f2);
    sp.leray(&mut h1, &mut h2);
    let f1 = sp.inverse(h1);
    let f2 = sp.inverse(h2);
    Ok(GridField { spectral: sp, f1, f2 })
}

/// Which pointwise bound a sample set is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// `|P_j| <~ t^-1 (|x - y*|^2 + t)^-1/2 exp(-c y2^2 / t)`.
    Pressure,
    /// `|G*_ij| <~ t^-1 (|x - y*|^2 + t)^-1 exp(-c y2^2 / t)`.
    Reflected,
}

impl BoundKind {
    fn power(self) -> f64 {
        match self {
            BoundKind::Pressure => 0.5,
            BoundKind::Reflected => 1.0,
        }
    }
}

/// Outcome of [`bound_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub kind: BoundKind,
    /// Least-squares fit `log|K| - log(base) = log C - c y2^2 / t`.
    pub ls_log_c: f64,
    pub ls_c: f64,
    /// Largest `c` in `[1/8, 1/4]` (step 1/64) whose bound passes.
    pub c: f64,
    /// Constant fitted on the training half of the samples at that `c`.
    pub constant: f64,
    /// Largest ratio `|K| / (C bound)` over all samples at that `c`.
    pub max_violation: f64,
    pub max_location: GreensEval,
    pub pass: bool,
}

/// Margin a held-out sample may exceed the fitted constant by.
pub const BOUND_MARGIN: f64 = 2.0;

/// Checks one of the pointwise kernel bounds.
///
/// The constant is fitted (as the largest ratio) on the even-indexed
/// samples and validated on the odd-indexed ones; the bound passes for a
/// given `c` when no held-out ratio exceeds [`BOUND_MARGIN`] times the
/// fitted constant. A ratio that is unbounded over the sampled region has
/// a heavy tail and trips the holdout, whereas a constant fitted on every
/// sample would cover them by construction.
pub fn bound_check(samples: &[GreensEval], kind: BoundKind) -> Result<BoundReport> {
    if samples.len() < 4 {
        return Err(Error::InvalidArgument("bound_check needs at least 4 samples".into()));
    }
    let vals: Vec<f64> = samples
        .par_iter()
        .map(|s| match kind {
            BoundKind::Pressure => pressure_p(s.j, s.x, s.y, s.t),
            BoundKind::Reflected => green_gstar(s.i, s.j, s.x, s.y, s.t),
        })
        .collect::<Result<_>>()?;
    // (|K|, log base without the Gaussian, y2^2 / t)
    let rows: Vec<(f64, f64, f64)> = samples
        .iter()
        .zip(&vals)
        .map(|(s, v)| {
            let r2 = s.dist_image().powi(2);
            (v.abs(), -s.t.ln() - kind.power() * (r2 + s.t).ln(), s.y[1] * s.y[1] / s.t)
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.0 > 0.0).map(|r| (r.2, r.0.ln() - r.1)).collect();
    let (ls_log_c, ls_c) = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        (my - slope * mx, -slope)
    } else {
        (f64::NEG_INFINITY, 0.0)
    };
    let log_ratio = |k: usize, c: f64| {
        let r = rows[k];
        if r.0 == 0.0 {
            f64::NEG_INFINITY
        } else {
            r.0.ln() - r.1 + c * r.2
        }
    };
    let mut best: Option<BoundReport> = None;
    let mut fallback: Option<BoundReport> = None;
    for step in 0..=8 {
        let c = 0.125 + step as f64 / 64.0;
        let log_c = (0..rows.len()).step_by(2).map(|k| log_ratio(k, c)).fold(f64::NEG_INFINITY, f64::max);
        let (mut worst, mut at) = (f64::NEG_INFINITY, 0);
        for k in 0..rows.len() {
            let lr = log_ratio(k, c) - log_c;
            if lr > worst {
                worst = lr;
                at = k;
            }
        }
        let report = BoundReport {
            kind,
            ls_log_c,
            ls_c,
            c,
            constant: log_c.exp(),
            max_violation: worst.exp(),
            max_location: samples[at],
            pass: log_c.is_finite() && worst.exp() <= BOUND_MARGIN,
        };
        if report.pass {
            best = Some(report);
        } else if fallback.is_none() {
            fallback = Some(report);
        }
    }
    Ok(best.or(fallback).expect("at least one c examined"))
}

/// Random samples spanning decades of `|x - y*|^2 / t` and `y2^2 / t`:
/// `t` log-uniform in `[1e-3, 1]`, `y2` log-uniform in `[1e-2 sqrt t, 4 sqrt t]`,
/// `x2` log-uniform in `[1e-2, 1]`, `x1 - y1` uniform in `[-2, 2]`.
pub fn random_samples(n: usize, seed: u64) -> Vec<GreensEval> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lu = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| (lo.ln() + rng.gen::<f64>() * (hi / lo).ln()).exp();
    (0..n)
        .map(|k| {
            let t = lu(1e-3, 1.0, &mut rng);
            let y2 = lu(1e-2 * t.sqrt(), 4.0 * t.sqrt(), &mut rng);
            let x2 = lu(1e-2, 1.0, &mut rng);
            let y1 = rng.gen_range(-1.0..1.0);
            let x1 = y1 + rng.gen_range(-2.0..2.0);
            GreensEval {
                x: [x1, x2],
                y: [y1, y2],
                t,
                i: k % 2,
                j: (k / 2) % 2,
            }
        })
        .collect()
}

/// Outcome of [`forced_velocity_bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedBoundReport {
    /// Constant fitted at the middle sampled time.
    pub constant: f64,
    /// `(t, largest ratio |v| (1 + |x - q| / lambda) / lambda^(nu - 1))`.
    pub per_time: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Checks `|v| <= C lambda^(nu-1) / (1 + |x - q| / lambda)` for the flow of
/// a concentrated forcing. At every time in `times` the velocity is sampled
/// at `x = q + rho lambda (cos theta, sin theta)`; `C` is fitted (largest
/// ratio) at the middle time and every other time must stay within
/// [`BOUND_MARGIN`] of it.
pub fn forced_velocity_bound(
    f: &ConcentratedForcing,
    times: &[f64],
    radii: &[f64],
    angles: &[f64],
    opts: &GreenOptions,
) -> Result<ForcedBoundReport> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("need at least one time".into()));
    }
    let mut per_time = Vec::with_capacity(times.len());
    for &t in times {
        let l = f.lambda(t);
        let mut pts = Vec::new();
        for &th in angles {
            for &rho in radii {
                pts.push(([f.q1 + rho * l * th.cos(), (rho * l * th.sin()).max(0.0)], rho));
            }
        }
        let xs: Vec<[f64; 2]> = pts.iter().map(|p| p.0).collect();
        let vs = stokes_solve_green_many(f, &xs, t, opts)?;
        let worst = vs
            .iter()
            .zip(&pts)
            .map(|(v, p)| v.v[0].hypot(v.v[1]) * (1.0 + p.1) / l.powf(f.nu - 1.0))
            .fold(0.0f64, f64::max);
        per_time.push((t, worst));
    }
    let constant = per_time[per_time.len() / 2].1;
    let pass = constant.is_finite() && per_time.iter().all(|p| p.1 <= BOUND_MARGIN * constant);
    Ok(ForcedBoundReport {
        constant,
        per_time,
        pass,
    })
}

/// Numerical and closed-form values of the Fourier-Laplace transform of
/// `2 Gamma(x, t)` in `(x1, t)`:
/// `int_0^inf e^{-st} sum_x1 h e^{-i xi x1} 2 Gamma(x1, x2, t) dt` versus
/// `exp(-sqrt(xi^2 + s) x2) / sqrt(xi^2 + s)`.
///
/// The `x1` transform is a trapezoid sum on a grid resolving the Gaussian;
/// the `t` transform is adaptive quadrature.
pub fn fourier_laplace_check(xi: f64, s: f64, x2: f64) -> Result<(f64, f64)> {
    if !(s > 0.0) || !(x2 > 0.0) {
        return Err(Error::InvalidArgument("need s > 0 and x2 > 0".into()));
    }
    let discrete = |t: f64| -> f64 {
        let st = t.sqrt();
        let h = st / 4.0;
        let m = (TRUNCATION * st / h).ceil() as i64;
        let mut terms = Vec::with_capacity(2 * m as usize + 1);
        for k in -m..=m {
            let x1 = k as f64 * h;
            terms.push(h * (xi * x1).cos() * 2.0 * heat_kernel([x1, x2], t));
        }
        pairwise_sum(&terms)
    };
    let scale = x2 * x2;
    let breaks: Vec<f64> = [0.0, 1e-3, 1e-2, 0.05, 0.25, 1.0, 4.0, 16.0].iter().map(|m| m * scale).collect();
    let opts = QuadOptions::with_tol(1e-13, 1e-10);
    let numeric = integrate_to_infinity(|t| if t <= 0.0 { 0.0 } else { (-s * t).exp() * discrete(t) }, &breaks, opts)?;
    let r = (xi * xi + s).sqrt();
    Ok((numeric, (-r * x2).exp() / r))
}

/// `int_{R^2} Gamma(x, t) dx` by polar quadrature (sanity check of the
/// normalization).
pub fn heat_kernel_mass(t: f64) -> Result<f64> {
    let st = t.sqrt();
    let breaks: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, TRUNCATION].iter().map(|m| m * st).collect();
    let radial = integrate_breaks(|r| 2.0 * PI * r * heat_kernel([r, 0.0], t), &breaks, QuadOptions::with_tol(1e-15, 1e-13))?;
    Ok(radial)
}
