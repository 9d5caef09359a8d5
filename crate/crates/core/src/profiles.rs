//! Bubble profiles, tangent frames, kernel functions and the linearized
//! harmonic-map operator in physical and Fourier-mode form.
//!
//! Every bubble is represented uniformly as `M * W2((x - c) / lambda)` where
//! `W2` is the degree-one interior profile and `M` is an orthogonal target
//! matrix: `Q_*` for a boundary bubble, `Q_omega` for an interior bubble and
//! `Q_omega * diag(-1, 1, 1)` for the mirror image of an interior bubble.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::grid::{fornberg_weights, Grid2};
use crate::quad::{integrate_to_infinity, QuadOptions};
use crate::vec3::{self, add, axpy, dot, mat_t_vec, mat_vec, scale, Mat3, Vec3, FLIP1, Q_STAR};

/// Distance (in bubble units) below which the polar angle is considered
/// undefined.
pub const CENTER_EPS: f64 = 1e-12;

/// Far-field value of the boundary profile, `Q_* (0, 0, 1)`.
pub const W1_INFINITY: Vec3 = [0.0, 1.0, 0.0];

/// `w(rho)` and the quantities derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WProfile {
    pub w: f64,
    pub w_rho: f64,
    pub sin_w: f64,
    pub cos_w: f64,
}

/// Angle profile `w = pi - 2 atan(rho)` of the degree-one bubble.
pub fn w_profile(rho: f64) -> WProfile {
    let d = 1.0 + rho * rho;
    let w_rho = -2.0 / d;
    WProfile {
        w: PI - 2.0 * rho.atan(),
        w_rho,
        sin_w: -rho * w_rho,
        cos_w: (rho * rho - 1.0) / d,
    }
}

/// A unit vector in the target sphere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction3(Vec3);

impl Direction3 {
    /// Normalizes `v`; returns `None` for a zero or non-finite vector.
    pub fn normalize(v: Vec3) -> Option<Self> {
        let n = vec3::norm(v);
        if n > 0.0 && n.is_finite() {
            Some(Direction3(scale(1.0 / n, v)))
        } else {
            None
        }
    }

    /// Wraps a vector already known to be unit length.
    pub fn from_unit(v: Vec3) -> Self {
        debug_assert!((vec3::norm(v) - 1.0).abs() < 1e-10);
        Direction3(v)
    }

    pub fn components(&self) -> Vec3 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BubbleKind {
    Boundary,
    Interior,
    /// Mirror image across `x2 = 0` of an interior bubble; `xi` stores the
    /// interior partner's center.
    ReflectedInterior,
}

/// Modulation state of one bubble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BubbleSpec {
    pub kind: BubbleKind,
    pub lambda: f64,
    pub omega: f64,
    pub xi: [f64; 2],
}

impl BubbleSpec {
    pub fn boundary(lambda: f64, xi1: f64) -> Self {
        BubbleSpec {
            kind: BubbleKind::Boundary,
            lambda,
            omega: 0.0,
            xi: [xi1, 0.0],
        }
    }

    pub fn interior(lambda: f64, omega: f64, xi: [f64; 2]) -> Self {
        BubbleSpec {
            kind: BubbleKind::Interior,
            lambda,
            omega,
            xi,
        }
    }

    /// The mirror partner of an interior bubble.
    pub fn reflected(&self) -> Self {
        BubbleSpec {
            kind: BubbleKind::ReflectedInterior,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda = {} must be positive", self.lambda)));
        }
        match self.kind {
            BubbleKind::Boundary if self.xi[1] != 0.0 => Err(Error::InvalidArgument(
                "boundary bubble must sit on x2 = 0".into(),
            )),
            BubbleKind::Interior | BubbleKind::ReflectedInterior if self.xi[1] <= 0.0 => Err(
                Error::InvalidArgument("interior bubble needs xi2 > 0".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Target matrix `M` with `U(x) = M W2(y)`.
    pub fn target_matrix(&self) -> Mat3 {
        match self.kind {
            BubbleKind::Boundary => Q_STAR,
            BubbleKind::Interior => vec3::q_omega(self.omega),
            BubbleKind::ReflectedInterior => vec3::mat_mul(&vec3::q_omega(self.omega), &FLIP1),
        }
    }

    /// Point about which the profile is centred (`xi*` for a mirror image).
    pub fn center(&self) -> [f64; 2] {
        match self.kind {
            BubbleKind::ReflectedInterior => [self.xi[0], -self.xi[1]],
            _ => self.xi,
        }
    }

    pub fn profile(&self) -> Profile {
        Profile {
            m: self.target_matrix(),
            center: self.center(),
            lambda: self.lambda,
        }
    }

    /// Local coordinate `y = (x - center) / lambda`.
    pub fn local(&self, x: [f64; 2]) -> [f64; 2] {
        self.profile().local(x)
    }
}

/// `M W2((x - center) / lambda)` with an arbitrary orthogonal `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub m: Mat3,
    pub center: [f64; 2],
    pub lambda: f64,
}

/// The interior profile `W2(y)`.
#[inline]
pub fn w2(y: [f64; 2]) -> Vec3 {
    let r2 = y[0] * y[0] + y[1] * y[1];
    let d = 1.0 + r2;
    [2.0 * y[0] / d, 2.0 * y[1] / d, (r2 - 1.0) / d]
}

/// `[dW2/dy1, dW2/dy2]`.
#[inline]
pub fn w2_jacobian(y: [f64; 2]) -> [Vec3; 2] {
    let r2 = y[0] * y[0] + y[1] * y[1];
    let d = 1.0 + r2;
    let d2 = d * d;
    let mut out = [[0.0; 3]; 2];
    for (k, col) in out.iter_mut().enumerate() {
        for i in 0..2 {
            let delta = if i == k { 1.0 } else { 0.0 };
            col[i] = 2.0 * delta / d - 4.0 * y[i] * y[k] / d2;
        }
        col[2] = 4.0 * y[k] / d2;
    }
    out
}

/// `(E1, E2)` of the interior profile at local polar coordinates.
#[inline]
fn frame_w2(cos_t: f64, sin_t: f64, wp: &WProfile) -> [Vec3; 2] {
    [
        [cos_t * wp.cos_w, sin_t * wp.cos_w, -wp.sin_w],
        [-sin_t, cos_t, 0.0],
    ]
}

impl Profile {
    #[inline]
    pub fn local(&self, x: [f64; 2]) -> [f64; 2] {
        [(x[0] - self.center[0]) / self.lambda, (x[1] - self.center[1]) / self.lambda]
    }

    /// Local polar data `(rho, cos theta, sin theta)`.
    #[inline]
    pub fn polar(&self, x: [f64; 2]) -> Result<(f64, f64, f64)> {
        let y = self.local(x);
        let rho = y[0].hypot(y[1]);
        if rho < CENTER_EPS {
            return Err(Error::CenterSingular { dist: rho * self.lambda });
        }
        Ok((rho, y[0] / rho, y[1] / rho))
    }

    #[inline]
    pub fn value(&self, x: [f64; 2]) -> Vec3 {
        mat_vec(&self.m, w2(self.local(x)))
    }

    /// `[dU/dx1, dU/dx2]`.
    #[inline]
    pub fn jacobian(&self, x: [f64; 2]) -> [Vec3; 2] {
        let j = w2_jacobian(self.local(x));
        let s = 1.0 / self.lambda;
        [scale(s, mat_vec(&self.m, j[0])), scale(s, mat_vec(&self.m, j[1]))]
    }

    /// `|grad U|^2 = 8 / (lambda^2 (1 + |y|^2)^2)`.
    #[inline]
    pub fn grad_sq(&self, x: [f64; 2]) -> f64 {
        let y = self.local(x);
        let d = 1.0 + y[0] * y[0] + y[1] * y[1];
        8.0 / (self.lambda * self.lambda * d * d)
    }

    /// Rotated Frenet frame `(M E1, M E2)`.
    pub fn frame(&self, x: [f64; 2]) -> Result<[Vec3; 2]> {
        let (rho, c, s) = self.polar(x)?;
        let f = frame_w2(c, s, &w_profile(rho));
        Ok([mat_vec(&self.m, f[0]), mat_vec(&self.m, f[1])])
    }
}

/// The bubble `U(x)` of a single spec.
pub fn bubble(spec: &BubbleSpec, x: [f64; 2]) -> Direction3 {
    Direction3::from_unit(spec.profile().value(x))
}

/// Orthonormal tangent frame `(E1, E2)` at `x`.
pub fn frame(spec: &BubbleSpec, x: [f64; 2]) -> Result<(Direction3, Direction3)> {
    let f = spec.profile().frame(x)?;
    Ok((Direction3::from_unit(f[0]), Direction3::from_unit(f[1])))
}

/// Coefficients on the Frenet frame at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub c1: f64,
    pub c2: f64,
}

impl TangentVector {
    pub fn reconstruct(&self, frame: &[Vec3; 2]) -> Vec3 {
        add(scale(self.c1, frame[0]), scale(self.c2, frame[1]))
    }
}

/// Kernel `Z_{p,q}` of the linearized operator at local coordinate `y`,
/// mapped to the target by the bubble's matrix.
pub fn kernel_z(p: i32, q: u8, spec: &BubbleSpec, y: [f64; 2]) -> Result<Vec3> {
    let rho = y[0].hypot(y[1]);
    if rho < CENTER_EPS {
        return Err(Error::CenterSingular { dist: rho * spec.lambda });
    }
    let (c, s) = (y[0] / rho, y[1] / rho);
    let wp = w_profile(rho);
    let [e1, e2] = frame_w2(c, s, &wp);
    let (amp, a1, a2) = match (p, q) {
        (0, 1) => (rho * wp.w_rho, 1.0, 0.0),
        (0, 2) => (rho * wp.w_rho, 0.0, 1.0),
        (1, 1) => (wp.w_rho, c, s),
        (1, 2) => (wp.w_rho, s, -c),
        (-1, 1) => (rho * rho * wp.w_rho, c, -s),
        (-1, 2) => (rho * rho * wp.w_rho, s, c),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "kernel index (p, q) = ({p}, {q}) out of range"
            )))
        }
    };
    let z = scale(amp, add(scale(a1, e1), scale(a2, e2)));
    Ok(mat_vec(&spec.target_matrix(), z))
}

/// All six `(p, q)` kernel indices.
pub const KERNEL_INDICES: [(i32, u8); 6] = [(0, 1), (0, 2), (1, 1), (1, 2), (-1, 1), (-1, 2)];

/// Radial kernel of the mode operator for `k` in `{-1, 0, 1}`.
///
/// # Panics
/// On any other `k`.
pub fn mode_kernel(k: i32, rho: f64) -> f64 {
    let d = 1.0 + rho * rho;
    match k {
        0 => rho / d,
        1 => 1.0 / d,
        -1 => 2.0 * rho * rho / d,
        _ => panic!("mode kernel defined for k in {{-1, 0, 1}}, got {k}"),
    }
}

/// Potential `k^2 + 2k cos w + cos 2w` of the mode operator.
pub fn mode_potential(k: i32, rho: f64) -> f64 {
    let cw = w_profile(rho).cos_w;
    let kf = k as f64;
    kf * kf + 2.0 * kf * cw + (2.0 * cw * cw - 1.0)
}

/// Complex radial function at Fourier mode `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFunction {
    pub k: i32,
    pub rho_mesh: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl ModeFunction {
    pub fn new(k: i32, rho_mesh: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if rho_mesh.len() != values.len() {
            return Err(Error::InvalidArgument("mesh and value lengths differ".into()));
        }
        if rho_mesh.windows(2).any(|w| w[1] <= w[0]) || rho_mesh.first().is_some_and(|r| *r <= 0.0) {
            return Err(Error::InvalidArgument("rho mesh must be positive and strictly increasing".into()));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("mode values must be finite".into()));
        }
        Ok(ModeFunction { k, rho_mesh, values })
    }

    pub fn from_real<F: Fn(f64) -> f64>(k: i32, rho_mesh: Vec<f64>, f: F) -> Result<Self> {
        let values = rho_mesh.iter().map(|&r| Complex64::new(f(r), 0.0)).collect();
        ModeFunction::new(k, rho_mesh, values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// `phi'' + phi'/rho - (k^2 + 2k cos w + cos 2w) phi / rho^2` with
/// five-point finite differences on the (possibly non-uniform) mesh,
/// one-sided at the ends.
pub fn mode_operator_apply(k: i32, phi: &ModeFunction) -> Result<ModeFunction> {
    let n = phi.rho_mesh.len();
    if n < 5 {
        return Err(Error::MeshTooCoarse { nodes: n, required: 5 });
    }
    let r = &phi.rho_mesh;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let s = i.saturating_sub(2).min(n - 5);
        let w = fornberg_weights(r[i], &r[s..s + 5], 2);
        let mut d1 = Complex64::new(0.0, 0.0);
        let mut d2 = Complex64::new(0.0, 0.0);
        for m in 0..5 {
            d1 += phi.values[s + m] * w[1][m];
            d2 += phi.values[s + m] * w[2][m];
        }
        let v = mode_potential(k, r[i]);
        out.push(d2 + d1 / r[i] - phi.values[i] * (v / (r[i] * r[i])));
    }
    Ok(ModeFunction {
        k: phi.k,
        rho_mesh: phi.rho_mesh.clone(),
        values: out,
    })
}

/// Projection onto the tangent plane at `u`.
#[inline]
pub fn project_tangent(u: Vec3, v: Vec3) -> Vec3 {
    axpy(v, -dot(v, u), u)
}

/// `L_U[phi] = Lap phi + |grad U|^2 phi + 2 (grad U . grad phi) U` at interior
/// grid nodes, with analytic `U` and five-point differences of `phi`.
/// Border nodes of the output are zero.
pub fn linearized_apply(spec: &BubbleSpec, grid: &Grid2, phi: &[Vec3]) -> Result<Vec<Vec3>> {
    if phi.len() != grid.len() {
        return Err(Error::InvalidArgument("field size does not match grid".into()));
    }
    let prof = spec.profile();
    let mut max_dot = 0.0f64;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let u = prof.value(grid.point(i, j));
            max_dot = max_dot.max(dot(u, phi[grid.idx(i, j)]).abs());
        }
    }
    if max_dot > 1e-10 {
        return Err(Error::TangencyViolated { max_dot });
    }
    let mut out = vec![[0.0; 3]; grid.len()];
    for j in 1..grid.ny.saturating_sub(1) {
        for i in 1..grid.nx - 1 {
            let x = grid.point(i, j);
            let u = prof.value(x);
            let du = prof.jacobian(x);
            let dphi = grid.grad3(phi, i, j);
            let lap = grid.lap3(phi, i, j);
            let coupling = dot(du[0], dphi[0]) + dot(du[1], dphi[1]);
            let p = phi[grid.idx(i, j)];
            out[grid.idx(i, j)] = axpy(axpy(lap, prof.grad_sq(x), p), 2.0 * coupling, u);
        }
    }
    Ok(out)
}

/// `[L~]_0`, `[L~]_1`, `[L~]_2` and their sum at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeLParts {
    pub parts: [Vec3; 3],
    pub total: Vec3,
}

fn sum_parts(parts: [Vec3; 3]) -> TildeLParts {
    TildeLParts {
        parts,
        total: add(add(parts[0], parts[1]), parts[2]),
    }
}

/// Mode split for an interior-type bubble with rotation `omega` acting on
/// `Phi` with derivatives `d = [dPhi/dx1, dPhi/dx2]`; `e` is the rotated frame.
#[allow(clippy::too_many_arguments)]
fn interior_split(lambda: f64, rho: f64, c: f64, s: f64, omega: f64, e: [Vec3; 2], d: [Vec3; 2]) -> [Vec3; 3] {
    let wp = w_profile(rho);
    let a = rho * wp.w_rho * wp.w_rho / lambda;
    let b = 2.0 * wp.w_rho * wp.cos_w / lambda;
    let (so, co) = omega.sin_cos();
    // e^{-i omega} phi and e^{i omega} conj(phi), differentiated componentwise.
    let da1 = |k: usize| co * d[k][0] + so * d[k][1];
    let da2 = |k: usize| co * d[k][1] - so * d[k][0];
    let db1 = |k: usize| co * d[k][0] + so * d[k][1];
    let db2 = |k: usize| so * d[k][0] - co * d[k][1];
    let div_a = da1(0) + da2(1);
    let curl_a = da2(0) - da1(1);
    let div_b = db1(0) + db2(1);
    let curl_b = db2(0) - db1(1);
    let (c2, s2) = (c * c - s * s, 2.0 * s * c);
    let p0 = add(scale(a * div_a, e[0]), scale(a * curl_a, e[1]));
    let p1 = add(
        scale(-b * (d[0][2] * c + d[1][2] * s), e[0]),
        scale(-b * (d[0][2] * s - d[1][2] * c), e[1]),
    );
    let p2 = add(
        scale(a * (div_b * c2 - curl_b * s2), e[0]),
        scale(a * (div_b * s2 + curl_b * c2), e[1]),
    );
    [p0, p1, p2]
}

/// Mode split for the boundary bubble.
fn boundary_split(lambda: f64, rho: f64, c: f64, s: f64, e: [Vec3; 2], d: [Vec3; 2]) -> [Vec3; 3] {
    let wp = w_profile(rho);
    let a = rho * wp.w_rho * wp.w_rho / lambda;
    let b = 2.0 * wp.w_rho * wp.cos_w / lambda;
    let (c2, s2) = (c * c - s * s, 2.0 * s * c);
    let [d1, d2] = d;
    let p0 = add(scale(a * (d1[0] + d2[2]), e[0]), scale(a * (d1[2] - d2[0]), e[1]));
    let p1 = add(
        scale(-b * (d1[1] * c + d2[1] * s), e[0]),
        scale(b * (d2[1] * c - d1[1] * s), e[1]),
    );
    let p2 = add(
        scale(a * ((d2[0] + d1[2]) * s2 + (d1[0] - d2[2]) * c2), e[0]),
        scale(a * ((d1[0] - d2[2]) * s2 - (d2[0] + d1[2]) * c2), e[1]),
    );
    [p0, p1, p2]
}

/// `L~_U[Phi]` split into its mode-0, mode-1 and mode-2 parts, given `Phi`'s
/// Jacobian `dphi = [dPhi/dx1, dPhi/dx2]` at `x`. Only first derivatives of
/// `Phi` enter, since the zeroth-order terms cancel for a conformal `U`.
pub fn tilde_l_split(spec: &BubbleSpec, x: [f64; 2], dphi: [Vec3; 2]) -> Result<TildeLParts> {
    let prof = spec.profile();
    let (rho, c, s) = prof.polar(x)?;
    let e = prof.frame(x)?;
    let parts = match spec.kind {
        BubbleKind::Boundary => boundary_split(spec.lambda, rho, c, s, e, dphi),
        BubbleKind::Interior => interior_split(spec.lambda, rho, c, s, spec.omega, e, dphi),
        BubbleKind::ReflectedInterior => {
            // Pull back by M, apply the unrotated interior split, push forward.
            let m = prof.m;
            let d = [mat_t_vec(&m, dphi[0]), mat_t_vec(&m, dphi[1])];
            interior_split(spec.lambda, rho, c, s, 0.0, e, d)
        }
    };
    Ok(sum_parts(parts))
}

/// Polar form `-(2/lambda) w_rho [(d_r Phi . U) E1 - (1/r)(d_theta Phi . U) E2]`.
pub fn tilde_l_polar(spec: &BubbleSpec, x: [f64; 2], dphi: [Vec3; 2]) -> Result<Vec3> {
    let prof = spec.profile();
    let (rho, c, s) = prof.polar(x)?;
    let e = prof.frame(x)?;
    let u = prof.value(x);
    let dr = dot(add(scale(c, dphi[0]), scale(s, dphi[1])), u);
    let dt = dot(add(scale(-s, dphi[0]), scale(c, dphi[1])), u);
    let k = -2.0 * w_profile(rho).w_rho / spec.lambda;
    Ok(add(scale(k * dr, e[0]), scale(-k * dt, e[1])))
}

/// Defining form `|grad U|^2 Pi Phi - 2 grad(Phi . U) grad U`.
pub fn tilde_l_definition(spec: &BubbleSpec, x: [f64; 2], phi: Vec3, dphi: [Vec3; 2]) -> Vec3 {
    let prof = spec.profile();
    let u = prof.value(x);
    let du = prof.jacobian(x);
    let mut out = scale(prof.grad_sq(x), project_tangent(u, phi));
    for k in 0..2 {
        let g = dot(dphi[k], u) + dot(phi, du[k]);
        out = axpy(out, -2.0 * g, du[k]);
    }
    out
}

/// `L~_U` for the radial field `Phi = (phi(r) e^{i theta}, 0)` about an
/// interior bubble: `(2/lambda) rho w_rho^2 [Re(e^{-i omega} phi') Q E1 +
/// (1/r) Im(e^{-i omega} phi) Q E2]`.
pub fn tilde_l_radial(spec: &BubbleSpec, r: f64, theta: f64, phi: Complex64, dphi: Complex64) -> Result<Vec3> {
    if spec.kind != BubbleKind::Interior {
        return Err(Error::InvalidArgument("radial formula applies to interior bubbles".into()));
    }
    let rho = r / spec.lambda;
    let x = [spec.xi[0] + r * theta.cos(), spec.xi[1] + r * theta.sin()];
    let e = spec.profile().frame(x)?;
    let wp = w_profile(rho);
    let rot = Complex64::from_polar(1.0, -spec.omega);
    let k = 2.0 * rho * wp.w_rho * wp.w_rho / spec.lambda;
    Ok(add(scale(k * (rot * dphi).re, e[0]), scale(k * (rot * phi).im / r, e[1])))
}

/// Grid evaluation of `L~_U[Phi]`; `parts` is filled when `split` is set.
#[derive(Debug, Clone)]
pub struct TildeLField {
    pub total: Vec<Vec3>,
    pub parts: Option<[Vec<Vec3>; 3]>,
}

/// Applies `L~_U` to a grid field using central differences; border nodes of
/// the output are zero.
pub fn tilde_l_apply(spec: &BubbleSpec, grid: &Grid2, phi: &[Vec3], split: bool) -> Result<TildeLField> {
    if phi.len() != grid.len() {
        return Err(Error::InvalidArgument("field size does not match grid".into()));
    }
    let n = grid.len();
    let mut total = vec![[0.0; 3]; n];
    let mut parts = if split {
        Some([vec![[0.0; 3]; n], vec![[0.0; 3]; n], vec![[0.0; 3]; n]])
    } else {
        None
    };
    for j in 1..grid.ny.saturating_sub(1) {
        for i in 1..grid.nx - 1 {
            let id = grid.idx(i, j);
            let r = tilde_l_split(spec, grid.point(i, j), grid.grad3(phi, i, j))?;
            total[id] = r.total;
            if let Some(p) = parts.as_mut() {
                for m in 0..3 {
                    p[m][id] = r.parts[m];
                }
            }
        }
    }
    Ok(TildeLField { total, parts })
}

/// Multi-bubble ansatz families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnsatzConfig {
    /// One boundary and one interior bubble, `U1 + U2 - U2*`.
    TwoBubble,
    AllInterior,
    AllBoundary,
    Mixed,
}

/// The ansatz written as `offset + sum_i sign_i * profile_i`.
#[derive(Debug, Clone)]
pub struct Ansatz {
    pub terms: Vec<(f64, Profile)>,
    pub offset: Vec3,
}

impl Ansatz {
    pub fn build(bubbles: &[BubbleSpec], config: AnsatzConfig) -> Result<Self> {
        for b in bubbles {
            b.validate()?;
            if b.kind == BubbleKind::ReflectedInterior {
                return Err(Error::ConfigMismatch(
                    "mirror images are generated automatically; pass interior bubbles only".into(),
                ));
            }
        }
        let nb = bubbles.iter().filter(|b| b.kind == BubbleKind::Boundary).count();
        let ni = bubbles.len() - nb;
        let w1 = |b: &BubbleSpec, center: [f64; 2]| Profile {
            m: vec3::mat_mul(&vec3::q_omega(b.omega), &Q_STAR),
            center,
            lambda: b.lambda,
        };
        let mirror = |b: &BubbleSpec| [b.xi[0], -b.xi[1]];
        let mut terms = Vec::new();
        let mut offset = [0.0; 3];
        match config {
            AnsatzConfig::TwoBubble => {
                if nb != 1 || ni != 1 {
                    return Err(Error::ConfigMismatch(format!(
                        "two-bubble ansatz needs one boundary and one interior bubble, got {nb} and {ni}"
                    )));
                }
                for b in bubbles {
                    terms.push((1.0, b.profile()));
                    if b.kind == BubbleKind::Interior {
                        terms.push((-1.0, b.reflected().profile()));
                    }
                }
            }
            AnsatzConfig::AllInterior => {
                if nb != 0 || ni == 0 {
                    return Err(Error::ConfigMismatch("all-interior ansatz needs interior bubbles only".into()));
                }
                for b in bubbles {
                    terms.push((1.0, w1(b, b.xi)));
                    terms.push((1.0, w1(b, mirror(b))));
                }
                offset = scale(-(2.0 * ni as f64 - 1.0), W1_INFINITY);
            }
            AnsatzConfig::AllBoundary => {
                if ni != 0 || nb == 0 {
                    return Err(Error::ConfigMismatch("all-boundary ansatz needs boundary bubbles only".into()));
                }
                for b in bubbles {
                    terms.push((1.0, b.profile()));
                }
                offset = scale(-(nb as f64 - 1.0), W1_INFINITY);
            }
            AnsatzConfig::Mixed => {
                if nb == 0 || ni == 0 {
                    return Err(Error::ConfigMismatch(
                        "mixed ansatz needs at least one boundary and one interior bubble".into(),
                    ));
                }
                offset = scale(-(nb as f64 - 1.0), W1_INFINITY);
                for b in bubbles {
                    if b.kind == BubbleKind::Boundary {
                        terms.push((1.0, b.profile()));
                    } else {
                        terms.push((1.0, w1(b, b.xi)));
                        terms.push((1.0, w1(b, mirror(b))));
                        let far = mat_vec(&vec3::q_omega(b.omega), W1_INFINITY);
                        offset = axpy(offset, -2.0, far);
                    }
                }
            }
        }
        Ok(Ansatz { terms, offset })
    }

    pub fn value(&self, x: [f64; 2]) -> Vec3 {
        self.terms
            .iter()
            .fold(self.offset, |acc, (s, p)| axpy(acc, *s, p.value(x)))
    }

    pub fn jacobian(&self, x: [f64; 2]) -> [Vec3; 2] {
        let mut out = [[0.0; 3]; 2];
        for (s, p) in &self.terms {
            let j = p.jacobian(x);
            out[0] = axpy(out[0], *s, j[0]);
            out[1] = axpy(out[1], *s, j[1]);
        }
        out
    }
}

/// Evaluates the multi-bubble ansatz at `x`. The result is close to, but not
/// exactly, unit length where bubbles interact.
pub fn ansatz_u_star(bubbles: &[BubbleSpec], x: [f64; 2], config: AnsatzConfig) -> Result<Vec3> {
    Ok(Ansatz::build(bubbles, config)?.value(x))
}

/// Tangent field `(c1, c2)` sampled on a polar mesh, `theta_j = 2 pi j / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarField {
    pub rho: Vec<f64>,
    pub ntheta: usize,
    /// Row-major in `(rho, theta)`.
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl PolarField {
    pub fn from_fn<F: Fn(f64, f64) -> (f64, f64)>(rho: Vec<f64>, ntheta: usize, f: F) -> Self {
        let mut c1 = Vec::with_capacity(rho.len() * ntheta);
        let mut c2 = Vec::with_capacity(rho.len() * ntheta);
        for &r in &rho {
            for j in 0..ntheta {
                let (a, b) = f(r, 2.0 * PI * j as f64 / ntheta as f64);
                c1.push(a);
                c2.push(b);
            }
        }
        PolarField { rho, ntheta, c1, c2 }
    }

    pub fn theta(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.ntheta as f64
    }
}

/// Geometric radial mesh from `rho_min` to at least `rho_max` with ratio `q`.
pub fn geometric_mesh(rho_min: f64, rho_max: f64, q: f64) -> Vec<f64> {
    let mut v = vec![rho_min];
    while *v.last().unwrap() < rho_max {
        let next = v.last().unwrap() * q;
        v.push(next);
    }
    v
}

fn mode_spectra(field: &PolarField) -> Vec<Vec<Complex64>> {
    let n = field.ntheta;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let inv_n = 1.0 / n as f64;
    (0..field.rho.len())
        .map(|ir| {
            let mut buf: Vec<Complex64> = (0..n)
                .map(|j| Complex64::new(field.c1[ir * n + j], field.c2[ir * n + j]))
                .collect();
            fft.process(&mut buf);
            buf.iter_mut().for_each(|z| *z *= inv_n);
            buf
        })
        .collect()
}

fn mode_range(n: usize, kmax: usize) -> Vec<i32> {
    let kk = kmax.min(n / 2) as i32;
    let lo = if n % 2 == 0 && kk as usize == n / 2 { -kk + 1 } else { -kk };
    (lo..=kk).collect()
}

/// Fourier modes `h_k(rho)` of `c1 + i c2 = sum_k h_k(rho) e^{i k theta}` for
/// `|k| <= kmax`, without the aliasing check.
pub fn fourier_decompose_unchecked(field: &PolarField, kmax: usize) -> Vec<ModeFunction> {
    let n = field.ntheta;
    let spectra = mode_spectra(field);
    mode_range(n, kmax)
        .into_iter()
        .map(|k| {
            let bin = k.rem_euclid(n as i32) as usize;
            ModeFunction {
                k,
                rho_mesh: field.rho.clone(),
                values: spectra.iter().map(|s| s[bin]).collect(),
            }
        })
        .collect()
}

/// As [`fourier_decompose_unchecked`], failing with `AliasWarning` when more
/// than 1% of the energy sits in modes above `kmax`.
pub fn fourier_decompose(field: &PolarField, kmax: usize) -> Result<Vec<ModeFunction>> {
    let n = field.ntheta;
    let spectra = mode_spectra(field);
    let kept: std::collections::HashSet<usize> = mode_range(n, kmax)
        .into_iter()
        .map(|k| k.rem_euclid(n as i32) as usize)
        .collect();
    let (mut all, mut lost) = (0.0, 0.0);
    for s in &spectra {
        for (b, z) in s.iter().enumerate() {
            all += z.norm_sqr();
            if !kept.contains(&b) {
                lost += z.norm_sqr();
            }
        }
    }
    if all > 0.0 && lost > 0.01 * all {
        return Err(Error::AliasWarning { fraction: lost / all });
    }
    Ok(fourier_decompose_unchecked(field, kmax))
}

/// Inverse of [`fourier_decompose`] on an `ntheta`-point angular mesh.
pub fn fourier_synthesize(modes: &[ModeFunction], ntheta: usize) -> Result<PolarField> {
    let rho = modes
        .first()
        .map(|m| m.rho_mesh.clone())
        .ok_or_else(|| Error::InvalidArgument("no modes to synthesize".into()))?;
    let fft = FftPlanner::new().plan_fft_inverse(ntheta);
    let mut c1 = vec![0.0; rho.len() * ntheta];
    let mut c2 = vec![0.0; rho.len() * ntheta];
    for ir in 0..rho.len() {
        let mut buf = vec![Complex64::new(0.0, 0.0); ntheta];
        for m in modes {
            if m.rho_mesh.len() != rho.len() {
                return Err(Error::InvalidArgument("modes live on different meshes".into()));
            }
            buf[m.k.rem_euclid(ntheta as i32) as usize] += m.values[ir];
        }
        fft.process(&mut buf);
        for j in 0..ntheta {
            c1[ir * ntheta + j] = buf[j].re;
            c2[ir * ntheta + j] = buf[j].im;
        }
    }
    Ok(PolarField { rho, ntheta, c1, c2 })
}

/// Radial breakpoints for integrals of the profile over `[0, inf)`.
fn radial_breaks() -> Vec<f64> {
    let mut b = vec![0.0];
    let mut x = 1e-3;
    while x < 1e3 {
        b.push(x);
        x *= 4.0;
    }
    b
}

fn radial_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-12,
        max_intervals: 4000,
    }
}

/// Dirichlet energy of the bubble, `2 pi int (w_rho^2 + sin^2 w / rho^2) rho drho`.
pub fn bubble_energy() -> Result<f64> {
    let f = |rho: f64| {
        let wp = w_profile(rho);
        // sin w / rho = -w_rho, written without the division
        2.0 * PI * rho * 2.0 * wp.w_rho * wp.w_rho
    };
    integrate_to_infinity(f, &radial_breaks(), radial_opts())
}

/// The moments `int rho w_rho^2` and `int cos w w_rho^2 rho` over `(0, inf)`.
pub fn profile_moments() -> Result<[f64; 2]> {
    let m1 = integrate_to_infinity(|r| r * w_profile(r).w_rho.powi(2), &radial_breaks(), radial_opts())?;
    let m2 = integrate_to_infinity(
        |r| {
            let wp = w_profile(r);
            wp.cos_w * wp.w_rho * wp.w_rho * r
        },
        &radial_breaks(),
        radial_opts(),
    )?;
    Ok([m1, m2])
}

/// Sup norm of `L_W[Z_{p,q}]` on the unit bubble over `[-2, 2]^2` with
/// spacing `h` (nodes offset from the center).
pub fn kernel_residual(p: i32, q: u8, h: f64) -> Result<f64> {
    let spec = BubbleSpec::interior(1.0, 0.0, [0.0, 1.0]);
    let g = Grid2::square_staggered(-2.0, 2.0, h);
    let g = Grid2 { y0: g.y0 + 1.0, ..g };
    let mut phi = Vec::with_capacity(g.len());
    for j in 0..g.ny {
        for i in 0..g.nx {
            phi.push(kernel_z(p, q, &spec, spec.local(g.point(i, j)))?);
        }
    }
    let res = linearized_apply(&spec, &g, &phi)?;
    Ok(res.iter().fold(0.0, |m, v| m.max(vec3::norm(*v))))
}

/// Kernel residuals on a sequence of spacings and the fitted convergence
/// order of each kernel, in [`KERNEL_INDICES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStudy {
    pub spacings: Vec<f64>,
    pub residuals: Vec<[f64; 6]>,
    pub orders: [f64; 6],
}

pub fn kernel_annihilation_study(spacings: &[f64]) -> Result<KernelStudy> {
    if spacings.len() < 2 {
        return Err(Error::InvalidArgument("at least two spacings are needed".into()));
    }
    let mut residuals = Vec::new();
    for &h in spacings {
        let mut r = [0.0; 6];
        for (slot, (p, q)) in r.iter_mut().zip(KERNEL_INDICES) {
            *slot = kernel_residual(p, q, h)?;
        }
        residuals.push(r);
    }
    let lx: Vec<f64> = spacings.iter().map(|h| h.ln()).collect();
    let mut orders = [0.0; 6];
    for (k, o) in orders.iter_mut().enumerate() {
        let ly: Vec<f64> = residuals.iter().map(|r| r[k].ln()).collect();
        *o = slope(&lx, &ly);
    }
    Ok(KernelStudy {
        spacings: spacings.to_vec(),
        residuals,
        orders,
    })
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Sup norm of the mode operator applied to its kernel on a uniform mesh of
/// spacing `h` over `[0.5, 2.5]`.
pub fn mode_kernel_residual(k: i32, h: f64) -> Result<f64> {
    let n = (2.0 / h).round() as usize;
    let mesh: Vec<f64> = (0..=n).map(|i| 0.5 + i as f64 * h).collect();
    let m = ModeFunction::from_real(k, mesh, |r| mode_kernel(k, r))?;
    Ok(mode_operator_apply(k, &m)?.sup_norm())
}
