//! Nonlocal mode-0 correction `Phi_0`, its kernel `K`, and the error terms
//! `R_0`, `R_1`, `K_01`, `K_02`, `K_1` it generates.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::profiles::{w_profile, BubbleKind, BubbleSpec, TangentVector};
use crate::quad::{graded_breaks, integrate_vec_breaks, QuadOptions};

/// Below this value of `a = z^2 / 4t` the kernel uses its Taylor series.
pub const SERIES_SWITCH: f64 = 1.0;

/// `K(z, t)` and the scaled derivatives `z K_z`, `z^2 K_zz`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelK {
    pub k: f64,
    pub z_kz: f64,
    pub z2_kzz: f64,
}

/// `g(a) = (1 - e^{-a}) / a` with its first two derivatives.
pub(crate) fn g_derivatives(a: f64) -> (f64, f64, f64) {
    if a < SERIES_SWITCH {
        // g = sum_n (-1)^n a^n / (n+1)!, differentiated termwise.
        let (mut g, mut g1, mut g2) = (0.0, 0.0, 0.0);
        let mut fact = 1.0; // (n+1)!
        let mut pow = [1.0, 0.0, 0.0]; // a^n, a^{n-1}, a^{n-2}
        for n in 0..32u32 {
            fact *= (n + 1) as f64;
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let nf = n as f64;
            g += sign * pow[0] / fact;
            g1 += sign * nf * pow[1] / fact;
            g2 += sign * nf * (nf - 1.0) * pow[2] / fact;
            pow = [pow[0] * a, pow[0], pow[1]];
        }
        (g, g1, g2)
    } else {
        let e = (-a).exp();
        let em1 = -(-a).exp_m1();
        let g = em1 / a;
        let g1 = e / a - em1 / (a * a);
        let g2 = -e / a - 2.0 * e / (a * a) + 2.0 * em1 / (a * a * a);
        (g, g1, g2)
    }
}

/// `K(z, t) = 2 (1 - e^{-z^2/4t}) / z^2` and its scaled `z` derivatives,
/// all evaluated from one exponential.
pub fn kernel_k(z: f64, t: f64) -> KernelK {
    let a = z * z / (4.0 * t);
    let (g, g1, g2) = g_derivatives(a);
    KernelK {
        k: g / (2.0 * t),
        z_kz: a * g1 / t,
        z2_kzz: (a * g1 + 2.0 * a * a * g2) / t,
    }
}

/// A time-dependent rate `s -> lambda'(s)` (real) or `p'(s)` (complex).
pub trait RateSource: Sync {
    fn rate(&self, s: f64) -> Complex64;

    /// Points where the rate is not smooth; used as quadrature breaks.
    fn kinks(&self, _lo: f64, _hi: f64) -> Vec<f64> {
        Vec::new()
    }
}

/// Sampled rate history, linearly interpolated between nodes and held
/// constant beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct RateHistory {
    pub time_mesh: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl RateHistory {
    pub fn new(time_mesh: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if time_mesh.len() != values.len() || time_mesh.len() < 2 {
            return Err(Error::InvalidArgument("rate history needs matching mesh and values".into()));
        }
        if time_mesh.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("rate history mesh must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidArgument("rate history values must be finite".into()));
        }
        Ok(RateHistory { time_mesh, values })
    }

    pub fn from_real(time_mesh: Vec<f64>, values: &[f64]) -> Result<Self> {
        RateHistory::new(time_mesh, values.iter().map(|v| Complex64::new(*v, 0.0)).collect())
    }

    pub fn sample<F: Fn(f64) -> Complex64>(time_mesh: Vec<f64>, f: F) -> Result<Self> {
        let values = time_mesh.iter().map(|&s| f(s)).collect();
        RateHistory::new(time_mesh, values)
    }

    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        self.time_mesh[0] <= lo && *self.time_mesh.last().unwrap() >= hi
    }
}

impl RateSource for RateHistory {
    fn rate(&self, s: f64) -> Complex64 {
        let m = &self.time_mesh;
        let n = m.len();
        if s <= m[0] {
            return self.values[0];
        }
        if s >= m[n - 1] {
            return self.values[n - 1];
        }
        let i = m.partition_point(|&x| x <= s) - 1;
        let f = (s - m[i]) / (m[i + 1] - m[i]);
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.time_mesh.iter().copied().filter(|&s| s > lo && s < hi).collect()
    }
}

/// Rate given by a closure.
pub struct FnRate<F: Fn(f64) -> Complex64 + Sync>(pub F);

impl<F: Fn(f64) -> Complex64 + Sync> RateSource for FnRate<F> {
    fn rate(&self, s: f64) -> Complex64 {
        (self.0)(s)
    }
}

/// Real-valued rate given by a closure.
pub struct RealRate<F: Fn(f64) -> f64 + Sync>(pub F);

impl<F: Fn(f64) -> f64 + Sync> RateSource for RealRate<F> {
    fn rate(&self, s: f64) -> Complex64 {
        Complex64::new((self.0)(s), 0.0)
    }
}

/// Lower limit of the memory integrals, which defaults to `-T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub lower: f64,
}

impl TimeWindow {
    pub fn from_final_time(t_final: f64) -> Self {
        TimeWindow { lower: -t_final }
    }
}

/// Instantaneous motion of a bubble at the evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BubbleMotion {
    pub lambda_dot: f64,
    pub xi_dot: [f64; 2],
}

/// Tolerance demanded of the memory integrals.
pub const MEMORY_TOL: f64 = 1e-8;

/// `int h(s) X(z, t - s) ds` for `X = K, z K_z, z K_z - z^2 K_zz`.
pub fn memory_integrals(history: &dyn RateSource, z: f64, t: f64, window: TimeWindow) -> Result<[Complex64; 3]> {
    let lo = window.lower;
    if !(t > lo) {
        return Err(Error::InvalidArgument(format!("evaluation time {t} must exceed the lower limit {lo}")));
    }
    let layer = (0.01 * z * z).max(1e-14 * (t - lo));
    let mut breaks = graded_breaks(lo, t, 4.0, layer);
    breaks.extend(history.kinks(lo, t));
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    let opts = QuadOptions {
        abs_tol: 1e-300,
        rel_tol: 1e-11,
        max_intervals: 20_000,
    };
    let res = integrate_vec_breaks(
        |s| {
            let h = history.rate(s);
            let k = kernel_k(z, t - s);
            let d = k.z_kz - k.z2_kzz;
            [h.re * k.k, h.im * k.k, h.re * k.z_kz, h.im * k.z_kz, h.re * d, h.im * d]
        },
        &breaks,
        opts,
    );
    let v = match res {
        Ok(r) => r.value,
        Err(Error::QuadratureNotConverged { estimate, .. }) => {
            return Err(Error::QuadratureNotConverged {
                estimate,
                tolerance: MEMORY_TOL,
            })
        }
        Err(e) => return Err(e),
    };
    Ok([
        Complex64::new(v[0], v[1]),
        Complex64::new(v[2], v[3]),
        Complex64::new(v[4], v[5]),
    ])
}

/// `phi_0(r, t) = -int_lower^t h(s) r K(z(r), t - s) ds`, `z = sqrt(r^2 + lambda^2)`.
pub fn phi0_eval(history: &dyn RateSource, spec: &BubbleSpec, r: f64, t: f64, window: TimeWindow) -> Result<Complex64> {
    if r < 0.0 {
        return Err(Error::InvalidArgument("r must be nonnegative".into()));
    }
    if r == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let z = r.hypot(spec.lambda);
    let [ik, _, _] = memory_integrals(history, z, t, window)?;
    Ok(-ik * r)
}

/// The remainders `R_0` and `R_1` produced by `Phi_0` at `(r, theta)`.
///
/// The `R_1` transport term uses `(x - xi) . xi'`, i.e. the time derivative of
/// `|x - xi(t)|`.
pub fn remainder_r(
    history: &dyn RateSource,
    spec: &BubbleSpec,
    motion: &BubbleMotion,
    r: f64,
    theta: f64,
    t: f64,
    window: TimeWindow,
) -> Result<(Complex64, Complex64)> {
    let z = r.hypot(spec.lambda);
    let [ik, izk, id] = memory_integrals(history, z, t, window)?;
    let e = Complex64::from_polar(1.0, theta);
    let l = spec.lambda;
    let r0 = -e * (r * l * l / z.powi(4)) * id;
    let radial_xi = theta.cos() * motion.xi_dot[0] + theta.sin() * motion.xi_dot[1];
    let r1 = -e * radial_xi * ik + e * (r / (z * z)) * (l * motion.lambda_dot - r * radial_xi) * izk;
    Ok((r0, r1))
}

/// Frame coefficients of `K_01`, `K_02` and `K_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorTerms {
    pub k01: TangentVector,
    pub k02: TangentVector,
    pub k1: TangentVector,
}

impl ErrorTerms {
    /// Coefficients of `K_0 + K_1`.
    pub fn total(&self) -> TangentVector {
        TangentVector {
            c1: self.k01.c1 + self.k02.c1 + self.k1.c1,
            c2: self.k01.c2 + self.k02.c2 + self.k1.c2,
        }
    }
}

/// `K_01`, `K_02`, `K_1` at local polar coordinates `(rho, theta)` and time
/// `t`, as coefficients on `(E1, E2)` (boundary) or `(Q E1, Q E2)`
/// (interior). For an interior bubble `history` is `p'(s)`.
pub fn error_k(
    history: &dyn RateSource,
    spec: &BubbleSpec,
    motion: &BubbleMotion,
    rho: f64,
    theta: f64,
    t: f64,
    window: TimeWindow,
) -> Result<ErrorTerms> {
    let l = spec.lambda;
    let r = l * rho;
    let z = r.hypot(l);
    let wp = w_profile(rho);
    let amp = rho * wp.w_rho * wp.w_rho / l;
    let [ik, izk, id] = memory_integrals(history, z, t, window)?;
    let (ct, st) = (theta.cos(), theta.sin());
    let ratio = r * r / (z * z);
    match spec.kind {
        BubbleKind::Boundary => Ok(ErrorTerms {
            k01: TangentVector {
                c1: -2.0 * amp * ik.re,
                c2: 0.0,
            },
            k02: TangentVector {
                c1: amp * (motion.lambda_dot - ratio * izk.re) - 0.25 * amp * wp.cos_w * id.re,
                c2: 0.0,
            },
            k1: TangentVector {
                c1: wp.w_rho / l * motion.xi_dot[0] * ct,
                c2: wp.w_rho / l * motion.xi_dot[0] * st,
            },
        }),
        BubbleKind::Interior => {
            let rot = Complex64::from_polar(1.0, -spec.omega);
            let (ik, izk, id) = (ik * rot, izk * rot, id * rot);
            let m = Complex64::new(motion.xi_dot[0], -motion.xi_dot[1]) * Complex64::new(ct, st);
            Ok(ErrorTerms {
                k01: TangentVector {
                    c1: -2.0 * amp * ik.re,
                    c2: -2.0 * amp * ik.im,
                },
                k02: TangentVector {
                    c1: amp * (motion.lambda_dot - ratio * izk.re) - 0.25 * amp * wp.cos_w * id.re,
                    c2: -0.25 * amp * id.im,
                },
                k1: TangentVector {
                    c1: wp.w_rho / l * m.re,
                    c2: wp.w_rho / l * m.im,
                },
            })
        }
        BubbleKind::ReflectedInterior => Err(Error::InvalidArgument(
            "error terms are defined for the boundary and interior bubbles".into(),
        )),
    }
}

/// Least-squares slope of `log |f|` against `log rho`.
pub fn fitted_exponent(rho: &[f64], values: &[f64]) -> f64 {
    let n = rho.len() as f64;
    let xs: Vec<f64> = rho.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
