//! Adaptive Gauss–Kronrod quadrature and summation helpers.

use crate::error::{Error, Result};

// 15-point Kronrod abscissae (positive half) and weights; the odd-indexed
// nodes carry the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Tolerances and limits for the adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            max_intervals: 2000,
        }
    }
}

impl QuadOptions {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        QuadOptions {
            abs_tol,
            rel_tol,
            ..Default::default()
        }
    }
}

/// Value and error estimate of a converged integral.
#[derive(Debug, Clone, Copy)]
pub struct Integral<const N: usize> {
    pub value: [f64; N],
    pub error: f64,
    pub intervals: usize,
}

struct Panel<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: f64,
}

fn gk15<const N: usize, F: FnMut(f64) -> [f64; N]>(f: &mut F, a: f64, b: f64) -> Panel<N> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut fv = [[[0.0; N]; 2]; 7];
    for (i, pair) in fv.iter_mut().enumerate() {
        let dx = h * XGK[i];
        pair[0] = f(c - dx);
        pair[1] = f(c + dx);
    }
    let mut value = [0.0; N];
    let mut err = 0.0f64;
    for k in 0..N {
        let mut kron = WGK[7] * fc[k];
        let mut gauss = WG[3] * fc[k];
        let mut absk = WGK[7] * fc[k].abs();
        for (i, pair) in fv.iter().enumerate() {
            let s = pair[0][k] + pair[1][k];
            kron += WGK[i] * s;
            absk += WGK[i] * (pair[0][k].abs() + pair[1][k].abs());
            if i % 2 == 1 {
                gauss += WG[i / 2] * s;
            }
        }
        // QUADPACK error heuristic: the raw Kronrod-Gauss difference is the
        // error of the 7-point rule and grossly overestimates that of the
        // 15-point one on smooth panels
        let mean = 0.5 * kron;
        let mut asc = WGK[7] * (fc[k] - mean).abs();
        for (i, pair) in fv.iter().enumerate() {
            asc += WGK[i] * ((pair[0][k] - mean).abs() + (pair[1][k] - mean).abs());
        }
        let hh = h.abs();
        let (resasc, resabs) = (asc * hh, absk * hh);
        let mut e = ((kron - gauss) * h).abs();
        if resasc != 0.0 && e != 0.0 {
            e = resasc * (200.0 * e / resasc).powf(1.5).min(1.0);
        }
        if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            e = e.max(50.0 * f64::EPSILON * resabs);
        }
        value[k] = kron * h;
        err = err.max(e);
    }
    Panel { a, b, value, error: err }
}

/// Adaptive vector-valued integral over the panels delimited by `breaks`
/// (sorted, at least two entries).
pub fn integrate_vec_breaks<const N: usize, F: FnMut(f64) -> [f64; N]>(
    mut f: F,
    breaks: &[f64],
    opts: QuadOptions,
) -> Result<Integral<N>> {
    let mut panels: Vec<Panel<N>> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk15(&mut f, w[0], w[1]))
        .collect();
    if panels.is_empty() {
        return Ok(Integral {
            value: [0.0; N],
            error: 0.0,
            intervals: 0,
        });
    }
    loop {
        let (total, err) = totals(&panels);
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = opts.abs_tol.max(opts.rel_tol * scale);
        if err <= tol {
            return Ok(Integral {
                value: total,
                error: err,
                intervals: panels.len(),
            });
        }
        if panels.len() >= opts.max_intervals {
            return Err(Error::QuadratureNotConverged {
                estimate: err,
                tolerance: tol,
            });
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, be), (i, p)| if p.error > be { (i, p.error) } else { (bi, be) });
        let p = panels.swap_remove(idx);
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            return Err(Error::QuadratureNotConverged {
                estimate: err,
                tolerance: tol,
            });
        }
        panels.push(gk15(&mut f, p.a, m));
        panels.push(gk15(&mut f, m, p.b));
    }
}

fn totals<const N: usize>(panels: &[Panel<N>]) -> ([f64; N], f64) {
    let mut ordered: Vec<&Panel<N>> = panels.iter().collect();
    ordered.sort_by(|x, y| x.a.partial_cmp(&y.a).unwrap());
    let mut total = [0.0; N];
    for k in 0..N {
        let vals: Vec<f64> = ordered.iter().map(|p| p.value[k]).collect();
        total[k] = pairwise_sum(&vals);
    }
    let errs: Vec<f64> = ordered.iter().map(|p| p.error).collect();
    (total, pairwise_sum(&errs))
}

/// Adaptive scalar integral over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    integrate_vec_breaks(|x| [f(x)], &[a, b], opts).map(|r| r.value[0])
}

/// Adaptive scalar integral over panels delimited by `breaks`.
pub fn integrate_breaks<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], opts: QuadOptions) -> Result<f64> {
    integrate_vec_breaks(|x| [f(x)], breaks, opts).map(|r| r.value[0])
}

/// Integral over `[a, inf)`; the tail beyond the last break is mapped by
/// `x = b + s / (1 - s)`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    opts: QuadOptions,
) -> Result<f64> {
    let finite = if breaks.len() >= 2 {
        integrate_vec_breaks(|x| [f(x)], breaks, opts)?.value[0]
    } else {
        0.0
    };
    let b = *breaks.last().expect("at least one break");
    let tail = integrate_vec_breaks(
        |s| {
            if s >= 1.0 {
                return [0.0];
            }
            let one_m = 1.0 - s;
            let x = b + s / one_m;
            [f(x) / (one_m * one_m)]
        },
        &[0.0, 0.5, 0.9, 0.99, 1.0],
        opts,
    )?
    .value[0];
    Ok(finite + tail)
}

/// Breakpoints `a, b - L/r, b - L/r^2, ..., b` accumulating geometrically
/// toward `b`, for integrands with a boundary layer at `b`.
pub fn graded_breaks(a: f64, b: f64, ratio: f64, min_width: f64) -> Vec<f64> {
    let mut pts = vec![a];
    if b <= a {
        pts.push(b);
        return pts;
    }
    let mut gap = (b - a) / ratio;
    while gap > min_width && pts.len() < 400 {
        pts.push(b - gap);
        gap /= ratio;
    }
    pts.push(b);
    pts
}

/// Pairwise (cascade) summation; order-deterministic.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if v.len() <= BLOCK {
        let mut s = 0.0;
        for x in v {
            s += x;
        }
        s
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Composite Gauss–Legendre nodes and weights on `[a, b]` with `panels`
/// equal panels of the 15-point Kronrod rule (used as a fixed rule).
pub fn fixed_rule(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(15 * panels);
    let mut ws = Vec::with_capacity(15 * panels);
    let h = (b - a) / panels as f64;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let c = lo + 0.5 * h;
        let r = 0.5 * h;
        for i in 0..7 {
            xs.push(c - r * XGK[i]);
            ws.push(r * WGK[i]);
        }
        xs.push(c);
        ws.push(r * WGK[7]);
        for i in (0..7).rev() {
            xs.push(c + r * XGK[i]);
            ws.push(r * WGK[i]);
        }
    }
    (xs, ws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, QuadOptions::default()).unwrap();
        assert!((v - 0.0).abs() < 1e-14);
    }

    #[test]
    fn gaussian_to_infinity() {
        let v = integrate_to_infinity(|x| (-x * x).exp(), &[0.0, 1.0, 4.0], QuadOptions::default()).unwrap();
        assert!((v - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn algebraic_tail() {
        let v = integrate_to_infinity(|x| 1.0 / (1.0 + x * x), &[0.0, 1.0], QuadOptions::default()).unwrap();
        assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-11);
    }

    #[test]
    fn pairwise_matches_naive_on_small() {
        let v: Vec<f64> = (0..1000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-12);
    }

    #[test]
    fn graded_breaks_reach_endpoint() {
        let b = graded_breaks(0.0, 1.0, 2.0, 1e-10);
        assert_eq!(*b.first().unwrap(), 0.0);
        assert_eq!(*b.last().unwrap(), 1.0);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        assert!(b.len() > 10);
    }

    #[test]
    fn fixed_rule_integrates_cosine() {
        let (x, w) = fixed_rule(0.0, std::f64::consts::PI, 4);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.sin()).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }
}
