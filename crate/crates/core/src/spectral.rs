//! Periodic 2-D spectral toolkit on the doubled (reflected) square.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// `n x n` periodic grid on `[-l, l)^2` with cell-centered nodes
/// `-l + (i + 1/2) h`, symmetric about both axes.
pub struct Spectral2 {
    pub n: usize,
    pub l: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers in FFT order.
    pub k: Vec<f64>,
}

impl std::fmt::Debug for Spectral2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral2").field("n", &self.n).field("l", &self.l).finish()
    }
}

impl Spectral2 {
    pub fn new(n: usize, l: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let dk = std::f64::consts::PI / l;
        let k = (0..n)
            .map(|i| {
                let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
                m * dk
            })
            .collect();
        Spectral2 { n, l, fwd, inv, k }
    }

    pub fn h(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    /// Coordinate of node `i` along either axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.l + (i as f64 + 0.5) * self.h()
    }

    /// Row-major index, `i` along `x1`, `j` along `x2`.
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        for row in data.chunks_mut(n) {
            plan.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                col[j] = data[j * n + i];
            }
            plan.process(&mut col);
            for j in 0..n {
                data[j * n + i] = col[j];
            }
        }
    }

    /// Unnormalized forward transform of a real field.
    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut d, &self.fwd);
        d
    }

    /// Inverse transform (normalized), real part.
    pub fn inverse(&self, mut d: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut d, &self.inv);
        let s = 1.0 / (self.n * self.n) as f64;
        d.iter().map(|c| c.re * s).collect()
    }

    /// Wavenumber pair of spectral index `(i, j)`.
    pub fn wave(&self, i: usize, j: usize) -> (f64, f64) {
        (self.k[i], self.k[j])
    }

    /// Spectral derivative `d/dx_axis` of a real field.
    pub fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let mut d = self.forward(f);
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                let (k1, k2) = self.wave(i, j);
                let mut k = if axis == 0 { k1 } else { k2 };
                // the Nyquist mode has no well-defined odd derivative
                if (axis == 0 && i == n / 2) || (axis == 1 && j == n / 2) {
                    k = 0.0;
                }
                d[j * n + i] *= Complex64::new(0.0, k);
            }
        }
        self.inverse(d)
    }

    /// Leray projection of a spectral vector field in place.
    pub fn leray(&self, f1: &mut [Complex64], f2: &mut [Complex64]) {
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                let (k1, k2) = self.wave(i, j);
                let kk = k1 * k1 + k2 * k2;
                let m = j * n + i;
                if kk == 0.0 {
                    continue;
                }
                let dot = f1[m] * k1 + f2[m] * k2;
                f1[m] -= dot * (k1 / kk);
                f2[m] -= dot * (k2 / kk);
            }
        }
    }

    /// Fraction of spectral energy at wavenumbers above two thirds of the
    /// Nyquist wavenumber in either direction.
    pub fn high_band_fraction(&self, d: &[Complex64]) -> f64 {
        let n = self.n;
        let cut = (n as f64 / 3.0).floor() as i64;
        let (mut hi, mut tot) = (0.0, 0.0);
        for j in 0..n {
            for i in 0..n {
                let e = d[j * n + i].norm_sqr();
                tot += e;
                let mi = if i <= n / 2 { i as i64 } else { i as i64 - n as i64 };
                let mj = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
                if mi.abs() > cut || mj.abs() > cut {
                    hi += e;
                }
            }
        }
        if tot == 0.0 {
            0.0
        } else {
            hi / tot
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_derivative() {
        let s = Spectral2::new(64, std::f64::consts::PI);
        let mut f = vec![0.0; 64 * 64];
        for j in 0..64 {
            for i in 0..64 {
                f[s.idx(i, j)] = (s.coord(i)).sin() * (2.0 * s.coord(j)).cos();
            }
        }
        let back = s.inverse(s.forward(&f));
        assert!(f.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-13));
        let d = s.derivative(&f, 1);
        for j in 0..64 {
            for i in 0..64 {
                let e = -2.0 * s.coord(i).sin() * (2.0 * s.coord(j)).sin();
                assert!((d[s.idx(i, j)] - e).abs() < 1e-12);
            }
        }
    }
}
