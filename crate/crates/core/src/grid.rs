//! Uniform Cartesian grids and the finite-difference stencils used on them.

use crate::vec3::Vec3;

/// Node-centred uniform grid, row-major with `x` varying fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2 {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid2 {
    pub fn new(x0: f64, y0: f64, h: f64, nx: usize, ny: usize) -> Self {
        Grid2 { x0, y0, h, nx, ny }
    }

    /// Grid covering `[lo, hi]^2` with nodes offset by `h/2` from the corners,
    /// so that a square centred on the origin never places a node at it.
    pub fn square_staggered(lo: f64, hi: f64, h: f64) -> Self {
        let n = ((hi - lo) / h).round() as usize;
        Grid2::new(lo + 0.5 * h, lo + 0.5 * h, h, n, n)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x0 + i as f64 * self.h, self.y0 + j as f64 * self.h]
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > 0 && j > 0 && i + 1 < self.nx && j + 1 < self.ny
    }

    pub fn sample<T, F: Fn([f64; 2]) -> T>(&self, f: F) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push(f(self.point(i, j)));
            }
        }
        out
    }

    /// Central-difference gradient of a vector field at an interior node.
    #[inline]
    pub fn grad3(&self, f: &[Vec3], i: usize, j: usize) -> [Vec3; 2] {
        let inv = 0.5 / self.h;
        let e = f[self.idx(i + 1, j)];
        let w = f[self.idx(i - 1, j)];
        let n = f[self.idx(i, j + 1)];
        let s = f[self.idx(i, j - 1)];
        let mut gx = [0.0; 3];
        let mut gy = [0.0; 3];
        for k in 0..3 {
            gx[k] = (e[k] - w[k]) * inv;
            gy[k] = (n[k] - s[k]) * inv;
        }
        [gx, gy]
    }

    /// Five-point Laplacian of a vector field at an interior node.
    #[inline]
    pub fn lap3(&self, f: &[Vec3], i: usize, j: usize) -> Vec3 {
        let inv = 1.0 / (self.h * self.h);
        let c = f[self.idx(i, j)];
        let e = f[self.idx(i + 1, j)];
        let w = f[self.idx(i - 1, j)];
        let n = f[self.idx(i, j + 1)];
        let s = f[self.idx(i, j - 1)];
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = (e[k] + w[k] + n[k] + s[k] - 4.0 * c[k]) * inv;
        }
        out
    }
}

/// Finite-difference weights for derivatives of order `0..=m` at `x0` from
/// arbitrary distinct nodes (Fornberg's recursion). Returns `w[d][k]`.
pub fn fornberg_weights(x0: f64, nodes: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_centered_second_derivative() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[2][0] - 1.0).abs() < 1e-14);
        assert!((w[2][1] + 2.0).abs() < 1e-14);
        assert!((w[1][2] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn fornberg_exact_on_quartic() {
        let nodes = [0.1, 0.25, 0.3, 0.55, 0.7];
        let w = fornberg_weights(0.3, &nodes, 2);
        let f = |x: f64| x.powi(4) - 2.0 * x * x + x;
        let d1: f64 = nodes.iter().zip(&w[1]).map(|(x, c)| c * f(*x)).sum();
        let d2: f64 = nodes.iter().zip(&w[2]).map(|(x, c)| c * f(*x)).sum();
        assert!((d1 - (4.0 * 0.027 - 1.2 + 1.0)).abs() < 1e-11);
        assert!((d2 - (12.0 * 0.09 - 4.0)).abs() < 1e-10);
    }

    #[test]
    fn staggered_grid_avoids_origin() {
        let g = Grid2::square_staggered(-1.0, 1.0, 0.25);
        assert_eq!(g.nx, 8);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let p = g.point(i, j);
                assert!(p[0].abs() > 0.1 || p[1].abs() > 0.1);
            }
        }
    }
}
