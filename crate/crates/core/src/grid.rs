//! Dyadic torus grids and the nearest-neighbour Laplacian.

use crate::error::{Error, Result};
use crate::field::GridField;
use std::f64::consts::PI;

/// Spatial dimension of every public grid.
pub const DIM: usize = 3;

/// Largest supported dyadic level.
pub const MAX_LEVEL: u32 = 12;

/// The periodic lattice `Λ³_ε ⊂ T³` with mesh `ε = 2^{-N}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    level: u32,
}

impl Grid {
    pub fn new(level: u32) -> Result<Self> {
        if !(1..=MAX_LEVEL).contains(&level) {
            return Err(Error::Config(format!(
                "grid level must lie in 1..={MAX_LEVEL}, got {level}"
            )));
        }
        Ok(Self { level })
    }

    #[inline]
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Mesh size `ε = 2^{-N}`, exact in binary floating point.
    #[inline]
    pub fn eps(&self) -> f64 {
        (-(self.level as i32) as f64).exp2()
    }

    /// Points per dimension `M = 2^N`.
    #[inline]
    pub fn side(&self) -> usize {
        1usize << self.level
    }

    /// Total number of lattice points `M³`.
    #[inline]
    pub fn len(&self) -> usize {
        self.side().pow(DIM as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume element `ε³` of the discrete pairing.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.eps().powi(DIM as i32)
    }

    /// Row-major flat index of integer coordinates, wrapped onto the torus.
    #[inline]
    pub fn index(&self, c: [isize; 3]) -> usize {
        let m = self.side() as isize;
        let w = |v: isize| v.rem_euclid(m) as usize;
        let s = self.side();
        (w(c[0]) * s + w(c[1])) * s + w(c[2])
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let s = self.side();
        [idx / (s * s), (idx / s) % s, idx % s]
    }

    /// Physical position of a lattice point in `[0,1)³`.
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let e = self.eps();
        let c = self.coords(idx);
        [c[0] as f64 * e, c[1] as f64 * e, c[2] as f64 * e]
    }

    /// Signed integer frequency of a canonical index in `[0, M)`, folded into `(-M/2, M/2]`.
    #[inline]
    pub fn signed_frequency(&self, k: usize) -> i64 {
        let m = self.side() as i64;
        let k = k as i64;
        if k > m / 2 {
            k - m
        } else {
            k
        }
    }
}

/// Builds the grid of level `n`; rejects levels outside `1..=12`.
pub fn make_grid(n: u32) -> Result<Grid> {
    Grid::new(n)
}

/// `(Δ^ε f)(x) = ε^{-2} Σ_{|e|=1} (f(x+εe) − f(x))` with periodic wrap.
pub fn apply_discrete_laplacian(f: &GridField) -> GridField {
    let grid = f.grid();
    let s = grid.side();
    let inv_h2 = grid.eps().powi(-2);
    let v = f.values();
    let mut out = vec![0.0; grid.len()];
    let up = |i: usize| if i + 1 == s { 0 } else { i + 1 };
    let down = |i: usize| if i == 0 { s - 1 } else { i - 1 };
    for i in 0..s {
        for j in 0..s {
            for k in 0..s {
                let at = |a: usize, b: usize, c: usize| v[(a * s + b) * s + c];
                let centre = at(i, j, k);
                let sum = at(up(i), j, k)
                    + at(down(i), j, k)
                    + at(i, up(j), k)
                    + at(i, down(j), k)
                    + at(i, j, up(k))
                    + at(i, j, down(k));
                out[(i * s + j) * s + k] = inv_h2 * (sum - 6.0 * centre);
            }
        }
    }
    GridField::from_vec_unchecked(grid, out)
}

/// Fourier symbol `a^ε(k) = −4ε^{-2} Σ_i sin²(π ε k_i)` of the discrete Laplacian.
pub fn laplacian_symbol(k: [usize; 3], grid: &Grid) -> Result<f64> {
    let m = grid.side();
    if k.iter().any(|&ki| ki >= m) {
        return Err(Error::Index(format!(
            "wavevector {k:?} outside [0, {m})^3"
        )));
    }
    Ok(symbol_unchecked(k, grid))
}

#[inline]
fn symbol_unchecked(k: [usize; 3], grid: &Grid) -> f64 {
    let e = grid.eps();
    let s: f64 = k.iter().map(|&ki| (PI * e * ki as f64).sin().powi(2)).sum();
    -4.0 * s / (e * e)
}

/// Symbol values for every wavevector in row-major order.
pub fn symbol_table(grid: &Grid) -> Vec<f64> {
    let m = grid.side();
    let e = grid.eps();
    let sin2: Vec<f64> = (0..m).map(|k| (PI * e * k as f64).sin().powi(2)).collect();
    let scale = -4.0 / (e * e);
    let mut out = Vec::with_capacity(grid.len());
    for &a in &sin2 {
        for &b in &sin2 {
            for &c in &sin2 {
                out.push(scale * (a + b + c));
            }
        }
    }
    // exact zero for the constant mode
    out[0] = 0.0;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_levels() {
        let g = make_grid(1).unwrap();
        assert_eq!(g.eps(), 0.5);
        assert_eq!(g.side(), 2);
        assert_eq!(g.len(), 8);
        let g = make_grid(6).unwrap();
        assert_eq!(g.eps(), 2f64.powi(-6));
        assert_eq!(g.side(), 64);
        assert_eq!(g.len(), 262_144);
        assert_eq!(g.eps() * g.side() as f64, 1.0);
        assert!(make_grid(0).is_err());
        assert!(make_grid(13).is_err());
    }

    #[test]
    fn index_wraps() {
        let g = make_grid(2).unwrap();
        assert_eq!(g.index([-1, 0, 0]), g.index([3, 0, 0]));
        assert_eq!(g.index([4, 5, -4]), g.index([0, 1, 0]));
        for idx in 0..g.len() {
            let c = g.coords(idx);
            assert_eq!(g.index([c[0] as isize, c[1] as isize, c[2] as isize]), idx);
        }
    }

    #[test]
    fn symbol_values() {
        let g1 = make_grid(1).unwrap();
        assert_eq!(laplacian_symbol([0, 0, 0], &g1).unwrap(), 0.0);
        assert!((laplacian_symbol([1, 0, 0], &g1).unwrap() + 16.0).abs() < 1e-12);
        let g2 = make_grid(2).unwrap();
        assert!((laplacian_symbol([1, 1, 0], &g2).unwrap() + 64.0).abs() < 1e-12);
        assert!(laplacian_symbol([4, 0, 0], &g2).is_err());
    }

    #[test]
    fn symbol_table_matches_pointwise() {
        let g = make_grid(3).unwrap();
        let t = symbol_table(&g);
        for (idx, &v) in t.iter().enumerate() {
            let c = g.coords(idx);
            assert!((v - laplacian_symbol(c, &g).unwrap()).abs() < 1e-9);
            if idx != 0 {
                assert!(v < 0.0);
            }
        }
    }

    #[test]
    fn symbol_is_second_order_consistent() {
        for n in 3..=8 {
            let g = make_grid(n).unwrap();
            let e = g.eps();
            for k0 in 0..=4usize {
                for k1 in 0..=4usize {
                    for k2 in 0..=4usize {
                        if k0 + k1 + k2 == 0 {
                            continue;
                        }
                        let k = [k0, k1, k2];
                        let exact = -4.0 * PI * PI * (k0 * k0 + k1 * k1 + k2 * k2) as f64;
                        let kmax = *k.iter().max().unwrap() as f64;
                        let rel = (laplacian_symbol(k, &g).unwrap() - exact).abs() / exact.abs();
                        assert!(rel <= (PI * e * kmax).powi(2) / 3.0 * 2.0, "n={n} k={k:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn laplacian_of_delta_on_two_point_torus() {
        // on the 2^3 grid each axis neighbour is reached through both +e and -e
        let g = make_grid(1).unwrap();
        let e = g.eps();
        let mut v = vec![0.0; 8];
        v[0] = e.powi(-3);
        let f = GridField::new(g, v).unwrap();
        let lap = apply_discrete_laplacian(&f);
        let unit = e.powi(-2) * e.powi(-3);
        assert!((lap.at([0, 0, 0]) + 6.0 * unit).abs() < 1e-9);
        for c in [[1, 0, 0], [0, 1, 0], [0, 0, 1]] {
            assert!((lap.at(c) - 2.0 * unit).abs() < 1e-9);
        }
        for c in [[1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]] {
            assert_eq!(lap.at(c), 0.0);
        }
    }

    #[test]
    fn constants_in_kernel() {
        let g = make_grid(3).unwrap();
        let f = GridField::constant(g, 2.5);
        assert!(apply_discrete_laplacian(&f).values().iter().all(|&x| x == 0.0));
    }
}
