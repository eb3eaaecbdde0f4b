//! Discrete Fourier transform on the torus.
//!
//! Convention: `f̂(k) = ε³ Σ_x f(x) e^{-2πi k·x}` and `f(x) = Σ_k f̂(k) e^{2πi k·x}`,
//! so that `ε³ Σ_x |f(x)|² = Σ_k |f̂(k)|²`. Under this normalisation a field of
//! i.i.d. `N(0, ε^{-3})` values has `E|f̂(k)|² = 1` for every `k`.

use crate::field::GridField;
use crate::grid::Grid;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type Plan = Arc<dyn Fft<f64>>;

fn plans(len: usize) -> (Plan, Plan) {
    static CACHE: OnceLock<Mutex<HashMap<usize, (Plan, Plan)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(len)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
        })
        .clone()
}

/// Spectral coefficients indexed by canonical wavevectors in `[0, M)³`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: Grid, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), grid.len(), "coefficient count mismatch");
        Self { grid, coeffs }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// `Σ_k |f̂(k)|²`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Unnormalised 3-d DFT in place; each pass transforms the contiguous axis
/// and then rotates axes so that all three are visited.
fn fft3(data: &mut Vec<Complex64>, side: usize, plan: &Plan) {
    let plane = side * side;
    let mut scratch_buf = vec![Complex64::new(0.0, 0.0); data.len()];
    for _ in 0..3 {
        data.par_chunks_mut(plane).for_each(|chunk| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            plan.process_with_scratch(chunk, &mut scratch);
        });
        // (i0, i1, i2) -> (i2, i0, i1)
        let src: &[Complex64] = data;
        scratch_buf
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(i2, out)| {
                for i0 in 0..side {
                    for i1 in 0..side {
                        out[i0 * side + i1] = src[(i0 * side + i1) * side + i2];
                    }
                }
            });
        std::mem::swap(data, &mut scratch_buf);
    }
}

/// Forward transform `f ↦ f̂`.
pub fn forward_transform(f: &GridField) -> SpectralField {
    let grid = f.grid();
    let mut data: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward_in_place(grid, &mut data);
    SpectralField { grid, coeffs: data }
}

pub(crate) fn forward_in_place(grid: Grid, data: &mut Vec<Complex64>) {
    let (fwd, _) = plans(grid.side());
    fft3(data, grid.side(), &fwd);
    let w = grid.cell_volume();
    data.par_iter_mut().for_each(|c| *c *= w);
}

/// Inverse transform; the imaginary part (roundoff for Hermitian input) is dropped.
pub fn inverse_transform(c: &SpectralField) -> GridField {
    let mut data = c.coeffs.clone();
    inverse_in_place(c.grid, &mut data);
    GridField::from_vec_unchecked(c.grid, data.into_iter().map(|z| z.re).collect())
}

pub(crate) fn inverse_in_place(grid: Grid, data: &mut Vec<Complex64>) {
    let (_, inv) = plans(grid.side());
    fft3(data, grid.side(), &inv);
}

/// Multiplies every mode by a real factor and transforms back.
pub fn apply_multiplier(f: &GridField, multiplier: &[f64]) -> GridField {
    let mut s = forward_transform(f);
    for (c, &m) in s.coeffs.iter_mut().zip(multiplier) {
        *c *= m;
    }
    inverse_transform(&s)
}

/// Index of `−k` for every canonical wavevector.
pub fn negated_index(grid: Grid) -> Vec<usize> {
    let m = grid.side();
    (0..grid.len())
        .map(|i| {
            let c = grid.coords(i);
            (((m - c[0]) % m) * m + (m - c[1]) % m) * m + (m - c[2]) % m
        })
        .collect()
}

/// `F^{-1}[d(k) û(k) + f(k) ŵ(k)]` for real `u`, `w` and real multipliers that
/// are even in `k`, using one complex transform each way.
pub fn propagate_pair(grid: Grid, u: &[f64], w: &[f64], d: &[f64], f: &[f64], neg: &[usize]) -> Vec<f64> {
    let mut z: Vec<Complex64> = u.iter().zip(w).map(|(&a, &b)| Complex64::new(a, b)).collect();
    forward_in_place(grid, &mut z);
    let half = Complex64::new(0.5, 0.0);
    let mut y: Vec<Complex64> = (0..z.len())
        .into_par_iter()
        .map(|k| {
            let zk = z[k];
            let zn = z[neg[k]].conj();
            let uh = (zk + zn) * half;
            // (zk − zn) / 2i
            let wh = Complex64::new((zk - zn).im * 0.5, -(zk - zn).re * 0.5);
            uh * d[k] + wh * f[k]
        })
        .collect();
    inverse_in_place(grid, &mut y);
    y.into_iter().map(|c| c.re).collect()
}

/// Direct-space Laplacian evaluated through its symbol.
pub fn spectral_laplacian(f: &GridField) -> GridField {
    apply_multiplier(f, &crate::grid::symbol_table(&f.grid()))
}
