//! Discretised space-time white noise with exact coupling across levels.
//!
//! A noise field stores the increments `W(j, x) = ∫_{jδt}^{(j+1)δt} ξ^ε(s, x) ds`,
//! i.i.d. `N(0, δt ε^{-3})`. Cell averaging of a single white noise makes the
//! coarse increment the arithmetic mean of its `2³` children, so coarser
//! levels are obtained from the finest one by repeated halving.

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::grid::{Grid, DIM};
use crate::rng::SeededStream;
use crate::spectral::{forward_in_place, inverse_in_place};
use num_complex::Complex64;
use rayon::prelude::*;
use std::io::{Read, Write};

/// Anything that can hand out noise increments slice by slice.
pub trait NoiseSource: Sync {
    fn grid(&self) -> Grid;
    fn dt(&self) -> f64;
    fn steps(&self) -> usize;
    /// Increments of slice `j` on `grid()`, row-major.
    fn slice(&self, j: usize) -> Vec<f64>;
}

/// Increments of one slice generated directly at `grid`.
pub fn white_slice(seed: u64, grid: Grid, dt: f64, slice: u64) -> Vec<f64> {
    let sd = (dt / grid.cell_volume()).sqrt();
    let mut v = SeededStream::new(seed, grid.level(), slice).normals(grid.len());
    v.iter_mut().for_each(|x| *x *= sd);
    v
}

/// Averages each `2×2×2` block: one level coarser. Children are summed in
/// lexicographic order and the sum multiplied by `1/8`.
pub fn halve(fine: &[f64], fine_grid: Grid) -> Vec<f64> {
    let s = fine_grid.side();
    let h = s / 2;
    let mut out = vec![0.0; h * h * h];
    for i in 0..h {
        for j in 0..h {
            for k in 0..h {
                let mut acc = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        for c in 0..2 {
                            acc += fine[((2 * i + a) * s + 2 * j + b) * s + 2 * k + c];
                        }
                    }
                }
                out[(i * h + j) * h + k] = acc * 0.125;
            }
        }
    }
    out
}

fn coarsen_slice(mut v: Vec<f64>, from: Grid, to: Grid) -> Vec<f64> {
    let mut level = from.level();
    while level > to.level() {
        let g = Grid::new(level).expect("intermediate level is valid");
        v = halve(&v, g);
        level -= 1;
    }
    v
}

/// Materialised noise increments.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField {
    grid: Grid,
    dt: f64,
    seed: u64,
    increments: Vec<f64>,
    steps: usize,
}

impl NoiseField {
    pub fn from_increments(grid: Grid, dt: f64, seed: u64, increments: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        if increments.is_empty() || !increments.len().is_multiple_of(grid.len()) {
            return Err(Error::Dimension(format!(
                "{} increments do not fill whole slices of {} points",
                increments.len(),
                grid.len()
            )));
        }
        let steps = increments.len() / grid.len();
        Ok(Self {
            grid,
            dt,
            seed,
            increments,
            steps,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn slice_ref(&self, j: usize) -> &[f64] {
        let n = self.grid.len();
        &self.increments[j * n..(j + 1) * n]
    }

    pub fn slice_field(&self, j: usize) -> GridField {
        GridField::from_vec_unchecked(self.grid, self.slice_ref(j).to_vec())
    }

    /// Header: `u64 seed`, `u32 N`, `u32 d`, `f64 δt`, `u64 steps`; then increments.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.grid.level().to_le_bytes())?;
        w.write_all(&(DIM as u32).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&(self.steps as u64).to_le_bytes())?;
        for v in &self.increments {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads only the header and regenerates the increments from the seed.
    pub fn regenerate_from_header(mut r: impl Read) -> Result<Self> {
        let (seed, grid, dt, steps) = read_header(&mut r)?;
        sample_noise(grid, dt, steps, seed)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let (seed, grid, dt, steps) = read_header(&mut r)?;
        let mut raw = vec![0u8; 8 * steps * grid.len()];
        r.read_exact(&mut raw)?;
        let inc = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_increments(grid, dt, seed, inc)
    }
}

fn read_header(r: &mut impl Read) -> Result<(u64, Grid, f64, usize)> {
    let mut h = [0u8; 32];
    r.read_exact(&mut h)?;
    let seed = u64::from_le_bytes(h[0..8].try_into().unwrap());
    let level = u32::from_le_bytes(h[8..12].try_into().unwrap());
    let dim = u32::from_le_bytes(h[12..16].try_into().unwrap());
    let dt = f64::from_le_bytes(h[16..24].try_into().unwrap());
    let steps = u64::from_le_bytes(h[24..32].try_into().unwrap()) as usize;
    if dim as usize != DIM {
        return Err(Error::Format(format!("noise dimension {dim}, expected {DIM}")));
    }
    let grid = Grid::new(level).map_err(|e| Error::Format(e.to_string()))?;
    Ok((seed, grid, dt, steps))
}

impl NoiseSource for NoiseField {
    fn grid(&self) -> Grid {
        self.grid
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn steps(&self) -> usize {
        self.steps
    }
    fn slice(&self, j: usize) -> Vec<f64> {
        self.slice_ref(j).to_vec()
    }
}

/// I.i.d. Gaussian increments with variance `δt ε^{-3}`, deterministic in `seed`.
pub fn sample_noise(grid: Grid, dt: f64, steps: usize, seed: u64) -> Result<NoiseField> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::Domain("at least one time slice is required".into()));
    }
    let slices: Vec<Vec<f64>> = (0..steps)
        .into_par_iter()
        .map(|j| white_slice(seed, grid, dt, j as u64))
        .collect();
    NoiseField::from_increments(grid, dt, seed, slices.concat())
}

/// Block-averages a fine noise onto level `target < N`.
pub fn coarse_grain(fine: &NoiseField, target: u32) -> Result<NoiseField> {
    if target >= fine.grid.level() {
        return Err(Error::Config(format!(
            "target level {target} must be below the source level {}",
            fine.grid.level()
        )));
    }
    let to = Grid::new(target)?;
    let slices: Vec<Vec<f64>> = (0..fine.steps)
        .into_par_iter()
        .map(|j| coarsen_slice(fine.slice_ref(j).to_vec(), fine.grid, to))
        .collect();
    NoiseField::from_increments(to, fine.dt, fine.seed, slices.concat())
}

/// Checks that two noises share a time grid.
pub fn check_time_grids(a: &dyn NoiseSource, b: &dyn NoiseSource) -> Result<()> {
    if a.dt() != b.dt() || a.steps() != b.steps() {
        return Err(Error::Config(format!(
            "incompatible time grids: (δt={}, steps={}) vs (δt={}, steps={})",
            a.dt(),
            a.steps(),
            b.dt(),
            b.steps()
        )));
    }
    Ok(())
}

/// Noise generated slice by slice at a fine level and coarse-grained on demand.
/// Equivalent to `coarse_grain(sample_noise(fine, ..), target)` without storing it.
#[derive(Clone, Copy, Debug)]
pub struct LazyNoise {
    fine: Grid,
    target: Grid,
    dt: f64,
    steps: usize,
    seed: u64,
    offset: u64,
}

impl LazyNoise {
    pub fn new(fine: Grid, target: Grid, dt: f64, steps: usize, seed: u64) -> Result<Self> {
        if target.level() > fine.level() {
            return Err(Error::Config(format!(
                "target level {} finer than generation level {}",
                target.level(),
                fine.level()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        Ok(Self {
            fine,
            target,
            dt,
            steps,
            seed,
            offset: 0,
        })
    }

    /// Same noise with slice `j` read from generation slice `j + offset`.
    pub fn shifted(mut self, offset: u64, steps: usize) -> Self {
        self.offset += offset;
        self.steps = steps;
        self
    }

    pub fn at_level(mut self, target: Grid) -> Result<Self> {
        if target.level() > self.fine.level() {
            return Err(Error::Config("cannot refine lazily generated noise".into()));
        }
        self.target = target;
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fine_grid(&self) -> Grid {
        self.fine
    }

    pub fn materialize(&self) -> Result<NoiseField> {
        let slices: Vec<Vec<f64>> = (0..self.steps).into_par_iter().map(|j| self.slice(j)).collect();
        NoiseField::from_increments(self.target, self.dt, self.seed, slices.concat())
    }
}

impl NoiseSource for LazyNoise {
    fn grid(&self) -> Grid {
        self.target
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn steps(&self) -> usize {
        self.steps
    }
    fn slice(&self, j: usize) -> Vec<f64> {
        let raw = white_slice(self.seed, self.fine, self.dt, j as u64 + self.offset);
        coarsen_slice(raw, self.fine, self.target)
    }
}

/// Separable space-time mollifier `ψ(iδt, y) = ρ_i σ(y)` on the lattice.
///
/// `time` holds `ρ_i` for `i ∈ [−L, L]`, `space` holds `σ` as a grid density.
#[derive(Clone, Debug)]
pub struct Mollifier {
    grid: Grid,
    dt: f64,
    time: Vec<f64>,
    space: GridField,
    identity: bool,
}

impl Mollifier {
    /// δ-like mollifier: one cell, one slice, mass `1/(δt ε³)`.
    pub fn identity(grid: Grid, dt: f64) -> Self {
        let mut space = GridField::zeros(grid);
        space.values_mut()[0] = 1.0 / grid.cell_volume();
        Self {
            grid,
            dt,
            time: vec![1.0 / dt],
            space,
            identity: true,
        }
    }

    /// Smooth bump of parabolic radius `eps_bar`: spatial support `|y| < eps_bar`,
    /// temporal support `|t| < eps_bar²`, normalised on the lattice.
    pub fn bump(grid: Grid, dt: f64, eps_bar: f64) -> Result<Self> {
        let eps = grid.eps();
        if !(eps_bar >= eps && eps_bar <= 1.0) {
            return Err(Error::Validation(format!(
                "mollifier scale {eps_bar} outside [{eps}, 1]"
            )));
        }
        let smooth = |r: f64| if r >= 1.0 { 0.0 } else { (-1.0 / (1.0 - r * r)).exp() };
        let tmax = eps_bar * eps_bar;
        let half = (tmax / dt).floor() as isize;
        let mut time: Vec<f64> = (-half..=half)
            .map(|i| smooth((i as f64 * dt / tmax).abs()))
            .collect();
        let tsum: f64 = time.iter().sum::<f64>() * dt;
        time.iter_mut().for_each(|v| *v /= tsum);
        let space = GridField::from_fn(grid, |p| {
            let d2: f64 = p
                .iter()
                .map(|&x| {
                    let w = x.min(1.0 - x);
                    w * w
                })
                .sum();
            smooth(d2.sqrt() / eps_bar)
        });
        let mass = space.integral();
        if mass <= 0.0 {
            return Err(Error::Validation("mollifier has empty spatial support".into()));
        }
        let space = space.scaled(1.0 / mass);
        Ok(Self {
            grid,
            dt,
            time,
            space,
            identity: false,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of slices `L` on either side of the centre.
    pub fn half_width(&self) -> usize {
        self.time.len() / 2
    }

    pub fn time_weights(&self) -> &[f64] {
        &self.time
    }

    pub fn spatial_density(&self) -> &GridField {
        &self.space
    }

    /// `δt ε³ Σ ψ`.
    pub fn total_mass(&self) -> f64 {
        self.dt * self.time.iter().sum::<f64>() * self.space.integral()
    }

    /// Spatial Fourier multiplier `σ̂(k)`.
    pub fn spatial_symbol(&self) -> Vec<Complex64> {
        crate::spectral::forward_transform(&self.space).coeffs().to_vec()
    }

    /// Checks unit mass (to 1e-10), support in the parabolic ball of radius
    /// `R eps_bar`, and first-order discrete derivative bounds with constant `bound`.
    pub fn validate(&self, eps_bar: f64, radius: f64, bound: f64) -> Result<()> {
        let mass = self.total_mass();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(Error::Validation(format!("mollifier mass {mass} differs from 1")));
        }
        let reach = radius * eps_bar;
        let l = self.half_width() as f64;
        if (l * self.dt).sqrt() > reach * (1.0 + 1e-12) {
            return Err(Error::Validation(format!(
                "temporal support {} exceeds (R ε̄)² = {}",
                l * self.dt,
                reach * reach
            )));
        }
        let g = self.grid;
        for (i, &v) in self.space.values().iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let c = g.coords(i);
            let dist = c
                .iter()
                .map(|&ci| ci.min(g.side() - ci) as f64 * g.eps())
                .fold(0.0, f64::max);
            if dist > reach * (1.0 + 1e-12) {
                return Err(Error::Validation(format!(
                    "spatial support reaches {dist}, beyond R ε̄ = {reach}"
                )));
            }
        }
        let sup_t = self.time.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let sup_x = self.space.sup_norm();
        let sup = sup_t * sup_x;
        let scale = eps_bar.powi(-5);
        if sup > bound * scale {
            return Err(Error::Validation(format!(
                "sup |ψ| = {sup} exceeds {bound}·ε̄^-5"
            )));
        }
        let mut dx = 0.0f64;
        let s = g.side() as isize;
        for i in 0..g.len() {
            let c = g.coords(i);
            for axis in 0..3 {
                let mut n = [c[0] as isize, c[1] as isize, c[2] as isize];
                n[axis] = (n[axis] + 1).rem_euclid(s);
                dx = dx.max((self.space.values()[g.index(n)] - self.space.values()[i]).abs());
            }
        }
        if sup_t * dx / g.eps() > bound * eps_bar.powi(-6) {
            return Err(Error::Validation("spatial derivative bound violated".into()));
        }
        let dtmax = self
            .time
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(self.time[0].abs().max(self.time[self.time.len() - 1].abs()), f64::max);
        if dtmax * sup_x / self.dt > bound * eps_bar.powi(-7) {
            return Err(Error::Validation("temporal derivative bound violated".into()));
        }
        Ok(())
    }
}

/// Space-time convolution `ψ ⋆_ε ξ` on increments: FFT in space, direct sum in time.
///
/// The output slice `j` is centred on input slice `j + L`, so the result has
/// `steps − 2L` slices.
pub fn mollify_noise(fine: &dyn NoiseSource, psi: &Mollifier) -> Result<NoiseField> {
    if fine.grid() != psi.grid || fine.dt() != psi.dt {
        return Err(Error::Validation(
            "mollifier and noise live on different space-time grids".into(),
        ));
    }
    let mass = psi.total_mass();
    if (mass - 1.0).abs() > 1e-10 {
        return Err(Error::Validation(format!("mollifier mass {mass} differs from 1")));
    }
    let l = psi.half_width();
    if fine.steps() <= 2 * l {
        return Err(Error::Config(format!(
            "noise with {} slices too short for mollifier half-width {l}",
            fine.steps()
        )));
    }
    let out_steps = fine.steps() - 2 * l;
    let grid = fine.grid();
    if psi.identity {
        let slices: Vec<Vec<f64>> = (0..out_steps).map(|j| fine.slice(j)).collect();
        return NoiseField::from_increments(grid, fine.dt(), 0, slices.concat());
    }
    let sigma = psi.spatial_symbol();
    let spatial: Vec<Vec<Complex64>> = (0..fine.steps())
        .into_par_iter()
        .map(|j| {
            let mut d: Vec<Complex64> = fine.slice(j).into_iter().map(|v| Complex64::new(v, 0.0)).collect();
            forward_in_place(grid, &mut d);
            d.iter_mut().zip(&sigma).for_each(|(c, s)| *c *= s);
            d
        })
        .collect();
    let dt = fine.dt();
    let slices: Vec<Vec<f64>> = (0..out_steps)
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
            for (i, &w) in psi.time.iter().enumerate() {
                // time offset i - L, input slice (j + L) - (i - L)
                let src = &spatial[j + 2 * l - i];
                let c = w * dt;
                acc.iter_mut().zip(src).for_each(|(a, s)| *a += c * s);
            }
            inverse_in_place(grid, &mut acc);
            acc.into_iter().map(|z| z.re).collect()
        })
        .collect();
    NoiseField::from_increments(grid, dt, 0, slices.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn variance_matches_cell_average() {
        let g = make_grid(3).unwrap();
        let dt = 1e-3;
        let noise = sample_noise(g, dt, 2000, 42).unwrap();
        assert_eq!(noise.increments().len(), 1_024_000);
        let (m, v) = mean_var(noise.increments());
        let target = dt * g.cell_volume().recip();
        assert!((target - 0.512).abs() < 1e-12);
        assert!((v / target - 1.0).abs() < 0.01, "{v}");
        let se = (target / noise.increments().len() as f64).sqrt();
        assert!(m.abs() < 5.0 * se);
    }

    #[test]
    fn deterministic_in_seed() {
        let g = make_grid(2).unwrap();
        let a = sample_noise(g, 0.01, 5, 9).unwrap();
        let b = sample_noise(g, 0.01, 5, 9).unwrap();
        assert_eq!(a.increments(), b.increments());
        assert_ne!(a.increments(), sample_noise(g, 0.01, 5, 10).unwrap().increments());
    }

    #[test]
    fn disjoint_slices_uncorrelated() {
        let g = make_grid(4).unwrap();
        let noise = sample_noise(g, 0.5, 2, 1).unwrap();
        let (a, b) = (noise.slice_ref(0), noise.slice_ref(1));
        let n = a.len() as f64;
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / (na * nb)).abs() <= 3.0 / n.sqrt());
    }

    #[test]
    fn coarse_grain_is_block_mean() {
        let g = make_grid(2).unwrap();
        let fine = sample_noise(g, 0.1, 3, 5).unwrap();
        let coarse = coarse_grain(&fine, 1).unwrap();
        for j in 0..3 {
            let f = fine.slice_field(j);
            let c = coarse.slice_field(j);
            for i in 0..2isize {
                for k in 0..2isize {
                    for l in 0..2isize {
                        let mut acc = 0.0;
                        for a in 0..2 {
                            for b in 0..2 {
                                for d in 0..2 {
                                    acc += f.at([2 * i + a, 2 * k + b, 2 * l + d]);
                                }
                            }
                        }
                        assert_eq!(c.at([i, k, l]), acc / 8.0);
                    }
                }
            }
        }
        let constant = NoiseField::from_increments(g, 0.1, 0, vec![1.5; 64]).unwrap();
        assert!(coarse_grain(&constant, 1).unwrap().increments().iter().all(|&v| v == 1.5));
        assert!(coarse_grain(&fine, 2).is_err());
    }

    #[test]
    fn coarse_variance_scales() {
        let g = make_grid(4).unwrap();
        let dt = 0.01;
        let fine = sample_noise(g, dt, 400, 77).unwrap();
        let coarse = coarse_grain(&fine, 2).unwrap();
        let (_, v) = mean_var(coarse.increments());
        let target = dt / coarse.grid().cell_volume();
        assert!((v / target - 1.0).abs() < 0.02, "{}", v / target);
    }

    #[test]
    fn coarse_graining_commutes_and_lazy_agrees() {
        let g = make_grid(4).unwrap();
        let fine = sample_noise(g, 0.02, 3, 8).unwrap();
        let direct = coarse_grain(&fine, 1).unwrap();
        let staged = coarse_grain(&coarse_grain(&fine, 3).unwrap(), 1).unwrap();
        assert_eq!(direct, staged);
        let lazy = LazyNoise::new(g, make_grid(1).unwrap(), 0.02, 3, 8).unwrap();
        assert_eq!(lazy.materialize().unwrap().increments(), direct.increments());
    }

    #[test]
    fn header_regeneration() {
        let g = make_grid(2).unwrap();
        let n = sample_noise(g, 0.25, 4, 123).unwrap();
        let mut buf = Vec::new();
        n.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * 4 * 64);
        assert_eq!(NoiseField::read_from(&buf[..]).unwrap(), n);
        assert_eq!(NoiseField::regenerate_from_header(&buf[..32]).unwrap(), n);
    }

    #[test]
    fn identity_mollifier_is_identity() {
        let g = make_grid(3).unwrap();
        let dt = g.eps().powi(2) / 4.0;
        let n = sample_noise(g, dt, 6, 3).unwrap();
        let id = Mollifier::identity(g, dt);
        id.validate(g.eps(), 1.0, 64.0).unwrap();
        let out = mollify_noise(&n, &id).unwrap();
        assert_eq!(out.increments(), n.increments());
    }

    #[test]
    fn bump_mollifier_smooths() {
        let g = make_grid(3).unwrap();
        let dt = g.eps().powi(2) / 4.0;
        let psi = Mollifier::bump(g, dt, 0.25).unwrap();
        psi.validate(0.25, 1.0, 1e3).unwrap();
        assert!((psi.total_mass() - 1.0).abs() < 1e-12);
        let l = psi.half_width();
        let n = sample_noise(g, dt, 2 * l + 40, 4).unwrap();
        let out = mollify_noise(&n, &psi).unwrap();
        assert_eq!(out.steps(), 40);
        let (m, v_out) = mean_var(out.increments());
        let (_, v_in) = mean_var(n.increments());
        assert!(v_out < v_in);
        let se = (v_out / out.increments().len() as f64).sqrt();
        // neighbouring outputs are correlated; the bound is loose on purpose
        assert!(m.abs() < 3.0 * se * (2.0 * l as f64 + 1.0).sqrt() * 8.0);
    }

    #[test]
    fn mollifier_validation_rejects_bad_mass() {
        let g = make_grid(2).unwrap();
        let dt = 0.01;
        let mut psi = Mollifier::identity(g, dt);
        psi.time[0] *= 2.0;
        assert!(psi.validate(g.eps(), 1.0, 64.0).is_err());
        let n = sample_noise(g, dt, 3, 1).unwrap();
        assert!(mollify_noise(&n, &psi).is_err());
        let wide = Mollifier::bump(g, dt, 0.5).unwrap();
        assert!(wide.validate(0.1, 1.0, 1e6).is_err());
    }
}
