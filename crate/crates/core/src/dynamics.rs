//! Time integration of the renormalised lattice Φ⁴₃ equation
//! `∂_t Φ = ΔΦ + (C − a)Φ − λΦ³ + ξ` and the coupled multi-level experiments.
//!
//! One step of size `δt` is exponential Euler: the reaction is applied
//! explicitly, the Laplacian exactly in Fourier space, and the stochastic
//! convolution of the slice increment is added after the linear step with
//! the per-mode filter of [`KernelSet::ou_filter`].

use crate::error::{Error, Result};
use crate::field::{GridField, Trajectory};
use crate::grid::Grid;
use crate::kernels::{c2_direct_sum, C2Method, KernelSet, RenormConstants};
use crate::noise::{halve, white_slice, LazyNoise, Mollifier, NoiseSource, mollify_noise};
use crate::spectral::{negated_index, propagate_pair};
use crate::wavelets::{
    build_grid_mra, holder_distance, holder_distance_up_to, holder_norm, spacetime_distance, GridMRA, SeminormOptions,
    WaveletBasis,
};
use num_complex::Complex64;
use rayon::prelude::*;
use std::io::{Read, Write};

/// Default sup-norm threshold for the blow-up guard.
pub const DEFAULT_BLOWUP: f64 = 1e6;
/// Hölder exponent of the per-checkpoint diagnostics.
pub const DIAGNOSTIC_ALPHA: f64 = -0.6;
/// Default number of steps between recorded slices.
pub const DEFAULT_STRIDE: usize = 16;

/// Parameters of one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phi4Params {
    /// Mass `a`.
    pub mass: f64,
    pub lambda: f64,
    /// Renormalisation constant `C^(ε)`.
    pub c_eps: f64,
    pub dt: f64,
    pub t_final: f64,
    pub blowup: f64,
    /// Steps between recorded trajectory slices.
    pub stride: usize,
}

impl Phi4Params {
    /// `δt = ε²/4`, `K = 10⁶`, default stride.
    pub fn new(grid: Grid, mass: f64, lambda: f64, c_eps: f64, t_final: f64) -> Self {
        Self {
            mass,
            lambda,
            c_eps,
            dt: grid.eps().powi(2) / 4.0,
            t_final,
            blowup: DEFAULT_BLOWUP,
            stride: DEFAULT_STRIDE,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    /// Number of steps covering `[0, T]`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Checks finiteness, `λ ≥ 0`, `0 < δt ≤ ε²/4`, `T ≥ 0`, `K > 0`, stride ≥ 1.
    pub fn validate(&self, grid: Grid) -> Result<()> {
        let finite = [self.mass, self.lambda, self.c_eps, self.dt, self.t_final, self.blowup]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("dynamics parameters must be finite".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("coupling must be non-negative, got {}", self.lambda)));
        }
        let limit = grid.eps().powi(2) / 4.0;
        if !(self.dt > 0.0) || self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "time step {} outside (0, ε²/4 = {limit}]",
                self.dt
            )));
        }
        if self.t_final < 0.0 {
            return Err(Error::Config(format!("final time {} is negative", self.t_final)));
        }
        if !(self.blowup > 0.0) {
            return Err(Error::Config("blow-up threshold must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("trajectory stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Precomputed per-mode factors for repeated steps on one grid.
#[derive(Clone, Debug)]
pub struct Phi4Stepper {
    grid: Grid,
    decay: Vec<f64>,
    filter: Vec<f64>,
    neg: Vec<usize>,
    linear: f64,
    lambda: f64,
    dt: f64,
}

impl Phi4Stepper {
    pub fn new(kernels: &KernelSet, params: &Phi4Params) -> Result<Self> {
        let grid = kernels.grid();
        params.validate(grid)?;
        Ok(Self {
            grid,
            decay: kernels.heat_multiplier(params.dt),
            filter: kernels.ou_filter(params.dt),
            neg: negated_index(grid),
            linear: params.c_eps - params.mass,
            lambda: params.lambda,
            dt: params.dt,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// One step driven by the increments `noise` of the current slice.
    pub fn step(&self, state: &GridField, noise: &[f64]) -> Result<GridField> {
        if state.grid() != self.grid || noise.len() != self.grid.len() {
            return Err(Error::Dimension("state or noise slice on a different grid".into()));
        }
        let (dt, r, l) = (self.dt, self.linear, self.lambda);
        let u: Vec<f64> = state
            .values()
            .iter()
            .map(|&p| p + dt * (r * p - l * p * p * p))
            .collect();
        let out = propagate_pair(self.grid, &u, noise, &self.decay, &self.filter, &self.neg);
        GridField::new(self.grid, out)
    }
}

/// One step of the renormalised equation.
pub fn step_phi4(
    state: &GridField,
    noise_slice: &[f64],
    params: &Phi4Params,
    kernels: &KernelSet,
) -> Result<GridField> {
    Phi4Stepper::new(kernels, params)?.step(state, noise_slice)
}

/// Norms of a recorded slice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostic {
    pub t: f64,
    pub sup_norm: f64,
    /// Haar estimate of the `C^{-0.6}` norm.
    pub holder_norm: f64,
}

/// Outcome of a run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub trajectory: Trajectory,
    /// Time at which the sup norm first exceeded `K`, if before `T`.
    pub stopped_at: Option<f64>,
    /// Last state before stopping, or the state at `T`.
    pub final_state: GridField,
    pub diagnostics: Vec<Diagnostic>,
}

/// A run in progress; can be advanced piecewise and snapshotted.
#[derive(Clone, Debug)]
pub struct Simulation {
    stepper: Phi4Stepper,
    params: Phi4Params,
    mra: GridMRA,
    state: GridField,
    step: usize,
    total: usize,
    stopped_at: Option<f64>,
    trajectory: Trajectory,
    diagnostics: Vec<Diagnostic>,
}

impl Simulation {
    pub fn new(initial: GridField, kernels: &KernelSet, params: &Phi4Params) -> Result<Self> {
        let grid = kernels.grid();
        if initial.grid() != grid {
            return Err(Error::Dimension("initial state on a different grid".into()));
        }
        let mut sim = Self {
            stepper: Phi4Stepper::new(kernels, params)?,
            params: *params,
            mra: build_grid_mra(grid, WaveletBasis::haar(), 0)?,
            state: initial,
            step: 0,
            total: params.steps(),
            stopped_at: None,
            trajectory: Trajectory::new(grid),
            diagnostics: Vec::new(),
        };
        if !sim.state.is_finite() || sim.state.sup_norm() > params.blowup {
            sim.stopped_at = Some(0.0);
        } else {
            sim.record()?;
        }
        Ok(sim)
    }

    fn time(&self) -> f64 {
        self.step as f64 * self.params.dt
    }

    fn record(&mut self) -> Result<()> {
        let t = self.time();
        self.diagnostics.push(Diagnostic {
            t,
            sup_norm: self.state.sup_norm(),
            holder_norm: holder_norm(&self.state, DIAGNOSTIC_ALPHA, &self.mra)?,
        });
        self.trajectory.push(t, self.state.clone())
    }

    pub fn is_finished(&self) -> bool {
        self.stopped_at.is_some() || self.step >= self.total
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total
    }

    pub fn state(&self) -> &GridField {
        &self.state
    }

    pub fn params(&self) -> &Phi4Params {
        &self.params
    }

    /// Advances one step with the given increments; no-op once finished.
    pub fn advance_with(&mut self, noise: &[f64]) -> Result<()> {
        if self.is_finished() {
            return Ok(());
        }
        let next = self.stepper.step(&self.state, noise)?;
        self.step += 1;
        if !next.is_finite() || next.sup_norm() > self.params.blowup {
            self.stopped_at = Some(self.time());
            return Ok(());
        }
        self.state = next;
        if self.step.is_multiple_of(self.params.stride) || self.step == self.total {
            self.record()?;
        }
        Ok(())
    }

    /// Advances with slices `step..` of `noise`, at most `max_steps` of them.
    /// Returns the number of steps taken.
    pub fn advance(&mut self, noise: &dyn NoiseSource, max_steps: Option<usize>) -> Result<usize> {
        check_noise(noise, self.stepper.grid, &self.params)?;
        let start = self.step;
        let end = max_steps.map_or(self.total, |m| start.saturating_add(m).min(self.total));
        while self.step < end && !self.is_finished() {
            let slice = noise.slice(self.step);
            self.advance_with(&slice)?;
        }
        Ok(self.step - start)
    }

    pub fn into_result(self) -> RunResult {
        RunResult {
            trajectory: self.trajectory,
            stopped_at: self.stopped_at,
            final_state: self.state,
            diagnostics: self.diagnostics,
        }
    }

    /// Serialises the mutable part of the run.
    pub fn write_snapshot(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"PHI4SNAP")?;
        w.write_all(&(self.step as u64).to_le_bytes())?;
        w.write_all(&self.stopped_at.unwrap_or(f64::NAN).to_le_bytes())?;
        self.state.write_to(&mut w)?;
        w.write_all(&(self.diagnostics.len() as u64).to_le_bytes())?;
        for d in &self.diagnostics {
            for v in [d.t, d.sup_norm, d.holder_norm] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        self.trajectory.write_to(&mut w)
    }

    /// Rebuilds a run from a snapshot and the parameters it was started with.
    pub fn read_snapshot(mut r: impl Read, kernels: &KernelSet, params: &Phi4Params) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"PHI4SNAP" {
            return Err(Error::Format("not a simulation snapshot".into()));
        }
        let step = read_u64(&mut r)? as usize;
        let stopped = read_f64(&mut r)?;
        let state = GridField::read_from(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let mut diagnostics = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            diagnostics.push(Diagnostic {
                t: read_f64(&mut r)?,
                sup_norm: read_f64(&mut r)?,
                holder_norm: read_f64(&mut r)?,
            });
        }
        let trajectory = Trajectory::read_from(&mut r)?;
        let mut sim = Self::new(state.clone(), kernels, params)?;
        if step > sim.total {
            return Err(Error::Format(format!(
                "snapshot at step {step} beyond the {} steps of this run",
                sim.total
            )));
        }
        sim.step = step;
        sim.stopped_at = if stopped.is_nan() { None } else { Some(stopped) };
        sim.state = state;
        sim.diagnostics = diagnostics;
        sim.trajectory = trajectory;
        Ok(sim)
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn check_noise(noise: &dyn NoiseSource, grid: Grid, params: &Phi4Params) -> Result<()> {
    if noise.grid() != grid {
        return Err(Error::Dimension("noise on a different grid".into()));
    }
    if (noise.dt() - params.dt).abs() > 1e-15 * params.dt {
        return Err(Error::Config(format!(
            "noise time step {} differs from the run's {}",
            noise.dt(),
            params.dt
        )));
    }
    if noise.steps() < params.steps() {
        return Err(Error::Config(format!(
            "noise covers {} steps, run needs {}",
            noise.steps(),
            params.steps()
        )));
    }
    Ok(())
}

/// Iterates [`step_phi4`] over `[0, T]`, stopping if the sup norm exceeds `K`.
pub fn run_simulation(
    initial: GridField,
    noise: &dyn NoiseSource,
    params: &Phi4Params,
    kernels: &KernelSet,
) -> Result<RunResult> {
    check_noise(noise, kernels.grid(), params)?;
    let mut sim = Simulation::new(initial, kernels, params)?;
    sim.advance(noise, None)?;
    Ok(sim.into_result())
}

/// `c2` quadrature used for a level: direct sum up to `N = 4`, Monte Carlo above.
pub fn default_c2_method(level: u32, samples: u64, seed: u64) -> C2Method {
    if level <= 4 {
        C2Method::DirectSum { dt: None }
    } else {
        C2Method::MonteCarlo {
            samples,
            seed,
            tolerance: 0.05,
        }
    }
}

/// Constants of one level in a convergence table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelConstants {
    pub level: u32,
    pub c1: f64,
    pub c2: f64,
    pub c2_stderr: f64,
    /// Mass counterterm used in the runs (zero in the ablation).
    pub c_eps: f64,
}

/// Setup of a coupled multi-level experiment.
#[derive(Clone, Debug)]
pub struct ConvergenceConfig {
    pub levels: Vec<u32>,
    pub seeds: Vec<u64>,
    pub mass: f64,
    pub lambda: f64,
    pub t_final: f64,
    pub alpha: f64,
    /// `false` runs every level with `c_eps = 0`.
    pub renormalise: bool,
    pub c2_samples: u64,
    pub c2_seed: u64,
    /// Adds the space-time distance over recorded slices.
    pub spacetime: Option<SeminormOptions>,
    pub stride: usize,
    pub blowup: f64,
}

impl ConvergenceConfig {
    pub fn new(levels: Vec<u32>, seeds: Vec<u64>, mass: f64, lambda: f64, t_final: f64) -> Self {
        Self {
            levels,
            seeds,
            mass,
            lambda,
            t_final,
            alpha: -0.6,
            renormalise: true,
            c2_samples: 1 << 20,
            c2_seed: 0xC2C2,
            spacetime: None,
            stride: DEFAULT_STRIDE,
            blowup: DEFAULT_BLOWUP,
        }
    }
}

/// Distance between consecutive levels for one seed. `None` when either run stopped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceRow {
    pub seed: u64,
    pub coarse: u32,
    pub fine: u32,
    pub alpha: f64,
    pub distance: Option<f64>,
    /// Distance restricted to detail levels below the coarsest level of the experiment.
    pub fixed_scale: Option<f64>,
    pub spacetime: Option<f64>,
}

/// Result of [`coupled_convergence`].
#[derive(Clone, Debug)]
pub struct ConvergenceTable {
    pub constants: Vec<LevelConstants>,
    pub rows: Vec<DistanceRow>,
    /// Per seed and level, the stopping time if the run stopped.
    pub stopped: Vec<(u64, u32, f64)>,
}

impl ConvergenceTable {
    /// Median over seeds with both runs completed; stopped runs are excluded.
    pub fn median(&self, coarse: u32, fine: u32) -> Option<f64> {
        median(
            self.rows
                .iter()
                .filter(|r| r.coarse == coarse && r.fine == fine)
                .filter_map(|r| r.distance)
                .collect(),
        )
    }

    pub fn median_fixed_scale(&self, coarse: u32, fine: u32) -> Option<f64> {
        median(
            self.rows
                .iter()
                .filter(|r| r.coarse == coarse && r.fine == fine)
                .filter_map(|r| r.fixed_scale)
                .collect(),
        )
    }

    pub fn median_spacetime(&self, coarse: u32, fine: u32) -> Option<f64> {
        median(
            self.rows
                .iter()
                .filter(|r| r.coarse == coarse && r.fine == fine)
                .filter_map(|r| r.spacetime)
                .collect(),
        )
    }

    /// Number of seeds excluded from the median of a pair.
    pub fn censored(&self, coarse: u32, fine: u32) -> usize {
        self.rows
            .iter()
            .filter(|r| r.coarse == coarse && r.fine == fine && r.distance.is_none())
            .count()
    }
}

/// Median of a sample (mean of the middle pair for even sizes).
pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Kernel data of a level with `c2` computed by [`default_c2_method`].
pub fn level_kernels(level: u32, c2_samples: u64, c2_seed: u64) -> Result<KernelSet> {
    KernelSet::new(Grid::new(level)?).with_c2(default_c2_method(level, c2_samples, c2_seed))
}

/// Runs every level from `Φ₀ = 0` with noise coarse-grained from the finest
/// level, all levels sharing the finest time step, and reports the Hölder
/// distances between consecutive levels at time `T`.
pub fn coupled_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceTable> {
    if cfg.levels.len() < 2 {
        return Err(Error::Config("need at least two levels".into()));
    }
    if cfg.levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "levels must be strictly increasing, got {:?}",
            cfg.levels
        )));
    }
    let kernels: Vec<KernelSet> = cfg
        .levels
        .iter()
        .map(|&n| level_kernels(n, cfg.c2_samples, cfg.c2_seed))
        .collect::<Result<_>>()?;
    let constants: Vec<LevelConstants> = kernels
        .iter()
        .map(|k| -> Result<LevelConstants> {
            let c = k.constants()?;
            Ok(LevelConstants {
                level: k.grid().level(),
                c1: c.c1,
                c2: c.c2,
                c2_stderr: k.c2().map_or(0.0, |e| e.stderr),
                c_eps: if cfg.renormalise { c.c_total(cfg.lambda) } else { 0.0 },
            })
        })
        .collect::<Result<_>>()?;
    let fine = kernels.last().unwrap().grid();
    let dt = fine.eps().powi(2) / 4.0;
    let params: Vec<Phi4Params> = constants
        .iter()
        .zip(&kernels)
        .map(|(c, k)| Phi4Params {
            blowup: cfg.blowup,
            ..Phi4Params::new(k.grid(), cfg.mass, cfg.lambda, c.c_eps, cfg.t_final)
                .with_dt(dt)
                .with_stride(cfg.stride)
        })
        .collect();
    let mras: Vec<GridMRA> = kernels
        .iter()
        .map(|k| build_grid_mra(k.grid(), WaveletBasis::haar(), 0))
        .collect::<Result<_>>()?;
    let per_seed: Vec<(Vec<DistanceRow>, Vec<(u64, u32, f64)>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let runs = run_coupled_levels(&kernels, &params, fine, seed)?;
            let mut rows = Vec::new();
            let mut stopped = Vec::new();
            for (r, k) in runs.iter().zip(&kernels) {
                if let Some(t) = r.stopped_at {
                    stopped.push((seed, k.grid().level(), t));
                }
            }
            for i in 0..runs.len() - 1 {
                let (a, b) = (&runs[i], &runs[i + 1]);
                let ok = a.stopped_at.is_none() && b.stopped_at.is_none();
                let distance = if ok {
                    Some(holder_distance(&a.final_state, &b.final_state, cfg.alpha, &mras[i + 1])?)
                } else {
                    None
                };
                let fixed_scale = if ok {
                    Some(holder_distance_up_to(
                        &a.final_state,
                        &b.final_state,
                        cfg.alpha,
                        &mras[i + 1],
                        cfg.levels[0],
                    )?)
                } else {
                    None
                };
                let spacetime = match (&cfg.spacetime, ok) {
                    (Some(o), true) => Some(spacetime_distance(&a.trajectory, &b.trajectory, &mras[i + 1], o)?),
                    _ => None,
                };
                rows.push(DistanceRow {
                    seed,
                    coarse: cfg.levels[i],
                    fine: cfg.levels[i + 1],
                    alpha: cfg.alpha,
                    distance,
                    fixed_scale,
                    spacetime,
                });
            }
            Ok((rows, stopped))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut stopped = Vec::new();
    for (r, s) in per_seed {
        rows.extend(r);
        stopped.extend(s);
    }
    Ok(ConvergenceTable { constants, rows, stopped })
}

/// Runs all levels in lockstep; each fine slice is generated once and halved
/// down through the levels.
pub fn run_coupled_levels(
    kernels: &[KernelSet],
    params: &[Phi4Params],
    fine: Grid,
    seed: u64,
) -> Result<Vec<RunResult>> {
    let mut sims: Vec<Simulation> = kernels
        .iter()
        .zip(params)
        .map(|(k, p)| Simulation::new(GridField::zeros(k.grid()), k, p))
        .collect::<Result<_>>()?;
    let steps = sims.iter().map(|s| s.total_steps()).max().unwrap_or(0);
    let dt = params[0].dt;
    for j in 0..steps {
        if sims.iter().all(|s| s.is_finished()) {
            break;
        }
        let mut slice = white_slice(seed, fine, dt, j as u64);
        let mut level = fine.level();
        for sim in sims.iter_mut().rev() {
            let target = sim.stepper.grid.level();
            while level > target {
                slice = halve(&slice, Grid::new(level)?);
                level -= 1;
            }
            sim.advance_with(&slice)?;
        }
    }
    Ok(sims.into_iter().map(Simulation::into_result).collect())
}

/// `R(d) = δt² Σ_i ρ_i ρ_{i+d}` for `d ∈ [−2L, 2L]`, indexed by `d + 2L`.
fn time_autocorrelation(psi: &Mollifier) -> Vec<f64> {
    let rho = psi.time_weights();
    let n = rho.len();
    let dt2 = psi.dt() * psi.dt();
    (0..2 * n - 1)
        .map(|s| {
            let d = s as isize - (n as isize - 1);
            (0..n as isize)
                .filter(|&i| i + d >= 0 && i + d < n as isize)
                .map(|i| rho[i as usize] * rho[(i + d) as usize])
                .sum::<f64>()
                * dt2
        })
        .collect()
}

/// `c1` for the kernel convolved with a mollifier:
/// `Σ_{k≠0} |σ̂_k|² Σ_d R(d) (e^{a|d|δt} − e^{a(2T−|d|δt)}) / (2|a|)`.
pub fn mollified_c1(kernels: &KernelSet, psi: &Mollifier) -> Result<f64> {
    if psi.grid() != kernels.grid() {
        return Err(Error::Dimension("mollifier on a different grid".into()));
    }
    if psi.is_identity() {
        return Ok(kernels.c1());
    }
    let sigma = psi.spatial_symbol();
    let r = time_autocorrelation(psi);
    let half = (r.len() / 2) as isize;
    let (dt, t_k) = (psi.dt(), kernels.time_cutoff());
    Ok(kernels.symbols()[1..]
        .par_iter()
        .zip(&sigma[1..])
        .map(|(&a, s)| {
            let inner: f64 = r
                .iter()
                .enumerate()
                .map(|(i, &rd)| {
                    let tau = ((i as isize - half).abs() as f64 * dt).min(t_k);
                    rd * ((a * tau).exp() - (a * (2.0 * t_k - tau)).exp())
                })
                .sum();
            s.norm_sqr() * inner / (-2.0 * a)
        })
        .sum())
}

/// `c2` for the mollified kernel: the stored `c2(ε)` plus the difference of
/// the mollified and unmollified direct-sum quadratures at step `quad_dt`.
pub fn mollified_c2(kernels: &KernelSet, psi: &Mollifier, quad_dt: f64) -> Result<f64> {
    let base = kernels
        .c2()
        .ok_or_else(|| Error::Config("c2 has not been computed for this kernel set".into()))?
        .value;
    if psi.grid() != kernels.grid() {
        return Err(Error::Dimension("mollifier on a different grid".into()));
    }
    if psi.is_identity() {
        return Ok(base);
    }
    let grid = kernels.grid();
    let s = kernels.symbols();
    let t_k = kernels.time_cutoff();
    let sigma2: Vec<f64> = psi.spatial_symbol().iter().map(Complex64::norm_sqr).collect();
    let r = time_autocorrelation(psi);
    let dt = psi.dt();
    let half = r.len() / 2;
    let span = 2.0 * half as f64 * dt;
    // h_m(t) = σ² Σ_d R(d) h(t − dδt) with h(τ) = τ e^{aτ} 1_{τ>0}; for t ≥ span
    // this is e^{a(t − span)} (t A − B).
    let (amp, shift): (Vec<f64>, Vec<f64>) = s
        .par_iter()
        .map(|&a| {
            let (mut p, mut q) = (0.0, 0.0);
            for (i, &rd) in r.iter().enumerate() {
                let off = (i as f64 - half as f64) * dt;
                let w = rd * (a * (span - off)).exp();
                p += w;
                q += w * off;
            }
            (p, q)
        })
        .unzip();
    let h_m = |k: usize, t: f64| -> f64 {
        if k == 0 {
            return 0.0;
        }
        let a = s[k];
        let v = if t >= span {
            (a * (t - span)).exp() * (t * amp[k] - shift[k])
        } else {
            r.iter()
                .enumerate()
                .map(|(i, &rd)| {
                    let tau = t - (i as f64 - half as f64) * dt;
                    if tau > 0.0 { rd * tau * (a * tau).exp() } else { 0.0 }
                })
                .sum()
        };
        sigma2[k] * v
    };
    let g = |k: usize, t: f64| if k == 0 { 0.0 } else { (t * s[k]).exp() };
    let plain = c2_direct_sum(grid, t_k, quad_dt, |k, t| if k == 0 { 0.0 } else { t * (t * s[k]).exp() }, g);
    let moll = c2_direct_sum(grid, t_k, quad_dt, h_m, g);
    Ok(base + moll - plain)
}

/// Constants of the mollified kernel.
pub fn mollified_constants(kernels: &KernelSet, psi: &Mollifier, quad_dt: f64) -> Result<RenormConstants> {
    Ok(RenormConstants {
        c1: mollified_c1(kernels, psi)?,
        c2: mollified_c2(kernels, psi, quad_dt)?,
    })
}

/// Mollifier of a comparison row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MollifierSpec {
    Identity,
    Bump { eps_bar: f64 },
}

impl MollifierSpec {
    pub fn build(&self, grid: Grid, dt: f64) -> Result<Mollifier> {
        match *self {
            MollifierSpec::Identity => Ok(Mollifier::identity(grid, dt)),
            MollifierSpec::Bump { eps_bar } => {
                let m = Mollifier::bump(grid, dt, eps_bar)?;
                m.validate(eps_bar, 1.0, 1e3)?;
                Ok(m)
            }
        }
    }

    pub fn scale(&self, grid: Grid) -> f64 {
        match *self {
            MollifierSpec::Identity => grid.eps(),
            MollifierSpec::Bump { eps_bar } => eps_bar,
        }
    }
}

/// Setup of [`mollified_comparison`].
#[derive(Clone, Debug)]
pub struct MollifiedConfig {
    pub level: u32,
    pub mollifiers: Vec<MollifierSpec>,
    pub seeds: Vec<u64>,
    pub mass: f64,
    pub lambda: f64,
    pub t_final: f64,
    pub alpha: f64,
    pub c2_samples: u64,
    pub c2_seed: u64,
    /// Time step of the `c2` difference quadrature; `None` uses `ε²/16`.
    pub quad_dt: Option<f64>,
}

impl MollifiedConfig {
    pub fn new(level: u32, mollifiers: Vec<MollifierSpec>, seeds: Vec<u64>, mass: f64, lambda: f64, t_final: f64) -> Self {
        Self {
            level,
            mollifiers,
            seeds,
            mass,
            lambda,
            t_final,
            alpha: -0.6,
            c2_samples: 1 << 20,
            c2_seed: 0xC2C2,
            quad_dt: None,
        }
    }
}

/// Distance between the mollified and unmollified runs for one seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MollifiedRow {
    pub seed: u64,
    pub eps_bar: f64,
    pub c1: f64,
    pub c2: f64,
    pub c_eps: f64,
    /// `None` when either run stopped.
    pub distance: Option<f64>,
}

/// Runs the dynamics with mollified noise and mollified-kernel constants and
/// compares with the unmollified run driven by the same white noise, aligned
/// on the mollifier centre.
pub fn mollified_comparison(cfg: &MollifiedConfig) -> Result<Vec<MollifiedRow>> {
    let kernels = level_kernels(cfg.level, cfg.c2_samples, cfg.c2_seed)?;
    let grid = kernels.grid();
    let base = Phi4Params::new(grid, cfg.mass, cfg.lambda, 0.0, cfg.t_final);
    let steps = base.steps();
    let quad_dt = cfg.quad_dt.unwrap_or(grid.eps().powi(2) / 16.0);
    let mra = build_grid_mra(grid, WaveletBasis::haar(), 0)?;
    let molls: Vec<(Mollifier, RenormConstants)> = cfg
        .mollifiers
        .iter()
        .map(|m| -> Result<_> {
            let psi = m.build(grid, base.dt)?;
            let c = mollified_constants(&kernels, &psi, quad_dt)?;
            Ok((psi, c))
        })
        .collect::<Result<_>>()?;
    let l_max = molls.iter().map(|(p, _)| p.half_width()).max().unwrap_or(0);
    let reference_params = Phi4Params {
        c_eps: kernels.constants()?.c_total(cfg.lambda),
        ..base
    };
    let per_seed: Vec<Vec<MollifiedRow>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<_> {
            let white = LazyNoise::new(grid, grid, base.dt, steps, seed)?;
            let reference = run_simulation(
                GridField::zeros(grid),
                &white.shifted(l_max as u64, steps),
                &reference_params,
                &kernels,
            )?;
            let mut rows = Vec::new();
            for ((psi, c), spec) in molls.iter().zip(&cfg.mollifiers) {
                let l = psi.half_width();
                let input = white.shifted((l_max - l) as u64, steps + 2 * l);
                let noise = mollify_noise(&input, psi)?;
                let params = Phi4Params {
                    c_eps: c.c_total(cfg.lambda),
                    ..base
                };
                let run = run_simulation(GridField::zeros(grid), &noise, &params, &kernels)?;
                let distance = if run.stopped_at.is_none() && reference.stopped_at.is_none() {
                    Some(holder_distance(&reference.final_state, &run.final_state, cfg.alpha, &mra)?)
                } else {
                    None
                };
                rows.push(MollifiedRow {
                    seed,
                    eps_bar: spec.scale(grid),
                    c1: c.c1,
                    c2: c.c2,
                    c_eps: params.c_eps,
                    distance,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::kernels::heat_semigroup_apply;
    use crate::noise::sample_noise;
    use crate::rng::SeededStream;
    use crate::spectral::forward_transform;
    use crate::stats::{std_error, variance};

    fn random_field(n: u32, seed: u64) -> GridField {
        let g = make_grid(n).unwrap();
        GridField::new(g, SeededStream::new(seed, n, 0).normals(g.len())).unwrap()
    }

    #[test]
    fn pure_heat_step() {
        let f = random_field(3, 1);
        let k = KernelSet::new(f.grid());
        let p = Phi4Params::new(f.grid(), 0.0, 0.0, 0.0, 1.0);
        let out = step_phi4(&f, &vec![0.0; f.grid().len()], &p, &k).unwrap();
        let heat = heat_semigroup_apply(&f, p.dt, &k).unwrap();
        for (a, b) in out.values().iter().zip(heat.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_reaction_step() {
        let g = make_grid(2).unwrap();
        let k = KernelSet::new(g);
        let p = Phi4Params::new(g, 1.0, 0.3, 5.0, 1.0);
        let c = 1.7;
        let out = step_phi4(&GridField::constant(g, c), &vec![0.0; g.len()], &p, &k).unwrap();
        let expect = c + p.dt * ((5.0 - 1.0) * c - 0.3 * c * c * c);
        for v in out.values() {
            assert!((v - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn params_validation() {
        let g = make_grid(3).unwrap();
        let p = Phi4Params::new(g, 1.0, 0.1, 0.0, 0.5);
        assert!(p.validate(g).is_ok());
        assert!(p.with_dt(g.eps().powi(2)).validate(g).is_err());
        assert!(Phi4Params { lambda: -1.0, ..p }.validate(g).is_err());
        assert!(p.with_stride(0).validate(g).is_err());
        assert_eq!(p.steps(), 128);
    }

    #[test]
    fn final_time_zero_returns_initial() {
        let f = random_field(2, 3);
        let k = KernelSet::new(f.grid());
        let p = Phi4Params::new(f.grid(), 1.0, 0.1, 0.0, 0.0);
        let noise = sample_noise(f.grid(), p.dt, 1, 0).unwrap();
        let r = run_simulation(f.clone(), &noise, &p, &k).unwrap();
        assert_eq!(r.final_state, f);
        assert_eq!(r.trajectory.len(), 1);
        assert!(r.stopped_at.is_none());
    }

    #[test]
    fn blowup_is_reported() {
        let g = make_grid(2).unwrap();
        let k = KernelSet::new(g);
        let p = Phi4Params::new(g, 0.0, 1e3, 0.0, 0.1);
        let noise = sample_noise(g, p.dt, p.steps(), 0).unwrap();
        let r = run_simulation(GridField::constant(g, 100.0), &noise, &p, &k).unwrap();
        let t = r.stopped_at.expect("guard fires");
        assert!(t < p.t_final);
        assert!(r.final_state.is_finite());
    }

    #[test]
    fn short_noise_rejected() {
        let g = make_grid(2).unwrap();
        let k = KernelSet::new(g);
        let p = Phi4Params::new(g, 1.0, 0.1, 0.0, 0.1);
        let noise = sample_noise(g, p.dt, p.steps() - 1, 0).unwrap();
        assert!(run_simulation(GridField::zeros(g), &noise, &p, &k).is_err());
    }

    #[test]
    fn standard_parameters_complete() {
        let g = make_grid(3).unwrap();
        let k = KernelSet::new(g).with_c2(C2Method::DirectSum { dt: None }).unwrap();
        let c = k.constants().unwrap().c_total(0.1);
        let p = Phi4Params::new(g, 1.0, 0.1, c, 0.5);
        for seed in 0..10 {
            let noise = LazyNoise::new(g, g, p.dt, p.steps(), seed).unwrap();
            let r = run_simulation(GridField::zeros(g), &noise, &p, &k).unwrap();
            assert!(r.stopped_at.is_none(), "seed {seed}");
            assert_eq!(r.diagnostics.len(), r.trajectory.len());
        }
    }

    #[test]
    fn ou_stationary_variance() {
        // λ = 0, a = 1: per-mode variance 1/(2(|a(k)| + a)) after burn-in
        let g = make_grid(2).unwrap();
        let k = KernelSet::new(g);
        let p = Phi4Params::new(g, 1.0, 0.0, 0.0, 0.0);
        let stepper = Phi4Stepper::new(&k, &p).unwrap();
        let mut state = GridField::zeros(g);
        let modes = [1usize, 5, 21, 42];
        let mut samples: Vec<Vec<f64>> = vec![Vec::new(); modes.len()];
        let burn = 200;
        let thin = 50;
        for j in 0..burn + 2000 * thin {
            state = stepper.step(&state, &white_slice(7, g, p.dt, j as u64)).unwrap();
            if j >= burn && (j - burn) % thin == 0 {
                let c = forward_transform(&state);
                for (s, &m) in samples.iter_mut().zip(&modes) {
                    s.push(c.coeffs()[m].re);
                }
            }
        }
        let neg = negated_index(g);
        for (s, &m) in samples.iter().zip(&modes) {
            // real part of a self-conjugate mode carries the full variance
            let share = if neg[m] == m { 1.0 } else { 0.5 };
            let target = share * 0.5 / (-k.symbols()[m] + 1.0);
            let sq: Vec<f64> = s.iter().map(|x| x * x).collect();
            let z = (variance(s) - target) / std_error(&sq);
            assert!(z.abs() < 3.5, "mode {m}: var {} target {target}", variance(s));
        }
    }

    #[test]
    fn snapshot_resume_is_identical() {
        let g = make_grid(3).unwrap();
        let k = KernelSet::new(g);
        let p = Phi4Params::new(g, 1.0, 0.1, 2.0, 0.05).with_stride(5);
        let noise = LazyNoise::new(g, g, p.dt, p.steps(), 4).unwrap();
        let straight = run_simulation(GridField::zeros(g), &noise, &p, &k).unwrap();
        let mut sim = Simulation::new(GridField::zeros(g), &k, &p).unwrap();
        assert_eq!(sim.advance(&noise, Some(13)).unwrap(), 13);
        let mut buf = Vec::new();
        sim.write_snapshot(&mut buf).unwrap();
        let mut resumed = Simulation::read_snapshot(&buf[..], &k, &p).unwrap();
        resumed.advance(&noise, None).unwrap();
        let r = resumed.into_result();
        assert_eq!(r.final_state, straight.final_state);
        assert_eq!(r.trajectory, straight.trajectory);
        assert_eq!(r.diagnostics, straight.diagnostics);
    }

    #[test]
    fn lockstep_matches_independent_runs() {
        let kernels: Vec<KernelSet> = (2..=3).map(|n| KernelSet::new(make_grid(n).unwrap())).collect();
        let fine = make_grid(3).unwrap();
        let dt = fine.eps().powi(2) / 4.0;
        let params: Vec<Phi4Params> = kernels
            .iter()
            .map(|k| Phi4Params::new(k.grid(), 1.0, 0.1, 1.0, 0.02).with_dt(dt))
            .collect();
        let runs = run_coupled_levels(&kernels, &params, fine, 5).unwrap();
        for ((k, p), r) in kernels.iter().zip(&params).zip(&runs) {
            let noise = LazyNoise::new(fine, k.grid(), dt, p.steps(), 5).unwrap();
            let alone = run_simulation(GridField::zeros(k.grid()), &noise, p, k).unwrap();
            assert_eq!(alone.final_state, r.final_state);
        }
    }

    #[test]
    fn convergence_levels_must_increase() {
        let cfg = ConvergenceConfig::new(vec![3, 3, 4], vec![0], 1.0, 0.1, 0.01);
        assert!(coupled_convergence(&cfg).is_err());
        let cfg = ConvergenceConfig::new(vec![4, 3], vec![0], 1.0, 0.1, 0.01);
        assert!(coupled_convergence(&cfg).is_err());
    }

    #[test]
    fn identical_runs_have_zero_distance() {
        let kernels = vec![KernelSet::new(make_grid(3).unwrap()); 2];
        let g = kernels[0].grid();
        let params = vec![Phi4Params::new(g, 1.0, 0.1, 1.0, 0.02); 2];
        let runs = run_coupled_levels(&kernels, &params, g, 2).unwrap();
        let mra = build_grid_mra(g, WaveletBasis::haar(), 0).unwrap();
        let d = holder_distance(&runs[0].final_state, &runs[1].final_state, -0.6, &mra).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn linear_convergence_and_ou_reference() {
        let mut cfg = ConvergenceConfig::new(vec![2, 3, 4], (0..20).collect(), 1.0, 0.0, 0.25);
        cfg.stride = 1 << 20;
        let table = coupled_convergence(&cfg).unwrap();
        let f23 = table.median_fixed_scale(2, 3).unwrap();
        let f34 = table.median_fixed_scale(3, 4).unwrap();
        assert!(f34 < 0.75 * f23, "{f23} {f34}");
        assert_eq!(table.censored(3, 4), 0);

        // finest level against the exact OU law of the lowest modes at time T
        let kernels: Vec<KernelSet> = (2..=4).map(|n| KernelSet::new(make_grid(n).unwrap())).collect();
        let fine = kernels[2].grid();
        let dt = fine.eps().powi(2) / 4.0;
        let params: Vec<Phi4Params> = kernels
            .iter()
            .map(|k| Phi4Params::new(k.grid(), 1.0, 0.0, 0.0, 0.25).with_dt(dt).with_stride(1 << 20))
            .collect();
        let m = fine.side();
        let low: Vec<usize> = (0..3)
            .map(|axis| {
                let mut c = [0usize; 3];
                c[axis] = 1;
                (c[0] * m + c[1]) * m + c[2]
            })
            .collect();
        let a = kernels[2].symbols()[low[0]];
        let rate = -a + 1.0;
        let target = 0.5 * (-(-2.0 * rate * 0.25f64).exp_m1()) / (2.0 * rate);
        let mut sq = Vec::new();
        for seed in 0..100 {
            let runs = run_coupled_levels(&kernels, &params, fine, seed).unwrap();
            let c = forward_transform(&runs[2].final_state);
            for &i in &low {
                sq.push(c.coeffs()[i].re.powi(2));
                sq.push(c.coeffs()[i].im.powi(2));
            }
        }
        let z = (crate::stats::mean(&sq) - target) / std_error(&sq);
        assert!(z.abs() < 3.0, "z = {z}");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(Vec::new()), None);
    }

    #[test]
    fn mollified_c1_is_smaller() {
        let g = make_grid(3).unwrap();
        let k = KernelSet::new(g);
        let dt = g.eps().powi(2) / 4.0;
        let id = Mollifier::identity(g, dt);
        assert_eq!(mollified_c1(&k, &id).unwrap(), k.c1());
        let psi = Mollifier::bump(g, dt, 2.0 * g.eps()).unwrap();
        let c = mollified_c1(&k, &psi).unwrap();
        assert!(c > 0.0 && c < k.c1(), "{c} {}", k.c1());
        let wider = Mollifier::bump(g, dt, 4.0 * g.eps()).unwrap();
        assert!(mollified_c1(&k, &wider).unwrap() < c);
    }

    #[test]
    fn mollified_c2_reduces_to_base() {
        let g = make_grid(2).unwrap();
        let k = KernelSet::new(g).with_c2(C2Method::DirectSum { dt: None }).unwrap();
        let dt = g.eps().powi(2) / 4.0;
        let base = k.c2().unwrap().value;
        assert_eq!(mollified_c2(&k, &Mollifier::identity(g, dt), 1e-3).unwrap(), base);
        let psi = Mollifier::bump(g, dt, 2.0 * g.eps()).unwrap();
        let c = mollified_c2(&k, &psi, g.eps().powi(2) / 16.0).unwrap();
        assert!(c.is_finite() && c < base, "{c} {base}");
    }

    #[test]
    fn identity_mollifier_distance_vanishes() {
        let cfg = MollifiedConfig::new(3, vec![MollifierSpec::Identity], vec![0, 1], 1.0, 0.1, 0.05);
        let rows = mollified_comparison(&cfg).unwrap();
        for r in rows {
            assert!(r.distance.unwrap() < 1e-12, "{:?}", r);
        }
    }

    #[test]
    fn halving_mollifier_scale_reduces_distance() {
        let specs = vec![MollifierSpec::Bump { eps_bar: 0.5 }, MollifierSpec::Bump { eps_bar: 0.25 }];
        let cfg = MollifiedConfig::new(3, specs, (0..10).collect(), 1.0, 0.1, 0.1);
        let rows = mollified_comparison(&cfg).unwrap();
        let med = |e: f64| median(rows.iter().filter(|r| r.eps_bar == e).filter_map(|r| r.distance).collect()).unwrap();
        let (wide, narrow) = (med(0.5), med(0.25));
        assert!(narrow < wide, "{wide} {narrow}");
        let c1: Vec<f64> = rows.iter().take(2).map(|r| r.c1).collect();
        assert!(c1[0] < c1[1]);
    }
}
