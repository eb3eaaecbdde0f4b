//! Gaussian model fields: the stationary linear solution `Ψ`, its Wick powers,
//! the Duhamel integral `Ψ̄` of the Wick cube with its recentring maps, the
//! diagonal reconstruction and the homogeneity scaling test.

use crate::error::{Error, Result};
use crate::field::{pairing, GridField, Profile, TestFunctionSample, Trajectory};
use crate::grid::Grid;
use crate::kernels::KernelSet;
use crate::noise::{LazyNoise, NoiseSource};
use crate::rng::{substream_seed, SeededStream, INIT_STREAM};
use crate::spectral::{negated_index, propagate_pair};
use crate::stats::{bootstrap_interval, linear_fit, mean, std_error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Default distance of `α` below `−5/2`.
pub const DEFAULT_KAPPA: f64 = 0.01;

/// Admissible noise regularity interval `(−18/7, −5/2)`.
pub const ALPHA_RANGE: (f64, f64) = (-18.0 / 7.0, -2.5);

pub fn default_alpha() -> f64 {
    -2.5 - DEFAULT_KAPPA
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymbolName {
    Psi,
    Psi2,
    Psi3,
    PsiBar,
    Psi2Xi,
    PsiPsiBar,
    IPsi2Psi2,
    Psi2PsiBar,
}

impl SymbolName {
    pub const ALL: [SymbolName; 8] = [
        SymbolName::Psi,
        SymbolName::Psi2,
        SymbolName::Psi3,
        SymbolName::PsiBar,
        SymbolName::Psi2Xi,
        SymbolName::PsiPsiBar,
        SymbolName::IPsi2Psi2,
        SymbolName::Psi2PsiBar,
    ];

    /// Whether a field for this symbol is built by [`build_model_bundle`].
    pub fn is_built(self) -> bool {
        matches!(self, Self::Psi | Self::Psi2 | Self::Psi3 | Self::PsiBar)
    }

    /// Whether the model recentres this symbol at its base point.
    pub fn is_recentred(self) -> bool {
        matches!(self, Self::PsiBar)
    }
}

/// A symbol with its homogeneity and Wick order (number of noises).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Symbol {
    pub name: SymbolName,
    pub homogeneity: f64,
    pub wick_order: u32,
}

impl Symbol {
    /// Homogeneity from `|Ξ| = α`, `|I(τ)| = |τ| + 2` and additivity over products.
    pub fn new(name: SymbolName, alpha: f64) -> Result<Self> {
        if !(alpha > ALPHA_RANGE.0 && alpha < ALPHA_RANGE.1) {
            return Err(Error::Domain(format!(
                "α = {alpha} outside ({}, {})",
                ALPHA_RANGE.0, ALPHA_RANGE.1
            )));
        }
        let psi = alpha + 2.0;
        let (homogeneity, wick_order) = match name {
            SymbolName::Psi => (psi, 1),
            SymbolName::Psi2 => (2.0 * psi, 2),
            SymbolName::Psi3 => (3.0 * psi, 3),
            SymbolName::PsiBar => (3.0 * psi + 2.0, 3),
            SymbolName::Psi2Xi => (2.0 * psi + 1.0, 2),
            SymbolName::PsiPsiBar => (4.0 * psi + 2.0, 4),
            SymbolName::IPsi2Psi2 => (4.0 * psi + 2.0, 4),
            SymbolName::Psi2PsiBar => (5.0 * psi + 2.0, 5),
        };
        Ok(Self { name, homogeneity, wick_order })
    }
}

/// Initial condition for [`build_psi`].
#[derive(Clone, Debug)]
pub enum PsiInit {
    /// Draw from the stationary law (zero mode 0) using `seed`.
    Stationary { seed: u64 },
    Zero,
    Field(GridField),
}

/// A sample of the stationary law: mode `k ≠ 0` has `E|Ψ̂_k|² = 1/(2|a(k)|)`.
pub fn stationary_sample(kernels: &KernelSet, seed: u64) -> GridField {
    let grid = kernels.grid();
    let white = SeededStream::new(seed, grid.level(), INIT_STREAM).normals(grid.len());
    let scale = grid.cell_volume().recip().sqrt();
    let mult: Vec<f64> = kernels
        .symbols()
        .iter()
        .map(|&a| if a == 0.0 { 0.0 } else { scale / (-2.0 * a).sqrt() })
        .collect();
    let zeros = vec![0.0; grid.len()];
    let v = propagate_pair(grid, &white, &zeros, &mult, &zeros, &negated_index(grid));
    GridField::new(grid, v).expect("finite")
}

/// Exact per-mode Ornstein–Uhlenbeck recursion
/// `Ψ̂_{j+1} = e^{δt a} Ψ̂_j + f Ŵ_j` with the zero mode held at 0 (a supplied
/// initial field keeps its constant mode only in slice 0).
pub fn build_psi(noise: &dyn NoiseSource, kernels: &KernelSet, init: PsiInit) -> Result<Trajectory> {
    let grid = noise.grid();
    if grid != kernels.grid() {
        return Err(Error::Dimension("noise and kernels on different grids".into()));
    }
    let dt = noise.dt();
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let mut decay = kernels.heat_multiplier(dt);
    let mut filter = kernels.ou_filter(dt);
    decay[0] = 0.0;
    filter[0] = 0.0;
    let neg = negated_index(grid);
    let mut state = match init {
        PsiInit::Stationary { seed } => stationary_sample(kernels, seed),
        PsiInit::Zero => GridField::zeros(grid),
        PsiInit::Field(f) => {
            if f.grid() != grid {
                return Err(Error::Dimension("initial field on a different grid".into()));
            }
            f
        }
    };
    let mut traj = Trajectory::new(grid);
    traj.push(0.0, state.clone())?;
    for j in 0..noise.steps() {
        let w = noise.slice(j);
        let next = propagate_pair(grid, state.values(), &w, &decay, &filter, &neg);
        state = GridField::new(grid, next)?;
        traj.push((j + 1) as f64 * dt, state.clone())?;
    }
    Ok(traj)
}

/// Pointwise `Ψ² − c1` or `Ψ³ − 3 c1 Ψ`.
pub fn wick_power(psi: &Trajectory, order: u32, c1: f64) -> Result<Trajectory> {
    match order {
        2 => Ok(psi.map_slices(|f| f.map(|v| v * v - c1))),
        3 => Ok(psi.map_slices(|f| f.map(|v| v * v * v - 3.0 * c1 * v))),
        _ => Err(Error::Domain(format!("Wick order {order} not in {{2, 3}}"))),
    }
}

/// `ψ̄(t) = ∫_{(t−T_K)∨0}^t e^{(t−s)Δ} Ψ³(s) ds` (zero mode removed) with
/// recentring and the scalar parts of the structure maps.
#[derive(Clone, Debug)]
pub struct PsiBar {
    field: Trajectory,
}

impl PsiBar {
    pub fn trajectory(&self) -> &Trajectory {
        &self.field
    }

    /// `(Π^t_x Ψ̄)(y) = ψ̄(t, y) − ψ̄(t, x)` at slice `j`.
    pub fn recentred(&self, j: usize, x: usize) -> GridField {
        let f = self.field.slice(j);
        let base = f.values()[x];
        f.map(|v| v - base)
    }

    /// Constant in `Γ^t_{xy} Ψ̄ = Ψ̄ + (ψ̄(t,x) − ψ̄(t,y)) 𝟙`.
    pub fn gamma(&self, j: usize, x: usize, y: usize) -> f64 {
        let v = self.field.slice(j).values();
        v[x] - v[y]
    }

    /// Constant in `Σ^{st}_x Ψ̄ = Ψ̄ + (ψ̄(s,x) − ψ̄(t,x)) 𝟙`; zero when `s = t`.
    pub fn sigma(&self, js: usize, jt: usize, x: usize) -> f64 {
        self.field.slice(js).values()[x] - self.field.slice(jt).values()[x]
    }
}

/// Duhamel recursion `ψ̄_{j+1} = e^{δtΔ}(ψ̄_j + δt Ψ³_j)` started from 0, with
/// contributions older than `T_K` removed.
pub fn build_psi_bar(psi3: &Trajectory, kernels: &KernelSet) -> Result<PsiBar> {
    let grid = psi3.grid();
    if grid != kernels.grid() {
        return Err(Error::Dimension("trajectory and kernels on different grids".into()));
    }
    if psi3.len() < 2 {
        return Err(Error::Domain("Ψ̄ needs at least two time slices".into()));
    }
    let dt = psi3.times()[1] - psi3.times()[0];
    let window = (kernels.time_cutoff() / dt).floor() as usize;
    let mut decay = kernels.heat_multiplier(dt);
    decay[0] = 0.0;
    let mut old = kernels.heat_multiplier(dt * (window + 1) as f64);
    old[0] = 0.0;
    let neg = negated_index(grid);
    let zeros = vec![0.0; grid.len()];
    let mut state = GridField::zeros(grid);
    let mut traj = Trajectory::new(grid);
    traj.push(psi3.times()[0], state.clone())?;
    for j in 0..psi3.len() - 1 {
        let src: Vec<f64> = state
            .values()
            .iter()
            .zip(psi3.slice(j).values())
            .map(|(s, p)| s + dt * p)
            .collect();
        let mut next = propagate_pair(grid, &src, &zeros, &decay, &zeros, &neg);
        if j >= window {
            let expired: Vec<f64> = psi3.slice(j - window).values().iter().map(|v| dt * v).collect();
            let drop = propagate_pair(grid, &expired, &zeros, &old, &zeros, &neg);
            next.iter_mut().zip(&drop).for_each(|(n, d)| *n -= d);
        }
        state = GridField::new(grid, next)?;
        traj.push(psi3.times()[j + 1], state.clone())?;
    }
    Ok(PsiBar { field: traj })
}

/// Model fields for the built symbols on one noise realisation.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub grid: Grid,
    pub dt: f64,
    pub steps: usize,
    pub c1: f64,
    pub alpha: f64,
    pub psi: Trajectory,
    pub psi2: Trajectory,
    pub psi3: Trajectory,
    pub psi_bar: PsiBar,
}

impl ModelBundle {
    pub fn symbol(&self, name: SymbolName) -> Result<Symbol> {
        Symbol::new(name, self.alpha)
    }

    /// `Π^t τ` for a non-recentred symbol at slice `j`.
    pub fn field(&self, name: SymbolName, j: usize) -> Result<&GridField> {
        match name {
            SymbolName::Psi => Ok(self.psi.slice(j)),
            SymbolName::Psi2 => Ok(self.psi2.slice(j)),
            SymbolName::Psi3 => Ok(self.psi3.slice(j)),
            SymbolName::PsiBar => Ok(self.psi_bar.trajectory().slice(j)),
            other => Err(Error::Unsupported(format!("no field is built for {other:?}"))),
        }
    }
}

pub fn build_model_bundle(
    noise: &dyn NoiseSource,
    kernels: &KernelSet,
    init: PsiInit,
    alpha: f64,
) -> Result<ModelBundle> {
    Symbol::new(SymbolName::Psi, alpha)?;
    let psi = build_psi(noise, kernels, init)?;
    let c1 = kernels.c1();
    let psi2 = wick_power(&psi, 2, c1)?;
    let psi3 = wick_power(&psi, 3, c1)?;
    let psi_bar = build_psi_bar(&psi3, kernels)?;
    Ok(ModelBundle {
        grid: noise.grid(),
        dt: noise.dt(),
        steps: noise.steps(),
        c1,
        alpha,
        psi,
        psi2,
        psi3,
        psi_bar,
    })
}

/// Local expansion `H(x) = c(x) 𝟙 + Σ_τ h_τ(x) τ`.
#[derive(Clone, Debug)]
pub struct LocalExpansion {
    pub polynomial: GridField,
    pub terms: Vec<(SymbolName, GridField)>,
}

/// `(R H)(x) = (Π_x H(x))(x)` at slice `j`.
pub fn reconstruct(h: &LocalExpansion, bundle: &ModelBundle, j: usize) -> Result<GridField> {
    if j >= bundle.psi.len() {
        return Err(Error::Index(format!("slice {j} beyond {}", bundle.psi.len())));
    }
    let mut out = h.polynomial.clone();
    for (name, coeff) in &h.terms {
        if !name.is_built() {
            return Err(Error::Unsupported(format!("symbol {name:?} is not part of the bundle")));
        }
        if name.is_recentred() {
            continue;
        }
        let f = bundle.field(*name, j)?;
        let prod = coeff.zip_with(f, |c, v| c * v)?;
        out = out.add(&prod)?;
    }
    Ok(out)
}

/// Observable whose scaling is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingObservable {
    Psi,
    WickPsi2,
    WickPsi3,
    /// `Ψ²` without the `c1` subtraction.
    RawPsi2,
}

impl ScalingObservable {
    /// `2|τ|`, if defined.
    pub fn target_exponent(self, alpha: f64) -> Option<f64> {
        let name = match self {
            Self::Psi => SymbolName::Psi,
            Self::WickPsi2 => SymbolName::Psi2,
            Self::WickPsi3 => SymbolName::Psi3,
            Self::RawPsi2 => return None,
        };
        Symbol::new(name, alpha).ok().map(|s| 2.0 * s.homogeneity)
    }

    fn apply(self, v: f64, c1: f64) -> f64 {
        match self {
            Self::Psi => v,
            Self::WickPsi2 => v * v - c1,
            Self::WickPsi3 => v * v * v - 3.0 * c1 * v,
            Self::RawPsi2 => v * v,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScalingConfig {
    pub level: u32,
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub samples: usize,
    pub observable: ScalingObservable,
    pub seed: u64,
    /// Time steps per replica; the fields are evaluated at slice `steps / 2`.
    pub steps: usize,
    pub bootstrap: usize,
}

impl ScalingConfig {
    pub fn new(level: u32, observable: ScalingObservable, samples: usize, seed: u64) -> Self {
        Self {
            level,
            alpha: default_alpha(),
            lambdas: (1..=4).map(|i| 2f64.powi(-i)).collect(),
            samples,
            observable,
            seed,
            steps: 2,
            bootstrap: 200,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScalingResult {
    pub lambdas: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub stderr: Vec<f64>,
    pub slope: f64,
    pub ci: (f64, f64),
    pub target: Option<f64>,
    /// `E X⁴ / (E X²)²` per scale.
    pub kurtosis_ratio: Vec<f64>,
}

fn log_slope(lambdas: &[f64], values: &[Vec<f64>], idx: &[usize]) -> f64 {
    let x: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let y: Vec<f64> = values
        .iter()
        .map(|v| (idx.iter().map(|&i| v[i] * v[i]).sum::<f64>() / idx.len() as f64).ln())
        .collect();
    linear_fit(&x, &y).map(|(_, b)| b).unwrap_or(f64::NAN)
}

/// Regresses `ln E|⟨Π τ, φ^λ_0⟩|²` on `ln λ` over independent stationary replicas.
pub fn scaling_exponent_test(cfg: &ScalingConfig, profile: &dyn Profile) -> Result<ScalingResult> {
    Ok(scaling_exponent_tests(cfg, &[cfg.observable], profile)?.remove(0))
}

/// As [`scaling_exponent_test`] for several observables of the same replicas.
pub fn scaling_exponent_tests(
    cfg: &ScalingConfig,
    observables: &[ScalingObservable],
    profile: &dyn Profile,
) -> Result<Vec<ScalingResult>> {
    if cfg.lambdas.len() < 3 {
        return Err(Error::Domain("scaling regression needs at least three scales".into()));
    }
    if cfg.samples < 2 {
        return Err(Error::Domain("scaling test needs at least two replicas".into()));
    }
    let grid = Grid::new(cfg.level)?;
    let kernels = KernelSet::new(grid);
    let tests: Vec<TestFunctionSample> = cfg
        .lambdas
        .iter()
        .map(|&l| TestFunctionSample::new(grid, [0, 0, 0], l, profile))
        .collect::<Result<_>>()?;
    let dt = grid.eps().powi(2) / 4.0;
    let steps = cfg.steps.max(1);
    let c1 = kernels.c1();
    // per replica: observable-major list of pairings
    let per_rep: Vec<Vec<f64>> = (0..cfg.samples)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let seed = substream_seed(cfg.seed, r as u64);
            let noise = LazyNoise::new(grid, grid, dt, steps, seed)?;
            let psi = build_psi(&noise, &kernels, PsiInit::Stationary { seed })?;
            let slice = psi.slice(steps / 2);
            let mut out = Vec::with_capacity(observables.len() * tests.len());
            for obs in observables {
                let f = slice.map(|v| obs.apply(v, c1));
                for t in &tests {
                    out.push(pairing(&f, t)?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let nl = cfg.lambdas.len();
    let mut results = Vec::new();
    for (o, obs) in observables.iter().enumerate() {
        let by_scale: Vec<Vec<f64>> = (0..nl)
            .map(|i| per_rep.iter().map(|r| r[o * nl + i]).collect())
            .collect();
        let mut mean_sq = Vec::new();
        let mut stderr = Vec::new();
        let mut kurt = Vec::new();
        for v in &by_scale {
            let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            let m2 = mean(&sq);
            mean_sq.push(m2);
            stderr.push(std_error(&sq));
            kurt.push(v.iter().map(|x| x.powi(4)).sum::<f64>() / v.len() as f64 / (m2 * m2));
        }
        let all: Vec<usize> = (0..cfg.samples).collect();
        let slope = log_slope(&cfg.lambdas, &by_scale, &all);
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, u64::MAX - o as u64));
        let ci = bootstrap_interval(cfg.samples, cfg.bootstrap, 0.95, &mut rng, |idx| {
            log_slope(&cfg.lambdas, &by_scale, idx)
        });
        results.push(ScalingResult {
            lambdas: cfg.lambdas.clone(),
            mean_sq,
            stderr,
            slope,
            ci,
            target: obs.target_exponent(cfg.alpha),
            kurtosis_ratio: kurt,
        });
    }
    Ok(results)
}

/// Exact `E⟨Ψ, φ⟩²` for the stationary law: `Σ_{k≠0} |φ̂_k|² / (2|a(k)|)`.
pub fn psi_pairing_variance(kernels: &KernelSet, test: &TestFunctionSample) -> f64 {
    let phi = crate::spectral::forward_transform(&test.to_field());
    phi.coeffs()[1..]
        .iter()
        .zip(&kernels.symbols()[1..])
        .map(|(c, a)| c.norm_sqr() / (-2.0 * a))
        .sum()
}
