//! The lattice Φ⁴₃ measure `e^{−S_ε(Φ)} ∏ dΦ(x) / Z_ε`: action, Langevin
//! sampling, invariance under the dynamics, and moment diagnostics.
//!
//! The action is `S = (ε/4) Σ_x Σ_{y∼x} (Φ(x) − Φ(y))² − (C − a) ε³/2 Σ Φ² + λ ε³/4 Σ Φ⁴`
//! with each neighbour pair visited from both ends, normalised so that the
//! drift of the dynamics is exactly `−∇S / ε³`.

use crate::dynamics::{Phi4Params, Phi4Stepper};
use crate::error::{Error, Result};
use crate::field::{pairing, GridField, Profile, TestFunctionSample};
use crate::grid::{apply_discrete_laplacian, Grid};
use crate::kernels::KernelSet;
use crate::noise::white_slice;
use crate::rng::substream_seed;
use crate::spectral::forward_transform;
use crate::stats::{gelman_rubin, integrated_autocorrelation_time, ks_two_sample, mean, moment_z_test, std_error};
use rayon::prelude::*;

/// Largest coupling flagged as small at unit mass.
pub const SMALL_COUPLING: f64 = 0.25;

/// Langevin chain settings. Times are in units of the dynamics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainConfig {
    /// `None` uses `ε²/4`.
    pub dt: Option<f64>,
    pub burn_in: f64,
    /// Time between retained samples.
    pub thin: f64,
    pub chains: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            dt: None,
            burn_in: 5.0,
            thin: 2.0,
            chains: 8,
        }
    }
}

/// Parameters of the lattice measure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeMeasureParams {
    pub grid: Grid,
    pub lambda: f64,
    /// `a = m₀²`.
    pub mass: f64,
    pub c_eps: f64,
    pub chain: ChainConfig,
}

impl LatticeMeasureParams {
    pub fn new(grid: Grid, lambda: f64, mass: f64, c_eps: f64) -> Self {
        Self {
            grid,
            lambda,
            mass,
            c_eps,
            chain: ChainConfig::default(),
        }
    }

    /// `λ ≤ 0.25` at `a = 1`, the operational reading of "λ sufficiently small".
    pub fn small_coupling(&self) -> bool {
        self.lambda <= SMALL_COUPLING && self.mass == 1.0
    }

    pub fn dt(&self) -> f64 {
        self.chain.dt.unwrap_or(self.grid.eps().powi(2) / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::Config(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.lambda >= 0.0) || !self.c_eps.is_finite() {
            return Err(Error::Config("need λ ≥ 0 and a finite counterterm".into()));
        }
        let c = &self.chain;
        if c.chains < 2 {
            return Err(Error::Config("convergence diagnostics need at least two chains".into()));
        }
        if !(c.burn_in >= 0.0) || !(c.thin > 0.0) {
            return Err(Error::Config("burn-in must be non-negative and thinning positive".into()));
        }
        self.dynamics(0.0).validate(self.grid)
    }

    /// Dynamics parameters of the sampler.
    pub fn dynamics(&self, t_final: f64) -> Phi4Params {
        Phi4Params::new(self.grid, self.mass, self.lambda, self.c_eps, t_final).with_dt(self.dt())
    }
}

/// Exact action with periodic nearest neighbours.
pub fn lattice_action(f: &GridField, params: &LatticeMeasureParams) -> f64 {
    let g = f.grid();
    let eps = g.eps();
    let w = g.cell_volume();
    let v = f.values();
    let m = g.side() as isize;
    let mut grad = 0.0;
    for i in 0..g.len() {
        let c = g.coords(i);
        for axis in 0..3 {
            for step in [-1isize, 1] {
                let mut n = [c[0] as isize, c[1] as isize, c[2] as isize];
                n[axis] = (n[axis] + step).rem_euclid(m);
                let d = v[i] - v[g.index(n)];
                grad += d * d;
            }
        }
    }
    let sq: f64 = v.iter().map(|x| x * x).sum();
    let quart: f64 = v.iter().map(|x| x.powi(4)).sum();
    0.25 * eps * grad - 0.5 * (params.c_eps - params.mass) * w * sq + 0.25 * params.lambda * w * quart
}

/// `ΔΦ + (C − a)Φ − λΦ³`, the deterministic part of the dynamics.
pub fn drift(f: &GridField, params: &LatticeMeasureParams) -> GridField {
    let lap = apply_discrete_laplacian(f);
    let r = params.c_eps - params.mass;
    lap.zip_with(f, |l, p| l + r * p - params.lambda * p * p * p)
        .expect("same grid")
}

/// Retained chain states with convergence diagnostics.
#[derive(Clone, Debug)]
pub struct MeasureSamples {
    pub fields: Vec<GridField>,
    /// Chain index of each field.
    pub chain_of: Vec<usize>,
    /// Spatial mean of each field, the slowest observable.
    pub observable: Vec<f64>,
    /// Integrated autocorrelation time of the observable in units of retained samples.
    pub iat: f64,
    /// Potential scale reduction of the observable across chains.
    pub rhat: f64,
    /// Set when `R̂ > 1.1`.
    pub non_converged: bool,
}

/// Samples by running independent Langevin chains from `Φ = 0`.
pub fn sample_invariant_measure(params: &LatticeMeasureParams, n_samples: usize, seed: u64) -> Result<MeasureSamples> {
    params.validate()?;
    let grid = params.grid;
    let kernels = KernelSet::new(grid);
    let stepper = Phi4Stepper::new(&kernels, &params.dynamics(0.0))?;
    let dt = params.dt();
    let burn = (params.chain.burn_in / dt).round() as usize;
    let thin = ((params.chain.thin / dt).round() as usize).max(1);
    let chains = params.chain.chains;
    let per_chain: Vec<usize> = (0..chains)
        .map(|c| n_samples / chains + usize::from(c < n_samples % chains))
        .collect();
    let runs: Vec<Vec<GridField>> = (0..chains)
        .into_par_iter()
        .map(|c| -> Result<Vec<GridField>> {
            let s = substream_seed(seed, c as u64);
            let mut state = GridField::zeros(grid);
            let mut out = Vec::with_capacity(per_chain[c]);
            let total = burn + thin * per_chain[c];
            for j in 0..total {
                state = stepper.step(&state, &white_slice(s, grid, dt, j as u64))?;
                if !state.is_finite() {
                    return Err(Error::BlowUp(format!("chain {c} diverged at step {j}")));
                }
                if j + 1 > burn && (j + 1 - burn).is_multiple_of(thin) {
                    out.push(state.clone());
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut fields = Vec::with_capacity(n_samples);
    let mut chain_of = Vec::with_capacity(n_samples);
    let mut per_chain_obs = Vec::with_capacity(chains);
    for (c, run) in runs.into_iter().enumerate() {
        per_chain_obs.push(run.iter().map(|f| mean(f.values())).collect::<Vec<f64>>());
        chain_of.extend(std::iter::repeat_n(c, run.len()));
        fields.extend(run);
    }
    let observable: Vec<f64> = per_chain_obs.concat();
    let iats: Vec<f64> = per_chain_obs
        .iter()
        .filter(|o| o.len() >= 4)
        .map(|o| integrated_autocorrelation_time(o))
        .collect();
    let iat = if iats.is_empty() { 1.0 } else { mean(&iats) };
    let rhat = gelman_rubin(&per_chain_obs);
    Ok(MeasureSamples {
        fields,
        chain_of,
        observable,
        iat,
        rhat,
        non_converged: rhat > 1.1,
    })
}

/// Exact `E|Φ̂_k|²` at `λ = 0`, `C = 0`: `1/(2(|a(k)| + a))`.
pub fn gaussian_mode_variance(kernels: &KernelSet, mass: f64) -> Vec<f64> {
    kernels.symbols().iter().map(|&s| 0.5 / (mass - s)).collect()
}

/// Exact `E⟨Φ, φ⟩²` at `λ = 0`, `C = 0`.
pub fn gaussian_pairing_variance(kernels: &KernelSet, mass: f64, test: &TestFunctionSample) -> f64 {
    let phi = forward_transform(&test.to_field());
    phi.coeffs()
        .iter()
        .zip(gaussian_mode_variance(kernels, mass))
        .map(|(c, v)| c.norm_sqr() * v)
        .sum()
}

/// One statistical comparison in an invariance report.
#[derive(Clone, Debug, PartialEq)]
pub struct TestRow {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Bonferroni-adjusted p-value.
    pub adjusted: f64,
}

/// Result of [`invariance_check`].
#[derive(Clone, Debug)]
pub struct InvarianceReport {
    pub rows: Vec<TestRow>,
    pub blowups: usize,
    pub threshold: f64,
    pub passed: bool,
}

impl InvarianceReport {
    pub fn min_adjusted(&self) -> f64 {
        self.rows.iter().map(|r| r.adjusted).fold(1.0, f64::min)
    }
}

/// Evolves every sample for time `t` with fresh noise and compares the laws of
/// `⟨Φ, φ⟩` before and after for each test function: two-sample KS and
/// z-tests of the first four raw moments, Bonferroni-corrected at `0.001`.
pub fn invariance_check(
    params: &LatticeMeasureParams,
    samples: &MeasureSamples,
    t: f64,
    tests: &[TestFunctionSample],
    seed: u64,
) -> Result<InvarianceReport> {
    params.validate()?;
    if samples.fields.is_empty() || tests.is_empty() {
        return Err(Error::Config("invariance check needs samples and test functions".into()));
    }
    let grid = params.grid;
    let kernels = KernelSet::new(grid);
    let dyn_params = params.dynamics(t);
    let stepper = Phi4Stepper::new(&kernels, &dyn_params)?;
    let steps = dyn_params.steps();
    let dt = params.dt();
    let evolved: Vec<Option<GridField>> = samples
        .fields
        .par_iter()
        .enumerate()
        .map(|(i, f)| -> Result<Option<GridField>> {
            let s = substream_seed(seed, i as u64);
            let mut state = f.clone();
            for j in 0..steps {
                state = stepper.step(&state, &white_slice(s, grid, dt, j as u64))?;
                if !state.is_finite() || state.sup_norm() > dyn_params.blowup {
                    return Ok(None);
                }
            }
            Ok(Some(state))
        })
        .collect::<Result<_>>()?;
    let blowups = evolved.iter().filter(|e| e.is_none()).count();
    let kept: Vec<(&GridField, &GridField)> = samples
        .fields
        .iter()
        .zip(&evolved)
        .filter_map(|(a, b)| b.as_ref().map(|b| (a, b)))
        .collect();
    let mut rows = Vec::new();
    for (ti, test) in tests.iter().enumerate() {
        let before: Vec<f64> = kept.iter().map(|(a, _)| pairing(a, test)).collect::<Result<_>>()?;
        let after: Vec<f64> = kept.iter().map(|(_, b)| pairing(b, test)).collect::<Result<_>>()?;
        let label = format!("test{ti}(scale={},centre={:?})", test.scale(), test.center());
        let (d, p) = ks_two_sample(&before, &after);
        rows.push(TestRow {
            name: format!("ks/{label}"),
            statistic: d,
            p_value: p,
            adjusted: 0.0,
        });
        for k in 1..=4 {
            let (z, p) = moment_z_test(&before, &after, k);
            rows.push(TestRow {
                name: format!("moment{k}/{label}"),
                statistic: z,
                p_value: p,
                adjusted: 0.0,
            });
        }
    }
    let m = rows.len() as f64;
    for r in &mut rows {
        r.adjusted = (r.p_value * m).min(1.0);
    }
    let threshold = 1e-3;
    let passed = blowups == 0 && rows.iter().all(|r| r.adjusted > threshold);
    Ok(InvarianceReport {
        rows,
        blowups,
        threshold,
        passed,
    })
}

/// One entry of a moment scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentRow {
    pub level: u32,
    pub q: u32,
    pub nu: f64,
    pub moment: f64,
    pub stderr: f64,
    /// `moment · ν^{(1+κ) q / 2}`.
    pub normalised: f64,
}

/// Result of [`moment_scan`].
#[derive(Clone, Debug)]
pub struct MomentScan {
    pub rows: Vec<MomentRow>,
    /// Largest ratio of normalised moments across levels, per `(q, ν)`.
    pub spread: Vec<(u32, f64, f64)>,
    /// All spreads below 2.
    pub bounded: bool,
}

/// Estimates `E|⟨Φ, φ^ν_0⟩|^q` for sampled measures at several levels.
pub fn moment_scan(
    measures: &[(LatticeMeasureParams, MeasureSamples)],
    qs: &[u32],
    nus: &[f64],
    profile: &dyn Profile,
    kappa: f64,
) -> Result<MomentScan> {
    let mut rows = Vec::new();
    for (p, s) in measures {
        for &nu in nus {
            let test = TestFunctionSample::new(p.grid, [0, 0, 0], nu, profile)?;
            let x: Vec<f64> = s.fields.iter().map(|f| pairing(f, &test)).collect::<Result<_>>()?;
            for &q in qs {
                let pw: Vec<f64> = x.iter().map(|v| v.abs().powi(q as i32)).collect();
                let moment = mean(&pw);
                rows.push(MomentRow {
                    level: p.grid.level(),
                    q,
                    nu,
                    moment,
                    stderr: std_error(&pw),
                    normalised: moment * nu.powf((1.0 + kappa) * q as f64 / 2.0),
                });
            }
        }
    }
    let mut spread = Vec::new();
    for &q in qs {
        for &nu in nus {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.q == q && r.nu == nu)
                .map(|r| r.normalised)
                .collect();
            let hi = v.iter().cloned().fold(f64::MIN, f64::max);
            let lo = v.iter().cloned().fold(f64::MAX, f64::min);
            spread.push((q, nu, hi / lo));
        }
    }
    let bounded = spread.iter().all(|s| s.2 < 2.0);
    Ok(MomentScan { rows, spread, bounded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Bump;
    use crate::grid::make_grid;
    use crate::rng::SeededStream;
    use crate::stats::{ks_normal, variance};

    fn params(n: u32, lambda: f64, c: f64) -> LatticeMeasureParams {
        LatticeMeasureParams::new(make_grid(n).unwrap(), lambda, 1.0, c)
    }

    fn random_field(n: u32, seed: u64) -> GridField {
        let g = make_grid(n).unwrap();
        GridField::new(g, SeededStream::new(seed, n, 0).normals(g.len())).unwrap()
    }

    #[test]
    fn action_closed_forms() {
        let p = params(2, 0.3, 2.0);
        assert_eq!(lattice_action(&GridField::zeros(p.grid), &p), 0.0);
        let c = 1.3;
        let s = lattice_action(&GridField::constant(p.grid, c), &p);
        let expect = -(2.0 - 1.0) * c * c / 2.0 + 0.3 * c.powi(4) / 4.0;
        assert!((s - expect).abs() < 1e-12);
    }

    #[test]
    fn single_site_bump_at_level_one() {
        let p = params(1, 0.5, 3.0);
        let h = 2.0;
        let mut f = GridField::zeros(p.grid);
        f.values_mut()[0] = h;
        // ε/4 · 12 h², −(C − a) ε³ h² / 2, λ ε³ h⁴ / 4 with ε = 1/2
        let expect = 1.5 * h * h - 2.0 * h * h / 16.0 + 0.5 * h.powi(4) / 32.0;
        assert!((lattice_action(&f, &p) - expect).abs() < 1e-12);
    }

    #[test]
    fn action_is_even() {
        let p = params(2, 0.7, 1.5);
        for seed in 0..5 {
            let f = random_field(2, seed);
            assert_eq!(lattice_action(&f, &p), lattice_action(&f.scaled(-1.0), &p));
        }
    }

    #[test]
    fn drift_is_action_gradient() {
        for n in 1..=2 {
            let p = params(n, 0.4, 2.5);
            let w = p.grid.cell_volume();
            for seed in 0..20 {
                let f = random_field(n, seed);
                let d = drift(&f, &p);
                for i in [0, p.grid.len() / 2, p.grid.len() - 1] {
                    let h = 1e-5;
                    let mut up = f.clone();
                    up.values_mut()[i] += h;
                    let mut dn = f.clone();
                    dn.values_mut()[i] -= h;
                    let fd = -(lattice_action(&up, &p) - lattice_action(&dn, &p)) / (2.0 * h) / w;
                    let exact = d.values()[i];
                    assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{fd} {exact}");
                }
            }
        }
    }

    #[test]
    fn drift_matches_dynamics_step() {
        let p = params(2, 0.4, 2.5);
        let f = random_field(2, 4);
        let kernels = KernelSet::new(p.grid);
        let dt = 1e-9;
        let dp = p.dynamics(0.0).with_dt(dt);
        let next = crate::dynamics::step_phi4(&f, &vec![0.0; p.grid.len()], &dp, &kernels).unwrap();
        let d = drift(&f, &p);
        for ((a, b), c) in next.values().iter().zip(f.values()).zip(d.values()) {
            assert!(((a - b) / dt - c).abs() < 1e-4 * c.abs().max(1.0));
        }
    }

    #[test]
    fn gaussian_sampler_matches_exact_variances() {
        let p = params(2, 0.0, 0.0);
        let s = sample_invariant_measure(&p, 1000, 11).unwrap();
        assert!(!s.non_converged);
        assert!(s.iat < 2.0, "iat {}", s.iat);
        let k = KernelSet::new(p.grid);
        let exact = gaussian_mode_variance(&k, 1.0);
        let neg = crate::spectral::negated_index(p.grid);
        for m in [0usize, 1, 5, 21, 42] {
            let share = if neg[m] == m { 1.0 } else { 0.5 };
            let sq: Vec<f64> = s
                .fields
                .iter()
                .map(|f| forward_transform(f).coeffs()[m].re.powi(2))
                .collect();
            let z = (mean(&sq) - share * exact[m]) / std_error(&sq);
            assert!(z.abs() < 3.0, "mode {m}: z = {z}");
        }
        let t = TestFunctionSample::new(p.grid, [0, 0, 0], 0.5, &Bump).unwrap();
        let x: Vec<f64> = s.fields.iter().map(|f| pairing(f, &t).unwrap()).collect();
        let var = gaussian_pairing_variance(&k, 1.0, &t);
        assert!(ks_normal(&x, var).1 > 0.01);
        assert!((mean(&x) / std_error(&x)).abs() < 3.0);
        assert!((variance(&x) / var - 1.0).abs() < 0.15);
    }

    #[test]
    fn two_chains_agree() {
        let p = params(2, 0.1, 0.3);
        let t = TestFunctionSample::new(p.grid, [1, 1, 1], 0.5, &Bump).unwrap();
        let a = sample_invariant_measure(&p, 400, 1).unwrap();
        let b = sample_invariant_measure(&p, 400, 2).unwrap();
        let xa: Vec<f64> = a.fields.iter().map(|f| pairing(f, &t).unwrap()).collect();
        let xb: Vec<f64> = b.fields.iter().map(|f| pairing(f, &t).unwrap()).collect();
        for k in 1..=2 {
            let (z, _) = moment_z_test(&xa, &xb, k);
            assert!(z.abs() < 3.0, "moment {k}: z = {z}");
        }
    }

    #[test]
    fn zero_time_invariance_is_exact() {
        let p = params(2, 0.1, 0.0);
        let s = sample_invariant_measure(&p, 50, 3).unwrap();
        let t = TestFunctionSample::new(p.grid, [0, 0, 0], 0.5, &Bump).unwrap();
        let r = invariance_check(&p, &s, 0.0, &[t], 9).unwrap();
        assert!(r.passed);
        assert_eq!(r.rows[0].statistic, 0.0);
    }

    #[test]
    fn gaussian_invariance_passes() {
        let p = params(3, 0.0, 0.0);
        let s = sample_invariant_measure(&p, 300, 5).unwrap();
        let tests = [
            TestFunctionSample::new(p.grid, [0, 0, 0], 0.5, &Bump).unwrap(),
            TestFunctionSample::new(p.grid, [4, 4, 4], 0.25, &Bump).unwrap(),
        ];
        let r = invariance_check(&p, &s, 0.1, &tests, 6).unwrap();
        assert!(r.passed, "{:?}", r.rows);
        assert_eq!(r.rows.len(), 10);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut p = params(2, 0.1, 0.0);
        p.mass = 0.0;
        assert!(sample_invariant_measure(&p, 10, 0).is_err());
        let mut p = params(2, 0.1, 0.0);
        p.chain.chains = 1;
        assert!(p.validate().is_err());
        assert!(params(2, 0.1, 0.0).small_coupling());
        assert!(!params(2, 0.5, 0.0).small_coupling());
    }

    #[test]
    fn gaussian_moment_scan() {
        let p = params(2, 0.0, 0.0);
        let s = sample_invariant_measure(&p, 600, 8).unwrap();
        let k = KernelSet::new(p.grid);
        let scan = moment_scan(&[(p, s)], &[2, 4], &[0.5, 0.25], &Bump, 0.0).unwrap();
        for nu in [0.5, 0.25] {
            let t = TestFunctionSample::new(p.grid, [0, 0, 0], nu, &Bump).unwrap();
            let exact = gaussian_pairing_variance(&k, 1.0, &t);
            let r = scan.rows.iter().find(|r| r.q == 2 && r.nu == nu).unwrap();
            assert!(((r.moment - exact) / r.stderr).abs() < 3.0);
            let r4 = scan.rows.iter().find(|r| r.q == 4 && r.nu == nu).unwrap();
            let ratio = r4.moment / r.moment.powi(2);
            assert!(ratio < 3.6, "{ratio}");
        }
        assert!(scan.bounded);
    }
}
