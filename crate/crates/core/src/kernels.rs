//! Discrete heat semigroup, Green's function and renormalisation constants.
//!
//! Both constants are computed from the Green's function truncated to
//! `t ∈ [0, T_K]` with the spatial zero mode removed. In spectral form,
//!
//! `c1 = Σ_{k≠0} (1 − e^{2 T_K a(k)}) / (2|a(k)|)`
//!
//! `c2 = 2 Σ_{k1+k2+k3=0, ki≠0} ∫_0^{T_K} t² e^{−t(|a1|+|a2|+|a3|)} dt`.

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::grid::{symbol_table, Grid};
use crate::rng::SeededStream;
use crate::spectral::{forward_transform, inverse_in_place, inverse_transform};
use num_complex::Complex64;
use rand_distr::weighted::WeightedAliasIndex;
use rand::distr::Distribution;
use rayon::prelude::*;

/// How the difference between the compactly supported singular kernel and the
/// truncated Green's function is accounted for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinitePartConvention {
    /// `1_{[0,T_K]} G^ε` with the zero mode removed; the smooth remainder is
    /// absorbed into the mass parameter.
    GreenFunctionRaw,
}

/// Value of `c2` with its standard error (zero for deterministic quadrature).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct C2Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Quadrature for `c2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum C2Method {
    /// Trapezoid rule in time with FFT products in space. `dt = None` uses `ε²/256`.
    DirectSum { dt: Option<f64> },
    /// Importance sampling over wavevector pairs; fails if the standard error
    /// exceeds `tolerance` (relative to the estimate).
    MonteCarlo { samples: u64, seed: u64, tolerance: f64 },
}

/// The pair of diverging constants and the combined mass counterterm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenormConstants {
    pub c1: f64,
    pub c2: f64,
}

impl RenormConstants {
    /// `C = 3λ c1 − 9λ² c2`.
    pub fn c_total(&self, lambda: f64) -> f64 {
        3.0 * lambda * self.c1 - 9.0 * lambda * lambda * self.c2
    }
}

/// Heat-semigroup data on one grid.
#[derive(Clone, Debug)]
pub struct KernelSet {
    grid: Grid,
    symbols: Vec<f64>,
    time_cutoff: f64,
    c1: f64,
    c2: Option<C2Estimate>,
    convention: FinitePartConvention,
}

impl KernelSet {
    /// Kernel data with `T_K = 1`.
    pub fn new(grid: Grid) -> Self {
        Self::with_cutoff(grid, 1.0).expect("unit cutoff is valid")
    }

    pub fn with_cutoff(grid: Grid, time_cutoff: f64) -> Result<Self> {
        if !(time_cutoff > 0.0) {
            return Err(Error::Domain(format!("time cutoff must be positive, got {time_cutoff}")));
        }
        let symbols = symbol_table(&grid);
        let c1 = c1_from_symbols(&symbols, time_cutoff);
        Ok(Self {
            grid,
            symbols,
            time_cutoff,
            c1,
            c2: None,
            convention: FinitePartConvention::GreenFunctionRaw,
        })
    }

    /// Computes and stores `c2`.
    pub fn with_c2(mut self, method: C2Method) -> Result<Self> {
        self.c2 = Some(renorm_c2(&self, method)?);
        Ok(self)
    }

    /// Stores an externally computed `c2`.
    pub fn with_c2_estimate(mut self, c2: C2Estimate) -> Self {
        self.c2 = Some(c2);
        self
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn symbols(&self) -> &[f64] {
        &self.symbols
    }

    pub fn time_cutoff(&self) -> f64 {
        self.time_cutoff
    }

    pub fn convention(&self) -> FinitePartConvention {
        self.convention
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> Option<C2Estimate> {
        self.c2
    }

    pub fn constants(&self) -> Result<RenormConstants> {
        let c2 = self
            .c2
            .ok_or_else(|| Error::Config("c2 has not been computed for this kernel set".into()))?;
        Ok(RenormConstants { c1: self.c1, c2: c2.value })
    }

    /// Per-mode noise filters `((1 − e^{2δt a}) / (2δt|a|))^{1/2}`: the
    /// stochastic convolution over one step has variance `δt f²` per unit
    /// increment variance, exactly as for the continuous-time OU process.
    pub fn ou_filter(&self, dt: f64) -> Vec<f64> {
        self.symbols.iter().map(|&a| ou_filter(a, dt)).collect()
    }

    /// Per-mode factors `e^{t a(k)}`.
    pub fn heat_multiplier(&self, t: f64) -> Vec<f64> {
        self.symbols.iter().map(|&a| (t * a).exp()).collect()
    }
}

pub fn ou_filter(a: f64, dt: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        (-(2.0 * dt * a).exp_m1() / (-2.0 * dt * a)).sqrt()
    }
}

fn c1_from_symbols(symbols: &[f64], t_k: f64) -> f64 {
    symbols[1..]
        .iter()
        .map(|&a| -(2.0 * t_k * a).exp_m1() / (2.0 * -a))
        .sum()
}

/// `e^{tΔ^ε} f`.
pub fn heat_semigroup_apply(f: &GridField, t: f64, kernels: &KernelSet) -> Result<GridField> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("heat semigroup needs t ≥ 0, got {t}")));
    }
    check_grid(f.grid(), kernels)?;
    if t == 0.0 {
        return Ok(f.clone());
    }
    let mut s = forward_transform(f);
    let m = kernels.heat_multiplier(t);
    s.coeffs_mut().iter_mut().zip(&m).for_each(|(c, &w)| *c *= w);
    Ok(inverse_transform(&s))
}

fn check_grid(g: Grid, kernels: &KernelSet) -> Result<()> {
    if g != kernels.grid {
        return Err(Error::Dimension(format!(
            "field on level {} but kernels on level {}",
            g.level(),
            kernels.grid.level()
        )));
    }
    Ok(())
}

/// `G_t(x) = ε^{-3} (e^{tΔ^ε} δ_0)(x) = Σ_k e^{t a(k)} e^{2πik·x}`.
pub fn green_function_slice(t: f64, kernels: &KernelSet) -> Result<GridField> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("Green's function needs t > 0, got {t}")));
    }
    let mut data: Vec<Complex64> = kernels
        .heat_multiplier(t)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    inverse_in_place(kernels.grid, &mut data);
    GridField::new(kernels.grid, data.into_iter().map(|z| z.re).collect())
}

pub fn renorm_c1(kernels: &KernelSet) -> f64 {
    kernels.c1
}

/// `∫_0^T t² e^{−St} dt`.
pub fn gamma_integral(s: f64, t: f64) -> f64 {
    let x = s * t;
    if x < 0.5 {
        // 2 t³ e^{-x} Σ_{n≥3} x^{n-3} / n!
        let mut term = 1.0 / 6.0;
        let mut acc = 0.0;
        let mut n = 3.0;
        while term > 1e-18 * acc {
            acc += term;
            n += 1.0;
            term *= x / n;
        }
        2.0 * t * t * t * (-x).exp() * acc
    } else {
        let p = -(-x).exp() * (1.0 + x + 0.5 * x * x) + 1.0;
        2.0 * p / (s * s * s)
    }
}

pub fn renorm_c2(kernels: &KernelSet, method: C2Method) -> Result<C2Estimate> {
    match method {
        C2Method::DirectSum { dt } => {
            let eps = kernels.grid.eps();
            let dt = dt.unwrap_or(eps * eps / 256.0);
            if !(dt > 0.0) || dt > eps * eps / 4.0 {
                return Err(Error::Config(format!(
                    "direct-sum step {dt} outside (0, ε²/4 = {}]",
                    eps * eps / 4.0
                )));
            }
            let s = &kernels.symbols;
            let value = c2_direct_sum(
                kernels.grid,
                kernels.time_cutoff,
                dt,
                |k, t| if k == 0 { 0.0 } else { t * (t * s[k]).exp() },
                |k, t| if k == 0 { 0.0 } else { (t * s[k]).exp() },
            );
            Ok(C2Estimate { value, stderr: 0.0, samples: 0 })
        }
        C2Method::MonteCarlo { samples, seed, tolerance } => {
            let est = c2_monte_carlo(kernels, samples, seed)?;
            if !(est.stderr <= tolerance * est.value.abs()) {
                return Err(Error::InsufficientBudget {
                    value: est.value,
                    stderr: est.stderr,
                    tolerance: tolerance * est.value.abs(),
                });
            }
            Ok(est)
        }
    }
}

/// `2 ∫_0^T ε³ Σ_x H_t(x)² G_t(x) dt` for spectral profiles `Ĥ_t(k)`, `Ĝ_t(k)`,
/// trapezoid rule with the left endpoint left open.
pub fn c2_direct_sum(
    grid: Grid,
    t_k: f64,
    dt: f64,
    h_hat: impl Fn(usize, f64) -> f64 + Sync,
    g_hat: impl Fn(usize, f64) -> f64 + Sync,
) -> f64 {
    let steps = (t_k / dt).round().max(1.0) as usize;
    let dt = t_k / steps as f64;
    let n = grid.len();
    let w = grid.cell_volume();
    let integrand = |t: f64| -> f64 {
        let mut h: Vec<Complex64> = (0..n).map(|k| Complex64::new(h_hat(k, t), 0.0)).collect();
        let mut g: Vec<Complex64> = (0..n).map(|k| Complex64::new(g_hat(k, t), 0.0)).collect();
        inverse_in_place(grid, &mut h);
        inverse_in_place(grid, &mut g);
        w * h.iter().zip(&g).map(|(a, b)| a.re * a.re * b.re).sum::<f64>()
    };
    let mut acc = 0.0;
    for j in 1..=steps {
        let t = j as f64 * dt;
        let v = integrand(t);
        let weight = if j == steps { 0.5 } else { 1.0 };
        acc += weight * v;
        if j > 16 && v.abs() * (t_k - t) < 1e-15 * acc.abs() {
            break;
        }
    }
    2.0 * acc * dt
}

const MC_CHUNK: u64 = 1 << 16;

fn c2_monte_carlo(kernels: &KernelSet, samples: u64, seed: u64) -> Result<C2Estimate> {
    if samples < 2 {
        return Err(Error::Config("Monte Carlo needs at least two samples".into()));
    }
    let grid = kernels.grid;
    let m = grid.side();
    let abs_a: Vec<f64> = kernels.symbols.iter().map(|a| -a).collect();
    let weights: Vec<f64> = abs_a[1..].iter().map(|a| a.powf(-1.5)).collect();
    let z: f64 = weights.iter().sum();
    let alias = WeightedAliasIndex::new(weights.clone())
        .map_err(|e| Error::Config(format!("importance weights: {e}")))?;
    let t_k = kernels.time_cutoff;
    let neg = |k: usize| -> [usize; 3] {
        let c = grid.coords(k);
        [(m - c[0]) % m, (m - c[1]) % m, (m - c[2]) % m]
    };
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut rng = SeededStream::new(seed, grid.level(), c).rng();
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let k1 = alias.sample(&mut rng) + 1;
                let k2 = alias.sample(&mut rng) + 1;
                let c1 = grid.coords(k1);
                let n2 = neg(k2);
                let k3 = ((c1[0] + m - n2[0]) % m, (c1[1] + m - n2[1]) % m, (c1[2] + m - n2[2]) % m);
                // k3 = -(k1 + k2)
                let k3 = [(m - k3.0) % m, (m - k3.1) % m, (m - k3.2) % m];
                let i3 = (k3[0] * m + k3[1]) * m + k3[2];
                let v = if i3 == 0 {
                    0.0
                } else {
                    let s = abs_a[k1] + abs_a[k2] + abs_a[i3];
                    let p1 = weights[k1 - 1] / z;
                    let p2 = weights[k2 - 1] / z;
                    2.0 * gamma_integral(s, t_k) / (p1 * p2)
                };
                s1 += v;
                s2 += v * v;
            }
            (s1, s2, count)
        })
        .collect();
    let (mut s1, mut s2) = (0.0, 0.0);
    for (a, b, _) in &partial {
        s1 += a;
        s2 += b;
    }
    let n = samples as f64;
    let mean = s1 / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(C2Estimate {
        value: mean,
        stderr: (var / n).sqrt(),
        samples,
    })
}

/// Result of a kernel-decay sweep on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDecayReport {
    pub level: u32,
    /// `max |G_t(x)| ‖(t,x)‖_s³` over admissible samples.
    pub max_scaled: f64,
    pub argmax: (f64, [f64; 3]),
    pub samples: usize,
}

/// Periodic Euclidean distance of a grid position to the origin.
pub fn torus_norm(p: [f64; 3]) -> f64 {
    p.iter().map(|&x| x.min(1.0 - x).powi(2)).sum::<f64>().sqrt()
}

/// Default sweep times: `2^{-j/2}` from 1 down to `ε²/4`.
pub fn default_decay_times(grid: Grid) -> Vec<f64> {
    let tmin = grid.eps().powi(2) / 4.0;
    (0..)
        .map(|j| 2f64.powf(-(j as f64) / 2.0))
        .take_while(|&t| t >= tmin * (1.0 - 1e-12))
        .collect()
}

/// Sweeps every grid point at each time and keeps samples with
/// `‖(t,x)‖_s = max(t^{1/2}, |x|) ≥ c ε`.
pub fn verify_kernel_decay(kernels: &KernelSet, times: &[f64], c: f64) -> Result<KernelDecayReport> {
    let grid = kernels.grid;
    let floor = c * grid.eps();
    let mut best = (0.0, (0.0, [0.0; 3]));
    let mut count = 0;
    for &t in times {
        let g = green_function_slice(t, kernels)?;
        for (i, &v) in g.values().iter().enumerate() {
            let p = grid.position(i);
            let z = t.sqrt().max(torus_norm(p));
            if z < floor {
                continue;
            }
            count += 1;
            let s = v.abs() * z.powi(3);
            if s > best.0 {
                best = (s, (t, p));
            }
        }
    }
    Ok(KernelDecayReport {
        level: grid.level(),
        max_scaled: best.0,
        argmax: best.1,
        samples: count,
    })
}

/// For `r = (t^{1/2} ∧ 1) ∨ ε` and `x̃ = x / r`: the largest value of
/// `r³ |G_t(x)| (1 + |x̃|)^4` over `|x̃| ≥ cut`, divided by its overall maximum.
pub fn schwartz_tail_ratio(kernels: &KernelSet, t: f64, cut: f64) -> Result<f64> {
    let grid = kernels.grid;
    let r = t.sqrt().min(1.0).max(grid.eps());
    let g = green_function_slice(t, kernels)?;
    let (mut all, mut tail) = (0.0f64, 0.0f64);
    for (i, &v) in g.values().iter().enumerate() {
        let xt = torus_norm(grid.position(i)) / r;
        let w = r.powi(3) * v.abs() * (1.0 + xt).powi(4);
        all = all.max(w);
        if xt >= cut {
            tail = tail.max(w);
        }
    }
    Ok(tail / all)
}
