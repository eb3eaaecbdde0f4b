//! Daubechies filters, the periodised grid multiresolution analysis and the
//! wavelet characterisation of negative-order Hölder norms.
//!
//! Grid scaling functions satisfy `φ^{N,N}_x = 2^{3N/2} δ_x` and the
//! refinement `φ^{N,n}_i = Σ_m a_m φ^{N,n+1}_{2i+m}` per axis (indices taken
//! modulo `2^{n+1}`). Coefficients are `ε³`-weighted inner products.

use crate::error::{Error, Result};
use crate::field::{GridField, Trajectory};
use crate::grid::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const D4: [f64; 4] = {
    // ((1+√3), (3+√3), (3−√3), (1−√3)) / (4√2)
    const S3: f64 = 1.732_050_807_568_877_2;
    const N: f64 = 4.0 * std::f64::consts::SQRT_2;
    [(1.0 + S3) / N, (3.0 + S3) / N, (3.0 - S3) / N, (1.0 - S3) / N]
};

const D6: [f64; 6] = [
    0.332_670_552_950_082_616,
    0.806_891_509_311_092_576_5,
    0.459_877_502_118_491_570_1,
    -0.135_011_020_010_254_588_7,
    -0.085_441_273_882_026_661_69,
    0.035_226_291_885_709_536_6,
];

const D8: [f64; 8] = [
    0.230_377_813_308_896_500_9,
    0.714_846_570_552_915_647_1,
    0.630_880_767_929_858_907_9,
    -0.027_983_769_416_859_854_21,
    -0.187_034_811_719_093_084_1,
    0.030_841_381_835_560_763_63,
    0.032_883_011_666_885_199_74,
    -0.010_597_401_785_069_032_11,
];

/// One-dimensional orthonormal Daubechies filter pair.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBasis {
    order: u32,
    a: Vec<f64>,
    b: Vec<f64>,
    regularity: f64,
}

impl WaveletBasis {
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn scaling(&self) -> &[f64] {
        &self.a
    }

    pub fn wavelet(&self) -> &[f64] {
        &self.b
    }

    /// Approximate Hölder exponent of the continuous scaling function.
    pub fn regularity(&self) -> f64 {
        self.regularity
    }

    pub fn haar() -> Self {
        daubechies_coefficients(1).expect("Haar is supported")
    }
}

/// Daubechies filters with `p` vanishing moments, `p ∈ {1, 2, 3, 4}`.
/// The wavelet filter is `b_m = (−1)^m a_{L−1−m}`.
pub fn daubechies_coefficients(p: u32) -> Result<WaveletBasis> {
    let (a, regularity): (Vec<f64>, f64) = match p {
        1 => (vec![std::f64::consts::FRAC_1_SQRT_2; 2], 0.0),
        2 => (D4.to_vec(), 0.550),
        3 => (D6.to_vec(), 1.088),
        4 => (D8.to_vec(), 1.618),
        _ => {
            return Err(Error::Config(format!(
                "unsupported wavelet order {p}, expected 1..=4"
            )))
        }
    };
    let l = a.len();
    let b = (0..l)
        .map(|m| if m % 2 == 0 { a[l - 1 - m] } else { -a[l - 1 - m] })
        .collect();
    Ok(WaveletBasis { order: p, a, b, regularity })
}

/// Grid multiresolution analysis on one grid between levels `n_min` and `N`.
#[derive(Clone, Debug)]
pub struct GridMRA {
    grid: Grid,
    basis: WaveletBasis,
    n_min: u32,
}

/// Builds the analysis. Periodised filters stay orthonormal on every level
/// with at least two points per axis, so any `n_min ≤ N` is admissible.
pub fn build_grid_mra(grid: Grid, basis: WaveletBasis, n_min: u32) -> Result<GridMRA> {
    if n_min > grid.level() {
        return Err(Error::Config(format!(
            "coarsest level {n_min} exceeds grid level {}",
            grid.level()
        )));
    }
    Ok(GridMRA { grid, basis, n_min })
}

/// Which of the seven tensor wavelets: bit `2 − i` set means the wavelet
/// filter acts along axis `i`.
pub type WaveletType = usize;

impl GridMRA {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn basis(&self) -> &WaveletBasis {
        &self.basis
    }

    pub fn n_min(&self) -> u32 {
        self.n_min
    }

    /// One-dimensional grid function at level `n`, position `i`, scaling
    /// (`wavelet = false`) or wavelet, built by downward refinement from
    /// Kronecker deltas. Normalised so that `ε Σ φ² = 1`.
    pub fn function_1d(&self, n: u32, i: usize, wavelet: bool) -> Vec<f64> {
        let big = self.grid.side();
        let top = self.grid.level();
        // coefficient vector over level-n' functions, refined up to level N
        let len = 1usize << n;
        let mut coeffs = vec![0.0; len];
        coeffs[i % len] = 1.0;
        let mut level = n;
        let mut first = wavelet;
        while level < top {
            let fine_len = 1usize << (level + 1);
            let mut next = vec![0.0; fine_len];
            let filt = if first { &self.basis.b } else { &self.basis.a };
            first = false;
            for (j, &c) in coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                for (m, &h) in filt.iter().enumerate() {
                    next[(2 * j + m) % fine_len] += h * c;
                }
            }
            coeffs = next;
            level += 1;
        }
        debug_assert_eq!(coeffs.len(), big);
        let s = (big as f64).sqrt();
        coeffs.into_iter().map(|c| c * s).collect()
    }

    /// Three-dimensional tensor function; `kind = 0` is the scaling function.
    pub fn function_3d(&self, n: u32, pos: [usize; 3], kind: WaveletType) -> GridField {
        let f: Vec<Vec<f64>> = (0..3)
            .map(|ax| self.function_1d(n, pos[ax], kind >> (2 - ax) & 1 == 1))
            .collect();
        let m = self.grid.side();
        let mut v = Vec::with_capacity(self.grid.len());
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    v.push(f[0][i] * f[1][j] * f[2][k]);
                }
            }
        }
        GridField::new(self.grid, v).expect("finite")
    }
}

/// Coefficients `⟨f, φ^{N,n_min}_x⟩_ε` and `⟨f, ψ^{N,m}_{x,type}⟩_ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletCoefficients {
    pub level: u32,
    pub n_min: u32,
    /// Scaling coefficients on the `2^{n_min}`-point cube.
    pub base: Vec<f64>,
    /// `details[m − n_min][type − 1]` on the `2^m`-point cube.
    pub details: Vec<[Vec<f64>; 7]>,
}

impl WaveletCoefficients {
    pub fn sum_of_squares(&self) -> f64 {
        let mut s: f64 = self.base.iter().map(|v| v * v).sum();
        for lvl in &self.details {
            for d in lvl {
                s += d.iter().map(|v| v * v).sum::<f64>();
            }
        }
        s
    }

    /// Coefficient of a single basis function.
    pub fn get(&self, n: u32, pos: [usize; 3], kind: WaveletType) -> f64 {
        let s = 1usize << n;
        let i = (pos[0] * s + pos[1]) * s + pos[2];
        if kind == 0 {
            assert_eq!(n, self.n_min, "scaling coefficients live on the coarsest level");
            self.base[i]
        } else {
            self.details[(n - self.n_min) as usize][kind - 1][i]
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        Self {
            level: self.level,
            n_min: self.n_min,
            base: diff(&self.base, &other.base),
            details: self
                .details
                .iter()
                .zip(&other.details)
                .map(|(a, b)| std::array::from_fn(|t| diff(&a[t], &b[t])))
                .collect(),
        }
    }
}

/// Applies the two-channel filter along `axis` of a cube of side `l`, writing
/// the low band to the first half and the high band to the second.
fn analyse_axis(data: &mut [f64], l: usize, axis: usize, a: &[f64], b: &[f64]) {
    let h = l / 2;
    let stride = [l * l, l, 1][axis];
    let mut line = vec![0.0; l];
    let mut out = vec![0.0; l];
    for base in line_starts(l, axis) {
        for (j, v) in line.iter_mut().enumerate() {
            *v = data[base + j * stride];
        }
        for i in 0..h {
            let (mut lo, mut hi) = (0.0, 0.0);
            for m in 0..a.len() {
                let v = line[(2 * i + m) % l];
                lo += a[m] * v;
                hi += b[m] * v;
            }
            out[i] = lo;
            out[h + i] = hi;
        }
        for (j, v) in out.iter().enumerate() {
            data[base + j * stride] = *v;
        }
    }
}

fn synthesise_axis(data: &mut [f64], l: usize, axis: usize, a: &[f64], b: &[f64]) {
    let h = l / 2;
    let stride = [l * l, l, 1][axis];
    let mut line = vec![0.0; l];
    let mut out = vec![0.0; l];
    for base in line_starts(l, axis) {
        for (j, v) in line.iter_mut().enumerate() {
            *v = data[base + j * stride];
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..h {
            let (lo, hi) = (line[i], line[h + i]);
            for m in 0..a.len() {
                out[(2 * i + m) % l] += a[m] * lo + b[m] * hi;
            }
        }
        for (j, v) in out.iter().enumerate() {
            data[base + j * stride] = *v;
        }
    }
}

fn line_starts(l: usize, axis: usize) -> impl Iterator<Item = usize> {
    (0..l).flat_map(move |p| {
        (0..l).map(move |q| match axis {
            0 => p * l + q,
            1 => p * l * l + q,
            _ => (p * l + q) * l,
        })
    })
}

fn octant_index(l: usize, kind: WaveletType, i: usize, j: usize, k: usize) -> usize {
    let h = l / 2;
    let o = |bit: usize, v: usize| if kind >> bit & 1 == 1 { h + v } else { v };
    (o(2, i) * l + o(1, j)) * l + o(0, k)
}

/// Forward periodised transform down to `n_min`.
pub fn wavelet_transform(f: &GridField, mra: &GridMRA) -> Result<WaveletCoefficients> {
    if f.grid() != mra.grid {
        return Err(Error::Dimension(format!(
            "field on level {} but analysis on level {}",
            f.grid().level(),
            mra.grid.level()
        )));
    }
    let (a, b) = (&mra.basis.a, &mra.basis.b);
    let scale = mra.grid.cell_volume().sqrt();
    let mut s: Vec<f64> = f.values().iter().map(|v| v * scale).collect();
    let mut details = Vec::new();
    let mut level = mra.grid.level();
    while level > mra.n_min {
        let l = 1usize << level;
        let h = l / 2;
        for axis in 0..3 {
            analyse_axis(&mut s, l, axis, a, b);
        }
        let mut coarse = vec![0.0; h * h * h];
        let mut d: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; h * h * h]);
        for i in 0..h {
            for j in 0..h {
                for k in 0..h {
                    let c = (i * h + j) * h + k;
                    coarse[c] = s[octant_index(l, 0, i, j, k)];
                    for t in 1..8 {
                        d[t - 1][c] = s[octant_index(l, t, i, j, k)];
                    }
                }
            }
        }
        details.push(d);
        s = coarse;
        level -= 1;
    }
    details.reverse();
    Ok(WaveletCoefficients {
        level: mra.grid.level(),
        n_min: mra.n_min,
        base: s,
        details,
    })
}

/// Inverse of [`wavelet_transform`].
pub fn inverse_wavelet_transform(c: &WaveletCoefficients, mra: &GridMRA) -> Result<GridField> {
    if c.level != mra.grid.level() || c.n_min != mra.n_min {
        return Err(Error::Dimension("coefficients do not match the analysis".into()));
    }
    let (a, b) = (&mra.basis.a, &mra.basis.b);
    let mut s = c.base.clone();
    for (idx, d) in c.details.iter().enumerate() {
        let level = c.n_min + idx as u32 + 1;
        let l = 1usize << level;
        let h = l / 2;
        let mut full = vec![0.0; l * l * l];
        for i in 0..h {
            for j in 0..h {
                for k in 0..h {
                    let cidx = (i * h + j) * h + k;
                    full[octant_index(l, 0, i, j, k)] = s[cidx];
                    for t in 1..8 {
                        full[octant_index(l, t, i, j, k)] = d[t - 1][cidx];
                    }
                }
            }
        }
        for axis in (0..3).rev() {
            synthesise_axis(&mut full, l, axis, a, b);
        }
        s = full;
    }
    let scale = mra.grid.cell_volume().sqrt().recip();
    GridField::new(mra.grid, s.into_iter().map(|v| v * scale).collect())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Largest scaled coefficient on one level of the analysis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelMaximum {
    pub level: u32,
    /// `false` for the scaling (base) term.
    pub detail: bool,
    pub max_abs: f64,
    pub scaled: f64,
}

/// Per-level maxima `2^{n(α+3/2)} sup |c|` for detail levels `n_min ≤ m < top`.
pub fn level_maxima(c: &WaveletCoefficients, alpha: f64, top: u32) -> Vec<LevelMaximum> {
    let w = |n: u32| 2f64.powf(n as f64 * (alpha + 1.5));
    let base = sup(&c.base);
    let mut out = vec![LevelMaximum {
        level: c.n_min,
        detail: false,
        max_abs: base,
        scaled: w(c.n_min) * base,
    }];
    for (i, d) in c.details.iter().enumerate() {
        let m = c.n_min + i as u32;
        if m >= top {
            break;
        }
        let mx = d.iter().map(|v| sup(v)).fold(0.0, f64::max);
        out.push(LevelMaximum {
            level: m,
            detail: true,
            max_abs: mx,
            scaled: w(m) * mx,
        });
    }
    out
}

fn norm_from_coefficients(c: &WaveletCoefficients, alpha: f64, top: u32) -> f64 {
    level_maxima(c, alpha, top).iter().map(|l| l.scaled).fold(0.0, f64::max)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha < 0.0) {
        return Err(Error::Unsupported(format!(
            "Hölder exponent {alpha} is not negative"
        )));
    }
    Ok(())
}

/// Wavelet estimate of the `C^α` norm, `α < 0`.
pub fn holder_norm(f: &GridField, alpha: f64, mra: &GridMRA) -> Result<f64> {
    check_alpha(alpha)?;
    let c = wavelet_transform(f, mra)?;
    Ok(norm_from_coefficients(&c, alpha, mra.grid.level()))
}

/// Distance between a coarse field `f` and a fine field `g`: `f` is extended
/// piecewise constantly, and only levels `m ≤ N_coarse` (scales `2^{-m} ≥ ε_coarse`) enter.
pub fn holder_distance(f: &GridField, g: &GridField, alpha: f64, mra: &GridMRA) -> Result<f64> {
    check_alpha(alpha)?;
    if f.grid().level() > g.grid().level() {
        return Err(Error::Dimension("first field must be the coarser one".into()));
    }
    let diff = g.sub(&f.inject(g.grid())?)?;
    let c = wavelet_transform(&diff, mra)?;
    Ok(norm_from_coefficients(&c, alpha, f.grid().level() + 1))
}

/// As [`holder_distance`] with detail levels restricted to `m < top`, `top ≤ N_coarse + 1`.
pub fn holder_distance_up_to(f: &GridField, g: &GridField, alpha: f64, mra: &GridMRA, top: u32) -> Result<f64> {
    check_alpha(alpha)?;
    if f.grid().level() > g.grid().level() {
        return Err(Error::Dimension("first field must be the coarser one".into()));
    }
    let diff = g.sub(&f.inject(g.grid())?)?;
    let c = wavelet_transform(&diff, mra)?;
    Ok(norm_from_coefficients(&c, alpha, top.min(f.grid().level() + 1)))
}

/// Options for [`spacetime_seminorm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeminormOptions {
    pub alpha: f64,
    pub delta: f64,
    pub eta: f64,
    pub horizon: f64,
    /// All pairs are used up to this many slices; otherwise `pair_budget` random pairs.
    pub max_full_slices: usize,
    pub pair_budget: usize,
    pub pair_seed: u64,
}

impl SeminormOptions {
    pub fn new(alpha: f64, delta: f64, eta: f64, horizon: f64) -> Self {
        Self {
            alpha,
            delta,
            eta,
            horizon,
            max_full_slices: 64,
            pair_budget: 4096,
            pair_seed: 0x5EED_0001,
        }
    }
}

/// `‖t‖_ε = (t^{1/2} ∧ 1) ∨ ε`.
pub fn parabolic_time(t: f64, eps: f64) -> f64 {
    t.abs().sqrt().min(1.0).max(eps)
}

/// Weighted space-time seminorm of a trajectory over slices with `t ≤ T`.
pub fn spacetime_seminorm(traj: &Trajectory, mra: &GridMRA, opts: &SeminormOptions) -> Result<f64> {
    seminorm_up_to(traj, mra, opts, traj.grid().level())
}

/// Space-time analogue of [`holder_distance`] for trajectories sampled at the
/// same times: the coarse trajectory is extended piecewise constantly.
pub fn spacetime_distance(
    coarse: &Trajectory,
    fine: &Trajectory,
    mra: &GridMRA,
    opts: &SeminormOptions,
) -> Result<f64> {
    if coarse.grid().level() > fine.grid().level() {
        return Err(Error::Dimension("first trajectory must be the coarser one".into()));
    }
    if coarse.times() != fine.times() {
        return Err(Error::Dimension("trajectories are sampled at different times".into()));
    }
    let mut diff = Trajectory::new(fine.grid());
    for (j, &t) in fine.times().iter().enumerate() {
        diff.push(t, fine.slice(j).sub(&coarse.slice(j).inject(fine.grid())?)?)?;
    }
    seminorm_up_to(&diff, mra, opts, coarse.grid().level() + 1)
}

fn seminorm_up_to(traj: &Trajectory, mra: &GridMRA, opts: &SeminormOptions, top: u32) -> Result<f64> {
    check_alpha(opts.alpha)?;
    if opts.delta < 0.0 || opts.eta > 0.0 {
        return Err(Error::Domain("need δ ≥ 0 and η ≤ 0".into()));
    }
    let idx: Vec<usize> = (0..traj.len())
        .filter(|&j| traj.times()[j] <= opts.horizon * (1.0 + 1e-12))
        .collect();
    if idx.is_empty() {
        return Err(Error::Domain("trajectory has no slices in [0, T]".into()));
    }
    let eps = traj.grid().eps();
    let coeffs: Vec<WaveletCoefficients> = idx
        .par_iter()
        .map(|&j| wavelet_transform(traj.slice(j), mra))
        .collect::<Result<_>>()?;
    let times: Vec<f64> = idx.iter().map(|&j| traj.times()[j]).collect();
    let mut best = 0.0f64;
    for (c, &t) in coeffs.iter().zip(&times) {
        let w = parabolic_time(t, eps).powf(-opts.eta);
        best = best.max(w * norm_from_coefficients(c, opts.alpha, top));
    }
    if opts.delta == 0.0 || idx.len() < 2 {
        return Ok(best);
    }
    let n = idx.len();
    let pairs: Vec<(usize, usize)> = if n <= opts.max_full_slices {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.pair_seed);
        (0..opts.pair_budget)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i.min(j), i.max(j))
            })
            .collect()
    };
    let two_time = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (s, t) = (times[i], times[j]);
            let w = parabolic_time(s, eps).min(parabolic_time(t, eps)).powf(-opts.eta);
            let div = (t - s).abs().sqrt().max(eps).powf(opts.delta);
            let d = coeffs[j].sub(&coeffs[i]);
            w * norm_from_coefficients(&d, opts.alpha - opts.delta, top) / div
        })
        .reduce(|| 0.0, f64::max);
    Ok(best + two_time)
}
