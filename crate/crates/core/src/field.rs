//! Periodic grid fields, trajectories, test functions and the discrete pairing.

use crate::error::{Error, Result};
use crate::grid::{Grid, DIM};
use std::f64::consts::PI;
use std::io::{Read, Write};

/// Real field on `Λ³_ε`, stored in natural units, row-major by integer coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: Grid,
    values: Vec<f64>,
}

impl GridField {
    /// Wraps a value vector; rejects length mismatches and non-finite entries.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field of length {} on grid with {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at index {pos}",
                values[pos]
            )));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at the physical positions of the lattice points.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.position(i))).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at integer coordinates (wrapped).
    #[inline]
    pub fn at(&self, c: [isize; 3]) -> f64 {
        self.values[self.grid.index(c)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `ε³ Σ_x f(x)`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// `⟨f, g⟩_ε = ε³ Σ_x f(x) g(x)`.
    pub fn inner(&self, other: &GridField) -> Result<f64> {
        self.check_same_grid(other)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.grid.cell_volume() * s)
    }

    pub fn scaled(&self, c: f64) -> GridField {
        self.map(|v| c * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<GridField> {
        self.check_same_grid(other)?;
        Ok(GridField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &GridField) -> Result<GridField> {
        self.zip_with(other, |a, b| a + b)
    }

    pub(crate) fn check_same_grid(&self, other: &GridField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Dimension(format!(
                "fields live on levels {} and {}",
                self.grid.level(),
                other.grid.level()
            )));
        }
        Ok(())
    }

    /// Piecewise-constant extension onto a grid of equal or finer level.
    pub fn inject(&self, fine: Grid) -> Result<GridField> {
        let (nc, nf) = (self.grid.level(), fine.level());
        if nf < nc {
            return Err(Error::Dimension(format!(
                "cannot inject level {nc} into coarser level {nf}"
            )));
        }
        let shift = nf - nc;
        let values = (0..fine.len())
            .map(|i| {
                let c = fine.coords(i);
                self.at([
                    (c[0] >> shift) as isize,
                    (c[1] >> shift) as isize,
                    (c[2] >> shift) as isize,
                ])
            })
            .collect();
        Ok(GridField { grid: fine, values })
    }

    /// Serialised size in bytes: 16-byte header plus `M³` little-endian `f64`s.
    pub fn encoded_len(&self) -> usize {
        16 + 8 * self.values.len()
    }

    /// Writes the checkpoint encoding: `u32 N`, `u32 d`, `u64` reserved, then values.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.grid.level().to_le_bytes())?;
        w.write_all(&(DIM as u32).to_le_bytes())?;
        w.write_all(&0u64.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        let level = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let dim = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if dim as usize != DIM {
            return Err(Error::Format(format!("field dimension {dim}, expected {DIM}")));
        }
        let grid = Grid::new(level).map_err(|e| Error::Format(e.to_string()))?;
        let mut raw = vec![0u8; 8 * grid.len()];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        GridField::new(grid, values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let f = Self::read_from(bytes)?;
        if bytes.len() != f.encoded_len() {
            return Err(Error::Format(format!(
                "trailing bytes: {} read, {} present",
                f.encoded_len(),
                bytes.len()
            )));
        }
        Ok(f)
    }
}

/// Time-indexed sequence of fields at uniformly spaced stamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    times: Vec<f64>,
    slices: Vec<GridField>,
}

impl Trajectory {
    pub fn new(grid: Grid) -> Self {
        Self {
            grid,
            times: Vec::new(),
            slices: Vec::new(),
        }
    }

    /// Appends a slice; stamps must increase strictly.
    pub fn push(&mut self, t: f64, field: GridField) -> Result<()> {
        if field.grid() != self.grid {
            return Err(Error::Dimension("slice on a different grid".into()));
        }
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::Validation(format!(
                    "time stamps must increase: {t} after {last}"
                )));
            }
        }
        self.times.push(t);
        self.slices.push(field);
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[GridField] {
        &self.slices
    }

    pub fn slice(&self, j: usize) -> &GridField {
        &self.slices[j]
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn last(&self) -> Option<&GridField> {
        self.slices.last()
    }

    /// Applies `f` slice by slice, keeping the stamps.
    pub fn map_slices(&self, f: impl Fn(&GridField) -> GridField) -> Trajectory {
        Trajectory {
            grid: self.grid,
            times: self.times.clone(),
            slices: self.slices.iter().map(f).collect(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"PHI4TRAJ")?;
        w.write_all(&self.grid.level().to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for s in &self.slices {
            s.write_to(&mut w)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"PHI4TRAJ" {
            return Err(Error::Format("not a trajectory file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let grid = Grid::new(u32::from_le_bytes(word)).map_err(|e| Error::Format(e.to_string()))?;
        r.read_exact(&mut word)?;
        let count = u32::from_le_bytes(word) as usize;
        let mut times = Vec::with_capacity(count);
        for _ in 0..count {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            times.push(f64::from_le_bytes(b));
        }
        let mut traj = Trajectory::new(grid);
        for t in times {
            let f = GridField::read_from(&mut r)?;
            traj.push(t, f)?;
        }
        Ok(traj)
    }
}

/// Analytic test-function profile supported in the closed unit ball.
pub trait Profile: Sync {
    fn eval(&self, y: [f64; 3]) -> f64;
}

impl<F: Fn([f64; 3]) -> f64 + Sync> Profile for F {
    fn eval(&self, y: [f64; 3]) -> f64 {
        self(y)
    }
}

/// Radial bump `c (1 − |y|²)^5` on the Euclidean unit ball: `C⁴`, unit integral on `R³`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Bump;

impl Bump {
    /// Regularity class of the profile.
    pub const REGULARITY: u32 = 4;
    /// `1 / ∫_{B(0,1)} (1 − |y|²)^5 dy = 9009 / (1024 π)`.
    pub const NORMALISATION: f64 = 9009.0 / (1024.0 * PI);
}

impl Profile for Bump {
    fn eval(&self, y: [f64; 3]) -> f64 {
        let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
        if r2 >= 1.0 {
            0.0
        } else {
            Self::NORMALISATION * (1.0 - r2).powi(5)
        }
    }
}

/// Grid samples of `φ^λ_x(y) = λ^{-3} φ((y − x)/λ)`, periodised over the torus.
#[derive(Clone, Debug)]
pub struct TestFunctionSample {
    grid: Grid,
    center: [usize; 3],
    scale: f64,
    regularity: u32,
    /// Sparse support: flat index and value.
    entries: Vec<(usize, f64)>,
}

impl TestFunctionSample {
    pub fn new(grid: Grid, center: [usize; 3], scale: f64, profile: &dyn Profile) -> Result<Self> {
        Self::with_regularity(grid, center, scale, profile, Bump::REGULARITY)
    }

    pub fn with_regularity(
        grid: Grid,
        center: [usize; 3],
        scale: f64,
        profile: &dyn Profile,
        regularity: u32,
    ) -> Result<Self> {
        let eps = grid.eps();
        if !(scale >= eps * (1.0 - 1e-12) && scale <= 1.0) {
            return Err(Error::Domain(format!(
                "test-function scale {scale} outside [{eps}, 1]"
            )));
        }
        let m = grid.side();
        if center.iter().any(|&c| c >= m) {
            return Err(Error::Index(format!("centre {center:?} outside the grid")));
        }
        let inv = 1.0 / scale;
        let amp = inv.powi(DIM as i32);
        let reach = (scale / eps).ceil() as isize;
        let mut entries = Vec::new();
        // offsets beyond half the torus alias onto earlier points; accumulate them
        let mut dense = std::collections::BTreeMap::<usize, f64>::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    let y = [
                        dx as f64 * eps * inv,
                        dy as f64 * eps * inv,
                        dz as f64 * eps * inv,
                    ];
                    let v = profile.eval(y);
                    if v != 0.0 {
                        let idx = grid.index([
                            center[0] as isize + dx,
                            center[1] as isize + dy,
                            center[2] as isize + dz,
                        ]);
                        *dense.entry(idx).or_insert(0.0) += amp * v;
                    }
                }
            }
        }
        entries.extend(dense);
        Ok(Self {
            grid,
            center,
            scale,
            regularity,
            entries,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn center(&self) -> [usize; 3] {
        self.center
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn regularity(&self) -> u32 {
        self.regularity
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    /// Dense grid representation of the sampled profile.
    pub fn to_field(&self) -> GridField {
        let mut v = vec![0.0; self.grid.len()];
        for &(i, x) in &self.entries {
            v[i] += x;
        }
        GridField::from_vec_unchecked(self.grid, v)
    }

    /// `ε³ Σ_y φ^λ_x(y)`, close to one for profiles with unit integral.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.entries.iter().map(|e| e.1).sum::<f64>()
    }

    /// Same profile recentred at another point, by translation of the stencil.
    pub fn translated(&self, center: [usize; 3]) -> Self {
        let shift = [
            center[0] as isize - self.center[0] as isize,
            center[1] as isize - self.center[1] as isize,
            center[2] as isize - self.center[2] as isize,
        ];
        let entries = self
            .entries
            .iter()
            .map(|&(i, v)| {
                let c = self.grid.coords(i);
                let idx = self.grid.index([
                    c[0] as isize + shift[0],
                    c[1] as isize + shift[1],
                    c[2] as isize + shift[2],
                ]);
                (idx, v)
            })
            .collect();
        Self {
            center,
            entries,
            ..self.clone()
        }
    }
}

/// Discrete pairing `⟨f, φ^λ_x⟩_ε = ε³ Σ_y f(y) φ^λ_x(y)`.
pub fn pairing(f: &GridField, t: &TestFunctionSample) -> Result<f64> {
    if f.grid() != t.grid() {
        return Err(Error::Dimension(format!(
            "field on level {} paired with test function on level {}",
            f.grid().level(),
            t.grid().level()
        )));
    }
    let v = f.values();
    let s: f64 = t.entries.iter().map(|&(i, w)| v[i] * w).sum();
    Ok(f.grid().cell_volume() * s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn rejects_bad_fields() {
        let g = make_grid(1).unwrap();
        assert!(GridField::new(g, vec![0.0; 7]).is_err());
        let mut v = vec![0.0; 8];
        v[3] = f64::NAN;
        assert!(GridField::new(g, v).is_err());
    }

    #[test]
    fn pairing_trivial_cases() {
        let g = make_grid(4).unwrap();
        let t = TestFunctionSample::new(g, [3, 5, 7], 0.25, &Bump).unwrap();
        assert_eq!(pairing(&GridField::zeros(g), &t).unwrap(), 0.0);
        let one = GridField::constant(g, 1.0);
        assert!((pairing(&one, &t).unwrap() - t.mass()).abs() < 1e-14);
        // exact when the profile is renormalised on the grid
        let normed: Vec<(usize, f64)> = t.entries.iter().map(|&(i, v)| (i, v / t.mass())).collect();
        let tn = TestFunctionSample { entries: normed, ..t.clone() };
        assert!((pairing(&one, &tn).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pairing_with_scaled_delta_on_eight_points() {
        let g = make_grid(1).unwrap();
        let e = g.eps();
        let x0 = [1usize, 0, 1];
        let mut v = vec![0.0; 8];
        v[g.index([1, 0, 1])] = e.powi(-3);
        let f = GridField::new(g, v).unwrap();
        let t = TestFunctionSample::new(g, x0, e, &Bump).unwrap();
        // direct summation: only the centre lies strictly inside the support
        let direct = e.powi(3) * e.powi(-3) * (e.powi(-3) * Bump.eval([0.0; 3]));
        assert!((pairing(&f, &t).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 8.0 * Bump::NORMALISATION).abs() < 1e-12);
    }

    #[test]
    fn pairing_grid_mismatch() {
        let t = TestFunctionSample::new(make_grid(3).unwrap(), [0, 0, 0], 0.5, &Bump).unwrap();
        assert!(pairing(&GridField::zeros(make_grid(2).unwrap()), &t).is_err());
    }

    #[test]
    fn bump_mass_converges() {
        let g = make_grid(6).unwrap();
        let t = TestFunctionSample::new(g, [0, 0, 0], 0.25, &Bump).unwrap();
        assert!((t.mass() - 1.0).abs() < 1e-3, "{}", t.mass());
    }

    #[test]
    fn support_inside_ball() {
        let g = make_grid(5).unwrap();
        let lam = 0.125;
        let t = TestFunctionSample::new(g, [4, 4, 4], lam, &Bump).unwrap();
        for &(i, _) in t.entries() {
            let c = g.coords(i);
            let d: f64 = c
                .iter()
                .zip([4usize; 3])
                .map(|(&a, b)| {
                    let raw = (a as isize - b as isize).rem_euclid(32);
                    let r = raw.min(32 - raw) as f64 * g.eps();
                    r * r
                })
                .sum::<f64>()
                .sqrt();
            assert!(d < lam);
        }
        assert!(TestFunctionSample::new(g, [0, 0, 0], 0.5 * g.eps(), &Bump).is_err());
    }

    #[test]
    fn serialisation_roundtrip() {
        let g = make_grid(2).unwrap();
        let f = GridField::from_fn(g, |p| p[0] - 2.0 * p[1] + p[2] * p[2]);
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), 16 + 8 * 64);
        assert_eq!(&bytes[0..4], &2u32.to_le_bytes());
        assert_eq!(GridField::from_bytes(&bytes).unwrap(), f);
        assert!(GridField::from_bytes(&bytes[..100]).is_err());
    }

    #[test]
    fn injection_is_piecewise_constant() {
        let c = make_grid(1).unwrap();
        let f = GridField::new(c, (0..8).map(|i| i as f64).collect()).unwrap();
        let fine = f.inject(make_grid(3).unwrap()).unwrap();
        assert_eq!(fine.at([3, 0, 0]), f.at([0, 0, 0]));
        assert_eq!(fine.at([4, 7, 2]), f.at([1, 1, 0]));
        assert!(fine.inject(c).is_err());
    }
}
