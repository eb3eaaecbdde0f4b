//! Benchmark fixtures for `phi4-core`.

use phi4_core::noise::white_slice;
use phi4_core::{make_grid, GridField, Result};

/// A reproducible field of independent standard normals at level `n`.
pub fn gaussian_field(n: u32, seed: u64) -> Result<GridField> {
    let grid = make_grid(n)?;
    let v = white_slice(seed, grid, 1.0, 0);
    GridField::new(grid, v)
}
