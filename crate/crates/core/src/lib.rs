//! Lattice numerics for the renormalised discrete Φ⁴₃ equation on the
//! three-dimensional dyadic torus: grids and fields, heat kernels and
//! renormalisation constants, coupled white noise, grid wavelets and Hölder
//! norms, Gaussian model fields, the Langevin dynamics and the lattice measure.

/// Library version recorded in run manifests and checkpoints.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod dynamics;
pub mod error;
pub mod field;
pub mod grid;
pub mod kernels;
pub mod measure;
pub mod models;
pub mod noise;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod wavelets;

pub use dynamics::{
    coupled_convergence, mollified_comparison, mollified_constants, run_simulation, step_phi4,
    ConvergenceConfig, ConvergenceTable, DistanceRow, MollifiedConfig, MollifierSpec, Phi4Params,
    Phi4Stepper, RunResult, Simulation,
};
pub use error::{Error, Result};
pub use field::{pairing, Bump, GridField, Profile, TestFunctionSample, Trajectory};
pub use grid::{apply_discrete_laplacian, laplacian_symbol, make_grid, symbol_table, Grid};
pub use kernels::{
    green_function_slice, heat_semigroup_apply, renorm_c1, renorm_c2, verify_kernel_decay, C2Estimate,
    C2Method, FinitePartConvention, KernelSet, RenormConstants,
};
pub use noise::{coarse_grain, mollify_noise, sample_noise, LazyNoise, Mollifier, NoiseField, NoiseSource};
pub use rng::SeededStream;
pub use spectral::{forward_transform, inverse_transform, SpectralField};
pub use wavelets::{
    build_grid_mra, daubechies_coefficients, holder_distance, holder_distance_up_to, holder_norm, spacetime_distance, inverse_wavelet_transform,
    spacetime_seminorm, wavelet_transform, GridMRA, SeminormOptions, WaveletBasis, WaveletCoefficients,
};
pub use measure::{
    drift, invariance_check, lattice_action, moment_scan, sample_invariant_measure, ChainConfig,
    InvarianceReport, LatticeMeasureParams, MeasureSamples, MomentScan,
};
pub use models::{
    build_model_bundle, build_psi, build_psi_bar, psi_pairing_variance, reconstruct, scaling_exponent_test, scaling_exponent_tests, wick_power, LocalExpansion,
    ModelBundle, PsiBar, PsiInit, ScalingConfig, ScalingObservable, ScalingResult, Symbol, SymbolName,
};
