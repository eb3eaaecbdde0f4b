//! Pipelines behind each subcommand.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use anyhow::{bail, Context, Result};
use phi4_core::dynamics::{default_c2_method, level_kernels};
use phi4_core::measure::{gaussian_mode_variance, TestRow};
use phi4_core::rng::substream_seed;
use phi4_core::wavelets::level_maxima;
use phi4_core::{
    build_grid_mra, coupled_convergence, daubechies_coefficients, holder_distance, holder_norm,
    invariance_check, make_grid, moment_scan, renorm_c2, sample_invariant_measure, scaling_exponent_test,
    spacetime_distance, spacetime_seminorm, wavelet_transform, Bump, C2Method, ChainConfig, ConvergenceConfig,
    Grid, GridField, KernelSet, LatticeMeasureParams, LazyNoise, Phi4Params, ScalingConfig, ScalingObservable,
    SeminormOptions, Simulation, TestFunctionSample, Trajectory,
};
use serde_json::json;

use crate::artifacts::{num, opt_num, OutputDir};
use crate::checkpoint;
use crate::config::{
    C2MethodName, ExperimentConfig, InputKind, MeasureCheckConfig, SimulateConfig, Subcommand, SymbolChoice,
};

/// Result of a run, mapped to the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Passed,
    Failed,
    Interrupted,
    AlreadyComplete,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Self::Passed => "complete",
            Self::Failed => "test-failed",
            Self::Interrupted => "interrupted",
            Self::AlreadyComplete => "already-complete",
        }
    }
}

/// Options that steer a run without changing its results.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunControl {
    pub resume: bool,
    pub stop_after: Option<usize>,
}

pub const CHECKPOINT: &str = "checkpoint.bin";
const C2_LABEL: u64 = 0xC2;

pub fn run(cfg: &ExperimentConfig, out: &mut OutputDir, control: RunControl) -> Result<Status> {
    let seed = cfg.seed.unwrap_or_default();
    match cfg.subcommand.context("resolved config has no subcommand")? {
        Subcommand::RenormConstants => renorm_constants(cfg, seed, out),
        Subcommand::Simulate => simulate(cfg, seed, out, control),
        Subcommand::Converge => converge(cfg, seed, out),
        Subcommand::ModelCheck => model_check(cfg, seed, out),
        Subcommand::MeasureCheck => measure_check(cfg, seed, out),
        Subcommand::Norm => norm(cfg, out),
    }
}

fn renorm_constants(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<Status> {
    let rc = cfg.renorm_constants.as_ref().context("missing renorm_constants block")?;
    if rc.levels.is_empty() {
        bail!("invalid config at `renorm_constants.levels`: empty");
    }
    let mut rows = Vec::new();
    for &n in &rc.levels {
        let grid = make_grid(n)?;
        let kernels = KernelSet::with_cutoff(grid, rc.time_cutoff)?;
        let mc = C2Method::MonteCarlo {
            samples: rc.samples,
            seed: substream_seed(seed, n as u64),
            tolerance: rc.tolerance,
        };
        let direct = C2Method::DirectSum { dt: rc.direct_dt };
        let method = match rc.method {
            C2MethodName::DirectSum => direct,
            C2MethodName::MonteCarlo => mc,
            C2MethodName::Auto if n <= 4 => direct,
            C2MethodName::Auto => mc,
        };
        let c2 = renorm_c2(&kernels, method)?;
        let eps = grid.eps();
        let log_n = (grid.side() as f64).ln();
        rows.push(vec![
            n.to_string(),
            num(eps),
            num(kernels.c1()),
            num(kernels.c1() * eps),
            num(c2.value),
            num(c2.value / log_n),
            num(c2.stderr),
        ]);
    }
    out.write_csv(
        "renorm_constants.csv",
        &["N", "epsilon", "c1", "c1_times_eps", "c2", "c2_over_logN", "stderr_c2"],
        &rows,
    )?;
    Ok(Status::Passed)
}

fn counterterm(level: u32, lambda: f64, explicit: Option<f64>, renormalise: bool, samples: u64, seed: u64) -> Result<(KernelSet, f64)> {
    match explicit {
        Some(c) => Ok((KernelSet::new(make_grid(level)?), c)),
        None if renormalise => {
            let k = level_kernels(level, samples, substream_seed(seed, C2_LABEL))?;
            let c = k.constants()?.c_total(lambda);
            Ok((k, c))
        }
        None => Ok((KernelSet::new(make_grid(level)?), 0.0)),
    }
}

fn simulation_params(sc: &SimulateConfig, grid: Grid, c_eps: f64) -> Result<Phi4Params> {
    let mut p = Phi4Params::new(grid, sc.mass, sc.lambda, c_eps, sc.t_final).with_stride(sc.stride);
    if let Some(dt) = sc.dt {
        p = p.with_dt(dt);
    }
    p.blowup = sc.blowup;
    p.validate(grid)?;
    Ok(p)
}

fn simulate(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir, control: RunControl) -> Result<Status> {
    let sc = cfg.simulate.as_ref().context("missing simulate block")?;
    if sc.checkpoint_every == Some(0) {
        bail!("invalid config at `simulate.checkpoint_every`: must be positive");
    }
    let (kernels, c_eps) = counterterm(sc.level, sc.lambda, sc.c_eps, sc.renormalise, sc.c2_samples, seed)?;
    let grid = kernels.grid();
    let params = simulation_params(sc, grid, c_eps)?;
    let noise = LazyNoise::new(grid, grid, params.dt, params.steps(), seed)?;
    let digest = checkpoint::config_digest(&cfg.fingerprint());
    let ckpt_path = out.path(CHECKPOINT);

    let mut sim = if control.resume {
        let bytes = fs::read(&ckpt_path).with_context(|| format!("reading checkpoint {}", ckpt_path.display()))?;
        let ck = checkpoint::decode(&bytes)?;
        if ck.version != phi4_core::VERSION {
            bail!(
                "checkpoint written by version {} cannot be resumed by version {}",
                ck.version,
                phi4_core::VERSION
            );
        }
        if ck.config_digest != digest {
            bail!("checkpoint was written for a different configuration");
        }
        let sim = Simulation::read_snapshot(Cursor::new(ck.payload), &kernels, &params)?;
        if sim.is_finished() {
            return Ok(Status::AlreadyComplete);
        }
        sim
    } else {
        Simulation::new(GridField::zeros(grid), &kernels, &params)?
    };
    out.write_resolved_config(cfg)?;

    let save = |sim: &Simulation, out: &mut OutputDir| -> Result<()> {
        let mut payload = Vec::new();
        sim.write_snapshot(&mut payload)?;
        out.write_bytes(CHECKPOINT, &checkpoint::encode(phi4_core::VERSION, &digest, &payload))
    };
    let mut budget = control.stop_after.unwrap_or(usize::MAX);
    while !sim.is_finished() && budget > 0 {
        let chunk = sc.checkpoint_every.unwrap_or(usize::MAX).min(budget);
        let done = sim.advance(&noise, Some(chunk))?;
        budget -= done.min(budget);
        if sc.checkpoint_every.is_some() || budget == 0 {
            save(&sim, out)?;
        }
        if done == 0 {
            break;
        }
    }
    save(&sim, out)?;
    if !sim.is_finished() {
        eprintln!("stopped at step {} of {}; resume with --resume", sim.step_index(), sim.total_steps());
        return Ok(Status::Interrupted);
    }

    let steps_done = sim.step_index();
    let result = sim.into_result();
    let mut traj = Vec::new();
    result.trajectory.write_to(&mut traj)?;
    out.write_bytes("trajectory.bin", &traj)?;
    out.write_bytes("final_state.bin", &result.final_state.to_bytes())?;
    let rows: Vec<Vec<String>> = result
        .diagnostics
        .iter()
        .map(|d| vec![num(d.t), num(d.sup_norm), num(d.holder_norm)])
        .collect();
    out.write_csv("diagnostics.csv", &["t", "sup_norm", "holder_norm"], &rows)?;
    out.write_json(
        "summary.json",
        &json!({
            "level": sc.level,
            "epsilon": grid.eps(),
            "dt": params.dt,
            "steps": steps_done,
            "c_eps": c_eps,
            "stopped_at": result.stopped_at,
            "final_sup_norm": result.final_state.sup_norm(),
        }),
    )?;
    Ok(Status::Passed)
}

fn converge(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<Status> {
    let cc = cfg.converge.as_ref().context("missing converge block")?;
    let seeds = cc.seeds.clone().unwrap_or_default();
    if seeds.is_empty() {
        bail!("invalid config at `converge.seeds`: no runs requested");
    }
    let mut c = ConvergenceConfig::new(cc.levels.clone(), seeds, cc.mass, cc.lambda, cc.t_final);
    c.alpha = cc.alpha;
    c.renormalise = cc.renormalise;
    c.c2_samples = cc.c2_samples;
    c.c2_seed = substream_seed(seed, C2_LABEL);
    c.stride = cc.stride;
    c.blowup = cc.blowup;
    c.spacetime = cc
        .spacetime
        .as_ref()
        .map(|s| SeminormOptions::new(cc.alpha, s.delta, s.eta, s.horizon));
    out.write_resolved_config(cfg)?;
    let table = coupled_convergence(&c)?;

    let mut rows: Vec<_> = table.rows.iter().collect();
    rows.sort_by_key(|r| (r.coarse, r.fine, r.seed));
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                format!("{}-{}", r.coarse, r.fine),
                num(r.alpha),
                opt_num(r.distance),
                opt_num(r.fixed_scale),
                opt_num(r.spacetime),
            ]
        })
        .collect();
    out.write_csv(
        "distances.csv",
        &["seed", "level_pair", "alpha", "distance", "fixed_scale_distance", "spacetime_distance"],
        &csv_rows,
    )?;
    let const_rows: Vec<Vec<String>> = table
        .constants
        .iter()
        .map(|k| vec![k.level.to_string(), num(k.c1), num(k.c2), num(k.c2_stderr), num(k.c_eps)])
        .collect();
    out.write_csv("constants.csv", &["N", "c1", "c2", "stderr_c2", "c_eps"], &const_rows)?;
    let mut stopped = table.stopped.clone();
    stopped.sort_by_key(|s| (s.0, s.1));
    let stop_rows: Vec<Vec<String>> = stopped
        .iter()
        .map(|(s, n, t)| vec![s.to_string(), n.to_string(), num(*t)])
        .collect();
    out.write_csv("stopped.csv", &["seed", "N", "t"], &stop_rows)?;

    let pairs: Vec<_> = cc
        .levels
        .windows(2)
        .map(|w| {
            json!({
                "level_pair": format!("{}-{}", w[0], w[1]),
                "median_distance": table.median(w[0], w[1]),
                "median_fixed_scale_distance": table.median_fixed_scale(w[0], w[1]),
                "median_spacetime_distance": table.median_spacetime(w[0], w[1]),
                "censored": table.censored(w[0], w[1]),
            })
        })
        .collect();
    let medians: Vec<Option<f64>> = cc.levels.windows(2).map(|w| table.median(w[0], w[1])).collect();
    let decreasing = medians.windows(2).all(|m| matches!((m[0], m[1]), (Some(a), Some(b)) if b < a));
    out.write_json("summary.json", &json!({ "pairs": pairs, "medians_decreasing": decreasing }))?;
    Ok(Status::Passed)
}

fn model_check(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<Status> {
    let mc = cfg.model_check.as_ref().context("missing model_check block")?;
    let observable = match mc.symbol {
        SymbolChoice::Psi => ScalingObservable::Psi,
        SymbolChoice::WickPsi2 => ScalingObservable::WickPsi2,
        SymbolChoice::WickPsi3 => ScalingObservable::WickPsi3,
        SymbolChoice::RawPsi2 => ScalingObservable::RawPsi2,
    };
    let mut sc = ScalingConfig::new(mc.level, observable, mc.samples, seed);
    sc.alpha = mc.alpha;
    sc.lambdas = mc.lambdas.clone();
    sc.steps = mc.steps;
    sc.bootstrap = mc.bootstrap;
    out.write_resolved_config(cfg)?;
    let r = scaling_exponent_test(&sc, &Bump)?;
    let rows: Vec<Vec<String>> = (0..r.lambdas.len())
        .map(|i| vec![num(r.lambdas[i]), num(r.mean_sq[i]), num(r.stderr[i])])
        .collect();
    out.write_csv("scaling.csv", &["lambda", "mean_sq", "stderr"], &rows)?;
    let passed = r.target.is_none_or(|t| (r.slope - t).abs() <= mc.tolerance);
    out.write_json(
        "summary.json",
        &json!({
            "slope": r.slope,
            "ci_low": r.ci.0,
            "ci_high": r.ci.1,
            "target_exponent": r.target,
            "tolerance": mc.tolerance,
            "kurtosis_ratio": r.kurtosis_ratio,
            "passed": passed,
        }),
    )?;
    Ok(if passed { Status::Passed } else { Status::Failed })
}

fn measure_params(mc: &MeasureCheckConfig, level: u32, seed: u64) -> Result<LatticeMeasureParams> {
    let grid = make_grid(level)?;
    let c_eps = match mc.c_eps {
        Some(c) => c,
        None if mc.renormalise => {
            let method = default_c2_method(level, 1 << 20, substream_seed(seed, C2_LABEL));
            KernelSet::new(grid).with_c2(method)?.constants()?.c_total(mc.lambda)
        }
        None => 0.0,
    };
    let mut p = LatticeMeasureParams::new(grid, mc.lambda, mc.mass, c_eps);
    p.chain = ChainConfig {
        dt: mc.chain.dt,
        burn_in: mc.chain.burn_in,
        thin: mc.chain.thin,
        chains: mc.chain.chains,
    };
    p.validate()?;
    Ok(p)
}

fn measure_check(cfg: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<Status> {
    let mc = cfg.measure_check.as_ref().context("missing measure_check block")?;
    if mc.tests.is_empty() {
        bail!("invalid config at `measure_check.tests`: empty");
    }
    let params = measure_params(mc, mc.level, seed)?;
    let tests: Vec<TestFunctionSample> = mc
        .tests
        .iter()
        .map(|t| TestFunctionSample::new(params.grid, t.center, t.scale, &Bump))
        .collect::<phi4_core::Result<_>>()?;
    out.write_resolved_config(cfg)?;
    let samples = sample_invariant_measure(&params, mc.samples, substream_seed(seed, 1))?;
    let report = invariance_check(&params, &samples, mc.t, &tests, substream_seed(seed, 2))?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r: &TestRow| vec![r.name.clone(), num(r.statistic), num(r.p_value), num(r.adjusted)])
        .collect();
    out.write_csv("invariance.csv", &["test", "statistic", "p_value", "adjusted_p_value"], &rows)?;

    let mut moments_bounded = None;
    if let Some(m) = &mc.moments {
        let measures: Vec<(LatticeMeasureParams, _)> = m
            .levels
            .iter()
            .enumerate()
            .map(|(i, &n)| -> Result<_> {
                let p = measure_params(mc, n, seed)?;
                let s = sample_invariant_measure(&p, m.samples, substream_seed(seed, 100 + i as u64))?;
                Ok((p, s))
            })
            .collect::<Result<_>>()?;
        let scan = moment_scan(&measures, &m.qs, &m.nus, &Bump, m.kappa)?;
        let rows: Vec<Vec<String>> = scan
            .rows
            .iter()
            .map(|r| vec![r.level.to_string(), r.q.to_string(), num(r.nu), num(r.moment), num(r.stderr)])
            .collect();
        out.write_csv("moments.csv", &["N", "q", "nu", "moment", "stderr"], &rows)?;
        moments_bounded = Some(scan.bounded);
    }
    let kernels = KernelSet::new(params.grid);
    out.write_json(
        "summary.json",
        &json!({
            "level": mc.level,
            "c_eps": params.c_eps,
            "small_coupling": params.small_coupling(),
            "passed": report.passed,
            "threshold": report.threshold,
            "min_adjusted_p_value": report.min_adjusted(),
            "blowups": report.blowups,
            "integrated_autocorrelation_time": samples.iat,
            "rhat": samples.rhat,
            "non_converged": samples.non_converged,
            "gaussian_zero_mode_variance": gaussian_mode_variance(&kernels, params.mass)[0],
            "moments_bounded": moments_bounded,
        }),
    )?;
    Ok(if report.passed { Status::Passed } else { Status::Failed })
}

fn read_field(path: &Path) -> Result<GridField> {
    let bytes = fs::read(path).with_context(|| format!("reading field {}", path.display()))?;
    GridField::from_bytes(&bytes).with_context(|| format!("decoding field {}", path.display()))
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let bytes = fs::read(path).with_context(|| format!("reading trajectory {}", path.display()))?;
    Trajectory::read_from(Cursor::new(bytes)).with_context(|| format!("decoding trajectory {}", path.display()))
}

fn maxima_rows(f: &GridField, alpha: f64, mra: &phi4_core::GridMRA, top: u32, slice: usize) -> Result<Vec<Vec<String>>> {
    let c = wavelet_transform(f, mra)?;
    Ok(level_maxima(&c, alpha, top)
        .iter()
        .map(|l| {
            vec![
                slice.to_string(),
                l.level.to_string(),
                if l.detail { "detail" } else { "scaling" }.to_string(),
                num(l.max_abs),
                num(l.scaled),
            ]
        })
        .collect())
}

fn norm(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Status> {
    let nc = cfg.norm.as_ref().context("missing norm block")?;
    let input = nc.input.as_ref().context("invalid config at `norm.input`: a field file is required")?;
    let basis = daubechies_coefficients(nc.wavelet_order)?;
    out.write_resolved_config(cfg)?;
    let header = ["slice", "level", "kind", "max_abs", "scaled"];
    let value;
    match nc.kind {
        InputKind::Field => {
            let f = read_field(input)?;
            let (target, top) = match &nc.other {
                Some(p) => {
                    let g = read_field(p)?;
                    let (coarse, fine) = if g.grid().level() < f.grid().level() { (g, f) } else { (f, g) };
                    let mra = build_grid_mra(fine.grid(), basis, nc.n_min)?;
                    value = holder_distance(&coarse, &fine, nc.alpha, &mra)?;
                    let diff = fine.sub(&coarse.inject(fine.grid())?)?;
                    out.write_bytes("difference.bin", &diff.to_bytes())?;
                    (diff, coarse.grid().level() + 1)
                }
                None => {
                    let mra = build_grid_mra(f.grid(), basis.clone(), nc.n_min)?;
                    value = holder_norm(&f, nc.alpha, &mra)?;
                    let top = f.grid().level();
                    (f, top)
                }
            };
            let mra = build_grid_mra(target.grid(), daubechies_coefficients(nc.wavelet_order)?, nc.n_min)?;
            let rows = maxima_rows(&target, nc.alpha, &mra, top, 0)?;
            out.write_csv("level_maxima.csv", &header, &rows)?;
        }
        InputKind::Trajectory => {
            let a = read_trajectory(input)?;
            let horizon = nc.horizon.unwrap_or_else(|| a.times().last().copied().unwrap_or(0.0));
            let opts = SeminormOptions::new(nc.alpha, nc.delta, nc.eta, horizon);
            let (diff, top) = match &nc.other {
                Some(p) => {
                    let b = read_trajectory(p)?;
                    let (coarse, fine) = if b.grid().level() < a.grid().level() { (b, a) } else { (a, b) };
                    let mra = build_grid_mra(fine.grid(), basis, nc.n_min)?;
                    value = spacetime_distance(&coarse, &fine, &mra, &opts)?;
                    let mut d = Trajectory::new(fine.grid());
                    for (j, &t) in fine.times().iter().enumerate() {
                        d.push(t, fine.slice(j).sub(&coarse.slice(j).inject(fine.grid())?)?)?;
                    }
                    let mut bytes = Vec::new();
                    d.write_to(&mut bytes)?;
                    out.write_bytes("difference.bin", &bytes)?;
                    (d, coarse.grid().level() + 1)
                }
                None => {
                    let mra = build_grid_mra(a.grid(), basis, nc.n_min)?;
                    value = spacetime_seminorm(&a, &mra, &opts)?;
                    let top = a.grid().level();
                    (a, top)
                }
            };
            let mra = build_grid_mra(diff.grid(), daubechies_coefficients(nc.wavelet_order)?, nc.n_min)?;
            let mut rows = Vec::new();
            for (j, s) in diff.slices().iter().enumerate() {
                rows.extend(maxima_rows(s, nc.alpha, &mra, top, j)?);
            }
            out.write_csv("level_maxima.csv", &header, &rows)?;
        }
    }
    out.write_json("summary.json", &json!({ "alpha": nc.alpha, "value": value, "distance": nc.other.is_some() }))?;
    Ok(Status::Passed)
}
