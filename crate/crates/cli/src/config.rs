//! Strict JSON experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    RenormConstants,
    Simulate,
    Converge,
    ModelCheck,
    MeasureCheck,
    Norm,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Self::RenormConstants => "renorm-constants",
            Self::Simulate => "simulate",
            Self::Converge => "converge",
            Self::ModelCheck => "model-check",
            Self::MeasureCheck => "measure-check",
            Self::Norm => "norm",
        }
    }
}

/// Top-level configuration file. Only the block of the selected subcommand is
/// used; absent blocks take their defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<Subcommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renorm_constants: Option<RenormConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_check: Option<ModelCheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_check: Option<MeasureCheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C2MethodName {
    /// Direct sum for `N ≤ 4`, Monte Carlo above.
    Auto,
    DirectSum,
    MonteCarlo,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenormConfig {
    pub levels: Vec<u32>,
    pub method: C2MethodName,
    /// Monte Carlo sample budget.
    pub samples: u64,
    /// Relative standard error above which Monte Carlo fails.
    pub tolerance: f64,
    /// Time step of the direct sum; `null` for the default.
    pub direct_dt: Option<f64>,
    pub time_cutoff: f64,
}

impl Default for RenormConfig {
    fn default() -> Self {
        Self {
            levels: (2..=5).collect(),
            method: C2MethodName::Auto,
            samples: 1 << 20,
            tolerance: 0.05,
            direct_dt: None,
            time_cutoff: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub level: u32,
    pub mass: f64,
    pub lambda: f64,
    /// Mass counterterm; `null` computes `3λc1 − 9λ²c2` when `renormalise` is set.
    pub c_eps: Option<f64>,
    pub renormalise: bool,
    pub t_final: f64,
    /// Time step; `null` uses `ε²/4`.
    pub dt: Option<f64>,
    pub stride: usize,
    pub blowup: f64,
    pub c2_samples: u64,
    /// Steps between checkpoint writes; `null` writes only at the end.
    pub checkpoint_every: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            level: 3,
            mass: 1.0,
            lambda: 0.1,
            c_eps: None,
            renormalise: true,
            t_final: 0.25,
            dt: None,
            stride: 16,
            blowup: 1e6,
            c2_samples: 1 << 20,
            checkpoint_every: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpacetimeConfig {
    pub delta: f64,
    pub eta: f64,
    pub horizon: f64,
}

impl Default for SpacetimeConfig {
    fn default() -> Self {
        Self { delta: 0.05, eta: 0.0, horizon: 0.25 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub levels: Vec<u32>,
    /// Explicit run seeds; `null` derives `runs` seeds from the experiment seed.
    pub seeds: Option<Vec<u64>>,
    pub runs: usize,
    pub mass: f64,
    pub lambda: f64,
    pub t_final: f64,
    pub alpha: f64,
    pub renormalise: bool,
    pub c2_samples: u64,
    pub stride: usize,
    pub blowup: f64,
    pub spacetime: Option<SpacetimeConfig>,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            levels: vec![3, 4, 5],
            seeds: None,
            runs: 20,
            mass: 1.0,
            lambda: 0.1,
            t_final: 0.25,
            alpha: -0.6,
            renormalise: true,
            c2_samples: 1 << 20,
            stride: 64,
            blowup: 1e6,
            spacetime: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolChoice {
    Psi,
    WickPsi2,
    WickPsi3,
    RawPsi2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelCheckConfig {
    pub symbol: SymbolChoice,
    pub level: u32,
    pub lambdas: Vec<f64>,
    pub samples: usize,
    pub alpha: f64,
    pub steps: usize,
    pub bootstrap: usize,
    /// Accepted distance between the fitted slope and the target exponent.
    pub tolerance: f64,
}

impl Default for ModelCheckConfig {
    fn default() -> Self {
        Self {
            symbol: SymbolChoice::WickPsi2,
            level: 5,
            lambdas: (1..=4).map(|i| 2f64.powi(-i)).collect(),
            samples: 500,
            alpha: phi4_core::models::default_alpha(),
            steps: 2,
            bootstrap: 200,
            tolerance: 0.4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestFunctionConfig {
    pub center: [usize; 3],
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSettings {
    pub dt: Option<f64>,
    pub burn_in: f64,
    pub thin: f64,
    pub chains: usize,
}

impl Default for ChainSettings {
    fn default() -> Self {
        let d = phi4_core::ChainConfig::default();
        Self { dt: d.dt, burn_in: d.burn_in, thin: d.thin, chains: d.chains }
    }
}

impl Default for TestFunctionConfig {
    fn default() -> Self {
        Self { center: [0, 0, 0], scale: 0.5 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentConfig {
    pub levels: Vec<u32>,
    pub qs: Vec<u32>,
    pub nus: Vec<f64>,
    pub samples: usize,
    pub kappa: f64,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self {
            levels: vec![2, 3],
            qs: vec![2, 4],
            nus: vec![0.5, 0.25],
            samples: 200,
            kappa: phi4_core::models::DEFAULT_KAPPA,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureCheckConfig {
    pub level: u32,
    pub lambda: f64,
    pub mass: f64,
    pub c_eps: Option<f64>,
    pub renormalise: bool,
    pub samples: usize,
    /// Evolution time of the invariance test.
    pub t: f64,
    pub chain: ChainSettings,
    pub tests: Vec<TestFunctionConfig>,
    pub moments: Option<MomentConfig>,
}

impl Default for MeasureCheckConfig {
    fn default() -> Self {
        Self {
            level: 3,
            lambda: 0.1,
            mass: 1.0,
            c_eps: None,
            renormalise: true,
            samples: 500,
            t: 0.1,
            chain: ChainSettings::default(),
            tests: vec![
                TestFunctionConfig { center: [0, 0, 0], scale: 0.5 },
                TestFunctionConfig { center: [4, 4, 4], scale: 0.25 },
            ],
            moments: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Field,
    Trajectory,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormConfig {
    /// Field or trajectory file; relative paths resolve against the config file.
    pub input: Option<PathBuf>,
    /// Second file; when present the distance to it is measured.
    pub other: Option<PathBuf>,
    pub kind: InputKind,
    pub alpha: f64,
    /// Daubechies order, `1` being Haar.
    pub wavelet_order: u32,
    pub n_min: u32,
    pub delta: f64,
    pub eta: f64,
    pub horizon: Option<f64>,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            input: None,
            other: None,
            kind: InputKind::Field,
            alpha: -0.6,
            wavelet_order: 1,
            n_min: 0,
            delta: 0.05,
            eta: 0.0,
            horizon: None,
        }
    }
}

/// Parses a configuration, reporting the full path of any offending key.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("invalid config at `{path}`: {}", e.inner())
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = parse_config(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(norm) = cfg.norm.as_mut() {
        for p in [&mut norm.input, &mut norm.other].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(cfg)
}

impl ExperimentConfig {
    /// Fills the selected block with defaults and drops the others.
    pub fn resolve(mut self, sub: Subcommand, seed: u64, threads: usize, output: PathBuf) -> Result<Self> {
        if let Some(s) = self.subcommand {
            if s != sub {
                bail!(
                    "invalid config at `subcommand`: file is for `{}` but `{}` was invoked",
                    s.name(),
                    sub.name()
                );
            }
        }
        let mut out = ExperimentConfig {
            subcommand: Some(sub),
            seed: Some(seed),
            output: Some(output),
            threads: Some(threads),
            ..Default::default()
        };
        match sub {
            Subcommand::RenormConstants => out.renorm_constants = Some(self.renorm_constants.take().unwrap_or_default()),
            Subcommand::Simulate => out.simulate = Some(self.simulate.take().unwrap_or_default()),
            Subcommand::Converge => {
                let mut c = self.converge.take().unwrap_or_default();
                if c.seeds.is_none() {
                    c.seeds = Some((0..c.runs as u64).map(|i| phi4_core::rng::substream_seed(seed, i)).collect());
                }
                c.runs = c.seeds.as_ref().map_or(0, Vec::len);
                out.converge = Some(c);
            }
            Subcommand::ModelCheck => out.model_check = Some(self.model_check.take().unwrap_or_default()),
            Subcommand::MeasureCheck => out.measure_check = Some(self.measure_check.take().unwrap_or_default()),
            Subcommand::Norm => out.norm = Some(self.norm.take().unwrap_or_default()),
        }
        Ok(out)
    }

    /// Canonical JSON of the configuration, excluding where results are written.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        c.threads = None;
        serde_json::to_string(&c).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_nested_key_is_named() {
        let err = parse_config(r#"{"simulate": {"levle": 3}}"#).unwrap_err().to_string();
        assert!(err.contains("simulate.levle"), "{err}");
    }

    #[test]
    fn unknown_top_level_key_is_named() {
        let err = parse_config(r#"{"sed": 3}"#).unwrap_err().to_string();
        assert!(err.contains("sed"), "{err}");
    }

    #[test]
    fn wrong_type_is_named() {
        let err = parse_config(r#"{"converge": {"levels": "3"}}"#).unwrap_err().to_string();
        assert!(err.contains("converge.levels"), "{err}");
    }

    #[test]
    fn resolve_fills_defaults_and_seeds() {
        let cfg = parse_config(r#"{"converge": {"runs": 3}}"#).unwrap();
        let r = cfg.resolve(Subcommand::Converge, 7, 1, "out".into()).unwrap();
        let c = r.converge.unwrap();
        assert_eq!(c.seeds.unwrap().len(), 3);
        assert_eq!(c.levels, vec![3, 4, 5]);
        assert!(r.simulate.is_none());
    }

    #[test]
    fn subcommand_mismatch_is_rejected() {
        let cfg = parse_config(r#"{"subcommand": "norm"}"#).unwrap();
        assert!(cfg.resolve(Subcommand::Simulate, 0, 1, "o".into()).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let r = ExperimentConfig::default()
            .resolve(Subcommand::MeasureCheck, 1, 2, "o".into())
            .unwrap();
        let text = serde_json::to_string_pretty(&r).unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(back.fingerprint(), r.fingerprint());
    }
}
