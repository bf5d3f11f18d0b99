//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coupling::CouplingMode;
use crate::dynamics::{default_step, Ensemble, IntegratorConfig, Scheme};
use crate::metrics::PhasePoint;
use crate::model::{ModelError, ModelSpec};
use crate::rng::{NoiseSource, CHANNEL_INIT};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ContractStrong,
    ContractClassical,
    ContractNonlinear,
    Chaos,
    UnconfinedContract,
    UnconfinedChaos,
    Moments,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorDoc {
    /// Defaults to `min(0.01, 0.1 / gamma)`.
    #[serde(default)]
    pub step: Option<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub substream: u64,
    #[serde(default = "yes")]
    pub noise: bool,
}

fn yes() -> bool {
    true
}

impl IntegratorDoc {
    pub fn build(&self, spec: &ModelSpec) -> IntegratorConfig {
        IntegratorConfig {
            step: self.step.unwrap_or_else(|| default_step(spec.gamma)),
            horizon: self.horizon,
            scheme: self.scheme,
            seed: self.seed,
            substream: self.substream,
            noise: self.noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CouplingDoc {
    /// Transition width of `rc`; defaults to `1e-3 R1` (floor `1e-8`).
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub mode: Option<CouplingMode>,
}

/// Initial laws of the two copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Dirac {
        first: PhasePoint,
        second: PhasePoint,
    },
    /// `first ~ N(mean, std^2 I)`, `second ~ N(mean + shift, std^2 I)`.
    Gaussian {
        mean: PhasePoint,
        std: f64,
        #[serde(default)]
        shift: Option<PhasePoint>,
    },
    /// CSV files with columns `x0..,y0..`; the header row is skipped.
    Csv {
        first: PathBuf,
        #[serde(default)]
        second: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceDoc {
    /// Multiple of the bootstrap standard error granted at every dump time.
    #[serde(default = "two")]
    pub se_factor: f64,
    /// Relative slack on the bound (for deterministic runs).
    #[serde(default)]
    pub relative: f64,
    /// Calibrate `C_h` by rerunning at half the step.
    #[serde(default)]
    pub calibrate_step: bool,
}

fn two() -> f64 {
    2.0
}

impl Default for ToleranceDoc {
    fn default() -> Self {
        ToleranceDoc { se_factor: 2.0, relative: 0.0, calibrate_step: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub integrator: IntegratorDoc,
    #[serde(default)]
    pub coupling: CouplingDoc,
    pub experiment: ExperimentKind,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Particle numbers of a chaos sweep.
    #[serde(default)]
    pub ensemble_sizes: Vec<usize>,
    /// Size of the law proxy of the nonlinear process.
    #[serde(default)]
    pub proxy_size: Option<usize>,
    /// Explicit dump times; otherwise `dumps` equally spaced times.
    #[serde(default)]
    pub dump_times: Option<Vec<f64>>,
    #[serde(default = "default_dumps")]
    pub dumps: usize,
    pub initial: InitialLaw,
    #[serde(default)]
    pub tolerance: ToleranceDoc,
    /// Bootstrap resamples for Wasserstein and mean standard errors.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Fit window floor relative to the initial value.
    #[serde(default)]
    pub fit_floor: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_replicas() -> usize {
    1000
}

fn default_dumps() -> usize {
    50
}

fn default_bootstrap() -> usize {
    200
}

/// Deserializes `text`, reporting schema errors with a JSON pointer.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let pointer = if path == "." { "/".to_string() } else { format!("/{}", path.replace('.', "/")) };
        ConfigError::Schema { pointer, message: e.into_inner().to_string() }
    })
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

/// Reads a model from either a bare model document or the `model` member of
/// an experiment configuration.
pub fn load_model(path: &Path) -> Result<ModelSpec, ConfigError> {
    let text = read_text(path)?;
    let value: serde_json::Value = parse_json(&text)?;
    if value.get("model").is_some() {
        Ok(ExperimentConfig::from_json(&text)?.model)
    } else {
        parse_json(&text)
    }
}

impl ExperimentConfig {
    /// Parses and validates a configuration.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = read_text(path)?;
        let mut cfg = Self::from_json(&text)?;
        // relative CSV paths are resolved against the config file
        if let InitialLaw::Csv { first, second } = &mut cfg.initial {
            let base = path.parent().unwrap_or(Path::new("."));
            *first = base.join(&*first);
            if let Some(s) = second {
                *s = base.join(&*s);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let h = self.integrator.step.unwrap_or_else(|| default_step(self.model.gamma));
        if !(h > 0.0) || !(self.integrator.horizon >= 0.0) {
            return Err(ConfigError::Invalid("step must be positive and horizon non-negative".into()));
        }
        if self.replicas == 0 {
            return Err(ConfigError::Invalid("replicas must be at least 1".into()));
        }
        if let Some(times) = &self.dump_times {
            if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= self.integrator.horizon + 1e-12)) {
                return Err(ConfigError::Invalid(format!("dump time {t} lies outside [0, horizon]")));
            }
        }
        if let Some(x) = self.coupling.xi {
            if !(x > 0.0) {
                return Err(ConfigError::Invalid("coupling.xi must be positive".into()));
            }
        }
        let d = self.model.dimension;
        let check_point = |p: &PhasePoint, what: &str| {
            if p.x.len() != d || p.y.len() != d {
                Err(ConfigError::Invalid(format!("{what} must have dimension {d}")))
            } else {
                Ok(())
            }
        };
        match &self.initial {
            InitialLaw::Dirac { first, second } => {
                check_point(first, "initial.first")?;
                check_point(second, "initial.second")?;
            }
            InitialLaw::Gaussian { mean, std, shift } => {
                check_point(mean, "initial.mean")?;
                if let Some(s) = shift {
                    check_point(s, "initial.shift")?;
                }
                if !(*std >= 0.0) {
                    return Err(ConfigError::Invalid("initial.std must be non-negative".into()));
                }
            }
            InitialLaw::Csv { .. } => {}
        }
        if matches!(self.experiment, ExperimentKind::Chaos | ExperimentKind::UnconfinedChaos) {
            if self.ensemble_sizes.is_empty() {
                return Err(ConfigError::Invalid("chaos experiments need ensemble_sizes".into()));
            }
            let max_n = *self.ensemble_sizes.iter().max().unwrap();
            let m = self.proxy_size.unwrap_or(8 * max_n);
            if m < 8 * max_n {
                return Err(ConfigError::Invalid(format!("proxy_size {m} is smaller than 8 * max N = {}", 8 * max_n)));
            }
        }
        Ok(())
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        self.integrator.build(&self.model)
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("configuration serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Step indices of the dump times (always including step 0).
    pub fn dump_steps(&self) -> Vec<u64> {
        let cfg = self.integrator_config();
        let steps = cfg.steps();
        let mut out: Vec<u64> = match &self.dump_times {
            Some(times) => times.iter().map(|t| ((t / cfg.step).round() as u64).min(steps)).collect(),
            None => {
                let k = self.dumps.max(1) as u64;
                (0..=k).map(|i| ((i as f64 * steps as f64 / k as f64).round()) as u64).collect()
            }
        };
        out.push(0);
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn gaussian_ensemble(mean: &PhasePoint, std: f64, n: usize, seed: u64, substream: u64) -> Ensemble {
    let d = mean.dim();
    let noise = NoiseSource::new(seed, substream, d);
    let ids: Vec<u64> = (0..n as u64).collect();
    let mut xi = vec![0.0; n * d];
    let mut eta = vec![0.0; n * d];
    noise.draw_many(CHANNEL_INIT, 0, &ids, &mut xi, &mut eta);
    let xs = xi.iter().enumerate().map(|(k, v)| mean.x[k % d] + std * v).collect();
    let ys = eta.iter().enumerate().map(|(k, v)| mean.y[k % d] + std * v).collect();
    Ensemble::new(d, xs, ys)
}

fn read_csv(path: &Path, d: usize) -> Result<Vec<PhasePoint>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut pts = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| ConfigError::Invalid(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        if vals.len() != 2 * d {
            return Err(ConfigError::Invalid(format!("{}:{}: expected {} columns", path.display(), line_no + 1, 2 * d)));
        }
        pts.push(PhasePoint::new(vals[..d].to_vec(), vals[d..].to_vec()));
    }
    if pts.is_empty() {
        return Err(ConfigError::Invalid(format!("{} has no rows", path.display())));
    }
    Ok(pts)
}

/// Resamples `points` cyclically to size `n`.
fn cycle(points: &[PhasePoint], n: usize) -> Ensemble {
    let v: Vec<PhasePoint> = (0..n).map(|i| points[i % points.len()].clone()).collect();
    Ensemble::from_points(&v)
}

impl InitialLaw {
    /// `n` samples of each of the two laws, drawn from the init channel
    /// with substreams `base` and `base + 1`.
    pub fn sample(&self, d: usize, n: usize, seed: u64, base: u64) -> Result<(Ensemble, Ensemble), ConfigError> {
        Ok(match self {
            InitialLaw::Dirac { first, second } => (Ensemble::dirac(first, n), Ensemble::dirac(second, n)),
            InitialLaw::Gaussian { mean, std, shift } => {
                let a = gaussian_ensemble(mean, *std, n, seed, base);
                let mut b = gaussian_ensemble(mean, *std, n, seed, base + 1);
                if let Some(s) = shift {
                    for (k, v) in b.xs.iter_mut().enumerate() {
                        *v += s.x[k % d];
                    }
                    for (k, v) in b.ys.iter_mut().enumerate() {
                        *v += s.y[k % d];
                    }
                }
                (a, b)
            }
            InitialLaw::Csv { first, second } => {
                let a = read_csv(first, d)?;
                let b = match second {
                    Some(p) => read_csv(p, d)?,
                    None => a.clone(),
                };
                (cycle(&a, n), cycle(&b, n))
            }
        })
    }

    /// `n` samples of the first law only.
    pub fn sample_first(&self, d: usize, n: usize, seed: u64, base: u64) -> Result<Ensemble, ConfigError> {
        Ok(self.sample(d, n, seed, base)?.0)
    }
}

/// Deterministic generator for resampling, keyed by the run seed.
pub fn resampling_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
