//! Experiment configuration: a TOML file with an `[experiment]` table and an
//! optional `[device]` table. Every hyperparameter has a per-experiment
//! default, so `kind = "mnist"` alone is a complete config.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crossbar::{PulsePlan, UpdateCycle};
use crate::device_model::{
    DeviceModel, PowerLawFit, StepLaw, DEFAULT_G_CENTER, DEFAULT_G_MAX, DEFAULT_G_MIN,
};
use crate::error::{Error, Result};
use crate::trainer::Backend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Mnist,
    Cifar10,
    Cifar100,
    MountainCar,
    KSweep,
    NoiseSweep,
    ToySmoke,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mnist => "mnist",
            Self::Cifar10 => "cifar10",
            Self::Cifar100 => "cifar100",
            Self::MountainCar => "mountain_car",
            Self::KSweep => "k_sweep",
            Self::NoiseSweep => "noise_sweep",
            Self::ToySmoke => "toy_smoke",
        }
    }

    /// Step size used when the config leaves `alpha` unset.
    pub fn default_alpha(self) -> f64 {
        match self {
            Self::Cifar10 | Self::Cifar100 => 0.1,
            Self::MountainCar => 0.00625,
            _ => 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Crossbar,
    Float,
}

/// Raw `[experiment]` table; unset keys fall back to per-kind defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentTable {
    kind: Option<ExperimentKind>,
    backend: Option<BackendKind>,
    alpha: Option<f64>,
    k: Option<f64>,
    pulse_length: Option<u32>,
    noise_fraction: Option<f64>,
    cycle: Option<UpdateCycle>,
    epochs: Option<u32>,
    episodes: Option<u32>,
    repetitions: Option<usize>,
    seed: Option<u64>,
    hidden: Option<Vec<usize>>,
    bias: Option<bool>,
    checkpoint_every: Option<u64>,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
    mnist_dir: Option<PathBuf>,
    train_features: Option<PathBuf>,
    test_features: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    k_values: Option<Vec<f64>>,
    noise_values: Option<Vec<f64>>,
    epsilon: Option<f64>,
    gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceTable {
    noise_fraction: Option<f64>,
    g_min: Option<f64>,
    g_max: Option<f64>,
    g_center: Option<f64>,
    ltd: Option<PowerLawFit>,
    ltp: Option<PowerLawFit>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment: ExperimentTable,
    #[serde(default)]
    device: DeviceTable,
}

/// Device section after defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub g_min: f64,
    pub g_max: f64,
    pub g_center: f64,
    /// Raw program/erase fits; the published closed forms when absent.
    pub fits: Option<(PowerLawFit, PowerLawFit)>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            g_min: DEFAULT_G_MIN,
            g_max: DEFAULT_G_MAX,
            g_center: DEFAULT_G_CENTER,
            fits: None,
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub backend: BackendKind,
    pub alpha: f64,
    pub k: f64,
    pub pulse_length: u32,
    pub noise_fraction: f64,
    pub cycle: UpdateCycle,
    pub epochs: u32,
    pub episodes: u32,
    pub repetitions: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub bias: bool,
    pub checkpoint_every: u64,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub mnist_dir: PathBuf,
    pub train_features: Option<PathBuf>,
    pub test_features: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub k_values: Vec<f64>,
    pub noise_values: Vec<f64>,
    pub epsilon: f64,
    pub gamma: f64,
    pub device: DeviceConfig,
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    pub fn new(kind: ExperimentKind) -> Self {
        let alpha = kind.default_alpha();
        let (epochs, repetitions, noise_fraction) = match kind {
            ExperimentKind::MountainCar => (1, 100, 1.0),
            ExperimentKind::KSweep => (10, 1, 0.1),
            ExperimentKind::NoiseSweep => (3, 4, 1.0),
            ExperimentKind::ToySmoke => (50, 1, 1.0),
            _ => (10, 10, 1.0),
        };
        let hidden = match kind {
            ExperimentKind::Mnist | ExperimentKind::KSweep | ExperimentKind::NoiseSweep => {
                vec![256, 128]
            }
            ExperimentKind::ToySmoke => vec![16],
            _ => Vec::new(),
        };
        Self {
            kind,
            backend: BackendKind::Crossbar,
            alpha,
            k: 600.0 * alpha,
            pulse_length: 10,
            noise_fraction,
            cycle: UpdateCycle::Positive,
            epochs,
            episodes: 500,
            repetitions,
            seed: 0,
            hidden,
            bias: true,
            checkpoint_every: 5000,
            train_limit: None,
            test_limit: None,
            mnist_dir: PathBuf::from("data/mnist"),
            train_features: None,
            test_features: None,
            output_dir: PathBuf::from("results"),
            k_values: vec![1.0, 2.0, 4.0, 6.0, 10.0, 20.0],
            noise_values: vec![0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0],
            epsilon: 0.1,
            gamma: 1.0,
            device: DeviceConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let e = file.experiment;
        let kind = e
            .kind
            .ok_or_else(|| Error::Config("[experiment] needs a `kind`".into()))?;
        let mut cfg = Self::new(kind);
        if let Some(alpha) = e.alpha {
            cfg.alpha = alpha;
            cfg.k = 600.0 * alpha;
        }
        macro_rules! take {
            ($($field:ident),*) => { $(if let Some(v) = e.$field { cfg.$field = v; })* };
        }
        take!(
            backend,
            k,
            pulse_length,
            cycle,
            epochs,
            episodes,
            repetitions,
            seed,
            hidden,
            bias,
            checkpoint_every,
            mnist_dir,
            output_dir,
            k_values,
            noise_values,
            epsilon,
            gamma
        );
        cfg.train_limit = e.train_limit;
        cfg.test_limit = e.test_limit;
        cfg.train_features = e.train_features;
        cfg.test_features = e.test_features;
        cfg.noise_fraction = match (e.noise_fraction, file.device.noise_fraction) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "noise_fraction set in both [experiment] and [device]".into(),
                ))
            }
            (Some(v), None) | (None, Some(v)) => v,
            (None, None) => cfg.noise_fraction,
        };
        let d = file.device;
        cfg.device = DeviceConfig {
            g_min: d.g_min.unwrap_or(DEFAULT_G_MIN),
            g_max: d.g_max.unwrap_or(DEFAULT_G_MAX),
            g_center: d.g_center.unwrap_or(DEFAULT_G_CENTER),
            fits: match (d.ltd, d.ltp) {
                (Some(ltd), Some(ltp)) => Some((ltd, ltp)),
                (None, None) => None,
                _ => {
                    return Err(Error::Config(
                        "give both ltd and ltp fits, or neither".into(),
                    ))
                }
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.k > 0.0 && self.k.is_finite()) {
            return bad(format!("k must be > 0, got {}", self.k));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        if self.pulse_length == 0 {
            return bad("pulse_length must be >= 1".into());
        }
        if self.epochs == 0 || self.episodes == 0 {
            return bad("epochs and episodes must be >= 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be >= 1".into());
        }
        if self.k_values.iter().any(|k| !(*k > 0.0)) {
            return bad("every swept k must be > 0".into());
        }
        if self.noise_values.iter().any(|n| !(*n >= 0.0)) {
            return bad("every swept noise level must be >= 0".into());
        }
        self.device_model()?;
        Ok(())
    }

    pub fn device_model(&self) -> Result<DeviceModel> {
        let d = &self.device;
        match d.fits {
            Some((ltd, ltp)) => {
                DeviceModel::from_fits(ltd, ltp, self.noise_fraction, d.g_min, d.g_max, d.g_center)
            }
            None => DeviceModel::new(
                StepLaw::PUBLISHED_POTENTIATION,
                StepLaw::PUBLISHED_DEPRESSION,
                self.noise_fraction,
                d.g_min,
                d.g_max,
                d.g_center,
            ),
        }
    }

    pub fn backend(&self) -> Result<Backend> {
        Ok(match self.backend {
            BackendKind::Float => Backend::Float {
                learning_rate: self.alpha,
            },
            BackendKind::Crossbar => {
                let device = Arc::new(self.device_model()?);
                let plan = PulsePlan::for_step_size(
                    self.alpha,
                    self.pulse_length,
                    self.k,
                    &device,
                    self.cycle,
                )?;
                Backend::Crossbar {
                    device,
                    k: self.k,
                    plan,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_table_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[experiment]\nkind = \"mnist\"\n").unwrap();
        assert_eq!(cfg.alpha, 0.01);
        assert!((cfg.k - 6.0).abs() < 1e-12);
        assert_eq!(cfg.pulse_length, 10);
        assert_eq!(cfg.hidden, vec![256, 128]);
        assert_eq!(cfg.backend, BackendKind::Crossbar);
        assert_eq!(cfg.cycle, UpdateCycle::Positive);

        let rl =
            ExperimentConfig::from_toml_str("[experiment]\nkind = \"mountain_car\"\n").unwrap();
        assert!((rl.k - 3.75).abs() < 1e-12);
        assert_eq!(rl.episodes, 500);
        let cifar = ExperimentConfig::from_toml_str("[experiment]\nkind = \"cifar10\"\n").unwrap();
        assert!((cifar.k - 60.0).abs() < 1e-9);
        assert!(cifar.hidden.is_empty());
    }

    #[test]
    fn explicit_alpha_moves_default_k() {
        let cfg = ExperimentConfig::from_toml_str("[experiment]\nkind = \"mnist\"\nalpha = 0.02\n")
            .unwrap();
        assert!((cfg.k - 12.0).abs() < 1e-12);
        let cfg = ExperimentConfig::from_toml_str(
            "[experiment]\nkind = \"mnist\"\nalpha = 0.02\nk = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.k, 3.0);
    }

    #[test]
    fn device_fits_and_window() {
        let text = r#"
[experiment]
kind = "mnist"

[device]
noise_fraction = 0.1
g_max = -0.115
ltd = { x1 = 9.55e-4, x2 = 0.719, x3 = -0.322 }
ltp.x1 = -2.38e-3
ltp.x2 = 0.580
ltp.x3 = -0.112
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.noise_fraction, 0.1);
        let dev = cfg.device_model().unwrap();
        assert_eq!(dev.g_max(), -0.115);
        assert!((dev.potentiation_law().exponent + 0.39).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "[experiment]\n",
            "[experiment]\nkind = \"mnist\"\nk = 0\n",
            "[experiment]\nkind = \"mnist\"\nk = -1\n",
            "[experiment]\nkind = \"mnist\"\nrepetitions = 0\n",
            "[experiment]\nkind = \"mnist\"\ntypo = 1\n",
            "[experiment]\nkind = \"mnist\"\nnoise_fraction = 1\n[device]\nnoise_fraction = 1\n",
            "[experiment]\nkind = \"mnist\"\n[device]\nltd = { x1 = 9.55e-4, x2 = 0.719, x3 = -0.322 }\n",
            "[experiment]\nkind = \"mnist\"\n[device]\ng_min = -0.4\n",
            "[experiment]\nkind = \"imagenet\"\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_)) | Err(Error::InvalidDevice(_))), "{text}");
        }
    }

    #[test]
    fn open_ceiling_round_trips_through_toml() {
        let cfg = ExperimentConfig::new(ExperimentKind::NoiseSweep);
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.device.g_max, f64::INFINITY);
    }
}
