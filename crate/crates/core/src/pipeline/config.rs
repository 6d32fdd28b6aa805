//! Run configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnf::FlowConfig;
use crate::error::{Error, Result};
use crate::geomodel::{GeoConfig, Grid2D};
use crate::obs::ObservationConfig;
use crate::posterior::PosteriorConfig;
use crate::resim::{FluidProps, InjectionSchedule};
use crate::rng;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub nz: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { nx: 64, nz: 64 }
    }
}

impl GridSection {
    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::with_default_extent(self.nx, self.nz)
    }
}

/// Per-sample leak settings; the threshold itself is calibrated per model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakSection {
    /// Threshold as a fraction of the initial overpressure at the seal.
    pub threshold_fraction: f64,
    pub k_multiplier: f64,
}

impl Default for LeakSection {
    fn default() -> Self {
        LeakSection {
            threshold_fraction: 0.9,
            k_multiplier: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_total: usize,
    pub leak_fraction: f64,
    /// `[rows, cols]` of x and y.
    pub resolution: [usize; 2],
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_total: 2000,
            leak_fraction: 0.5,
            resolution: [64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub grid: GridSection,
    pub geo: GeoConfig,
    pub fluid: FluidProps,
    pub schedule: InjectionSchedule,
    pub leak: LeakSection,
    pub observation: ObservationConfig,
    pub dataset: DatasetSection,
    pub model: FlowConfig,
    pub training: TrainConfig,
    pub posterior: PosteriorConfig,
}

/// The sections that determine generated data; hashed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub seed: u64,
    pub grid: GridSection,
    pub geo: GeoConfig,
    pub fluid: FluidProps,
    pub schedule: InjectionSchedule,
    pub leak: LeakSection,
    pub observation: ObservationConfig,
    pub dataset: DatasetSection,
}

impl GenerationConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets the run seed and derives the model, training and posterior
    /// seeds from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = rng::mix(seed, 1);
        self.training.seed = rng::mix(seed, 2);
        self.posterior.seed = rng::mix(seed, 3);
        self
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            seed: self.seed,
            grid: self.grid,
            geo: self.geo.clone(),
            fluid: self.fluid,
            schedule: self.schedule,
            leak: self.leak,
            observation: self.observation,
            dataset: self.dataset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let section = |name: &str, r: Result<()>| {
            r.map_err(|e| {
                let msg = match e {
                    Error::Config(m) | Error::InvalidInput(m) => m,
                    other => other.to_string(),
                };
                Error::Config(format!("[{name}] {msg}"))
            })
        };
        section("grid", self.grid.grid().map(|_| ()))?;
        section("geo", self.geo.validate())?;
        section("fluid", self.fluid.validate())?;
        section("schedule", self.schedule.validate())?;
        section("observation", self.observation.validate())?;
        section("model", self.model.validate())?;
        section("training", self.training.validate())?;
        section("posterior", self.posterior.validate())?;
        let l = &self.leak;
        if !(l.threshold_fraction > 0.0 && l.threshold_fraction.is_finite()) {
            return Err(Error::Config("[leak] threshold_fraction must be positive".into()));
        }
        if !(l.k_multiplier > 1.0) {
            return Err(Error::Config("[leak] k_multiplier must exceed 1".into()));
        }
        let d = &self.dataset;
        if d.n_total < 2 {
            return Err(Error::Config("[dataset] n_total must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&d.leak_fraction) {
            return Err(Error::Config("[dataset] leak_fraction must lie in [0, 1]".into()));
        }
        let [r, c] = d.resolution;
        if r == 0 || c == 0 || !self.grid.nz.is_multiple_of(r) || !self.grid.nx.is_multiple_of(c) {
            return Err(Error::Config(format!(
                "[dataset] resolution {r}x{c} must divide the {}x{} grid",
                self.grid.nz, self.grid.nx
            )));
        }
        let div = 1 << self.model.levels;
        if r % div != 0 || c % div != 0 {
            return Err(Error::Config(format!(
                "[dataset] resolution {r}x{c} not divisible by 2^{} for the flow",
                self.model.levels
            )));
        }
        if let Some(s) = self.training.split {
            if s.iter().sum::<usize>() > d.n_total {
                return Err(Error::Config(format!(
                    "[training] split {s:?} needs {} samples, dataset has {}",
                    s.iter().sum::<usize>(),
                    d.n_total
                )));
            }
        }
        Ok(())
    }
}
