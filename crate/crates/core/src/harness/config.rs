//! Experiment configuration files.
//!
//! The grammar is TOML restricted to the sections and keys below; any other
//! key is an error. Paths are resolved relative to the directory holding the
//! config file.
//!
//! ```toml
//! [run]
//! name = "mnist"           # output subdirectory
//! methods = ["dsbp", "sgd"]
//! epochs = 20              # optional; overrides optimizer.total_iters
//!
//! [data]
//! kind = "idx"             # "idx", "blobs" or "stream"
//! train_images = "data/mnist-10k/train-images-idx3-ubyte"
//! train_labels = "data/mnist-10k/train-labels-idx1-ubyte"
//! test_images = "data/mnist-10k/test-images-idx3-ubyte"
//! test_labels = "data/mnist-10k/test-labels-idx1-ubyte"
//!
//! [model]
//! widths = [784, 100, 10]
//! hidden = "relu"
//!
//! [optimizer]              # every DsbpConfig field, all optional
//! eta = 0.01
//! k = 5
//!
//! [metrics]                # logging cadence and landscape settings
//! [sde]                    # `dsbp sde`
//! [meta]                   # `dsbp meta`
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::SdeConfig;
use crate::extensions::MetaConfig;
use crate::nn::Activation;
use crate::optimizers::{DsbpConfig, MetricsCadence};
use crate::{Error, Method, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub methods: Vec<Method>,
    /// When set, `total_iters = epochs × batches per epoch`.
    pub epochs: Option<usize>,
    /// Output root; the `--out` flag takes precedence.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "run".into(),
            methods: vec![Method::Dsbp],
            epochs: None,
            out_dir: None,
        }
    }
}

/// Where examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// IDX image/label files with pixels scaled by 1/255.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `limit` training examples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    /// Gaussian blobs, split into train and test by a seeded shuffle.
    Blobs {
        n_per_class: usize,
        dims: usize,
        classes: usize,
        separation: f64,
        test_count: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Blobs served as a stream whose features rotate in a seeded plane by
    /// `angles[s]` radians during segment `s`; the last angle persists.
    Stream {
        n_per_class: usize,
        dims: usize,
        classes: usize,
        separation: f64,
        test_count: usize,
        segment_len: usize,
        angles: Vec<f64>,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Blobs {
            n_per_class: 100,
            dims: 16,
            classes: 4,
            separation: 4.0,
            test_count: 80,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub widths: Vec<usize>,
    pub hidden: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 4],
            hidden: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(flatten)]
    pub cadence: MetricsCadence,
    /// Examples in the batch used for Hessian estimates and landscapes.
    pub probe_examples: usize,
    pub landscape_grid: usize,
    pub landscape_span: f64,
    pub landscape_random: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            cadence: MetricsCadence::default(),
            probe_examples: 512,
            landscape_grid: 21,
            landscape_span: 1.0,
            landscape_random: false,
        }
    }
}

/// `dsbp sde`: one network trajectory plus the quadratic weak-order sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSection {
    #[serde(flatten)]
    pub sim: SdeConfig,
    /// Noise seeds for the network trajectory.
    pub trajectories: usize,
    /// Learning rates for the weak-order sweep, each half the previous.
    pub etas: Vec<f64>,
    pub weak_seeds: usize,
    pub substeps: usize,
    pub weak_horizon: f64,
}

impl Default for SdeSection {
    fn default() -> Self {
        Self {
            sim: SdeConfig::default(),
            trajectories: 4,
            etas: vec![0.04, 0.02, 0.01],
            weak_seeds: 256,
            substeps: 64,
            weak_horizon: 1.0,
        }
    }
}

/// `dsbp meta`: tasks come from a blob base with many classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    #[serde(flatten)]
    pub meta: MetaConfig,
    pub base_classes: usize,
    pub base_per_class: usize,
    pub base_dims: usize,
    pub base_separation: f64,
}

impl Default for MetaSection {
    fn default() -> Self {
        Self {
            meta: MetaConfig::default(),
            base_classes: 40,
            base_per_class: 40,
            base_dims: 16,
            base_separation: 3.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub data: DataSpec,
    pub model: ModelSection,
    pub optimizer: DsbpConfig,
    pub metrics: MetricsSection,
    pub sde: SdeSection,
    pub meta: MetaSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates and resolves relative data paths against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(out) = &mut self.run.out_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        if let DataSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut self.data
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    /// Checks that synthetic data matches the model's input and output
    /// widths. `dsbp meta` builds its own task data and skips this.
    pub fn validate_shapes(&self) -> Result<()> {
        let w = &self.model.widths;
        let (dims, classes) = match &self.data {
            DataSpec::Idx { .. } => (None, None),
            DataSpec::Blobs { dims, classes, .. } | DataSpec::Stream { dims, classes, .. } => {
                (Some(*dims), Some(*classes))
            }
        };
        if let Some(d) = dims {
            if d != w[0] {
                return Err(Error::Config(format!(
                    "data.dims = {d} but model.widths starts with {}",
                    w[0]
                )));
            }
        }
        if let Some(c) = classes {
            if c != *w.last().expect("two widths") {
                return Err(Error::Config(format!(
                    "data.classes = {c} but model.widths ends with {}",
                    w.last().expect("two widths")
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.name.is_empty() || self.run.name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "run.name `{}` must be a non-empty single path component",
                self.run.name
            )));
        }
        if self.run.methods.is_empty() {
            return Err(Error::Config(
                "run.methods must list at least one method".into(),
            ));
        }
        if self.run.epochs == Some(0) {
            return Err(Error::Config("run.epochs must be at least 1".into()));
        }
        let w = &self.model.widths;
        if w.len() < 2 || w.contains(&0) {
            return Err(Error::Config(format!(
                "model.widths {w:?} needs at least two positive entries"
            )));
        }
        if self.model.hidden == Activation::SoftmaxOutput {
            return Err(Error::Config(
                "model.hidden cannot be softmax_output".into(),
            ));
        }
        self.optimizer.validate()?;
        for m in &self.run.methods {
            self.optimizer.with_method(*m).validate()?;
        }
        if let DataSpec::Stream {
            segment_len,
            angles,
            ..
        } = &self.data
        {
            if *segment_len == 0 || angles.is_empty() {
                return Err(Error::Config(
                    "stream data needs segment_len >= 1 and at least one angle".into(),
                ));
            }
        }
        if self.metrics.probe_examples == 0 || self.metrics.landscape_grid == 0 {
            return Err(Error::Config(
                "metrics.probe_examples and landscape_grid must be >= 1".into(),
            ));
        }
        self.sde.sim.validate()?;
        if self.sde.etas.len() < 2 || self.sde.weak_seeds < 2 || self.sde.substeps == 0 {
            return Err(Error::Config(
                "sde needs at least two etas, weak_seeds >= 2 and substeps >= 1".into(),
            ));
        }
        self.meta.meta.validate()?;
        if self.meta.base_classes < self.meta.meta.n_way {
            return Err(Error::Config(format!(
                "meta.base_classes = {} is fewer than n_way = {}",
                self.meta.base_classes, self.meta.meta.n_way
            )));
        }
        Ok(())
    }
}
