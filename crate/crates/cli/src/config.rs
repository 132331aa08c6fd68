//! Run configuration files. Every section rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use quirk::data::{self, Dataset, Univariate};
use quirk::network::NetworkSpec;
use quirk::train::TrainConfig;

use crate::Failure;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<DatasetSection>,
    pub network: Option<NetworkSection>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
    pub benchmark: Option<BenchmarkSection>,
    pub compare: Option<CompareSection>,
    #[serde(default)]
    pub interpret: InterpretSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Registered equation id; mutually exclusive with `csv`.
    pub equation: Option<String>,
    pub csv: Option<PathBuf>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Map training targets onto [-1, 1].
    #[serde(default = "yes")]
    pub scale_targets: bool,
}

fn default_samples() -> usize {
    data::DEFAULT_SAMPLES
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Units per layer, excluding the input dimension.
    pub widths: Vec<usize>,
    /// Circuit depth, one value for all layers or one per layer.
    pub dr_layers: Vec<usize>,
    #[serde(default)]
    pub dense_head: bool,
    #[serde(default = "one")]
    pub qubits: usize,
    #[serde(default)]
    pub entangle: bool,
    #[serde(default)]
    pub rescale_bias: bool,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub prune_threshold: f64,
    pub finetune_steps: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            batch_size: d.batch_size,
            max_steps: d.max_steps,
            seed: d.seed,
            early_stop_patience: d.early_stop_patience,
            prune_threshold: d.prune_threshold,
            finetune_steps: d.finetune_steps,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("quirk-out") }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub equations: Vec<String>,
    /// Also run the pruning pass and report its columns.
    #[serde(default = "yes")]
    pub prune: bool,
    /// Merge published classical-KAN results for the same equations.
    #[serde(default)]
    pub include_reference: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub target: String,
    pub budgets: Vec<usize>,
    #[serde(default = "default_range")]
    pub range: [f64; 2],
    #[serde(default = "default_compare_samples")]
    pub samples: usize,
    #[serde(default = "default_smoothness")]
    pub smoothness: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Random restarts per DR budget; the best validation fit is kept.
    #[serde(default = "one")]
    pub restarts: usize,
}

fn default_range() -> [f64; 2] {
    [0.0, 10.0]
}

fn default_compare_samples() -> usize {
    1000
}

fn default_smoothness() -> Vec<f64> {
    vec![1.0, 0.05]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretSection {
    pub grid_size: usize,
    pub max_degree: usize,
    pub r2_target: f64,
    pub svg: bool,
}

impl Default for InterpretSection {
    fn default() -> Self {
        let d = quirk::interpret::InterpretConfig::default();
        InterpretSection {
            grid_size: d.grid_size,
            max_degree: d.max_degree,
            r2_target: d.r2_target,
            svg: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|m| Failure::config(format!("{}: {m}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Applies `--seed` to every seed the run uses.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(d) = &mut self.dataset {
            d.seed = seed;
        }
        if let Some(n) = &mut self.network {
            n.seed = seed;
        }
        if let Some(c) = &mut self.compare {
            c.seed = seed;
        }
        self.train.seed = seed;
    }

    pub fn dataset(&self) -> Result<&DatasetSection, Failure> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Failure::config("missing required section [dataset] (key `dataset`)"))
    }

    pub fn network(&self) -> Result<&NetworkSection, Failure> {
        self.network
            .as_ref()
            .ok_or_else(|| Failure::config("missing required section [network] (key `network`)"))
    }

    pub fn train_config(&self) -> Result<TrainConfig, Failure> {
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            seed: t.seed,
            early_stop_patience: t.early_stop_patience,
            prune_threshold: t.prune_threshold,
            finetune_steps: t.finetune_steps,
        };
        cfg.validate().map_err(|e| Failure::config(format!("[train]: {e}")))?;
        Ok(cfg)
    }

    pub fn interpret_config(&self) -> Result<quirk::interpret::InterpretConfig, Failure> {
        let i = &self.interpret;
        if i.grid_size < i.max_degree + 1 {
            return Err(Failure::config(format!(
                "[interpret]: grid_size {} is too small for max_degree {}",
                i.grid_size, i.max_degree
            )));
        }
        if !(0.0..=1.0).contains(&i.r2_target) {
            return Err(Failure::config("[interpret]: r2_target must lie in [0, 1]"));
        }
        Ok(quirk::interpret::InterpretConfig {
            grid_size: i.grid_size,
            max_degree: i.max_degree,
            r2_target: i.r2_target,
        })
    }
}

impl DatasetSection {
    pub fn validate(&self) -> Result<(), Failure> {
        match (&self.equation, &self.csv) {
            (Some(_), Some(_)) => Err(Failure::config("[dataset]: set only one of `equation` and `csv`")),
            (None, None) => Err(Failure::config("[dataset]: missing key `equation` (or `csv`)")),
            _ if self.samples == 0 => Err(Failure::config("[dataset]: `samples` must be at least 1")),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Dataset, Failure> {
        self.validate()?;
        let mut ds = match (&self.equation, &self.csv) {
            (Some(id), None) => data::generate(id, self.samples, self.seed).map_err(|e| match e {
                quirk::QuirkError::Lookup { .. } => Failure::config(format!("[dataset] equation: {e}")),
                e => Failure::from(e),
            })?,
            (None, Some(p)) => data::load_csv_with_seed(p, self.seed)?,
            _ => unreachable!("validated above"),
        };
        if self.scale_targets {
            ds.scale_targets();
        }
        Ok(ds)
    }

    pub fn label(&self) -> String {
        match (&self.equation, &self.csv) {
            (Some(id), _) => id.clone(),
            (_, Some(p)) => p.display().to_string(),
            _ => "?".into(),
        }
    }
}

impl NetworkSection {
    pub fn spec(&self, input_dim: usize) -> Result<NetworkSpec, Failure> {
        let mut spec = NetworkSpec::from_widths(input_dim, &self.widths, &self.dr_layers)
            .map_err(|e| Failure::config(format!("[network]: {e}")))?
            .with_dense_head(self.dense_head)
            .with_seed(self.seed)
            .with_qubits(self.qubits, self.entangle);
        spec.rescale_bias = self.rescale_bias;
        spec.validate().map_err(|e| Failure::config(format!("[network]: {e}")))?;
        Ok(spec)
    }
}

impl CompareSection {
    pub fn validate(&self) -> Result<Univariate, Failure> {
        let target = Univariate::parse(&self.target).map_err(|e| Failure::config(format!("[compare] target: {e}")))?;
        if self.budgets.is_empty() {
            return Err(Failure::config("[compare]: `budgets` is empty"));
        }
        if !(self.range[0] < self.range[1]) {
            return Err(Failure::config("[compare]: `range` must be increasing"));
        }
        if self.samples < 10 {
            return Err(Failure::config("[compare]: `samples` must be at least 10"));
        }
        if self.restarts == 0 {
            return Err(Failure::config("[compare]: `restarts` must be at least 1"));
        }
        Ok(target)
    }
}
