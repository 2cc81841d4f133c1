use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{default_backend, EnsembleRule, Slot, TrainRecipe};
use crate::corpus::{Granularity, YearMonth};
use crate::embedding::HashedEmbedder;
use crate::error::{Error, Result};
use crate::eval::MatcherConfig;
use crate::issues::{IssueGenConfig, KeywordFactory};
use crate::mapper::DEFAULT_TOP_K;
use crate::simulator::{SimulatorConfig, TemplateFactory};
use crate::text::sha256_hex;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlotConfig {
    pub backend: Option<String>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub hidden_units: Option<usize>,
    pub embedding_dim: Option<usize>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub min_reviews: usize,
    pub designated: Slot,
    /// Share of the labeled set held out for the metrics table.
    pub holdout_fraction: f64,
    pub a: SlotConfig,
    pub b: SlotConfig,
    pub c: SlotConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let rule = EnsembleRule::default();
        Self {
            min_reviews: rule.min_reviews,
            designated: rule.designated,
            holdout_fraction: 0.2,
            a: SlotConfig::default(),
            b: SlotConfig::default(),
            c: SlotConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn slot(&self, slot: Slot) -> &SlotConfig {
        match slot {
            Slot::A => &self.a,
            Slot::B => &self.b,
            Slot::C => &self.c,
        }
    }

    pub fn rule(&self) -> EnsembleRule {
        EnsembleRule {
            min_reviews: self.min_reviews,
            designated: self.designated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperConfig {
    pub k: usize,
    pub embedder: String,
    pub dimension: usize,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            embedder: HashedEmbedder::NAME.into(),
            dimension: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorSection {
    pub backend: String,
    #[serde(flatten)]
    pub config: SimulatorConfig,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        Self {
            backend: TemplateFactory::NAME.into(),
            config: SimulatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IssueSection {
    pub backend: String,
    #[serde(flatten)]
    pub config: IssueGenConfig,
}

impl Default for IssueSection {
    fn default() -> Self {
        Self {
            backend: KeywordFactory::NAME.into(),
            config: IssueGenConfig::default(),
        }
    }
}

/// One declarative run description. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub app: String,
    pub features: PathBuf,
    pub reviews: PathBuf,
    /// Labeled privacy / not-privacy texts for classifier training.
    pub labeled: PathBuf,
    #[serde(default)]
    pub sentiment: Option<PathBuf>,
    pub annotations: PathBuf,
    /// Optional two-rater validity judgments for the agreement table.
    #[serde(default)]
    pub judgments: Option<PathBuf>,
    /// Last month of the existing group.
    pub cutoff: YearMonth,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub seed: u64,
    /// Replace every real backend with its slot's stub.
    #[serde(default)]
    pub stub: bool,
    #[serde(default = "default_run_root")]
    pub run_root: PathBuf,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub mapper: MapperConfig,
    #[serde(default)]
    pub simulator: SimulatorSection,
    #[serde(default)]
    pub issues: IssueSection,
    #[serde(default)]
    pub matcher: MatcherConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_run_root() -> PathBuf {
    PathBuf::from("runs")
}

/// Command-line overrides; each one changes the config hash.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub stub: bool,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let body = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        config.stub |= overrides.stub;
        config.propagate_seed();
        config.validate()?;
        Ok(config)
    }

    /// The global seed drives every stochastic step.
    fn propagate_seed(&mut self) {
        self.simulator.config.seed = self.seed;
        self.issues.config.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.app.trim().is_empty() {
            return Err(Error::Config("app must be set".into()));
        }
        if self.mapper.k == 0 {
            return Err(Error::Config("mapper k must be positive".into()));
        }
        if !(self.classifier.holdout_fraction > 0.0 && self.classifier.holdout_fraction < 1.0) {
            return Err(Error::Config("classifier holdout_fraction must be in (0, 1)".into()));
        }
        self.simulator.config.validate()?;
        self.issues.config.validate()?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Input files that feed the run, resolved.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![
            self.resolve(&self.features),
            self.resolve(&self.reviews),
            self.resolve(&self.labeled),
            self.resolve(&self.annotations),
        ];
        v.extend(self.sentiment.iter().map(|p| self.resolve(p)));
        v.extend(self.judgments.iter().map(|p| self.resolve(p)));
        v
    }

    pub fn check_inputs(&self) -> Result<()> {
        for p in self.inputs() {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Hash over the settings and the content of every input file, so that
    /// neither the checkout location nor unchanged reruns move it.
    pub fn hash(&self) -> Result<String> {
        let mut payload = serde_json::to_vec(self)?;
        for p in self.inputs() {
            let bytes = fs::read(&p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            payload.extend_from_slice(sha256_hex(&bytes).as_bytes());
        }
        Ok(sha256_hex(&payload)[..12].to_string())
    }

    pub fn default_run_dir(&self) -> Result<PathBuf> {
        let slug: String = self
            .app
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
            .collect();
        Ok(self.resolve(&self.run_root).join(format!("{slug}-{}", self.hash()?)))
    }

    pub fn slot_backend(&self, slot: Slot) -> String {
        self.classifier
            .slot(slot)
            .backend
            .clone()
            .unwrap_or_else(|| default_backend(slot).to_string())
    }

    pub fn recipe(&self, slot: Slot) -> TrainRecipe {
        let mut r = TrainRecipe::for_slot(slot);
        let s = self.classifier.slot(slot);
        if let Some(v) = s.epochs {
            r.epochs = v;
        }
        if let Some(v) = s.learning_rate {
            r.learning_rate = v;
        }
        if let Some(v) = s.hidden_units {
            r.hidden_units = v;
        }
        if let Some(v) = s.embedding_dim {
            r.embedding_dim = v;
        }
        if let Some(v) = s.threshold {
            r.threshold = v;
        }
        r.seed = self.seed.wrapping_add(slot.index() as u64);
        r
    }
}
