//! Scenario files: a JSON document describing the database model, the
//! partition format, the query plan and the ε grid.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use statpriv::compose::{CompositionOptions, CompositionSpec, QueryPlan, DEFAULT_PREFIX_CAP};
use statpriv::curve::{check_grid, DEFAULT_EPSILON_GRID};
use statpriv::partition::{TemplateFormat, DEFAULT_TEMPLATE_CAP};
use statpriv::spc::{EntryModel, Scenario, SpcMode};

pub const SCHEMA_VERSION: u32 = 1;

const DEFAULT_TRIALS: u64 = 10_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeFlag {
    #[default]
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub n: usize,
    pub entry_model: EntryModel,
    #[serde(default)]
    pub critical: usize,
    #[serde(default)]
    pub format: Option<TemplateFormat>,
    #[serde(default)]
    pub plan: Option<QueryPlan>,
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: ModeFlag,
    #[serde(default)]
    pub trials: Option<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub template_cap: Option<u64>,
    #[serde(default)]
    pub prefix_cap: Option<u64>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid scenario file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {} (expected {SCHEMA_VERSION})", file.schema_version);
        }
        if file.mode == ModeFlag::Exact && (file.trials.is_some() || file.seed.is_some()) {
            bail!("trials and seed only apply to mode \"monte-carlo\"");
        }
        if let Some(eps) = &file.epsilons {
            check_grid(eps)?;
        }
        Ok(file)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario::new(self.n, self.entry_model.clone(), self.critical)?)
    }

    pub fn spec(&self) -> Result<CompositionSpec> {
        match (&self.format, &self.plan) {
            (Some(format), Some(plan)) => Ok(CompositionSpec::new(format.clone(), plan.clone())?),
            _ => bail!("the scenario needs both \"format\" and \"plan\""),
        }
    }

    pub fn spc_mode(&self) -> SpcMode {
        match self.mode {
            ModeFlag::Exact => SpcMode::Enumerate,
            ModeFlag::MonteCarlo => SpcMode::MonteCarlo {
                trials: self.trials.unwrap_or(DEFAULT_TRIALS),
                seed: self.seed.unwrap_or(0),
            },
        }
    }

    pub fn options(&self) -> CompositionOptions {
        CompositionOptions {
            template_cap: self.template_cap.map_or(DEFAULT_TEMPLATE_CAP, u128::from),
            prefix_cap: self.prefix_cap.map_or(DEFAULT_PREFIX_CAP, u128::from),
            spc_mode: self.spc_mode(),
        }
    }

    /// The ε grid: `overrides` if given, else the file's, else the default.
    pub fn epsilons(&self, overrides: Option<&[f64]>) -> Vec<f64> {
        overrides
            .map(<[f64]>::to_vec)
            .or_else(|| self.epsilons.clone())
            .unwrap_or_else(|| DEFAULT_EPSILON_GRID.to_vec())
    }
}
