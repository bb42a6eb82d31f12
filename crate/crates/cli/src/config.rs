//! Run configuration: strict JSON, defaults filled in, dotted-path overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sdde_core::model::SddeModel;
use sdde_core::truncation::{make_power_law_policy, TruncationPolicy};

use crate::models;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Check,
    Simulate,
    Converge,
    Gap,
    Moments,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    #[default]
    Truncated,
    Classical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Value of the constant initial path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_star_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_box_radius")]
    pub box_radius: f64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_check_seed")]
    pub seed: u64,
    #[serde(default = "default_holder_pairs")]
    pub holder_pairs: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            box_radius: default_box_radius(),
            n_samples: default_n_samples(),
            seed: default_check_seed(),
            holder_pairs: default_holder_pairs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KhasminskiiConfig {
    pub k1: f64,
    pub k2: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrongKhasminskiiConfig {
    pub p_bar: f64,
    /// Derived from the model when omitted (built-in examples only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotonicityConfig {
    pub h: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyLipschitzConfig {
    pub h3: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalLipschitzConfig {
    pub k_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderConfig {
    pub k3: f64,
    pub gamma: f64,
}

/// Constants for `check`. Anything left out falls back to the model's own
/// constants, if it has any.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub khasminskii: Option<KhasminskiiConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strong_khasminskii: Option<StrongKhasminskiiConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotonicity: Option<MonotonicityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poly_lipschitz: Option<PolyLipschitzConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_lipschitz: Option<LocalLipschitzConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holder: Option<HolderConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default = "default_m_list")]
    pub m_list: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_ref: Option<usize>,
    #[serde(default = "default_q_list")]
    pub q_list: Vec<f64>,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scheme: SchemeName,
    /// Moment order for `gap` and `moments`.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice_resolution: Option<usize>,
    /// Brownian path drawn by `simulate`.
    #[serde(default)]
    pub path_index: u64,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
}

fn default_box_radius() -> f64 {
    50.0
}
fn default_n_samples() -> usize {
    100_000
}
fn default_check_seed() -> u64 {
    7
}
fn default_holder_pairs() -> usize {
    2000
}
fn default_m_list() -> Vec<usize> {
    vec![8, 16, 32, 64]
}
fn default_q_list() -> Vec<f64> {
    vec![2.0]
}
fn default_n_paths() -> usize {
    1000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("sdde-out")
}
fn default_p() -> f64 {
    2.0
}

/// Grid refinements between the finest tested grid and the default
/// reference.
pub const EXTRA_REFINEMENT: u32 = 4;

impl RunConfig {
    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(1.0)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or_else(|| self.tau())
    }

    pub fn m_ref(&self) -> usize {
        self.m_ref
            .unwrap_or_else(|| self.m_list.iter().max().copied().unwrap_or(1) << EXTRA_REFINEMENT)
    }

    pub fn lattice_resolution(&self) -> usize {
        self.lattice_resolution.unwrap_or_else(|| self.m_ref())
    }

    pub fn build_model(&self) -> Result<SddeModel> {
        let model = models::build(&self.model)?;
        match self.tau {
            Some(tau) => Ok(model.with_delay(tau).context("tau")?),
            None => Ok(model),
        }
    }

    pub fn build_policy(&self) -> Result<TruncationPolicy> {
        let d = models::default_policy(&self.model)?;
        let p = &self.policy;
        let policy = make_power_law_policy(
            p.mu_a.unwrap_or(d.mu_a),
            p.mu_power.unwrap_or(d.mu_power),
            p.rho.unwrap_or(d.rho),
        )
        .context("policy")?;
        Ok(match p.delta_star_override {
            Some(d) => policy.with_delta_star_override(d).context("policy")?,
            None => policy,
        })
    }

    /// Fills every defaulted field so the serialized form is complete.
    fn resolve(mut self) -> Result<Self> {
        let d = models::default_policy(&self.model)?;
        self.policy.mu_a.get_or_insert(d.mu_a);
        self.policy.mu_power.get_or_insert(d.mu_power);
        self.policy.rho.get_or_insert(d.rho);
        self.model.params = models::resolved_params(&self.model)?;
        self.model.initial = Some(models::initial_value(&self.model)?);
        self.tau = Some(self.tau());
        self.horizon = Some(self.horizon());
        self.m_ref = Some(self.m_ref());
        self.lattice_resolution = Some(self.lattice_resolution());
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        self.build_model()?;
        self.build_policy()?;
        if self.m_list.is_empty() {
            bail!("invalid `m_list`: must not be empty");
        }
        if let Some(m) = self.m_list.iter().find(|m| **m == 0) {
            bail!("invalid `m_list` entry {m}: must be >= 1");
        }
        if self.n_paths < 2 {
            bail!("invalid `n_paths` = {}: must lie in [2, inf)", self.n_paths);
        }
        if let Some(q) = self.q_list.iter().find(|q| !(**q >= 1.0 && q.is_finite())) {
            bail!("invalid `q_list` entry {q}: must lie in [1, inf)");
        }
        if self.q_list.is_empty() {
            bail!("invalid `q_list`: must not be empty");
        }
        let m_ref = self.m_ref();
        for &m in &self.m_list {
            if !m_ref.is_multiple_of(m) {
                bail!("invalid `m_ref` = {m_ref}: must be a multiple of every M in `m_list` (M = {m} does not divide it)");
            }
        }
        let res = self.lattice_resolution();
        for &m in &self.m_list {
            if res == 0 || !res.is_multiple_of(m) {
                bail!("invalid `lattice_resolution` = {res}: must be a multiple of every M in `m_list` (M = {m} does not divide it)");
            }
        }
        let p_min = if self.command == Command::Gap { 2.0 } else { 1.0 };
        if !(self.p >= p_min && self.p.is_finite()) {
            bail!("invalid `p` = {}: must lie in [{p_min}, inf)", self.p);
        }
        let c = &self.check;
        if !(c.box_radius > 0.0 && c.box_radius.is_finite()) {
            bail!("invalid `check.box_radius` = {}: must lie in (0, inf)", c.box_radius);
        }
        if c.n_samples == 0 {
            bail!("invalid `check.n_samples` = 0: must lie in [1, inf)");
        }
        Ok(())
    }
}

/// Parses, defaults and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_overrides(text, &[])
}

/// As [`parse_config`], with `key=value` overrides applied first. Keys are
/// dotted paths (`policy.rho`); values are JSON, or bare strings.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let config: RunConfig = if overrides.is_empty() {
        serde_json::from_str(text).map_err(explain)?
    } else {
        let mut doc: Value = serde_json::from_str(text).map_err(explain)?;
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        serde_json::from_value(doc).map_err(explain)?
    };
    let config = config.resolve()?;
    config.validate()?;
    Ok(config)
}

fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!("invalid override `{item}`: expected key=value");
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            bail!("invalid override key `{key}`");
        }
        let Value::Object(map) = node else {
            bail!("invalid override key `{key}`: `{}` is not an object", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Adds a spelling suggestion to serde's unknown-field errors.
fn explain(err: serde_json::Error) -> anyhow::Error {
    let msg = err.to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some((field, tail)) = rest.split_once('`') {
            let expected: Vec<&str> = tail.split('`').skip(1).step_by(2).collect();
            if let Some(best) = suggest(field, &expected) {
                return anyhow::anyhow!("{msg} (did you mean `{best}`?)");
            }
        }
    }
    anyhow::anyhow!("{msg}")
}

/// Closest candidate by edit distance, if reasonably close.
pub(crate) fn suggest<'a>(word: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (strsim::damerau_levenshtein(word, c), *c))
        .filter(|(d, c)| *d <= 2.max(c.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}
