//! Built-in models addressable from a config file.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Result};

use sdde_core::model::{
    make_example_36, make_example_55, Example36Params, Example55Params, SddeModel,
};

use crate::config::{suggest, ModelConfig};

struct Entry {
    id: &'static str,
    params: &'static [(&'static str, f64)],
    initial: f64,
}

const A_NAMES: [&str; 5] = ["a1", "a2", "a3", "a4", "a5"];

const REGISTRY: &[Entry] = &[
    Entry {
        id: "example36",
        params: &[("a1", 1.0), ("a2", 1.0), ("a3", 1.0), ("a4", 0.5), ("a5", 0.5)],
        initial: 1.0,
    },
    Entry {
        id: "example55",
        params: &[("a1", 0.0), ("a2", 0.0), ("a3", 1.0), ("a4", 0.0), ("a5", 0.5)],
        initial: 1.0,
    },
    Entry {
        id: "brownian",
        params: &[("sigma", 1.0)],
        initial: 0.0,
    },
    Entry {
        id: "delay_drift",
        params: &[("c", 2.0), ("sigma", 0.5)],
        initial: 1.0,
    },
    Entry {
        id: "cubic",
        params: &[],
        initial: 3.0,
    },
];

/// Policy used when the config leaves a field out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefaultPolicy {
    pub mu_a: f64,
    pub mu_power: f64,
    pub rho: f64,
}

pub fn ids() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.id).collect()
}

fn entry(id: &str) -> Result<&'static Entry> {
    REGISTRY.iter().find(|e| e.id == id).ok_or_else(|| {
        let all = ids();
        match suggest(id, &all) {
            Some(s) => anyhow!("unknown model `{id}` (did you mean `{s}`?)"),
            None => anyhow!("unknown model `{id}`, expected one of {}", all.join(", ")),
        }
    })
}

/// Declared parameters with defaults filled in.
pub fn resolved_params(cfg: &ModelConfig) -> Result<BTreeMap<String, f64>> {
    let e = entry(&cfg.id)?;
    let names: Vec<&str> = e.params.iter().map(|p| p.0).collect();
    for key in cfg.params.keys() {
        if !names.contains(&key.as_str()) {
            let hint = match suggest(key, &names) {
                Some(s) => format!(" (did you mean `{s}`?)"),
                None if names.is_empty() => " (this model takes none)".into(),
                None => format!(", expected one of {}", names.join(", ")),
            };
            bail!("unknown parameter `{key}` for model `{}`{hint}", e.id);
        }
    }
    Ok(e.params
        .iter()
        .map(|(k, v)| (k.to_string(), cfg.params.get(*k).copied().unwrap_or(*v)))
        .collect())
}

pub fn initial_value(cfg: &ModelConfig) -> Result<f64> {
    Ok(cfg.initial.unwrap_or(entry(&cfg.id)?.initial))
}

fn a_params(params: &BTreeMap<String, f64>) -> [f64; 5] {
    A_NAMES.map(|k| params[k])
}

pub fn build(cfg: &ModelConfig) -> Result<SddeModel> {
    let params = resolved_params(cfg)?;
    let model = match cfg.id.as_str() {
        "example36" => make_example_36(&Example36Params::new(a_params(&params))?)?,
        "example55" => make_example_55(&Example55Params::new(a_params(&params))?)?,
        "brownian" => {
            let sigma = params["sigma"];
            SddeModel::scalar("brownian", 1.0, |_, _| 0.0, move |_, _| sigma)?
        }
        "delay_drift" => {
            let (c, sigma) = (params["c"], params["sigma"]);
            SddeModel::scalar("delay_drift", 1.0, move |_, y| c * y, move |_, _| sigma)?
        }
        "cubic" => SddeModel::scalar("cubic", 1.0, |x, _| -x * x * x, |_, _| 0.0)?,
        other => bail!("unknown model `{other}`"),
    };
    Ok(model.with_constant_initial(initial_value(cfg)?)?)
}

pub fn default_policy(cfg: &ModelConfig) -> Result<DefaultPolicy> {
    let params = resolved_params(cfg)?;
    let cubic = |mu_a, rho| DefaultPolicy {
        mu_a,
        mu_power: 3.0,
        rho,
    };
    let linear = |mu_a: f64| DefaultPolicy {
        mu_a: mu_a.max(f64::MIN_POSITIVE),
        mu_power: 1.0,
        rho: 0.25,
    };
    Ok(match cfg.id.as_str() {
        "example36" => cubic(Example36Params::new(a_params(&params))?.mu_constant(), 0.25),
        "example55" => cubic(Example55Params::new(a_params(&params))?.mu_constant(), 0.05),
        "brownian" => linear(params["sigma"].abs()),
        "delay_drift" => linear(params["c"].abs().max(params["sigma"].abs())),
        "cubic" => cubic(1.0, 0.25),
        other => bail!("unknown model `{other}`"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(id: &str, params: &[(&str, f64)]) -> ModelConfig {
        ModelConfig {
            id: id.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            initial: None,
        }
    }

    #[test]
    fn every_entry_builds() {
        for id in ids() {
            let m = build(&cfg(id, &[])).unwrap();
            assert_eq!(m.id(), id);
            assert!(default_policy(&cfg(id, &[])).is_ok());
        }
    }

    #[test]
    fn params_override_defaults() {
        let m = build(&cfg("delay_drift", &[("c", 3.0)])).unwrap();
        assert_eq!(m.drift(&[0.0], &[2.0]), vec![6.0]);
        assert_eq!(m.diffusion(&[0.0], &[2.0]), vec![0.5]);
        assert_eq!(default_policy(&cfg("delay_drift", &[("c", 3.0)])).unwrap().mu_a, 3.0);
    }

    #[test]
    fn example_params_validated() {
        assert!(build(&cfg("example36", &[("a3", 0.1)])).is_err());
        assert!(build(&cfg("cubic", &[("a", 1.0)])).is_err());
    }
}
