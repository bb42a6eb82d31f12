//! Command dispatch and artifact writing.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use sdde_core::brownian::generate_lattice;
use sdde_core::conditions::{
    check_khasminskii, check_local_lipschitz, check_model_holder, check_monotonicity,
    check_poly_lipschitz, check_strong_khasminskii, example36, example55, CheckReport,
    HolderSampling, KhasminskiiConstants, MonotonicityConstants, PolyLipschitzConstants,
    Sampling, StrongKhasminskiiConstants,
};
use sdde_core::experiments::{
    estimate_strong_errors, estimate_sup_moment, fit_log_log, fit_rate, gap_study, kendall_tau,
    positivity_diagnostic, ExperimentPlan, RateFit, Scheme,
};
use sdde_core::model::{Example36Params, Example55Params, SddeModel};
use sdde_core::solvers::{simulate, simulate_classical_em, GridSpec};
use sdde_core::truncation::TruncationPolicy;

use crate::config::{Command, RunConfig, SchemeName};

pub const MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    CheckFailed,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    config: &'a RunConfig,
}

pub fn run(config: &RunConfig) -> Result<Status> {
    let model = config.build_model()?;
    let policy = config.build_policy()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let status = match config.command {
        Command::Check => run_check(config, &model, out)?,
        Command::Simulate => run_simulate(config, &model, &policy, out)?,
        Command::Converge => run_converge(config, model, policy, out)?,
        Command::Gap => run_gap(config, &model, &policy, out)?,
        Command::Moments => run_moments(config, &model, &policy, out)?,
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write(out, MANIFEST, &text)?;
    Ok(status)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn a_params(config: &RunConfig) -> [f64; 5] {
    ["a1", "a2", "a3", "a4", "a5"].map(|k| config.model.params[k])
}

fn run_check(config: &RunConfig, model: &SddeModel, out: &Path) -> Result<Status> {
    let c = &config.constants;
    let s = Sampling::new(config.check.box_radius, config.check.n_samples, config.check.seed)?;
    let radius = config.check.box_radius;
    let mut reports: Vec<(&str, CheckReport)> = Vec::new();

    let ex36 = (config.model.id == "example36")
        .then(|| Example36Params::new(a_params(config)))
        .transpose()?;
    let ex55 = (config.model.id == "example55")
        .then(|| Example55Params::new(a_params(config)))
        .transpose()?;

    let khas = match (c.khasminskii, &ex36) {
        (Some(k), _) => Some(KhasminskiiConstants::new(k.k1, k.k2, k.beta)?),
        (None, Some(p)) => Some(example36::khasminskii(p)),
        _ => None,
    };
    if let Some(k) = khas {
        reports.push(("khasminskii", check_khasminskii(model, &k, s)?));
    }

    let strong = match (c.strong_khasminskii, &ex55) {
        (Some(k), Some(p)) => Some(match k.k1 {
            Some(k1) => StrongKhasminskiiConstants::new(k.p_bar, k1)?,
            None => example55::strong_khasminskii(p, k.p_bar)?,
        }),
        (Some(k), None) => {
            let Some(k1) = k.k1 else {
                bail!("`constants.strong_khasminskii.k1` is required for model `{}`", config.model.id);
            };
            Some(StrongKhasminskiiConstants::new(k.p_bar, k1)?)
        }
        (None, Some(p)) => Some(example55::strong_khasminskii(p, 4.0)?),
        (None, None) => None,
    };
    if let Some(k) = strong {
        reports.push(("strong_khasminskii", check_strong_khasminskii(model, &k, s)?));
    }

    let mut mono: Vec<(&str, MonotonicityConstants)> = Vec::new();
    match (c.monotonicity, &ex55) {
        (Some(m), _) => mono.push(("monotonicity", MonotonicityConstants::without_u(m.h, m.alpha)?)),
        (None, Some(p)) => {
            mono.push(("monotonicity", example55::monotonicity(p)));
            mono.push(("strong_monotonicity", example55::strong_monotonicity(p)));
        }
        (None, None) => {}
    }
    for (name, m) in mono {
        reports.push((name, check_monotonicity(model, &m, s)?));
    }

    let poly = match (c.poly_lipschitz, &ex55) {
        (Some(k), _) => Some(PolyLipschitzConstants::new(k.h3, k.r)?),
        (None, Some(p)) => Some(example55::poly_lipschitz(p)),
        _ => None,
    };
    if let Some(k) = poly {
        reports.push(("poly_lipschitz", check_poly_lipschitz(model, &k, s)?));
    }

    let k_r = match (c.local_lipschitz, &ex36, &ex55) {
        (Some(k), _, _) => Some(k.k_r),
        (None, Some(p), _) => Some(example36::local_lipschitz_constant(p, radius)),
        (None, None, Some(p)) => Some(example55::local_lipschitz_constant(p, radius)),
        _ => None,
    };
    if let Some(k_r) = k_r {
        reports.push(("local_lipschitz", check_local_lipschitz(model, k_r, s)?));
    }

    let holder = c
        .holder
        .map(|h| (h.k3, h.gamma))
        .or_else(|| model.holder().map(|h| (h.k3, h.gamma)));
    if let Some((k3, gamma)) = holder {
        let hs = HolderSampling {
            n_pairs: config.check.holder_pairs,
            seed: config.check.seed,
        };
        reports.push(("initial_holder", check_model_holder(model, k3, gamma, hs)?));
    }

    let mut csv = format!("{}\n", CheckReport::CSV_HEADER);
    for (name, r) in &reports {
        csv.push_str(&r.csv_row(name));
        csv.push('\n');
    }
    write(out, "checks.csv", &csv)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.1.passed).map(|r| r.0).collect();
    if failed.is_empty() {
        Ok(Status::Success)
    } else {
        eprintln!("check failed: {}", failed.join(", "));
        Ok(Status::CheckFailed)
    }
}

fn run_simulate(
    config: &RunConfig,
    model: &SddeModel,
    policy: &TruncationPolicy,
    out: &Path,
) -> Result<Status> {
    let res = config.lattice_resolution();
    let lattice = generate_lattice(model, config.horizon(), res, config.master_seed, config.path_index)?;
    write(out, "brownian.csv", &lattice.to_csv())?;
    for &m in &config.m_list {
        let grid = GridSpec::for_model(model, m, config.horizon())?;
        let incs = lattice.coarsen(res / m)?;
        let traj = match config.scheme {
            SchemeName::Truncated => simulate(model, policy, &grid, &incs)?,
            SchemeName::Classical => simulate_classical_em(model, &grid, &incs)?,
        };
        if let Some(d) = traj.divergence() {
            eprintln!("M = {m}: classical EM diverged at step {} (|X| = {:e})", d.step, d.norm);
        }
        write(out, &format!("trajectory_M{m}.csv"), &traj.to_csv())?;
    }
    if config.model.id == "example36" && config.scheme == SchemeName::Truncated {
        let mut csv = String::from("M,delta,n_paths,paths_violating,step_fraction\n");
        for &m in &config.m_list {
            let grid = GridSpec::for_model(model, m, config.horizon())?;
            let r = positivity_diagnostic(model, policy, &grid, config.n_paths, config.master_seed)?;
            csv.push_str(&format!(
                "{m},{},{},{},{}\n",
                grid.delta(),
                r.n_paths,
                r.paths_violating,
                r.step_fraction
            ));
        }
        write(out, "positivity.csv", &csv)?;
    }
    Ok(Status::Success)
}

fn run_converge(
    config: &RunConfig,
    model: SddeModel,
    policy: TruncationPolicy,
    out: &Path,
) -> Result<Status> {
    let plan = ExperimentPlan {
        model,
        policy,
        horizon: config.horizon(),
        m_list: config.m_list.clone(),
        m_ref: config.m_ref(),
        q_list: config.q_list.clone(),
        n_paths: config.n_paths,
        master_seed: config.master_seed,
        scheme: match config.scheme {
            SchemeName::Truncated => Scheme::Truncated,
            SchemeName::Classical => Scheme::Classical,
        },
    };
    let table = estimate_strong_errors(&plan)?;
    let mut qs = config.q_list.clone();
    qs.sort_by(f64::total_cmp);
    qs.dedup();
    let mut reports = Vec::new();
    for q in qs {
        match fit_rate(&table, q) {
            Ok(r) => reports.push(r),
            Err(sdde_core::Error::InsufficientRows(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    write(out, "errors.csv", &table.to_csv(&reports))?;
    Ok(Status::Success)
}

fn sorted_m(config: &RunConfig) -> Vec<usize> {
    let mut ms = config.m_list.clone();
    ms.sort_unstable();
    ms.dedup();
    ms
}

fn run_gap(
    config: &RunConfig,
    model: &SddeModel,
    policy: &TruncationPolicy,
    out: &Path,
) -> Result<Status> {
    let mut summary = String::from("M,delta,p,max_gap_p,std_err,t_max\n");
    let (mut deltas, mut gaps, mut ses) = (Vec::new(), Vec::new(), Vec::new());
    for m in sorted_m(config) {
        let grid = GridSpec::for_model(model, m, config.horizon())?;
        let table = gap_study(
            model,
            policy,
            &grid,
            config.lattice_resolution(),
            config.p,
            config.n_paths,
            config.master_seed,
        )?;
        write(out, &format!("gap_M{m}.csv"), &table.to_csv())?;
        let top = table.max_row();
        summary.push_str(&format!(
            "{m},{},{},{},{},{}\n",
            grid.delta(),
            config.p,
            top.gap_p,
            top.std_err,
            top.t
        ));
        deltas.push(grid.delta());
        gaps.push(top.gap_p);
        ses.push(top.std_err);
    }
    if deltas.len() >= 3 {
        summary.push_str(&fit_comment("max_t E|gap|^p", fit_log_log(&deltas, &gaps, &ses)?));
    }
    write(out, "gap_summary.csv", &summary)?;
    Ok(Status::Success)
}

fn fit_comment(quantity: &str, fit: RateFit) -> String {
    match fit {
        RateFit::Slope {
            slope,
            intercept,
            r_squared,
            ci_halfwidth,
        } => format!(
            "# quantity={quantity} slope={slope} ci={ci_halfwidth} r2={r_squared} intercept={intercept}\n"
        ),
        RateFit::Exact => format!("# quantity={quantity} exact\n"),
    }
}

fn run_moments(
    config: &RunConfig,
    model: &SddeModel,
    policy: &TruncationPolicy,
    out: &Path,
) -> Result<Status> {
    let mut csv = String::from("M,delta,p,sup_moment,std_err,argmax_t\n");
    let mut values = Vec::new();
    for m in sorted_m(config) {
        let grid = GridSpec::for_model(model, m, config.horizon())?;
        let s = estimate_sup_moment(model, policy, &grid, config.p, config.n_paths, config.master_seed)?;
        csv.push_str(&format!(
            "{m},{},{},{},{},{}\n",
            grid.delta(),
            config.p,
            s.value,
            s.std_err,
            s.argmax_time
        ));
        values.push(s.value);
    }
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    csv.push_str(&format!(
        "# max_over_min={} kendall_tau={}\n",
        max / min,
        kendall_tau(&values)
    ));
    write(out, "moments.csv", &csv)?;
    Ok(Status::Success)
}
