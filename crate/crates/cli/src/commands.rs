//! Subcommand implementations and artifact writers.
//!
//! Every command that produces artifacts writes them under the resolved
//! output directory: a `manifest.txt` recording how to re-run (its
//! timestamp line is the only non-deterministic byte in any artifact),
//! CSV tables, and a key-value `summary.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use deepinfer::causal::{
    ate, decomposition, profit, profit_diff, tot, EstimateReport, NuisanceEstimates,
    NuisanceFn, Propensity,
};
use deepinfer::data::{load_csv, LoadedData};
use deepinfer::losses::{mean_from_f, validate_outcomes, LossKind};
use deepinfer::network::{advise_architecture, NetworkState};
use deepinfer::policy::{evaluate_grid, select_optimal, PolicyCurve, ThresholdPolicyClass};
use deepinfer::simulation::{
    run_placebo, run_study, McReport, NuisanceStrategy, PlaceboConfig, PlaceboSource,
    PropensityDesign, PropensityStrategy, StudyConfig,
};
use deepinfer::training::{fit, fit_joint, fit_propensity, fit_regressions_by_arm, FitReport};
use deepinfer::Error;

use crate::config::{PolicySection, Settings};
use crate::CliError;

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn load_data(settings: &Settings) -> Result<LoadedData, CliError> {
    let section = settings.data_section()?;
    let roles = Settings::column_roles(section);
    let loaded = load_csv(&section.path, &roles)?;
    println!(
        "loaded {} rows from {}: outcome '{}', treatment '{}', {} covariates",
        loaded.dataset.n(),
        section.path.display(),
        section.outcome,
        section.treatment,
        loaded.dataset.covariate_dim()
    );
    Ok(loaded)
}

/// Creates the output directory and writes the run manifest. The
/// `timestamp_unix` line is the only part of any artifact that varies
/// between identical runs.
fn prepare_out(settings: &Settings) -> Result<PathBuf, CliError> {
    let out = settings.out.clone();
    fs::create_dir_all(&out).map_err(Error::from)?;
    let mut s = String::new();
    let _ = writeln!(s, "tool {} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "library deepinfer {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "command {}", settings.command);
    match (&settings.config_path, &settings.config_sha256) {
        (Some(path), Some(hash)) => {
            let _ = writeln!(s, "config {}", path.display());
            let _ = writeln!(s, "config_sha256 {}", hash);
        }
        _ => {
            let _ = writeln!(s, "config (none)");
            let _ = writeln!(s, "config_sha256 -");
        }
    }
    let _ = writeln!(s, "seed {}", settings.seed);
    let _ = writeln!(s, "randomized_treatment {}", settings.randomized);
    let _ = writeln!(s, "clip_eps {}", settings.clip);
    let _ = writeln!(s, "margin {}", settings.margin);
    let _ = writeln!(s, "cost {}", settings.cost);
    let _ = writeln!(s, "level {}", settings.level);
    if let Some(reps) = settings.reps_flag {
        let _ = writeln!(s, "reps_flag {}", reps);
    }
    let stamp =
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let _ = writeln!(s, "timestamp_unix {}", stamp);
    fs::write(out.join("manifest.txt"), s).map_err(Error::from)?;
    Ok(out)
}

fn write_report_table(out: &Path, reports: &[&EstimateReport]) -> Result<(), CliError> {
    let mut s = String::from("estimand,estimate,std_error,ci_lower,ci_upper,n,level\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            r.estimand, r.estimate, r.std_error, r.ci_lower, r.ci_upper, r.n, r.level
        );
    }
    fs::write(out.join("report.csv"), s).map_err(Error::from)?;
    Ok(())
}

fn write_estimate_summary(out: &Path, reports: &[&EstimateReport]) -> Result<(), CliError> {
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(s, "{}_estimate {:.16e}", r.estimand, r.estimate);
        let _ = writeln!(s, "{}_std_error {:.16e}", r.estimand, r.std_error);
        let _ = writeln!(s, "{}_ci_lower {:.16e}", r.estimand, r.ci_lower);
        let _ = writeln!(s, "{}_ci_upper {:.16e}", r.estimand, r.ci_upper);
        let _ = writeln!(s, "{}_n {}", r.estimand, r.n);
        let _ = writeln!(s, "{}_level {}", r.estimand, r.level);
    }
    fs::write(out.join("summary.txt"), s).map_err(Error::from)?;
    Ok(())
}

fn echo_report(r: &EstimateReport) {
    println!(
        "{}: {:.6} (se {:.6}, {:.0}% CI [{:.6}, {:.6}], n = {})",
        r.estimand,
        r.estimate,
        r.std_error,
        r.level * 100.0,
        r.ci_lower,
        r.ci_upper,
        r.n
    );
}

fn finish_estimates(
    settings: &Settings,
    reports: &[&EstimateReport],
) -> Result<(), CliError> {
    let out = prepare_out(settings)?;
    write_report_table(&out, reports)?;
    write_estimate_summary(&out, reports)?;
    for r in reports {
        echo_report(r);
    }
    println!("artifacts written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Nuisance sources
// ---------------------------------------------------------------------------

fn load_network(path: &Path, input_dim: usize, output_dim: usize) -> Result<NetworkState, CliError> {
    let net = NetworkState::load(path)?;
    if net.spec().input_dim() != input_dim || net.spec().output_dim() != output_dim {
        return Err(CliError::Lib(Error::Dimension(format!(
            "{} is a {}->{} network but this run needs {}->{}",
            path.display(),
            net.spec().input_dim(),
            net.spec().output_dim(),
            input_dim,
            output_dim
        ))));
    }
    Ok(net)
}

/// Wraps a loaded one-output network as a mean function under `kind`.
fn mean_closure(net: NetworkState, kind: LossKind) -> NuisanceFn {
    let net = Arc::new(net);
    Arc::new(move |x: &[f64]| {
        let f = net.forward_eval(x).expect("nuisance prediction failed");
        mean_from_f(&kind, &f).expect("nuisance prediction failed")[0]
    })
}

/// Outcome regressions from model files when configured, otherwise an
/// in-run fit.
fn outcome_nuisances(
    settings: &Settings,
    loaded: &LoadedData,
) -> Result<(NuisanceFn, NuisanceFn), CliError> {
    let section = settings.file.nuisance.clone().unwrap_or_default();
    let d = loaded.dataset.covariate_dim();
    if let Some(path) = &section.joint_model {
        let net = Arc::new(load_network(path, d, 2)?);
        let net1 = Arc::clone(&net);
        let mu0: NuisanceFn = Arc::new(move |x: &[f64]| {
            net.forward_eval(x).expect("nuisance prediction failed")[0]
        });
        let mu1: NuisanceFn = Arc::new(move |x: &[f64]| {
            let f = net1.forward_eval(x).expect("nuisance prediction failed");
            f[0] + f[1]
        });
        return Ok((mu0, mu1));
    }
    match (&section.mu0_model, &section.mu1_model) {
        (Some(p0), Some(p1)) => {
            let kind = settings.loss_kind()?;
            if kind.output_dim() != 1 {
                return Err(CliError::Config(
                    "per-arm nuisance models need a scalar loss family".into(),
                ));
            }
            let mu0 = mean_closure(load_network(p0, d, 1)?, kind);
            let mu1 = mean_closure(load_network(p1, d, 1)?, kind);
            Ok((mu0, mu1))
        }
        (None, None) => {
            let kind = settings.loss_kind()?;
            validate_outcomes(&kind, loaded.dataset.outcomes())?;
            match section.fit.as_deref().unwrap_or("joint") {
                "joint" => {
                    let spec = settings.architecture(d, 2)?;
                    let cfg = settings.train_config(settings.seed)?;
                    let model = fit_joint(&loaded.dataset, &spec, &cfg)?;
                    println!(
                        "fit joint outcome model: training loss {:.6}, validation loss {:.6}",
                        model.report().training_loss,
                        model.report().validation_loss
                    );
                    Ok((model.mu0_fn(), model.mu1_fn()))
                }
                "per-arm" => {
                    let spec = settings.architecture(d, kind.output_dim())?;
                    let cfg = settings.train_config(settings.seed)?;
                    let arms = fit_regressions_by_arm(&loaded.dataset, &kind, &spec, &cfg)?;
                    println!(
                        "fit per-arm outcome models: training losses {:.6} / {:.6}",
                        arms.control.report().training_loss,
                        arms.treated.report().training_loss
                    );
                    Ok((arms.control.mean_fn()?, arms.treated.mean_fn()?))
                }
                other => Err(CliError::Config(format!(
                    "unknown nuisance fit '{}', expected joint or per-arm",
                    other
                ))),
            }
        }
        _ => Err(CliError::Config(
            "mu0_model and mu1_model must be configured together".into(),
        )),
    }
}

/// Propensity source, in priority order: the randomized-treatment flag
/// (sample frequency), a known rate, a model file, an in-run fit.
fn propensity_source(
    settings: &Settings,
    loaded: &LoadedData,
) -> Result<Propensity, CliError> {
    let section = settings.file.nuisance.clone().unwrap_or_default();
    let d = loaded.dataset.covariate_dim();
    if settings.randomized {
        return Ok(Propensity::sample_frequency(&loaded.dataset)?);
    }
    if let Some(rate) = section.propensity_rate {
        return Ok(Propensity::Constant(rate));
    }
    if let Some(path) = &section.propensity_model {
        return Ok(Propensity::Function(mean_closure(
            load_network(path, d, 1)?,
            LossKind::Logistic,
        )));
    }
    if section.fit_propensity.unwrap_or(false) {
        let spec = settings.architecture(d, 1)?;
        // Decoupled from the outcome fit's stream by construction.
        let cfg = settings.train_config(settings.seed.wrapping_add(1))?;
        let model = fit_propensity(&loaded.dataset, &spec, &cfg)?;
        println!(
            "fit propensity model: training loss {:.6}, validation loss {:.6}",
            model.report().training_loss,
            model.report().validation_loss
        );
        return Ok(Propensity::Function(model.mean_fn()?));
    }
    Err(CliError::Config(
        "no propensity source configured: pass --randomized or set \
         propensity_rate, propensity_model, or fit_propensity in [nuisance]"
            .into(),
    ))
}

fn build_nuisances(
    settings: &Settings,
    loaded: &LoadedData,
) -> Result<NuisanceEstimates, CliError> {
    let (mu0, mu1) = outcome_nuisances(settings, loaded)?;
    let propensity = propensity_source(settings, loaded)?;
    Ok(NuisanceEstimates::new(mu0, mu1, propensity).with_clip(settings.clip)?)
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

type PolicyRule = Box<dyn Fn(&[f64]) -> bool>;

fn policy_section(settings: &Settings) -> Result<&PolicySection, CliError> {
    settings.file.policy.as_ref().ok_or_else(|| {
        CliError::Config(format!(
            "the {} command needs a [policy] section",
            settings.command
        ))
    })
}

fn check_policy_covariate(section: &PolicySection, d: usize) -> Result<(), CliError> {
    if section.covariate >= d {
        return Err(CliError::Lib(Error::Dimension(format!(
            "policy covariate index {} out of range for {} covariates",
            section.covariate, d
        ))));
    }
    Ok(())
}

fn baseline_rule(section: &PolicySection) -> Result<PolicyRule, CliError> {
    match section.baseline.as_deref() {
        None | Some("none") => Ok(Box::new(|_: &[f64]| false)),
        Some("all") => Ok(Box::new(|_: &[f64]| true)),
        Some(other) => Err(CliError::Config(format!(
            "unknown baseline '{}', expected none or all",
            other
        ))),
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// `train`: fit the configured networks and save their model files.
pub fn train(settings: &Settings) -> Result<(), CliError> {
    let loaded = load_data(settings)?;
    let d = loaded.dataset.covariate_dim();
    let target = settings
        .file
        .train
        .as_ref()
        .and_then(|t| t.target.clone())
        .unwrap_or_else(|| "joint".into());
    let cfg = settings.train_config(settings.seed)?;
    let out = prepare_out(settings)?;

    let mut summary = format!("target {}\n", target);
    let mut append_fit = |name: &str, report: &FitReport, file: &str| {
        let _ = writeln!(summary, "{}_training_loss {:.16e}", name, report.training_loss);
        let _ = writeln!(summary, "{}_validation_loss {:.16e}", name, report.validation_loss);
        let _ = writeln!(summary, "{}_epochs_run {}", name, report.epochs_run);
        let _ = writeln!(summary, "{}_model {}", name, file);
        println!(
            "fit {}: training loss {:.6}, validation loss {:.6} -> {}",
            name, report.training_loss, report.validation_loss, file
        );
    };

    match target.as_str() {
        "joint" => {
            validate_outcomes(&LossKind::LeastSquares, loaded.dataset.outcomes())?;
            let spec = settings.architecture(d, 2)?;
            let model = fit_joint(&loaded.dataset, &spec, &cfg)?;
            model.network().save(out.join("model_joint.txt"))?;
            append_fit("joint", model.report(), "model_joint.txt");
        }
        "per-arm" => {
            let kind = settings.loss_kind()?;
            validate_outcomes(&kind, loaded.dataset.outcomes())?;
            let spec = settings.architecture(d, kind.output_dim())?;
            let arms = fit_regressions_by_arm(&loaded.dataset, &kind, &spec, &cfg)?;
            arms.control.network().save(out.join("model_mu0.txt"))?;
            arms.treated.network().save(out.join("model_mu1.txt"))?;
            append_fit("control", arms.control.report(), "model_mu0.txt");
            append_fit("treated", arms.treated.report(), "model_mu1.txt");
        }
        "propensity" => {
            let spec = settings.architecture(d, 1)?;
            let model = fit_propensity(&loaded.dataset, &spec, &cfg)?;
            model.network().save(out.join("model_propensity.txt"))?;
            append_fit("propensity", model.report(), "model_propensity.txt");
        }
        "outcome" => {
            let kind = settings.loss_kind()?;
            let targets = expand_targets(&kind, loaded.dataset.outcomes())?;
            validate_outcomes(&kind, &targets)?;
            let spec = settings.architecture(d, kind.output_dim())?;
            let model = fit(loaded.dataset.covariates(), &targets, &kind, &spec, &cfg)?;
            model.network().save(out.join("model.txt"))?;
            append_fit("outcome", model.report(), "model.txt");
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown train target '{}', expected joint, per-arm, propensity, or outcome",
                other
            )))
        }
    }
    fs::write(out.join("train_summary.txt"), summary).map_err(Error::from)?;
    println!("artifacts written to {}", out.display());
    Ok(())
}

/// Class labels `0..=K` become indicator vectors for the multinomial
/// family; scalar families pass through.
fn expand_targets(kind: &LossKind, outcomes: &[f64]) -> Result<Vec<f64>, CliError> {
    let k = match kind {
        LossKind::Multinomial(k) => *k,
        _ => return Ok(outcomes.to_vec()),
    };
    let mut expanded = vec![0.0; outcomes.len() * k];
    for (i, &y) in outcomes.iter().enumerate() {
        if !(y.is_finite() && y.fract() == 0.0 && y >= 0.0 && y <= k as f64) {
            return Err(CliError::Lib(Error::Data(format!(
                "row {}: multinomial outcome must be a class label in 0..={}, got {}",
                i + 1,
                k,
                y
            ))));
        }
        let label = y as usize;
        if label > 0 {
            expanded[i * k + (label - 1)] = 1.0;
        }
    }
    Ok(expanded)
}

/// `ate`: average treatment effect with a plug-in confidence interval.
pub fn ate_cmd(settings: &Settings) -> Result<(), CliError> {
    let loaded = load_data(settings)?;
    let nuis = build_nuisances(settings, &loaded)?;
    let (report, _) = ate(&loaded.dataset, &nuis, settings.level)?;
    finish_estimates(settings, &[&report])
}

/// `profit`: expected profit of a single-cutoff policy plus its edge over
/// the configured baseline.
pub fn profit_cmd(settings: &Settings) -> Result<(), CliError> {
    let loaded = load_data(settings)?;
    let section = policy_section(settings)?.clone();
    check_policy_covariate(&section, loaded.dataset.covariate_dim())?;
    let threshold = section.threshold.ok_or_else(|| {
        CliError::Config("the profit command needs threshold in [policy]".into())
    })?;
    let nuis = build_nuisances(settings, &loaded)?;
    let cov = section.covariate;
    let rule = move |x: &[f64]| x[cov] > threshold;
    let baseline = baseline_rule(&section)?;
    let (profit_report, _) =
        profit(&loaded.dataset, &nuis, &rule, settings.margin, settings.cost, settings.level)?;
    let (diff_report, _) = profit_diff(
        &loaded.dataset,
        &nuis,
        &rule,
        baseline.as_ref(),
        settings.margin,
        settings.cost,
        settings.level,
    )?;
    finish_estimates(settings, &[&profit_report, &diff_report])
}

/// `tot`: effect of treatment on the treated subpopulation.
pub fn tot_cmd(settings: &Settings) -> Result<(), CliError> {
    let loaded = load_data(settings)?;
    let nuis = build_nuisances(settings, &loaded)?;
    let (report, _) = tot(&loaded.dataset, &nuis, settings.level)?;
    finish_estimates(settings, &[&report])
}

/// `decomp`: split the treated/control outcome gap into covariate and
/// treatment parts.
pub fn decomp_cmd(settings: &Settings) -> Result<(), CliError> {
    let loaded = load_data(settings)?;
    let nuis = build_nuisances(settings, &loaded)?;
    let parts = decomposition(&loaded.dataset, &nuis, settings.level)?;
    finish_estimates(settings, &[&parts.gap, &parts.covariate_part, &parts.outcome_part])
}

/// `policy`: evaluate a cutoff grid and select the most profitable rule.
pub fn policy_cmd(settings: &Settings) -> Result<(), CliError> {
    let loaded = load_data(settings)?;
    let section = policy_section(settings)?.clone();
    check_policy_covariate(&section, loaded.dataset.covariate_dim())?;
    let (start, stop, step) = match (section.grid_start, section.grid_stop, section.grid_step) {
        (Some(a), Some(b), Some(s)) => (a, b, s),
        _ => {
            return Err(CliError::Config(
                "the policy command needs grid_start, grid_stop, and grid_step in [policy]"
                    .into(),
            ))
        }
    };
    let class = ThresholdPolicyClass::even_grid(section.covariate, start, stop, step)?;
    let baseline = baseline_rule(&section)?;
    let nuis = build_nuisances(settings, &loaded)?;
    let curve = evaluate_grid(
        &loaded.dataset,
        &nuis,
        &class,
        baseline.as_ref(),
        settings.margin,
        settings.cost,
        settings.level,
    )?;
    let best = select_optimal(&curve)?;

    let out = prepare_out(settings)?;
    write_policy_curve(&out, &curve)?;
    let mut s = String::new();
    let _ = writeln!(s, "covariate {}", curve.covariate);
    let _ = writeln!(s, "margin {}", curve.margin);
    let _ = writeln!(s, "cost {}", curve.cost);
    let _ = writeln!(s, "grid_points {}", curve.points.len());
    let _ = writeln!(s, "selected_threshold {:.16e}", best.threshold);
    let _ = writeln!(s, "selected_gain {:.16e}", best.report.estimate);
    let _ = writeln!(s, "selected_std_error {:.16e}", best.report.std_error);
    let _ = writeln!(s, "selected_ci_lower {:.16e}", best.report.ci_lower);
    let _ = writeln!(s, "selected_ci_upper {:.16e}", best.report.ci_upper);
    fs::write(out.join("summary.txt"), s).map_err(Error::from)?;
    println!(
        "selected threshold {:.6} with estimated gain {:.6} over {} grid points",
        best.threshold,
        best.report.estimate,
        curve.points.len()
    );
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn write_policy_curve(out: &Path, curve: &PolicyCurve) -> Result<(), CliError> {
    let mut s = String::from("threshold,estimate,std_error,ci_lower,ci_upper,n,level\n");
    for p in &curve.points {
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            p.threshold,
            p.report.estimate,
            p.report.std_error,
            p.report.ci_lower,
            p.report.ci_upper,
            p.report.n,
            p.report.level
        );
    }
    fs::write(out.join("policy_curve.csv"), s).map_err(Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Studies
// ---------------------------------------------------------------------------

fn outcome_strategy(
    settings: &Settings,
    name: Option<&str>,
) -> Result<NuisanceStrategy, CliError> {
    match name.unwrap_or("joint") {
        "oracle" => Ok(NuisanceStrategy::Oracle),
        "joint" => Ok(NuisanceStrategy::TrainedJoint {
            hidden_widths: settings.hidden_widths()?,
            train: settings.train_config(0)?,
        }),
        "per-arm" => Ok(NuisanceStrategy::TrainedPerArm {
            hidden_widths: settings.hidden_widths()?,
            train: settings.train_config(0)?,
        }),
        other => Err(CliError::Config(format!(
            "unknown nuisance strategy '{}', expected oracle, joint, or per-arm",
            other
        ))),
    }
}

fn write_study_artifacts(settings: &Settings, report: &McReport) -> Result<(), CliError> {
    let out = prepare_out(settings)?;
    let mut rows = Vec::new();
    report.write_rows(&mut rows)?;
    fs::write(out.join("reps.csv"), rows).map_err(Error::from)?;
    let mut summary = Vec::new();
    report.write_summary(&mut summary)?;
    fs::write(out.join("summary.txt"), summary).map_err(Error::from)?;
    println!(
        "{} of {} reps succeeded: coverage {:.3}, bias {:.5}, avg interval length {:.4} \
         (true value {:.5})",
        report.records.len(),
        report.attempted(),
        report.coverage(),
        report.bias(),
        report.avg_interval_length(),
        report.true_ate
    );
    println!("artifacts written to {}", out.display());
    Ok(())
}

/// `simulate`: Monte Carlo coverage study on the configured design.
pub fn simulate(settings: &Settings) -> Result<(), CliError> {
    let dgp = settings.dgp()?;
    let section = settings.file.simulate.clone().unwrap_or_default();
    let outcome_nuisance = outcome_strategy(settings, section.nuisance.as_deref())?;
    let propensity_nuisance = match section.propensity.as_deref() {
        Some("oracle") => PropensityStrategy::Oracle,
        Some("frequency") => PropensityStrategy::SampleFrequency,
        Some("trained") => PropensityStrategy::Trained {
            hidden_widths: settings.hidden_widths()?,
            train: settings.train_config(0)?,
        },
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown propensity strategy '{}', expected oracle, frequency, or trained",
                other
            )))
        }
        // Follow the design: the known rate under randomized assignment,
        // a trained model under logistic assignment; --randomized forces
        // the sample frequency.
        None if settings.randomized => PropensityStrategy::SampleFrequency,
        None => match dgp.propensity {
            PropensityDesign::Constant(_) => PropensityStrategy::Oracle,
            PropensityDesign::Logistic => PropensityStrategy::Trained {
                hidden_widths: settings.hidden_widths()?,
                train: settings.train_config(0)?,
            },
        },
    };
    let cfg = StudyConfig {
        dgp,
        reps: settings
            .reps_flag
            .or(section.reps)
            .unwrap_or(500),
        master_seed: settings.seed,
        outcome_nuisance,
        propensity_nuisance,
        level: settings.level,
        clip: settings.clip,
    };
    let report = run_study(&cfg)?;
    write_study_artifacts(settings, &report)
}

/// `placebo`: null-effect study on control rows with a fake treatment.
pub fn placebo(settings: &Settings) -> Result<(), CliError> {
    let section = settings.file.placebo.clone().unwrap_or_default();
    let cfg = PlaceboConfig {
        fraction: section.fraction.unwrap_or(0.5),
        reps: settings.reps_flag.or(section.reps).unwrap_or(500),
        master_seed: settings.seed,
        outcome_nuisance: outcome_strategy(settings, section.nuisance.as_deref())?,
        level: settings.level,
        clip: settings.clip,
    };
    // A [data] section means "reuse this dataset's controls"; otherwise
    // fresh control rows are drawn from the [dgp] design per rep.
    let report = if settings.file.data.is_some() {
        let loaded = load_data(settings)?;
        run_placebo(&PlaceboSource::Data(&loaded.dataset), &cfg)?
    } else {
        let dgp = settings.dgp()?;
        run_placebo(&PlaceboSource::Dgp(&dgp), &cfg)?
    };
    write_study_artifacts(settings, &report)
}

/// `advise`: width/depth suggestion from `key=value` arguments.
pub fn advise(pairs: &[String]) -> Result<(), CliError> {
    let (mut n, mut d, mut beta) = (None, None, None);
    let (mut width_scale, mut depth_scale) = (1.0, 1.0);
    for pair in pairs {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            CliError::Config(format!("expected key=value, got '{}'", pair))
        })?;
        let parse_f64 = || -> Result<f64, CliError> {
            value
                .parse()
                .map_err(|_| CliError::Config(format!("invalid number '{}' for {}", value, key)))
        };
        match key {
            "n" => {
                n = Some(value.parse::<usize>().map_err(|_| {
                    CliError::Config(format!("invalid count '{}' for n", value))
                })?)
            }
            "d" => {
                d = Some(value.parse::<usize>().map_err(|_| {
                    CliError::Config(format!("invalid count '{}' for d", value))
                })?)
            }
            "beta" => beta = Some(parse_f64()?),
            "width_scale" => width_scale = parse_f64()?,
            "depth_scale" => depth_scale = parse_f64()?,
            other => {
                return Err(CliError::Config(format!(
                    "unknown advise key '{}', expected n, d, beta, width_scale, depth_scale",
                    other
                )))
            }
        }
    }
    match (n, d, beta) {
        (Some(n), Some(d), Some(beta)) => {
            let spec = advise_architecture(n, d, beta, width_scale, depth_scale)?;
            println!("H={}", spec.hidden_widths()[0]);
            println!("L={}", spec.hidden_widths().len());
            Ok(())
        }
        _ => Err(CliError::Config("advise needs n=, d=, and beta=".into())),
    }
}
