use std::path::{Path, PathBuf};

use kalnat::equivalence::{DiscreteComparison, DISCRETE_TOL};
use kalnat::natgrad;
use kalnat::numerics::inverse_psd;
use kalnat::prelude::*;
use nalgebra::DVector;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::scenario_io::{read_scenario, scenario_table};
use crate::table::{columns, write_file, Summary, Table};

/// Default tolerance of a continuous comparison at the finest step.
pub const CONTINUOUS_TOL: f64 = 1e-6;
/// Minimum convergence order of a continuous comparison.
pub const CONTINUOUS_MIN_ORDER: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Ekf,
    Natgrad,
    Bucy,
    Cngd,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Ekf => "ekf",
            RunMode::Natgrad => "natgrad",
            RunMode::Bucy => "bucy",
            RunMode::Cngd => "cngd",
        }
    }

    fn short(self) -> &'static str {
        match self {
            RunMode::Natgrad => "ngd",
            other => other.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareMode {
    Discrete,
    Continuous,
}

/// What a successful command reports back; `Fail` maps to exit code 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

fn out_dir(config: &RunConfig, flag: Option<&Path>) -> CliResult<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| config.out.clone())
        .ok_or_else(|| CliError::config("field `out`: no output directory (set `out` or pass --out)"))?;
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn discrete_model(config: &RunConfig, mode: &str) -> CliResult<DynamicalModel> {
    match builtin(&config.scenario).map_err(|e| CliError::config(format!("field `scenario`: {e}")))? {
        Builtin::Discrete(model) => Ok(model),
        Builtin::Continuous(_) => Err(CliError::config(format!(
            "field `scenario`: mode `{mode}` needs a discrete scenario, `{}` is continuous",
            config.scenario
        ))),
    }
}

fn continuous_model(config: &RunConfig, mode: &str) -> CliResult<ContinuousModel> {
    match builtin(&config.scenario).map_err(|e| CliError::config(format!("field `scenario`: {e}")))? {
        Builtin::Continuous(model) => Ok(model),
        Builtin::Discrete(_) => Err(CliError::config(format!(
            "field `scenario`: mode `{mode}` needs a continuous scenario, `{}` is discrete",
            config.scenario
        ))),
    }
}

fn build_scenario(config: &RunConfig, mode: &str) -> CliResult<Scenario> {
    let mut model = discrete_model(config, mode)?;
    if let Some(s) = &config.true_s0 {
        if s.len() != model.dim_state() {
            return Err(CliError::config(format!(
                "field `true_s0`: {} values for a state of dimension {}",
                s.len(),
                model.dim_state()
            )));
        }
        model = model.with_initial_state(DVector::from_row_slice(s));
    }
    let family = config.family(model.dim_obs())?;
    if let Some(path) = &config.observations {
        return read_scenario(path, model, family, config.seed);
    }
    generate_scenario(&model, &family, config.horizon, config.seed).map_err(|e| match e {
        kalnat::Error::Dimension(msg) => CliError::config(format!("field `family`: {msg}")),
        other => other.into(),
    })
}

/// Columns shared by every discrete trace: the truth and the observation.
fn truth_columns(scenario: &Scenario) -> Vec<String> {
    let n = scenario.model.dim_state();
    ["t".to_string()]
        .into_iter()
        .chain(columns("s_true", n))
        .chain(["observed".to_string()])
        .chain(columns("y", scenario.family.obs_dim()))
        .collect()
}

fn truth_values(scenario: &Scenario, t: usize) -> Vec<f64> {
    let mut row: Vec<f64> = scenario.true_states[t].iter().copied().collect();
    if t == 0 {
        row.push(0.0);
        row.extend(std::iter::repeat_n(0.0, scenario.family.obs_dim()));
    } else {
        row.push(1.0);
        row.extend(scenario.observation(t).iter());
    }
    row
}

fn diagonal(m: &SymMatrix) -> Vec<f64> {
    m.diagonal().iter().copied().collect()
}

/// `run`: one filter, written to `trace.csv` and `summary.txt`.
pub fn cmd_run(config: &RunConfig, mode: RunMode, out: Option<&Path>) -> CliResult<Verdict> {
    match mode {
        RunMode::Ekf | RunMode::Natgrad => run_discrete(config, mode, out),
        RunMode::Bucy | RunMode::Cngd => run_continuous(config, mode, out),
    }
}

fn run_discrete(config: &RunConfig, mode: RunMode, out: Option<&Path>) -> CliResult<Verdict> {
    let scenario = build_scenario(config, mode.name())?;
    let horizon = scenario.horizon();
    let n = scenario.model.dim_state();
    let s0 = config.initial_estimate(&DVector::zeros(n))?;
    let p0 = config.initial_cov(n)?;
    let alpha = config.alpha_schedule(horizon)?;
    let dir = out_dir(config, out)?;

    let short = mode.short();
    let mut header = truth_columns(&scenario);
    header.extend(columns(&format!("s_{short}"), n));
    header.extend(columns(&format!("var_{short}"), n));
    if mode == RunMode::Natgrad {
        header.push("eta".into());
    }
    let mut table = Table::new(header);
    let mut summary = Summary::default();
    summary
        .line("command", "run")
        .line("mode", mode.name())
        .line("scenario", &config.scenario)
        .line("T", horizon)
        .line("seed", config.seed);

    let (last_state, last_cov) = match mode {
        RunMode::Ekf => {
            let trace = kalnat::ekf::run(&scenario, &EkfConfig::fading(alpha), s0, p0)?;
            for t in 0..=horizon {
                let b = trace.posterior(t);
                let mut row = truth_values(&scenario, t);
                row.extend(b.mean.iter());
                row.extend(diagonal(&b.cov));
                table.push(Some(t), &row)?;
            }
            (trace.last().mean.clone(), trace.last().cov.clone())
        }
        _ => {
            let hyper = map_alpha_to_eta(&alpha, config.eta0, horizon)?;
            let grad_config = NatGradConfig::new(hyper.eta_schedule(), hyper.gamma_schedule())
                .with_fisher_mode(config.fisher_mode);
            let j0 = inverse_psd(&p0)?.scale(config.eta0);
            let trace = natgrad::run(&scenario, &grad_config, s0, j0)?;
            let mut last_cov = None;
            for t in 0..=horizon {
                let state = trace.state(t);
                let cov = inverse_psd(&state.metric)?.scale(hyper.eta[t]);
                let mut row = truth_values(&scenario, t);
                row.extend(state.chart_value.iter());
                row.extend(diagonal(&cov));
                row.push(hyper.eta[t]);
                table.push(Some(t), &row)?;
                last_cov = Some(cov);
            }
            summary.line("fisher_mode", fisher_name(config.fisher_mode));
            (trace.last().chart_value.clone(), last_cov.expect("at least the prior row"))
        }
    };
    summary
        .vector("final_state", last_state.as_slice())
        .vector("final_cov", last_cov.as_matrix().as_slice());

    table.write(&dir.join("trace.csv"))?;
    scenario_table(&scenario)?.write(&dir.join("scenario.csv"))?;
    write_file(&dir.join("summary.txt"), summary.as_str())?;
    Ok(Verdict::Pass)
}

fn run_continuous(config: &RunConfig, mode: RunMode, out: Option<&Path>) -> CliResult<Verdict> {
    let model = continuous_model(config, mode.name())?;
    let n = model.dim_state();
    let m = model.dim_obs();
    let s0 = config.initial_estimate(model.initial_state())?;
    let p0 = config.initial_cov(n)?;
    let cfg = IntegratorConfig::new(config.dt, config.time_horizon, config.alpha_time_schedule()?);
    cfg.steps().map_err(|e| CliError::config(format!("field `dt`: {e}")))?;
    let dir = out_dir(config, out)?;

    let init = match mode {
        RunMode::Bucy => InitialCondition::Bucy { s0, p0 },
        _ => InitialCondition::Cngd { s0, j0: inverse_psd(&p0)?.scale(config.eta0), eta0: config.eta0 },
    };
    let trace = integrate(&model, &init, &cfg)?;

    let short = mode.short();
    let mut header: Vec<String> = ["t".to_string()].into_iter().chain(columns("y", m)).collect();
    header.extend(columns(&format!("s_{short}"), n));
    header.extend(columns(&format!("var_{short}"), n));
    if mode == RunMode::Cngd {
        header.push("eta".into());
    }
    let mut table = Table::new(header);
    for sample in &trace.samples {
        let mut row = vec![sample.t];
        row.extend(model.obs(sample.t).iter());
        row.extend(sample.s.iter());
        row.extend(diagonal(&sample.covariance()?));
        row.extend(sample.eta);
        table.push(None, &row)?;
    }
    let last = trace.samples.last().expect("integration yields at least one sample");
    let mut summary = Summary::default();
    summary
        .line("command", "run")
        .line("mode", mode.name())
        .line("scenario", &config.scenario)
        .number("horizon", config.time_horizon)
        .number("dt", config.dt)
        .line("steps", trace.samples.len() - 1)
        .vector("final_state", last.s.as_slice())
        .vector("final_cov", last.covariance()?.as_matrix().as_slice());
    table.write(&dir.join("trace.csv"))?;
    write_file(&dir.join("summary.txt"), summary.as_str())?;
    Ok(Verdict::Pass)
}

/// `compare`: both sides of the equivalence, a deviation CSV and a summary.
pub fn cmd_compare(
    config: &RunConfig,
    mode: CompareMode,
    out: Option<&Path>,
    tol: Option<f64>,
    mutate: Option<Mutation>,
) -> CliResult<Verdict> {
    match mode {
        CompareMode::Discrete => compare_discrete(config, out, tol, mutate),
        CompareMode::Continuous => {
            if mutate.is_some_and(|m| m != Mutation::None) || config.mutate != Mutation::None {
                return Err(CliError::config("field `mutate`: mutations only apply to discrete comparisons"));
            }
            compare_continuous(config, out, tol)
        }
    }
}

fn deviation_table(scenario: &Scenario, cmp: &DiscreteComparison) -> CliResult<Table> {
    let n = scenario.model.dim_state();
    let mut header = truth_columns(scenario);
    header.extend(columns("s_ekf", n));
    header.extend(columns("s_ngd", n));
    header.extend(["state_dev".to_string(), "metric_dev".to_string()]);
    let mut table = Table::new(header);
    for t in 0..=scenario.horizon() {
        let mut row = truth_values(scenario, t);
        row.extend(cmp.filter.posterior(t).mean.iter());
        row.extend(cmp.gradient.state(t).chart_value.iter());
        row.push(cmp.report.state_dev[t]);
        row.push(cmp.report.metric_dev[t]);
        table.push(Some(t), &row)?;
    }
    Ok(table)
}

fn compare_discrete(config: &RunConfig, out: Option<&Path>, tol: Option<f64>, mutate: Option<Mutation>) -> CliResult<Verdict> {
    let scenario = build_scenario(config, "discrete")?;
    let n = scenario.model.dim_state();
    let s0 = config.initial_estimate(&DVector::zeros(n))?;
    let p0 = config.initial_cov(n)?;
    let mut check = DiscreteCheck::new(config.alpha_schedule(scenario.horizon())?);
    check.eta0 = config.eta0;
    check.tol = tol.or(config.tol).unwrap_or(DISCRETE_TOL);
    check.mutation = mutate.unwrap_or(config.mutate);
    let dir = out_dir(config, out)?;

    let cmp = check_discrete(&scenario, &s0, &p0, &check)?;
    deviation_table(&scenario, &cmp)?.write(&dir.join("deviations.csv"))?;
    scenario_table(&scenario)?.write(&dir.join("scenario.csv"))?;

    let report = &cmp.report;
    let mut summary = Summary::default();
    summary
        .line("command", "compare")
        .line("mode", "discrete")
        .line("scenario", &config.scenario)
        .line("T", scenario.horizon())
        .line("seed", config.seed)
        .line("mutate", mutation_name(check.mutation))
        .line("fisher_mode", "exact")
        .number("eta0", check.eta0)
        .number("tol", check.tol)
        .number("max_state_dev", report.max_state_dev)
        .number("max_metric_dev", report.max_metric_dev)
        .line("result", if report.passed { "pass" } else { "fail" });
    write_file(&dir.join("summary.txt"), summary.as_str())?;
    Ok(if report.passed { Verdict::Pass } else { Verdict::Fail })
}

fn compare_continuous(config: &RunConfig, out: Option<&Path>, tol: Option<f64>) -> CliResult<Verdict> {
    let model = continuous_model(config, "continuous")?;
    let n = model.dim_state();
    let s0 = config.initial_estimate(model.initial_state())?;
    let p0 = config.initial_cov(n)?;
    let dts = config.dt_list.clone().unwrap_or_else(|| vec![config.dt]);
    for &dt in &dts {
        IntegratorConfig::new(dt, config.time_horizon, TimeSchedule::Constant(0.0))
            .steps()
            .map_err(|e| CliError::config(format!("field `dt_list`: {e}")))?;
    }
    let check = ContinuousCheck {
        alpha: config.alpha_time_schedule()?,
        eta0: config.eta0,
        horizon: config.time_horizon,
        dts,
        tol: tol.or(config.tol).unwrap_or(CONTINUOUS_TOL),
        min_order: CONTINUOUS_MIN_ORDER,
    };
    let dir = out_dir(config, out)?;
    let cmp = check_continuous(&model, &s0, &p0, &check)?;

    let mut header = vec!["dt".to_string(), "t".to_string()];
    header.extend(columns("s_bucy", n));
    header.extend(columns("s_cngd", n));
    header.extend(["state_dev".to_string(), "metric_dev".to_string()]);
    let mut table = Table::new(header);
    let mut summary = Summary::default();
    summary
        .line("command", "compare")
        .line("mode", "continuous")
        .line("scenario", &config.scenario)
        .number("horizon", config.time_horizon)
        .number("eta0", check.eta0)
        .number("tol", check.tol)
        .number("min_order", check.min_order);
    for row in &cmp.rows {
        let r = &row.report;
        for (k, (b, c)) in row.bucy.samples.iter().zip(&row.cngd.samples).enumerate() {
            let mut values = vec![row.dt, b.t];
            values.extend(b.s.iter());
            values.extend(c.s.iter());
            values.push(r.state_dev[k]);
            values.push(r.metric_dev[k]);
            table.push(None, &values)?;
        }
        summary.raw(&format!(
            "row dt = {}, max_state_dev = {}, max_metric_dev = {}, result = {}",
            crate::table::number(row.dt),
            crate::table::number(r.max_state_dev),
            crate::table::number(r.max_metric_dev),
            if r.passed { "pass" } else { "fail" }
        ));
    }
    let finest = &cmp.finest().report;
    summary
        .number("max_state_dev", finest.max_state_dev)
        .number("max_metric_dev", finest.max_metric_dev)
        .line("order", if cmp.order.is_nan() { "n/a".to_string() } else { crate::table::number(cmp.order) })
        .line("result", if cmp.passed { "pass" } else { "fail" });
    table.write(&dir.join("deviations.csv"))?;
    write_file(&dir.join("summary.txt"), summary.as_str())?;
    Ok(if cmp.passed { Verdict::Pass } else { Verdict::Fail })
}

fn fisher_name(mode: FisherMode) -> String {
    match mode {
        FisherMode::Exact => "exact".into(),
        FisherMode::OuterProduct => "outer-product".into(),
        FisherMode::MonteCarlo(n) => format!("monte-carlo({n})"),
    }
}

fn mutation_name(m: Mutation) -> String {
    match m {
        Mutation::None => "none".into(),
        Mutation::DropFadingFactor => "drop_fading_factor".into(),
        Mutation::HalfGamma => "half_gamma".into(),
        Mutation::SkipTransport => "skip_transport".into(),
        Mutation::PerturbEta { step, delta } => format!("perturb_eta(step {step}, delta {delta})"),
    }
}

/// `list`: built-in scenario names, sorted.
pub fn cmd_list() -> String {
    let mut names = BUILTIN_NAMES.to_vec();
    names.sort_unstable();
    let mut out = names.join("\n");
    out.push('\n');
    out
}
