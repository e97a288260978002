//! Flat `key = value` run configuration.
//!
//! ```text
//! # linear2d with a little forgetting
//! scenario = linear2d
//! T = 50
//! seed = 3
//! alpha = 0.1
//! alpha[10] = 0.5
//! ```
//!
//! Relative paths (`out`, `observations`) are resolved against the directory
//! holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kalnat::prelude::*;
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, CliResult};

const KEYS: [&str; 19] = [
    "scenario",
    "T",
    "seed",
    "s0",
    "P0",
    "true_s0",
    "alpha",
    "eta0",
    "fisher_mode",
    "family",
    "obs_var",
    "classes",
    "out",
    "tol",
    "mutate",
    "dt",
    "dt_list",
    "horizon",
    "observations",
];

#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSpec {
    Constant(f64),
    Ramp(f64, f64),
    /// Values for `t = 1, 2, ..`
    List(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovSpec {
    Scale(f64),
    /// Row-major `n × n` entries.
    Full(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilySpec {
    Gaussian,
    Bernoulli,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub horizon: usize,
    pub seed: u64,
    pub s0: Option<Vec<f64>>,
    pub p0: CovSpec,
    pub true_s0: Option<Vec<f64>>,
    pub alpha: AlphaSpec,
    pub alpha_overrides: BTreeMap<usize, f64>,
    pub eta0: f64,
    pub fisher_mode: FisherMode,
    pub family: Option<FamilySpec>,
    pub obs_var: Option<f64>,
    pub classes: Option<usize>,
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
    pub mutate: Mutation,
    pub dt: f64,
    pub dt_list: Option<Vec<f64>>,
    pub time_horizon: f64,
    pub observations: Option<PathBuf>,
}

fn err(line: usize, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::config(format!("line {line}: field `{key}`: {msg}"))
}

fn parse_f64(line: usize, key: &str, raw: &str) -> CliResult<f64> {
    let x: f64 = raw.parse().map_err(|_| err(line, key, format!("expected a number, got `{raw}`")))?;
    if !x.is_finite() {
        return Err(err(line, key, format!("expected a finite number, got `{raw}`")));
    }
    Ok(x)
}

fn parse_list(line: usize, key: &str, raw: &str) -> CliResult<Vec<f64>> {
    raw.split(',').map(|x| parse_f64(line, key, x.trim())).collect()
}

fn parse_usize(line: usize, key: &str, raw: &str) -> CliResult<usize> {
    raw.parse().map_err(|_| err(line, key, format!("expected a non-negative integer, got `{raw}`")))
}

/// `name(args)` → `args`
fn call<'a>(raw: &'a str, name: &str) -> Option<&'a str> {
    raw.strip_prefix(name)?.trim_start().strip_prefix('(')?.strip_suffix(')')
}

fn parse_alpha(line: usize, raw: &str) -> CliResult<AlphaSpec> {
    if let Some(args) = call(raw, "ramp") {
        let v = parse_list(line, "alpha", args)?;
        if v.len() != 2 {
            return Err(err(line, "alpha", "ramp takes two values, ramp(from, to)"));
        }
        return Ok(AlphaSpec::Ramp(v[0], v[1]));
    }
    if let Some(args) = call(raw, "list") {
        return Ok(AlphaSpec::List(parse_list(line, "alpha", args)?));
    }
    Ok(AlphaSpec::Constant(parse_f64(line, "alpha", raw)?))
}

fn parse_fisher(line: usize, raw: &str) -> CliResult<FisherMode> {
    match raw {
        "exact" => Ok(FisherMode::Exact),
        "outer-product" => Ok(FisherMode::OuterProduct),
        _ => match call(raw, "monte-carlo") {
            Some(n) => {
                let n = parse_usize(line, "fisher_mode", n.trim())?;
                if n == 0 {
                    return Err(err(line, "fisher_mode", "monte-carlo needs at least one draw"));
                }
                Ok(FisherMode::MonteCarlo(n))
            }
            None => Err(err(
                line,
                "fisher_mode",
                format!("expected exact, outer-product or monte-carlo(n), got `{raw}`"),
            )),
        },
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.out, &mut config.observations].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut overrides = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {line}: expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return Err(err(line, key, "empty value"));
            }
            if let Some(index) = key.strip_prefix("alpha[").and_then(|k| k.strip_suffix(']')) {
                let t = parse_usize(line, key, index.trim())?;
                if t == 0 {
                    return Err(err(line, key, "overrides start at t = 1"));
                }
                if overrides.insert(t, parse_f64(line, key, value)?).is_some() {
                    return Err(err(line, key, "given twice"));
                }
                continue;
            }
            if !KEYS.contains(&key) {
                return Err(CliError::config(format!("line {line}: unknown field `{key}`")));
            }
            if let Some((first, _)) = seen.insert(key.to_string(), (line, value.to_string())) {
                return Err(err(line, key, format!("already set on line {first}")));
            }
        }

        let get = |key: &str| seen.get(key).map(|(line, v)| (*line, v.as_str()));
        let scenario = get("scenario")
            .map(|(_, v)| v.to_string())
            .ok_or_else(|| CliError::config("missing required field `scenario`"))?;

        let mut config = RunConfig {
            scenario,
            horizon: 50,
            seed: 0,
            s0: None,
            p0: CovSpec::Scale(1.0),
            true_s0: None,
            alpha: AlphaSpec::Constant(0.0),
            alpha_overrides: overrides,
            eta0: kalnat::equivalence::DEFAULT_ETA0,
            fisher_mode: FisherMode::Exact,
            family: None,
            obs_var: None,
            classes: None,
            out: None,
            tol: None,
            mutate: Mutation::None,
            dt: 1e-3,
            dt_list: None,
            time_horizon: 1.0,
            observations: None,
        };

        if let Some((l, v)) = get("T") {
            config.horizon = parse_usize(l, "T", v)?;
        }
        if let Some((l, v)) = get("seed") {
            config.seed = v.parse().map_err(|_| err(l, "seed", format!("expected an unsigned integer, got `{v}`")))?;
        }
        if let Some((l, v)) = get("s0") {
            config.s0 = Some(parse_list(l, "s0", v)?);
        }
        if let Some((l, v)) = get("true_s0") {
            config.true_s0 = Some(parse_list(l, "true_s0", v)?);
        }
        if let Some((l, v)) = get("P0") {
            let entries = parse_list(l, "P0", v)?;
            config.p0 = if entries.len() == 1 {
                if entries[0] <= 0.0 {
                    return Err(err(l, "P0", "scale must be positive"));
                }
                CovSpec::Scale(entries[0])
            } else {
                CovSpec::Full(entries)
            };
        }
        if let Some((l, v)) = get("alpha") {
            config.alpha = parse_alpha(l, v)?;
        }
        let alpha_values: Vec<f64> = match &config.alpha {
            AlphaSpec::Constant(a) => vec![*a],
            AlphaSpec::Ramp(a, b) => vec![*a, *b],
            AlphaSpec::List(v) => v.clone(),
        };
        if alpha_values.iter().chain(config.alpha_overrides.values()).any(|&a| a < 0.0) {
            return Err(CliError::config("field `alpha`: fading rates must be non-negative"));
        }
        if let Some((l, v)) = get("eta0") {
            config.eta0 = parse_f64(l, "eta0", v)?;
            if !(config.eta0 > 0.0 && config.eta0 <= 1.0) {
                return Err(err(l, "eta0", "must lie in (0, 1]"));
            }
        }
        if let Some((l, v)) = get("fisher_mode") {
            config.fisher_mode = parse_fisher(l, v)?;
        }
        if let Some((l, v)) = get("family") {
            config.family = Some(match v {
                "gaussian" => FamilySpec::Gaussian,
                "bernoulli" => FamilySpec::Bernoulli,
                "categorical" => FamilySpec::Categorical,
                _ => return Err(err(l, "family", format!("expected gaussian, bernoulli or categorical, got `{v}`"))),
            });
        }
        if let Some((l, v)) = get("obs_var") {
            let var = parse_f64(l, "obs_var", v)?;
            if var <= 0.0 {
                return Err(err(l, "obs_var", "must be positive"));
            }
            config.obs_var = Some(var);
        }
        if let Some((l, v)) = get("classes") {
            let k = parse_usize(l, "classes", v)?;
            if k < 2 {
                return Err(err(l, "classes", "need at least two classes"));
            }
            config.classes = Some(k);
        }
        if let Some((_, v)) = get("out") {
            config.out = Some(PathBuf::from(v));
        }
        if let Some((_, v)) = get("observations") {
            config.observations = Some(PathBuf::from(v));
        }
        if let Some((l, v)) = get("tol") {
            config.tol = Some(parse_tol(v).map_err(|m| err(l, "tol", m))?);
        }
        if let Some((l, v)) = get("mutate") {
            config.mutate = parse_mutation(v).map_err(|m| err(l, "mutate", m))?;
        }
        if let Some((l, v)) = get("dt") {
            config.dt = parse_f64(l, "dt", v)?;
            if config.dt <= 0.0 {
                return Err(err(l, "dt", "must be positive"));
            }
        }
        if let Some((l, v)) = get("dt_list") {
            let dts = parse_list(l, "dt_list", v)?;
            if dts.iter().any(|&d| d <= 0.0) {
                return Err(err(l, "dt_list", "step sizes must be positive"));
            }
            config.dt_list = Some(dts);
        }
        if let Some((l, v)) = get("horizon") {
            config.time_horizon = parse_f64(l, "horizon", v)?;
            if config.time_horizon <= 0.0 {
                return Err(err(l, "horizon", "must be positive"));
            }
        }
        Ok(config)
    }

    /// Discrete fading schedule for `t = 0 ..= horizon`.
    pub fn alpha_schedule(&self, horizon: usize) -> CliResult<Schedule> {
        let base = match &self.alpha {
            AlphaSpec::Constant(a) => Schedule::Constant(*a),
            AlphaSpec::Ramp(a, b) => Schedule::Ramp { from: *a, to: *b, horizon },
            AlphaSpec::List(v) => {
                if v.len() < horizon {
                    return Err(CliError::config(format!(
                        "field `alpha`: list has {} values, T = {horizon} needs {horizon}",
                        v.len()
                    )));
                }
                let mut values = vec![0.0];
                values.extend(&v[..horizon]);
                Schedule::Values(values)
            }
        };
        if self.alpha_overrides.is_empty() {
            return Ok(base);
        }
        let mut values = base.materialize(horizon);
        for (&t, &a) in &self.alpha_overrides {
            if t > horizon {
                return Err(CliError::config(format!("field `alpha[{t}]`: beyond T = {horizon}")));
            }
            values[t] = a;
        }
        Ok(Schedule::Values(values))
    }

    /// Continuous fading schedule over `[0, horizon]`.
    pub fn alpha_time_schedule(&self) -> CliResult<TimeSchedule> {
        if !self.alpha_overrides.is_empty() {
            return Err(CliError::config("field `alpha[t]`: overrides only apply to discrete scenarios"));
        }
        match &self.alpha {
            AlphaSpec::Constant(a) => Ok(TimeSchedule::Constant(*a)),
            AlphaSpec::Ramp(a, b) => Ok(TimeSchedule::Ramp { from: *a, to: *b, horizon: self.time_horizon }),
            AlphaSpec::List(_) => Err(CliError::config("field `alpha`: list schedules only apply to discrete scenarios")),
        }
    }

    pub fn family(&self, dim_obs: usize) -> CliResult<ObservationFamily> {
        let Some(spec) = &self.family else {
            if self.obs_var.is_some() || self.classes.is_some() {
                return Err(CliError::config("field `family`: required when `obs_var` or `classes` is set"));
            }
            return Ok(default_family(&self.scenario)?);
        };
        Ok(match spec {
            FamilySpec::Gaussian => ObservationFamily::gaussian_isotropic(dim_obs, self.obs_var.unwrap_or(1.0))?,
            FamilySpec::Bernoulli => ObservationFamily::Bernoulli,
            FamilySpec::Categorical => ObservationFamily::categorical(
                self.classes.ok_or_else(|| CliError::config("field `classes`: required for the categorical family"))?,
            )?,
        })
    }

    pub fn initial_estimate(&self, default: &DVector<f64>) -> CliResult<DVector<f64>> {
        match &self.s0 {
            None => Ok(default.clone()),
            Some(v) if v.len() == default.len() => Ok(DVector::from_row_slice(v)),
            Some(v) => Err(CliError::config(format!(
                "field `s0`: {} values for a state of dimension {}",
                v.len(),
                default.len()
            ))),
        }
    }

    /// `P0`, checked to be symmetric positive definite.
    pub fn initial_cov(&self, n: usize) -> CliResult<SymMatrix> {
        let p0 = match &self.p0 {
            CovSpec::Scale(s) => SymMatrix::scaled_identity(n, *s),
            CovSpec::Full(v) => {
                if v.len() != n * n {
                    return Err(CliError::config(format!("field `P0`: {} entries, dimension {n} needs {}", v.len(), n * n)));
                }
                let m = DMatrix::from_row_slice(n, n, v);
                if (&m - m.transpose()).amax() > 1e-12 * m.amax() {
                    return Err(CliError::config("field `P0`: not symmetric"));
                }
                SymMatrix::new(m)
            }
        };
        if !(p0.min_eigenvalue() > 0.0) {
            return Err(CliError::config("field `P0`: not positive definite"));
        }
        Ok(p0)
    }
}

pub fn parse_tol(raw: &str) -> std::result::Result<f64, String> {
    match raw.trim().parse::<f64>() {
        Ok(t) if t > 0.0 && t.is_finite() => Ok(t),
        _ => Err(format!("expected a positive number, got `{raw}`")),
    }
}

pub fn parse_mutation(raw: &str) -> std::result::Result<Mutation, String> {
    Mutation::parse(raw.trim()).ok_or_else(|| {
        format!("unknown mutation `{raw}` (none, drop_fading_factor, half_gamma, skip_transport, perturb_eta)")
    })
}
