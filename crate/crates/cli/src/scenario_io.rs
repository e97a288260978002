//! `scenario.csv`: the true states and observations of a discrete scenario.
//!
//! Columns are `t, s_true_0.., observed, y_0..`. Row `t = 0` holds the initial
//! true state and has `observed = 0` with zero `y` entries.

use std::path::Path;

use kalnat::prelude::*;
use nalgebra::DVector;

use crate::error::{CliError, CliResult};
use crate::table::{columns, Table};

pub fn scenario_table(scenario: &Scenario) -> CliResult<Table> {
    let n = scenario.model.dim_state();
    let m = scenario.family.obs_dim();
    let header = ["t".to_string()]
        .into_iter()
        .chain(columns("s_true", n))
        .chain(["observed".to_string()])
        .chain(columns("y", m));
    let mut table = Table::new(header);
    for t in 0..=scenario.horizon() {
        let mut row: Vec<f64> = scenario.true_states[t].iter().copied().collect();
        if t == 0 {
            row.push(0.0);
            row.extend(std::iter::repeat_n(0.0, m));
        } else {
            row.push(1.0);
            row.extend(scenario.observation(t).iter());
        }
        table.push(Some(t), &row)?;
    }
    Ok(table)
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::config(format!("field `observations`: {}: {msg}", path.display()))
}

/// Reads a file written by [`scenario_table`] back into a scenario for `model`.
pub fn read_scenario(path: &Path, model: DynamicalModel, family: ObservationFamily, seed: u64) -> CliResult<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad(path, "empty file"))?.split(',').collect();
    let n = model.dim_state();
    let m = family.obs_dim();
    let expected: Vec<String> = ["t".to_string()]
        .into_iter()
        .chain(columns("s_true", n))
        .chain(["observed".to_string()])
        .chain(columns("y", m))
        .collect();
    if header != expected {
        return Err(bad(path, format!("header `{}` does not match `{}`", header.join(","), expected.join(","))));
    }

    let mut true_states = Vec::new();
    let mut observations = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected.len() {
            return Err(bad(path, format!("row {} has {} fields, expected {}", i + 1, fields.len(), expected.len())));
        }
        let t: usize = fields[0].parse().map_err(|_| bad(path, format!("row {}: bad step `{}`", i + 1, fields[0])))?;
        if t != i {
            return Err(bad(path, format!("row {} has t = {t}, expected {i}", i + 1)));
        }
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| bad(path, format!("row {}: non-numeric field", i + 1)))?;
        true_states.push(DVector::from_row_slice(&values[..n]));
        let observed = values[n];
        if (t == 0) != (observed == 0.0) {
            return Err(bad(path, format!("row {}: only t = 0 may be unobserved", i + 1)));
        }
        if t > 0 {
            observations.push(DVector::from_row_slice(&values[n + 1..]));
        }
    }
    if true_states.is_empty() {
        return Err(bad(path, "no rows"));
    }
    Ok(Scenario::from_parts(model, family, true_states, observations, seed)?)
}
