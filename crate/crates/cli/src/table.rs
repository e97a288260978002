//! CSV output with a fixed number format: 17 significant digits, `,` between
//! fields, `\n` after every row.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Round-trip exact representation of `x`.
pub fn number(x: f64) -> String {
    format!("{x:.16e}")
}

/// `prefix_0, prefix_1, ..`
pub fn columns(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<String>,
}

impl Table {
    pub fn new(header: impl IntoIterator<Item = String>) -> Self {
        Table { header: header.into_iter().collect(), rows: Vec::new() }
    }

    pub fn width(&self) -> usize {
        self.header.len()
    }

    /// Appends a row; the leading integer is written as is (a step index).
    /// Non-finite values are refused so they never reach a file.
    pub fn push(&mut self, index: Option<usize>, values: &[f64]) -> CliResult<()> {
        let width = values.len() + usize::from(index.is_some());
        assert_eq!(width, self.width(), "row width does not match the header");
        if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
            return Err(kalnat::Error::NonFinite(format!("value {bad} in output row {}", self.rows.len() + 1)).into());
        }
        let mut row = String::new();
        if let Some(i) = index {
            write!(row, "{i}").unwrap();
        }
        for (k, x) in values.iter().enumerate() {
            if k > 0 || index.is_some() {
                row.push(',');
            }
            row.push_str(&number(*x));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_file(path, &self.render())
    }
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// `key = value` lines, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    text: String,
}

impl Summary {
    pub fn line(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        writeln!(self.text, "{key} = {value}").unwrap();
        self
    }

    pub fn number(&mut self, key: &str, x: f64) -> &mut Self {
        self.line(key, number(x))
    }

    pub fn vector(&mut self, key: &str, xs: &[f64]) -> &mut Self {
        let joined: Vec<String> = xs.iter().map(|x| number(*x)).collect();
        self.line(key, joined.join(","))
    }

    pub fn raw(&mut self, line: &str) -> &mut Self {
        self.text.push_str(line);
        self.text.push('\n');
        self
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 123456789.12345679, 0.0] {
            assert_eq!(number(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(number(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn rows_and_header() {
        let mut t = Table::new(["t".to_string()].into_iter().chain(columns("s", 2)));
        t.push(Some(0), &[1.0, 2.0]).unwrap();
        assert_eq!(t.render(), "t,s_0,s_1\n0,1.0000000000000000e0,2.0000000000000000e0\n");
        assert!(t.push(Some(1), &[f64::NAN, 0.0]).is_err());
    }
}
