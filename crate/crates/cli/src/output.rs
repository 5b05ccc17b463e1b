//! Number formatting and table rendering shared by the commands.

use std::fmt::Write as _;

use chainperf_core::deploy::DeploymentConfig;
use clap::ValueEnum;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Csv,
    Json,
}

/// Fixed-point decimal with 10 significant digits.
pub fn sig10(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (9 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn opt_sig10(x: Option<f64>) -> String {
    x.map(sig10).unwrap_or_default()
}

/// `NR^(2), NR^(3)` for a node's homogeneous NRs.
pub fn nr_list(nrs: &[u32]) -> String {
    if nrs.is_empty() {
        return "-".into();
    }
    nrs.iter().map(|n| format!("NR^({n})")).collect::<Vec<_>>().join(", ")
}

/// Column label and NR notation per chain position. A co-located pair
/// becomes one column `first+second`; its NRs are written `(a+b)` with the
/// container counts of each type.
pub fn deployment_columns(config: &DeploymentConfig, names: &[String]) -> Vec<(String, String)> {
    let mut cols = Vec::new();
    for (i, nrs) in config.nodes.iter().enumerate() {
        match &config.shared {
            Some(s) if i == s.first.min(s.second) => {
                let mut parts: Vec<String> = config.nodes[s.first].iter().map(|n| format!("NR^({n}+0)")).collect();
                parts.extend(config.nodes[s.second].iter().map(|n| format!("NR^(0+{n})")));
                parts.extend(s.nrs.iter().map(|(a, b)| format!("NR^({a}+{b})")));
                cols.push((format!("{}+{}", names[s.first], names[s.second]), parts.join(", ")));
            }
            Some(s) if i == s.first.max(s.second) => {}
            _ => cols.push((names[i].clone(), nr_list(nrs))),
        }
    }
    cols
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn to_csv(header: &[String], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Numerical(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Numerical(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Left-aligned plain-text table.
pub fn to_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header);
    for r in rows {
        line(r);
    }
    out
}
