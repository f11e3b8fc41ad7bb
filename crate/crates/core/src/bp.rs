//! Pieces shared by ground and template belief propagation: run
//! configuration, the sum-product factor kernel, and message traces.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::normalize_log;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// All variable-to-factor messages from the previous factor-to-variable
    /// messages, then all factor-to-variable messages from those.
    #[default]
    Sync,
    /// Gauss-Seidel sweep: for each variable in order, refresh its incoming
    /// factor messages and then its outgoing ones.
    AsyncSweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub schedule: Schedule,
    /// Stop once no log-message entry moved by this much in an iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the previous message in `[0, 1)`; zero is undamped.
    pub damping: f64,
    pub record_trace: bool,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            schedule: Schedule::Sync,
            tol: 1e-8,
            max_iter: 1000,
            damping: 0.0,
            record_trace: false,
        }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::input("tol must be finite and > 0"));
        }
        if self.max_iter == 0 {
            return Err(Error::input("max_iter must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::input("damping must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute change of any log-message in the last iteration.
    pub residual: f64,
}

/// Sum-product message from a factor to the variable in slot `target`:
/// `out[x] = ln Σ_{c: c[target]=x} exp(π[c] + Σ_{s≠target} in_s[c_s])`,
/// normalized to max zero.
pub(crate) fn factor_to_slot(
    log_table: &[f64],
    dims: &[usize],
    incoming: &[&[f64]],
    target: usize,
    scratch: &mut Vec<f64>,
    out: &mut [f64],
) {
    scratch.clear();
    let mut digits = vec![0usize; dims.len()];
    for &pi in log_table {
        let mut v = pi;
        for (s, msg) in incoming.iter().enumerate() {
            if s != target {
                v += msg[digits[s]];
            }
        }
        scratch.push(v);
        advance(&mut digits, dims);
    }
    out.iter_mut().for_each(|o| *o = f64::NEG_INFINITY);
    digits.iter_mut().for_each(|d| *d = 0);
    for &v in scratch.iter() {
        let x = digits[target];
        out[x] = out[x].max(v);
        advance(&mut digits, dims);
    }
    let maxes: Vec<f64> = out.to_vec();
    let mut sums = vec![0.0; out.len()];
    digits.iter_mut().for_each(|d| *d = 0);
    for &v in scratch.iter() {
        let x = digits[target];
        sums[x] += (v - maxes[x]).exp();
        advance(&mut digits, dims);
    }
    for (o, (m, s)) in out.iter_mut().zip(maxes.iter().zip(&sums)) {
        *o = m + s.ln();
    }
    normalize_log(out);
}

/// Normalized factor belief `b(c) ∝ exp(π[c] + Σ_s in_s[c_s])`.
pub(crate) fn factor_belief(log_table: &[f64], dims: &[usize], incoming: &[&[f64]]) -> Vec<f64> {
    let mut digits = vec![0usize; dims.len()];
    let logits: Vec<f64> = log_table
        .iter()
        .map(|&pi| {
            let v = pi + incoming.iter().enumerate().map(|(s, m)| m[digits[s]]).sum::<f64>();
            advance(&mut digits, dims);
            v
        })
        .collect();
    crate::math::softmax(&logits)
}

/// Row-major odometer increment, last digit fastest.
pub(crate) fn advance(digits: &mut [usize], dims: &[usize]) {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < dims[i] {
            return;
        }
        digits[i] = 0;
    }
}

/// Blends a freshly computed log message with its previous value and
/// renormalizes; returns the largest entry change.
pub(crate) fn damp_and_measure(new: &mut [f64], old: &[f64], damping: f64) -> f64 {
    if damping > 0.0 {
        for (n, o) in new.iter_mut().zip(old) {
            *n = (1.0 - damping) * *n + damping * o;
        }
        normalize_log(new);
    }
    new.iter()
        .zip(old)
        .map(|(n, o)| (n - o).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "var_to_factor")]
    VariableToFactor,
    #[serde(rename = "factor_to_var")]
    FactorToVariable,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::VariableToFactor => "var_to_factor",
            Direction::FactorToVariable => "factor_to_var",
        }
    }
}

/// One entry of one message after an iteration. Template rows leave
/// `factor` and `variable` empty; ground rows name the concrete nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub direction: Direction,
    pub feature: String,
    pub port: usize,
    pub attribute: String,
    pub factor: Option<String>,
    pub variable: Option<String>,
    pub value: String,
    pub log_message: f64,
}

pub const TRACE_HEADER: &str =
    "iter,direction,feature,port,attribute,factor,variable,value,log_message";

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.direction.as_str(),
            r.feature,
            r.port,
            r.attribute,
            quote(r.factor.as_deref().unwrap_or("*")),
            quote(r.variable.as_deref().unwrap_or("*")),
            r.value,
            r.log_message
        )?;
    }
    Ok(())
}

pub(crate) fn quote(field: &str) -> String {
    if field.contains([',', '"']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}
