//! Running every inference backend on one model, and side by side over a
//! parameter grid.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{BpConfig, Convergence, Schedule, TraceRow};
use crate::error::{Error, Result};
use crate::exact::{ExactOracle, DEFAULT_STATE_CAP};
use crate::gibbs::{run_gibbs, GibbsConfig};
use crate::ground::GroundFactorGraph;
use crate::instantiation::{Assignment, BindingMode, Universe};
use crate::learning::{grid_points, GridAxis};
use crate::scheme::Model;
use crate::template::{closed_form_counts, TemplateFactorGraph};

/// Ground BP is skipped in comparisons above this many variable/factor
/// adjacencies.
pub const GROUND_EDGE_LIMIT: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Exact,
    GroundBpSync,
    GroundBpAsync,
    TemplateBp,
    Gibbs,
}

impl BackendChoice {
    pub const ALL: [BackendChoice; 5] = [
        BackendChoice::Exact,
        BackendChoice::GroundBpSync,
        BackendChoice::GroundBpAsync,
        BackendChoice::TemplateBp,
        BackendChoice::Gibbs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendChoice::Exact => "exact",
            BackendChoice::GroundBpSync => "ground_bp_sync",
            BackendChoice::GroundBpAsync => "ground_bp_async",
            BackendChoice::TemplateBp => "template_bp",
            BackendChoice::Gibbs => "gibbs",
        }
    }

    pub fn is_bp(self) -> bool {
        matches!(
            self,
            BackendChoice::GroundBpSync | BackendChoice::GroundBpAsync | BackendChoice::TemplateBp
        )
    }

    /// Whether the backend yields a log-partition value.
    pub fn reports_log_partition(self) -> bool {
        self != BackendChoice::Gibbs
    }
}

impl fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackendChoice::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown backend `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub mode: BindingMode,
    /// Schedule is chosen by the backend; the rest applies to every BP run.
    pub bp: BpConfig,
    pub gibbs: GibbsConfig,
    pub state_cap: u64,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings {
            mode: BindingMode::All,
            bp: BpConfig::default(),
            gibbs: GibbsConfig::default(),
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutput {
    pub backend: BackendChoice,
    /// One distribution per ground variable.
    pub marginals: Vec<Vec<f64>>,
    pub log_partition: Option<f64>,
    pub convergence: Option<Convergence>,
    pub samples: Vec<Assignment>,
    pub trace: Option<Vec<TraceRow>>,
}

/// Number of variable/factor adjacencies the ground graph would have.
pub fn ground_edge_count(model: &Model, universe: &Universe, mode: BindingMode) -> Result<u64> {
    let basic = universe.instantiation().basic_counts(&model.scheme)?;
    let counts = closed_form_counts(&model.scheme, &basic, mode)?;
    counts
        .feature_multiplicity
        .iter()
        .zip(model.scheme.features())
        .try_fold(0u64, |acc, (&m, f)| {
            m.checked_mul(f.arity() as u64).and_then(|e| acc.checked_add(e))
        })
        .ok_or_else(|| Error::Overflow("ground edge count".into()))
}

/// Runs one backend at the model's parameters. An already built exact
/// oracle for the same universe and mode may be passed in.
pub fn run_inference(
    model: &Model,
    universe: &Universe,
    backend: BackendChoice,
    settings: &InferenceSettings,
    oracle: Option<&ExactOracle>,
) -> Result<InferenceOutput> {
    let mode = settings.mode;
    let mut out = InferenceOutput {
        backend,
        marginals: Vec::new(),
        log_partition: None,
        convergence: None,
        samples: Vec::new(),
        trace: None,
    };
    match backend {
        BackendChoice::Exact => {
            let built;
            let oracle = match oracle {
                Some(o) => o,
                None => {
                    built = ExactOracle::with_cap(universe, mode, settings.state_cap)?;
                    &built
                }
            };
            let r = oracle.infer(&model.theta)?;
            out.marginals = r.variable_marginals;
            out.log_partition = Some(r.log_partition);
        }
        BackendChoice::GroundBpSync | BackendChoice::GroundBpAsync => {
            let g = GroundFactorGraph::build(model, universe, mode);
            let schedule = if backend == BackendChoice::GroundBpSync {
                Schedule::Sync
            } else {
                Schedule::AsyncSweep
            };
            let run = g.run_bp(&BpConfig {
                schedule,
                ..settings.bp
            })?;
            out.log_partition = Some(g.bethe_log_partition(&run.beliefs));
            out.convergence = Some(run.beliefs.convergence);
            out.marginals = run.beliefs.variables;
            out.trace = run.trace;
        }
        BackendChoice::TemplateBp => {
            let t = TemplateFactorGraph::build(model, universe.instantiation(), mode)?;
            let run = t.run_bp(&BpConfig {
                schedule: Schedule::Sync,
                ..settings.bp
            })?;
            out.log_partition = Some(t.bethe_log_partition(&run.beliefs));
            out.convergence = Some(run.beliefs.convergence);
            out.marginals = t.expand_marginals(&run.beliefs, universe);
            out.trace = run.trace;
        }
        BackendChoice::Gibbs => {
            let g = GroundFactorGraph::build(model, universe, mode);
            let run = run_gibbs(&g, &settings.gibbs)?;
            out.marginals = run.marginals;
            out.samples = run.samples;
        }
    }
    Ok(out)
}

/// `variable,value,probability` rows and a closing `logZ` row when known.
pub fn write_marginals_csv<W: Write>(
    universe: &Universe,
    output: &InferenceOutput,
    mut out: W,
) -> Result<()> {
    writeln!(out, "variable,value,probability")?;
    let scheme = universe.scheme();
    for (v, dist) in output.marginals.iter().enumerate() {
        let key = crate::bp::quote(&universe.variable_key(v));
        let labels = scheme.domain(universe.variables()[v].attribute);
        for (label, p) in labels.iter().zip(dist) {
            writeln!(out, "{key},{label},{p}")?;
        }
    }
    if let Some(z) = output.log_partition {
        writeln!(out, "logZ,,{z}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub axes: Vec<GridAxis>,
    pub backends: Vec<BackendChoice>,
    pub settings: InferenceSettings,
    /// Ground BP is skipped above this many adjacencies.
    pub ground_edge_limit: u64,
}

/// Per attribute value: the mean marginal over the attribute's active
/// variables and the mean absolute deviation from exact per variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub attribute: usize,
    pub value: usize,
    pub probability: Vec<Option<f64>>,
    pub deviation: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareCell {
    pub theta: Vec<f64>,
    pub rows: Vec<CompareRow>,
    pub log_partition: Vec<Option<f64>>,
    pub converged: Vec<Option<bool>>,
    pub errors: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareTable {
    pub feature_names: Vec<String>,
    pub attribute_names: Vec<String>,
    pub value_labels: Vec<Vec<String>>,
    /// Backends that ran, in column order.
    pub backends: Vec<BackendChoice>,
    /// Requested backends left out, with the reason.
    pub skipped: Vec<(BackendChoice, String)>,
    pub cells: Vec<CompareCell>,
}

impl CompareTable {
    fn column(&self, backend: BackendChoice) -> Option<usize> {
        self.backends.iter().position(|&b| b == backend)
    }

    /// Mean over cells of the per-variable deviation from exact for one
    /// attribute value; `None` without an exact column.
    pub fn mean_deviation(&self, backend: BackendChoice, attribute: usize, value: usize) -> Option<f64> {
        let col = self.column(backend)?;
        let devs: Vec<f64> = self
            .cells
            .iter()
            .flat_map(|c| c.rows.iter())
            .filter(|r| r.attribute == attribute && r.value == value)
            .filter_map(|r| r.deviation[col])
            .collect();
        (!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64)
    }
}

/// Runs every feasible requested backend at every grid cell. Exact
/// inference and ground BP are dropped when the instance is too large;
/// failures inside a cell are recorded and the scan continues.
pub fn compare(model: &Model, universe: &Universe, config: &CompareConfig) -> Result<CompareTable> {
    let mode = config.settings.mode;
    let scheme = &model.scheme;
    let mut backends = Vec::new();
    let mut skipped = Vec::new();
    let mut oracle = None;
    let mut requested = config.backends.clone();
    requested.sort();
    requested.dedup();
    for b in requested {
        match b {
            BackendChoice::Exact => match ExactOracle::with_cap(universe, mode, config.settings.state_cap) {
                Ok(o) => {
                    oracle = Some(o);
                    backends.push(b);
                }
                Err(e @ (Error::StateSpaceTooLarge { .. } | Error::Overflow(_))) => {
                    skipped.push((b, e.to_string()))
                }
                Err(e) => return Err(e),
            },
            BackendChoice::GroundBpSync | BackendChoice::GroundBpAsync => {
                let edges = ground_edge_count(model, universe, mode)?;
                if edges <= config.ground_edge_limit {
                    backends.push(b);
                } else {
                    skipped.push((
                        b,
                        format!("{edges} ground adjacencies exceed the limit of {}", config.ground_edge_limit),
                    ));
                }
            }
            BackendChoice::TemplateBp | BackendChoice::Gibbs => backends.push(b),
        }
    }
    let base = model.theta.clone();
    let points = grid_points(&base, &config.axes)?;
    let active: Vec<bool> = universe
        .variables()
        .iter()
        .map(|v| v.has_distinct_components())
        .collect();
    let cells = points
        .into_par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let m = model.with_theta(theta.clone());
            let outputs: Vec<std::result::Result<InferenceOutput, String>> = backends
                .iter()
                .map(|&b| {
                    let mut settings = config.settings;
                    settings.gibbs.seed = settings.gibbs.seed.wrapping_add(i as u64);
                    settings.gibbs.keep_samples = false;
                    settings.bp.record_trace = false;
                    m.as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|m| {
                            run_inference(m, universe, b, &settings, oracle.as_ref())
                                .map_err(|e| e.to_string())
                        })
                })
                .collect();
            summarize_cell(scheme, universe, &active, &backends, theta, outputs)
        })
        .collect();
    Ok(CompareTable {
        feature_names: scheme.feature_names(),
        attribute_names: (0..scheme.attributes().len())
            .map(|a| scheme.attribute_name(a).to_string())
            .collect(),
        value_labels: (0..scheme.attributes().len())
            .map(|a| scheme.domain(a).to_vec())
            .collect(),
        backends,
        skipped,
        cells,
    })
}

fn summarize_cell(
    scheme: &crate::scheme::ValidScheme,
    universe: &Universe,
    active: &[bool],
    backends: &[BackendChoice],
    theta: Vec<f64>,
    outputs: Vec<std::result::Result<InferenceOutput, String>>,
) -> CompareCell {
    let exact = backends
        .iter()
        .position(|&b| b == BackendChoice::Exact)
        .and_then(|c| outputs[c].as_ref().ok());
    let mut rows = Vec::new();
    for a in 0..scheme.attributes().len() {
        let vars: Vec<usize> = (0..universe.num_variables())
            .filter(|&v| active[v] && universe.variables()[v].attribute == a)
            .collect();
        if vars.is_empty() {
            continue;
        }
        for x in 0..scheme.attributes()[a].domain_size {
            let mut probability = Vec::new();
            let mut deviation = Vec::new();
            for out in &outputs {
                let Ok(out) = out else {
                    probability.push(None);
                    deviation.push(None);
                    continue;
                };
                let p = vars.iter().map(|&v| out.marginals[v][x]).sum::<f64>() / vars.len() as f64;
                probability.push(Some(p));
                deviation.push(exact.map(|e| {
                    vars.iter()
                        .map(|&v| (out.marginals[v][x] - e.marginals[v][x]).abs())
                        .sum::<f64>()
                        / vars.len() as f64
                }));
            }
            rows.push(CompareRow {
                attribute: a,
                value: x,
                probability,
                deviation,
            });
        }
    }
    CompareCell {
        theta,
        rows,
        log_partition: outputs
            .iter()
            .map(|o| o.as_ref().ok().and_then(|o| o.log_partition))
            .collect(),
        converged: outputs
            .iter()
            .map(|o| o.as_ref().ok().and_then(|o| o.convergence.map(|c| c.converged)))
            .collect(),
        errors: outputs.iter().map(|o| o.as_ref().err().cloned()).collect(),
    }
}

/// Wide CSV: theta columns, attribute, value, then `p_`, `dev_` (when an
/// exact column exists, for the other backends) and `logz_` columns per
/// backend that ran, then `converged_` per BP backend. Failed entries are
/// left empty.
pub fn write_compare_csv<W: Write>(table: &CompareTable, mut out: W) -> Result<()> {
    let has_exact = table.backends.contains(&BackendChoice::Exact);
    let mut header: Vec<String> = table.feature_names.iter().map(|n| format!("theta_{n}")).collect();
    header.push("attribute".into());
    header.push("value".into());
    for b in &table.backends {
        header.push(format!("p_{b}"));
    }
    if has_exact {
        for b in table.backends.iter().filter(|&&b| b != BackendChoice::Exact) {
            header.push(format!("dev_{b}"));
        }
    }
    for b in table.backends.iter().filter(|b| b.reports_log_partition()) {
        header.push(format!("logz_{b}"));
    }
    for b in table.backends.iter().filter(|b| b.is_bp()) {
        header.push(format!("converged_{b}"));
    }
    writeln!(out, "{}", header.join(","))?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for cell in &table.cells {
        for row in &cell.rows {
            let mut cols: Vec<String> = cell.theta.iter().map(|t| t.to_string()).collect();
            cols.push(table.attribute_names[row.attribute].clone());
            cols.push(table.value_labels[row.attribute][row.value].clone());
            cols.extend(row.probability.iter().map(|&p| fmt(p)));
            if has_exact {
                for (i, b) in table.backends.iter().enumerate() {
                    if *b != BackendChoice::Exact {
                        cols.push(fmt(row.deviation[i]));
                    }
                }
            }
            for (i, b) in table.backends.iter().enumerate() {
                if b.reports_log_partition() {
                    cols.push(fmt(cell.log_partition[i]));
                }
            }
            for (i, b) in table.backends.iter().enumerate() {
                if b.is_bp() {
                    cols.push(cell.converged[i].map(|c| c.to_string()).unwrap_or_default());
                }
            }
            writeln!(out, "{}", cols.join(","))?;
        }
    }
    Ok(())
}
