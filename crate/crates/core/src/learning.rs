//! Maximum-likelihood estimation of the feature weights.
//!
//! All quantities are per data instance: empirical counts are averaged over
//! the data, and the log-likelihood is `θ·Ê[F] − ln Z`. The gradient is the
//! difference between empirical and expected feature counts, with the
//! expectation taken exactly or from template BP beliefs.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{BpConfig, Convergence};
use crate::error::{Error, Result};
use crate::exact::ExactOracle;
use crate::instantiation::{Assignment, BindingMode, Universe};
use crate::template::{TemplateFactorGraph, TemplateMessageState};

/// Mean of each feature's total count over the data.
pub fn empirical_feature_counts(
    universe: &Universe,
    data: &[Assignment],
    mode: BindingMode,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::input("data set is empty"));
    }
    let mut sums = vec![0.0; universe.scheme().features().len()];
    for omega in data {
        if omega.0.len() != universe.num_variables() {
            return Err(Error::input("assignment does not cover every variable"));
        }
        for (s, c) in sums.iter_mut().zip(universe.feature_counts(omega, mode)) {
            *s += c;
        }
    }
    Ok(sums.into_iter().map(|s| s / data.len() as f64).collect())
}

/// `M_F · E_{b_F}[f]` per feature from template beliefs.
pub fn expected_counts_from_beliefs(
    graph: &TemplateFactorGraph,
    feature_beliefs: &[Vec<f64>],
) -> Vec<f64> {
    graph
        .feature_nodes()
        .iter()
        .zip(feature_beliefs)
        .map(|(node, b)| {
            let table = &graph.scheme().feature(node.feature).table;
            let local: f64 = b.iter().zip(table).map(|(p, f)| p * f).sum();
            node.ground_multiplicity as f64 * local
        })
        .collect()
}

/// Runs template BP at the graph's current parameters and returns the
/// approximate expected counts with the run's convergence.
pub fn expected_feature_counts_bp(
    graph: &TemplateFactorGraph,
    config: &BpConfig,
) -> Result<(Vec<f64>, Convergence)> {
    let run = graph.run_bp(config)?;
    Ok((
        expected_counts_from_beliefs(graph, &run.beliefs.features),
        run.beliefs.convergence,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Exact,
    TemplateBp,
}

/// Where expected counts and the log-partition come from.
#[derive(Debug, Clone)]
pub enum Backend {
    Exact(Arc<ExactOracle>),
    TemplateBp {
        graph: TemplateFactorGraph,
        config: BpConfig,
    },
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Exact(_) => BackendKind::Exact,
            Backend::TemplateBp { .. } => BackendKind::TemplateBp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub empirical: Vec<f64>,
    pub expected: Vec<f64>,
    pub gradient: Vec<f64>,
    /// `θ·Ê[F] − ln Z̃`, with the exact or Bethe log-partition.
    pub log_likelihood: f64,
    pub log_partition: f64,
    pub backend: BackendKind,
    pub convergence: Option<Convergence>,
}

impl GradientReport {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Exact values are always final; BP values only at a fixed point.
    pub fn converged(&self) -> bool {
        self.convergence.map_or(true, |c| c.converged)
    }
}

/// The per-instance log-likelihood surface of one data set.
#[derive(Debug, Clone)]
pub struct Objective {
    backend: Backend,
    empirical: Vec<f64>,
}

impl Objective {
    pub fn new(backend: Backend, empirical: Vec<f64>) -> Self {
        Objective { backend, empirical }
    }

    pub fn from_data(
        backend: Backend,
        universe: &Universe,
        data: &[Assignment],
        mode: BindingMode,
    ) -> Result<Self> {
        Ok(Self::new(backend, empirical_feature_counts(universe, data, mode)?))
    }

    pub fn empirical(&self) -> &[f64] {
        &self.empirical
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn num_parameters(&self) -> usize {
        self.empirical.len()
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<GradientReport> {
        self.evaluate_from(theta, None).map(|(r, _)| r)
    }

    /// Evaluates at `theta`. The BP backend may start from `warm` messages
    /// and hands back its final messages for the next call.
    pub fn evaluate_from(
        &self,
        theta: &[f64],
        warm: Option<&TemplateMessageState>,
    ) -> Result<(GradientReport, Option<TemplateMessageState>)> {
        if theta.len() != self.empirical.len() {
            return Err(Error::input(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                self.empirical.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("theta".into()));
        }
        let fit: f64 = theta.iter().zip(&self.empirical).map(|(t, e)| t * e).sum();
        let (expected, log_partition, convergence, state) = match &self.backend {
            Backend::Exact(oracle) => {
                let r = oracle.infer(theta)?;
                (r.expected_counts, r.log_partition, None, None)
            }
            Backend::TemplateBp { graph, config } => {
                let mut graph = graph.clone();
                graph.set_theta(theta);
                let init = warm.cloned().unwrap_or_else(|| graph.uniform_state());
                let mut run = graph.run_bp_from(config, init)?;
                run.state.iteration = 0;
                (
                    expected_counts_from_beliefs(&graph, &run.beliefs.features),
                    graph.bethe_log_partition(&run.beliefs),
                    Some(run.beliefs.convergence),
                    Some(run.state),
                )
            }
        };
        let gradient = self.empirical.iter().zip(&expected).map(|(e, x)| e - x).collect();
        Ok((
            GradientReport {
                empirical: self.empirical.clone(),
                expected,
                gradient,
                log_likelihood: fit - log_partition,
                log_partition,
                backend: self.backend.kind(),
                convergence,
            },
            state,
        ))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientAscent,
    #[default]
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub optimizer: Optimizer,
    /// Stop once the gradient norm drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Reuse the previous evaluation's BP messages.
    pub warm_start: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            optimizer: Optimizer::ConjugateGradient,
            tol: 1e-4,
            max_iter: 500,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub theta: Vec<f64>,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerTrace {
    pub entries: Vec<TraceEntry>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    pub report: GradientReport,
    pub trace: OptimizerTrace,
}

const MAX_HALVINGS: usize = 30;
const MAX_DOUBLINGS: usize = 30;

struct Search<'a> {
    objective: &'a Objective,
    warm_start: bool,
    warm: Option<TemplateMessageState>,
}

impl Search<'_> {
    fn eval(&mut self, theta: &[f64]) -> Result<GradientReport> {
        let warm = if self.warm_start { self.warm.as_ref() } else { None };
        let (report, state) = self.objective.evaluate_from(theta, warm)?;
        if self.warm_start {
            self.warm = state;
        }
        Ok(report)
    }

    fn point(theta: &[f64], dir: &[f64], alpha: f64) -> Vec<f64> {
        theta.iter().zip(dir).map(|(t, d)| t + alpha * d).collect()
    }

    /// Backtracking along `dir`: halve until the likelihood improves, then
    /// keep doubling while it still improves. Near the optimum the change in
    /// likelihood falls below rounding error; a step that leaves it
    /// unchanged is still taken if it shrinks the gradient.
    fn line_search(
        &mut self,
        theta: &[f64],
        current: f64,
        current_norm: f64,
        dir: &[f64],
        alpha0: f64,
    ) -> Result<Option<(f64, Vec<f64>, GradientReport)>> {
        let mut alpha = alpha0;
        for _ in 0..=MAX_HALVINGS {
            let cand = Self::point(theta, dir, alpha);
            let report = self.eval(&cand)?;
            let level = report.log_likelihood == current && report.gradient_norm() < current_norm;
            if report.log_likelihood.is_finite() && (report.log_likelihood > current || level) {
                let mut best = (alpha, cand, report);
                for _ in 0..MAX_DOUBLINGS {
                    let a = best.0 * 2.0;
                    let cand = Self::point(theta, dir, a);
                    let report = self.eval(&cand)?;
                    if report.log_likelihood.is_finite()
                        && report.log_likelihood > best.2.log_likelihood
                    {
                        best = (a, cand, report);
                    } else {
                        break;
                    }
                }
                return Ok(Some(best));
            }
            alpha /= 2.0;
        }
        Ok(None)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes the objective from `theta0`, recording every accepted point.
pub fn fit(objective: &Objective, theta0: &[f64], config: &FitConfig) -> Result<FitResult> {
    if !(config.tol > 0.0) {
        return Err(Error::input("tol must be > 0"));
    }
    let mut search = Search {
        objective,
        warm_start: config.warm_start,
        warm: None,
    };
    let mut theta = theta0.to_vec();
    let mut report = search.eval(&theta)?;
    if !report.log_likelihood.is_finite() {
        return Err(Error::input("log-likelihood at the initial parameters is not finite"));
    }
    let mut entries = vec![TraceEntry {
        theta: theta.clone(),
        log_likelihood: report.log_likelihood,
        gradient_norm: report.gradient_norm(),
    }];
    let restart_every = (5 * theta.len()).max(1);
    let mut dir = report.gradient.clone();
    let mut since_restart = 0;
    let mut alpha = 1.0;
    let mut termination = Termination::MaxIterations;
    for _ in 0..config.max_iter {
        if report.gradient_norm() < config.tol {
            termination = Termination::Converged;
            break;
        }
        if dot(&dir, &report.gradient) <= 0.0 {
            dir = report.gradient.clone();
            since_restart = 0;
        }
        let Some((step, next_theta, next)) =
            search.line_search(&theta, report.log_likelihood, report.gradient_norm(), &dir, alpha)?
        else {
            termination = Termination::LineSearchFailed;
            break;
        };
        alpha = step;
        let old_grad = std::mem::replace(&mut report, next).gradient;
        theta = next_theta;
        entries.push(TraceEntry {
            theta: theta.clone(),
            log_likelihood: report.log_likelihood,
            gradient_norm: report.gradient_norm(),
        });
        since_restart += 1;
        dir = match config.optimizer {
            Optimizer::GradientAscent => report.gradient.clone(),
            Optimizer::ConjugateGradient => {
                let g = &report.gradient;
                let denom = dot(&old_grad, &old_grad);
                let beta = if since_restart >= restart_every || denom == 0.0 {
                    since_restart = 0;
                    0.0
                } else {
                    let diff: Vec<f64> = g.iter().zip(&old_grad).map(|(a, b)| a - b).collect();
                    (dot(g, &diff) / denom).max(0.0)
                };
                if beta == 0.0 {
                    // A fresh steepest-ascent direction has a different
                    // scale; let the line search rediscover the step.
                    alpha = alpha.max(1e-3);
                }
                g.iter().zip(&dir).map(|(gi, di)| gi + beta * di).collect()
            }
        };
    }
    if termination == Termination::MaxIterations && report.gradient_norm() < config.tol {
        termination = Termination::Converged;
    }
    Ok(FitResult {
        theta,
        report,
        trace: OptimizerTrace {
            entries,
            termination,
        },
    })
}

/// One axis of a landscape grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub feature: usize,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min.is_finite() && self.max.is_finite() && self.step.is_finite()) {
            return Err(Error::input("grid bounds must be finite"));
        }
        if self.step <= 0.0 || self.max < self.min {
            return Err(Error::input("grid needs step > 0 and max >= min"));
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.min + i as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeRow {
    pub theta: Vec<f64>,
    /// `Err` holds the failure message of a cell that could not be evaluated.
    pub outcome: std::result::Result<GradientReport, String>,
}

impl LandscapeRow {
    pub fn converged(&self) -> bool {
        self.outcome.as_ref().map_or(false, |r| r.converged())
    }
}

/// All grid points in row-major order, first axis slowest. Features not on
/// an axis keep their value from `base`.
pub fn grid_points(base: &[f64], axes: &[GridAxis]) -> Result<Vec<Vec<f64>>> {
    let mut points = vec![base.to_vec()];
    for axis in axes {
        if axis.feature >= base.len() {
            return Err(Error::input("grid axis refers to an unknown feature"));
        }
        let values = axis.values()?;
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q[axis.feature] = v;
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

/// Evaluates the objective at every grid point. Cells are independent and
/// run in parallel unless `warm_start` chains BP messages from cell to cell,
/// which forces row-major sequential order. Under strong coupling a warm
/// start can settle on a different BP fixed point than a cold start; the
/// cold-start scan is the reference result.
pub fn landscape_scan(
    objective: &Objective,
    base: &[f64],
    axes: &[GridAxis],
    warm_start: bool,
) -> Result<Vec<LandscapeRow>> {
    let points = grid_points(base, axes)?;
    if warm_start {
        let mut warm: Option<TemplateMessageState> = None;
        Ok(points
            .into_iter()
            .map(|theta| {
                let outcome = match objective.evaluate_from(&theta, warm.as_ref()) {
                    Ok((r, state)) => {
                        warm = state;
                        Ok(r)
                    }
                    Err(e) => Err(e.to_string()),
                };
                LandscapeRow { theta, outcome }
            })
            .collect())
    } else {
        Ok(points
            .into_par_iter()
            .map(|theta| {
                let outcome = objective.evaluate(&theta).map_err(|e| e.to_string());
                LandscapeRow { theta, outcome }
            })
            .collect())
    }
}

pub fn write_landscape_csv<W: Write>(
    feature_names: &[String],
    rows: &[LandscapeRow],
    mut out: W,
) -> Result<()> {
    let mut header: Vec<String> = feature_names.iter().map(|n| format!("theta_{n}")).collect();
    header.push("loglik".into());
    header.extend(feature_names.iter().map(|n| format!("grad_{n}")));
    header.push("converged".into());
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let mut cols: Vec<String> = row.theta.iter().map(|t| t.to_string()).collect();
        match &row.outcome {
            Ok(r) => {
                cols.push(r.log_likelihood.to_string());
                cols.extend(r.gradient.iter().map(|g| g.to_string()));
                cols.push(r.converged().to_string());
            }
            Err(_) => {
                cols.extend(std::iter::repeat(String::new()).take(1 + feature_names.len()));
                cols.push("false".into());
            }
        }
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

pub fn write_optimizer_trace_csv<W: Write>(
    feature_names: &[String],
    trace: &OptimizerTrace,
    mut out: W,
) -> Result<()> {
    let mut header = vec!["iter".to_string()];
    header.extend(feature_names.iter().map(|n| format!("theta_{n}")));
    header.push("loglik".into());
    header.push("grad_norm".into());
    writeln!(out, "{}", header.join(","))?;
    for (i, e) in trace.entries.iter().enumerate() {
        let mut cols = vec![i.to_string()];
        cols.extend(e.theta.iter().map(|t| t.to_string()));
        cols.push(e.log_likelihood.to_string());
        cols.push(e.gradient_norm.to_string());
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, GraphFeature};
    use crate::scheme::Model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn universe(features: &[GraphFeature], n: usize) -> (Model, Universe) {
        let m = fixtures::graph_model(features, &vec![0.0; features.len()]);
        let u = Universe::new(&m.scheme, &fixtures::vertices(n)).unwrap();
        (m, u)
    }

    fn exact(u: &Universe, mode: BindingMode) -> Backend {
        Backend::Exact(Arc::new(ExactOracle::new(u, mode).unwrap()))
    }

    fn bp(m: &Model, u: &Universe, mode: BindingMode, tol: f64) -> Backend {
        Backend::TemplateBp {
            graph: TemplateFactorGraph::build(m, u.instantiation(), mode).unwrap(),
            config: BpConfig { tol, ..Default::default() },
        }
    }

    #[test]
    fn empirical_counts() {
        let (_, u) = universe(&[GraphFeature::Triangle], 3);
        let full = Assignment(vec![1, 1, 1]);
        let empty = Assignment(vec![0, 0, 0]);
        let mode = BindingMode::All;
        assert_eq!(empirical_feature_counts(&u, &[full.clone()], mode).unwrap(), vec![6.0]);
        assert_eq!(empirical_feature_counts(&u, &[empty.clone()], mode).unwrap(), vec![0.0]);
        assert_eq!(empirical_feature_counts(&u, &[full, empty], mode).unwrap(), vec![3.0]);
        assert!(empirical_feature_counts(&u, &[], mode).is_err());
    }

    #[test]
    fn bp_expected_counts() {
        let (m, u) = universe(&[GraphFeature::Edge], 3);
        let Backend::TemplateBp { graph, config } = bp(&m, &u, BindingMode::All, 1e-8) else {
            unreachable!()
        };
        assert_eq!(expected_feature_counts_bp(&graph, &config).unwrap().0, vec![3.0]);

        let mut scheme = fixtures::graph_scheme(&[GraphFeature::Edge]).scheme().clone();
        scheme.features[0].table = vec![0.0, 0.0];
        let m = Model::new(crate::scheme::ValidScheme::new(scheme).unwrap(), vec![0.8]).unwrap();
        let g = TemplateFactorGraph::build(&m, &fixtures::vertices(4), BindingMode::All).unwrap();
        assert_eq!(expected_feature_counts_bp(&g, &BpConfig::default()).unwrap().0, vec![0.0]);
    }

    #[test]
    fn bp_expected_counts_track_exact() {
        // Weak coupling on models where no two factors share more than one
        // variable. Factors with identical scopes (every binding of a
        // triple in `all` mode, or triangle and chain factors on the same
        // triple) form two-cycles that BP misses at first order in θ.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut cases: Vec<(Model, Universe)> = Vec::new();
        for n in 4..=6 {
            cases.push(universe(&[GraphFeature::Edge, GraphFeature::Triangle], n));
        }
        let colored = Model::new(fixtures::colored_graph_scheme(), vec![0.0, 0.0]).unwrap();
        let u = Universe::new(&colored.scheme, &fixtures::vertices(4)).unwrap();
        cases.push((colored, u));
        for (m, u) in cases {
            let oracle = ExactOracle::new(&u, BindingMode::Canonical).unwrap();
            for _ in 0..4 {
                let theta: Vec<f64> = (0..m.theta.len()).map(|_| rng.gen_range(-0.15..0.15)).collect();
                let mut g = TemplateFactorGraph::build(&m, u.instantiation(), BindingMode::Canonical).unwrap();
                g.set_theta(&theta);
                let (approx, conv) = expected_feature_counts_bp(&g, &BpConfig::default()).unwrap();
                assert!(conv.converged);
                let truth = oracle.infer(&theta).unwrap().expected_counts;
                for (a, t) in approx.iter().zip(&truth) {
                    assert!((a - t).abs() <= 0.05 * (1.0 + t.abs()), "{a} vs {t}");
                }
            }
        }
    }

    #[test]
    fn gradient_of_full_triangle_data() {
        let (_, u) = universe(&[GraphFeature::Edge], 3);
        let obj = Objective::from_data(exact(&u, BindingMode::All), &u, &[Assignment(vec![1, 1, 1])], BindingMode::All)
            .unwrap();
        let r = obj.evaluate(&[0.0]).unwrap();
        assert!((r.gradient[0] - 3.0).abs() < 1e-12);
        assert_eq!(r.gradient[0], r.empirical[0] - r.expected[0]);
    }

    #[test]
    fn zero_theta_likelihood_both_backends() {
        let (m, u) = universe(&[GraphFeature::Edge, GraphFeature::Triangle], 5);
        let data = [Assignment(vec![1; 10])];
        for backend in [exact(&u, BindingMode::All), bp(&m, &u, BindingMode::All, 1e-8)] {
            let obj = Objective::from_data(backend, &u, &data, BindingMode::All).unwrap();
            let r = obj.evaluate(&[0.0, 0.0]).unwrap();
            assert!((r.log_likelihood + 10.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let feats = [GraphFeature::Edge, GraphFeature::Triangle, GraphFeature::Chain];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, u) = universe(&feats, 4);
        let obj_data: Vec<Assignment> = (0..5)
            .map(|_| Assignment((0..6).map(|_| rng.gen_range(0..2)).collect()))
            .collect();
        let obj = Objective::from_data(exact(&u, BindingMode::All), &u, &obj_data, BindingMode::All).unwrap();
        let theta: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = obj.evaluate(&theta).unwrap();
        let eps = 1e-4;
        for j in 0..3 {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += eps;
            down[j] -= eps;
            let fd = (obj.evaluate(&up).unwrap().log_likelihood
                - obj.evaluate(&down).unwrap().log_likelihood)
                / (2.0 * eps);
            assert!((fd - r.gradient[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn bp_gradient_matches_bethe_differences() {
        let feats = [GraphFeature::Edge, GraphFeature::Triangle];
        let (m, u) = universe(&feats, 6);
        let obj = Objective::new(bp(&m, &u, BindingMode::All, 1e-12), vec![7.0, 4.0]);
        let theta = [-0.2, 0.15];
        let r = obj.evaluate(&theta).unwrap();
        assert!(r.converged());
        let eps = 1e-4;
        for j in 0..2 {
            let mut up = theta;
            let mut down = theta;
            up[j] += eps;
            down[j] -= eps;
            let fd = (obj.evaluate(&up).unwrap().log_likelihood
                - obj.evaluate(&down).unwrap().log_likelihood)
                / (2.0 * eps);
            assert!((fd - r.gradient[j]).abs() < 1e-3, "{fd} vs {}", r.gradient[j]);
        }
    }

    #[test]
    fn fit_reaches_the_optimum_monotonically() {
        let feats = [GraphFeature::Edge, GraphFeature::Triangle];
        let (_, u) = universe(&feats, 4);
        let data = [
            Assignment(vec![1, 1, 0, 1, 0, 0]),
            Assignment(vec![1, 0, 0, 0, 0, 1]),
            Assignment(vec![0, 1, 1, 0, 1, 1]),
        ];
        let obj = Objective::from_data(exact(&u, BindingMode::All), &u, &data, BindingMode::All).unwrap();
        for optimizer in [Optimizer::GradientAscent, Optimizer::ConjugateGradient] {
            let cfg = FitConfig { optimizer, tol: 1e-7, ..Default::default() };
            let res = fit(&obj, &[0.0, 0.0], &cfg).unwrap();
            assert_eq!(res.trace.termination, Termination::Converged, "{optimizer:?}");
            assert!(res.trace.entries.last().unwrap().gradient_norm <= 1e-7);
            for w in res.trace.entries.windows(2) {
                assert!(w[1].log_likelihood >= w[0].log_likelihood);
            }
            assert!(obj.evaluate(&res.theta).unwrap().gradient_norm() <= 1e-6);
        }
    }

    #[test]
    fn matching_counts_give_zero_gradient() {
        let (_, u) = universe(&[GraphFeature::Edge, GraphFeature::Triangle], 4);
        let backend = exact(&u, BindingMode::All);
        let Backend::Exact(oracle) = &backend else { unreachable!() };
        let theta = [0.3, -0.1];
        let expected = oracle.infer(&theta).unwrap().expected_counts;
        let obj = Objective::new(backend, expected);
        assert!(obj.evaluate(&theta).unwrap().gradient_norm() < 1e-12);
    }

    #[test]
    fn zero_feature_model_converges_immediately() {
        let (_, u) = universe(&[], 3);
        let obj = Objective::from_data(exact(&u, BindingMode::All), &u, &[Assignment(vec![0, 1, 0])], BindingMode::All)
            .unwrap();
        let res = fit(&obj, &[], &FitConfig::default()).unwrap();
        assert_eq!(res.trace.entries.len(), 1);
        assert_eq!(res.trace.termination, Termination::Converged);
    }

    #[test]
    fn bp_fit_terminates_with_monotone_steps() {
        let feats = [GraphFeature::Triangle, GraphFeature::Chain];
        let (m, u) = universe(&feats, 6);
        let obj = Objective::new(bp(&m, &u, BindingMode::All, 1e-10), vec![3.0, 25.0]);
        let res = fit(&obj, &[0.0, 0.0], &FitConfig::default()).unwrap();
        assert!(res.trace.entries.len() > 1);
        for w in res.trace.entries.windows(2) {
            assert!(w[1].log_likelihood >= w[0].log_likelihood);
        }
    }

    #[test]
    fn landscape_rows_and_consistency() {
        let (m, u) = universe(&[GraphFeature::Edge, GraphFeature::Triangle], 4);
        let data = [Assignment(vec![1, 1, 0, 1, 0, 0]), Assignment(vec![0, 1, 1, 0, 0, 1])];
        let obj = Objective::from_data(exact(&u, BindingMode::All), &u, &data, BindingMode::All).unwrap();
        let axes = [
            GridAxis { feature: 0, min: -1.0, max: 1.0, step: 0.25 },
            GridAxis { feature: 1, min: -1.0, max: 1.0, step: 0.25 },
        ];
        let rows = landscape_scan(&obj, &[0.0, 0.0], &axes, false).unwrap();
        assert_eq!(rows.len(), 81);
        assert_eq!(rows[1].theta, vec![-1.0, -0.75]);
        let best = rows
            .iter()
            .max_by(|a, b| {
                let la = a.outcome.as_ref().unwrap().log_likelihood;
                let lb = b.outcome.as_ref().unwrap().log_likelihood;
                la.total_cmp(&lb)
            })
            .unwrap();
        let opt = fit(&obj, &[0.0, 0.0], &FitConfig::default()).unwrap().theta;
        let inside = opt.iter().all(|t| (-1.0..=1.0).contains(t));
        if inside {
            for (a, b) in best.theta.iter().zip(&opt) {
                assert!((a - b).abs() <= 0.25);
            }
        }

        let single = landscape_scan(&obj, &[0.1, 0.2], &[], false).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].outcome.as_ref().unwrap(), &obj.evaluate(&[0.1, 0.2]).unwrap());

        // Warm and cold starts agree where the BP fixed point is unique.
        let tobj = Objective::new(bp(&m, &u, BindingMode::All, 1e-12), obj.empirical().to_vec());
        let weak = [
            GridAxis { feature: 0, min: -0.5, max: 0.5, step: 0.25 },
            GridAxis { feature: 1, min: -0.25, max: 0.25, step: 0.125 },
        ];
        let cold = landscape_scan(&tobj, &[0.0, 0.0], &weak, false).unwrap();
        let warm = landscape_scan(&tobj, &[0.0, 0.0], &weak, true).unwrap();
        assert!(cold.iter().all(|c| c.converged()));
        for (c, w) in cold.iter().zip(&warm) {
            if c.converged() && w.converged() {
                let (c, w) = (c.outcome.as_ref().unwrap(), w.outcome.as_ref().unwrap());
                assert!((c.log_likelihood - w.log_likelihood).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn csv_layouts() {
        let (_, u) = universe(&[GraphFeature::Edge], 3);
        let obj = Objective::from_data(exact(&u, BindingMode::All), &u, &[Assignment(vec![1, 1, 1])], BindingMode::All)
            .unwrap();
        let names = vec!["F_e".to_string()];
        let rows = landscape_scan(&obj, &[0.0], &[GridAxis { feature: 0, min: 0.0, max: 0.5, step: 0.5 }], false)
            .unwrap();
        let mut buf = Vec::new();
        write_landscape_csv(&names, &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta_F_e,loglik,grad_F_e,converged\n0,"));
        assert_eq!(text.lines().count(), 3);

        let res = fit(&obj, &[0.0], &FitConfig { max_iter: 2, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_optimizer_trace_csv(&names, &res.trace, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("iter,theta_F_e,loglik,grad_norm\n0,0,"));
    }

    #[test]
    fn grid_axis_validation() {
        assert!(GridAxis { feature: 0, min: 0.0, max: 1.0, step: 0.0 }.values().is_err());
        assert!(GridAxis { feature: 0, min: 1.0, max: 0.0, step: 0.1 }.values().is_err());
        assert_eq!(GridAxis { feature: 0, min: -1.0, max: 1.0, step: 0.25 }.values().unwrap().len(), 9);
    }
}
