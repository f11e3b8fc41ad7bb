//! The instance-level factor graph, with one factor per ground feature, and
//! loopy belief propagation over it in the log domain.

use std::collections::BTreeMap;

use crate::bp::{
    damp_and_measure, factor_belief, factor_to_slot, BpConfig, Convergence, Direction, Schedule,
    TraceRow,
};
use crate::error::Result;
use crate::instantiation::{Binding, BindingMode, Universe};
use crate::math::{neg_entropy, softmax};
use crate::scheme::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeRef {
    Variable(usize),
    Factor(usize),
}

/// The template a neighbor was instantiated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NeighborType {
    Attribute(usize),
    Feature(usize),
}

pub type Signature = BTreeMap<NeighborType, u64>;

#[derive(Debug, Clone)]
pub struct GroundFactorGraph {
    domains: Vec<usize>,
    var_attribute: Vec<usize>,
    var_keys: Vec<String>,
    factor_template: Vec<usize>,
    factor_binding: Vec<Binding>,
    /// Edges of factor `f` are `factor_offset[f]..factor_offset[f + 1]`, in
    /// slot order.
    factor_offset: Vec<usize>,
    edge_var: Vec<usize>,
    edge_factor: Vec<usize>,
    var_edges: Vec<Vec<usize>>,
    msg_offset: Vec<usize>,
    dims: Vec<Vec<usize>>,
    tables: Vec<Vec<f64>>,
    log_tables: Vec<Vec<f64>>,
    feature_names: Vec<String>,
    attribute_names: Vec<String>,
    domain_labels: Vec<Vec<String>>,
    entity_names: Vec<String>,
}

/// Log-domain messages for every variable/factor adjacency, both
/// directions, each normalized to max zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub var_to_factor: Vec<f64>,
    pub factor_to_var: Vec<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSet {
    pub variables: Vec<Vec<f64>>,
    pub factors: Vec<Vec<f64>>,
    pub convergence: Convergence,
}

#[derive(Debug, Clone)]
pub struct BpRun {
    pub beliefs: BeliefSet,
    pub state: MessageState,
    pub trace: Option<Vec<TraceRow>>,
}

impl GroundFactorGraph {
    /// One variable node per ground variable and one factor node per binding
    /// of each feature in the given mode. Potentials are `θ_i × f_i`.
    pub fn build(model: &Model, universe: &Universe, mode: BindingMode) -> Self {
        let scheme = universe.scheme();
        let n_vars = universe.num_variables();
        let mut g = GroundFactorGraph {
            domains: universe.domain_sizes(),
            var_attribute: universe.variables().iter().map(|v| v.attribute).collect(),
            var_keys: (0..n_vars).map(|v| universe.variable_key(v)).collect(),
            factor_template: Vec::new(),
            factor_binding: Vec::new(),
            factor_offset: vec![0],
            edge_var: Vec::new(),
            edge_factor: Vec::new(),
            var_edges: vec![Vec::new(); n_vars],
            msg_offset: vec![0],
            dims: scheme.features().iter().map(|f| f.dims.clone()).collect(),
            tables: scheme.features().iter().map(|f| f.table.clone()).collect(),
            log_tables: Vec::new(),
            feature_names: scheme.feature_names(),
            attribute_names: (0..scheme.attributes().len())
                .map(|a| scheme.attribute_name(a).to_string())
                .collect(),
            domain_labels: (0..scheme.attributes().len())
                .map(|a| scheme.domain(a).to_vec())
                .collect(),
            entity_names: universe
                .instantiation()
                .entities
                .iter()
                .map(|e| e.name.clone())
                .collect(),
        };
        for feature in 0..scheme.features().len() {
            for binding in universe.enumerate_bindings(feature, mode) {
                let f = g.factor_template.len();
                for var in universe.ground_scope(feature, &binding) {
                    let e = g.edge_var.len();
                    g.edge_var.push(var);
                    g.edge_factor.push(f);
                    g.var_edges[var].push(e);
                    g.msg_offset.push(g.msg_offset[e] + g.domains[var]);
                }
                g.factor_template.push(feature);
                g.factor_binding.push(binding);
                g.factor_offset.push(g.edge_var.len());
            }
        }
        g.set_theta(&model.theta);
        g
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        self.log_tables = self
            .tables
            .iter()
            .zip(theta)
            .map(|(t, th)| t.iter().map(|v| th * v).collect())
            .collect();
    }

    pub fn num_variables(&self) -> usize {
        self.domains.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factor_template.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_var.len()
    }

    pub fn domain_size(&self, var: usize) -> usize {
        self.domains[var]
    }

    pub fn variable_attribute(&self, var: usize) -> usize {
        self.var_attribute[var]
    }

    pub fn factor_template(&self, factor: usize) -> usize {
        self.factor_template[factor]
    }

    pub fn factor_binding(&self, factor: usize) -> &Binding {
        &self.factor_binding[factor]
    }

    pub fn factor_scope(&self, factor: usize) -> &[usize] {
        &self.edge_var[self.factor_offset[factor]..self.factor_offset[factor + 1]]
    }

    /// Edge ids adjacent to a variable, in factor order.
    pub fn variable_edges(&self, var: usize) -> &[usize] {
        &self.var_edges[var]
    }

    pub fn edge_factor(&self, edge: usize) -> usize {
        self.edge_factor[edge]
    }

    pub fn edge_slot(&self, edge: usize) -> usize {
        edge - self.factor_offset[self.edge_factor[edge]]
    }

    pub fn edge_variable(&self, edge: usize) -> usize {
        self.edge_var[edge]
    }

    pub fn log_table(&self, template: usize) -> &[f64] {
        &self.log_tables[template]
    }

    pub fn table(&self, template: usize) -> &[f64] {
        &self.tables[template]
    }

    pub fn dims(&self, template: usize) -> &[usize] {
        &self.dims[template]
    }

    pub fn degree(&self, var: usize) -> usize {
        self.var_edges[var].len()
    }

    fn msg_range(&self, edge: usize) -> std::ops::Range<usize> {
        self.msg_offset[edge]..self.msg_offset[edge + 1]
    }

    pub fn var_to_factor<'a>(&self, state: &'a MessageState, edge: usize) -> &'a [f64] {
        &state.var_to_factor[self.msg_range(edge)]
    }

    pub fn factor_to_var<'a>(&self, state: &'a MessageState, edge: usize) -> &'a [f64] {
        &state.factor_to_var[self.msg_range(edge)]
    }

    pub fn uniform_state(&self) -> MessageState {
        let len = *self.msg_offset.last().unwrap_or(&0);
        MessageState {
            var_to_factor: vec![0.0; len],
            factor_to_var: vec![0.0; len],
            iteration: 0,
        }
    }

    /// Messages from `var` to every adjacent factor, each excluding that
    /// factor's own incoming message, via prefix and suffix sums.
    fn variable_update(
        &self,
        var: usize,
        factor_to_var: &[f64],
        old: &[f64],
        out: &mut [f64],
        damping: f64,
    ) -> f64 {
        let edges = &self.var_edges[var];
        let d = self.domains[var];
        let mut prefix = vec![0.0; d];
        let mut suffixes = vec![0.0; d * (edges.len() + 1)];
        for k in (0..edges.len()).rev() {
            let src = &factor_to_var[self.msg_range(edges[k])];
            for x in 0..d {
                suffixes[k * d + x] = suffixes[(k + 1) * d + x] + src[x];
            }
        }
        let mut residual = 0.0f64;
        for (k, &e) in edges.iter().enumerate() {
            let range = self.msg_range(e);
            let msg = &mut out[range.clone()];
            for x in 0..d {
                msg[x] = prefix[x] + suffixes[(k + 1) * d + x];
            }
            crate::math::normalize_log(msg);
            residual = residual.max(damp_and_measure(msg, &old[range], damping));
            let src = &factor_to_var[self.msg_range(e)];
            for x in 0..d {
                prefix[x] += src[x];
            }
        }
        residual
    }

    fn factor_update_edge(
        &self,
        edge: usize,
        var_to_factor: &[f64],
        old: &[f64],
        out: &mut [f64],
        damping: f64,
        scratch: &mut Vec<f64>,
    ) -> f64 {
        let f = self.edge_factor[edge];
        let t = self.factor_template[f];
        let incoming: Vec<&[f64]> = (self.factor_offset[f]..self.factor_offset[f + 1])
            .map(|e| &var_to_factor[self.msg_range(e)])
            .collect();
        let range = self.msg_range(edge);
        let msg = &mut out[range.clone()];
        factor_to_slot(
            &self.log_tables[t],
            &self.dims[t],
            &incoming,
            edge - self.factor_offset[f],
            scratch,
            msg,
        );
        damp_and_measure(msg, &old[range], damping)
    }

    /// One synchronous iteration. Returns the new state and the largest
    /// absolute change of any log-message entry.
    pub fn bp_step_sync(&self, state: &MessageState, damping: f64) -> (MessageState, f64) {
        let mut next = state.clone();
        next.iteration += 1;
        let mut residual = 0.0f64;
        for v in 0..self.num_variables() {
            residual = residual.max(self.variable_update(
                v,
                &state.factor_to_var,
                &state.var_to_factor,
                &mut next.var_to_factor,
                damping,
            ));
        }
        let mut scratch = Vec::new();
        for e in 0..self.num_edges() {
            residual = residual.max(self.factor_update_edge(
                e,
                &next.var_to_factor,
                &state.factor_to_var,
                &mut next.factor_to_var,
                damping,
                &mut scratch,
            ));
        }
        (next, residual)
    }

    /// One asynchronous sweep, updating `state` in place.
    pub fn bp_sweep_async(&self, state: &mut MessageState, damping: f64) -> f64 {
        state.iteration += 1;
        let mut residual = 0.0f64;
        let mut scratch = Vec::new();
        let mut old = Vec::new();
        for v in 0..self.num_variables() {
            for &e in &self.var_edges[v] {
                let range = self.msg_range(e);
                old.clear();
                old.extend_from_slice(&state.factor_to_var[range.clone()]);
                let mut fresh = old.clone();
                let f = self.edge_factor[e];
                let t = self.factor_template[f];
                {
                    let incoming: Vec<&[f64]> = (self.factor_offset[f]..self.factor_offset[f + 1])
                        .map(|e2| &state.var_to_factor[self.msg_range(e2)])
                        .collect();
                    factor_to_slot(
                        &self.log_tables[t],
                        &self.dims[t],
                        &incoming,
                        e - self.factor_offset[f],
                        &mut scratch,
                        &mut fresh,
                    );
                }
                residual = residual.max(damp_and_measure(&mut fresh, &old, damping));
                state.factor_to_var[range].copy_from_slice(&fresh);
            }
            let previous = state.var_to_factor.clone();
            residual = residual.max(self.variable_update(
                v,
                &state.factor_to_var,
                &previous,
                &mut state.var_to_factor,
                damping,
            ));
        }
        residual
    }

    pub fn run_bp(&self, config: &BpConfig) -> Result<BpRun> {
        self.run_bp_from(config, self.uniform_state())
    }

    /// Iterates until the largest log-message change drops below `tol` or
    /// `max_iter` is reached. Non-convergence is reported, not raised.
    pub fn run_bp_from(&self, config: &BpConfig, init: MessageState) -> Result<BpRun> {
        config.validate()?;
        let mut state = init;
        let mut trace = config.record_trace.then(Vec::new);
        let mut convergence = Convergence {
            converged: false,
            iterations: 0,
            residual: f64::INFINITY,
        };
        for _ in 0..config.max_iter {
            let residual = match config.schedule {
                Schedule::Sync => {
                    let (next, r) = self.bp_step_sync(&state, config.damping);
                    state = next;
                    r
                }
                Schedule::AsyncSweep => self.bp_sweep_async(&mut state, config.damping),
            };
            convergence.iterations = state.iteration;
            convergence.residual = residual;
            if let Some(rows) = trace.as_mut() {
                self.append_trace(&state, rows);
            }
            if residual < config.tol {
                convergence.converged = true;
                break;
            }
        }
        let beliefs = self.beliefs(&state, convergence);
        Ok(BpRun {
            beliefs,
            state,
            trace,
        })
    }

    pub fn beliefs(&self, state: &MessageState, convergence: Convergence) -> BeliefSet {
        let variables = (0..self.num_variables())
            .map(|v| {
                let mut total = vec![0.0; self.domains[v]];
                for &e in &self.var_edges[v] {
                    for (t, m) in total.iter_mut().zip(self.factor_to_var(state, e)) {
                        *t += m;
                    }
                }
                softmax(&total)
            })
            .collect();
        let factors = (0..self.num_factors())
            .map(|f| {
                let t = self.factor_template[f];
                let incoming: Vec<&[f64]> = (self.factor_offset[f]..self.factor_offset[f + 1])
                    .map(|e| self.var_to_factor(state, e))
                    .collect();
                factor_belief(&self.log_tables[t], &self.dims[t], &incoming)
            })
            .collect();
        BeliefSet {
            variables,
            factors,
            convergence,
        }
    }

    /// Bethe estimate of `ln Z`: factor average energies and entropies plus
    /// the `(d_X - 1)` variable entropy corrections.
    pub fn bethe_log_partition(&self, beliefs: &BeliefSet) -> f64 {
        let factor_terms: f64 = beliefs
            .factors
            .iter()
            .enumerate()
            .map(|(f, b)| {
                let pi = &self.log_tables[self.factor_template[f]];
                b.iter()
                    .zip(pi)
                    .filter(|(&p, _)| p > 0.0)
                    .map(|(&p, &e)| p * (e - p.ln()))
                    .sum::<f64>()
            })
            .sum();
        let variable_terms: f64 = beliefs
            .variables
            .iter()
            .enumerate()
            .map(|(v, b)| (self.degree(v) as f64 - 1.0) * neg_entropy(b))
            .sum();
        factor_terms + variable_terms
    }

    /// Neighbors of a node grouped by the template they come from.
    pub fn neighborhood_signature(&self, node: NodeRef) -> Signature {
        let mut sig = Signature::new();
        match node {
            NodeRef::Variable(v) => {
                for &e in &self.var_edges[v] {
                    *sig
                        .entry(NeighborType::Feature(self.factor_template[self.edge_factor[e]]))
                        .or_default() += 1;
                }
            }
            NodeRef::Factor(f) => {
                for &var in self.factor_scope(f) {
                    *sig
                        .entry(NeighborType::Attribute(self.var_attribute[var]))
                        .or_default() += 1;
                }
            }
        }
        sig
    }

    pub fn factor_label(&self, factor: usize) -> String {
        let names: Vec<&str> = self.factor_binding[factor]
            .0
            .iter()
            .map(|&e| self.entity_names[e].as_str())
            .collect();
        format!(
            "{}<{}>",
            self.feature_names[self.factor_template[factor]],
            names.join(",")
        )
    }

    pub fn variable_key(&self, var: usize) -> &str {
        &self.var_keys[var]
    }

    fn append_trace(&self, state: &MessageState, rows: &mut Vec<TraceRow>) {
        for (dir, msgs) in [
            (Direction::VariableToFactor, &state.var_to_factor),
            (Direction::FactorToVariable, &state.factor_to_var),
        ] {
            for e in 0..self.num_edges() {
                let f = self.edge_factor[e];
                let var = self.edge_var[e];
                let attr = self.var_attribute[var];
                for (x, &m) in msgs[self.msg_range(e)].iter().enumerate() {
                    rows.push(TraceRow {
                        iteration: state.iteration,
                        direction: dir,
                        feature: self.feature_names[self.factor_template[f]].clone(),
                        port: self.edge_slot(e),
                        attribute: self.attribute_names[attr].clone(),
                        factor: Some(self.factor_label(f)),
                        variable: Some(self.var_keys[var].clone()),
                        value: self.domain_labels[attr][x].clone(),
                        log_message: m,
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, GraphFeature};

    fn n3_fixture() -> (Model, Universe) {
        let m = fixtures::graph_model(
            &[GraphFeature::Edge, GraphFeature::Triangle],
            &[0.0, 2f64.ln() / 6.0],
        );
        let u = Universe::new(&m.scheme, &fixtures::vertices(3)).unwrap();
        (m, u)
    }

    #[test]
    fn factor_counts_for_four_vertices() {
        let m = fixtures::graph_model(&[GraphFeature::Edge, GraphFeature::Triangle], &[0.1, 0.2]);
        let u = Universe::new(&m.scheme, &fixtures::vertices(4)).unwrap();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        assert_eq!(g.num_variables(), 6);
        let per = |t| (0..g.num_factors()).filter(|&f| g.factor_template(f) == t).count();
        assert_eq!(per(0), 12);
        assert_eq!(per(1), 24);
        let g = GroundFactorGraph::build(&m, &u, BindingMode::Canonical);
        assert_eq!(g.num_factors(), 6 + 4);
    }

    #[test]
    fn zero_theta_stays_uniform() {
        let m = fixtures::graph_model(&[GraphFeature::Edge, GraphFeature::Triangle], &[0.0, 0.0]);
        let u = Universe::new(&m.scheme, &fixtures::vertices(4)).unwrap();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        let mut s = g.uniform_state();
        for _ in 0..5 {
            s = g.bp_step_sync(&s, 0.0).0;
            assert!(s.var_to_factor.iter().chain(&s.factor_to_var).all(|&x| x == 0.0));
        }
        let run = g.run_bp(&BpConfig::default()).unwrap();
        assert!(run.beliefs.convergence.converged);
        assert_eq!(run.beliefs.convergence.iterations, 1);
        for b in &run.beliefs.variables {
            assert_eq!(b, &vec![0.5, 0.5]);
        }
        let bethe = g.bethe_log_partition(&run.beliefs);
        assert!((bethe - 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn variables_only_model() {
        let m = fixtures::graph_model(&[], &[]);
        let u = Universe::new(&m.scheme, &fixtures::vertices(3)).unwrap();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        assert_eq!(g.num_factors(), 0);
        let run = g.run_bp(&BpConfig::default()).unwrap();
        assert!(run.beliefs.variables.iter().all(|b| b == &vec![0.5, 0.5]));
        assert!((g.bethe_log_partition(&run.beliefs) - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn triangle_fixture_marginal_and_bethe() {
        let (m, u) = n3_fixture();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        for schedule in [Schedule::Sync, Schedule::AsyncSweep] {
            let cfg = BpConfig { schedule, ..Default::default() };
            let run = g.run_bp(&cfg).unwrap();
            assert!(run.beliefs.convergence.converged);
            for b in &run.beliefs.variables {
                assert!((b[1] - 5.0 / 9.0).abs() <= 0.02, "{b:?}");
            }
            let bethe = g.bethe_log_partition(&run.beliefs);
            assert!((bethe - 9f64.ln()).abs() <= 0.1, "{bethe}");
        }
    }

    #[test]
    fn single_variable_single_factor() {
        let m = fixtures::graph_model(&[GraphFeature::Edge], &[0.7]);
        let u = Universe::new(&m.scheme, &fixtures::vertices(2)).unwrap();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::Canonical);
        assert_eq!((g.num_variables(), g.num_factors()), (1, 1));
        let (s, _) = g.bp_step_sync(&g.uniform_state(), 0.0);
        assert_eq!(g.factor_to_var(&s, 0), &[-0.7, 0.0]);
    }

    #[test]
    fn tree_bethe_is_exact() {
        let m = fixtures::tree_chain_model();
        let u = Universe::new(&m.scheme, &fixtures::chain_instance()).unwrap();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        let run = g.run_bp(&BpConfig { tol: 1e-13, ..Default::default() }).unwrap();
        assert!(run.beliefs.convergence.converged);
        // Oracle: direct sum over the 16 joint states.
        let mut weights = Vec::new();
        for bits in 0..16usize {
            let omega = crate::instantiation::Assignment((0..4).map(|i| (bits >> i) & 1).collect());
            weights.push(u.unnormalized_log_density(&m.theta, &omega, BindingMode::All));
        }
        let log_z = crate::math::log_sum_exp(&weights);
        assert!((g.bethe_log_partition(&run.beliefs) - log_z).abs() < 1e-9);
    }

    #[test]
    fn damping_keeps_the_fixed_point() {
        let m = fixtures::graph_model(&[GraphFeature::Edge, GraphFeature::Triangle], &[-0.4, 0.35]);
        let u = Universe::new(&m.scheme, &fixtures::vertices(5)).unwrap();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        let plain = g.run_bp(&BpConfig { tol: 1e-12, ..Default::default() }).unwrap();
        let damped = g
            .run_bp(&BpConfig { tol: 1e-12, damping: 0.5, ..Default::default() })
            .unwrap();
        assert!(plain.beliefs.convergence.converged && damped.beliefs.convergence.converged);
        for (a, b) in plain.beliefs.variables.iter().zip(&damped.beliefs.variables) {
            assert!((a[1] - b[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let m = fixtures::graph_model(&[GraphFeature::Edge, GraphFeature::Triangle], &[-3.0, 1.5]);
        let u = Universe::new(&m.scheme, &fixtures::vertices(5)).unwrap();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        let run = g.run_bp(&BpConfig { max_iter: 3, tol: 1e-300, ..Default::default() }).unwrap();
        assert!(!run.beliefs.convergence.converged);
        assert_eq!(run.beliefs.convergence.iterations, 3);
        assert_eq!(run.beliefs.variables.len(), 10);
    }

    #[test]
    fn messages_stay_normalized_under_large_parameters() {
        let m = fixtures::graph_model(&[GraphFeature::Edge, GraphFeature::Triangle], &[-50.0, 50.0]);
        let u = Universe::new(&m.scheme, &fixtures::vertices(5)).unwrap();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        let mut s = g.uniform_state();
        for _ in 0..10 {
            s = g.bp_step_sync(&s, 0.0).0;
            for e in 0..g.num_edges() {
                for m in [g.var_to_factor(&s, e), g.factor_to_var(&s, e)] {
                    assert!(m.iter().all(|x| x.is_finite()));
                    assert_eq!(m.iter().copied().fold(f64::NEG_INFINITY, f64::max), 0.0);
                }
            }
        }
    }

    #[test]
    fn factor_beliefs_marginalize_to_variable_beliefs() {
        let m = fixtures::graph_model(&[GraphFeature::Edge, GraphFeature::Triangle], &[0.3, -0.2]);
        let u = Universe::new(&m.scheme, &fixtures::vertices(5)).unwrap();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        let run = g.run_bp(&BpConfig { tol: 1e-13, ..Default::default() }).unwrap();
        let b = &run.beliefs;
        for f in 0..g.num_factors() {
            let dims = g.dims(g.factor_template(f));
            let strides = crate::scheme::strides_for(dims);
            for (slot, &var) in g.factor_scope(f).iter().enumerate() {
                let mut marg = vec![0.0; dims[slot]];
                for (c, p) in b.factors[f].iter().enumerate() {
                    marg[(c / strides[slot]) % dims[slot]] += p;
                }
                for (x, p) in marg.iter().enumerate() {
                    assert!((p - b.variables[var][x]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn schedules_agree_at_converged_fixed_points() {
        for (n, theta) in [(4, [0.2, -0.3]), (5, [-0.5, 0.1]), (6, [0.1, 0.05])] {
            let m = fixtures::graph_model(&[GraphFeature::Edge, GraphFeature::Triangle], &theta);
            let u = Universe::new(&m.scheme, &fixtures::vertices(n)).unwrap();
            let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
            let sync = g.run_bp(&BpConfig { tol: 1e-10, ..Default::default() }).unwrap();
            let asyn = g
                .run_bp(&BpConfig { tol: 1e-10, schedule: Schedule::AsyncSweep, ..Default::default() })
                .unwrap();
            assert!(sync.beliefs.convergence.converged && asyn.beliefs.convergence.converged);
            for (a, b) in sync.beliefs.variables.iter().zip(&asyn.beliefs.variables) {
                assert!((a[1] - b[1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn trace_rows_cover_every_edge() {
        let (m, u) = n3_fixture();
        let g = GroundFactorGraph::build(&m, &u, BindingMode::All);
        let run = g
            .run_bp(&BpConfig { max_iter: 2, tol: 1e-300, record_trace: true, ..Default::default() })
            .unwrap();
        let rows = run.trace.unwrap();
        assert_eq!(rows.len(), 2 * 2 * g.num_edges() * 2);
        assert_eq!(rows[0].factor.as_deref(), Some("F_e<v1,v2>"));
        assert_eq!(rows[0].variable.as_deref(), Some("Exist(v1,v2)"));
    }
}
