//! The compact factor graph: one node per template attribute and per
//! template feature, with integer counts saying how many ground factors of
//! each feature touch a ground variable through each port. Belief
//! propagation on it reproduces synchronous ground BP while costing time
//! that depends on the scheme only.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::bp::{
    damp_and_measure, factor_belief, factor_to_slot, BpConfig, Convergence, Direction, Schedule,
    TraceRow,
};
use crate::error::{Error, Result};
use crate::ground::{NeighborType, Signature};
use crate::instantiation::{BindingMode, EntityInstantiation, Universe};
use crate::math::{binomial, falling_factorial, neg_entropy, normalize_log, softmax};
use crate::scheme::{Model, TypeKind, ValidScheme};

/// One feature port: the attribute it reads and its slot class, i.e. the
/// smallest slot the feature's argument symmetries can move it onto.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Port {
    pub attribute: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureNode {
    pub feature: usize,
    pub ports: Vec<Port>,
    /// Number of ground factors `M_F`.
    pub ground_multiplicity: u64,
}

/// Link from an attribute node to a class of ports of one feature, with
/// the number of ground factor edges through that class at any single
/// active ground variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassLink {
    pub feature: usize,
    pub class: usize,
    pub class_size: usize,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributeNode {
    pub attribute: usize,
    /// Ground variables whose entity has distinct components (`N_A`); the
    /// others never appear in a factor scope.
    pub active_variables: u64,
    pub total_variables: u64,
    pub links: Vec<ClassLink>,
}

impl AttributeNode {
    /// Ground degree of any active variable of this attribute.
    pub fn degree(&self) -> u64 {
        self.links.iter().map(|l| l.count).sum()
    }
}

/// The parts of a template graph that depend on the scheme alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemplateStructure {
    pub attributes: Vec<String>,
    pub features: Vec<(String, Vec<(String, usize)>)>,
    pub message_vectors: usize,
}

/// Multiplicities that can be obtained either in closed form or by
/// enumerating a ground instantiation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountTable {
    pub feature_multiplicity: Vec<u64>,
    pub active_variables: Vec<u64>,
    /// `(feature, class) -> edges per active variable`.
    pub class_counts: BTreeMap<(usize, usize), u64>,
}

#[derive(Debug, Clone)]
pub struct TemplateFactorGraph {
    scheme: ValidScheme,
    mode: BindingMode,
    attribute_nodes: Vec<AttributeNode>,
    node_of_attribute: Vec<Option<usize>>,
    feature_nodes: Vec<FeatureNode>,
    /// Ports of feature `f` are `port_offset[f]..port_offset[f + 1]`.
    port_offset: Vec<usize>,
    msg_offset: Vec<usize>,
    log_tables: Vec<Vec<f64>>,
    /// `ln |dom|` summed over ground variables that touch no factor.
    isolated_log_volume: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMessageState {
    pub var_to_port: Vec<f64>,
    pub port_to_var: Vec<f64>,
    pub iteration: usize,
}

/// Beliefs shared by every ground node of a type.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBeliefs {
    /// Indexed by scheme attribute; uniform for attributes without a node.
    pub attributes: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
    pub convergence: Convergence,
}

#[derive(Debug, Clone)]
pub struct TemplateBpRun {
    pub beliefs: TemplateBeliefs,
    pub state: TemplateMessageState,
    pub trace: Option<Vec<TraceRow>>,
}

fn overflow(what: &str) -> Error {
    Error::Overflow(format!("{what} does not fit in 64 bits"))
}

/// `Π_T (n_T)_{k_T}` for a multiset of basic types.
fn injective_tuples(types: &[usize], sizes: &[u64]) -> Option<u64> {
    let mut per_type: BTreeMap<usize, u64> = BTreeMap::new();
    for &t in types {
        *per_type.entry(t).or_default() += 1;
    }
    per_type
        .into_iter()
        .try_fold(1u64, |acc, (t, k)| acc.checked_mul(falling_factorial(sizes[t], k)?))
}

/// Closed-form multiplicities from the type cardinalities.
pub fn closed_form_counts(
    scheme: &ValidScheme,
    basic_counts: &[u64],
    mode: BindingMode,
) -> Result<CountTable> {
    let mut feature_multiplicity = Vec::new();
    for f in scheme.features() {
        let all = injective_tuples(&f.arg_types, basic_counts).ok_or_else(|| overflow("M_F"))?;
        feature_multiplicity.push(match mode {
            BindingMode::All => all,
            BindingMode::Canonical => all / f.symmetries.len() as u64,
        });
    }
    let mut active_variables = Vec::new();
    for a in scheme.attributes() {
        let t = &scheme.types()[a.subject];
        let n = match t.kind {
            TypeKind::Basic => Some(basic_counts[a.subject]),
            TypeKind::OrderedTuple => injective_tuples(&t.components, basic_counts),
            TypeKind::UnorderedTuple => {
                binomial(basic_counts[t.components[0]], t.components.len() as u64)
            }
        };
        active_variables.push(n.ok_or_else(|| overflow("N_A"))?);
    }
    let mut class_counts = BTreeMap::new();
    for (fi, f) in scheme.features().iter().enumerate() {
        let classes = f.slot_classes();
        for (slot, &class) in classes.iter().enumerate() {
            if slot != class {
                continue;
            }
            let size = classes.iter().filter(|&&c| c == class).count() as u64;
            let incidences = u128::from(size) * u128::from(feature_multiplicity[fi]);
            let n_a = u128::from(active_variables[f.attributes[slot]]);
            let count = if n_a == 0 { 0 } else { incidences / n_a };
            if count * n_a != incidences {
                return Err(Error::input(format!(
                    "feature `{}` slot {slot}: {incidences} incidences do not divide evenly over \
                     {n_a} variables",
                    scheme.feature_name(fi)
                )));
            }
            class_counts.insert(
                (fi, class),
                u64::try_from(count).map_err(|_| overflow("port count"))?,
            );
        }
    }
    Ok(CountTable {
        feature_multiplicity,
        active_variables,
        class_counts,
    })
}

/// The same table obtained by building every ground factor. Returns an
/// error if some active variable sees a different number of factor edges
/// than another of its attribute.
pub fn enumerated_counts(universe: &Universe, mode: BindingMode) -> Result<CountTable> {
    let scheme = universe.scheme();
    let vars = universe.variables();
    let mut per_var: Vec<BTreeMap<(usize, usize), u64>> = vec![BTreeMap::new(); vars.len()];
    let mut feature_multiplicity = Vec::new();
    for fi in 0..scheme.features().len() {
        let classes = scheme.feature(fi).slot_classes();
        let bindings = universe.enumerate_bindings(fi, mode);
        feature_multiplicity.push(bindings.len() as u64);
        for b in &bindings {
            for (slot, v) in universe.ground_scope(fi, b).into_iter().enumerate() {
                *per_var[v].entry((fi, classes[slot])).or_default() += 1;
            }
        }
    }
    let mut active_variables = vec![0u64; scheme.attributes().len()];
    let mut class_counts = BTreeMap::new();
    let mut reference: Vec<Option<&BTreeMap<(usize, usize), u64>>> =
        vec![None; scheme.attributes().len()];
    for (v, id) in vars.iter().enumerate() {
        if !id.has_distinct_components() {
            if !per_var[v].is_empty() {
                return Err(Error::input(format!(
                    "{} has repeated components but touches a factor",
                    universe.variable_key(v)
                )));
            }
            continue;
        }
        active_variables[id.attribute] += 1;
        match reference[id.attribute] {
            None => reference[id.attribute] = Some(&per_var[v]),
            Some(r) if r == &per_var[v] => {}
            Some(_) => {
                return Err(Error::input(format!(
                    "{} has a different neighborhood than its peers",
                    universe.variable_key(v)
                )))
            }
        }
    }
    for (fi, f) in scheme.features().iter().enumerate() {
        let classes = f.slot_classes();
        for (slot, &class) in classes.iter().enumerate() {
            if slot == class {
                let count = reference[f.attributes[slot]]
                    .and_then(|r| r.get(&(fi, class)).copied())
                    .unwrap_or(0);
                class_counts.insert((fi, class), count);
            }
        }
    }
    Ok(CountTable {
        feature_multiplicity,
        active_variables,
        class_counts,
    })
}

fn total_variables(scheme: &ValidScheme, attribute: usize, basic_counts: &[u64]) -> Option<u64> {
    let t = &scheme.types()[scheme.attributes()[attribute].subject];
    match t.kind {
        TypeKind::Basic => Some(basic_counts[scheme.attributes()[attribute].subject]),
        TypeKind::OrderedTuple => t
            .components
            .iter()
            .try_fold(1u64, |acc, &c| acc.checked_mul(basic_counts[c])),
        TypeKind::UnorderedTuple => {
            let n = basic_counts[t.components[0]];
            let k = t.components.len() as u64;
            if t.allow_repeats {
                binomial((n + k).checked_sub(1)?, k)
            } else {
                binomial(n, k)
            }
        }
    }
}

impl TemplateFactorGraph {
    /// Builds the compact graph from type cardinalities alone; no ground
    /// factor is ever materialized.
    pub fn build(model: &Model, inst: &EntityInstantiation, mode: BindingMode) -> Result<Self> {
        let basic_counts = inst.basic_counts(&model.scheme)?;
        Self::from_counts(model, &basic_counts, mode)
    }

    /// Builds from the number of entities of each type, indexed like
    /// `scheme.types()`.
    pub fn from_counts(model: &Model, basic_counts: &[u64], mode: BindingMode) -> Result<Self> {
        let scheme = &model.scheme;
        let counts = closed_form_counts(scheme, basic_counts, mode)?;
        let mut node_of_attribute = vec![None; scheme.attributes().len()];
        let mut attribute_nodes: Vec<AttributeNode> = Vec::new();
        let mut feature_nodes = Vec::new();
        let mut port_offset = vec![0];
        let mut msg_offset = vec![0];
        for (fi, f) in scheme.features().iter().enumerate() {
            let classes = f.slot_classes();
            let mut ports = Vec::new();
            for (slot, &attr) in f.attributes.iter().enumerate() {
                ports.push(Port {
                    attribute: attr,
                    class: classes[slot],
                });
                msg_offset.push(msg_offset.last().unwrap() + scheme.attributes()[attr].domain_size);
                let node = *node_of_attribute[attr].get_or_insert_with(|| {
                    attribute_nodes.push(AttributeNode {
                        attribute: attr,
                        active_variables: counts.active_variables[attr],
                        total_variables: 0,
                        links: Vec::new(),
                    });
                    attribute_nodes.len() - 1
                });
                if classes[slot] == slot {
                    attribute_nodes[node].links.push(ClassLink {
                        feature: fi,
                        class: slot,
                        class_size: classes.iter().filter(|&&c| c == slot).count(),
                        count: counts.class_counts[&(fi, slot)],
                    });
                }
            }
            port_offset.push(port_offset.last().unwrap() + ports.len());
            feature_nodes.push(FeatureNode {
                feature: fi,
                ports,
                ground_multiplicity: counts.feature_multiplicity[fi],
            });
        }
        let mut isolated_log_volume = 0.0;
        for a in 0..scheme.attributes().len() {
            let total =
                total_variables(scheme, a, basic_counts).ok_or_else(|| overflow("variable count"))?;
            let isolated = match node_of_attribute[a] {
                Some(node) => {
                    attribute_nodes[node].total_variables = total;
                    total - counts.active_variables[a]
                }
                None => total,
            };
            isolated_log_volume +=
                isolated as f64 * (scheme.attributes()[a].domain_size as f64).ln();
        }
        let mut g = TemplateFactorGraph {
            scheme: scheme.clone(),
            mode,
            attribute_nodes,
            node_of_attribute,
            feature_nodes,
            port_offset,
            msg_offset,
            log_tables: Vec::new(),
            isolated_log_volume,
        };
        g.set_theta(&model.theta);
        Ok(g)
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        self.log_tables = self
            .scheme
            .features()
            .iter()
            .zip(theta)
            .map(|(f, th)| f.table.iter().map(|v| th * v).collect())
            .collect();
    }

    pub fn scheme(&self) -> &ValidScheme {
        &self.scheme
    }

    pub fn mode(&self) -> BindingMode {
        self.mode
    }

    pub fn attribute_nodes(&self) -> &[AttributeNode] {
        &self.attribute_nodes
    }

    pub fn attribute_node(&self, attribute: usize) -> Option<&AttributeNode> {
        self.node_of_attribute[attribute].map(|n| &self.attribute_nodes[n])
    }

    pub fn feature_nodes(&self) -> &[FeatureNode] {
        &self.feature_nodes
    }

    pub fn counts(&self) -> CountTable {
        let mut class_counts = BTreeMap::new();
        for node in &self.attribute_nodes {
            for l in &node.links {
                class_counts.insert((l.feature, l.class), l.count);
            }
        }
        let mut active_variables = vec![0; self.scheme.attributes().len()];
        for node in &self.attribute_nodes {
            active_variables[node.attribute] = node.active_variables;
        }
        CountTable {
            feature_multiplicity: self.feature_nodes.iter().map(|f| f.ground_multiplicity).collect(),
            active_variables,
            class_counts,
        }
    }

    /// Number of ground factor edges at one active variable of the port's
    /// attribute through this particular port, when that number is the same
    /// for every variable. Holds for every port in `all` mode; in
    /// `canonical` mode only whole slot classes are guaranteed uniform.
    pub fn port_count(&self, feature: usize, port: usize) -> Option<u64> {
        let p = &self.feature_nodes[feature].ports[port];
        let link = self.link(p.attribute, feature, p.class);
        (link.count % link.class_size as u64 == 0 && self.mode == BindingMode::All)
            .then(|| link.count / link.class_size as u64)
    }

    fn link(&self, attribute: usize, feature: usize, class: usize) -> &ClassLink {
        let node = &self.attribute_nodes[self.node_of_attribute[attribute].expect("linked")];
        node.links
            .iter()
            .find(|l| l.feature == feature && l.class == class)
            .expect("every class is linked")
    }

    pub fn structure(&self) -> TemplateStructure {
        TemplateStructure {
            attributes: self
                .attribute_nodes
                .iter()
                .map(|a| self.scheme.attribute_name(a.attribute).to_string())
                .collect(),
            features: self
                .feature_nodes
                .iter()
                .map(|f| {
                    (
                        self.scheme.feature_name(f.feature).to_string(),
                        f.ports
                            .iter()
                            .map(|p| (self.scheme.attribute_name(p.attribute).to_string(), p.class))
                            .collect(),
                    )
                })
                .collect(),
            message_vectors: 2 * self.num_ports(),
        }
    }

    pub fn num_ports(&self) -> usize {
        *self.port_offset.last().unwrap_or(&0)
    }

    fn global_port(&self, feature: usize, port: usize) -> usize {
        self.port_offset[feature] + port
    }

    fn msg_range(&self, global_port: usize) -> std::ops::Range<usize> {
        self.msg_offset[global_port]..self.msg_offset[global_port + 1]
    }

    pub fn var_to_port<'a>(
        &self,
        state: &'a TemplateMessageState,
        feature: usize,
        port: usize,
    ) -> &'a [f64] {
        &state.var_to_port[self.msg_range(self.global_port(feature, port))]
    }

    pub fn port_to_var<'a>(
        &self,
        state: &'a TemplateMessageState,
        feature: usize,
        port: usize,
    ) -> &'a [f64] {
        &state.port_to_var[self.msg_range(self.global_port(feature, port))]
    }

    pub fn uniform_state(&self) -> TemplateMessageState {
        let len = *self.msg_offset.last().unwrap_or(&0);
        TemplateMessageState {
            var_to_port: vec![0.0; len],
            port_to_var: vec![0.0; len],
            iteration: 0,
        }
    }

    /// `Σ_links count · log m_(F,class)→A`: the log of the product of all
    /// factor messages reaching one ground variable of the attribute.
    fn incoming_total(&self, attribute: usize, port_to_var: &[f64]) -> Vec<f64> {
        let d = self.scheme.attributes()[attribute].domain_size;
        let mut total = vec![0.0; d];
        if let Some(node) = self.node_of_attribute[attribute] {
            for l in &self.attribute_nodes[node].links {
                let c = l.count as f64;
                if c == 0.0 {
                    continue;
                }
                let msg = &port_to_var[self.msg_range(self.global_port(l.feature, l.class))];
                for (t, m) in total.iter_mut().zip(msg) {
                    *t += c * m;
                }
            }
        }
        total
    }

    /// One synchronous iteration, mirroring the ground two-phase step.
    pub fn bp_step(&self, state: &TemplateMessageState, damping: f64) -> (TemplateMessageState, f64) {
        let mut next = state.clone();
        next.iteration += 1;
        let mut residual = 0.0f64;
        let totals: Vec<Vec<f64>> = (0..self.scheme.attributes().len())
            .map(|a| self.incoming_total(a, &state.port_to_var))
            .collect();
        for (fi, f) in self.feature_nodes.iter().enumerate() {
            for (p, port) in f.ports.iter().enumerate() {
                let range = self.msg_range(self.global_port(fi, p));
                if self.link(port.attribute, fi, port.class).count == 0 {
                    continue;
                }
                let msg = &mut next.var_to_port[range.clone()];
                for (x, m) in msg.iter_mut().enumerate() {
                    *m = totals[port.attribute][x] - state.port_to_var[range.start + x];
                }
                normalize_log(msg);
                residual = residual.max(damp_and_measure(msg, &state.var_to_port[range], damping));
            }
        }
        let mut scratch = Vec::new();
        for (fi, f) in self.feature_nodes.iter().enumerate() {
            if f.ground_multiplicity == 0 {
                continue;
            }
            let dims = &self.scheme.feature(fi).dims;
            for p in 0..f.ports.len() {
                let range = self.msg_range(self.global_port(fi, p));
                let incoming: Vec<&[f64]> = (0..f.ports.len())
                    .map(|q| &next.var_to_port[self.msg_range(self.global_port(fi, q))])
                    .collect();
                let mut msg = vec![0.0; range.len()];
                factor_to_slot(&self.log_tables[fi], dims, &incoming, p, &mut scratch, &mut msg);
                residual = residual.max(damp_and_measure(&mut msg, &state.port_to_var[range.clone()], damping));
                next.port_to_var[range].copy_from_slice(&msg);
            }
        }
        (next, residual)
    }

    pub fn run_bp(&self, config: &BpConfig) -> Result<TemplateBpRun> {
        self.run_bp_from(config, self.uniform_state())
    }

    /// Synchronous template BP from a given message state (a warm start).
    pub fn run_bp_from(
        &self,
        config: &BpConfig,
        init: TemplateMessageState,
    ) -> Result<TemplateBpRun> {
        config.validate()?;
        if config.schedule != Schedule::Sync {
            return Err(Error::input(
                "template BP only supports the synchronous schedule",
            ));
        }
        let mut state = init;
        let mut trace = config.record_trace.then(Vec::new);
        let mut convergence = Convergence {
            converged: false,
            iterations: 0,
            residual: f64::INFINITY,
        };
        for _ in 0..config.max_iter {
            let (next, residual) = self.bp_step(&state, config.damping);
            state = next;
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
        Ok(TemplateBpRun {
            beliefs: self.beliefs(&state, convergence),
            state,
            trace,
        })
    }

    pub fn beliefs(&self, state: &TemplateMessageState, convergence: Convergence) -> TemplateBeliefs {
        let attributes = (0..self.scheme.attributes().len())
            .map(|a| softmax(&self.incoming_total(a, &state.port_to_var)))
            .collect();
        let features = self
            .feature_nodes
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let incoming: Vec<&[f64]> =
                    (0..f.ports.len()).map(|p| self.var_to_port(state, fi, p)).collect();
                factor_belief(&self.log_tables[fi], &self.scheme.feature(fi).dims, &incoming)
            })
            .collect();
        TemplateBeliefs {
            attributes,
            features,
            convergence,
        }
    }

    /// Grouped Bethe estimate: every ground factor of a feature and every
    /// active ground variable of an attribute contribute identical terms.
    pub fn bethe_log_partition(&self, beliefs: &TemplateBeliefs) -> f64 {
        let factor_terms: f64 = self
            .feature_nodes
            .iter()
            .enumerate()
            .filter(|(_, f)| f.ground_multiplicity > 0)
            .map(|(fi, f)| {
                let local: f64 = beliefs.features[fi]
                    .iter()
                    .zip(&self.log_tables[fi])
                    .filter(|(&p, _)| p > 0.0)
                    .map(|(&p, &e)| p * (e - p.ln()))
                    .sum();
                f.ground_multiplicity as f64 * local
            })
            .sum();
        let variable_terms: f64 = self
            .attribute_nodes
            .iter()
            .map(|node| {
                node.active_variables as f64
                    * (node.degree() as f64 - 1.0)
                    * neg_entropy(&beliefs.attributes[node.attribute])
            })
            .sum();
        factor_terms + variable_terms + self.isolated_log_volume
    }

    /// The marginal of one ground variable: its attribute's belief if the
    /// variable is in some factor scope, uniform otherwise.
    pub fn variable_marginal(
        &self,
        beliefs: &TemplateBeliefs,
        universe: &Universe,
        var: usize,
    ) -> Vec<f64> {
        let id = &universe.variables()[var];
        if id.has_distinct_components() {
            beliefs.attributes[id.attribute].clone()
        } else {
            let d = universe.domain_size(var);
            vec![1.0 / d as f64; d]
        }
    }

    pub fn expand_marginals(&self, beliefs: &TemplateBeliefs, universe: &Universe) -> Vec<Vec<f64>> {
        (0..universe.num_variables())
            .map(|v| self.variable_marginal(beliefs, universe, v))
            .collect()
    }

    /// Neighborhood every active ground variable of the attribute must have.
    pub fn predicted_variable_signature(&self, attribute: usize) -> Signature {
        let mut sig = Signature::new();
        if let Some(node) = self.attribute_node(attribute) {
            for l in &node.links {
                if l.count > 0 {
                    *sig.entry(NeighborType::Feature(l.feature)).or_default() += l.count;
                }
            }
        }
        sig
    }

    /// Neighborhood every ground factor of the feature must have.
    pub fn predicted_factor_signature(&self, feature: usize) -> Signature {
        let mut sig = Signature::new();
        for p in &self.feature_nodes[feature].ports {
            *sig.entry(NeighborType::Attribute(p.attribute)).or_default() += 1;
        }
        sig
    }

    fn append_trace(&self, state: &TemplateMessageState, rows: &mut Vec<TraceRow>) {
        for (dir, msgs) in [
            (Direction::VariableToFactor, &state.var_to_port),
            (Direction::FactorToVariable, &state.port_to_var),
        ] {
            for (fi, f) in self.feature_nodes.iter().enumerate() {
                for (p, port) in f.ports.iter().enumerate() {
                    let labels = self.scheme.domain(port.attribute);
                    for (x, &m) in msgs[self.msg_range(self.global_port(fi, p))].iter().enumerate() {
                        rows.push(TraceRow {
                            iteration: state.iteration,
                            direction: dir,
                            feature: self.scheme.feature_name(fi).to_string(),
                            port: p,
                            attribute: self.scheme.attribute_name(port.attribute).to_string(),
                            factor: None,
                            variable: None,
                            value: labels[x].clone(),
                            log_message: m,
                        });
                    }
                }
            }
        }
    }
}
