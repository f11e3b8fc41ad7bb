//! Grounding a scheme over a concrete entity set: complex entities, random
//! variables, legal bindings, ground feature values and the unnormalized
//! log-density.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::{EntityExpr, ResolvedFeature, TypeKind, ValidScheme, ValidationReport, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

/// Named basic entities. Declaration order is the total order used to put
/// unordered tuples in canonical form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityInstantiation {
    pub entities: Vec<EntityDecl>,
}

impl EntityInstantiation {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn check(&self, scheme: &ValidScheme) -> ValidationReport {
        let mut report = ValidationReport::default();
        let mut seen = HashSet::new();
        for e in &self.entities {
            if !seen.insert(e.name.as_str()) {
                report.violations.push(Violation {
                    subject: format!("entity {}", e.name),
                    rule: "duplicate entity name".into(),
                });
            }
            match scheme.type_index(&e.type_name) {
                None => report.violations.push(Violation {
                    subject: format!("entity {}", e.name),
                    rule: format!("unknown type `{}`", e.type_name),
                }),
                Some(t) if scheme.types()[t].kind != TypeKind::Basic => {
                    report.violations.push(Violation {
                        subject: format!("entity {}", e.name),
                        rule: format!("type `{}` is not a basic type", e.type_name),
                    })
                }
                Some(_) => {}
            }
        }
        report
    }

    /// Number of entities of each type, indexed like `scheme.types()`;
    /// complex types get zero.
    pub fn basic_counts(&self, scheme: &ValidScheme) -> Result<Vec<u64>> {
        let report = self.check(scheme);
        if !report.is_ok() {
            return Err(Error::InvalidInstantiation(report));
        }
        let mut counts = vec![0u64; scheme.types().len()];
        for e in &self.entities {
            counts[scheme.type_index(&e.type_name).expect("checked")] += 1;
        }
        Ok(counts)
    }
}

/// Whether every legal binding contributes a ground feature, or only one
/// representative per orbit of the feature's argument symmetries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BindingMode {
    #[default]
    All,
    Canonical,
}

impl FromStr for BindingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(BindingMode::All),
            "canonical" => Ok(BindingMode::Canonical),
            other => Err(Error::input(format!("unknown binding mode `{other}`"))),
        }
    }
}

impl fmt::Display for BindingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BindingMode::All => "all",
            BindingMode::Canonical => "canonical",
        })
    }
}

/// Entity indices of a complex entity; unordered tuples are stored sorted.
pub type EntityKey = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundVariableId {
    pub attribute: usize,
    pub entity: EntityKey,
}

impl GroundVariableId {
    /// Ground variables whose entity repeats a basic entity are never in the
    /// scope of any ground feature.
    pub fn has_distinct_components(&self) -> bool {
        let mut seen = HashSet::new();
        self.entity.iter().all(|e| seen.insert(*e))
    }
}

/// An ordered tuple of distinct entities, one per feature argument.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Binding(pub Vec<usize>);

/// A full joint value: one domain index per variable, in variable order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment(pub Vec<usize>);

/// Assignment/data file: `{"assignments": [{"Exist(v1,v2)": "1", ...}]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataFile {
    pub assignments: Vec<BTreeMap<String, String>>,
}

/// A scheme materialized over an entity instantiation.
#[derive(Debug, Clone)]
pub struct Universe {
    scheme: ValidScheme,
    inst: EntityInstantiation,
    entities_of_type: Vec<Vec<usize>>,
    variables: Vec<GroundVariableId>,
    var_index: HashMap<GroundVariableId, usize>,
    entity_index: HashMap<String, usize>,
}

impl Universe {
    pub fn new(scheme: &ValidScheme, inst: &EntityInstantiation) -> Result<Self> {
        let report = inst.check(scheme);
        if !report.is_ok() {
            return Err(Error::InvalidInstantiation(report));
        }
        let mut entities_of_type = vec![Vec::new(); scheme.types().len()];
        let mut entity_index = HashMap::new();
        for (i, e) in inst.entities.iter().enumerate() {
            entities_of_type[scheme.type_index(&e.type_name).expect("checked")].push(i);
            entity_index.insert(e.name.clone(), i);
        }
        let mut universe = Universe {
            scheme: scheme.clone(),
            inst: inst.clone(),
            entities_of_type,
            variables: Vec::new(),
            var_index: HashMap::new(),
            entity_index,
        };
        let mut variables = Vec::new();
        for (a, attr) in scheme.attributes().iter().enumerate() {
            for key in universe.entities_of(attr.subject) {
                variables.push(GroundVariableId {
                    attribute: a,
                    entity: key,
                });
            }
        }
        universe.var_index = variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i))
            .collect();
        universe.variables = variables;
        Ok(universe)
    }

    pub fn scheme(&self) -> &ValidScheme {
        &self.scheme
    }

    pub fn instantiation(&self) -> &EntityInstantiation {
        &self.inst
    }

    /// All complex entities of a type, in lexicographic order.
    pub fn entities_of(&self, ty: usize) -> Vec<EntityKey> {
        let t = &self.scheme.types()[ty];
        match t.kind {
            TypeKind::Basic => self.entities_of_type[ty].iter().map(|&e| vec![e]).collect(),
            TypeKind::OrderedTuple => {
                let mut out = vec![Vec::new()];
                for &c in &t.components {
                    out = out
                        .into_iter()
                        .flat_map(|prefix: Vec<usize>| {
                            self.entities_of_type[c].iter().map(move |&e| {
                                let mut next = prefix.clone();
                                next.push(e);
                                next
                            })
                        })
                        .collect();
                }
                out
            }
            TypeKind::UnorderedTuple => {
                let pool = &self.entities_of_type[t.components[0]];
                let mut out = Vec::new();
                let mut current = Vec::with_capacity(t.components.len());
                fn go(
                    pool: &[usize],
                    start: usize,
                    k: usize,
                    repeats: bool,
                    current: &mut Vec<usize>,
                    out: &mut Vec<EntityKey>,
                ) {
                    if current.len() == k {
                        out.push(current.clone());
                        return;
                    }
                    for i in start..pool.len() {
                        current.push(pool[i]);
                        go(pool, if repeats { i } else { i + 1 }, k, repeats, current, out);
                        current.pop();
                    }
                }
                go(pool, 0, t.components.len(), t.allow_repeats, &mut current, &mut out);
                out
            }
        }
    }

    pub fn variables(&self) -> &[GroundVariableId] {
        &self.variables
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn variable_index(&self, id: &GroundVariableId) -> Option<usize> {
        self.var_index.get(id).copied()
    }

    pub fn domain_size(&self, var: usize) -> usize {
        self.scheme.attributes()[self.variables[var].attribute].domain_size
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        (0..self.variables.len()).map(|v| self.domain_size(v)).collect()
    }

    /// `Attr(e1,e2,...)` with components in canonical order.
    pub fn variable_key(&self, var: usize) -> String {
        let v = &self.variables[var];
        let names: Vec<&str> = v
            .entity
            .iter()
            .map(|&e| self.inst.entities[e].name.as_str())
            .collect();
        format!("{}({})", self.scheme.attribute_name(v.attribute), names.join(","))
    }

    pub fn parse_variable_key(&self, key: &str) -> Result<usize> {
        let bad = || Error::input(format!("malformed variable key `{key}`"));
        let (attr, rest) = key.split_once('(').ok_or_else(bad)?;
        let inner = rest.strip_suffix(')').ok_or_else(bad)?;
        let a = self
            .scheme
            .attribute_index(attr.trim())
            .ok_or_else(|| Error::input(format!("unknown attribute in `{key}`")))?;
        let mut entity = inner
            .split(',')
            .map(|n| {
                self.entity_index
                    .get(n.trim())
                    .copied()
                    .ok_or_else(|| Error::input(format!("unknown entity `{}` in `{key}`", n.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        let subject = self.scheme.attributes()[a].subject;
        if self.scheme.types()[subject].kind == TypeKind::UnorderedTuple {
            entity.sort_unstable();
        }
        self.variable_index(&GroundVariableId { attribute: a, entity })
            .ok_or_else(|| Error::input(format!("`{key}` is not a variable of this instantiation")))
    }

    pub fn assignment_from_map(&self, map: &BTreeMap<String, String>) -> Result<Assignment> {
        let mut values = vec![usize::MAX; self.variables.len()];
        for (key, label) in map {
            let v = self.parse_variable_key(key)?;
            let domain = self.scheme.domain(self.variables[v].attribute);
            values[v] = domain.iter().position(|d| d == label).ok_or_else(|| {
                Error::input(format!("`{label}` is not a value of {key}"))
            })?;
        }
        if let Some(missing) = values.iter().position(|&v| v == usize::MAX) {
            return Err(Error::input(format!(
                "assignment has no value for {}",
                self.variable_key(missing)
            )));
        }
        Ok(Assignment(values))
    }

    pub fn assignment_to_map(&self, assignment: &Assignment) -> BTreeMap<String, String> {
        assignment
            .0
            .iter()
            .enumerate()
            .map(|(v, &x)| {
                (
                    self.variable_key(v),
                    self.scheme.domain(self.variables[v].attribute)[x].clone(),
                )
            })
            .collect()
    }

    pub fn read_data(&self, data: &DataFile) -> Result<Vec<Assignment>> {
        data.assignments
            .iter()
            .map(|m| self.assignment_from_map(m))
            .collect()
    }

    pub fn write_data(&self, samples: &[Assignment]) -> DataFile {
        DataFile {
            assignments: samples.iter().map(|a| self.assignment_to_map(a)).collect(),
        }
    }

    /// Legal bindings of a feature, lexicographic in entity order. In
    /// canonical mode only the smallest binding of each symmetry orbit is
    /// kept.
    pub fn enumerate_bindings(&self, feature: usize, mode: BindingMode) -> Vec<Binding> {
        let f = self.scheme.feature(feature);
        let mut out = Vec::new();
        let mut current = Vec::with_capacity(f.arg_types.len());
        let mut used = vec![false; self.inst.len()];
        self.bindings_rec(f, mode, &mut current, &mut used, &mut out);
        out
    }

    fn bindings_rec(
        &self,
        f: &ResolvedFeature,
        mode: BindingMode,
        current: &mut Vec<usize>,
        used: &mut [bool],
        out: &mut Vec<Binding>,
    ) {
        if current.len() == f.arg_types.len() {
            if mode == BindingMode::All || is_canonical(f, current) {
                out.push(Binding(current.clone()));
            }
            return;
        }
        for &e in &self.entities_of_type[f.arg_types[current.len()]] {
            if used[e] {
                continue;
            }
            used[e] = true;
            current.push(e);
            self.bindings_rec(f, mode, current, used, out);
            current.pop();
            used[e] = false;
        }
    }

    /// The variables a binding's ground feature reads, one per formal
    /// entity.
    pub fn ground_scope(&self, feature: usize, binding: &Binding) -> Vec<usize> {
        let f = self.scheme.feature(feature);
        f.entities
            .iter()
            .zip(&f.attributes)
            .map(|(expr, &attr)| {
                let entity = match expr {
                    EntityExpr::Arg(a) => vec![binding.0[*a]],
                    EntityExpr::Ordered(args) => args.iter().map(|&a| binding.0[a]).collect(),
                    EntityExpr::Unordered(args) => {
                        let mut e: Vec<usize> = args.iter().map(|&a| binding.0[a]).collect();
                        e.sort_unstable();
                        e
                    }
                };
                self.var_index[&GroundVariableId {
                    attribute: attr,
                    entity,
                }]
            })
            .collect()
    }

    pub fn ground_feature_value(
        &self,
        feature: usize,
        binding: &Binding,
        assignment: &Assignment,
    ) -> f64 {
        let values: Vec<usize> = self
            .ground_scope(feature, binding)
            .into_iter()
            .map(|v| assignment.0[v])
            .collect();
        self.scheme.feature(feature).value_at(&values)
    }

    /// `F_i(ω)`: the sum of the feature's ground values over its bindings.
    pub fn total_feature_count(
        &self,
        feature: usize,
        assignment: &Assignment,
        mode: BindingMode,
    ) -> f64 {
        self.enumerate_bindings(feature, mode)
            .iter()
            .map(|b| self.ground_feature_value(feature, b, assignment))
            .sum()
    }

    pub fn feature_counts(&self, assignment: &Assignment, mode: BindingMode) -> Vec<f64> {
        (0..self.scheme.features().len())
            .map(|f| self.total_feature_count(f, assignment, mode))
            .collect()
    }

    /// `Σ θ_i F_i(ω)`, without subtracting `log Z`.
    pub fn unnormalized_log_density(
        &self,
        theta: &[f64],
        assignment: &Assignment,
        mode: BindingMode,
    ) -> f64 {
        theta
            .iter()
            .zip(self.feature_counts(assignment, mode))
            .map(|(t, c)| t * c)
            .sum()
    }
}

fn is_canonical(f: &ResolvedFeature, binding: &[usize]) -> bool {
    f.symmetries.iter().all(|s| {
        let permuted = s.args.iter().map(|&a| binding[a]);
        binding.iter().copied().cmp(permuted) != std::cmp::Ordering::Greater
    })
}

/// Complex entities of the named type in the instantiation.
pub fn enumerate_entities(
    scheme: &ValidScheme,
    inst: &EntityInstantiation,
    type_name: &str,
) -> Result<Vec<EntityKey>> {
    let ty = scheme
        .type_index(type_name)
        .ok_or_else(|| Error::input(format!("unknown type `{type_name}`")))?;
    Ok(Universe::new(scheme, inst)?.entities_of(ty))
}
