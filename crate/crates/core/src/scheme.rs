//! Template-level model declarations: entity types, attributes, template
//! features with explicit function tables, and the shared parameter vector.
//!
//! A [`Scheme`] is the plain declarative document as read from JSON. It is
//! checked by [`validate_scheme`] and compiled into a [`ValidScheme`], which
//! resolves every name to an index and precomputes each feature's argument
//! symmetry group.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TypeKind {
    Basic,
    OrderedTuple,
    UnorderedTuple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityType {
    pub name: String,
    pub kind: TypeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<String>,
    /// Unordered tuples only: admit tuples that repeat an entity, such as
    /// `[v1, v1]`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_repeats: bool,
}

impl EntityType {
    pub fn basic(name: &str) -> Self {
        EntityType {
            name: name.to_string(),
            kind: TypeKind::Basic,
            components: Vec::new(),
            allow_repeats: false,
        }
    }

    pub fn tuple(name: &str, kind: TypeKind, components: &[&str]) -> Self {
        EntityType {
            name: name.to_string(),
            kind,
            components: components.iter().map(|c| c.to_string()).collect(),
            allow_repeats: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateAttribute {
    pub name: String,
    pub subject: String,
    pub domain: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argument {
    pub name: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormalEntity {
    /// An argument name, or `ordered(a,b,...)` / `unordered(a,b,...)`.
    pub expr: String,
    #[serde(rename = "type")]
    pub type_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateFeature {
    pub name: String,
    pub arguments: Vec<Argument>,
    pub formal_entities: Vec<FormalEntity>,
    pub attribute_refs: Vec<String>,
    /// Row-major over the attribute domains, first attribute slowest.
    pub table: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub types: Vec<EntityType>,
    pub attributes: Vec<TemplateAttribute>,
    pub features: Vec<TemplateFeature>,
}

/// The on-disk model document: a scheme plus `theta`. A missing `theta`
/// means all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(flatten)]
    pub scheme: Scheme,
    #[serde(default)]
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// What the rule applies to, e.g. `feature F_t` or `attribute Exist`.
    pub subject: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: String, rule: impl Into<String>) {
        self.violations.push(Violation {
            subject,
            rule: rule.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {v}")?;
        }
        Ok(())
    }
}

/// A formal entity with argument names resolved to argument positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EntityExpr {
    Arg(usize),
    Ordered(Vec<usize>),
    Unordered(Vec<usize>),
}

impl EntityExpr {
    pub fn args(&self) -> &[usize] {
        match self {
            EntityExpr::Arg(a) => std::slice::from_ref(a),
            EntityExpr::Ordered(v) | EntityExpr::Unordered(v) => v,
        }
    }

    fn map_args(&self, perm: &[usize]) -> EntityExpr {
        match self {
            EntityExpr::Arg(a) => EntityExpr::Arg(perm[*a]),
            EntityExpr::Ordered(v) => EntityExpr::Ordered(v.iter().map(|&a| perm[a]).collect()),
            EntityExpr::Unordered(v) => {
                EntityExpr::Unordered(v.iter().map(|&a| perm[a]).collect())
            }
        }
    }

    /// Equality of the denoted complex entity: unordered tuples compare as
    /// multisets.
    fn same_entity(&self, other: &EntityExpr) -> bool {
        match (self, other) {
            (EntityExpr::Unordered(a), EntityExpr::Unordered(b)) => {
                let mut a = a.clone();
                let mut b = b.clone();
                a.sort_unstable();
                b.sort_unstable();
                a == b
            }
            _ => self == other,
        }
    }
}

fn parse_expr(expr: &str, args: &HashMap<&str, usize>) -> std::result::Result<EntityExpr, String> {
    let expr = expr.trim();
    let lookup = |name: &str| {
        args.get(name.trim())
            .copied()
            .ok_or_else(|| format!("formal entity refers to unknown argument `{}`", name.trim()))
    };
    for (prefix, ordered) in [("ordered(", true), ("unordered(", false)] {
        if let Some(rest) = expr.strip_prefix(prefix) {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| format!("malformed formal entity `{expr}`"))?;
            let items = inner
                .split(',')
                .map(lookup)
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if items.is_empty() {
                return Err(format!("empty tuple in formal entity `{expr}`"));
            }
            return Ok(if ordered {
                EntityExpr::Ordered(items)
            } else {
                EntityExpr::Unordered(items)
            });
        }
    }
    if expr.contains(['(', ')', ',']) {
        return Err(format!("malformed formal entity `{expr}`"));
    }
    lookup(expr).map(EntityExpr::Arg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedType {
    pub kind: TypeKind,
    /// Component type indices (empty for basic types).
    pub components: Vec<usize>,
    pub allow_repeats: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedAttribute {
    pub subject: usize,
    pub domain_size: usize,
}

/// An argument permutation under which a feature's ground instances are
/// unchanged, together with the induced reordering of its formal entities.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Symmetry {
    /// `args[a]` is the argument that takes the place of argument `a`.
    pub args: Vec<usize>,
    /// `slots[i] = j` when argument substitution maps formal entity `i` onto
    /// formal entity `j`.
    pub slots: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedFeature {
    pub arg_types: Vec<usize>,
    pub entities: Vec<EntityExpr>,
    pub entity_types: Vec<usize>,
    pub attributes: Vec<usize>,
    pub dims: Vec<usize>,
    pub strides: Vec<usize>,
    pub table: Vec<f64>,
    pub symmetries: Vec<Symmetry>,
}

impl ResolvedFeature {
    pub fn arity(&self) -> usize {
        self.entities.len()
    }

    pub fn cell(&self, values: &[usize]) -> usize {
        values.iter().zip(&self.strides).map(|(v, s)| v * s).sum()
    }

    pub fn value_at(&self, values: &[usize]) -> f64 {
        self.table[self.cell(values)]
    }

    /// Slot orbits under the symmetry group: `classes[i]` is the smallest
    /// slot that some symmetry maps `i` onto.
    pub fn slot_classes(&self) -> Vec<usize> {
        (0..self.arity())
            .map(|i| self.symmetries.iter().map(|s| s.slots[i]).min().unwrap_or(i))
            .collect()
    }
}

pub(crate) fn strides_for(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

struct Analysis {
    report: ValidationReport,
    types: Vec<ResolvedType>,
    attributes: Vec<ResolvedAttribute>,
    features: Vec<ResolvedFeature>,
}

fn analyze(scheme: &Scheme) -> Analysis {
    let mut report = ValidationReport::default();

    let mut type_index: HashMap<&str, usize> = HashMap::new();
    for (i, t) in scheme.types.iter().enumerate() {
        if type_index.insert(t.name.as_str(), i).is_some() {
            report.push(format!("type {}", t.name), "duplicate type name");
        }
    }
    let is_basic = |name: &str| {
        type_index
            .get(name)
            .map(|&i| scheme.types[i].kind == TypeKind::Basic)
            .unwrap_or(false)
    };

    let mut types = Vec::with_capacity(scheme.types.len());
    for t in &scheme.types {
        let subject = format!("type {}", t.name);
        match t.kind {
            TypeKind::Basic => {
                if !t.components.is_empty() {
                    report.push(subject.clone(), "basic type must not have components");
                }
            }
            TypeKind::OrderedTuple | TypeKind::UnorderedTuple => {
                if t.components.is_empty() {
                    report.push(subject.clone(), "tuple type needs at least one component");
                }
                for c in &t.components {
                    if !type_index.contains_key(c.as_str()) {
                        report.push(subject.clone(), format!("unknown component type `{c}`"));
                    } else if !is_basic(c) {
                        report.push(
                            subject.clone(),
                            format!("component `{c}` is not a basic type"),
                        );
                    }
                }
                if t.kind == TypeKind::UnorderedTuple
                    && t.components.windows(2).any(|w| w[0] != w[1])
                {
                    report.push(
                        subject.clone(),
                        "unordered tuple components must all be the same basic type",
                    );
                }
            }
        }
        if t.allow_repeats && t.kind != TypeKind::UnorderedTuple {
            report.push(subject, "allow_repeats applies to unordered tuples only");
        }
        types.push(ResolvedType {
            kind: t.kind,
            components: t
                .components
                .iter()
                .map(|c| type_index.get(c.as_str()).copied().unwrap_or(usize::MAX))
                .collect(),
            allow_repeats: t.allow_repeats,
        });
    }

    let mut attr_index: HashMap<&str, usize> = HashMap::new();
    let mut attributes = Vec::with_capacity(scheme.attributes.len());
    for (i, a) in scheme.attributes.iter().enumerate() {
        let subject = format!("attribute {}", a.name);
        if attr_index.insert(a.name.as_str(), i).is_some() {
            report.push(subject.clone(), "duplicate attribute name");
        }
        if !type_index.contains_key(a.subject.as_str()) {
            report.push(subject.clone(), format!("unknown subject type `{}`", a.subject));
        }
        if a.domain.len() < 2 {
            report.push(subject.clone(), "domain needs at least two values");
        }
        let distinct: HashSet<&String> = a.domain.iter().collect();
        if distinct.len() != a.domain.len() {
            report.push(subject, "domain labels must be distinct");
        }
        attributes.push(ResolvedAttribute {
            subject: type_index.get(a.subject.as_str()).copied().unwrap_or(usize::MAX),
            domain_size: a.domain.len(),
        });
    }

    let mut feature_names = HashSet::new();
    let mut features = Vec::with_capacity(scheme.features.len());
    for f in &scheme.features {
        let before = report.violations.len();
        let subject = format!("feature {}", f.name);
        if !feature_names.insert(f.name.as_str()) {
            report.push(subject.clone(), "duplicate feature name");
        }

        let mut arg_index = HashMap::new();
        let mut arg_types = Vec::new();
        for (i, arg) in f.arguments.iter().enumerate() {
            if arg_index.insert(arg.name.as_str(), i).is_some() {
                report.push(subject.clone(), format!("duplicate argument `{}`", arg.name));
            }
            match type_index.get(arg.type_name.as_str()) {
                None => report.push(
                    subject.clone(),
                    format!("argument `{}` has unknown type `{}`", arg.name, arg.type_name),
                ),
                Some(_) if !is_basic(&arg.type_name) => report.push(
                    subject.clone(),
                    format!("argument `{}` must have a basic type", arg.name),
                ),
                Some(_) => {}
            }
            arg_types.push(type_index.get(arg.type_name.as_str()).copied().unwrap_or(usize::MAX));
        }

        let mut entities = Vec::new();
        let mut entity_types = Vec::new();
        for fe in &f.formal_entities {
            let expr = match parse_expr(&fe.expr, &arg_index) {
                Ok(e) => e,
                Err(msg) => {
                    report.push(subject.clone(), msg);
                    continue;
                }
            };
            let mut seen = HashSet::new();
            if expr.args().iter().any(|a| !seen.insert(*a)) {
                report.push(
                    subject.clone(),
                    format!(
                        "argument used twice in one formal entity `{}`",
                        fe.expr.trim()
                    ),
                );
            }
            let Some(&ty) = type_index.get(fe.type_name.as_str()) else {
                report.push(
                    subject.clone(),
                    format!("formal entity `{}` has unknown type `{}`", fe.expr, fe.type_name),
                );
                continue;
            };
            let declared = &scheme.types[ty];
            let arg_type_names: Vec<&str> = expr
                .args()
                .iter()
                .map(|&a| f.arguments[a].type_name.as_str())
                .collect();
            let matches = match &expr {
                EntityExpr::Arg(_) => declared.kind == TypeKind::Basic && arg_type_names[0] == declared.name,
                EntityExpr::Ordered(_) => {
                    declared.kind == TypeKind::OrderedTuple
                        && declared.components.iter().map(String::as_str).eq(arg_type_names.iter().copied())
                }
                EntityExpr::Unordered(_) => {
                    declared.kind == TypeKind::UnorderedTuple
                        && declared.components.iter().map(String::as_str).eq(arg_type_names.iter().copied())
                }
            };
            if !matches {
                report.push(
                    subject.clone(),
                    format!(
                        "formal entity `{}` does not construct type `{}`",
                        fe.expr.trim(),
                        fe.type_name
                    ),
                );
            }
            entities.push(expr);
            entity_types.push(ty);
        }

        if f.attribute_refs.len() != f.formal_entities.len() {
            report.push(
                subject.clone(),
                format!(
                    "{} attribute refs for {} formal entities",
                    f.attribute_refs.len(),
                    f.formal_entities.len()
                ),
            );
        }
        let mut attrs = Vec::new();
        let mut dims = Vec::new();
        for (i, name) in f.attribute_refs.iter().enumerate() {
            match attr_index.get(name.as_str()) {
                None => report.push(subject.clone(), format!("unknown attribute `{name}`")),
                Some(&a) => {
                    if let (Some(fe), Some(&ty)) = (f.formal_entities.get(i), type_index.get(scheme.attributes[a].subject.as_str())) {
                        if type_index.get(fe.type_name.as_str()) != Some(&ty) {
                            report.push(
                                subject.clone(),
                                format!(
                                    "attribute `{name}` is over `{}` but formal entity `{}` has type `{}`",
                                    scheme.attributes[a].subject, fe.expr, fe.type_name
                                ),
                            );
                        }
                    }
                    attrs.push(a);
                    dims.push(scheme.attributes[a].domain.len());
                }
            }
        }

        if attrs.len() == f.attribute_refs.len() {
            let expected: usize = dims.iter().product();
            if f.table.len() != expected {
                report.push(
                    subject.clone(),
                    format!("table size mismatch (expected {expected})"),
                );
            }
        }
        if f.table.iter().any(|v| !v.is_finite()) {
            report.push(subject.clone(), "table entries must be finite");
        }

        if report.violations.len() == before {
            for i in 0..entities.len() {
                for j in (i + 1)..entities.len() {
                    if attrs[i] == attrs[j] && entities[i].same_entity(&entities[j]) {
                        report.push(
                            subject.clone(),
                            format!(
                                "formal entities {} and {} denote the same variable",
                                i + 1,
                                j + 1
                            ),
                        );
                    }
                }
            }
        }

        if report.violations.len() == before {
            let strides = strides_for(&dims);
            let mut rf = ResolvedFeature {
                arg_types,
                entities,
                entity_types,
                attributes: attrs,
                dims,
                strides,
                table: f.table.clone(),
                symmetries: Vec::new(),
            };
            rf.symmetries = compute_symmetries(&rf);
            features.push(rf);
        }
    }

    Analysis {
        report,
        types,
        attributes,
        features,
    }
}

/// Returns ok iff every structural invariant of the scheme holds; otherwise
/// lists each violated rule and the item it concerns.
pub fn validate_scheme(scheme: &Scheme) -> ValidationReport {
    analyze(scheme).report
}

/// Lexicographic enumeration of all permutations of `0..k`.
pub(crate) fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

fn compute_symmetries(f: &ResolvedFeature) -> Vec<Symmetry> {
    let k = f.arg_types.len();
    let size = f.table.len();
    let mut out = Vec::new();
    'perm: for perm in permutations(k) {
        if (0..k).any(|a| f.arg_types[perm[a]] != f.arg_types[a]) {
            continue;
        }
        let mut slots = Vec::with_capacity(f.arity());
        let mut taken = vec![false; f.arity()];
        for (i, e) in f.entities.iter().enumerate() {
            let image = e.map_args(&perm);
            let Some(j) = (0..f.arity()).find(|&j| {
                !taken[j] && f.attributes[j] == f.attributes[i] && f.entities[j].same_entity(&image)
            }) else {
                continue 'perm;
            };
            taken[j] = true;
            slots.push(j);
        }
        // The ground feature of binding β∘π reads slot i's value from
        // slot slots[i] of binding β.
        let mut values = vec![0usize; f.arity()];
        let mut permuted = vec![0usize; f.arity()];
        for cell in 0..size {
            let mut rem = cell;
            for (i, s) in f.strides.iter().enumerate() {
                values[i] = rem / s;
                rem %= s;
            }
            for i in 0..f.arity() {
                permuted[i] = values[slots[i]];
            }
            if f.table[cell] != f.value_at(&permuted) {
                continue 'perm;
            }
        }
        out.push(Symmetry { args: perm, slots });
    }
    out
}

/// A scheme that passed validation, with all names resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidScheme {
    scheme: Scheme,
    types: Vec<ResolvedType>,
    attributes: Vec<ResolvedAttribute>,
    features: Vec<ResolvedFeature>,
}

impl ValidScheme {
    pub fn new(scheme: Scheme) -> Result<Self> {
        let analysis = analyze(&scheme);
        if !analysis.report.is_ok() {
            return Err(Error::InvalidScheme(analysis.report));
        }
        Ok(ValidScheme {
            scheme,
            types: analysis.types,
            attributes: analysis.attributes,
            features: analysis.features,
        })
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn types(&self) -> &[ResolvedType] {
        &self.types
    }

    pub fn attributes(&self) -> &[ResolvedAttribute] {
        &self.attributes
    }

    pub fn features(&self) -> &[ResolvedFeature] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &ResolvedFeature {
        &self.features[index]
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.scheme.types.iter().position(|t| t.name == name)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.scheme.attributes.iter().position(|a| a.name == name)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.scheme.features.iter().position(|f| f.name == name)
    }

    pub fn type_name(&self, index: usize) -> &str {
        &self.scheme.types[index].name
    }

    pub fn attribute_name(&self, index: usize) -> &str {
        &self.scheme.attributes[index].name
    }

    pub fn feature_name(&self, index: usize) -> &str {
        &self.scheme.features[index].name
    }

    pub fn domain(&self, attribute: usize) -> &[String] {
        &self.scheme.attributes[attribute].domain
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.scheme.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Table entry for a tuple of domain labels, one per formal entity.
    pub fn feature_value(&self, feature: usize, labels: &[&str]) -> Result<f64> {
        let f = self
            .features
            .get(feature)
            .ok_or_else(|| Error::input(format!("no feature with index {feature}")))?;
        if labels.len() != f.arity() {
            return Err(Error::input(format!(
                "feature {} takes {} values, got {}",
                self.feature_name(feature),
                f.arity(),
                labels.len()
            )));
        }
        let values = labels
            .iter()
            .zip(&f.attributes)
            .map(|(label, &a)| {
                self.domain(a).iter().position(|d| d == label).ok_or_else(|| {
                    Error::input(format!(
                        "`{label}` is not in the domain of attribute {}",
                        self.attribute_name(a)
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(f.value_at(&values))
    }

    /// The argument permutations that leave every ground instance of the
    /// feature unchanged. Always a group containing the identity.
    pub fn argument_symmetries(&self, feature: usize) -> Vec<Vec<usize>> {
        self.features[feature]
            .symmetries
            .iter()
            .map(|s| s.args.clone())
            .collect()
    }
}

/// A validated scheme with one parameter per template feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub scheme: ValidScheme,
    pub theta: Vec<f64>,
}

impl Model {
    pub fn new(scheme: ValidScheme, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != scheme.features().len() {
            return Err(Error::input(format!(
                "theta has {} entries but the scheme has {} features",
                theta.len(),
                scheme.features().len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("theta".into()));
        }
        Ok(Model { scheme, theta })
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        let scheme = ValidScheme::new(doc.scheme)?;
        let theta = if doc.theta.is_empty() {
            vec![0.0; scheme.features().len()]
        } else {
            doc.theta
        };
        Model::new(scheme, theta)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Model::from_document(serde_json::from_str(text)?)
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            scheme: self.scheme.scheme().clone(),
            theta: self.theta.clone(),
        }
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Model::new(self.scheme.clone(), theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, GraphFeature};

    fn chain_scheme() -> ValidScheme {
        fixtures::graph_scheme(&[GraphFeature::Chain])
    }

    #[test]
    fn table_one_scheme_validates() {
        let s = fixtures::graph_scheme(&[GraphFeature::Edge, GraphFeature::Triangle]);
        assert!(validate_scheme(s.scheme()).is_ok());
    }

    #[test]
    fn repeated_argument_in_formal_entity_is_rejected() {
        let mut s = fixtures::graph_scheme(&[GraphFeature::Edge]).scheme().clone();
        s.features[0].formal_entities[0].expr = "unordered(x1,x1)".into();
        let report = validate_scheme(&s);
        assert!(!report.is_ok());
        assert!(report.violations[0]
            .rule
            .starts_with("argument used twice in one formal entity"));
        assert_eq!(report.violations[0].subject, "feature F_e");
    }

    #[test]
    fn table_size_mismatch_is_reported() {
        let mut s = fixtures::graph_scheme(&[GraphFeature::Triangle]).scheme().clone();
        s.features[0].table.truncate(7);
        let report = validate_scheme(&s);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule, "table size mismatch (expected 8)");
    }

    #[test]
    fn structural_violations() {
        let mut s = fixtures::colored_graph_scheme().scheme().clone();
        s.types.push(EntityType::tuple("Bad", TypeKind::UnorderedTuple, &["Tv", "Te"]));
        s.attributes[0].domain = vec!["0".into(), "0".into()];
        s.features[0].attribute_refs[1] = "Nope".into();
        let rules: Vec<String> = validate_scheme(&s)
            .violations
            .into_iter()
            .map(|v| v.rule)
            .collect();
        assert!(rules.iter().any(|r| r.contains("not a basic type")));
        assert!(rules.iter().any(|r| r.contains("same basic type")));
        assert!(rules.iter().any(|r| r == "domain labels must be distinct"));
        assert!(rules.iter().any(|r| r == "unknown attribute `Nope`"));
    }

    #[test]
    fn formal_entity_type_must_match_construction() {
        let mut s = fixtures::graph_scheme(&[GraphFeature::Edge]).scheme().clone();
        s.features[0].formal_entities[0].expr = "ordered(x1,x2)".into();
        let report = validate_scheme(&s);
        assert!(report.violations.iter().any(|v| v.rule.contains("does not construct")));
    }

    #[test]
    fn duplicate_variable_slots_are_rejected() {
        let mut s = fixtures::graph_scheme(&[GraphFeature::Triangle]).scheme().clone();
        s.features[0].formal_entities[1].expr = "unordered(x2,x1)".into();
        let report = validate_scheme(&s);
        assert!(report
            .violations
            .iter()
            .any(|v| v.rule == "formal entities 1 and 2 denote the same variable"));
    }

    #[test]
    fn feature_values_from_tables() {
        let s = fixtures::graph_scheme(&[GraphFeature::Edge, GraphFeature::Triangle]);
        assert_eq!(s.feature_value(1, &["1", "1", "1"]).unwrap(), 1.0);
        assert_eq!(s.feature_value(1, &["1", "1", "0"]).unwrap(), 0.0);
        assert_eq!(s.feature_value(0, &["0"]).unwrap(), 0.0);
        assert_eq!(s.feature_value(0, &["1"]).unwrap(), 1.0);
        assert!(s.feature_value(0, &["1", "1"]).is_err());
        assert!(s.feature_value(0, &["2"]).is_err());
    }

    #[test]
    fn edge_feature_symmetries() {
        let s = fixtures::graph_scheme(&[GraphFeature::Edge]);
        assert_eq!(s.argument_symmetries(0), vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn triangle_feature_is_fully_symmetric() {
        let s = fixtures::graph_scheme(&[GraphFeature::Triangle]);
        assert_eq!(s.argument_symmetries(0), permutations(3));
    }

    #[test]
    fn chain_feature_symmetries_by_brute_force() {
        // Oracle: a permutation is a symmetry iff every ground value agrees
        // between a binding and its permuted binding on every assignment of
        // the three edges among three vertices.
        let s = chain_scheme();
        let edge = |a: usize, b: usize| -> usize {
            match (a.min(b), a.max(b)) {
                (0, 1) => 0,
                (0, 2) => 1,
                _ => 2,
            }
        };
        let f = s.feature(0);
        let ground = |binding: &[usize], omega: usize| -> f64 {
            let z: Vec<usize> = [(0, 1), (0, 2), (1, 2)]
                .iter()
                .map(|&(i, j)| (omega >> edge(binding[i], binding[j])) & 1)
                .collect();
            f.value_at(&z)
        };
        let expected: Vec<Vec<usize>> = permutations(3)
            .into_iter()
            .filter(|p| {
                (0..8).all(|omega| {
                    let beta = [0, 1, 2];
                    let permuted: Vec<usize> = p.iter().map(|&a| beta[a]).collect();
                    ground(&beta, omega) == ground(&permuted, omega)
                })
            })
            .collect();
        assert_eq!(expected, vec![vec![0, 1, 2], vec![1, 0, 2]]);
        assert_eq!(s.argument_symmetries(0), expected);
    }

    #[test]
    fn model_theta_length_is_checked() {
        let s = fixtures::graph_scheme(&[GraphFeature::Edge]);
        assert!(Model::new(s.clone(), vec![0.0, 1.0]).is_err());
        assert!(Model::new(s.clone(), vec![f64::NAN]).is_err());
        assert!(Model::new(s, vec![0.5]).is_ok());
    }

    #[test]
    fn document_round_trip() {
        let m = fixtures::graph_model(&[GraphFeature::Edge, GraphFeature::Triangle], &[0.1, -0.2]);
        let text = serde_json::to_string(&m.to_document()).unwrap();
        assert_eq!(Model::from_json(&text).unwrap(), m);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["types", "attributes", "features", "theta"] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
        let f = &value["features"][0];
        for key in ["arguments", "formal_entities", "attribute_refs", "table"] {
            assert!(f.get(key).is_some(), "missing feature key {key}");
        }
    }

    fn compose(p: &[usize], q: &[usize]) -> Vec<usize> {
        q.iter().map(|&a| p[a]).collect()
    }

    fn random_symmetric_table(seed: u64, k: usize) -> Vec<f64> {
        // Tables built from a few random orbit-invariant summaries so that
        // nontrivial symmetry groups actually occur.
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) % 3
        };
        let (a, b, c) = (next() as f64, next() as f64, next() as f64);
        let flag = next();
        (0..1usize << k)
            .map(|cell| {
                let ones = cell.count_ones() as f64;
                let first = (cell >> (k - 1)) & 1;
                if flag == 0 {
                    a * ones
                } else {
                    a * ones + b * first as f64 + c * (cell & 1) as f64
                }
            })
            .collect()
    }

    proptest::proptest! {
        #[test]
        fn symmetries_form_a_group(seed in 0u64..500, k in 2usize..5) {
            // Feature over all pairs of k vertex arguments, each pair an edge.
            let pairs: Vec<(usize, usize)> = (0..k)
                .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
                .take(4)
                .collect();
            let mut s = fixtures::graph_scheme(&[]).scheme().clone();
            s.features.push(TemplateFeature {
                name: "F".into(),
                arguments: (0..k).map(|i| Argument { name: format!("x{}", i + 1), type_name: "Tv".into() }).collect(),
                formal_entities: pairs.iter().map(|(i, j)| FormalEntity { expr: format!("unordered(x{},x{})", i + 1, j + 1), type_name: "Te".into() }).collect(),
                attribute_refs: vec!["Exist".into(); pairs.len()],
                table: random_symmetric_table(seed, pairs.len()),
            });
            let s = ValidScheme::new(s).unwrap();
            let group = s.argument_symmetries(0);
            let set: HashSet<Vec<usize>> = group.iter().cloned().collect();
            proptest::prop_assert!(set.contains(&(0..k).collect::<Vec<_>>()));
            for p in &group {
                let mut inv = vec![0; k];
                for (i, &v) in p.iter().enumerate() { inv[v] = i; }
                proptest::prop_assert!(set.contains(&inv));
                for q in &group {
                    proptest::prop_assert!(set.contains(&compose(p, q)));
                }
            }
        }

        #[test]
        fn validation_is_order_independent(seed in 0u64..64) {
            let mut s = fixtures::colored_graph_scheme().scheme().clone();
            s.features.push(s.features[0].clone());
            s.features[2].name = "F_dup".into();
            if seed % 2 == 0 {
                s.features[2].table.pop();
            }
            let ok = validate_scheme(&s).is_ok();
            let mut r = s.clone();
            r.features.rotate_left((seed % 3) as usize);
            proptest::prop_assert_eq!(validate_scheme(&r).is_ok(), ok);
            proptest::prop_assert_eq!(validate_scheme(&r).violations.len(), validate_scheme(&s).violations.len());
        }
    }
}
