//! Ready-made schemes and instantiations: the undirected graph scheme with
//! edge, triangle and open-chain features, a colored-graph scheme, and a
//! four-variable chain whose factor graph is a tree.

use crate::instantiation::{EntityDecl, EntityInstantiation};
use crate::scheme::{
    Argument, EntityType, FormalEntity, Model, Scheme, TemplateAttribute, TemplateFeature,
    TypeKind, ValidScheme,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFeature {
    /// `F_e`: indicator that an edge is present.
    Edge,
    /// `F_t`: all three edges among three vertices present.
    Triangle,
    /// `F_c`: open chain, `[x1,x2]` absent while `[x1,x3]` and `[x2,x3]` are
    /// present.
    Chain,
}

impl GraphFeature {
    pub fn name(self) -> &'static str {
        match self {
            GraphFeature::Edge => "F_e",
            GraphFeature::Triangle => "F_t",
            GraphFeature::Chain => "F_c",
        }
    }
}

fn args(names: &[&str], ty: &str) -> Vec<Argument> {
    names
        .iter()
        .map(|n| Argument {
            name: n.to_string(),
            type_name: ty.to_string(),
        })
        .collect()
}

fn edge_entity(a: &str, b: &str) -> FormalEntity {
    FormalEntity {
        expr: format!("unordered({a},{b})"),
        type_name: "Te".into(),
    }
}

fn indicator(dims: &[usize], hit: &[usize]) -> Vec<f64> {
    let strides = crate::scheme::strides_for(dims);
    let mut table = vec![0.0; dims.iter().product()];
    table[hit.iter().zip(&strides).map(|(v, s)| v * s).sum::<usize>()] = 1.0;
    table
}

fn graph_feature(kind: GraphFeature) -> TemplateFeature {
    let triple = [("x1", "x2"), ("x1", "x3"), ("x2", "x3")];
    match kind {
        GraphFeature::Edge => TemplateFeature {
            name: kind.name().into(),
            arguments: args(&["x1", "x2"], "Tv"),
            formal_entities: vec![edge_entity("x1", "x2")],
            attribute_refs: vec!["Exist".into()],
            table: vec![0.0, 1.0],
        },
        GraphFeature::Triangle | GraphFeature::Chain => TemplateFeature {
            name: kind.name().into(),
            arguments: args(&["x1", "x2", "x3"], "Tv"),
            formal_entities: triple.iter().map(|(a, b)| edge_entity(a, b)).collect(),
            attribute_refs: vec!["Exist".into(); 3],
            table: if kind == GraphFeature::Triangle {
                indicator(&[2, 2, 2], &[1, 1, 1])
            } else {
                indicator(&[2, 2, 2], &[0, 1, 1])
            },
        },
    }
}

fn graph_types() -> Vec<EntityType> {
    vec![
        EntityType::basic("Tv"),
        EntityType::tuple("Te", TypeKind::UnorderedTuple, &["Tv", "Tv"]),
    ]
}

fn exist_attribute() -> TemplateAttribute {
    TemplateAttribute {
        name: "Exist".into(),
        subject: "Te".into(),
        domain: vec!["0".into(), "1".into()],
    }
}

/// Vertices, undirected edges, a binary `Exist` attribute on edges, and the
/// requested features in order.
pub fn graph_scheme(features: &[GraphFeature]) -> ValidScheme {
    ValidScheme::new(Scheme {
        types: graph_types(),
        attributes: vec![exist_attribute()],
        features: features.iter().map(|&f| graph_feature(f)).collect(),
    })
    .expect("graph scheme is valid")
}

pub fn graph_model(features: &[GraphFeature], theta: &[f64]) -> Model {
    Model::new(graph_scheme(features), theta.to_vec()).expect("theta matches features")
}

/// Graph scheme plus a three-valued `Color` on vertices, a co-colorization
/// feature over an edge and its two endpoint colors, and the triangle
/// feature.
pub fn colored_graph_scheme() -> ValidScheme {
    let colors = ["red", "green", "blue"];
    let mut co_color = vec![0.0; 2 * 3 * 3];
    for c in 0..3 {
        co_color[9 + c * 3 + c] = 1.0;
    }
    ValidScheme::new(Scheme {
        types: graph_types(),
        attributes: vec![
            exist_attribute(),
            TemplateAttribute {
                name: "Color".into(),
                subject: "Tv".into(),
                domain: colors.iter().map(|c| c.to_string()).collect(),
            },
        ],
        features: vec![
            TemplateFeature {
                name: "F_cc".into(),
                arguments: args(&["x1", "x2"], "Tv"),
                formal_entities: vec![
                    edge_entity("x1", "x2"),
                    FormalEntity {
                        expr: "x1".into(),
                        type_name: "Tv".into(),
                    },
                    FormalEntity {
                        expr: "x2".into(),
                        type_name: "Tv".into(),
                    },
                ],
                attribute_refs: vec!["Exist".into(), "Color".into(), "Color".into()],
                table: co_color,
            },
            graph_feature(GraphFeature::Triangle),
        ],
    })
    .expect("colored graph scheme is valid")
}

/// Four basic types with one entity each and pairwise features between
/// consecutive types, so every instantiation is the chain A - B - C - D.
/// `tables` holds three 2x2 pairwise tables and four unary tables.
pub fn chain_scheme(pairwise: [[f64; 4]; 3], unary: [[f64; 2]; 4]) -> ValidScheme {
    let names = ["A", "B", "C", "D"];
    let mut features = Vec::new();
    for (i, table) in pairwise.iter().enumerate() {
        let (a, b) = (names[i], names[i + 1]);
        features.push(TemplateFeature {
            name: format!("P_{a}{b}"),
            arguments: vec![
                Argument {
                    name: "x".into(),
                    type_name: a.into(),
                },
                Argument {
                    name: "y".into(),
                    type_name: b.into(),
                },
            ],
            formal_entities: vec![
                FormalEntity {
                    expr: "x".into(),
                    type_name: a.into(),
                },
                FormalEntity {
                    expr: "y".into(),
                    type_name: b.into(),
                },
            ],
            attribute_refs: vec![format!("S_{a}"), format!("S_{b}")],
            table: table.to_vec(),
        });
    }
    for (name, table) in names.iter().zip(unary) {
        features.push(TemplateFeature {
            name: format!("U_{name}"),
            arguments: vec![Argument {
                name: "x".into(),
                type_name: name.to_string(),
            }],
            formal_entities: vec![FormalEntity {
                expr: "x".into(),
                type_name: name.to_string(),
            }],
            attribute_refs: vec![format!("S_{name}")],
            table: table.to_vec(),
        });
    }
    ValidScheme::new(Scheme {
        types: names.iter().map(|n| EntityType::basic(n)).collect(),
        attributes: names
            .iter()
            .map(|n| TemplateAttribute {
                name: format!("S_{n}"),
                subject: n.to_string(),
                domain: vec!["0".into(), "1".into()],
            })
            .collect(),
        features,
    })
    .expect("chain scheme is valid")
}

/// One entity of each chain type.
pub fn chain_instance() -> EntityInstantiation {
    EntityInstantiation {
        entities: ["A", "B", "C", "D"]
            .iter()
            .map(|t| EntityDecl {
                name: t.to_lowercase(),
                type_name: t.to_string(),
            })
            .collect(),
    }
}

/// `n` vertices `v1..vn` of type `Tv`.
pub fn vertices(n: usize) -> EntityInstantiation {
    EntityInstantiation {
        entities: (1..=n)
            .map(|i| EntityDecl {
                name: format!("v{i}"),
                type_name: "Tv".into(),
            })
            .collect(),
    }
}

/// The tree fixture with fixed tables and unit weights.
pub fn tree_chain_model() -> Model {
    Model::new(
        chain_scheme(
            [[0.3, -0.2, 0.1, 0.9], [-0.5, 0.4, 0.0, 0.2], [1.1, -0.3, 0.2, 0.5]],
            [[0.2, -0.1], [0.0, 0.4], [-0.6, 0.3], [0.1, 0.1]],
        ),
        vec![1.0; 7],
    )
    .expect("seven features")
}

/// Models shipped as JSON under `fixtures/`, by file stem.
pub fn bundled_models() -> Vec<(&'static str, Model)> {
    use GraphFeature::*;
    vec![
        ("graph", graph_model(&[Edge, Triangle], &[0.0, 0.0])),
        ("graph_chain", graph_model(&[Triangle, Chain], &[0.0, 0.0])),
        (
            "colored_graph",
            Model::new(colored_graph_scheme(), vec![0.0, 0.0]).expect("two features"),
        ),
        ("tree_chain", tree_chain_model()),
    ]
}

/// Instantiations shipped as JSON under `fixtures/`, by file stem.
pub fn bundled_instances() -> Vec<(String, EntityInstantiation)> {
    let mut out: Vec<(String, EntityInstantiation)> = [3, 4, 5, 6, 7, 20, 100]
        .iter()
        .map(|&n| (format!("vertices_{n}"), vertices(n)))
        .collect();
    out.push(("tree_chain_instance".into(), chain_instance()));
    out
}
