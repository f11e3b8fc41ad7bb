//! Shared setup for the inference benchmarks.

use relmrf::fixtures::{self, GraphFeature};
use relmrf::{Model, Universe};

/// Edge and triangle features on `n` vertices with mildly coupled weights.
pub fn graph_case(n: usize) -> (Model, Universe) {
    let model = fixtures::graph_model(&[GraphFeature::Edge, GraphFeature::Triangle], &[-0.3, 0.05]);
    let universe = Universe::new(&model.scheme, &fixtures::vertices(n)).expect("fixture grounds");
    (model, universe)
}
