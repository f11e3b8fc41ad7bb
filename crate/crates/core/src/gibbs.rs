//! Single-site Gibbs sampling over the ground variables.
//!
//! The pseudo-random source is ChaCha8 seeded from a 64-bit integer, so a
//! run is fully determined by its configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground::GroundFactorGraph;
use crate::instantiation::Assignment;
use crate::math::softmax;
use crate::scheme::strides_for;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scan {
    /// Every sweep visits the variables in index order.
    #[default]
    Systematic,
    /// Every sweep makes as many updates as there are variables, each at a
    /// uniformly drawn variable.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Sweeps discarded before the first retained sample.
    pub burn_in: usize,
    /// Sweeps between retained samples; 0 behaves like 1.
    pub thinning: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub scan: Scan,
    /// Keep every retained assignment, not only the marginal tallies.
    pub keep_samples: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            burn_in: 1000,
            thinning: 1,
            n_samples: 10_000,
            seed: 0,
            scan: Scan::Systematic,
            keep_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsRun {
    pub samples: Vec<Assignment>,
    /// Empirical frequency of each value over the retained samples.
    pub marginals: Vec<Vec<f64>>,
}

/// Full conditional log-weights need each factor's cell with one slot
/// left open.
struct Local<'a> {
    graph: &'a GroundFactorGraph,
    strides: Vec<Vec<usize>>,
}

impl<'a> Local<'a> {
    fn new(graph: &'a GroundFactorGraph) -> Self {
        let templates = (0..graph.num_factors())
            .map(|f| graph.factor_template(f))
            .max()
            .map_or(0, |t| t + 1);
        Local {
            graph,
            strides: (0..templates).map(|t| strides_for(graph.dims(t))).collect(),
        }
    }

    fn conditional(&self, values: &[usize], var: usize) -> Vec<f64> {
        let g = self.graph;
        let mut logits = vec![0.0; g.domain_size(var)];
        for &e in g.variable_edges(var) {
            let f = g.edge_factor(e);
            let t = g.factor_template(f);
            let strides = &self.strides[t];
            let slot = g.edge_slot(e);
            let base: usize = g
                .factor_scope(f)
                .iter()
                .enumerate()
                .filter(|&(s, _)| s != slot)
                .map(|(s, &v)| values[v] * strides[s])
                .sum();
            let table = g.log_table(t);
            for (x, l) in logits.iter_mut().enumerate() {
                *l += table[base + x * strides[slot]];
            }
        }
        softmax(&logits)
    }
}

/// Distribution of one variable given all others, from the factors in
/// its neighborhood only.
pub fn gibbs_conditional(graph: &GroundFactorGraph, assignment: &Assignment, var: usize) -> Vec<f64> {
    Local::new(graph).conditional(&assignment.0, var)
}

fn draw(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (x, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return x;
        }
    }
    probs.len() - 1
}

/// Runs one chain from the all-first-label assignment.
pub fn run_gibbs(graph: &GroundFactorGraph, config: &GibbsConfig) -> Result<GibbsRun> {
    if config.n_samples == 0 {
        return Err(Error::input("n_samples must be >= 1"));
    }
    let local = Local::new(graph);
    let n = graph.num_variables();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut values = vec![0usize; n];
    let mut tallies: Vec<Vec<u64>> = (0..n).map(|v| vec![0; graph.domain_size(v)]).collect();
    let mut samples = Vec::new();
    let sweep = |values: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        for i in 0..n {
            let v = match config.scan {
                Scan::Systematic => i,
                Scan::Random => rng.gen_range(0..n),
            };
            let p = local.conditional(values, v);
            values[v] = draw(&p, rng);
        }
    };
    for _ in 0..config.burn_in {
        sweep(&mut values, &mut rng);
    }
    let thinning = config.thinning.max(1);
    for _ in 0..config.n_samples {
        for _ in 0..thinning {
            sweep(&mut values, &mut rng);
        }
        for (t, &x) in tallies.iter_mut().zip(&values) {
            t[x] += 1;
        }
        if config.keep_samples {
            samples.push(Assignment(values.clone()));
        }
    }
    let marginals = tallies
        .iter()
        .map(|t| t.iter().map(|&c| c as f64 / config.n_samples as f64).collect())
        .collect();
    Ok(GibbsRun { samples, marginals })
}
