//! Exact inference by enumerating every joint assignment.
//!
//! The unnormalized density depends on an assignment only through how many
//! ground factors of each feature sit in each table cell. The oracle walks
//! the state space once, grouping states by that occupancy histogram and
//! counting, per group, how often each variable takes each value. Inference
//! for any parameter vector is then a weighted sum over groups, with
//! integer per-group counts. That keeps marginals of interchangeable
//! variables bit-identical.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::instantiation::{Assignment, BindingMode, Universe};
use crate::math::log_sum_exp;

pub const DEFAULT_STATE_CAP: u64 = 1 << 24;

/// Upper bound on stored `(group, variable, value)` counters.
const MAX_COUNTERS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub log_partition: f64,
    pub variable_marginals: Vec<Vec<f64>>,
    /// `E_θ[F_i]` per template feature.
    pub expected_counts: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExactOracle {
    num_features: usize,
    num_states: u64,
    domains: Vec<usize>,
    var_offset: Vec<usize>,
    /// Per group: total feature values `F_i`, row-major by feature.
    group_features: Vec<f64>,
    group_states: Vec<u64>,
    /// Per group: number of states with variable `v` at value `x`.
    group_values: Vec<u64>,
}

struct Adjacency {
    factor: usize,
    stride: usize,
}

/// Incremental occupancy bookkeeping for an odometer walk.
struct Occupancy {
    cell_offset: Vec<usize>,
    factor_feature: Vec<usize>,
    factor_cell: Vec<usize>,
    adjacency: Vec<Vec<Adjacency>>,
    histogram: Vec<u32>,
}

impl Occupancy {
    fn new(universe: &Universe, mode: BindingMode) -> Self {
        let scheme = universe.scheme();
        let mut cell_offset = vec![0];
        let mut factor_feature = Vec::new();
        let mut adjacency: Vec<Vec<Adjacency>> =
            (0..universe.num_variables()).map(|_| Vec::new()).collect();
        let mut histogram = Vec::new();
        for (fi, f) in scheme.features().iter().enumerate() {
            let start = histogram.len();
            histogram.resize(start + f.table.len(), 0);
            cell_offset.push(histogram.len());
            for b in universe.enumerate_bindings(fi, mode) {
                let factor = factor_feature.len();
                factor_feature.push(fi);
                histogram[start] += 1;
                for (slot, v) in universe.ground_scope(fi, &b).into_iter().enumerate() {
                    adjacency[v].push(Adjacency {
                        factor,
                        stride: f.strides[slot],
                    });
                }
            }
        }
        Occupancy {
            cell_offset,
            factor_cell: vec![0; factor_feature.len()],
            factor_feature,
            adjacency,
            histogram,
        }
    }

    fn change(&mut self, var: usize, old: usize, new: usize) {
        for adj in &self.adjacency[var] {
            let base = self.cell_offset[self.factor_feature[adj.factor]];
            let cell = &mut self.factor_cell[adj.factor];
            self.histogram[base + *cell] -= 1;
            *cell = *cell + new * adj.stride - old * adj.stride;
            self.histogram[base + *cell] += 1;
        }
    }
}

/// Steps `values` to the next assignment, variable 0 fastest. Returns false
/// after the last one.
fn next_assignment(values: &mut [usize], domains: &[usize], occ: &mut Occupancy) -> bool {
    for v in 0..values.len() {
        let old = values[v];
        let new = if old + 1 < domains[v] { old + 1 } else { 0 };
        occ.change(v, old, new);
        values[v] = new;
        if new != 0 {
            return true;
        }
    }
    false
}

impl ExactOracle {
    pub fn new(universe: &Universe, mode: BindingMode) -> Result<Self> {
        Self::with_cap(universe, mode, DEFAULT_STATE_CAP)
    }

    /// Enumerates the state space once. Refuses when it holds more than
    /// `cap` joint assignments.
    pub fn with_cap(universe: &Universe, mode: BindingMode, cap: u64) -> Result<Self> {
        let domains = universe.domain_sizes();
        let log2_states: f64 = domains.iter().map(|&d| (d as f64).log2()).sum();
        let num_states = domains
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .filter(|&s| s <= cap)
            .ok_or(Error::StateSpaceTooLarge {
                log2_states,
                cap,
                variables: domains.len(),
            })?;
        let scheme = universe.scheme();
        let num_features = scheme.features().len();
        let mut var_offset = vec![0];
        for &d in &domains {
            var_offset.push(var_offset.last().unwrap() + d);
        }
        let counters = *var_offset.last().unwrap();

        let mut occ = Occupancy::new(universe, mode);
        let mut group_of: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut group_states: Vec<u64> = Vec::new();
        let mut group_values: Vec<u64> = Vec::new();
        let mut group_features: Vec<f64> = Vec::new();
        let mut values = vec![0usize; domains.len()];
        if num_states > 0 {
            loop {
                let g = match group_of.get(occ.histogram.as_slice()) {
                    Some(&g) => g,
                    None => {
                        let g = group_states.len();
                        if (g + 1) * counters.max(1) > MAX_COUNTERS {
                            return Err(Error::Overflow(
                                "too many distinct occupancy patterns for exact inference".into(),
                            ));
                        }
                        group_of.insert(occ.histogram.clone(), g);
                        group_states.push(0);
                        group_values.resize(group_values.len() + counters, 0);
                        for (fi, f) in scheme.features().iter().enumerate() {
                            let hist = &occ.histogram[occ.cell_offset[fi]..occ.cell_offset[fi + 1]];
                            group_features.push(
                                hist.iter().zip(&f.table).map(|(&h, &t)| f64::from(h) * t).sum(),
                            );
                        }
                        g
                    }
                };
                group_states[g] += 1;
                let row = &mut group_values[g * counters..(g + 1) * counters];
                for (v, &x) in values.iter().enumerate() {
                    row[var_offset[v] + x] += 1;
                }
                if !next_assignment(&mut values, &domains, &mut occ) {
                    break;
                }
            }
        }
        Ok(ExactOracle {
            num_features,
            num_states,
            domains,
            var_offset,
            group_features,
            group_states,
            group_values,
        })
    }

    pub fn num_states(&self) -> u64 {
        self.num_states
    }

    /// Number of distinct occupancy patterns found.
    pub fn num_groups(&self) -> usize {
        self.group_states.len()
    }

    fn group_log_weights(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.num_features {
            return Err(Error::input(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                self.num_features
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("theta".into()));
        }
        Ok((0..self.group_states.len())
            .map(|g| {
                self.group_features[g * self.num_features..(g + 1) * self.num_features]
                    .iter()
                    .zip(theta)
                    .map(|(v, t)| v * t)
                    .sum()
            })
            .collect())
    }

    pub fn log_partition(&self, theta: &[f64]) -> Result<f64> {
        let w = self.group_log_weights(theta)?;
        let terms: Vec<f64> = w
            .iter()
            .zip(&self.group_states)
            .map(|(w, &c)| w + (c as f64).ln())
            .collect();
        Ok(log_sum_exp(&terms))
    }

    pub fn infer(&self, theta: &[f64]) -> Result<ExactResult> {
        let log_weights = self.group_log_weights(theta)?;
        let log_partition = self.log_partition(theta)?;
        // Probability of a single state in each group.
        let p: Vec<f64> = log_weights.iter().map(|w| (w - log_partition).exp()).collect();
        let mut expected_counts = vec![0.0; self.num_features];
        for (g, (&pg, &count)) in p.iter().zip(&self.group_states).enumerate() {
            let mass = pg * count as f64;
            for (e, f) in expected_counts
                .iter_mut()
                .zip(&self.group_features[g * self.num_features..(g + 1) * self.num_features])
            {
                *e += mass * f;
            }
        }
        let counters = *self.var_offset.last().unwrap();
        let mut flat = vec![0.0; counters];
        for (g, &pg) in p.iter().enumerate() {
            for (acc, &c) in flat
                .iter_mut()
                .zip(&self.group_values[g * counters..(g + 1) * counters])
            {
                *acc += pg * c as f64;
            }
        }
        let variable_marginals = (0..self.domains.len())
            .map(|v| {
                let m = &flat[self.var_offset[v]..self.var_offset[v + 1]];
                let total: f64 = m.iter().sum();
                m.iter().map(|x| x / total).collect()
            })
            .collect();
        Ok(ExactResult {
            log_partition,
            variable_marginals,
            expected_counts,
        })
    }

    /// `Σ_d θ·F(ω_d) − |D| ln Z` given the summed feature counts of the data.
    pub fn log_likelihood_from_counts(
        &self,
        theta: &[f64],
        count_sums: &[f64],
        num_samples: usize,
    ) -> Result<f64> {
        if num_samples == 0 {
            return Ok(0.0);
        }
        let fit: f64 = theta.iter().zip(count_sums).map(|(t, c)| t * c).sum();
        Ok(fit - num_samples as f64 * self.log_partition(theta)?)
    }
}

/// Exact log-likelihood of a data set.
pub fn exact_log_likelihood(
    oracle: &ExactOracle,
    universe: &Universe,
    theta: &[f64],
    data: &[Assignment],
    mode: BindingMode,
) -> Result<f64> {
    let mut sums = vec![0.0; theta.len()];
    for omega in data {
        for (s, c) in sums.iter_mut().zip(universe.feature_counts(omega, mode)) {
            *s += c;
        }
    }
    oracle.log_likelihood_from_counts(theta, &sums, data.len())
}
