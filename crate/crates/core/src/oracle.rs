//! Exact Bayesian posterior over causal structures by enumerating every
//! world (mask, couplings, biases) for small `n`.

use crate::error::{Error, Result};
use crate::harness::edge_accuracy;
use crate::scm::{sample_log_likelihood, CausalWorld, InterventionSample, DEFAULT_BETA};

pub const MAX_NODES: usize = 4;

/// Every world for a given `n`, with its prior log-probability.
#[derive(Clone, Debug)]
pub struct WorldEnumeration {
    pub n: usize,
    pub p_edge: f64,
    pub worlds: Vec<(CausalWorld, f64)>,
}

impl WorldEnumeration {
    pub fn len(&self) -> usize {
        self.worlds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.worlds.is_empty()
    }
}

/// Posterior probabilities of the strictly lower-triangular masks, in
/// enumeration order.
#[derive(Clone, Debug)]
pub struct StructurePosterior {
    pub n: usize,
    pub masks: Vec<(Vec<bool>, f64)>,
}

fn lower_positions(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect()
}

fn mask_from_bits(n: usize, bits: u64) -> Vec<bool> {
    let mut mask = vec![false; n * n];
    for (b, (i, j)) in lower_positions(n).into_iter().enumerate() {
        mask[i * n + j] = bits >> b & 1 == 1;
    }
    mask
}

fn bias_choices(k: i32) -> Vec<i32> {
    if k == 1 {
        vec![0]
    } else {
        vec![1 - k, k - 1]
    }
}

/// Number of worlds, `Σ_M 2^{|E|} Π_i |B_i|`, computed from in-degrees only.
pub fn closed_form_count(n: usize) -> u64 {
    let slots = n * (n - 1) / 2;
    (0..1u64 << slots)
        .map(|bits| {
            let mask = mask_from_bits(n, bits);
            let edges = mask.iter().filter(|&&m| m).count() as u32;
            let biases: u64 = (0..n)
                .map(|i| if mask[i * n..i * n + n].iter().filter(|&&m| m).count() == 1 { 1 } else { 2 })
                .product();
            (1u64 << edges) * biases
        })
        .sum()
}

pub fn enumerate_worlds(n: usize, p_edge: f64) -> Result<WorldEnumeration> {
    enumerate_worlds_with_beta(n, p_edge, DEFAULT_BETA)
}

pub fn enumerate_worlds_with_beta(n: usize, p_edge: f64, beta: f64) -> Result<WorldEnumeration> {
    if n > MAX_NODES {
        return Err(Error::EnumerationTooLarge(n));
    }
    if n < 2 {
        return Err(Error::InvalidConfig(format!("node count must be at least 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&p_edge) {
        return Err(Error::InvalidConfig(format!("edge probability {p_edge} outside [0, 1]")));
    }
    let positions = lower_positions(n);
    let mut worlds = Vec::new();
    for bits in 0..1u64 << positions.len() {
        let mask = mask_from_bits(n, bits);
        let edges: Vec<usize> = positions
            .iter()
            .map(|&(i, j)| i * n + j)
            .filter(|&p| mask[p])
            .collect();
        let in_deg: Vec<i32> = (0..n)
            .map(|i| mask[i * n..i * n + n].iter().filter(|&&m| m).count() as i32)
            .collect();
        let choices: Vec<Vec<i32>> = in_deg.iter().map(|&k| bias_choices(k)).collect();
        let n_bias: usize = choices.iter().map(Vec::len).product();
        let structure_lp: f64 = positions
            .iter()
            .map(|&(i, j)| if mask[i * n + j] { p_edge.ln() } else { (1.0 - p_edge).ln() })
            .sum();
        let lp = structure_lp - (edges.len() as f64) * 2f64.ln() - (n_bias as f64).ln();
        for u_bits in 0..1u64 << edges.len() {
            let mut coupling = vec![0i8; n * n];
            for (b, &p) in edges.iter().enumerate() {
                coupling[p] = if u_bits >> b & 1 == 1 { -1 } else { 1 };
            }
            for mut idx in 0..n_bias {
                let mut bias = vec![0i32; n];
                for (i, c) in choices.iter().enumerate() {
                    bias[i] = c[idx % c.len()];
                    idx /= c.len();
                }
                let world = CausalWorld::new(n, mask.clone(), coupling.clone(), bias, beta)?;
                worlds.push((world, lp));
            }
        }
    }
    Ok(WorldEnumeration { n, p_edge, worlds })
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Bayes rule over an existing enumeration; couplings and biases are
/// marginalized within each mask.
pub fn posterior_from_enumeration(enumeration: &WorldEnumeration, samples: &[InterventionSample]) -> Result<StructurePosterior> {
    let n = enumeration.n;
    if enumeration.is_empty() {
        return Err(Error::EmptyEnumeration);
    }
    if let Some(bad) = samples.iter().find(|s| s.values.len() != n || s.target >= n) {
        return Err(Error::InvalidArgument(format!(
            "sample with {} values (target {}) does not fit n = {n}",
            bad.values.len(),
            bad.target
        )));
    }
    let mut masks: Vec<(Vec<bool>, Vec<f64>)> = Vec::new();
    for (world, lp) in &enumeration.worlds {
        let joint = if *lp == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            lp + samples.iter().map(|s| sample_log_likelihood(world, s)).sum::<f64>()
        };
        match masks.last_mut() {
            Some((m, terms)) if m.as_slice() == world.mask() => terms.push(joint),
            _ => masks.push((world.mask().to_vec(), vec![joint])),
        }
    }
    let per_mask: Vec<f64> = masks.iter().map(|(_, t)| log_sum_exp(t.iter().copied())).collect();
    let z = log_sum_exp(per_mask.iter().copied());
    if z == f64::NEG_INFINITY {
        return Err(Error::EmptyEnumeration);
    }
    Ok(StructurePosterior {
        n,
        masks: masks
            .into_iter()
            .zip(per_mask)
            .map(|((m, _), lp)| (m, (lp - z).exp()))
            .collect(),
    })
}

pub fn posterior_over_structures(samples: &[InterventionSample], n: usize, p_edge: f64) -> Result<StructurePosterior> {
    posterior_from_enumeration(&enumerate_worlds(n, p_edge)?, samples)
}

impl StructurePosterior {
    pub fn prob(&self, mask: &[bool]) -> f64 {
        self.masks
            .iter()
            .find(|(m, _)| m.as_slice() == mask)
            .map_or(0.0, |(_, p)| *p)
    }

    /// Highest-probability mask; ties go to the earliest in enumeration order.
    pub fn map_mask(&self) -> &[bool] {
        let mut best = &self.masks[0];
        for entry in &self.masks[1..] {
            if entry.1 > best.1 {
                best = entry;
            }
        }
        &best.0
    }

    pub fn total(&self) -> f64 {
        self.masks.iter().map(|(_, p)| p).sum()
    }
}

/// Row-major `n×n` marginal edge probabilities.
pub fn edge_marginals(posterior: &StructurePosterior) -> Vec<f64> {
    let n = posterior.n;
    let mut out = vec![0.0; n * n];
    for (mask, p) in &posterior.masks {
        for (o, &m) in out.iter_mut().zip(mask) {
            if m {
                *o += p;
            }
        }
    }
    out
}

/// Full-matrix edge accuracy of the MAP mask against `truth` (row-major bits).
pub fn map_accuracy_against(posterior: &StructurePosterior, truth: &[u8]) -> Result<f64> {
    let map: Vec<u8> = posterior.map_mask().iter().map(|&m| m as u8).collect();
    Ok(edge_accuracy(&map, truth)?.0)
}

pub fn map_edge_accuracy(samples: &[InterventionSample], true_world: &CausalWorld, p_edge: f64) -> Result<f64> {
    let enumeration = enumerate_worlds_with_beta(true_world.n(), p_edge, true_world.beta())?;
    let posterior = posterior_from_enumeration(&enumeration, samples)?;
    map_accuracy_against(&posterior, &true_world.adjacency())
}
