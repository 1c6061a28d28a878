//! Ground-truth causal worlds: soft random Boolean networks over binary
//! variables, sampled ancestrally under single hard interventions.
//!
//! Node `i` takes value 1 with probability
//! `sigmoid(beta * (Σ_{j<i} U[i][j] M[i][j] x_j + b[i]))` unless it is the
//! intervention target, in which case it is a fair coin.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_BETA: f64 = 5.0;
pub const DEFAULT_P_EDGE: f64 = 0.5;
pub const DEFAULT_NODES: usize = 5;
pub const DEFAULT_EPISODE_LEN: usize = 100;

/// Deterministic random stream for `(seed, stream, index)`. Training
/// episodes use stream 0, evaluation episodes stream 1, model
/// initialization stream 2.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(b"crn-seed");
    ChaCha8Rng::from_seed(key)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Ground-truth structural model. `mask[i][j]` (row-major `i * n + j`) set
/// means the edge `j → i`; only `j < i` may be set.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalWorld {
    n: usize,
    mask: Vec<bool>,
    coupling: Vec<i8>,
    bias: Vec<i32>,
    beta: f64,
}

impl CausalWorld {
    /// Validates the structural invariants. `coupling` entries off the mask
    /// are ignored and stored as 0.
    pub fn new(n: usize, mask: Vec<bool>, coupling: Vec<i8>, bias: Vec<i32>, beta: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("node count must be at least 2, got {n}")));
        }
        if mask.len() != n * n || coupling.len() != n * n || bias.len() != n {
            return Err(Error::InvalidArgument("world arrays do not match n".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
        }
        let mut coupling = coupling;
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                if mask[k] {
                    if j >= i {
                        return Err(Error::InvalidArgument(format!("edge {j} -> {i} is not lower-triangular")));
                    }
                    if coupling[k] != 1 && coupling[k] != -1 {
                        return Err(Error::InvalidArgument(format!("coupling on {j} -> {i} must be ±1")));
                    }
                } else {
                    coupling[k] = 0;
                }
            }
            let k_i = (0..n).filter(|&j| mask[i * n + j]).count() as i32;
            if bias[i] != 1 - k_i && bias[i] != k_i - 1 {
                return Err(Error::InvalidArgument(format!(
                    "bias {} of node {i} not in {{{}, {}}}",
                    bias[i],
                    1 - k_i,
                    k_i - 1
                )));
            }
        }
        Ok(Self {
            n,
            mask,
            coupling,
            bias,
            beta,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.mask[to * self.n + from]
    }

    pub fn coupling(&self, from: usize, to: usize) -> Option<i8> {
        self.has_edge(from, to).then(|| self.coupling[to * self.n + from])
    }

    pub fn bias(&self, i: usize) -> i32 {
        self.bias[i]
    }

    pub fn in_degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.mask[i * self.n + j]).count()
    }

    pub fn edge_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Row-major `n×n` adjacency bits; entry `(i, j)` is the edge `j → i`.
    pub fn adjacency(&self) -> Vec<u8> {
        self.mask.iter().map(|&m| m as u8).collect()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// One observation under a single hard intervention on `target`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterventionSample {
    pub values: Vec<u8>,
    pub target: usize,
}

impl InterventionSample {
    /// Intervention flags, 1 at the target and 0 elsewhere.
    pub fn flags(&self) -> impl Iterator<Item = u8> + '_ {
        (0..self.values.len()).map(|i| (i == self.target) as u8)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub world: CausalWorld,
    pub samples: Vec<InterventionSample>,
    /// When set, `relabel[original] = presented`; samples and
    /// [`Episode::adjacency`] use the presented labels.
    pub relabel: Option<Vec<usize>>,
}

impl Episode {
    pub fn n(&self) -> usize {
        self.world.n()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Ground-truth adjacency in the labels the samples use.
    pub fn adjacency(&self) -> Vec<u8> {
        let n = self.n();
        let base = self.world.adjacency();
        match &self.relabel {
            None => base,
            Some(p) => {
                let mut out = vec![0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        out[p[i] * n + p[j]] = base[i * n + j];
                    }
                }
                out
            }
        }
    }
}

/// Samples a world with iid Bernoulli(`p_edge`) lower-triangular edges,
/// uniform ±1 couplings and a uniform choice of bias from `{1-k, k-1}`.
pub fn sample_world(n: usize, p_edge: f64, beta: f64, rng: &mut impl Rng) -> Result<CausalWorld> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("node count must be at least 2, got {n}")));
    }
    if !(0.0..=1.0).contains(&p_edge) {
        return Err(Error::InvalidConfig(format!("edge probability {p_edge} outside [0, 1]")));
    }
    let mut mask = vec![false; n * n];
    let mut coupling = vec![0i8; n * n];
    let mut bias = vec![0i32; n];
    for i in 0..n {
        let mut k_i = 0i32;
        for j in 0..i {
            if rng.gen_bool(p_edge) {
                mask[i * n + j] = true;
                coupling[i * n + j] = if rng.gen_bool(0.5) { 1 } else { -1 };
                k_i += 1;
            }
        }
        bias[i] = if k_i == 1 {
            0
        } else if rng.gen_bool(0.5) {
            1 - k_i
        } else {
            k_i - 1
        };
    }
    CausalWorld::new(n, mask, coupling, bias, beta)
}

/// `P(X_i = 1 | parents)`; exactly 0.5 for an intervened node.
/// `parent_values` must cover at least indices `0..i`.
pub fn conditional_prob_one(world: &CausalWorld, i: usize, parent_values: &[u8], intervened: bool) -> f64 {
    if intervened {
        return 0.5;
    }
    let n = world.n;
    let row = &world.coupling[i * n..i * n + i];
    let drive: i32 = row
        .iter()
        .zip(parent_values)
        .map(|(&u, &x)| u as i32 * x as i32)
        .sum::<i32>()
        + world.bias[i];
    sigmoid(world.beta * drive as f64)
}

pub fn ancestral_sample(world: &CausalWorld, target: usize, rng: &mut impl Rng) -> Result<InterventionSample> {
    if target >= world.n {
        return Err(Error::InvalidArgument(format!(
            "intervention target {target} out of range for {} nodes",
            world.n
        )));
    }
    let mut values = Vec::with_capacity(world.n);
    for i in 0..world.n {
        let p = conditional_prob_one(world, i, &values, i == target);
        values.push(rng.gen_bool(p) as u8);
    }
    Ok(InterventionSample { values, target })
}

/// `k` samples, each under an intervention on a uniformly chosen node.
pub fn sample_episode(world: &CausalWorld, k: usize, rng: &mut impl Rng) -> Result<Episode> {
    if k < 1 {
        return Err(Error::InvalidConfig("episode length must be at least 1".into()));
    }
    let samples = (0..k)
        .map(|_| {
            let target = rng.gen_range(0..world.n);
            ancestral_sample(world, target, rng)
        })
        .collect::<Result<_>>()?;
    Ok(Episode {
        world: world.clone(),
        samples,
        relabel: None,
    })
}

/// Applies a uniformly random relabeling of the nodes to an episode.
pub fn permute_episode(mut episode: Episode, rng: &mut impl Rng) -> Episode {
    let n = episode.n();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    for s in &mut episode.samples {
        let mut values = vec![0; n];
        for (orig, &v) in s.values.iter().enumerate() {
            values[perm[orig]] = v;
        }
        s.values = values;
        s.target = perm[s.target];
    }
    episode.relabel = Some(perm);
    episode
}

/// Joint log-probability of a sample under its recorded intervention.
pub fn sample_log_likelihood(world: &CausalWorld, sample: &InterventionSample) -> f64 {
    (0..world.n)
        .map(|i| {
            let p = conditional_prob_one(world, i, &sample.values, i == sample.target);
            if sample.values[i] == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

/// Everything needed to regenerate an episode stream.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub n: usize,
    pub k: usize,
    pub p_edge: f64,
    pub beta: f64,
    pub permute_labels: bool,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n: DEFAULT_NODES,
            k: DEFAULT_EPISODE_LEN,
            p_edge: DEFAULT_P_EDGE,
            beta: DEFAULT_BETA,
            permute_labels: false,
        }
    }
}

impl EpisodeSpec {
    /// Fresh world plus episode drawn from its own stream.
    pub fn generate(&self, rng: &mut impl Rng) -> Result<Episode> {
        let world = sample_world(self.n, self.p_edge, self.beta, rng)?;
        let episode = sample_episode(&world, self.k, rng)?;
        Ok(if self.permute_labels {
            permute_episode(episode, rng)
        } else {
            episode
        })
    }

    pub fn generate_indexed(&self, seed: u64, stream: u64, index: u64) -> Result<Episode> {
        self.generate(&mut stream_rng(seed, stream, index))
    }
}
