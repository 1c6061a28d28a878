//! Plain-text episode dumps.
//!
//! ```text
//! n,k,seed,p_edge,beta        <- one line of values
//! step,target,v_0,...,v_{n-1} <- k sample rows, step counted from 1
//! adj_i,b_0,...,b_{n-1}       <- n rows of the adjacency matrix
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scm::{Episode, InterventionSample};

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeDump {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub p_edge: f64,
    pub beta: f64,
    pub samples: Vec<InterventionSample>,
    /// Row-major `n×n`; entry `(i, j)` is the edge `j → i`.
    pub adjacency: Vec<u8>,
}

impl EpisodeDump {
    pub fn from_episode(episode: &Episode, seed: u64, p_edge: f64) -> Self {
        Self {
            n: episode.n(),
            k: episode.len(),
            seed,
            p_edge,
            beta: episode.world.beta(),
            samples: episode.samples.clone(),
            adjacency: episode.adjacency(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{},{},{},{},{}", self.n, self.k, self.seed, self.p_edge, self.beta).unwrap();
        for (t, sample) in self.samples.iter().enumerate() {
            write!(s, "{},{}", t + 1, sample.target).unwrap();
            for v in &sample.values {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        for i in 0..self.n {
            write!(s, "adj_{i}").unwrap();
            for b in &self.adjacency[i * self.n..(i + 1) * self.n] {
                write!(s, ",{b}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Parses a dump; `path` only labels error messages.
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let (hl, header) = *lines.first().ok_or_else(|| err(1, "empty file".into()))?;
        let h: Vec<&str> = header.split(',').collect();
        if h.len() != 5 {
            return Err(err(hl, format!("expected header `n,k,seed,p_edge,beta`, got `{header}`")));
        }
        let bad = |what: &str, v: &str| err(hl, format!("invalid {what} `{v}`"));
        let n: usize = h[0].parse().map_err(|_| bad("n", h[0]))?;
        let k: usize = h[1].parse().map_err(|_| bad("k", h[1]))?;
        let seed: u64 = h[2].parse().map_err(|_| bad("seed", h[2]))?;
        let p_edge: f64 = h[3].parse().map_err(|_| bad("p_edge", h[3]))?;
        let beta: f64 = h[4].parse().map_err(|_| bad("beta", h[4]))?;
        if n < 2 {
            return Err(err(hl, format!("n must be at least 2, got {n}")));
        }
        if lines.len() != 1 + k + n {
            return Err(err(
                lines.last().map_or(1, |l| l.0),
                format!("expected {} sample rows and {n} adjacency rows, found {} rows", k, lines.len() - 1),
            ));
        }
        let bit = |line: usize, v: &str| -> Result<u8> {
            match v.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(err(line, format!("expected a 0/1 value, got `{other}`"))),
            }
        };
        let mut samples = Vec::with_capacity(k);
        for (t, &(ln, line)) in lines[1..=k].iter().enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != n + 2 {
                return Err(err(ln, format!("expected {} fields, found {}", n + 2, f.len())));
            }
            if f[0].trim() != (t + 1).to_string() {
                return Err(err(ln, format!("expected step {}, got `{}`", t + 1, f[0])));
            }
            let target: usize = f[1]
                .trim()
                .parse()
                .ok()
                .filter(|&x| x < n)
                .ok_or_else(|| err(ln, format!("invalid target `{}`", f[1])))?;
            let values = f[2..].iter().map(|v| bit(ln, v)).collect::<Result<_>>()?;
            samples.push(InterventionSample { values, target });
        }
        let mut adjacency = Vec::with_capacity(n * n);
        for (i, &(ln, line)) in lines[1 + k..].iter().enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != n + 1 || f[0].trim() != format!("adj_{i}") {
                return Err(err(ln, format!("expected `adj_{i}` followed by {n} bits")));
            }
            for v in &f[1..] {
                adjacency.push(bit(ln, v)?);
            }
        }
        Ok(Self {
            n,
            k,
            seed,
            p_edge,
            beta,
            samples,
            adjacency,
        })
    }
}
