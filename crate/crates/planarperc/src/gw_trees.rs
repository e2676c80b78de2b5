//! Branching-tree sampler for the offspring law μ of a solved weight
//! sequence. The tree is never materialized: a pending-node counter walks the
//! generation queue and only leaf/internal tallies survive. Leaf counts stand
//! in for map volumes, pointed by construction; the plain volume law is the
//! same histogram reweighted by 1/n.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{run_rng, AliasTable};
use crate::stats::{fit_power_tail, FitReport};
use crate::walk_oracle::Pmf;

/// Offspring sampler over a probability mass function on {0, 1, 2, ...} with
/// mean at most 1 (critical or subcritical), so trees die almost surely.
pub struct OffspringSampler {
    alias: AliasTable,
    offset: u64,
}

impl OffspringSampler {
    pub fn new(mu: &Pmf) -> Result<Self> {
        if mu.min_support() < 0 {
            return Err(Error::InvalidWeights("negative offspring support".into()));
        }
        let m = mu.mean();
        if m > 1.0 + 1e-5 {
            return Err(Error::InvalidWeights(format!(
                "offspring mean {m} exceeds 1; trees would survive forever"
            )));
        }
        let alias = AliasTable::new(&mu.mass)
            .ok_or_else(|| Error::InvalidWeights("degenerate offspring law".into()))?;
        Ok(OffspringSampler { alias, offset: mu.min_support() as u64 })
    }

    #[inline]
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        self.offset + self.alias.sample(rng) as u64
    }
}

/// One sampled tree, reduced to counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafSample {
    pub leaves: u64,
    pub internal: u64,
    pub nodes: u64,
    /// Total offspring of internal nodes; equals nodes − 1 when uncensored.
    pub children: u64,
    pub censored: bool,
}

/// Grows one tree and counts its leaves, stopping at node_cap.
pub fn sample_leaf_count<R: Rng>(
    sampler: &OffspringSampler,
    rng: &mut R,
    node_cap: u64,
) -> LeafSample {
    let mut pending = 1u64;
    let mut leaves = 0u64;
    let mut internal = 0u64;
    let mut children = 0u64;
    let mut nodes = 0u64;
    while pending > 0 {
        if nodes == node_cap {
            return LeafSample { leaves, internal, nodes, children, censored: true };
        }
        nodes += 1;
        pending -= 1;
        let c = sampler.sample(rng);
        if c == 0 {
            leaves += 1;
        } else {
            internal += 1;
            children += c;
            pending += c;
        }
    }
    assert_eq!(leaves + internal, nodes);
    assert_eq!(children, nodes - 1);
    LeafSample { leaves, internal, nodes, children, censored: false }
}

/// Tail histogram of leaf counts over a geometric grid, with power fits for
/// the size-biased (pointed) law and its 1/n reweighting.
#[derive(Debug, Clone)]
pub struct VolumeTail {
    /// (bin center, pmf density) for the raw leaf-count law.
    pub pointed: Vec<(f64, f64)>,
    pub pointed_fit: FitReport,
    /// Same bins with each sample weighted by 1/leaves.
    pub reweighted: Vec<(f64, f64)>,
    pub reweighted_fit: FitReport,
    pub censored_fraction: f64,
    pub runs: u64,
}

/// Samples `runs` trees and fits both volume exponents over `n_grid` bins
/// (consecutive grid values delimit one bin). Requires a critical law; the
/// tail is not polynomial otherwise.
pub fn volume_tail(
    mu: &Pmf,
    runs: u64,
    n_grid: &[u64],
    node_cap: u64,
    seed: u64,
) -> Result<VolumeTail> {
    if (mu.mean() - 1.0).abs() > 1e-5 {
        return Err(Error::InvalidWeights(format!(
            "volume tail needs a critical offspring law, mean is {}",
            mu.mean()
        )));
    }
    if n_grid.len() < 5 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::WindowTooSmall(format!(
            "need at least 5 increasing grid points, got {}",
            n_grid.len()
        )));
    }
    let sampler = OffspringSampler::new(mu)?;
    let bins = n_grid.len() - 1;
    let zero = || (vec![0u64; bins], vec![0.0f64; bins], 0u64);
    let (counts, weights, censored) = (0..runs)
        .into_par_iter()
        .fold(zero, |mut acc, i| {
            let s = sample_leaf_count(&sampler, &mut run_rng(seed, i), node_cap);
            if s.censored {
                acc.2 += 1;
                return acc;
            }
            if s.leaves >= n_grid[0] && s.leaves < n_grid[bins] {
                let b = n_grid.partition_point(|&g| g <= s.leaves) - 1;
                acc.0[b] += 1;
                acc.1[b] += 1.0 / s.leaves as f64;
            }
            acc
        })
        .reduce(zero, |mut a, b| {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += y;
            }
            for (x, y) in a.1.iter_mut().zip(&b.1) {
                *x += y;
            }
            a.2 += b.2;
            (a.0, a.1, a.2)
        });
    let censored_fraction = censored as f64 / runs as f64;
    if censored_fraction > 0.05 {
        return Err(Error::InsufficientTailSamples(format!(
            "censored fraction {censored_fraction:.3} at node cap {node_cap}"
        )));
    }
    let mut pointed = Vec::with_capacity(bins);
    let mut reweighted = Vec::with_capacity(bins);
    for b in 0..bins {
        if counts[b] == 0 {
            continue;
        }
        let width = (n_grid[b + 1] - n_grid[b]) as f64;
        let center = (n_grid[b] as f64 * n_grid[b + 1] as f64).sqrt();
        pointed.push((center, counts[b] as f64 / (runs as f64 * width)));
        reweighted.push((center, weights[b] / (runs as f64 * width)));
    }
    if pointed.len() < 4 {
        return Err(Error::InsufficientTailSamples(format!(
            "{} occupied bins of {bins}",
            pointed.len()
        )));
    }
    let window = (pointed[0].0, pointed[pointed.len() - 1].0);
    let pointed_fit = fit_power_tail(&pointed, window)?;
    let reweighted_fit = fit_power_tail(&reweighted, window)?;
    Ok(VolumeTail {
        pointed,
        pointed_fit,
        reweighted,
        reweighted_fit,
        censored_fraction,
        runs,
    })
}

/// Dyadic grid 2^lo, 2^lo+1, ..., 2^hi inclusive.
pub fn dyadic_grid(lo: u32, hi: u32) -> Vec<u64> {
    (lo..=hi).map(|e| 1u64 << e).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{solve_admissibility, tune_critical, TailSpec, WeightSeq};

    fn crit_quad_mu() -> Pmf {
        solve_admissibility(&WeightSeq::quad(1.0 / 12.0)).unwrap().mu
    }

    #[test]
    fn degenerate_law_always_one_leaf() {
        let mu = Pmf::new(0, vec![1.0], 0.0);
        let s = OffspringSampler::new(&mu).unwrap();
        let mut rng = run_rng(1, 0);
        for _ in 0..100 {
            let t = sample_leaf_count(&s, &mut rng, 1000);
            assert_eq!(t, LeafSample { leaves: 1, internal: 0, nodes: 1, children: 0, censored: false });
        }
    }

    #[test]
    fn supercritical_law_is_rejected() {
        let mu = Pmf::new(0, vec![0.2, 0.0, 0.8], 0.0);
        assert!(matches!(OffspringSampler::new(&mu), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn crit_quad_small_tree_probabilities() {
        let mu = crit_quad_mu();
        assert!((mu.get(0) - 0.5).abs() < 1e-12);
        assert!((mu.get(2) - 0.5).abs() < 1e-12);
        let s = OffspringSampler::new(&mu).unwrap();
        let n = 40_000u64;
        let mut one = 0u64;
        let mut two = 0u64;
        let mut rng = run_rng(2, 0);
        for _ in 0..n {
            let t = sample_leaf_count(&s, &mut rng, 10_000_000);
            if !t.censored {
                // {0,2} offspring forces leaves = internal + 1.
                assert_eq!(t.leaves, t.internal + 1);
            }
            match t.leaves {
                1 => one += 1,
                2 => two += 1,
                _ => {}
            }
        }
        let f1 = one as f64 / n as f64;
        let f2 = two as f64 / n as f64;
        let s1 = (0.5f64 * 0.5 / n as f64).sqrt();
        let s2 = (0.125f64 * 0.875 / n as f64).sqrt();
        assert!((f1 - 0.5).abs() <= 3.0 * s1, "P(leaves=1) = {f1}");
        assert!((f2 - 0.125).abs() <= 3.0 * s2, "P(leaves=2) = {f2}");
    }

    #[test]
    fn subcritical_trees_stay_small() {
        let mu = solve_admissibility(&WeightSeq::quad(1.0 / 16.0)).unwrap().mu;
        let s = OffspringSampler::new(&mu).unwrap();
        let mut rng = run_rng(3, 0);
        let mut total_nodes = 0u64;
        let n = 5000;
        for _ in 0..n {
            let t = sample_leaf_count(&s, &mut rng, 1_000_000);
            assert!(!t.censored);
            total_nodes += t.nodes;
        }
        // E[nodes] = 1/(1 − m) = 2 at m = 1/2.
        let mean = total_nodes as f64 / n as f64;
        assert!((mean - 2.0).abs() < 0.2, "mean nodes {mean}");
    }

    #[test]
    fn crit_quad_volume_slopes() {
        let mu = crit_quad_mu();
        let tail = volume_tail(&mu, 120_000, &dyadic_grid(4, 12), 1_000_000, 7).unwrap();
        assert!(tail.censored_fraction < 0.01);
        let s = tail.pointed_fit.slope;
        assert!((s + 1.5).abs() <= 0.15, "pointed slope {s}");
        let r = tail.reweighted_fit.slope;
        assert!((r + 2.5).abs() <= 0.3, "reweighted slope {r}");
    }

    #[test]
    fn tuned_power_tail_pointed_slope() {
        let shape = WeightSeq {
            explicit: vec![],
            tail: Some(TailSpec { c: 1.0, beta: 0.5, a_shape: 2.2, k_min: 1 }),
            k_cap: 4096,
        };
        let tuned = tune_critical(&shape, 2.2).unwrap();
        let solved = solve_admissibility(&tuned).unwrap();
        let tail = volume_tail(&solved.mu, 60_000, &dyadic_grid(4, 11), 1_000_000, 11).unwrap();
        // α = a − 1/2 = 1.7, pointed exponent −1/α − 1 ≈ −1.588.
        let s = tail.pointed_fit.slope;
        assert!((s + 1.0 / 1.7 + 1.0).abs() <= 0.15, "pointed slope {s}");
    }

    #[test]
    fn heavy_censoring_is_an_error() {
        let mu = crit_quad_mu();
        let s = OffspringSampler::new(&mu).unwrap();
        let mut rng = run_rng(5, 0);
        let mut censored = 0;
        for _ in 0..2000 {
            let t = sample_leaf_count(&s, &mut rng, 64);
            if t.censored {
                censored += 1;
                assert_eq!(t.nodes, 64);
            }
        }
        assert!(censored > 50, "only {censored} censored at cap 64");
        let err = volume_tail(&mu, 4000, &dyadic_grid(4, 12), 64, 5);
        assert!(matches!(err, Err(Error::InsufficientTailSamples(_))));
    }
}
