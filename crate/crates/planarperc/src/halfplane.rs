//! Monte Carlo exploration of the half-plane interface walk: B starts at 1,
//! takes steps from the ΔB law, and dies at the first strictly negative
//! value. The nonzero-step clock drives the exit statistics (T*, the zero
//! exits, the cut events); the full clock including zero steps is recorded
//! separately. Everything cross-validates against the exact DP oracles.

use crate::error::{Error, Result};
use crate::rng::{run_rng, AliasTable};
use crate::stats::{fit_exp_tail, fit_power_tail, FitReport};
use crate::walk_oracle::StepLaw;
use crate::weights::SolvedWeights;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Default step budget (full clock, zero steps included).
pub const DEFAULT_STEP_CAP: u64 = 1_000_000;

/// Outcome of one exploration run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplorationRecord {
    /// Nonzero steps until B goes strictly negative; None when censored.
    pub tau_star: Option<u64>,
    /// Nonzero steps until B first reaches 0 or below; None when censored
    /// before any such visit.
    pub t_star: Option<u64>,
    /// B landed exactly on 0 at T*.
    pub hit_zero_exit: bool,
    /// k for the cut event {T* = 2k+1, landing exactly on 0}.
    pub hcut_index: Option<u32>,
    /// The run reached the step cap while B was still nonnegative.
    pub survived_cap: bool,
    /// Full-clock steps consumed (equals the cap when censored).
    pub steps_total: u64,
}

/// Alias-method sampler over the ΔB support {+1, 0, −1, −3, −5, ...}; the
/// truncated negative-tail mass is folded into a kill sentinel, matching the
/// oracle convention that lost mass leaves the alive window.
pub struct StepSampler {
    table: AliasTable,
    deltas: Vec<i64>,
}

const ABYSS: i64 = i64::MIN;

impl StepSampler {
    pub fn new(law: &StepLaw) -> Result<Self> {
        let mut weights = Vec::with_capacity(law.neg.len() + 3);
        let mut deltas = Vec::with_capacity(law.neg.len() + 3);
        weights.push(law.up);
        deltas.push(1i64);
        weights.push(law.zero);
        deltas.push(0);
        for (k, &m) in law.neg.iter().enumerate() {
            weights.push(m);
            deltas.push(-(2 * k as i64 + 1));
        }
        weights.push(law.lost.max(0.0));
        deltas.push(ABYSS);
        let table = AliasTable::new(&weights)
            .ok_or_else(|| Error::DomainError(law.p))?;
        Ok(StepSampler { table, deltas })
    }

    #[inline]
    fn step(&self, rng: &mut ChaCha8Rng) -> i64 {
        self.deltas[self.table.sample(rng) as usize]
    }
}

fn explore(sampler: &StepSampler, rng: &mut ChaCha8Rng, step_cap: u64) -> ExplorationRecord {
    let mut b: i64 = 1;
    let mut steps: u64 = 0;
    let mut nonzero: u64 = 0;
    let mut t_star: Option<u64> = None;
    let mut hit_zero_exit = false;
    let mut hcut_index = None;
    while steps < step_cap {
        let d = sampler.step(rng);
        steps += 1;
        if d == 0 {
            continue;
        }
        nonzero += 1;
        b = if d == ABYSS { -1 } else { b + d };
        if t_star.is_none() && b <= 0 {
            t_star = Some(nonzero);
            hit_zero_exit = b == 0;
            if hit_zero_exit {
                debug_assert!(nonzero % 2 == 1, "zero exits happen at odd T*");
                hcut_index = Some(((nonzero - 1) / 2) as u32);
            }
        }
        if b < 0 {
            return ExplorationRecord {
                tau_star: Some(nonzero),
                t_star,
                hit_zero_exit,
                hcut_index,
                survived_cap: false,
                steps_total: steps,
            };
        }
    }
    ExplorationRecord {
        tau_star: None,
        t_star,
        hit_zero_exit,
        hcut_index,
        survived_cap: true,
        steps_total: steps,
    }
}

/// One exploration with its own derived stream.
pub fn run_exploration(law: &StepLaw, rng_seed: u64, step_cap: u64) -> Result<ExplorationRecord> {
    if step_cap == 0 {
        return Err(Error::DomainError(0.0));
    }
    let sampler = StepSampler::new(law)?;
    let mut rng = run_rng(rng_seed, 0);
    Ok(explore(&sampler, &mut rng, step_cap))
}

/// Independent runs with per-run streams derived from (seed, index); the
/// result order is by index, independent of scheduling.
pub fn run_batch(
    law: &StepLaw,
    seed: u64,
    runs: u64,
    step_cap: u64,
) -> Result<Vec<ExplorationRecord>> {
    if step_cap == 0 || runs == 0 {
        return Err(Error::DomainError(0.0));
    }
    let sampler = StepSampler::new(law)?;
    Ok((0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = run_rng(seed, i);
            explore(&sampler, &mut rng, step_cap)
        })
        .collect())
}

/// Empirical frequency of the cut events {T* = 2k+1, landing on 0} for
/// k = 0..=k_max, plus the count of runs where T* was observed at all.
pub fn hcut_frequency_table(records: &[ExplorationRecord], k_max: u32) -> (Vec<f64>, u64) {
    let mut counts = vec![0u64; k_max as usize + 1];
    let mut seen = 0u64;
    for r in records {
        if r.t_star.is_some() {
            seen += 1;
        }
        if let Some(k) = r.hcut_index {
            if k <= k_max {
                counts[k as usize] += 1;
            }
        }
    }
    let n = records.len() as f64;
    (counts.iter().map(|&c| c as f64 / n).collect(), seen)
}

/// One row of a threshold scan.
#[derive(Debug, Clone)]
pub struct ScanRow {
    pub p: f64,
    pub survival_freq: f64,
    pub survivors: u64,
    /// Mean τ* over dying runs; NaN when none died.
    pub mean_tau_star: f64,
    pub dying: u64,
}

#[derive(Debug, Clone)]
pub struct ScanTable {
    pub rows: Vec<ScanRow>,
    /// Largest decrease of survival between consecutive grid points, in
    /// binomial standard errors; survival should be monotone up to noise.
    pub worst_drop_sigma: f64,
}

/// Survival frequency at the cap across a p grid.
pub fn threshold_scan(
    solved: &SolvedWeights,
    p_grid: &[f64],
    runs: u64,
    step_cap: u64,
    seed: u64,
) -> Result<ScanTable> {
    if p_grid.iter().any(|p| !(0.0..1.0).contains(p)) {
        return Err(Error::DomainError(f64::NAN));
    }
    let mut rows = Vec::with_capacity(p_grid.len());
    for (i, &p) in p_grid.iter().enumerate() {
        let law = crate::walk_oracle::step_law(solved, p)?;
        let records = run_batch(&law, seed.wrapping_add(i as u64), runs, step_cap)?;
        let survivors = records.iter().filter(|r| r.survived_cap).count() as u64;
        let (sum_tau, dying) = records.iter().filter_map(|r| r.tau_star).fold(
            (0u64, 0u64),
            |(s, c), t| (s + t, c + 1),
        );
        rows.push(ScanRow {
            p,
            survival_freq: survivors as f64 / runs as f64,
            survivors,
            mean_tau_star: if dying > 0 {
                sum_tau as f64 / dying as f64
            } else {
                f64::NAN
            },
            dying,
        });
    }
    let mut worst = 0.0f64;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let var = a.survival_freq * (1.0 - a.survival_freq)
            + b.survival_freq * (1.0 - b.survival_freq);
        let sigma = (var / runs as f64).sqrt().max(1.0 / runs as f64);
        worst = worst.max((a.survival_freq - b.survival_freq) / sigma);
    }
    Ok(ScanTable { rows, worst_drop_sigma: worst })
}

#[derive(Debug, Clone)]
pub struct TailTable {
    /// (m, empirical P(τ* ≥ 2m), sample count at that level).
    pub rows: Vec<(f64, f64, u64)>,
    pub fit_power: FitReport,
    pub fit_exp: FitReport,
    pub censored_fraction: f64,
    /// Uncensored samples with τ* beyond a quarter of the deepest grid point.
    pub deep_samples: u64,
}

/// Empirical tail of τ* over a grid of half-lengths m.
pub fn perimeter_tail(
    law: &StepLaw,
    runs: u64,
    m_grid: &[f64],
    step_cap: u64,
    seed: u64,
) -> Result<TailTable> {
    if m_grid.is_empty() || m_grid.iter().any(|&m| !(m >= 1.0)) {
        return Err(Error::DomainError(f64::NAN));
    }
    let records = run_batch(law, seed, runs, step_cap)?;
    let taus: Vec<u64> = records.iter().filter_map(|r| r.tau_star).collect();
    let censored_fraction = 1.0 - taus.len() as f64 / runs as f64;
    let m_max = m_grid.iter().cloned().fold(0.0f64, f64::max);
    let deep = taus.iter().filter(|&&t| t as f64 >= m_max / 4.0).count() as u64
        + records.iter().filter(|r| r.survived_cap).count() as u64;
    if deep < 100 {
        return Err(Error::InsufficientTailSamples(format!(
            "{deep} samples beyond {}",
            m_max / 4.0
        )));
    }
    // censored runs are lower bounds on τ*, so they count in every tail bin
    let survived = records.iter().filter(|r| r.survived_cap).count() as u64;
    let mut rows = Vec::with_capacity(m_grid.len());
    for &m in m_grid {
        let c = taus.iter().filter(|&&t| t as f64 >= 2.0 * m).count() as u64 + survived;
        rows.push((m, c as f64 / runs as f64, c));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.1 > 0.0)
        .map(|r| (r.0, r.1))
        .collect();
    let window = (
        pts.first().map(|p| p.0).unwrap_or(1.0),
        pts.last().map(|p| p.0).unwrap_or(1.0),
    );
    let fit_power = fit_power_tail(&pts, window)?;
    let fit_exp = fit_exp_tail(&pts, window)?;
    Ok(TailTable {
        rows,
        fit_power,
        fit_exp,
        censored_fraction,
        deep_samples: deep,
    })
}

#[derive(Debug, Clone)]
pub struct CondRow {
    pub m: u64,
    pub k: u32,
    /// P(cut at k | τ* ≥ 2m) over uncensored-or-deep runs.
    pub cond_freq: f64,
    pub joint: u64,
    pub base: u64,
}

#[derive(Debug, Clone)]
pub struct CondHcutTable {
    pub rows: Vec<CondRow>,
    /// Fit of the conditional frequencies against k at the deepest ladder
    /// level with data.
    pub fit_deepest: FitReport,
    /// Max over k of the drift between consecutive ladder levels, in pooled
    /// binomial standard errors; small values mean the conditional law has
    /// stabilized in m.
    pub max_level_drift_sigma: f64,
}

/// Conditional cut statistics P(cut at k | τ* ≥ 2m) on a doubling m-ladder
/// starting at m (four levels; m = 0 collapses to the unconditional law).
pub fn conditional_hcut(
    law: &StepLaw,
    k_grid: &[u32],
    m: u64,
    runs: u64,
    step_cap: u64,
    seed: u64,
) -> Result<CondHcutTable> {
    if k_grid.is_empty() {
        return Err(Error::DomainError(f64::NAN));
    }
    let records = run_batch(law, seed, runs, step_cap)?;
    let levels: Vec<u64> = if m == 0 {
        vec![0]
    } else {
        (0..4).map(|j| m << j).collect()
    };
    let mut rows = Vec::new();
    for &lvl in &levels {
        // τ* ≥ 2m holds for deaths at or beyond 2m and for censored runs
        let base: Vec<&ExplorationRecord> = records
            .iter()
            .filter(|r| match r.tau_star {
                Some(t) => t >= 2 * lvl,
                None => true,
            })
            .collect();
        for &k in k_grid {
            let joint = base
                .iter()
                .filter(|r| r.hcut_index == Some(k))
                .count() as u64;
            rows.push(CondRow {
                m: lvl,
                k,
                cond_freq: if base.is_empty() {
                    0.0
                } else {
                    joint as f64 / base.len() as f64
                },
                joint,
                base: base.len() as u64,
            });
        }
    }
    let deepest = *levels.last().unwrap();
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.m == deepest && r.cond_freq > 0.0 && r.k > 0)
        .map(|r| (r.k as f64, r.cond_freq))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientTailSamples(format!(
            "{} usable k-points at the deepest conditioning level",
            pts.len()
        )));
    }
    let window = (pts.first().unwrap().0, pts.last().unwrap().0);
    let fit_deepest = fit_power_tail(&pts, window)?;
    let mut drift = 0.0f64;
    for w in levels.windows(2) {
        for &k in k_grid {
            let find = |lvl: u64| rows.iter().find(|r| r.m == lvl && r.k == k).unwrap();
            let (a, b) = (find(w[0]), find(w[1]));
            if a.base == 0 || b.base == 0 {
                continue;
            }
            let var = a.cond_freq * (1.0 - a.cond_freq) / a.base as f64
                + b.cond_freq * (1.0 - b.cond_freq) / b.base as f64;
            if var > 0.0 {
                drift = drift.max((a.cond_freq - b.cond_freq).abs() / var.sqrt());
            }
        }
    }
    Ok(CondHcutTable {
        rows,
        fit_deepest,
        max_level_drift_sigma: drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk_oracle::{hcut_table, step_law, survival_estimate};
    use crate::weights::{solve_admissibility, WeightSeq};
    use std::sync::OnceLock;

    fn crit_quad() -> &'static SolvedWeights {
        static CELL: OnceLock<SolvedWeights> = OnceLock::new();
        CELL.get_or_init(|| solve_admissibility(&WeightSeq::quad(1.0 / 12.0)).unwrap())
    }

    fn subcrit_quad() -> &'static SolvedWeights {
        static CELL: OnceLock<SolvedWeights> = OnceLock::new();
        CELL.get_or_init(|| solve_admissibility(&WeightSeq::quad(1.0 / 16.0)).unwrap())
    }

    #[test]
    fn record_invariants_hold() {
        let solved = crit_quad();
        let law = step_law(solved, solved.p_c).unwrap();
        let records = run_batch(&law, 11, 4000, 20_000).unwrap();
        let mut saw_immediate = false;
        for r in &records {
            assert_eq!(r.hcut_index.is_some(), r.hit_zero_exit);
            if let Some(t) = r.t_star {
                if r.hit_zero_exit {
                    assert_eq!(t % 2, 1, "zero exit at even T*");
                    assert_eq!(r.hcut_index, Some(((t - 1) / 2) as u32));
                }
                if let Some(tau) = r.tau_star {
                    assert!(t <= tau);
                    assert!(r.steps_total >= tau);
                }
            }
            if r.t_star == Some(1) && r.hit_zero_exit {
                saw_immediate = true;
                assert_eq!(r.hcut_index, Some(0));
            }
            assert_eq!(r.survived_cap, r.tau_star.is_none());
        }
        assert!(saw_immediate, "a first-step −1 exit should occur in 4000 runs");
    }

    #[test]
    fn determinism_per_seed() {
        let law = step_law(subcrit_quad(), 0.2).unwrap();
        let a = run_batch(&law, 99, 64, 10_000).unwrap();
        let b = run_batch(&law, 99, 64, 10_000).unwrap();
        assert_eq!(a, b);
        let c = run_exploration(&law, 99, 10_000).unwrap();
        assert_eq!(a[0], c);
    }

    #[test]
    fn hcut_frequencies_match_the_dp_oracle() {
        let solved = crit_quad();
        let p = solved.p_c;
        let law = step_law(solved, p).unwrap();
        let runs = 200_000u64;
        let records = run_batch(&law, 4242, runs, 16_384).unwrap();
        let (freq, _) = hcut_frequency_table(&records, 12);
        let exact = hcut_table(&law, 12).unwrap();
        for k in 0..=12usize {
            let want = exact[k] * (1.0 - p);
            let sigma = (want * (1.0 - want) / runs as f64).sqrt();
            assert!(
                (freq[k] - want).abs() <= 3.0 * sigma,
                "k={k}: {} vs {want} (3σ={})",
                freq[k],
                3.0 * sigma
            );
        }
    }

    #[test]
    fn supercritical_survival_matches_oracle() {
        // a short ν table keeps the DP cheap; the MC runs the same law, so
        // the tail-truncation convention cancels between the two sides
        let solved = crate::weights::solve_with(&WeightSeq::quad(1.0 / 12.0), 128).unwrap();
        let p = solved.p_c + 0.1;
        let law = step_law(&solved, p).unwrap();
        let horizon = 8192u32;
        // full-clock cap sized so the nonzero-step count exceeds the DP
        // horizon in all but ~1e-5 of runs
        let q = law.nonzero_prob();
        let cap = ((horizon as f64 + 4.0 * (horizon as f64).sqrt()) / q).ceil() as u64;
        let runs = 4000u64;
        let records = run_batch(&law, 7, runs, cap).unwrap();
        let mc = records.iter().filter(|r| r.survived_cap).count() as f64 / runs as f64;
        let dp = survival_estimate(&law, horizon).unwrap();
        let sigma = (dp * (1.0 - dp) / runs as f64).sqrt();
        // the MC censors a hair later than the DP horizon; the residual decay
        // over that sliver stays well under half a percent
        assert!((mc - dp).abs() <= 3.0 * sigma + 0.005, "mc {mc} vs dp {dp}");
    }

    #[test]
    fn threshold_scan_brackets_pc() {
        let solved = crit_quad();
        let pc = solved.p_c;
        let scan = threshold_scan(
            solved,
            &[0.0, pc - 0.05, pc + 0.05],
            3000,
            100_000,
            5,
        )
        .unwrap();
        assert_eq!(scan.rows[0].survival_freq, 0.0, "p=0 must die instantly");
        let sub = &scan.rows[1];
        let sup = &scan.rows[2];
        let sigma_sub =
            (sub.survival_freq * (1.0 - sub.survival_freq) / 3000.0).sqrt().max(1.0 / 3000.0);
        assert!(sub.survival_freq <= 3.0 * sigma_sub, "subcritical survived");
        let sigma_sup = (sup.survival_freq * (1.0 - sup.survival_freq) / 3000.0)
            .sqrt()
            .max(1.0 / 3000.0);
        assert!(
            sup.survival_freq > 5.0 * sigma_sup,
            "supercritical did not survive: {}",
            sup.survival_freq
        );
        assert!(scan.worst_drop_sigma < 4.0);
    }

    #[test]
    fn subcritical_tail_is_exponential() {
        let solved = subcrit_quad();
        let law = step_law(solved, 0.1).unwrap();
        let grid: Vec<f64> = (1..=12).map(|i| i as f64).collect();
        let t = perimeter_tail(&law, 30_000, &grid, 50_000, 9).unwrap();
        assert!(t.censored_fraction < 1e-3);
        assert!(t.fit_exp.r2 >= 0.98, "r2 {}", t.fit_exp.r2);
        assert!(t.fit_exp.rate() > 0.05, "rate {}", t.fit_exp.rate());
    }

    #[test]
    fn critical_tail_is_polynomial_third() {
        let solved = crit_quad();
        let law = step_law(solved, solved.p_c).unwrap();
        let grid: Vec<f64> = (3..=9).map(|j| (1u64 << j) as f64).collect();
        let t = perimeter_tail(&law, 40_000, &grid, 1 << 14, 31).unwrap();
        assert!(
            (t.fit_power.slope + 1.0 / 3.0).abs() < 0.12,
            "slope {}",
            t.fit_power.slope
        );
    }

    #[test]
    fn insufficient_tail_samples_is_flagged() {
        let solved = subcrit_quad();
        let law = step_law(solved, 0.05).unwrap();
        let grid = [4096.0, 8192.0];
        match perimeter_tail(&law, 500, &grid, 5_000, 1) {
            Err(Error::InsufficientTailSamples(_)) => {}
            other => panic!("expected InsufficientTailSamples, got {other:?}"),
        }
    }

    #[test]
    fn conditional_hcut_stabilizes_at_criticality() {
        let solved = crit_quad();
        let law = step_law(solved, solved.p_c).unwrap();
        let ks: Vec<u32> = (1..=12).collect();
        let t = conditional_hcut(&law, &ks, 4, 120_000, 16_384, 77).unwrap();
        // the conditional law converges in m: by the last doubling the levels
        // should agree to a modest relative drift at the well-sampled k
        let lvl = |m: u64, k: u32| {
            t.rows
                .iter()
                .find(|r| r.m == m && r.k == k)
                .map(|r| r.cond_freq)
                .unwrap()
        };
        for k in 1..=3u32 {
            let (a, b) = (lvl(16, k), lvl(32, k));
            assert!(
                (a - b).abs() / a.max(1e-9) < 0.3,
                "k={k} still drifting: {a} vs {b}"
            );
        }
        assert!(
            (t.fit_deepest.slope + 5.0 / 3.0).abs() < 0.6,
            "k-slope {}",
            t.fit_deepest.slope
        );
        // m=0 reduces to the unconditional frequencies
        let uncond = conditional_hcut(&law, &ks, 0, 50_000, 16_384, 78).unwrap();
        let records = run_batch(&law, 78, 50_000, 16_384).unwrap();
        let (freq, _) = hcut_frequency_table(&records, 12);
        for r in uncond.rows.iter().filter(|r| r.m == 0) {
            assert!((r.cond_freq - freq[r.k as usize]).abs() < 1e-12);
        }
    }
}
