//! Exact distribution calculus for the half-plane boundary walk B and its
//! nonzero-step subordination B*: step laws, windowed convolution with
//! optional absorption, first-passage probabilities to exactly 0, the cyclic
//! (Feller/Kemperman) identity, and survival diagnostics.
//!
//! Every step of B is +1, 0, or a negative odd integer, so B* alternates
//! position parity deterministically. All DP kernels below exploit that by
//! storing only the live parity class, which halves both the window and the
//! inner summation. Windows are chosen so that every reported probability is
//! exact up to the tracked `lost_mass`; mass that provably cannot reach a
//! reading position again is parked rather than propagated.

use crate::error::{Error, Result};
use crate::numeric::{ksum, KahanSum};
use crate::weights::SolvedWeights;
use rayon::prelude::*;

/// Probability mass function on a contiguous integer window.
/// `offset` is the position of `mass[0]`; `lost_mass` is probability known to
/// lie outside the window (truncation, absorption, parking), tracked
/// additively through every operation.
#[derive(Debug, Clone)]
pub struct Pmf {
    pub offset: i64,
    pub mass: Vec<f64>,
    pub lost_mass: f64,
}

impl Pmf {
    pub fn new(offset: i64, mass: Vec<f64>, lost_mass: f64) -> Self {
        Pmf { offset, mass, lost_mass }
    }

    /// Point mass at `v`.
    pub fn point(v: i64) -> Self {
        Pmf { offset: v, mass: vec![1.0], lost_mass: 0.0 }
    }

    pub fn get(&self, v: i64) -> f64 {
        if v < self.offset {
            return 0.0;
        }
        let idx = (v - self.offset) as usize;
        self.mass.get(idx).copied().unwrap_or(0.0)
    }

    pub fn min_support(&self) -> i64 {
        self.offset
    }

    pub fn max_support(&self) -> i64 {
        self.offset + self.mass.len() as i64 - 1
    }

    /// Compensated sum of the stored masses (excludes lost_mass).
    pub fn total_mass(&self) -> f64 {
        ksum(self.mass.iter().copied())
    }

    /// Mean over the stored window (ignores lost mass).
    pub fn mean(&self) -> f64 {
        let mut acc = KahanSum::new();
        for (i, &m) in self.mass.iter().enumerate() {
            acc.add((self.offset + i as i64) as f64 * m);
        }
        acc.value()
    }

    /// |total + lost − 1|, the normalization defect.
    pub fn normalization_defect(&self) -> f64 {
        (self.total_mass() + self.lost_mass - 1.0).abs()
    }
}

/// One-step law of the boundary walk at percolation parameter p:
/// +1 with probability p, −(2k+1) with probability (1−p)·ν(−k−1)/2 for k ≥ 0,
/// 0 with the remaining mass. `neg[k]` stores the −(2k+1) probability;
/// `lost` is the deep-negative mass cut off with the ν table.
#[derive(Debug, Clone)]
pub struct StepLaw {
    pub p: f64,
    /// Truncated-table λ = Σ (2k+1) ν(−k−1); the internal threshold is
    /// λ/(λ+2) for this exact law.
    pub lambda: f64,
    /// E[ΔB] = p − (1−p)·λ/2 on the table.
    pub drift: f64,
    pub up: f64,
    pub zero: f64,
    pub neg: Vec<f64>,
    pub lost: f64,
}

/// Builds the ΔB and ΔB* laws from solved weights. p must lie in [0, 1).
pub fn step_law(solved: &SolvedWeights, p: f64) -> Result<StepLaw> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::DomainError(p));
    }
    let nu = &solved.nu;
    let half = 0.5 * (1.0 - p);
    let k_neg = (-nu.min_support()) as usize;
    let mut neg = Vec::with_capacity(k_neg);
    for k in 0..k_neg {
        neg.push(half * nu.get(-(k as i64) - 1));
    }
    let lost = half * nu.lost_mass;
    let zero = 1.0 - p - (ksum(neg.iter().copied()) + lost);
    let lambda = solved.lambda;
    Ok(StepLaw {
        p,
        lambda,
        drift: p - (1.0 - p) * lambda / 2.0,
        up: p,
        zero,
        neg,
        lost,
    })
}

impl StepLaw {
    /// Percolation threshold of this exact (table-truncated) law.
    pub fn p_c(&self) -> f64 {
        self.lambda / (self.lambda + 2.0)
    }

    /// P(ΔB ≠ 0).
    pub fn nonzero_prob(&self) -> f64 {
        1.0 - self.zero
    }

    fn star_parts(&self) -> (f64, Vec<f64>, f64) {
        let s = 1.0 / self.nonzero_prob();
        let up = self.up * s;
        let neg: Vec<f64> = self.neg.iter().map(|&x| x * s).collect();
        let lost = self.lost * s;
        (up, neg, lost)
    }

    /// Materialized pmf of ΔB over [−(2K−1), 1].
    pub fn delta_pmf(&self) -> Pmf {
        let k = self.neg.len() as i64;
        let lo = -(2 * k - 1);
        let len = (1 - lo + 1) as usize;
        let mut mass = vec![0.0; len];
        mass[(1 - lo) as usize] = self.up;
        mass[(-lo) as usize] = self.zero;
        for (j, &m) in self.neg.iter().enumerate() {
            mass[(-(2 * j as i64 + 1) - lo) as usize] = m;
        }
        Pmf::new(lo, mass, self.lost)
    }

    /// Materialized pmf of ΔB* = ΔB conditioned on being nonzero.
    pub fn star_pmf(&self) -> Pmf {
        let (up, neg, lost) = self.star_parts();
        let k = neg.len() as i64;
        let lo = -(2 * k - 1);
        let len = (1 - lo + 1) as usize;
        let mut mass = vec![0.0; len];
        mass[(1 - lo) as usize] = up;
        for (j, &m) in neg.iter().enumerate() {
            mass[(-(2 * j as i64 + 1) - lo) as usize] = m;
        }
        Pmf::new(lo, mass, lost)
    }
}

fn dot_plain(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut s = (s0 + s2) + (s1 + s3);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

fn dot_comp(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let mut acc = KahanSum::new();
    for i in 0..n {
        acc.add(a[i] * b[i]);
    }
    acc.value()
}

fn dot(a: &[f64], b: &[f64], compensated: bool) -> f64 {
    if compensated {
        dot_comp(a, b)
    } else {
        dot_plain(a, b)
    }
}

/// One parity class of walk positions: pos_lo, pos_lo+2, ..., pos_lo+2(len−1).
struct ParityWindow {
    pos_lo: i64,
    mass: Vec<f64>,
}

impl ParityWindow {
    fn at(&self, pos: i64) -> f64 {
        if pos < self.pos_lo || (pos - self.pos_lo) % 2 != 0 {
            return 0.0;
        }
        let idx = ((pos - self.pos_lo) / 2) as usize;
        self.mass.get(idx).copied().unwrap_or(0.0)
    }

    fn to_pmf(&self, lost: f64) -> Pmf {
        if self.mass.is_empty() {
            return Pmf::new(self.pos_lo, Vec::new(), lost);
        }
        let len = 2 * self.mass.len() - 1;
        let mut dense = vec![0.0; len];
        for (i, &m) in self.mass.iter().enumerate() {
            dense[2 * i] = m;
        }
        Pmf::new(self.pos_lo, dense, lost)
    }
}

/// Result of an absorbing sweep of B* from `start`, with absorption at
/// positions ≤ `below`.
pub struct SweepResult {
    /// `exit_at_bound[i]` = P(first exit time = i, landing exactly at `below`).
    pub exit_at_bound: Vec<f64>,
    /// Total mass that exited strictly below `below` within the horizon.
    pub absorbed_strict: f64,
    /// Distribution of the still-alive walk at the horizon.
    pub final_alive: Pmf,
}

// Smallest position ≥ lo with the parity of `parity_of`.
fn align_up(lo: i64, parity_of: i64) -> i64 {
    if (lo - parity_of).rem_euclid(2) == 0 {
        lo
    } else {
        lo + 1
    }
}

const CELL_CAP: usize = 1 << 26;
const PAR_THRESHOLD: usize = 512;

// Mass this light cannot move any reading by more than horizon·CELL_CAP·clip
// < 1e-50, far under every stated tolerance; trimming such cells off the top
// keeps the window at the walk's probabilistic reach (up-moves are +1, so the
// top tracks a thin binomial tail) instead of the a-priori start+i ceiling.
const TOP_CLIP: f64 = 1e-80;

// Drop trailing cells that are provably irrelevant, keeping at least one.
fn trim_top(mass: &mut Vec<f64>) {
    while mass.len() > 1 && mass.last().is_some_and(|&m| m <= TOP_CLIP) {
        mass.pop();
    }
}

/// Exact first-passage DP for B*: runs n steps from `start`, absorbing every
/// visit to a position ≤ `below`, and records the mass landing exactly at
/// `below` per step. `compensated` switches the inner sums to Neumaier
/// accumulation (use for identities at 1e−10; plain sums are accurate to
/// ~n·support·eps and much faster for exponent tables).
pub fn absorbing_sweep(
    law: &StepLaw,
    start: i64,
    n: u32,
    below: i64,
    compensated: bool,
) -> Result<SweepResult> {
    if start <= below {
        return Err(Error::InvalidWeights(format!(
            "start {start} not above absorption bound {below}"
        )));
    }
    if n > 1 << 20 {
        return Err(Error::BudgetExceeded(format!("n = {n} exceeds 2^20 DP guard")));
    }
    let (up, neg, lost) = law.star_parts();
    let kmax = neg.len();
    // suffix[k] = P(step < −(2k−1)) = lost + Σ_{j≥k} neg[j]; suffix[0] = all negatives.
    let mut suffix = vec![0.0; kmax + 1];
    let mut acc = KahanSum::new();
    acc.add(lost);
    suffix[kmax] = acc.value();
    for k in (0..kmax).rev() {
        acc.add(neg[k]);
        suffix[k] = acc.value();
    }

    let mut exit_at_bound = vec![0.0; n as usize + 1];
    let mut absorbed = KahanSum::new();
    let mut cur = ParityWindow { pos_lo: start, mass: vec![1.0] };

    for i in 1..=n as i64 {
        let parity = (start + i).rem_euclid(2);
        let lo_t = align_up(below + 1, parity);
        // up-moves are exactly +1, so nothing lives above the old top + 1
        let old_top = cur.pos_lo + 2 * (cur.mass.len() as i64 - 1);
        let hi_t = (start + i).min(old_top + 1);
        if hi_t < lo_t {
            break;
        }
        let len_t = ((hi_t - lo_t) / 2 + 1) as usize;
        if len_t > CELL_CAP {
            return Err(Error::WindowOverflow(len_t as f64));
        }

        // Mass exiting this step: landing exactly at `below`, and strictly under it.
        let old_lo = cur.pos_lo;
        let old = &cur.mass;
        // Landing at `below` from y requires step −(y − below), an odd negative:
        // y − below = 2k+1 ⇒ k = (y − below − 1)/2, only when y − below is odd.
        if (old_lo - below).rem_euclid(2) == 1 {
            let k0 = ((old_lo - below - 1) / 2) as usize;
            if k0 < kmax {
                exit_at_bound[i as usize] = dot(old, &neg[k0..], compensated);
            }
        }
        // Strictly-below exits from y: steps < −(y − below), i.e. suffix at
        // k ≥ (y − below + 1)/2 rounded to the next odd-step index.
        {
            let mut a = KahanSum::new();
            for (j, &m) in old.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let y = old_lo + 2 * j as i64;
                let gap = y - below;
                // smallest k with 2k+1 > gap
                let kmin = (gap / 2 + if gap % 2 == 1 { 1 } else { 0 }) as usize;
                let kidx = kmin.min(kmax);
                a.add(m * suffix[kidx]);
            }
            // suffix at kmin already excludes the exact-bound landing (for an
            // odd gap the landing step is index kmin−1), so `a` is strict
            absorbed.add(a.value());
        }

        // Propagate the surviving mass.
        let step_cell = |x: i64| -> f64 {
            let mut v = up * cur.at(x - 1);
            let src_pos = x + 1;
            // sources are src_pos, src_pos+2, ...; when src_pos is below the
            // old window, skip to its floor and offset the step kernel
            let (j0, k0) = if src_pos >= cur.pos_lo {
                (((src_pos - cur.pos_lo) / 2) as usize, 0usize)
            } else {
                (0usize, ((cur.pos_lo - src_pos) / 2) as usize)
            };
            if j0 < cur.mass.len() && k0 < neg.len() {
                v += dot(&cur.mass[j0..], &neg[k0..], compensated);
            }
            v
        };
        let mut new_mass: Vec<f64> = if len_t >= PAR_THRESHOLD && !compensated {
            (0..len_t)
                .into_par_iter()
                .map(|j| step_cell(lo_t + 2 * j as i64))
                .collect()
        } else {
            (0..len_t).map(|j| step_cell(lo_t + 2 * j as i64)).collect()
        };
        trim_top(&mut new_mass);
        cur = ParityWindow { pos_lo: lo_t, mass: new_mass };
    }

    Ok(SweepResult {
        exit_at_bound,
        absorbed_strict: absorbed.value(),
        final_alive: cur.to_pmf(0.0),
    })
}

/// Free DP for B* from `start`: returns P(B*_i = 0) for i = 0..=n, exact per
/// entry. The window floor at time i is −(n−i): since up-steps are exactly +1,
/// mass below the floor can never return to 0 within the horizon, so clipping
/// it is lossless for every reading.
pub fn free_zero_readings(
    law: &StepLaw,
    start: i64,
    n: u32,
    compensated: bool,
) -> Result<Vec<f64>> {
    let (full, readings) = free_sweep(law, start, n, compensated)?;
    drop(full);
    Ok(readings)
}

fn free_sweep(
    law: &StepLaw,
    start: i64,
    n: u32,
    compensated: bool,
) -> Result<(ParityWindow, Vec<f64>)> {
    if n > 1 << 20 {
        return Err(Error::BudgetExceeded(format!("n = {n} exceeds 2^20 DP guard")));
    }
    let (up, neg, _lost) = law.star_parts();
    let mut readings = vec![0.0; n as usize + 1];
    if start == 0 {
        readings[0] = 1.0;
    }
    let mut cur = ParityWindow { pos_lo: start, mass: vec![1.0] };
    let n_i = n as i64;

    for i in 1..=n_i {
        let parity = (start + i).rem_euclid(2);
        let floor = align_up(start.min(0) - (n_i - i), parity);
        // same +1 reach bound as the absorbing sweep
        let old_top = cur.pos_lo + 2 * (cur.mass.len() as i64 - 1);
        let hi_t = (start + i).min(old_top + 1);
        if hi_t < floor {
            break;
        }
        let len_t = ((hi_t - floor) / 2 + 1) as usize;
        if len_t > CELL_CAP {
            return Err(Error::WindowOverflow(len_t as f64));
        }
        let step_cell = |x: i64| -> f64 {
            let mut v = up * cur.at(x - 1);
            let src_pos = x + 1;
            // same source alignment as the absorbing sweep: clamp to the old
            // window's floor and offset the step kernel to match
            let (j0, k0) = if src_pos >= cur.pos_lo {
                (((src_pos - cur.pos_lo) / 2) as usize, 0usize)
            } else {
                (0usize, ((cur.pos_lo - src_pos) / 2) as usize)
            };
            if j0 < cur.mass.len() && k0 < neg.len() {
                v += dot(&cur.mass[j0..], &neg[k0..], compensated);
            }
            v
        };
        let mut new_mass: Vec<f64> = if len_t >= PAR_THRESHOLD && !compensated {
            (0..len_t)
                .into_par_iter()
                .map(|j| step_cell(floor + 2 * j as i64))
                .collect()
        } else {
            (0..len_t).map(|j| step_cell(floor + 2 * j as i64)).collect()
        };
        trim_top(&mut new_mass);
        cur = ParityWindow { pos_lo: floor, mass: new_mass };
        if parity == 0 && floor <= 0 {
            readings[i as usize] = cur.at(0);
        }
    }
    Ok((cur, readings))
}

/// n-fold convolution of ΔB* from `start` (spec default 1). With
/// `absorb_below = Some(b)` the walk is killed on reaching ≤ b and the killed
/// mass is folded into `lost_mass`; without it, positions ≥ min(start, 0) in
/// the result are exact and deeper mass is parked in `lost_mass`.
pub fn propagate(
    law: &StepLaw,
    start: i64,
    n: u32,
    absorb_below: Option<i64>,
) -> Result<Pmf> {
    if n == 0 {
        return Ok(Pmf::point(start));
    }
    let compensated = n <= 4096;
    match absorb_below {
        Some(below) => {
            let sweep = absorbing_sweep(law, start, n, below, compensated)?;
            let mut out = sweep.final_alive;
            let exited = ksum(sweep.exit_at_bound.iter().copied()) + sweep.absorbed_strict;
            out.lost_mass += exited;
            Ok(out)
        }
        None => {
            let (window, _) = free_sweep(law, start, n, compensated)?;
            let mut out = window.to_pmf(0.0);
            out.lost_mass = (1.0 - out.total_mass()).max(0.0);
            Ok(out)
        }
    }
}

/// Exact P(T* = 2k+1, B*_{T*} = 0)/(1−p) with T* = inf{i > 0 : B*_i ≤ 0},
/// from B*_0 = 1, by first-passage DP.
pub fn hcut_exact(law: &StepLaw, p: f64, k: u32) -> Result<f64> {
    debug_assert!((p - law.p).abs() < 1e-12, "p disagrees with the law it came from");
    if p >= 1.0 {
        return Err(Error::DomainError(p));
    }
    let n = 2 * k + 1;
    let sweep = absorbing_sweep(law, 1, n, 0, n <= 4096)?;
    Ok(sweep.exit_at_bound[n as usize] / (1.0 - p))
}

/// hcut_exact for all k = 0..=k_max in one absorbing sweep.
pub fn hcut_table(law: &StepLaw, k_max: u32) -> Result<Vec<f64>> {
    let n = 2 * k_max + 1;
    let sweep = absorbing_sweep(law, 1, n, 0, n <= 2048)?;
    let scale = 1.0 / (1.0 - law.p);
    Ok((0..=k_max)
        .map(|k| sweep.exit_at_bound[(2 * k + 1) as usize] * scale)
        .collect())
}

/// Both sides of the cyclic identity at index k, computed independently:
/// lhs = P(T* = 2k+1, B*_{T*} = 0) by absorbing DP,
/// rhs = P(B*_{2k+1} = 0)/(2k+1) by free DP. Exact equality is the theorem.
pub fn cyclic_check(law: &StepLaw, k: u32) -> Result<(f64, f64)> {
    let n = 2 * k + 1;
    let lhs = absorbing_sweep(law, 1, n, 0, true)?.exit_at_bound[n as usize];
    let rhs = free_zero_readings(law, 1, n, true)?[n as usize] / n as f64;
    Ok((lhs, rhs))
}

/// Cyclic identity for every k = 0..=k_max from one absorbing and one free
/// sweep, both Neumaier-compensated.
pub fn cyclic_table(law: &StepLaw, k_max: u32) -> Result<Vec<(f64, f64)>> {
    let n = 2 * k_max + 1;
    let lhs = absorbing_sweep(law, 1, n, 0, true)?.exit_at_bound;
    let rhs = free_zero_readings(law, 1, n, true)?;
    Ok((0..=k_max)
        .map(|k| {
            let i = (2 * k + 1) as usize;
            (lhs[i], rhs[i] / i as f64)
        })
        .collect())
}

/// P(τ* > horizon) where τ* is the first strictly-negative visit of B*
/// (position 0 keeps the walk alive). For positive drift this stabilizes to
/// the survival probability P(τ = ∞) of the lazy walk, which shares its
/// extinction event with B*.
pub fn survival_estimate(law: &StepLaw, horizon: u32) -> Result<f64> {
    if horizon > 1 << 16 {
        return Err(Error::BudgetExceeded(format!(
            "horizon {horizon} exceeds 2^16 DP guard"
        )));
    }
    let sweep = absorbing_sweep(law, 1, horizon, -1, false)?;
    Ok(sweep.final_alive.total_mass())
}
