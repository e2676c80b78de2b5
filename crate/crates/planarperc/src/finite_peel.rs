//! Peeling exploration of a percolated finite random map, tracked through the
//! boundary pair (B, F): B closed (black) boundary edges, F undetermined
//! (free) ones. Each step peels one free edge. With probability p the edge is
//! open and joins the cluster; otherwise the map side of the edge is revealed,
//! either a fresh face of degree 2k or a gluing that swallows part of the
//! boundary. The exploration dies when F = 0; the number of steps θ bounds the
//! cluster boundary length by θ + 1.
//!
//! Event probabilities at half-perimeter P come from exact disk-function
//! ratios while P stays inside the solved table, and from the limiting step
//! measure ν beyond it (recorded per run as a switch of regime).

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{run_rng, AliasTable};
use crate::stats::{fit_exp_tail, FitReport};
use crate::weights::SolvedWeights;

/// Residual bound for each per-perimeter event table; the face and gluing
/// weights must partition unit mass up to quadrature error.
const TABLE_RESIDUAL_TOL: f64 = 1e-6;

/// Boundary state of the exploration. Both counts are edge counts on the
/// frontier; B + F stays even and the chain is dead once F = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BFState {
    pub black: u64,
    pub free: u64,
}

impl BFState {
    pub fn root(k: u32) -> Self {
        BFState { black: 1, free: 2 * k as u64 - 1 }
    }

    /// Half the frontier length, the P indexing the event tables.
    pub fn half_perimeter(&self) -> u64 {
        (self.black + self.free) / 2
    }

    pub fn is_dead(&self) -> bool {
        self.free == 0
    }
}

/// One peeling event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeelEvent {
    /// The peeled edge is open: it joins the cluster and turns black.
    Mark,
    /// The peeled edge borders an undiscovered face of degree 2k.
    Face { k: u32 },
    /// The peeled edge closes onto the free side, enclosing 2j + 2 free edges
    /// (the peeled edge included).
    FillFree { j: u64 },
    /// The peeled edge closes onto the black side, enclosing 2k + 1 black
    /// edges; the peeled edge itself leaves the frontier.
    FillBlack { k: u64 },
}

/// Applies an event to a live state. Panics on an event that is illegal for
/// the state; samplers only produce legal ones.
pub fn apply_event(state: BFState, event: PeelEvent) -> BFState {
    assert!(!state.is_dead(), "peeling a dead boundary");
    let (black, free) = match event {
        PeelEvent::Mark => (state.black + 1, state.free - 1),
        PeelEvent::Face { k } => (state.black, state.free + (2 * k as u64).saturating_sub(2)),
        PeelEvent::FillFree { j } => {
            let eaten = 2 * j + 2;
            (state.black, state.free.checked_sub(eaten).expect("free fill exceeds frontier"))
        }
        PeelEvent::FillBlack { k } => (
            state.black.checked_sub(2 * k + 1).expect("black fill exceeds frontier"),
            state.free - 1,
        ),
    };
    BFState { black, free }
}

struct EventTable {
    alias: AliasTable,
    /// Outcomes 0..n_faces are Face events over the q support, in order; the
    /// remaining P outcomes are the gluing position s = 0..P−1.
    n_faces: usize,
}

struct LimitKernel {
    alias: AliasTable,
    n_faces: usize,
    /// Unit mass minus the stored ν mass (deep-fill truncation).
    deficit: f64,
}

/// One step's outcome.
#[derive(Debug, Clone, Copy)]
pub struct PeelStep {
    pub state: BFState,
    pub event: PeelEvent,
    /// True when the step was drawn from the limiting kernel rather than an
    /// exact finite-perimeter table.
    pub limit_kernel: bool,
}

/// Exploration sampler for one solved weight sequence at percolation
/// parameter p. Per-perimeter event tables are built on first use and cached;
/// beyond the table horizon the ν-limit kernel takes over when enabled.
pub struct Peeler<'a> {
    solved: &'a SolvedWeights,
    p: f64,
    /// Face sizes k with q_k > 0, ascending.
    support: Vec<u32>,
    /// Largest half-perimeter with exact-table coverage for every event.
    finite_p_max: u64,
    tables: RwLock<HashMap<u64, Arc<EventTable>>>,
    limit_kernel: Option<LimitKernel>,
    root_alias: AliasTable,
    root_ks: Vec<u32>,
    root_remainder: f64,
    worst_residual: AtomicU64,
}

impl<'a> Peeler<'a> {
    pub fn new(solved: &'a SolvedWeights, p: f64) -> Result<Peeler<'a>> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::DomainError(p));
        }
        let q = &solved.q;
        let support: Vec<u32> = (1..=q.k_cap).filter(|&k| q.q(k) > 0.0).collect();
        if support.is_empty() {
            return Err(Error::InvalidWeights("no positive face weight".into()));
        }
        let l_max = solved.disk.l_max as u64;
        let k_max = *support.last().unwrap() as u64;
        let finite_p_max = (l_max + 1).saturating_sub(k_max).min(l_max);

        // Root face law: weight q_k · W^(k), the one-face disk with a marked
        // boundary of length 2k. Support beyond the table is truncated and the
        // remainder estimated from the last included term's decay ratio.
        let mut root_ks = Vec::new();
        let mut root_w = Vec::new();
        for &k in &support {
            if k as u64 <= l_max {
                root_ks.push(k);
                root_w.push((q.q(k).ln() + solved.disk.ln_w_raw(k)).exp());
            }
        }
        if root_ks.is_empty() {
            return Err(Error::InvalidWeights("face support entirely beyond the disk table".into()));
        }
        let root_remainder = if root_ks.len() == support.len() {
            0.0
        } else {
            let n = root_w.len();
            let last = root_w[n - 1];
            let ratio = if n >= 2 && root_w[n - 2] > 0.0 { last / root_w[n - 2] } else { 1.0 };
            if ratio < 1.0 { last * ratio / (1.0 - ratio) } else { f64::INFINITY }
        };
        let root_alias = AliasTable::new(&root_w)
            .ok_or_else(|| Error::InvalidWeights("degenerate root face law".into()))?;

        let limit_kernel = Self::build_limit_kernel(solved, &support);
        Ok(Peeler {
            solved,
            p,
            support,
            finite_p_max,
            tables: RwLock::new(HashMap::new()),
            limit_kernel,
            root_alias,
            root_ks,
            root_remainder,
            worst_residual: AtomicU64::new(0),
        })
    }

    /// Disables or re-enables the ν-limit kernel. With the kernel off, steps
    /// beyond the table horizon fail with `TableExhausted`.
    pub fn set_limit_kernel(&mut self, on: bool) {
        if on {
            if self.limit_kernel.is_none() {
                self.limit_kernel = Self::build_limit_kernel(self.solved, &self.support);
            }
        } else {
            self.limit_kernel = None;
        }
    }

    fn build_limit_kernel(solved: &SolvedWeights, support: &[u32]) -> Option<LimitKernel> {
        let nu = &solved.nu;
        let neg_len = (-nu.min_support()).max(0) as usize;
        let mut w = Vec::with_capacity(support.len() + neg_len);
        for &k in support {
            w.push(nu.get(k as i64 - 1));
        }
        for t in 0..neg_len {
            w.push(nu.get(-(t as i64) - 1));
        }
        let total: f64 = w.iter().sum();
        let alias = AliasTable::new(&w)?;
        Some(LimitKernel { alias, n_faces: support.len(), deficit: 1.0 - total })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Largest half-perimeter served by exact tables.
    pub fn finite_p_max(&self) -> u64 {
        self.finite_p_max
    }

    /// Mass of the root face law cut off by the disk table (0 for bounded
    /// support inside the table).
    pub fn root_remainder(&self) -> f64 {
        self.root_remainder
    }

    /// ν mass missing from the limit kernel, when the kernel is enabled.
    pub fn limit_kernel_deficit(&self) -> Option<f64> {
        self.limit_kernel.as_ref().map(|k| k.deficit)
    }

    /// Worst |1 − Σ weights| over all event tables built so far.
    pub fn worst_residual(&self) -> f64 {
        f64::from_bits(self.worst_residual.load(Ordering::Relaxed))
    }

    /// Draws the root face size k; the exploration starts from
    /// (B, F) = (1, 2k − 1) on that face's boundary.
    pub fn sample_root_degree<R: Rng>(&self, rng: &mut R) -> u32 {
        self.root_ks[self.root_alias.sample(rng) as usize]
    }

    fn table(&self, p_half: u64) -> Result<Arc<EventTable>> {
        if let Some(t) = self.tables.read().unwrap().get(&p_half) {
            return Ok(t.clone());
        }
        let built = Arc::new(self.build_table(p_half)?);
        let mut map = self.tables.write().unwrap();
        Ok(map.entry(p_half).or_insert(built).clone())
    }

    fn build_table(&self, p_half: u64) -> Result<EventTable> {
        let disk = &self.solved.disk;
        let q = &self.solved.q;
        let base = disk.ln_w_raw(p_half as u32);
        let mut w = Vec::with_capacity(self.support.len() + p_half as usize);
        for &k in &self.support {
            w.push((q.q(k).ln() + disk.ln_w_raw(p_half as u32 + k - 1) - base).exp());
        }
        for s in 0..p_half as u32 {
            w.push((disk.ln_w_raw(s) + disk.ln_w_raw(p_half as u32 - 1 - s) - base).exp());
        }
        let total: f64 = crate::numeric::ksum(w.iter().copied());
        let residual = (total - 1.0).abs();
        self.worst_residual.fetch_max(residual.to_bits(), Ordering::Relaxed);
        if residual > TABLE_RESIDUAL_TOL {
            return Err(Error::Inconclusive(format!(
                "event table at half-perimeter {p_half} has normalization residual {residual:.3e}"
            )));
        }
        let alias = AliasTable::new(&w)
            .ok_or_else(|| Error::InvalidWeights("degenerate event table".into()))?;
        Ok(EventTable { alias, n_faces: self.support.len() })
    }

    /// Classifies a gluing position s at state (B, F): positions with
    /// 2s + 2 ≤ F close onto the free side; the rest close onto the black
    /// side with k = P − 1 − s, which always satisfies 2k + 1 ≤ B.
    fn classify(&self, state: BFState, s: u64) -> PeelEvent {
        if 2 * s + 2 <= state.free {
            PeelEvent::FillFree { j: s }
        } else {
            PeelEvent::FillBlack { k: state.half_perimeter() - 1 - s }
        }
    }

    /// Samples one peeling step from a live state.
    pub fn step<R: Rng>(&self, state: BFState, rng: &mut R) -> Result<PeelStep> {
        if state.is_dead() {
            return Err(Error::Degenerate("peeling step from a dead boundary".into()));
        }
        if rng.random::<f64>() < self.p {
            return Ok(PeelStep {
                state: apply_event(state, PeelEvent::Mark),
                event: PeelEvent::Mark,
                limit_kernel: false,
            });
        }
        let p_half = state.half_perimeter();
        let (event, from_kernel) = if p_half <= self.finite_p_max {
            let table = self.table(p_half)?;
            let i = table.alias.sample(rng) as usize;
            let ev = if i < table.n_faces {
                PeelEvent::Face { k: self.support[i] }
            } else {
                self.classify(state, (i - table.n_faces) as u64)
            };
            (ev, false)
        } else {
            let kernel = self
                .limit_kernel
                .as_ref()
                .ok_or(Error::TableExhausted(p_half.min(u32::MAX as u64) as u32))?;
            let i = kernel.alias.sample(rng) as usize;
            let ev = if i < kernel.n_faces {
                PeelEvent::Face { k: self.support[i] }
            } else {
                // The drawn fill size t lands on either boundary side with
                // equal weight. A side that cannot absorb t corresponds to
                // the complementary position s = P − 1 − t on the other side,
                // which is always legal there; reflecting preserves the exact
                // two-sided partition of gluing positions.
                let t = (i - kernel.n_faces) as u64;
                if rng.random::<f64>() < 0.5 {
                    if 2 * t + 2 <= state.free {
                        PeelEvent::FillFree { j: t }
                    } else {
                        PeelEvent::FillBlack { k: p_half - 1 - t }
                    }
                } else if 2 * t + 1 <= state.black {
                    PeelEvent::FillBlack { k: t }
                } else {
                    PeelEvent::FillFree { j: p_half - 1 - t }
                }
            };
            (ev, true)
        };
        Ok(PeelStep { state: apply_event(state, event), event, limit_kernel: from_kernel })
    }

    /// Exact event probabilities at a live state inside the table horizon:
    /// Mark first, then faces, then each gluing position classified for this
    /// state, all weighted by (1 − p) except the mark.
    pub fn event_probs(&self, state: BFState) -> Result<Vec<(PeelEvent, f64)>> {
        if state.is_dead() {
            return Err(Error::Degenerate("dead boundary has no events".into()));
        }
        let p_half = state.half_perimeter();
        if p_half > self.finite_p_max {
            return Err(Error::TableExhausted(p_half.min(u32::MAX as u64) as u32));
        }
        let disk = &self.solved.disk;
        let q = &self.solved.q;
        let base = disk.ln_w_raw(p_half as u32);
        let mut out = vec![(PeelEvent::Mark, self.p)];
        let rest = 1.0 - self.p;
        for &k in &self.support {
            let w = (q.q(k).ln() + disk.ln_w_raw(p_half as u32 + k - 1) - base).exp();
            out.push((PeelEvent::Face { k }, rest * w));
        }
        for s in 0..p_half {
            let w = (disk.ln_w_raw(s as u32) + disk.ln_w_raw((p_half - 1 - s) as u32) - base).exp();
            out.push((self.classify(state, s), rest * w));
        }
        Ok(out)
    }
}

/// Outcome of one exploration run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaRecord {
    /// Steps until the frontier died, None when the run hit the step cap.
    pub theta: Option<u64>,
    /// Steps actually taken (θ or the cap).
    pub steps: u64,
    pub root_k: u32,
    pub marks: u64,
    pub faces: u64,
    pub max_half_perimeter: u64,
    /// Half-perimeter at the first limit-kernel step, if any.
    pub switch_half_perimeter: Option<u64>,
}

impl ThetaRecord {
    pub fn censored(&self) -> bool {
        self.theta.is_none()
    }

    /// Upper bound on the explored cluster's boundary length.
    pub fn perimeter_upper(&self) -> Option<u64> {
        self.theta.map(|t| t + 1)
    }
}

fn run_loop<R: Rng>(
    peeler: &Peeler<'_>,
    start: BFState,
    root_k: u32,
    rng: &mut R,
    step_cap: u64,
) -> Result<ThetaRecord> {
    let mut state = start;
    let mut marks = 0u64;
    let mut faces = 0u64;
    let mut max_p = state.half_perimeter();
    let mut switch = None;
    for step_idx in 1..=step_cap {
        let out = peeler.step(state, rng)?;
        match out.event {
            PeelEvent::Mark => marks += 1,
            PeelEvent::Face { .. } => faces += 1,
            _ => {}
        }
        if out.limit_kernel && switch.is_none() {
            switch = Some(state.half_perimeter());
        }
        state = out.state;
        max_p = max_p.max(state.half_perimeter());
        if state.is_dead() {
            return Ok(ThetaRecord {
                theta: Some(step_idx),
                steps: step_idx,
                root_k,
                marks,
                faces,
                max_half_perimeter: max_p,
                switch_half_perimeter: switch,
            });
        }
    }
    Ok(ThetaRecord {
        theta: None,
        steps: step_cap,
        root_k,
        marks,
        faces,
        max_half_perimeter: max_p,
        switch_half_perimeter: switch,
    })
}

/// Runs one exploration from a sampled root face.
pub fn run_theta<R: Rng>(peeler: &Peeler<'_>, rng: &mut R, step_cap: u64) -> Result<ThetaRecord> {
    let k = peeler.sample_root_degree(rng);
    run_loop(peeler, BFState::root(k), k, rng, step_cap)
}

/// Runs independent explorations with per-run derived rngs; run i is
/// reproducible from (seed, i) alone.
pub fn run_theta_batch(
    peeler: &Peeler<'_>,
    seed: u64,
    runs: u64,
    step_cap: u64,
) -> Result<Vec<ThetaRecord>> {
    (0..runs)
        .into_par_iter()
        .map(|i| run_theta(peeler, &mut run_rng(seed, i), step_cap))
        .collect()
}

/// Tail of θ on an integer grid between the median and the high quantile,
/// with an exponential fit over that window.
#[derive(Debug, Clone)]
pub struct ThetaTail {
    /// (t, P(θ ≥ t)); censored runs count as alive at every grid point.
    pub points: Vec<(f64, f64)>,
    pub fit: FitReport,
    pub censored_fraction: f64,
    pub window: (f64, f64),
}

pub fn theta_tail(records: &[ThetaRecord]) -> Result<ThetaTail> {
    let n = records.len();
    if n < 200 {
        return Err(Error::InsufficientTailSamples(format!("{n} runs, need 200")));
    }
    let censored = records.iter().filter(|r| r.censored()).count();
    let censored_fraction = censored as f64 / n as f64;
    if censored_fraction > 0.005 {
        return Err(Error::InsufficientTailSamples(format!(
            "censored fraction {censored_fraction:.4} too high for a tail fit"
        )));
    }
    let mut thetas: Vec<u64> = records.iter().filter_map(|r| r.theta).collect();
    thetas.sort_unstable();
    let m = thetas.len();
    let lo = thetas[m / 2];
    // High quantile capped so at least 50 deaths sit beyond it.
    let hi_rank = ((0.999 * m as f64) as usize).min(m - 50.min(m / 2));
    let hi = thetas[hi_rank];
    if hi <= lo + 3 {
        return Err(Error::InsufficientTailSamples(format!(
            "tail window [{lo}, {hi}] too narrow"
        )));
    }
    let mut points = Vec::new();
    let mut last_t = u64::MAX;
    for i in 0..24 {
        let t = lo + ((hi - lo) as f64 * i as f64 / 23.0).round() as u64;
        if t == last_t {
            continue;
        }
        last_t = t;
        let below = thetas.partition_point(|&x| x < t);
        let tail = (m - below + censored) as f64 / n as f64;
        if tail > 0.0 {
            points.push((t as f64, tail));
        }
    }
    let window = (lo as f64, hi as f64);
    let fit = fit_exp_tail(&points, window)?;
    Ok(ThetaTail { points, fit, censored_fraction, window })
}

/// Mean one-step ΔB over visits with B at or above a threshold, against the
/// ν-limit drift p − (1 − p)λ/2. Finite-perimeter tables shift mass toward
/// deeper fills, so the empirical mean should not exceed the limit drift by
/// more than sampling noise.
#[derive(Debug, Clone, Copy)]
pub struct DriftCheck {
    pub empirical_mean: f64,
    pub limit_drift: f64,
    /// Std error of the empirical mean; fill sizes are heavy tailed, so this
    /// is a finite-sample figure, not a stable asymptotic.
    pub std_error: f64,
    pub samples: u64,
}

pub fn drift_check(
    peeler: &Peeler<'_>,
    threshold_b: u64,
    seed: u64,
    runs: u64,
    step_cap: u64,
) -> Result<DriftCheck> {
    let limit_drift = crate::walk_oracle::step_law(peeler.solved, peeler.p)?.drift;
    let stats = (0..runs)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64, u64)> {
            let mut rng = run_rng(seed, i);
            let k = peeler.sample_root_degree(&mut rng);
            let mut state = BFState::root(k);
            let (mut sum, mut sumsq, mut count) = (0.0, 0.0, 0u64);
            for _ in 0..step_cap {
                let out = peeler.step(state, &mut rng)?;
                if !out.state.is_dead() && state.black >= threshold_b {
                    let db = out.state.black as f64 - state.black as f64;
                    sum += db;
                    sumsq += db * db;
                    count += 1;
                }
                state = out.state;
                if state.is_dead() {
                    break;
                }
            }
            Ok((sum, sumsq, count))
        })
        .try_reduce(
            || (0.0, 0.0, 0u64),
            |a, b| Ok((a.0 + b.0, a.1 + b.1, a.2 + b.2)),
        )?;
    let (sum, sumsq, count) = stats;
    if count < 100 {
        return Err(Error::InsufficientTailSamples(format!(
            "{count} steps above B = {threshold_b}"
        )));
    }
    let mean = sum / count as f64;
    let var = (sumsq / count as f64 - mean * mean).max(0.0);
    Ok(DriftCheck {
        empirical_mean: mean,
        limit_drift,
        std_error: (var / count as f64).sqrt(),
        samples: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::enumerate::w_disk_enumerate;
    use crate::weights::{solve_admissibility, solve_with, WeightSeq};

    fn solved_preset(name: &str) -> SolvedWeights {
        solve_admissibility(&WeightSeq::preset(name).unwrap()).unwrap()
    }

    #[test]
    fn structural_deltas_and_parity() {
        let s = BFState { black: 1, free: 3 };
        assert_eq!(apply_event(s, PeelEvent::Mark), BFState { black: 2, free: 2 });
        assert_eq!(apply_event(s, PeelEvent::Face { k: 2 }), BFState { black: 1, free: 5 });
        assert_eq!(apply_event(s, PeelEvent::Face { k: 1 }), BFState { black: 1, free: 3 });
        assert_eq!(apply_event(s, PeelEvent::FillFree { j: 0 }), BFState { black: 1, free: 1 });
        assert_eq!(apply_event(s, PeelEvent::FillBlack { k: 0 }), BFState { black: 0, free: 2 });
        assert_eq!(s.half_perimeter(), 2);
        assert_eq!(BFState::root(2), BFState { black: 1, free: 3 });
        // Every event moves B + F by an even amount.
        for ev in [
            PeelEvent::Mark,
            PeelEvent::Face { k: 2 },
            PeelEvent::FillFree { j: 0 },
            PeelEvent::FillBlack { k: 0 },
        ] {
            let next = apply_event(s, ev);
            assert_eq!((next.black + next.free) % 2, (s.black + s.free) % 2);
        }
    }

    #[test]
    fn root_degree_law_matches_disk_weights() {
        let solved = solved_preset("crit-quad");
        let peeler = Peeler::new(&solved, 0.3).unwrap();
        assert_eq!(peeler.root_remainder(), 0.0);
        let mut rng = run_rng(7, 0);
        for _ in 0..200 {
            assert_eq!(peeler.sample_root_degree(&mut rng), 2);
        }

        let q = WeightSeq::from_explicit(&[(1, 0.05), (2, 0.02)], 8).unwrap();
        let solved = solve_admissibility(&q).unwrap();
        let peeler = Peeler::new(&solved, 0.3).unwrap();
        let w1 = 0.05 * solved.disk.w_raw(1);
        let w2 = 0.02 * solved.disk.w_raw(2);
        let expect1 = w1 / (w1 + w2);
        let n = 40_000u64;
        let mut rng = run_rng(8, 0);
        let ones = (0..n).filter(|_| peeler.sample_root_degree(&mut rng) == 1).count() as f64;
        let freq = ones / n as f64;
        let sigma = (expect1 * (1.0 - expect1) / n as f64).sqrt();
        assert!(
            (freq - expect1).abs() <= 3.0 * sigma,
            "root degree freq {freq} vs {expect1} (sigma {sigma})"
        );
    }

    #[test]
    fn event_probs_match_enumeration_oracle() {
        let solved = solved_preset("subcrit-quad");
        let q = &solved.q;
        let p = 0.37;
        let peeler = Peeler::new(&solved, p).unwrap();
        let state = BFState { black: 1, free: 3 };
        let probs = peeler.event_probs(state).unwrap();

        let total: f64 = probs.iter().map(|&(_, m)| m).sum();
        assert!((total - 1.0).abs() < 1e-9, "event mass {total}");
        assert_eq!(probs[0], (PeelEvent::Mark, p));

        // Independent small-disk oracle: direct map enumeration.
        let e_max = 220;
        let (w1, b1) = w_disk_enumerate(q, 1, e_max).unwrap();
        let (w2, b2) = w_disk_enumerate(q, 2, e_max).unwrap();
        let (w3, b3) = w_disk_enumerate(q, 3, e_max).unwrap();
        assert!(b1 < 1e-8 && b2 < 1e-8 && b3 < 1e-8);
        let face2 = (1.0 - p) * q.q(2) * w3 / w2;
        let glue0 = (1.0 - p) * w1 / w2;

        let lookup = |ev: PeelEvent| {
            probs.iter().find(|&&(e, _)| e == ev).map(|&(_, m)| m).unwrap_or(0.0)
        };
        let got_face = lookup(PeelEvent::Face { k: 2 });
        assert!(
            (got_face - face2).abs() / face2 < 1e-6,
            "face prob {got_face} vs enumeration {face2}"
        );
        // s = 0 swallows two free edges (legal at F = 3); s = 1 cannot, so it
        // closes onto the black side with k = 0. Both carry W^(0)·W^(1)/W^(2).
        let got_free = lookup(PeelEvent::FillFree { j: 0 });
        let got_black = lookup(PeelEvent::FillBlack { k: 0 });
        assert!((got_free - glue0).abs() / glue0 < 1e-6, "free fill {got_free} vs {glue0}");
        assert!((got_black - glue0).abs() / glue0 < 1e-6, "black fill {got_black} vs {glue0}");
        assert_eq!(probs.len(), 1 + 1 + 2);
    }

    #[test]
    fn all_marks_kill_in_free_count_steps() {
        let solved = solved_preset("crit-quad");
        let peeler = Peeler::new(&solved, 1.0).unwrap();
        let step = peeler.step(BFState { black: 3, free: 1 }, &mut run_rng(1, 0)).unwrap();
        assert_eq!(step.event, PeelEvent::Mark);
        assert!(step.state.is_dead());

        let rec = run_theta(&peeler, &mut run_rng(2, 0), 100).unwrap();
        assert_eq!(rec.theta, Some(3));
        assert_eq!(rec.marks, 3);
        assert_eq!(rec.perimeter_upper(), Some(4));
    }

    #[test]
    fn batch_is_deterministic_and_normalized() {
        let solved = solved_preset("subcrit-quad");
        let peeler = Peeler::new(&solved, 0.1).unwrap();
        let a = run_theta_batch(&peeler, 99, 400, 100_000).unwrap();
        let b = run_theta_batch(&peeler, 99, 400, 100_000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[5], run_theta(&peeler, &mut run_rng(99, 5), 100_000).unwrap());
        assert!(a.iter().all(|r| r.theta.is_some()));
        assert!(peeler.worst_residual() <= TABLE_RESIDUAL_TOL);
        assert!(peeler.worst_residual() > 0.0);
    }

    #[test]
    fn parity_invariant_along_runs() {
        let solved = solved_preset("subcrit-quad");
        let peeler = Peeler::new(&solved, 0.2).unwrap();
        let mut rng = run_rng(13, 0);
        for _ in 0..50 {
            let k = peeler.sample_root_degree(&mut rng);
            let mut state = BFState::root(k);
            for _ in 0..10_000 {
                let out = peeler.step(state, &mut rng).unwrap();
                state = out.state;
                assert_eq!((state.black + state.free) % 2, 0);
                if state.is_dead() {
                    break;
                }
            }
            assert!(state.is_dead());
        }
    }

    #[test]
    fn subcritical_theta_tail_is_exponential() {
        let solved = solved_preset("subcrit-quad");
        let peeler = Peeler::new(&solved, 0.1).unwrap();
        let records = run_theta_batch(&peeler, 2024, 30_000, 100_000).unwrap();
        let tail = theta_tail(&records).unwrap();
        assert_eq!(tail.censored_fraction, 0.0);
        assert!(tail.fit.r2 >= 0.98, "exp tail fit r2 {}", tail.fit.r2);
        assert!(tail.fit.rate() > 0.01, "decay rate {}", tail.fit.rate());

        // Face-event rate stays put when the sample doubles.
        let half = &records[..15_000];
        let rate = |rs: &[ThetaRecord]| {
            let f: u64 = rs.iter().map(|r| r.faces).sum();
            let s: u64 = rs.iter().map(|r| r.steps).sum();
            f as f64 / s as f64
        };
        let (r_half, r_full) = (rate(half), rate(&records));
        assert!(r_full > 0.0);
        assert!(
            (r_half - r_full).abs() / r_full <= 0.2,
            "face rate drifts: {r_half} vs {r_full}"
        );
    }

    #[test]
    fn table_exhaustion_and_limit_kernel() {
        let q = WeightSeq::quad(1.0 / 12.0);
        let solved = solve_with(&q, 64).unwrap();
        let mut peeler = Peeler::new(&solved, 0.35).unwrap();
        assert_eq!(peeler.finite_p_max(), 63);
        let deep = BFState { black: 1, free: 129 };

        peeler.set_limit_kernel(false);
        let mut rng = run_rng(3, 0);
        // Force a non-mark draw so the table lookup is reached.
        let err = loop {
            match peeler.step(deep, &mut rng) {
                Ok(out) if out.event == PeelEvent::Mark => continue,
                Ok(out) => panic!("expected exhaustion, got {:?}", out.event),
                Err(e) => break e,
            }
        };
        assert!(matches!(err, Error::TableExhausted(65)));

        peeler.set_limit_kernel(true);
        assert!(peeler.limit_kernel_deficit().unwrap() < 1e-3);
        let mut marks = 0u64;
        let mut kernel_steps = 0u64;
        let n = 4000;
        for i in 0..n {
            let out = peeler.step(deep, &mut run_rng(50, i)).unwrap();
            if out.event == PeelEvent::Mark {
                marks += 1;
            } else {
                assert!(out.limit_kernel);
                kernel_steps += 1;
            }
            // Legality was enforced by apply_event; parity must hold too.
            assert_eq!((out.state.black + out.state.free) % 2, 0);
        }
        let freq = marks as f64 / n as f64;
        let sigma = (0.35f64 * 0.65 / n as f64).sqrt();
        assert!((freq - 0.35).abs() <= 3.0 * sigma, "mark freq {freq}");
        assert!(kernel_steps > 0);

        // A run started beyond the horizon records the switch immediately.
        let rec = run_loop(&peeler, deep, 2, &mut run_rng(60, 0), 50_000).unwrap();
        assert_eq!(rec.switch_half_perimeter, Some(65));
    }

    #[test]
    fn p_zero_dies_with_no_marks() {
        let solved = solved_preset("subcrit-quad");
        let peeler = Peeler::new(&solved, 0.0).unwrap();
        let records = run_theta_batch(&peeler, 5, 2000, 100_000).unwrap();
        assert!(records.iter().all(|r| r.theta.is_some() && r.marks == 0));
        let mean: f64 =
            records.iter().map(|r| r.steps as f64).sum::<f64>() / records.len() as f64;
        assert!(mean > 1.0 && mean < 1000.0, "mean theta {mean}");
    }

    #[test]
    fn near_one_marks_track_theta_and_censoring_is_reported() {
        let solved = solved_preset("subcrit-quad");
        let peeler = Peeler::new(&solved, 0.95).unwrap();
        let records = run_theta_batch(&peeler, 6, 2000, 100_000).unwrap();
        let steps: u64 = records.iter().map(|r| r.steps).sum();
        let marks: u64 = records.iter().map(|r| r.marks).sum();
        let freq = marks as f64 / steps as f64;
        let sigma = (0.95f64 * 0.05 / steps as f64).sqrt();
        assert!((freq - 0.95).abs() <= 4.0 * sigma, "mark rate {freq}");

        // A tiny cap forces censoring and the records say so.
        let capped = run_theta_batch(&peeler, 6, 2000, 3).unwrap();
        let censored = capped.iter().filter(|r| r.censored()).count();
        assert!(censored > 0);
        assert!(capped
            .iter()
            .filter(|r| r.censored())
            .all(|r| r.steps == 3 && r.perimeter_upper().is_none()));
        assert!(matches!(theta_tail(&capped), Err(Error::InsufficientTailSamples(_))));
    }

    #[test]
    fn drift_above_threshold_is_dominated_by_limit_drift() {
        let solved = solved_preset("crit-quad");
        let peeler = Peeler::new(&solved, 0.4).unwrap();
        let check = drift_check(&peeler, 4, 21, 8000, 5000).unwrap();
        assert!(check.samples > 2000, "only {} samples", check.samples);
        assert!(
            check.empirical_mean <= check.limit_drift + 3.0 * check.std_error + 0.05,
            "mean {} vs limit {} (se {})",
            check.empirical_mean,
            check.limit_drift,
            check.std_error
        );
        assert!(check.limit_drift > 0.0);
    }
}
