//! Release-gate criteria: thirteen independent checks tying the solver, the
//! exact oracles, and the Monte Carlo explorations to their target values.
//! Each criterion returns pass/fail plus a one-line detail; errors along the
//! way count as failures rather than aborting the run.

use std::sync::OnceLock;
use std::time::Instant;

use planarperc::finite_peel::{run_theta_batch, theta_tail, Peeler};
use planarperc::gw_trees::{dyadic_grid, volume_tail};
use planarperc::halfplane::{hcut_frequency_table, perimeter_tail, run_batch, threshold_scan};
use planarperc::partition::check_tutte_identity;
use planarperc::partition::enumerate::{verify_cluster_law, w_disk_enumerate};
use planarperc::stats::fit_power_tail;
use planarperc::walk_oracle::{cyclic_table, hcut_table, step_law};
use planarperc::weights::{
    a_dual, classify, duality_map, solve_admissibility, solve_with, tune_critical,
    volume_exponent, SolvedWeights, TailSpec, WeightSeq,
};
use planarperc::{Error, Result};

#[derive(Debug, Clone, serde::Serialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

pub const ALL_IDS: [u32; 13] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13];

pub fn name_of(id: u32) -> &'static str {
    match id {
        1 => "weight-calculus-exactness",
        2 => "cyclic-first-passage-identity",
        3 => "critical-cut-exponent",
        4 => "supercritical-cut-exponent",
        5 => "duality-arithmetic",
        6 => "threshold-formula",
        7 => "critical-perimeter-tail",
        8 => "subcritical-theta-tail",
        9 => "volume-law",
        10 => "disk-oracle-equivalence",
        11 => "cluster-product-form",
        12 => "dilute-family-exponents",
        13 => "mc-oracle-cross-validation",
        _ => "unknown",
    }
}

/// Criterion ids for a named suite; None for an unknown name.
pub fn suite_ids(suite: &str) -> Option<Vec<u32>> {
    let ids: &[u32] = match suite {
        "all" => &ALL_IDS,
        "weights" => &[1],
        "feller" => &[2],
        "hcut" => &[3, 4],
        "duality" => &[5],
        "threshold" => &[6],
        "perimeter" => &[7],
        "subcritical" => &[8],
        "volume" => &[9],
        "oracle-eq" => &[10],
        "cluster" => &[11],
        "dilute" => &[12],
        "mc-oracle" => &[13],
        _ => return None,
    };
    Some(ids.to_vec())
}

pub fn suite_names() -> &'static [&'static str] {
    &[
        "all",
        "weights",
        "feller",
        "hcut",
        "duality",
        "threshold",
        "perimeter",
        "subcritical",
        "volume",
        "oracle-eq",
        "cluster",
        "dilute",
        "mc-oracle",
    ]
}

/// Critical quadrangulation weights solved at the default table length;
/// shared by the heavy criteria.
fn crit_full() -> Result<&'static SolvedWeights> {
    static CELL: OnceLock<Result<SolvedWeights>> = OnceLock::new();
    match CELL.get_or_init(|| solve_admissibility(&WeightSeq::quad(1.0 / 12.0))) {
        Ok(s) => Ok(s),
        Err(e) => Err(Error::Inconclusive(format!("shared critical solve failed: {e}"))),
    }
}

/// Subcritical quadrangulation (g = 1/16) at a 512-deep table.
fn sub16() -> Result<&'static SolvedWeights> {
    static CELL: OnceLock<Result<SolvedWeights>> = OnceLock::new();
    match CELL.get_or_init(|| solve_with(&WeightSeq::quad(1.0 / 16.0), 512)) {
        Ok(s) => Ok(s),
        Err(e) => Err(Error::Inconclusive(format!("shared subcritical solve failed: {e}"))),
    }
}

/// Runs one criterion. `kmax` overrides the sweep depth where a criterion
/// has one (currently criterion 2); None keeps the release defaults.
pub fn run_criterion(id: u32, kmax: Option<u32>) -> CriterionOutcome {
    let start = Instant::now();
    let result = match id {
        1 => c01_weight_calculus(),
        2 => c02_cyclic_identity(kmax.unwrap_or(512)),
        3 => c03_critical_cut(),
        4 => c04_supercritical_cut(),
        5 => c05_duality_arithmetic(),
        6 => c06_threshold_formula(),
        7 => c07_perimeter_tail(),
        8 => c08_theta_tail(),
        9 => c09_volume_law(),
        10 => c10_disk_oracle_equivalence(),
        11 => c11_cluster_product_form(),
        12 => c12_dilute_family(),
        13 => c13_mc_oracle(),
        other => Err(Error::DomainError(other as f64)),
    };
    let (pass, detail) = match result {
        Ok(pd) => pd,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionOutcome {
        id,
        name: name_of(id),
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn c01_weight_calculus() -> Result<(bool, String)> {
    let s = solve_with(&WeightSeq::quad(1.0 / 12.0), 512)?;
    let devs = [
        ("Z", (s.z - 2.0).abs()),
        ("r", (s.r - 0.125).abs()),
        ("mu(0)", (s.mu.get(0) - 0.5).abs()),
        ("mu(2)", (s.mu.get(2) - 0.5).abs()),
        ("nu(1)", (s.nu.get(1) - 2.0 / 3.0).abs()),
        ("nu(-1)", (s.nu.get(-1) - 0.25).abs()),
    ];
    let (worst_name, worst) =
        devs.iter().fold(("", 0.0), |acc, &(n, d)| if d > acc.1 { (n, d) } else { acc });
    Ok((
        worst <= 1e-9,
        format!("Z={}, r={}, worst |dev| {worst:.2e} at {worst_name} (tol 1e-9)", s.z, s.r),
    ))
}

fn c02_cyclic_identity(kmax: u32) -> Result<(bool, String)> {
    let s = crit_full()?;
    let mid = (s.p_c + 1.0) / 2.0;
    let mut worst = 0.0f64;
    let mut worst_at = (0.0, 0u32);
    for &p in &[s.p_c, mid] {
        let law = step_law(s, p)?;
        for (k, &(lhs, rhs)) in cyclic_table(&law, kmax)?.iter().enumerate() {
            if rhs <= 0.0 {
                return Ok((false, format!("rhs vanished at p={p}, k={k}")));
            }
            let rel = (lhs - rhs).abs() / rhs;
            if rel > worst {
                worst = rel;
                worst_at = (p, k as u32);
            }
        }
    }
    Ok((
        worst <= 1e-10,
        format!(
            "worst rel err {worst:.2e} at p={}, k={} over k<={kmax} (tol 1e-10)",
            worst_at.0, worst_at.1
        ),
    ))
}

fn hcut_slope(s: &SolvedWeights, p: f64, window: (f64, f64)) -> Result<f64> {
    let law = step_law(s, p)?;
    let table = hcut_table(&law, window.1 as u32)?;
    let points: Vec<(f64, f64)> = table
        .iter()
        .enumerate()
        .skip(1)
        .filter(|&(_, &v)| v > 0.0)
        .map(|(k, &v)| (k as f64, v))
        .collect();
    Ok(fit_power_tail(&points, window)?.slope)
}

fn c03_critical_cut() -> Result<(bool, String)> {
    let s = crit_full()?;
    let slope = hcut_slope(s, s.p_c, (64.0, 4096.0))?;
    let dev = (slope + 5.0 / 3.0).abs();
    Ok((dev <= 0.05, format!("slope {slope:.4} vs -5/3, |dev| {dev:.3} (tol 0.05)")))
}

fn c04_supercritical_cut() -> Result<(bool, String)> {
    let s = crit_full()?;
    let mid = (s.p_c + 1.0) / 2.0;
    let slope = hcut_slope(s, mid, (64.0, 4096.0))?;
    let dev = (slope + 2.5).abs();
    Ok((dev <= 0.1, format!("slope {slope:.4} at p={mid} vs -5/2, |dev| {dev:.3} (tol 0.1)")))
}

fn c05_duality_arithmetic() -> Result<(bool, String)> {
    let mut worst = (duality_map(2.0)? - 7.0 / 6.0).abs();
    for &alpha in &[1.6, 1.75, 2.0] {
        let a = alpha + 0.5;
        let lhs = a_dual(a)?;
        let rhs = duality_map(alpha)? + 0.5;
        worst = worst.max((lhs - rhs).abs());
        let vol = volume_exponent(alpha)?;
        let direct = (8.0 * alpha + 4.0) / (2.0 * alpha + 3.0);
        worst = worst.max((vol - direct).abs());
    }
    Ok((worst <= 1e-12, format!("worst |dev| {worst:.2e} (tol 1e-12)")))
}

fn c06_threshold_formula() -> Result<(bool, String)> {
    let s = crit_full()?;
    let drift = |p: f64| step_law(s, p).map(|l| l.drift);
    let (mut lo, mut hi) = (0.0f64, 0.999f64);
    if !(drift(lo)? < 0.0 && drift(hi)? > 0.0) {
        return Ok((false, "drift does not bracket a root on [0, 0.999]".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if drift(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let root_dev = (root - s.p_c).abs();
    if root_dev > 1e-12 {
        return Ok((false, format!("drift root {root} vs threshold {}, |dev| {root_dev:.2e}", s.p_c)));
    }

    let runs = 10_000u64;
    let grid = [0.0, s.p_c - 0.05, s.p_c + 0.05];
    let scan = threshold_scan(s, &grid, runs, 1_000_000, 62_000)?;
    let sigma = |f: f64| (f * (1.0 - f) / runs as f64).sqrt().max(1.0 / runs as f64);
    let zero_ok = scan.rows[0].survival_freq == 0.0;
    let sub = scan.rows[1].survival_freq;
    let sup = scan.rows[2].survival_freq;
    let sub_ok = sub <= 3.0 * sigma(sub);
    let sup_ok = sup > 5.0 * sigma(sup);
    let pass = zero_ok && sub_ok && sup_ok;
    Ok((
        pass,
        format!(
            "drift root |dev| {root_dev:.1e}; survival at p=0: {}, p_c-0.05: {sub}, p_c+0.05: {sup}",
            scan.rows[0].survival_freq
        ),
    ))
}

fn c07_perimeter_tail() -> Result<(bool, String)> {
    let s = crit_full()?;
    let law = step_law(s, s.p_c)?;
    let grid: Vec<f64> = (3..=11).map(|e| f64::from(1u32 << e)).collect();
    let tail = perimeter_tail(&law, 100_000, &grid, 1 << 15, 7_711)?;
    let slope = tail.fit_power.slope;
    let dev = (slope + 1.0 / 3.0).abs();
    Ok((
        dev <= 0.1,
        format!(
            "slope {slope:.4} vs -1/3, |dev| {dev:.3} (tol 0.1); censored {:.4}",
            tail.censored_fraction
        ),
    ))
}

fn c08_theta_tail() -> Result<(bool, String)> {
    let s = sub16()?;
    let peeler = Peeler::new(s, 0.1)?;
    let records = run_theta_batch(&peeler, 8_808, 100_000, 100_000)?;
    let tail = theta_tail(&records)?;
    let r2 = tail.fit.r2;
    let pass = r2 >= 0.98 && tail.censored_fraction == 0.0;
    Ok((
        pass,
        format!(
            "exp fit r2 {r2:.4} (need 0.98), rate {:.4}, window [{}, {}], censored {:.4}",
            tail.fit.rate(),
            tail.window.0,
            tail.window.1,
            tail.censored_fraction
        ),
    ))
}

fn c09_volume_law() -> Result<(bool, String)> {
    let s = crit_full()?;
    let tail = volume_tail(&s.mu, 1_000_000, &dyadic_grid(4, 13), 1_000_000, 9_099)?;
    let pointed = tail.pointed_fit.slope;
    let dev = (pointed + 1.5).abs();
    Ok((
        dev <= 0.1,
        format!(
            "pointed slope {pointed:.4} vs -3/2, |dev| {dev:.3} (tol 0.1); reweighted {:.4}",
            tail.reweighted_fit.slope
        ),
    ))
}

fn c10_disk_oracle_equivalence() -> Result<(bool, String)> {
    let s = sub16()?;
    let mut worst_rel = 0.0f64;
    for k in [1u32, 2] {
        let (val, bound) = w_disk_enumerate(&s.q, k, 240)?;
        if bound >= 1e-8 {
            return Ok((false, format!("enumeration bound {bound:.1e} at k={k} not below 1e-8")));
        }
        worst_rel = worst_rel.max((s.disk.w_raw(k) - val).abs() / val);
    }
    let mut worst_resid = 0.0f64;
    for l in 1..=64 {
        worst_resid = worst_resid.max(check_tutte_identity(s, l)?);
    }
    let pass = worst_rel <= 1e-6 && worst_resid <= 1e-6;
    Ok((
        pass,
        format!(
            "quadrature vs enumeration rel {worst_rel:.2e} (tol 1e-6); loop residual {worst_resid:.2e} for l<=64 (tol 1e-6)"
        ),
    ))
}

fn c11_cluster_product_form() -> Result<(bool, String)> {
    let rep = verify_cluster_law(&WeightSeq::quad(1.0 / 16.0), 0.3, 5)?;
    let pass = rep.group_max_rel_spread < 1e-9
        && rep.predicted_max_rel_err < 1e-9
        && rep.bijective_counts.0 == rep.bijective_counts.1
        && rep.bijective_counts.0 > 0;
    Ok((
        pass,
        format!(
            "{} clusters; spread {:.2e}, island-product err {:.2e} (tol 1e-9); counts {} vs {}",
            rep.clusters,
            rep.group_max_rel_spread,
            rep.predicted_max_rel_err,
            rep.bijective_counts.0,
            rep.bijective_counts.1
        ),
    ))
}

fn c12_dilute_family() -> Result<(bool, String)> {
    let shape = WeightSeq::with_tail(
        &[],
        TailSpec { c: 1.0, beta: 0.5, a_shape: 2.2, k_min: 1 },
        4096,
    )?;
    let tuned = tune_critical(&shape, 2.2)?;
    let s = solve_admissibility(&tuned)?;
    let class = classify(&s)?;
    let idx = class
        .evidence
        .nu_tail_index
        .ok_or_else(|| Error::Inconclusive("no tail index from classification".into()))?;
    let idx_dev = (idx - 1.2).abs();

    let slope = hcut_slope(&s, s.p_c, (64.0, 4096.0))?;
    let slope_dev = (slope + 11.0 / 6.0).abs();

    let exact_dev = (duality_map(1.7)? - 4.0 / 3.0)
        .abs()
        .max((a_dual(2.2)? - 11.0 / 6.0).abs());

    let pass = idx_dev <= 0.1 && slope_dev <= 0.1 && exact_dev <= 1e-12;
    Ok((
        pass,
        format!(
            "nu tail index {idx:.3} vs 1.2 (tol 0.1); cut slope {slope:.4} vs -11/6 (tol 0.1); map/dual |dev| {exact_dev:.1e}"
        ),
    ))
}

fn c13_mc_oracle() -> Result<(bool, String)> {
    let s = crit_full()?;
    let law = step_law(s, s.p_c)?;
    let oracle = hcut_table(&law, 32)?;
    let runs = 1_000_000u64;
    let records = run_batch(&law, 4_242, runs, 512)?;
    let (freqs, _) = hcut_frequency_table(&records, 32);
    let mut worst_z = 0.0f64;
    let mut worst_k = 0u32;
    for k in 0..=32usize {
        let expected = oracle[k] * (1.0 - s.p_c);
        let sigma = (expected * (1.0 - expected) / runs as f64).sqrt();
        let z = (freqs[k] - expected).abs() / sigma;
        if z > worst_z {
            worst_z = z;
            worst_k = k as u32;
        }
    }
    Ok((
        worst_z <= 3.0,
        format!("worst |z| {worst_z:.2} at k={worst_k} over k<=32, 1e6 runs (tol 3 sigma)"),
    ))
}
