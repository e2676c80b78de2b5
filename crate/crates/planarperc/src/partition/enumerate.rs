//! Exact small-scale oracles over rooted bipartite planar maps: a weighted
//! count of disks by edge budget, explicit half-edge generation, and the
//! percolation cluster/island decomposition checks.

use crate::error::{Error, Result};
use crate::weights::WeightSeq;
use std::collections::HashMap;

/// Rooted bipartite planar map in half-edge form. Halves 2i and 2i+1 are the
/// two sides of edge i; `sigma` is the next half-edge counterclockwise around
/// its vertex, so `sigma[h ^ 1]` walks the face lying along h. The external
/// face is the face orbit of `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TinyMap {
    pub root: u32,
    pub sigma: Vec<u32>,
}

/// One vertex map (no half-edges); the base of every construction.
const VERTEX_ROOT: u32 = u32::MAX;

impl TinyMap {
    pub fn vertex_map() -> Self {
        TinyMap { root: VERTEX_ROOT, sigma: Vec::new() }
    }

    pub fn is_vertex(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn n_edges(&self) -> usize {
        self.sigma.len() / 2
    }

    fn phi(&self, h: u32) -> u32 {
        self.sigma[(h ^ 1) as usize]
    }

    /// External face tour from the root; empty for the vertex map.
    pub fn boundary(&self) -> Vec<u32> {
        if self.is_vertex() {
            return Vec::new();
        }
        let mut tour = Vec::new();
        let mut h = self.root;
        loop {
            tour.push(h);
            h = self.phi(h);
            if h == self.root {
                break;
            }
        }
        tour
    }

    /// Vertex id per half-edge (sigma orbits).
    pub fn vertex_ids(&self) -> (Vec<u32>, u32) {
        let n = self.sigma.len();
        let mut id = vec![u32::MAX; n];
        let mut next = 0u32;
        for h in 0..n {
            if id[h] != u32::MAX {
                continue;
            }
            let mut c = h as u32;
            while id[c as usize] == u32::MAX {
                id[c as usize] = next;
                c = self.sigma[c as usize];
            }
            next += 1;
        }
        (id, next)
    }

    /// All face orbits; the first one containing `root` is external.
    pub fn faces(&self) -> Vec<Vec<u32>> {
        let n = self.sigma.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for h in 0..n as u32 {
            if seen[h as usize] {
                continue;
            }
            let mut orbit = Vec::new();
            let mut c = h;
            while !seen[c as usize] {
                seen[c as usize] = true;
                orbit.push(c);
                c = self.phi(c);
            }
            out.push(orbit);
        }
        out
    }

    /// V − E + F must be 2 on the sphere, and every face even for bipartite.
    pub fn structure_ok(&self) -> bool {
        if self.is_vertex() {
            return self.root == VERTEX_ROOT;
        }
        let (_, v) = self.vertex_ids();
        let faces = self.faces();
        let euler = v as i64 - self.n_edges() as i64 + faces.len() as i64;
        euler == 2 && faces.iter().all(|f| f.len() % 2 == 0)
    }

    /// True when the external face is a simple cycle (no pinch vertices).
    pub fn simple_boundary(&self) -> bool {
        let (vid, _) = self.vertex_ids();
        let tour = self.boundary();
        let mut seen = std::collections::HashSet::new();
        tour.iter().all(|&h| seen.insert(vid[h as usize]))
    }

    /// Internal face half-degrees (every face except the external one).
    pub fn internal_half_degrees(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for f in self.faces() {
            if !f.contains(&self.root) {
                out.push(f.len() as u32 / 2);
            }
        }
        out
    }

    /// Half-degrees of all faces, external included (closed-map view).
    pub fn all_half_degrees(&self) -> Vec<u32> {
        self.faces().iter().map(|f| f.len() as u32 / 2).collect()
    }

    /// Canonical label sequence under BFS from the root; equal codes iff the
    /// rooted maps are isomorphic.
    pub fn canonical_code(&self) -> Vec<u32> {
        if self.is_vertex() {
            return Vec::new();
        }
        let n = self.sigma.len();
        let mut label = vec![u32::MAX; n];
        let mut order = Vec::with_capacity(n);
        let mut next = 0u32;
        let mut push = |h: u32, label: &mut Vec<u32>, order: &mut Vec<u32>| {
            if label[h as usize] == u32::MAX {
                label[h as usize] = next;
                order.push(h);
                next += 1;
            }
        };
        push(self.root, &mut label, &mut order);
        let mut i = 0usize;
        while i < order.len() {
            let h = order[i];
            push(self.sigma[h as usize], &mut label, &mut order);
            push(h ^ 1, &mut label, &mut order);
            i += 1;
        }
        let mut code = Vec::with_capacity(2 * n);
        for &h in &order {
            code.push(label[self.sigma[h as usize] as usize]);
            code.push(label[(h ^ 1) as usize]);
        }
        code
    }
}

/// Attach a new internal face of half-degree k behind the root of `m`, whose
/// boundary has half-perimeter l + k − 1; the result has half-perimeter l.
fn attach_face(m: &TinyMap, k: u32) -> TinyMap {
    let tour = m.boundary();
    let big = tour.len(); // 2(l + k − 1)
    debug_assert!(2 * k as usize - 1 <= big);
    let n0 = m.sigma.len() as u32;
    let n1 = n0 + 1;
    let mut sigma = m.sigma.clone();
    sigma.push(0);
    sigma.push(0);
    let swallow_last = tour[2 * k as usize - 2];
    let after = tour[2 * k as usize - 1];
    let last = tour[big - 1];
    sigma[n0 as usize] = tour[0];
    sigma[n1 as usize] = after;
    sigma[(swallow_last ^ 1) as usize] = n1;
    sigma[(last ^ 1) as usize] = n0;
    TinyMap { root: n0, sigma }
}

/// Join two disks by a new root edge (a bridge): tail side m1 with
/// half-perimeter j, head side m2 with half-perimeter k; the result has
/// half-perimeter j + k + 1.
fn join(m1: &TinyMap, m2: &TinyMap) -> TinyMap {
    let off = m1.sigma.len() as u32;
    let n0 = off + m2.sigma.len() as u32;
    let n1 = n0 + 1;
    let mut sigma = Vec::with_capacity(n1 as usize + 1);
    sigma.extend_from_slice(&m1.sigma);
    sigma.extend(m2.sigma.iter().map(|&h| h + off));
    sigma.push(0);
    sigma.push(0);
    if m1.is_vertex() {
        sigma[n0 as usize] = n0;
    } else {
        let t1 = m1.boundary();
        sigma[n0 as usize] = m1.root;
        sigma[(t1[t1.len() - 1] ^ 1) as usize] = n0;
    }
    if m2.is_vertex() {
        sigma[n1 as usize] = n1;
    } else {
        let t2 = m2.boundary();
        sigma[n1 as usize] = t2[0] + off;
        sigma[((t2[t2.len() - 1] + off) ^ 1) as usize] = n1;
    }
    TinyMap { root: n0, sigma }
}

/// Memoized rooted generation of all boundary maps with given half-perimeter
/// and exact edge count, with internal face half-degrees restricted to
/// `support`. Every rooted map arises exactly once (the peeling decomposition
/// of the root edge is a bijection), so no isomorphism rejection is needed.
pub struct MapGen {
    support: Vec<u32>,
    memo: HashMap<(u32, u32), Vec<TinyMap>>,
    generated: usize,
    cap: usize,
}

impl MapGen {
    pub fn new(support: &[u32], cap: usize) -> Self {
        let mut support = support.to_vec();
        support.sort_unstable();
        support.dedup();
        MapGen { support, memo: HashMap::new(), generated: 0, cap }
    }

    /// All maps with half-perimeter l and exactly e edges.
    pub fn maps(&mut self, l: u32, e: u32) -> Result<&Vec<TinyMap>> {
        if self.memo.contains_key(&(l, e)) {
            return Ok(&self.memo[&(l, e)]);
        }
        let mut out = Vec::new();
        if l == 0 {
            if e == 0 {
                out.push(TinyMap::vertex_map());
            }
        } else if e >= l {
            // face event: the root edge borders an internal face of
            // half-degree k, exposed as boundary after its removal
            for i in 0..self.support.len() {
                let k = self.support[i];
                if k > e + 1 - l {
                    break;
                }
                let subs = self.maps(l + k - 1, e - 1)?.clone();
                for m in &subs {
                    out.push(attach_face(m, k));
                }
            }
            // bridge event: the root edge is an isthmus splitting the disk
            for j in 0..l {
                let k = l - 1 - j;
                for e1 in 0..e {
                    let left = self.maps(j, e1)?.clone();
                    if left.is_empty() {
                        continue;
                    }
                    let right = self.maps(k, e - 1 - e1)?.clone();
                    for m1 in &left {
                        for m2 in &right {
                            out.push(join(m1, m2));
                        }
                    }
                }
            }
        }
        self.generated += out.len();
        if self.generated > self.cap {
            return Err(Error::BudgetExceeded(format!(
                "map generation exceeded {} maps at half-perimeter {l}, {e} edges",
                self.cap
            )));
        }
        Ok(self.memo.entry((l, e)).or_insert(out))
    }
}

/// Weighted disk count by exact edge budget: table[e][l] sums the face-weight
/// products of all boundary maps with half-perimeter l and e edges. The same
/// peeling recursion as the explicit generation, memoized into numbers.
fn disk_dp(q: &WeightSeq, e_max: u32) -> Result<Vec<Vec<f64>>> {
    let en = e_max as usize;
    if en > 4096 || (en + 1) * (en + 1) > 64_000_000 {
        return Err(Error::BudgetExceeded(format!(
            "edge budget {e_max} beyond the dynamic-programming guard"
        )));
    }
    let mut a = vec![vec![0.0f64; en + 2]; en + 1];
    a[0][0] = 1.0;
    for e in 1..=en {
        for l in 1..=e {
            let mut v = 0.0f64;
            // a[e−1][l+k−1] with l+k−1 ≤ e−1
            for k in 1..=(e - l + 1) {
                let qk = q.q(k as u32);
                if qk > 0.0 {
                    v += qk * a[e - 1][l + k - 1];
                }
            }
            for j in 0..l {
                let k = l - 1 - j;
                for e1 in 0..e {
                    v += a[e1][j] * a[e - 1 - e1][k];
                }
            }
            a[e][l] = v;
        }
    }
    Ok(a)
}

/// Sum of face-weight products over all rooted bipartite disks with
/// half-perimeter k and at most e_max edges, with a geometric bound on the
/// missing tail. The bound is sharp only off criticality; at criticality the
/// per-edge ratios approach 1 and the bound degrades to a large but finite
/// heuristic value. A ratio at or above 1 means the series is growing and no
/// finite bound exists.
pub fn w_disk_enumerate(q: &WeightSeq, k: u32, e_max: u32) -> Result<(f64, f64)> {
    q.validate_structure()?;
    if k > e_max && k > 0 {
        return Err(Error::DomainError(k as f64));
    }
    let a = disk_dp(q, e_max)?;
    if k == 0 {
        return Ok((1.0, 0.0));
    }
    let mut total = 0.0f64;
    let mut nonzero: Vec<f64> = Vec::new();
    for (e, row) in a.iter().enumerate() {
        let t = row[k as usize];
        if e >= k as usize && t > 0.0 {
            nonzero.push(t);
        }
        total += t;
    }
    let bound = match nonzero.len() {
        0 => 0.0,
        1 => f64::INFINITY,
        n => {
            let mut rho = 0.0f64;
            for i in n.saturating_sub(3)..n {
                if i > 0 {
                    rho = rho.max(nonzero[i] / nonzero[i - 1]);
                }
            }
            if rho >= 1.0 {
                return Err(Error::NonconvergentTail(format!(
                    "per-edge contribution ratio {rho:.4} at half-perimeter {k}"
                )));
            }
            nonzero[n - 1] * rho / (1.0 - rho)
        }
    };
    Ok((total, bound))
}

/// Per-island structure needed by both the weighted and counting sums: the
/// number of internal edges incident to a boundary vertex (forced white),
/// the number of free internal edges, and the internal face half-degrees.
/// None when the map is not an island (non-simple boundary).
fn island_profile(m: &TinyMap) -> Option<(u32, u32, Vec<u32>)> {
    if !m.simple_boundary() {
        return None;
    }
    let (vid, _) = m.vertex_ids();
    let tour = m.boundary();
    let on_boundary: std::collections::HashSet<u32> =
        tour.iter().map(|&h| vid[h as usize]).collect();
    let boundary_edges: std::collections::HashSet<u32> =
        tour.iter().map(|&h| h / 2).collect();
    let mut incident = 0u32;
    let mut free = 0u32;
    for edge in 0..m.n_edges() as u32 {
        if boundary_edges.contains(&edge) {
            continue;
        }
        let a = vid[(2 * edge) as usize];
        let b = vid[(2 * edge + 1) as usize];
        if on_boundary.contains(&a) || on_boundary.contains(&b) {
            incident += 1;
        } else {
            free += 1;
        }
    }
    Some((incident, free, m.internal_half_degrees()))
}

/// Truncated island partition sums: islands[k][e] sums, over islands with
/// half-perimeter k and e internal edges, the product of internal face
/// weights times (1−p) per forced-white internal edge (free internal edges
/// marginalize their two colors to a factor 1). Row k is filled for
/// e ≤ e_max − k: any cluster with a face of half-degree k has at least k
/// edges, so larger island budgets can never be consumed.
fn island_sums(
    gen: &mut MapGen,
    q: &WeightSeq,
    p: f64,
    k_max: u32,
    e_max: u32,
) -> Result<Vec<Vec<f64>>> {
    let mut s = vec![Vec::new(); k_max as usize + 1];
    for k in 1..=k_max {
        let budget = e_max.saturating_sub(k);
        let mut row = vec![0.0f64; budget as usize + 1];
        for e_int in 0..=budget {
            let mut acc = 0.0f64;
            let maps = gen.maps(k, 2 * k + e_int)?.clone();
            for m in &maps {
                let Some((incident, _, degs)) = island_profile(m) else {
                    continue;
                };
                let mut w = (1.0 - p).powi(incident as i32);
                for d in degs {
                    w *= q.q(d);
                }
                acc += w;
            }
            row[e_int as usize] = acc;
        }
        s[k as usize] = row;
    }
    Ok(s)
}

/// The black component of the root edge, as a rooted sub-map: half-edges of
/// component edges keep their cyclic order around each vertex (this is the
/// cut along the cluster's edges).
fn extract_cluster(m: &TinyMap, black: u32) -> TinyMap {
    let (vid, nv) = m.vertex_ids();
    let mut in_comp = vec![false; nv as usize];
    let mut stack = vec![vid[m.root as usize]];
    in_comp[vid[m.root as usize] as usize] = true;
    // vertex adjacency through black edges
    while let Some(v) = stack.pop() {
        for h in 0..m.sigma.len() as u32 {
            if vid[h as usize] == v && black & (1 << (h / 2)) != 0 {
                let w = vid[(h ^ 1) as usize];
                if !in_comp[w as usize] {
                    in_comp[w as usize] = true;
                    stack.push(w);
                }
            }
        }
    }
    let keep = |h: u32| -> bool {
        black & (1 << (h / 2)) != 0 && in_comp[vid[h as usize] as usize]
    };
    let halves: Vec<u32> = (0..m.sigma.len() as u32).filter(|&h| keep(h)).collect();
    let mut new_id = HashMap::new();
    for (i, &h) in halves.iter().enumerate() {
        new_id.insert(h, i as u32);
    }
    let mut sigma = vec![0u32; halves.len()];
    for &h in &halves {
        let mut s = m.sigma[h as usize];
        while !keep(s) {
            s = m.sigma[s as usize];
        }
        sigma[new_id[&h] as usize] = new_id[&s];
    }
    TinyMap { root: new_id[&m.root], sigma }
}

/// Cluster-law verification report; see `verify_cluster_law`.
#[derive(Debug, Clone)]
pub struct ClusterLawReport {
    pub p: f64,
    pub e_max: u32,
    /// Distinct clusters observed (canonical rooted forms).
    pub clusters: usize,
    /// Max over face-degree-multiset groups of (max − min)/max of the
    /// truncated cluster probabilities; the product form makes it ~0.
    pub group_max_rel_spread: f64,
    /// Max over clusters of |enumerated/predicted − 1| where predicted is the
    /// island-decomposition product at matching edge budget.
    pub predicted_max_rel_err: f64,
    /// (k, Σ_e islands[k][e] for e ≤ e_max − k): truncated island partition
    /// sums with internal-face weights.
    pub island_sums: Vec<(u32, f64)>,
    /// Colored-map count vs (cluster, colored islands) count, exact integers,
    /// over maps with at most min(e_max, 6) edges.
    pub bijective_counts: (u128, u128),
}

/// Enumerates every (closed rooted map, edge coloring) pair with at most
/// e_max edges and a black root edge, extracts the percolation cluster of
/// each, and checks the island decomposition three ways: cluster
/// probabilities depend only on the face-degree multiset, each cluster's
/// probability equals the island product at matching budget, and the colored
/// counts match exactly.
pub fn verify_cluster_law(q: &WeightSeq, p: f64, e_max: u32) -> Result<ClusterLawReport> {
    q.validate_structure()?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::DomainError(p));
    }
    if e_max == 0 || e_max > 7 {
        return Err(Error::BudgetExceeded(format!(
            "cluster-law enumeration supports 1..=7 edges, got {e_max}"
        )));
    }
    let support: Vec<u32> = (1..=e_max).filter(|&k| q.q(k) > 0.0).collect();
    let gen_support: Vec<u32> = (1..=2 * e_max).collect();
    let mut gen = MapGen::new(&gen_support, 4_000_000);

    // per-cluster truncated probability and face data, keyed by canonical code
    struct Slot {
        prob: f64,
        edges: u32,
        degrees: Vec<u32>,
    }
    let mut by_cluster: HashMap<Vec<u32>, Slot> = HashMap::new();

    for e in 1..=e_max {
        // closed rooted maps = boundary maps with the external face re-read
        // as a weighted face of half-degree l
        for l in 1..=e {
            if q.q(l) <= 0.0 {
                continue;
            }
            let maps = gen.maps(l, e)?.clone();
            for m in &maps {
                if m.internal_half_degrees().iter().any(|&d| q.q(d) <= 0.0) {
                    continue;
                }
                let mut w_map = q.q(l);
                for d in m.internal_half_degrees() {
                    w_map *= q.q(d);
                }
                let root_edge = m.root / 2;
                for black in 0u32..(1 << e) {
                    if black & (1 << root_edge) == 0 {
                        continue;
                    }
                    let nb = black.count_ones();
                    let weight = w_map
                        * p.powi(nb as i32)
                        * (1.0 - p).powi((e - nb) as i32);
                    let c = extract_cluster(m, black);
                    debug_assert!(c.structure_ok());
                    let slot = by_cluster.entry(c.canonical_code()).or_insert_with(|| Slot {
                        prob: 0.0,
                        edges: c.n_edges() as u32,
                        degrees: {
                            let mut d = c.all_half_degrees();
                            d.sort_unstable();
                            d
                        },
                    });
                    slot.prob += weight;
                }
            }
        }
    }

    // group by face-degree multiset: the product form says the truncated
    // probabilities inside a group are identical (same edge count, same
    // island budgets, same island factors)
    let mut groups: HashMap<Vec<u32>, (f64, f64)> = HashMap::new();
    for s in by_cluster.values() {
        let g = groups
            .entry(s.degrees.clone())
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        g.0 = g.0.min(s.prob);
        g.1 = g.1.max(s.prob);
    }
    let mut spread = 0.0f64;
    for (lo, hi) in groups.values() {
        if *hi > 0.0 {
            spread = spread.max((hi - lo) / hi);
        }
    }

    // island product prediction per cluster at matching budget
    let k_face_max = by_cluster
        .values()
        .flat_map(|s| s.degrees.iter().copied())
        .max()
        .unwrap_or(1);
    let isl = island_sums(&mut gen, q, p, k_face_max, e_max)?;
    let mut pred_err = 0.0f64;
    for s in by_cluster.values() {
        let budget = (e_max - s.edges) as usize;
        // convolution over faces of the per-island edge-budget arrays
        let mut conv = vec![0.0f64; budget + 1];
        conv[0] = 1.0;
        for &d in &s.degrees {
            let row = &isl[d as usize];
            let mut next = vec![0.0f64; budget + 1];
            for (used, &c) in conv.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                for (e_i, &r) in row.iter().enumerate().take(budget - used + 1) {
                    next[used + e_i] += c * r;
                }
            }
            conv = next;
        }
        let predicted: f64 = p.powi(s.edges as i32) * conv.iter().sum::<f64>();
        if predicted > 0.0 {
            pred_err = pred_err.max((s.prob / predicted - 1.0).abs());
        } else if s.prob > 0.0 {
            pred_err = f64::INFINITY;
        }
    }

    let island_table: Vec<(u32, f64)> = (1..=k_face_max)
        .map(|k| (k, isl[k as usize].iter().sum()))
        .collect();

    // exact colored-count bijection over small budgets
    let e_cnt = e_max.min(6);
    let mut lhs = 0u128;
    {
        for e in 1..=e_cnt {
            for l in 1..=e {
                if !support.contains(&l) {
                    continue;
                }
                let maps = gen.maps(l, e)?.clone();
                let ok = maps
                    .iter()
                    .filter(|m| m.internal_half_degrees().iter().all(|&d| support.contains(&d)))
                    .count() as u128;
                lhs += ok << (e - 1);
            }
        }
    }
    let mut rhs = 0u128;
    {
        // clusters are arbitrary closed rooted maps; islands carry the
        // support restriction (their internal faces are the map's faces),
        // and each colored island counts 2 per free internal edge
        let mut cnt_support = vec![Vec::new(); e_cnt as usize + 1];
        for k in 1..=e_cnt {
            let budget = e_cnt - k;
            let mut row = vec![0u128; budget as usize + 1];
            for e_int in 0..=budget {
                let maps = gen.maps(k, 2 * k + e_int)?.clone();
                let mut acc = 0u128;
                for m in &maps {
                    let Some((_, free, degs)) = island_profile(m) else {
                        continue;
                    };
                    if degs.iter().any(|d| !support.contains(d)) {
                        continue;
                    }
                    acc += 1u128 << free;
                }
                row[e_int as usize] = acc;
            }
            cnt_support[k as usize] = row;
        }
        for e_c in 1..=e_cnt {
            for l in 1..=e_c {
                let clusters = gen.maps(l, e_c)?.clone();
                for c in &clusters {
                    let degs = c.all_half_degrees();
                    let budget = (e_cnt - e_c) as usize;
                    let mut conv = vec![0u128; budget + 1];
                    conv[0] = 1;
                    for d in degs {
                        let row = &cnt_support[d as usize];
                        let mut next = vec![0u128; budget + 1];
                        for (used, &cv) in conv.iter().enumerate() {
                            if cv == 0 {
                                continue;
                            }
                            for (e_i, &r) in row.iter().enumerate().take(budget - used + 1) {
                                next[used + e_i] += cv * r;
                            }
                        }
                        conv = next;
                    }
                    rhs += conv.iter().sum::<u128>();
                }
            }
        }
    }

    Ok(ClusterLawReport {
        p,
        e_max,
        clusters: by_cluster.len(),
        group_max_rel_spread: spread,
        predicted_max_rel_err: pred_err,
        island_sums: island_table,
        bijective_counts: (lhs, rhs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightSeq;

    fn quad(s: f64) -> WeightSeq {
        WeightSeq::from_explicit(&[(2, s)], 64).unwrap()
    }

    fn asym() -> WeightSeq {
        WeightSeq::from_explicit(&[(1, 0.07), (2, 0.04), (3, 0.01)], 64).unwrap()
    }

    #[test]
    fn single_edge_and_vertex_maps() {
        let (v, _) = w_disk_enumerate(&quad(1.0 / 16.0), 0, 3).unwrap();
        assert_eq!(v, 1.0);
        let (v, _) = w_disk_enumerate(&quad(1.0 / 16.0), 1, 1).unwrap();
        assert_eq!(v, 1.0);
        let mut gen = MapGen::new(&[1, 2, 3], 10_000);
        let m = &gen.maps(1, 1).unwrap()[0];
        assert_eq!(m.n_edges(), 1);
        assert!(m.structure_ok());
        assert_eq!(m.boundary().len(), 2);
    }

    #[test]
    fn generated_maps_are_planar_bipartite_and_counted_once() {
        let mut gen = MapGen::new(&[1, 2, 3, 4, 5], 1_000_000);
        let mut codes = std::collections::HashSet::new();
        for l in 0..=3u32 {
            for e in 0..=5u32 {
                for m in gen.maps(l, e).unwrap().clone() {
                    assert!(m.structure_ok(), "bad structure at l={l} e={e}");
                    assert_eq!(m.boundary().len(), 2 * l as usize);
                    assert_eq!(m.n_edges(), e as usize);
                    let mut key = vec![l, e];
                    key.extend(m.canonical_code());
                    assert!(codes.insert(key), "duplicate rooted map at l={l} e={e}");
                }
            }
        }
    }

    #[test]
    fn dp_matches_explicit_generation() {
        for q in [quad(1.0 / 12.0), quad(1.0 / 16.0), asym()] {
            let a = disk_dp(&q, 6).unwrap();
            let support: Vec<u32> = (1..=6).filter(|&k| q.q(k) > 0.0).collect();
            let mut gen = MapGen::new(&support, 2_000_000);
            for l in 0..=3u32 {
                for e in 0..=6u32 {
                    let mut direct = 0.0f64;
                    for m in gen.maps(l, e).unwrap() {
                        let mut w = 1.0;
                        for d in m.internal_half_degrees() {
                            w *= q.q(d);
                        }
                        direct += w;
                    }
                    let table = if (l as usize) < a[e as usize].len() {
                        a[e as usize][l as usize]
                    } else {
                        0.0
                    };
                    assert!(
                        (direct - table).abs() <= 1e-12 * direct.max(1.0),
                        "l={l} e={e}: {direct} vs {table}"
                    );
                }
            }
        }
    }

    #[test]
    fn subcritical_enumeration_reaches_quadrature() {
        // closed form: W^(1) = 32/27 for the 1/16 quadrangular preset
        let q = quad(1.0 / 16.0);
        let (v, bound) = w_disk_enumerate(&q, 1, 160).unwrap();
        assert!(bound < 1e-8, "bound {bound}");
        let exact = 32.0 / 27.0;
        assert!((v - exact).abs() < 1e-6 * exact, "{v} vs {exact}");
    }

    #[test]
    fn enumeration_agrees_with_quadrature() {
        let q = quad(1.0 / 16.0);
        let solved = crate::weights::solve_with(&q, 64).unwrap();
        for k in 1..=2u32 {
            let (scaled, quad_err) = crate::partition::w_disk_quadrature(&solved, k).unwrap();
            let quad_raw = scaled / solved.r.powi(k as i32);
            let (enum_v, bound) = w_disk_enumerate(&q, k, 170).unwrap();
            assert!(bound < 1e-8, "k={k} bound {bound}");
            let rel = (quad_raw - enum_v).abs() / quad_raw;
            assert!(rel < 1e-6 + quad_err, "k={k} rel {rel}");
        }
    }

    #[test]
    fn critical_bound_is_heuristic_but_finite() {
        let q = quad(1.0 / 12.0);
        let (v, bound) = w_disk_enumerate(&q, 1, 60).unwrap();
        // the true value is W^(1) = r·(4/3)/r… the scaled table says
        // w_scaled(1) = 1/6 at z = 2, so W^(1) = (1/6)/(1/8) = 4/3
        assert!(v < 4.0 / 3.0);
        assert!(bound.is_finite() && bound > 1e-4, "bound {bound}");
    }

    #[test]
    fn supercritical_growth_is_flagged() {
        let q = quad(0.2);
        match w_disk_enumerate(&q, 1, 60) {
            Err(Error::NonconvergentTail(_)) => {}
            other => panic!("expected NonconvergentTail, got {other:?}"),
        }
    }

    #[test]
    fn cluster_law_product_form_holds() {
        let q = quad(1.0 / 16.0);
        let rep = verify_cluster_law(&q, 0.3, 5).unwrap();
        assert!(rep.clusters > 2);
        assert!(rep.group_max_rel_spread < 1e-9, "spread {}", rep.group_max_rel_spread);
        assert!(rep.predicted_max_rel_err < 1e-9, "pred {}", rep.predicted_max_rel_err);
        assert_eq!(rep.bijective_counts.0, rep.bijective_counts.1);
        assert!(rep.bijective_counts.0 > 0);
    }

    #[test]
    fn cluster_law_p_one_is_whole_map() {
        let q = quad(1.0 / 16.0);
        let rep = verify_cluster_law(&q, 1.0, 4).unwrap();
        // all edges black: the cluster is the whole map, islands are bare
        // cycles, and the prediction still matches exactly
        assert!(rep.predicted_max_rel_err < 1e-9);
    }

    #[test]
    fn island_sums_small_cases() {
        let q = asym();
        let p = 0.4;
        let mut gen = MapGen::new(&(1..=8).collect::<Vec<_>>(), 2_000_000);
        let s = island_sums(&mut gen, &q, p, 2, 2).unwrap();
        // bare cycle of half-perimeter k: one internal face, no internal edge
        assert!((s[1][0] - q.q(1)).abs() < 1e-15);
        assert!((s[2][0] - q.q(2)).abs() < 1e-15);
        // half-perimeter 1 with one internal white edge: the triple edge
        // (chord splits the 2-gon into two 2-gons; a single rooted map, the
        // configuration has a 6-fold oriented symmetry) and the pendant
        // hanging inside a 4-gon face (two rooted maps, one per path rooting)
        let expect = (1.0 - p) * (q.q(1) * q.q(1) + 2.0 * q.q(2));
        assert!((s[1][1] - expect).abs() < 1e-15, "{} vs {expect}", s[1][1]);
    }
}
