//! Exact profiles on spatially and temporally periodic backgrounds.
//!
//! A periodic orbit of a one-dimensional rule is described by its primitive
//! tile (spatial period `sigma`), the least `pi0 >= 1` with `Phi^pi0 eta`
//! equal to `eta` shifted right by `sigma0`, and the full period `pi`.
//! Defects are tracked by phase: vertex `i` is a site congruent to `i`
//! mod `sigma`, and the expansion graph records where the offspring of one
//! defect land after `pi0` steps. All reported quantities are per CA step.

use std::collections::HashMap;

use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DefectInit, InitState, RunConfig, RunError};
use crate::jsonf64;
use crate::profiles::{Profile, ProfileMeta, ProfileSample};
use crate::rules::{apply_global, Field, Rule, RuleError, Site};

/// Relative tolerance for the Perron root.
pub const PERRON_TOL: f64 = 1e-13;
const POWER_ITER: usize = 20_000;
const SQUARINGS: usize = 64;
const Y_BRACKET: f64 = 64.0;

#[derive(Debug, Error)]
pub enum FloquetError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("periodic orbits are supported for one-dimensional rules only")]
    Dimension,
    #[error("tile is not on a periodic orbit; its trajectory enters the cycle of tile {cycle_tile} at step {entered_at}")]
    NotOnCycle { cycle_tile: String, entered_at: usize },
    #[error("no recurrence within {0} steps")]
    NoRecurrence(usize),
    #[error("expansion graph is not essentially irreducible: {0}")]
    Reducible(String),
    #[error("power iteration did not converge after {iterations} steps (bounds {lower} .. {upper})")]
    NoConvergence { iterations: usize, lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    /// Primitive tile as a bit string.
    pub tile: String,
    pub sigma: usize,
    pub pi: usize,
    pub pi0: usize,
    pub sigma0: usize,
    /// Background at times `0..=pi0` (cyclic, width `sigma`).
    #[serde(skip)]
    pub states: Vec<Field>,
}

fn primitive(tile: &Field) -> Field {
    let n = tile.width();
    let c = tile.cells();
    for d in 1..=n {
        if n % d == 0 && (0..n).all(|i| c[i] == c[i % d]) {
            return Field::from_cells_1d(c[..d].to_vec());
        }
    }
    tile.clone()
}

fn min_rotation(c: &[u8]) -> Vec<u8> {
    (0..c.len())
        .map(|s| c[s..].iter().chain(&c[..s]).copied().collect::<Vec<u8>>())
        .min()
        .unwrap_or_default()
}

/// Smallest right shift `s` with `a(x) = b(x - s)`, if any.
fn shift_between(a: &Field, b: &Field) -> Option<usize> {
    let n = a.width();
    (0..n).find(|&s| (0..n as i64).all(|x| a.get((x, 0)) == b.get((x - s as i64, 0))))
}

pub fn detect_orbit(rule: &Rule, tile: &Field) -> Result<Orbit, FloquetError> {
    if rule.dim() != 1 || tile.dim() != 1 {
        return Err(FloquetError::Dimension);
    }
    let eta = primitive(tile);
    let sigma = eta.width();
    let cap = 1usize << 22;
    let mut seen: HashMap<Vec<u8>, usize> = HashMap::new();
    seen.insert(min_rotation(eta.cells()), 0);
    let mut states = vec![eta.clone()];
    let mut cur = eta.clone();
    for n in 1..=cap {
        cur = apply_global(rule, &cur)?;
        if let Some(s0) = shift_between(&cur, &eta) {
            let pi = if s0 == 0 { n } else { n * sigma / s0.gcd(&sigma) };
            states.push(cur);
            return Ok(Orbit { tile: eta.to_bit_string(), sigma, pi, pi0: n, sigma0: s0, states });
        }
        let key = min_rotation(cur.cells());
        if let Some(&m) = seen.get(&key) {
            let mut c = eta.clone();
            for _ in 0..m {
                c = apply_global(rule, &c)?;
            }
            return Err(FloquetError::NotOnCycle { cycle_tile: primitive(&c).to_bit_string(), entered_at: m });
        }
        seen.insert(key, n);
        states.push(cur.clone());
    }
    Err(FloquetError::NoRecurrence(cap))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    #[serde(rename = "D")]
    pub d: i64,
    #[serde(rename = "N")]
    pub n: u64,
}

/// Edges ordered by `(from, D)`; edges into dead vertices are pruned into `pruned`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionGraph {
    pub sigma: usize,
    pub pi0: usize,
    pub sigma0: usize,
    pub edges: Vec<Edge>,
    pub pruned: Vec<Edge>,
    /// Vertices without outgoing edges after pruning.
    pub dead: Vec<usize>,
}

/// Exact offspring counts of one defect at each phase after `pi0` steps.
pub fn build_expansion_graph(rule: &Rule, orbit: &Orbit) -> Result<ExpansionGraph, FloquetError> {
    let sigma = orbit.sigma as i64;
    let mut raw = Vec::new();
    for i in 0..sigma {
        let mut cur: HashMap<i64, u128> = HashMap::from([(i, 1u128)]);
        for s in 0..orbit.pi0 {
            let st = &orbit.states[s];
            let mut next: HashMap<i64, u128> = HashMap::new();
            for (&y, &c) in &cur {
                for (k, o) in rule.offsets().iter().enumerate() {
                    let x = y - o[0] as i64;
                    let code = st.window_code(rule, (x, 0));
                    if (rule.sensitivity(code) >> k) & 1 == 1 {
                        *next.entry(x).or_insert(0) += c;
                    }
                }
            }
            cur = next;
        }
        let mut kids: Vec<(i64, u128)> = cur.into_iter().collect();
        kids.sort_unstable();
        for (x, c) in kids {
            let to = (x - orbit.sigma0 as i64).rem_euclid(sigma) as usize;
            raw.push(Edge { from: i as usize, to, d: x - i, n: c as u64 });
        }
    }
    let mut edges = raw.clone();
    loop {
        let live: Vec<bool> = (0..orbit.sigma).map(|v| edges.iter().any(|e| e.from == v)).collect();
        let kept: Vec<Edge> = edges.iter().copied().filter(|e| live[e.to]).collect();
        if kept.len() == edges.len() {
            break;
        }
        edges = kept;
    }
    let pruned = raw.iter().copied().filter(|e| !edges.contains(e)).collect();
    let dead = (0..orbit.sigma).filter(|&v| !edges.iter().any(|e| e.from == v)).collect();
    Ok(ExpansionGraph { sigma: orbit.sigma, pi0: orbit.pi0, sigma0: orbit.sigma0, edges, pruned, dead })
}

impl ExpansionGraph {
    /// Edge-level matrix: `T[k][l] = N(e_k)` when `e_k` ends where `e_l` starts.
    pub fn edge_matrix(&self) -> Vec<Vec<u64>> {
        let d = self.edges.len();
        let mut t = vec![vec![0; d]; d];
        for (k, ek) in self.edges.iter().enumerate() {
            for (l, el) in self.edges.iter().enumerate() {
                if ek.to == el.from {
                    t[k][l] = ek.n;
                }
            }
        }
        t
    }

    /// Vertex-level matrix summing `N` over edges from `i` to `j`, pruned edges included.
    pub fn vertex_matrix(&self) -> Vec<Vec<u64>> {
        let mut t = vec![vec![0; self.sigma]; self.sigma];
        for e in self.edges.iter().chain(&self.pruned) {
            t[e.from][e.to] += e.n;
        }
        t
    }
}

fn reach(n: usize, succ: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &w in &succ[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

fn strongly_connected(n: usize, arcs: &[(usize, usize)]) -> bool {
    if n == 0 {
        return false;
    }
    let mut fwd = vec![Vec::new(); n];
    let mut bwd = vec![Vec::new(); n];
    for &(a, b) in arcs {
        fwd[a].push(b);
        bwd[b].push(a);
    }
    reach(n, &fwd, 0).iter().all(|&b| b) && reach(n, &bwd, 0).iter().all(|&b| b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Irreducibility {
    /// The vertex matrix is irreducible on all `sigma` phases.
    pub irreducible: bool,
    /// The edge-level matrix (dead vertices removed) is irreducible.
    pub essential: bool,
}

pub fn check_irreducible(graph: &ExpansionGraph) -> Irreducibility {
    let varcs: Vec<(usize, usize)> = graph.edges.iter().chain(&graph.pruned).map(|e| (e.from, e.to)).collect();
    let irreducible = strongly_connected(graph.sigma, &varcs);
    let d = graph.edges.len();
    let mut earcs = Vec::new();
    for (k, ek) in graph.edges.iter().enumerate() {
        for (l, el) in graph.edges.iter().enumerate() {
            if ek.to == el.from {
                earcs.push((k, l));
            }
        }
    }
    Irreducibility { irreducible, essential: strongly_connected(d, &earcs) }
}

/// Collatz-Wielandt bounds `min_i (Av)_i / v_i`, `max_i (Av)_i / v_i`; `None` unless `v > 0`.
fn cw_bounds(rows: &[Vec<(usize, f64)>], v: &[f64], av: &mut [f64]) -> Option<(f64, f64)> {
    for (i, r) in rows.iter().enumerate() {
        av[i] = r.iter().map(|&(j, x)| x * v[j]).sum();
    }
    if !v.iter().all(|&x| x > 0.0) {
        return None;
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..v.len() {
        let q = av[i] / v[i];
        lo = lo.min(q);
        hi = hi.max(q);
    }
    Some((lo, hi))
}

fn converged(lo: f64, hi: f64) -> bool {
    hi - lo <= PERRON_TOL * hi.abs() || hi == 0.0
}

/// Perron root and right vector of an irreducible nonnegative matrix, by power
/// iteration on `A + cI` with Collatz-Wielandt bounds as the stopping rule.
/// When the subdominant eigenvalue is too close, falls back to repeated
/// squaring of `A + cI`.
pub fn perron(a: &[Vec<f64>]) -> Result<(f64, Vec<f64>), FloquetError> {
    let d = a.len();
    if d == 0 {
        return Ok((0.0, Vec::new()));
    }
    let rows: Vec<Vec<(usize, f64)>> =
        a.iter().map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v)).collect()).collect();
    let c = a.iter().map(|r| r.iter().sum::<f64>()).sum::<f64>() / d as f64;
    let c = if c > 0.0 { c } else { 1.0 };
    let mut v = vec![1.0 / d as f64; d];
    let mut av = vec![0.0; d];
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    for it in 0..POWER_ITER {
        if let Some(b) = cw_bounds(&rows, &v, &mut av) {
            (lo, hi) = b;
            if converged(lo, hi) {
                return Ok((0.5 * (lo + hi), v));
            }
        }
        let mut norm = 0.0;
        for i in 0..d {
            v[i] = av[i] + c * v[i];
            norm += v[i];
        }
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(FloquetError::NoConvergence { iterations: it, lower: lo, upper: hi });
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    // B <- B^2 / max(B^2) on B = A + cI; the columns of B^(2^k) line up with the Perron vector.
    let mut b: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| a[i][j] + if i == j { c } else { 0.0 }).collect()).collect();
    let mut best = (lo, hi, v.clone());
    for k in 0..SQUARINGS {
        let mut sq = vec![vec![0.0; d]; d];
        for i in 0..d {
            for l in 0..d {
                let x = b[i][l];
                if x != 0.0 {
                    for j in 0..d {
                        sq[i][j] += x * b[l][j];
                    }
                }
            }
        }
        let m = sq.iter().flatten().fold(0.0f64, |m, &x| m.max(x));
        if !(m > 0.0 && m.is_finite()) {
            return Err(FloquetError::NoConvergence { iterations: POWER_ITER + k, lower: lo, upper: hi });
        }
        for x in sq.iter_mut().flatten() {
            *x /= m;
        }
        b = sq;
        let w: Vec<f64> = b.iter().map(|r| r.iter().sum::<f64>()).collect();
        let n: f64 = w.iter().sum();
        let w: Vec<f64> = w.into_iter().map(|x| x / n).collect();
        if let Some((l, h)) = cw_bounds(&rows, &w, &mut av) {
            if converged(l, h) {
                return Ok((0.5 * (l + h), w));
            }
            if h - l < best.1 - best.0 {
                best = (l, h, w);
            }
        }
    }
    let (lo, hi, v) = best;
    if hi - lo <= 1e-9 * hi.abs() {
        return Ok((0.5 * (lo + hi), v));
    }
    Err(FloquetError::NoConvergence { iterations: POWER_ITER + SQUARINGS, lower: lo, upper: hi })
}

/// Spectral data of an essentially irreducible expansion graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    pub graph: ExpansionGraph,
    t: Vec<Vec<f64>>,
    d: Vec<i64>,
}

impl SpectralModel {
    pub fn new(graph: &ExpansionGraph) -> Result<SpectralModel, FloquetError> {
        let irr = check_irreducible(graph);
        if !irr.essential {
            return Err(FloquetError::Reducible(
                "defects on some phases never reach others; use exact_count_profile".into(),
            ));
        }
        let t = graph.edge_matrix().iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        let d = graph.edges.iter().map(|e| e.d).collect();
        Ok(SpectralModel { graph: graph.clone(), t, d })
    }

    pub fn pi0(&self) -> usize {
        self.graph.pi0
    }

    /// `log spr(T diag(e^{y D}))` for one block of `pi0` steps.
    pub fn lambda(&self, y: f64) -> Result<f64, FloquetError> {
        let shift = if y >= 0.0 { *self.d.iter().max().unwrap() } else { *self.d.iter().min().unwrap() } as f64;
        let scale: Vec<f64> = self.d.iter().map(|&d| (y * (d as f64 - shift)).exp()).collect();
        let m: Vec<Vec<f64>> = self.t.iter().map(|r| r.iter().zip(&scale).map(|(a, s)| a * s).collect()).collect();
        let (root, _) = perron(&m)?;
        Ok(y * shift + root.ln())
    }

    fn lambda_slope(&self, y: f64) -> Result<f64, FloquetError> {
        const H: f64 = 1e-6;
        Ok((self.lambda(y + H)? - self.lambda(y - H)?) / (2.0 * H))
    }
}

/// `Lambda(y)` of the model; see [`SpectralModel::lambda`].
pub fn lambda_fn(model: &SpectralModel, y: f64) -> Result<f64, FloquetError> {
    model.lambda(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMle {
    #[serde(with = "jsonf64")]
    pub lambda: f64,
    pub direction: f64,
}

/// `log spr(T') / pi0` and the mean displacement per step under the
/// stationary law of the stochastic conjugate of `T` (left times right Perron vector).
pub fn mle_exact(model: &SpectralModel) -> Result<ExactMle, FloquetError> {
    let (root, v) = perron(&model.t)?;
    let tt: Vec<Vec<f64>> = (0..model.t.len()).map(|i| model.t.iter().map(|r| r[i]).collect()).collect();
    let (_, u) = perron(&tt)?;
    let z: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let mean: f64 = u.iter().zip(&v).zip(&model.d).map(|((a, b), &d)| a * b * d as f64).sum::<f64>() / z;
    let pi0 = model.pi0() as f64;
    Ok(ExactMle { lambda: root.ln() / pi0, direction: mean / pi0 })
}

/// Maximum mean of `weight` over cycles, exactly (Karp), on the live vertices.
fn max_cycle_mean(n: usize, edges: &[(usize, usize, i64)]) -> Option<Ratio<i64>> {
    let neg = i64::MIN / 4;
    let mut dk = vec![vec![neg; n]; n + 1];
    dk[0] = vec![0; n];
    for k in 1..=n {
        for &(a, b, w) in edges {
            if dk[k - 1][a] > neg {
                dk[k][b] = dk[k][b].max(dk[k - 1][a] + w);
            }
        }
    }
    let mut best: Option<Ratio<i64>> = None;
    for v in 0..n {
        if dk[n][v] == neg {
            continue;
        }
        let mut worst: Option<Ratio<i64>> = None;
        for k in 0..n {
            if dk[k][v] == neg {
                continue;
            }
            let r = Ratio::new(dk[n][v] - dk[k][v], (n - k) as i64);
            worst = Some(worst.map_or(r, |w| w.min(r)));
        }
        if let Some(w) = worst {
            best = Some(best.map_or(w, |b| b.max(w)));
        }
    }
    best
}

/// Indices of edges on some cycle of maximal mean `lam` (weights `d`).
fn critical_edges(n: usize, edges: &[(usize, usize, i64)], lam: Ratio<i64>) -> Vec<usize> {
    let (p, q) = (*lam.numer(), *lam.denom());
    let w: Vec<i64> = edges.iter().map(|e| q * e.2 - p).collect();
    let mut phi = vec![0i64; n];
    for _ in 0..=n {
        for (k, &(a, b, _)) in edges.iter().enumerate() {
            if phi[a] + w[k] > phi[b] {
                phi[b] = phi[a] + w[k];
            }
        }
    }
    let tight: Vec<usize> = (0..edges.len()).filter(|&k| phi[edges[k].0] + w[k] == phi[edges[k].1]).collect();
    let mut succ = vec![Vec::new(); n];
    for &k in &tight {
        succ[edges[k].0].push(edges[k].1);
    }
    tight
        .into_iter()
        .filter(|&k| reach(n, &succ, edges[k].1)[edges[k].0])
        .collect()
}

/// Spectral radius of `T` restricted to the given edges (max over irreducible blocks).
fn restricted_spr(model: &SpectralModel, keep: &[usize]) -> Result<f64, FloquetError> {
    let m = keep.len();
    let mut succ = vec![Vec::new(); m];
    for (i, &k) in keep.iter().enumerate() {
        for (j, &l) in keep.iter().enumerate() {
            if model.t[k][l] > 0.0 {
                succ[i].push(j);
            }
        }
    }
    let fwd: Vec<Vec<bool>> = (0..m).map(|i| reach(m, &succ, i)).collect();
    let mut done = vec![false; m];
    let mut best = 0.0f64;
    for i in 0..m {
        if done[i] {
            continue;
        }
        let block: Vec<usize> = (0..m).filter(|&j| fwd[i][j] && fwd[j][i]).collect();
        for &j in &block {
            done[j] = true;
        }
        if !fwd[i][i] {
            continue;
        }
        let sub: Vec<Vec<f64>> = block.iter().map(|&a| block.iter().map(|&b| model.t[keep[a]][keep[b]]).collect()).collect();
        best = best.max(perron(&sub)?.0);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    /// Support of the profile per CA step, `[lo, hi]`.
    pub lo: Ratio<i64>,
    pub hi: Ratio<i64>,
    #[serde(with = "jsonf64")]
    pub value_lo: f64,
    #[serde(with = "jsonf64")]
    pub value_hi: f64,
}

/// Exact support from extreme cycle means of `D`, with the profile values there.
pub fn support_endpoints(model: &SpectralModel) -> Result<Endpoints, FloquetError> {
    let g = &model.graph;
    let arcs: Vec<(usize, usize, i64)> = g.edges.iter().map(|e| (e.from, e.to, e.d)).collect();
    let neg: Vec<(usize, usize, i64)> = arcs.iter().map(|&(a, b, d)| (a, b, -d)).collect();
    let hi = max_cycle_mean(g.sigma, &arcs).ok_or_else(|| FloquetError::Reducible("no cycles".into()))?;
    let lo = -max_cycle_mean(g.sigma, &neg).ok_or_else(|| FloquetError::Reducible("no cycles".into()))?;
    let pi0 = g.pi0 as i64;
    let vhi = restricted_spr(model, &critical_edges(g.sigma, &arcs, hi))?.ln() / pi0 as f64;
    let vlo = restricted_spr(model, &critical_edges(g.sigma, &neg, -lo))?.ln() / pi0 as f64;
    Ok(Endpoints { lo: lo / pi0, hi: hi / pi0, value_lo: vlo, value_hi: vhi })
}

fn ratio_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Precomputed data for evaluating the exact profile.
#[derive(Debug, Clone)]
pub struct LegendreProfile {
    pub model: SpectralModel,
    pub endpoints: Endpoints,
}

impl LegendreProfile {
    pub fn new(model: SpectralModel) -> Result<LegendreProfile, FloquetError> {
        let endpoints = support_endpoints(&model)?;
        Ok(LegendreProfile { model, endpoints })
    }

    /// `(1/pi0) inf_y (-y pi0 alpha + Lambda(y))`, `-inf` outside the support.
    pub fn value(&self, alpha: f64) -> Result<f64, FloquetError> {
        let (lo, hi) = (ratio_f64(self.endpoints.lo), ratio_f64(self.endpoints.hi));
        const EDGE: f64 = 1e-12;
        if alpha < lo - EDGE || alpha > hi + EDGE {
            return Ok(f64::NEG_INFINITY);
        }
        if (alpha - hi).abs() <= EDGE {
            return Ok(self.endpoints.value_hi);
        }
        if (alpha - lo).abs() <= EDGE {
            return Ok(self.endpoints.value_lo);
        }
        let pi0 = self.model.pi0() as f64;
        let target = pi0 * alpha;
        let slope = |y: f64| -> Result<f64, FloquetError> { Ok(self.model.lambda_slope(y)? - target) };
        let s0 = slope(0.0)?;
        let (mut a, mut b) = (0.0, 0.0);
        let (mut prev, mut w) = (0.0, 1.0);
        let mut found = false;
        while w <= Y_BRACKET {
            let y = if s0 < 0.0 { w } else { -w };
            if (slope(y)? < 0.0) != (s0 < 0.0) {
                (a, b) = if s0 < 0.0 { (prev, y) } else { (y, prev) };
                found = true;
                break;
            }
            prev = y;
            w *= 2.0;
        }
        let y = if s0 == 0.0 {
            0.0
        } else if !found {
            if s0 < 0.0 { Y_BRACKET } else { -Y_BRACKET }
        } else {
            while b - a > 1e-12 {
                let m = 0.5 * (a + b);
                if slope(m)? < 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            0.5 * (a + b)
        };
        Ok((self.model.lambda(y)? - y * target) / pi0)
    }

    /// Sample on `n + 1` equally spaced points of the support.
    pub fn sample(&self, n: usize) -> Result<Profile, FloquetError> {
        let (lo, hi) = (ratio_f64(self.endpoints.lo), ratio_f64(self.endpoints.hi));
        let mut samples = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let a = if n == 0 { lo } else { lo + (hi - lo) * i as f64 / n as f64 };
            samples.push(ProfileSample { alpha: vec![a], value: self.value(a)? });
        }
        Ok(Profile { dim: 1, samples, meta: ProfileMeta::new("legendre") })
    }

    /// Maximizer of the profile by golden-section search.
    pub fn argmax(&self) -> Result<(f64, f64), FloquetError> {
        let (mut a, mut b) = (ratio_f64(self.endpoints.lo), ratio_f64(self.endpoints.hi));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (self.value(c)?, self.value(d)?);
        while b - a > 1e-9 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = self.value(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = self.value(d)?;
            }
        }
        let x = 0.5 * (a + b);
        Ok((x, self.value(x)?))
    }
}

/// Build the exact profile evaluator for an orbit; refuses reducible graphs.
pub fn legendre_profile(rule: &Rule, orbit: &Orbit) -> Result<LegendreProfile, FloquetError> {
    let graph = build_expansion_graph(rule, orbit)?;
    LegendreProfile::new(SpectralModel::new(&graph)?)
}

/// Finite-time profile `(1/t) log Delta(x, t)` at `alpha = x/t`, for defects started on
/// `sites` over the periodic background; `-inf` where no defect is present.
pub fn exact_count_profile(rule: &Rule, orbit: &Orbit, sites: &[Site], t: usize) -> Result<Profile, FloquetError> {
    if t == 0 {
        return Err(FloquetError::NoRecurrence(0));
    }
    let cfg = RunConfig::new(
        rule.spec().clone(),
        InitState::Tile(orbit.tile.clone()),
        DefectInit::Sites(sites.to_vec()),
        t,
        0,
    );
    let rec = dynamics::run(&cfg)?;
    let r = rule.radius() as i64;
    let lo = sites.iter().map(|s| s.0).min().unwrap_or(0) - r * t as i64;
    let hi = sites.iter().map(|s| s.0).max().unwrap_or(0) + r * t as i64;
    let vals = rec.final_logw.as_ref();
    let samples = (lo..=hi)
        .map(|x| {
            let w = vals.map_or(f64::NEG_INFINITY, |v| v.get((x, 0)));
            ProfileSample { alpha: vec![x as f64 / t as f64], value: w / t as f64 }
        })
        .collect();
    let mut meta = ProfileMeta::new("exact-count");
    meta.rule = Some(rule.name());
    meta.t = Some(t);
    Ok(Profile { dim: 1, samples, meta })
}

/// Full report for the `periodic` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicReport {
    pub version: String,
    pub rule: String,
    pub orbit: Orbit,
    pub graph: ExpansionGraph,
    pub irreducibility: Irreducibility,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mle: Option<ExactMle>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<Endpoints>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<Profile>,
}

pub fn periodic_report(rule: &Rule, tile: &Field, samples: usize) -> Result<PeriodicReport, FloquetError> {
    let orbit = detect_orbit(rule, tile)?;
    let graph = build_expansion_graph(rule, &orbit)?;
    let irr = check_irreducible(&graph);
    let (mle, endpoints, profile) = if irr.essential {
        let lp = LegendreProfile::new(SpectralModel::new(&graph)?)?;
        let mut prof = lp.sample(samples)?;
        prof.meta.rule = Some(rule.name());
        (Some(mle_exact(&lp.model)?), Some(lp.endpoints.clone()), Some(prof))
    } else {
        (None, None, None)
    };
    Ok(PeriodicReport {
        version: crate::VERSION.to_string(),
        rule: rule.name(),
        orbit,
        graph,
        irreducibility: irr,
        mle,
        endpoints,
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parse_tile;

    #[test]
    fn orbit_of_rule22_tiles() {
        let r = Rule::elementary(22);
        let o = detect_orbit(&r, &parse_tile("10").unwrap()).unwrap();
        assert_eq!((o.sigma, o.pi, o.pi0, o.sigma0), (2, 1, 1, 0));
        let o = detect_orbit(&r, &parse_tile("1010").unwrap()).unwrap();
        assert_eq!(o.sigma, 2);
        let o = detect_orbit(&r, &parse_tile("11111100").unwrap()).unwrap();
        assert_eq!((o.sigma, o.pi, o.pi0, o.sigma0), (8, 6, 3, 4));
    }

    #[test]
    fn transient_tile_is_rejected() {
        // Under Rule 0 everything dies at once; "1" is not periodic.
        let r = Rule::elementary(0);
        match detect_orbit(&r, &parse_tile("10").unwrap()) {
            Err(FloquetError::NotOnCycle { cycle_tile, entered_at }) => {
                assert_eq!(cycle_tile, "0");
                assert_eq!(entered_at, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn perron_of_small_matrices() {
        let (r, _) = perron(&[vec![1.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert!((r - (1.0 + 17f64.sqrt()) / 2.0).abs() < 1e-12);
        // periodic (bipartite) matrix
        let (r, _) = perron(&[vec![0.0, 4.0], vec![1.0, 0.0]]).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn karp_cycle_mean() {
        let e = [(0, 1, 3), (1, 0, -1), (0, 0, 0)];
        assert_eq!(max_cycle_mean(2, &e), Some(Ratio::new(1, 1)));
        assert_eq!(critical_edges(2, &e, Ratio::new(1, 1)), vec![0, 1]);
    }
    fn model(code: u8, tile: &str) -> (Orbit, ExpansionGraph, LegendreProfile) {
        let r = Rule::elementary(code);
        let o = detect_orbit(&r, &parse_tile(tile).unwrap()).unwrap();
        let g = build_expansion_graph(&r, &o).unwrap();
        let lp = LegendreProfile::new(SpectralModel::new(&g).unwrap()).unwrap();
        (o, g, lp)
    }

    #[test]
    fn rule22_alternating_background() {
        let (_, g, lp) = model(22, "10");
        let ds: Vec<(usize, usize, i64)> = g.edges.iter().map(|e| (e.from, e.to, e.d)).collect();
        assert_eq!(ds, vec![(0, 1, -1), (0, 0, 0), (0, 1, 1), (1, 0, -1), (1, 0, 1)]);
        assert!(g.pruned.is_empty());
        let m = mle_exact(&lp.model).unwrap();
        assert!((m.lambda - ((1.0 + 17f64.sqrt()) / 2.0).ln()).abs() < 1e-12);
        assert!(m.direction.abs() < 1e-9);
        assert_eq!((lp.endpoints.lo, lp.endpoints.hi), (Ratio::from(-1), Ratio::from(1)));
        assert!(lp.endpoints.value_hi.abs() < 1e-12 && lp.endpoints.value_lo.abs() < 1e-12);
        // closed form: Lambda(y) = log((1 + sqrt(1 + 16 cosh^2 y)) / 2)
        let lam = |y: f64| ((1.0 + (1.0 + 16.0 * y.cosh().powi(2)).sqrt()) / 2.0).ln();
        for &a in &[0.0, 0.25, 0.5, -0.7, 0.9] {
            let oracle = (0..=40000)
                .map(|i| -8.0 + 16.0 * i as f64 / 40000.0)
                .map(|y| lam(y) - a * y)
                .fold(f64::INFINITY, f64::min);
            let v = lp.value(a).unwrap();
            assert!((v - oracle).abs() < 1e-6, "{a}: {v} vs {oracle}");
        }
        assert_eq!(lp.value(1.01).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn rule22_period_three_background() {
        let (o, g, lp) = model(22, "11111100");
        assert_eq!(o.states.len(), 4);
        assert_eq!(g.edges.len(), 22);
        assert_eq!(g.edges.len() + g.pruned.len(), 32);
        assert_eq!((lp.endpoints.lo, lp.endpoints.hi), (Ratio::new(-2, 3), Ratio::new(2, 3)));
        let m = mle_exact(&lp.model).unwrap();
        assert!((m.lambda - 0.6375989136001659).abs() < 1e-10);
        let (a, v) = lp.argmax().map_err(|e| e.to_string()).unwrap();
        assert!(a.abs() < 1e-6 && (v - m.lambda).abs() < 1e-10);
    }

    #[test]
    fn rule110_ether() {
        let (o, g, lp) = model(110, "11111000100110");
        assert_eq!((o.sigma, o.pi0, o.sigma0), (14, 1, 10));
        let expect: [(usize, usize, i64); 26] = [
            (0, 3, -1), (0, 5, 1), (1, 5, 0), (1, 6, 1), (2, 5, -1), (2, 6, 0), (2, 7, 1),
            (3, 6, -1), (3, 7, 0), (4, 7, -1), (4, 8, 0), (5, 8, -1), (5, 9, 0), (6, 9, -1),
            (6, 10, 0), (7, 10, -1), (8, 11, -1), (8, 12, 0), (9, 13, 0), (10, 13, -1),
            (10, 1, 1), (11, 0, -1), (12, 2, 0), (13, 2, -1), (13, 3, 0), (13, 4, 1),
        ];
        let got: Vec<(usize, usize, i64)> = g.edges.iter().map(|e| (e.from, e.to, e.d)).collect();
        assert_eq!(got, expect);
        assert!(g.edges.iter().all(|e| e.n == 1));
        assert_eq!((lp.endpoints.lo, lp.endpoints.hi), (Ratio::new(-8, 9), Ratio::new(2, 3)));
        assert!((lp.endpoints.value_lo - 3f64.ln() / 9.0).abs() < 1e-12);
        let m = mle_exact(&lp.model).unwrap();
        assert!((m.lambda - 0.6473169268098243).abs() < 1e-10);
        assert!((m.direction + 0.2763401050764891).abs() < 1e-8);
        let (a, v) = lp.argmax().map_err(|e| e.to_string()).unwrap();
        assert!((a - m.direction).abs() < 1e-5 && (v - m.lambda).abs() < 1e-10);
    }

    #[test]
    fn rule184_is_reducible() {
        let r = Rule::elementary(184);
        let o = detect_orbit(&r, &parse_tile("01").unwrap()).unwrap();
        let g = build_expansion_graph(&r, &o).unwrap();
        assert_eq!(g.edges.len(), 2);
        let irr = check_irreducible(&g);
        assert!(!irr.irreducible && !irr.essential);
        assert!(matches!(SpectralModel::new(&g), Err(FloquetError::Reducible(_))));
    }

    #[test]
    fn exact_counts_match_profile_shape() {
        let r = Rule::elementary(22);
        let o = detect_orbit(&r, &parse_tile("10").unwrap()).unwrap();
        let p = exact_count_profile(&r, &o, &[(0, 0)], 2).unwrap();
        // two steps from one defect at an even site on ...1010...
        let v: Vec<f64> = p.samples.iter().map(|s| (s.value * 2.0).exp()).collect();
        assert_eq!(p.samples.len(), 5);
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
