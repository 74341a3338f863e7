//! Certificates for collapse and expansion, empirical classification and
//! the exact Rule 38 stripe chain.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DefectInit, InitState, RunConfig, RunError};
use crate::jsonf64;
use crate::rules::{reflect_eca, Rule, RuleSpec};

/// Largest `t_B` for upper certificates (2^(4 t_B) side assignments).
pub const MAX_T_UPPER: usize = 4;
/// Largest `t_M` for lower certificates.
pub const MAX_T_LOWER: usize = 3;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("certificates need a radius-1 one-dimensional rule, got {0}")]
    NotRadiusOne(String),
    #[error("enumeration of 2^{bits} configurations exceeds the cap of 2^{cap}")]
    Budget { bits: usize, cap: usize },
    #[error("bad certificate: {0}")]
    Invalid(String),
    #[error(transparent)]
    Run(#[from] RunError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Certificate {
    Upper { rule: u8, b: String, t_b: usize, v_b: Vec<i64> },
    Lower { rule: u8, m: Vec<i64>, t_m: usize },
}

fn radius_one(rule: &Rule) -> Result<(), ClassifyError> {
    if rule.is_radius_one_1d() {
        Ok(())
    } else {
        Err(ClassifyError::NotRadiusOne(rule.name()))
    }
}

fn parse_bits(b: &str) -> Result<Vec<u8>, ClassifyError> {
    if b.is_empty() {
        return Err(ClassifyError::Invalid("empty pattern".into()));
    }
    b.chars()
        .map(|c| match c {
            '0' => Ok(0),
            '1' => Ok(1),
            _ => Err(ClassifyError::Invalid(format!("pattern `{b}` is not a bit string"))),
        })
        .collect()
}

/// One step on a finite strip; the result is two cells shorter.
fn strip_step(rule: &Rule, xi: &[u8], de: &[bool]) -> (Vec<u8>, Vec<bool>) {
    let n = xi.len() - 2;
    let mut nx = Vec::with_capacity(n);
    let mut nd = Vec::with_capacity(n);
    for i in 1..=n {
        let code = ((xi[i - 1] as usize) << 2) | ((xi[i] as usize) << 1) | xi[i + 1] as usize;
        nx.push(rule.output(code));
        let s = rule.sensitivity(code);
        nd.push((0..3).any(|k| de[i - 1 + k] && (s >> k) & 1 == 1));
    }
    (nx, nd)
}

/// Offsets `v` such that every continuation of `B` placed on `[0, b-1]`, with defects
/// everywhere outside it, yields `B` and no defects on `[v, v+b-1]` after `t_b` steps.
pub fn verify_upper(rule: &Rule, b: &str, t_b: usize) -> Result<Vec<i64>, ClassifyError> {
    radius_one(rule)?;
    let pat = parse_bits(b)?;
    if t_b == 0 {
        return Err(ClassifyError::Invalid("t_B must be at least 1".into()));
    }
    if t_b > MAX_T_UPPER {
        return Err(ClassifyError::Budget { bits: 4 * t_b, cap: 4 * MAX_T_UPPER });
    }
    let side = 2 * t_b;
    let blen = pat.len();
    let t = t_b as i64;
    let candidates: Vec<i64> = (-t..=t).collect();
    let ok: Vec<bool> = (0u32..1 << (2 * side))
        .into_par_iter()
        .fold(
            || vec![true; candidates.len()],
            |mut acc, a| {
                let bit = |k: usize| ((a >> k) & 1) as u8;
                let mut xi: Vec<u8> = (0..side).map(bit).collect();
                xi.extend_from_slice(&pat);
                xi.extend((side..2 * side).map(bit));
                let mut de: Vec<bool> = vec![true; side];
                de.extend(std::iter::repeat(false).take(blen));
                de.extend(std::iter::repeat(true).take(side));
                for _ in 0..t_b {
                    (xi, de) = strip_step(rule, &xi, &de);
                }
                // xi now covers [-t, b - 1 + t]
                for (j, &v) in candidates.iter().enumerate() {
                    if acc[j] {
                        let i = (v + t) as usize;
                        acc[j] = xi[i..i + blen] == pat[..] && de[i..i + blen].iter().all(|d| !d);
                    }
                }
                acc
            },
        )
        .reduce(|| vec![true; candidates.len()], |a, b| a.iter().zip(&b).map(|(x, y)| *x && *y).collect());
    Ok(candidates.into_iter().zip(ok).filter(|(_, k)| *k).map(|(v, _)| v).collect())
}

/// True iff one defect at 0 covers every site of `m` after `t_m` steps, whatever the background.
pub fn verify_lower(rule: &Rule, m: &[i64], t_m: usize) -> Result<bool, ClassifyError> {
    radius_one(rule)?;
    if t_m > MAX_T_LOWER {
        return Err(ClassifyError::Budget { bits: 4 * t_m + 1, cap: 4 * MAX_T_LOWER + 1 });
    }
    let t = t_m as i64;
    if m.iter().any(|x| x.abs() > t) {
        return Ok(false);
    }
    let n = 4 * t_m + 1;
    let all = (0u32..1 << n).into_par_iter().all(|a| {
        let mut xi: Vec<u8> = (0..n).map(|k| ((a >> k) & 1) as u8).collect();
        let mut de = vec![false; n];
        de[2 * t_m] = true;
        for _ in 0..t_m {
            (xi, de) = strip_step(rule, &xi, &de);
        }
        m.iter().all(|&x| de[(x + t) as usize])
    });
    Ok(all)
}

/// An upper-certificate row: rule, `B`, `t_B`, and the offsets listed for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpperRow {
    pub rule: u8,
    pub b: &'static str,
    pub t_b: usize,
    pub v_b: &'static [i64],
}

const fn row(rule: u8, b: &'static str, t_b: usize, v_b: &'static [i64]) -> UpperRow {
    UpperRow { rule, b, t_b, v_b }
}

/// Collapsing rules with a certificate recurring at several offsets (Rule 0 is trivial).
pub const COLLAPSING: [UpperRow; 7] = [
    row(8, "0", 1, &[-1, 0]),
    row(32, "0", 1, &[-1, 1]),
    row(40, "00", 1, &[-1, 0]),
    row(128, "0", 1, &[-1, 0, 1]),
    row(136, "0", 1, &[-1, 0]),
    row(160, "0", 1, &[-1, 1]),
    row(168, "00", 1, &[-1, 0]),
];

/// Marginal rules with a single-offset certificate.
pub const MARGINAL: [UpperRow; 41] = [
    row(1, "1", 2, &[0]),
    row(2, "0", 1, &[-1]),
    row(3, "00", 2, &[1]),
    row(4, "0", 1, &[0]),
    row(5, "1", 2, &[0]),
    row(7, "11", 2, &[1]),
    row(10, "0", 1, &[-1]),
    row(12, "0", 1, &[0]),
    row(13, "01", 1, &[0]),
    row(15, "0", 2, &[2]),
    row(19, "00", 2, &[0]),
    row(23, "00", 2, &[0]),
    row(28, "01", 1, &[0]),
    row(29, "01", 1, &[0]),
    row(34, "0", 1, &[-1]),
    row(36, "00", 1, &[0]),
    row(42, "0", 1, &[-1]),
    row(44, "00", 1, &[0]),
    row(50, "01", 2, &[0]),
    row(51, "0", 2, &[0]),
    row(72, "0", 1, &[0]),
    row(73, "0110", 1, &[0]),
    row(76, "0", 1, &[0]),
    row(77, "01", 1, &[0]),
    row(78, "10", 1, &[0]),
    row(94, "101", 1, &[0]),
    row(104, "00", 1, &[0]),
    row(108, "00", 1, &[0]),
    row(130, "0", 1, &[-1]),
    row(132, "0", 1, &[0]),
    row(138, "0", 1, &[-1]),
    row(140, "0", 1, &[0]),
    row(156, "01", 1, &[0]),
    row(162, "0", 1, &[-1]),
    row(164, "00", 1, &[0]),
    row(170, "0", 1, &[-1]),
    row(172, "00", 1, &[0]),
    row(178, "01", 2, &[0]),
    row(200, "0", 1, &[0]),
    row(204, "0", 1, &[0]),
    row(232, "00", 1, &[0]),
];

/// Marginal rules handled by a reduction to another rule after a transient.
pub const REDUCED_MARGINAL: [u8; 4] = [24, 33, 46, 152];
/// Marginal rules whose argument is not a finite check.
pub const PROOF_ONLY_MARGINAL: [u8; 1] = [27];

/// Expansion certificates `(rule, M, t_M)`.
pub const EXPANSIVE: [(u8, &[i64], usize); 4] =
    [(30, &[1, 3], 3), (45, &[0, 2], 2), (54, &[0, -1, 1], 3), (57, &[0, -1, 1], 3)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub statement: String,
    pub holds: bool,
}

/// Finite checks behind a reduction of `rule` to `equivalent` after a transient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub rule: u8,
    pub equivalent: u8,
    pub claims: Vec<Claim>,
    pub certificate: Certificate,
    pub certificate_holds: bool,
}

/// Every image of a window of `n + 2` cells, as `(preimage, image)` pairs.
fn images(rule: &Rule, n: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    (0u32..1 << (n + 2))
        .map(|a| {
            let xi: Vec<u8> = (0..n + 2).rev().map(|k| ((a >> k) & 1) as u8).collect();
            let de = vec![false; n + 2];
            let (y, _) = strip_step(rule, &xi, &de);
            (xi, y)
        })
        .collect()
}

/// True when `rule` and `other` agree on all windows not in `except`.
fn agrees_except(rule: &Rule, other: &Rule, except: &[usize]) -> bool {
    (0..8).filter(|w| !except.contains(w)).all(|w| rule.output(w) == other.output(w))
}

pub fn check_reduction(code: u8) -> Option<Reduction> {
    let rule = Rule::elementary(code);
    let claim = |s: &str, h: bool| Claim { statement: s.to_string(), holds: h };
    let (equivalent, claims) = match code {
        24 => {
            let isolated = images(&rule, 2).iter().all(|(_, y)| y[..] != [1, 1]);
            let agree = agrees_except(&rule, &Rule::elementary(16), &[3, 6, 7]);
            let mirror = reflect_eca(16) == 2;
            (16, vec![
                claim("no 11 at t=1", isolated),
                claim("agrees with rule 16 on windows without 11", agree),
                claim("rule 16 is the mirror image of rule 2", mirror),
            ])
        }
        33 => {
            let pre = images(&rule, 3)
                .iter()
                .filter(|(_, y)| y[..] == [1, 0, 1])
                .all(|(x, _)| x[0..3] == [1, 0, 1] && x[2..5] == [1, 0, 1]);
            let agree = agrees_except(&rule, &Rule::elementary(1), &[5]);
            (1, vec![
                claim("an isolated 0 at t>=1 has isolated 0s at both neighbors one step earlier", pre),
                claim("agrees with rule 1 on windows other than 101", agree),
            ])
        }
        46 => {
            let none = images(&rule, 3).iter().all(|(_, y)| y[..] != [0, 1, 0]);
            let agree = agrees_except(&rule, &Rule::elementary(42), &[2]);
            (42, vec![
                claim("no isolated 1 at t=1", none),
                claim("agrees with rule 42 on windows other than 010", agree),
            ])
        }
        152 => {
            let pre = images(&rule, 2).iter().filter(|(_, y)| y[..] == [1, 1]).all(|(x, _)| x[1..] == [1, 1, 1]);
            let agree = agrees_except(&rule, &Rule::elementary(16), &[3, 6, 7]);
            let mirror = reflect_eca(16) == 2;
            (16, vec![
                claim("11 at t>=1 requires 111 one step earlier", pre),
                claim("agrees with rule 16 on windows without 11", agree),
                claim("rule 16 is the mirror image of rule 2", mirror),
            ])
        }
        _ => return None,
    };
    let (b, t_b, v_b) = match equivalent {
        2 | 42 => ("0", 1, vec![-1]),
        1 => ("1", 2, vec![0]),
        16 => ("0", 1, vec![1]),
        _ => unreachable!(),
    };
    let got = verify_upper(&Rule::elementary(equivalent), b, t_b).ok();
    Some(Reduction {
        rule: code,
        equivalent,
        claims,
        certificate_holds: got.as_deref() == Some(&v_b[..]),
        certificate: Certificate::Upper { rule: equivalent, b: b.into(), t_b, v_b },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    E,
    C,
    M,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub p: f64,
    pub t: usize,
    pub seeds: Vec<u64>,
    /// Bin width for the threshold test (disjoint bins).
    pub bin: f64,
    pub threshold: f64,
    pub min_bins: usize,
    pub defects: DefectInit,
    pub max_cells: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            p: 0.5,
            t: 1000,
            seeds: vec![1, 2, 3],
            bin: 0.02,
            threshold: 0.05,
            min_bins: 3,
            defects: DefectInit::Interval(20),
            max_cells: 1 << 27,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEvidence {
    pub seed: u64,
    pub collapse_time: Option<usize>,
    #[serde(with = "jsonf64")]
    pub mle: f64,
    pub direction: Option<f64>,
    pub edges: Option<(f64, f64)>,
    /// Longest run of consecutive bins above the threshold.
    pub run_above: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub rule: String,
    pub class: Class,
    #[serde(with = "jsonf64")]
    pub mle: f64,
    pub direction: Option<f64>,
    pub edges: Option<(f64, f64)>,
    /// "high" when all seeds agree, "low" otherwise.
    pub confidence: String,
    pub evidence: Vec<SeedEvidence>,
}

/// `(1/t) log` of the defect mass in disjoint bins `[k w, (k+1) w)`.
fn binned_profile(rec: &dynamics::RunRecord, w: f64) -> Vec<(f64, f64)> {
    let Some(vals) = rec.final_logw.as_ref() else { return Vec::new() };
    let t = rec.t as f64;
    let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for ((x, _), v) in vals.iter() {
        if v > f64::NEG_INFINITY {
            let k = (x as f64 / t / w).floor() as i64;
            bins.entry(k).or_default().push(v);
        }
    }
    bins.into_iter().map(|(k, v)| ((k as f64 + 0.5) * w, dynamics::log_sum(&v) / t)).collect()
}

fn longest_run(profile: &[(f64, f64)], w: f64, level: f64) -> usize {
    let (mut best, mut cur) = (0, 0);
    let mut prev: Option<f64> = None;
    for &(a, v) in profile {
        let adjacent = prev.is_some_and(|p| (a - p - w).abs() < 1e-9 * w.max(1.0));
        if v > level {
            cur = if adjacent && cur > 0 { cur + 1 } else { 1 };
            best = best.max(cur);
        } else {
            cur = 0;
        }
        prev = Some(a);
    }
    best
}

fn evidence(rule: &Rule, cfg: &ClassifyConfig, seed: u64) -> Result<SeedEvidence, ClassifyError> {
    let mut rc = RunConfig::new(rule.spec().clone(), InitState::Uniform(cfg.p), cfg.defects.clone(), cfg.t, seed);
    rc.max_cells = cfg.max_cells;
    let rec = dynamics::run(&rc)?;
    let prof = binned_profile(&rec, cfg.bin);
    let (mut mle, mut dir) = (f64::NEG_INFINITY, None);
    for &(a, v) in &prof {
        if v > mle {
            mle = v;
            dir = Some(a);
        }
    }
    let t = cfg.t as f64;
    Ok(SeedEvidence {
        seed,
        collapse_time: rec.collapse_time,
        mle,
        direction: dir,
        edges: rec.edge_1d(cfg.t).map(|(a, b)| (a as f64 / t, b as f64 / t)),
        run_above: longest_run(&prof, cfg.bin, cfg.threshold),
    })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn classify_empirical(rule: &Rule, cfg: &ClassifyConfig) -> Result<Classification, ClassifyError> {
    if rule.dim() != 1 {
        return Err(ClassifyError::Invalid("empirical classification is one-dimensional".into()));
    }
    if !(cfg.p > 0.0 && cfg.p < 1.0) || cfg.seeds.is_empty() || cfg.t == 0 || cfg.bin <= 0.0 {
        return Err(ClassifyError::Invalid("need 0 < p < 1, t >= 1, bin > 0 and at least one seed".into()));
    }
    let ev: Vec<SeedEvidence> =
        cfg.seeds.par_iter().map(|&s| evidence(rule, cfg, s)).collect::<Result<_, _>>()?;
    let collapsed = ev.iter().filter(|e| e.collapse_time.is_some()).count();
    // bins already covered by the initial defect interval do not count as spreading
    let sites = cfg.defects.sites(1);
    let width = sites.iter().map(|s| s.0).max().unwrap_or(0) - sites.iter().map(|s| s.0).min().unwrap_or(0) + 1;
    let footprint = (width as f64 / (cfg.t as f64 * cfg.bin)).ceil() as usize + 1;
    let expansive = ev.iter().filter(|e| e.run_above >= cfg.min_bins + footprint).count();
    let n = ev.len();
    let class = if collapsed == n {
        Class::C
    } else if 2 * expansive > n {
        Class::E
    } else {
        Class::M
    };
    let agree = collapsed == n || expansive == n || (collapsed == 0 && expansive == 0);
    let live: Vec<&SeedEvidence> = ev.iter().filter(|e| e.mle.is_finite()).collect();
    let mle = mean(&live.iter().map(|e| e.mle).collect::<Vec<_>>()).unwrap_or(f64::NEG_INFINITY);
    let direction = mean(&live.iter().filter_map(|e| e.direction).collect::<Vec<_>>());
    let lo: Vec<f64> = ev.iter().filter_map(|e| e.edges.map(|x| x.0)).collect();
    let hi: Vec<f64> = ev.iter().filter_map(|e| e.edges.map(|x| x.1)).collect();
    let edges = mean(&lo).zip(mean(&hi));
    Ok(Classification {
        rule: rule.name(),
        class,
        mle,
        direction,
        edges,
        confidence: if agree { "high" } else { "low" }.into(),
        evidence: ev,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub class: Class,
    #[serde(with = "jsonf64")]
    pub mle: f64,
    pub direction: Option<f64>,
    pub edges: Option<(f64, f64)>,
}

pub fn density_sweep(rule: &Rule, ps: &[f64], cfg: &ClassifyConfig) -> Result<Vec<SweepRow>, ClassifyError> {
    ps.iter()
        .map(|&p| {
            let c = classify_empirical(rule, &ClassifyConfig { p, ..cfg.clone() })?;
            Ok(SweepRow { p, class: c.class, mle: c.mle, direction: c.direction, edges: c.edges })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut s = String::from("p,class,mle,direction,edge_lo,edge_hi\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:?},{},{},{},{}\n",
            r.p,
            r.class,
            jsonf64::csv(r.mle),
            opt(r.direction),
            opt(r.edges.map(|e| e.0)),
            opt(r.edges.map(|e| e.1))
        ));
    }
    s
}

/// Exact constants of the Rule 38 stripe chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule38Constants {
    pub states: usize,
    pub mean_gap: String,
    pub alpha_r: String,
    pub edge_height: f64,
    #[serde(skip)]
    pub mean_gap_exact: BigRational,
    #[serde(skip)]
    pub alpha_r_exact: BigRational,
}

fn rat(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Counts of length-`n` strings of `xi_2` over all `xi_0` windows of length `n + 4`.
fn xi2_counts(rule: &Rule, n: usize) -> BTreeMap<Vec<u8>, u64> {
    let mut c = BTreeMap::new();
    for a in 0u32..1 << (n + 4) {
        let mut xi: Vec<u8> = (0..n + 4).rev().map(|k| ((a >> k) & 1) as u8).collect();
        let de = vec![false; xi.len()];
        for _ in 0..2 {
            xi = strip_step(rule, &xi, &de[..xi.len()]).0;
        }
        *c.entry(xi).or_insert(0) += 1;
    }
    c
}

/// Solve `A x = b` exactly; `A` is assumed nonsingular.
fn solve(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Vec<BigRational> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).find(|&r| !a[r][c].is_zero()).expect("nonsingular system");
        a.swap(c, p);
        b.swap(c, p);
        for r in 0..n {
            if r != c && !a[r][c].is_zero() {
                let f = &a[r][c] / &a[c][c];
                for k in c..n {
                    let d = &f * &a[c][k];
                    a[r][k] -= d;
                }
                let d = &f * &b[c];
                b[r] -= d;
            }
        }
    }
    (0..n).map(|i| &b[i] / &a[i][i]).collect()
}

pub fn rule38_constants() -> Rule38Constants {
    let rule = Rule::elementary(38);
    let d4 = xi2_counts(&rule, 4);
    let d5 = xi2_counts(&rule, 5);
    let total: u64 = d4.values().sum();
    let states: Vec<(Vec<u8>, u8)> = d4.keys().flat_map(|s| [(s.clone(), 0), (s.clone(), 1)]).collect();
    let idx: BTreeMap<(Vec<u8>, u8), usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let n = states.len();
    let mut p = vec![vec![BigRational::zero(); n]; n];
    for (i, (s, a)) in states.iter().enumerate() {
        for b in 0..2u8 {
            let mut w = s.clone();
            w.push(b);
            if let Some(&c) = d5.get(&w) {
                let next = (w[1..].to_vec(), 1 - a);
                p[i][idx[&next]] = rat(c, 2 * d4[s]);
            }
        }
    }
    let pi: Vec<BigRational> = states.iter().map(|(s, _)| rat(d4[s], 2 * total)).collect();
    let st = |s: &str, a: u8| (s.bytes().map(|c| c - b'0').collect::<Vec<u8>>(), a);
    let h1 = [st("0011", 1), st("1011", 1), st("0010", 0), st("1010", 0)];
    let h2: BTreeSet<usize> = [st("0011", 0), st("1011", 0), st("0010", 1), st("1010", 1)].iter().map(|x| idx[x]).collect();
    let rest: Vec<usize> = (0..n).filter(|i| !h2.contains(i)).collect();
    let a: Vec<Vec<BigRational>> = rest
        .iter()
        .map(|&i| {
            rest.iter()
                .map(|&j| if i == j { BigRational::one() - &p[i][j] } else { -p[i][j].clone() })
                .collect()
        })
        .collect();
    let hit = solve(a, vec![BigRational::one(); rest.len()]);
    let pos: BTreeMap<usize, usize> = rest.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let (mut num, mut den) = (BigRational::zero(), BigRational::zero());
    for x in &h1 {
        let i = idx[x];
        num += &pi[i] * &hit[pos[&i]];
        den += &pi[i];
    }
    let gap = num / den;
    let alpha = BigRational::one() / (&gap - BigRational::one());
    let af = alpha.numer().to_string().parse::<f64>().unwrap() / alpha.denom().to_string().parse::<f64>().unwrap();
    Rule38Constants {
        states: n,
        mean_gap: gap.to_string(),
        alpha_r: alpha.to_string(),
        edge_height: af * 2f64.ln(),
        mean_gap_exact: gap,
        alpha_r_exact: alpha,
    }
}

/// Stochastic-matrix check used by tests: rows of the chain sum to one.
pub fn rule38_chain_rows_sum_to_one() -> bool {
    let rule = Rule::elementary(38);
    let d4 = xi2_counts(&rule, 4);
    let d5 = xi2_counts(&rule, 5);
    d4.iter().all(|(s, &c)| {
        let out: u64 = (0..2u8)
            .filter_map(|b| {
                let mut w = s.clone();
                w.push(b);
                d5.get(&w).copied()
            })
            .sum();
        out == 2 * c
    })
}

/// Whether the spec is a rule for which certificates apply.
pub fn certifiable(spec: &RuleSpec) -> bool {
    Rule::new(spec.clone()).map(|r| r.is_radius_one_1d()).unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upper_examples() {
        assert_eq!(verify_upper(&Rule::elementary(128), "0", 1).unwrap(), vec![-1, 0, 1]);
        assert!(verify_upper(&Rule::elementary(1), "1", 2).unwrap().contains(&0));
        assert!(verify_upper(&Rule::elementary(30), "0", 1).unwrap().is_empty());
        assert!(matches!(verify_upper(&Rule::elementary(1), "1", 5), Err(ClassifyError::Budget { .. })));
    }

    #[test]
    fn lower_examples() {
        assert!(verify_lower(&Rule::elementary(30), &[1, 3], 3).unwrap());
        assert!(verify_lower(&Rule::elementary(54), &[0, -1, 1], 3).unwrap());
        assert!(!verify_lower(&Rule::elementary(0), &[0, 1], 1).unwrap());
        assert!(!verify_lower(&Rule::elementary(30), &[-3, 3], 3).unwrap());
    }

    #[test]
    fn reductions_hold() {
        for c in REDUCED_MARGINAL {
            let r = check_reduction(c).unwrap();
            assert!(r.claims.iter().all(|c| c.holds), "{r:?}");
            assert!(r.certificate_holds, "{r:?}");
        }
        assert!(check_reduction(27).is_none());
    }

    #[test]
    fn chain_is_stochastic() {
        assert!(rule38_chain_rows_sum_to_one());
        let c = rule38_constants();
        assert_eq!(c.states, 24);
        assert_eq!(c.mean_gap, "95137/8920");
        assert_eq!(c.alpha_r, "8920/86217");
    }

    #[test]
    fn disjoint_bin_runs() {
        let p = [(0.01, 0.1), (0.03, 0.2), (0.05, 0.0), (0.07, 0.3), (0.09, 0.3), (0.11, 0.3)];
        assert_eq!(longest_run(&p, 0.02, 0.05), 3);
        let gap = [(0.01, 0.1), (0.05, 0.2), (0.07, 0.2)];
        assert_eq!(longest_run(&gap, 0.02, 0.05), 2);
    }
}
