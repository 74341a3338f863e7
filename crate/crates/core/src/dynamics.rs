//! Defect accumulation (log-space counts), percolation indicator, damage
//! spreading, and the simulation driver.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonf64;
use crate::profiles::log_add;
use crate::rules::{parse_tile, Field, Rule, RuleError, RuleSpec, Site};

/// Default cap on lattice cells for a single run.
pub const DEFAULT_MAX_CELLS: usize = 1 << 27;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("lattice of {cells} cells exceeds the budget of {limit}")]
    Budget { cells: usize, limit: usize },
    #[error("invalid initial condition: {0}")]
    Init(String),
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Log-space defect counts; `-inf` marks sites without defects.
#[derive(Debug, Clone, PartialEq)]
pub struct DefectField {
    width: usize,
    height: usize,
    dim: usize,
    logw: Vec<f64>,
}

impl DefectField {
    pub fn empty_like(field: &Field) -> DefectField {
        DefectField {
            width: field.width(),
            height: field.height(),
            dim: field.dim(),
            logw: vec![f64::NEG_INFINITY; field.len()],
        }
    }

    /// One defect (count 1, log 0) on every site where `indicator` is 1.
    pub fn from_indicator(indicator: &Field) -> DefectField {
        let mut d = DefectField::empty_like(indicator);
        for (w, &b) in d.logw.iter_mut().zip(indicator.cells()) {
            if b != 0 {
                *w = 0.0;
            }
        }
        d
    }

    pub fn logw(&self) -> &[f64] {
        &self.logw
    }

    pub fn get(&self, site: Site) -> f64 {
        self.logw[self.index(site)]
    }

    pub fn set(&mut self, site: Site, v: f64) {
        let i = self.index(site);
        self.logw[i] = v;
    }

    fn index(&self, site: Site) -> usize {
        let x = site.0.rem_euclid(self.width as i64) as usize;
        let y = site.1.rem_euclid(self.height as i64) as usize;
        y * self.width + x
    }

    /// The indicator of the defect set.
    pub fn support(&self) -> Field {
        let cells = self.logw.iter().map(|&w| u8::from(w > f64::NEG_INFINITY)).collect();
        if self.dim == 1 {
            Field::from_cells_1d(cells)
        } else {
            Field::from_cells_2d(self.width, self.height, cells)
        }
    }

    /// Log of the total defect count.
    pub fn log_total(&self) -> f64 {
        log_sum(&self.logw)
    }
}

/// Log of a sum of exponentials, stable and independent of input order.
pub fn log_sum(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Neighbor index tables for a cyclic lattice.
struct Geometry {
    w: usize,
    h: usize,
    xs: Vec<Vec<u32>>,
    ys: Vec<Vec<u32>>,
}

impl Geometry {
    fn new(rule: &Rule, w: usize, h: usize) -> Geometry {
        let wrap = |n: usize, d: i32| -> Vec<u32> {
            (0..n as i64).map(|i| (i + d as i64).rem_euclid(n as i64) as u32).collect()
        };
        Geometry {
            w,
            h,
            xs: rule.offsets().iter().map(|o| wrap(w, o[0])).collect(),
            ys: rule.offsets().iter().map(|o| wrap(h, o[1])).collect(),
        }
    }

    #[inline]
    fn nb(&self, k: usize, x: usize, y: usize) -> usize {
        self.ys[k][y] as usize * self.w + self.xs[k][x] as usize
    }
}

/// Inclusive rectangle of lattice indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Region {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl Region {
    fn full(g: &Geometry) -> Region {
        Region { x0: 0, x1: g.w - 1, y0: 0, y1: g.h - 1 }
    }

    /// Grow by `r` on every side; the full lattice if that would wrap.
    fn grow(self, r: usize, g: &Geometry) -> Region {
        let ok_x = self.x0 >= r && self.x1 + r < g.w;
        let ok_y = g.h == 1 || (self.y0 >= r && self.y1 + r < g.h);
        if !(ok_x && ok_y) {
            return Region::full(g);
        }
        if g.h == 1 {
            Region { x0: self.x0 - r, x1: self.x1 + r, y0: 0, y1: 0 }
        } else {
            Region { x0: self.x0 - r, x1: self.x1 + r, y0: self.y0 - r, y1: self.y1 + r }
        }
    }
}

/// Evaluate `f(x, y)` over `region`, writing into the row-major buffer `out`.
fn fill_region<T, F>(out: &mut [T], g: &Geometry, region: Region, f: F)
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync,
{
    const CHUNK: usize = 4096;
    if g.h == 1 {
        out[region.x0..=region.x1]
            .par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                for (j, v) in chunk.iter_mut().enumerate() {
                    *v = f(region.x0 + c * CHUNK + j, 0);
                }
            });
    } else {
        out.par_chunks_mut(g.w)
            .enumerate()
            .filter(|(y, _)| *y >= region.y0 && *y <= region.y1)
            .for_each(|(y, row)| {
                for x in region.x0..=region.x1 {
                    row[x] = f(x, y);
                }
            });
    }
}

fn window_codes(rule: &Rule, g: &Geometry, cells: &[u8], region: Region) -> Vec<u16> {
    let n = rule.len();
    let mut codes = vec![0u16; cells.len()];
    fill_region(&mut codes, g, region, |x, y| {
        let mut c = 0u16;
        for k in 0..n {
            c = (c << 1) | cells[g.nb(k, x, y)] as u16;
        }
        c
    });
    codes
}

#[inline]
fn accumulate(g: &Geometry, mask: u16, logw: &[f64], x: usize, y: usize) -> f64 {
    let mut terms = [0f64; crate::rules::MAX_NEIGHBORS];
    let mut n = 0;
    let mut m = mask;
    while m != 0 {
        let k = m.trailing_zeros() as usize;
        m &= m - 1;
        let v = logw[g.nb(k, x, y)];
        if v > f64::NEG_INFINITY {
            terms[n] = v;
            n += 1;
        }
    }
    match n {
        0 => f64::NEG_INFINITY,
        1 => terms[0],
        _ => {
            let t = &mut terms[..n];
            t.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite log weights"));
            t[1..].iter().fold(t[0], |acc, &v| log_add(acc, v))
        }
    }
}

fn same_shape(rule: &Rule, a: &Field, b_w: usize, b_h: usize) -> Result<(), RuleError> {
    if rule.dim() != a.dim() {
        return Err(RuleError::DimensionMismatch { rule: rule.dim(), field: a.dim() });
    }
    if a.width() != b_w || a.height() != b_h {
        return Err(RuleError::Tile("fields have different shapes".into()));
    }
    Ok(())
}

/// One step of defect accumulation: `Delta'(x) = sum_y change(y, x) Delta(y)`.
pub fn defect_step(rule: &Rule, state: &Field, defects: &DefectField) -> Result<DefectField, RuleError> {
    same_shape(rule, state, defects.width, defects.height)?;
    let g = Geometry::new(rule, state.width(), state.height());
    let full = Region::full(&g);
    let codes = window_codes(rule, &g, state.cells(), full);
    let mut out = DefectField::empty_like(state);
    fill_region(&mut out.logw, &g, full, |x, y| {
        let mask = rule.sensitivity(codes[y * g.w + x] as usize);
        accumulate(&g, mask, &defects.logw, x, y)
    });
    Ok(out)
}

/// One step of the defect indicator.
pub fn percolation_step(rule: &Rule, state: &Field, indicator: &Field) -> Result<Field, RuleError> {
    same_shape(rule, state, indicator.width(), indicator.height())?;
    let g = Geometry::new(rule, state.width(), state.height());
    let full = Region::full(&g);
    let codes = window_codes(rule, &g, state.cells(), full);
    let mut out = indicator.clone();
    let ind = indicator.cells();
    fill_region(out.cells_mut(), &g, full, |x, y| {
        percolate_cell(rule.sensitivity(codes[y * g.w + x] as usize), ind, &g, x, y)
    });
    Ok(out)
}

#[inline]
fn percolate_cell(mask: u16, ind: &[u8], g: &Geometry, x: usize, y: usize) -> u8 {
    let mut m = mask;
    while m != 0 {
        let k = m.trailing_zeros() as usize;
        m &= m - 1;
        if ind[g.nb(k, x, y)] != 0 {
            return 1;
        }
    }
    0
}

/// `damage' = Phi(state XOR damage) XOR next_state`.
pub fn damage_step(rule: &Rule, state: &Field, next_state: &Field, damage: &Field) -> Result<Field, RuleError> {
    same_shape(rule, state, damage.width(), damage.height())?;
    same_shape(rule, state, next_state.width(), next_state.height())?;
    let perturbed = crate::rules::apply_global(rule, &state.xor(damage))?;
    Ok(perturbed.xor(next_state))
}

/// Initial configuration of the background.
#[derive(Debug, Clone, PartialEq)]
pub enum InitState {
    /// Independent cells, each 1 with probability `p`.
    Uniform(f64),
    /// Periodic extension of a tile (see [`parse_tile`]).
    Tile(String),
    /// A tile read from a file.
    File(String),
}

impl fmt::Display for InitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitState::Uniform(p) => write!(f, "uniform:{p}"),
            InitState::Tile(t) => write!(f, "tile:{t}"),
            InitState::File(p) => write!(f, "file:{p}"),
        }
    }
}

impl FromStr for InitState {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| RunError::Init(format!("`{s}`: expected kind:arg")))?;
        match kind {
            "uniform" => {
                let p: f64 = arg.parse().map_err(|_| RunError::Init(format!("bad density `{arg}`")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(RunError::Init(format!("density {p} outside [0, 1]")));
                }
                Ok(InitState::Uniform(p))
            }
            "tile" => {
                parse_tile(arg)?;
                Ok(InitState::Tile(arg.to_string()))
            }
            "file" => Ok(InitState::File(arg.to_string())),
            _ => Err(RunError::Init(format!("unknown initial state kind `{kind}`"))),
        }
    }
}

impl Serialize for InitState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for InitState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl InitState {
    fn tile(&self) -> Result<Option<Field>, RunError> {
        match self {
            InitState::Uniform(_) => Ok(None),
            InitState::Tile(t) => Ok(Some(parse_tile(t)?)),
            InitState::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| RunError::Io { path: p.clone(), source: e })?;
                let joined: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
                Ok(Some(parse_tile(&joined.join("/"))?))
            }
        }
    }
}

/// Initial defect set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DefectInit {
    Point,
    /// `k` consecutive sites centered at the origin.
    Interval(usize),
    /// A `k` by `k` square centered at the origin.
    Square(usize),
    /// Explicit sites.
    Sites(Vec<Site>),
}

impl fmt::Display for DefectInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DefectInit::Point => write!(f, "point"),
            DefectInit::Interval(k) => write!(f, "interval:{k}"),
            DefectInit::Square(k) => write!(f, "square:{k}"),
            DefectInit::Sites(v) => {
                let parts: Vec<String> = v.iter().map(|(x, y)| format!("{x},{y}")).collect();
                write!(f, "sites:{}", parts.join(";"))
            }
        }
    }
}

impl FromStr for DefectInit {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        let bad = || RunError::Init(format!("bad defect set `{s}`"));
        if s == "point" {
            return Ok(DefectInit::Point);
        }
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "interval" => Ok(DefectInit::Interval(arg.parse().ok().filter(|&k| k > 0).ok_or_else(bad)?)),
            "square" => Ok(DefectInit::Square(arg.parse().ok().filter(|&k| k > 0).ok_or_else(bad)?)),
            "sites" => {
                let mut v = Vec::new();
                for part in arg.split(';') {
                    let nums: Vec<i64> = part.split(',').map(|n| n.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
                    match nums.as_slice() {
                        [x] => v.push((*x, 0)),
                        [x, y] => v.push((*x, *y)),
                        _ => return Err(bad()),
                    }
                }
                if v.is_empty() {
                    return Err(bad());
                }
                Ok(DefectInit::Sites(v))
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for DefectInit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DefectInit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl DefectInit {
    pub fn sites(&self, dim: usize) -> Vec<Site> {
        let centered = |k: usize| -> Vec<i64> {
            let lo = -((k / 2) as i64);
            (0..k as i64).map(|i| lo + i).collect()
        };
        match self {
            DefectInit::Point => vec![(0, 0)],
            DefectInit::Interval(k) => centered(*k).into_iter().map(|x| (x, 0)).collect(),
            DefectInit::Square(k) => {
                let c = centered(*k);
                if dim == 1 {
                    c.into_iter().map(|x| (x, 0)).collect()
                } else {
                    c.iter().flat_map(|&y| c.iter().map(move |&x| (x, y))).collect()
                }
            }
            DefectInit::Sites(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub rule: RuleSpec,
    pub init: InitState,
    pub defects: DefectInit,
    pub t: usize,
    pub seed: u64,
    /// Track log-space counts (otherwise only the indicator).
    pub weights: bool,
    pub damage: bool,
    /// Record the defect indicator for all times `>=` this one.
    pub history_from: Option<usize>,
    pub damage_history_from: Option<usize>,
    /// Keep final log-weights and indicator.
    pub keep_final: bool,
    pub max_cells: usize,
}

impl RunConfig {
    pub fn new(rule: RuleSpec, init: InitState, defects: DefectInit, t: usize, seed: u64) -> RunConfig {
        RunConfig {
            rule,
            init,
            defects,
            t,
            seed,
            weights: true,
            damage: false,
            history_from: None,
            damage_history_from: None,
            keep_final: true,
            max_cells: DEFAULT_MAX_CELLS,
        }
    }
}

/// Bounding box of a site set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub min: [i64; 2],
    pub max: [i64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeInfo {
    pub width: usize,
    pub height: usize,
    /// Lattice index of site (0, 0).
    pub origin: [usize; 2],
}

impl LatticeInfo {
    pub fn site(&self, index: usize) -> Site {
        let x = (index % self.width) as i64 - self.origin[0] as i64;
        let y = (index / self.width) as i64 - self.origin[1] as i64;
        (x, y)
    }

    pub fn index(&self, site: Site) -> usize {
        let x = (site.0 + self.origin[0] as i64).rem_euclid(self.width as i64) as usize;
        let y = (site.1 + self.origin[1] as i64).rem_euclid(self.height as i64) as usize;
        y * self.width + x
    }
}

/// Bit-packed indicator of one time slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorFrame {
    pub t: usize,
    pub lattice: LatticeInfo,
    pub words: Vec<u64>,
}

impl IndicatorFrame {
    fn pack(t: usize, lattice: LatticeInfo, cells: impl Iterator<Item = bool>) -> IndicatorFrame {
        let n = lattice.width * lattice.height;
        let mut words = vec![0u64; n.div_ceil(64)];
        for (i, b) in cells.enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        IndicatorFrame { t, lattice, words }
    }

    pub fn get_index(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn get(&self, site: Site) -> bool {
        self.get_index(self.lattice.index(site))
    }

    /// Sites in the set, in lattice order.
    pub fn sites(&self) -> Vec<Site> {
        let mut out = Vec::new();
        for (wi, &w) in self.words.iter().enumerate() {
            let mut m = w;
            while m != 0 {
                let b = m.trailing_zeros() as usize;
                m &= m - 1;
                out.push(self.lattice.site(wi * 64 + b));
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Run-length encoding, row by row: alternating run lengths starting with zeros.
    pub fn to_rle(&self) -> String {
        let w = self.lattice.width;
        let mut rows = Vec::new();
        for y in 0..self.lattice.height {
            let mut runs = Vec::new();
            let mut cur = false;
            let mut len = 0usize;
            for x in 0..w {
                let b = self.get_index(y * w + x);
                if b == cur {
                    len += 1;
                } else {
                    runs.push(len.to_string());
                    cur = b;
                    len = 1;
                }
            }
            runs.push(len.to_string());
            rows.push(runs.join(","));
        }
        format!("t={} {}", self.t, rows.join("/"))
    }
}

/// Log-weights on a box of sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteValues {
    /// Site coordinates of the first stored value.
    pub min: [i64; 2],
    pub width: usize,
    pub height: usize,
    #[serde(with = "jsonf64::vec")]
    pub values: Vec<f64>,
}

impl SiteValues {
    pub fn iter(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| {
            ((self.min[0] + (i % self.width) as i64, self.min[1] + (i / self.width) as i64), v)
        })
    }

    pub fn get(&self, site: Site) -> f64 {
        let dx = site.0 - self.min[0];
        let dy = site.1 - self.min[1];
        if dx < 0 || dy < 0 || dx >= self.width as i64 || dy >= self.height as i64 {
            return f64::NEG_INFINITY;
        }
        self.values[dy as usize * self.width + dx as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub rule: String,
    pub seed: u64,
    pub t: usize,
    pub dim: usize,
    pub config: RunConfig,
    pub lattice: LatticeInfo,
    /// Bounding box of the defect set at each time `0..=t` (`None` when empty).
    pub edges: Vec<Option<Extent>>,
    /// Log of the total defect count at each time (empty without weights).
    #[serde(with = "jsonf64::vec")]
    pub log_total: Vec<f64>,
    pub collapse_time: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_logw: Option<SiteValues>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub damage_edges: Option<Vec<Option<Extent>>>,
    #[serde(skip)]
    pub history: Vec<IndicatorFrame>,
    #[serde(skip)]
    pub damage_history: Vec<IndicatorFrame>,
    #[serde(skip)]
    pub final_delta: Option<IndicatorFrame>,
}

impl RunRecord {
    /// One-dimensional support interval at time `s`.
    pub fn edge_1d(&self, s: usize) -> Option<(i64, i64)> {
        self.edges.get(s).copied().flatten().map(|e| (e.min[0], e.max[0]))
    }
}

fn site_key(site: Site, dim: usize) -> u64 {
    let zig = |v: i64| ((v << 1) ^ (v >> 63)) as u64;
    if dim == 1 {
        zig(site.0)
    } else {
        let (a, b) = (zig(site.0), zig(site.1));
        // Cantor pairing; coordinates stay far below overflow for feasible lattices.
        (a + b) * (a + b + 1) / 2 + b
    }
}

/// Counter-based Bernoulli draw for one site.
pub fn bernoulli_site(rng: &mut ChaCha8Rng, site: Site, dim: usize, p: f64) -> u8 {
    rng.set_word_pos(2 * site_key(site, dim) as u128);
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    u8::from(u < p)
}

fn extent_of(lat: &LatticeInfo, g: &Geometry, region: Region, on: impl Fn(usize) -> bool) -> Option<Extent> {
    let mut ext: Option<(usize, usize, usize, usize)> = None;
    for y in region.y0..=region.y1 {
        for x in region.x0..=region.x1 {
            if on(y * g.w + x) {
                ext = Some(match ext {
                    None => (x, x, y, y),
                    Some((a, b, c, d)) => (a.min(x), b.max(x), c.min(y), d.max(y)),
                });
            }
        }
    }
    ext.map(|(x0, x1, y0, y1)| Extent {
        min: [x0 as i64 - lat.origin[0] as i64, y0 as i64 - lat.origin[1] as i64],
        max: [x1 as i64 - lat.origin[0] as i64, y1 as i64 - lat.origin[1] as i64],
    })
}

fn region_of(lat: &LatticeInfo, e: &Extent) -> Region {
    Region {
        x0: (e.min[0] + lat.origin[0] as i64) as usize,
        x1: (e.max[0] + lat.origin[0] as i64) as usize,
        y0: (e.min[1] + lat.origin[1] as i64) as usize,
        y1: (e.max[1] + lat.origin[1] as i64) as usize,
    }
}

/// Run the coupled background / defect (/ damage) dynamics for `config.t` steps.
pub fn run(config: &RunConfig) -> Result<RunRecord, RunError> {
    let rule = Rule::new(config.rule.clone())?;
    let dim = rule.dim();
    let r = rule.radius();
    let tile = config.init.tile()?;
    if let Some(tl) = &tile {
        if tl.dim() != dim {
            return Err(RuleError::DimensionMismatch { rule: dim, field: tl.dim() }.into());
        }
    }
    let d0 = config.defects.sites(dim);
    if d0.is_empty() {
        return Err(RunError::Init("empty initial defect set".into()));
    }
    if dim == 1 && d0.iter().any(|s| s.1 != 0) {
        return Err(RunError::Init("one-dimensional defects must have y = 0".into()));
    }
    let margin = config.t.saturating_mul(r).saturating_add(r);
    let axis = |lo: i64, hi: i64, period: usize| -> (usize, usize) {
        let span = (hi - lo) as usize + 1 + 2 * margin;
        let width = span.div_ceil(period) * period;
        let origin = (margin as i64 - lo) as usize;
        (width, origin)
    };
    let (xlo, xhi) = (d0.iter().map(|s| s.0).min().unwrap(), d0.iter().map(|s| s.0).max().unwrap());
    let (ylo, yhi) = (d0.iter().map(|s| s.1).min().unwrap(), d0.iter().map(|s| s.1).max().unwrap());
    let (px, py) = tile.as_ref().map_or((1, 1), |t| (t.width(), t.height()));
    let (w, ox) = axis(xlo, xhi, px);
    let (h, oy) = if dim == 1 { (1, 0) } else { axis(ylo, yhi, py) };
    let cells = w.checked_mul(h).unwrap_or(usize::MAX);
    if cells > config.max_cells {
        return Err(RunError::Budget { cells, limit: config.max_cells });
    }
    let lat = LatticeInfo { width: w, height: h, origin: [ox, oy] };

    let mut state = if dim == 1 { Field::new_1d(w) } else { Field::new_2d(w, h) };
    match (&config.init, &tile) {
        (_, Some(tl)) => {
            for i in 0..cells {
                let s = lat.site(i);
                state.cells_mut()[i] = tl.get(s);
            }
        }
        (InitState::Uniform(p), None) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            for i in 0..cells {
                state.cells_mut()[i] = bernoulli_site(&mut rng, lat.site(i), dim, *p);
            }
        }
        _ => unreachable!("tile-less init is uniform"),
    }

    let g = Geometry::new(&rule, w, h);
    let mut logw = vec![f64::NEG_INFINITY; if config.weights { cells } else { 0 }];
    let mut delta = vec![0u8; cells];
    for &s in &d0 {
        let i = lat.index(s);
        delta[i] = 1;
        if config.weights {
            logw[i] = 0.0;
        }
    }
    let mut damage = if config.damage { Some(delta.clone()) } else { None };

    let mut edges = Vec::with_capacity(config.t + 1);
    let mut log_total = Vec::new();
    let mut damage_edges = config.damage.then(Vec::new);
    let mut history = Vec::new();
    let mut damage_history = Vec::new();
    let full = Region::full(&g);

    let mut ext = extent_of(&lat, &g, full, |i| delta[i] != 0);
    let mut dext = ext;
    let record = |s: usize,
                  ext: Option<Extent>,
                  delta: &[u8],
                  logw: &[f64],
                  damage: Option<&Vec<u8>>,
                  dext: Option<Extent>,
                  edges: &mut Vec<Option<Extent>>,
                  log_total: &mut Vec<f64>,
                  damage_edges: &mut Option<Vec<Option<Extent>>>,
                  history: &mut Vec<IndicatorFrame>,
                  damage_history: &mut Vec<IndicatorFrame>| {
        edges.push(ext);
        if config.weights {
            let lt = match ext {
                None => f64::NEG_INFINITY,
                Some(e) => {
                    let rg = region_of(&lat, &e);
                    let mut vals = Vec::new();
                    for y in rg.y0..=rg.y1 {
                        vals.extend_from_slice(&logw[y * w + rg.x0..=y * w + rg.x1]);
                    }
                    log_sum(&vals)
                }
            };
            log_total.push(lt);
        }
        if let Some(de) = damage_edges.as_mut() {
            de.push(dext);
        }
        if config.history_from.is_some_and(|h0| s >= h0) {
            history.push(IndicatorFrame::pack(s, lat, delta.iter().map(|&b| b != 0)));
        }
        if let (Some(dm), Some(h0)) = (damage, config.damage_history_from) {
            if s >= h0 {
                damage_history.push(IndicatorFrame::pack(s, lat, dm.iter().map(|&b| b != 0)));
            }
        }
    };
    record(0, ext, &delta, &logw, damage.as_ref(), dext, &mut edges, &mut log_total, &mut damage_edges, &mut history, &mut damage_history);

    let mut collapse_time = if ext.is_none() { Some(0) } else { None };
    let mut s = 0;
    while s < config.t && collapse_time.is_none() {
        let codes = window_codes(&rule, &g, state.cells(), full);
        let active = region_of(&lat, &ext.expect("nonempty")).grow(r, &g);
        let mut next_delta = vec![0u8; cells];
        if config.weights {
            let mut next = vec![f64::NEG_INFINITY; cells];
            fill_region(&mut next, &g, active, |x, y| {
                let mask = rule.sensitivity(codes[y * w + x] as usize);
                accumulate(&g, mask, &logw, x, y)
            });
            for y in active.y0..=active.y1 {
                for x in active.x0..=active.x1 {
                    next_delta[y * w + x] = u8::from(next[y * w + x] > f64::NEG_INFINITY);
                }
            }
            logw = next;
        } else {
            fill_region(&mut next_delta, &g, active, |x, y| {
                percolate_cell(rule.sensitivity(codes[y * w + x] as usize), &delta, &g, x, y)
            });
        }
        let mut next_state = state.clone();
        {
            let st = next_state.cells_mut();
            st.par_iter_mut().zip(codes.par_iter()).for_each(|(c, &code)| *c = rule.output(code as usize));
        }
        if let Some(dm) = damage.as_mut() {
            let mut next_dm = vec![0u8; cells];
            if let Some(de) = dext {
                let drg = region_of(&lat, &de).grow(r, &g);
                let perturbed: Vec<u8> = state.cells().iter().zip(dm.iter()).map(|(a, b)| a ^ b).collect();
                let pcodes = window_codes(&rule, &g, &perturbed, drg);
                let ns = next_state.cells();
                fill_region(&mut next_dm, &g, drg, |x, y| {
                    let i = y * w + x;
                    rule.output(pcodes[i] as usize) ^ ns[i]
                });
                dext = extent_of(&lat, &g, drg, |i| next_dm[i] != 0);
            }
            *dm = next_dm;
        }
        state = next_state;
        delta = next_delta;
        ext = extent_of(&lat, &g, active, |i| delta[i] != 0);
        s += 1;
        record(s, ext, &delta, &logw, damage.as_ref(), dext, &mut edges, &mut log_total, &mut damage_edges, &mut history, &mut damage_history);
        if ext.is_none() {
            collapse_time = Some(s);
        }
    }
    // After collapse nothing changes; pad the per-time records.
    while edges.len() < config.t + 1 {
        let k = edges.len();
        record(k, None, &delta, &logw, damage.as_ref(), None, &mut edges, &mut log_total, &mut damage_edges, &mut history, &mut damage_history);
    }

    let (final_logw, final_delta) = if config.keep_final {
        let fl = match (config.weights, ext) {
            (true, Some(e)) => {
                let rg = region_of(&lat, &e);
                let mut vals = Vec::new();
                for y in rg.y0..=rg.y1 {
                    vals.extend_from_slice(&logw[y * w + rg.x0..=y * w + rg.x1]);
                }
                Some(SiteValues { min: e.min, width: rg.x1 - rg.x0 + 1, height: rg.y1 - rg.y0 + 1, values: vals })
            }
            _ => None,
        };
        (fl, Some(IndicatorFrame::pack(config.t, lat, delta.iter().map(|&b| b != 0))))
    } else {
        (None, None)
    };

    Ok(RunRecord {
        version: crate::VERSION.to_string(),
        rule: config.rule.to_string(),
        seed: config.seed,
        t: config.t,
        dim,
        config: config.clone(),
        lattice: lat,
        edges,
        log_total,
        collapse_time,
        final_logw,
        damage_edges,
        history,
        damage_history,
        final_delta,
    })
}

/// Run `f` on a dedicated pool of `threads` workers (`None`: the global pool).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eca(code: u8) -> RuleSpec {
        RuleSpec::Elementary(code)
    }

    #[test]
    fn rule150_counts_are_powers_of_three() {
        let mut cfg = RunConfig::new(eca(150), InitState::Uniform(0.5), DefectInit::Point, 20, 7);
        cfg.keep_final = true;
        let rec = run(&cfg).unwrap();
        for (s, lt) in rec.log_total.iter().enumerate() {
            assert!((lt - s as f64 * 3f64.ln()).abs() < 1e-12);
        }
        let fl = rec.final_logw.as_ref().unwrap();
        // trinomial coefficient at x = 0, t = 20 is 377379369
        assert!((fl.get((0, 0)) - 377379369f64.ln()).abs() < 1e-9);
        assert_eq!(rec.edge_1d(20), Some((-20, 20)));
    }

    #[test]
    fn rule0_collapses_at_once() {
        let rec = run(&RunConfig::new(eca(0), InitState::Uniform(0.5), DefectInit::Interval(5), 10, 1)).unwrap();
        assert_eq!(rec.collapse_time, Some(1));
        assert_eq!(rec.edges.len(), 11);
        assert!(rec.edges[1..].iter().all(Option::is_none));
    }

    #[test]
    fn step_functions_agree_with_driver() {
        let rule = Rule::elementary(110);
        let state = Field::from_cells_1d(vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0, 1]);
        let mut ind = Field::new_1d(12);
        ind.set((5, 0), 1);
        ind.set((6, 0), 1);
        let d = DefectField::from_indicator(&ind);
        let d1 = defect_step(&rule, &state, &d).unwrap();
        let p1 = percolation_step(&rule, &state, &ind).unwrap();
        assert_eq!(d1.support(), p1);
        for x in 0..12i64 {
            let mut n = 0;
            for y in [5i64, 6] {
                n += crate::rules::change(&rule, &state, (y, 0), (x, 0)).unwrap() as i32;
            }
            let expect = if n == 0 { f64::NEG_INFINITY } else { (n as f64).ln() };
            assert_eq!(d1.get((x, 0)), expect);
        }
    }

    #[test]
    fn damage_of_empty_set_is_empty() {
        let rule = Rule::elementary(30);
        let state = Field::from_cells_1d(vec![0, 1, 1, 0, 1, 0, 0, 1]);
        let next = crate::rules::apply_global(&rule, &state).unwrap();
        let z = Field::new_1d(8);
        assert_eq!(damage_step(&rule, &state, &next, &z).unwrap(), z);
    }

    #[test]
    fn uniform_init_is_site_addressed() {
        let a = run(&RunConfig::new(eca(30), InitState::Uniform(0.5), DefectInit::Point, 5, 11)).unwrap();
        let b = run(&RunConfig::new(eca(30), InitState::Uniform(0.5), DefectInit::Point, 9, 11)).unwrap();
        // The same seed gives the same cells regardless of lattice size, hence the same early history.
        assert_eq!(a.edges[..6], b.edges[..6]);
        assert_eq!(a.log_total[..6], b.log_total[..6]);
    }

    #[test]
    fn budget_refusal() {
        let mut cfg = RunConfig::new(eca(30), InitState::Uniform(0.5), DefectInit::Point, 1000, 1);
        cfg.max_cells = 100;
        assert!(matches!(run(&cfg), Err(RunError::Budget { .. })));
    }

    #[test]
    fn init_parsing() {
        assert_eq!("uniform:0.25".parse::<InitState>().unwrap(), InitState::Uniform(0.25));
        assert!("uniform:2".parse::<InitState>().is_err());
        assert_eq!("interval:21".parse::<DefectInit>().unwrap().sites(1).len(), 21);
        assert_eq!("square:3".parse::<DefectInit>().unwrap().sites(2).len(), 9);
        assert_eq!("sites:0;3".parse::<DefectInit>().unwrap(), DefectInit::Sites(vec![(0, 0), (3, 0)]));
        let cfg = RunConfig::new(eca(30), InitState::Tile("10".into()), DefectInit::Interval(3), 4, 0);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn rle_frame() {
        let lat = LatticeInfo { width: 6, height: 1, origin: [0, 0] };
        let f = IndicatorFrame::pack(3, lat, [false, true, true, false, false, true].into_iter());
        assert_eq!(f.to_rle(), "t=3 1,2,2,1");
        assert_eq!(f.sites(), vec![(1, 0), (2, 0), (5, 0)]);
    }
}
