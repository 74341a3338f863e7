//! Local rules, lattice fields and the change indicator.
//!
//! A window is encoded as an integer whose bits are the neighborhood
//! states, the first offset being the most significant bit. For an
//! elementary rule this gives `k = 4*left + 2*center + right`, so bit `k`
//! of the Wolfram code is the output on window `k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest neighborhood accepted (window tables have `2^n` entries).
pub const MAX_NEIGHBORS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("cannot parse rule `{0}`: {1}")]
    Parse(String, String),
    #[error("window has {got} cells, neighborhood has {expected}")]
    WindowLength { expected: usize, got: usize },
    #[error("rule is {rule}-dimensional but field is {field}-dimensional")]
    DimensionMismatch { rule: usize, field: usize },
    #[error("neighborhood of {0} cells exceeds the supported maximum")]
    TooManyNeighbors(usize),
    #[error("invalid tile: {0}")]
    Tile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighborhood2d {
    Moore,
    #[serde(rename = "vn")]
    VonNeumann,
}

impl Neighborhood2d {
    pub fn offsets(self) -> Vec<[i32; 2]> {
        let mut v = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                let keep = match self {
                    Neighborhood2d::Moore => true,
                    Neighborhood2d::VonNeumann => dx == 0 || dy == 0,
                };
                if keep {
                    v.push([dx, dy]);
                }
            }
        }
        v
    }
}

/// User-facing description of a rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleSpec {
    Elementary(u8),
    General1d { offsets: Vec<i32>, table: Vec<u8> },
    Totalistic2d { neighborhood: Neighborhood2d, occupation: Vec<u8> },
}

impl fmt::Display for RuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleSpec::Elementary(c) => write!(f, "eca:{c}"),
            RuleSpec::General1d { offsets, table } => {
                let offs: Vec<String> = offsets.iter().map(|o| o.to_string()).collect();
                let bits: String = table.iter().map(|&b| if b != 0 { '1' } else { '0' }).collect();
                write!(f, "gen1d:{}:{}", offs.join(","), bits)
            }
            RuleSpec::Totalistic2d { neighborhood, occupation } => {
                let n = match neighborhood {
                    Neighborhood2d::Moore => "moore",
                    Neighborhood2d::VonNeumann => "vn",
                };
                let digits: String = occupation.iter().map(|d| d.to_string()).collect();
                write!(f, "tot2d:{n}:{digits}")
            }
        }
    }
}

impl FromStr for RuleSpec {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |m: &str| RuleError::Parse(s.to_string(), m.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["eca", n] => n
                .parse::<u8>()
                .map(RuleSpec::Elementary)
                .map_err(|_| err("elementary code must be in 0..=255")),
            ["gen1d", offs, bits] => {
                let offsets = offs
                    .split(',')
                    .map(|o| o.trim().parse::<i32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err("offsets must be comma-separated integers"))?;
                let table = bits
                    .chars()
                    .map(|c| match c {
                        '0' => Ok(0u8),
                        '1' => Ok(1u8),
                        _ => Err(err("table must be a string of 0/1")),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(RuleSpec::General1d { offsets, table })
            }
            ["tot2d", nb, digits] => {
                let neighborhood = match *nb {
                    "moore" => Neighborhood2d::Moore,
                    "vn" => Neighborhood2d::VonNeumann,
                    _ => return Err(err("neighborhood must be `moore` or `vn`")),
                };
                let mut occupation = digits
                    .chars()
                    .map(|c| c.to_digit(10).map(|d| d as u8))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| err("occupation must be decimal digits"))?;
                occupation.sort_unstable();
                occupation.dedup();
                Ok(RuleSpec::Totalistic2d { neighborhood, occupation })
            }
            _ => Err(err("expected eca:N, gen1d:<offsets>:<bits> or tot2d:<moore|vn>:<digits>")),
        }
    }
}

/// A compiled rule: neighborhood offsets plus output and sensitivity tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    spec: RuleSpec,
    dim: usize,
    offsets: Vec<[i32; 2]>,
    table: Vec<u8>,
    sens: Vec<u16>,
}

impl Rule {
    pub fn new(spec: RuleSpec) -> Result<Rule, RuleError> {
        let (dim, offsets, table) = match &spec {
            RuleSpec::Elementary(code) => {
                let table = (0..8).map(|k| (code >> k) & 1).collect();
                (1, vec![[-1, 0], [0, 0], [1, 0]], table)
            }
            RuleSpec::General1d { offsets, table } => {
                let n = offsets.len();
                if n == 0 {
                    return Err(RuleError::Parse(spec.to_string(), "empty neighborhood".into()));
                }
                if n > MAX_NEIGHBORS {
                    return Err(RuleError::TooManyNeighbors(n));
                }
                let mut sorted = offsets.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != n {
                    return Err(RuleError::Parse(spec.to_string(), "repeated offset".into()));
                }
                if table.len() != 1 << n {
                    return Err(RuleError::Parse(
                        spec.to_string(),
                        format!("table needs {} entries, got {}", 1 << n, table.len()),
                    ));
                }
                (1, offsets.iter().map(|&o| [o, 0]).collect(), table.clone())
            }
            RuleSpec::Totalistic2d { neighborhood, occupation } => {
                let offsets = neighborhood.offsets();
                let n = offsets.len();
                let table = (0..1u32 << n)
                    .map(|w| occupation.contains(&(w.count_ones() as u8)) as u8)
                    .collect();
                (2, offsets, table)
            }
        };
        let n = offsets.len();
        let sens = (0..table.len())
            .map(|w| {
                let mut m = 0u16;
                for k in 0..n {
                    if table[w ^ (1 << (n - 1 - k))] != table[w] {
                        m |= 1 << k;
                    }
                }
                m
            })
            .collect();
        Ok(Rule { spec, dim, offsets, table, sens })
    }

    pub fn parse(s: &str) -> Result<Rule, RuleError> {
        Rule::new(s.parse()?)
    }

    pub fn elementary(code: u8) -> Rule {
        Rule::new(RuleSpec::Elementary(code)).expect("elementary rules are always valid")
    }

    pub fn spec(&self) -> &RuleSpec {
        &self.spec
    }

    pub fn name(&self) -> String {
        self.spec.to_string()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Neighborhood offsets `[dx, dy]` (`dy = 0` in one dimension).
    pub fn offsets(&self) -> &[[i32; 2]] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Largest |offset| coordinate.
    pub fn radius(&self) -> usize {
        self.offsets
            .iter()
            .map(|o| o[0].unsigned_abs().max(o[1].unsigned_abs()) as usize)
            .max()
            .unwrap_or(0)
    }

    /// Output on an encoded window.
    #[inline]
    pub fn output(&self, code: usize) -> u8 {
        self.table[code]
    }

    /// Bit `k` set iff flipping neighbor `k` changes the output on `code`.
    #[inline]
    pub fn sensitivity(&self, code: usize) -> u16 {
        self.sens[code]
    }

    pub fn table(&self) -> &[u8] {
        &self.table
    }

    pub fn encode(&self, window: &[u8]) -> Result<usize, RuleError> {
        if window.len() != self.len() {
            return Err(RuleError::WindowLength { expected: self.len(), got: window.len() });
        }
        Ok(window.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize))
    }

    /// Wolfram code if this is an elementary rule.
    pub fn elementary_code(&self) -> Option<u8> {
        match self.spec {
            RuleSpec::Elementary(c) => Some(c),
            _ => None,
        }
    }

    /// True for radius-1 one-dimensional rules with the standard (l, c, r) neighborhood.
    pub fn is_radius_one_1d(&self) -> bool {
        self.dim == 1 && self.offsets == [[-1, 0], [0, 0], [1, 0]]
    }
}

/// A cyclic lattice of binary cells. One-dimensional fields have `height == 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Field {
    width: usize,
    height: usize,
    dim: usize,
    cells: Vec<u8>,
}

pub type Site = (i64, i64);

impl Field {
    pub fn new_1d(width: usize) -> Field {
        Field { width, height: 1, dim: 1, cells: vec![0; width] }
    }

    pub fn new_2d(width: usize, height: usize) -> Field {
        Field { width, height, dim: 2, cells: vec![0; width * height] }
    }

    pub fn from_cells_1d(cells: Vec<u8>) -> Field {
        Field { width: cells.len(), height: 1, dim: 1, cells }
    }

    pub fn from_cells_2d(width: usize, height: usize, cells: Vec<u8>) -> Field {
        assert_eq!(cells.len(), width * height);
        Field { width, height, dim: 2, cells }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [u8] {
        &mut self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, site: Site) -> usize {
        let x = site.0.rem_euclid(self.width as i64) as usize;
        let y = site.1.rem_euclid(self.height as i64) as usize;
        y * self.width + x
    }

    pub fn get(&self, site: Site) -> u8 {
        self.cells[self.index(site)]
    }

    pub fn set(&mut self, site: Site, v: u8) {
        let i = self.index(site);
        self.cells[i] = v & 1;
    }

    pub fn flip(&mut self, site: Site) {
        let i = self.index(site);
        self.cells[i] ^= 1;
    }

    /// Encoded window of `rule` centered at `site`.
    pub fn window_code(&self, rule: &Rule, site: Site) -> usize {
        rule.offsets().iter().fold(0usize, |acc, o| {
            (acc << 1) | self.get((site.0 + o[0] as i64, site.1 + o[1] as i64)) as usize
        })
    }

    pub fn xor(&self, other: &Field) -> Field {
        let cells = self.cells.iter().zip(&other.cells).map(|(a, b)| a ^ b).collect();
        Field { cells, ..*self }
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    /// The field translated by `(dx, dy)`: `out(x) = self(x - d)`.
    pub fn shifted(&self, dx: i64, dy: i64) -> Field {
        let mut out = self.clone();
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                out.set((x, y), self.get((x - dx, y - dy)));
            }
        }
        out
    }

    pub fn to_bit_string(&self) -> String {
        let rows: Vec<String> = (0..self.height)
            .map(|r| {
                let y = (self.height - r) % self.height;
                (0..self.width)
                    .map(|x| if self.cells[y * self.width + x] != 0 { '1' } else { '0' })
                    .collect()
            })
            .collect();
        rows.join("/")
    }
}

/// Parse a tile. One dimension: `"0110"`. Two dimensions: rows separated by
/// `/`, listed top to bottom; row `r` is lattice row `y = -r` (mod height).
pub fn parse_tile(s: &str) -> Result<Field, RuleError> {
    let rows: Vec<&str> = s.split(|c| c == '/' || c == '\n').map(str::trim).filter(|r| !r.is_empty()).collect();
    if rows.is_empty() {
        return Err(RuleError::Tile("empty tile".into()));
    }
    let parse_row = |r: &str| -> Result<Vec<u8>, RuleError> {
        r.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                _ => Err(RuleError::Tile(format!("unexpected character `{c}`"))),
            })
            .collect()
    };
    if rows.len() == 1 && !s.contains('/') {
        let cells = parse_row(rows[0])?;
        if cells.is_empty() {
            return Err(RuleError::Tile("empty tile".into()));
        }
        return Ok(Field::from_cells_1d(cells));
    }
    let parsed = rows.iter().map(|r| parse_row(r)).collect::<Result<Vec<_>, _>>()?;
    let w = parsed[0].len();
    if w == 0 || parsed.iter().any(|r| r.len() != w) {
        return Err(RuleError::Tile("rows must have equal nonzero length".into()));
    }
    let h = parsed.len();
    let mut f = Field::new_2d(w, h);
    for (r, row) in parsed.iter().enumerate() {
        for (x, &b) in row.iter().enumerate() {
            f.set((x as i64, -(r as i64)), b);
        }
    }
    Ok(f)
}

pub fn apply_local(rule: &Rule, window: &[u8]) -> Result<u8, RuleError> {
    Ok(rule.output(rule.encode(window)?))
}

fn check_dim(rule: &Rule, field: &Field) -> Result<(), RuleError> {
    if rule.dim() != field.dim() {
        return Err(RuleError::DimensionMismatch { rule: rule.dim(), field: field.dim() });
    }
    Ok(())
}

/// One synchronous update of the whole cyclic field.
pub fn apply_global(rule: &Rule, field: &Field) -> Result<Field, RuleError> {
    check_dim(rule, field)?;
    let mut out = field.clone();
    for y in 0..field.height() as i64 {
        for x in 0..field.width() as i64 {
            let code = field.window_code(rule, (x, y));
            let i = field.index((x, y));
            out.cells[i] = rule.output(code);
        }
    }
    Ok(out)
}

/// 1 iff flipping `y` changes the next state at `x`. Zero when `y` is not a neighbor of `x`.
pub fn change(rule: &Rule, field: &Field, y: Site, x: Site) -> Result<u8, RuleError> {
    check_dim(rule, field)?;
    let code = field.window_code(rule, x);
    let mut hit = 0u8;
    for (k, o) in rule.offsets().iter().enumerate() {
        let nb = (x.0 + o[0] as i64, x.1 + o[1] as i64);
        if field.index(nb) == field.index(y) && (rule.sensitivity(code) >> k) & 1 == 1 {
            hit = 1;
        }
    }
    Ok(hit)
}

/// Encoded windows on which the update is insensitive to every neighbor.
pub fn stable_updates(rule: &Rule) -> Vec<usize> {
    (0..rule.table().len()).filter(|&w| rule.sensitivity(w) == 0).collect()
}

/// Left-right mirror image of an elementary rule.
pub fn reflect_eca(code: u8) -> u8 {
    (0..8).fold(0u8, |acc, k| {
        let (l, c, r) = ((k >> 2) & 1, (k >> 1) & 1, k & 1);
        let j = (r << 2) | (c << 1) | l;
        acc | (((code >> j) & 1) << k)
    })
}

fn conjugate_eca(code: u8) -> u8 {
    (0..8).fold(0u8, |acc, k| acc | ((1 ^ ((code >> (7 - k)) & 1)) << k))
}

/// Smallest code among a rule, its reflection, its complement conjugate and both.
pub fn minimal_representative(code: u8) -> u8 {
    let r = reflect_eca(code);
    let c = conjugate_eca(code);
    let rc = conjugate_eca(r);
    code.min(r).min(c).min(rc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn elementary_truth_tables() {
        let cases: [(u8, [u8; 8]); 5] = [
            (22, [0, 1, 1, 0, 1, 0, 0, 0]),
            (27, [1, 1, 0, 1, 1, 0, 0, 0]),
            (38, [0, 1, 1, 0, 0, 1, 0, 0]),
            (110, [0, 1, 1, 1, 0, 1, 1, 0]),
            (152, [0, 0, 0, 1, 1, 0, 0, 1]),
        ];
        for (code, outs) in cases {
            let rule = Rule::elementary(code);
            for w in 0..8u8 {
                let win = [(w >> 2) & 1, (w >> 1) & 1, w & 1];
                assert_eq!(apply_local(&rule, &win).unwrap(), outs[w as usize], "rule {code} window {w:03b}");
            }
        }
    }

    #[test]
    fn class_count_and_representatives() {
        let reps: BTreeSet<u8> = (0..=255u8).map(minimal_representative).collect();
        assert_eq!(reps.len(), 88);
        assert_eq!(minimal_representative(16), 2);
        assert_eq!(minimal_representative(255), 0);
        assert_eq!(minimal_representative(110), 110);
        assert_eq!(minimal_representative(124), 110);
    }

    #[test]
    fn window_length_checked() {
        let rule = Rule::elementary(30);
        assert!(matches!(apply_local(&rule, &[0, 1]), Err(RuleError::WindowLength { .. })));
    }

    #[test]
    fn change_for_additive_rule() {
        let rule = Rule::elementary(150);
        let f = Field::from_cells_1d(vec![0, 1, 1, 0, 1, 0]);
        for x in 0..6 {
            for y in 0..6 {
                let d = (y - x as i64).rem_euclid(6);
                let expect = u8::from(d <= 1 || d == 5);
                assert_eq!(change(&rule, &f, (y, 0), (x, 0)).unwrap(), expect);
            }
        }
    }

    #[test]
    fn stable_updates_of_rule_zero_and_identity() {
        assert_eq!(stable_updates(&Rule::elementary(0)).len(), 8);
        assert!(stable_updates(&Rule::elementary(204)).is_empty());
        let s = stable_updates(&Rule::elementary(4));
        assert!(s.contains(&0b111) && s.contains(&0b101));
        assert!(!s.contains(&0b010));
    }

    #[test]
    fn parse_round_trip() {
        for s in ["eca:110", "gen1d:-2,-1,0,1,2:01010101010101010101010101010101", "tot2d:moore:3", "tot2d:vn:12"] {
            let spec: RuleSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("eca:300".parse::<RuleSpec>().is_err());
        assert!("gen1d:0:011".parse::<RuleSpec>().is_ok());
        assert!(Rule::parse("gen1d:0:011").is_err());
    }

    #[test]
    fn tile_orientation() {
        let f = parse_tile("01/00").unwrap();
        assert_eq!(f.get((1, 0)), 1);
        assert_eq!(f.to_bit_string(), "01/00");
        let g = parse_tile("0110").unwrap();
        assert_eq!(g.dim(), 1);
        assert_eq!(g.to_bit_string(), "0110");
    }

    #[test]
    fn totalistic_table() {
        let r = Rule::parse("tot2d:moore:1").unwrap();
        assert_eq!(r.len(), 9);
        assert_eq!(r.output(0b000_010_000), 1);
        assert_eq!(r.output(0b100_010_000), 0);
        let f = parse_tile("0000/0000/0011/0011").unwrap();
        let g = apply_global(&r, &f).unwrap();
        assert_ne!(g, f);
        assert_eq!(apply_global(&r, &g).unwrap(), f);
    }
}
