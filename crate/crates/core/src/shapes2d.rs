//! Exact defect shapes of two-dimensional periodic states.
//!
//! For a primitive normal `u` the defect set started from the discrete half-plane
//! `{<x,u> <= 0}` stays, on every residue class of the tile, a discrete half-plane
//! `{<x,u> <= a_c}`. The offsets `a_c` follow a max-plus recursion; once their
//! normalized pattern recurs the front advances by an exact rational `h(u)` per step
//! and `W` is the intersection of the half-planes `<x,u> <= h(u)`.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::{apply_global, Field, Rule, RuleError};

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("two-dimensional rule and tile required")]
    Dimension,
    #[error("tile is not on a periodic orbit; it enters a cycle after {0} steps")]
    NotOnCycle(usize),
    #[error("no recurrence within {0} steps")]
    NoRecurrence(usize),
    #[error("direction must be a nonzero primitive vector, got ({0}, {1})")]
    BadDirection(i64, i64),
    #[error("velocities are inconsistent: the half-planes have empty intersection")]
    Inconsistent,
    #[error("no velocities given")]
    NoVelocities,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orbit2d {
    pub tile: Field,
    pub pi: usize,
    /// States at times `0..pi`.
    pub states: Vec<Field>,
}

pub fn detect_orbit(rule: &Rule, tile: &Field) -> Result<Orbit2d, ShapeError> {
    if rule.dim() != 2 || tile.dim() != 2 {
        return Err(ShapeError::Dimension);
    }
    let cap = 1usize << 16;
    let mut seen: HashMap<Field, usize> = HashMap::new();
    let mut states = vec![tile.clone()];
    seen.insert(tile.clone(), 0);
    let mut cur = tile.clone();
    for n in 1..=cap {
        cur = apply_global(rule, &cur)?;
        if cur == *tile {
            return Ok(Orbit2d { tile: tile.clone(), pi: n, states });
        }
        if let Some(&m) = seen.get(&cur) {
            return Err(ShapeError::NotOnCycle(m));
        }
        seen.insert(cur.clone(), n);
        states.push(cur.clone());
    }
    Err(ShapeError::NoRecurrence(cap))
}

/// Primitive normals of all lines through two points of the `pi`-fold sum of the neighborhood.
pub fn candidate_directions(rule: &Rule, pi: usize) -> Vec<[i64; 2]> {
    let mut pts: Vec<[i64; 2]> = vec![[0, 0]];
    for _ in 0..pi {
        let mut next: Vec<[i64; 2]> = pts
            .iter()
            .flat_map(|p| rule.offsets().iter().map(move |o| [p[0] + o[0] as i64, p[1] + o[1] as i64]))
            .collect();
        next.sort_unstable();
        next.dedup();
        pts = next;
    }
    let mut dirs = Vec::new();
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let g = dx.gcd(&dy);
            let n = [-dy / g, dx / g];
            dirs.push(n);
            dirs.push([-n[0], -n[1]]);
        }
    }
    dirs.sort_unstable_by(|a, b| angle(*a).partial_cmp(&angle(*b)).unwrap());
    dirs.dedup();
    dirs
}

fn angle(u: [i64; 2]) -> f64 {
    let a = (u[1] as f64).atan2(u[0] as f64);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

struct Front<'a> {
    rule: &'a Rule,
    orbit: &'a Orbit2d,
    u: [i64; 2],
    modulus: i64,
    /// Per step, per class: sensitive neighbor indices.
    sens: Vec<Vec<Vec<usize>>>,
}

impl<'a> Front<'a> {
    fn new(rule: &'a Rule, orbit: &'a Orbit2d, u: [i64; 2]) -> Result<Front<'a>, ShapeError> {
        if u == [0, 0] || u[0].gcd(&u[1]) != 1 {
            return Err(ShapeError::BadDirection(u[0], u[1]));
        }
        let (w, h) = (orbit.tile.width() as i64, orbit.tile.height() as i64);
        let modulus = (w * u[0]).gcd(&(h * u[1]));
        let sens = orbit
            .states
            .iter()
            .map(|st| {
                (0..h)
                    .flat_map(|y| (0..w).map(move |x| (x, y)))
                    .map(|c| {
                        let s = rule.sensitivity(st.window_code(rule, c));
                        (0..rule.len()).filter(|&k| (s >> k) & 1 == 1).collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Front { rule, orbit, u, modulus, sens })
    }

    fn width(&self) -> i64 {
        self.orbit.tile.width() as i64
    }

    fn class(&self, x: i64, y: i64) -> usize {
        let (w, h) = (self.width(), self.orbit.tile.height() as i64);
        (y.rem_euclid(h) * w + x.rem_euclid(w)) as usize
    }

    fn dot(&self, x: i64, y: i64) -> i64 {
        x * self.u[0] + y * self.u[1]
    }

    /// Largest value `<= beta` attained by `<x,u>` on class `c`.
    fn canon(&self, c: usize, beta: i64) -> i64 {
        let (cx, cy) = (c as i64 % self.width(), c as i64 / self.width());
        let base = self.dot(cx, cy);
        beta - (beta - base).rem_euclid(self.modulus)
    }

    /// Per phase, the classes that can feed a site in state `v` at any later phase.
    fn feeders(&self, sublattice: Option<u8>) -> Vec<Vec<bool>> {
        let pi = self.sens.len();
        let n = self.sens[0].len();
        let Some(v) = sublattice else { return vec![vec![true; n]; pi] };
        let w = self.width();
        let mut inb: Vec<Vec<bool>> =
            (0..pi).map(|s| (0..n).map(|c| self.state(s, c) == v).collect()).collect();
        let mut stack: Vec<(usize, usize)> = (0..pi).flat_map(|s| (0..n).map(move |c| (s, c))).filter(|&(s, c)| inb[s][c]).collect();
        while let Some((s, c)) = stack.pop() {
            // sources of (s, c) live at phase s - 1
            let p = (s + pi - 1) % pi;
            let (cx, cy) = (c as i64 % w, c as i64 / w);
            for &k in &self.sens[p][c] {
                let o = self.rule.offsets()[k];
                let src = self.class(cx + o[0] as i64, cy + o[1] as i64);
                if !inb[p][src] {
                    inb[p][src] = true;
                    stack.push((p, src));
                }
            }
        }
        inb
    }

    fn state(&self, s: usize, c: usize) -> u8 {
        let w = self.width();
        self.orbit.states[s].get((c as i64 % w, c as i64 / w))
    }

    fn initial(&self, sublattice: Option<u8>) -> Vec<Option<i64>> {
        (0..self.sens[0].len())
            .map(|c| sublattice.map_or(true, |v| self.state(0, c) == v).then(|| self.canon(c, 0)))
            .collect()
    }

    fn step(&self, s: usize, a: &[Option<i64>]) -> Vec<Option<i64>> {
        let w = self.width();
        (0..a.len())
            .map(|c| {
                let (cx, cy) = (c as i64 % w, c as i64 / w);
                let best = self.sens[s][c]
                    .iter()
                    .filter_map(|&k| {
                        let o = self.rule.offsets()[k];
                        let (ox, oy) = (o[0] as i64, o[1] as i64);
                        a[self.class(cx + ox, cy + oy)].map(|v| v - self.dot(ox, oy))
                    })
                    .max();
                best.map(|b| self.canon(c, b))
            })
            .collect()
    }
}

/// Front offsets `a_c` per tile class after `steps` steps (row-major, `y` up from the tile origin).
pub fn front_offsets(
    rule: &Rule,
    orbit: &Orbit2d,
    u: [i64; 2],
    sublattice: Option<u8>,
    steps: usize,
) -> Result<Vec<Option<i64>>, ShapeError> {
    let f = Front::new(rule, orbit, u)?;
    let mut a = f.initial(sublattice);
    for s in 0..steps {
        a = f.step(s % orbit.pi, &a);
    }
    Ok(a)
}

/// Exact advance per step `h(u)` of the front `<x,u> <= 0`, or `None` if the defects die out.
/// With `sublattice = Some(v)` the defects start on the sites in state `v`, and the front is
/// followed on the space-time sites that can feed a site in state `v`; those evolve on their own.
pub fn half_space_velocity(
    rule: &Rule,
    orbit: &Orbit2d,
    u: [i64; 2],
    sublattice: Option<u8>,
) -> Result<Option<Ratio<i64>>, ShapeError> {
    let f = Front::new(rule, orbit, u)?;
    let cap = 1usize << 16;
    let mut a = f.initial(sublattice);
    let keep = f.feeders(sublattice).swap_remove(0);
    let mut seen: HashMap<Vec<Option<i64>>, (usize, i64)> = HashMap::new();
    for block in 0..cap {
        let tracked = a.iter().zip(&keep).filter(|(_, k)| **k).map(|(v, _)| *v);
        let Some(m) = tracked.clone().flatten().min() else { return Ok(None) };
        let key: Vec<Option<i64>> = tracked.map(|v| v.map(|x| x - m)).collect();
        if let Some(&(b0, m0)) = seen.get(&key) {
            return Ok(Some(Ratio::new(m - m0, ((block - b0) * orbit.pi) as i64)));
        }
        seen.insert(key, (block, m));
        for s in 0..orbit.pi {
            a = f.step(s, &a);
        }
    }
    Err(ShapeError::NoRecurrence(cap * orbit.pi))
}

pub type Point = (BigRational, BigRational);

fn big(r: Ratio<i64>) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

fn cross(o: &Point, a: &Point, b: &Point) -> BigRational {
    (&a.0 - &o.0) * (&b.1 - &o.1) - (&a.1 - &o.1) * (&b.0 - &o.0)
}

/// Convex hull, counterclockwise from the lexicographically smallest point, collinear points dropped.
pub fn rational_hull(points: &[Point]) -> Vec<Point> {
    let mut p: Vec<Point> = points.to_vec();
    p.sort();
    p.dedup();
    if p.len() <= 2 {
        return p;
    }
    let mut lower: Vec<Point> = Vec::new();
    for q in &p {
        while lower.len() >= 2 && !cross(&lower[lower.len() - 2], &lower[lower.len() - 1], q).is_positive() {
            lower.pop();
        }
        lower.push(q.clone());
    }
    let mut upper: Vec<Point> = Vec::new();
    for q in p.iter().rev() {
        while upper.len() >= 2 && !cross(&upper[upper.len() - 2], &upper[upper.len() - 1], q).is_positive() {
            upper.pop();
        }
        upper.push(q.clone());
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Clip a convex (possibly degenerate) polygon by `<x,u> <= h`.
fn clip(poly: &[Point], u: [i64; 2], h: &BigRational) -> Vec<Point> {
    let (ux, uy) = (BigRational::from(BigInt::from(u[0])), BigRational::from(BigInt::from(u[1])));
    let f = |p: &Point| &p.0 * &ux + &p.1 * &uy - h;
    let n = poly.len();
    let mut out = Vec::new();
    for i in 0..n {
        let (a, b) = (&poly[i], &poly[(i + 1) % n]);
        let (fa, fb) = (f(a), f(b));
        if !fa.is_positive() {
            out.push(a.clone());
        }
        if (fa.is_negative() && fb.is_positive()) || (fa.is_positive() && fb.is_negative()) {
            let t = &fa / (&fa - &fb);
            out.push((&a.0 + &t * (&b.0 - &a.0), &a.1 + &t * (&b.1 - &a.1)));
        }
    }
    rational_hull(&out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionVelocity {
    pub u: [i64; 2],
    /// Exact advance of `<x,u>` per step, as `p/q`; absent if the defects die out.
    pub h: Option<String>,
    /// Speed along the unit normal.
    pub w: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Empty,
    Point,
    Segment,
    Polygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape2d {
    pub directions: Vec<DirectionVelocity>,
    /// Hull of the points `u / h(u)` with `h(u) > 0`.
    pub frank_vertices: Vec<[String; 2]>,
    /// Some direction has `h(u) = 0`, so the diagram is unbounded there.
    pub frank_unbounded: bool,
    pub kind: ShapeKind,
    #[serde(rename = "W_vertices")]
    pub w_vertices: Vec<[String; 2]>,
    #[serde(skip)]
    pub w_polygon: Vec<Point>,
    #[serde(skip)]
    pub frank_polygon: Vec<Point>,
}

fn show(p: &Point) -> [String; 2] {
    [p.0.to_string(), p.1.to_string()]
}

/// `W = {x : <x,u> <= h(u) for all u}` and its polar Frank diagram.
pub fn frank_polar_shape(velocities: &[([i64; 2], Option<Ratio<i64>>)]) -> Result<Shape2d, ShapeError> {
    if velocities.is_empty() {
        return Err(ShapeError::NoVelocities);
    }
    let directions: Vec<DirectionVelocity> = velocities
        .iter()
        .map(|(u, h)| DirectionVelocity {
            u: *u,
            h: h.map(|r| r.to_string()),
            w: h.map(|r| *r.numer() as f64 / *r.denom() as f64 / ((u[0] * u[0] + u[1] * u[1]) as f64).sqrt()),
        })
        .collect();
    if velocities.iter().any(|(_, h)| h.is_none()) {
        return Ok(Shape2d {
            directions,
            frank_vertices: Vec::new(),
            frank_unbounded: false,
            kind: ShapeKind::Empty,
            w_vertices: Vec::new(),
            w_polygon: Vec::new(),
            frank_polygon: Vec::new(),
        });
    }
    let hs: Vec<([i64; 2], BigRational)> = velocities.iter().map(|(u, h)| (*u, big(h.unwrap()))).collect();
    let bound = hs
        .iter()
        .map(|(u, h)| h.abs() + BigRational::from(BigInt::from(u[0].abs() + u[1].abs())))
        .fold(BigRational::from(BigInt::from(1)), |a, b| if b > a { b } else { a });
    let nb = -bound.clone();
    let mut poly: Vec<Point> =
        vec![(nb.clone(), nb.clone()), (bound.clone(), nb.clone()), (bound.clone(), bound.clone()), (nb, bound)];
    for (u, h) in &hs {
        poly = clip(&poly, *u, h);
        if poly.is_empty() {
            return Err(ShapeError::Inconsistent);
        }
    }
    let kind = match poly.len() {
        1 => ShapeKind::Point,
        2 => ShapeKind::Segment,
        _ => ShapeKind::Polygon,
    };
    let frank_pts: Vec<Point> = hs
        .iter()
        .filter(|(_, h)| h.is_positive())
        .map(|(u, h)| (BigRational::from(BigInt::from(u[0])) / h, BigRational::from(BigInt::from(u[1])) / h))
        .collect();
    let frank = rational_hull(&frank_pts);
    Ok(Shape2d {
        directions,
        frank_vertices: frank.iter().map(show).collect(),
        frank_unbounded: hs.iter().any(|(_, h)| h.is_zero()),
        kind,
        w_vertices: poly.iter().map(show).collect(),
        w_polygon: poly,
        frank_polygon: frank,
    })
}

/// Velocities in every candidate direction (in parallel) and the resulting shape.
pub fn shape_of_orbit(rule: &Rule, orbit: &Orbit2d, sublattice: Option<u8>) -> Result<Shape2d, ShapeError> {
    let dirs = candidate_directions(rule, orbit.pi);
    let v: Vec<([i64; 2], Option<Ratio<i64>>)> = dirs
        .par_iter()
        .map(|&u| half_space_velocity(rule, orbit, u, sublattice).map(|h| (u, h)))
        .collect::<Result<_, _>>()?;
    frank_polar_shape(&v)
}
