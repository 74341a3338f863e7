//! Empirical Lyapunov and density profiles, the additive profile, defect
//! shapes and maximal exponents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::RunRecord;
use crate::jsonf64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("profile needs t >= 1")]
    ZeroTime,
    #[error("bin width must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("run record lacks {0}")]
    Missing(&'static str),
}

/// `log(e^a + e^b)`, evaluated as `max + log1p(exp(min - max))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub alpha: Vec<f64>,
    #[serde(with = "jsonf64")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ProfileMeta {
    pub kind: String,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

impl ProfileMeta {
    pub fn new(kind: &str) -> ProfileMeta {
        ProfileMeta { kind: kind.to_string(), version: crate::VERSION.to_string(), ..Default::default() }
    }
}

/// Sampled function of the velocity `alpha`; `-inf` outside the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub dim: usize,
    pub samples: Vec<ProfileSample>,
    pub meta: ProfileMeta,
}

impl Profile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(if self.dim == 1 { "alpha,value\n" } else { "alpha_x,alpha_y,value\n" });
        for p in &self.samples {
            let a: Vec<String> = p.alpha.iter().map(|v| format!("{v}")).collect();
            s.push_str(&format!("{},{}\n", a.join(","), jsonf64::csv(p.value)));
        }
        s
    }

    /// `(alpha, value)` pairs of a one-dimensional profile.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|p| (p.alpha[0], p.value)).collect()
    }

    /// Value at the sample nearest to `alpha` (one dimension).
    pub fn nearest(&self, alpha: f64) -> Option<f64> {
        self.samples
            .iter()
            .min_by(|a, b| (a.alpha[0] - alpha).abs().partial_cmp(&(b.alpha[0] - alpha).abs()).unwrap())
            .map(|p| p.value)
    }
}

fn check_eps(epsilon: f64) -> Result<(), ProfileError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(ProfileError::BadEpsilon(epsilon));
    }
    Ok(())
}

/// Grid `lo, lo + eps, ...` covering `[lo, hi]`.
fn grid(lo: f64, hi: f64, eps: f64) -> Vec<f64> {
    let n = ((hi - lo) / eps + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * eps).collect()
}

fn hull_range(record: &RunRecord, axis: usize) -> (f64, f64) {
    let rule = crate::rules::Rule::new(record.config.rule.clone()).expect("record rule is valid");
    let lo = rule.offsets().iter().map(|o| o[axis]).min().unwrap_or(0) as f64;
    let hi = rule.offsets().iter().map(|o| o[axis]).max().unwrap_or(0) as f64;
    (lo, hi)
}

/// `L(alpha) = (1/t) log sum_{|x/t - alpha| < eps} Delta(x, t)` on a grid of spacing `eps`
/// over the convex hull of the neighborhood (a square grid in two dimensions, Euclidean windows).
pub fn empirical_lyapunov(record: &RunRecord, epsilon: f64) -> Result<Profile, ProfileError> {
    check_eps(epsilon)?;
    if record.t == 0 {
        return Err(ProfileError::ZeroTime);
    }
    let t = record.t as f64;
    let vals = record.final_logw.as_ref();
    if vals.is_none() && record.collapse_time.is_none() {
        return Err(ProfileError::Missing("final log-weights"));
    }
    let mut meta = ProfileMeta::new("empirical");
    meta.rule = Some(record.rule.clone());
    meta.t = Some(record.t);
    meta.epsilon = Some(epsilon);
    meta.seed = Some(record.seed);
    let (xlo, xhi) = hull_range(record, 0);
    let mut samples = Vec::new();
    if record.dim == 1 {
        for a in grid(xlo, xhi, epsilon) {
            let mut acc = f64::NEG_INFINITY;
            if let Some(v) = vals {
                let x0 = (t * (a - epsilon)).floor() as i64;
                let x1 = (t * (a + epsilon)).ceil() as i64;
                let mut terms = Vec::new();
                for x in x0..=x1 {
                    if (x as f64 / t - a).abs() < epsilon {
                        let w = v.get((x, 0));
                        if w > f64::NEG_INFINITY {
                            terms.push(w);
                        }
                    }
                }
                acc = crate::dynamics::log_sum(&terms);
            }
            samples.push(ProfileSample { alpha: vec![a], value: acc / t });
        }
    } else {
        let (ylo, yhi) = hull_range(record, 1);
        for b in grid(ylo, yhi, epsilon) {
            for a in grid(xlo, xhi, epsilon) {
                let mut acc = f64::NEG_INFINITY;
                if let Some(v) = vals {
                    let mut terms = Vec::new();
                    let (x0, x1) = ((t * (a - epsilon)).floor() as i64, (t * (a + epsilon)).ceil() as i64);
                    let (y0, y1) = ((t * (b - epsilon)).floor() as i64, (t * (b + epsilon)).ceil() as i64);
                    for y in y0..=y1 {
                        for x in x0..=x1 {
                            let dx = x as f64 / t - a;
                            let dy = y as f64 / t - b;
                            if dx * dx + dy * dy < epsilon * epsilon {
                                let w = v.get((x, y));
                                if w > f64::NEG_INFINITY {
                                    terms.push(w);
                                }
                            }
                        }
                    }
                    acc = crate::dynamics::log_sum(&terms);
                }
                samples.push(ProfileSample { alpha: vec![a, b], value: acc / t });
            }
        }
    }
    Ok(Profile { dim: record.dim, samples, meta })
}

/// Fraction of lattice points `(x, s)` with a defect among those whose velocity
/// `x/s` falls in each bin of width `eps`, over the recorded history (times `>= 1`).
pub fn density_profile(record: &RunRecord, epsilon: f64) -> Result<Profile, ProfileError> {
    check_eps(epsilon)?;
    let frames: Vec<_> = record.history.iter().filter(|f| f.t >= 1).collect();
    if frames.is_empty() {
        return Err(ProfileError::Missing("indicator history"));
    }
    let (xlo, xhi) = hull_range(record, 0);
    let gx = grid(xlo, xhi, epsilon);
    let bin = |v: f64, lo: f64, n: usize| -> Option<usize> {
        let b = ((v - lo) / epsilon).round();
        (b >= 0.0 && (b as usize) < n).then_some(b as usize)
    };
    let mut meta = ProfileMeta::new("density");
    meta.rule = Some(record.rule.clone());
    meta.t = Some(record.t);
    meta.epsilon = Some(epsilon);
    meta.seed = Some(record.seed);
    let mut samples = Vec::new();
    if record.dim == 1 {
        let mut hits = vec![0u64; gx.len()];
        let mut tot = vec![0u64; gx.len()];
        for f in &frames {
            let s = f.t as f64;
            for x in (xlo * s).floor() as i64..=(xhi * s).ceil() as i64 {
                if let Some(b) = bin(x as f64 / s, xlo, gx.len()) {
                    tot[b] += 1;
                    if f.get((x, 0)) {
                        hits[b] += 1;
                    }
                }
            }
        }
        for (i, &a) in gx.iter().enumerate() {
            if tot[i] > 0 {
                samples.push(ProfileSample { alpha: vec![a], value: hits[i] as f64 / tot[i] as f64 });
            }
        }
    } else {
        let (ylo, yhi) = hull_range(record, 1);
        let gy = grid(ylo, yhi, epsilon);
        let mut hits = vec![0u64; gx.len() * gy.len()];
        let mut tot = vec![0u64; gx.len() * gy.len()];
        for f in &frames {
            let s = f.t as f64;
            for y in (ylo * s).floor() as i64..=(yhi * s).ceil() as i64 {
                let Some(by) = bin(y as f64 / s, ylo, gy.len()) else { continue };
                for x in (xlo * s).floor() as i64..=(xhi * s).ceil() as i64 {
                    if let Some(bx) = bin(x as f64 / s, xlo, gx.len()) {
                        let b = by * gx.len() + bx;
                        tot[b] += 1;
                        if f.get((x, y)) {
                            hits[b] += 1;
                        }
                    }
                }
            }
        }
        for (j, &b) in gy.iter().enumerate() {
            for (i, &a) in gx.iter().enumerate() {
                let k = j * gx.len() + i;
                if tot[k] > 0 {
                    samples.push(ProfileSample { alpha: vec![a, b], value: hits[k] as f64 / tot[k] as f64 });
                }
            }
        }
    }
    Ok(Profile { dim: record.dim, samples, meta })
}

/// Mean density over the bins with `lo <= alpha <= hi` (one dimension).
pub fn mean_density(profile: &Profile, lo: f64, hi: f64) -> Option<f64> {
    let v: Vec<f64> = profile.points().into_iter().filter(|(a, _)| *a >= lo && *a <= hi).map(|(_, v)| v).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn log_moment(offsets: &[i64], y: f64) -> (f64, f64) {
    let m = offsets.iter().map(|&x| y * x as f64).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut zx = 0.0;
    for &x in offsets {
        let e = (y * x as f64 - m).exp();
        z += e;
        zx += e * x as f64;
    }
    (m + z.ln(), zx / z)
}

/// Profile of the additive rule on `offsets`: `inf_y (-y alpha + log sum_{x in N} e^{y x})`,
/// by bisection on the derivative in `y` (tolerance 1e-12, bracket `|y| <= 60`).
pub fn additive_profile(offsets: &[i64], alpha: f64) -> f64 {
    let lo = *offsets.iter().min().expect("nonempty neighborhood") as f64;
    let hi = *offsets.iter().max().expect("nonempty neighborhood") as f64;
    const SLACK: f64 = 1e-12;
    if alpha < lo - SLACK || alpha > hi + SLACK {
        return f64::NEG_INFINITY;
    }
    let alpha = alpha.clamp(lo, hi);
    let slope = |y: f64| log_moment(offsets, y).1 - alpha;
    let (mut a, mut b) = (-60.0f64, 60.0f64);
    let y = if slope(a) >= 0.0 {
        a
    } else if slope(b) <= 0.0 {
        b
    } else {
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            if slope(m) < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    (log_moment(offsets, y).0 - y * alpha).max(0.0)
}

/// Scaled defect set at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Empty,
    Interval { lo: f64, hi: f64 },
    Polygon { vertices: Vec<[f64; 2]>, points: usize },
}

/// Convex hull (counter-clockwise, no collinear points) of integer points.
pub fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut p = points.to_vec();
    p.sort_unstable();
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// `{x/t : delta_t(x) = 1}`: an interval in one dimension, the convex hull in two.
pub fn defect_shape(record: &RunRecord, t: usize) -> Result<Shape, ProfileError> {
    if t == 0 {
        return Err(ProfileError::ZeroTime);
    }
    let s = t as f64;
    if record.dim == 1 {
        return Ok(match record.edge_1d(t) {
            None => Shape::Empty,
            Some((lo, hi)) => Shape::Interval { lo: lo as f64 / s, hi: hi as f64 / s },
        });
    }
    let frame = record
        .history
        .iter()
        .find(|f| f.t == t)
        .or(record.final_delta.as_ref().filter(|f| f.t == t))
        .ok_or(ProfileError::Missing("indicator at the requested time"))?;
    let pts = frame.sites();
    if pts.is_empty() {
        return Ok(Shape::Empty);
    }
    let hull = convex_hull(&pts);
    Ok(Shape::Polygon { vertices: hull.iter().map(|&(x, y)| [x as f64 / s, y as f64 / s]).collect(), points: pts.len() })
}

/// Maximal value of a profile and the velocities attaining it (within 1e-9).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mle {
    #[serde(with = "jsonf64")]
    pub value: f64,
    pub directions: Vec<Vec<f64>>,
}

pub fn mle_estimate(profile: &Profile) -> Mle {
    let value = profile.samples.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
    let directions = if value == f64::NEG_INFINITY {
        Vec::new()
    } else {
        profile.samples.iter().filter(|p| p.value >= value - 1e-9).map(|p| p.alpha.clone()).collect()
    };
    Mle { value, directions }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_basics() {
        assert_eq!(log_add(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((log_add(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_add(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_add(3.0, 1.0), log_add(1.0, 3.0));
    }

    #[test]
    fn additive_rule150_closed_form() {
        let n = [-1, 0, 1];
        // Independent oracle: closed form with alpha0 = (a + sqrt(4 - 3a^2)) / (2 (1 - a)).
        for i in 1..100 {
            let a = -1.0 + i as f64 * 0.02;
            let a0 = (a + (4.0 - 3.0 * a * a).sqrt()) / (2.0 * (1.0 - a));
            let closed = (1.0 + a0 + 1.0 / a0).ln() - a * a0.ln();
            assert!((additive_profile(&n, a) - closed).abs() < 1e-10, "alpha {a}");
        }
        assert!((additive_profile(&n, 0.0) - 3f64.ln()).abs() < 1e-14);
        assert!(additive_profile(&n, 1.0).abs() < 1e-10);
        assert_eq!(additive_profile(&n, 1.5), f64::NEG_INFINITY);
    }

    #[test]
    fn additive_rule90_is_binary_entropy() {
        for i in 1..20 {
            let a = -1.0 + i as f64 * 0.1;
            let p = (1.0 + a) / 2.0;
            let h = -p * p.ln() - (1.0 - p) * (1.0 - p).ln();
            assert!((additive_profile(&[-1, 1], a) - h).abs() < 1e-10);
        }
    }

    #[test]
    fn hull_of_square() {
        let pts = [(0, 0), (2, 0), (2, 2), (0, 2), (1, 1), (1, 0)];
        assert_eq!(convex_hull(&pts), vec![(0, 0), (2, 0), (2, 2), (0, 2)]);
    }

    #[test]
    fn grid_covers_endpoints() {
        let g = grid(-1.0, 1.0, 0.02);
        assert_eq!(g.len(), 101);
        assert!((g[100] - 1.0).abs() < 1e-12);
    }
}
