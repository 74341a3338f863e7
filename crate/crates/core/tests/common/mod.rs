//! Independent oracles and property checks shared by the property suite and
//! the acceptance run. Every check returns `Err(description)` on violation.
#![allow(dead_code)]

use lyapca_core::dynamics::{run, with_threads, DefectInit, InitState, RunConfig};
use lyapca_core::floquet::{
    build_expansion_graph, check_irreducible, detect_orbit, perron, FloquetError, LegendreProfile, Orbit,
    SpectralModel,
};
use lyapca_core::profiles::{additive_profile, empirical_lyapunov};
use lyapca_core::rules::{parse_tile, Rule, RuleSpec};

pub fn bits(v: &[u8]) -> String {
    v.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
}

/// Exact defect counts of an elementary rule on the periodic extension of `tile`,
/// by plain summation over sensitive neighbors on a strip wide enough for the light cone.
pub fn count_oracle(code: u8, tile: &[u8], defects: &[i64], t: usize) -> Vec<(i64, u64)> {
    let lo = defects.iter().min().unwrap() - 2 * t as i64 - 2;
    let hi = defects.iter().max().unwrap() + 2 * t as i64 + 2;
    let n = (hi - lo + 1) as usize;
    let sig = tile.len() as i64;
    let mut xi: Vec<u8> = (lo..=hi).map(|x| tile[x.rem_euclid(sig) as usize]).collect();
    let mut d = vec![0u64; n];
    for &x in defects {
        d[(x - lo) as usize] = 1;
    }
    let out = |w: usize| (code >> w) & 1;
    for _ in 0..t {
        let mut nxi = xi.clone();
        let mut nd = vec![0u64; n];
        for i in 1..n - 1 {
            let w = 4 * xi[i - 1] as usize + 2 * xi[i] as usize + xi[i + 1] as usize;
            nxi[i] = out(w);
            for k in 0..3 {
                // flipping neighbor i-1+k (bit 2-k of the window code)
                if out(w ^ (1 << (2 - k))) != out(w) {
                    nd[i] += d[i - 1 + k];
                }
            }
        }
        xi = nxi;
        d = nd;
    }
    (lo..=hi).zip(d).filter(|(_, c)| *c > 0).collect()
}

pub fn tile_run(code: u8, tile: &[u8], defects: &[i64], t: usize) -> RunConfig {
    let sites = defects.iter().map(|&x| (x, 0)).collect();
    RunConfig::new(RuleSpec::Elementary(code), InitState::Tile(bits(tile)), DefectInit::Sites(sites), t, 0)
}

/// Log-space accumulation against exact integer counts.
pub fn check_log_counts(code: u8, tile: &[u8], defects: &[i64], t: usize) -> Result<(), String> {
    let rec = run(&tile_run(code, tile, defects, t)).map_err(|e| e.to_string())?;
    let oracle = count_oracle(code, tile, defects, t);
    let empty = lyapca_core::dynamics::SiteValues { min: [0, 0], width: 0, height: 0, values: vec![] };
    let vals = rec.final_logw.as_ref().unwrap_or(&empty);
    let mut seen = 0;
    for (site, v) in vals.iter() {
        if v > f64::NEG_INFINITY {
            seen += 1;
            let c = oracle.iter().find(|(x, _)| *x == site.0).map(|(_, c)| *c);
            let Some(c) = c else { return Err(format!("site {} has weight {v} but count 0", site.0)) };
            let l = (c as f64).ln();
            if (v - l).abs() > 1e-12 * l.abs().max(1.0) {
                return Err(format!("site {}: log-weight {v} vs log count {l}", site.0));
            }
        }
    }
    if seen != oracle.len() {
        return Err(format!("{} sites with weight, {} with positive count", seen, oracle.len()));
    }
    Ok(())
}

/// Adding initial defects never removes defects nor lowers weights.
pub fn check_monotone(code: u8, tile: &[u8], small: &[i64], extra: &[i64], t: usize) -> Result<(), String> {
    let mut big = small.to_vec();
    big.extend_from_slice(extra);
    big.sort_unstable();
    big.dedup();
    let a = run(&tile_run(code, tile, small, t)).map_err(|e| e.to_string())?;
    let b = run(&tile_run(code, tile, &big, t)).map_err(|e| e.to_string())?;
    if let Some(va) = &a.final_logw {
        for (s, v) in va.iter() {
            let w = b.final_logw.as_ref().map_or(f64::NEG_INFINITY, |vb| vb.get(s));
            if v > w + 1e-12 {
                return Err(format!("site {}: {v} with fewer defects, {w} with more", s.0));
            }
        }
    }
    Ok(())
}

/// `L(alpha) <= L_N` on the window around `alpha`, plus the window's counting slack.
pub fn check_domination(code: u8, seed: u64, t: usize, eps: f64, defects: usize) -> Result<(), String> {
    let cfg = RunConfig::new(RuleSpec::Elementary(code), InitState::Uniform(0.5), DefectInit::Interval(defects), t, seed);
    let rec = run(&cfg).map_err(|e| e.to_string())?;
    if rec.collapse_time.is_some() {
        return Ok(());
    }
    let prof = empirical_lyapunov(&rec, eps).map_err(|e| e.to_string())?;
    let n = [-1i64, 0, 1];
    let tf = t as f64;
    // walks from any initial defect into the window: displacement within r of alpha
    let r = eps + defects as f64 / (2.0 * tf);
    let slack = ((defects as f64) * (2.0 * eps * tf + 2.0)).ln() / tf;
    for (a, v) in prof.points() {
        let bound = if a - r > 1.0 || a + r < -1.0 {
            f64::NEG_INFINITY
        } else {
            additive_profile(&n, 0f64.clamp(a - r, a + r).clamp(-1.0, 1.0))
        };
        if v > bound + slack + 1e-9 {
            return Err(format!("alpha {a}: L = {v} exceeds L_N bound {bound} + {slack}"));
        }
    }
    Ok(())
}

/// Where `L` is finite agrees with the defect interval `[lo, hi] / t` within one bin.
pub fn check_l_w(code: u8, seed: u64, t: usize, eps: f64) -> Result<(), String> {
    let cfg = RunConfig::new(RuleSpec::Elementary(code), InitState::Uniform(0.5), DefectInit::Interval(3), t, seed);
    let rec = run(&cfg).map_err(|e| e.to_string())?;
    let Some((lo, hi)) = rec.edge_1d(t) else { return Ok(()) };
    let prof = empirical_lyapunov(&rec, eps).map_err(|e| e.to_string())?;
    let fin: Vec<f64> = prof.points().into_iter().filter(|p| p.1 > f64::NEG_INFINITY).map(|p| p.0).collect();
    let (flo, fhi) = (fin.first().copied(), fin.last().copied());
    let (wlo, whi) = (lo as f64 / t as f64, hi as f64 / t as f64);
    match (flo, fhi) {
        (Some(a), Some(b)) if (a - wlo).abs() <= eps + 1e-9 && (b - whi).abs() <= eps + 1e-9 => Ok(()),
        _ => Err(format!("finite range {flo:?}..{fhi:?} vs shape [{wlo}, {whi}]")),
    }
}

/// Identical records with one and with several worker threads.
pub fn check_threads(spec: &str, init: &str, defects: &str, t: usize, seed: u64) -> Result<(), String> {
    let mut cfg = RunConfig::new(spec.parse().unwrap(), init.parse().unwrap(), defects.parse().unwrap(), t, seed);
    cfg.damage = true;
    cfg.history_from = Some(t.saturating_sub(3));
    let a = with_threads(Some(1), || run(&cfg)).map_err(|e| e.to_string())?;
    let b = with_threads(Some(4), || run(&cfg)).map_err(|e| e.to_string())?;
    if a.edges != b.edges || a.damage_edges != b.damage_edges || a.history != b.history || a.collapse_time != b.collapse_time {
        return Err("indicator data differ between thread counts".into());
    }
    let (Some(va), Some(vb)) = (a.final_logw, b.final_logw) else { return Ok(()) };
    if (va.min, va.width, va.height) != (vb.min, vb.width, vb.height) {
        return Err("log-weight boxes differ".into());
    }
    for ((_, x), (_, y)) in va.iter().zip(vb.iter()) {
        if !(x == y || (x - y).abs() <= 1e-12 * x.abs().max(1.0)) {
            return Err(format!("log-weights differ: {x} vs {y}"));
        }
    }
    Ok(())
}

/// Cycle orbit reached from `tile` (the tile itself when periodic).
pub fn cycle_orbit(rule: &Rule, tile: &[u8]) -> Option<Orbit> {
    let f = parse_tile(&bits(tile)).ok()?;
    match detect_orbit(rule, &f) {
        Ok(o) => Some(o),
        Err(FloquetError::NotOnCycle { cycle_tile, .. }) => detect_orbit(rule, &parse_tile(&cycle_tile).ok()?).ok(),
        Err(_) => None,
    }
}

/// Spectral radius of the edge matrix `T` equals that of the vertex matrix `T'`.
pub fn check_spr(code: u8, tile: &[u8]) -> Result<(), String> {
    let rule = Rule::elementary(code);
    let Some(orbit) = cycle_orbit(&rule, tile) else { return Ok(()) };
    let g = build_expansion_graph(&rule, &orbit).map_err(|e| e.to_string())?;
    if !check_irreducible(&g).essential || g.edges.is_empty() {
        return Ok(());
    }
    let f = |m: Vec<Vec<u64>>| m.into_iter().map(|r| r.into_iter().map(|x| x as f64).collect()).collect::<Vec<Vec<f64>>>();
    let (a, _) = perron(&f(g.edge_matrix())).map_err(|e| e.to_string())?;
    let b = block_spr(&f(g.vertex_matrix()))?;
    if (a - b).abs() > 1e-9 * a.max(1.0) {
        return Err(format!("spr(T) = {a}, spr(T') = {b}"));
    }
    Ok(())
}

/// Spectral radius of a nonnegative matrix as the largest Perron root over
/// its strongly connected blocks (reachability by transitive closure).
pub fn block_spr(a: &[Vec<f64>]) -> Result<f64, String> {
    let n = a.len();
    let mut reach: Vec<Vec<bool>> = a.iter().map(|r| r.iter().map(|&x| x > 0.0).collect()).collect();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                reach[i][j] = reach[i][j] || (reach[i][k] && reach[k][j]);
            }
        }
    }
    let mut best = 0.0f64;
    let mut done = vec![false; n];
    for i in 0..n {
        if done[i] || !reach[i][i] {
            continue;
        }
        let block: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &block {
            done[j] = true;
        }
        let sub: Vec<Vec<f64>> = block.iter().map(|&r| block.iter().map(|&c| a[r][c]).collect()).collect();
        best = best.max(perron(&sub).map_err(|e| e.to_string())?.0);
    }
    Ok(best)
}

/// `Lambda` convex on a grid of `y`, and the Legendre profile concave on its support.
pub fn check_legendre_shape(code: u8, tile: &[u8]) -> Result<(), String> {
    let rule = Rule::elementary(code);
    let Some(orbit) = cycle_orbit(&rule, tile) else { return Ok(()) };
    let g = build_expansion_graph(&rule, &orbit).map_err(|e| e.to_string())?;
    if !check_irreducible(&g).essential || g.edges.is_empty() {
        return Ok(());
    }
    let model = SpectralModel::new(&g).map_err(|e| e.to_string())?;
    let ys: Vec<f64> = (-12..=12).map(|k| k as f64 * 0.25).collect();
    let lam: Vec<f64> = ys.iter().map(|&y| model.lambda(y)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    for i in 1..lam.len() - 1 {
        if lam[i] > (lam[i - 1] + lam[i + 1]) / 2.0 + 1e-9 {
            return Err(format!("Lambda not convex at y = {}", ys[i]));
        }
    }
    let lp = LegendreProfile::new(model).map_err(|e| e.to_string())?;
    let pts = lp.sample(17).map_err(|e| e.to_string())?.points();
    for i in 1..pts.len() - 1 {
        let (a, b, c) = (pts[i - 1], pts[i], pts[i + 1]);
        if [a.1, b.1, c.1].iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite value inside the support near {}", b.0));
        }
        let chord = a.1 + (c.1 - a.1) * (b.0 - a.0) / (c.0 - a.0);
        if b.1 < chord - 1e-6 {
            return Err(format!("profile not concave at alpha = {}", b.0));
        }
    }
    Ok(())
}

/// The additive profile is concave on the hull of its offsets.
pub fn check_additive_concave(offsets: &[i64]) -> Result<(), String> {
    let (lo, hi) = (*offsets.iter().min().unwrap() as f64, *offsets.iter().max().unwrap() as f64);
    if hi - lo < 1e-9 {
        return Ok(());
    }
    let xs: Vec<f64> = (1..40).map(|k| lo + (hi - lo) * k as f64 / 40.0).collect();
    let v: Vec<f64> = xs.iter().map(|&a| additive_profile(offsets, a)).collect();
    for i in 1..v.len() - 1 {
        if v[i] < (v[i - 1] + v[i + 1]) / 2.0 - 1e-9 {
            return Err(format!("additive profile of {offsets:?} not concave at {}", xs[i]));
        }
    }
    Ok(())
}
