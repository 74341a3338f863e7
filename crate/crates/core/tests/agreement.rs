use lyapca_core::dynamics::{run, DefectInit, InitState, RunConfig};
use lyapca_core::floquet::{detect_orbit, exact_count_profile, legendre_profile};
use lyapca_core::profiles::{defect_shape, Shape};
use lyapca_core::rules::{parse_tile, Rule};
use lyapca_core::shapes2d::{self, candidate_directions, half_space_velocity};

/// Support function of the simulated defect hull against the exact `h(u)`.
fn support_gap(rule: &str, tile: &str, t: usize) -> f64 {
    let r = Rule::parse(rule).unwrap();
    let orbit = shapes2d::detect_orbit(&r, &parse_tile(tile).unwrap()).unwrap();
    let mut cfg = RunConfig::new(r.spec().clone(), InitState::Tile(tile.into()), DefectInit::Point, t, 0);
    cfg.weights = false;
    cfg.history_from = Some(t);
    let rec = run(&cfg).unwrap();
    let Shape::Polygon { vertices, .. } = defect_shape(&rec, t).unwrap() else { panic!("no polygon") };
    let mut worst: f64 = 0.0;
    for u in candidate_directions(&r, orbit.pi) {
        let h = half_space_velocity(&r, &orbit, u, None).unwrap().unwrap();
        let h = *h.numer() as f64 / *h.denom() as f64;
        let s = vertices.iter().map(|v| v[0] * u[0] as f64 + v[1] * u[1] as f64).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((s - h).abs());
    }
    worst
}

#[test]
fn simulated_2d_shape_matches_half_plane_velocities() {
    // the point defect starts a bounded distance behind a half-plane front, so the gap is O(1/t)
    for t in [200, 400] {
        let g1 = support_gap("tot2d:moore:1", "0000/0000/0011/0011", t);
        let g3 = support_gap("tot2d:moore:3", "0000/0001/0010/1001", t);
        assert!(g1 * t as f64 <= 12.0, "Tot 1 gap {g1} at t = {t}");
        assert!(g3 * t as f64 <= 18.0, "Tot 3 gap {g3} at t = {t}");
    }
}

#[test]
fn exact_counts_approach_legendre_profile() {
    let r = Rule::elementary(22);
    let orbit = detect_orbit(&r, &parse_tile("10").unwrap()).unwrap();
    let lp = legendre_profile(&r, &orbit).unwrap();
    let t = 300;
    let prof = exact_count_profile(&r, &orbit, &[(0, 0)], t).unwrap();
    let mut worst: f64 = 0.0;
    for (a, v) in prof.points() {
        if a.abs() < 0.9 && v.is_finite() {
            worst = worst.max((v - lp.value(a).unwrap()).abs());
        }
    }
    // polynomial prefactor: O(log t / t)
    assert!(worst < 0.03, "sup gap {worst}");
}
