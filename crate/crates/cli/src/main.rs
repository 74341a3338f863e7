//! `lyapca`: defect profiles, classification, certificates, periodic
//! backgrounds and two-dimensional shapes from the command line.
//!
//! Exit codes: 0 success, 1 output or input file error, 2 usage error,
//! 3 refused budget, 4 numerical failure. Failures print one line
//! `error: code=<n> kind=<kind> msg=<text>` on stderr.

mod svg;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::Serialize;
use serde_json::{json, Value};

use lyapca_core::classify::{
    check_reduction, classify_empirical, density_sweep, rule38_chain_rows_sum_to_one, rule38_constants,
    sweep_csv, verify_lower, verify_upper, ClassifyConfig, ClassifyError, COLLAPSING, EXPANSIVE, MARGINAL,
    PROOF_ONLY_MARGINAL, REDUCED_MARGINAL,
};
use lyapca_core::dynamics::{self, with_threads, DefectInit, InitState, RunConfig, RunError, RunRecord, DEFAULT_MAX_CELLS};
use lyapca_core::floquet::{periodic_report, FloquetError};
use lyapca_core::jsonf64::JsonF64;
use lyapca_core::profiles::{defect_shape, density_profile, empirical_lyapunov, mle_estimate, Profile, ProfileError, Shape};
use lyapca_core::rules::{parse_tile, Rule, RuleError, RuleSpec};
use lyapca_core::shapes2d::{self, ShapeError, ShapeKind};
use lyapca_core::VERSION;

const DESK_T: usize = 1000;
const FULL_T: usize = 10_000;

#[derive(Parser, Debug)]
#[command(name = "lyapca", version, about = "Defect dynamics and Lyapunov profiles of binary cellular automata")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Empirical Lyapunov profile L(alpha) from a simulated run.
    Profile(ProfileArgs),
    /// Density profile of the defect indicator.
    Density(ProfileArgs),
    /// Shape of the defect set {x/t : delta_t(x) = 1}.
    Shape(ShapeArgs),
    /// Defect spreading against damage spreading on the same background.
    DamageCompare(ProfileArgs),
    /// Empirical E/C/M classification over several seeds.
    Classify(ClassifyArgs),
    /// Classification across background densities p (CSV table).
    Sweep(SweepArgs),
    /// Check an upper certificate (B, t_B), or every tabulated one with --table.
    CertifyUpper(UpperArgs),
    /// Check a lower certificate (M, t_M), or every tabulated one with --table.
    CertifyLower(LowerArgs),
    /// Exact profile on a spatially periodic background orbit.
    Periodic(PeriodicArgs),
    /// Exact defect shape and Frank diagram on a periodic two-dimensional background.
    Shape2d(Shape2dArgs),
    /// Exact Rule 38 constants, optionally with a simulated edge speed.
    Rule38(Rule38Args),
}

#[derive(Args, Debug, Serialize)]
struct RunArgs {
    /// Rule: eca:<n>, gen1d:<offsets>:<table bits>, tot2d:<moore|vn>:<digits>.
    #[arg(long)]
    rule: String,
    /// Background: uniform:<p>, tile:<bits>, file:<path>.
    #[arg(long, default_value = "uniform:0.5")]
    init: String,
    /// Initial defects: point, interval:<k>, square:<k>, sites:<x,y;...>.
    #[arg(long, default_value = "point")]
    defects: String,
    /// Horizon (default 1000, or 10000 with --full-scale).
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Refuse lattices with more cells than this.
    #[arg(long, default_value_t = DEFAULT_MAX_CELLS)]
    max_cells: usize,
}

#[derive(Args, Debug, Serialize)]
struct OutArgs {
    /// JSON output (stdout if absent).
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    csv: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ProfileArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Velocity bin half-width.
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct ShapeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Time at which the shape is taken (default: the horizon).
    #[arg(long)]
    at: Option<usize>,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct ClassArgs {
    #[arg(long)]
    rule: String,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    full_scale: bool,
    /// Number of seeds (seeds 1..=n).
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value = "interval:20")]
    defects: String,
    /// Bin width of the spreading test.
    #[arg(long, default_value_t = 0.02)]
    bin: f64,
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    #[arg(long, default_value_t = 3)]
    min_bins: usize,
    #[arg(long, default_value_t = 1 << 27)]
    max_cells: usize,
}

#[derive(Args, Debug, Serialize)]
struct ClassifyArgs {
    #[command(flatten)]
    class: ClassArgs,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    class: ClassArgs,
    /// Comma-separated densities; overrides --steps.
    #[arg(long)]
    ps: Option<String>,
    /// Densities k/(steps+1) for k = 1..=steps.
    #[arg(long, default_value_t = 9)]
    steps: usize,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct UpperArgs {
    #[arg(long, required_unless_present = "table")]
    rule: Option<String>,
    /// Pattern B as a bit string.
    #[arg(long, required_unless_present = "table")]
    b: Option<String>,
    #[arg(long, required_unless_present = "table")]
    t_b: Option<usize>,
    /// Check every tabulated collapsing and marginal certificate.
    #[arg(long)]
    table: bool,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct LowerArgs {
    #[arg(long, required_unless_present = "table")]
    rule: Option<String>,
    /// Offsets M, comma separated.
    #[arg(long, required_unless_present = "table", allow_hyphen_values = true)]
    m: Option<String>,
    #[arg(long, required_unless_present = "table")]
    t_m: Option<usize>,
    #[arg(long)]
    table: bool,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct PeriodicArgs {
    #[arg(long)]
    rule: String,
    /// Spatial period as a bit string.
    #[arg(long)]
    tile: String,
    /// Profile samples across the support.
    #[arg(long, default_value_t = 201)]
    samples: usize,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct Shape2dArgs {
    #[arg(long)]
    rule: String,
    /// Tile rows separated by '/', top row first.
    #[arg(long)]
    tile: String,
    /// Start the defects on sites in this state only and follow them.
    #[arg(long)]
    sublattice: Option<u8>,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Args, Debug, Serialize)]
struct Rule38Args {
    /// Also measure the right-edge speed by simulation.
    #[arg(long)]
    simulate: bool,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Width of the initial defect interval for the simulation.
    #[arg(long, default_value_t = 20)]
    defects: usize,
    #[command(flatten)]
    #[serde(skip)]
    out: OutArgs,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    kind: &'static str,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Display) -> Failure {
        Failure { code: 2, kind: "usage", msg: msg.to_string() }
    }
    fn budget(msg: impl Display) -> Failure {
        Failure { code: 3, kind: "budget", msg: msg.to_string() }
    }
    fn numerical(msg: impl Display) -> Failure {
        Failure { code: 4, kind: "numerical", msg: msg.to_string() }
    }
    fn io(msg: impl Display) -> Failure {
        Failure { code: 1, kind: "io", msg: msg.to_string() }
    }
}

impl From<RuleError> for Failure {
    fn from(e: RuleError) -> Failure {
        Failure::usage(e)
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Failure {
        match e {
            RunError::Budget { .. } => Failure::budget(e),
            RunError::Io { .. } => Failure::io(e),
            _ => Failure::usage(e),
        }
    }
}

impl From<ProfileError> for Failure {
    fn from(e: ProfileError) -> Failure {
        Failure::usage(e)
    }
}

impl From<ClassifyError> for Failure {
    fn from(e: ClassifyError) -> Failure {
        match e {
            ClassifyError::Budget { .. } => Failure::budget(e),
            ClassifyError::Run(r) => r.into(),
            _ => Failure::usage(e),
        }
    }
}

impl From<FloquetError> for Failure {
    fn from(e: FloquetError) -> Failure {
        match e {
            FloquetError::Run(r) => r.into(),
            FloquetError::NoRecurrence(_) => Failure::budget(e),
            FloquetError::NoConvergence { .. } | FloquetError::Reducible(_) => Failure::numerical(e),
            _ => Failure::usage(e),
        }
    }
}

impl From<ShapeError> for Failure {
    fn from(e: ShapeError) -> Failure {
        match e {
            ShapeError::NoRecurrence(_) | ShapeError::Inconsistent => Failure::numerical(e),
            _ => Failure::usage(e),
        }
    }
}

type Res<T> = Result<T, Failure>;

fn horizon(t: Option<usize>, full: bool) -> usize {
    t.unwrap_or(if full { FULL_T } else { DESK_T })
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Res<T>
where
    T::Err: Display,
{
    s.parse().map_err(|e| Failure::usage(format!("bad {what} `{s}`: {e}")))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// Config record with the resolved horizon filled in.
fn config<T: Serialize>(args: &T, t: Option<usize>) -> Value {
    let mut v = to_value(args);
    if let Some(m) = v.as_object_mut() {
        flatten_into(m);
        if let Some(t) = t {
            m.insert("t".into(), json!(t));
        }
    }
    v
}

/// Hoist nested flattened argument groups so the record mirrors the command line.
fn flatten_into(m: &mut serde_json::Map<String, Value>) {
    for key in ["run", "class"] {
        if let Some(Value::Object(inner)) = m.remove(key) {
            for (k, v) in inner {
                m.entry(k).or_insert(v);
            }
        }
    }
}

fn envelope(command: &str, config: Value, seed: Option<u64>, result: Value) -> Value {
    json!({ "version": VERSION, "command": command, "config": config, "seed": seed, "result": result })
}

fn write(path: &Path, text: &str) -> Res<()> {
    std::fs::write(path, text).map_err(|e| Failure::io(format!("cannot write `{}`: {e}", path.display())))
}

fn emit(out: &OutArgs, doc: &Value, csv: Option<String>, svg: Option<String>) -> Res<()> {
    let text = serde_json::to_string_pretty(doc).expect("serializable") + "\n";
    match &out.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(p) = &out.csv {
        write(p, &csv.ok_or_else(|| Failure::usage("this command has no CSV output"))?)?;
    }
    if let Some(p) = &out.svg {
        write(p, &svg.ok_or_else(|| Failure::usage("this command has no SVG output"))?)?;
    }
    Ok(())
}

fn run_config(a: &RunArgs) -> Res<RunConfig> {
    let rule: RuleSpec = parse("rule", &a.rule)?;
    let init: InitState = parse("initial state", &a.init)?;
    let defects: DefectInit = parse("defects", &a.defects)?;
    let t = horizon(a.t, a.full_scale);
    if t == 0 {
        return Err(Failure::usage("t must be at least 1"));
    }
    let mut rc = RunConfig::new(rule, init, defects, t, a.seed);
    rc.max_cells = a.max_cells;
    Ok(rc)
}

fn profile_svg(p: &Profile, ylabel: &str, eps: f64) -> String {
    if p.dim == 1 {
        svg::line_plot(&p.points(), "alpha", ylabel)
    } else {
        let cells: Vec<(f64, f64, f64)> = p.samples.iter().map(|s| (s.alpha[0], s.alpha[1], s.value)).collect();
        svg::heat_map(&cells, eps, "alpha_x", "alpha_y")
    }
}

fn edges_at(rec: &RunRecord, s: usize) -> Value {
    let t = s.max(1) as f64;
    match rec.edges.get(s).copied().flatten() {
        None => Value::Null,
        Some(e) if rec.dim == 1 => json!([e.min[0] as f64 / t, e.max[0] as f64 / t]),
        Some(e) => json!({ "min": [e.min[0] as f64 / t, e.min[1] as f64 / t], "max": [e.max[0] as f64 / t, e.max[1] as f64 / t] }),
    }
}

fn cmd_profile(a: &ProfileArgs) -> Res<()> {
    let rc = run_config(&a.run)?;
    let rec = dynamics::run(&rc)?;
    let prof = empirical_lyapunov(&rec, a.epsilon)?;
    let mle = mle_estimate(&prof);
    let result = json!({
        "collapse_time": rec.collapse_time,
        "edges": edges_at(&rec, rec.t),
        "mle": mle,
        "profile": prof,
    });
    let doc = envelope("profile", config(a, Some(rc.t)), Some(rc.seed), result);
    emit(&a.out, &doc, Some(prof.to_csv()), Some(profile_svg(&prof, "L", a.epsilon)))
}

fn cmd_density(a: &ProfileArgs) -> Res<()> {
    let mut rc = run_config(&a.run)?;
    rc.weights = false;
    rc.keep_final = false;
    rc.history_from = Some(1);
    let rec = dynamics::run(&rc)?;
    let prof = density_profile(&rec, a.epsilon)?;
    let result = json!({ "collapse_time": rec.collapse_time, "edges": edges_at(&rec, rec.t), "profile": prof });
    let doc = envelope("density", config(a, Some(rc.t)), Some(rc.seed), result);
    emit(&a.out, &doc, Some(prof.to_csv()), Some(profile_svg(&prof, "density", a.epsilon)))
}

fn cmd_shape(a: &ShapeArgs) -> Res<()> {
    let mut rc = run_config(&a.run)?;
    let at = a.at.unwrap_or(rc.t);
    if at == 0 || at > rc.t {
        return Err(Failure::usage(format!("--at must lie in 1..={}", rc.t)));
    }
    rc.weights = false;
    rc.keep_final = false;
    rc.history_from = Some(at);
    let rec = dynamics::run(&rc)?;
    let shape = defect_shape(&rec, at)?;
    let (csv, pts) = match &shape {
        Shape::Empty => ("x,y\n".to_string(), vec![]),
        Shape::Interval { lo, hi } => (format!("x,y\n{lo},0\n{hi},0\n"), vec![(*lo, 0.0), (*hi, 0.0)]),
        Shape::Polygon { vertices, .. } => {
            let mut s = String::from("x,y\n");
            for v in vertices {
                s.push_str(&format!("{},{}\n", v[0], v[1]));
            }
            (s, vertices.iter().map(|v| (v[0], v[1])).collect())
        }
    };
    let mut cfg = config(a, Some(rc.t));
    cfg["at"] = json!(at);
    let doc = envelope("shape", cfg, Some(rc.seed), json!({ "at": at, "shape": shape }));
    emit(&a.out, &doc, Some(csv), Some(svg::polygons(&[("black", pts)], "x/t", "y/t")))
}

fn cmd_damage(a: &ProfileArgs) -> Res<()> {
    let mut rc = run_config(&a.run)?;
    rc.weights = false;
    rc.keep_final = false;
    rc.damage = true;
    rc.history_from = Some(1);
    rc.damage_history_from = Some(1);
    let mut rec = dynamics::run(&rc)?;
    let defect = density_profile(&rec, a.epsilon)?;
    let damage_edges = rec.damage_edges.clone().unwrap_or_default();
    rec.history = std::mem::take(&mut rec.damage_history);
    let mut damage = density_profile(&rec, a.epsilon)?;
    damage.meta.kind = "damage-density".into();
    let t = rc.t as f64;
    let dedge = match damage_edges.get(rc.t).copied().flatten() {
        None => Value::Null,
        Some(e) if rec.dim == 1 => json!([e.min[0] as f64 / t, e.max[0] as f64 / t]),
        Some(e) => json!({ "min": [e.min[0] as f64 / t, e.min[1] as f64 / t], "max": [e.max[0] as f64 / t, e.max[1] as f64 / t] }),
    };
    let result = json!({
        "defect": { "edges": edges_at(&rec, rc.t), "collapse_time": rec.collapse_time, "density": defect },
        "damage": { "edges": dedge, "density": damage },
    });
    let (csv, svg) = if rec.dim == 1 {
        let mut s = String::from("alpha,defect,damage\n");
        let dam = damage.points();
        for (x, v) in defect.points() {
            let w = dam.iter().find(|d| (d.0 - x).abs() < 1e-12).map_or(String::new(), |d| d.1.to_string());
            s.push_str(&format!("{x},{v},{w}\n"));
        }
        (Some(s), Some(profile_svg(&defect, "defect density", a.epsilon)))
    } else {
        (None, None)
    };
    let doc = envelope("damage-compare", config(a, Some(rc.t)), Some(rc.seed), result);
    emit(&a.out, &doc, csv, svg)
}

fn classify_config(c: &ClassArgs, p: f64) -> Res<(Rule, ClassifyConfig)> {
    let rule = Rule::parse(&c.rule)?;
    if c.seeds == 0 {
        return Err(Failure::usage("need at least one seed"));
    }
    let cfg = ClassifyConfig {
        p,
        t: horizon(c.t, c.full_scale),
        seeds: (1..=c.seeds).collect(),
        bin: c.bin,
        threshold: c.threshold,
        min_bins: c.min_bins,
        defects: parse("defects", &c.defects)?,
        max_cells: c.max_cells,
    };
    Ok((rule, cfg))
}

fn cmd_classify(a: &ClassifyArgs) -> Res<()> {
    let (rule, cfg) = classify_config(&a.class, a.p)?;
    let c = classify_empirical(&rule, &cfg)?;
    let doc = envelope("classify", config(a, Some(cfg.t)), None, to_value(&c));
    emit(&a.out, &doc, None, None)
}

fn cmd_sweep(a: &SweepArgs) -> Res<()> {
    let ps: Vec<f64> = match &a.ps {
        Some(s) => s.split(',').map(|x| parse("density", x.trim())).collect::<Res<_>>()?,
        None => (1..=a.steps).map(|k| k as f64 / (a.steps + 1) as f64).collect(),
    };
    let (rule, cfg) = classify_config(&a.class, 0.5)?;
    let rows = density_sweep(&rule, &ps, &cfg)?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.p, r.mle)).collect();
    let mut cfg_v = config(a, Some(cfg.t));
    cfg_v["ps"] = json!(ps);
    let doc = envelope("sweep", cfg_v, None, json!({ "rows": rows }));
    emit(&a.out, &doc, Some(sweep_csv(&rows)), Some(svg::line_plot(&pts, "p", "MLE")))
}

fn eca_code(spec: &str) -> Res<(Rule, u8)> {
    let rule = Rule::parse(spec)?;
    match rule.elementary_code() {
        Some(c) => Ok((rule, c)),
        None => Err(Failure::usage(format!("certificates need an elementary rule, got `{spec}`"))),
    }
}

fn upper_report(rule: u8, b: &str, t_b: usize, witnesses: &[i64]) -> Value {
    json!({
        "rule": format!("eca:{rule}"),
        "kind": "upper",
        "params": { "B": b, "t_B": t_b },
        "verdict": !witnesses.is_empty(),
        "witnesses": witnesses,
    })
}

fn cmd_upper(a: &UpperArgs) -> Res<()> {
    let result = if a.table {
        let mut rows = Vec::new();
        let mut all = true;
        for r in COLLAPSING.iter().map(|r| ("collapsing", r)).chain(MARGINAL.iter().map(|r| ("marginal", r))) {
            let v = verify_upper(&Rule::elementary(r.1.rule), r.1.b, r.1.t_b)?;
            let ok = v == r.1.v_b;
            all &= ok;
            let mut rep = upper_report(r.1.rule, r.1.b, r.1.t_b, &v);
            rep["class"] = json!(r.0);
            rep["listed"] = json!(r.1.v_b);
            rep["matches"] = json!(ok);
            rows.push(rep);
        }
        let mut reductions = Vec::new();
        for c in REDUCED_MARGINAL {
            let red = check_reduction(c).expect("tabulated reduction");
            all &= red.certificate_holds && red.claims.iter().all(|c| c.holds);
            reductions.push(to_value(&red));
        }
        json!({
            "rule_0": "collapses in one step",
            "certificates": rows,
            "reductions": reductions,
            "proof_only": PROOF_ONLY_MARGINAL.iter().map(|c| format!("eca:{c}")).collect::<Vec<_>>(),
            "all_hold": all,
        })
    } else {
        let spec = a.rule.as_deref().unwrap_or_default();
        let (rule, code) = eca_code(spec)?;
        let b = a.b.as_deref().unwrap_or_default();
        let t_b = a.t_b.unwrap_or_default();
        upper_report(code, b, t_b, &verify_upper(&rule, b, t_b)?)
    };
    let doc = envelope("certify-upper", config(a, None), None, result);
    emit(&a.out, &doc, None, None)
}

fn lower_report(rule: u8, m: &[i64], t_m: usize, holds: bool) -> Value {
    json!({
        "rule": format!("eca:{rule}"),
        "kind": "lower",
        "params": { "M": m, "t_M": t_m },
        "verdict": holds,
        "witnesses": if holds { json!(m) } else { json!([]) },
    })
}

fn cmd_lower(a: &LowerArgs) -> Res<()> {
    let result = if a.table {
        let mut rows = Vec::new();
        for (code, m, t_m) in EXPANSIVE {
            let holds = verify_lower(&Rule::elementary(code), m, t_m)?;
            rows.push(lower_report(code, m, t_m, holds));
        }
        let all = rows.iter().all(|r| r["verdict"] == json!(true));
        json!({ "certificates": rows, "all_hold": all })
    } else {
        let (rule, code) = eca_code(a.rule.as_deref().unwrap_or_default())?;
        let m: Vec<i64> = a
            .m
            .as_deref()
            .unwrap_or_default()
            .split(',')
            .map(|x| parse("offset", x.trim()))
            .collect::<Res<_>>()?;
        let t_m = a.t_m.unwrap_or_default();
        lower_report(code, &m, t_m, verify_lower(&rule, &m, t_m)?)
    };
    let doc = envelope("certify-lower", config(a, None), None, result);
    emit(&a.out, &doc, None, None)
}

fn cmd_periodic(a: &PeriodicArgs) -> Res<()> {
    let rule = Rule::parse(&a.rule)?;
    let tile = parse_tile(&a.tile)?;
    if a.samples < 2 {
        return Err(Failure::usage("need at least 2 samples"));
    }
    let report = periodic_report(&rule, &tile, a.samples)?;
    let csv = report.profile.as_ref().map(|p| p.to_csv());
    let svg = report.profile.as_ref().map(|p| svg::line_plot(&p.points(), "alpha", "L"));
    let mut result = to_value(&report);
    if let Some(m) = &report.mle {
        // flat copies for quick lookup
        result["mle_value"] = json!(JsonF64(m.lambda));
        result["mle_direction"] = json!(m.direction);
    }
    let doc = envelope("periodic", config(a, None), None, result);
    emit(&a.out, &doc, csv.or_else(|| Some("alpha,value\n".into())), svg)
}

fn ratio_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn cmd_shape2d(a: &Shape2dArgs) -> Res<()> {
    let rule = Rule::parse(&a.rule)?;
    let tile = parse_tile(&a.tile)?;
    let orbit = shapes2d::detect_orbit(&rule, &tile)?;
    let shape = shapes2d::shape_of_orbit(&rule, &orbit, a.sublattice)?;
    let f = |p: &shapes2d::Point| (ratio_f64(&p.0), ratio_f64(&p.1));
    let w: Vec<(f64, f64)> = shape.w_polygon.iter().map(f).collect();
    let fr: Vec<(f64, f64)> = shape.frank_polygon.iter().map(f).collect();
    let mut polys = vec![("black", w)];
    if !shape.frank_unbounded && !fr.is_empty() {
        polys.push(("firebrick", fr));
    }
    let mut csv = String::from("kind,x,y\n");
    for v in &shape.w_vertices {
        csv.push_str(&format!("W,{},{}\n", v[0], v[1]));
    }
    for v in &shape.frank_vertices {
        csv.push_str(&format!("frank,{},{}\n", v[0], v[1]));
    }
    let mut result = to_value(&shape);
    result["pi"] = json!(orbit.pi);
    result["bounded_interior"] = json!(shape.kind == ShapeKind::Polygon);
    let doc = envelope("shape2d", config(a, None), None, result);
    emit(&a.out, &doc, Some(csv), Some(svg::polygons(&polys, "x", "y")))
}

fn cmd_rule38(a: &Rule38Args) -> Res<()> {
    let c = rule38_constants();
    let mut result = to_value(&c);
    result["rows_stochastic"] = json!(rule38_chain_rows_sum_to_one());
    let t = horizon(a.t, a.full_scale);
    if a.simulate {
        let defects = DefectInit::Interval(a.defects);
        let x0 = defects.sites(1).iter().map(|s| s.0).max().unwrap_or(0);
        let mut rc = RunConfig::new(RuleSpec::Elementary(38), InitState::Uniform(0.5), defects, t, a.seed);
        rc.weights = false;
        rc.keep_final = false;
        let rec = dynamics::run(&rc)?;
        let speed = rec.edge_1d(t).map(|(_, hi)| (hi - x0) as f64 / t as f64);
        result["simulated_right_edge_speed"] = json!(speed);
        result["alpha_r_float"] = json!(ratio_f64(&c.alpha_r_exact));
    }
    let doc = envelope("rule38", config(a, Some(t)), a.simulate.then_some(a.seed), result);
    emit(&a.out, &doc, None, None)
}

fn dispatch(cmd: &Command) -> Res<()> {
    match cmd {
        Command::Profile(a) => cmd_profile(a),
        Command::Density(a) => cmd_density(a),
        Command::Shape(a) => cmd_shape(a),
        Command::DamageCompare(a) => cmd_damage(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::CertifyUpper(a) => cmd_upper(a),
        Command::CertifyLower(a) => cmd_lower(a),
        Command::Periodic(a) => cmd_periodic(a),
        Command::Shape2d(a) => cmd_shape2d(a),
        Command::Rule38(a) => cmd_rule38(a),
    }
}

fn report(f: &Failure) {
    let msg = f.msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: code={} kind={} msg={}", f.code, f.kind, msg);
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if e.exit_code() == 0 {
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            report(&Failure::usage(first));
            return ExitCode::from(2);
        }
    };
    if cli.threads == Some(0) {
        report(&Failure::usage("--threads must be positive"));
        return ExitCode::from(2);
    }
    match with_threads(cli.threads, || dispatch(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.code)
        }
    }
}
