//! `laa`: batch front end for load-altering attack analysis.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure, 4 defense verification failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use laa_core::case_io::{builtin, load_dynamic_params, parse_case, write_table, Cell, Table};
use laa_core::defense::{defend, DefenseOptions, DefensePlan, DlaaForm, Mode};
use laa_core::eigen::{eigensolve, max_real_part};
use laa_core::error::{Error, ErrorKind};
use laa_core::f64::{DynamicParams, GridCase};
use laa_core::grid::{build, AttackSpec, Sensor};
use laa_core::response::{influence, min_unsafe_step, PeakSearch};
use laa_core::sensitivity::{predict_spectrum, rank_pairs, sensitivity_table};
use laa_core::simulate::{integrate_linear, integrate_nonlinear, search_true_gain, GainOracle, NonlinearModel, SimOptions};
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "laa", version, about = "Load-altering attack analysis and defense planning for power grids")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank victim/sensor pairs by predicted destabilizing gain and check against eigensolves.
    AnalyzeDlaa(DlaaArgs),
    /// Influence peaks and minimum unsafe steps for static attacks.
    AnalyzeSlaa(SlaaArgs),
    /// Minimum-cost load protection, verified by eigensolves and simulation.
    Defend(DefendArgs),
    /// Time-domain simulation of a scripted attack.
    Simulate(SimArgs),
}

#[derive(Args)]
struct Common {
    /// Shipped case name (case6ww, case14, case39) or path to a MATPOWER case file.
    #[arg(long)]
    case: String,
    /// Dynamic parameter profile; defaults to the shipped profile or `<case>.params` next to the case file.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Comma-separated victim load bus ids.
    #[arg(long)]
    victims: Option<String>,
    /// Comma-separated sensor bus ids.
    #[arg(long)]
    sensors: Option<String>,
    /// Vulnerable fraction of demand applied to every load bus.
    #[arg(long)]
    vulnerable: Option<f64>,
    /// Override the allowed frequency deviation, Hz.
    #[arg(long)]
    omega_max: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DlaaArgs {
    #[command(flatten)]
    common: Common,
    /// Upper end of the eigenvalue sweep; defaults to twice the least predicted gain.
    #[arg(long)]
    gain: Option<f64>,
    /// Use nonlinear simulation instead of eigensolves for the true gains.
    #[arg(long)]
    nonlinear: bool,
}

#[derive(Args)]
struct SlaaArgs {
    #[command(flatten)]
    common: Common,
    /// Peak search horizon, s.
    #[arg(long, default_value_t = 60.0)]
    horizon: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dlaa,
    Slaa,
    Combined,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Robust,
    Split,
}

#[derive(Args)]
struct DefendArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "combined")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "robust")]
    form: FormArg,
    /// Required stability margin on predicted eigenvalues.
    #[arg(long, default_value_t = 1e-3)]
    margin: f64,
    /// SLAA verification horizon, s.
    #[arg(long, default_value_t = 60.0)]
    horizon: f64,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    /// Gain applied to every victim/sensor pair.
    #[arg(long, default_value_t = 0.0)]
    gain: f64,
    /// Load step applied at every victim, p.u.
    #[arg(long, default_value_t = 0.0)]
    step: f64,
    /// Waive the gain budget and let scripted steps exceed the vulnerable load.
    #[arg(long)]
    exploration: bool,
    #[arg(long)]
    nonlinear: bool,
    /// Keep the load-side step and load-sensor terms in the nonlinear model.
    #[arg(long)]
    full_terms: bool,
    #[arg(long, default_value_t = 60.0)]
    horizon: f64,
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Input => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Verification => 4,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn input(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type Res<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match &cli.cmd {
        Command::AnalyzeDlaa(a) => analyze_dlaa(a),
        Command::AnalyzeSlaa(a) => analyze_slaa(a),
        Command::Defend(a) => cmd_defend(a),
        Command::Simulate(a) => simulate(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("laa: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

// ---------------------------------------------------------------------------
// Setup

struct Setup {
    case: GridCase,
    params: DynamicParams,
    victims: Vec<usize>,
    sensors: Vec<Sensor>,
}

fn read(path: &Path) -> Res<String> {
    std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load(c: &Common, validate_params: bool) -> Res<(GridCase, DynamicParams)> {
    let (case_text, default_params) = match builtin::get(&c.case) {
        Some((ct, pt)) => (ct.to_string(), Some(pt.to_string())),
        None => {
            let p = Path::new(&c.case);
            let sibling = p.with_extension("params");
            (read(p)?, if sibling.exists() { Some(read(&sibling)?) } else { None })
        }
    };
    let mut case: GridCase = parse_case(&case_text)?;
    let ptext = match &c.params {
        Some(p) => read(p)?,
        None => default_params.ok_or_else(|| input(format!("no parameter profile for `{}`; pass --params", c.case)))?,
    };
    let mut params = load_dynamic_params(&ptext, &case)?;
    if let Some(f) = c.vulnerable {
        for b in case.load_buses() {
            case.set_vulnerable_fraction(b, f)?;
        }
    }
    if let Some(w) = c.omega_max {
        params.omega_max = w;
        if validate_params {
            params.validate()?;
        }
    }
    Ok((case, params))
}

fn bus_list(s: &str) -> Res<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| input(format!("`{t}` is not a bus id"))))
        .collect()
}

fn setup(c: &Common, default_victims: impl Fn(&GridCase) -> Vec<usize>, validate_params: bool, allow_empty: bool) -> Res<Setup> {
    let (case, params) = load(c, validate_params)?;
    let victims = match &c.victims {
        Some(s) => {
            let mut v = Vec::new();
            for b in bus_list(s)? {
                let i = case.load_index(b).ok_or_else(|| input(format!("victim {b} is not a load bus")))?;
                if !v.contains(&i) {
                    v.push(i);
                }
            }
            v
        }
        None => default_victims(&case),
    };
    if victims.is_empty() && !allow_empty {
        return Err(input("empty victim set"));
    }
    let sensors = match &c.sensors {
        Some(s) => {
            let mut out = Vec::new();
            for b in bus_list(s)? {
                let x = Sensor::from_bus(&case, b)?;
                if !out.contains(&x) {
                    out.push(x);
                }
            }
            out
        }
        None => (0..case.n_gen()).map(Sensor::Gen).collect(),
    };
    Ok(Setup { case, params, victims, sensors })
}

fn all_loads(case: &GridCase) -> Vec<usize> {
    (0..case.n_load()).collect()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Res<()> {
    std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    std::fs::write(&p, bytes).map_err(|e| input(format!("{}: {e}", p.display())))
}

fn opt(x: Option<f64>) -> Cell {
    x.map_or(Cell::S(String::new()), Cell::F)
}

// ---------------------------------------------------------------------------
// Commands

fn analyze_dlaa(a: &DlaaArgs) -> Res<()> {
    let st = setup(&a.common, all_loads, true, false)?;
    let (case, params) = (&st.case, &st.params);
    let lbus = case.load_buses();
    let (_, pencil) = build(case, params, &AttackSpec::none(case))?;
    let sol = eigensolve(&pencil)?;
    let om = params.omega_max_pu();
    let p_lv = case.vulnerable();
    let oracle = if a.nonlinear { GainOracle::nonlinear() } else { GainOracle::Linear };

    let ranked = rank_pairs(case, &sol, &st.victims, &st.sensors);
    let truth: Vec<Option<f64>> = ranked
        .par_iter()
        .map(|p| match p.khat {
            Some(k) => search_true_gain(case, params, p.victim, p.sensor, k, oracle, 1e-4, 8),
            None => Ok(None),
        })
        .collect::<Result<_, _>>()?;
    let eta = |kt: Option<f64>, kh: Option<f64>| match (kt, kh) {
        (Some(t), Some(h)) => Some(((t - h) / t).abs()),
        _ => None,
    };

    let mut t = Table::new(["rank", "victim_bus", "sensor_bus", "k_hat", "k_true", "eta", "within_budget"]);
    for (r, (p, kt)) in ranked.iter().zip(&truth).enumerate() {
        let budget = p.khat.map(|k| 2.0 * k * om <= p_lv[p.victim]);
        t.push(vec![
            (r + 1).into(),
            lbus[p.victim].into(),
            p.sensor.bus(case).into(),
            opt(p.khat),
            opt(*kt),
            opt(eta(*kt, p.khat)),
            budget.map_or(Cell::S(String::new()), Cell::B),
        ]);
    }
    write(&a.common.out_dir, "pairs.csv", &write_table(&t))?;

    let mut e = Table::new(["index", "re", "im"]);
    for (j, l) in sol.lambda.iter().enumerate() {
        e.push(vec![j.into(), l.re.into(), l.im.into()]);
    }
    write(&a.common.out_dir, "eigenvalues.csv", &write_table(&e))?;

    let Some(best) = ranked.first().filter(|p| p.khat.is_some()) else {
        log::warn!("no selected pair can destabilize the system to first order");
        write(&a.common.out_dir, "least_effort.csv", &write_table(&Table::new(["victim_bus", "sensor_bus", "k_hat", "k_true", "eta"])))?;
        return Ok(());
    };
    let mut le = Table::new(["victim_bus", "sensor_bus", "k_hat", "k_true", "eta"]);
    le.push(vec![lbus[best.victim].into(), best.sensor.bus(case).into(), opt(best.khat), opt(truth[0]), opt(eta(truth[0], best.khat))]);
    write(&a.common.out_dir, "least_effort.csv", &write_table(&le))?;

    // predicted vs true dominant real part along the least-effort pair
    let kmax = a.gain.unwrap_or(2.0 * best.khat.unwrap());
    if !(kmax > 0.0) {
        return Err(input("--gain must be positive"));
    }
    let table = sensitivity_table(&sol, &[best.victim], &[best.sensor]);
    let rows: Vec<(f64, f64, f64)> = (0..=40)
        .into_par_iter()
        .map(|i| {
            let k = kmax * i as f64 / 40.0;
            let pred = predict_spectrum(&sol, &table, &[(best.victim, best.sensor, k)]).max_real();
            let mut atk = AttackSpec::none(case);
            atk.exploration = true;
            atk.set_gain(best.victim, best.sensor, k);
            let (_, p) = build(case, params, &atk)?;
            Ok((k, pred, max_real_part(&p)?))
        })
        .collect::<Result<_, Error>>()?;
    let mut sw = Table::new(["gain", "predicted_max_real", "true_max_real"]);
    for (k, p, t) in rows {
        sw.push(vec![k.into(), p.into(), t.into()]);
    }
    write(&a.common.out_dir, "sweep.csv", &write_table(&sw))
}

fn analyze_slaa(a: &SlaaArgs) -> Res<()> {
    let st = setup(&a.common, all_loads, false, false)?;
    let (case, params) = (&st.case, &st.params);
    if !(a.horizon > 0.0) {
        return Err(input("--horizon must be positive"));
    }
    let (lbus, gbus) = (case.load_buses(), case.gen_buses());
    let (n, ng) = (case.n(), case.n_gen());
    // the spectrum does not depend on ω_max, so a zero override only affects the step table
    let mut base = params.clone();
    base.omega_max = base.omega_max.max(f64::MIN_POSITIVE);
    let (_, pencil) = build(case, &base, &AttackSpec::none(case))?;
    let sol = eigensolve(&pencil)?;
    let om = params.omega_max_pu();
    let p_lv = case.vulnerable();
    let search = PeakSearch { horizon: a.horizon, ..Default::default() };

    let pairs: Vec<(usize, usize)> = st.victims.iter().flat_map(|&v| (0..ng).map(move |g| (v, g))).collect();
    let fs = pairs.par_iter().map(|&(v, g)| influence(&sol, v, n + g, search)).collect::<Result<Vec<_>, _>>()?;

    let mut peaks = Table::new(["load_bus", "gen_bus", "t_star", "peak", "flag", "min_step", "infeasible", "degenerate"]);
    let mut per_load: Vec<(usize, Option<(f64, usize)>, bool)> = Vec::new();
    for (&(v, g), f) in pairs.iter().zip(&fs) {
        let ms = min_unsafe_step(f, om, p_lv[v]);
        peaks.push(vec![
            lbus[v].into(),
            gbus[g].into(),
            f.t_star.into(),
            f.peak.into(),
            f.flag.as_str().into(),
            opt(ms.eps),
            ms.infeasible.into(),
            ms.degenerate.into(),
        ]);
        if per_load.last().map_or(true, |r| r.0 != v) {
            per_load.push((v, None, ms.degenerate));
        }
        let row = per_load.last_mut().unwrap();
        if let Some(e) = ms.eps {
            if row.1.map_or(true, |(b, _)| e < b) {
                row.1 = Some((e, g));
            }
        }
    }
    write(&a.common.out_dir, "peaks.csv", &write_table(&peaks))?;

    let mut steps = Table::new(["load_bus", "vulnerable", "min_step", "gen_bus", "feasible", "degenerate"]);
    for (v, best, deg) in &per_load {
        steps.push(vec![
            lbus[*v].into(),
            p_lv[*v].into(),
            opt(best.map(|b| b.0)),
            best.map_or(Cell::S(String::new()), |b| gbus[b.1].into()),
            best.is_some_and(|b| b.0 <= p_lv[*v]).into(),
            (*deg).into(),
        ]);
    }
    write(&a.common.out_dir, "min_steps.csv", &write_table(&steps))?;

    // least effort: the largest |peak| needs the smallest step
    let mut le = Table::new(["load_bus", "gen_bus", "peak", "t_star", "min_step"]);
    let mut top: Option<usize> = None;
    for (k, f) in fs.iter().enumerate() {
        if top.map_or(true, |b| f.peak.abs() > fs[b].peak.abs()) {
            top = Some(k);
        }
    }
    if let Some(k) = top {
        let ((v, g), f) = (pairs[k], &fs[k]);
        le.push(vec![lbus[v].into(), gbus[g].into(), f.peak.into(), f.t_star.into(), opt(min_unsafe_step(f, om, p_lv[v]).eps)]);
    }
    write(&a.common.out_dir, "least_effort.csv", &write_table(&le))?;

    let mut header = vec!["t".to_string()];
    header.extend(pairs.iter().map(|&(v, g)| format!("f_{}_{}", lbus[v], gbus[g])));
    let mut curves = Table::new(header);
    let samples = (a.horizon / 0.1).round() as usize;
    for i in 0..=samples {
        let t = a.horizon * i as f64 / samples as f64;
        let mut row: Vec<Cell> = vec![t.into()];
        row.extend(fs.iter().map(|f| Cell::F(f.eval(t))));
        curves.push(row);
    }
    write(&a.common.out_dir, "curves.csv", &write_table(&curves))
}

fn cmd_defend(a: &DefendArgs) -> Res<()> {
    let st = setup(&a.common, |c| {
        let p = c.vulnerable();
        (0..c.n_load()).filter(|&v| p[v] > 0.0).collect()
    }, true, false)?;
    let (case, params) = (&st.case, &st.params);
    let mode = match a.mode {
        ModeArg::Dlaa => Mode::Dlaa,
        ModeArg::Slaa => Mode::Slaa,
        ModeArg::Combined => Mode::Combined,
    };
    let form = match a.form {
        FormArg::Robust => DlaaForm::Robust,
        FormArg::Split => DlaaForm::Split,
    };
    if !(a.margin >= 0.0) || !(a.horizon > 0.0) {
        return Err(input("--margin must be nonnegative and --horizon positive"));
    }
    let opts = DefenseOptions { margin: a.margin, form, horizon: a.horizon, ..Default::default() };
    let plan = defend(case, params, &st.victims, &st.sensors, mode, &opts)?;

    let lbus = case.load_buses();
    let p_lv = case.vulnerable();
    let mut t = Table::new(["load_bus", "vulnerable", "protected", "residual"]);
    for (k, &v) in plan.victims.iter().enumerate() {
        t.push(vec![lbus[v].into(), p_lv[v].into(), plan.protected[k].into(), plan.residual[k].into()]);
    }
    write(&a.common.out_dir, "plan.csv", &write_table(&t))?;
    let cert = certificate_json(&plan, mode, form, &st, params.omega_max_pu());
    let mut text = serde_json::to_string_pretty(&cert).expect("plain json");
    text.push('\n');
    write(&a.common.out_dir, "certificate.json", text.as_bytes())
}

fn certificate_json(plan: &DefensePlan<f64>, mode: Mode, form: DlaaForm, st: &Setup, omega_max_pu: f64) -> serde_json::Value {
    let c = &plan.certificate;
    let lp = c.lp.map(|l| {
        json!({
            "primal_objective": l.primal_objective,
            "dual_objective": l.dual_objective,
            "gap": l.gap,
            "primal_infeasibility": l.primal_infeasibility,
            "dual_infeasibility": l.dual_infeasibility,
        })
    });
    json!({
        "mode": format!("{mode:?}").to_lowercase(),
        "form": format!("{form:?}").to_lowercase(),
        "victims": plan.victims.iter().map(|&v| st.case.load_buses()[v]).collect::<Vec<_>>(),
        "sensors": st.sensors.iter().map(|s| s.bus(&st.case)).collect::<Vec<_>>(),
        "objective": plan.objective,
        "margin": plan.margin,
        "peak_scale": plan.peak_scale,
        "escalations": plan.escalations,
        "omega_max_pu": omega_max_pu,
        "predicted_max_real": c.predicted_max_real,
        "true_max_real": c.true_max_real,
        "splits_checked": c.splits_checked,
        "decays": c.decays,
        "predicted_peak": c.predicted_peak,
        "simulated_peak": c.simulated_peak,
        "lp": lp,
    })
}

fn simulate(a: &SimArgs) -> Res<()> {
    let st = setup(&a.common, |_| Vec::new(), true, true)?;
    if !(a.gain >= 0.0) || !a.step.is_finite() || !(a.horizon > 0.0) {
        return Err(input("--gain must be nonnegative, --step finite and --horizon positive"));
    }
    let case = &st.case;
    let params = &st.params;
    let mut atk = AttackSpec::none(case);
    atk.exploration = a.exploration;
    for &v in &st.victims {
        atk.add_victim(v);
        if a.step != 0.0 {
            atk.set_step(v, a.step);
            if a.exploration {
                atk.p_lv[v] = atk.p_lv[v].max(a.step);
            }
        }
        for &s in &st.sensors {
            atk.add_sensor(s);
            if a.gain != 0.0 {
                atk.set_gain(v, s, a.gain);
            }
        }
    }
    atk.validate(case, params)?;
    if a.nonlinear && a.step != 0.0 && !a.full_terms {
        return Err(input("the nonlinear model without --full-terms carries no load step; pass --full-terms"));
    }
    let n = case.n();
    let om = params.omega_max_pu();
    let opts = SimOptions::default().with_horizon(a.horizon);
    let z0 = DVector::zeros(2 * n);
    let tr = if a.nonlinear {
        integrate_nonlinear(&NonlinearModel::new(case, params, &atk, a.full_terms), &z0, &opts)?
    } else {
        let (model, _) = build(case, params, &atk)?;
        integrate_linear(&model, &model.f_step, &z0, om, &opts)?
    };

    let ng = case.n_gen();
    let ids: Vec<usize> = case.buses.iter().map(|b| b.id).collect();
    let mut header = vec!["t".to_string()];
    header.extend(ids.iter().enumerate().map(|(i, b)| format!("{}_{b}", if i < ng { "delta" } else { "theta" })));
    header.extend(ids.iter().enumerate().map(|(i, b)| format!("{}_{b}", if i < ng { "omega" } else { "phi" })));
    let mut t = Table::new(header);
    for (r, time) in tr.times.iter().enumerate() {
        let mut row: Vec<Cell> = vec![(*time).into()];
        row.extend(tr.states.row(r).iter().map(|x| Cell::F(*x)));
        t.push(row);
    }
    write(&a.common.out_dir, "trajectory.csv", &write_table(&t))?;

    let ev = tr.events;
    let mut e = Table::new(["model", "unstable", "onset", "first_crossing", "max_gen_omega", "omega_max_pu", "end_time"]);
    e.push(vec![
        (if a.nonlinear { "nonlinear" } else { "linear" }).into(),
        ev.unstable.into(),
        opt(ev.onset),
        opt(ev.first_crossing),
        tr.max_gen_omega().into(),
        om.into(),
        opt(tr.times.last().copied()),
    ]);
    write(&a.common.out_dir, "events.csv", &write_table(&e))?;
    Ok(())
}
