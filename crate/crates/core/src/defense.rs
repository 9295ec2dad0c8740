//! Minimum protected-load plans against dynamic and static load-altering attacks.
//!
//! A plan protects P_v of the vulnerable load at each victim. What remains, r_v = p^{LV}_v − P_v,
//! caps the attacker: a feedback budget Σ_s K_{v,s} ω_max = r_v / 2 or a step ε_v = r_v.
//! Every plan is checked against the true model before it is returned.

use crate::case_io::{DynamicParams, GridCase};
use crate::eigen::{eigensolve, max_real_part, EigenSolution};
use crate::error::{Error, Result};
use crate::grid::{build, AttackSpec, Sensor};
use crate::lp::{solve, LinearProgram, LpCertificate};
use crate::response::{influence, PeakSearch};
use crate::scalar::{lit, Scalar};
use crate::sensitivity::{sensitivity_table, GainSensitivity};
use crate::simulate::{integrate_linear, SimOptions};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Dlaa,
    Slaa,
    Combined,
}

/// How the DLAA constraints treat the attacker's split of its budget across sensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlaaForm {
    /// Guard every split: each victim is charged its most harmful sensor per eigenvalue.
    Robust,
    /// Gains are LP variables under the budget equality, as the LP is usually written.
    Split,
}

#[derive(Debug, Clone, Copy)]
pub struct DefenseOptions<T> {
    /// Required Re ν̂ ≤ −margin.
    pub margin: T,
    pub form: DlaaForm,
    pub random_splits: usize,
    pub seed: u64,
    pub max_escalations: usize,
    /// Slack on the simulated SLAA peak.
    pub peak_slack: T,
    pub horizon: T,
}

impl<T: Scalar> Default for DefenseOptions<T> {
    fn default() -> Self {
        DefenseOptions {
            margin: lit(1e-3),
            form: DlaaForm::Robust,
            random_splits: 16,
            seed: 0x5eed,
            max_escalations: 8,
            peak_slack: lit(1e-4),
            horizon: lit(60.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanCertificate<T> {
    /// Largest sensitivity-predicted Re ν̂ at the defended worst-case gains.
    pub predicted_max_real: Option<T>,
    /// Largest true Re ν over all checked splits.
    pub true_max_real: Option<T>,
    pub splits_checked: usize,
    /// Whether a perturbed trajectory under the worst split decays.
    pub decays: Option<bool>,
    /// Predicted |Σ_v ε_v f_{v,n}(t*)| maximized over outputs.
    pub predicted_peak: Option<T>,
    /// Simulated max generator |ω| under the worst-case step.
    pub simulated_peak: Option<T>,
    pub lp: Option<LpCertificate<T>>,
}

#[derive(Debug, Clone)]
pub struct DefensePlan<T: Scalar> {
    pub mode: Mode,
    /// Victim load indices.
    pub victims: Vec<usize>,
    pub protected: Vec<T>,
    pub residual: Vec<T>,
    pub objective: T,
    /// DLAA margin after escalation.
    pub margin: T,
    /// Fraction of ω_max the SLAA rows were tightened to.
    pub peak_scale: T,
    pub escalations: usize,
    pub certificate: PlanCertificate<T>,
}

/// DLAA inputs: base spectrum and the sensitivity rows over victims × sensors.
pub struct DlaaData<'a, T: Scalar> {
    pub sol: &'a EigenSolution<T>,
    pub table: &'a [GainSensitivity<T>],
    pub sensors: &'a [Sensor],
}

/// SLAA inputs: signed peaks F[v][n] = f_{v,n}(t*_{v,n}) for victims × generator outputs.
pub struct SlaaData<T> {
    pub peaks: Vec<Vec<T>>,
}

// Eigen rows: one per eigenvalue with Im ≥ 0 (conjugates share real parts).
fn eigen_rows<T: Scalar>(sol: &EigenSolution<T>) -> Vec<usize> {
    (0..sol.len()).filter(|&j| sol.lambda[j].im >= T::zero()).collect()
}

/// Worst-case weight max(0, max_s Re ∂λ_j/∂K_{v,s} / ω_max) per (row, victim).
pub fn robust_weights<T: Scalar>(d: &DlaaData<T>, n_victims: usize, omega_max: T) -> Vec<Vec<T>> {
    let ns = d.sensors.len();
    eigen_rows(d.sol)
        .iter()
        .map(|&j| {
            (0..n_victims)
                .map(|vi| (0..ns).map(|si| d.table[vi * ns + si].dlambda[j].re / omega_max).fold(T::zero(), |m, x| m.max(x)))
                .collect()
        })
        .collect()
}

struct Built<T: Scalar> {
    lp: LinearProgram<T>,
}

fn dlaa_rows<T: Scalar>(lp: &mut LinearProgram<T>, d: &DlaaData<T>, p_lv: &[T], omega_max: T, margin: T, form: DlaaForm) {
    let nv = p_lv.len();
    let ns = d.sensors.len();
    let nvar = lp.n_vars();
    let half = lit::<T>(0.5);
    match form {
        DlaaForm::Robust => {
            let w = robust_weights(d, nv, omega_max);
            for (k, &j) in eigen_rows(d.sol).iter().enumerate() {
                // Re λ_j + Σ_v w_jv (p_v − P_v)/2 ≤ −margin
                let mut row = vec![T::zero(); nvar];
                let mut rhs = -margin - d.sol.lambda[j].re;
                for v in 0..nv {
                    row[v] = -w[k][v] * half;
                    rhs -= w[k][v] * p_lv[v] * half;
                }
                lp.add_le(&row, rhs);
            }
        }
        DlaaForm::Split => {
            for &j in &eigen_rows(d.sol) {
                let mut row = vec![T::zero(); nvar];
                for v in 0..nv {
                    for s in 0..ns {
                        row[nv + v * ns + s] = d.table[v * ns + s].dlambda[j].re;
                    }
                }
                lp.add_le(&row, -margin - d.sol.lambda[j].re);
            }
            for v in 0..nv {
                // Σ_s K ω + P/2 = p/2
                let mut row = vec![T::zero(); nvar];
                row[v] = half;
                for s in 0..ns {
                    row[nv + v * ns + s] = omega_max;
                }
                lp.add_eq(&row, p_lv[v] * half);
            }
        }
    }
}

fn slaa_rows<T: Scalar>(lp: &mut LinearProgram<T>, s: &SlaaData<T>, p_lv: &[T], limit: T) {
    let nv = p_lv.len();
    let nvar = lp.n_vars();
    let nout = s.peaks.first().map_or(0, |r| r.len());
    for n in 0..nout {
        // |Σ_v F_vn (p_v − P_v)| ≤ limit
        let base = (0..nv).fold(T::zero(), |a, v| a + s.peaks[v][n] * p_lv[v]);
        let mut up = vec![T::zero(); nvar];
        let mut dn = vec![T::zero(); nvar];
        for v in 0..nv {
            up[v] = -s.peaks[v][n];
            dn[v] = s.peaks[v][n];
        }
        lp.add_le(&up, limit - base);
        lp.add_le(&dn, limit + base);
    }
}

fn program<T: Scalar>(dl: Option<&DlaaData<T>>, sl: Option<&SlaaData<T>>, p_lv: &[T], omega_max: T, margin: T, peak_limit: T, form: DlaaForm) -> Built<T> {
    let nv = p_lv.len();
    let ns = dl.map_or(0, |d| d.sensors.len());
    let split = dl.is_some() && form == DlaaForm::Split;
    let nvar = if split { nv + nv * ns } else { nv };
    let mut c = DVector::zeros(nvar);
    for v in 0..nv {
        c[v] = T::one();
    }
    let mut lp = LinearProgram::new(c);
    for v in 0..nv {
        lp.upper[v] = Some(p_lv[v]);
    }
    if let Some(d) = dl {
        dlaa_rows(&mut lp, d, p_lv, omega_max, margin, form);
    }
    if let Some(s) = sl {
        slaa_rows(&mut lp, s, p_lv, peak_limit);
    }
    Built { lp }
}

/// Raw LP solution: protected load per victim, optimal gains for the split form, certificate.
#[derive(Debug, Clone)]
pub struct LpPlan<T: Scalar> {
    pub protected: Vec<T>,
    pub gains: Option<Vec<T>>,
    pub objective: T,
    pub certificate: LpCertificate<T>,
}

/// Solves the DLAA, SLAA or combined program without verification.
pub fn solve_plan<T: Scalar>(dl: Option<&DlaaData<T>>, sl: Option<&SlaaData<T>>, p_lv: &[T], omega_max: T, margin: T, peak_limit: T, form: DlaaForm) -> Result<LpPlan<T>> {
    let nv = p_lv.len();
    if p_lv.iter().any(|p| *p < T::zero()) {
        return Err(Error::Params("vulnerable load must be nonnegative".into()));
    }
    let b = program(dl, sl, p_lv, omega_max, margin, peak_limit, form);
    let s = solve(&b.lp)?;
    // clip solver round-off into the box
    let protected: Vec<T> = (0..nv).map(|v| s.x[v].max(T::zero()).min(p_lv[v])).collect();
    let gains = (b.lp.n_vars() > nv).then(|| s.x.iter().skip(nv).copied().collect());
    Ok(LpPlan { objective: protected.iter().fold(T::zero(), |a, p| a + *p), protected, gains, certificate: s.certificate })
}

/// Closed-form DLAA protection for one victim and one sensor: max(0, p − 2 ω_max K̂).
pub fn single_pair_dlaa<T: Scalar>(p_lv: T, omega_max: T, khat: Option<T>) -> T {
    match khat {
        Some(k) => (p_lv - lit::<T>(2.0) * omega_max * k).max(T::zero()),
        None => T::zero(),
    }
}

/// Closed-form SLAA protection for one victim and one output: max(0, p − ω_max/|F|).
pub fn single_pair_slaa<T: Scalar>(p_lv: T, omega_max: T, peak: T) -> T {
    if peak == T::zero() {
        return T::zero();
    }
    (p_lv - omega_max / peak.abs()).max(T::zero())
}

/// Signed influence peaks of each victim on each generator frequency.
pub fn slaa_peaks<T: Scalar>(sol: &EigenSolution<T>, victims: &[usize], search: PeakSearch<T>) -> Result<SlaaData<T>> {
    let n = sol.n();
    let mut peaks = Vec::with_capacity(victims.len());
    for &v in victims {
        let row = (0..sol.ng).map(|g| influence(sol, v, n + g, search).map(|f| f.peak)).collect::<Result<Vec<T>>>()?;
        peaks.push(row);
    }
    Ok(SlaaData { peaks })
}

// A gain configuration: per victim, weights over sensors summing to one.
type Split<T> = Vec<Vec<T>>;

fn splits<T: Scalar>(d: &DlaaData<T>, nv: usize, rng: &mut ChaCha8Rng, n_random: usize) -> Vec<Split<T>> {
    let ns = d.sensors.len();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for s in 0..ns {
        out.push(vec![s; nv]);
    }
    // for every eigenvalue, each victim on its most harmful sensor
    for &j in &eigen_rows(d.sol) {
        let pick: Vec<usize> = (0..nv)
            .map(|v| {
                (0..ns).fold(0, |b, s| if d.table[v * ns + s].dlambda[j].re > d.table[v * ns + b].dlambda[j].re { s } else { b })
            })
            .collect();
        if !out.contains(&pick) {
            out.push(pick);
        }
    }
    let mut cfgs: Vec<Split<T>> = out
        .into_iter()
        .map(|pick| pick.iter().map(|&s| (0..ns).map(|k| if k == s { T::one() } else { T::zero() }).collect()).collect())
        .collect();
    for _ in 0..n_random {
        cfgs.push(
            (0..nv)
                .map(|_| {
                    let w: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>() + 1e-12).collect();
                    let t: f64 = w.iter().sum();
                    w.iter().map(|x| lit(x / t)).collect()
                })
                .collect(),
        );
    }
    cfgs
}

fn attack_for<T: Scalar>(case: &GridCase<T>, victims: &[usize], sensors: &[Sensor], residual: &[T], omega_max: T, split: &Split<T>) -> AttackSpec<T> {
    let mut a = AttackSpec::none(case);
    a.exploration = true;
    for (vi, &v) in victims.iter().enumerate() {
        a.add_victim(v);
        a.p_lv[v] = residual[vi];
        for (si, &s) in sensors.iter().enumerate() {
            a.add_sensor(s);
            let k = residual[vi] * lit(0.5) * split[vi][si] / omega_max;
            if k > T::zero() {
                a.set_gain(v, s, k);
            }
        }
    }
    a
}

/// Outcome of checking a DLAA plan against the true attacked pencil.
#[derive(Debug, Clone, Copy)]
pub struct DlaaCheck<T> {
    pub worst_real: T,
    pub splits: usize,
    pub decays: bool,
}

/// True-eigensolve check over concentrated and random budget splits, plus a simulated
/// decay check under the worst one.
pub fn verify_dlaa<T: Scalar>(case: &GridCase<T>, params: &DynamicParams<T>, d: &DlaaData<T>, victims: &[usize], residual: &[T], opts: &DefenseOptions<T>) -> Result<DlaaCheck<T>> {
    let om = params.omega_max_pu();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cfgs = splits(d, victims.len(), &mut rng, opts.random_splits);
    let mut worst = (T::min_value().unwrap(), 0);
    for (k, cfg) in cfgs.iter().enumerate() {
        let a = attack_for(case, victims, d.sensors, residual, om, cfg);
        let (_, p) = build(case, params, &a)?;
        let r = max_real_part(&p)?;
        if r > worst.0 {
            worst = (r, k);
        }
    }
    // perturbed trajectory under the worst split
    let a = attack_for(case, victims, d.sensors, residual, om, &cfgs[worst.1]);
    let (model, _) = build(case, params, &a)?;
    let n = case.n();
    let mut z0 = DVector::zeros(2 * n);
    z0[n] = lit(1e-3);
    let so = SimOptions { horizon: opts.horizon, dt: lit(0.01), stop_on_cap: true, ..Default::default() };
    let tr = integrate_linear(&model, &DVector::zeros(n), &z0, om, &so)?;
    let w = |r: usize| (0..case.n_gen()).fold(T::zero(), |m, g| m.max(tr.states[(r, n + g)].abs()));
    let rows = tr.states.nrows();
    let q = rows / 4;
    let head = (0..q.max(1)).fold(T::zero(), |m, r| m.max(w(r)));
    let tail = (rows - q.max(1)..rows).fold(T::zero(), |m, r| m.max(w(r)));
    let decays = rows == (opts.horizon / so.dt).round().to_f64() as usize + 1 && tail < head;
    Ok(DlaaCheck { worst_real: worst.0, splits: cfgs.len(), decays })
}

/// Simulated max generator |ω| when every victim steps by its residual.
pub fn verify_slaa<T: Scalar>(case: &GridCase<T>, params: &DynamicParams<T>, victims: &[usize], residual: &[T], horizon: T) -> Result<T> {
    let mut a = AttackSpec::none(case);
    for (vi, &v) in victims.iter().enumerate() {
        a.add_victim(v);
        a.p_lv[v] = residual[vi];
        a.set_step(v, residual[vi]);
    }
    let (model, _) = build(case, params, &a)?;
    let n = case.n();
    let so = SimOptions { horizon, dt: lit(1e-3), stop_on_cap: false, ..Default::default() };
    let tr = integrate_linear(&model, &model.f_step, &DVector::zeros(2 * n), params.omega_max_pu(), &so)?;
    Ok(tr.max_gen_omega())
}

/// Full pipeline: eigensolve, LP, verification with escalation.
///
/// On a failed DLAA check the margin doubles; on a failed SLAA check the peak limit is
/// scaled by ω_max / simulated peak. Both repeat up to `max_escalations` times.
pub fn defend<T: Scalar>(case: &GridCase<T>, params: &DynamicParams<T>, victims: &[usize], sensors: &[Sensor], mode: Mode, opts: &DefenseOptions<T>) -> Result<DefensePlan<T>> {
    if victims.is_empty() {
        return Err(Error::Attack("empty victim set".into()));
    }
    if matches!(mode, Mode::Dlaa | Mode::Combined) && sensors.is_empty() {
        return Err(Error::Attack("empty sensor set".into()));
    }
    let base = AttackSpec::none(case);
    let (_, pencil) = build(case, params, &base)?;
    let sol = eigensolve(&pencil)?;
    let om = params.omega_max_pu();
    let p_lv: Vec<T> = victims.iter().map(|&v| base.p_lv[v]).collect();
    let table = sensitivity_table(&sol, victims, sensors);
    let dl = DlaaData { sol: &sol, table: &table, sensors };
    let use_d = matches!(mode, Mode::Dlaa | Mode::Combined);
    let use_s = matches!(mode, Mode::Slaa | Mode::Combined);
    let sl = if use_s { Some(slaa_peaks(&sol, victims, PeakSearch { horizon: opts.horizon, ..Default::default() })?) } else { None };
    let mut margin = opts.margin;
    let mut scale = T::one();
    let mut escalations = 0;
    loop {
        let plan = solve_plan(use_d.then_some(&dl), sl.as_ref(), &p_lv, om, margin, om * scale, opts.form)?;
        let residual: Vec<T> = (0..victims.len()).map(|v| (p_lv[v] - plan.protected[v]).max(T::zero())).collect();
        let mut cert = PlanCertificate {
            predicted_max_real: None,
            true_max_real: None,
            splits_checked: 0,
            decays: None,
            predicted_peak: None,
            simulated_peak: None,
            lp: Some(plan.certificate),
        };
        let mut ok = true;
        let mut d_fail = false;
        if use_d {
            let w = robust_weights(&dl, victims.len(), om);
            let predicted = eigen_rows(&sol)
                .iter()
                .enumerate()
                .map(|(k, &j)| (0..victims.len()).fold(sol.lambda[j].re, |a, v| a + w[k][v] * residual[v] * lit(0.5)))
                .fold(T::min_value().unwrap(), |m, x| m.max(x));
            let chk = verify_dlaa(case, params, &dl, victims, &residual, opts)?;
            cert.predicted_max_real = Some(predicted);
            cert.true_max_real = Some(chk.worst_real);
            cert.splits_checked = chk.splits;
            cert.decays = Some(chk.decays);
            if chk.worst_real >= T::zero() || !chk.decays {
                ok = false;
                d_fail = true;
            }
        }
        let mut observed = T::zero();
        if let Some(s) = &sl {
            let nout = s.peaks.first().map_or(0, |r| r.len());
            let pred = (0..nout)
                .map(|n| (0..victims.len()).fold(T::zero(), |a, v| a + s.peaks[v][n] * residual[v]).abs())
                .fold(T::zero(), |m, x| m.max(x));
            observed = verify_slaa(case, params, victims, &residual, opts.horizon)?;
            cert.predicted_peak = Some(pred);
            cert.simulated_peak = Some(observed);
            if observed > om + opts.peak_slack {
                ok = false;
            }
        }
        if ok {
            return Ok(DefensePlan {
                mode,
                victims: victims.to_vec(),
                objective: plan.objective,
                protected: plan.protected,
                residual,
                margin,
                peak_scale: scale,
                escalations,
                certificate: cert,
            });
        }
        if escalations >= opts.max_escalations {
            return Err(Error::Verification(format!(
                "plan still fails after {escalations} escalations (worst Re ν = {:?}, simulated peak = {:?})",
                cert.true_max_real.map(|x| x.to_f64()),
                cert.simulated_peak.map(|x| x.to_f64())
            )));
        }
        escalations += 1;
        if d_fail {
            margin *= lit(2.0);
        }
        if use_s && observed > om + opts.peak_slack {
            scale *= om / observed;
        }
        log::info!("defense verification failed; escalation {escalations} (margin {}, peak scale {})", margin, scale);
    }
}
