//! Time-domain ground truth: linear descriptor integration, the nonlinear swing model,
//! an instability detector and bisection oracles.
//!
//! Both models integrate x = [δ; θ; ω] and solve the load rows for θ̇ at every
//! evaluation; φ = θ̇ is reconstructed for output.

use crate::case_io::{DynamicParams, GridCase};
use crate::eigen::max_real_part;
use crate::error::{Error, Result};
use crate::grid::{build, build_susceptance, AttackSpec, SecondOrderModel, Sensor};
use crate::ode::{dopri5, OdeOptions};
use crate::scalar::{lit, Scalar};
use nalgebra::{DMatrix, DVector, LU};

/// Sampled state with columns δ, θ, ω, φ.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub ng: usize,
    pub nl: usize,
    pub times: Vec<T>,
    pub states: DMatrix<T>,
    pub events: Events<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Events<T> {
    /// First sample where some generator |ω| exceeds ω_max (p.u.).
    pub first_crossing: Option<T>,
    pub unstable: bool,
    pub onset: Option<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn n(&self) -> usize {
        self.ng + self.nl
    }
    /// Generator frequency deviation ω_g over time.
    pub fn omega(&self, g: usize) -> Vec<T> {
        self.states.column(self.n() + g).iter().copied().collect()
    }
    /// max over samples and generators of |ω|.
    pub fn max_gen_omega(&self) -> T {
        let n = self.n();
        let mut m = T::zero();
        for r in 0..self.states.nrows() {
            for g in 0..self.ng {
                m = m.max(self.states[(r, n + g)].abs());
            }
        }
        m
    }
}

/// Detector constants.
#[derive(Debug, Clone, Copy)]
pub struct Detector<T> {
    pub window: T,
    pub growth: T,
    pub consecutive: usize,
    /// Hard cap as a multiple of ω_max.
    pub cap: T,
    pub floor: T,
}

impl<T: Scalar> Default for Detector<T> {
    fn default() -> Self {
        Detector { window: lit(5.0), growth: lit(0.05), consecutive: 3, cap: lit(10.0), floor: lit(1e-12) }
    }
}

/// Flags instability from the generator-frequency envelope.
pub fn detect_instability<T: Scalar>(times: &[T], gen_omega_abs: &[T], omega_max_pu: T, det: &Detector<T>) -> (bool, Option<T>) {
    let cap = det.cap * omega_max_pu;
    let cap_hit = times.iter().zip(gen_omega_abs).find(|(_, w)| **w > cap).map(|(t, _)| *t);
    // envelopes of complete windows
    let mut env: Vec<(T, T)> = Vec::new();
    if let Some(&t0) = times.first() {
        let mut start = t0;
        let mut cur = T::zero();
        let mut any = false;
        for (t, w) in times.iter().zip(gen_omega_abs) {
            while *t >= start + det.window {
                if any {
                    env.push((start, cur));
                }
                start += det.window;
                cur = T::zero();
                any = false;
            }
            cur = cur.max(*w);
            any = true;
        }
    }
    let mut run = 0;
    let mut growth_onset = None;
    for k in 1..env.len() {
        let (prev, cur) = (env[k - 1].1, env[k].1);
        if prev > det.floor && cur > prev * (T::one() + det.growth) {
            run += 1;
            if run >= det.consecutive {
                growth_onset = Some(env[k - det.consecutive].0);
                break;
            }
        } else {
            run = 0;
        }
    }
    match (cap_hit, growth_onset) {
        (None, None) => (false, None),
        (Some(a), None) => (true, Some(a)),
        (None, Some(b)) => (true, Some(b)),
        (Some(a), Some(b)) => (true, Some(a.min(b))),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions<T> {
    pub horizon: T,
    /// Output sampling interval.
    pub dt: T,
    pub ode: OdeOptions<T>,
    pub detector: Detector<T>,
    /// Stop as soon as the hard cap is exceeded.
    pub stop_on_cap: bool,
}

impl<T: Scalar> Default for SimOptions<T> {
    fn default() -> Self {
        SimOptions { horizon: lit(60.0), dt: lit(0.01), ode: OdeOptions::default(), detector: Detector::default(), stop_on_cap: true }
    }
}

impl<T: Scalar> SimOptions<T> {
    pub fn with_horizon(mut self, h: T) -> Self {
        self.horizon = h;
        self
    }
    fn grid(&self) -> Vec<T> {
        let n = (self.horizon / self.dt).round().to_f64() as usize;
        (0..=n).map(|k| self.dt * lit(k as f64)).collect()
    }
}

fn run<T: Scalar, F>(rhs: F, theta_dot: impl Fn(&DVector<T>) -> DVector<T>, x0: &DVector<T>, ng: usize, nl: usize, omega_max_pu: T, opts: &SimOptions<T>) -> Result<Trajectory<T>>
where
    F: FnMut(T, &DVector<T>, &mut DVector<T>),
{
    let n = ng + nl;
    let grid = opts.grid();
    let cap = opts.detector.cap * omega_max_pu;
    let samples = dopri5(rhs, T::zero(), x0, &grid, &opts.ode, |_, x| {
        !opts.stop_on_cap || (0..ng).all(|g| x[n + g].abs() <= cap)
    })?;
    let mut states = DMatrix::zeros(samples.len(), 2 * n);
    let mut times = Vec::with_capacity(samples.len());
    let mut wabs = Vec::with_capacity(samples.len());
    for (r, (t, x)) in samples.iter().enumerate() {
        times.push(*t);
        for i in 0..n + ng {
            states[(r, i)] = x[i];
        }
        let td = theta_dot(x);
        for l in 0..nl {
            states[(r, n + ng + l)] = td[l];
        }
        wabs.push((0..ng).fold(T::zero(), |m, g| m.max(x[n + g].abs())));
    }
    let omax = omega_max_pu;
    let first_crossing = times.iter().zip(&wabs).find(|(_, w)| **w > omax).map(|(t, _)| *t);
    let (unstable, onset) = detect_instability(&times, &wabs, omega_max_pu, &opts.detector);
    Ok(Trajectory { ng, nl, times, states, events: Events { first_crossing, unstable, onset } })
}

/// Integrates ℳü + 𝒞u̇ + 𝒢u = f from z₀ (full 2N state; φ entries are ignored).
pub fn integrate_linear<T: Scalar>(model: &SecondOrderModel<T>, f: &DVector<T>, z0: &DVector<T>, omega_max_pu: T, opts: &SimOptions<T>) -> Result<Trajectory<T>> {
    let (ng, nl) = (model.ng, model.nl);
    let n = ng + nl;
    let cll = model.c.view((ng, ng), (nl, nl)).into_owned();
    let lu = LU::new(cll.clone());
    if nl > 0 && !lu.is_invertible() {
        return Err(Error::SingularPencil("D^L − K^LL is singular".into()));
    }
    let clg = model.c.view((ng, 0), (nl, ng)).into_owned();
    let cgg = model.c.view((0, 0), (ng, ng)).into_owned();
    let cgl = model.c.view((0, ng), (ng, nl)).into_owned();
    let gg = model.g.rows(0, ng).into_owned();
    let gl = model.g.rows(ng, nl).into_owned();
    let minv: Vec<T> = (0..ng).map(|i| T::one() / model.m[(i, i)]).collect();
    let fg = f.rows(0, ng).into_owned();
    let fl = f.rows(ng, nl).into_owned();
    let theta_dot = |x: &DVector<T>| -> DVector<T> {
        if nl == 0 {
            return DVector::zeros(0);
        }
        let u = x.rows(0, n);
        let w = x.rows(n, ng);
        let r = &fl - &gl * u - &clg * w;
        lu.solve(&r).unwrap_or_else(|| DVector::zeros(nl))
    };
    let rhs = |_: T, x: &DVector<T>, dx: &mut DVector<T>| {
        let td = theta_dot(x);
        let u = x.rows(0, n);
        let w = x.rows(n, ng);
        let acc = &fg - &gg * u - &cgg * w - &cgl * &td;
        for g in 0..ng {
            dx[g] = x[n + g];
            dx[n + g] = acc[g] * minv[g];
        }
        for l in 0..nl {
            dx[ng + l] = td[l];
        }
    };
    let x0 = DVector::from_fn(n + ng, |i, _| z0[i]);
    run(rhs, theta_dot, &x0, ng, nl, omega_max_pu, opts)
}

/// The swing model with sine coupling.
///
/// Generator i: M ω̇ = −(D + K^P)ω − K^I δ − Σ_j b_ij sin(δ_i − x_j).
/// Load l: D^L θ̇ = −Σ_j b_lj sin(θ_l − x_j) + Σ_s K^LG ω_s, plus −ε and K^LL θ̇ when
/// `full_terms` is set. b_ij = −B_bus[i][j] is the line susceptance.
#[derive(Debug, Clone)]
pub struct NonlinearModel<T: Scalar> {
    pub ng: usize,
    pub nl: usize,
    pub m: DVector<T>,
    pub damp: DVector<T>,
    pub k_i: DVector<T>,
    pub d_l: DVector<T>,
    /// Off-diagonal susceptances as (i, j, b_ij).
    pub lines: Vec<(usize, usize, T)>,
    pub k_lg: DMatrix<T>,
    pub k_ll: DMatrix<T>,
    pub eps: DVector<T>,
    pub full_terms: bool,
    pub omega_max_pu: T,
}

impl<T: Scalar> NonlinearModel<T> {
    /// No budget validation: bisections need gains beyond it.
    pub fn new(case: &GridCase<T>, params: &DynamicParams<T>, attack: &AttackSpec<T>, full_terms: bool) -> Self {
        let sus = build_susceptance(case);
        let n = case.n();
        let mut lines = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && sus.bbus[(i, j)] != T::zero() {
                    lines.push((i, j, -sus.bbus[(i, j)]));
                }
            }
        }
        NonlinearModel {
            ng: case.n_gen(),
            nl: case.n_load(),
            m: params.m.clone(),
            damp: &params.d_g + &params.k_p,
            k_i: params.k_i.clone(),
            d_l: params.d_l.clone(),
            lines,
            k_lg: attack.k_lg.clone(),
            k_ll: attack.k_ll.clone(),
            eps: attack.eps.clone(),
            full_terms,
            omega_max_pu: params.omega_max_pu(),
        }
    }
}

pub fn integrate_nonlinear<T: Scalar>(nl_model: &NonlinearModel<T>, z0: &DVector<T>, opts: &SimOptions<T>) -> Result<Trajectory<T>> {
    let md = nl_model;
    let (ng, nl) = (md.ng, md.nl);
    let n = ng + nl;
    let mut cl = DMatrix::from_diagonal(&md.d_l);
    if md.full_terms {
        cl -= &md.k_ll;
    }
    let lu = LU::new(cl);
    if nl > 0 && !lu.is_invertible() {
        return Err(Error::SingularPencil("load damping matrix is singular".into()));
    }
    let coupling = |x: &DVector<T>| -> DVector<T> {
        let mut s = DVector::zeros(n);
        for &(i, j, b) in &md.lines {
            s[i] += b * (x[i] - x[j]).sin();
        }
        s
    };
    let theta_dot_with = |x: &DVector<T>, s: &DVector<T>| -> DVector<T> {
        if nl == 0 {
            return DVector::zeros(0);
        }
        let w = x.rows(n, ng);
        let mut r = -s.rows(ng, nl).into_owned() + &md.k_lg * w;
        if md.full_terms {
            r -= &md.eps;
        }
        lu.solve(&r).unwrap_or_else(|| DVector::zeros(nl))
    };
    let theta_dot = |x: &DVector<T>| theta_dot_with(x, &coupling(x));
    let rhs = |_: T, x: &DVector<T>, dx: &mut DVector<T>| {
        let s = coupling(x);
        let td = theta_dot_with(x, &s);
        for g in 0..ng {
            dx[g] = x[n + g];
            dx[n + g] = (-md.damp[g] * x[n + g] - md.k_i[g] * x[g] - s[g]) / md.m[g];
        }
        for l in 0..nl {
            dx[ng + l] = td[l];
        }
    };
    let x0 = DVector::from_fn(n + ng, |i, _| z0[i]);
    run(rhs, theta_dot, &x0, ng, nl, md.omega_max_pu, opts)
}

/// Stability oracle for bisection.
#[derive(Debug, Clone, Copy)]
pub enum GainOracle<T> {
    /// Sign of the dominant true eigenvalue real part.
    Linear,
    /// Detector on the nonlinear model with a probe step (p.u.) at the victim.
    Nonlinear { probe: T, horizon: T },
}

impl<T: Scalar> GainOracle<T> {
    pub fn nonlinear() -> Self {
        GainOracle::Nonlinear { probe: lit(0.1), horizon: lit(300.0) }
    }
}

fn single_gain<T: Scalar>(case: &GridCase<T>, v: usize, s: Sensor, k: T) -> AttackSpec<T> {
    let mut a = AttackSpec::none(case);
    a.exploration = true;
    a.add_victim(v);
    a.add_sensor(s);
    a.set_gain(v, s, k);
    a
}

/// Whether K at (v, s) destabilizes, under the chosen oracle.
pub fn is_unstable<T: Scalar>(case: &GridCase<T>, params: &DynamicParams<T>, v: usize, s: Sensor, k: T, oracle: GainOracle<T>) -> Result<bool> {
    let atk = single_gain(case, v, s, k);
    match oracle {
        GainOracle::Linear => {
            let (_, p) = build(case, params, &atk)?;
            Ok(max_real_part(&p)? > T::zero())
        }
        GainOracle::Nonlinear { probe, horizon } => {
            let mut md = NonlinearModel::new(case, params, &atk, true);
            md.eps[v] = probe;
            let opts = SimOptions::default().with_horizon(horizon);
            let tr = integrate_nonlinear(&md, &DVector::zeros(2 * case.n()), &opts)?;
            Ok(tr.events.unstable)
        }
    }
}

/// Bisection for the true destabilizing gain to relative width `rel`.
pub fn bisect_true_gain<T: Scalar>(case: &GridCase<T>, params: &DynamicParams<T>, v: usize, s: Sensor, bracket: (T, T), oracle: GainOracle<T>, rel: T) -> Result<T> {
    let (mut lo, mut hi) = bracket;
    if is_unstable(case, params, v, s, lo, oracle)? || !is_unstable(case, params, v, s, hi, oracle)? {
        return Err(Error::Bracket { lo: lo.to_f64(), hi: hi.to_f64() });
    }
    while hi - lo > rel * hi {
        let mid = (lo + hi) * lit(0.5);
        if is_unstable(case, params, v, s, mid, oracle)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo + hi) * lit(0.5))
}

/// Bisection around a guess: starts from [guess/2, 2·guess] and widens by factors of two
/// (at most `widen` times per side) until the bracket straddles. `None` if it never does.
pub fn search_true_gain<T: Scalar>(case: &GridCase<T>, params: &DynamicParams<T>, v: usize, s: Sensor, guess: T, oracle: GainOracle<T>, rel: T, widen: usize) -> Result<Option<T>> {
    let two: T = lit(2.0);
    let mut lo = guess / two;
    let mut hi = guess * two;
    let mut ulo = is_unstable(case, params, v, s, lo, oracle)?;
    let mut uhi = is_unstable(case, params, v, s, hi, oracle)?;
    for _ in 0..widen {
        if !ulo && uhi {
            break;
        }
        if ulo {
            lo /= two;
            ulo = is_unstable(case, params, v, s, lo, oracle)?;
        }
        if !uhi {
            hi *= two;
            uhi = is_unstable(case, params, v, s, hi, oracle)?;
        }
    }
    if ulo || !uhi {
        return Ok(None);
    }
    bisect_true_gain(case, params, v, s, (lo, hi), oracle, rel).map(Some)
}

/// Result of [`bisect_min_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinStepSearch<T> {
    Found(T),
    /// Even the full vulnerable load keeps the output within ω_max.
    Unreachable,
}

/// Smallest step at load `i` whose simulated peak |ω_g| over the horizon reaches
/// `omega_max_pu`, searched in [0, p_lv].
pub fn bisect_min_step<T: Scalar>(case: &GridCase<T>, params: &DynamicParams<T>, i: usize, g: usize, omega_max_pu: T, p_lv: T, opts: &SimOptions<T>, rel: T) -> Result<MinStepSearch<T>> {
    let none = AttackSpec::none(case);
    let (model, _) = build(case, params, &none)?;
    let n = case.n();
    let mut o = *opts;
    o.stop_on_cap = false;
    let peak = |e: T| -> Result<T> {
        let mut f = DVector::zeros(n);
        f[case.n_gen() + i] = -e;
        let tr = integrate_linear(&model, &f, &DVector::zeros(2 * n), omega_max_pu, &o)?;
        Ok(tr.omega(g).iter().fold(T::zero(), |m, w| m.max(w.abs())))
    };
    if peak(p_lv)? < omega_max_pu {
        return Ok(MinStepSearch::Unreachable);
    }
    let (mut lo, mut hi) = (T::zero(), p_lv);
    while hi - lo > rel * hi {
        let mid = (lo + hi) * lit(0.5);
        if peak(mid)? >= omega_max_pu {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(MinStepSearch::Found((lo + hi) * lit(0.5)))
}
