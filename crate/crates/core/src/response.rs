//! Closed-form step responses, SLAA influence functions and peak search.
//!
//! With 𝔣 = [f; 0] the modal coefficients are a_j(t) = φ₁(λ_j, t)·y_jᵀ𝔣 + e^{λ_j t}·y_jᵀ𝒜z₀,
//! φ₁(λ, t) = (e^{λt} − 1)/λ. The φ rows (load frequencies) are read from ȧ_j and θ_j:
//! Σ_j θ_j y_jᵀ𝔣 does not vanish, so Σ_j a_j λ_j θ_j is not θ̇.

use crate::eigen::{dotu, CVec, EigenSolution};
use crate::error::{Error, Result};
use crate::grid::StatePencil;
use crate::scalar::{cabs, cexp, cr, czero, dphi1, lit, phi1, Scalar, C};
use crate::sensitivity::{Perturbation, VectorDerivative};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Per-mode data of a step response.
#[derive(Debug, Clone)]
pub struct ModalForcing<T: Scalar> {
    pub lambda: Vec<C<T>>,
    /// y_jᵀ𝔣
    pub yf: Vec<C<T>>,
    /// y_jᵀ𝒜z₀
    pub yaz0: Vec<C<T>>,
}

/// Sampled trajectories of selected full-state rows.
#[derive(Debug, Clone)]
pub struct StepResponse<T: Scalar> {
    pub modes: ModalForcing<T>,
    pub times: Vec<T>,
    pub rows: Vec<usize>,
    /// times × rows
    pub values: DMatrix<T>,
    /// Largest imaginary residue discarded when taking real parts.
    pub max_imag: T,
}

fn reduced_z0<T: Scalar>(z0: &DVector<T>, ng: usize, nl: usize) -> CVec<T> {
    CVec::from_fn(2 * ng + nl, |i, _| cr(z0[i]))
}

/// Modal projections of the forcing f (length N) and the initial state z₀ (length 2N).
pub fn modal_forcing<T: Scalar>(sol: &EigenSolution<T>, pencil: &StatePencil<T>, f: &DVector<T>, z0: &DVector<T>) -> ModalForcing<T> {
    let n = sol.n();
    let red = pencil.reduced();
    let a = red.a.map(cr);
    // the φ columns of 𝒜 are zero, so yᵀ𝒜z₀ only sees the reduced coordinates
    let az0 = &a * reduced_z0(z0, sol.ng, sol.nl);
    let fc = CVec::from_fn(n, |i, _| cr(f[i]));
    let yf = (0..sol.len()).map(|j| dotu(&sol.yr[j].rows(0, n).into_owned(), &fc)).collect();
    let yaz0 = (0..sol.len()).map(|j| dotu(&sol.yr[j], &az0)).collect();
    ModalForcing { lambda: sol.lambda.clone(), yf, yaz0 }
}

impl<T: Scalar> ModalForcing<T> {
    pub fn a(&self, j: usize, t: T) -> C<T> {
        let l = self.lambda[j];
        phi1(l, t) * self.yf[j] + cexp(l * t) * self.yaz0[j]
    }
    pub fn adot(&self, j: usize, t: T) -> C<T> {
        let l = self.lambda[j];
        l * self.a(j, t) + self.yf[j]
    }
}

// Row r of the full state as (coefficient kind, reduced component).
fn row_source(r: usize, ng: usize, nl: usize) -> (bool, usize) {
    let n = ng + nl;
    if r < n + ng {
        (false, r)
    } else {
        (true, r - n)
    }
}

/// Evaluates the closed form at the requested times for the requested full-state rows.
pub fn step_response<T: Scalar>(
    sol: &EigenSolution<T>,
    pencil: &StatePencil<T>,
    f: &DVector<T>,
    z0: &DVector<T>,
    times: &[T],
    rows: &[usize],
) -> Result<StepResponse<T>> {
    let n = sol.n();
    if let Some(&r) = rows.iter().find(|&&r| r >= 2 * n) {
        return Err(Error::Params(format!("state row {r} out of range")));
    }
    if times.iter().any(|t| *t < T::zero()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Params("time grid must be nonnegative and increasing".into()));
    }
    let modes = modal_forcing(sol, pencil, f, z0);
    let mut values = DMatrix::zeros(times.len(), rows.len());
    let mut max_imag = T::zero();
    for (ti, &t) in times.iter().enumerate() {
        let a: Vec<C<T>> = (0..sol.len()).map(|j| modes.a(j, t)).collect();
        let ad: Vec<C<T>> = (0..sol.len()).map(|j| sol.lambda[j] * a[j] + modes.yf[j]).collect();
        for (ri, &r) in rows.iter().enumerate() {
            let (dot, k) = row_source(r, sol.ng, sol.nl);
            let coef = if dot { &ad } else { &a };
            let v = (0..sol.len()).fold(czero::<T>(), |acc, j| acc + coef[j] * sol.zr[j][k]);
            values[(ti, ri)] = v.re;
            max_imag = max_imag.max(v.im.abs());
        }
    }
    Ok(StepResponse { modes, times: times.to_vec(), rows: rows.to_vec(), values, max_imag })
}

/// Steady state −Σ_j z_j y_jᵀ𝔣/λ_j of a stable step response on the given rows.
pub fn steady_state<T: Scalar>(sol: &EigenSolution<T>, f: &DVector<T>, rows: &[usize]) -> Vec<T> {
    let n = sol.n();
    let fc = CVec::from_fn(n, |i, _| cr(f[i]));
    rows.iter()
        .map(|&r| {
            let (dot, k) = row_source(r, sol.ng, sol.nl);
            if dot {
                return T::zero();
            }
            (0..sol.len())
                .fold(czero(), |acc, j| {
                    let yf = dotu(&sol.yr[j].rows(0, n).into_owned(), &fc);
                    acc - sol.zr[j][k] * yf / sol.lambda[j]
                })
                .re
        })
        .collect()
}

/// Derivative of the step response along a pencil perturbation, by the chain rule
/// through λ_j, y_j and z_j. `derivs[j]` must belong to mode j of `sol`.
pub fn step_response_sensitivity<T: Scalar>(
    sol: &EigenSolution<T>,
    pencil: &StatePencil<T>,
    pert: &Perturbation<T>,
    derivs: &[VectorDerivative<T>],
    f: &DVector<T>,
    z0: &DVector<T>,
    times: &[T],
    rows: &[usize],
) -> Result<DMatrix<T>> {
    let n = sol.n();
    if derivs.len() != sol.len() {
        return Err(Error::Params("one eigenvector derivative per mode is required".into()));
    }
    let modes = modal_forcing(sol, pencil, f, z0);
    let red = pencil.reduced();
    let a = red.a.map(cr);
    let z0r = reduced_z0(z0, sol.ng, sol.nl);
    let az0 = &a * &z0r;
    let fc = CVec::from_fn(n, |i, _| cr(f[i]));
    // ∂(yᵀ𝔣), ∂(yᵀ𝒜z₀)
    let dyf: Vec<C<T>> = derivs.iter().map(|d| dotu(&d.dyr.rows(0, n).into_owned(), &fc)).collect();
    let dyaz0: Vec<C<T>> = (0..sol.len()).map(|j| dotu(&derivs[j].dyr, &az0) + pert.form_a(&sol.yr[j], &z0r)).collect();
    let mut out = DMatrix::zeros(times.len(), rows.len());
    for (ti, &t) in times.iter().enumerate() {
        let mut a_ = Vec::with_capacity(sol.len());
        let mut da = Vec::with_capacity(sol.len());
        for j in 0..sol.len() {
            let l = sol.lambda[j];
            let dl = derivs[j].dlambda;
            let e = cexp(l * t);
            a_.push(modes.a(j, t));
            da.push(dphi1(l, t) * dl * modes.yf[j] + phi1(l, t) * dyf[j] + e * dl * modes.yaz0[j] * t + e * dyaz0[j]);
        }
        for (ri, &r) in rows.iter().enumerate() {
            let (dot, k) = row_source(r, sol.ng, sol.nl);
            let mut acc = czero();
            for j in 0..sol.len() {
                let (c, dc) = if dot {
                    let l = sol.lambda[j];
                    // ȧ = λa + yᵀ𝔣
                    (l * a_[j] + modes.yf[j], derivs[j].dlambda * a_[j] + l * da[j] + dyf[j])
                } else {
                    (a_[j], da[j])
                };
                acc += dc * sol.zr[j][k] + c * derivs[j].dzr[k];
            }
            out[(ti, ri)] = acc.re;
        }
    }
    Ok(out)
}

/// How the influence peak was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeakFlag {
    /// First zero of the derivative.
    Root,
    /// No sign change within the horizon; the horizon value is reported.
    Horizon,
    /// The forcing column does not excite the output.
    Degenerate,
}

impl PeakFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            PeakFlag::Root => "root",
            PeakFlag::Horizon => "horizon",
            PeakFlag::Degenerate => "degenerate",
        }
    }
}

/// f_{i,n}(t) = Σ_j φ₁(λ_j, t)·k_{ji}·z_{jn}: output n per unit step at load i.
#[derive(Debug, Clone)]
pub struct InfluenceFunction<T: Scalar> {
    pub load: usize,
    pub output: usize,
    pub lambda: Vec<C<T>>,
    /// k_{ji}·z_{jn}
    pub weight: Vec<C<T>>,
    pub t_star: T,
    /// Signed value f(t*).
    pub peak: T,
    pub flag: PeakFlag,
}

impl<T: Scalar> InfluenceFunction<T> {
    pub fn eval(&self, t: T) -> T {
        self.lambda.iter().zip(&self.weight).fold(czero(), |a, (l, w)| a + phi1(*l, t) * *w).re
    }
    pub fn deriv(&self, t: T) -> T {
        self.lambda.iter().zip(&self.weight).fold(czero(), |a, (l, w)| a + cexp(*l * t) * *w).re
    }
    pub fn steady(&self) -> T {
        self.lambda.iter().zip(&self.weight).fold(czero(), |a, (l, w)| a - *w / *l).re
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PeakSearch<T> {
    pub horizon: T,
    pub dt: T,
    pub tol: T,
}

impl<T: Scalar> Default for PeakSearch<T> {
    fn default() -> Self {
        PeakSearch { horizon: lit(60.0), dt: lit(1e-3), tol: lit(1e-10) }
    }
}

/// Influence of a unit load step at load `i` on full-state row `output` (δ, θ or ω rows).
pub fn influence<T: Scalar>(sol: &EigenSolution<T>, i: usize, output: usize, search: PeakSearch<T>) -> Result<InfluenceFunction<T>> {
    let n = sol.n();
    if i >= sol.nl {
        return Err(Error::Params(format!("load index {i} out of range")));
    }
    if output >= n + sol.ng {
        return Err(Error::Params(format!("output row {output} must be an angle or generator-frequency row")));
    }
    // a unit demand increase enters the forcing as −1
    let weight: Vec<C<T>> = (0..sol.len()).map(|j| -sol.yr[j][sol.ng + i] * sol.zr[j][output]).collect();
    let mut f = InfluenceFunction {
        load: i,
        output,
        lambda: sol.lambda.clone(),
        weight,
        t_star: T::zero(),
        peak: T::zero(),
        flag: PeakFlag::Degenerate,
    };
    let scale = f.weight.iter().fold(T::zero(), |m, w| m.max(cabs(*w)));
    if scale == T::zero() {
        return Ok(f);
    }
    let steps = (search.horizon / search.dt).ceil().to_f64() as usize;
    let step: Vec<C<T>> = f.lambda.iter().map(|l| cexp(*l * search.dt)).collect();
    let mut e: Vec<C<T>> = step.clone();
    let deriv_at = |e: &[C<T>]| e.iter().zip(&f.weight).fold(czero::<T>(), |a, (x, w)| a + *x * *w).re;
    let mut prev = deriv_at(&e);
    let mut bracket = None;
    for k in 2..=steps {
        for (x, s) in e.iter_mut().zip(&step) {
            *x *= *s;
        }
        let cur = deriv_at(&e);
        if cur == T::zero() || (cur > T::zero()) != (prev > T::zero()) {
            bracket = Some((search.dt * lit((k - 1) as f64), search.dt * lit(k as f64)));
            break;
        }
        prev = cur;
    }
    match bracket {
        Some((mut lo, mut hi)) => {
            let slo = f.deriv(lo) > T::zero();
            let mut mid = (lo + hi) * lit(0.5);
            for _ in 0..200 {
                mid = (lo + hi) * lit(0.5);
                let d = f.deriv(mid);
                if d.abs() < search.tol || hi - lo < T::eps() * hi {
                    break;
                }
                if (d > T::zero()) == slo {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            f.t_star = mid;
            f.flag = PeakFlag::Root;
        }
        None => {
            f.t_star = search.horizon;
            f.flag = PeakFlag::Horizon;
        }
    }
    f.peak = f.eval(f.t_star);
    Ok(f)
}

/// All (load, generator-frequency) influence functions, load-major.
pub fn influence_table<T: Scalar>(sol: &EigenSolution<T>, loads: &[usize], search: PeakSearch<T>) -> Result<Vec<InfluenceFunction<T>>> {
    let n = sol.n();
    let pairs: Vec<(usize, usize)> = loads.iter().flat_map(|&i| (0..sol.ng).map(move |g| (i, n + g))).collect();
    pairs.par_iter().map(|&(i, r)| influence(sol, i, r, search)).collect()
}

/// Minimum unsafe step ω_max/|f(t*)|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinStep<T> {
    /// `None` when the output is not excited at all.
    pub eps: Option<T>,
    /// The step exceeds the vulnerable load (or does not exist).
    pub infeasible: bool,
    /// ω_max = 0: any step is unsafe.
    pub degenerate: bool,
}

pub fn min_unsafe_step<T: Scalar>(f: &InfluenceFunction<T>, omega_max: T, p_lv: T) -> MinStep<T> {
    let degenerate = omega_max == T::zero();
    if f.peak == T::zero() {
        return MinStep { eps: if degenerate { Some(T::zero()) } else { None }, infeasible: !degenerate, degenerate };
    }
    let e = omega_max / f.peak.abs();
    MinStep { eps: Some(e), infeasible: e > p_lv, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::eigensolve;
    use crate::grid::{to_pencil, SecondOrderModel};

    fn osc() -> (EigenSolution<f64>, StatePencil<f64>) {
        let model = SecondOrderModel {
            m: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, 2.0),
            g: DMatrix::from_element(1, 1, 5.0),
            f0: DVector::zeros(1),
            f_step: DVector::zeros(1),
            ng: 1,
            nl: 0,
        };
        let p = to_pencil(&model);
        (eigensolve(&p).unwrap(), p)
    }

    #[test]
    fn damped_oscillator_step() {
        // ü + 2u̇ + 5u = 1: u = 1/5 − e^{−t}(cos 2t + ½ sin 2t)/5
        let (sol, p) = osc();
        let ts: Vec<f64> = (0..50).map(|k| k as f64 * 0.2).collect();
        let r = step_response(&sol, &p, &DVector::from_element(1, 1.0), &DVector::zeros(2), &ts, &[0, 1]).unwrap();
        for (k, t) in ts.iter().enumerate() {
            let u = 0.2 - (-t).exp() * ((2.0 * t).cos() + 0.5 * (2.0 * t).sin()) / 5.0;
            let du = (-t).exp() * (2.0 * t).sin() * 0.5;
            assert!((r.values[(k, 0)] - u).abs() < 1e-12);
            assert!((r.values[(k, 1)] - du).abs() < 1e-12);
        }
        assert!(r.max_imag < 1e-12);
    }

    #[test]
    fn zero_forcing_zero_response() {
        let (sol, p) = osc();
        let r = step_response(&sol, &p, &DVector::zeros(1), &DVector::zeros(2), &[0.0, 1.0], &[0]).unwrap();
        assert!(r.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn min_step_quotients() {
        let f = InfluenceFunction::<f64> { load: 0, output: 0, lambda: vec![], weight: vec![], t_star: 1.0, peak: -0.04, flag: PeakFlag::Root };
        let m = min_unsafe_step(&f, 0.04, 2.0);
        assert!((m.eps.unwrap() - 1.0).abs() < 1e-15 && !m.infeasible);
        assert!((min_unsafe_step(&f, 0.08, 2.0).eps.unwrap() - 2.0).abs() < 1e-15);
        assert!(min_unsafe_step(&f, 0.0, 2.0).degenerate);
    }
}
