//! Explicit Runge–Kutta integrators: adaptive Dormand–Prince 5(4) and fixed-step RK4.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use nalgebra::DVector;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions<T> {
    pub rtol: T,
    pub atol: T,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<T>,
    pub max_steps: usize,
}

impl<T: Scalar> Default for OdeOptions<T> {
    fn default() -> Self {
        OdeOptions { rtol: lit(1e-9), atol: lit(1e-9), h0: None, max_steps: 5_000_000 }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// 5th-order weights are the last row of A; E = b5 − b4.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates y' = f(t, y) and samples at `t_out` (increasing, ≥ t0).
///
/// `observe(t, y)` sees every output sample and may return `false` to stop; the
/// samples gathered so far are returned.
pub fn dopri5<T, F, O>(mut f: F, t0: T, y0: &DVector<T>, t_out: &[T], opts: &OdeOptions<T>, mut observe: O) -> Result<Vec<(T, DVector<T>)>>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>, &mut DVector<T>),
    O: FnMut(T, &DVector<T>) -> bool,
{
    let n = y0.len();
    let mut out = Vec::with_capacity(t_out.len());
    let mut t = t0;
    let mut y = y0.clone();
    let mut k: Vec<DVector<T>> = (0..7).map(|_| DVector::zeros(n)).collect();
    let mut tmp = DVector::zeros(n);
    f(t, &y, &mut k[0]);
    let tend = match t_out.last() {
        Some(&e) => e,
        None => return Ok(out),
    };
    let span = (tend - t0).abs().max(T::eps());
    let mut h = opts.h0.unwrap_or_else(|| {
        let s = y.iter().zip(k[0].iter()).fold(T::zero(), |m, (a, d)| m.max(d.abs() / (opts.atol + opts.rtol * a.abs())));
        if s > T::zero() {
            (lit::<T>(0.01) / s).min(span * lit(0.01))
        } else {
            span * lit(1e-3)
        }
    });
    let hmin = lit::<T>(16.0) * T::eps() * span;
    let mut next = 0;
    while next < t_out.len() && t_out[next] <= t {
        out.push((t, y.clone()));
        if !observe(t, &y) {
            return Ok(out);
        }
        next += 1;
    }
    let mut steps = 0;
    let mut fac_prev = lit::<T>(1e-4);
    while next < t_out.len() {
        if steps >= opts.max_steps {
            return Err(Error::Integration { t: t.to_f64(), msg: "step budget exhausted".into() });
        }
        // land exactly on output times
        let target = t_out[next];
        let mut hs = h;
        let clipped = t + hs >= target;
        if clipped {
            hs = target - t;
        }
        for s in 1..7 {
            tmp.copy_from(&y);
            for (r, kr) in k.iter().enumerate().take(s) {
                let a = A[s][r];
                if a != 0.0 {
                    tmp.axpy(hs * lit(a), kr, T::one());
                }
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            f(t + hs * lit(C[s]), &tmp, &mut tail[0]);
        }
        // tmp now holds the 5th-order solution (FSAL stage input)
        let mut err = T::zero();
        for i in 0..n {
            let mut e = T::zero();
            for (s, ks) in k.iter().enumerate() {
                if E[s] != 0.0 {
                    e += ks[i] * lit(E[s]);
                }
            }
            let sc = opts.atol + opts.rtol * y[i].abs().max(tmp[i].abs());
            let r = e * hs / sc;
            err += r * r;
        }
        let err = (err / lit(n.max(1) as f64)).sqrt();
        if !err.is_finite() {
            return Err(Error::Integration { t: t.to_f64(), msg: "non-finite state".into() });
        }
        steps += 1;
        if err <= T::one() {
            t = if clipped { target } else { t + hs };
            y.copy_from(&tmp);
            let last = k[6].clone();
            k[0] = last;
            // Lund-stabilized step control
            let fac = err.max(lit(1e-10));
            let scale = lit::<T>(0.9) * fac.powf(lit(-0.7 / 5.0)) * fac_prev.powf(lit(0.4 / 5.0));
            fac_prev = fac.max(lit(1e-4));
            let grown = hs * scale.min(lit(5.0)).max(lit(0.2));
            h = if clipped { h.max(grown) } else { grown };
            while next < t_out.len() && t_out[next] <= t {
                out.push((t, y.clone()));
                if !observe(t, &y) {
                    return Ok(out);
                }
                next += 1;
            }
        } else {
            h = hs * (lit::<T>(0.9) * err.powf(lit(-0.2))).max(lit(0.1));
            if h < hmin {
                return Err(Error::Integration { t: t.to_f64(), msg: format!("step size collapsed to {}", h) });
            }
        }
    }
    Ok(out)
}

/// Classic fixed-step RK4 from t0 to t1 in `steps` steps.
pub fn rk4<T, F>(mut f: F, t0: T, y0: &DVector<T>, t1: T, steps: usize) -> DVector<T>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>, &mut DVector<T>),
{
    let n = y0.len();
    let h = (t1 - t0) / lit(steps as f64);
    let half = h * lit(0.5);
    let mut y = y0.clone();
    let (mut k1, mut k2, mut k3, mut k4) = (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n), DVector::zeros(n));
    for s in 0..steps {
        let t = t0 + h * lit(s as f64);
        f(t, &y, &mut k1);
        f(t + half, &(&y + &k1 * half), &mut k2);
        f(t + half, &(&y + &k2 * half), &mut k3);
        f(t + h, &(&y + &k3 * h), &mut k4);
        y += (k1.clone() + (&k2 + &k3) * lit::<T>(2.0) + &k4) * (h / lit(6.0));
    }
    y
}
