//! Eigenvalue and eigenvector sensitivities with respect to attack gains.
//!
//! A gain K^L_{v,s} sits at 𝒞[N_G+v, col(s)] with a minus sign, so in the reduced
//! pencil ∂𝒜/∂K = −e_{N_G+v} e_{col(s)}ᵀ and ∂ℬ/∂K = 0, for generator and load
//! sensors alike.

use crate::case_io::GridCase;
use crate::eigen::{expand_z, CVec, EigenSolution};
use crate::error::{Error, Result};
use crate::grid::Sensor;
use crate::scalar::{cabs, cdiv, cr, czero, lit, Scalar, C};
use rayon::prelude::*;
use std::cmp::Ordering;

/// Sparse pencil derivative in reduced coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation<T: Scalar> {
    pub da: Vec<(usize, usize, T)>,
    pub db: Vec<(usize, usize, T)>,
}

impl<T: Scalar> Perturbation<T> {
    pub fn zero() -> Self {
        Perturbation { da: vec![], db: vec![] }
    }

    /// Direction of a unit change in K^L_{v,s}.
    pub fn gain(ng: usize, v: usize, s: Sensor) -> Self {
        Perturbation { da: vec![(ng + v, s.column(ng), -T::one())], db: vec![] }
    }

    fn apply(m: &[(usize, usize, T)], y: &CVec<T>, z: &CVec<T>) -> C<T> {
        m.iter().fold(czero(), |acc, &(i, j, x)| acc + y[i] * z[j] * x)
    }

    /// yᵀ∂𝒜 z
    pub fn form_a(&self, y: &CVec<T>, z: &CVec<T>) -> C<T> {
        Self::apply(&self.da, y, z)
    }

    /// yᵀ(λ∂𝒜 + ∂ℬ)z
    pub fn form(&self, lambda: C<T>, y: &CVec<T>, z: &CVec<T>) -> C<T> {
        lambda * Self::apply(&self.da, y, z) + Self::apply(&self.db, y, z)
    }
}

/// ∂λ_j = −y_jᵀ(λ_j∂𝒜 + ∂ℬ)z_j.
pub fn dlambda<T: Scalar>(sol: &EigenSolution<T>, j: usize, p: &Perturbation<T>) -> C<T> {
    -p.form(sol.lambda[j], &sol.yr[j], &sol.zr[j])
}

/// Per-eigenvalue derivatives for one (victim, sensor) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSensitivity<T: Scalar> {
    pub victim: usize,
    pub sensor: Sensor,
    pub dlambda: Vec<C<T>>,
}

impl<T: Scalar> GainSensitivity<T> {
    pub fn is_gen_sensor(&self) -> bool {
        matches!(self.sensor, Sensor::Gen(_))
    }
}

/// ∂λ_j/∂K^L_{v,s} for all j.
pub fn eigvalue_sensitivity<T: Scalar>(sol: &EigenSolution<T>, v: usize, s: Sensor) -> GainSensitivity<T> {
    let (r, c) = (sol.ng + v, s.column(sol.ng));
    let dlambda = (0..sol.len()).map(|j| sol.lambda[j] * sol.yr[j][r] * sol.zr[j][c]).collect();
    GainSensitivity { victim: v, sensor: s, dlambda }
}

/// Like [`eigvalue_sensitivity`] but zero unless v ∈ victims and s ∈ sensors.
pub fn eigvalue_sensitivity_in<T: Scalar>(sol: &EigenSolution<T>, victims: &[usize], sensors: &[Sensor], v: usize, s: Sensor) -> GainSensitivity<T> {
    if victims.contains(&v) && sensors.contains(&s) {
        eigvalue_sensitivity(sol, v, s)
    } else {
        GainSensitivity { victim: v, sensor: s, dlambda: vec![czero(); sol.len()] }
    }
}

/// Sensitivity rows over victims × sensors, victim-major.
pub fn sensitivity_table<T: Scalar>(sol: &EigenSolution<T>, victims: &[usize], sensors: &[Sensor]) -> Vec<GainSensitivity<T>> {
    let pairs: Vec<(usize, Sensor)> = victims.iter().flat_map(|&v| sensors.iter().map(move |&s| (v, s))).collect();
    pairs.par_iter().map(|&(v, s)| eigvalue_sensitivity(sol, v, s)).collect()
}

/// Eigenvector derivatives of one eigentriple.
#[derive(Debug, Clone)]
pub struct VectorDerivative<T: Scalar> {
    pub dlambda: C<T>,
    /// ∂z_r, ∂y_r in reduced coordinates.
    pub dzr: CVec<T>,
    pub dyr: CVec<T>,
    /// Full-state ∂z = [∂u; ∂λ·u + λ∂u] and ∂y = [∂b; ∂λ·b + λ∂b].
    pub dz: CVec<T>,
    pub dy: CVec<T>,
    /// Expansion coefficients: ∂z_j = Σ a_l z_l, ∂y_j = Σ b_l y_l.
    pub a: Vec<C<T>>,
    pub b: Vec<C<T>>,
}

/// ∂z_j, ∂y_j along a general perturbation.
///
/// Off-diagonal coefficients follow from differentiating (λ𝒜+ℬ)z = 0 and projecting on
/// the bi-orthonormal basis. The diagonal ones split the normalization constraint
/// d(y_jᵀ𝒜z_j) = 0 evenly: a_jj = b_jj = −½ y_jᵀ∂𝒜 z_j.
pub fn eigvector_sensitivity<T: Scalar>(sol: &EigenSolution<T>, p: &Perturbation<T>, j: usize) -> Result<VectorDerivative<T>> {
    if sol.n_infinite > 0 {
        return Err(Error::SingularPencil("eigenvector derivatives need a complete finite eigenbasis".into()));
    }
    let lj = sol.lambda[j];
    let n = sol.len();
    let mut a = vec![czero(); n];
    let mut b = vec![czero(); n];
    let gap = lit::<T>(1e-7);
    for l in 0..n {
        if l == j {
            let d = -p.form_a(&sol.yr[j], &sol.zr[j]) * lit::<T>(0.5);
            a[l] = d;
            b[l] = d;
            continue;
        }
        let den = lj - sol.lambda[l];
        if cabs(den) < gap {
            return Err(Error::NearDegenerate(j, l));
        }
        a[l] = -cdiv(p.form(lj, &sol.yr[l], &sol.zr[j]), den);
        b[l] = -cdiv(p.form(lj, &sol.yr[j], &sol.zr[l]), den);
    }
    let dim = sol.zr[j].len();
    let mut dzr = CVec::zeros(dim);
    let mut dyr = CVec::zeros(dim);
    for l in 0..n {
        dzr.axpy(a[l], &sol.zr[l], cr(T::one()));
        dyr.axpy(b[l], &sol.yr[l], cr(T::one()));
    }
    let dl = dlambda(sol, j, p);
    let (ng, nl) = (sol.ng, sol.nl);
    let nn = ng + nl;
    // φ rows: ∂(λθ) = ∂λ·θ + λ∂θ
    let mut dz = expand_z(&dzr, lj, ng, nl);
    for l in 0..nl {
        dz[nn + ng + l] += dl * sol.zr[j][ng + l];
    }
    let mut dy = CVec::zeros(2 * nn);
    for i in 0..nn {
        dy[i] = dyr[i];
        dy[nn + i] = dl * sol.yr[j][i] + lj * dyr[i];
    }
    Ok(VectorDerivative { dlambda: dl, dzr, dyr, dz, dy, a, b })
}

/// Gain-direction convenience wrapper.
pub fn eigvector_gain_sensitivity<T: Scalar>(sol: &EigenSolution<T>, v: usize, s: Sensor, j: usize) -> Result<VectorDerivative<T>> {
    eigvector_sensitivity(sol, &Perturbation::gain(sol.ng, v, s), j)
}

/// Linear prediction ν̂ of the attacked spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedSpectrum<T: Scalar> {
    pub base: Vec<C<T>>,
    pub predicted: Vec<C<T>>,
    pub gains: Vec<(usize, Sensor, T)>,
}

impl<T: Scalar> PredictedSpectrum<T> {
    pub fn max_real(&self) -> T {
        self.predicted.iter().map(|l| l.re).fold(T::min_value().unwrap(), |a, b| a.max(b))
    }
}

/// ν̂_j = λ_j + Σ ∂λ_j/∂K_{v,s}·K_{v,s}; gains without a table row contribute nothing.
pub fn predict_spectrum<T: Scalar>(sol: &EigenSolution<T>, table: &[GainSensitivity<T>], gains: &[(usize, Sensor, T)]) -> PredictedSpectrum<T> {
    let mut predicted = sol.lambda.clone();
    for &(v, s, k) in gains {
        if let Some(row) = table.iter().find(|r| r.victim == v && r.sensor == s) {
            for (p, d) in predicted.iter_mut().zip(&row.dlambda) {
                *p += *d * k;
            }
        }
    }
    PredictedSpectrum { base: sol.lambda.clone(), predicted, gains: gains.to_vec() }
}

/// K̂ = min over Re ∂λ_j > 0 of −Re λ_j / Re ∂λ_j; `None` when no mode is pushed right.
pub fn min_destabilizing_gain<T: Scalar>(sol: &EigenSolution<T>, sens: &GainSensitivity<T>) -> Option<T> {
    sol.lambda
        .iter()
        .zip(&sens.dlambda)
        .filter(|(_, d)| d.re > T::zero())
        .map(|(l, d)| -l.re / d.re)
        .fold(None, |m: Option<T>, k| Some(m.map_or(k, |m| m.min(k))))
}

/// One K̂ per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGain<T: Scalar> {
    pub victim: usize,
    pub sensor: Sensor,
    pub khat: Option<T>,
}

fn sensor_key<T: Scalar>(case: &GridCase<T>, s: Sensor) -> (u8, usize) {
    match s {
        Sensor::Gen(_) => (0, s.bus(case)),
        Sensor::Load(_) => (1, s.bus(case)),
    }
}

/// Pairs sorted by K̂ ascending (non-destabilizable last), ties by victim bus, then
/// generator sensors first, then sensor bus.
pub fn rank_pairs<T: Scalar>(case: &GridCase<T>, sol: &EigenSolution<T>, victims: &[usize], sensors: &[Sensor]) -> Vec<PairGain<T>> {
    let table = sensitivity_table(sol, victims, sensors);
    let mut out: Vec<PairGain<T>> = table
        .iter()
        .map(|r| PairGain { victim: r.victim, sensor: r.sensor, khat: min_destabilizing_gain(sol, r) })
        .collect();
    let ng = case.n_gen();
    out.sort_by(|a, b| {
        let ka = a.khat.map(|k| k.to_f64()).unwrap_or(f64::INFINITY);
        let kb = b.khat.map(|k| k.to_f64()).unwrap_or(f64::INFINITY);
        ka.partial_cmp(&kb)
            .unwrap_or(Ordering::Equal)
            .then(case.buses[ng + a.victim].id.cmp(&case.buses[ng + b.victim].id))
            .then(sensor_key(case, a.sensor).cmp(&sensor_key(case, b.sensor)))
    });
    out
}

/// Argmin of K̂ over victims × sensors, or `None` if no pair destabilizes.
pub fn least_effort_node<T: Scalar>(case: &GridCase<T>, sol: &EigenSolution<T>, victims: &[usize], sensors: &[Sensor]) -> Option<PairGain<T>> {
    rank_pairs(case, sol, victims, sensors).into_iter().next().filter(|p| p.khat.is_some())
}

/// {k : Re λ_i + Σ Re ∂λ_i/∂k_p · k_p < 0 ∀i} over a flattened gain vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityPolyhedron<T: Scalar> {
    pub pairs: Vec<(usize, Sensor)>,
    /// (Re λ_i, [Re ∂λ_i/∂k_p]_p)
    pub rows: Vec<(T, Vec<T>)>,
}

impl<T: Scalar> StabilityPolyhedron<T> {
    /// Largest left-hand side over the rows.
    pub fn max_lhs(&self, k: &[T]) -> T {
        self.rows
            .iter()
            .map(|(r, g)| g.iter().zip(k).fold(*r, |a, (x, y)| a + *x * *y))
            .fold(T::min_value().unwrap(), |a, b| a.max(b))
    }

    pub fn contains(&self, k: &[T]) -> bool {
        self.max_lhs(k) < T::zero()
    }

    /// Boundary crossing along the p-th axis.
    pub fn axis_crossing(&self, p: usize) -> Option<T> {
        self.rows
            .iter()
            .filter(|(_, g)| g[p] > T::zero())
            .map(|(r, g)| -*r / g[p])
            .fold(None, |m: Option<T>, k| Some(m.map_or(k, |m| m.min(k))))
    }
}

pub fn build_polyhedron<T: Scalar>(sol: &EigenSolution<T>, table: &[GainSensitivity<T>]) -> StabilityPolyhedron<T> {
    let pairs = table.iter().map(|r| (r.victim, r.sensor)).collect();
    let rows = (0..sol.len()).map(|i| (sol.lambda[i].re, table.iter().map(|r| r.dlambda[i].re).collect())).collect();
    StabilityPolyhedron { pairs, rows }
}
