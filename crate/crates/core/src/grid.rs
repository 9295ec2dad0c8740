//! Network matrices and the descriptor second-order model.
//!
//! State ordering everywhere is generators first, then loads. The second-order
//! coordinate is u = [δ; θ] and the first-order state is z = [u; u̇] = [δ; θ; ω; φ].
//!
//! Sign conventions: `B_bus` is the (positive semidefinite) Laplacian, diagonal Σ 1/x and
//! off-diagonal −1/x, and the lower-right damping block is D^L − K^{LL}, so that the
//! unattacked model is stable under positive damping.

use crate::case_io::{DynamicParams, GridCase};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SusceptanceBlocks<T: Scalar> {
    pub bbus: DMatrix<T>,
    pub ng: usize,
}

impl<T: Scalar> SusceptanceBlocks<T> {
    pub fn nl(&self) -> usize {
        self.bbus.nrows() - self.ng
    }
    pub fn gg(&self) -> DMatrix<T> {
        self.bbus.view((0, 0), (self.ng, self.ng)).into_owned()
    }
    pub fn gl(&self) -> DMatrix<T> {
        self.bbus.view((0, self.ng), (self.ng, self.nl())).into_owned()
    }
    pub fn lg(&self) -> DMatrix<T> {
        self.bbus.view((self.ng, 0), (self.nl(), self.ng)).into_owned()
    }
    pub fn ll(&self) -> DMatrix<T> {
        self.bbus.view((self.ng, self.ng), (self.nl(), self.nl())).into_owned()
    }
}

pub fn build_susceptance<T: Scalar>(case: &GridCase<T>) -> SusceptanceBlocks<T> {
    let n = case.n();
    let mut b = DMatrix::zeros(n, n);
    for br in case.branches.iter().filter(|b| b.in_service) {
        let i = case.index(br.from).expect("validated case");
        let j = case.index(br.to).expect("validated case");
        if i == j {
            continue;
        }
        let y = T::one() / br.x;
        b[(i, j)] -= y;
        b[(j, i)] -= y;
        b[(i, i)] += y;
        b[(j, j)] += y;
    }
    SusceptanceBlocks { bbus: b, ng: case.n_gen() }
}

/// A sensor bus: generator or load, by index within its group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sensor {
    Gen(usize),
    Load(usize),
}

impl Sensor {
    /// Column of the sensed frequency within u̇ (and of the gain within 𝒞).
    pub fn column(self, ng: usize) -> usize {
        match self {
            Sensor::Gen(g) => g,
            Sensor::Load(l) => ng + l,
        }
    }
    pub fn from_bus<T: Scalar>(case: &GridCase<T>, bus: usize) -> Result<Sensor> {
        if let Some(g) = case.gen_index(bus) {
            Ok(Sensor::Gen(g))
        } else if let Some(l) = case.load_index(bus) {
            Ok(Sensor::Load(l))
        } else {
            Err(Error::UnknownBus(bus))
        }
    }
    pub fn bus<T: Scalar>(self, case: &GridCase<T>) -> usize {
        case.buses[self.column(case.n_gen())].id
    }
}

/// Attacker capabilities and the concrete attack. Indices are load/generator indices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec<T: Scalar> {
    pub victims: Vec<usize>,
    pub sensors: Vec<Sensor>,
    /// N_L × N_G
    pub k_lg: DMatrix<T>,
    /// N_L × N_L
    pub k_ll: DMatrix<T>,
    /// Step change per load bus, p.u.
    pub eps: DVector<T>,
    /// Vulnerable load per load bus, p.u.
    pub p_lv: DVector<T>,
    /// Waives the gain budget (sweeps beyond what the attacker can afford).
    pub exploration: bool,
}

impl<T: Scalar> AttackSpec<T> {
    /// No attack; vulnerable load taken from the case.
    pub fn none(case: &GridCase<T>) -> Self {
        let (ng, nl) = (case.n_gen(), case.n_load());
        AttackSpec {
            victims: Vec::new(),
            sensors: Vec::new(),
            k_lg: DMatrix::zeros(nl, ng),
            k_ll: DMatrix::zeros(nl, nl),
            eps: DVector::zeros(nl),
            p_lv: case.vulnerable(),
            exploration: false,
        }
    }

    pub fn add_victim(&mut self, v: usize) {
        if !self.victims.contains(&v) {
            self.victims.push(v);
        }
    }

    pub fn add_sensor(&mut self, s: Sensor) {
        if !self.sensors.contains(&s) {
            self.sensors.push(s);
        }
    }

    /// Sets K^L_{v,s}, registering v and s.
    pub fn set_gain(&mut self, v: usize, s: Sensor, k: T) {
        self.add_victim(v);
        self.add_sensor(s);
        match s {
            Sensor::Gen(g) => self.k_lg[(v, g)] = k,
            Sensor::Load(l) => self.k_ll[(v, l)] = k,
        }
    }

    pub fn gain(&self, v: usize, s: Sensor) -> T {
        match s {
            Sensor::Gen(g) => self.k_lg[(v, g)],
            Sensor::Load(l) => self.k_ll[(v, l)],
        }
    }

    pub fn set_step(&mut self, v: usize, eps: T) {
        self.add_victim(v);
        self.eps[v] = eps;
    }

    /// Bus-id convenience: K^L_{v,s} with v a load bus and s any bus.
    pub fn with_gain(mut self, case: &GridCase<T>, v_bus: usize, s_bus: usize, k: T) -> Result<Self> {
        let v = case.load_index(v_bus).ok_or(Error::UnknownBus(v_bus))?;
        let s = Sensor::from_bus(case, s_bus)?;
        self.set_gain(v, s, k);
        Ok(self)
    }

    pub fn with_step(mut self, case: &GridCase<T>, v_bus: usize, eps: T) -> Result<Self> {
        let v = case.load_index(v_bus).ok_or(Error::UnknownBus(v_bus))?;
        self.set_step(v, eps);
        Ok(self)
    }

    pub fn with_vulnerable(mut self, case: &GridCase<T>, v_bus: usize, p: T) -> Result<Self> {
        let v = case.load_index(v_bus).ok_or(Error::UnknownBus(v_bus))?;
        self.p_lv[v] = p;
        Ok(self)
    }

    /// Checks every invariant of the attack against a case and parameter set.
    pub fn validate(&self, case: &GridCase<T>, params: &DynamicParams<T>) -> Result<()> {
        let (ng, nl) = (case.n_gen(), case.n_load());
        if self.k_lg.shape() != (nl, ng) || self.k_ll.shape() != (nl, nl) || self.eps.len() != nl || self.p_lv.len() != nl {
            return Err(Error::Attack("dimension mismatch".into()));
        }
        let lbus = |v: usize| case.buses[ng + v].id;
        let secure = case.demand() - &self.p_lv;
        let tol = lit::<T>(1e-9);
        for v in 0..nl {
            let victim = self.victims.contains(&v);
            for g in 0..ng {
                self.check_gain(v, Sensor::Gen(g), victim, case)?;
            }
            for l in 0..nl {
                self.check_gain(v, Sensor::Load(l), victim, case)?;
            }
            let e = self.eps[v];
            if !victim && e != T::zero() {
                return Err(Error::Attack(format!("step at bus {} which is not a victim", lbus(v))));
            }
            if !(self.p_lv[v] >= T::zero()) {
                return Err(Error::Attack(format!("negative vulnerable load at bus {}", lbus(v))));
            }
            if e > self.p_lv[v] * (T::one() + tol) + tol {
                return Err(Error::Attack(format!("step {e} at bus {} exceeds vulnerable load {}", lbus(v), self.p_lv[v])));
            }
            // a load decrease may remove at most what is actually there
            let floor = -(secure[v].max(T::zero()) + self.p_lv[v]);
            if e < floor * (T::one() + tol) - tol {
                return Err(Error::Attack(format!("step {e} at bus {} removes more than the total load", lbus(v))));
            }
            if victim && !self.exploration {
                let w = params.omega_max_pu();
                let used: T = (0..ng).map(|g| self.k_lg[(v, g)] * w).fold(T::zero(), |a, b| a + b)
                    + (0..nl).map(|l| self.k_ll[(v, l)] * w).fold(T::zero(), |a, b| a + b);
                let limit = (self.p_lv[v] - e) * lit::<T>(0.5);
                if used > limit * (T::one() + tol) + tol * lit(1e-3) {
                    return Err(Error::Budget { bus: lbus(v), used: used.to_f64(), limit: limit.to_f64() });
                }
            }
        }
        Ok(())
    }

    fn check_gain(&self, v: usize, s: Sensor, victim: bool, case: &GridCase<T>) -> Result<()> {
        let k = self.gain(v, s);
        if !(k >= T::zero()) {
            return Err(Error::Attack(format!("gain {k} at ({}, {}) must be nonnegative", case.buses[case.n_gen() + v].id, s.bus(case))));
        }
        if k != T::zero() && !(victim && self.sensors.contains(&s)) {
            return Err(Error::Attack(format!(
                "gain at ({}, {}) outside victim/sensor sets",
                case.buses[case.n_gen() + v].id,
                s.bus(case)
            )));
        }
        Ok(())
    }
}

/// ℳ ü + 𝒞 u̇ + 𝒢 u = f₀.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderModel<T: Scalar> {
    pub m: DMatrix<T>,
    pub c: DMatrix<T>,
    pub g: DMatrix<T>,
    /// [0; −(p^{LS} + ε^L)]
    pub f0: DVector<T>,
    /// Step-only forcing [0; −ε^L]: the deviation from the balanced operating point.
    pub f_step: DVector<T>,
    pub ng: usize,
    pub nl: usize,
}

impl<T: Scalar> SecondOrderModel<T> {
    pub fn n(&self) -> usize {
        self.ng + self.nl
    }
    /// Generator inertias (diagonal of the nonzero block of ℳ).
    pub fn inertia(&self) -> DVector<T> {
        DVector::from_iterator(self.ng, (0..self.ng).map(|i| self.m[(i, i)]))
    }
}

pub fn assemble_model<T: Scalar>(case: &GridCase<T>, params: &DynamicParams<T>, attack: &AttackSpec<T>) -> Result<SecondOrderModel<T>> {
    let (ng, nl) = (case.n_gen(), case.n_load());
    if params.m.len() != ng || params.d_l.len() != nl {
        return Err(Error::Params("parameter vectors do not match the case".into()));
    }
    attack.validate(case, params)?;
    let n = ng + nl;
    let sus = build_susceptance(case);
    let mut m = DMatrix::zeros(n, n);
    let mut c = DMatrix::zeros(n, n);
    let mut g = sus.bbus.clone();
    for i in 0..ng {
        m[(i, i)] = params.m[i];
        c[(i, i)] = params.k_p[i] + params.d_g[i];
        g[(i, i)] += params.k_i[i];
    }
    for v in 0..nl {
        for s in 0..ng {
            c[(ng + v, s)] = -attack.k_lg[(v, s)];
        }
        for l in 0..nl {
            c[(ng + v, ng + l)] = -attack.k_ll[(v, l)];
        }
        c[(ng + v, ng + v)] += params.d_l[v];
    }
    let secure = case.demand() - &attack.p_lv;
    let mut f0 = DVector::zeros(n);
    let mut f_step = DVector::zeros(n);
    for v in 0..nl {
        f0[ng + v] = -(secure[v] + attack.eps[v]);
        f_step[ng + v] = -attack.eps[v];
    }
    Ok(SecondOrderModel { m, c, g, f0, f_step, ng, nl })
}

/// Full Duncan pencil: 𝒜 ż + ℬ z = 𝔣 with 𝒜 = [[𝒞, ℳ], [ℳ, 0]], ℬ = [[𝒢, 0], [0, −ℳ]].
#[derive(Debug, Clone, PartialEq)]
pub struct StatePencil<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub ng: usize,
    pub nl: usize,
}

pub fn to_pencil<T: Scalar>(model: &SecondOrderModel<T>) -> StatePencil<T> {
    let n = model.n();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&model.c);
    a.view_mut((0, n), (n, n)).copy_from(&model.m);
    a.view_mut((n, 0), (n, n)).copy_from(&model.m);
    b.view_mut((0, 0), (n, n)).copy_from(&model.g);
    b.view_mut((n, n), (n, n)).copy_from(&(-&model.m));
    StatePencil { a, b, ng: model.ng, nl: model.nl }
}

/// Structurally regular part of the pencil.
///
/// The φ columns and the load rows of the second block are identically zero in both
/// 𝒜 and ℬ, so the full pencil is singular. Dropping them leaves the pencil on
/// z_r = [δ; θ; ω] with equations [first block; generator rows of the second block]:
/// 𝒜_r = [[𝒞, [M; 0]], [[M, 0], 0]], ℬ_r = [[𝒢, 0], [0, −M]].
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPencil<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub ng: usize,
    pub nl: usize,
}

impl<T: Scalar> ReducedPencil<T> {
    pub fn n(&self) -> usize {
        self.ng + self.nl
    }
    pub fn dim(&self) -> usize {
        2 * self.ng + self.nl
    }
}

impl<T: Scalar> StatePencil<T> {
    pub fn n(&self) -> usize {
        self.ng + self.nl
    }

    /// Full-state indices kept by the reduction (δ, θ, ω).
    pub fn kept(&self) -> Vec<usize> {
        let n = self.n();
        (0..n + self.ng).collect()
    }

    pub fn reduced(&self) -> ReducedPencil<T> {
        let keep = self.kept();
        let k = keep.len();
        let a = DMatrix::from_fn(k, k, |i, j| self.a[(keep[i], keep[j])]);
        let b = DMatrix::from_fn(k, k, |i, j| self.b[(keep[i], keep[j])]);
        ReducedPencil { a, b, ng: self.ng, nl: self.nl }
    }

    /// Recovers (ℳ, 𝒞, 𝒢) from the block layout.
    pub fn blocks(&self) -> (DMatrix<T>, DMatrix<T>, DMatrix<T>) {
        let n = self.n();
        (
            self.a.view((0, n), (n, n)).into_owned(),
            self.a.view((0, 0), (n, n)).into_owned(),
            self.b.view((0, 0), (n, n)).into_owned(),
        )
    }
}

/// Convenience: model and pencil for a case with an attack.
pub fn build<T: Scalar>(case: &GridCase<T>, params: &DynamicParams<T>, attack: &AttackSpec<T>) -> Result<(SecondOrderModel<T>, StatePencil<T>)> {
    let m = assemble_model(case, params, attack)?;
    let p = to_pencil(&m);
    Ok((m, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_io::parse_case;

    const TWO_BUS: &str = "mpc.baseMVA = 100;\nmpc.bus = [1 3 0; 2 1 50];\nmpc.gen = [1];\nmpc.branch = [1 2 0 0.1];\n";

    fn two() -> (GridCase<f64>, DynamicParams<f64>) {
        let c = parse_case(TWO_BUS).unwrap();
        let p = DynamicParams::uniform(&c, 10.0, 1.0, 1.0, 1.0, 5.0, 50.0, 2.0).unwrap();
        (c, p)
    }

    #[test]
    fn two_bus_laplacian() {
        let (c, _) = two();
        let b = build_susceptance(&c);
        assert_eq!(b.bbus, DMatrix::from_row_slice(2, 2, &[10.0, -10.0, -10.0, 10.0]));
    }

    #[test]
    fn scalar_pencil() {
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
        assert_eq!(p.a, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 0.0]));
        assert_eq!(p.b, DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, -1.0]));
        let (m, cc, g) = p.blocks();
        assert_eq!((m, cc, g), (model.m, model.c, model.g));
    }

    #[test]
    fn no_attack_blocks() {
        let (c, p) = two();
        let m = assemble_model(&c, &p, &AttackSpec::none(&c)).unwrap();
        assert_eq!(m.c[(1, 0)], 0.0);
        assert_eq!(m.c[(1, 1)], 1.0);
        // fraction 1 ⇒ no secure load
        assert_eq!(m.f0[1], 0.0);
    }

    #[test]
    fn budget_error_names_bus() {
        let (c, p) = two();
        // p_lv = 0.5, so K·0.04 ≤ 0.25 ⇒ K ≤ 6.25
        let ok = AttackSpec::none(&c).with_gain(&c, 2, 1, 6.25).unwrap();
        assert!(assemble_model(&c, &p, &ok).is_ok());
        let bad = AttackSpec::none(&c).with_gain(&c, 2, 1, 6.3).unwrap();
        assert!(matches!(assemble_model(&c, &p, &bad), Err(Error::Budget { bus: 2, .. })));
        let mut explore = bad.clone();
        explore.exploration = true;
        assert!(assemble_model(&c, &p, &explore).is_ok());
    }

    #[test]
    fn secure_load_enters_f0() {
        let (mut c, p) = two();
        c.set_vulnerable_fraction(2, 0.4).unwrap();
        let a = AttackSpec::none(&c).with_step(&c, 2, 0.1).unwrap();
        let m = assemble_model(&c, &p, &a).unwrap();
        assert!((m.f0[1] + (0.3 + 0.1)).abs() < 1e-15);
        assert!((m.f_step[1] + 0.1).abs() < 1e-15);
    }
}
