//! Case files, dynamic-parameter profiles and CSV output.
//!
//! Case files use a subset of the MATPOWER text format: `mpc.baseMVA`, `mpc.bus`,
//! `mpc.gen` and `mpc.branch`, plus an optional extension matrix
//! `mpc.vulnerable = [bus fraction; ...]`. Any other `mpc.*` assignment is skipped.
//!
//! Dynamic parameters use a line-oriented format:
//!
//! ```text
//! # comment
//! omega_nom = 50        # Hz
//! omega_max = 2         # Hz, allowed deviation
//! m = 10                # defaults applied to every bus without a table entry
//! d_g = 1
//! d_l = 1
//! k_p = 1
//! k_i = 5
//!
//! [generators]
//! # bus  m     d_g   k_p   k_i      ('-' keeps the default)
//! 33     -     2.0   -     -
//!
//! [loads]
//! # bus  d_l
//! 19     1.5
//! ```

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use log::warn;
use nalgebra::DVector;
use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus<T> {
    pub id: usize,
    pub kind: BusKind,
    pub base_kv: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T> {
    pub from: usize,
    pub to: usize,
    /// Series reactance, p.u.
    pub x: T,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRecord<T> {
    pub bus: usize,
    pub capacity_mw: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadRecord<T> {
    pub bus: usize,
    pub demand_mw: T,
    pub vulnerable_fraction: T,
}

/// A parsed network. Buses are ordered generators first, then loads, each group in
/// file order; `loads[k]` belongs to `buses[n_gen + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase<T> {
    pub base_mva: T,
    pub buses: Vec<Bus<T>>,
    pub branches: Vec<Branch<T>>,
    pub generators: Vec<GenRecord<T>>,
    pub loads: Vec<LoadRecord<T>>,
}

impl<T: Scalar> GridCase<T> {
    pub fn n(&self) -> usize {
        self.buses.len()
    }
    pub fn n_gen(&self) -> usize {
        self.buses.len() - self.loads.len()
    }
    pub fn n_load(&self) -> usize {
        self.loads.len()
    }
    /// Model index of a bus id (generators first).
    pub fn index(&self, bus: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == bus)
    }
    pub fn gen_index(&self, bus: usize) -> Option<usize> {
        self.index(bus).filter(|&i| i < self.n_gen())
    }
    pub fn load_index(&self, bus: usize) -> Option<usize> {
        self.index(bus).and_then(|i| i.checked_sub(self.n_gen()))
    }
    pub fn gen_buses(&self) -> Vec<usize> {
        self.buses[..self.n_gen()].iter().map(|b| b.id).collect()
    }
    pub fn load_buses(&self) -> Vec<usize> {
        self.buses[self.n_gen()..].iter().map(|b| b.id).collect()
    }
    /// Total demand per load bus, p.u.
    pub fn demand(&self) -> DVector<T> {
        DVector::from_iterator(self.n_load(), self.loads.iter().map(|l| l.demand_mw / self.base_mva))
    }
    /// Attackable demand p^{LV}, p.u.
    pub fn vulnerable(&self) -> DVector<T> {
        DVector::from_iterator(
            self.n_load(),
            self.loads.iter().map(|l| l.demand_mw * l.vulnerable_fraction / self.base_mva),
        )
    }
    /// Secure demand p^{LS} = p^L − p^{LV}, p.u.
    pub fn secure(&self) -> DVector<T> {
        self.demand() - self.vulnerable()
    }
    pub fn set_vulnerable_fraction(&mut self, bus: usize, f: T) -> Result<()> {
        if !(f >= T::zero() && f <= T::one()) {
            return Err(Error::InvalidCase(format!("vulnerable fraction {f} outside [0, 1]")));
        }
        let k = self.load_index(bus).ok_or(Error::UnknownBus(bus))?;
        self.loads[k].vulnerable_fraction = f;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// MATPOWER subset

struct Matrix {
    rows: Vec<Vec<(f64, usize, usize)>>,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Syntax { line, col, msg: msg.into() }
}

fn strip_comment(s: &str) -> &str {
    let mut in_str = false;
    for (i, ch) in s.char_indices() {
        match ch {
            '\'' => in_str = !in_str,
            '%' if !in_str => return &s[..i],
            _ => {}
        }
    }
    s
}

/// Splits the file into `mpc.<name>` assignments. Matrices are tokenized; scalars kept as text.
fn scan(text: &str) -> Result<(HashMap<String, Matrix>, HashMap<String, (String, usize)>)> {
    let lines: Vec<&str> = text.lines().collect();
    let mut mats = HashMap::new();
    let mut scalars = HashMap::new();
    let mut li = 0;
    while li < lines.len() {
        let raw = strip_comment(lines[li]);
        let body = raw.trim();
        let lead = raw.len() - raw.trim_start().len();
        if body.is_empty() || body.starts_with("function") {
            li += 1;
            continue;
        }
        let Some(rest) = body.strip_prefix("mpc.") else {
            return Err(syntax(li + 1, lead + 1, format!("unexpected statement `{body}`")));
        };
        let Some(eq) = rest.find('=') else {
            return Err(syntax(li + 1, lead + 1, "expected `=`"));
        };
        let name = rest[..eq].trim().to_string();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(syntax(li + 1, lead + 5, format!("bad field name `{name}`")));
        }
        let value = rest[eq + 1..].trim_start();
        let vcol = lead + 4 + eq + 1 + (rest[eq + 1..].len() - value.len()) + 1;
        if let Some(open) = value.chars().next().filter(|c| *c == '[' || *c == '{') {
            let close = if open == '[' { ']' } else { '}' };
            let start_line = li;
            let mut rows: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new()];
            let mut first = true;
            let mut done = false;
            while li < lines.len() && !done {
                let l = strip_comment(lines[li]);
                let (offset, seg) = if first {
                    (vcol + 1, &value[1..])
                } else {
                    (1, l)
                };
                first = false;
                // tokenize seg
                let bytes: Vec<char> = seg.chars().collect();
                let mut i = 0;
                while i < bytes.len() {
                    let c = bytes[i];
                    if c == close {
                        done = true;
                        break;
                    } else if c == ';' {
                        rows.push(Vec::new());
                        i += 1;
                    } else if c.is_whitespace() || c == ',' {
                        i += 1;
                    } else {
                        let s = i;
                        while i < bytes.len()
                            && !bytes[i].is_whitespace()
                            && bytes[i] != ','
                            && bytes[i] != ';'
                            && bytes[i] != close
                        {
                            i += 1;
                        }
                        let tok: String = bytes[s..i].iter().collect();
                        let col = offset + s;
                        if open == '[' {
                            let v: f64 = parse_num(&tok).ok_or_else(|| {
                                syntax(li + 1, col, format!("invalid number `{tok}`"))
                            })?;
                            rows.last_mut().unwrap().push((v, li + 1, col));
                        }
                    }
                }
                if !done {
                    rows.push(Vec::new());
                    li += 1;
                }
            }
            if !done {
                return Err(syntax(start_line + 1, vcol, format!("unterminated `{name}` block")));
            }
            li += 1;
            rows.retain(|r| !r.is_empty());
            if open == '[' {
                mats.insert(name, Matrix { rows });
            }
        } else {
            let v = value.trim_end().trim_end_matches(';').trim().to_string();
            scalars.insert(name, (v, li + 1));
            li += 1;
        }
    }
    Ok((mats, scalars))
}

fn parse_num(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse::<f64>().ok(),
    }
}

fn require_cols(m: &Matrix, name: &str, n: usize) -> Result<()> {
    for r in &m.rows {
        if r.len() < n {
            let (_, line, col) = r[0];
            return Err(syntax(line, col, format!("`{name}` row needs at least {n} columns, found {}", r.len())));
        }
        if r.len() != m.rows[0].len() {
            let (_, line, col) = r[0];
            return Err(syntax(line, col, format!("ragged `{name}` matrix")));
        }
    }
    Ok(())
}

fn as_id(v: (f64, usize, usize)) -> Result<usize> {
    if v.0 >= 0.0 && v.0.fract() == 0.0 {
        Ok(v.0 as usize)
    } else {
        Err(syntax(v.1, v.2, format!("expected a bus number, found {}", v.0)))
    }
}

/// Parses a case and reports dropped loads through `log::warn!`.
pub fn parse_case<T: Scalar>(text: &str) -> Result<GridCase<T>> {
    let (case, warnings) = parse_case_with_warnings(text)?;
    for w in &warnings {
        warn!("{w}");
    }
    Ok(case)
}

/// Parses a case, returning warnings instead of logging them.
pub fn parse_case_with_warnings<T: Scalar>(text: &str) -> Result<(GridCase<T>, Vec<String>)> {
    let (mats, scalars) = scan(text)?;
    let mut warnings = Vec::new();
    let base = match scalars.get("baseMVA") {
        Some((s, line)) => parse_num(s).ok_or_else(|| syntax(*line, 1, format!("invalid baseMVA `{s}`")))?,
        None => return Err(Error::InvalidCase("missing mpc.baseMVA".into())),
    };
    if !(base > 0.0) {
        return Err(Error::InvalidCase(format!("baseMVA must be positive, got {base}")));
    }
    let get = |n: &str| mats.get(n).ok_or_else(|| Error::InvalidCase(format!("missing mpc.{n}")));
    let bus_m = get("bus")?;
    let gen_m = get("gen")?;
    let br_m = get("branch")?;
    require_cols(bus_m, "bus", 3)?;
    require_cols(gen_m, "gen", 1)?;
    require_cols(br_m, "branch", 4)?;

    let mut seen = HashSet::new();
    let mut raw_buses = Vec::new();
    for r in &bus_m.rows {
        let id = as_id(r[0])?;
        if !seen.insert(id) {
            return Err(syntax(r[0].1, r[0].2, format!("duplicate bus {id}")));
        }
        let kv = r.get(9).map(|v| v.0).unwrap_or(0.0);
        raw_buses.push((id, r[2].0, kv, r[0]));
    }

    let mut gen_set = HashSet::new();
    let mut generators = Vec::new();
    for r in &gen_m.rows {
        let bus = as_id(r[0])?;
        if !seen.contains(&bus) {
            return Err(Error::InvalidCase(format!("generator at unknown bus {bus} (line {})", r[0].1)));
        }
        let on = r.get(7).map(|v| v.0 > 0.0).unwrap_or(true);
        if on {
            gen_set.insert(bus);
            let cap = r.get(8).map(|v| v.0).unwrap_or(0.0);
            generators.push(GenRecord { bus, capacity_mw: T::lit(cap) });
        }
    }
    if gen_set.is_empty() {
        return Err(Error::InvalidCase("no in-service generator".into()));
    }

    let mut branches = Vec::new();
    for r in &br_m.rows {
        let from = as_id(r[0])?;
        let to = as_id(r[1])?;
        for b in [from, to] {
            if !seen.contains(&b) {
                return Err(Error::DanglingBranch { from, to, missing: b });
            }
        }
        let x = r[3].0;
        if !(x > 0.0) {
            return Err(Error::NonpositiveReactance { from, to, x });
        }
        let on = r.get(10).map(|v| v.0 > 0.0).unwrap_or(true);
        branches.push(Branch { from, to, x: T::lit(x), in_service: on });
    }

    let mut fractions = HashMap::new();
    if let Some(vm) = mats.get("vulnerable") {
        require_cols(vm, "vulnerable", 2)?;
        for r in &vm.rows {
            let bus = as_id(r[0])?;
            let f = r[1].0;
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidCase(format!("vulnerable fraction {f} at bus {bus} outside [0, 1]")));
            }
            fractions.insert(bus, f);
        }
    }

    let mut buses = Vec::new();
    let mut load_buses = Vec::new();
    let mut loads = Vec::new();
    for &(id, pd, kv, _) in raw_buses.iter() {
        if gen_set.contains(&id) {
            if pd != 0.0 {
                warnings.push(format!("dropping {pd} MW load at generator bus {id}"));
            }
            buses.push(Bus { id, kind: BusKind::Generator, base_kv: T::lit(kv) });
        } else {
            if pd < 0.0 {
                return Err(Error::InvalidCase(format!("negative demand {pd} MW at bus {id}")));
            }
            load_buses.push(Bus { id, kind: BusKind::Load, base_kv: T::lit(kv) });
            loads.push(LoadRecord {
                bus: id,
                demand_mw: T::lit(pd),
                vulnerable_fraction: T::lit(fractions.get(&id).copied().unwrap_or(1.0)),
            });
        }
    }
    for b in fractions.keys() {
        if gen_set.contains(b) {
            warnings.push(format!("ignoring vulnerable fraction at generator bus {b}"));
        }
    }
    buses.extend(load_buses);
    let case = GridCase { base_mva: T::lit(base), buses, branches, generators, loads };
    check_connected(&case)?;
    Ok((case, warnings))
}

fn check_connected<T: Scalar>(case: &GridCase<T>) -> Result<()> {
    let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
    for b in case.branches.iter().filter(|b| b.in_service) {
        adj.entry(b.from).or_default().push(b.to);
        adj.entry(b.to).or_default().push(b.from);
    }
    let start = case.buses[0].id;
    let mut seen = HashSet::from([start]);
    let mut q = VecDeque::from([start]);
    while let Some(u) = q.pop_front() {
        for &w in adj.get(&u).map(|v| v.as_slice()).unwrap_or(&[]) {
            if seen.insert(w) {
                q.push_back(w);
            }
        }
    }
    match case.buses.iter().find(|b| !seen.contains(&b.id)) {
        Some(b) => Err(Error::Disconnected(b.id, start)),
        None => Ok(()),
    }
}

/// Serializes a case back to the documented MATPOWER subset.
pub fn write_case<T: Scalar>(case: &GridCase<T>) -> String {
    let mut s = String::new();
    let f = |x: T| format!("{}", x.to_f64());
    let _ = writeln!(s, "function mpc = laa_case");
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {};", f(case.base_mva));
    let _ = writeln!(s, "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV");
    let _ = writeln!(s, "mpc.bus = [");
    let ng = case.n_gen();
    for (i, b) in case.buses.iter().enumerate() {
        let (ty, pd) = if i < ng {
            (if i == 0 { 3 } else { 2 }, "0".to_string())
        } else {
            (1, f(case.loads[i - ng].demand_mw))
        };
        let _ = writeln!(s, "\t{}\t{}\t{}\t0\t0\t0\t1\t1\t0\t{};", b.id, ty, pd, f(b.base_kv));
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax");
    let _ = writeln!(s, "mpc.gen = [");
    for g in &case.generators {
        let _ = writeln!(s, "\t{}\t0\t0\t0\t0\t1\t{}\t1\t{};", g.bus, f(case.base_mva), f(g.capacity_mw));
    }
    let _ = writeln!(s, "];");
    let _ = writeln!(s, "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus");
    let _ = writeln!(s, "mpc.branch = [");
    for b in &case.branches {
        let _ = writeln!(
            s,
            "\t{}\t{}\t0\t{}\t0\t0\t0\t0\t0\t0\t{};",
            b.from,
            b.to,
            f(b.x),
            if b.in_service { 1 } else { 0 }
        );
    }
    let _ = writeln!(s, "];");
    if case.loads.iter().any(|l| l.vulnerable_fraction != T::one()) {
        let _ = writeln!(s, "mpc.vulnerable = [");
        for l in &case.loads {
            let _ = writeln!(s, "\t{}\t{};", l.bus, f(l.vulnerable_fraction));
        }
        let _ = writeln!(s, "];");
    }
    s
}

// ---------------------------------------------------------------------------
// Dynamic parameters

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicParams<T> {
    /// Generator inertia, p.u.·s².
    pub m: DVector<T>,
    pub d_g: DVector<T>,
    pub k_p: DVector<T>,
    pub k_i: DVector<T>,
    /// Load damping, one per load bus.
    pub d_l: DVector<T>,
    /// Nominal frequency, Hz.
    pub omega_nom: T,
    /// Allowed frequency deviation, Hz.
    pub omega_max: T,
}

impl<T: Scalar> DynamicParams<T> {
    /// Uniform profile over a case.
    pub fn uniform(case: &GridCase<T>, m: T, d_g: T, d_l: T, k_p: T, k_i: T, omega_nom: T, omega_max: T) -> Result<Self> {
        let ng = case.n_gen();
        let p = DynamicParams {
            m: DVector::from_element(ng, m),
            d_g: DVector::from_element(ng, d_g),
            k_p: DVector::from_element(ng, k_p),
            k_i: DVector::from_element(ng, k_i),
            d_l: DVector::from_element(case.n_load(), d_l),
            omega_nom,
            omega_max,
        };
        p.validate()?;
        Ok(p)
    }

    /// ω_max expressed in per-unit of nominal frequency, the unit of the state ω.
    pub fn omega_max_pu(&self) -> T {
        self.omega_max / self.omega_nom
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: &DVector<T>, name: &str| -> Result<()> {
            match v.iter().position(|x| !(*x > T::zero())) {
                Some(i) => Err(Error::Params(format!("{name}[{i}] = {} must be positive", v[i]))),
                None => Ok(()),
            }
        };
        let nonneg = |v: &DVector<T>, name: &str| -> Result<()> {
            match v.iter().position(|x| !(*x >= T::zero())) {
                Some(i) => Err(Error::Params(format!("{name}[{i}] = {} must be nonnegative", v[i]))),
                None => Ok(()),
            }
        };
        pos(&self.m, "m")?;
        pos(&self.d_g, "d_g")?;
        pos(&self.d_l, "d_l")?;
        nonneg(&self.k_p, "k_p")?;
        nonneg(&self.k_i, "k_i")?;
        if !(self.omega_max > T::zero()) {
            return Err(Error::Params("omega_max must be positive".into()));
        }
        if !(self.omega_nom > T::zero()) {
            return Err(Error::Params("omega_nom must be positive".into()));
        }
        Ok(())
    }
}

const GEN_KEYS: [&str; 4] = ["m", "d_g", "k_p", "k_i"];

pub fn load_dynamic_params<T: Scalar>(text: &str, case: &GridCase<T>) -> Result<DynamicParams<T>> {
    let perr = |line: usize, msg: String| Error::Params(format!("line {line}: {msg}"));
    let mut globals: HashMap<String, f64> = HashMap::new();
    let mut gen_rows: HashMap<usize, [Option<f64>; 4]> = HashMap::new();
    let mut load_rows: HashMap<usize, Option<f64>> = HashMap::new();
    #[derive(PartialEq)]
    enum Sec {
        Top,
        Gen,
        Load,
    }
    let mut sec = Sec::Top;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split(['#', '%']).next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            sec = match line {
                "[generators]" => Sec::Gen,
                "[loads]" => Sec::Load,
                _ => return Err(perr(ln, format!("unknown section {line}"))),
            };
            continue;
        }
        let val = |tok: &str| -> Result<Option<f64>> {
            if tok == "-" {
                Ok(None)
            } else {
                tok.parse::<f64>().map(Some).map_err(|_| perr(ln, format!("invalid number `{tok}`")))
            }
        };
        match sec {
            Sec::Top => {
                let (k, v) = line.split_once('=').ok_or_else(|| perr(ln, "expected `key = value`".into()))?;
                let k = k.trim();
                if !matches!(k, "omega_nom" | "omega_max" | "m" | "d_g" | "d_l" | "k_p" | "k_i") {
                    return Err(perr(ln, format!("unknown key `{k}`")));
                }
                let v = val(v.trim())?.ok_or_else(|| perr(ln, format!("`{k}` needs a value")))?;
                globals.insert(k.to_string(), v);
            }
            Sec::Gen => {
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != 5 {
                    return Err(perr(ln, "generator rows are `bus m d_g k_p k_i`".into()));
                }
                let bus = toks[0].parse::<usize>().map_err(|_| perr(ln, format!("bad bus `{}`", toks[0])))?;
                if case.gen_index(bus).is_none() {
                    return Err(perr(ln, format!("bus {bus} is not a generator bus")));
                }
                let mut row = [None; 4];
                for k in 0..4 {
                    row[k] = val(toks[k + 1])?;
                }
                gen_rows.insert(bus, row);
            }
            Sec::Load => {
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != 2 {
                    return Err(perr(ln, "load rows are `bus d_l`".into()));
                }
                let bus = toks[0].parse::<usize>().map_err(|_| perr(ln, format!("bad bus `{}`", toks[0])))?;
                if case.load_index(bus).is_none() {
                    return Err(perr(ln, format!("bus {bus} is not a load bus")));
                }
                load_rows.insert(bus, val(toks[1])?);
            }
        }
    }
    let need = |k: &str| -> Result<f64> {
        globals.get(k).copied().ok_or_else(|| Error::Params(format!("missing required `{k}`")))
    };
    let omega_nom = need("omega_nom")?;
    let omega_max = need("omega_max")?;
    let fill = |key: &str, bus: usize, v: Option<f64>| -> Result<T> {
        match v.or_else(|| globals.get(key).copied()) {
            Some(x) => Ok(T::lit(x)),
            None => Err(Error::Params(format!("missing default `{key}` (needed by bus {bus})"))),
        }
    };
    let ng = case.n_gen();
    let mut cols: Vec<DVector<T>> = vec![DVector::zeros(ng); 4];
    for (g, b) in case.buses[..ng].iter().enumerate() {
        let row = gen_rows.get(&b.id).copied().unwrap_or([None; 4]);
        for k in 0..4 {
            cols[k][g] = fill(GEN_KEYS[k], b.id, row[k])?;
        }
    }
    let mut d_l = DVector::zeros(case.n_load());
    for (l, b) in case.buses[ng..].iter().enumerate() {
        d_l[l] = fill("d_l", b.id, load_rows.get(&b.id).copied().flatten())?;
    }
    let [m, d_g, k_p, k_i]: [DVector<T>; 4] = cols.try_into().unwrap();
    let p = DynamicParams { m, d_g, k_p, k_i, d_l, omega_nom: T::lit(omega_nom), omega_max: T::lit(omega_max) };
    p.validate()?;
    Ok(p)
}

/// Writes a fully explicit profile (every bus tabulated) in the format above.
pub fn write_dynamic_params<T: Scalar>(p: &DynamicParams<T>, case: &GridCase<T>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "omega_nom = {}", p.omega_nom.to_f64());
    let _ = writeln!(s, "omega_max = {}", p.omega_max.to_f64());
    let _ = writeln!(s, "\n[generators]\n# bus m d_g k_p k_i");
    for (g, bus) in case.gen_buses().into_iter().enumerate() {
        let _ = writeln!(
            s,
            "{bus} {} {} {} {}",
            p.m[g].to_f64(),
            p.d_g[g].to_f64(),
            p.k_p[g].to_f64(),
            p.k_i[g].to_f64()
        );
    }
    let _ = writeln!(s, "\n[loads]\n# bus d_l");
    for (l, bus) in case.load_buses().into_iter().enumerate() {
        let _ = writeln!(s, "{bus} {}", p.d_l[l].to_f64());
    }
    s
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    B(bool),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}
impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::I(x)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}
impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }
    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Formats a float with 9 significant digits, fixed notation for moderate exponents.
pub fn fmt_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

/// RFC 4180 CSV with LF line endings.
pub fn write_table(t: &Table) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&t.header).expect("in-memory write");
    for r in &t.rows {
        let rec: Vec<String> = r
            .iter()
            .map(|c| match c {
                Cell::F(x) => fmt_sig9(*x),
                Cell::I(i) => i.to_string(),
                Cell::S(s) => s.clone(),
                Cell::B(b) => b.to_string(),
            })
            .collect();
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

// ---------------------------------------------------------------------------
// Shipped cases

/// Case files and default parameter profiles compiled into the crate.
pub mod builtin {
    pub const NAMES: [&str; 3] = ["case6ww", "case14", "case39"];

    /// `(case text, default profile text)` for a shipped case.
    pub fn get(name: &str) -> Option<(&'static str, &'static str)> {
        match name {
            "case6ww" => Some((include_str!("../data/case6ww.m"), include_str!("../data/case6ww.params"))),
            "case14" => Some((include_str!("../data/case14.m"), include_str!("../data/case14.params"))),
            "case39" => Some((include_str!("../data/case39.m"), include_str!("../data/case39.params"))),
            _ => None,
        }
    }

    /// Parsed case and default profile.
    pub fn load<T: super::Scalar>(name: &str) -> super::Result<(super::GridCase<T>, super::DynamicParams<T>)> {
        let (c, p) = get(name).ok_or_else(|| super::Error::InvalidCase(format!("no builtin case `{name}`")))?;
        let case = super::parse_case(c)?;
        let params = super::load_dynamic_params(p, &case)?;
        Ok((case, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = two\nmpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0 230;\n 2 1 50 0 0 0 1 1 0 230;\n];\nmpc.gen = [ 1 0 0 0 0 1 100 1 200 ];\nmpc.branch = [\n 1 2 0 0.1 0 0 0 0 0 0 1;\n];\n";

    #[test]
    fn two_bus() {
        let c: GridCase<f64> = parse_case(TWO_BUS).unwrap();
        assert_eq!((c.n_gen(), c.n_load()), (1, 1));
        assert_eq!(c.demand()[0], 0.5);
        assert_eq!(c.generators[0].capacity_mw, 200.0);
    }

    #[test]
    fn syntax_error_position() {
        let bad = TWO_BUS.replace("0.1 0 0", "0.1 zz 0");
        match parse_case::<f64>(&bad) {
            Err(Error::Syntax { line, col, .. }) => {
                assert_eq!(line, 9);
                assert_eq!(col, 12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn garbage_line() {
        let bad = format!("{TWO_BUS}\nhello world\n");
        assert!(matches!(parse_case::<f64>(&bad), Err(Error::Syntax { col: 1, .. })));
    }

    #[test]
    fn sig9() {
        assert_eq!(fmt_sig9(1.0), "1.00000000");
        assert_eq!(fmt_sig9(-0.0123456789123), "-0.0123456789");
        assert_eq!(fmt_sig9(9.999999999999), "10.0000000");
        assert_eq!(fmt_sig9(123456789012.0), "1.23456789e11");
        assert_eq!(fmt_sig9(0.0), "0");
    }

    #[test]
    fn csv_quotes_and_lf() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["x,y".into(), 2.5.into()]);
        let s = String::from_utf8(write_table(&t)).unwrap();
        assert_eq!(s, "a,b\n\"x,y\",2.50000000\n");
    }

    #[test]
    fn params_defaults_and_override() {
        let c: GridCase<f64> = parse_case(TWO_BUS).unwrap();
        let txt = "omega_nom = 50\nomega_max = 2\nm = 10\nd_g = 1\nd_l = 1\nk_p = 1\nk_i = 5\n[generators]\n1 - 3 - -\n";
        let p = load_dynamic_params(txt, &c).unwrap();
        assert_eq!(p.d_g[0], 3.0);
        assert_eq!(p.m[0], 10.0);
        assert!((p.omega_max_pu() - 0.04).abs() < 1e-15);
        let again = load_dynamic_params(&write_dynamic_params(&p, &c), &c).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn params_missing_default() {
        let c: GridCase<f64> = parse_case(TWO_BUS).unwrap();
        let e = load_dynamic_params("omega_nom = 50\nomega_max = 2\nm = 1\nd_g = 1\nk_p = 0\nk_i = 0\n", &c);
        assert!(matches!(e, Err(Error::Params(msg)) if msg.contains("d_l")));
    }
}
