//! Connections in local coordinates and the transfer principle.
//!
//! Symmetric index tuples are stored as sorted coordinate lists ([`Multi`]).
//! Covariant derivatives are kept as differential operators
//! `∇_α g = Σ_γ L^γ_α ∂_γ g` with polynomial coefficients, and the transfer
//! symbols `Γ̃` invert the symmetrised `L` on the symmetric tensor space.
//! A value `Γ̃^β_α` is stored once per multiset `β`; every ordering of `β`
//! carries that value.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::controlled::{base_atoms, compose_smooth, coords_of, davie_solve, rough_integral, ControlledPath, Integrand, VectorFields};
use crate::error::{Error, Result};
use crate::forest::{multiset_alphabet, numbered_letters, Label};
use crate::hopf::{qr, Q};
use crate::lift::{lift, pushforward, pushforward_bracket};
use crate::poly::{Coeff, Poly, PolyMap, QPoly, QPolyMap};
use crate::rough_path::{Extension, RoughPath};

/// Sorted coordinate indices standing for a symmetric tuple.
pub type Multi = Vec<usize>;

/// Multisets over `0..m` of length `1..=max_len`, shortest first.
pub fn multisets(m: usize, max_len: u32) -> Vec<Multi> {
    let mut out = Vec::new();
    if m == 0 {
        return out;
    }
    for len in 1..=max_len as usize {
        let mut cur = vec![0usize; len];
        loop {
            out.push(cur.clone());
            let mut p = len;
            while p > 0 && cur[p - 1] == m - 1 {
                p -= 1;
            }
            if p == 0 {
                break;
            }
            cur[p - 1] += 1;
            let v = cur[p - 1];
            cur[p..].iter_mut().for_each(|c| *c = v);
        }
    }
    out
}

/// All ordered tuples over `0..m` of length `len`.
pub fn tuples(m: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out.into_iter().flat_map(|t| (0..m).map(move |a| [t.clone(), vec![a]].concat())).collect();
    }
    out
}

/// Distinct orderings of a multiset.
pub fn orderings(b: &[usize]) -> Vec<Vec<usize>> {
    fn rec(rest: &mut BTreeMap<usize, usize>, cur: &mut Vec<usize>, len: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        let keys: Vec<usize> = rest.iter().filter(|(_, &c)| c > 0).map(|(&k, _)| k).collect();
        for k in keys {
            *rest.get_mut(&k).unwrap() -= 1;
            cur.push(k);
            rec(rest, cur, len, out);
            cur.pop();
            *rest.get_mut(&k).unwrap() += 1;
        }
    }
    let mut rest = BTreeMap::new();
    for &a in b {
        *rest.entry(a).or_insert(0) += 1;
    }
    let mut out = Vec::new();
    rec(&mut rest, &mut Vec::new(), b.len(), &mut out);
    out
}

/// `𝒩(B)`: the product of multiplicity factorials.
pub fn sym_factor(b: &[usize]) -> i64 {
    let mut counts: BTreeMap<usize, i64> = BTreeMap::new();
    for &a in b {
        *counts.entry(a).or_insert(0) += 1;
    }
    counts.values().map(|&k| (1..=k).product::<i64>()).product()
}

fn sorted(v: &[usize]) -> Multi {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

fn union(a: &[usize], b: &[usize]) -> Multi {
    sorted(&[a, b].concat())
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn add_into<T: Coeff>(map: &mut BTreeMap<Multi, Poly<T>>, key: Multi, c: Poly<T>) {
    if c.is_zero() {
        return;
    }
    match map.entry(key) {
        Entry::Occupied(mut e) => {
            let s = e.get().add(&c);
            if s.is_zero() {
                e.remove();
            } else {
                *e.get_mut() = s;
            }
        }
        Entry::Vacant(v) => {
            v.insert(c);
        }
    }
}

/// Christoffel symbols `Γ^γ_{αβ}` as polynomials of the coordinates. No
/// symmetry in the lower indices is assumed.
#[derive(Clone, Debug, PartialEq)]
pub struct Connection<T: Coeff = Q> {
    dim: usize,
    /// Entry `(γ·m + α)·m + β` holds `Γ^γ_{αβ}`.
    symbols: Vec<Poly<T>>,
}

impl<T: Coeff> Connection<T> {
    pub fn new(dim: usize, symbols: Vec<Poly<T>>) -> Result<Self> {
        if symbols.len() != dim * dim * dim || symbols.iter().any(|p| p.nvars() != dim) {
            return Err(Error::InvalidInput(format!("a connection on R^{dim} needs {} symbols in {dim} variables", dim * dim * dim)));
        }
        Ok(Connection { dim, symbols })
    }

    pub fn flat(dim: usize) -> Self {
        Connection { dim, symbols: vec![Poly::zero(dim); dim * dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `Γ^g_{ab}`.
    pub fn symbol(&self, g: usize, a: usize, b: usize) -> &Poly<T> {
        &self.symbols[(g * self.dim + a) * self.dim + b]
    }

    /// `Γ^g_{ab} − Γ^g_{ba}`.
    pub fn torsion(&self, g: usize, a: usize, b: usize) -> Poly<T> {
        self.symbol(g, a, b).sub(self.symbol(g, b, a))
    }

    pub fn is_torsion_free(&self) -> bool {
        let m = self.dim;
        (0..m).all(|g| (0..m).all(|a| (a + 1..m).all(|b| self.torsion(g, a, b).is_zero())))
    }

    pub fn is_flat(&self) -> bool {
        self.symbols.iter().all(|p| p.is_zero())
    }

    /// Drops monomials above degree `n` in every symbol.
    pub fn truncate(&self, n: u32) -> Self {
        Connection { dim: self.dim, symbols: self.symbols.iter().map(|p| p.truncate(n)).collect() }
    }

    pub fn to_f64(&self) -> Connection<f64> {
        Connection { dim: self.dim, symbols: self.symbols.iter().map(|p| p.to_f64()).collect() }
    }
}

impl Connection<Q> {
    /// Parses `(γ, α, β, polynomial)` entries; unlisted symbols vanish.
    pub fn parse(dim: usize, entries: &[(usize, usize, usize, &str)]) -> Result<Self> {
        let mut out = Connection::flat(dim);
        for &(g, a, b, s) in entries {
            if g >= dim || a >= dim || b >= dim {
                return Err(Error::InvalidInput(format!("Christoffel index ({g},{a},{b}) out of range")));
            }
            out.symbols[(g * dim + a) * dim + b] = QPoly::parse(s, dim)?;
        }
        Ok(out)
    }
}

/// Carries `Γ` to new coordinates `y` by the Christoffel rule
/// `Γ^k_{ij} = ∂^k_γ Γ^γ_{αβ} ∂^α_i ∂^β_j + ∂^k_γ ∂^γ_{ij}`, given the old
/// coordinates `x(y)` and `jac_new(k, γ) = ∂y^k/∂x^γ` as functions of `y`.
fn carry_connection<T: Coeff>(conn: &Connection<T>, xin: &[Poly<T>], jac_new: &dyn Fn(usize, usize) -> Poly<T>) -> Connection<T> {
    let m = conn.dim;
    let nv = xin[0].nvars();
    let at: Vec<Poly<T>> = conn.symbols.iter().map(|p| p.compose(xin)).collect();
    let dx: Vec<Vec<Poly<T>>> = (0..m).map(|i| (0..m).map(|a| xin[a].derivative(i)).collect()).collect();
    let jac: Vec<Vec<Poly<T>>> = (0..m).map(|k| (0..m).map(|g| jac_new(k, g)).collect()).collect();
    let mut symbols = Vec::with_capacity(m * m * m);
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                let mut s = Poly::zero(nv);
                for g in 0..m {
                    let mut inner = dx[j][g].derivative(i);
                    for a in 0..m {
                        for b in 0..m {
                            let c = &at[(g * m + a) * m + b];
                            if !c.is_zero() {
                                inner = inner.add(&c.mul(&dx[i][a]).mul(&dx[j][b]));
                            }
                        }
                    }
                    if !inner.is_zero() {
                        s = s.add(&jac[k][g].mul(&inner));
                    }
                }
                symbols.push(s);
            }
        }
    }
    Connection { dim: m, symbols }
}

/// The connection in the chart `y = map(x)`, whose inverse `x = inverse(y)`
/// is polynomial.
pub fn christoffel_transform(conn: &Connection, map: &QPolyMap, inverse: &QPolyMap) -> Result<Connection> {
    let m = conn.dim;
    if map.nin != m || map.nout() != m || inverse.nin != m || inverse.nout() != m {
        return Err(Error::InvalidInput("chart maps must be square of the connection's dimension".into()));
    }
    let back = map.compose(inverse);
    if (0..m).any(|k| back.comps[k] != Poly::var(m, k)) {
        return Err(Error::InvalidInput("the given inverse does not invert the chart map".into()));
    }
    Ok(carry_connection(conn, &inverse.comps, &|k, g| map.comps[k].derivative(g).compose(&inverse.comps)))
}

/// The coefficients `L^γ_α` of `∇_α g = Σ_γ L^γ_α ∂_γ g` for ordered tuples
/// `α` of length at most `n`, `γ` ranging over multisets.
#[derive(Clone, Debug)]
pub struct CovariantCoeffs<T: Coeff = Q> {
    dim: usize,
    n: u32,
    ops: BTreeMap<Vec<usize>, BTreeMap<Multi, Poly<T>>>,
}

impl<T: Coeff> CovariantCoeffs<T> {
    /// Runs the recursion
    /// `∇_{γ1⋯γn} = ∂_{γ1} ∇_{γ2⋯γn} − Σ_{k≥2} ∇_{γ2⋯α⋯γn} Γ^α_{γ1γk}`,
    /// where `α` replaces `γk`.
    pub fn new(conn: &Connection<T>, n: u32) -> Self {
        let m = conn.dim;
        let mut ops: BTreeMap<Vec<usize>, BTreeMap<Multi, Poly<T>>> = BTreeMap::new();
        for a in 0..m {
            ops.insert(vec![a], BTreeMap::from([(vec![a], Poly::one(m))]));
        }
        for len in 2..=n as usize {
            for alpha in tuples(m, len) {
                let tail = &alpha[1..];
                let mut op = BTreeMap::new();
                for (g, c) in &ops[tail] {
                    add_into(&mut op, g.clone(), c.derivative(alpha[0]));
                    add_into(&mut op, union(g, &[alpha[0]]), c.clone());
                }
                for k in 0..tail.len() {
                    for d in 0..m {
                        let gam = conn.symbol(d, alpha[0], tail[k]);
                        if gam.is_zero() {
                            continue;
                        }
                        let mut t = tail.to_vec();
                        t[k] = d;
                        for (g, c) in &ops[&t] {
                            add_into(&mut op, g.clone(), c.mul(gam).neg());
                        }
                    }
                }
                ops.insert(alpha, op);
            }
        }
        CovariantCoeffs { dim: m, n, ops }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// `∇_α` as `γ ↦ L^γ_α`.
    pub fn op(&self, alpha: &[usize]) -> &BTreeMap<Multi, Poly<T>> {
        &self.ops[alpha]
    }

    /// `L^γ_α`, zero when absent.
    pub fn coeff(&self, alpha: &[usize], gamma: &[usize]) -> Poly<T> {
        self.ops[alpha].get(&sorted(gamma)).cloned().unwrap_or_else(|| Poly::zero(self.dim))
    }

    /// `∇_α g`.
    pub fn apply(&self, alpha: &[usize], g: &Poly<T>) -> Poly<T> {
        self.ops[alpha].iter().fold(Poly::zero(g.nvars()), |acc, (gamma, c)| acc.add(&c.mul(&g.partial(gamma))))
    }
}

/// Coefficients `S^{upper}_{lower}` at a point, indexed by an ordered upper
/// tuple and symmetrised in the lower one.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorTable {
    dim: usize,
    n: u32,
    values: BTreeMap<(Vec<usize>, Multi), f64>,
}

impl SymTensorTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn get(&self, upper: &[usize], lower: &[usize]) -> f64 {
        self.values.get(&(upper.to_vec(), sorted(lower))).copied().unwrap_or(0.0)
    }

    /// Non-zero entries as `(upper, lower, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (&[usize], &[usize], f64)> {
        self.values.iter().map(|((u, l), v)| (u.as_slice(), l.as_slice(), *v))
    }

    pub fn max_diff(&self, other: &SymTensorTable) -> f64 {
        let mut keys: Vec<&(Vec<usize>, Multi)> = self.values.keys().collect();
        keys.extend(other.values.keys());
        keys.into_iter().map(|(u, l)| (self.get(u, l) - other.get(u, l)).abs()).fold(0.0, f64::max)
    }

    /// Averages every entry over the orderings of its upper tuple.
    pub fn upper_symmetrised(&self) -> SymTensorTable {
        let mut out = SymTensorTable { dim: self.dim, n: self.n, values: BTreeMap::new() };
        for (u, l) in self.values.keys() {
            let ords = orderings(u);
            let v = ords.iter().map(|o| self.get(o, l)).sum::<f64>() / ords.len() as f64;
            out.insert_symmetric(u, l, v);
        }
        out
    }

    fn insert_symmetric(&mut self, upper: &[usize], lower: &[usize], v: f64) {
        for u in orderings(upper) {
            self.values.insert((u, sorted(lower)), v);
        }
    }
}

/// Transfer symbols `Γ̃^B_A` as polynomials, symmetric in both tuples and
/// defined by `∂_A g = Σ_β Γ̃^β_A ∇_β g` over ordered `β`.
#[derive(Clone, Debug)]
pub struct TransferSymbols<T: Coeff = Q> {
    dim: usize,
    n: u32,
    /// `(lower A, upper B) ↦ Γ̃^B_A`, stored for one ordering of `B`.
    table: BTreeMap<(Multi, Multi), Poly<T>>,
}

impl<T: Coeff> TransferSymbols<T> {
    /// Inverts `M^γ_B = Σ_{β ↦ B} L^γ_β` exactly. `M` is triangular in the
    /// tuple length with `M^B_B` equal to the number of orderings of `B`,
    /// so back substitution stays polynomial.
    pub fn new(cov: &CovariantCoeffs<T>) -> Self {
        let m = cov.dim;
        let ms = multisets(m, cov.n);
        let mut big: BTreeMap<Multi, BTreeMap<Multi, Poly<T>>> = BTreeMap::new();
        for b in &ms {
            let mut acc = BTreeMap::new();
            for beta in orderings(b) {
                for (g, c) in cov.op(&beta) {
                    add_into(&mut acc, g.clone(), c.clone());
                }
            }
            big.insert(b.clone(), acc);
        }
        let mut table = BTreeMap::new();
        for alpha in &ms {
            let mut cols: Vec<&Multi> = ms.iter().filter(|g| g.len() <= alpha.len()).collect();
            cols.sort_by_key(|c| std::cmp::Reverse(c.len()));
            let mut row: BTreeMap<Multi, Poly<T>> = BTreeMap::new();
            for gamma in cols {
                let mut rhs = if gamma == alpha { Poly::one(m) } else { Poly::zero(m) };
                for (b, g) in &row {
                    if let Some(c) = big[b].get(gamma) {
                        rhs = rhs.sub(&g.mul(c));
                    }
                }
                let count = orderings(gamma).len() as i64;
                let val = rhs.scale(&T::from_ratio(1, count));
                if !val.is_zero() {
                    row.insert(gamma.clone(), val);
                }
            }
            for (u, v) in row {
                table.insert((alpha.clone(), u), v);
            }
        }
        TransferSymbols { dim: m, n: cov.n, table }
    }

    pub fn from_connection(conn: &Connection<T>, n: u32) -> Self {
        TransferSymbols::new(&CovariantCoeffs::new(conn, n))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// `Γ̃^{upper}_{lower}` for tuples in any order.
    pub fn get(&self, upper: &[usize], lower: &[usize]) -> Poly<T> {
        self.table.get(&(sorted(lower), sorted(upper))).cloned().unwrap_or_else(|| Poly::zero(self.dim))
    }

    pub fn at(&self, x: &[f64]) -> SymTensorTable {
        let mut out = SymTensorTable { dim: self.dim, n: self.n, values: BTreeMap::new() };
        for ((lower, upper), p) in &self.table {
            out.insert_symmetric(upper, lower, p.eval(x));
        }
        out
    }
}

/// `Γ̃` at `x` by an LU solve of `Γ̃ · M = 1` on the symmetric tensor space.
pub fn transfer_table<T: Coeff>(cov: &CovariantCoeffs<T>, x: &[f64]) -> Result<SymTensorTable> {
    let ms = multisets(cov.dim, cov.n);
    let idx: HashMap<&Multi, usize> = ms.iter().enumerate().map(|(i, b)| (b, i)).collect();
    let mut mat = DMatrix::<f64>::zeros(ms.len(), ms.len());
    for (r, b) in ms.iter().enumerate() {
        for beta in orderings(b) {
            for (g, c) in cov.op(&beta) {
                mat[(r, idx[g])] += c.eval(x);
            }
        }
    }
    let inv = mat.lu().try_inverse().ok_or_else(|| Error::Singular("symmetrised covariant coefficients".into()))?;
    let mut out = SymTensorTable { dim: cov.dim, n: cov.n, values: BTreeMap::new() };
    for (a, lower) in ms.iter().enumerate() {
        for (b, upper) in ms.iter().enumerate() {
            if inv[(a, b)] != 0.0 {
                out.insert_symmetric(upper, lower, inv[(a, b)]);
            }
        }
    }
    Ok(out)
}

/// `max |Σ_α L^γ_α(x) S^α_β − δ^γ_β|` over multisets `β`, `γ`, summing over
/// ordered `α`.
pub fn right_inverse_residual<T: Coeff>(cov: &CovariantCoeffs<T>, s: &SymTensorTable, x: &[f64]) -> f64 {
    let ms = multisets(cov.dim, cov.n);
    let mut worst: f64 = 0.0;
    for beta in &ms {
        let mut acc: BTreeMap<&Multi, f64> = ms.iter().map(|g| (g, 0.0)).collect();
        for len in 1..=cov.n as usize {
            for alpha in tuples(cov.dim, len) {
                let sv = s.get(&alpha, beta);
                if sv == 0.0 {
                    continue;
                }
                for (g, c) in cov.op(&alpha) {
                    *acc.get_mut(g).unwrap() += c.eval(x) * sv;
                }
            }
        }
        for (g, v) in acc {
            let target = if g == beta { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

/// The one-parameter family `S(c)` of right inverses of `L*` up to order
/// three. `S(3/2)` is `Γ̃`; other members are upper-asymmetric at order
/// three whenever the torsion is non-zero.
pub fn s_family<T: Coeff>(conn: &Connection<T>, c: f64, x: &[f64]) -> SymTensorTable {
    let m = conn.dim;
    let g = |k: usize, a: usize, b: usize| conn.symbol(k, a, b).eval(x);
    let dg = |k: usize, a: usize, b: usize, d: usize| conn.symbol(k, a, b).derivative(d).eval(x);
    let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut values = BTreeMap::new();
    for a in 0..m {
        values.insert((vec![a], vec![a]), 1.0);
    }
    for lower in multisets(m, 3).into_iter().filter(|l| l.len() >= 2) {
        let perms = tuples(lower.len(), lower.len()).into_iter().filter(|p| sorted(p) == (0..lower.len()).collect::<Vec<_>>());
        let perms: Vec<Vec<usize>> = perms.map(|p| p.iter().map(|&i| lower[i]).collect()).collect();
        let w = 1.0 / perms.len() as f64;
        for len in 1..=lower.len() {
            for upper in tuples(m, len) {
                let mut v = 0.0;
                for p in &perms {
                    v += w * match (lower.len(), len) {
                        (2, 1) => g(upper[0], p[0], p[1]),
                        (2, 2) => delta(upper[0], p[0]) * delta(upper[1], p[1]),
                        (3, 1) => {
                            let (al, be, ga, l) = (p[0], p[1], p[2], upper[0]);
                            let mut s = dg(l, be, ga, al);
                            for sg in 0..m {
                                let sym = 0.5 * (g(l, ga, sg) + g(l, sg, ga));
                                let anti = 0.5 * (g(l, ga, sg) - g(l, sg, ga));
                                s += (sym + (3.0 - 2.0 * c) * anti) * g(sg, al, be);
                            }
                            s
                        }
                        (3, 2) => c * g(upper[0], p[0], p[1]) * delta(upper[1], p[2]) + (3.0 - c) * g(upper[1], p[0], p[1]) * delta(upper[0], p[2]),
                        (3, 3) => delta(upper[0], p[0]) * delta(upper[1], p[1]) * delta(upper[2], p[2]),
                        _ => 0.0,
                    };
                }
                if v != 0.0 {
                    values.insert((upper, lower.clone()), v);
                }
            }
        }
    }
    SymTensorTable { dim: m, n: 3, values }
}

/// Which right inverse of `L*` to test under a change of chart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SymbolChoice {
    Transfer,
    /// The member `S(c)` of the order-three family.
    Family(f64),
}

/// Residual of the change-of-coordinates law
/// `S^i_j = Σ_{j^1⋯j^m = j} |j|!/(m! Π|j^l|!) ∂^i_α S^α_β ∂^{β_1}_{j^1} ⋯ ∂^{β_m}_{j^m}`
/// (symmetrised in `j`) for the chart `y = transition(x)` at `x0`.
///
/// Symbols in the new chart are computed from a Taylor jet of the carried
/// connection, so the transition need not have a polynomial inverse.
pub fn transform_check(conn: &Connection, transition: &QPolyMap, x0: &[f64], n: u32, choice: SymbolChoice) -> Result<f64> {
    let m = conn.dim;
    if transition.nin != m || transition.nout() != m || x0.len() != m {
        return Err(Error::InvalidInput("transition and point must match the connection's dimension".into()));
    }
    if matches!(choice, SymbolChoice::Family(_)) && n > 3 {
        return Err(Error::InvalidInput("the S(c) family is only defined up to order three".into()));
    }
    let tf = transition.to_f64();
    let a = DMatrix::from_fn(m, m, |i, j| tf.comps[i].derivative(j).eval(x0));
    let ainv = a.clone().try_inverse().ok_or_else(|| Error::Singular("transition Jacobian".into()))?;
    let xv = inverse_jet(&tf, x0, &ainv, n + 1);
    let zero = vec![0.0; m];
    let carried = carry_connection(&conn.to_f64(), &xv, &|k, g| tf.comps[k].derivative(g).compose(&xv)).truncate(n);
    let (old, new) = match choice {
        SymbolChoice::Transfer => (TransferSymbols::from_connection(conn, n).at(x0), TransferSymbols::from_connection(&carried, n).at(&zero)),
        SymbolChoice::Family(c) => (s_family(conn, c, x0), s_family(&carried, c, &zero)),
    };
    let mut dx: HashMap<(usize, Multi), f64> = HashMap::new();
    for (b, p) in xv.iter().enumerate() {
        for j in multisets(m, n) {
            dx.insert((b, j.clone()), p.partial(&j).eval(&zero));
        }
    }
    let mut worst: f64 = 0.0;
    for li in 1..=n as usize {
        for i in tuples(m, li) {
            for j in multisets(m, n).into_iter().filter(|j| j.len() >= li) {
                let ords = orderings(&j);
                let mut rhs = 0.0;
                for jo in &ords {
                    for comp in compositions(j.len()) {
                        let mm = comp.len();
                        let coef = factorial(j.len()) / (factorial(mm) * comp.iter().map(|&k| factorial(k)).product::<f64>());
                        let mut blocks = Vec::with_capacity(mm);
                        let mut at = 0;
                        for &k in &comp {
                            blocks.push(sorted(&jo[at..at + k]));
                            at += k;
                        }
                        for alpha in tuples(m, li) {
                            let ja: f64 = i.iter().zip(&alpha).map(|(&r, &s)| a[(r, s)]).product();
                            if ja == 0.0 {
                                continue;
                            }
                            for beta in tuples(m, mm) {
                                let sv = old.get(&alpha, &beta);
                                if sv == 0.0 {
                                    continue;
                                }
                                let d: f64 = beta.iter().zip(&blocks).map(|(&b, blk)| dx[&(b, blk.clone())]).product();
                                rhs += coef * ja * sv * d;
                            }
                        }
                    }
                }
                rhs /= ords.len() as f64;
                worst = worst.max((new.get(&i, &j) - rhs).abs());
            }
        }
    }
    Ok(worst)
}

/// Compositions of `k` into positive parts.
fn compositions(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    (1..=k).flat_map(|first| compositions(k - first).into_iter().map(move |rest| [vec![first], rest].concat())).collect()
}

/// Taylor jet of degree `deg` of `x(y0 + v)` where `y = ψ(x)`, by the
/// fixed point `u = A^{-1}(v − R(u))` with `R` the non-linear part of `ψ`.
fn inverse_jet(psi: &PolyMap<f64>, x0: &[f64], ainv: &DMatrix<f64>, deg: u32) -> Vec<Poly<f64>> {
    let m = x0.len();
    let shift: Vec<Poly<f64>> = (0..m).map(|k| Poly::var(m, k).add(&Poly::constant(m, x0[k]))).collect();
    let zero = vec![0.0; m];
    let resid: Vec<Poly<f64>> = psi
        .comps
        .iter()
        .map(|p| {
            let q = p.compose(&shift);
            let mut r = q.sub(&Poly::constant(m, q.eval(&zero)));
            for j in 0..m {
                r = r.sub(&Poly::var(m, j).scale(&q.derivative(j).eval(&zero)));
            }
            r
        })
        .collect();
    let apply = |w: &[Poly<f64>]| -> Vec<Poly<f64>> {
        (0..m).map(|i| (0..m).fold(Poly::zero(m), |acc, j| acc.add(&w[j].scale(&ainv[(i, j)])))).collect()
    };
    let ids: Vec<Poly<f64>> = (0..m).map(|j| Poly::var(m, j)).collect();
    let mut u = apply(&ids);
    for _ in 0..deg {
        let rhs: Vec<Poly<f64>> = (0..m).map(|j| ids[j].sub(&resid[j].compose(&u).truncate(deg))).collect();
        u = apply(&rhs);
    }
    u.iter().zip(x0).map(|(p, &c)| p.add(&Poly::constant(m, c))).collect()
}

/// A chart: its connection in local coordinates and an optional box domain.
#[derive(Clone, Debug)]
pub struct Chart {
    pub name: String,
    pub connection: Connection,
    pub domain: Option<Vec<(f64, f64)>>,
}

impl Chart {
    pub fn new(name: &str, connection: Connection) -> Chart {
        Chart { name: name.to_string(), connection, domain: None }
    }

    pub fn with_domain(mut self, domain: Vec<(f64, f64)>) -> Chart {
        self.domain = Some(domain);
        self
    }

    /// Whether `y` lies at least `margin` inside the domain.
    pub fn contains(&self, y: &[f64], margin: f64) -> bool {
        self.domain.as_ref().is_none_or(|d| d.iter().zip(y).all(|(&(lo, hi), &v)| v >= lo + margin && v <= hi - margin))
    }
}

/// Charts related by polynomial transitions with polynomial inverses.
#[derive(Clone, Debug)]
pub struct Atlas {
    charts: Vec<Chart>,
    transitions: BTreeMap<(usize, usize), QPolyMap>,
}

impl Atlas {
    pub fn new(base: Chart) -> Atlas {
        let m = base.connection.dim();
        Atlas { charts: vec![base], transitions: BTreeMap::from([((0, 0), PolyMap::identity(m))]) }
    }

    /// Adds the chart `y = map(x)` of chart `from`; its connection is carried
    /// over by the Christoffel rule. Returns the new chart's index.
    pub fn add_chart(&mut self, name: &str, from: usize, map: QPolyMap, inverse: QPolyMap, domain: Option<Vec<(f64, f64)>>) -> Result<usize> {
        let base = self.charts.get(from).ok_or_else(|| Error::InvalidInput(format!("no chart {from}")))?;
        let connection = christoffel_transform(&base.connection, &map, &inverse)?;
        let new = self.charts.len();
        self.charts.push(Chart { name: name.to_string(), connection, domain });
        let m = map.nin;
        let mut added = vec![((new, new), PolyMap::identity(m))];
        for (&(a, b), t) in &self.transitions {
            if b == from {
                added.push(((a, new), map.compose(t)));
            }
            if a == from {
                added.push(((new, b), t.compose(&inverse)));
            }
        }
        self.transitions.extend(added);
        Ok(new)
    }

    pub fn len(&self) -> usize {
        self.charts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    pub fn chart(&self, i: usize) -> &Chart {
        &self.charts[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.charts.iter().position(|c| c.name == name)
    }

    /// Coordinates of chart `to` as a function of those of chart `from`.
    pub fn transition(&self, from: usize, to: usize) -> Result<&QPolyMap> {
        self.transitions.get(&(from, to)).ok_or_else(|| Error::InvalidInput(format!("no transition from chart {from} to {to}")))
    }

    /// `g` given in chart `from`, expressed in chart `to`.
    pub fn pull_function(&self, g: &QPoly, from: usize, to: usize) -> Result<QPoly> {
        Ok(g.compose(&self.transition(to, from)?.comps))
    }

    /// Covectors `f_α` given in chart `from` (stacked, `r·m` components),
    /// expressed in chart `to`: `f_i = f_α(x(y)) ∂x^α/∂y^i`.
    pub fn pull_form(&self, f: &QPolyMap, from: usize, to: usize) -> Result<QPolyMap> {
        let t = self.transition(to, from)?;
        let m = t.nin;
        if !f.nout().is_multiple_of(m) {
            return Err(Error::InvalidInput("form components do not split over the coordinates".into()));
        }
        let at: Vec<QPoly> = f.comps.iter().map(|p| p.compose(&t.comps)).collect();
        let mut comps = Vec::with_capacity(f.nout());
        for q in 0..f.nout() / m {
            for i in 0..m {
                comps.push((0..m).fold(QPoly::zero(m), |acc, a| acc.add(&at[q * m + a].mul(&t.comps[a].derivative(i)))));
            }
        }
        Ok(PolyMap::new(m, comps))
    }
}

/// A stretch `[start, end]` of grid indices integrated in one chart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub chart: usize,
    pub start: usize,
    pub end: usize,
}

/// One driver per chart of an atlas, all on a common grid.
#[derive(Clone, Debug)]
pub struct ManifoldRoughPath {
    drivers: Vec<(RoughPath, Vec<f64>)>,
}

impl ManifoldRoughPath {
    /// Carries a driver given in chart `from`, started at `x0`, to every
    /// chart: by bracket pushforward for quasi-geometric drivers and by
    /// plain pushforward otherwise.
    pub fn from_chart(atlas: &Atlas, from: usize, x: &RoughPath, x0: &[f64], tol: f64) -> Result<ManifoldRoughPath> {
        let mut drivers = Vec::with_capacity(atlas.len());
        for to in 0..atlas.len() {
            if to == from {
                drivers.push((x.clone(), x0.to_vec()));
                continue;
            }
            let t = atlas.transition(from, to)?;
            let y0 = t.to_f64().eval(x0);
            let y = if x.mode() == Extension::QuasiGeometric { pushforward_bracket(t, x, x0, tol)? } else { pushforward(t, x, x0, tol)? };
            drivers.push((y, y0));
        }
        Ok(ManifoldRoughPath { drivers })
    }

    pub fn driver(&self, chart: usize) -> &RoughPath {
        &self.drivers[chart].0
    }

    pub fn start(&self, chart: usize) -> &[f64] {
        &self.drivers[chart].1
    }

    pub fn num_charts(&self) -> usize {
        self.drivers.len()
    }

    /// `max |(φ_j∘φ_i^{-1})_* ⁱX̃ − ʲX̃|` over shared forests on the stored
    /// blocks.
    pub fn compatibility_defect(&self, atlas: &Atlas, i: usize, j: usize, tol: f64) -> Result<f64> {
        let (xi, x0) = &self.drivers[i];
        let t = atlas.transition(i, j)?;
        let pushed = if xi.mode() == Extension::QuasiGeometric { pushforward_bracket(t, xi, x0, tol)? } else { pushforward(t, xi, x0, tol)? };
        let xj = &self.drivers[j].0;
        let mut worst: f64 = 0.0;
        for (a, b) in xj.stored_pairs() {
            let (u, v) = (pushed.value(a, b), xj.value(a, b));
            for (s, f) in xj.basis().forests().iter().enumerate() {
                if let Some(k) = pushed.basis().index_of(f) {
                    worst = worst.max((u[k] - v[s]).abs());
                }
            }
        }
        Ok(worst)
    }

    /// Greedy patching: stay in a chart until the next point comes within
    /// `margin` of its boundary, then switch to any chart holding both the
    /// current and the next point with that margin.
    pub fn patching(&self, atlas: &Atlas, margin: f64) -> Result<Vec<Patch>> {
        let traces: Vec<Vec<Vec<f64>>> = self.drivers.iter().map(|(x, x0)| x.trace(x0)).collect::<Result<_>>()?;
        let grid = self.drivers[0].0.grid().to_vec();
        let inside = |c: usize, t: usize, mg: f64| atlas.chart(c).contains(&traces[c][t], mg);
        let last = grid.len() - 1;
        let mut chart = (0..atlas.len()).find(|&c| inside(c, 0, margin)).ok_or(Error::Uncovered(grid[0]))?;
        let (mut start, mut t) = (0, 0);
        let mut out = Vec::new();
        while t < last {
            if inside(chart, t + 1, margin) {
                t += 1;
                continue;
            }
            if let Some(next) = (0..atlas.len()).find(|&d| d != chart && inside(d, t, margin) && inside(d, t + 1, margin)) {
                if t > start {
                    out.push(Patch { chart, start, end: t });
                }
                chart = next;
                start = t;
            } else if inside(chart, t + 1, 0.0) {
                t += 1;
            } else {
                return Err(Error::Uncovered(grid[t + 1]));
            }
        }
        out.push(Patch { chart, start, end: last });
        Ok(out)
    }
}

/// Integrates `Σ_c comps[q·L + c] dX^{(c)}` over the multiset letters `c`
/// of `x`, as functions of its trace.
fn integrate_symbols(letters: &[Label], comps: Vec<QPoly>, x: &RoughPath, x0: &[f64]) -> Result<ControlledPath> {
    let m = x0.len();
    let r = comps.len() / letters.len();
    let phi = PolyMap::new(m, comps).to_f64();
    let targets = (0..r).flat_map(|_| letters.iter().cloned()).collect();
    let path = compose_smooth(&phi, &ControlledPath::identity(x, x0)?, targets)?;
    Ok(rough_integral(&Integrand::new(letters.to_vec(), path)?, x, numbered_letters(r), &vec![0.0; r])?.path)
}

fn letter_multis(x: &RoughPath) -> Result<(Vec<Label>, Vec<Multi>)> {
    let atoms = x.atoms();
    let letters = multiset_alphabet(&base_atoms(&atoms), x.n());
    let multis = letters.iter().map(|l| coords_of(&atoms, l).map(|v| sorted(&v))).collect::<Result<_>>()?;
    Ok((letters, multis))
}

/// `∫ f_α(X) dX_∇^α = Σ_B 𝒩(B)^{-1} ∫ f_α Γ̃^α_B(X) dX̃^{(B)}` in one chart,
/// for stacked covectors `f` (`r·m` components), on the whole grid.
pub fn chart_integral(conn: &Connection, f: &QPolyMap, x: &RoughPath, x0: &[f64]) -> Result<ControlledPath> {
    let m = conn.dim();
    if x.atoms().len() != m || f.nin != m || !f.nout().is_multiple_of(m) || x0.len() != m {
        return Err(Error::InvalidInput("form, connection and driver dimensions differ".into()));
    }
    let ts = TransferSymbols::from_connection(conn, x.n());
    let (letters, multis) = letter_multis(x)?;
    let mut comps = Vec::new();
    for q in 0..f.nout() / m {
        for b in &multis {
            let acc = (0..m).fold(QPoly::zero(m), |acc, a| acc.add(&f.comps[q * m + a].mul(&ts.get(&[a], b))));
            comps.push(acc.scale(&qr(1, sym_factor(b))));
        }
    }
    integrate_symbols(&letters, comps, x, x0)
}

/// Sum over `patches` of the chart integrals of the per-chart forms.
pub fn manifold_integral(atlas: &Atlas, mx: &ManifoldRoughPath, forms: &[QPolyMap], patches: &[Patch]) -> Result<Vec<f64>> {
    let mut cache: BTreeMap<usize, ControlledPath> = BTreeMap::new();
    let mut total: Option<Vec<f64>> = None;
    for p in patches {
        if let Entry::Vacant(v) = cache.entry(p.chart) {
            let c = atlas.chart(p.chart);
            let form = forms.get(p.chart).ok_or_else(|| Error::InvalidInput(format!("no form for chart {}", c.name)))?;
            v.insert(chart_integral(&c.connection, form, mx.driver(p.chart), mx.start(p.chart))?);
        }
        let path = &cache[&p.chart];
        let inc: Vec<f64> = path.trace_at(p.end).iter().zip(path.trace_at(p.start)).map(|(a, b)| a - b).collect();
        total = Some(match total {
            None => inc,
            Some(t) => t.iter().zip(&inc).map(|(a, b)| a + b).collect(),
        });
    }
    total.ok_or_else(|| Error::InvalidInput("no patches".into()))
}

/// `Σ_B 𝒩(B)^{-1} ∫ Σ_A Γ̃^A_B (Σ_{α ↦ A} ∇_α g)(X) dX̃^{(B)}` in one chart.
pub fn covariant_kelly_integral(conn: &Connection, g: &QPoly, x: &RoughPath, x0: &[f64]) -> Result<ControlledPath> {
    let m = conn.dim();
    if x.atoms().len() != m || g.nvars() != m || x0.len() != m {
        return Err(Error::InvalidInput("function, connection and driver dimensions differ".into()));
    }
    let cov = CovariantCoeffs::new(conn, x.n());
    let ts = TransferSymbols::new(&cov);
    let nabla: BTreeMap<Multi, QPoly> = multisets(m, x.n())
        .into_iter()
        .map(|a| {
            let s = orderings(&a).iter().fold(QPoly::zero(m), |acc, o| acc.add(&cov.apply(o, g)));
            (a, s)
        })
        .collect();
    let (letters, multis) = letter_multis(x)?;
    let comps = multis
        .iter()
        .map(|b| nabla.iter().fold(QPoly::zero(m), |acc, (a, s)| acc.add(&ts.get(a, b).mul(s))).scale(&qr(1, sym_factor(b))))
        .collect();
    integrate_symbols(&letters, comps, x, x0)
}

/// `max_t |g(X_t) − g(X_0) − Σ_patches (covariant Kelly integral)|`, with
/// `g` given per chart.
pub fn ito_kelly_manifold_defect(atlas: &Atlas, mx: &ManifoldRoughPath, g: &[QPoly], patches: &[Patch]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut acc = 0.0;
    let mut g_start: Option<f64> = None;
    for p in patches {
        let c = atlas.chart(p.chart);
        let gc = g.get(p.chart).ok_or_else(|| Error::InvalidInput(format!("no function for chart {}", c.name)))?;
        let (x, x0) = (mx.driver(p.chart), mx.start(p.chart));
        let integral = covariant_kelly_integral(&c.connection, gc, x, x0)?;
        let trace = x.trace(x0)?;
        let gf = gc.to_f64();
        let g0 = *g_start.get_or_insert_with(|| gf.eval(&trace[p.start]));
        let base = integral.trace_at(p.start)[0];
        for t in p.start..=p.end {
            let rhs = acc + integral.trace_at(t)[0] - base;
            worst = worst.max((gf.eval(&trace[t]) - g0 - rhs).abs());
        }
        acc += integral.trace_at(p.end)[0] - base;
    }
    Ok(worst)
}

/// Coefficients of a quasi-geometric RDE `d_N Y = F(Y, X) d_M X` in
/// coordinates: `dY^k = Σ_B 𝒩(B)^{-1} ∇F^k_B dX̃^{(B)}` over multisets `B`
/// of driver coordinates, as polynomials of `(y, x)`.
#[derive(Clone, Debug)]
pub struct ManifoldRde {
    e: usize,
    d: usize,
    n: u32,
    /// `expansion[k][B] = 𝒩(B)^{-1} ∇F^k_B`.
    expansion: Vec<BTreeMap<Multi, QPoly>>,
}

/// Alternates the bracket expansion of the solution with the substitution
/// `dY^k = 𝒩(B)^{-1} F^k_α Γ̃^α_B(X) dX̃^{(B)} − Σ_{|I|≥2} 𝒩(I)^{-1} Γ̃^k_I(Y) dỸ^{(I)}`
/// until level `n`.
///
/// `f` maps `(y, x)` to `F^k_α` at component `k·d + α`.
pub fn quasi_rde_coefficients(f: &QPolyMap, gm: &Connection, gn: &Connection, n: u32) -> Result<ManifoldRde> {
    let (e, d) = (gn.dim(), gm.dim());
    if f.nin != e + d || f.nout() != e * d {
        return Err(Error::InvalidInput(format!("F must map R^{} to {}×{} matrices", e + d, e, d)));
    }
    let nv = e + d;
    let tm = TransferSymbols::from_connection(gm, n);
    let tn = TransferSymbols::from_connection(gn, n);
    let mut drive: Vec<BTreeMap<Multi, QPoly>> = vec![BTreeMap::new(); e];
    for (k, dk) in drive.iter_mut().enumerate() {
        for b in multisets(d, n) {
            let acc = (0..d).fold(QPoly::zero(nv), |acc, a| acc.add(&f.comps[k * d + a].mul(&tm.get(&[a], &b).embed(nv, e))));
            add_into(dk, b.clone(), acc.scale(&qr(1, sym_factor(&b))));
        }
    }
    let mut out = ManifoldRde { e, d, n, expansion: (0..e).map(|k| (0..d).map(|a| (vec![a], f.comps[k * d + a].clone())).filter(|(_, p)| !p.is_zero()).collect()).collect() };
    let brackets: Vec<Multi> = multisets(e, n).into_iter().filter(|i| i.len() >= 2).collect();
    for level in 2..=n {
        let mut next: Vec<BTreeMap<Multi, QPoly>> = drive.iter().map(|dk| dk.iter().filter(|(b, _)| b.len() <= level as usize).map(|(b, p)| (b.clone(), p.clone())).collect()).collect();
        for i in brackets.iter().filter(|i| i.len() <= level as usize) {
            let corr: Vec<(usize, QPoly)> = (0..e).map(|k| (k, tn.get(&[k], i).embed(nv, 0))).filter(|(_, p)| !p.is_zero()).collect();
            if corr.is_empty() {
                continue;
            }
            let prod = out.bracket_expansion_to(i, level);
            let w = qr(-1, sym_factor(i));
            for (k, g) in corr {
                for (b, c) in &prod {
                    add_into(&mut next[k], b.clone(), g.mul(c).scale(&w));
                }
            }
        }
        out.expansion = next;
    }
    Ok(out)
}

impl ManifoldRde {
    pub fn state_dim(&self) -> usize {
        self.e
    }

    pub fn driver_dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// `∇F^k_B`.
    pub fn coefficient(&self, k: usize, b: &[usize]) -> QPoly {
        let b = sorted(b);
        self.expansion(k, &b).scale(&qr(sym_factor(&b), 1))
    }

    /// `𝒩(B)^{-1} ∇F^k_B`, the weight of `dX̃^{(B)}` in `dY^k`.
    pub fn expansion(&self, k: usize, b: &[usize]) -> QPoly {
        self.expansion[k].get(&sorted(b)).cloned().unwrap_or_else(|| QPoly::zero(self.e + self.d))
    }

    /// `dỸ^{(I)} = Σ_B c_B dX̃^{(B)}` for a multiset `I` of solution
    /// coordinates: the product of the `dY^{i}` expansions under multiset
    /// union, up to level `n`.
    pub fn bracket_expansion(&self, i: &[usize]) -> BTreeMap<Multi, QPoly> {
        self.bracket_expansion_to(&sorted(i), self.n)
    }

    fn bracket_expansion_to(&self, i: &[usize], level: u32) -> BTreeMap<Multi, QPoly> {
        let nv = self.e + self.d;
        let mut acc: BTreeMap<Multi, QPoly> = BTreeMap::from([(vec![], QPoly::one(nv))]);
        for &k in i {
            let mut next = BTreeMap::new();
            for (b1, c1) in &acc {
                for (b2, c2) in &self.expansion[k] {
                    if b1.len() + b2.len() <= level as usize {
                        add_into(&mut next, union(b1, b2), c1.mul(c2));
                    }
                }
            }
            acc = next;
        }
        acc
    }

    /// Vector fields on the state `(y, x)` for the driver letters; `x`
    /// follows the atoms of the driver.
    pub fn vector_fields(&self, x: &RoughPath) -> Result<VectorFields> {
        let atoms = x.atoms();
        if atoms.len() != self.d {
            return Err(Error::InvalidInput(format!("driver has {} atoms, the equation expects {}", atoms.len(), self.d)));
        }
        let nv = self.e + self.d;
        let mut fields = BTreeMap::new();
        for l in x.letters() {
            let b = sorted(&coords_of(&atoms, l)?);
            let mut comps: Vec<QPoly> = (0..self.e).map(|k| self.expansion(k, &b)).collect();
            comps.extend((0..self.d).map(|a| if b == [a] { QPoly::one(nv) } else { QPoly::zero(nv) }));
            fields.insert(l.clone(), PolyMap::new(nv, comps));
        }
        VectorFields::new(nv, fields)
    }
}

/// Davie solution of the coordinate equation on the state `(y, x)`.
pub fn manifold_rde_solve(rde: &ManifoldRde, x: &RoughPath, y0: &[f64], x0: &[f64]) -> Result<ControlledPath> {
    if y0.len() != rde.e || x0.len() != rde.d {
        return Err(Error::InvalidInput("initial values have the wrong dimension".into()));
    }
    davie_solve(&rde.vector_fields(x)?, x, &[y0, x0].concat())
}

/// Fails with the first time at which components `ks` of `path` leave the
/// chart's domain.
pub fn check_chart(path: &ControlledPath, ks: &[usize], chart: &Chart, grid: &[f64]) -> Result<()> {
    for (i, y) in path.traces().iter().enumerate() {
        let yk: Vec<f64> = ks.iter().map(|&k| y[k]).collect();
        if !chart.contains(&yk, 0.0) {
            return Err(Error::ChartExhaustion(grid[i]));
        }
    }
    Ok(())
}

/// The solution together with its own rough path lift. For quasi-geometric
/// drivers the simple bracket of `Y` is the integral of its bracket
/// expansion.
pub fn manifold_rde_lift(rde: &ManifoldRde, x: &RoughPath, y0: &[f64], x0: &[f64], tol: f64) -> Result<(ControlledPath, RoughPath)> {
    let sol = manifold_rde_solve(rde, x, y0, x0)?;
    let e = rde.e;
    let y = sol.select(&(0..e).collect::<Vec<_>>())?.with_targets(numbered_letters(e))?;
    if x.mode() != Extension::QuasiGeometric {
        let mode = if x.mode() == Extension::Geometric { Extension::Geometric } else { Extension::Strict };
        let lifted = lift(&y, x, mode, tol)?.0;
        return Ok((sol, lifted));
    }
    let out_atoms = base_atoms(&numbered_letters(e));
    let (letters, multis) = letter_multis(x)?;
    let mut parts = vec![y];
    for label in multiset_alphabet(&out_atoms, x.n()).into_iter().filter(|l| !l.is_atom()) {
        let ks = coords_of(&numbered_letters(e), &label)?;
        let prod = rde.bracket_expansion(&ks);
        let comps: Vec<QPoly> = multis.iter().map(|b| prod.get(b).cloned().unwrap_or_else(|| QPoly::zero(e + rde.d))).collect();
        let phi = PolyMap::new(e + rde.d, comps).to_f64();
        let path = compose_smooth(&phi, &sol, letters.clone())?;
        parts.push(rough_integral(&Integrand::new(letters.clone(), path)?, x, vec![label], &[0.0])?.path);
    }
    let refs: Vec<&ControlledPath> = parts.iter().collect();
    let h = ControlledPath::concat(&refs)?;
    let lifted = lift(&h, x, Extension::QuasiGeometric, tol)?.0;
    Ok((sol, lifted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::Atom;
    use crate::rough_path::{dyadic_grid, quasi_geometric_lift, smooth_lift};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_poly(rng: &mut ChaCha8Rng, m: usize, deg: u32) -> QPoly {
        let mut p = QPoly::zero(m);
        for e in tuples(deg as usize + 1, m).into_iter().filter(|e| e.iter().sum::<usize>() <= deg as usize) {
            let c = rng.gen_range(-4i64..=4);
            if c != 0 && rng.gen_bool(0.6) {
                p.add_term(e.iter().map(|&k| k as u32).collect(), qr(c, 4));
            }
        }
        p
    }

    fn rand_connection(rng: &mut ChaCha8Rng, m: usize, deg: u32) -> Connection {
        Connection::new(m, (0..m * m * m).map(|_| rand_poly(rng, m, deg)).collect()).unwrap()
    }

    fn symmetrised(rng: &mut ChaCha8Rng, m: usize, deg: u32) -> Connection {
        let c = rand_connection(rng, m, deg);
        let mut s = Vec::new();
        for g in 0..m {
            for a in 0..m {
                for b in 0..m {
                    s.push(c.symbol(g, a, b).add(c.symbol(g, b, a)).scale(&qr(1, 2)));
                }
            }
        }
        Connection::new(m, s).unwrap()
    }

    fn rand_point(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
        (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Near-identity polynomial transition with invertible Jacobian at 0.
    fn rand_transition(rng: &mut ChaCha8Rng, m: usize) -> QPolyMap {
        let comps = (0..m)
            .map(|k| {
                let mut p = QPoly::var(m, k);
                for e in tuples(4, m).into_iter().filter(|e| (2..=3).contains(&e.iter().sum::<usize>())) {
                    let c = rng.gen_range(-3i64..=3);
                    if c != 0 && rng.gen_bool(0.5) {
                        p.add_term(e.iter().map(|&k| k as u32).collect(), qr(c, 10));
                    }
                }
                p
            })
            .collect();
        PolyMap::new(m, comps)
    }

    #[test]
    fn combinatorial_helpers() {
        assert_eq!(multisets(2, 2), vec![vec![0], vec![1], vec![0, 0], vec![0, 1], vec![1, 1]]);
        assert_eq!(multisets(3, 3).len(), 3 + 6 + 10);
        assert_eq!(orderings(&[0, 0, 1]), vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]);
        assert_eq!(sym_factor(&[0, 0, 1, 1, 1]), 12);
        assert_eq!(compositions(3).len(), 4);
        assert_eq!(tuples(2, 3).len(), 8);
    }

    #[test]
    fn covariant_derivatives_follow_the_displayed_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 2;
        let conn = rand_connection(&mut rng, m, 2);
        let cov = CovariantCoeffs::new(&conn, 3);
        let g = rand_poly(&mut rng, m, 5);
        let gam = |d: usize, a: usize, b: usize| conn.symbol(d, a, b).clone();
        for al in tuples(m, 2) {
            let (a, b) = (al[0], al[1]);
            let mut want = g.partial(&[a, b]);
            for d in 0..m {
                want = want.sub(&g.partial(&[d]).mul(&gam(d, a, b)));
            }
            assert_eq!(cov.apply(&al, &g), want);
        }
        for al in tuples(m, 3) {
            let (a, b, c) = (al[0], al[1], al[2]);
            let mut want = g.partial(&[a, b, c]);
            for d in 0..m {
                want = want.sub(&g.partial(&[d]).mul(&gam(d, b, c).derivative(a)));
                want = want.sub(&g.partial(&[a, d]).mul(&gam(d, b, c)));
                want = want.sub(&g.partial(&[d, c]).mul(&gam(d, a, b)));
                want = want.sub(&g.partial(&[b, d]).mul(&gam(d, a, c)));
                for e in 0..m {
                    want = want.add(&g.partial(&[d]).mul(&gam(d, e, c)).mul(&gam(e, a, b)));
                    want = want.add(&g.partial(&[d]).mul(&gam(d, b, e)).mul(&gam(e, a, c)));
                }
            }
            assert_eq!(cov.apply(&al, &g), want, "{al:?}");
        }
    }

    #[test]
    fn flat_connection_gives_identities() {
        let cov = CovariantCoeffs::new(&Connection::<Q>::flat(2), 3);
        for al in (1..=3).flat_map(|k| tuples(2, k)) {
            assert_eq!(cov.op(&al).len(), 1);
            assert_eq!(cov.coeff(&al, &sorted(&al)), QPoly::one(2));
        }
        let ts = TransferSymbols::new(&cov);
        for a in multisets(2, 3) {
            for b in multisets(2, 3) {
                let want = if a == b { qr(1, orderings(&b).len() as i64) } else { qr(0, 1) };
                assert_eq!(ts.get(&b, &a), QPoly::constant(2, want));
            }
        }
    }

    /// Independent closed forms for `Γ̃` up to order three.
    fn closed_form(conn: &Connection, x: &[f64], upper: &[usize], lower: &[usize]) -> f64 {
        let m = conn.dim();
        let g = |k: usize, a: usize, b: usize| conn.symbol(k, a, b).eval(x);
        let gs = |k: usize, a: usize, b: usize| 0.5 * (g(k, a, b) + g(k, b, a));
        let dg = |k: usize, a: usize, b: usize, d: usize| conn.symbol(k, a, b).derivative(d).eval(x);
        let dl = |a: usize, b: usize| (a == b) as u8 as f64;
        let perms: Vec<Vec<usize>> = tuples(lower.len(), lower.len())
            .into_iter()
            .filter(|p| sorted(p) == (0..lower.len()).collect::<Vec<_>>())
            .map(|p| p.iter().map(|&i| lower[i]).collect())
            .collect();
        let w = 1.0 / perms.len() as f64;
        perms
            .iter()
            .map(|p| {
                w * match (lower.len(), upper.len()) {
                    (1, 1) => dl(upper[0], p[0]),
                    (2, 1) => gs(upper[0], p[0], p[1]),
                    (2, 2) => dl(upper[0], p[0]) * dl(upper[1], p[1]),
                    (3, 1) => {
                        let (a, b, c, l) = (p[0], p[1], p[2], upper[0]);
                        dg(l, a, b, c) + (0..m).map(|s| gs(l, c, s) * g(s, a, b)).sum::<f64>()
                    }
                    (3, 2) => 1.5 * (g(upper[0], p[0], p[1]) * dl(upper[1], p[2]) + g(upper[1], p[0], p[1]) * dl(upper[0], p[2])),
                    (3, 3) => dl(upper[0], p[0]) * dl(upper[1], p[1]) * dl(upper[2], p[2]),
                    _ => 0.0,
                }
            })
            .sum()
    }

    #[test]
    fn transfer_symbols_match_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [2, 3] {
            let conn = rand_connection(&mut rng, m, 2);
            assert!(!conn.is_torsion_free());
            let cov = CovariantCoeffs::new(&conn, 3);
            let ts = TransferSymbols::new(&cov);
            for _ in 0..5 {
                let x = rand_point(&mut rng, m);
                let exact = ts.at(&x);
                let lu = transfer_table(&cov, &x).unwrap();
                assert!(exact.max_diff(&lu) < 1e-12);
                assert!(right_inverse_residual(&cov, &exact, &x) < 1e-12);
                for lower in multisets(m, 3) {
                    for upper in (1..=lower.len()).flat_map(|k| tuples(m, k)) {
                        let want = closed_form(&conn, &x, &upper, &lower);
                        assert!((exact.get(&upper, &lower) - want).abs() < 1e-12, "{upper:?} {lower:?}");
                    }
                }
                assert!(s_family(&conn, 1.5, &x).max_diff(&exact) < 1e-12);
                assert!(s_family(&conn, 1.0, &x).max_diff(&exact) > 1e-6);
            }
        }
    }

    #[test]
    fn torsion_free_family_collapses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conn = symmetrised(&mut rng, 2, 2);
        assert!(conn.is_torsion_free());
        let ts = TransferSymbols::from_connection(&conn, 3);
        for c in [0.0, 1.0, 2.7] {
            let x = rand_point(&mut rng, 2);
            // Upper-antisymmetric parts are invisible to symmetric contractions
            // when the torsion vanishes.
            let s = s_family(&conn, c, &x);
            assert!(s.upper_symmetrised().max_diff(&ts.at(&x)) < 1e-12);
            assert!(right_inverse_residual(&CovariantCoeffs::new(&conn, 3), &s, &x) < 1e-12);
        }
    }

    #[test]
    fn transform_check_identity_and_cubic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let conn = rand_connection(&mut rng, 2, 2);
        let id = PolyMap::identity(2);
        assert!(transform_check(&conn, &id, &[0.3, -0.2], 3, SymbolChoice::Transfer).unwrap() < 1e-13);
        let one = Connection::parse(1, &[(0, 0, 0, "1 + x1^2")]).unwrap();
        let cubic = QPolyMap::parse(&["x1 + 1/10*x1^3"], 1).unwrap();
        for x in [-0.5, 0.0, 0.4, 1.1] {
            let r = transform_check(&one, &cubic, &[x], 3, SymbolChoice::Transfer).unwrap();
            assert!(r < 1e-8, "{r} at {x}");
        }
    }

    #[test]
    fn transfer_symbols_transform_and_the_c1_member_does_not() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut worst_c1: f64 = 0.0;
        for m in [2, 3] {
            for _ in 0..2 {
                let conn = rand_connection(&mut rng, m, 2);
                let t = rand_transition(&mut rng, m);
                let x = rand_point(&mut rng, m).iter().map(|v| 0.3 * v).collect::<Vec<_>>();
                for n in [2, 3] {
                    let r = transform_check(&conn, &t, &x, n, SymbolChoice::Transfer).unwrap();
                    assert!(r < 1e-8, "m={m} n={n}: {r}");
                }
                let r32 = transform_check(&conn, &t, &x, 3, SymbolChoice::Family(1.5)).unwrap();
                assert!(r32 < 1e-8);
                worst_c1 = worst_c1.max(transform_check(&conn, &t, &x, 3, SymbolChoice::Family(1.0)).unwrap());
            }
        }
        assert!(worst_c1 > 1e-3, "{worst_c1}");
    }

    #[test]
    fn christoffel_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let conn = rand_connection(&mut rng, 2, 1);
        let map = QPolyMap::parse(&["x1", "x2 + x1^2"], 2).unwrap();
        let inv = QPolyMap::parse(&["x1", "x2 - x1^2"], 2).unwrap();
        let there = christoffel_transform(&conn, &map, &inv).unwrap();
        assert_eq!(christoffel_transform(&there, &inv, &map).unwrap(), conn);
        assert!(christoffel_transform(&conn, &map, &map).is_err());
        // Affine charts of a flat connection stay flat.
        let lin = QPolyMap::parse(&["2*x1 + x2", "x2"], 2).unwrap();
        let lin_inv = QPolyMap::parse(&["1/2*x1 - 1/2*x2", "x2"], 2).unwrap();
        assert!(christoffel_transform(&Connection::flat(2), &lin, &lin_inv).unwrap().is_flat());
    }

    fn shear_atlas(conn: Connection) -> Atlas {
        let mut atlas = Atlas::new(Chart::new("base", conn).with_domain(vec![(-1.0, 0.8), (-2.0, 2.0)]));
        let map = QPolyMap::parse(&["x1", "x2 + x1^2"], 2).unwrap();
        let inv = QPolyMap::parse(&["x1", "x2 - x1^2"], 2).unwrap();
        atlas.add_chart("shear", 0, map, inv, Some(vec![(0.3, 2.0), (-3.0, 3.0)])).unwrap();
        atlas
    }

    fn channels() -> BTreeMap<Label, Poly<f64>> {
        let t = Poly::var(1, 0);
        let mut ch = BTreeMap::new();
        ch.insert(Label::atom('1'), t.clone());
        ch.insert(Label::atom('2'), t.pow(2).scale(&-0.5).add(&t.scale(&0.4)));
        ch.insert(Label::multiset(vec![Atom::new('1'), Atom::new('2')]), t.scale(&0.3));
        ch.insert(Label::multiset(vec![Atom::new('1'), Atom::new('1')]), t.pow(2).scale(&0.2));
        ch.insert(Label::multiset(vec![Atom::new('2'), Atom::new('2'), Atom::new('1')]), t.scale(&-0.1).add(&t.pow(3).scale(&0.1)));
        ch
    }

    #[test]
    fn manifold_integral_is_chart_independent() {
        let conn = Connection::parse(2, &[(0, 0, 1, "x2"), (1, 1, 0, "1/2"), (1, 0, 0, "x1 - 1/3*x2"), (0, 1, 1, "1/4")]).unwrap();
        let atlas = shear_atlas(conn);
        let x = quasi_geometric_lift(2, &channels(), 3.2, dyadic_grid(1.0, 10)).unwrap();
        let x0 = [0.0, 0.1];
        let mx = ManifoldRoughPath::from_chart(&atlas, 0, &x, &x0, 1e-3).unwrap();
        assert!(mx.compatibility_defect(&atlas, 1, 0, 1e-3).unwrap() < 1e-7);
        let f0 = QPolyMap::parse(&["1 + x2", "x1*x2", "x1^2", "1"], 2).unwrap();
        let forms = vec![f0.clone(), atlas.pull_form(&f0, 0, 1).unwrap()];
        let last = x.num_cells();
        let one = manifold_integral(&atlas, &mx, &forms, &[Patch { chart: 0, start: 0, end: last }]).unwrap();
        let split = manifold_integral(&atlas, &mx, &forms, &[Patch { chart: 0, start: 0, end: 512 }, Patch { chart: 1, start: 512, end: last }]).unwrap();
        let other = manifold_integral(&atlas, &mx, &forms, &[Patch { chart: 1, start: 0, end: last }]).unwrap();
        for k in 0..2 {
            assert!((one[k] - split[k]).abs() < 1e-7, "{one:?} vs {split:?}");
            assert!((one[k] - other[k]).abs() < 1e-7, "{one:?} vs {other:?}");
        }
        let patches = mx.patching(&atlas, 0.05).unwrap();
        assert!(patches.len() >= 2 && patches.iter().any(|p| p.chart == 1), "{patches:?}");
        let greedy = manifold_integral(&atlas, &mx, &forms, &patches).unwrap();
        assert!((greedy[0] - one[0]).abs() < 1e-7);
        let g0 = QPoly::parse("x1^2*x2 + x2^3 - x1", 2).unwrap();
        let gs = vec![g0.clone(), atlas.pull_function(&g0, 0, 1).unwrap()];
        let d = ito_kelly_manifold_defect(&atlas, &mx, &gs, &patches).unwrap();
        assert!(d < 1e-7, "{d}");
    }

    #[test]
    fn flat_integral_is_the_plain_rough_integral() {
        let x = smooth_lift(&QPolyMap::parse(&["x1", "x1^2"], 1).unwrap().to_f64(), 3.2, dyadic_grid(1.0, 8)).unwrap();
        let f = QPolyMap::parse(&["x2", "0"], 2).unwrap();
        let path = chart_integral(&Connection::flat(2), &f, &x, &[0.0, 0.0]).unwrap();
        // ∫ t² dt over [0, 1].
        assert!((path.trace_at(x.num_cells())[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    fn rde3_oracle(gn: &Connection, f: &QPolyMap, e: usize, d: usize, b: &[usize]) -> QPoly {
        let nv = e + d;
        let gam = |k: usize, i: usize, j: usize| gn.symbol(k, i, j).embed(nv, 0);
        let fk = |k: usize, a: usize| f.comps[k * d + a].clone();
        let mut out = vec![QPoly::zero(nv); e];
        for (k, o) in out.iter_mut().enumerate() {
            for ord in orderings(b) {
                match ord.len() {
                    1 => *o = o.add(&fk(k, ord[0])),
                    2 => {
                        for (i, j) in (0..e).flat_map(|i| (0..e).map(move |j| (i, j))) {
                            *o = o.sub(&gam(k, i, j).mul(&fk(i, ord[0])).mul(&fk(j, ord[1])).scale(&qr(1, 2)));
                        }
                    }
                    _ => {
                        for t in tuples(e, 3) {
                            let (i, j, h) = (t[0], t[1], t[2]);
                            let mut c = gn.symbol(k, j, h).embed(nv, 0).derivative(i).scale(&qr(-1, 6));
                            for l in 0..e {
                                c = c.add(&gam(k, h, l).add(&gam(k, l, h)).mul(&gam(l, i, j)).scale(&qr(1, 6)));
                            }
                            *o = o.add(&c.mul(&fk(i, ord[0])).mul(&fk(j, ord[1])).mul(&fk(h, ord[2])));
                        }
                    }
                }
            }
        }
        out.swap_remove(0)
    }

    #[test]
    fn quasi_rde_recursion_matches_the_order_three_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (e, d) = (2, 2);
        let gn = rand_connection(&mut rng, e, 1);
        let comps: Vec<QPoly> = (0..e * d).map(|_| rand_poly(&mut rng, e, 2).embed(e + d, 0)).collect();
        let f = PolyMap::new(e + d, comps);
        let rde = quasi_rde_coefficients(&f, &Connection::flat(d), &gn, 3).unwrap();
        for b in multisets(d, 3) {
            // The oracle returns the first output component only.
            assert_eq!(rde.expansion(0, &b), rde3_oracle(&gn, &f, e, d, &b), "{b:?}");
        }
        let two = quasi_rde_coefficients(&f, &Connection::flat(d), &gn, 2).unwrap();
        for b in multisets(d, 2) {
            assert_eq!(two.expansion(0, &b), rde.expansion(0, &b));
        }
        assert!(two.expansion(0, &[0, 0, 1]).is_zero());
        let flat = quasi_rde_coefficients(&f, &Connection::flat(d), &Connection::flat(e), 3).unwrap();
        assert!(multisets(d, 3).iter().filter(|b| b.len() > 1).all(|b| (0..e).all(|k| flat.expansion(k, b).is_zero())));
    }

    #[test]
    fn flat_manifold_rde_is_the_davie_solution() {
        let x = quasi_geometric_lift(2, &channels(), 3.2, dyadic_grid(1.0, 7)).unwrap();
        let f = QPolyMap::parse(&["x1*x2", "1 - x1^2", "x2", "1/2*x1"], 4).unwrap();
        let rde = quasi_rde_coefficients(&f, &Connection::flat(2), &Connection::flat(2), 3).unwrap();
        let sol = manifold_rde_solve(&rde, &x, &[0.1, 0.2], &[0.0, 0.0]).unwrap();
        let vf = VectorFields::parse(2, &[(Label::atom('1'), vec!["x1*x2", "x2"]), (Label::atom('2'), vec!["1 - x1^2", "1/2*x1"])]).unwrap();
        let plain = davie_solve(&vf, &x, &[0.1, 0.2]).unwrap();
        for t in 0..=x.num_cells() {
            for k in 0..2 {
                assert!((sol.trace_at(t)[k] - plain.trace_at(t)[k]).abs() < 1e-10);
            }
        }
        let zero = quasi_rde_coefficients(&PolyMap::new(4, vec![QPoly::zero(4); 4]), &Connection::flat(2), &Connection::parse(2, &[(0, 1, 1, "x1")]).unwrap(), 3).unwrap();
        let still = manifold_rde_solve(&zero, &x, &[0.1, 0.2], &[0.0, 0.0]).unwrap();
        assert!(still.traces().iter().all(|y| y[0] == 0.1 && y[1] == 0.2));
    }

    /// Solving in `y` and in `z = ψ(y)` gives paths related by `ψ`.
    #[test]
    fn manifold_rde_is_chart_invariant_on_the_target() {
        let gn = Connection::parse(2, &[(0, 0, 1, "1/2"), (1, 0, 0, "x2"), (0, 1, 1, "-1/3")]).unwrap();
        let f = QPolyMap::parse(&["1 + 1/2*x1*x2", "x2", "1/2*x1^2", "1 - 1/3*x2"], 4).unwrap();
        let psi = QPolyMap::parse(&["x1", "x2 + x1^2"], 2).unwrap();
        let psi_inv = QPolyMap::parse(&["x1", "x2 - x1^2"], 2).unwrap();
        let gz = christoffel_transform(&gn, &psi, &psi_inv).unwrap();
        // F'^k_a(z, x) = ∂_i ψ^k (y(z)) F^i_a(y(z), x).
        let yz: Vec<QPoly> = psi_inv.comps.iter().map(|p| p.embed(4, 0)).chain((2..4).map(|v| QPoly::var(4, v))).collect();
        let mut comps = Vec::new();
        for k in 0..2 {
            for a in 0..2 {
                let c = (0..2).fold(QPoly::zero(4), |acc, i| acc.add(&psi.comps[k].derivative(i).embed(4, 0).mul(&f.comps[i * 2 + a])));
                comps.push(c.compose(&yz));
            }
        }
        let fz = PolyMap::new(4, comps);
        let y0 = [0.2, -0.1];
        let z0 = psi.to_f64().eval(&y0);
        let mut errs = Vec::new();
        for depth in [6, 8] {
            let x = quasi_geometric_lift(2, &channels(), 3.2, dyadic_grid(1.0, depth)).unwrap();
            let ry = quasi_rde_coefficients(&f, &Connection::flat(2), &gn, 3).unwrap();
            let rz = quasi_rde_coefficients(&fz, &Connection::flat(2), &gz, 3).unwrap();
            let sy = manifold_rde_solve(&ry, &x, &y0, &[0.0, 0.0]).unwrap();
            let sz = manifold_rde_solve(&rz, &x, &z0, &[0.0, 0.0]).unwrap();
            let psif = psi.to_f64();
            let err = (0..=x.num_cells())
                .map(|t| {
                    let want = psif.eval(&sy.trace_at(t)[..2]);
                    (0..2).map(|k| (want[k] - sz.trace_at(t)[k]).abs()).fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // The linear bracket channels leave weight-four remainders of size h²
    // per cell, so the discrepancy shrinks linearly with the mesh.
    assert!(errs[1] < 2e-4 && errs[1] < errs[0] / 3.0, "{errs:?}");
    }

    #[test]
    fn solution_lift_has_consistent_brackets() {
        let x = quasi_geometric_lift(2, &channels(), 3.2, dyadic_grid(1.0, 8)).unwrap();
        let gn = Connection::parse(2, &[(0, 0, 1, "1/2"), (1, 0, 0, "x2")]).unwrap();
        let f = QPolyMap::parse(&["1", "x2", "1/2*x1", "1"], 4).unwrap();
        let rde = quasi_rde_coefficients(&f, &Connection::flat(2), &gn, 3).unwrap();
        let (sol, y) = manifold_rde_lift(&rde, &x, &[0.0, 0.0], &[0.0, 0.0], 1e-3).unwrap();
        assert_eq!(y.mode(), Extension::QuasiGeometric);
        let tr = y.trace(&[0.0, 0.0]).unwrap();
        for t in [0, 100, x.num_cells()] {
            assert!((tr[t][0] - sol.trace_at(t)[0]).abs() < 1e-12);
        }
        let chart = Chart::new("box", gn).with_domain(vec![(-0.1, 0.1), (-1.0, 1.0)]);
        assert!(matches!(check_chart(&sol, &[0, 1], &chart, x.grid()), Err(Error::ChartExhaustion(_))));
    }
}
