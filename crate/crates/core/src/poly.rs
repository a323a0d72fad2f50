//! Sparse multivariate polynomials over exact rationals or `f64`.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::hopf::{q_to_f64, Q};

/// Scalar field for [`Poly`].
pub trait Coeff:
    Clone + PartialEq + fmt::Debug + Zero + One + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn from_i64(n: i64) -> Self;
    fn from_ratio(n: i64, d: i64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Coeff for Q {
    fn from_i64(n: i64) -> Self {
        Q::from_integer(BigInt::from(n))
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        Q::new(BigInt::from(n), BigInt::from(d))
    }
    fn to_f64(&self) -> f64 {
        q_to_f64(self)
    }
}

impl Coeff for f64 {
    fn from_i64(n: i64) -> Self {
        n as f64
    }
    fn from_ratio(n: i64, d: i64) -> Self {
        n as f64 / d as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

/// Polynomial in `nvars` variables, keyed by exponent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly<T: Coeff> {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, T>,
}

pub type QPoly = Poly<Q>;

impl<T: Coeff> Poly<T> {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: T) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, T::one())
    }

    /// The coordinate function `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(e, T::one());
        p
    }

    pub fn monomial(exps: Vec<u32>, c: T) -> Self {
        let mut p = Self::zero(exps.len());
        p.add_term(exps, c);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &BTreeMap<Vec<u32>, T> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn add_term(&mut self, exps: Vec<u32>, c: T) {
        assert_eq!(exps.len(), self.nvars, "exponent length mismatch");
        if c.is_zero() {
            return;
        }
        match self.terms.entry(exps) {
            Entry::Occupied(mut o) => {
                let v = o.get().clone() + c;
                if v.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = v;
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        self.map_coeffs(|c| -c.clone())
    }

    pub fn scale(&self, s: &T) -> Self {
        if s.is_zero() {
            return Self::zero(self.nvars);
        }
        self.map_coeffs(|c| c.clone() * s.clone())
    }

    pub fn map_coeffs(&self, f: impl Fn(&T) -> T) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), f(c));
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars);
        let mut out = Self::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1.clone() * c2.clone());
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::one(self.nvars);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// `∂/∂x_i`.
    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[i] -= 1;
            out.add_term(e2, c.clone() * T::from_i64(e[i] as i64));
        }
        out
    }

    /// Iterated partial derivative along a list of variable indices.
    pub fn partial(&self, idx: &[usize]) -> Self {
        idx.iter().fold(self.clone(), |p, &i| p.derivative(i))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        self.terms
            .iter()
            .map(|(e, c)| c.to_f64() * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    pub fn eval_exact(&self, x: &[T]) -> T {
        assert_eq!(x.len(), self.nvars);
        let mut out = T::zero();
        for (e, c) in &self.terms {
            let mut m = c.clone();
            for (&k, xi) in e.iter().zip(x) {
                for _ in 0..k {
                    m = m * xi.clone();
                }
            }
            out = out + m;
        }
        out
    }

    /// Substitutes `subs[i]` for `x_i`.
    pub fn compose(&self, subs: &[Poly<T>]) -> Poly<T> {
        assert_eq!(subs.len(), self.nvars);
        let m = subs.first().map(|p| p.nvars).unwrap_or(0);
        let mut powers: Vec<Vec<Poly<T>>> = subs.iter().map(|p| vec![Poly::one(p.nvars)]).collect();
        let mut out = Poly::zero(m);
        for (e, c) in &self.terms {
            let mut term = Poly::constant(m, c.clone());
            for (i, &k) in e.iter().enumerate() {
                while powers[i].len() <= k as usize {
                    let next = powers[i].last().unwrap().mul(&subs[i]);
                    powers[i].push(next);
                }
                term = term.mul(&powers[i][k as usize]);
            }
            out = out.add(&term);
        }
        out
    }

    /// Re-embeds into `total` variables, mapping `x_i` to `x_{offset+i}`.
    pub fn embed(&self, total: usize, offset: usize) -> Poly<T> {
        assert!(offset + self.nvars <= total);
        let mut out = Poly::zero(total);
        for (e, c) in &self.terms {
            let mut e2 = vec![0; total];
            e2[offset..offset + self.nvars].copy_from_slice(e);
            out.add_term(e2, c.clone());
        }
        out
    }

    /// Drops monomials of total degree above `n`.
    pub fn truncate(&self, n: u32) -> Poly<T> {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e.iter().sum::<u32>() <= n {
                out.add_term(e.clone(), c.clone());
            }
        }
        out
    }

    pub fn to_f64(&self) -> Poly<f64> {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), c.to_f64());
        }
        out
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().map(|c| c.to_f64().abs()).fold(0.0, f64::max)
    }
}

impl Poly<Q> {
    /// Parses sums of monomials such as `3/2*x1^2*x2 - x3 + 1`, with
    /// variables `x1..x{nvars}`.
    pub fn parse(s: &str, nvars: usize) -> Result<QPoly> {
        let err = |msg: String| Error::Parse { pos: 0, msg };
        let mut out = QPoly::zero(nvars);
        let cleaned: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if cleaned.is_empty() {
            return Err(err("empty polynomial".into()));
        }
        let mut terms = Vec::new();
        let mut cur = String::new();
        for (i, ch) in cleaned.chars().enumerate() {
            if (ch == '+' || ch == '-') && i > 0 && !cur.ends_with('^') && cur != "+" && cur != "-" {
                terms.push(std::mem::take(&mut cur));
            }
            cur.push(ch);
        }
        terms.push(cur);
        for t in terms {
            let (sign, body) = match t.strip_prefix('-') {
                Some(b) => (-Q::one(), b.to_string()),
                None => (Q::one(), t.trim_start_matches('+').to_string()),
            };
            let mut c = sign;
            let mut e = vec![0u32; nvars];
            for factor in body.split('*') {
                if factor.is_empty() {
                    return Err(err(format!("empty factor in '{t}'")));
                }
                if let Some(rest) = factor.strip_prefix('x') {
                    let (idx, pw) = match rest.split_once('^') {
                        Some((a, b)) => (a, b.parse::<u32>().map_err(|_| err(format!("bad exponent in '{factor}'")))?),
                        None => (rest, 1),
                    };
                    let i: usize = idx.parse().map_err(|_| err(format!("bad variable '{factor}'")))?;
                    if i == 0 || i > nvars {
                        return Err(err(format!("variable x{i} out of range")));
                    }
                    e[i - 1] += pw;
                } else {
                    let v: Q = factor.parse().map_err(|_| err(format!("bad coefficient '{factor}'")))?;
                    c *= v;
                }
            }
            out.add_term(e, c);
        }
        Ok(out)
    }
}

impl<T: Coeff + fmt::Display> fmt::Display for Poly<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (e, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (j, &k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => write!(f, "*x{}", j + 1)?,
                    _ => write!(f, "*x{}^{}", j + 1, k)?,
                }
            }
        }
        Ok(())
    }
}

/// A polynomial map `R^nin → R^{comps.len()}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMap<T: Coeff> {
    pub nin: usize,
    pub comps: Vec<Poly<T>>,
}

pub type QPolyMap = PolyMap<Q>;

impl<T: Coeff> PolyMap<T> {
    pub fn new(nin: usize, comps: Vec<Poly<T>>) -> Self {
        assert!(comps.iter().all(|p| p.nvars() == nin), "component arity mismatch");
        PolyMap { nin, comps }
    }

    pub fn identity(n: usize) -> Self {
        PolyMap { nin: n, comps: (0..n).map(|i| Poly::var(n, i)).collect() }
    }

    pub fn nout(&self) -> usize {
        self.comps.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|p| p.eval(x)).collect()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &PolyMap<T>) -> PolyMap<T> {
        assert_eq!(self.nin, inner.nout());
        PolyMap { nin: inner.nin, comps: self.comps.iter().map(|p| p.compose(&inner.comps)).collect() }
    }

    /// `∂_{idx} f^k` for every component `k`.
    pub fn partial(&self, idx: &[usize]) -> PolyMap<T> {
        PolyMap { nin: self.nin, comps: self.comps.iter().map(|p| p.partial(idx)).collect() }
    }

    pub fn jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.comps.iter().map(|p| (0..self.nin).map(|j| p.derivative(j).eval(x)).collect()).collect()
    }

    pub fn to_f64(&self) -> PolyMap<f64> {
        PolyMap { nin: self.nin, comps: self.comps.iter().map(|p| p.to_f64()).collect() }
    }
}

impl PolyMap<Q> {
    pub fn parse(components: &[&str], nin: usize) -> Result<QPolyMap> {
        Ok(PolyMap { nin, comps: components.iter().map(|s| QPoly::parse(s, nin)).collect::<Result<_>>()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hopf::{q, qr};
    use proptest::prelude::*;

    #[test]
    fn parse_and_display() {
        let p = QPoly::parse("3/2*x1^2*x2 - x2 + 1", 2).unwrap();
        assert_eq!(p.eval(&[2.0, 3.0]), 1.5 * 4.0 * 3.0 - 3.0 + 1.0);
        assert!(QPoly::parse("x3", 2).is_err());
        assert!(QPoly::parse("", 2).is_err());
        let back = QPoly::parse(&p.to_string(), 2).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn derivatives() {
        let p = QPoly::parse("x1^3*x2^2", 2).unwrap();
        assert_eq!(p.partial(&[0, 0, 1]), QPoly::parse("12*x1*x2", 2).unwrap());
        assert!(p.partial(&[1, 1, 1]).is_zero());
    }

    #[test]
    fn compose_chain() {
        let f = QPoly::parse("x1^2 + x2", 2).unwrap();
        let g = PolyMap::parse(&["x1 + 1", "x1^3"], 1).unwrap();
        let h = f.compose(&g.comps);
        assert_eq!(h, QPoly::parse("x1^3 + x1^2 + 2*x1 + 1", 1).unwrap());
        assert_eq!(h.eval_exact(&[qr(1, 2)]), qr(1, 8) + qr(1, 4) + q(2));
    }

    proptest! {
        #[test]
        fn product_rule(a in -3i64..4, b in -3i64..4, c in -3i64..4, x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let f = QPoly::parse(&format!("{a}*x1^2*x2 + {b}*x2"), 2).unwrap();
            let g = QPoly::parse(&format!("{c}*x1 + x2^2"), 2).unwrap();
            let lhs = f.mul(&g).derivative(0);
            let rhs = f.derivative(0).mul(&g).add(&f.mul(&g.derivative(0)));
            prop_assert_eq!(&lhs, &rhs);
            let v = lhs.eval(&[x, y]);
            prop_assert!((v - rhs.to_f64().eval(&[x, y])).abs() < 1e-9);
        }
    }
}
