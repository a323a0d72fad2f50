//! The Connes-Kreimer and Grossman-Larson Hopf algebras on forests, their
//! pairing, and the morphisms to (quasi-)shuffle algebras of words.
//!
//! All scalars are exact rationals.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::forest::{parse_labels, Forest, Label, Tree};

pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qr(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn q_to_f64(x: &Q) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap_or(f64::NAN)
}

/// Finite rational linear combination of basis keys.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinComb<K: Ord> {
    terms: BTreeMap<K, Q>,
}

impl<K: Ord> Default for LinComb<K> {
    fn default() -> Self {
        LinComb { terms: BTreeMap::new() }
    }
}

impl<K: Ord + Clone> LinComb<K> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn basis(k: K) -> Self {
        let mut out = Self::zero();
        out.add_term(k, Q::one());
        out
    }

    pub fn from_terms(it: impl IntoIterator<Item = (K, Q)>) -> Self {
        let mut out = Self::zero();
        for (k, c) in it {
            out.add_term(k, c);
        }
        out
    }

    pub fn add_term(&mut self, k: K, c: Q) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(k) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Self, c: &Q) {
        for (k, v) in &other.terms {
            self.add_term(k.clone(), v * c);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, &Q::one());
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(other, &-Q::one());
        out
    }

    pub fn scale(&self, c: &Q) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        LinComb { terms: self.terms.iter().map(|(k, v)| (k.clone(), v * c)).collect() }
    }

    pub fn neg(&self) -> Self {
        self.scale(&-Q::one())
    }

    pub fn coeff(&self, k: &K) -> Q {
        self.terms.get(k).cloned().unwrap_or_else(Q::zero)
    }

    pub fn terms(&self) -> &BTreeMap<K, Q> {
        &self.terms
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &Q)> {
        self.terms.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Extends `f` linearly.
    pub fn map_linear<L: Ord + Clone>(&self, mut f: impl FnMut(&K) -> LinComb<L>) -> LinComb<L> {
        let mut out = LinComb::zero();
        for (k, c) in &self.terms {
            out.add_scaled(&f(k), c);
        }
        out
    }
}

fn write_coeff(f: &mut fmt::Formatter<'_>, c: &Q, first: bool) -> fmt::Result {
    let neg = c.is_negative();
    let a = c.abs();
    match (first, neg) {
        (true, true) => write!(f, "-")?,
        (true, false) => {}
        (false, true) => write!(f, " - ")?,
        (false, false) => write!(f, " + ")?,
    }
    if !a.is_one() {
        write!(f, "{a} ")?;
    }
    Ok(())
}

impl<K: Ord + fmt::Display> fmt::Display for LinComb<K> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (k, c)) in self.terms.iter().enumerate() {
            write_coeff(f, c, i == 0)?;
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

/// Element of the free module on forests, shared by both Hopf structures.
pub type AlgElem = LinComb<Forest>;

impl LinComb<Forest> {
    pub fn one() -> AlgElem {
        AlgElem::basis(Forest::empty())
    }

    pub fn parse_forest(s: &str) -> Result<AlgElem> {
        Ok(AlgElem::basis(Forest::parse(s)?))
    }

    /// Commutative forest product.
    pub fn mul(&self, other: &AlgElem) -> AlgElem {
        let mut out = AlgElem::zero();
        for (f, a) in &self.terms {
            for (g, b) in &other.terms {
                out.add_term(f.mul(g), a * b);
            }
        }
        out
    }

    pub fn star(&self, other: &AlgElem) -> AlgElem {
        gl_product(self, other)
    }

    /// Drops every forest of degree above `n`.
    pub fn truncate(&self, n: u32) -> AlgElem {
        LinComb { terms: self.terms.iter().filter(|(f, _)| f.degree() <= n).map(|(f, c)| (f.clone(), c.clone())).collect() }
    }

    pub fn counit(&self) -> Q {
        self.coeff(&Forest::empty())
    }

    /// Serialization: one `num/den forest` line per term in basis order.
    pub fn to_lines(&self) -> String {
        let mut s = String::new();
        for (f, c) in &self.terms {
            s.push_str(&format!("{}/{} {}\n", c.numer(), c.denom(), f));
        }
        s
    }

    pub fn from_lines(s: &str) -> Result<AlgElem> {
        let mut out = AlgElem::zero();
        for (lineno, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (c, f) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Parse { pos: lineno, msg: "expected 'coefficient forest'".into() })?;
            let c: Q = c.parse().map_err(|_| Error::Parse { pos: lineno, msg: format!("bad coefficient {c}") })?;
            out.add_term(Forest::parse(f.trim())?, c);
        }
        Ok(out)
    }
}

/// Sweedler-style tensor with explicit arity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorElem {
    arity: usize,
    terms: BTreeMap<Vec<Forest>, Q>,
}

impl TensorElem {
    pub fn zero(arity: usize) -> TensorElem {
        TensorElem { arity, terms: BTreeMap::new() }
    }

    /// `1 ⊗ ... ⊗ 1`.
    pub fn unit(arity: usize) -> TensorElem {
        let mut t = TensorElem::zero(arity);
        t.add_term(vec![Forest::empty(); arity], Q::one());
        t
    }

    pub fn from_alg(x: &AlgElem) -> TensorElem {
        let mut t = TensorElem::zero(1);
        for (f, c) in x.iter() {
            t.add_term(vec![f.clone()], c.clone());
        }
        t
    }

    /// `x ⊗ y`.
    pub fn pure(x: &AlgElem, y: &AlgElem) -> TensorElem {
        TensorElem::from_alg(x).outer(&TensorElem::from_alg(y))
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn terms(&self) -> &BTreeMap<Vec<Forest>, Q> {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, k: &[Forest]) -> Q {
        self.terms.get(k).cloned().unwrap_or_else(Q::zero)
    }

    pub fn add_term(&mut self, k: Vec<Forest>, c: Q) {
        assert_eq!(k.len(), self.arity, "tensor arity mismatch");
        if c.is_zero() {
            return;
        }
        match self.terms.entry(k) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub fn add_scaled(&mut self, other: &TensorElem, c: &Q) {
        assert_eq!(self.arity, other.arity, "tensor arity mismatch");
        for (k, v) in &other.terms {
            self.add_term(k.clone(), v * c);
        }
    }

    pub fn add(&self, other: &TensorElem) -> TensorElem {
        let mut out = self.clone();
        out.add_scaled(other, &Q::one());
        out
    }

    pub fn sub(&self, other: &TensorElem) -> TensorElem {
        let mut out = self.clone();
        out.add_scaled(other, &-Q::one());
        out
    }

    /// Concatenates slots: `self ⊗ other`.
    pub fn outer(&self, other: &TensorElem) -> TensorElem {
        let mut out = TensorElem::zero(self.arity + other.arity);
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                let mut k = a.clone();
                k.extend(b.iter().cloned());
                out.add_term(k, x * y);
            }
        }
        out
    }

    /// Slot-wise product under a bilinear map on forests.
    pub fn mul_slotwise(&self, other: &TensorElem, op: impl Fn(&Forest, &Forest) -> AlgElem) -> TensorElem {
        assert_eq!(self.arity, other.arity, "tensor arity mismatch");
        let mut out = TensorElem::zero(self.arity);
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                let mut partial: Vec<(Vec<Forest>, Q)> = vec![(Vec::new(), x * y)];
                for (fa, fb) in a.iter().zip(b) {
                    let prod = op(fa, fb);
                    let mut next = Vec::new();
                    for (k, c) in &partial {
                        for (h, d) in prod.iter() {
                            let mut k2 = k.clone();
                            k2.push(h.clone());
                            next.push((k2, c * d));
                        }
                    }
                    partial = next;
                }
                for (k, c) in partial {
                    out.add_term(k, c);
                }
            }
        }
        out
    }

    /// Replaces slot `i` by the slots of `f(slot)`.
    pub fn expand_slot(&self, i: usize, f: impl Fn(&Forest) -> TensorElem) -> TensorElem {
        assert!(i < self.arity);
        let mut out: Option<TensorElem> = None;
        let mut cache: BTreeMap<Forest, TensorElem> = BTreeMap::new();
        for (k, c) in &self.terms {
            let img = cache.entry(k[i].clone()).or_insert_with(|| f(&k[i]));
            let acc = out.get_or_insert_with(|| TensorElem::zero(self.arity - 1 + img.arity));
            for (g, d) in &img.terms {
                let mut key: Vec<Forest> = k[..i].to_vec();
                key.extend(g.iter().cloned());
                key.extend(k[i + 1..].iter().cloned());
                acc.add_term(key, c * d);
            }
        }
        out.unwrap_or_else(|| TensorElem::zero(self.arity))
    }

    /// Applies a linear map to slot `i`.
    pub fn map_slot(&self, i: usize, f: impl Fn(&Forest) -> AlgElem) -> TensorElem {
        let arity = self.arity;
        let mut out = self.expand_slot(i, |g| TensorElem::from_alg(&f(g)));
        out.arity = arity;
        out
    }

    /// Collapses all slots into one element through `f`.
    pub fn contract(&self, f: impl Fn(&[Forest]) -> AlgElem) -> AlgElem {
        let mut out = AlgElem::zero();
        for (k, c) in &self.terms {
            out.add_scaled(&f(k), c);
        }
        out
    }

    /// Drops every term with an empty slot.
    pub fn reduce(&self) -> TensorElem {
        TensorElem {
            arity: self.arity,
            terms: self.terms.iter().filter(|(k, _)| k.iter().all(|f| !f.is_empty())).map(|(k, c)| (k.clone(), c.clone())).collect(),
        }
    }
}

impl fmt::Display for TensorElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (k, c)) in self.terms.iter().enumerate() {
            write_coeff(f, c, i == 0)?;
            let parts: Vec<String> = k.iter().map(|x| if x.is_empty() { "1".to_string() } else { x.to_string() }).collect();
            write!(f, "{}", parts.join(" ⊗ "))?;
        }
        Ok(())
    }
}

/// Which Hopf structure to use for coproduct-based operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    ConnesKreimer,
    GrossmanLarson,
}

/// CK coproduct of a single forest as (pruned, trunk) pairs with counts.
pub fn ck_coproduct_forest(f: &Forest) -> BTreeMap<(Forest, Forest), u64> {
    let mut acc: BTreeMap<(Forest, Forest), u64> = BTreeMap::new();
    acc.insert((Forest::empty(), Forest::empty()), 1);
    for t in f.trees() {
        let cuts = t.admissible_cuts();
        let mut next = BTreeMap::new();
        for ((p, r), c) in &acc {
            for (p2, r2) in &cuts {
                *next.entry((p.mul(p2), r.mul(r2))).or_insert(0) += c;
            }
        }
        acc = next;
    }
    acc
}

pub fn ck_coproduct(x: &AlgElem) -> TensorElem {
    let mut out = TensorElem::zero(2);
    for (f, c) in x.iter() {
        for ((p, r), k) in ck_coproduct_forest(f) {
            out.add_term(vec![p, r], c * q(k as i64));
        }
    }
    out
}

/// `Δ̃ x = Δ x − x ⊗ 1 − 1 ⊗ x` for the CK coproduct.
pub fn ck_reduced_coproduct(x: &AlgElem) -> TensorElem {
    ck_coproduct(x).reduce()
}

fn subset_splits(trees: &[Tree]) -> Vec<(Forest, Forest)> {
    let n = trees.len();
    (0..1usize << n)
        .map(|mask| {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (i, t) in trees.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    a.push(t.clone());
                } else {
                    b.push(t.clone());
                }
            }
            (Forest::from_trees(a), Forest::from_trees(b))
        })
        .collect()
}

pub fn gl_coproduct(x: &AlgElem) -> TensorElem {
    let mut out = TensorElem::zero(2);
    for (f, c) in x.iter() {
        for (a, b) in subset_splits(f.trees()) {
            out.add_term(vec![a, b], c.clone());
        }
    }
    out
}

pub fn gl_product(x: &AlgElem, y: &AlgElem) -> AlgElem {
    let mut out = AlgElem::zero();
    for (f, a) in x.iter() {
        for (g, b) in y.iter() {
            let ab = a * b;
            for h in f.graft_ways(g) {
                out.add_term(h, ab.clone());
            }
        }
    }
    out
}

pub fn counit(x: &AlgElem) -> Q {
    x.counit()
}

fn antipode_ck_tree(t: &Tree) -> AlgElem {
    let mut out = AlgElem::zero();
    for (k, f) in t.all_nontotal_cuts() {
        let sign = if k % 2 == 0 { -1 } else { 1 };
        out.add_term(f, q(sign));
    }
    out
}

pub fn antipode_ck(x: &AlgElem) -> AlgElem {
    x.map_linear(|f| {
        let mut acc = AlgElem::one();
        for t in f.trees() {
            acc = acc.mul(&antipode_ck_tree(t));
        }
        acc
    })
}

fn antipode_gl_forest(f: &Forest, memo: &mut BTreeMap<Forest, AlgElem>) -> AlgElem {
    if let Some(v) = memo.get(f) {
        return v.clone();
    }
    let out = if f.is_empty() {
        AlgElem::one()
    } else {
        let mut acc = AlgElem::basis(f.clone()).neg();
        for (a, b) in subset_splits(f.trees()) {
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let sa = antipode_gl_forest(&a, memo);
            acc = acc.sub(&gl_product(&sa, &AlgElem::basis(b)));
        }
        acc
    };
    memo.insert(f.clone(), out.clone());
    out
}

pub fn antipode_gl(x: &AlgElem) -> AlgElem {
    let mut memo = BTreeMap::new();
    x.map_linear(|f| antipode_gl_forest(f, &mut memo))
}

/// `⟨y, x⟩ = Σ_f 𝒩(f) y(f) x(f)` on basis coefficients.
pub fn pairing(y: &AlgElem, x: &AlgElem) -> Q {
    let (small, large) = if y.len() <= x.len() { (y, x) } else { (x, y) };
    let mut out = Q::zero();
    for (f, a) in small.iter() {
        if let Some(b) = large.terms().get(f) {
            out += a * b * q(f.symmetry_factor() as i64);
        }
    }
    out
}

/// Slot-wise pairing of two tensors of equal arity.
pub fn tensor_pairing(y: &TensorElem, x: &TensorElem) -> Q {
    assert_eq!(y.arity(), x.arity(), "tensor arity mismatch");
    let mut out = Q::zero();
    for (k, a) in y.terms() {
        if let Some(b) = x.terms().get(k) {
            let n: i64 = k.iter().map(|f| f.symmetry_factor() as i64).product();
            out += a * b * q(n);
        }
    }
    out
}

/// `Δ^m` with `Δ^0 = ε`, `Δ^1 = id`; the reduced variant keeps only terms
/// with every slot non-empty.
pub fn iterated_coproduct(x: &AlgElem, m: usize, reduced: bool, which: Structure) -> TensorElem {
    let delta = |f: &Forest| match which {
        Structure::ConnesKreimer => ck_coproduct(&AlgElem::basis(f.clone())),
        Structure::GrossmanLarson => gl_coproduct(&AlgElem::basis(f.clone())),
    };
    let full = match m {
        0 => {
            let mut t = TensorElem::zero(0);
            t.add_term(Vec::new(), x.counit());
            t
        }
        1 => TensorElem::from_alg(x),
        _ => {
            let mut t = TensorElem::from_alg(x).expand_slot(0, delta);
            for _ in 2..m {
                let last = t.arity() - 1;
                t = t.expand_slot(last, delta);
            }
            t
        }
    };
    if reduced {
        full.reduce()
    } else {
        full
    }
}

/// A word over atom, multiset or tree letters.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(pub Vec<Label>);

impl Word {
    pub fn empty() -> Word {
        Word(Vec::new())
    }

    pub fn parse(s: &str) -> Result<Word> {
        if s.trim() == "1" {
            return Ok(Word::empty());
        }
        Ok(Word(parse_labels(s, &BTreeMap::new())?))
    }

    pub fn weight(&self) -> u32 {
        self.0.iter().map(|l| l.weight()).sum()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[Label] {
        &self.0
    }

    pub fn push(&self, l: Label) -> Word {
        let mut v = self.0.clone();
        v.push(l);
        Word(v)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for l in &self.0 {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

pub type WordSum = LinComb<Word>;

/// Shuffle product of two sequences, with multiplicity.
pub fn shuffle<T: Ord + Clone>(a: &[T], b: &[T]) -> LinComb<Vec<T>> {
    quasi_shuffle_with(a, b, None::<&dyn Fn(&T, &T) -> T>)
}

/// Quasi-shuffle product of two sequences for a commutative bracket; with
/// `bracket = None` this is the shuffle product.
pub fn quasi_shuffle_with<T: Ord + Clone>(a: &[T], b: &[T], bracket: Option<&dyn Fn(&T, &T) -> T>) -> LinComb<Vec<T>> {
    let mut memo: BTreeMap<(usize, usize), LinComb<Vec<T>>> = BTreeMap::new();
    qsh_rec(a, b, a.len(), b.len(), bracket, &mut memo)
}

fn qsh_rec<T: Ord + Clone>(
    a: &[T],
    b: &[T],
    i: usize,
    j: usize,
    bracket: Option<&dyn Fn(&T, &T) -> T>,
    memo: &mut BTreeMap<(usize, usize), LinComb<Vec<T>>>,
) -> LinComb<Vec<T>> {
    if let Some(v) = memo.get(&(i, j)) {
        return v.clone();
    }
    let out = if i == 0 {
        LinComb::basis(b[..j].to_vec())
    } else if j == 0 {
        LinComb::basis(a[..i].to_vec())
    } else {
        let append = |x: &LinComb<Vec<T>>, l: &T| -> LinComb<Vec<T>> {
            LinComb::from_terms(x.iter().map(|(w, c)| {
                let mut w = w.clone();
                w.push(l.clone());
                (w, c.clone())
            }))
        };
        let mut acc = append(&qsh_rec(a, b, i, j - 1, bracket, memo), &b[j - 1]);
        acc = acc.add(&append(&qsh_rec(a, b, i - 1, j, bracket, memo), &a[i - 1]));
        if let Some(br) = bracket {
            let l = br(&a[i - 1], &b[j - 1]);
            acc = acc.add(&append(&qsh_rec(a, b, i - 1, j - 1, bracket, memo), &l));
        }
        acc
    };
    memo.insert((i, j), out.clone());
    out
}

fn require_simple(w: &Word) -> Result<()> {
    for l in w.letters() {
        if l.atoms().is_none() {
            return Err(Error::UnsupportedLabel(l.to_string()));
        }
    }
    Ok(())
}

fn join2(a: &Label, b: &Label) -> Label {
    Label::join(&[a.clone(), b.clone()]).expect("quasi-shuffle letters are atoms or multisets")
}

fn wrap_words(x: LinComb<Vec<Label>>) -> WordSum {
    WordSum::from_terms(x.terms().iter().map(|(w, c)| (Word(w.clone()), c.clone())))
}

/// Quasi-shuffle of words over atoms and multisets, bracketing by multiset union.
pub fn quasi_shuffle(w: &Word, z: &Word) -> Result<WordSum> {
    require_simple(w)?;
    require_simple(z)?;
    Ok(wrap_words(quasi_shuffle_with(&w.0, &z.0, Some(&join2))))
}

pub fn shuffle_words(w: &Word, z: &Word) -> WordSum {
    wrap_words(shuffle(&w.0, &z.0))
}

fn product_sum(x: &WordSum, y: &WordSum, quasi: bool) -> WordSum {
    let mut out = WordSum::zero();
    for (w, a) in x.iter() {
        for (z, b) in y.iter() {
            let p = if quasi { wrap_words(quasi_shuffle_with(&w.0, &z.0, Some(&join2))) } else { shuffle_words(w, z) };
            out.add_scaled(&p, &(a * b));
        }
    }
    out
}

fn append_letter(x: &WordSum, l: &Label) -> WordSum {
    WordSum::from_terms(x.iter().map(|(w, c)| (w.push(l.clone()), c.clone())))
}

fn phi_generic(f: &Forest, quasi: bool) -> WordSum {
    let mut acc = WordSum::basis(Word::empty());
    for t in f.trees() {
        let tw = append_letter(&phi_generic(&t.branches(), quasi), t.label());
        acc = product_sum(&acc, &tw, quasi);
    }
    acc
}

/// Shuffle-algebra morphism with `φ([f]_γ) = φ(f)γ`.
pub fn phi(f: &Forest) -> WordSum {
    phi_generic(f, false)
}

/// Quasi-shuffle morphism with `φ̃([f]_γ) = φ̃(f)γ`; defined on forests
/// whose labels are atoms or multisets.
pub fn phi_tilde(f: &Forest) -> Result<WordSum> {
    for l in f.vertex_labels() {
        if l.atoms().is_none() {
            return Err(Error::UnsupportedLabel(l.to_string()));
        }
    }
    Ok(phi_generic(f, true))
}

pub fn phi_linear(x: &AlgElem) -> WordSum {
    x.map_linear(phi)
}

pub fn phi_tilde_linear(x: &AlgElem) -> Result<WordSum> {
    let mut out = WordSum::zero();
    for (f, c) in x.iter() {
        out.add_scaled(&phi_tilde(f)?, c);
    }
    Ok(out)
}

/// Ladder tree whose vertices read the word from top to bottom; the last
/// letter sits at the root.
pub fn iota(w: &Word) -> Forest {
    let mut acc = Forest::empty();
    for l in w.letters() {
        acc = Tree::graft(&acc, l.clone()).to_forest();
    }
    acc
}

pub fn iota_linear(x: &WordSum) -> AlgElem {
    x.map_linear(|w| AlgElem::basis(iota(w)))
}

/// Sum over words whose letters are trees.
pub type TreeWordSum = LinComb<Vec<Tree>>;

/// The map into the shuffle algebra over trees: `ψ(t) = t + Σ ψ(t₁)·t₂`
/// over the reduced CK coproduct; multiplicative with the shuffle product.
pub fn psi(t: &Tree) -> TreeWordSum {
    let mut memo = BTreeMap::new();
    psi_tree(t, &mut memo)
}

pub fn psi_forest(f: &Forest) -> TreeWordSum {
    let mut memo = BTreeMap::new();
    psi_forest_memo(f, &mut memo)
}

fn psi_forest_memo(f: &Forest, memo: &mut BTreeMap<Tree, TreeWordSum>) -> TreeWordSum {
    let mut acc = TreeWordSum::basis(Vec::new());
    for t in f.trees() {
        let pt = psi_tree(t, memo);
        let mut next = TreeWordSum::zero();
        for (w, a) in acc.iter() {
            for (z, b) in pt.iter() {
                next.add_scaled(&shuffle(w, z), &(a * b));
            }
        }
        acc = next;
    }
    acc
}

fn psi_tree(t: &Tree, memo: &mut BTreeMap<Tree, TreeWordSum>) -> TreeWordSum {
    if let Some(v) = memo.get(t) {
        return v.clone();
    }
    let mut out = TreeWordSum::basis(vec![t.clone()]);
    for (pruned, trunk) in t.cuts() {
        let Some(trunk) = trunk else { continue };
        if pruned.is_empty() {
            continue;
        }
        let pp = psi_forest_memo(&pruned, memo);
        for (w, c) in pp.iter() {
            let mut w = w.clone();
            w.push(trunk.clone());
            out.add_term(w, c.clone());
        }
    }
    memo.insert(t.clone(), out.clone());
    out
}

fn compositions(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    (0..1usize << (n - 1))
        .map(|mask| {
            let mut parts = Vec::new();
            let mut run = 1;
            for i in 0..n - 1 {
                if mask >> i & 1 == 1 {
                    parts.push(run);
                    run = 1;
                } else {
                    run += 1;
                }
            }
            parts.push(run);
            parts
        })
        .collect()
}

fn contract_word(w: &Word, parts: &[usize]) -> Word {
    let mut out = Vec::with_capacity(parts.len());
    let mut i = 0;
    for &p in parts {
        out.push(Label::join(&w.0[i..i + p]).expect("simple letters"));
        i += p;
    }
    Word(out)
}

/// Hoffman's exponential on a single word: `Σ_I (1/I!) I[w]`.
#[cfg(test)]
pub(crate) fn hoffman_exp(w: &Word) -> Result<WordSum> {
    require_simple(w)?;
    let mut out = WordSum::zero();
    for parts in compositions(w.len()) {
        let denom: i64 = parts.iter().map(|&p| (1..=p as i64).product::<i64>()).product();
        out.add_term(contract_word(w, &parts), qr(1, denom));
    }
    Ok(out)
}

/// Hoffman's logarithm on a single word: `Σ_I ((−1)^{n−ℓ(I)} / Π i_k) I[w]`.
pub(crate) fn hoffman_log(w: &Word) -> Result<WordSum> {
    require_simple(w)?;
    let n = w.len();
    let mut out = WordSum::zero();
    for parts in compositions(n) {
        let denom: i64 = parts.iter().map(|&p| p as i64).product();
        let sign = if (n - parts.len()).is_multiple_of(2) { 1 } else { -1 };
        out.add_term(contract_word(w, &parts), qr(sign, denom));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::enumerate_forests;
    use proptest::prelude::*;

    fn f(s: &str) -> Forest {
        Forest::parse(s).unwrap()
    }

    fn e(s: &str) -> AlgElem {
        AlgElem::basis(f(s))
    }

    fn w(s: &str) -> Word {
        Word::parse(s).unwrap()
    }

    fn ab() -> Vec<Label> {
        vec![Label::atom('a'), Label::atom('b')]
    }

    #[test]
    fn ck_golden() {
        let d = ck_coproduct(&e("a(b(d),c)"));
        let mut want = TensorElem::zero(2);
        for (x, y) in [
            ("0", "a(b(d),c)"),
            ("d", "a(b,c)"),
            ("d*c", "a(b)"),
            ("b(d)", "a(c)"),
            ("c*b(d)", "a"),
            ("c", "a(b(d))"),
            ("a(b(d),c)", "0"),
        ] {
            want.add_term(vec![f(x), f(y)], q(1));
        }
        assert_eq!(d, want);
    }

    #[test]
    fn gl_golden() {
        let got = e("d").star(&e("a(b,c)"));
        let want = e("d*a(b,c)").add(&e("a(b,c,d)")).add(&e("a(b(d),c)")).add(&e("a(b,c(d))"));
        assert_eq!(got, want);
        assert_eq!(e("a").star(&e("b")), e("a*b").add(&e("b(a)")));
        assert_eq!(AlgElem::one().star(&e("a(b)")), e("a(b)"));
    }

    #[test]
    fn gl_coproduct_small() {
        let d = gl_coproduct(&e("a*b"));
        assert_eq!(d.terms().len(), 4);
        assert_eq!(gl_coproduct(&AlgElem::one()), TensorElem::unit(2));
        let t = gl_coproduct(&e("a(b)"));
        assert_eq!(t, TensorElem::pure(&AlgElem::one(), &e("a(b)")).add(&TensorElem::pure(&e("a(b)"), &AlgElem::one())));
    }

    #[test]
    fn pairing_golden() {
        assert_eq!(pairing(&e("b(a,a)"), &e("a").star(&e("b(a)"))), q(2));
        let lhs = tensor_pairing(&ck_coproduct(&e("b(a,a)")), &TensorElem::pure(&e("a"), &e("b(a)")));
        assert_eq!(lhs, q(2));
        assert_eq!(pairing(&e("a"), &e("a(b)")), q(0));
    }

    #[test]
    fn antipodes_small() {
        assert_eq!(antipode_ck(&e("a")), e("a").neg());
        assert_eq!(antipode_ck(&e("a(b)")), e("a(b)").neg().add(&e("a*b")));
        assert_eq!(antipode_gl(&e("a(b)")), e("a(b)").neg());
        assert_eq!(antipode_gl(&e("a*b")), e("a*b").add(&e("a(b)")).add(&e("b(a)")));
    }

    /// Exhaustive bialgebra and duality checks at degree ≤ 3; the degree-4
    /// sweep lives in the acceptance target.
    #[test]
    fn hopf_axioms_degree3() {
        let basis = enumerate_forests(&ab(), 3);
        for z in &basis {
            let x = AlgElem::basis(z.clone());
            let d = ck_coproduct(&x);
            let s = d.contract(|k| antipode_ck(&AlgElem::basis(k[0].clone())).mul(&AlgElem::basis(k[1].clone())));
            assert_eq!(s, AlgElem::one().scale(&x.counit()), "CK antipode at {z}");
            let g = gl_coproduct(&x);
            let s = g.contract(|k| antipode_gl(&AlgElem::basis(k[0].clone())).star(&AlgElem::basis(k[1].clone())));
            assert_eq!(s, AlgElem::one().scale(&x.counit()), "GL antipode at {z}");
            let l = d.expand_slot(1, |h| ck_coproduct(&AlgElem::basis(h.clone())));
            let r = d.expand_slot(0, |h| ck_coproduct(&AlgElem::basis(h.clone())));
            assert_eq!(l, r);
        }
        for x in &basis {
            for y in &basis {
                if x.degree() + y.degree() > 3 {
                    continue;
                }
                let xy = e(&x.to_string()).star(&e(&y.to_string()));
                for z in &basis {
                    if z.degree() != x.degree() + y.degree() {
                        continue;
                    }
                    let lhs = tensor_pairing(&ck_coproduct(&e(&z.to_string())), &TensorElem::pure(&e(&x.to_string()), &e(&y.to_string())));
                    assert_eq!(lhs, pairing(&e(&z.to_string()), &xy), "duality at {z}; {x}, {y}");
                }
            }
        }
    }

    #[test]
    fn iterated() {
        let t = iterated_coproduct(&e("a"), 3, false, Structure::ConnesKreimer);
        assert_eq!(t.terms().len(), 3);
        assert!(iterated_coproduct(&e("a"), 2, true, Structure::ConnesKreimer).is_zero());
        let r = iterated_coproduct(&e("a(b)"), 2, true, Structure::ConnesKreimer);
        let mut want = TensorElem::zero(2);
        want.add_term(vec![f("b"), f("a")], q(1));
        assert_eq!(r, want);
        assert_eq!(iterated_coproduct(&e("a*b").add(&AlgElem::one()), 0, false, Structure::GrossmanLarson).coeff(&[]), q(1));
    }

    #[test]
    fn quasi_shuffle_golden() {
        assert_eq!(quasi_shuffle(&w("a"), &w("1")).unwrap(), WordSum::basis(w("a")));
        let got = quasi_shuffle(&w("a"), &w("b")).unwrap();
        let want = WordSum::from_terms([(w("ab"), q(1)), (w("ba"), q(1)), (w("{ab}"), q(1))]);
        assert_eq!(got, want);
        // α₁=a, α₂α₃={bc}, β₁=d, β₂=e
        let got = quasi_shuffle(&w("a{bc}"), &w("de")).unwrap();
        let want_words = [
            "a{bc}de", "ad{bc}e", "da{bc}e", "ade{bc}", "dae{bc}", "dea{bc}",
            "ad{bce}", "da{bce}", "a{bcd}e", "d{ae}{bc}", "{ad}{bc}e", "{ad}e{bc}",
            "{ad}{bce}",
        ];
        let want = WordSum::from_terms(want_words.iter().map(|s| (w(s), q(1))));
        assert_eq!(got.len(), 13);
        assert_eq!(got, want);
    }

    #[test]
    fn phi_iota() {
        assert_eq!(phi(&f("a(b,c)")), WordSum::from_terms([(w("bca"), q(1)), (w("cba"), q(1))]));
        assert_eq!(iota(&w("12")), f("2(1)"));
        for word in ["1", "a", "ab", "aab", "ab{ab}a", "{aa}bab"] {
            let ww = w(word);
            assert_eq!(phi(&iota(&ww)), WordSum::basis(ww.clone()));
            assert_eq!(phi_tilde(&iota(&ww)).unwrap(), WordSum::basis(ww));
        }
        assert!(phi_tilde(&f("a(<a*b(c)>)")).is_err());
    }

    #[test]
    fn phi_tilde_multiplicative() {
        let basis = enumerate_forests(&ab(), 4);
        for x in &basis {
            for y in &basis {
                if x.degree() + y.degree() > 4 {
                    continue;
                }
                let lhs = phi_tilde(&x.mul(y)).unwrap();
                let rhs = product_sum(&phi_tilde(x).unwrap(), &phi_tilde(y).unwrap(), true);
                assert_eq!(lhs, rhs);
            }
        }
    }

    /// Cut-bullet identity: φ̃(f) = Σ φ̃(pruned)·(joined trunk labels), summed
    /// over cuts that keep only the root of each tree or cut it entirely,
    /// with at least one root kept.
    #[test]
    fn cut_bullet_identity() {
        let letters = vec![Label::atom('a'), Label::atom('b'), Label::multiset(vec![crate::forest::Atom::new('a'), crate::forest::Atom::new('b')])];
        for x in enumerate_forests(&letters, 4) {
            if x.is_empty() {
                continue;
            }
            let n = x.num_trees();
            let mut rhs = WordSum::zero();
            for mask in 1..(1usize << n) {
                let mut pruned = Forest::empty();
                let mut roots = Vec::new();
                for (i, t) in x.trees().iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        pruned = pruned.mul(&t.branches());
                        roots.push(t.label().clone());
                    } else {
                        pruned = pruned.mul(&t.to_forest());
                    }
                }
                let label = Label::join(&roots).unwrap();
                rhs = rhs.add(&append_letter(&phi_tilde(&pruned).unwrap(), &label));
            }
            assert_eq!(phi_tilde(&x).unwrap(), rhs, "at {x}");
        }
    }

    #[test]
    fn psi_coalgebra_morphism() {
        for t in crate::forest::enumerate_trees(&ab(), 4) {
            let p = psi(&t);
            // Deconcatenation of ψ(t) against (ψ ⊗ ψ)Δ_CK t, both as pairs of tree words.
            let mut lhs: BTreeMap<(Vec<Tree>, Vec<Tree>), Q> = BTreeMap::new();
            for (word, c) in p.iter() {
                for i in 0..=word.len() {
                    *lhs.entry((word[..i].to_vec(), word[i..].to_vec())).or_insert_with(Q::zero) += c.clone();
                }
            }
            let mut rhs: BTreeMap<(Vec<Tree>, Vec<Tree>), Q> = BTreeMap::new();
            for ((pr, tr), k) in ck_coproduct_forest(&t.to_forest()) {
                let a = psi_forest(&pr);
                let b = psi_forest(&tr);
                for (x, c) in a.iter() {
                    for (y, d) in b.iter() {
                        *rhs.entry((x.clone(), y.clone())).or_insert_with(Q::zero) += c * d * q(k as i64);
                    }
                }
            }
            lhs.retain(|_, v| !v.is_zero());
            rhs.retain(|_, v| !v.is_zero());
            assert_eq!(lhs, rhs, "at {t}");
        }
        let p = psi(&Tree::new(Label::atom('a'), vec![Tree::leaf(Label::atom('b'))]));
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn hoffman_round_trip() {
        for word in ["a", "ab", "abc", "a{ab}b", "abca"] {
            let ww = w(word);
            let lg = hoffman_log(&ww).unwrap();
            let mut back = WordSum::zero();
            for (z, c) in lg.iter() {
                back.add_scaled(&hoffman_exp(z).unwrap(), c);
            }
            assert_eq!(back, WordSum::basis(ww));
        }
        assert_eq!(hoffman_log(&w("ab")).unwrap(), WordSum::from_terms([(w("ab"), q(1)), (w("{ab}"), qr(-1, 2))]));
    }

    #[test]
    fn serialization_round_trip() {
        let x = e("a(b)").scale(&qr(-3, 4)).add(&e("a*b")).add(&AlgElem::one().scale(&q(2)));
        assert_eq!(AlgElem::from_lines(&x.to_lines()).unwrap(), x);
        assert_eq!(x.to_string(), "2 0 + a*b - 3/4 a(b)");
    }

    fn arb_forest_upto(n: u32) -> impl Strategy<Value = Forest> {
        let basis = enumerate_forests(&ab(), n);
        (0..basis.len()).prop_map(move |i| basis[i].clone())
    }

    fn arb_forest() -> impl Strategy<Value = Forest> {
        arb_forest_upto(4)
    }

    proptest! {
        #[test]
        fn gl_associative(x in arb_forest_upto(2), y in arb_forest_upto(2), z in arb_forest_upto(2)) {
            let (x, y, z) = (AlgElem::basis(x), AlgElem::basis(y), AlgElem::basis(z));
            prop_assert_eq!(x.star(&y).star(&z), x.star(&y.star(&z)));
        }

        #[test]
        fn ck_multiplicative(x in arb_forest(), y in arb_forest()) {
            let (x, y) = (AlgElem::basis(x), AlgElem::basis(y));
            let lhs = ck_coproduct(&x.mul(&y));
            let rhs = ck_coproduct(&x).mul_slotwise(&ck_coproduct(&y), |a, b| AlgElem::basis(a.mul(b)));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn gl_compatible(x in arb_forest(), y in arb_forest()) {
            let (x, y) = (AlgElem::basis(x), AlgElem::basis(y));
            let lhs = gl_coproduct(&x.star(&y));
            let rhs = gl_coproduct(&x).mul_slotwise(&gl_coproduct(&y), |a, b| gl_product(&AlgElem::basis(a.clone()), &AlgElem::basis(b.clone())));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn antipodes_dual(x in arb_forest(), y in arb_forest()) {
            let (x, y) = (AlgElem::basis(x), AlgElem::basis(y));
            prop_assert_eq!(pairing(&antipode_ck(&x), &y), pairing(&x, &antipode_gl(&y)));
        }

        #[test]
        fn product_dual(x in arb_forest(), y in arb_forest(), z in arb_forest()) {
            let (x, y, z) = (AlgElem::basis(x), AlgElem::basis(y), AlgElem::basis(z));
            prop_assert_eq!(tensor_pairing(&TensorElem::pure(&x, &y), &gl_coproduct(&z)), pairing(&x.mul(&y), &z));
        }
    }
}
