//! Decorated non-planar rooted forests in canonical form.
//!
//! Trees are stored with their children sorted under a global total order,
//! so structural equality coincides with isomorphism of labelled rooted
//! trees. The order compares degree first, then the root label, then the
//! sorted child lists lexicographically. Vertices are addressed by their
//! post-order index within the canonical form.
//!
//! The text grammar is
//!
//! ```text
//! tree   := label | label "(" tree ("," tree)* ")"
//! forest := "0" | tree ("*" tree)*
//! label  := ident | "{" ident+ "}" | "<" forest ">"
//! ```
//!
//! where `ident` is one ASCII alphanumeric character other than `0`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// A letter of the base alphabet together with its grading weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub id: char,
    pub weight: u32,
}

impl Atom {
    pub fn new(id: char) -> Atom {
        Atom { id, weight: 1 }
    }

    pub fn weighted(id: char, weight: u32) -> Atom {
        Atom { id, weight }
    }
}

/// A vertex decoration: a base letter, a multiset of letters, or a proper
/// forest used as a label.
///
/// Variant order gives the label order used in canonical forms.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Atom(Atom),
    /// Sorted, with at least two members.
    Multiset(Vec<Atom>),
    Forest(Box<Forest>),
}

impl Label {
    pub fn atom(id: char) -> Label {
        Label::Atom(Atom::new(id))
    }

    /// Multiset label from arbitrary atoms; a single atom collapses to itself.
    pub fn multiset(mut atoms: Vec<Atom>) -> Label {
        assert!(!atoms.is_empty(), "empty multiset label");
        atoms.sort();
        if atoms.len() == 1 {
            Label::Atom(atoms[0])
        } else {
            Label::Multiset(atoms)
        }
    }

    pub fn weight(&self) -> u32 {
        match self {
            Label::Atom(a) => a.weight,
            Label::Multiset(v) => v.iter().map(|a| a.weight).sum(),
            Label::Forest(f) => f.degree(),
        }
    }

    pub fn is_atom(&self) -> bool {
        matches!(self, Label::Atom(_))
    }

    /// Member atoms of an atom or multiset label.
    pub fn atoms(&self) -> Option<Vec<Atom>> {
        match self {
            Label::Atom(a) => Some(vec![*a]),
            Label::Multiset(v) => Some(v.clone()),
            Label::Forest(_) => None,
        }
    }

    /// Number of distinct orderings of the members of a multiset label.
    pub fn orderings(&self) -> u64 {
        match self.atoms() {
            Some(v) => {
                let mut out = factorial(v.len() as u64);
                for (_, k) in multiplicities(&v) {
                    out /= factorial(k as u64);
                }
                out
            }
            None => 1,
        }
    }

    /// Product of the factorials of member multiplicities.
    pub fn multiplicity_factorial(&self) -> u64 {
        match self.atoms() {
            Some(v) => multiplicities(&v).into_iter().map(|(_, k)| factorial(k as u64)).product(),
            None => 1,
        }
    }

    /// Multiset union of atom/multiset labels.
    pub fn join(labels: &[Label]) -> Option<Label> {
        let mut all = Vec::new();
        for l in labels {
            all.extend(l.atoms()?);
        }
        if all.is_empty() {
            None
        } else {
            Some(Label::multiset(all))
        }
    }

    /// The label `(g)` attached by the root-labelling map.
    ///
    /// Returns `None` when `g` is empty or a tree with more than one vertex.
    pub fn bracket_of(g: &Forest) -> Option<Label> {
        if g.is_empty() {
            return None;
        }
        if g.num_trees() == 1 {
            let t = &g.trees()[0];
            return if t.is_single_vertex() { Some(t.label().clone()) } else { None };
        }
        if g.trees().iter().all(|t| t.is_single_vertex() && t.label().is_atom()) {
            let atoms = g.trees().iter().filter_map(|t| match t.label() {
                Label::Atom(a) => Some(*a),
                _ => None,
            });
            return Some(Label::multiset(atoms.collect()));
        }
        Some(Label::Forest(Box::new(g.clone())))
    }

    /// Label-joining normal form: forest labels made of single vertices are
    /// replaced by the union of their members. `None` signals a label that
    /// wraps a tree with more than one vertex.
    pub fn joined(&self) -> Option<Label> {
        match self {
            Label::Forest(f) => {
                let mut parts = Vec::new();
                for t in f.trees() {
                    if !t.is_single_vertex() {
                        return None;
                    }
                    parts.push(t.label().joined()?);
                }
                Label::join(&parts)
            }
            other => Some(other.clone()),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Atom(a) => write!(f, "{}", a.id),
            Label::Multiset(v) => {
                write!(f, "{{")?;
                for a in v {
                    write!(f, "{}", a.id)?;
                }
                write!(f, "}}")
            }
            Label::Forest(g) => write!(f, "<{g}>"),
        }
    }
}

/// A decorated rooted tree in canonical form.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Tree {
    label: Label,
    children: Vec<Tree>,
    degree: u32,
    size: u32,
}

impl Ord for Tree {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree
            .cmp(&other.degree)
            .then_with(|| self.label.cmp(&other.label))
            .then_with(|| self.children.cmp(&other.children))
    }
}

impl PartialOrd for Tree {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Tree {
    pub fn new(label: Label, mut children: Vec<Tree>) -> Tree {
        children.sort();
        let degree = label.weight() + children.iter().map(|c| c.degree).sum::<u32>();
        let size = 1 + children.iter().map(|c| c.size).sum::<u32>();
        Tree { label, children, degree, size }
    }

    pub fn leaf(label: Label) -> Tree {
        Tree::new(label, Vec::new())
    }

    /// `[f]_a`: joins every root of `f` to a new root labelled `a`.
    pub fn graft(f: &Forest, label: Label) -> Tree {
        Tree::new(label, f.trees.clone())
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn children(&self) -> &[Tree] {
        &self.children
    }

    /// The forest of children, i.e. the tree with its root removed.
    pub fn branches(&self) -> Forest {
        Forest::from_sorted(self.children.clone())
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn is_single_vertex(&self) -> bool {
        self.children.is_empty()
    }

    pub fn height(&self) -> u32 {
        self.children.iter().map(|c| 1 + c.height()).max().unwrap_or(0)
    }

    pub fn to_forest(&self) -> Forest {
        Forest::from_sorted(vec![self.clone()])
    }

    /// True when every label in the tree is a base atom.
    pub fn is_atomic(&self) -> bool {
        self.label.is_atom() && self.children.iter().all(|c| c.is_atomic())
    }

    fn push_labels(&self, out: &mut Vec<Label>) {
        for c in &self.children {
            c.push_labels(out);
        }
        out.push(self.label.clone());
    }

    /// Rebuilds the tree, replacing labels and adding extra children at each
    /// vertex, indexed in post-order starting at `*counter`.
    fn rebuild(&self, counter: &mut usize, labels: Option<&[Label]>, extra: &[Vec<Tree>]) -> Tree {
        let mut ch: Vec<Tree> = self.children.iter().map(|c| c.rebuild(counter, labels, extra)).collect();
        let idx = *counter;
        *counter += 1;
        if let Some(e) = extra.get(idx) {
            ch.extend(e.iter().cloned());
        }
        let label = match labels {
            Some(l) => l[idx].clone(),
            None => self.label.clone(),
        };
        Tree::new(label, ch)
    }

    /// Every cut of the tree as (pruned forest, trunk), where `None` marks
    /// the total cut. Includes the empty cut.
    pub fn cuts(&self) -> Vec<(Forest, Option<Tree>)> {
        let mut partial: Vec<(Vec<Tree>, Vec<Tree>)> = vec![(Vec::new(), Vec::new())];
        for c in &self.children {
            let sub = c.cuts();
            let mut next = Vec::with_capacity(partial.len() * sub.len());
            for (pr, tr) in &partial {
                for (spr, str_) in &sub {
                    let mut p = pr.clone();
                    p.extend(spr.trees.iter().cloned());
                    let mut t = tr.clone();
                    if let Some(x) = str_ {
                        t.push(x.clone());
                    }
                    next.push((p, t));
                }
            }
            partial = next;
        }
        let mut out: Vec<(Forest, Option<Tree>)> = partial
            .into_iter()
            .map(|(p, t)| (Forest::from_trees(p), Some(Tree::new(self.label.clone(), t))))
            .collect();
        out.push((self.to_forest(), None));
        out
    }

    /// Connes-Kreimer cuts as (part above the cut, part containing the root).
    pub fn admissible_cuts(&self) -> Vec<(Forest, Forest)> {
        self.cuts()
            .into_iter()
            .map(|(p, t)| (p, t.map(|x| x.to_forest()).unwrap_or_else(Forest::empty)))
            .collect()
    }

    fn edge_subsets(&self) -> Vec<(usize, Tree, Vec<Tree>)> {
        let mut partial: Vec<(usize, Vec<Tree>, Vec<Tree>)> = vec![(0, Vec::new(), Vec::new())];
        for c in &self.children {
            let sub = c.edge_subsets();
            let mut next = Vec::with_capacity(partial.len() * sub.len() * 2);
            for (k, kept, detached) in &partial {
                for (sk, sroot, sdet) in &sub {
                    let mut kept1 = kept.clone();
                    kept1.push(sroot.clone());
                    let mut det1 = detached.clone();
                    det1.extend(sdet.iter().cloned());
                    next.push((k + sk, kept1, det1.clone()));
                    let mut det2 = det1;
                    det2.push(sroot.clone());
                    next.push((k + sk + 1, kept.clone(), det2));
                }
            }
            partial = next;
        }
        partial
            .into_iter()
            .map(|(k, kept, det)| (k, Tree::new(self.label.clone(), kept), det))
            .collect()
    }

    /// All edge subsets with their size and the forest left after deleting them.
    pub fn all_nontotal_cuts(&self) -> Vec<(usize, Forest)> {
        self.edge_subsets()
            .into_iter()
            .map(|(k, root, mut det)| {
                det.push(root);
                (k, Forest::from_trees(det))
            })
            .collect()
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)?;
        if !self.children.is_empty() {
            write!(f, "(")?;
            for (i, c) in self.children.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{c}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// A commutative product of trees; the empty forest is the unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Ord for Forest {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| self.trees.cmp(&other.trees))
    }
}

impl PartialOrd for Forest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Where to attach a forest: a vertex (post-order index) or plain product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Attach {
    Vertex(usize),
    Product,
}

impl fmt::Display for Attach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attach::Vertex(v) => write!(f, "{v}"),
            Attach::Product => write!(f, "-"),
        }
    }
}

impl Forest {
    pub fn empty() -> Forest {
        Forest { trees: Vec::new() }
    }

    pub fn from_trees(mut trees: Vec<Tree>) -> Forest {
        trees.sort();
        Forest { trees }
    }

    fn from_sorted(trees: Vec<Tree>) -> Forest {
        Forest { trees }
    }

    /// Single vertex `•a`.
    pub fn vertex(label: Label) -> Forest {
        Tree::leaf(label).to_forest()
    }

    /// Product of single vertices with the given labels.
    pub fn vertices(labels: impl IntoIterator<Item = Label>) -> Forest {
        Forest::from_trees(labels.into_iter().map(Tree::leaf).collect())
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn into_trees(self) -> Vec<Tree> {
        self.trees
    }

    pub fn degree(&self) -> u32 {
        self.trees.iter().map(|t| t.degree).sum()
    }

    pub fn num_vertices(&self) -> usize {
        self.trees.iter().map(|t| t.size as usize).sum()
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn as_tree(&self) -> Option<&Tree> {
        if self.trees.len() == 1 {
            Some(&self.trees[0])
        } else {
            None
        }
    }

    pub fn is_atomic(&self) -> bool {
        self.trees.iter().all(|t| t.is_atomic())
    }

    /// True when every factor is a single vertex.
    pub fn is_vertex_product(&self) -> bool {
        self.trees.iter().all(|t| t.is_single_vertex())
    }

    pub fn mul(&self, other: &Forest) -> Forest {
        let mut v = Vec::with_capacity(self.trees.len() + other.trees.len());
        let (mut i, mut j) = (0, 0);
        while i < self.trees.len() && j < other.trees.len() {
            if self.trees[i] <= other.trees[j] {
                v.push(self.trees[i].clone());
                i += 1;
            } else {
                v.push(other.trees[j].clone());
                j += 1;
            }
        }
        v.extend_from_slice(&self.trees[i..]);
        v.extend_from_slice(&other.trees[j..]);
        Forest { trees: v }
    }

    /// Labels of all vertices in post-order.
    pub fn vertex_labels(&self) -> Vec<Label> {
        let mut out = Vec::new();
        for t in &self.trees {
            t.push_labels(&mut out);
        }
        out
    }

    /// Relabels vertices and grafts extra trees onto them (both indexed in
    /// post-order). Missing entries leave a vertex untouched.
    pub fn rebuild(&self, labels: Option<&[Label]>, extra: &[Vec<Tree>]) -> Forest {
        let mut counter = 0;
        let trees = self.trees.iter().map(|t| t.rebuild(&mut counter, labels, extra)).collect();
        Forest::from_trees(trees)
    }

    /// `f ↷_ν g`: joins every root of `self` to vertex `ν` of `g`, or
    /// multiplies for [`Attach::Product`].
    pub fn attach_at(&self, g: &Forest, at: Attach) -> Result<Forest> {
        match at {
            Attach::Product => Ok(self.mul(g)),
            Attach::Vertex(v) => {
                let n = g.num_vertices();
                if v >= n {
                    return Err(Error::InvalidVertex(v));
                }
                let mut extra = vec![Vec::new(); n];
                extra[v] = self.trees.clone();
                Ok(g.rebuild(None, &extra))
            }
        }
    }

    /// Every way of grafting the factors of `self` onto vertices of `g` or
    /// multiplying them in; returned with multiplicity.
    pub fn graft_ways(&self, g: &Forest) -> Vec<Forest> {
        let nv = g.num_vertices();
        let k = self.trees.len();
        let targets = nv + 1;
        let total = targets.pow(k as u32);
        let mut out = Vec::with_capacity(total);
        let mut choice = vec![0usize; k];
        for _ in 0..total {
            let mut extra = vec![Vec::new(); nv];
            let mut product = Vec::new();
            for (i, &c) in choice.iter().enumerate() {
                if c == nv {
                    product.push(self.trees[i].clone());
                } else {
                    extra[c].push(self.trees[i].clone());
                }
            }
            let grafted = g.rebuild(None, &extra);
            out.push(grafted.mul(&Forest::from_trees(product)));
            for c in choice.iter_mut() {
                *c += 1;
                if *c < targets {
                    break;
                }
                *c = 0;
            }
        }
        out
    }

    /// Number of label-preserving automorphisms.
    pub fn symmetry_factor(&self) -> u64 {
        let mut out = 1u64;
        let mut i = 0;
        while i < self.trees.len() {
            let mut j = i;
            while j < self.trees.len() && self.trees[j] == self.trees[i] {
                j += 1;
            }
            let k = (j - i) as u64;
            let s = self.trees[i].branches().symmetry_factor();
            out *= factorial(k) * s.pow(k as u32);
            i = j;
        }
        out
    }

    pub fn parse(s: &str) -> Result<Forest> {
        Forest::parse_with(s, &BTreeMap::new())
    }

    /// Parses with per-letter weights (letters absent from the map weigh 1).
    pub fn parse_with(s: &str, weights: &BTreeMap<char, u32>) -> Result<Forest> {
        let mut p = Parser { s: s.as_bytes(), pos: 0, weights };
        p.skip_ws();
        let f = p.forest()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.err("trailing characters"));
        }
        Ok(f)
    }
}

/// Parses a concatenation of label literals, as used for words.
pub fn parse_labels(s: &str, weights: &BTreeMap<char, u32>) -> Result<Vec<Label>> {
    let mut p = Parser { s: s.as_bytes(), pos: 0, weights };
    let mut out = Vec::new();
    p.skip_ws();
    while p.pos < p.s.len() {
        out.push(p.label()?);
        p.skip_ws();
    }
    Ok(out)
}

impl fmt::Display for Forest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.trees.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.trees.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Forest {
    type Err = Error;
    fn from_str(s: &str) -> Result<Forest> {
        Forest::parse(s)
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    weights: &'a BTreeMap<char, u32>,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn forest(&mut self) -> Result<Forest> {
        self.skip_ws();
        if self.peek() == Some(b'0') {
            self.pos += 1;
            return Ok(Forest::empty());
        }
        let mut trees = vec![self.tree()?];
        while self.eat(b'*') {
            trees.push(self.tree()?);
        }
        Ok(Forest::from_trees(trees))
    }

    fn tree(&mut self) -> Result<Tree> {
        let label = self.label()?;
        let mut children = Vec::new();
        if self.eat(b'(') {
            children.push(self.tree()?);
            while self.eat(b',') {
                children.push(self.tree()?);
            }
            if !self.eat(b')') {
                return Err(self.err("expected ')'"));
            }
        }
        Ok(Tree::new(label, children))
    }

    fn atom(&mut self) -> Result<Atom> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c.is_ascii_alphanumeric() && c != b'0' => {
                self.pos += 1;
                let id = c as char;
                Ok(Atom::weighted(id, self.weights.get(&id).copied().unwrap_or(1)))
            }
            _ => Err(self.err("expected a letter")),
        }
    }

    fn label(&mut self) -> Result<Label> {
        self.skip_ws();
        match self.peek() {
            Some(b'{') => {
                self.pos += 1;
                let mut atoms = vec![self.atom()?];
                while !self.eat(b'}') {
                    if self.pos >= self.s.len() {
                        return Err(self.err("unterminated multiset"));
                    }
                    atoms.push(self.atom()?);
                }
                Ok(Label::multiset(atoms))
            }
            Some(b'<') => {
                self.pos += 1;
                let f = self.forest()?;
                if !self.eat(b'>') {
                    return Err(self.err("expected '>'"));
                }
                Label::bracket_of(&f).ok_or_else(|| self.err("forest label must be a non-empty forest that is not a tree with several vertices"))
            }
            _ => Ok(Label::Atom(self.atom()?)),
        }
    }
}

pub(crate) fn factorial(n: u64) -> u64 {
    (1..=n).product()
}

/// Run-length counts of a sorted slice.
pub(crate) fn multiplicities<T: PartialEq + Clone>(v: &[T]) -> Vec<(T, usize)> {
    let mut out: Vec<(T, usize)> = Vec::new();
    for x in v {
        match out.last_mut() {
            Some((y, k)) if y == x => *k += 1,
            _ => out.push((x.clone(), 1)),
        }
    }
    out
}

/// All trees over `letters` with degree in `1..=max_degree`, sorted.
pub fn enumerate_trees(letters: &[Label], max_degree: u32) -> Vec<Tree> {
    let (trees, _) = enumerate(letters, max_degree);
    trees
}

/// All forests over `letters` with degree `<= max_degree`, sorted, starting
/// with the empty forest.
pub fn enumerate_forests(letters: &[Label], max_degree: u32) -> Vec<Forest> {
    let (_, forests) = enumerate(letters, max_degree);
    forests
}

fn enumerate(letters: &[Label], max_degree: u32) -> (Vec<Tree>, Vec<Forest>) {
    let n = max_degree as usize;
    let mut trees_by_deg: Vec<Vec<Tree>> = vec![Vec::new(); n + 1];
    let mut forests_by_deg: Vec<Vec<Forest>> = vec![Vec::new(); n + 1];
    forests_by_deg[0].push(Forest::empty());
    for d in 1..=n {
        for l in letters {
            let w = l.weight() as usize;
            if w == 0 || w > d {
                continue;
            }
            for f in &forests_by_deg[d - w] {
                trees_by_deg[d].push(Tree::graft(f, l.clone()));
            }
        }
        trees_by_deg[d].sort();
        trees_by_deg[d].dedup();
        let pool: Vec<Tree> = trees_by_deg[1..=d].iter().flatten().cloned().collect();
        let mut found = Vec::new();
        let mut stack = Vec::new();
        collect_multisets(&pool, 0, d as u32, &mut stack, &mut found);
        found.sort();
        forests_by_deg[d] = found;
    }
    let mut trees: Vec<Tree> = trees_by_deg.into_iter().flatten().collect();
    trees.sort();
    let mut forests: Vec<Forest> = forests_by_deg.into_iter().flatten().collect();
    forests.sort();
    (trees, forests)
}

fn collect_multisets(pool: &[Tree], start: usize, remaining: u32, stack: &mut Vec<Tree>, out: &mut Vec<Forest>) {
    if remaining == 0 {
        out.push(Forest::from_trees(stack.clone()));
        return;
    }
    for i in start..pool.len() {
        let d = pool[i].degree();
        if d <= remaining {
            stack.push(pool[i].clone());
            collect_multisets(pool, i, remaining - d, stack, out);
            stack.pop();
        }
    }
}

/// Letters `[d]` named `'1'..'9'`, then `'a'..`.
pub fn numbered_letters(d: usize) -> Vec<Label> {
    (0..d).map(|i| Label::atom(letter_id(i))).collect()
}

/// Character used for the `i`-th coordinate letter.
pub fn letter_id(i: usize) -> char {
    const IDS: &[u8] = b"123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    IDS[i] as char
}

/// Index of a coordinate letter produced by [`letter_id`].
pub fn letter_index(c: char) -> Option<usize> {
    const IDS: &[u8] = b"123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
    IDS.iter().position(|&b| b as char == c)
}

/// The enlarged alphabet of all multisets of `atoms` with weight `<= max_weight`.
pub fn multiset_alphabet(atoms: &[Atom], max_weight: u32) -> Vec<Label> {
    let mut sorted = atoms.to_vec();
    sorted.sort();
    let mut out = Vec::new();
    let mut stack = Vec::new();
    fn rec(atoms: &[Atom], start: usize, remaining: u32, stack: &mut Vec<Atom>, out: &mut Vec<Label>) {
        if !stack.is_empty() {
            out.push(Label::multiset(stack.clone()));
        }
        for i in start..atoms.len() {
            if atoms[i].weight <= remaining {
                stack.push(atoms[i]);
                rec(atoms, i, remaining - atoms[i].weight, stack, out);
                stack.pop();
            }
        }
    }
    rec(&sorted, 0, max_weight, &mut stack, &mut out);
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(s: &str) -> Forest {
        Forest::parse(s).unwrap()
    }

    #[test]
    fn canonical_display() {
        assert_eq!(f("a(b(d),c)").to_string(), "a(c,b(d))");
        assert_eq!(f("b*a").to_string(), "a*b");
        assert_eq!(f("0").to_string(), "0");
        assert_eq!(f("a({bc}(d),<a*b(c)>)").to_string(), "a({bc}(d),<a*b(c)>)");
        assert_eq!(f("{ba}").to_string(), "{ab}");
        assert_eq!(f("<a*b>").to_string(), "{ab}");
        assert_eq!(f("<a>").to_string(), "a");
    }

    #[test]
    fn parse_errors() {
        assert!(Forest::parse("a(").is_err());
        assert!(Forest::parse("a(b").is_err());
        assert!(Forest::parse("<a(b)>").is_err());
        assert!(Forest::parse("a b").is_err());
        assert!(Forest::parse("").is_err());
    }

    #[test]
    fn symmetry_factors() {
        assert_eq!(f("0").symmetry_factor(), 1);
        assert_eq!(f("a*a").symmetry_factor(), 2);
        assert_eq!(f("b(a,a)").symmetry_factor(), 2);
        assert_eq!(f("a(b(c,c),b(c,c))").symmetry_factor(), 8);
    }

    #[test]
    fn graft_ways_examples() {
        let ways = f("d").graft_ways(&f("a(b,c)"));
        let mut got: Vec<String> = ways.iter().map(|x| x.to_string()).collect();
        got.sort();
        let mut want: Vec<String> =
            ["d*a(b,c)", "a(b,c,d)", "a(b(d),c)", "a(b,c(d))"].iter().map(|s| f(s).to_string()).collect();
        want.sort();
        assert_eq!(got, want);
        assert_eq!(f("0").graft_ways(&f("a(b)")), vec![f("a(b)")]);
        assert_eq!(f("a*a").graft_ways(&f("b")).len(), 4);
    }

    #[test]
    fn cuts_examples() {
        assert_eq!(f("a").as_tree().unwrap().admissible_cuts().len(), 2);
        assert_eq!(f("a(b,c)").as_tree().unwrap().admissible_cuts().len(), 5);
        assert_eq!(f("a(b(d),c)").as_tree().unwrap().admissible_cuts().len(), 7);
        assert_eq!(f("a(b(d),c)").as_tree().unwrap().all_nontotal_cuts().len(), 8);
        let c = f("a(b)").as_tree().unwrap().all_nontotal_cuts();
        assert!(c.contains(&(0, f("a(b)"))));
        assert!(c.contains(&(1, f("a*b"))));
    }

    #[test]
    fn attach() {
        let g = f("a");
        assert_eq!(f("b").attach_at(&g, Attach::Vertex(0)).unwrap(), f("a(b)"));
        assert_eq!(f("x*y").attach_at(&f("z"), Attach::Vertex(0)).unwrap(), f("z(x,y)"));
        assert_eq!(f("a(b)").attach_at(&f("0"), Attach::Product).unwrap(), f("a(b)"));
        assert!(f("b").attach_at(&g, Attach::Vertex(1)).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let l = vec![Label::atom('a'), Label::atom('b')];
        let trees = enumerate_trees(&l, 3);
        // 2 + 4 + 14 labelled rooted trees with 1, 2, 3 vertices.
        assert_eq!(trees.len(), 20);
        let forests = enumerate_forests(&l, 2);
        // 0; a, b; a*a, a*b, b*b, a(a), a(b), b(a), b(b)
        assert_eq!(forests.len(), 10);
    }

    #[test]
    fn multiset_alphabet_sizes() {
        let atoms = [Atom::new('1'), Atom::new('2')];
        assert_eq!(multiset_alphabet(&atoms, 1).len(), 2);
        assert_eq!(multiset_alphabet(&atoms, 2).len(), 5);
        assert_eq!(multiset_alphabet(&atoms, 3).len(), 9);
    }
}
