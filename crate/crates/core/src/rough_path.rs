//! Branched rough paths sampled on a grid.
//!
//! A [`RoughPath`] stores the truncated character `X_st` for every grid cell
//! and for every aligned dyadic block of cells, as a dense vector over a
//! forest [`Basis`]. Values on other grid pairs are composed with Chen's
//! relation from the largest stored blocks.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forest::{enumerate_forests, multiset_alphabet, numbered_letters, Atom, Forest, Label};
use crate::hopf::{ck_coproduct_forest, hoffman_log, iota, iota_linear, phi, phi_tilde, q_to_f64, AlgElem};
use crate::poly::{Poly, PolyMap};

/// How components outside the stored basis are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Extension {
    /// Only stored components exist.
    Strict,
    /// Labels outside the base alphabet evaluate to zero.
    Geometric,
    /// Forest labels built from single vertices are joined into multisets;
    /// anything else, or a multiset that is not stored, evaluates to zero.
    QuasiGeometric,
}

impl Extension {
    pub fn name(self) -> &'static str {
        match self {
            Extension::Strict => "strict",
            Extension::Geometric => "geometric",
            Extension::QuasiGeometric => "quasi-geometric",
        }
    }
}

#[derive(Clone, Debug)]
struct TreeInfo {
    root: usize,
    children: Vec<usize>,
    height: u32,
}

/// All forests over an alphabet up to a degree, with the CK coproduct and
/// the tree factorisation of each basis element precomputed.
#[derive(Debug)]
pub struct Basis {
    letters: Vec<Label>,
    letter_index: BTreeMap<Label, usize>,
    n: u32,
    forests: Vec<Forest>,
    index: HashMap<Forest, usize>,
    coproduct: Vec<Vec<(f64, usize, usize)>>,
    factors: Vec<Vec<usize>>,
    trees: Vec<Option<TreeInfo>>,
    max_height: u32,
}

impl Basis {
    pub fn new(letters: Vec<Label>, n: u32) -> Arc<Basis> {
        let forests = enumerate_forests(&letters, n);
        let index: HashMap<Forest, usize> = forests.iter().cloned().enumerate().map(|(i, f)| (f, i)).collect();
        let letter_index: BTreeMap<Label, usize> = letters.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
        let coproduct = forests
            .iter()
            .map(|f| ck_coproduct_forest(f).into_iter().map(|((a, b), k)| (k as f64, index[&a], index[&b])).collect())
            .collect();
        let factors = forests.iter().map(|f| f.trees().iter().map(|t| index[&t.to_forest()]).collect()).collect();
        let mut max_height = 0;
        let trees = forests
            .iter()
            .map(|f| {
                f.as_tree().map(|t| {
                    max_height = max_height.max(t.height());
                    TreeInfo {
                        root: letter_index[t.label()],
                        children: t.children().iter().map(|c| index[&c.to_forest()]).collect(),
                        height: t.height(),
                    }
                })
            })
            .collect();
        Arc::new(Basis { letters, letter_index, n, forests, index, coproduct, factors, trees, max_height })
    }

    pub fn letters(&self) -> &[Label] {
        &self.letters
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.forests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forests.is_empty()
    }

    pub fn forests(&self) -> &[Forest] {
        &self.forests
    }

    pub fn index_of(&self, f: &Forest) -> Option<usize> {
        self.index.get(f).copied()
    }

    pub fn has_letter(&self, l: &Label) -> bool {
        self.letter_index.contains_key(l)
    }

    /// The unit character.
    pub fn unit(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[0] = 1.0;
        v
    }

    /// Chen product `(a ⋆ b)^f = Σ a^{f'} b^{f''}` over `Δ_CK f = Σ f' ⊗ f''`.
    pub fn chen(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.coproduct.iter().map(|terms| terms.iter().map(|&(k, i, j)| k * a[i] * b[j]).sum()).collect()
    }

    /// Character of a straight segment whose letter increments are `delta`:
    /// `X^τ = Π_v δ^{a_v} / τ!` on trees, with `τ!` the tree factorial.
    pub fn linear_segment(&self, delta: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        let mut size = vec![0.0; self.len()];
        for h in 0..=self.max_height {
            for (k, info) in self.trees.iter().enumerate() {
                let Some(info) = info else { continue };
                if info.height != h {
                    continue;
                }
                size[k] = 1.0 + info.children.iter().map(|&c| size[c]).sum::<f64>();
                v[k] = delta[info.root] * info.children.iter().map(|&c| v[c]).product::<f64>() / size[k];
            }
        }
        self.multiplicative_closure(&mut v);
        v
    }

    /// Completes tree values into a character by multiplicativity.
    pub fn multiplicative_closure(&self, v: &mut [f64]) {
        v[0] = 1.0;
        for (k, fs) in self.factors.iter().enumerate() {
            if fs.len() > 1 {
                v[k] = fs.iter().map(|&t| v[t]).product();
            }
        }
    }
}

/// Grid with `2^depth` equal cells on `[0, horizon]`.
pub fn dyadic_grid(horizon: f64, depth: u32) -> Vec<f64> {
    let n = 1usize << depth;
    (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

/// Aligned dyadic blocks `(k·2^l, (k+1)·2^l)` fitting in `ncells`, finest first.
fn dyadic_blocks(ncells: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut size = 1;
    while size <= ncells {
        let mut i = 0;
        while i + size <= ncells {
            out.push((i, i + size));
            i += size;
        }
        size *= 2;
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct RoughPath {
    basis: Arc<Basis>,
    p: f64,
    grid: Vec<f64>,
    blocks: HashMap<(usize, usize), Vec<f64>>,
    mode: Extension,
}

impl RoughPath {
    /// Evaluates `f(s, t)` directly on every stored block.
    pub fn from_block_fn(basis: Arc<Basis>, p: f64, grid: Vec<f64>, mode: Extension, f: impl Fn(f64, f64) -> Vec<f64>) -> RoughPath {
        let blocks = dyadic_blocks(grid.len() - 1).into_iter().map(|(i, j)| ((i, j), f(grid[i], grid[j]))).collect();
        RoughPath { basis, p, grid, blocks, mode }
    }

    /// Builds all blocks from cell increments by Chen's relation.
    pub fn from_cells(basis: Arc<Basis>, p: f64, grid: Vec<f64>, mode: Extension, cells: Vec<Vec<f64>>) -> Result<RoughPath> {
        if cells.len() + 1 != grid.len() {
            return Err(Error::InvalidInput(format!("{} cells for a grid of {} points", cells.len(), grid.len())));
        }
        let mut blocks: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        for (i, c) in cells.into_iter().enumerate() {
            if c.len() != basis.len() {
                return Err(Error::InvalidInput("cell value has the wrong length".into()));
            }
            blocks.insert((i, i + 1), c);
        }
        for (i, j) in dyadic_blocks(grid.len() - 1) {
            if j - i > 1 {
                let m = (i + j) / 2;
                let v = basis.chen(&blocks[&(i, m)], &blocks[&(m, j)]);
                blocks.insert((i, j), v);
            }
        }
        Ok(RoughPath { basis, p, grid, blocks, mode })
    }

    /// Applies `f` to every stored block, producing a path over `basis`.
    pub fn map_blocks(&self, basis: Arc<Basis>, mode: Extension, f: impl Fn(&[f64]) -> Vec<f64>) -> RoughPath {
        let blocks = self.blocks.iter().map(|(k, v)| (*k, f(v))).collect();
        RoughPath { basis, p: self.p, grid: self.grid.clone(), blocks, mode }
    }

    pub fn with_mode(&self, mode: Extension) -> RoughPath {
        RoughPath { mode, ..self.clone() }
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn letters(&self) -> &[Label] {
        self.basis.letters()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n(&self) -> u32 {
        self.basis.n
    }

    pub fn mode(&self) -> Extension {
        self.mode
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn num_cells(&self) -> usize {
        self.grid.len() - 1
    }

    /// Stored grid pairs, sorted.
    pub fn stored_pairs(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = self.blocks.keys().copied().collect();
        v.sort();
        v
    }

    /// `X_{t_i t_j}` for `i <= j`.
    pub fn value(&self, i: usize, j: usize) -> Vec<f64> {
        assert!(i <= j && j < self.grid.len(), "grid pair ({i}, {j}) out of range");
        if i == j {
            return self.basis.unit();
        }
        if let Some(v) = self.blocks.get(&(i, j)) {
            return v.clone();
        }
        let mut acc: Option<Vec<f64>> = None;
        let mut cur = i;
        while cur < j {
            let mut size = 1;
            while cur.is_multiple_of(size * 2) && cur + size * 2 <= j && self.blocks.contains_key(&(cur, cur + size * 2)) {
                size *= 2;
            }
            let piece = &self.blocks[&(cur, cur + size)];
            acc = Some(match acc {
                None => piece.clone(),
                Some(a) => self.basis.chen(&a, piece),
            });
            cur += size;
        }
        acc.expect("non-empty interval")
    }

    /// Where `⟨f, X⟩` lives in a value vector: `Some(k)` for slot `k`,
    /// `None` when the extension mode makes it zero.
    pub fn resolve(&self, f: &Forest) -> Result<Option<usize>> {
        if let Some(k) = self.basis.index_of(f) {
            return Ok(Some(k));
        }
        let degree = f.degree();
        if degree > self.n() {
            return Err(Error::DegreeOverflow { degree, max: self.n() });
        }
        let labels = f.vertex_labels();
        let missing = || Error::MissingComponent(f.to_string());
        match self.mode {
            Extension::Strict => Err(missing()),
            Extension::Geometric => {
                if labels.iter().any(|l| !l.is_atom() && !self.basis.has_letter(l)) {
                    Ok(None)
                } else {
                    Err(missing())
                }
            }
            Extension::QuasiGeometric => {
                let mut joined = Vec::with_capacity(labels.len());
                for l in &labels {
                    match l.joined() {
                        Some(j) => joined.push(j),
                        None => return Ok(None),
                    }
                }
                if joined.iter().any(|l| !l.is_atom() && !self.basis.has_letter(l)) {
                    return Ok(None);
                }
                let g = f.rebuild(Some(&joined), &[]);
                self.basis.index_of(&g).map(Some).ok_or_else(missing)
            }
        }
    }

    /// Reads `⟨f, X⟩` from a value vector, extending past the basis according
    /// to the extension mode.
    pub fn component_in(&self, v: &[f64], f: &Forest) -> Result<f64> {
        Ok(self.resolve(f)?.map_or(0.0, |k| v[k]))
    }

    /// Trace `x0 + X^{•a}_{0 t_i}` of the atom letters, per grid point.
    pub fn trace(&self, x0: &[f64]) -> Result<Vec<Vec<f64>>> {
        let atoms: Vec<usize> = self
            .letters()
            .iter()
            .filter(|l| l.is_atom())
            .map(|l| self.basis.index_of(&Forest::vertex(l.clone())).expect("letter in basis"))
            .collect();
        if atoms.len() != x0.len() {
            return Err(Error::InvalidInput(format!("{} initial values for {} atom letters", x0.len(), atoms.len())));
        }
        let mut out = Vec::with_capacity(self.grid.len());
        let mut cur = x0.to_vec();
        out.push(cur.clone());
        for i in 0..self.num_cells() {
            let v = self.value(i, i + 1);
            for (c, &k) in cur.iter_mut().zip(&atoms) {
                *c += v[k];
            }
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Atom letters in basis order.
    pub fn atoms(&self) -> Vec<Label> {
        self.letters().iter().filter(|l| l.is_atom()).cloned().collect()
    }

    pub fn eval_values(&self, v: &[f64], x: &AlgElem) -> Result<f64> {
        let mut acc = 0.0;
        for (f, c) in x.iter() {
            acc += q_to_f64(c) * self.component_in(v, f)?;
        }
        Ok(acc)
    }

    pub fn component(&self, i: usize, j: usize, f: &Forest) -> Result<f64> {
        self.component_in(&self.value(i, j), f)
    }

    pub fn eval(&self, x: &AlgElem, i: usize, j: usize) -> Result<f64> {
        self.eval_values(&self.value(i, j), x)
    }

    /// Overwrites one stored component; blocks composed from it are not
    /// refreshed.
    pub fn set_component(&mut self, i: usize, j: usize, f: &Forest, value: f64) -> Result<()> {
        let k = self.basis.index_of(f).ok_or_else(|| Error::MissingComponent(f.to_string()))?;
        let block = self.blocks.get_mut(&(i, j)).ok_or_else(|| Error::InvalidInput(format!("({i}, {j}) is not a stored block")))?;
        block[k] = value;
        Ok(())
    }

    /// `max_f |X_st^f − (X_su ⋆ X_ut)^f|`.
    pub fn chen_defect(&self, i: usize, u: usize, j: usize) -> f64 {
        let lhs = self.value(i, j);
        let rhs = self.basis.chen(&self.value(i, u), &self.value(u, j));
        max_abs_diff(&lhs, &rhs)
    }

    /// Largest Chen defect over every stored block and its two halves.
    pub fn max_chen_defect(&self) -> f64 {
        self.blocks
            .keys()
            .filter(|(i, j)| j - i > 1)
            .map(|&(i, j)| self.chen_defect(i, (i + j) / 2, j))
            .fold(0.0, f64::max)
    }

    /// `max_f |X^f − Π_trees X^t|` on one grid pair.
    pub fn grouplike_defect(&self, i: usize, j: usize) -> f64 {
        let v = self.value(i, j);
        let mut worst = (v[0] - 1.0).abs();
        for (k, fs) in self.basis.factors.iter().enumerate() {
            if fs.len() > 1 {
                let prod: f64 = fs.iter().map(|&t| v[t]).product();
                worst = worst.max((v[k] - prod).abs());
            }
        }
        worst
    }

    pub fn max_grouplike_defect(&self) -> f64 {
        self.blocks.keys().map(|&(i, j)| self.grouplike_defect(i, j)).fold(0.0, f64::max)
    }

    /// For each non-empty basis forest, `sup |X_st^f| / (t − s)^{|f|/p}` over
    /// stored blocks.
    pub fn regularity_report(&self) -> Vec<(Forest, f64)> {
        let mut worst = vec![0.0f64; self.basis.len()];
        for (&(i, j), v) in &self.blocks {
            let h = self.grid[j] - self.grid[i];
            for (k, f) in self.basis.forests.iter().enumerate().skip(1) {
                let r = v[k].abs() / h.powf(f.degree() as f64 / self.p);
                worst[k] = worst[k].max(r);
            }
        }
        self.basis.forests.iter().cloned().zip(worst).skip(1).collect()
    }

    fn max_defect_against(&self, rows: Vec<(usize, AlgElem)>) -> Result<Vec<(Forest, f64)>> {
        let mut out = Vec::with_capacity(rows.len());
        for (k, row) in rows {
            let mut worst = 0.0f64;
            for v in self.blocks.values() {
                worst = worst.max((v[k] - self.eval_values(v, &row)?).abs());
            }
            out.push((self.basis.forests[k].clone(), worst));
        }
        Ok(out)
    }

    /// `|X^f − X^{ι∘φ(f)}|` for every forest over base letters.
    pub fn geometric_defect(&self) -> Result<Vec<(Forest, f64)>> {
        let rows = self
            .basis
            .forests
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, f)| f.vertex_labels().iter().all(|l| l.is_atom()))
            .map(|(k, f)| (k, iota_linear(&phi(f))))
            .collect();
        self.max_defect_against(rows)
    }

    /// `|X^f − X^{ι∘φ̃(f)}|` for every forest with atom or multiset labels.
    pub fn quasi_geometric_defect(&self) -> Result<Vec<(Forest, f64)>> {
        let mut rows = Vec::new();
        for (k, f) in self.basis.forests.iter().enumerate().skip(1) {
            if let Ok(w) = phi_tilde(f) {
                rows.push((k, iota_linear(&w)));
            }
        }
        self.max_defect_against(rows)
    }

    /// Fails with [`Error::NotQuasiGeometric`] at the first forest whose
    /// defect exceeds `tol`.
    pub fn check_quasi_geometric(&self, tol: f64) -> Result<f64> {
        let mut worst = 0.0f64;
        for (f, d) in self.quasi_geometric_defect()? {
            if d > tol {
                return Err(Error::NotQuasiGeometric { forest: f.to_string(), defect: d });
            }
            worst = worst.max(d);
        }
        Ok(worst)
    }

    /// Plain-text dump: header lines, then one line per stored block and
    /// non-zero component.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let letters: Vec<String> = self.letters().iter().map(|l| l.to_string()).collect();
        let _ = writeln!(s, "p {}", self.p);
        let _ = writeln!(s, "n {}", self.n());
        let _ = writeln!(s, "mode {}", self.mode.name());
        let _ = writeln!(s, "letters {}", letters.join(" "));
        let grid: Vec<String> = self.grid.iter().map(|t| format!("{t}")).collect();
        let _ = writeln!(s, "grid {}", grid.join(" "));
        for (i, j) in self.stored_pairs() {
            let v = &self.blocks[&(i, j)];
            for (k, f) in self.basis.forests.iter().enumerate().skip(1) {
                if v[k] != 0.0 {
                    let _ = writeln!(s, "{i} {j} {f} {:.17e}", v[k]);
                }
            }
        }
        s
    }
}

const GL_NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

/// Eight-point Gauss–Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre_8(a: f64, b: f64) -> [(f64, f64); 8] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 8];
    for k in 0..4 {
        out[2 * k] = (mid - half * GL_NODES[k], half * GL_WEIGHTS[k]);
        out[2 * k + 1] = (mid + half * GL_NODES[k], half * GL_WEIGHTS[k]);
    }
    out
}

/// A smooth driver: one univariate polynomial channel per letter.
#[derive(Clone, Debug)]
pub struct SmoothDriver {
    letters: Vec<Label>,
    paths: Vec<Poly<f64>>,
    derivs: Vec<Poly<f64>>,
}

impl SmoothDriver {
    pub fn new(letters: Vec<Label>, paths: Vec<Poly<f64>>) -> Result<SmoothDriver> {
        if letters.len() != paths.len() || paths.iter().any(|p| p.nvars() != 1) {
            return Err(Error::InvalidInput("one univariate channel per letter required".into()));
        }
        let derivs = paths.iter().map(|p| p.derivative(0)).collect();
        Ok(SmoothDriver { letters, paths, derivs })
    }

    /// Letters `1..=d` driven by the components of `γ: R → R^d`.
    pub fn from_polymap(gamma: &PolyMap<f64>) -> Result<SmoothDriver> {
        if gamma.nin != 1 {
            return Err(Error::InvalidInput("driver must be a map from time".into()));
        }
        SmoothDriver::new(numbered_letters(gamma.nout()), gamma.comps.clone())
    }

    pub fn letters(&self) -> &[Label] {
        &self.letters
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.paths.iter().map(|p| p.eval(&[t])).collect()
    }

    /// Iterated integrals of every tree with height `<= level` over `[s, u]`.
    fn tree_values(&self, basis: &Basis, map: &[usize], s: f64, u: f64, level: u32) -> Vec<f64> {
        let mut out = vec![0.0; basis.len()];
        for (k, info) in basis.trees.iter().enumerate() {
            if let Some(info) = info {
                if info.height == 0 {
                    let p = &self.paths[map[info.root]];
                    out[k] = p.eval(&[u]) - p.eval(&[s]);
                }
            }
        }
        if level == 0 {
            return out;
        }
        for (r, w) in gauss_legendre_8(s, u) {
            let inner = self.tree_values(basis, map, s, r, level - 1);
            for (k, info) in basis.trees.iter().enumerate() {
                if let Some(info) = info {
                    if info.height >= 1 && info.height <= level {
                        let prod: f64 = info.children.iter().map(|&c| inner[c]).product();
                        out[k] += w * prod * self.derivs[map[info.root]].eval(&[r]);
                    }
                }
            }
        }
        out
    }

    fn letter_map(&self, basis: &Basis) -> Result<Vec<usize>> {
        basis
            .letters
            .iter()
            .map(|l| self.letters.iter().position(|m| m == l).ok_or_else(|| Error::MissingComponent(format!("channel for {l}"))))
            .collect()
    }

    /// The signature character over `[s, t]` on `basis`.
    pub fn signature(&self, basis: &Basis, s: f64, t: f64) -> Result<Vec<f64>> {
        let map = self.letter_map(basis)?;
        let mut v = self.tree_values(basis, &map, s, t, basis.max_height);
        basis.multiplicative_closure(&mut v);
        Ok(v)
    }

    /// Lifts the driver to degree `n` on `grid`; each stored block is
    /// integrated directly.
    pub fn lift(&self, n: u32, p: f64, grid: Vec<f64>, mode: Extension) -> Result<RoughPath> {
        let basis = Basis::new(self.letters.clone(), n);
        let map = self.letter_map(&basis)?;
        let b = basis.clone();
        Ok(RoughPath::from_block_fn(basis, p, grid, mode, move |s, t| {
            let mut v = self.tree_values(&b, &map, s, t, b.max_height);
            b.multiplicative_closure(&mut v);
            v
        }))
    }
}

/// Canonical geometric lift of a polynomial path `γ: R → R^d` to degree `⌊p⌋`.
pub fn smooth_lift(gamma: &PolyMap<f64>, p: f64, grid: Vec<f64>) -> Result<RoughPath> {
    SmoothDriver::from_polymap(gamma)?.lift(p.floor() as u32, p, grid, Extension::Geometric)
}

/// Quasi-geometric path over the multiset alphabet of `d` letters.
///
/// `channels` assigns a smooth trace to atoms and multiset letters (missing
/// letters are zero).
pub fn quasi_geometric_lift(d: usize, channels: &BTreeMap<Label, Poly<f64>>, p: f64, grid: Vec<f64>) -> Result<RoughPath> {
    let n = p.floor() as u32;
    let letters = quasi_letters(d, n, channels.keys())?;
    let paths = letters.iter().map(|l| channels.get(l).cloned().unwrap_or_else(|| Poly::zero(1))).collect();
    let driver = SmoothDriver::new(letters, paths)?;
    quasi_from_bar(&driver.lift(n, p, grid, Extension::Geometric)?)
}

/// As [`quasi_geometric_lift`], with channels sampled on the grid and joined
/// linearly between grid points.
pub fn quasi_geometric_from_samples(d: usize, channels: &BTreeMap<Label, Vec<f64>>, p: f64, grid: Vec<f64>) -> Result<RoughPath> {
    let n = p.floor() as u32;
    let letters = quasi_letters(d, n, channels.keys())?;
    if channels.values().any(|v| v.len() != grid.len()) {
        return Err(Error::InvalidInput("channel samples do not match the grid".into()));
    }
    let points: Vec<Vec<f64>> =
        (0..grid.len()).map(|i| letters.iter().map(|l| channels.get(l).map_or(0.0, |v| v[i])).collect()).collect();
    quasi_from_bar(&piecewise_linear_lift(letters, n, &points, p, grid, Extension::Geometric)?)
}

/// Geometric lift of the path through `points` (one per grid point, one
/// coordinate per letter), linear on each cell.
pub fn piecewise_linear_lift(letters: Vec<Label>, n: u32, points: &[Vec<f64>], p: f64, grid: Vec<f64>, mode: Extension) -> Result<RoughPath> {
    if points.len() != grid.len() || points.iter().any(|x| x.len() != letters.len()) {
        return Err(Error::InvalidInput("sample points do not match the grid and letters".into()));
    }
    let basis = Basis::new(letters, n);
    let cells = points
        .windows(2)
        .map(|w| basis.linear_segment(&w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect::<Vec<f64>>()))
        .collect();
    RoughPath::from_cells(basis, p, grid, mode, cells)
}

fn quasi_letters<'a>(d: usize, n: u32, used: impl Iterator<Item = &'a Label>) -> Result<Vec<Label>> {
    let atoms: Vec<Atom> = (0..d).map(|i| Atom::new(crate::forest::letter_id(i))).collect();
    let letters = multiset_alphabet(&atoms, n);
    for l in used {
        if !letters.contains(l) {
            return Err(Error::UnsupportedLabel(l.to_string()));
        }
    }
    Ok(letters)
}

/// Pulls the geometric lift `X̄` of independent multiset channels back
/// through `ι ∘ log ∘ φ̃`, so `X̃^f = ⟨ι∘log∘φ̃(f), X̄⟩`.
fn quasi_from_bar(bar: &RoughPath) -> Result<RoughPath> {
    let basis = bar.basis().clone();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(basis.len());
    for f in basis.forests() {
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (w, c) in phi_tilde(f)?.iter() {
            for (v, e) in hoffman_log(w)?.iter() {
                let k = basis.index_of(&iota(v)).expect("ladder within degree");
                *acc.entry(k).or_default() += q_to_f64(c) * q_to_f64(e);
            }
        }
        rows.push(acc.into_iter().collect());
    }
    Ok(bar.map_blocks(basis.clone(), Extension::QuasiGeometric, |v| {
        rows.iter().map(|row| row.iter().map(|&(k, c)| c * v[k]).sum()).collect()
    }))
}

/// For `n = 2`, adjoins the multiset letters of weight two with
/// `X^{{αβ}} = ⟨≪αβ≫, X⟩`.
pub fn canonical_level2_bracket(x: &RoughPath) -> Result<RoughPath> {
    if x.n() != 2 {
        return Err(Error::InvalidInput(format!("level-2 bracket needs n = 2, got {}", x.n())));
    }
    let mut atoms = Vec::new();
    for l in x.letters() {
        match l {
            Label::Atom(a) => atoms.push(*a),
            other => return Err(Error::UnsupportedLabel(other.to_string())),
        }
    }
    let basis = Basis::new(multiset_alphabet(&atoms, 2), 2);
    let mut sources: Vec<AlgElem> = Vec::with_capacity(basis.len());
    for f in basis.forests() {
        let src = if x.basis().index_of(f).is_some() {
            AlgElem::basis(f.clone())
        } else {
            match f.as_tree().map(|t| t.label()) {
                Some(Label::Multiset(m)) if f.num_vertices() == 1 => {
                    crate::bracket::bracket_polynomial(&Forest::vertices(m.iter().map(|a| Label::Atom(*a))))
                }
                _ => AlgElem::zero(),
            }
        };
        sources.push(src);
    }
    let mut blocks = HashMap::new();
    for (&k, v) in &x.blocks {
        let nv = sources.iter().map(|s| x.eval_values(v, s)).collect::<Result<Vec<f64>>>()?;
        blocks.insert(k, nv);
    }
    Ok(RoughPath { basis, p: x.p, grid: x.grid.clone(), blocks, mode: Extension::QuasiGeometric })
}

/// Per-level convergence log of [`sew`].
#[derive(Clone, Debug, PartialEq)]
pub struct SewReport {
    /// `diffs[l-1] = |Π_{level l} Ξ − Π_{level l-1} Ξ|` over the whole grid.
    pub diffs: Vec<f64>,
}

/// Sews an almost-multiplicative germ on a dyadic grid.
///
/// The germ products over the whole grid are compared on successive dyadic
/// refinements; the result is accepted when the finest two levels differ by
/// less than `tol`, and its cells are the germ on the finest cells.
pub fn sew(
    germ: &dyn Fn(usize, usize) -> Vec<f64>,
    basis: Arc<Basis>,
    p: f64,
    grid: Vec<f64>,
    mode: Extension,
    tol: f64,
) -> Result<(RoughPath, SewReport)> {
    let ncells = grid.len() - 1;
    if !ncells.is_power_of_two() {
        return Err(Error::InvalidInput(format!("sewing needs 2^k cells, got {ncells}")));
    }
    let depth = ncells.trailing_zeros();
    let mut products = Vec::with_capacity(depth as usize + 1);
    for l in 0..=depth {
        let size = ncells >> l;
        let mut acc = basis.unit();
        for k in 0..(1usize << l) {
            acc = basis.chen(&acc, &germ(k * size, (k + 1) * size));
        }
        products.push(acc);
    }
    let diffs: Vec<f64> = products.windows(2).map(|w| max_abs_diff(&w[0], &w[1])).collect();
    let last = diffs.last().copied().unwrap_or(0.0);
    if last.is_nan() || last >= tol {
        return Err(Error::NonConvergence { last_defect: last });
    }
    let cells = (0..ncells).map(|i| germ(i, i + 1)).collect();
    Ok((RoughPath::from_cells(basis, p, grid, mode, cells)?, SewReport { diffs }))
}
