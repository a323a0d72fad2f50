//! Paths controlled by a branched rough path, sampled on its grid.
//!
//! A [`ControlledPath`] carries, at every grid point, a trace value and a
//! coefficient vector over the driver's forest basis for each component.
//! Coefficients follow the pairing convention of the rough path: the
//! expansion of the trace reads `H_t ≈ Σ_g 𝒩(g)^{-1} H_{g;s} X^g_st`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forest::{multiset_alphabet, numbered_letters, Atom, Forest, Label, Tree};
use crate::hopf::{gl_product, q_to_f64, qr, AlgElem};
use crate::poly::{Poly, PolyMap, QPoly, QPolyMap};
use crate::rough_path::{Basis, RoughPath};

#[derive(Clone, Debug)]
pub struct ControlledPath {
    basis: Arc<Basis>,
    targets: Vec<Label>,
    trace: Vec<Vec<f64>>,
    /// Flat `[point][component][forest]`; slot 0 mirrors the trace.
    coeffs: Vec<f64>,
}

impl ControlledPath {
    pub fn new(basis: Arc<Basis>, targets: Vec<Label>, trace: Vec<Vec<f64>>, coeffs: Vec<f64>) -> Result<ControlledPath> {
        let e = targets.len();
        if trace.iter().any(|y| y.len() != e) {
            return Err(Error::InvalidInput("trace value has the wrong dimension".into()));
        }
        if coeffs.len() != trace.len() * e * basis.len() {
            return Err(Error::InvalidInput("coefficient table has the wrong size".into()));
        }
        let mut out = ControlledPath { basis, targets, trace, coeffs };
        out.sync_empty_slot();
        Ok(out)
    }

    fn zeros(basis: Arc<Basis>, targets: Vec<Label>, trace: Vec<Vec<f64>>) -> ControlledPath {
        let size = trace.len() * targets.len() * basis.len();
        let mut out = ControlledPath { basis, targets, trace, coeffs: vec![0.0; size] };
        out.sync_empty_slot();
        out
    }

    /// The coefficient on the empty forest is the trace itself.
    fn sync_empty_slot(&mut self) {
        for i in 0..self.len() {
            for k in 0..self.dim() {
                let y = self.trace[i][k];
                self.coeffs_mut(i, k)[0] = y;
            }
        }
    }

    /// The driver's own atom components: `H^a = x0^a + X^{•a}_{0·}`, with
    /// `H^a_{•a} = 1`.
    pub fn identity(x: &RoughPath, x0: &[f64]) -> Result<ControlledPath> {
        let targets = x.atoms();
        let mut out = ControlledPath::zeros(x.basis().clone(), targets.clone(), x.trace(x0)?);
        let slots: Vec<usize> = targets.iter().map(|l| x.basis().index_of(&Forest::vertex(l.clone())).unwrap()).collect();
        for i in 0..out.len() {
            for (k, &s) in slots.iter().enumerate() {
                out.coeffs_mut(i, k)[s] = 1.0;
            }
        }
        Ok(out)
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn targets(&self) -> &[Label] {
        &self.targets
    }

    pub fn dim(&self) -> usize {
        self.targets.len()
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    pub fn trace_at(&self, i: usize) -> &[f64] {
        &self.trace[i]
    }

    pub fn traces(&self) -> &[Vec<f64>] {
        &self.trace
    }

    pub fn coeffs(&self, i: usize, k: usize) -> &[f64] {
        let b = self.basis.len();
        let off = (i * self.dim() + k) * b;
        &self.coeffs[off..off + b]
    }

    fn coeffs_mut(&mut self, i: usize, k: usize) -> &mut [f64] {
        let b = self.basis.len();
        let off = (i * self.dim() + k) * b;
        &mut self.coeffs[off..off + b]
    }

    /// `H^k_{f}` at grid point `i`; zero outside the basis.
    pub fn coeff(&self, i: usize, k: usize, f: &Forest) -> f64 {
        self.basis.index_of(f).map_or(0.0, |s| self.coeffs(i, k)[s])
    }

    /// Whether component `k` has a non-zero coefficient on slot `s` anywhere.
    pub fn is_active(&self, k: usize, s: usize) -> bool {
        (0..self.len()).any(|i| self.coeffs(i, k)[s] != 0.0)
    }

    /// Stacks the components of several paths over the same driver.
    pub fn concat(parts: &[&ControlledPath]) -> Result<ControlledPath> {
        let first = parts.first().ok_or_else(|| Error::InvalidInput("nothing to stack".into()))?;
        if parts.iter().any(|p| !Arc::ptr_eq(&p.basis, &first.basis) || p.len() != first.len()) {
            return Err(Error::InvalidInput("stacked paths live on different drivers".into()));
        }
        let targets: Vec<Label> = parts.iter().flat_map(|p| p.targets.iter().cloned()).collect();
        let trace = (0..first.len()).map(|i| parts.iter().flat_map(|p| p.trace[i].iter().copied()).collect()).collect();
        let mut out = ControlledPath::zeros(first.basis.clone(), targets, trace);
        for i in 0..first.len() {
            let mut k0 = 0;
            for p in parts {
                for k in 0..p.dim() {
                    out.coeffs_mut(i, k0 + k).copy_from_slice(p.coeffs(i, k));
                }
                k0 += p.dim();
            }
        }
        Ok(out)
    }

    /// The components `ks`, in that order.
    pub fn select(&self, ks: &[usize]) -> Result<ControlledPath> {
        if ks.iter().any(|&k| k >= self.dim()) {
            return Err(Error::InvalidInput("component index out of range".into()));
        }
        let targets = ks.iter().map(|&k| self.targets[k].clone()).collect();
        let trace = self.trace.iter().map(|y| ks.iter().map(|&k| y[k]).collect()).collect();
        let mut out = ControlledPath::zeros(self.basis.clone(), targets, trace);
        for i in 0..self.len() {
            for (j, &k) in ks.iter().enumerate() {
                out.coeffs_mut(i, j).copy_from_slice(self.coeffs(i, k));
            }
        }
        Ok(out)
    }

    pub fn with_targets(mut self, targets: Vec<Label>) -> Result<ControlledPath> {
        if targets.len() != self.dim() {
            return Err(Error::InvalidInput("wrong number of target labels".into()));
        }
        self.targets = targets;
        Ok(self)
    }

    /// `max_k |H^k_{f;t} − Σ_g 𝒩(g)^{-1} X^g_st ⟨H^k_s, g ⋆ f⟩|` over `g` with
    /// `|g| + |f| ≤ n − 1`.
    pub fn expansion_defect(&self, x: &RoughPath, f: &Forest, i: usize, j: usize) -> Result<f64> {
        let n = self.basis.n();
        if f.degree() >= n {
            return Err(Error::DegreeOverflow { degree: f.degree(), max: n - 1 });
        }
        let fs = self.basis.index_of(f).ok_or_else(|| Error::MissingComponent(f.to_string()))?;
        let mut terms = Vec::new();
        for (gs, g) in self.basis.forests().iter().enumerate() {
            if g.degree() + f.degree() > n - 1 {
                continue;
            }
            let w = 1.0 / g.symmetry_factor() as f64;
            for (h, c) in gl_product(&AlgElem::basis(g.clone()), &AlgElem::basis(f.clone())).iter() {
                let hs = self.basis.index_of(h).ok_or_else(|| Error::MissingComponent(h.to_string()))?;
                terms.push((gs, hs, w * q_to_f64(c)));
            }
        }
        let v = x.value(i, j);
        let mut worst: f64 = 0.0;
        for k in 0..self.dim() {
            let hi = self.coeffs(i, k);
            let approx: f64 = terms.iter().map(|&(gs, hs, w)| w * v[gs] * hi[hs]).sum();
            worst = worst.max((self.coeffs(j, k)[fs] - approx).abs());
        }
        Ok(worst)
    }

    /// `max_k |H^k_t − H^k_s − Σ_{g≠∅} 𝒩(g)^{-1} H^k_{g;s} X^g_st|`.
    pub fn trace_defect(&self, x: &RoughPath, i: usize, j: usize) -> f64 {
        let v = x.value(i, j);
        let w: Vec<f64> = self.basis.forests().iter().map(|g| 1.0 / g.symmetry_factor() as f64).collect();
        (0..self.dim())
            .map(|k| {
                let hi = self.coeffs(i, k);
                let approx: f64 = (1..self.basis.len()).map(|s| w[s] * hi[s] * v[s]).sum();
                (self.trace[j][k] - self.trace[i][k] - approx).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Every ordered tuple `(f_1, …, f_m)` of non-empty forests with product `f`,
/// each listed once with weight `𝒩(f) / (m! Π 𝒩(f_i))`.
pub fn ordered_factorisations(f: &Forest) -> Vec<(f64, Vec<Forest>)> {
    let trees = f.trees();
    let nf = f.symmetry_factor() as f64;
    let mut out = Vec::new();
    for m in 1..=trees.len() {
        let mut seen = BTreeSet::new();
        let mut assign = vec![0usize; trees.len()];
        loop {
            let mut groups: Vec<Vec<Tree>> = vec![Vec::new(); m];
            for (t, &g) in trees.iter().zip(&assign) {
                groups[g].push(t.clone());
            }
            if groups.iter().all(|g| !g.is_empty()) {
                seen.insert(groups.into_iter().map(Forest::from_trees).collect::<Vec<_>>());
            }
            let mut pos = 0;
            while pos < assign.len() && assign[pos] == m - 1 {
                assign[pos] = 0;
                pos += 1;
            }
            if pos == assign.len() {
                break;
            }
            assign[pos] += 1;
        }
        let mfact: f64 = (1..=m).map(|k| k as f64).product();
        for tuple in seen {
            let denom: f64 = tuple.iter().map(|g| g.symmetry_factor() as f64).product();
            out.push((nf / (mfact * denom), tuple));
        }
    }
    out
}

/// `φ(H)` as a controlled path, for a polynomial `φ` on the trace space.
/// Coefficients are produced up to degree `n − 1`.
pub fn compose_smooth(phi: &PolyMap<f64>, h: &ControlledPath, targets: Vec<Label>) -> Result<ControlledPath> {
    if phi.nin != h.dim() {
        return Err(Error::InvalidInput(format!("map takes {} inputs, path has {} components", phi.nin, h.dim())));
    }
    if targets.len() != phi.nout() {
        return Err(Error::InvalidInput("wrong number of target labels".into()));
    }
    let basis = h.basis.clone();
    let n = basis.n();
    let table: Vec<(usize, Vec<(f64, Vec<usize>)>)> = basis
        .forests()
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.is_empty() && f.degree() < n)
        .map(|(s, f)| {
            let facs = ordered_factorisations(f)
                .into_iter()
                .map(|(w, t)| (w, t.iter().map(|g| basis.index_of(g).expect("factor in basis")).collect()))
                .collect();
            (s, facs)
        })
        .collect();
    let trace: Vec<Vec<f64>> = h.trace.iter().map(|y| phi.eval(y)).collect();
    let mut out = ControlledPath::zeros(basis, targets, trace);
    let mut partials: HashMap<Vec<usize>, PolyMap<f64>> = HashMap::new();
    let e = h.dim();
    for i in 0..h.len() {
        let y = &h.trace[i];
        let mut values: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
        for (s, facs) in &table {
            let mut acc = vec![0.0; phi.nout()];
            for (w, tuple) in facs {
                // Σ over component tuples with non-zero factors.
                let active: Vec<Vec<(usize, f64)>> = tuple
                    .iter()
                    .map(|&g| (0..e).filter_map(|k| Some((k, h.coeffs(i, k)[g])).filter(|&(_, c)| c != 0.0)).collect())
                    .collect();
                if active.iter().any(|a| a.is_empty()) {
                    continue;
                }
                let mut idx = vec![0usize; tuple.len()];
                'outer: loop {
                    let mut ks: Vec<usize> = idx.iter().zip(&active).map(|(&j, a)| a[j].0).collect();
                    let prod: f64 = idx.iter().zip(&active).map(|(&j, a)| a[j].1).product();
                    ks.sort_unstable();
                    let d = values.entry(ks.clone()).or_insert_with(|| {
                        partials.entry(ks.clone()).or_insert_with(|| phi.partial(&ks)).eval(y)
                    });
                    for (a, dv) in acc.iter_mut().zip(d.iter()) {
                        *a += w * prod * dv;
                    }
                    for p in 0..idx.len() {
                        idx[p] += 1;
                        if idx[p] < active[p].len() {
                            continue 'outer;
                        }
                        idx[p] = 0;
                    }
                    break;
                }
            }
            for (c, a) in acc.into_iter().enumerate() {
                out.coeffs_mut(i, c)[*s] = a;
            }
        }
    }
    Ok(out)
}

/// The integrand of `∫ H^k_a dX^a`: a controlled path with components
/// `k·L + a` for `L` driver letters.
#[derive(Clone, Debug)]
pub struct Integrand {
    letters: Vec<Label>,
    path: ControlledPath,
}

impl Integrand {
    pub fn new(letters: Vec<Label>, path: ControlledPath) -> Result<Integrand> {
        if letters.is_empty() || !path.dim().is_multiple_of(letters.len()) {
            return Err(Error::InvalidInput("integrand components do not split over the letters".into()));
        }
        Ok(Integrand { letters, path })
    }

    pub fn letters(&self) -> &[Label] {
        &self.letters
    }

    pub fn path(&self) -> &ControlledPath {
        &self.path
    }

    /// Dimension of the integral.
    pub fn dim(&self) -> usize {
        self.path.dim() / self.letters.len()
    }
}

/// A rough integral with the gap between its fine and half-resolution sums.
#[derive(Clone, Debug)]
pub struct Integral {
    pub path: ControlledPath,
    pub coarse_gap: f64,
}

impl Integral {
    pub fn check(self, tol: f64) -> Result<ControlledPath> {
        if self.coarse_gap.is_finite() && self.coarse_gap < tol {
            Ok(self.path)
        } else {
            Err(Error::NonConvergence { last_defect: self.coarse_gap })
        }
    }
}

/// `y0 + ∫ H dX` by compensated Riemann sums of
/// `Σ_{|f|+|a|≤n} 𝒩(f)^{-1} H^{k,a}_{f;u} X^{[f]_a}_uv` over grid cells. The
/// result is controlled with `I^k_{[f]_a} = H^{k,a}_f`.
pub fn rough_integral(g: &Integrand, x: &RoughPath, targets: Vec<Label>, y0: &[f64]) -> Result<Integral> {
    let h = &g.path;
    let basis = x.basis();
    if !Arc::ptr_eq(h.basis(), basis) || h.len() != x.grid().len() {
        return Err(Error::InvalidInput("integrand is not controlled by this driver".into()));
    }
    let e = g.dim();
    if targets.len() != e || y0.len() != e {
        return Err(Error::InvalidInput("integral dimension mismatch".into()));
    }
    let nl = g.letters.len();
    let n = basis.n();
    // (letter, integrand slot, value slot, output slot, weight)
    let mut terms = Vec::new();
    for (a, la) in g.letters.iter().enumerate() {
        for (fs, f) in basis.forests().iter().enumerate() {
            if f.degree() + la.weight() > n {
                continue;
            }
            let tree = Tree::graft(f, la.clone()).to_forest();
            let slot = x.resolve(&tree)?;
            if slot.is_none() && basis.index_of(&tree).is_none() {
                continue;
            }
            terms.push((a, fs, slot, basis.index_of(&tree), 1.0 / f.symmetry_factor() as f64));
        }
    }
    let germ = |i: usize, j: usize| -> Vec<f64> {
        let v = x.value(i, j);
        (0..e)
            .map(|k| {
                terms
                    .iter()
                    .filter_map(|&(a, fs, slot, _, w)| slot.map(|s| w * h.coeffs(i, k * nl + a)[fs] * v[s]))
                    .sum()
            })
            .collect()
    };
    let ncells = x.num_cells();
    let mut trace = Vec::with_capacity(ncells + 1);
    let mut cur = y0.to_vec();
    let mut comp = vec![0.0; e];
    trace.push(cur.clone());
    for i in 0..ncells {
        for (k, d) in germ(i, i + 1).into_iter().enumerate() {
            // Kahan summation keeps long sums at round-off level.
            let yk = d - comp[k];
            let t = cur[k] + yk;
            comp[k] = (t - cur[k]) - yk;
            cur[k] = t;
        }
        trace.push(cur.clone());
    }
    let coarse_gap = if ncells >= 2 && ncells.is_multiple_of(2) {
        let mut coarse = y0.to_vec();
        for i in (0..ncells).step_by(2) {
            for (c, d) in coarse.iter_mut().zip(germ(i, i + 2)) {
                *c += d;
            }
        }
        coarse.iter().zip(&cur).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::NAN
    };
    let mut out = ControlledPath::zeros(basis.clone(), targets, trace);
    for i in 0..out.len() {
        for k in 0..e {
            for &(a, fs, _, os, _) in &terms {
                if let Some(os) = os {
                    let c = h.coeffs(i, k * nl + a)[fs];
                    out.coeffs_mut(i, k)[os] = c;
                }
            }
        }
    }
    Ok(Integral { path: out, coarse_gap })
}

/// Polynomial vector fields `F_a : R^e → R^e`, one per driver letter.
#[derive(Clone, Debug)]
pub struct VectorFields {
    dim: usize,
    fields: BTreeMap<Label, QPolyMap>,
}

impl VectorFields {
    pub fn new(dim: usize, fields: BTreeMap<Label, QPolyMap>) -> Result<VectorFields> {
        for (l, f) in &fields {
            if f.nin != dim || f.nout() != dim {
                return Err(Error::InvalidInput(format!("vector field for {l} is not a map R^{dim} → R^{dim}")));
            }
        }
        Ok(VectorFields { dim, fields })
    }

    /// Parses one component list per letter, letters named by `labels`.
    pub fn parse(dim: usize, fields: &[(Label, Vec<&str>)]) -> Result<VectorFields> {
        let mut map = BTreeMap::new();
        for (l, comps) in fields {
            map.insert(l.clone(), PolyMap::parse(comps, dim)?);
        }
        VectorFields::new(dim, map)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn letters(&self) -> Vec<Label> {
        self.fields.keys().cloned().collect()
    }

    pub fn field(&self, l: &Label) -> Option<&QPolyMap> {
        self.fields.get(l)
    }
}

/// Memoised elementary differentials
/// `F_{[t_1⋯t_m]_a} = ∂_{k_1⋯k_m} F_a · F^{k_1}_{t_1} ⋯ F^{k_m}_{t_m}`.
pub struct RdeCoefficients<'a> {
    vf: &'a VectorFields,
    memo: HashMap<Tree, Option<QPolyMap>>,
}

impl<'a> RdeCoefficients<'a> {
    pub fn new(vf: &'a VectorFields) -> Self {
        RdeCoefficients { vf, memo: HashMap::new() }
    }

    /// `None` when the tree uses a letter without a vector field.
    pub fn get(&mut self, t: &Tree) -> Option<QPolyMap> {
        if let Some(v) = self.memo.get(t) {
            return v.clone();
        }
        let v = self.compute(t);
        self.memo.insert(t.clone(), v.clone());
        v
    }

    fn compute(&mut self, t: &Tree) -> Option<QPolyMap> {
        let fa = self.vf.field(t.label())?.clone();
        let kids: Vec<QPolyMap> = t.children().iter().map(|c| self.get(c)).collect::<Option<_>>()?;
        if kids.is_empty() {
            return Some(fa);
        }
        let e = self.vf.dim;
        let mut out = vec![QPoly::zero(e); e];
        let mut ks = vec![0usize; kids.len()];
        loop {
            let d = fa.partial(&ks);
            if d.comps.iter().any(|p| !p.is_zero()) {
                let mut prod = QPoly::one(e);
                for (c, &k) in kids.iter().zip(&ks) {
                    prod = prod.mul(&c.comps[k]);
                }
                if !prod.is_zero() {
                    for (o, p) in out.iter_mut().zip(&d.comps) {
                        *o = o.add(&p.mul(&prod));
                    }
                }
            }
            let mut pos = 0;
            while pos < ks.len() && ks[pos] == e - 1 {
                ks[pos] = 0;
                pos += 1;
            }
            if pos == ks.len() {
                break;
            }
            ks[pos] += 1;
        }
        Some(PolyMap::new(e, out))
    }
}

pub fn rde_coefficient(vf: &VectorFields, t: &Tree) -> Option<QPolyMap> {
    RdeCoefficients::new(vf).get(t)
}

/// The Davie scheme `Y_t = Y_s + Σ_{|t|≤n} 𝒩(t)^{-1} F_t(Y_s) X^t_st` for a
/// fixed driver basis. Trees using letters without a field are skipped.
pub struct DavieScheme {
    dim: usize,
    trees: Vec<(usize, f64, PolyMap<f64>)>,
}

impl DavieScheme {
    pub fn new(vf: &VectorFields, basis: &Basis) -> DavieScheme {
        let mut rc = RdeCoefficients::new(vf);
        let trees = basis
            .forests()
            .iter()
            .enumerate()
            .filter_map(|(s, f)| {
                let t = f.as_tree()?;
                let ft = rc.get(t)?;
                Some((s, 1.0 / f.symmetry_factor() as f64, ft.to_f64()))
            })
            .collect();
        DavieScheme { dim: vf.dim(), trees }
    }

    /// The increment `Σ 𝒩(t)^{-1} F_t(y) v^t` for a character value `v`.
    pub fn increment(&self, y: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (s, w, ft) in &self.trees {
            if v[*s] == 0.0 {
                continue;
            }
            for (o, c) in out.iter_mut().zip(ft.eval(y)) {
                *o += w * c * v[*s];
            }
        }
        out
    }

    pub fn solve(&self, x: &RoughPath, y0: &[f64]) -> Result<ControlledPath> {
        if y0.len() != self.dim {
            return Err(Error::InvalidInput("initial value has the wrong dimension".into()));
        }
        let mut trace = vec![y0.to_vec()];
        for i in 0..x.num_cells() {
            let y = trace[i].clone();
            let d = self.increment(&y, &x.value(i, i + 1));
            trace.push(y.iter().zip(d).map(|(a, b)| a + b).collect());
        }
        let mut out = ControlledPath::zeros(x.basis().clone(), numbered_letters(self.dim), trace);
        for i in 0..out.len() {
            let y = out.trace[i].clone();
            for (s, _, ft) in &self.trees {
                for (k, c) in ft.eval(&y).into_iter().enumerate() {
                    out.coeffs_mut(i, k)[*s] = c;
                }
            }
        }
        Ok(out)
    }

    /// `|Y_t − Y_s − Σ 𝒩(t)^{-1} F_t(Y_s) X^t_st|` on a computed solution.
    pub fn residual(&self, y: &ControlledPath, x: &RoughPath, i: usize, j: usize) -> f64 {
        let d = self.increment(y.trace_at(i), &x.value(i, j));
        (0..self.dim).map(|k| (y.trace_at(j)[k] - y.trace_at(i)[k] - d[k]).abs()).fold(0.0, f64::max)
    }
}

/// Solves `dY = F(Y) dX` with the Davie scheme. The solution is controlled
/// with `Y_{t} = F_t(Y)` on trees (up to degree `n`) and zero on proper forests.
pub fn davie_solve(vf: &VectorFields, x: &RoughPath, y0: &[f64]) -> Result<ControlledPath> {
    DavieScheme::new(vf, x.basis()).solve(x, y0)
}

/// Davie residuals of a fine-grid solution on coarser dyadic scales.
///
/// `x` lives on a dyadic grid with `2^D` cells. For each depth `k ≤ D` the
/// solution on the full grid is tested on the `2^k` cells of length
/// `2^{-k}` and the largest one-step residual is recorded. Returns the
/// `(cell length, residual)` pairs and the least-squares slope of their
/// log-log plot.
pub fn davie_residual_slope(vf: &VectorFields, x: &RoughPath, y0: &[f64], depths: &[u32]) -> Result<(Vec<(f64, f64)>, f64)> {
    let cells = x.num_cells();
    if !cells.is_power_of_two() || depths.len() < 2 {
        return Err(Error::InvalidInput("need a dyadic grid and at least two depths".into()));
    }
    let top = cells.trailing_zeros();
    let scheme = DavieScheme::new(vf, x.basis());
    let y = scheme.solve(x, y0)?;
    let span = x.grid()[cells] - x.grid()[0];
    let mut points = Vec::with_capacity(depths.len());
    for &k in depths {
        if k > top {
            return Err(Error::InvalidInput(format!("depth {k} is finer than the grid")));
        }
        let stride = 1usize << (top - k);
        let worst = (0..cells / stride).map(|c| scheme.residual(&y, x, c * stride, (c + 1) * stride)).fold(0.0, f64::max);
        points.push((span / (1u64 << k) as f64, worst));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(h, r)| (h.ln(), r.ln())).collect();
    let n = logs.len() as f64;
    let (mx, my) = (logs.iter().map(|l| l.0).sum::<f64>() / n, logs.iter().map(|l| l.1).sum::<f64>() / n);
    let cov: f64 = logs.iter().map(|&(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = logs.iter().map(|&(a, _)| (a - mx).powi(2)).sum();
    Ok((points, cov / var))
}

/// Nonempty letter sequences with total weight at most `n`.
fn letter_sequences(letters: &[Label], n: u32) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = Vec::new();
    fn rec(letters: &[Label], left: u32, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        for (i, l) in letters.iter().enumerate() {
            if l.weight() <= left {
                stack.push(i);
                out.push(stack.clone());
                rec(letters, left - l.weight(), stack, out);
                stack.pop();
            }
        }
    }
    rec(letters, n, &mut stack, &mut out);
    out
}

pub(crate) fn coords_of(atoms: &[Label], l: &Label) -> Result<Vec<usize>> {
    let members = l.atoms().ok_or_else(|| Error::UnsupportedLabel(l.to_string()))?;
    members
        .iter()
        .map(|a| atoms.iter().position(|b| *b == Label::Atom(*a)).ok_or_else(|| Error::UnsupportedLabel(l.to_string())))
        .collect()
}

pub(crate) fn base_atoms(letters: &[Label]) -> Vec<Atom> {
    let mut out: Vec<Atom> = letters.iter().filter_map(|l| l.atoms()).flatten().collect();
    out.sort();
    out.dedup();
    out
}

/// The integrand of `Σ_c ∫ 𝒩(c)^{-1} ∂_c g(X) dX^{(c)}` over joined letters
/// `c`, as a smooth function of the driver's trace.
pub fn kelly_function_integrand(g: &QPoly, x: &RoughPath, x0: &[f64]) -> Result<Integrand> {
    let atoms = x.atoms();
    if g.nvars() != atoms.len() {
        return Err(Error::InvalidInput("function arity differs from the number of atom letters".into()));
    }
    let letters = multiset_alphabet(&base_atoms(&atoms), x.n());
    let comps = letters
        .iter()
        .map(|c| Ok(g.partial(&coords_of(&atoms, c)?).scale(&qr(1, c.multiplicity_factorial() as i64))))
        .collect::<Result<Vec<QPoly>>>()?;
    let phi = PolyMap::new(atoms.len(), comps).to_f64();
    let path = compose_smooth(&phi, &ControlledPath::identity(x, x0)?, letters.clone())?;
    Integrand::new(letters, path)
}

/// `max_i |g(X_{t_i}) − g(X_0) − Σ_c ∫_0^{t_i} 𝒩(c)^{-1} ∂_c g(X) dX^{(c)}|`.
pub fn kelly_function_defect(g: &QPoly, x: &RoughPath, x0: &[f64]) -> Result<f64> {
    let integrand = kelly_function_integrand(g, x, x0)?;
    let integral = rough_integral(&integrand, x, vec![Label::atom('g')], &[0.0])?;
    let gf = g.to_f64();
    let trace = x.trace(x0)?;
    let g0 = gf.eval(&trace[0]);
    Ok(trace
        .iter()
        .enumerate()
        .map(|(i, y)| (gf.eval(y) - g0 - integral.path.trace_at(i)[0]).abs())
        .fold(0.0, f64::max))
}

/// `φ_C = Σ_m 1/m! Σ_{a_1⋯a_m ↦ C} ∂_{k_1⋯k_m} g F^{k_1}_{a_1} ⋯ F^{k_m}_{a_m}`
/// for every joined letter `C` of weight at most `n`.
pub fn kelly_rde_symbols(g: &QPoly, vf: &VectorFields, n: u32) -> Result<(Vec<Label>, QPolyMap)> {
    let e = vf.dim();
    if g.nvars() != e {
        return Err(Error::InvalidInput("function arity differs from the state dimension".into()));
    }
    let vl = vf.letters();
    let letters = multiset_alphabet(&base_atoms(&vl), n);
    let mut comps = vec![QPoly::zero(e); letters.len()];
    for seq in letter_sequences(&vl, n) {
        let labels: Vec<Label> = seq.iter().map(|&i| vl[i].clone()).collect();
        let Some(c) = Label::join(&labels) else { continue };
        let Some(pos) = letters.iter().position(|l| *l == c) else { continue };
        let m = seq.len();
        let inv_fact = qr(1, (1..=m as i64).product());
        let mut ks = vec![0usize; m];
        loop {
            let mut term = g.partial(&ks);
            for (l, &k) in labels.iter().zip(&ks) {
                if term.is_zero() {
                    break;
                }
                term = term.mul(&vf.field(l).unwrap().comps[k]);
            }
            comps[pos] = comps[pos].add(&term.scale(&inv_fact));
            let mut p = 0;
            while p < m && ks[p] == e - 1 {
                ks[p] = 0;
                p += 1;
            }
            if p == m {
                break;
            }
            ks[p] += 1;
        }
    }
    Ok((letters, PolyMap::new(e, comps)))
}

/// `max_i |g(Y_{t_i}) − g(Y_0) − Σ_C ∫ φ_C(Y) dX^{(C)}|` for the Davie
/// solution `Y` of `dY = F(Y) dX`.
pub fn kelly_rde_defect(g: &QPoly, vf: &VectorFields, x: &RoughPath, y0: &[f64]) -> Result<f64> {
    let y = davie_solve(vf, x, y0)?;
    let (letters, phi) = kelly_rde_symbols(g, vf, x.n())?;
    let path = compose_smooth(&phi.to_f64(), &y, letters.clone())?;
    let integral = rough_integral(&Integrand::new(letters, path)?, x, vec![Label::atom('g')], &[0.0])?;
    let gf = g.to_f64();
    let g0 = gf.eval(y.trace_at(0));
    Ok((0..y.len()).map(|i| (gf.eval(y.trace_at(i)) - g0 - integral.path.trace_at(i)[0]).abs()).fold(0.0, f64::max))
}

/// For target indices `ks = (k_1, …, k_m)`, the integrand whose integral is
/// the bracket component `(k_1⋯k_m)` of `∫ H dX̃` over a quasi-geometric
/// driver: `Σ_{c_1⋯c_m ↦ C} H^{k_1}_{c_1} ⋯ H^{k_m}_{c_m}` on each joined letter `C`.
pub fn quasi_integral_bracket(h: &Integrand, ks: &[usize]) -> Result<Integrand> {
    let nl = h.letters.len();
    let e = h.dim();
    if ks.iter().any(|&k| k >= e) || ks.is_empty() {
        return Err(Error::InvalidInput("bracket indices out of range".into()));
    }
    let n = h.path.basis().n();
    let letters: Vec<Label> =
        multiset_alphabet(&base_atoms(&h.letters), n).into_iter().filter(|l| l.weight() as usize >= ks.len()).collect();
    let nin = h.path.dim();
    let mut comps = vec![Poly::<f64>::zero(nin); letters.len()];
    for seq in letter_sequences(&h.letters, n) {
        if seq.len() != ks.len() {
            continue;
        }
        let labels: Vec<Label> = seq.iter().map(|&i| h.letters[i].clone()).collect();
        let Some(c) = Label::join(&labels) else { continue };
        let Some(pos) = letters.iter().position(|l| *l == c) else { continue };
        let mut term = Poly::one(nin);
        for (&k, &a) in ks.iter().zip(&seq) {
            term = term.mul(&Poly::var(nin, k * nl + a));
        }
        comps[pos] = comps[pos].add(&term);
    }
    let path = compose_smooth(&PolyMap::new(nin, comps), &h.path, letters.clone())?;
    Integrand::new(letters, path)
}

/// Integrand of the bracket component `(k_1⋯k_m)` of an RDE solution driven
/// by a quasi-geometric path: `Σ_{c_1⋯c_m ↦ C} F^{k_1}_{c_1} ⋯ F^{k_m}_{c_m}(Y)`.
pub fn quasi_rde_bracket_symbols(vf: &VectorFields, ks: &[usize], n: u32) -> Result<(Vec<Label>, QPolyMap)> {
    let e = vf.dim();
    if ks.iter().any(|&k| k >= e) || ks.is_empty() {
        return Err(Error::InvalidInput("bracket indices out of range".into()));
    }
    let vl = vf.letters();
    let letters: Vec<Label> =
        multiset_alphabet(&base_atoms(&vl), n).into_iter().filter(|l| l.weight() as usize >= ks.len()).collect();
    let mut comps = vec![QPoly::zero(e); letters.len()];
    for seq in letter_sequences(&vl, n) {
        if seq.len() != ks.len() {
            continue;
        }
        let labels: Vec<Label> = seq.iter().map(|&i| vl[i].clone()).collect();
        let Some(c) = Label::join(&labels) else { continue };
        let Some(pos) = letters.iter().position(|l| *l == c) else { continue };
        let mut term = QPoly::one(e);
        for (&k, l) in ks.iter().zip(&labels) {
            term = term.mul(&vf.field(l).unwrap().comps[k]);
        }
        comps[pos] = comps[pos].add(&term);
    }
    Ok((letters, PolyMap::new(e, comps)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Poly;
    use crate::rough_path::{canonical_level2_bracket, dyadic_grid, quasi_geometric_lift, smooth_lift, Extension};

    fn f(s: &str) -> Forest {
        Forest::parse(s).unwrap()
    }

    fn gamma() -> PolyMap<f64> {
        PolyMap { nin: 1, comps: vec![Poly::var(1, 0), Poly::var(1, 0).pow(2)] }
    }

    #[test]
    fn factorisation_weights() {
        let got = ordered_factorisations(&f("1*1"));
        assert_eq!(got.len(), 2);
        assert!(got.iter().any(|(w, t)| *w == 1.0 && t.len() == 2));
        assert!(got.iter().any(|(w, t)| *w == 1.0 && t.len() == 1));
        let got = ordered_factorisations(&f("1*2*2"));
        // (1*2*2), (1, 2*2), (2*2, 1), (1*2, 2), (2, 1*2), and 3 orderings of (1, 2, 2).
        assert_eq!(got.len(), 8);
        let total: f64 = got.iter().filter(|(_, t)| t.len() == 3).map(|(w, _)| w).sum();
        // 𝒩 = 2, 3! / 2 distinct orderings, each 2 / 6.
        assert!((total - 1.0).abs() < 1e-15);
    }

    /// Taylor oracle: `f(X)` has coefficients `∂_{a_1⋯a_m} f` on vertex products.
    #[test]
    fn smooth_composition_of_the_identity() {
        let x = smooth_lift(&gamma(), 3.5, dyadic_grid(1.0, 4)).unwrap();
        let id = ControlledPath::identity(&x, &[0.5, -1.0]).unwrap();
        let phi = PolyMap::parse(&["x1^2*x2 + x2^3"], 2).unwrap();
        let fx = compose_smooth(&phi.to_f64(), &id, vec![Label::atom('f')]).unwrap();
        for i in [0, 7, 16] {
            let y = id.trace_at(i).to_vec();
            for (forest, idx) in [("1", vec![0]), ("2", vec![1]), ("1*2", vec![0, 1]), ("2*2", vec![1, 1]), ("1*1", vec![0, 0])] {
                let want = phi.comps[0].partial(&idx).eval(&y);
                assert!((fx.coeff(i, 0, &f(forest)) - want).abs() < 1e-12, "{forest} at {i}");
            }
            assert_eq!(fx.coeff(i, 0, &f("2(1)")), 0.0);
        }
        let d1 = fx.expansion_defect(&x, &f("0"), 0, 16).unwrap();
        let d2 = fx.expansion_defect(&x, &f("0"), 0, 8).unwrap();
        assert!(d2 < d1 / 4.0, "{d1} {d2}");
        let t1 = fx.trace_defect(&x, 0, 2);
        let t2 = fx.trace_defect(&x, 0, 1);
        assert!(t2 < t1 / 6.0, "{t1} {t2}");
    }

    #[test]
    fn composition_is_functorial() {
        let x = smooth_lift(&gamma(), 3.5, dyadic_grid(1.0, 3)).unwrap();
        let id = ControlledPath::identity(&x, &[0.2, 0.3]).unwrap();
        let inner = PolyMap::parse(&["x1*x2", "x1 + x2^2"], 2).unwrap();
        let outer = PolyMap::parse(&["x1^2 - x2", "x1*x2"], 2).unwrap();
        let lbl = numbered_letters(2);
        let two_step = compose_smooth(&outer.to_f64(), &compose_smooth(&inner.to_f64(), &id, lbl.clone()).unwrap(), lbl.clone()).unwrap();
        let direct = compose_smooth(&outer.compose(&inner).to_f64(), &id, lbl).unwrap();
        for i in 0..id.len() {
            for k in 0..2 {
                for (a, b) in two_step.coeffs(i, k).iter().zip(direct.coeffs(i, k)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn integral_against_a_smooth_lift() {
        let x = smooth_lift(&gamma(), 2.5, dyadic_grid(1.0, 10)).unwrap();
        let id = ControlledPath::identity(&x, &[0.0, 0.0]).unwrap();
        // H^{0,1} = X^1 against letter 2 only.
        let phi = PolyMap::new(2, vec![Poly::zero(2), Poly::var(2, 0)]);
        let path = compose_smooth(&phi, &id, numbered_letters(2)).unwrap();
        let g = Integrand::new(numbered_letters(2), path).unwrap();
        let int = rough_integral(&g, &x, vec![Label::atom('I')], &[0.0]).unwrap();
        let last = int.path.trace_at(x.num_cells())[0];
        assert!((last - 2.0 / 3.0).abs() < 1e-9, "{last}");
        assert!(int.coarse_gap < 1e-5);
        assert_eq!(int.path.coeff(5, 0, &f("2")), id.trace_at(5)[0]);
        assert_eq!(int.path.coeff(5, 0, &f("2(1)")), 1.0);
        assert!(int.check(1e-3).is_ok());
    }

    #[test]
    fn pure_bracket_kelly_identity() {
        // X^1 = 0, X^{1(1)} = −(t−s)/2, X^{(11)} = t − s.
        let grid = dyadic_grid(1.0, 6);
        let base = Basis::new(numbered_letters(1), 2);
        let x = RoughPath::from_block_fn(base, 2.5, grid, Extension::Strict, |s, t| {
            let mut v = vec![0.0; 4];
            v[0] = 1.0;
            v[Basis::new(numbered_letters(1), 2).index_of(&f("1(1)")).unwrap()] = -(t - s) / 2.0;
            v
        });
        let x = canonical_level2_bracket(&x).unwrap();
        let g = QPoly::parse("x1^2", 1).unwrap();
        let d = kelly_function_defect(&g, &x, &[0.7]).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn kelly_on_a_quasi_geometric_driver() {
        let t = Poly::var(1, 0);
        let mut ch = BTreeMap::new();
        ch.insert(Label::atom('1'), t.clone());
        ch.insert(Label::atom('2'), t.pow(2).scale(&-1.0));
        ch.insert(Label::multiset(vec![Atom::new('1'), Atom::new('2')]), t.scale(&0.3));
        ch.insert(Label::multiset(vec![Atom::new('1'), Atom::new('1')]), t.pow(2).scale(&0.5));
        // Cubic functions are reproduced exactly at n = 3.
        let cubic = QPoly::parse("x1^2*x2 + x2^3 - x1", 2).unwrap();
        let x = quasi_geometric_lift(2, &ch, 3.5, dyadic_grid(1.0, 5)).unwrap();
        assert!(kelly_function_defect(&cubic, &x, &[0.3, -0.2]).unwrap() < 1e-12);
        let quartic = QPoly::parse("x1^4 + x1*x2^3", 2).unwrap();
        let mut prev = f64::INFINITY;
        for depth in [6, 8] {
            let x = quasi_geometric_lift(2, &ch, 3.5, dyadic_grid(1.0, depth)).unwrap();
            let d = kelly_function_defect(&quartic, &x, &[0.3, -0.2]).unwrap();
            assert!(d < prev / 30.0, "{d} after {prev}");
            prev = d;
        }
        assert!(prev < 1e-6, "{prev}");
    }

    #[test]
    fn rde_coefficients_golden() {
        let vf = VectorFields::parse(1, &[(Label::atom('1'), vec!["x1^2"])]).unwrap();
        let mut rc = RdeCoefficients::new(&vf);
        let cases = [("1", "x1^2"), ("1(1)", "2*x1^3"), ("1(1,1)", "2*x1^4"), ("1(1(1))", "4*x1^4")];
        for (t, want) in cases {
            let tree = f(t).as_tree().unwrap().clone();
            assert_eq!(rc.get(&tree).unwrap().comps[0], QPoly::parse(want, 1).unwrap(), "{t}");
        }
        assert!(rc.get(f("2").as_tree().unwrap()).is_none());
    }

    /// `dY = Y dX` with `X_t = t` solves to `e^t`.
    #[test]
    fn davie_solves_the_exponential() {
        let line = PolyMap { nin: 1, comps: vec![Poly::var(1, 0)] };
        let vf = VectorFields::parse(1, &[(Label::atom('1'), vec!["x1"])]).unwrap();
        let mut errs = Vec::new();
        for depth in [4, 6] {
            let x = smooth_lift(&line, 3.5, dyadic_grid(1.0, depth)).unwrap();
            let y = davie_solve(&vf, &x, &[1.0]).unwrap();
            errs.push((y.trace_at(x.num_cells())[0] - 1f64.exp()).abs());
            assert!((y.coeff(3, 0, &f("1(1)")) - y.trace_at(3)[0]).abs() < 1e-15);
        }
        // Third-order scheme: refinement by 4 gains about 64.
        assert!(errs[1] < errs[0] / 40.0, "{errs:?}");
        assert!(errs[1] < 1e-6, "{errs:?}");
    }

    #[test]
    fn kelly_for_rde_with_a_smooth_driver() {
        let vf = VectorFields::parse(
            2,
            &[(Label::atom('1'), vec!["x2", "-x1"]), (Label::atom('2'), vec!["x1*x2", "1"])],
        )
        .unwrap();
        let g = QPoly::parse("x1^2 + x1*x2", 2).unwrap();
        let x = smooth_lift(&gamma(), 3.5, dyadic_grid(1.0, 8)).unwrap();
        let d = kelly_rde_defect(&g, &vf, &x, &[1.0, 0.5]).unwrap();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn bracket_integrands_reduce_to_driver_brackets() {
        let t = Poly::var(1, 0);
        let mut ch = BTreeMap::new();
        ch.insert(Label::atom('1'), t.clone());
        ch.insert(Label::multiset(vec![Atom::new('1'), Atom::new('1')]), t.scale(&0.4));
        let x = quasi_geometric_lift(1, &ch, 2.5, dyadic_grid(1.0, 6)).unwrap();
        // H ≡ 1 against letter 1: ∫ H dX = X^1, and its (11) bracket is X^{(11)}.
        let letters = x.letters().to_vec();
        let id = ControlledPath::identity(&x, &[0.0]).unwrap();
        let ones: Vec<Poly<f64>> = letters.iter().map(|l| if l.is_atom() { Poly::one(1) } else { Poly::zero(1) }).collect();
        let h = compose_smooth(&PolyMap::new(1, ones), &id, letters.clone()).unwrap();
        let h = Integrand::new(letters, h).unwrap();
        let br = quasi_integral_bracket(&h, &[0, 0]).unwrap();
        let int = rough_integral(&br, &x, vec![Label::atom('b')], &[0.0]).unwrap();
        assert!((int.path.trace_at(64)[0] - 0.4).abs() < 1e-12);
        let vf = VectorFields::parse(1, &[(Label::atom('1'), vec!["1"])]).unwrap();
        let (ls, phi) = quasi_rde_bracket_symbols(&vf, &[0, 0], 2).unwrap();
        assert_eq!(ls, vec![Label::multiset(vec![Atom::new('1'), Atom::new('1')])]);
        assert_eq!(phi.comps[0], QPoly::one(1));
    }
}
