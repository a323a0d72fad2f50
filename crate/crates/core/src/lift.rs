//! Branched lifts of controlled paths and pushforwards of rough paths.
//!
//! For a target tree `τ` with at least two vertices the almost lift is
//!
//! `Σ Π_ν 𝒩(f^ν)^{-1} H^{ℓ(ν)}_{f^ν;s} ⟨⊛{τ; (f^ν_(2)), f^ν_(1)}, X̂_st⟩`
//!
//! over non-empty driver forests `f^ν` and their cuts, where `⊛` relabels each
//! vertex `ν` with the bracket label of the trunk and grafts the pruned part
//! onto it. Single vertices take trace increments. A [`LiftPlan`] stores the
//! terms once per driver and target so that germs are cheap to evaluate.

use std::collections::HashMap;
use std::sync::Arc;

use crate::controlled::{compose_smooth, rough_integral, ControlledPath, Integrand};
use crate::error::{Error, Result};
use crate::forest::{multiset_alphabet, numbered_letters, Atom, Forest, Label, Tree};
use crate::hopf::{ck_coproduct_forest, qr};
use crate::poly::{Poly, PolyMap, QPoly, QPolyMap};
use crate::rough_path::{sew, Basis, Extension, RoughPath, SewReport};

/// `⊛{τ; (ℓ_ν), (g_ν)}`: relabels vertex `ν` of `τ` (post-order) with
/// `labels[ν]` and grafts the trees of `extra[ν]` onto it.
pub fn star_graft(tau: &Forest, labels: &[Label], extra: &[Forest]) -> Result<Forest> {
    let nv = tau.num_vertices();
    if labels.len() != nv || extra.len() != nv {
        return Err(Error::InvalidInput(format!("{tau} has {nv} vertices")));
    }
    let extra: Vec<Vec<Tree>> = extra.iter().map(|g| g.trees().to_vec()).collect();
    Ok(tau.rebuild(Some(labels), &extra))
}

#[derive(Clone, Debug)]
struct Term {
    coef: f64,
    /// `(component, driver slot)` per vertex.
    factors: Vec<(usize, usize)>,
    /// Slot of the `⊛` forest in the driver's values.
    value: usize,
}

/// Precomputed lift formula for one controlled path and driver.
#[derive(Clone, Debug)]
pub struct LiftPlan {
    target: Arc<Basis>,
    singles: Vec<(usize, usize)>,
    trees: Vec<(usize, Vec<Term>)>,
}

impl LiftPlan {
    pub fn new(h: &ControlledPath, x: &RoughPath) -> Result<LiftPlan> {
        if !Arc::ptr_eq(h.basis(), x.basis()) || h.len() != x.grid().len() {
            return Err(Error::InvalidInput("controlled path does not live on this driver".into()));
        }
        let driver = x.basis();
        let n = driver.n();
        let targets = h.targets().to_vec();
        let mut seen = targets.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != targets.len() {
            return Err(Error::InvalidInput("target labels must be distinct".into()));
        }
        // Proper forests carrying bracket labels have no place in the lift.
        for (s, f) in driver.forests().iter().enumerate() {
            if f.num_trees() > 1 && f.vertex_labels().iter().any(|l| !l.is_atom()) {
                for k in 0..h.dim() {
                    if h.is_active(k, s) {
                        return Err(Error::UnsupportedLabel(format!("{} has a coefficient on {f}", targets[k])));
                    }
                }
            }
        }
        let active: Vec<Vec<usize>> = (0..h.dim())
            .map(|k| {
                (1..driver.len()).filter(|&s| driver.forests()[s].degree() < n && h.is_active(k, s)).collect()
            })
            .collect();
        // Labelled cuts of each driver forest: (count, pruned trees, trunk label).
        let mut cuts: HashMap<usize, Vec<(f64, Forest, Label)>> = HashMap::new();
        for list in &active {
            for &s in list {
                cuts.entry(s).or_insert_with(|| {
                    ck_coproduct_forest(&driver.forests()[s])
                        .into_iter()
                        .filter_map(|((pruned, trunk), c)| Label::bracket_of(&trunk).map(|l| (c as f64, pruned, l)))
                        .collect()
                });
            }
        }
        let target = Basis::new(targets.clone(), n);
        let comp_of = |l: &Label| targets.iter().position(|m| m == l).expect("target letter");
        let mut singles = Vec::new();
        let mut trees = Vec::new();
        for (slot, tau) in target.forests().iter().enumerate() {
            let Some(t) = tau.as_tree() else { continue };
            if t.is_single_vertex() {
                singles.push((slot, comp_of(t.label())));
                continue;
            }
            let comps: Vec<usize> = tau.vertex_labels().iter().map(comp_of).collect();
            let mut terms = Vec::new();
            let mut choice = Vec::with_capacity(comps.len());
            enumerate_choices(&comps, &active, driver, n, &mut choice, &mut |picked: &[usize]| {
                let weight: f64 = picked.iter().map(|&s| 1.0 / driver.forests()[s].symmetry_factor() as f64).product();
                let factors: Vec<(usize, usize)> = comps.iter().copied().zip(picked.iter().copied()).collect();
                let lists: Vec<&Vec<(f64, Forest, Label)>> = picked.iter().map(|s| &cuts[s]).collect();
                let mut idx = vec![0usize; lists.len()];
                if lists.iter().any(|l| l.is_empty()) {
                    return Ok(());
                }
                'outer: loop {
                    let labels: Vec<Label> = idx.iter().zip(&lists).map(|(&i, l)| l[i].2.clone()).collect();
                    let extra: Vec<Forest> = idx.iter().zip(&lists).map(|(&i, l)| l[i].1.clone()).collect();
                    let count: f64 = idx.iter().zip(&lists).map(|(&i, l)| l[i].0).product();
                    let star = star_graft(tau, &labels, &extra)?;
                    if let Some(value) = x.resolve(&star)? {
                        terms.push(Term { coef: weight * count, factors: factors.clone(), value });
                    }
                    for p in 0..idx.len() {
                        idx[p] += 1;
                        if idx[p] < lists[p].len() {
                            continue 'outer;
                        }
                        idx[p] = 0;
                    }
                    break;
                }
                Ok(())
            })?;
            trees.push((slot, terms));
        }
        Ok(LiftPlan { target, singles, trees })
    }

    pub fn target(&self) -> &Arc<Basis> {
        &self.target
    }

    pub fn num_terms(&self) -> usize {
        self.trees.iter().map(|(_, t)| t.len()).sum()
    }

    /// The almost lift on `[t_i, t_j]`, as a character.
    pub fn germ(&self, h: &ControlledPath, x: &RoughPath, i: usize, j: usize) -> Vec<f64> {
        let v = x.value(i, j);
        let mut out = vec![0.0; self.target.len()];
        for &(slot, k) in &self.singles {
            out[slot] = h.trace_at(j)[k] - h.trace_at(i)[k];
        }
        for (slot, terms) in &self.trees {
            out[*slot] = terms
                .iter()
                .map(|t| t.coef * v[t.value] * t.factors.iter().map(|&(k, s)| h.coeffs(i, k)[s]).product::<f64>())
                .sum();
        }
        self.target.multiplicative_closure(&mut out);
        out
    }
}

fn enumerate_choices(
    comps: &[usize],
    active: &[Vec<usize>],
    driver: &Basis,
    budget: u32,
    picked: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    let pos = picked.len();
    if pos == comps.len() {
        return visit(picked);
    }
    // Every remaining vertex needs at least degree one.
    let reserve = (comps.len() - pos - 1) as u32;
    for &s in &active[comps[pos]] {
        let d = driver.forests()[s].degree();
        if d + reserve <= budget {
            picked.push(s);
            enumerate_choices(comps, active, driver, budget - d, picked, visit)?;
            picked.pop();
        }
    }
    Ok(())
}

/// The almost lift of `h` on `[t_i, t_j]`.
pub fn almost_lift(h: &ControlledPath, x: &RoughPath, i: usize, j: usize) -> Result<Vec<f64>> {
    Ok(LiftPlan::new(h, x)?.germ(h, x, i, j))
}

/// Sews the almost lift of `h` into a rough path over its target letters.
pub fn lift(h: &ControlledPath, x: &RoughPath, mode: Extension, tol: f64) -> Result<(RoughPath, SewReport)> {
    let plan = LiftPlan::new(h, x)?;
    let germ = |i: usize, j: usize| plan.germ(h, x, i, j);
    sew(&germ, plan.target.clone(), x.p(), x.grid().to_vec(), mode, tol)
}

/// `f_* X`: the lift of `f(X)` for a polynomial map on the atom coordinates.
pub fn pushforward(f: &QPolyMap, x: &RoughPath, x0: &[f64], tol: f64) -> Result<RoughPath> {
    let id = ControlledPath::identity(x, x0)?;
    if f.nin != id.dim() {
        return Err(Error::InvalidInput(format!("map takes {} inputs, driver has {} atoms", f.nin, id.dim())));
    }
    let fx = compose_smooth(&f.to_f64(), &id, numbered_letters(f.nout()))?;
    let mode = if x.mode() == Extension::Geometric { Extension::Geometric } else { Extension::Strict };
    Ok(lift(&fx, x, mode, tol)?.0)
}

/// For a target multiset `(k_1⋯k_m)` of `f`'s output coordinates, the
/// integrand of its bracket under pushforward, on every joined letter `c` of
/// the input atoms:
/// `Σ_{γ^1⋯γ^m ↦ c} Π_l |γ^l|!^{-1} ∂_{γ^l} f^{k_l}`,
/// summed over ordered non-empty coordinate tuples `γ^l`.
pub fn bracket_pushforward_symbols(f: &QPolyMap, ks: &[usize], n: u32) -> Result<(Vec<Label>, QPolyMap)> {
    let d = f.nin;
    let m = ks.len();
    if m == 0 || ks.iter().any(|&k| k >= f.nout()) {
        return Err(Error::InvalidInput("bracket indices out of range".into()));
    }
    let atoms: Vec<Atom> = numbered_letters(d).iter().filter_map(|l| l.atoms()).flatten().collect();
    let letters: Vec<Label> = multiset_alphabet(&atoms, n).into_iter().filter(|l| l.weight() as usize >= m).collect();
    let mut comps = vec![QPoly::zero(d); letters.len()];
    for (pos, c) in letters.iter().enumerate() {
        let members: Vec<usize> =
            c.atoms().unwrap().iter().map(|a| atoms.iter().position(|b| b == a).unwrap()).collect();
        let mut seqs = Vec::new();
        permutations_of_multiset(&members, &mut Vec::new(), &mut vec![false; members.len()], &mut seqs);
        for seq in seqs {
            for cutset in compositions(seq.len(), m) {
                let mut term = QPoly::one(d);
                let mut start = 0;
                for (&len, &k) in cutset.iter().zip(ks) {
                    let gamma = &seq[start..start + len];
                    let fact: i64 = (1..=len as i64).product();
                    term = term.mul(&f.comps[k].partial(gamma).scale(&qr(1, fact)));
                    start += len;
                }
                comps[pos] = comps[pos].add(&term);
            }
        }
    }
    Ok((letters, PolyMap::new(d, comps)))
}

/// Distinct orderings of a multiset of indices.
fn permutations_of_multiset(items: &[usize], cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
    if cur.len() == items.len() {
        out.push(cur.clone());
        return;
    }
    let mut tried = Vec::new();
    for i in 0..items.len() {
        if used[i] || tried.contains(&items[i]) {
            continue;
        }
        tried.push(items[i]);
        used[i] = true;
        cur.push(items[i]);
        permutations_of_multiset(items, cur, used, out);
        cur.pop();
        used[i] = false;
    }
}

/// Ordered ways of writing `total` as `parts` positive integers.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for first in 1..=total.saturating_sub(parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// `f_* X̃` for a quasi-geometric `X̃`: the joint lift of `f(X)` and of every
/// bracket component `(k_1⋯k_m)`, each bracket being a rough integral
/// against `X̃`. The result lives over the multiset alphabet of `f`'s outputs.
pub fn pushforward_bracket(f: &QPolyMap, x: &RoughPath, x0: &[f64], tol: f64) -> Result<RoughPath> {
    if x.mode() != Extension::QuasiGeometric {
        return Err(Error::InvalidInput("bracket pushforward needs a quasi-geometric driver".into()));
    }
    let id = ControlledPath::identity(x, x0)?;
    if f.nin != id.dim() {
        return Err(Error::InvalidInput(format!("map takes {} inputs, driver has {} atoms", f.nin, id.dim())));
    }
    let n = x.n();
    let out_atoms: Vec<Atom> = numbered_letters(f.nout()).iter().filter_map(|l| l.atoms()).flatten().collect();
    let targets = multiset_alphabet(&out_atoms, n);
    let mut parts = vec![compose_smooth(&f.to_f64(), &id, numbered_letters(f.nout()))?];
    for label in targets.iter().filter(|l| !l.is_atom()) {
        let ks: Vec<usize> = label.atoms().unwrap().iter().map(|a| out_atoms.iter().position(|b| b == a).unwrap()).collect();
        let (letters, phi) = bracket_pushforward_symbols(f, &ks, n)?;
        let path = compose_smooth(&phi.to_f64(), &id, letters.clone())?;
        let integral = rough_integral(&Integrand::new(letters, path)?, x, vec![label.clone()], &[0.0])?;
        parts.push(integral.path);
    }
    let refs: Vec<&ControlledPath> = parts.iter().collect();
    let h = ControlledPath::concat(&refs)?;
    Ok(lift(&h, x, Extension::QuasiGeometric, tol)?.0)
}

/// The polynomial `(f_* X)` of a polynomial path `γ` driven smoothly: its
/// composition `f ∘ γ`, as a map of time.
pub fn compose_path(f: &QPolyMap, gamma: &PolyMap<f64>) -> PolyMap<f64> {
    let ff = f.to_f64();
    PolyMap { nin: gamma.nin, comps: ff.comps.iter().map(|p: &Poly<f64>| p.compose(&gamma.comps)).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bracket::{consistency_instances, max_consistency_defect};
    use crate::controlled::{davie_solve, VectorFields};
    use crate::rough_path::{dyadic_grid, gauss_legendre_8, quasi_geometric_lift, smooth_lift};
    use std::collections::BTreeMap;

    fn f(s: &str) -> Forest {
        Forest::parse(s).unwrap()
    }

    fn gamma() -> PolyMap<f64> {
        PolyMap::parse(&["x1", "x1^2"], 1).unwrap().to_f64()
    }

    fn max_diff(a: &RoughPath, b: &RoughPath) -> f64 {
        let mut worst: f64 = 0.0;
        for (s, forest) in a.basis().forests().iter().enumerate() {
            let bs = b.basis().index_of(forest).expect("same forests");
            for &(i, j) in &[(0, a.num_cells()), (0, a.num_cells() / 2), (a.num_cells() / 4, a.num_cells())] {
                worst = worst.max((a.value(i, j)[s] - b.value(i, j)[bs]).abs());
            }
        }
        worst
    }

    #[test]
    fn star_graft_example() {
        let tau = f("1(2)");
        let got = star_graft(&tau, &[Label::atom('a'), Label::atom('b')], &[f("c"), f("0")]).unwrap();
        // Post-order: vertex 0 is the leaf `2`, vertex 1 the root.
        assert_eq!(got, f("b(a(c))"));
        assert!(star_graft(&tau, &[Label::atom('a')], &[f("0")]).is_err());
    }

    #[test]
    fn lifting_the_identity_reproduces_the_driver() {
        let x = smooth_lift(&gamma(), 3.5, dyadic_grid(1.0, 3)).unwrap();
        let id = ControlledPath::identity(&x, &[0.0, 0.0]).unwrap();
        let (y, _) = lift(&id, &x, Extension::Geometric, 1e-6).unwrap();
        assert!(max_diff(&y, &x) < 1e-14);
    }

    #[test]
    fn pushforward_of_a_smooth_path() {
        let fmap = PolyMap::parse(&["x1*x2 + x2", "x1^2 - x2^2"], 2).unwrap();
        let x = smooth_lift(&gamma(), 3.5, dyadic_grid(1.0, 10)).unwrap();
        let y = pushforward(&fmap, &x, &[0.0, 0.0], 1e-4).unwrap();
        let oracle = smooth_lift(&compose_path(&fmap, &gamma()), 3.5, dyadic_grid(1.0, 10)).unwrap();
        let d = max_diff(&y, &oracle);
        assert!(d < 1e-7, "{d}");
    }

    #[test]
    fn pushforward_is_associative() {
        let g = PolyMap::parse(&["x1 + x2^2", "x1*x2"], 2).unwrap();
        let h = PolyMap::parse(&["x1^2", "x2 - x1"], 2).unwrap();
        let x = smooth_lift(&gamma(), 3.5, dyadic_grid(1.0, 10)).unwrap();
        let x0 = [0.1, 0.2];
        let gx0 = g.to_f64().eval(&x0);
        let two_step = pushforward(&h, &pushforward(&g, &x, &x0, 1e-4).unwrap(), &gx0, 1e-4).unwrap();
        let direct = pushforward(&h.compose(&g), &x, &x0, 1e-4).unwrap();
        let d = max_diff(&two_step, &direct);
        assert!(d < 1e-7, "{d}");
    }

    #[test]
    fn proper_forests_with_bracket_labels_are_rejected() {
        let mut ch = BTreeMap::new();
        ch.insert(Label::atom('1'), Poly::var(1, 0));
        let x = quasi_geometric_lift(1, &ch, 3.2, dyadic_grid(1.0, 2)).unwrap();
        let id = ControlledPath::identity(&x, &[0.0]).unwrap();
        let s = x.basis().index_of(&f("1*{11}")).unwrap();
        let b = x.basis().len();
        let mut coeffs = Vec::new();
        for i in 0..id.len() {
            let mut c = id.coeffs(i, 0).to_vec();
            c[s] = 1.0;
            coeffs.extend(c);
        }
        let bad = ControlledPath::new(x.basis().clone(), id.targets().to_vec(), id.traces().to_vec(), coeffs).unwrap();
        assert_eq!(bad.coeffs(0, 0).len(), b);
        assert!(matches!(lift(&bad, &x, Extension::Strict, 1.0), Err(Error::UnsupportedLabel(_))));
    }

    fn channels() -> BTreeMap<Label, Poly<f64>> {
        let t = Poly::var(1, 0);
        let mut ch = BTreeMap::new();
        ch.insert(Label::atom('1'), t.clone());
        ch.insert(Label::atom('2'), t.pow(2).scale(&-0.5));
        ch.insert(Label::multiset(vec![Atom::new('1'), Atom::new('2')]), t.scale(&0.3));
        ch.insert(Label::multiset(vec![Atom::new('1'), Atom::new('1')]), t.pow(2).scale(&0.2));
        ch
    }

    /// Hand-written level-2 and level-3 bracket integrands.
    #[test]
    fn bracket_symbols_match_closed_forms() {
        let fmap = PolyMap::parse(&["x1^2*x2 + x2", "x1*x2^2 - x1^3"], 2).unwrap();
        let (letters, phi) = bracket_pushforward_symbols(&fmap, &[0, 1], 3).unwrap();
        let fi = &fmap.comps[0];
        let fj = &fmap.comps[1];
        let two = QPoly::constant(2, qr(1, 2));
        for (c, got) in letters.iter().zip(&phi.comps) {
            let idx: Vec<usize> = c.atoms().unwrap().iter().map(|a| if a.id == '1' { 0 } else { 1 }).collect();
            let mut want = QPoly::zero(2);
            // Sum over all index tuples whose multiset is c.
            let tuples: Vec<Vec<usize>> = match idx.len() {
                2 => [[0, 1], [1, 0]].iter().map(|p| p.iter().map(|&i| idx[i]).collect()).collect(),
                3 => [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]
                    .iter()
                    .map(|p| p.iter().map(|&i| idx[i]).collect())
                    .collect(),
                _ => unreachable!(),
            };
            let mut tuples = tuples;
            tuples.sort();
            tuples.dedup();
            for t in tuples {
                if t.len() == 2 {
                    want = want.add(&fi.partial(&[t[0]]).mul(&fj.partial(&[t[1]])));
                } else {
                    let (a, b, g) = (t[0], t[1], t[2]);
                    let s = fi.partial(&[a, g]).mul(&fj.partial(&[b])).add(&fi.partial(&[a]).mul(&fj.partial(&[b, g])));
                    want = want.add(&s.mul(&two));
                }
            }
            assert_eq!(got, &want, "at {c}");
        }
        let (letters, phi) = bracket_pushforward_symbols(&fmap, &[0, 1, 1], 3).unwrap();
        for (c, got) in letters.iter().zip(&phi.comps) {
            assert_eq!(c.weight(), 3);
            let idx: Vec<usize> = c.atoms().unwrap().iter().map(|a| if a.id == '1' { 0 } else { 1 }).collect();
            let mut tuples: Vec<Vec<usize>> = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]
                .iter()
                .map(|p| p.iter().map(|&i| idx[i]).collect())
                .collect();
            tuples.sort();
            tuples.dedup();
            let mut want = QPoly::zero(2);
            for t in tuples {
                want = want.add(&fi.partial(&[t[0]]).mul(&fj.partial(&[t[1]])).mul(&fj.partial(&[t[2]])));
            }
            assert_eq!(got, &want, "at {c}");
        }
    }

    #[test]
    fn bracket_pushforward_is_consistent_and_matches_quadrature() {
        let fmap = PolyMap::parse(&["x1*x2 + x1", "x2^2 - x1"], 2).unwrap();
        let x0 = [0.2, -0.1];
        let ch = channels();
        let x = quasi_geometric_lift(2, &ch, 3.2, dyadic_grid(1.0, 10)).unwrap();
        let y = pushforward_bracket(&fmap, &x, &x0, 1e-3).unwrap();
        let inst = consistency_instances(&numbered_letters(2), 3, true);
        let (worst, at) = max_consistency_defect(&y, &inst).unwrap();
        assert!(worst < 1e-7, "{worst} at {at:?}");
        // Oracle: Gauss–Legendre quadrature of the level-2 integrand against
        // the smooth channels.
        let (letters, phi) = bracket_pushforward_symbols(&fmap, &[0, 1], 3).unwrap();
        let phi = phi.to_f64();
        let mut want = 0.0;
        let panels = 64;
        for p in 0..panels {
            let (a, b) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
            for (t, w) in gauss_legendre_8(a, b) {
                let xt = [x0[0] + ch[&Label::atom('1')].eval(&[t]), x0[1] + ch[&Label::atom('2')].eval(&[t])];
                let vals = phi.eval(&xt);
                for (c, v) in letters.iter().zip(vals) {
                    if let Some(chan) = ch.get(c) {
                        want += w * v * chan.derivative(0).eval(&[t]);
                    }
                }
            }
        }
        let got = y.component(0, y.num_cells(), &f("{12}")).unwrap();
        assert!((got - want).abs() < 1e-7, "{got} vs {want}");
    }

    /// Solving against `X` then against the lift of `Y` matches the stacked system.
    #[test]
    fn rde_solutions_compose() {
        let v = VectorFields::parse(1, &[(Label::atom('1'), vec!["x1"]), (Label::atom('2'), vec!["1 + x1^2"])]).unwrap();
        let w = VectorFields::parse(1, &[(Label::atom('1'), vec!["x1^2 - 1"])]).unwrap();
        let stacked = VectorFields::parse(
            2,
            &[(Label::atom('1'), vec!["x1", "x1*(x2^2 - 1)"]), (Label::atom('2'), vec!["1 + x1^2", "(1 + x1^2)*(x2^2 - 1)"])],
        );
        let stacked = match stacked {
            Ok(s) => s,
            Err(_) => VectorFields::parse(
                2,
                &[
                    (Label::atom('1'), vec!["x1", "x1*x2^2 - x1"]),
                    (Label::atom('2'), vec!["1 + x1^2", "x2^2 + x1^2*x2^2 - 1 - x1^2"]),
                ],
            )
            .unwrap(),
        };
        let x = smooth_lift(&gamma(), 3.5, dyadic_grid(0.5, 9)).unwrap();
        let y = davie_solve(&v, &x, &[0.3]).unwrap();
        let (ly, _) = lift(&y, &x, Extension::Geometric, 1e-6).unwrap();
        let z = davie_solve(&w, &ly, &[0.1]).unwrap();
        let yz = davie_solve(&stacked, &x, &[0.3, 0.1]).unwrap();
        let end = x.num_cells();
        assert!((yz.trace_at(end)[1] - z.trace_at(end)[0]).abs() < 1e-7);
        assert!((yz.trace_at(end)[0] - y.trace_at(end)[0]).abs() < 1e-15);
    }
}
