//! Root labelling, bracket polynomials and bracket-consistency defects.

use crate::error::{Error, Result};
use crate::forest::{Attach, Forest, Label, Tree};
use crate::hopf::{ck_coproduct_forest, q, AlgElem};
use crate::rough_path::RoughPath;

/// `J(f ⊗ g) = [f]_{(g)}`, or zero when `g` carries no label.
pub fn root_label_j(f: &Forest, g: &Forest) -> AlgElem {
    match Label::bracket_of(g) {
        Some(l) => AlgElem::basis(Tree::graft(f, l).to_forest()),
        None => AlgElem::zero(),
    }
}

/// `≪f≫ = f − J∘Δ̃_CK(f)`.
pub fn bracket_polynomial(f: &Forest) -> AlgElem {
    let mut out = AlgElem::basis(f.clone());
    for ((pruned, trunk), k) in ck_coproduct_forest(f) {
        if pruned.is_empty() || trunk.is_empty() {
            continue;
        }
        out.add_scaled(&root_label_j(&pruned, &trunk), &-q(k as i64));
    }
    out
}

pub fn bracket_polynomial_linear(x: &AlgElem) -> AlgElem {
    x.map_linear(bracket_polynomial)
}

/// `J∘Δ_CK(f)` with the unreduced coproduct; rewrites a forest in terms of
/// trees over the enlarged alphabet.
pub fn forest_to_trees(f: &Forest) -> AlgElem {
    let mut out = AlgElem::zero();
    for ((pruned, trunk), k) in ck_coproduct_forest(f) {
        out.add_scaled(&root_label_j(&pruned, &trunk), &q(k as i64));
    }
    out
}

/// Linear extension of `· ↷_ν g`.
pub fn attach_linear(x: &AlgElem, g: &Forest, nu: Attach) -> Result<AlgElem> {
    let mut out = AlgElem::zero();
    for (f, c) in x.iter() {
        out.add_term(f.attach_at(g, nu)?, c.clone());
    }
    Ok(out)
}

/// Both sides of the consistency relation at `(f, g, ν)`:
/// `(•_{(f)} ↷_ν g, ≪f≫ ↷_ν g)`.
pub fn consistency_pair(f: &Forest, g: &Forest, nu: Attach) -> Result<(AlgElem, AlgElem)> {
    let label = Label::bracket_of(f).ok_or_else(|| Error::InvalidInput(format!("{f} has no bracket label")))?;
    let lhs = Forest::vertex(label).attach_at(g, nu)?;
    let rhs = attach_linear(&bracket_polynomial(f), g, nu)?;
    Ok((AlgElem::basis(lhs), rhs))
}

/// `|⟨•_{(f)} ↷_ν g, X̂_st⟩ − ⟨≪f≫ ↷_ν g, X̂_st⟩|` at grid indices `(i, j)`.
pub fn consistency_defect(x: &RoughPath, f: &Forest, g: &Forest, nu: Attach, i: usize, j: usize) -> Result<f64> {
    let degree = f.degree() + g.degree();
    if degree > x.n() {
        return Err(Error::DegreeOverflow { degree, max: x.n() });
    }
    let (lhs, rhs) = consistency_pair(f, g, nu)?;
    let v = x.value(i, j);
    Ok((x.eval_values(&v, &lhs)? - x.eval_values(&v, &rhs)?).abs())
}

/// A consistency instance `(f, g, ν)`.
pub type Instance = (Forest, Forest, Attach);

/// Every consistency instance `(f, g, ν)` over `letters` with `|f| + |g| ≤ n`,
/// `f` a non-trivial bracketable forest. With `simple_only`, `f` ranges over
/// products of single vertices.
pub fn consistency_instances(letters: &[Label], n: u32, simple_only: bool) -> Vec<Instance> {
    let forests = crate::forest::enumerate_forests(letters, n);
    let mut out = Vec::new();
    for f in &forests {
        if f.num_vertices() < 2 || Label::bracket_of(f).is_none() {
            continue;
        }
        if simple_only && !f.is_vertex_product() {
            continue;
        }
        for g in &forests {
            if f.degree() + g.degree() > n {
                continue;
            }
            out.push((f.clone(), g.clone(), Attach::Product));
            for v in 0..g.num_vertices() {
                out.push((f.clone(), g.clone(), Attach::Vertex(v)));
            }
        }
    }
    out
}

/// Largest consistency defect over the listed instances and all stored
/// grid pairs, with the worst instance.
pub fn max_consistency_defect(x: &RoughPath, instances: &[Instance]) -> Result<(f64, Option<Instance>)> {
    let pairs = x.stored_pairs();
    let mut worst = (0.0, None);
    for (f, g, nu) in instances {
        let (lhs, rhs) = consistency_pair(f, g, *nu)?;
        let diff = lhs.sub(&rhs);
        for &(i, j) in &pairs {
            let v = x.value(i, j);
            let d = x.eval_values(&v, &diff)?.abs();
            if d > worst.0 {
                worst = (d, Some((f.clone(), g.clone(), *nu)));
            }
        }
    }
    Ok(worst)
}
