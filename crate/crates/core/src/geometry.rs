//! The extended state-input space, Lie derivatives, exterior calculus,
//! codistributions and the integrability test.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::matrix::ExprMatrix;
use crate::numeric::{is_identically_zero, SamplePoint, Sampling, TriState};
use crate::symbol::{Symbol, SymbolKind};
use crate::system::SystemModel;

/// Coordinates `(x, u_[0..l_u])` of the extended state-input space. Jet
/// symbols are grouped by input, ordered by derivative order.
#[derive(Debug, Clone)]
pub struct ExtendedSpace {
    states: Vec<Symbol>,
    inputs: Vec<Symbol>,
    jet_depth: u32,
    coords: Vec<Symbol>,
    /// jets[j][a] is the a-th derivative of input j (a = 0 is the input).
    jets: Vec<Vec<Symbol>>,
}

impl ExtendedSpace {
    pub fn new(sys: &SystemModel, jet_depth: u32) -> Self {
        let mut coords: Vec<Symbol> = sys.states().to_vec();
        let mut jets = Vec::with_capacity(sys.m());
        for u in sys.inputs() {
            let mut chain = vec![u.clone()];
            for a in 1..=jet_depth {
                chain.push(Symbol::jet(
                    Symbol::jet_name(u.name(), a),
                    SymbolKind::InputJet,
                    a,
                ));
            }
            coords.extend(chain.iter().cloned());
            jets.push(chain);
        }
        ExtendedSpace {
            states: sys.states().to_vec(),
            inputs: sys.inputs().to_vec(),
            jet_depth,
            coords,
            jets,
        }
    }

    pub fn coords(&self) -> &[Symbol] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Symbol] {
        &self.states
    }

    pub fn inputs(&self) -> &[Symbol] {
        &self.inputs
    }

    pub fn jet_depth(&self) -> u32 {
        self.jet_depth
    }

    /// The a-th time derivative symbol of input j.
    pub fn jet(&self, input: usize, order: u32) -> &Symbol {
        &self.jets[input][order as usize]
    }

    pub fn coord_index(&self, s: &Symbol) -> Option<usize> {
        self.coords.iter().position(|c| c == s)
    }
}

/// Vector field on an extended space: one coefficient per coordinate.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub coeffs: Vec<Expr>,
}

/// One-form on an extended space: one coefficient per coordinate
/// differential.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneForm {
    pub coeffs: Vec<Expr>,
}

impl OneForm {
    pub fn zero(dim: usize) -> Self {
        OneForm {
            coeffs: vec![Expr::zero(); dim],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }
}

/// The time-derivative operator along trajectories: `f^i d/dx^i` plus the
/// jet shift on input derivatives (top jets get zero).
pub fn extended_vector_field(sys: &SystemModel, space: &ExtendedSpace) -> VectorField {
    let mut coeffs = Vec::with_capacity(space.dim());
    coeffs.extend(sys.dynamics().iter().cloned());
    for j in 0..sys.m() {
        for a in 0..=space.jet_depth() {
            if a < space.jet_depth() {
                coeffs.push(Expr::sym(space.jet(j, a + 1)));
            } else {
                coeffs.push(Expr::zero());
            }
        }
    }
    VectorField { coeffs }
}

/// Lie derivative of a scalar along a vector field.
pub fn lie_scalar(v: &VectorField, h: &Expr, space: &ExtendedSpace) -> Expr {
    let mut terms = Vec::new();
    for (i, coord) in space.coords().iter().enumerate() {
        if v.coeffs[i].is_zero() || !h.depends_on(coord) {
            continue;
        }
        terms.push(Expr::mul2(v.coeffs[i].clone(), h.diff(coord)));
    }
    Expr::add(terms)
}

/// The differential of a scalar as a one-form.
pub fn differential(h: &Expr, space: &ExtendedSpace) -> OneForm {
    OneForm {
        coeffs: space.coords().iter().map(|c| h.diff(c)).collect(),
    }
}

/// Antisymmetric coefficient table of a two-form: entries on index pairs
/// i < j.
#[derive(Debug, Clone)]
pub struct TwoForm {
    pub entries: BTreeMap<(usize, usize), Expr>,
}

/// Exterior derivative of a one-form: `c_ij = d_i w_j - d_j w_i` for i < j.
pub fn exterior_derivative(w: &OneForm, space: &ExtendedSpace) -> TwoForm {
    let mut entries = BTreeMap::new();
    let coords = space.coords();
    // only coordinates that appear matter; scan support first
    let mut support: Vec<usize> = Vec::new();
    for (j, c) in w.coeffs.iter().enumerate() {
        if !c.is_zero() {
            if !support.contains(&j) {
                support.push(j);
            }
        }
        let _ = c;
    }
    let mut depends: Vec<usize> = Vec::new();
    for (i, coord) in coords.iter().enumerate() {
        if w.coeffs.iter().any(|c| c.depends_on(coord)) {
            depends.push(i);
        }
    }
    let mut relevant: Vec<usize> = support;
    for i in depends {
        if !relevant.contains(&i) {
            relevant.push(i);
        }
    }
    relevant.sort_unstable();
    for (a, &i) in relevant.iter().enumerate() {
        for &j in &relevant[a + 1..] {
            let c = Expr::sub(
                w.coeffs[j].diff(&coords[i]),
                w.coeffs[i].diff(&coords[j]),
            );
            if !c.is_zero() {
                entries.insert((i, j), c);
            }
        }
    }
    TwoForm { entries }
}

/// A codistribution stored as a reduced basis with its rank certificate.
#[derive(Debug, Clone)]
pub struct Codistribution {
    basis: Vec<OneForm>,
    dim: usize,
    certificate: SamplePoint,
}

impl Codistribution {
    /// Span of the given forms, reduced to a deterministic basis.
    pub fn span(forms: &[OneForm], space: &ExtendedSpace, cfg: &Sampling) -> Result<Self> {
        let dim = space.dim();
        let rows: Vec<Vec<Expr>> = forms
            .iter()
            .map(|f| {
                assert_eq!(f.coeffs.len(), dim, "form dimension mismatch");
                f.coeffs.clone()
            })
            .collect();
        if rows.is_empty() {
            return Ok(Codistribution {
                basis: vec![],
                dim,
                certificate: SamplePoint {
                    assignment: Default::default(),
                },
            });
        }
        let m = ExprMatrix::from_rows(rows);
        let cert = m.generic_rank(cfg)?;
        let reduced = m.reduced_row_basis(cfg)?;
        let basis = (0..reduced.rows())
            .map(|i| OneForm {
                coeffs: reduced.row(i).to_vec(),
            })
            .collect();
        Ok(Codistribution {
            basis,
            dim,
            certificate: cert.point,
        })
    }

    pub fn basis(&self) -> &[OneForm] {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn certificate(&self) -> &SamplePoint {
        &self.certificate
    }

    pub fn coefficient_matrix(&self) -> ExprMatrix {
        if self.basis.is_empty() {
            return ExprMatrix::zeros(0, self.dim);
        }
        ExprMatrix::from_rows(self.basis.iter().map(|f| f.coeffs.clone()).collect())
    }

    /// Does stacking `form` on top of this span raise the rank?
    pub fn extends_rank(&self, form: &OneForm, cfg: &Sampling) -> Result<bool> {
        let stacked = self
            .coefficient_matrix()
            .stack(&ExprMatrix::from_rows(vec![form.coeffs.clone()]));
        Ok(stacked.generic_rank(cfg)?.rank > self.rank())
    }

    /// Is `inner` contained in this span (stack-and-rank test)?
    pub fn contains(&self, inner: &Codistribution, cfg: &Sampling) -> Result<bool> {
        if inner.rank() == 0 {
            return Ok(true);
        }
        let stacked = self.coefficient_matrix().stack(&inner.coefficient_matrix());
        Ok(stacked.generic_rank(cfg)?.rank == self.rank())
    }
}

/// Rank difference of nested codistributions; errors when `inner` is not
/// contained in `outer`, naming a witness basis form.
pub fn corank(inner: &Codistribution, outer: &Codistribution, cfg: &Sampling) -> Result<usize> {
    if !outer.contains(inner, cfg)? {
        // find a witness form of inner outside outer
        for (i, form) in inner.basis().iter().enumerate() {
            if outer.extends_rank(form, cfg)? {
                return Err(Error::Containment(format!(
                    "inner basis form {i} lies outside the outer span"
                )));
            }
        }
        return Err(Error::Containment(
            "inner span not contained in outer span".to_string(),
        ));
    }
    Ok(outer.rank() - inner.rank())
}

/// Intersect a codistribution with the span of the state differentials:
/// split each basis row into state and jet blocks, kernel out the jet block
/// and push the combination into the state block.
pub fn intersect_with_state_span(
    p: &Codistribution,
    space: &ExtendedSpace,
    cfg: &Sampling,
) -> Result<Codistribution> {
    let n = space.n_states();
    let dim = space.dim();
    if p.rank() == 0 {
        return Codistribution::span(&[], space, cfg);
    }
    let full = p.coefficient_matrix();
    let state_cols: Vec<usize> = (0..n).collect();
    let jet_cols: Vec<usize> = (n..dim).collect();
    let jet_block = full.select_cols(&jet_cols);
    let kernel = jet_block.left_nullspace(cfg)?;
    if kernel.rows() == 0 {
        return Codistribution::span(&[], space, cfg);
    }
    let state_block = full.select_cols(&state_cols);
    let q_states = kernel.mul(&state_block);
    let forms: Vec<OneForm> = (0..q_states.rows())
        .map(|i| {
            let mut coeffs = q_states.row(i).to_vec();
            coeffs.resize(dim, Expr::zero());
            OneForm { coeffs }
        })
        .collect();
    Codistribution::span(&forms, space, cfg)
}

/// Result of the integrability test with its evidence.
#[derive(Debug, Clone)]
pub struct FrobeniusReport {
    pub verdict: TriState,
    /// For "no": the nonvanishing wedge coefficient and a witness point.
    pub offending: Option<(Expr, SamplePoint, f64)>,
}

/// Frobenius test: integrable iff `dw^i ^ w^1 ^ ... ^ w^k` vanishes for
/// every basis form. Wedge coefficients are accumulated sparsely over
/// ordered multi-indices and each surviving coefficient goes through the
/// zero test; one inconclusive coefficient degrades the verdict.
pub fn frobenius_integrable(
    d: &Codistribution,
    space: &ExtendedSpace,
    cfg: &Sampling,
) -> FrobeniusReport {
    let k = d.rank();
    if k == 0 {
        return FrobeniusReport {
            verdict: TriState::Yes,
            offending: None,
        };
    }
    let mut inconclusive: Option<String> = None;
    for omega in d.basis() {
        let two = exterior_derivative(omega, space);
        if two.entries.is_empty() {
            continue;
        }
        // seed the wedge with the 2-form table
        let mut wedge: BTreeMap<Vec<u32>, Expr> = two
            .entries
            .iter()
            .map(|(&(i, j), c)| (vec![i as u32, j as u32], c.clone()))
            .collect();
        for other in d.basis() {
            wedge = wedge_with_one_form(&wedge, other);
            if wedge.is_empty() {
                break;
            }
        }
        for (idxs, coeff) in &wedge {
            let t = is_identically_zero(coeff, cfg);
            match t.verdict {
                TriState::Yes => {}
                TriState::No => {
                    let (point, value) = t.witness.expect("no carries witness");
                    return FrobeniusReport {
                        verdict: TriState::No,
                        offending: Some((coeff.clone(), point, value)),
                    };
                }
                TriState::Inconclusive(r) => {
                    if inconclusive.is_none() {
                        let names: Vec<&str> = idxs
                            .iter()
                            .map(|&i| space.coords()[i as usize].name())
                            .collect();
                        inconclusive = Some(format!(
                            "wedge coefficient on ({}) undecided: {r}",
                            names.join(",")
                        ));
                    }
                }
            }
        }
    }
    match inconclusive {
        None => FrobeniusReport {
            verdict: TriState::Yes,
            offending: None,
        },
        Some(r) => FrobeniusReport {
            verdict: TriState::Inconclusive(r),
            offending: None,
        },
    }
}

/// Multiply a sparse alternating form by a one-form.
fn wedge_with_one_form(
    form: &BTreeMap<Vec<u32>, Expr>,
    omega: &OneForm,
) -> BTreeMap<Vec<u32>, Expr> {
    let mut out: BTreeMap<Vec<u32>, Expr> = BTreeMap::new();
    for (idxs, c) in form {
        for (j, cj) in omega.coeffs.iter().enumerate() {
            if cj.is_zero() {
                continue;
            }
            let j = j as u32;
            if idxs.contains(&j) {
                continue;
            }
            let pos = idxs.partition_point(|&i| i < j);
            // moving e_j from the last slot to `pos` crosses len-pos entries
            let sign_neg = (idxs.len() - pos) % 2 == 1;
            let mut new_idxs = idxs.clone();
            new_idxs.insert(pos, j);
            let mut term = Expr::mul2(c.clone(), cj.clone());
            if sign_neg {
                term = Expr::neg(term);
            }
            match out.entry(new_idxs) {
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert(term);
                }
                std::collections::btree_map::Entry::Occupied(mut o) => {
                    let sum = Expr::add2(o.get().clone(), term);
                    if sum.is_zero() {
                        o.remove();
                    } else {
                        *o.get_mut() = sum;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_expr, SymbolScope};

    fn example2() -> (SystemModel, SymbolScope) {
        let states: Vec<Symbol> = (1..=7)
            .map(|i| Symbol::new(format!("x{i}"), SymbolKind::State))
            .collect();
        let inputs: Vec<Symbol> = (1..=3)
            .map(|j| Symbol::new(format!("u{j}"), SymbolKind::Input))
            .collect();
        let scope = SymbolScope::from_symbols(states.iter().chain(inputs.iter()));
        let dynamics = [
            "u1",
            "x3 + x4*u1",
            "u2 - u1*u3",
            "u3",
            "-x6 + x4*x7*u1",
            "-x5*u1 + x7*(u1*u3 - u2 - 1) + (x4 + u1)*x4*u1",
            "x4 + u1",
        ]
        .iter()
        .map(|t| parse_expr(t, &scope).unwrap())
        .collect();
        (
            SystemModel::new(states, inputs, dynamics).unwrap(),
            scope,
        )
    }

    #[test]
    fn extended_field_coefficients() {
        let (sys, scope) = example2();
        let space = ExtendedSpace::new(&sys, 0);
        let f = extended_vector_field(&sys, &space);
        // coefficient of x2 is x3 + x4*u1
        let expected = parse_expr("x3 + x4*u1", &scope).unwrap();
        assert_eq!(f.coeffs[1], expected);
        // top jets are zero
        assert!(f.coeffs[space.dim() - 1].is_zero());
    }

    #[test]
    fn extended_field_jet_shift() {
        let (sys, _) = example2();
        let space = ExtendedSpace::new(&sys, 2);
        let f = extended_vector_field(&sys, &space);
        // coefficient of u1_1 is u1_2
        let idx = space.coord_index(space.jet(0, 1)).unwrap();
        assert_eq!(f.coeffs[idx], Expr::sym(space.jet(0, 2)));
    }

    #[test]
    fn lie_scalar_matches_dynamics() {
        let (sys, scope) = example2();
        let space = ExtendedSpace::new(&sys, 1);
        let f = extended_vector_field(&sys, &space);
        let x5 = parse_expr("x5", &scope).unwrap();
        let out = lie_scalar(&f, &x5, &space);
        let expected = parse_expr("-x6 + x4*x7*u1", &scope).unwrap();
        assert_eq!(out, expected);
        // Lie derivative of a constant vanishes
        assert!(lie_scalar(&f, &Expr::rat(3, 7), &space).is_zero());
    }

    #[test]
    fn d_of_exact_form_vanishes() {
        let (sys, scope) = example2();
        let space = ExtendedSpace::new(&sys, 1);
        let h = parse_expr("x4*x7*u1 - x6 + sin(x3)", &scope).unwrap();
        let dh = differential(&h, &space);
        let ddh = exterior_derivative(&dh, &space);
        assert!(ddh.entries.is_empty(), "d(dh) != 0: {:?}", ddh.entries);
    }

    #[test]
    fn exterior_derivative_contact_like() {
        let (sys, scope) = example2();
        let space = ExtendedSpace::new(&sys, 0);
        // w = x4 dx3
        let mut w = OneForm::zero(space.dim());
        let i3 = space.coord_index(&space.states()[2]).unwrap();
        let i4 = space.coord_index(&space.states()[3]).unwrap();
        w.coeffs[i3] = parse_expr("x4", &scope).unwrap();
        let dw = exterior_derivative(&w, &space);
        // entry on (x3, x4): d_{x3} w_{x4} - d_{x4} w_{x3} = -1
        assert_eq!(dw.entries.get(&(i3, i4)), Some(&Expr::int(-1)));
    }

    #[test]
    fn exterior_derivative_with_jet_coefficient() {
        let (sys, scope) = example2();
        let space = ExtendedSpace::new(&sys, 0);
        // w = dx3 + u1 dx4
        let mut w = OneForm::zero(space.dim());
        let i3 = 2;
        let i4 = 3;
        let iu1 = space.coord_index(&space.inputs()[0]).unwrap();
        w.coeffs[i3] = Expr::one();
        w.coeffs[i4] = parse_expr("u1", &scope).unwrap();
        let dw = exterior_derivative(&w, &space);
        // coefficient 1 on (x4, u1) ordered pair: d_{x4} w_{u1} - d_{u1} w_{x4} = -1
        // equivalently +1 on du1 ^ dx4
        assert_eq!(dw.entries.get(&(i4, iu1)), Some(&Expr::int(-1)));
    }

    #[test]
    fn frobenius_exact_span_yes() {
        let (sys, scope) = example2();
        let space = ExtendedSpace::new(&sys, 0);
        let cfg = Sampling::default();
        let h1 = parse_expr("x1*x2 + x3", &scope).unwrap();
        let h2 = parse_expr("x5 - x4^2", &scope).unwrap();
        let d = Codistribution::span(
            &[differential(&h1, &space), differential(&h2, &space)],
            &space,
            &cfg,
        )
        .unwrap();
        let rep = frobenius_integrable(&d, &space, &cfg);
        assert!(rep.verdict.is_yes(), "verdict: {:?}", rep.verdict);
    }

    #[test]
    fn frobenius_contact_form_no() {
        let (sys, scope) = example2();
        let space = ExtendedSpace::new(&sys, 0);
        let cfg = Sampling::default();
        // w = dx3 - x5 dx4 in the (x3, x4, x5) block
        let mut w = OneForm::zero(space.dim());
        w.coeffs[2] = Expr::one();
        w.coeffs[3] = Expr::neg(parse_expr("x5", &scope).unwrap());
        let d = Codistribution::span(&[w], &space, &cfg).unwrap();
        let rep = frobenius_integrable(&d, &space, &cfg);
        assert!(rep.verdict.is_no());
        let (_, _, value) = rep.offending.expect("witness point for no");
        assert!(value.abs() > 1e-9);
    }

    #[test]
    fn intersect_eliminates_jet_directions() {
        let (sys, _) = example2();
        let space = ExtendedSpace::new(&sys, 0);
        let cfg = Sampling::default();
        // P = <dx1 + du1, du1> -> Q = <dx1>
        let iu1 = space.coord_index(&space.inputs()[0]).unwrap();
        let mut w1 = OneForm::zero(space.dim());
        w1.coeffs[0] = Expr::one();
        w1.coeffs[iu1] = Expr::one();
        let mut w2 = OneForm::zero(space.dim());
        w2.coeffs[iu1] = Expr::one();
        let p = Codistribution::span(&[w1, w2], &space, &cfg).unwrap();
        let q = intersect_with_state_span(&p, &space, &cfg).unwrap();
        assert_eq!(q.rank(), 1);
        assert_eq!(q.basis()[0].coeffs[0], Expr::one());
        assert!(q.basis()[0].coeffs[1..].iter().all(|c| c.is_zero()));
    }

    #[test]
    fn intersect_identity_on_state_spans() {
        let (sys, scope) = example2();
        let space = ExtendedSpace::new(&sys, 0);
        let cfg = Sampling::default();
        let mut w = OneForm::zero(space.dim());
        w.coeffs[0] = parse_expr("x2", &scope).unwrap();
        w.coeffs[4] = Expr::one();
        let p = Codistribution::span(&[w], &space, &cfg).unwrap();
        let q = intersect_with_state_span(&p, &space, &cfg).unwrap();
        assert_eq!(q.rank(), 1);
        assert!(corank(&q, &p, &cfg).unwrap() == 0);
    }

    #[test]
    fn corank_containment_violation() {
        let (sys, _) = example2();
        let space = ExtendedSpace::new(&sys, 0);
        let cfg = Sampling::default();
        let mut w1 = OneForm::zero(space.dim());
        w1.coeffs[0] = Expr::one();
        let mut w2 = OneForm::zero(space.dim());
        w2.coeffs[1] = Expr::one();
        let d1 = Codistribution::span(&[w1], &space, &cfg).unwrap();
        let d2 = Codistribution::span(&[w2], &space, &cfg).unwrap();
        assert!(matches!(
            corank(&d1, &d2, &cfg),
            Err(Error::Containment(_))
        ));
        assert_eq!(corank(&d1, &d1, &cfg).unwrap(), 0);
    }
}
