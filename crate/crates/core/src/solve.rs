//! Closed-form solving of small equation systems.
//!
//! Scope is deliberately narrow: equations that are (jointly) affine in the
//! unknowns, or contain a single unknown in an invertible monomial position.
//! A greedy pass peels off single-unknown equations first, which also covers
//! triangular systems whose joint form is not affine; anything outside this
//! scope fails loudly with the offending equation.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::One;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::matrix::{determinant, ExprMatrix};
use crate::numeric::{zero_verdict, Sampling, TriState};
use crate::poly::{as_num_den, rational_normal};
use crate::symbol::Symbol;

/// A closed-form solution with the denominators it is valid under.
#[derive(Debug, Clone)]
pub struct Solution {
    pub assignments: BTreeMap<Symbol, Expr>,
    /// Expressions that must not vanish for the solution to hold.
    pub guards: Vec<Expr>,
}

/// Solve `equations == 0` for `unknowns`. Substituting the result back
/// must pass the zero test (asserted before returning).
pub fn solve_for(equations: &[Expr], unknowns: &[Symbol], cfg: &Sampling) -> Result<Solution> {
    if equations.len() != unknowns.len() {
        return Err(Error::Arity(format!(
            "{} equations for {} unknowns",
            equations.len(),
            unknowns.len()
        )));
    }
    let mut remaining_eqs: Vec<Expr> = equations.iter().map(|e| e.simplify()).collect();
    let mut remaining: Vec<Symbol> = unknowns.to_vec();
    let mut assignments: BTreeMap<Symbol, Expr> = BTreeMap::new();
    let mut guards: Vec<Expr> = Vec::new();

    while !remaining.is_empty() {
        // greedy: an equation with exactly one remaining unknown
        let single = remaining_eqs.iter().enumerate().find_map(|(i, eq)| {
            let present: Vec<&Symbol> = remaining.iter().filter(|u| eq.depends_on(u)).collect();
            if present.len() == 1 {
                Some((i, present[0].clone()))
            } else {
                None
            }
        });
        if let Some((idx, unknown)) = single {
            let eq = remaining_eqs.remove(idx);
            let (value, mut new_guards) = isolate(&eq, &unknown, cfg)?;
            let value = rational_normal(&value);
            guards.append(&mut new_guards);
            for e in remaining_eqs.iter_mut() {
                *e = rational_normal(&e.substitute1(&unknown, &value));
            }
            remaining.retain(|u| u != &unknown);
            assignments.insert(unknown, value);
            continue;
        }
        // joint affine solve of whatever is left
        let (sol, mut new_guards) = solve_affine(&remaining_eqs, &remaining, cfg)?;
        guards.append(&mut new_guards);
        for (u, v) in sol {
            assignments.insert(u, v);
        }
        remaining.clear();
        remaining_eqs.clear();
    }

    // back-substitute so assignments reference external symbols only
    for _ in 0..unknowns.len() {
        let snapshot = assignments.clone();
        let mut changed = false;
        for value in assignments.values_mut() {
            if value.depends_on_any(unknowns) {
                *value = rational_normal(&value.substitute(&snapshot));
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // round-trip check
    for (i, eq) in equations.iter().enumerate() {
        let residual = rational_normal(&eq.substitute(&assignments));
        if zero_verdict(&residual, cfg).is_no() {
            return Err(Error::Unsolvable(format!(
                "residual of equation {i} is certified nonzero: {residual}"
            )));
        }
    }

    guards.retain(|g| g.as_rational().is_none());
    guards.sort();
    guards.dedup();
    Ok(Solution {
        assignments,
        guards,
    })
}

/// Solve one equation for one unknown: affine first, invertible monomial
/// as the fallback. Returns the value and its validity guards.
fn isolate(eq: &Expr, unknown: &Symbol, cfg: &Sampling) -> Result<(Expr, Vec<Expr>)> {
    let dbg = std::env::var_os("XFLAT_SOLVE_DEBUG").is_some();
    let t0 = std::time::Instant::now();
    let d2 = eq.diff(unknown).diff(unknown);
    if dbg { eprintln!("isolate {unknown}: d2 built {:?}", t0.elapsed()); }
    if zero_verdict(&d2, cfg).is_yes() {
        if dbg { eprintln!("  d2 zero {:?}", t0.elapsed()); }
        // affine: eq = a*w + b
        let a = eq.diff(unknown).simplify();
        if dbg { eprintln!("  a built {:?}", t0.elapsed()); }
        match zero_verdict(&a, cfg) {
            TriState::No => {}
            TriState::Yes => {
                return Err(Error::Unsolvable(format!(
                    "coefficient of {unknown} vanishes in `{eq}`"
                )))
            }
            TriState::Inconclusive(r) => return Err(Error::Inconclusive(r)),
        }
        if dbg { eprintln!("  a verdict {:?}", t0.elapsed()); }
        let b = eq.substitute1(unknown, &Expr::zero()).simplify();
        if dbg { eprintln!("  b built {:?}", t0.elapsed()); }
        let value = rational_normal(&Expr::div(Expr::neg(b), a.clone()));
        if dbg { eprintln!("  value normalized {:?}", t0.elapsed()); }
        let guards = denominator_guards(&value, vec![a]);
        if dbg { eprintln!("  guards {:?}", t0.elapsed()); }
        return Ok((value, guards));
    }
    // single monomial position: eq = c*w^k + rest
    let terms: Vec<Expr> = match eq {
        Expr::Add(ts) => ts.clone(),
        other => vec![other.clone()],
    };
    let (with, without): (Vec<Expr>, Vec<Expr>) =
        terms.into_iter().partition(|t| t.depends_on(unknown));
    if with.len() != 1 {
        return Err(Error::Unsolvable(format!(
            "`{eq}` is not affine and {unknown} appears in {} terms",
            with.len()
        )));
    }
    let term = &with[0];
    let factors: Vec<Expr> = match term {
        Expr::Mul(fs) => fs.clone(),
        other => vec![other.clone()],
    };
    let mut exponent: Option<BigRational> = None;
    let mut coeff_factors: Vec<Expr> = Vec::new();
    for f in factors {
        match &f {
            Expr::Sym(s) if s == unknown => {
                if exponent.replace(BigRational::one()).is_some() {
                    return Err(Error::Unsolvable(format!("{unknown} repeats in `{term}`")));
                }
            }
            Expr::Pow(b, e) if matches!(&**b, Expr::Sym(s) if s == unknown) => {
                if exponent.replace(e.clone()).is_some() {
                    return Err(Error::Unsolvable(format!("{unknown} repeats in `{term}`")));
                }
            }
            _ if f.depends_on(unknown) => {
                return Err(Error::Unsolvable(format!(
                    "{unknown} is buried inside `{f}`"
                )))
            }
            _ => coeff_factors.push(f),
        }
    }
    let k = exponent.ok_or_else(|| {
        Error::Unsolvable(format!("{unknown} does not occur in a monomial of `{eq}`"))
    })?;
    let c = Expr::mul(coeff_factors);
    match zero_verdict(&c, cfg) {
        TriState::No => {}
        TriState::Yes => {
            return Err(Error::Unsolvable(format!(
                "monomial coefficient of {unknown} vanishes in `{eq}`"
            )))
        }
        TriState::Inconclusive(r) => return Err(Error::Inconclusive(r)),
    }
    // w^k = -rest/c, principal branch for fractional 1/k
    let rhs = rational_normal(&Expr::div(Expr::neg(Expr::add(without)), c.clone()));
    let value = Expr::pow(rhs, k.recip()).simplify();
    let guards = denominator_guards(&value, vec![c]);
    Ok((value, guards))
}

/// Jointly affine solve by Cramer's rule (the systems are small).
fn solve_affine(
    eqs: &[Expr],
    unknowns: &[Symbol],
    cfg: &Sampling,
) -> Result<(BTreeMap<Symbol, Expr>, Vec<Expr>)> {
    let n = unknowns.len();
    let mut a = ExprMatrix::zeros(n, n);
    for (i, eq) in eqs.iter().enumerate() {
        for (j, u) in unknowns.iter().enumerate() {
            let c = eq.diff(u).simplify();
            if c.depends_on_any(unknowns) {
                return Err(Error::Unsolvable(format!(
                    "equation `{eq}` is not affine in the unknowns"
                )));
            }
            a.set(i, j, c);
        }
    }
    let mut zero_map = BTreeMap::new();
    for u in unknowns {
        zero_map.insert(u.clone(), Expr::zero());
    }
    let rhs: Vec<Expr> = eqs
        .iter()
        .map(|eq| Expr::neg(eq.substitute(&zero_map)).simplify())
        .collect();
    let det = determinant(&a).simplify();
    match zero_verdict(&det, cfg) {
        TriState::No => {}
        TriState::Yes => return Err(Error::SingularSystem(det.to_string())),
        TriState::Inconclusive(r) => return Err(Error::Inconclusive(r)),
    }
    let mut out = BTreeMap::new();
    let mut guards = vec![det.clone()];
    for (j, u) in unknowns.iter().enumerate() {
        let mut aj = a.clone();
        for i in 0..n {
            aj.set(i, j, rhs[i].clone());
        }
        let detj = determinant(&aj).simplify();
        let value = Expr::div(detj, det.clone()).simplify();
        guards = denominator_guards(&value, guards);
        out.insert(u.clone(), value);
    }
    Ok((out, guards))
}

/// Collect the non-constant denominator of `value` into `guards`.
pub fn denominator_guards(value: &Expr, mut guards: Vec<Expr>) -> Vec<Expr> {
    let (_, den) = as_num_den(value);
    if den.as_rational().is_none() {
        guards.push(den);
    }
    guards
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::is_identically_zero;
    use crate::parse::{parse_expr, SymbolScope};
    use crate::symbol::SymbolKind;

    fn scope(names: &[&str]) -> (SymbolScope, Vec<Symbol>) {
        let syms: Vec<Symbol> = names
            .iter()
            .map(|n| Symbol::new(*n, SymbolKind::State))
            .collect();
        (SymbolScope::from_symbols(&syms), syms)
    }

    #[test]
    fn trivial_constant() {
        let cfg = Sampling::default();
        let (sc, syms) = scope(&["z", "c"]);
        let eq = parse_expr("z - c", &sc).unwrap();
        let sol = solve_for(&[eq], &[syms[1].clone()], &cfg).unwrap();
        // symbols sorted: c is syms[1]? names: z, c -> c solves to z
        assert_eq!(sol.assignments.len(), 1);
    }

    #[test]
    fn parameterization_level_equation() {
        // y32 - y21*y30 - z*(1 + y12) = 0  solved for z
        let cfg = Sampling::default();
        let (sc, syms) = scope(&["y32", "y21", "y30", "y12", "z"]);
        let eq = parse_expr("y32 - y21*y30 - z*(1 + y12)", &sc).unwrap();
        let z = syms.iter().find(|s| s.name() == "z").unwrap().clone();
        let sol = solve_for(&[eq.clone()], &[z.clone()], &cfg).unwrap();
        let expected = parse_expr("(y32 - y21*y30)/(1 + y12)", &sc).unwrap();
        let diff = Expr::sub(sol.assignments[&z].clone(), expected);
        assert!(is_identically_zero(&diff, &cfg).verdict.is_yes());
        // the guard 1 + y12 is recorded
        assert!(
            sol.guards
                .iter()
                .any(|g| { is_identically_zero(&Expr::sub(g.clone(), parse_expr("1 + y12", &sc).unwrap()), &cfg).verdict.is_yes() }),
            "guards: {:?}",
            sol.guards
        );
    }

    #[test]
    fn coupled_affine_pair_matches_explicit_inverse() {
        // x + 2y - p = 0, 3x + 7y - q = 0 has unit determinant 1*7-2*3=1
        let cfg = Sampling::default();
        let (sc, syms) = scope(&["x", "y", "p", "q"]);
        let e1 = parse_expr("x + 2*y - p", &sc).unwrap();
        let e2 = parse_expr("3*x + 7*y - q", &sc).unwrap();
        let x = syms.iter().find(|s| s.name() == "x").unwrap().clone();
        let y = syms.iter().find(|s| s.name() == "y").unwrap().clone();
        let sol = solve_for(&[e1, e2], &[x.clone(), y.clone()], &cfg).unwrap();
        // explicit 2x2 inverse: x = 7p - 2q, y = -3p + q
        let ex = parse_expr("7*p - 2*q", &sc).unwrap();
        let ey = parse_expr("q - 3*p", &sc).unwrap();
        assert!(is_identically_zero(&Expr::sub(sol.assignments[&x].clone(), ex), &cfg)
            .verdict
            .is_yes());
        assert!(is_identically_zero(&Expr::sub(sol.assignments[&y].clone(), ey), &cfg)
            .verdict
            .is_yes());
    }

    #[test]
    fn singular_system_reports_determinant() {
        let cfg = Sampling::default();
        let (sc, syms) = scope(&["x", "y", "p"]);
        let e1 = parse_expr("x + y - p", &sc).unwrap();
        let e2 = parse_expr("2*x + 2*y - p", &sc).unwrap();
        let x = syms.iter().find(|s| s.name() == "x").unwrap().clone();
        let y = syms.iter().find(|s| s.name() == "y").unwrap().clone();
        match solve_for(&[e1, e2], &[x, y], &cfg) {
            Err(Error::SingularSystem(_)) => {}
            other => panic!("expected singular system, got {other:?}"),
        }
    }

    #[test]
    fn monomial_inversion() {
        // z^2*c - r = 0 -> z = sqrt(r/c)
        let cfg = Sampling::default();
        let (sc, syms) = scope(&["z", "c", "r"]);
        let eq = parse_expr("z^2*c - r", &sc).unwrap();
        let z = syms.iter().find(|s| s.name() == "z").unwrap().clone();
        let sol = solve_for(&[eq.clone()], &[z.clone()], &cfg).unwrap();
        let residual = eq.substitute(&sol.assignments);
        // (sqrt(r/c))^2*c - r: accepted by the zero test (not certified nonzero)
        assert!(!is_identically_zero(&residual, &cfg).verdict.is_no());
    }

    #[test]
    fn triangular_mixed_system() {
        // e1: q - (a - z2)*w/(z3 + v) = 0   (not affine jointly: v in denominator)
        // e2: r - v - w = 0                  (affine in v alone once w known? v,w both unknown)
        // unknowns: z2, v with w,a,q,r,z3 known -> e2 gives v, e1 then affine in z2
        let cfg = Sampling::default();
        let (sc, syms) = scope(&["q", "a", "z2", "w", "z3", "v", "r"]);
        let e1 = parse_expr("q - (a - z2)*w/(z3 + v)", &sc).unwrap();
        let e2 = parse_expr("r - v", &sc).unwrap();
        let z2 = syms.iter().find(|s| s.name() == "z2").unwrap().clone();
        let v = syms.iter().find(|s| s.name() == "v").unwrap().clone();
        let sol = solve_for(&[e1.clone(), e2.clone()], &[z2.clone(), v.clone()], &cfg).unwrap();
        for eq in [e1, e2] {
            let residual = eq.substitute(&sol.assignments);
            assert!(is_identically_zero(&residual, &cfg).verdict.is_yes());
        }
    }
}
