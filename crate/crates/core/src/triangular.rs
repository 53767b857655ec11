//! Construction of the triangular normal form: coordinate chart extraction
//! from the codistribution sequence, the remaining static input
//! transformations, classification of the transformed dynamics, the
//! regularity conditions and the flat parameterization.

use std::collections::BTreeMap;

use crate::analysis::{AnalysisReport, DerivativeStructure, MultiIndex, QSequence};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{differential, extended_vector_field, lie_scalar, ExtendedSpace, OneForm};
use crate::matrix::{determinant, ExprMatrix, RankCertificate};
use crate::numeric::{is_identically_zero, zero_verdict, Sampling, TriState, ZeroTest};
use crate::solve::{denominator_guards, solve_for};
use crate::symbol::{Symbol, SymbolKind};
use crate::system::SystemModel;

/// User-supplied chart candidates keyed by position name (`z3_4`) plus any
/// unnamed extra candidates.
#[derive(Debug, Clone, Default)]
pub struct ChartHints {
    pub named: BTreeMap<String, Expr>,
    pub extra: Vec<Expr>,
}

/// One coordinate function of the chart.
#[derive(Debug, Clone)]
pub struct ChartEntry {
    pub symbol: Symbol,
    /// Chain 0, 1 or 2 (the spec's z1, z2, z3 groups).
    pub chain: usize,
    /// 1-based position within the chain.
    pub position: u32,
    /// Function of the states of the normalized system.
    pub expr: Expr,
}

/// Coordinate chart grouped into the three chains, with its inverse map.
#[derive(Debug, Clone)]
pub struct CoordinateChart {
    pub entries: Vec<ChartEntry>,
    /// (k1, p2, r3).
    pub dims: (u32, u32, u32),
    /// state -> expression in the chart symbols, when solvable.
    pub inverse: Option<BTreeMap<Symbol, Expr>>,
    pub inverse_guards: Vec<Expr>,
    pub jacobian: RankCertificate,
    /// Indices into `entries` of coordinate pairs found without positional
    /// hints at a corank-2 level; their chain assignment may be flipped.
    pub ambiguous_pairs: Vec<(usize, usize)>,
}

impl CoordinateChart {
    pub fn entry(&self, chain: usize, position: u32) -> &ChartEntry {
        self.entries
            .iter()
            .find(|e| e.chain == chain && e.position == position)
            .expect("chart position exists")
    }

    pub fn symbols(&self) -> Vec<Symbol> {
        self.entries.iter().map(|e| e.symbol.clone()).collect()
    }

    fn chain_name(chain: usize, position: u32) -> String {
        format!("z{}_{}", chain + 1, position)
    }

    /// Swap the expressions of one ambiguous pair (chain assignment flip).
    fn flipped(&self, pair: (usize, usize), sys_norm: &SystemModel, cfg: &Sampling) -> Result<Self> {
        let mut entries = self.entries.clone();
        let tmp = entries[pair.0].expr.clone();
        entries[pair.0].expr = entries[pair.1].expr.clone();
        entries[pair.1].expr = tmp;
        finish_chart(entries, self.dims, self.ambiguous_pairs.clone(), sys_norm, cfg)
    }
}

/// Positions a sequence level must contribute, per the chart grouping.
fn level_positions(ds: &DerivativeStructure, i: u32) -> Vec<(usize, u32)> {
    let (k2, k3) = (ds.k.0[1], ds.k.0[2]);
    let p3k3 = ds.p.0[2] - k3;
    if i <= ds.delta {
        vec![(2, k3 + i)]
    } else if i <= p3k3 {
        vec![(1, k2 + (i - ds.delta)), (2, k3 + i)]
    } else {
        vec![(2, k3 + i)]
    }
}

/// Extract exact generators level by level: each candidate's differential
/// must lie inside Q at the level and extend the span of the previous level
/// plus what was already found. The pool is positional hints, then plain
/// state coordinates, then pairwise products of states.
pub fn extract_coordinates(
    seq: &QSequence,
    ds: &DerivativeStructure,
    sys_norm: &SystemModel,
    hints: &ChartHints,
    cfg: &Sampling,
) -> Result<CoordinateChart> {
    let space = &seq.space;
    let (k1, p2, r3) = (ds.k.0[0], ds.p.0[1], ds.r.0[2]);
    let mut entries: Vec<ChartEntry> = Vec::new();
    let taken: Vec<Symbol> = sys_norm
        .states()
        .iter()
        .chain(sys_norm.inputs().iter())
        .cloned()
        .collect();
    let mut push = |entries: &mut Vec<ChartEntry>, chain: usize, position: u32, expr: Expr| {
        let name = CoordinateChart::chain_name(chain, position);
        let symbol = crate::analysis::fresh_symbol(&name, &taken, SymbolKind::State);
        entries.push(ChartEntry {
            symbol,
            chain,
            position,
            expr,
        });
    };

    // chain heads are the output derivatives themselves
    for j in 0..3 {
        for l in 0..ds.k.0[j] {
            push(&mut entries, j, l + 1, ds.jets[j][l as usize].clone());
        }
    }

    // candidate pool beyond the hints
    let mut pool: Vec<Expr> = hints.extra.clone();
    for s in sys_norm.states() {
        pool.push(Expr::sym(s));
    }
    let states: Vec<Symbol> = sys_norm.states().to_vec();
    for (a, sa) in states.iter().enumerate() {
        for sb in states.iter().skip(a) {
            pool.push(Expr::mul2(Expr::sym(sa), Expr::sym(sb)));
        }
    }

    let mut ambiguous_pairs: Vec<(usize, usize)> = Vec::new();
    for (i, level) in seq.levels.iter().enumerate().skip(1) {
        let prev = &seq.levels[i - 1];
        let positions = level_positions(ds, i as u32);
        let mut base = prev.q.coefficient_matrix();
        let mut found: Vec<(usize, u32, Expr, bool)> = Vec::new();
        let q_matrix = level.q.coefficient_matrix();
        let q_rank = level.q.rank();
        let mut consider =
            |h: &Expr, base: &ExprMatrix, cfg: &Sampling| -> Result<Option<OneForm>> {
                let dh = differential(h, space);
                // inside Q at this level?
                let stacked = q_matrix.stack(&ExprMatrix::from_rows(vec![dh.coeffs.clone()]));
                if stacked.generic_rank(cfg)?.rank != q_rank {
                    return Ok(None);
                }
                // independent of the previous level plus found generators?
                let base_rank = base.generic_rank(cfg)?.rank;
                let extended = base.stack(&ExprMatrix::from_rows(vec![dh.coeffs.clone()]));
                if extended.generic_rank(cfg)?.rank == base_rank {
                    return Ok(None);
                }
                Ok(Some(dh))
            };
        // positional hints first
        for &(chain, position) in &positions {
            let name = CoordinateChart::chain_name(chain, position);
            if let Some(h) = hints.named.get(&name) {
                if let Some(dh) = consider(h, &base, cfg)? {
                    base = base.stack(&ExprMatrix::from_rows(vec![dh.coeffs]));
                    found.push((chain, position, h.clone(), true));
                }
            }
        }
        // pool fills the remaining slots in order
        let open: Vec<(usize, u32)> = positions
            .iter()
            .filter(|(c, p)| !found.iter().any(|(fc, fp, _, _)| fc == c && fp == p))
            .cloned()
            .collect();
        let mut open_iter = open.into_iter();
        let mut slot = open_iter.next();
        if slot.is_some() {
            for h in &pool {
                let Some((chain, position)) = slot else { break };
                if let Some(dh) = consider(h, &base, cfg)? {
                    base = base.stack(&ExprMatrix::from_rows(vec![dh.coeffs]));
                    found.push((chain, position, h.clone(), false));
                    slot = open_iter.next();
                }
            }
        }
        if found.len() < positions.len() {
            return Err(Error::MissingGenerator {
                level: i,
                residual: positions.len() - found.len(),
            });
        }
        // a corank-2 level filled from the pool leaves the chain assignment
        // ambiguous; remember the pair so the caller may flip it
        if found.len() == 2 && found.iter().all(|(_, _, _, hinted)| !hinted) {
            ambiguous_pairs.push((entries.len(), entries.len() + 1));
        }
        for (chain, position, expr, _) in found {
            push(&mut entries, chain, position, expr);
        }
    }

    finish_chart(entries, (k1, p2, r3), ambiguous_pairs, sys_norm, cfg)
}

/// Order the entries, certify invertibility and solve for the inverse map.
fn finish_chart(
    mut entries: Vec<ChartEntry>,
    dims: (u32, u32, u32),
    ambiguous_pairs: Vec<(usize, usize)>,
    sys_norm: &SystemModel,
    cfg: &Sampling,
) -> Result<CoordinateChart> {
    // keep ambiguity indices valid under the sort by tagging symbols first
    let tagged: Vec<(usize, ChartEntry)> = entries.drain(..).enumerate().collect();
    let mut sorted = tagged.clone();
    sorted.sort_by_key(|(_, e)| (e.chain, e.position));
    let remap: Vec<usize> = sorted.iter().map(|(orig, _)| *orig).collect();
    let ambiguous_pairs = ambiguous_pairs
        .iter()
        .map(|(a, b)| {
            (
                remap.iter().position(|&o| o == *a).expect("entry kept"),
                remap.iter().position(|&o| o == *b).expect("entry kept"),
            )
        })
        .collect();
    let entries: Vec<ChartEntry> = sorted.into_iter().map(|(_, e)| e).collect();

    let n = sys_norm.n();
    if entries.len() != n {
        return Err(Error::Structure(format!(
            "chart has {} entries for {} states",
            entries.len(),
            n
        )));
    }
    let jac_rows: Vec<Vec<Expr>> = entries
        .iter()
        .map(|e| sys_norm.states().iter().map(|x| e.expr.diff(x)).collect())
        .collect();
    let jacobian = ExprMatrix::from_rows(jac_rows).generic_rank(cfg)?;
    if jacobian.rank != n {
        return Err(Error::NotInvertible(format!(
            "chart Jacobian has generic rank {} on {} states",
            jacobian.rank, n
        )));
    }
    // inverse: solve z - Phi(x) = 0 for the states
    let equations: Vec<Expr> = entries
        .iter()
        .map(|e| Expr::sub(Expr::sym(&e.symbol), e.expr.clone()))
        .collect();
    let states: Vec<Symbol> = sys_norm.states().to_vec();
    let (inverse, inverse_guards) = match solve_for(&equations, &states, cfg) {
        Ok(sol) => (Some(sol.assignments), sol.guards),
        Err(_) => (None, Vec::new()),
    };
    Ok(CoordinateChart {
        entries,
        dims,
        inverse,
        inverse_guards,
        jacobian,
        ambiguous_pairs,
    })
}

/// One row of the triangular form.
#[derive(Debug, Clone)]
pub enum RowKind {
    /// Plain integrator: the derivative equals the next chain coordinate.
    Integrator,
    /// The row equals one of the transformed inputs.
    Input(usize),
    /// `a + b1*uhat1 (+ b2*uhat2)`.
    Coefficients { a: Expr, b1: Expr, b2: Expr },
}

#[derive(Debug, Clone)]
pub struct Gtf3Row {
    pub chain: usize,
    pub position: u32,
    /// Row expression in chart coordinates and transformed inputs.
    pub expr: Expr,
    pub kind: RowKind,
}

/// The transformed system in triangular coordinates.
pub struct Gtf3Form {
    pub dims: (u32, u32, u32),
    pub ds: DerivativeStructure,
    pub chart: CoordinateChart,
    pub rows: Vec<Gtf3Row>,
    /// Transformed inputs (uhat1, uhat2, uhat3).
    pub inputs: [Symbol; 3],
    /// Definitions of uhat2 and uhat3 in chart coordinates and original
    /// inputs, with the inverses used to rewrite the dynamics.
    pub u2_transform: (Expr, Expr),
    pub u3_transform: (Expr, Expr),
    /// Inconclusive dependency checks (tainted success).
    pub tainted: Vec<String>,
}

/// Allowed chart variables for a coefficient row, per the triangular
/// dependency pattern.
fn allowed_positions(
    ds: &DerivativeStructure,
    dims: (u32, u32, u32),
    chain: usize,
    position: u32,
) -> Option<[u32; 3]> {
    let (k1, p2, r3) = dims;
    let (k2, k3) = (ds.k.0[1], ds.k.0[2]);
    let p3 = ds.p.0[2];
    let delta = ds.delta;
    match chain {
        1 => {
            // z2 row k2+i, 0 <= i <= p2-k2-1: (z1, z2^{k2+i+1}, z3^{k3+delta+i+1})
            let i = position - k2;
            debug_assert!(position >= k2 && position < p2);
            Some([k1, (k2 + i + 1).min(p2), (k3 + delta + i + 1).min(r3)])
        }
        2 => {
            let i = position - k3;
            if position < p3 {
                // z3 row k3+i, i < p3-k3: (z1, z2^{k2-delta+1+i}, z3^{k3+i+1})
                let z2_top = (k2 + i + 1).saturating_sub(delta).min(p2);
                Some([k1, z2_top, (k3 + i + 1).min(r3)])
            } else {
                // z3 row k3+i, p3-k3 <= i <= r3-k3-1: (z1, z2, z3^{k3+i+1})
                Some([k1, p2, (k3 + i + 1).min(r3)])
            }
        }
        _ => None,
    }
}

/// Rewrite the dynamics in chart coordinates, normalize the second and
/// third inputs, classify every row and verify the dependency pattern.
pub fn build_transformation(
    chart: &CoordinateChart,
    sys_norm: &SystemModel,
    ds: &DerivativeStructure,
    cfg: &Sampling,
) -> Result<Gtf3Form> {
    let Some(inverse) = chart.inverse.clone() else {
        return Err(Error::NotInvertible(
            "chart inverse is not solvable in closed form".to_string(),
        ));
    };
    let (k1, p2, r3) = chart.dims;
    let space = ExtendedSpace::new(sys_norm, 0);
    let field = extended_vector_field(sys_norm, &space);
    let uhat1 = sys_norm.inputs()[0].clone();
    let u2 = sys_norm.inputs()[1].clone();
    let u3 = sys_norm.inputs()[2].clone();

    // zdot rows in (z, uhat1, u2, u3)
    let mut rows_z: Vec<Expr> = Vec::with_capacity(chart.entries.len());
    for e in &chart.entries {
        let dot_x = lie_scalar(&field, &e.expr, &space);
        rows_z.push(dot_x.substitute(&inverse).simplify());
    }

    let taken: Vec<Symbol> = sys_norm
        .states()
        .iter()
        .chain(sys_norm.inputs().iter())
        .chain(chart.entries.iter().map(|e| &e.symbol))
        .cloned()
        .collect();
    let find_row = |chain: usize, position: u32| -> usize {
        chart
            .entries
            .iter()
            .position(|e| e.chain == chain && e.position == position)
            .expect("chart position")
    };

    // uhat2 = f2^{p2}: must depend on u2 invertibly
    let uhat2 = crate::analysis::fresh_symbol("uhat2", &taken, SymbolKind::Input);
    let f2 = rows_z[find_row(1, p2)].clone();
    if !zero_verdict(&f2.diff(&u2).simplify(), cfg).is_no() {
        return Err(Error::NotInvertible(format!(
            "row for the second chain top has no certified dependence on {u2}"
        )));
    }
    let sol2 = solve_for(&[Expr::sub(f2.clone(), Expr::sym(&uhat2))], &[u2.clone()], cfg)?;
    let inv_u2_partial = sol2.assignments[&u2].clone(); // may still involve u3
    let rows_z: Vec<Expr> = rows_z
        .iter()
        .map(|r| r.substitute1(&u2, &inv_u2_partial).simplify())
        .collect();

    // uhat3 = f3^{r3} after the second transformation
    let uhat3 = crate::analysis::fresh_symbol("uhat3", &taken, SymbolKind::Input);
    let f3 = rows_z[find_row(2, r3)].clone();
    if !zero_verdict(&f3.diff(&u3).simplify(), cfg).is_no() {
        return Err(Error::NotInvertible(format!(
            "row for the third chain top has no certified dependence on {u3}"
        )));
    }
    let sol3 = solve_for(&[Expr::sub(f3.clone(), Expr::sym(&uhat3))], &[u3.clone()], cfg)?;
    let inv_u3 = sol3.assignments[&u3].clone();
    let rows_z: Vec<Expr> = rows_z
        .iter()
        .map(|r| r.substitute1(&u3, &inv_u3).simplify())
        .collect();
    let inv_u2 = inv_u2_partial.substitute1(&u3, &inv_u3).simplify();

    // classify rows and verify the pattern
    let inputs = [uhat1.clone(), uhat2.clone(), uhat3.clone()];
    let mut tainted: Vec<String> = Vec::new();
    let mut rows: Vec<Gtf3Row> = Vec::new();
    for (idx, e) in chart.entries.iter().enumerate() {
        let expr = rows_z[idx].clone();
        let chain_len = [k1, p2, r3][e.chain];
        let label = format!("zdot{}_{}", e.chain + 1, e.position);
        let kind = if e.position < chain_len {
            let is_plain_chain = match e.chain {
                0 => true,
                1 => e.position < ds.k.0[1],
                2 => e.position < ds.k.0[2],
                _ => unreachable!(),
            };
            if is_plain_chain {
                let next = chart.entry(e.chain, e.position + 1);
                let residual = Expr::sub(expr.clone(), Expr::sym(&next.symbol));
                match zero_verdict(&residual, cfg) {
                    TriState::Yes => RowKind::Integrator,
                    TriState::No => {
                        return Err(Error::ForbiddenDependency {
                            row: label,
                            detail: "integrator row differs from the next chain coordinate"
                                .to_string(),
                        })
                    }
                    TriState::Inconclusive(r) => {
                        tainted.push(format!("{label}: integrator identity undecided: {r}"));
                        RowKind::Integrator
                    }
                }
            } else {
                classify_coefficient_row(
                    &expr, &inputs, e.chain, e.position, ds, chart.dims, &label, cfg,
                    &mut tainted,
                )?
            }
        } else {
            // chain top: must equal its transformed input exactly
            let which = e.chain;
            let residual = Expr::sub(expr.clone(), Expr::sym(&inputs[which]));
            match zero_verdict(&residual, cfg) {
                TriState::Yes => RowKind::Input(which),
                TriState::No => {
                    return Err(Error::ForbiddenDependency {
                        row: label,
                        detail: "chain top row is not the transformed input".to_string(),
                    })
                }
                TriState::Inconclusive(r) => {
                    tainted.push(format!("{label}: input identity undecided: {r}"));
                    RowKind::Input(which)
                }
            }
        };
        rows.push(Gtf3Row {
            chain: e.chain,
            position: e.position,
            expr,
            kind,
        });
    }

    Ok(Gtf3Form {
        dims: chart.dims,
        ds: ds.clone(),
        chart: chart.clone(),
        rows,
        inputs,
        u2_transform: (f2, inv_u2),
        u3_transform: (f3, inv_u3),
        tainted,
    })
}

#[allow(clippy::too_many_arguments)]
fn classify_coefficient_row(
    expr: &Expr,
    inputs: &[Symbol; 3],
    chain: usize,
    position: u32,
    ds: &DerivativeStructure,
    dims: (u32, u32, u32),
    label: &str,
    cfg: &Sampling,
    tainted: &mut Vec<String>,
) -> Result<RowKind> {
    let p3 = ds.p.0[2];
    let uhat2_allowed = chain == 2 && position >= p3;
    // affine in the transformed inputs
    for u in inputs {
        let second = expr.diff(u).diff(u).simplify();
        if !second.is_zero() && zero_verdict(&second, cfg).is_no() {
            return Err(Error::ForbiddenDependency {
                row: label.to_string(),
                detail: format!("row is not affine in {u}"),
            });
        }
    }
    let b1 = expr.diff(&inputs[0]).simplify();
    let b2 = expr.diff(&inputs[1]).simplify();
    let b3 = expr.diff(&inputs[2]).simplify();
    if !b3.is_zero() {
        match zero_verdict(&b3, cfg) {
            TriState::Yes => {}
            TriState::No => {
                return Err(Error::ForbiddenDependency {
                    row: label.to_string(),
                    detail: "third input enters a coefficient row".to_string(),
                })
            }
            TriState::Inconclusive(r) => tainted.push(format!("{label}: {r}")),
        }
    }
    if !uhat2_allowed && !b2.is_zero() {
        match zero_verdict(&b2, cfg) {
            TriState::Yes => {}
            TriState::No => {
                return Err(Error::ForbiddenDependency {
                    row: label.to_string(),
                    detail: "second input enters before its level".to_string(),
                })
            }
            TriState::Inconclusive(r) => tainted.push(format!("{label}: {r}")),
        }
    }
    let mut zero_inputs = BTreeMap::new();
    zero_inputs.insert(inputs[0].clone(), Expr::zero());
    zero_inputs.insert(inputs[1].clone(), Expr::zero());
    zero_inputs.insert(inputs[2].clone(), Expr::zero());
    let a = expr.substitute(&zero_inputs).simplify();
    // b coefficients must not depend on inputs beyond the affine structure
    for (name, b) in [("b1", &b1), ("b2", &b2)] {
        for u in inputs {
            if b.depends_on(u) {
                let d = b.diff(u).simplify();
                match zero_verdict(&d, cfg) {
                    TriState::Yes => {}
                    TriState::No => {
                        return Err(Error::ForbiddenDependency {
                            row: label.to_string(),
                            detail: format!("{name} depends on {u}"),
                        })
                    }
                    TriState::Inconclusive(r) => tainted.push(format!("{label}: {r}")),
                }
            }
        }
    }
    Ok(RowKind::Coefficients {
        a,
        b1,
        b2: if uhat2_allowed { b2 } else { Expr::zero() },
    })
}

/// Verify the forbidden-dependency pattern of a classified form: for every
/// coefficient row, partial derivatives with respect to chart variables
/// outside the allowed set must vanish identically.
pub fn verify_dependency_pattern(g: &Gtf3Form, cfg: &Sampling) -> Result<Vec<String>> {
    let mut tainted = Vec::new();
    for row in &g.rows {
        if !matches!(row.kind, RowKind::Coefficients { .. }) {
            continue;
        }
        let Some(allowed) = allowed_positions(&g.ds, g.dims, row.chain, row.position) else {
            continue;
        };
        for e in &g.chart.entries {
            if (e.position) <= allowed[e.chain] {
                continue;
            }
            let d = row.expr.diff(&e.symbol).simplify();
            if d.is_zero() {
                continue;
            }
            match zero_verdict(&d, cfg) {
                TriState::Yes => {}
                TriState::No => {
                    return Err(Error::ForbiddenDependency {
                        row: format!("zdot{}_{}", row.chain + 1, row.position),
                        detail: format!("depends on {}", e.symbol),
                    })
                }
                TriState::Inconclusive(r) => tainted.push(format!(
                    "zdot{}_{} vs {}: {r}",
                    row.chain + 1,
                    row.position,
                    e.symbol
                )),
            }
        }
    }
    Ok(tainted)
}

/// Chart extraction plus transformation, retrying chain assignments of
/// ambiguous corank-2 levels until the triangular pattern verifies.
pub fn transform(
    report: &AnalysisReport,
    hints: &ChartHints,
    cfg: &Sampling,
) -> Result<Gtf3Form> {
    let sys_norm = &report.sys_norm;
    let ds = &report.structure;
    let base = extract_coordinates(&report.sequence, ds, sys_norm, hints, cfg)?;
    let pairs = base.ambiguous_pairs.clone();
    let combos = 1usize << pairs.len().min(6);
    let mut last_err: Option<Error> = None;
    for mask in 0..combos {
        let mut chart = base.clone();
        let mut flip_failed = false;
        for (b, pair) in pairs.iter().enumerate() {
            if mask & (1 << b) != 0 {
                match chart.flipped(*pair, sys_norm, cfg) {
                    Ok(c) => chart = c,
                    Err(e) => {
                        last_err = Some(e);
                        flip_failed = true;
                        break;
                    }
                }
            }
        }
        if flip_failed {
            continue;
        }
        match build_transformation(&chart, sys_norm, ds, cfg)
            .and_then(|g| verify_dependency_pattern(&g, cfg).map(|t| (g, t)))
        {
            Ok((mut g, extra_taint)) => {
                g.tainted.extend(extra_taint);
                return Ok(g);
            }
            Err(e @ (Error::ForbiddenDependency { .. } | Error::NotInvertible(_)
                | Error::Unsolvable(_) | Error::SingularSystem(_))) => {
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        Error::Invalid("no chain assignment produced a valid triangular form".to_string())
    }))
}

/// One regularity condition with its verdict.
#[derive(Debug, Clone)]
pub struct RegularityCondition {
    pub label: String,
    /// None marks a vacuous condition (empty index range).
    pub expr: Option<Expr>,
    /// Holds iff the expression is certified nonzero.
    pub outcome: ZeroTest,
}

impl RegularityCondition {
    pub fn holds(&self) -> bool {
        self.outcome.verdict.is_no()
    }

    pub fn vacuous(&self) -> bool {
        self.expr.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub conditions: Vec<RegularityCondition>,
}

impl RegularityReport {
    /// No condition failed outright (vacuous and inconclusive both pass;
    /// inconclusive shows up in the serialized report).
    pub fn acceptable(&self) -> bool {
        self.conditions
            .iter()
            .all(|c| c.vacuous() || !c.outcome.verdict.is_yes())
    }
}

fn vacuous(label: String) -> RegularityCondition {
    RegularityCondition {
        label,
        expr: None,
        outcome: ZeroTest {
            verdict: TriState::Yes,
            witness: None,
        },
    }
}

fn tested(label: String, expr: Expr, cfg: &Sampling) -> RegularityCondition {
    let outcome = is_identically_zero(&expr, cfg);
    RegularityCondition {
        label,
        expr: Some(expr),
        outcome,
    }
}

/// Evaluate the non-vanishing conditions of the triangular form.
pub fn check_regularity(g: &Gtf3Form, cfg: &Sampling) -> RegularityReport {
    let (_, p2, r3) = g.dims;
    let ds = &g.ds;
    let (k2, k3) = (ds.k.0[1], ds.k.0[2]);
    let p3 = ds.p.0[2];
    let delta = ds.delta;
    let mut conditions = Vec::new();

    let row_expr = |chain: usize, position: u32| -> &Expr {
        &g.rows
            .iter()
            .find(|r| r.chain == chain && r.position == position)
            .expect("row exists")
            .expr
    };
    let coeff_b1 = |chain: usize, position: u32| -> Option<Expr> {
        g.rows
            .iter()
            .find(|r| r.chain == chain && r.position == position)
            .and_then(|r| match &r.kind {
                RowKind::Coefficients { b1, .. } => Some(b1.clone()),
                _ => None,
            })
    };

    // leading input coefficients of both coupled chains
    if p2 > k2 {
        match coeff_b1(1, k2) {
            Some(b) => conditions.push(tested("b2_{k2,1} != 0".to_string(), b, cfg)),
            None => conditions.push(vacuous("b2_{k2,1} != 0".to_string())),
        }
    } else {
        conditions.push(vacuous("b2_{k2,1} != 0".to_string()));
    }
    if r3 > k3 {
        match coeff_b1(2, k3) {
            Some(b) => conditions.push(tested("b3_{k3,1} != 0".to_string(), b, cfg)),
            None => conditions.push(vacuous("b3_{k3,1} != 0".to_string())),
        }
    } else {
        conditions.push(vacuous("b3_{k3,1} != 0".to_string()));
    }

    // first block: derivative of the early third-chain rows with respect to
    // the next coordinate
    if delta == 0 {
        conditions.push(vacuous("block1 (empty range)".to_string()));
    } else {
        for i in 0..delta {
            let row = row_expr(2, k3 + i);
            let next = g.chart.entry(2, k3 + i + 1);
            conditions.push(tested(
                format!("block1 i={i}"),
                row.diff(&next.symbol).simplify(),
                cfg,
            ));
        }
    }

    // second block: coupled 2x2 determinant
    if p2 == k2 {
        conditions.push(vacuous("block2 (empty range)".to_string()));
    } else {
        for i in 0..(p2 - k2) {
            let r2 = row_expr(1, k2 + i);
            let r3row = row_expr(2, k3 + delta + i);
            let v2 = &g.chart.entry(1, k2 + i + 1).symbol;
            let v3 = &g.chart.entry(2, k3 + delta + i + 1).symbol;
            let m = ExprMatrix::from_rows(vec![
                vec![r2.diff(v2), r2.diff(v3)],
                vec![r3row.diff(v2), r3row.diff(v3)],
            ]);
            conditions.push(tested(
                format!("block2 i={i}"),
                determinant(&m).simplify(),
                cfg,
            ));
        }
    }

    // third block: late third-chain rows
    if p3 == r3 {
        conditions.push(vacuous("block3 (empty range)".to_string()));
    } else {
        for i in (p3 - k3)..(r3 - k3) {
            let row = row_expr(2, k3 + i);
            let next = g.chart.entry(2, k3 + i + 1);
            conditions.push(tested(
                format!("block3 i={i}"),
                row.diff(&next.symbol).simplify(),
                cfg,
            ));
        }
    }

    RegularityReport { conditions }
}

/// The flat parameterization: states and original inputs of the analyzed
/// system expressed in the flat output and its time derivatives.
pub struct FlatParameterization {
    /// Per state of the analyzed system.
    pub states: Vec<(Symbol, Expr)>,
    /// Per input of the analyzed system (pre-normalization labels).
    pub inputs: Vec<(Symbol, Expr)>,
    /// Expressions in the flat jets that must stay nonzero.
    pub guards: Vec<Expr>,
    pub r: MultiIndex,
    /// flat_jets[j][l] is the l-th derivative symbol of component j.
    pub flat_jets: Vec<Vec<Symbol>>,
}

impl FlatParameterization {
    pub fn jet_symbol(&self, component: usize, order: u32) -> &Symbol {
        &self.flat_jets[component][order as usize]
    }
}

/// Total time derivative in the flat jets: shift every jet symbol one
/// order up.
fn jet_shift(e: &Expr, flat_jets: &[Vec<Symbol>]) -> Expr {
    let mut terms = Vec::new();
    for jets in flat_jets {
        for (l, sym) in jets.iter().enumerate() {
            if l + 1 >= jets.len() {
                break;
            }
            if e.depends_on(sym) {
                terms.push(Expr::mul2(e.diff(sym), Expr::sym(&jets[l + 1])));
            }
        }
    }
    Expr::add(terms)
}

fn dedup_guards(guards: Vec<Expr>) -> Vec<Expr> {
    let mut out: Vec<Expr> = Vec::new();
    for g in guards {
        let g = g.simplify();
        if g.as_rational().is_some() {
            continue;
        }
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

/// Top-to-bottom parameterization of the triangular form, then composition
/// with the chart inverse and the input transformations.
pub fn parameterize(
    g: &Gtf3Form,
    report: &AnalysisReport,
    cfg: &Sampling,
) -> Result<FlatParameterization> {
    let ds = &g.ds;
    let (k1, p2, r3) = g.dims;
    let (k2, k3) = (ds.k.0[1], ds.k.0[2]);
    let p3 = ds.p.0[2];
    let delta = ds.delta;
    let r = ds.r;

    // flat jet symbols y{j}, y{j}_{l}; one order above R is needed while
    // forming the input expressions before they telescope
    let taken: Vec<Symbol> = report
        .sys_norm
        .states()
        .iter()
        .chain(report.sys_norm.inputs().iter())
        .chain(g.chart.entries.iter().map(|e| &e.symbol))
        .cloned()
        .collect();
    let mut flat_jets: Vec<Vec<Symbol>> = Vec::new();
    for j in 0..3 {
        let base = crate::analysis::fresh_symbol(&format!("y{}", j + 1), &taken, SymbolKind::FlatJet);
        let mut chain = vec![base.clone()];
        for l in 1..=r.0[j] {
            chain.push(Symbol::jet(
                Symbol::jet_name(base.name(), l),
                SymbolKind::FlatJet,
                l,
            ));
        }
        flat_jets.push(chain);
    }

    let mut w: BTreeMap<Symbol, Expr> = BTreeMap::new();
    let mut guards: Vec<Expr> = Vec::new();
    // step 1: integrator chains and the first input
    for j in 0..3 {
        for l in 0..ds.k.0[j] {
            let entry = g.chart.entry(j, l + 1);
            w.insert(entry.symbol.clone(), Expr::sym(&flat_jets[j][l as usize]));
        }
    }
    let mut u_map: BTreeMap<Symbol, Expr> = BTreeMap::new();
    u_map.insert(
        g.inputs[0].clone(),
        Expr::sym(&flat_jets[0][ds.k.0[0] as usize]),
    );

    let row_expr = |chain: usize, position: u32| -> &Expr {
        &g.rows
            .iter()
            .find(|r| r.chain == chain && r.position == position)
            .expect("row exists")
            .expr
    };
    // Each level is solved once in the small z-coordinate form with a
    // placeholder for the left-hand jet value; the flat-jet expressions are
    // substituted into the closed-form solution afterwards. Solving over
    // the already-flattened jet expressions instead makes the intermediate
    // equations explode.
    let mut solve_level = |w: &mut BTreeMap<Symbol, Expr>,
                           u_map: &BTreeMap<Symbol, Expr>,
                           guards: &mut Vec<Expr>,
                           eq_rows: Vec<(usize, u32)>,
                           unknowns: Vec<Symbol>|
     -> Result<()> {
        let mut eqs_z = Vec::new();
        let mut lhs_subst: BTreeMap<Symbol, Expr> = BTreeMap::new();
        for (idx, (chain, position)) in eq_rows.iter().enumerate() {
            let entry = g.chart.entry(*chain, *position);
            let placeholder = Symbol::new(format!("lhs{idx}__"), SymbolKind::Parameter);
            let lhs_y = jet_shift(&w[&entry.symbol], &flat_jets);
            lhs_subst.insert(placeholder.clone(), lhs_y);
            eqs_z.push(Expr::sub(
                Expr::sym(&placeholder),
                row_expr(*chain, *position).clone(),
            ));
        }
        let dbg = std::env::var_os("XFLAT_PARAM_DEBUG").is_some();
        let t0 = std::time::Instant::now();
        let sol = solve_for(&eqs_z, &unknowns, cfg).map_err(|e| {
            Error::Unsolvable(format!(
                "parameterization level for {:?}: {e}",
                unknowns
                    .iter()
                    .map(|u| u.name().to_string())
                    .collect::<Vec<_>>()
            ))
        })?;
        if dbg {
            eprintln!(
                "level {:?}: z-solve {:?}",
                unknowns.iter().map(|u| u.name().to_string()).collect::<Vec<_>>(),
                t0.elapsed()
            );
        }
        for gz in &sol.guards {
            let gy = crate::poly::substitute_normal(
                &crate::poly::substitute_normal(&crate::poly::substitute_normal(gz, &lhs_subst), u_map),
                w,
            );
            guards.push(gy);
        }
        for (sym, val_z) in sol.assignments {
            let val_y = crate::poly::substitute_normal(
                &crate::poly::substitute_normal(
                    &crate::poly::substitute_normal(&val_z, &lhs_subst),
                    u_map,
                ),
                w,
            );
            if dbg {
                eprintln!(
                    "  {} -> y-form {:?} ({} chars)",
                    sym,
                    t0.elapsed(),
                    val_y.to_string().len()
                );
            }
            guards.extend(denominator_guards(&val_y, Vec::new()));
            w.insert(sym, val_y);
        }
        Ok(())
    };

    // step 2: early third-chain states
    for i in 0..delta {
        let unknown = g.chart.entry(2, k3 + i + 1).symbol.clone();
        solve_level(&mut w, &u_map, &mut guards, vec![(2, k3 + i)], vec![unknown])?;
    }
    // step 3: coupled pairs, then the second input
    for i in 0..(p2 - k2) {
        let u2 = g.chart.entry(1, k2 + i + 1).symbol.clone();
        let u3 = g.chart.entry(2, k3 + delta + i + 1).symbol.clone();
        solve_level(
            &mut w,
            &u_map,
            &mut guards,
            vec![(1, k2 + i), (2, k3 + delta + i)],
            vec![u2, u3],
        )?;
    }
    {
        let t0 = std::time::Instant::now();
        let top2 = g.chart.entry(1, p2).symbol.clone();
        let value = crate::poly::rational_normal(&jet_shift(&w[&top2], &flat_jets));
        if std::env::var_os("XFLAT_PARAM_DEBUG").is_some() {
            eprintln!("uhat2 value {:?} ({} chars)", t0.elapsed(), value.to_string().len());
        }
        u_map.insert(g.inputs[1].clone(), value);
    }
    // step 4: remaining third-chain states, then the third input
    for i in (p3 - k3)..(r3 - k3) {
        let unknown = g.chart.entry(2, k3 + i + 1).symbol.clone();
        solve_level(&mut w, &u_map, &mut guards, vec![(2, k3 + i)], vec![unknown])?;
    }
    {
        let t0 = std::time::Instant::now();
        let top3 = g.chart.entry(2, r3).symbol.clone();
        let value = crate::poly::rational_normal(&jet_shift(&w[&top3], &flat_jets));
        if std::env::var_os("XFLAT_PARAM_DEBUG").is_some() {
            eprintln!("uhat3 value {:?} ({} chars)", t0.elapsed(), value.to_string().len());
        }
        u_map.insert(g.inputs[2].clone(), value);
    }

    // compose with the chart inverse for the states
    let inverse = g
        .chart
        .inverse
        .as_ref()
        .ok_or_else(|| Error::NotInvertible("chart inverse unavailable".to_string()))?;
    let mut states = Vec::new();
    for x in report.sys_norm.states() {
        let in_z = inverse[x].clone();
        let in_y = crate::poly::substitute_normal(&in_z, &w);
        guards = denominator_guards(&in_y, guards);
        states.push((x.clone(), in_y));
    }
    for gexpr in &g.chart.inverse_guards {
        guards.push(crate::poly::substitute_normal(gexpr, &w));
    }

    // original inputs: undo uhat3, uhat2, uhat1 in that order
    let subst_all = |e: &Expr| -> Expr {
        // z and uhat symbols -> flat jets
        crate::poly::substitute_normal(&crate::poly::substitute_normal(e, &u_map), &w)
    };
    let (_, inv_u2) = &g.u2_transform;
    let (_, inv_u3) = &g.u3_transform;
    let u2_orig = report.sys_norm.inputs()[1].clone();
    let u3_orig = report.sys_norm.inputs()[2].clone();
    let u3_in_y = subst_all(inv_u3);
    let u2_in_y = subst_all(inv_u2);
    // the first original input through the analysis-time inverse
    let tr = &report.input_transform;
    let mut env: BTreeMap<Symbol, Expr> = BTreeMap::new();
    for (x, fx) in &states {
        env.insert(x.clone(), fx.clone());
    }
    env.insert(tr.new_input.clone(), u_map[&g.inputs[0]].clone());
    env.insert(u2_orig.clone(), u2_in_y.clone());
    env.insert(u3_orig.clone(), u3_in_y.clone());
    let u1_in_y = crate::poly::substitute_normal(&tr.inverse, &env);
    guards = denominator_guards(&u1_in_y, guards);
    guards = denominator_guards(&u2_in_y, guards);
    guards = denominator_guards(&u3_in_y, guards);

    // report inputs in the original order of the analyzed system: the
    // normalized list minus uhat1, with the replaced input re-inserted at
    // its original index
    let mut inputs = vec![(u2_orig, u2_in_y), (u3_orig, u3_in_y)];
    inputs.insert(
        tr.replaced_index.min(inputs.len()),
        (tr.replaced.clone(), u1_in_y),
    );

    // jet orders must respect the parameterization bounds
    let max_order = |e: &Expr, j: usize| -> u32 {
        flat_jets[j]
            .iter()
            .enumerate()
            .filter(|(_, sym)| e.depends_on(sym))
            .map(|(l, _)| l as u32)
            .max()
            .unwrap_or(0)
    };
    for (x, fx) in &states {
        for j in 0..3 {
            if max_order(fx, j) + 1 > r.0[j] {
                return Err(Error::Structure(format!(
                    "state {x} uses flat jets of component {} beyond order r-1",
                    j + 1
                )));
            }
        }
    }
    for (u, fu) in &inputs {
        for j in 0..3 {
            if max_order(fu, j) > r.0[j] {
                return Err(Error::Structure(format!(
                    "input {u} uses flat jets of component {} beyond order r",
                    j + 1
                )));
            }
        }
    }

    Ok(FlatParameterization {
        states,
        inputs,
        guards: dedup_guards(guards),
        r,
        flat_jets,
    })
}
