//! Matrices of expressions and exact linear algebra over the field of
//! rational expressions.
//!
//! Elimination runs fraction-free: rows are cleared of denominators, pivot
//! steps use cross-multiplication `p*row - q*pivot_row`, and every updated
//! row is divided by the gcd of its entries to keep coefficients small.
//! Pivots are chosen by lowest total degree, ties broken by column order,
//! which makes reduced bases deterministic. Symbolic ranks are cross-checked
//! numerically at random rational points; a disagreement is reported as an
//! inconclusive error rather than silently trusted.

use num_traits::{One, Signed};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::numeric::{eval, SamplePoint, Sampling};
use crate::poly::{frac_from_expr, poly_to_expr, AtomTable, MPoly};
use crate::symbol::Symbol;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExprMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Expr>,
}

impl ExprMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Expr>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        ExprMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<Expr>>) -> Self {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        ExprMatrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ExprMatrix {
            rows,
            cols,
            data: vec![Expr::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Expr::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, e: Expr) {
        self.data[i * self.cols + j] = e;
    }

    pub fn row(&self, i: usize) -> &[Expr] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vecs(&self) -> Vec<Vec<Expr>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Vertical concatenation.
    pub fn stack(&self, other: &ExprMatrix) -> ExprMatrix {
        assert_eq!(self.cols, other.cols, "stack: column count mismatch");
        let mut data = self.data.clone();
        data.extend(other.data.iter().cloned());
        ExprMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    /// Column submatrix.
    pub fn select_cols(&self, cols: &[usize]) -> ExprMatrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            for &j in cols {
                data.push(self.get(i, j).clone());
            }
        }
        ExprMatrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    pub fn mul(&self, other: &ExprMatrix) -> ExprMatrix {
        assert_eq!(self.cols, other.rows, "mul: dimension mismatch");
        let mut data = Vec::with_capacity(self.rows * other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let terms: Vec<Expr> = (0..self.cols)
                    .map(|k| Expr::mul2(self.get(i, k).clone(), other.get(k, j).clone()))
                    .collect();
                data.push(Expr::add(terms));
            }
        }
        ExprMatrix {
            rows: self.rows,
            cols: other.cols,
            data,
        }
    }

    pub fn free_symbols(&self) -> Vec<Symbol> {
        let mut set = std::collections::BTreeSet::new();
        for e in &self.data {
            set.extend(e.free_symbols());
        }
        set.into_iter().collect()
    }

    /// Generic rank over the rational-expression field together with its
    /// certificate. Errors with [`Error::RankInconclusive`] when the
    /// symbolic and sampled ranks disagree persistently.
    pub fn generic_rank(&self, cfg: &Sampling) -> Result<RankCertificate> {
        if self.rows == 0 || self.cols == 0 {
            return Ok(RankCertificate {
                rank: 0,
                pivot_rows: vec![],
                pivot_cols: vec![],
                point: SamplePoint {
                    assignment: Default::default(),
                },
            });
        }
        let elim = Eliminated::forward(self);
        let rank = elim.pivots.len();
        let symbols = self.free_symbols();
        let mut rng = cfg.rng();
        let mut last_sampled = 0usize;
        let attempts = 4;
        for attempt in 0..attempts {
            let point = cfg.sample_point(&symbols, &mut rng, attempt == 0 && !cfg.preferred.is_empty());
            let Some(num) = self.eval_at(&point) else {
                continue; // pole: try another point
            };
            let sampled = numeric_rank(&num, self.rows, self.cols);
            last_sampled = sampled;
            if sampled == rank {
                return Ok(RankCertificate {
                    rank,
                    pivot_rows: elim.pivots.iter().map(|p| p.row).collect(),
                    pivot_cols: elim.pivots.iter().map(|p| p.col).collect(),
                    point,
                });
            }
            // sampled < rank can be an unlucky point on a minor's zero set;
            // sampled > rank means the symbolic elimination dropped a row it
            // should not have (atom relations) - retry, then give up
        }
        Err(Error::RankInconclusive {
            symbolic: rank,
            sampled: last_sampled,
        })
    }

    fn eval_at(&self, point: &SamplePoint) -> Option<Vec<f64>> {
        let env = point.to_f64_env();
        let mut out = Vec::with_capacity(self.data.len());
        for e in &self.data {
            match eval(e, &env) {
                Ok(v) => out.push(v),
                Err(_) => return None,
            }
        }
        Some(out)
    }

    /// Basis of left-kernel rows r with r * M = 0; row count equals
    /// rows(M) - generic_rank(M).
    pub fn left_nullspace(&self, cfg: &Sampling) -> Result<ExprMatrix> {
        let rank_cert = self.generic_rank(cfg)?;
        let elim = Eliminated::forward_augmented(self);
        let mut basis_rows: Vec<Vec<Expr>> = Vec::new();
        for (i, row) in elim.main.iter().enumerate() {
            if row.iter().all(|p| p.is_zero()) {
                basis_rows.push(elim.output_row(i, true));
            }
        }
        debug_assert_eq!(basis_rows.len(), self.rows - rank_cert.rank);
        if basis_rows.is_empty() {
            return Ok(ExprMatrix::zeros(0, self.rows));
        }
        // reduce the kernel rows themselves so the basis is canonical
        ExprMatrix::from_rows(basis_rows).reduced_row_basis(cfg)
    }

    /// Deterministic reduced row basis of the row span: full fraction-free
    /// reduction, content-normalized rows sorted by pivot column.
    pub fn reduced_row_basis(&self, _cfg: &Sampling) -> Result<ExprMatrix> {
        let elim = Eliminated::forward(self);
        let mut rows: Vec<(usize, Vec<Expr>)> = Vec::new();
        for p in &elim.pivots {
            rows.push((p.col, elim.output_row(p.row, false)));
        }
        rows.sort_by_key(|(c, _)| *c);
        if rows.is_empty() {
            return Ok(ExprMatrix::zeros(0, self.cols));
        }
        Ok(ExprMatrix::from_rows(
            rows.into_iter().map(|(_, r)| r).collect(),
        ))
    }
}

/// Rank plus the genericity certificate: the pivot minor of the original
/// matrix is numerically nonsingular at `point`.
#[derive(Debug, Clone)]
pub struct RankCertificate {
    pub rank: usize,
    pub pivot_rows: Vec<usize>,
    pub pivot_cols: Vec<usize>,
    pub point: SamplePoint,
}

struct Pivot {
    row: usize,
    col: usize,
}

/// Fraction-free (one-step Bareiss) Gauss-Jordan eliminated copy,
/// optionally with an augmented identity tracking the row operations for
/// kernel extraction. Every step updates all rows through
/// `(p*row - q*pivot_row) / prev_pivot`, where the division is exact, so
/// entries stay minors of the input and never grow past determinant size.
struct Eliminated {
    main: Vec<Vec<MPoly>>,
    aug: Vec<Vec<MPoly>>,
    pivots: Vec<Pivot>,
    table: AtomTable,
}

impl Eliminated {
    fn forward(m: &ExprMatrix) -> Eliminated {
        Self::run(m, false)
    }

    fn forward_augmented(m: &ExprMatrix) -> Eliminated {
        Self::run(m, true)
    }

    fn run(m: &ExprMatrix, augmented: bool) -> Eliminated {
        let mut table = AtomTable::new();
        let mut main: Vec<Vec<MPoly>> = Vec::with_capacity(m.rows);
        let mut aug: Vec<Vec<MPoly>> = Vec::with_capacity(m.rows);
        for i in 0..m.rows {
            let fracs: Vec<_> = m
                .row(i)
                .iter()
                .map(|e| frac_from_expr(e, &mut table))
                .collect();
            // common denominator for the row (a tracked row scaling)
            let mut common = crate::poly::Factors::one();
            for f in &fracs {
                common = common.lcm_public(&f.den);
            }
            let row: Vec<MPoly> = fracs
                .iter()
                .map(|f| f.num.mul(&common.cofactor_public(&f.den)))
                .collect();
            let mut aug_row = vec![MPoly::zero(); if augmented { m.rows } else { 0 }];
            if augmented {
                aug_row[i] = common.expanded();
            }
            main.push(row);
            aug.push(aug_row);
        }
        let mut state = Eliminated {
            main,
            aug,
            pivots: Vec::new(),
            table,
        };
        state.gauss_jordan(m.rows, m.cols);
        state
    }

    /// One-step fraction-free Gauss-Jordan: iterate the columns in order,
    /// pick the cheapest unpivoted nonzero entry as pivot, and update every
    /// other row with exact division by the previous pivot.
    fn gauss_jordan(&mut self, rows: usize, cols: usize) {
        let mut pivoted = vec![false; rows];
        let mut prev = MPoly::one();
        for col in 0..cols {
            let mut best: Option<((u32, usize), usize)> = None;
            for (r, done) in pivoted.iter().enumerate().take(rows) {
                if *done || self.main[r][col].is_zero() {
                    continue;
                }
                let cost = (
                    self.main[r][col].total_degree(),
                    self.main[r][col].terms.len(),
                );
                if best.map(|(c, _)| cost < c).unwrap_or(true) {
                    best = Some((cost, r));
                }
            }
            let Some((_, prow)) = best else { continue };
            pivoted[prow] = true;
            self.pivots.push(Pivot { row: prow, col });
            let p = self.main[prow][col].clone();
            for r in 0..rows {
                if r == prow {
                    continue;
                }
                let q = self.main[r][col].clone();
                let width = self.main[r].len();
                for j in 0..width {
                    let fresh = bareiss_update(
                        &self.main[r][j],
                        &p,
                        &q,
                        &self.main[prow][j],
                        &prev,
                    );
                    self.main[r][j] = fresh;
                }
                for j in 0..self.aug[r].len() {
                    let fresh = bareiss_update(
                        &self.aug[r][j],
                        &p,
                        &q,
                        &self.aug[prow][j],
                        &prev,
                    );
                    self.aug[r][j] = fresh;
                }
            }
            prev = p;
        }
    }

    fn output_row(&self, r: usize, take_aug: bool) -> Vec<Expr> {
        let polys = if take_aug { &self.aug[r] } else { &self.main[r] };
        let mut row = polys.clone();
        output_normalize(&mut row);
        row.iter().map(|p| poly_to_expr(p, &self.table)).collect()
    }
}

/// `(p*a - q*b) / prev`, exact. Exactness is the Bareiss invariant; if it
/// ever fails (which would indicate an atom-level relation the polynomial
/// view cannot see), fall back to the undivided cross-multiplication, which
/// only costs growth, never correctness.
fn bareiss_update(a: &MPoly, p: &MPoly, q: &MPoly, b: &MPoly, prev: &MPoly) -> MPoly {
    let raw = a.mul(p).sub(&q.mul(b));
    if raw.is_zero() {
        return raw;
    }
    if let Some(c) = prev.as_constant() {
        return raw.scale(&c.recip());
    }
    match raw.div_exact(prev) {
        Some(exact) => exact,
        None => {
            debug_assert!(false, "bareiss division was not exact");
            raw
        }
    }
}

/// Divide a finished row by its content: rational content and the common
/// monomial factor always, the full polynomial gcd only while the row stays
/// small; finally normalize the sign of the leading entry.
fn output_normalize(row: &mut [MPoly]) {
    let nonzero = row.iter().filter(|p| !p.is_zero()).count();
    if nonzero == 0 {
        return;
    }
    let total_terms: usize = row.iter().map(|p| p.terms.len()).sum();
    if total_terms <= 160 {
        let mut g = MPoly::zero();
        for p in row.iter() {
            if p.is_zero() {
                continue;
            }
            g = g.gcd(p);
            if g.as_constant().map(|c| c.is_one()).unwrap_or(false) {
                break;
            }
        }
        if !g.is_zero() && g.as_constant().map(|c| !c.is_one()).unwrap_or(true) {
            for p in row.iter_mut() {
                if !p.is_zero() {
                    *p = p.div_exact(&g).expect("content divides");
                }
            }
        }
    } else {
        // large rows: rational content only
        let mut scale: Option<num_rational::BigRational> = None;
        for p in row.iter() {
            for c in p.terms.values() {
                scale = Some(match scale {
                    None => c.clone(),
                    Some(s) => rational_gcd(&s, c),
                });
            }
        }
        if let Some(s) = scale {
            if !s.is_one() && !num_traits::Zero::is_zero(&s) {
                for p in row.iter_mut() {
                    *p = p.scale(&s.recip());
                }
            }
        }
    }
    let lead_negative = row
        .iter()
        .find(|p| !p.is_zero())
        .map(|p| {
            p.terms
                .iter()
                .next_back()
                .map(|(_, c)| c.is_negative())
                .unwrap_or(false)
        })
        .unwrap_or(false);
    if lead_negative {
        for p in row.iter_mut() {
            *p = p.neg();
        }
    }
}

fn rational_gcd(
    a: &num_rational::BigRational,
    b: &num_rational::BigRational,
) -> num_rational::BigRational {
    use num_integer::Integer;
    num_rational::BigRational::new(
        a.numer().gcd(b.numer()),
        a.denom().lcm(b.denom()),
    )
}

/// Numeric rank by Gaussian elimination with partial pivoting.
pub fn numeric_rank(data: &[f64], rows: usize, cols: usize) -> usize {
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|i| data[i * cols..(i + 1) * cols].to_vec())
        .collect();
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    let tol = 1e-10 * scale;
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        if row >= rows {
            break;
        }
        let (best, bestval) = (row..rows)
            .map(|r| (r, m[r][col].abs()))
            .fold((row, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if bestval <= tol {
            continue;
        }
        m.swap(row, best);
        for r in 0..rows {
            if r != row && m[r][col] != 0.0 {
                let f = m[r][col] / m[row][col];
                for c in col..cols {
                    m[r][c] -= f * m[row][c];
                }
            }
        }
        rank += 1;
        row += 1;
    }
    rank
}

/// Determinant by cofactor expansion; intended for the small systems the
/// solver and the regularity checks produce.
pub fn determinant(m: &ExprMatrix) -> Expr {
    assert_eq!(m.rows(), m.cols(), "determinant of non-square matrix");
    let n = m.rows();
    match n {
        0 => Expr::one(),
        1 => m.get(0, 0).clone(),
        2 => Expr::sub(
            Expr::mul2(m.get(0, 0).clone(), m.get(1, 1).clone()),
            Expr::mul2(m.get(0, 1).clone(), m.get(1, 0).clone()),
        ),
        _ => {
            let mut terms = Vec::with_capacity(n);
            for j in 0..n {
                if m.get(0, j).is_zero() {
                    continue;
                }
                let minor_rows: Vec<Vec<Expr>> = (1..n)
                    .map(|i| {
                        (0..n)
                            .filter(|&c| c != j)
                            .map(|c| m.get(i, c).clone())
                            .collect()
                    })
                    .collect();
                let minor = determinant(&ExprMatrix::from_rows(minor_rows));
                let signed = if j % 2 == 0 {
                    Expr::mul2(m.get(0, j).clone(), minor)
                } else {
                    Expr::neg(Expr::mul2(m.get(0, j).clone(), minor))
                };
                terms.push(signed);
            }
            Expr::add(terms)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::{Symbol, SymbolKind};

    fn sym(name: &str) -> Expr {
        Expr::sym(&Symbol::new(name, SymbolKind::State))
    }

    #[test]
    fn identity_rank() {
        let cfg = Sampling::default();
        let m = ExprMatrix::identity(3);
        assert_eq!(m.generic_rank(&cfg).unwrap().rank, 3);
    }

    #[test]
    fn proportional_rows_rank_one() {
        // rows (1, u1) and (u1, u1^2)
        let cfg = Sampling::default();
        let u = sym("u1");
        let m = ExprMatrix::from_rows(vec![
            vec![Expr::one(), u.clone()],
            vec![u.clone(), Expr::powi(u.clone(), 2)],
        ]);
        assert_eq!(m.generic_rank(&cfg).unwrap().rank, 1);
    }

    #[test]
    fn left_nullspace_zero_column() {
        let cfg = Sampling::default();
        let m = ExprMatrix::zeros(3, 1);
        let ns = m.left_nullspace(&cfg).unwrap();
        assert_eq!(ns.rows(), 3);
    }

    #[test]
    fn left_nullspace_identity_empty() {
        let cfg = Sampling::default();
        let m = ExprMatrix::identity(3);
        let ns = m.left_nullspace(&cfg).unwrap();
        assert_eq!(ns.rows(), 0);
    }

    #[test]
    fn left_nullspace_annihilates() {
        let cfg = Sampling::default();
        let (x, u) = (sym("x"), sym("u"));
        // rows: (1, u), (u, u^2), (x, 0) -> rank 2, kernel dim 1
        let m = ExprMatrix::from_rows(vec![
            vec![Expr::one(), u.clone()],
            vec![u.clone(), Expr::powi(u.clone(), 2)],
            vec![x.clone(), Expr::zero()],
        ]);
        let ns = m.left_nullspace(&cfg).unwrap();
        assert_eq!(ns.rows(), 1);
        let product = ns.mul(&m);
        for i in 0..product.rows() {
            for j in 0..product.cols() {
                assert!(
                    crate::numeric::is_identically_zero(product.get(i, j), &cfg)
                        .verdict
                        .is_yes(),
                    "entry ({i},{j}) = {}",
                    product.get(i, j)
                );
            }
        }
    }

    #[test]
    fn reduced_basis_of_state_span_is_identity_rows() {
        let cfg = Sampling::default();
        let u = sym("u");
        // rows span e1, e2 in disguise
        let m = ExprMatrix::from_rows(vec![
            vec![Expr::one(), u.clone()],
            vec![Expr::zero(), Expr::one()],
        ]);
        let b = m.reduced_row_basis(&cfg).unwrap();
        assert_eq!(b, ExprMatrix::identity(2));
    }

    #[test]
    fn determinant_2x2() {
        let (a, b) = (sym("a"), sym("b"));
        let m = ExprMatrix::from_rows(vec![
            vec![a.clone(), b.clone()],
            vec![b.clone(), a.clone()],
        ]);
        let det = determinant(&m);
        let expected = Expr::sub(Expr::powi(a, 2), Expr::powi(b, 2));
        assert_eq!(det, expected);
    }
}
