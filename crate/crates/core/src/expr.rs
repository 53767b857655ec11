//! Exact symbolic expressions over rational constants and symbols.
//!
//! Trees are kept in a canonical form maintained by the smart constructors
//! ([`Expr::add`], [`Expr::mul`], [`Expr::pow`], [`Expr::fun`]): sums and
//! products are flattened and sorted, like terms and like factors are
//! collected, constants are folded exactly, and `sin^2 + cos^2` pairs with
//! matching coefficients collapse. Anything built through the constructors
//! stays canonical, so [`Expr::simplify`] is a defensive rebuild rather than
//! a separate rule engine.
//!
//! Constants are exact `BigRational`s throughout; nothing in this module
//! rounds. Powers carry a rational-constant exponent by construction, which
//! is what keeps the tree closed under differentiation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::symbol::Symbol;

/// Unary function heads. `sqrt` from the surface grammar is normalized to
/// a `1/2` power at parse time and only reappears when printing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }
}

/// Symbolic expression in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Num(BigRational),
    Sym(Symbol),
    /// Flattened sorted sum with at least two entries and no zero term.
    Add(Vec<Expr>),
    /// Flattened sorted product; a constant coefficient, if any, sits first.
    Mul(Vec<Expr>),
    /// Base raised to a rational constant exponent other than 0 and 1.
    Pow(Box<Expr>, BigRational),
    Fun(Func, Box<Expr>),
}

fn variant_rank(e: &Expr) -> u8 {
    match e {
        Expr::Num(_) => 0,
        Expr::Sym(_) => 1,
        Expr::Fun(_, _) => 2,
        Expr::Pow(_, _) => 3,
        Expr::Mul(_) => 4,
        Expr::Add(_) => 5,
    }
}

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Expr {
    fn cmp(&self, other: &Self) -> Ordering {
        match variant_rank(self).cmp(&variant_rank(other)) {
            Ordering::Equal => {}
            ord => return ord,
        }
        match (self, other) {
            (Expr::Num(a), Expr::Num(b)) => a.cmp(b),
            (Expr::Sym(a), Expr::Sym(b)) => a.cmp(b),
            (Expr::Fun(fa, a), Expr::Fun(fb, b)) => fa.cmp(fb).then_with(|| a.cmp(b)),
            (Expr::Pow(ba, ea), Expr::Pow(bb, eb)) => ba.cmp(bb).then_with(|| ea.cmp(eb)),
            (Expr::Mul(a), Expr::Mul(b)) | (Expr::Add(a), Expr::Add(b)) => a.cmp(b),
            _ => unreachable!("ranks matched"),
        }
    }
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Num(BigRational::zero())
    }

    pub fn one() -> Expr {
        Expr::Num(BigRational::one())
    }

    pub fn int(n: i64) -> Expr {
        Expr::Num(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn rat(num: i64, den: i64) -> Expr {
        Expr::Num(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn num(r: BigRational) -> Expr {
        Expr::Num(r)
    }

    pub fn sym(s: &Symbol) -> Expr {
        Expr::Sym(s.clone())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Num(r) if r.is_one())
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        match self {
            Expr::Num(r) => Some(r),
            _ => None,
        }
    }

    /// Canonical sum of the given operands.
    pub fn add(terms: Vec<Expr>) -> Expr {
        // coefficient per term core, plus the constant accumulator
        let mut constant = BigRational::zero();
        let mut cores: BTreeMap<Expr, BigRational> = BTreeMap::new();
        let mut stack = terms;
        while let Some(t) = stack.pop() {
            match t {
                Expr::Num(r) => constant += r,
                Expr::Add(inner) => stack.extend(inner),
                other => {
                    let (coeff, core) = split_coefficient(other);
                    *cores.entry(core).or_insert_with(BigRational::zero) += coeff;
                }
            }
        }
        collapse_trig_squares(&mut cores, &mut constant);
        let mut out: Vec<Expr> = Vec::with_capacity(cores.len() + 1);
        if !constant.is_zero() {
            out.push(Expr::Num(constant));
        }
        for (core, coeff) in cores {
            if coeff.is_zero() {
                continue;
            }
            out.push(attach_coefficient(coeff, core));
        }
        match out.len() {
            0 => Expr::zero(),
            1 => out.pop().unwrap(),
            _ => {
                out.sort();
                Expr::Add(out)
            }
        }
    }

    pub fn add2(a: Expr, b: Expr) -> Expr {
        Expr::add(vec![a, b])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::add(vec![a, Expr::neg(b)])
    }

    pub fn neg(e: Expr) -> Expr {
        Expr::mul(vec![Expr::int(-1), e])
    }

    /// Canonical product of the given operands.
    pub fn mul(factors: Vec<Expr>) -> Expr {
        let mut coeff = BigRational::one();
        let mut bases: BTreeMap<Expr, BigRational> = BTreeMap::new();
        let mut stack = factors;
        while let Some(f) = stack.pop() {
            match f {
                Expr::Num(r) => {
                    if r.is_zero() {
                        return Expr::zero();
                    }
                    coeff *= r;
                }
                Expr::Mul(inner) => stack.extend(inner),
                Expr::Pow(base, exp) => {
                    *bases.entry(*base).or_insert_with(BigRational::zero) += exp;
                }
                other => {
                    *bases.entry(other).or_insert_with(BigRational::zero) += BigRational::one();
                }
            }
        }
        let mut out: Vec<Expr> = Vec::with_capacity(bases.len() + 1);
        for (base, exp) in bases {
            let p = Expr::pow(base, exp);
            match p {
                Expr::Num(r) => {
                    if r.is_zero() {
                        return Expr::zero();
                    }
                    coeff *= r;
                }
                // a collected power may itself resolve to a product, e.g.
                // exact-root extraction; fold it back in
                Expr::Mul(inner) => {
                    for f in inner {
                        match f {
                            Expr::Num(r) => coeff *= r,
                            other => out.push(other),
                        }
                    }
                }
                other if other.is_one() => {}
                other => out.push(other),
            }
        }
        if coeff.is_zero() {
            return Expr::zero();
        }
        if out.is_empty() {
            return Expr::Num(coeff);
        }
        // distribute a constant over a lone sum so that c*(a+b) and c*a+c*b
        // share one canonical form (collection in sums depends on this)
        if out.len() == 1 && !coeff.is_one() {
            if let Expr::Add(ts) = &out[0] {
                return Expr::add(
                    ts.iter()
                        .map(|t| Expr::mul2(Expr::Num(coeff.clone()), t.clone()))
                        .collect(),
                );
            }
        }
        out.sort();
        if !coeff.is_one() {
            out.insert(0, Expr::Num(coeff));
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Expr::Mul(out)
        }
    }

    pub fn mul2(a: Expr, b: Expr) -> Expr {
        Expr::mul(vec![a, b])
    }

    /// Quotient `a / b`, represented as `a * b^(-1)`.
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::mul(vec![a, Expr::pow(b, -BigRational::one())])
    }

    /// Canonical rational-constant power.
    pub fn pow(base: Expr, exp: BigRational) -> Expr {
        if exp.is_zero() {
            return Expr::one();
        }
        if exp.is_one() {
            return base;
        }
        match base {
            Expr::Num(r) => num_pow(r, &exp),
            // (b^r)^k = b^(rk) is unconditionally sound for integer k
            Expr::Pow(inner, inner_exp) if exp.is_integer() => {
                Expr::pow(*inner, inner_exp * exp)
            }
            // distribute integer powers over products
            Expr::Mul(factors) if exp.is_integer() => Expr::mul(
                factors
                    .into_iter()
                    .map(|f| Expr::pow(f, exp.clone()))
                    .collect(),
            ),
            other => Expr::Pow(Box::new(other), exp),
        }
    }

    pub fn powi(base: Expr, exp: i64) -> Expr {
        Expr::pow(base, BigRational::from_integer(BigInt::from(exp)))
    }

    pub fn sqrt(e: Expr) -> Expr {
        Expr::pow(e, BigRational::new(BigInt::one(), BigInt::from(2)))
    }

    /// Canonical function application.
    pub fn fun(f: Func, arg: Expr) -> Expr {
        if let Expr::Num(r) = &arg {
            if r.is_zero() {
                match f {
                    Func::Sin | Func::Tan => return Expr::zero(),
                    Func::Cos | Func::Exp => return Expr::one(),
                    Func::Log => {} // log 0: keep symbolic, poles at eval
                }
            }
            if r.is_one() && f == Func::Log {
                return Expr::zero();
            }
        }
        match f {
            Func::Log => {
                if let Expr::Fun(Func::Exp, inner) = arg {
                    return *inner;
                }
            }
            Func::Exp => {
                if let Expr::Fun(Func::Log, inner) = arg {
                    return *inner;
                }
            }
            // odd/even reduction on a negated argument
            Func::Sin | Func::Tan => {
                if let Some(pos) = strip_negation(&arg) {
                    return Expr::neg(Expr::fun(f, pos));
                }
            }
            Func::Cos => {
                if let Some(pos) = strip_negation(&arg) {
                    return Expr::fun(Func::Cos, pos);
                }
            }
        }
        Expr::Fun(f, Box::new(arg))
    }

    /// Rebuild through the canonical constructors. Trees produced by this
    /// module are already canonical; this is the entry point for externally
    /// assembled trees (the parser) and a guard used by tests.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Num(_) | Expr::Sym(_) => self.clone(),
            Expr::Add(ts) => Expr::add(ts.iter().map(|t| t.simplify()).collect()),
            Expr::Mul(fs) => Expr::mul(fs.iter().map(|f| f.simplify()).collect()),
            Expr::Pow(b, e) => Expr::pow(b.simplify(), e.clone()),
            Expr::Fun(f, a) => Expr::fun(*f, a.simplify()),
        }
    }

    /// Exact partial derivative with respect to `s`.
    pub fn diff(&self, s: &Symbol) -> Expr {
        match self {
            Expr::Num(_) => Expr::zero(),
            Expr::Sym(x) => {
                if x == s {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Add(ts) => Expr::add(ts.iter().map(|t| t.diff(s)).collect()),
            Expr::Mul(fs) => {
                let mut terms = Vec::with_capacity(fs.len());
                for (i, f) in fs.iter().enumerate() {
                    let df = f.diff(s);
                    if df.is_zero() {
                        continue;
                    }
                    let mut prod: Vec<Expr> = fs
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, g)| g.clone())
                        .collect();
                    prod.push(df);
                    terms.push(Expr::mul(prod));
                }
                Expr::add(terms)
            }
            Expr::Pow(b, e) => {
                let db = b.diff(s);
                if db.is_zero() {
                    return Expr::zero();
                }
                // d(b^e) = e * b^(e-1) * db
                Expr::mul(vec![
                    Expr::Num(e.clone()),
                    Expr::pow((**b).clone(), e.clone() - BigRational::one()),
                    db,
                ])
            }
            Expr::Fun(f, a) => {
                let da = a.diff(s);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = match f {
                    Func::Sin => Expr::fun(Func::Cos, (**a).clone()),
                    Func::Cos => Expr::neg(Expr::fun(Func::Sin, (**a).clone())),
                    Func::Tan => {
                        // 1 + tan^2
                        Expr::add2(
                            Expr::one(),
                            Expr::powi(Expr::fun(Func::Tan, (**a).clone()), 2),
                        )
                    }
                    Func::Exp => Expr::fun(Func::Exp, (**a).clone()),
                    Func::Log => Expr::powi((**a).clone(), -1),
                };
                Expr::mul2(outer, da)
            }
        }
    }

    /// Simultaneous substitution of symbols by expressions.
    pub fn substitute(&self, bindings: &BTreeMap<Symbol, Expr>) -> Expr {
        if bindings.is_empty() {
            return self.clone();
        }
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Sym(x) => bindings.get(x).cloned().unwrap_or_else(|| self.clone()),
            Expr::Add(ts) => Expr::add(ts.iter().map(|t| t.substitute(bindings)).collect()),
            Expr::Mul(fs) => Expr::mul(fs.iter().map(|f| f.substitute(bindings)).collect()),
            Expr::Pow(b, e) => Expr::pow(b.substitute(bindings), e.clone()),
            Expr::Fun(f, a) => Expr::fun(*f, a.substitute(bindings)),
        }
    }

    pub fn substitute1(&self, sym: &Symbol, value: &Expr) -> Expr {
        let mut m = BTreeMap::new();
        m.insert(sym.clone(), value.clone());
        self.substitute(&m)
    }

    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Expr::Num(_) => {}
            Expr::Sym(s) => {
                out.insert(s.clone());
            }
            Expr::Add(ts) | Expr::Mul(ts) => {
                for t in ts {
                    t.collect_symbols(out);
                }
            }
            Expr::Pow(b, _) => b.collect_symbols(out),
            Expr::Fun(_, a) => a.collect_symbols(out),
        }
    }

    pub fn depends_on(&self, s: &Symbol) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Sym(x) => x == s,
            Expr::Add(ts) | Expr::Mul(ts) => ts.iter().any(|t| t.depends_on(s)),
            Expr::Pow(b, _) => b.depends_on(s),
            Expr::Fun(_, a) => a.depends_on(s),
        }
    }

    pub fn depends_on_any(&self, syms: &[Symbol]) -> bool {
        syms.iter().any(|s| self.depends_on(s))
    }
}

/// Split a canonical non-sum term into (numeric coefficient, core).
fn split_coefficient(e: Expr) -> (BigRational, Expr) {
    match e {
        Expr::Num(r) => (r, Expr::one()),
        Expr::Mul(fs) => {
            if let Some(Expr::Num(r)) = fs.first() {
                let r = r.clone();
                let rest: Vec<Expr> = fs.into_iter().skip(1).collect();
                let core = if rest.len() == 1 {
                    rest.into_iter().next().unwrap()
                } else {
                    Expr::Mul(rest)
                };
                (r, core)
            } else {
                (BigRational::one(), Expr::Mul(fs))
            }
        }
        other => (BigRational::one(), other),
    }
}

fn attach_coefficient(coeff: BigRational, core: Expr) -> Expr {
    if core.is_one() {
        return Expr::Num(coeff);
    }
    if coeff.is_one() {
        return core;
    }
    match core {
        Expr::Mul(mut fs) => {
            fs.insert(0, Expr::Num(coeff));
            Expr::Mul(fs)
        }
        other => Expr::Mul(vec![Expr::Num(coeff), other]),
    }
}

/// If `e` is `(-c) * rest` or a negative constant, return its positive
/// counterpart; used for odd/even trig reduction.
fn strip_negation(e: &Expr) -> Option<Expr> {
    match e {
        Expr::Num(r) if r.is_negative() => Some(Expr::Num(-r.clone())),
        Expr::Mul(fs) => match fs.first() {
            Some(Expr::Num(r)) if r.is_negative() => {
                let mut out = fs.clone();
                out[0] = Expr::Num(-r.clone());
                Some(Expr::mul(out))
            }
            _ => None,
        },
        _ => None,
    }
}

/// In-place `c*sin(w)^2*rest + c*cos(w)^2*rest -> c*rest` on collected
/// sum terms. Runs once per collection pass; a second pass finds nothing
/// left to pair, which keeps `simplify` idempotent.
fn collapse_trig_squares(cores: &mut BTreeMap<Expr, BigRational>, constant: &mut BigRational) {
    let sin_cores: Vec<Expr> = cores
        .keys()
        .filter(|c| trig_square_partner(c, Func::Sin, Func::Cos).is_some())
        .cloned()
        .collect();
    for sc in sin_cores {
        let Some((partner, rest)) = trig_square_partner(&sc, Func::Sin, Func::Cos) else {
            continue;
        };
        let (Some(c_sin), Some(c_cos)) = (cores.get(&sc).cloned(), cores.get(&partner).cloned())
        else {
            continue;
        };
        if c_sin.is_zero() || c_cos.is_zero() {
            continue;
        }
        // c_sin*(sin^2+cos^2)*rest + (c_cos-c_sin)*cos^2*rest
        cores.remove(&sc);
        let new_cos = c_cos - c_sin.clone();
        if new_cos.is_zero() {
            cores.remove(&partner);
        } else {
            cores.insert(partner, new_cos);
        }
        if rest.is_one() {
            *constant += c_sin;
        } else {
            let (extra, rest_core) = split_coefficient(rest);
            *cores.entry(rest_core).or_insert_with(BigRational::zero) += c_sin * extra;
        }
    }
}

/// If `core` contains a factor `f(w)^2`, return the same core with `g(w)^2`
/// instead, together with the remaining factors.
fn trig_square_partner(core: &Expr, f: Func, g: Func) -> Option<(Expr, Expr)> {
    let as_factors: Vec<Expr> = match core {
        Expr::Mul(fs) => fs.clone(),
        other => vec![other.clone()],
    };
    for (i, fac) in as_factors.iter().enumerate() {
        if let Expr::Pow(base, exp) = fac {
            if *exp == BigRational::from_integer(BigInt::from(2)) {
                if let Expr::Fun(h, arg) = &**base {
                    if *h == f {
                        let swapped = Expr::powi(Expr::fun(g, (**arg).clone()), 2);
                        let mut partner = as_factors.clone();
                        partner[i] = swapped;
                        let mut rest = as_factors.clone();
                        rest.remove(i);
                        let rest = Expr::mul(rest);
                        return Some((Expr::mul(partner), rest));
                    }
                }
            }
        }
    }
    None
}

/// Exact rational power evaluation: integer exponents directly, fractional
/// exponents only when the exact root exists; otherwise keep symbolic.
fn num_pow(r: BigRational, exp: &BigRational) -> Expr {
    if exp.is_integer() {
        let k = exp.to_integer();
        if r.is_zero() {
            if k.is_negative() {
                // 0^(-k): keep symbolic, a pole at evaluation
                return Expr::Pow(Box::new(Expr::Num(r)), exp.clone());
            }
            return Expr::zero();
        }
        return Expr::Num(rational_int_pow(r, &k));
    }
    if r.is_one() {
        return Expr::one();
    }
    if !r.is_negative() && !r.is_zero() {
        let q = exp.denom();
        if let Some(q32) = q.to_u32() {
            let num_root = exact_nth_root(r.numer(), q32);
            let den_root = exact_nth_root(r.denom(), q32);
            if let (Some(n), Some(d)) = (num_root, den_root) {
                let root = BigRational::new(n, d);
                let p = BigRational::from_integer(exp.numer().clone());
                return num_pow(root, &p);
            }
        }
    }
    Expr::Pow(Box::new(Expr::Num(r)), exp.clone())
}

fn rational_int_pow(r: BigRational, k: &BigInt) -> BigRational {
    let mag = k.magnitude().to_u32().expect("exponent fits u32");
    let powed = BigRational::new(r.numer().pow(mag), r.denom().pow(mag));
    if k.is_negative() {
        powed.recip()
    } else {
        powed
    }
}

fn exact_nth_root(n: &BigInt, q: u32) -> Option<BigInt> {
    let root = n.nth_root(q);
    if root.pow(q) == *n {
        Some(root)
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// printing

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, Prec::Sum)
    }
}

#[derive(PartialEq, PartialOrd, Clone, Copy)]
enum Prec {
    Sum,
    Product,
    Unary,
    Power,
    Atom,
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, ctx: Prec) -> fmt::Result {
    match e {
        Expr::Num(r) => {
            let needs_paren = (r.is_negative() || !r.is_integer()) && ctx > Prec::Sum;
            if needs_paren {
                write!(f, "({})", format_rational(r))
            } else {
                write!(f, "{}", format_rational(r))
            }
        }
        Expr::Sym(s) => write!(f, "{s}"),
        Expr::Add(ts) => {
            let own = Prec::Sum;
            if ctx > own {
                f.write_str("(")?;
            }
            for (i, t) in ts.iter().enumerate() {
                if i == 0 {
                    write_expr(f, t, Prec::Sum)?;
                } else if let Some(pos) = strip_negation(t) {
                    f.write_str(" - ")?;
                    write_expr(f, &pos, Prec::Product)?;
                } else {
                    f.write_str(" + ")?;
                    write_expr(f, t, Prec::Product)?;
                }
            }
            if ctx > own {
                f.write_str(")")?;
            }
            Ok(())
        }
        Expr::Mul(fs) => write_product(f, fs, ctx),
        Expr::Pow(b, e2) => write_power(f, b, e2, ctx),
        Expr::Fun(fun, a) => write!(f, "{}({})", fun.name(), a),
    }
}

fn format_rational(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Split product factors into numerator and denominator (negative powers).
fn write_product(f: &mut fmt::Formatter<'_>, fs: &[Expr], ctx: Prec) -> fmt::Result {
    let mut numer: Vec<Expr> = Vec::new();
    let mut denom: Vec<Expr> = Vec::new();
    let mut neg = false;
    for fac in fs {
        match fac {
            Expr::Num(r) => {
                let mut r = r.clone();
                if r.is_negative() {
                    neg = !neg;
                    r = -r;
                }
                if !r.numer().is_one() || r.is_integer() {
                    if !r.is_one() {
                        numer.push(Expr::Num(BigRational::from_integer(r.numer().clone())));
                    }
                } else {
                    // pure 1/q coefficient
                }
                if !r.is_integer() {
                    denom.push(Expr::Num(BigRational::from_integer(r.denom().clone())));
                }
            }
            Expr::Pow(b, e) if e.is_negative() => {
                let flipped = Expr::pow((**b).clone(), -e.clone());
                denom.push(flipped);
            }
            other => numer.push(other.clone()),
        }
    }
    let own = if denom.is_empty() && !neg {
        Prec::Product
    } else if neg {
        Prec::Unary
    } else {
        Prec::Product
    };
    let needs_paren = ctx > own || (neg && ctx > Prec::Sum);
    if needs_paren {
        f.write_str("(")?;
    }
    if neg {
        f.write_str("-")?;
    }
    if numer.is_empty() {
        f.write_str("1")?;
    } else {
        for (i, n) in numer.iter().enumerate() {
            if i > 0 {
                f.write_str("*")?;
            }
            write_expr(f, n, Prec::Unary)?;
        }
    }
    for d in &denom {
        f.write_str("/")?;
        write_expr(f, d, Prec::Power)?;
    }
    if needs_paren {
        f.write_str(")")?;
    }
    Ok(())
}

fn write_power(
    f: &mut fmt::Formatter<'_>,
    base: &Expr,
    exp: &BigRational,
    ctx: Prec,
) -> fmt::Result {
    let half = BigRational::new(BigInt::one(), BigInt::from(2));
    if *exp == half {
        return write!(f, "sqrt({base})");
    }
    if exp.is_negative() {
        // lone reciprocal outside a product
        if ctx > Prec::Product {
            f.write_str("(")?;
        }
        f.write_str("1/")?;
        write_power_pos(f, base, &-exp.clone())?;
        if ctx > Prec::Product {
            f.write_str(")")?;
        }
        return Ok(());
    }
    write_power_pos(f, base, exp)
}

fn write_power_pos(f: &mut fmt::Formatter<'_>, base: &Expr, exp: &BigRational) -> fmt::Result {
    if exp.is_one() {
        return write_expr(f, base, Prec::Power);
    }
    write_expr(f, base, Prec::Atom)?;
    if exp.is_integer() {
        write!(f, "^{}", exp.numer())
    } else {
        write!(f, "^({}/{})", exp.numer(), exp.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::SymbolKind;

    fn s(name: &str) -> Symbol {
        Symbol::new(name, SymbolKind::State)
    }

    #[test]
    fn sums_collect_like_terms() {
        let x = Expr::sym(&s("x"));
        let e = Expr::add(vec![
            x.clone(),
            Expr::mul2(Expr::int(2), x.clone()),
            Expr::int(5),
            Expr::int(-5),
        ]);
        assert_eq!(e, Expr::mul2(Expr::int(3), x));
    }

    #[test]
    fn product_powers_merge() {
        let x = Expr::sym(&s("x"));
        let e = Expr::mul(vec![x.clone(), x.clone(), Expr::powi(x.clone(), -1)]);
        assert_eq!(e, x);
    }

    #[test]
    fn e_minus_e_is_zero() {
        let x = Expr::sym(&s("x"));
        let u = Expr::sym(&s("u"));
        let e = Expr::add2(
            Expr::mul2(x.clone(), u.clone()),
            Expr::fun(Func::Sin, x.clone()),
        );
        assert!(Expr::sub(e.clone(), e).is_zero());
    }

    #[test]
    fn pythagorean_identity_collapses() {
        let x = Expr::sym(&s("x"));
        let e = Expr::add(vec![
            Expr::powi(Expr::fun(Func::Sin, x.clone()), 2),
            Expr::powi(Expr::fun(Func::Cos, x.clone()), 2),
            Expr::int(-1),
        ]);
        assert!(e.is_zero(), "sin^2+cos^2-1 = {e}");
    }

    #[test]
    fn pythagorean_with_shared_factor() {
        let x = Expr::sym(&s("x"));
        let y = Expr::sym(&s("y"));
        let sin2 = Expr::powi(Expr::fun(Func::Sin, x.clone()), 2);
        let cos2 = Expr::powi(Expr::fun(Func::Cos, x.clone()), 2);
        let e = Expr::add2(
            Expr::mul2(y.clone(), sin2),
            Expr::mul2(y.clone(), cos2),
        );
        assert_eq!(e, y);
    }

    #[test]
    fn diff_product_rule() {
        // d/dx7 (x4*x7*u1 - x6) = x4*u1
        let x4 = s("x4");
        let x6 = s("x6");
        let x7 = s("x7");
        let u1 = s("u1");
        let e = Expr::sub(
            Expr::mul(vec![Expr::sym(&x4), Expr::sym(&x7), Expr::sym(&u1)]),
            Expr::sym(&x6),
        );
        assert_eq!(e.diff(&x7), Expr::mul2(Expr::sym(&x4), Expr::sym(&u1)));
        assert_eq!(e.diff(&x6), Expr::int(-1));
    }

    #[test]
    fn substitution_simultaneous() {
        // (x3 + x4*u1)[x3 -> 0, x4 -> 1] = u1
        let x3 = s("x3");
        let x4 = s("x4");
        let u1 = s("u1");
        let e = Expr::add2(
            Expr::sym(&x3),
            Expr::mul2(Expr::sym(&x4), Expr::sym(&u1)),
        );
        let mut b = BTreeMap::new();
        b.insert(x3.clone(), Expr::zero());
        b.insert(x4.clone(), Expr::one());
        assert_eq!(e.substitute(&b), Expr::sym(&u1));
        // identity binding
        let mut idb = BTreeMap::new();
        idb.insert(x3.clone(), Expr::sym(&x3));
        assert_eq!(e.substitute(&idb), e);
    }

    #[test]
    fn exact_constant_roots() {
        assert_eq!(Expr::sqrt(Expr::int(4)), Expr::int(2));
        assert_eq!(Expr::sqrt(Expr::rat(1, 9)), Expr::rat(1, 3));
        // irrational roots stay symbolic
        let r = Expr::sqrt(Expr::int(2));
        assert!(matches!(r, Expr::Pow(_, _)));
    }

    #[test]
    fn display_round_shapes() {
        let x = Expr::sym(&s("x"));
        let y = Expr::sym(&s("y"));
        let e = Expr::div(
            Expr::add2(x.clone(), Expr::one()),
            Expr::mul2(Expr::int(2), y.clone()),
        );
        let printed = format!("{e}");
        assert!(printed.contains('/'), "quotient prints with /: {printed}");
    }
}
