//! Multivariate polynomial normal form over exact rationals.
//!
//! Expressions are mapped onto polynomials in a set of *atoms*: symbols and
//! any opaque non-polynomial subtree (function applications, fractional
//! powers). This is the workhorse behind rational-function canonicalization,
//! the symbolic zero test and fraction-free linear algebra. Atoms are
//! treated as algebraically independent; relations between them (beyond the
//! trig rules the simplifier already applies) make the zero test answer
//! "inconclusive", never a wrong "no".

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::expr::Expr;

/// Registry mapping opaque atoms to dense variable indices.
#[derive(Debug, Default, Clone)]
pub struct AtomTable {
    atoms: Vec<Expr>,
    index: BTreeMap<Expr, usize>,
}

impl AtomTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, e: &Expr) -> usize {
        if let Some(&i) = self.index.get(e) {
            return i;
        }
        let i = self.atoms.len();
        self.atoms.push(e.clone());
        self.index.insert(e.clone(), i);
        i
    }

    pub fn atom(&self, i: usize) -> &Expr {
        &self.atoms[i]
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Sorted sparse monomial: (atom index, exponent) pairs with exponents > 0,
/// ordered by graded lexicographic comparison (a true monomial order, which
/// exact division depends on).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mono(pub Vec<(u32, u32)>);

impl Mono {
    pub fn unit() -> Self {
        Mono(Vec::new())
    }

    pub fn var(i: u32) -> Self {
        Mono(vec![(i, 1)])
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    pub fn exponent_of(&self, v: u32) -> u32 {
        self.0
            .iter()
            .find(|&&(w, _)| w == v)
            .map(|&(_, e)| e)
            .unwrap_or(0)
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        // lex tie-break: higher exponent on the smallest distinguishing
        // variable wins
        let (mut i, mut j) = (0, 0);
        loop {
            match (self.0.get(i), other.0.get(j)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(&(va, ea)), Some(&(vb, eb))) => {
                    if va < vb {
                        return Ordering::Greater; // a has the smaller var
                    }
                    if vb < va {
                        return Ordering::Less;
                    }
                    match ea.cmp(&eb) {
                        Ordering::Equal => {
                            i += 1;
                            j += 1;
                        }
                        ord => return ord,
                    }
                }
            }
        }
    }
}

fn mono_mul(a: &Mono, b: &Mono) -> Mono {
    let mut out = Vec::with_capacity(a.0.len() + b.0.len());
    let (mut i, mut j) = (0, 0);
    while i < a.0.len() && j < b.0.len() {
        match a.0[i].0.cmp(&b.0[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a.0[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b.0[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a.0[i].0, a.0[i].1 + b.0[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a.0[i..]);
    out.extend_from_slice(&b.0[j..]);
    Mono(out)
}

/// Divide monomial `a` by `b`; None unless `b` divides `a`.
fn mono_div(a: &Mono, b: &Mono) -> Option<Mono> {
    let mut out = Vec::with_capacity(a.0.len());
    let mut i = 0;
    for &(var, exp) in &b.0 {
        loop {
            if i >= a.0.len() {
                return None;
            }
            if a.0[i].0 < var {
                out.push(a.0[i]);
                i += 1;
            } else {
                break;
            }
        }
        if a.0[i].0 != var || a.0[i].1 < exp {
            return None;
        }
        if a.0[i].1 > exp {
            out.push((var, a.0[i].1 - exp));
        }
        i += 1;
    }
    out.extend_from_slice(&a.0[i..]);
    Some(Mono(out))
}

fn mono_degree(m: &Mono) -> u32 {
    m.degree()
}

/// Multivariate polynomial with exact rational coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MPoly {
    pub terms: BTreeMap<Mono, BigRational>,
}

impl MPoly {
    pub fn zero() -> Self {
        MPoly {
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(Mono::unit(), c);
        }
        MPoly { terms }
    }

    pub fn one() -> Self {
        Self::constant(BigRational::one())
    }

    pub fn var(i: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(Mono::var(i as u32), BigRational::one());
        MPoly { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.len() <= 1 && self.terms.keys().all(|m| m.is_unit())
    }

    pub fn as_constant(&self) -> Option<BigRational> {
        if self.terms.is_empty() {
            return Some(BigRational::zero());
        }
        if self.terms.len() == 1 {
            let (m, c) = self.terms.iter().next().expect("len checked");
            if m.is_unit() {
                return Some(c.clone());
            }
        }
        None
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|m| mono_degree(m)).max().unwrap_or(0)
    }

    fn insert_term(&mut self, m: Mono, c: BigRational) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.insert_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.insert_term(m.clone(), -c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        MPoly {
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), -c.clone()))
                .collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = MPoly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.insert_term(mono_mul(ma, mb), ca * cb);
            }
        }
        out
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        if c.is_zero() {
            return MPoly::zero();
        }
        MPoly {
            terms: self
                .terms
                .iter()
                .map(|(m, k)| (m.clone(), k * c))
                .collect(),
        }
    }

    pub fn pow(&self, mut n: u32) -> Self {
        let mut result = MPoly::one();
        let mut base = self.clone();
        while n > 0 {
            if n & 1 == 1 {
                result = result.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    /// Leading (monomial, coefficient) under the graded map order.
    fn leading(&self) -> Option<(&Mono, &BigRational)> {
        self.terms.iter().next_back()
    }

    /// Exact division; None when `d` does not divide `self`.
    pub fn div_exact(&self, d: &Self) -> Option<Self> {
        if d.is_zero() {
            return None;
        }
        if let Some(c) = d.as_constant() {
            return Some(self.scale(&c.recip()));
        }
        let mut rem = self.clone();
        let mut quo = MPoly::zero();
        let (dm, dc) = d.leading().expect("nonzero divisor");
        let dm = dm.clone();
        let dc = dc.clone();
        while !rem.is_zero() {
            let (rm, rc) = rem.leading().expect("nonzero remainder");
            let qm = mono_div(rm, &dm)?;
            let qc = rc / &dc;
            let mut t = MPoly::zero();
            t.insert_term(qm, qc);
            rem = rem.sub(&t.mul(d));
            quo = quo.add(&t);
        }
        Some(quo)
    }

    /// Variables occurring in this polynomial.
    pub fn vars(&self) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for m in self.terms.keys() {
            for &(v, _) in &m.0 {
                if let Err(pos) = out.binary_search(&v) {
                    out.insert(pos, v);
                }
            }
        }
        out
    }

    pub fn degree_in(&self, v: u32) -> u32 {
        self.terms.keys().map(|m| m.exponent_of(v)).max().unwrap_or(0)
    }

    /// View as univariate in `v` with polynomial coefficients:
    /// coefficient of `v^k` at index k.
    fn to_univar(&self, v: u32) -> Vec<MPoly> {
        let d = self.degree_in(v);
        let mut coeffs = vec![MPoly::zero(); (d + 1) as usize];
        for (m, c) in &self.terms {
            let mut exp = 0;
            let rest: Vec<(u32, u32)> = m
                .0
                .iter()
                .filter(|&&(w, e)| {
                    if w == v {
                        exp = e;
                        false
                    } else {
                        true
                    }
                })
                .cloned()
                .collect();
            coeffs[exp as usize].insert_term(Mono(rest), c.clone());
        }
        coeffs
    }

    fn from_univar(coeffs: Vec<MPoly>, v: u32) -> MPoly {
        let mut out = MPoly::zero();
        for (k, c) in coeffs.into_iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let mono: Mono = if k == 0 { Mono::unit() } else { Mono(vec![(v, k as u32)]) };
            let vk = {
                let mut t = MPoly::zero();
                t.insert_term(mono, BigRational::one());
                t
            };
            out = out.add(&c.mul(&vk));
        }
        out
    }

    /// Normalize so coefficients are coprime integers with positive leading
    /// coefficient. Returns the (nonzero) scale that was divided out.
    pub fn primitive(&self) -> (BigRational, MPoly) {
        if self.is_zero() {
            return (BigRational::one(), MPoly::zero());
        }
        let mut num_gcd = BigInt::zero();
        let mut den_lcm = BigInt::one();
        for c in self.terms.values() {
            num_gcd = num_gcd.gcd(c.numer());
            den_lcm = den_lcm.lcm(c.denom());
        }
        let mut scale = BigRational::new(num_gcd, den_lcm);
        let (_, lc) = self.leading().expect("nonzero");
        if lc.is_negative() {
            scale = -scale;
        }
        (scale.clone(), self.scale(&scale.recip()))
    }

    /// Single term as (monomial, coefficient).
    pub fn as_monomial(&self) -> Option<(&Mono, &BigRational)> {
        if self.terms.len() == 1 {
            self.terms.iter().next()
        } else {
            None
        }
    }

    /// Componentwise minimum of all monomials (the common monomial factor).
    fn monomial_content(&self) -> Mono {
        let mut iter = self.terms.keys();
        let Some(first) = iter.next() else {
            return Mono::unit();
        };
        let mut common = first.clone();
        for m in iter {
            if common.is_unit() {
                break;
            }
            let kept: Vec<(u32, u32)> = common
                .0
                .iter()
                .filter_map(|&(v, e)| {
                    let o = m.exponent_of(v);
                    if o == 0 {
                        None
                    } else {
                        Some((v, e.min(o)))
                    }
                })
                .collect();
            common = Mono(kept);
        }
        common
    }

    /// Multivariate gcd (primitive, positive leading coefficient).
    ///
    /// Fast paths first: monomial arguments reduce to exponent minima, and
    /// arguments without common variables are coprime up to content. Only
    /// genuinely shared variables enter the remainder-sequence recursion.
    pub fn gcd(&self, other: &Self) -> Self {
        self.gcd_at_depth(other, 0)
    }

    fn gcd_at_depth(&self, other: &Self, depth: usize) -> Self {
        if self.is_zero() {
            return other.primitive().1;
        }
        if other.is_zero() {
            return self.primitive().1;
        }
        if let Some((mono, _)) = self.as_monomial() {
            let mut kept: Vec<(u32, u32)> = Vec::new();
            for &(v, e) in &mono.0 {
                let mut min_exp = e;
                for m in other.terms.keys() {
                    min_exp = min_exp.min(m.exponent_of(v));
                    if min_exp == 0 {
                        break;
                    }
                }
                if min_exp > 0 {
                    kept.push((v, min_exp));
                }
            }
            let mut out = MPoly::zero();
            out.insert_term(Mono(kept), BigRational::one());
            return out;
        }
        if other.as_monomial().is_some() {
            return other.gcd_at_depth(self, depth);
        }
        let a = self.primitive().1;
        let b = other.primitive().1;
        // pull out common monomial factors up front
        let ma = a.monomial_content();
        let mb = b.monomial_content();
        let shared: Vec<(u32, u32)> = ma
            .0
            .iter()
            .filter_map(|&(v, e)| {
                let o = mb.exponent_of(v);
                if o == 0 {
                    None
                } else {
                    Some((v, e.min(o)))
                }
            })
            .collect();
        let shared = Mono(shared);
        let (a, b) = if shared.is_unit() {
            (a, b)
        } else {
            let mut divisor = MPoly::zero();
            divisor.insert_term(shared.clone(), BigRational::one());
            (
                a.div_exact(&divisor).expect("monomial content divides"),
                b.div_exact(&divisor).expect("monomial content divides"),
            )
        };
        let common_vars: Vec<u32> = {
            let va = a.vars();
            let vb = b.vars();
            va.into_iter().filter(|v| vb.binary_search(v).is_ok()).collect()
        };
        // a partial divisor is always sound; skip the remainder-sequence
        // core when the operands are too big for it, and verify the
        // divisibility of whatever it returns before trusting it
        let size_cap = if depth == 0 { 60 } else { 30 };
        let core = if common_vars.is_empty()
            || depth >= 3
            || a.terms.len().max(b.terms.len()) > size_cap
        {
            MPoly::one()
        } else {
            let candidate = gcd_primitive(&a, &b, &common_vars, depth).primitive().1;
            if candidate.as_constant().is_some()
                || (a.div_exact(&candidate).is_some() && b.div_exact(&candidate).is_some())
            {
                candidate
            } else {
                MPoly::one()
            }
        };
        let mut shared_poly = MPoly::zero();
        shared_poly.insert_term(shared, BigRational::one());
        core.mul(&shared_poly)
    }
}

/// Content (gcd of coefficients) of a univariate view; beyond the depth
/// limit only monomial contents are extracted, which keeps the recursion
/// bounded (the caller verifies divisibility of the final candidate).
fn univar_content(coeffs: &[MPoly], depth: usize) -> MPoly {
    let mut g = MPoly::zero();
    for c in coeffs {
        if c.is_zero() {
            continue;
        }
        if depth >= 2 {
            // monomial content only
            let mut mono = MPoly::zero();
            mono.insert_term(c.monomial_content(), BigRational::one());
            g = if g.is_zero() {
                mono
            } else {
                g.gcd_at_depth(&mono, depth)
            };
        } else {
            g = g.gcd_at_depth(c, depth);
        }
        if let Some(k) = g.as_constant() {
            if k.is_one() {
                return MPoly::one();
            }
        }
    }
    if g.is_zero() {
        MPoly::one()
    } else {
        g
    }
}

fn univar_div_content(coeffs: &[MPoly], content: &MPoly) -> Vec<MPoly> {
    if coeffs
        .iter()
        .any(|c| !c.is_zero() && c.div_exact(content).is_none())
    {
        return coeffs.to_vec();
    }
    coeffs
        .iter()
        .map(|c| {
            if c.is_zero() {
                MPoly::zero()
            } else {
                c.div_exact(content).expect("checked")
            }
        })
        .collect()
}

fn univar_degree(coeffs: &[MPoly]) -> Option<usize> {
    coeffs.iter().rposition(|c| !c.is_zero())
}

/// Pseudo-remainder of univariate views (coefficients are polynomials).
/// Only used inside the PRS loop, where content is stripped afterwards, so
/// the exact premultiplication power is irrelevant. Coefficients grow
/// multiplicatively per step; None signals the size budget was blown and
/// the caller falls back to a sound partial divisor.
fn pseudo_rem(f: &[MPoly], g: &[MPoly]) -> Option<Vec<MPoly>> {
    let dg = univar_degree(g).expect("nonzero g");
    let lg = g[dg].clone();
    let mut r: Vec<MPoly> = f.to_vec();
    loop {
        let dr = match univar_degree(&r) {
            Some(d) => d,
            None => return Some(r),
        };
        if dr < dg {
            return Some(r);
        }
        let total: usize = r.iter().map(|c| c.terms.len()).sum();
        if total.max(lg.terms.len() * total / (dr + 1).max(1)) > 1500 || total > 1500 {
            return None;
        }
        let lr = r[dr].clone();
        // r <- lg*r - lr * x^(dr-dg) * g; the leading terms cancel, so the
        // degree strictly decreases and the loop terminates
        let mut new_r = vec![MPoly::zero(); dr + 1];
        for (i, c) in r.iter().enumerate().take(dr + 1) {
            new_r[i] = c.mul(&lg);
        }
        for (i, c) in g.iter().enumerate().take(dg + 1) {
            let idx = i + dr - dg;
            new_r[idx] = new_r[idx].sub(&c.mul(&lr));
        }
        r = new_r;
    }
}

/// Primitive PRS gcd over the chosen variable set. The result is a
/// candidate: depth-limited contents can leave it too large, so callers
/// verify divisibility.
fn gcd_primitive(a: &MPoly, b: &MPoly, vars: &[u32], depth: usize) -> MPoly {
    // main variable with the fewest remainder steps
    let v = *vars
        .iter()
        .min_by_key(|&&v| {
            let (da, db) = (a.degree_in(v), b.degree_in(v));
            if da == 0 || db == 0 {
                u32::MAX
            } else {
                da.min(db)
            }
        })
        .expect("nonempty vars");
    let da = a.degree_in(v);
    let db = b.degree_in(v);
    if da == 0 || db == 0 {
        // no variable occurs in both: coprime up to content
        return MPoly::one();
    }
    let fa = a.to_univar(v);
    let fb = b.to_univar(v);
    let ca = univar_content(&fa, depth + 1);
    let cb = univar_content(&fb, depth + 1);
    let cont = ca.gcd_at_depth(&cb, depth + 1);
    let mut f = univar_div_content(&fa, &ca);
    let mut g = univar_div_content(&fb, &cb);
    if univar_degree(&f) < univar_degree(&g) {
        std::mem::swap(&mut f, &mut g);
    }
    loop {
        let dg = match univar_degree(&g) {
            None => {
                let pp = MPoly::from_univar(f, v);
                return pp.mul(&cont);
            }
            Some(d) => d,
        };
        if dg == 0 {
            // nonzero constant (in v) remainder: coprime in v
            return cont;
        }
        let Some(r) = pseudo_rem(&f, &g) else {
            // the sequence is exploding; the content alone is still a
            // sound common divisor
            return cont;
        };
        let rc = univar_content(&r, depth + 1);
        let rp = univar_div_content(&r, &rc);
        f = g;
        g = rp;
    }
}

/// Denominator kept as a product of primitive factors with powers. Keeping
/// the factorization makes cancellation a sequence of cheap exact-division
/// trials instead of a multivariate gcd search.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Factors(Vec<(MPoly, u32)>);

impl Factors {
    pub fn one() -> Self {
        Factors(Vec::new())
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(MPoly, u32)> {
        self.0.iter()
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().map(|(f, k)| f.total_degree() * k).sum()
    }

    pub fn term_budget(&self) -> usize {
        self.0.iter().map(|(f, k)| f.terms.len() * (*k as usize)).sum()
    }

    pub fn expanded(&self) -> MPoly {
        let mut out = MPoly::one();
        for (f, k) in &self.0 {
            out = out.mul(&f.pow(*k));
        }
        out
    }

    /// Multiply a (primitive, non-constant) factor in; equal factors merge.
    fn push(&mut self, f: MPoly, k: u32) {
        if k == 0 {
            return;
        }
        debug_assert!(f.as_constant().is_none());
        if let Some(slot) = self.0.iter_mut().find(|(p, _)| *p == f) {
            slot.1 += k;
            return;
        }
        self.0.push((f, k));
        self.0.sort_by(|(a, ka), (b, kb)| {
            (a.total_degree(), a.terms.len(), &a.terms, ka).cmp(&(
                b.total_degree(),
                b.terms.len(),
                &b.terms,
                kb,
            ))
        });
    }

    /// Multiply an arbitrary polynomial in as a factor; the extracted
    /// rational scale is returned for the caller to fold into a numerator.
    fn push_poly(&mut self, p: &MPoly, k: u32) -> BigRational {
        if k == 0 {
            return BigRational::one();
        }
        if let Some(c) = p.as_constant() {
            return rational_int_pow_local(c, k);
        }
        let (scale, prim) = p.primitive();
        self.push(prim, k);
        rational_int_pow_local(scale, k)
    }

    pub fn lcm_public(&self, other: &Self) -> Factors {
        self.lcm(other)
    }

    pub fn cofactor_public(&self, other: &Self) -> MPoly {
        self.cofactor(other)
    }

    fn lcm(&self, other: &Self) -> Factors {
        let mut out = self.clone();
        for (f, k) in &other.0 {
            if let Some(slot) = out.0.iter_mut().find(|(p, _)| p == f) {
                slot.1 = slot.1.max(*k);
            } else {
                out.push(f.clone(), *k);
            }
        }
        out
    }

    /// The cofactor `self / other` expanded, assuming `other` divides
    /// `self` factor by factor (true when `self` is an lcm with `other`).
    fn cofactor(&self, other: &Self) -> MPoly {
        let mut out = MPoly::one();
        for (f, k) in &self.0 {
            let used = other
                .0
                .iter()
                .find(|(p, _)| p == f)
                .map(|(_, kk)| *kk)
                .unwrap_or(0);
            if *k > used {
                out = out.mul(&f.pow(k - used));
            }
        }
        out
    }
}

fn rational_int_pow_local(r: BigRational, k: u32) -> BigRational {
    let mut out = BigRational::one();
    for _ in 0..k {
        out *= &r;
    }
    out
}

/// Rational function `num / prod(den factors)`. The numerator absorbs the
/// rational scale; every factor the numerator is divisible by is cancelled
/// on construction, so fractions stay reduced with respect to the factor
/// basis they were built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolyFrac {
    pub num: MPoly,
    pub den: Factors,
}

impl PolyFrac {
    pub fn new(num: MPoly, den: MPoly) -> Self {
        assert!(!den.is_zero(), "zero denominator in polynomial fraction");
        let mut factors = Factors::one();
        let scale = factors.push_poly(&den, 1);
        let mut out = PolyFrac {
            num: num.scale(&scale.recip()),
            den: factors,
        };
        out.reduce();
        out
    }

    pub fn from_poly(p: MPoly) -> Self {
        PolyFrac {
            num: p,
            den: Factors::one(),
        }
    }

    pub fn zero() -> Self {
        Self::from_poly(MPoly::zero())
    }

    pub fn one() -> Self {
        Self::from_poly(MPoly::one())
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// Cancel every denominator factor that divides the numerator.
    fn reduce(&mut self) {
        if self.num.is_zero() {
            self.den = Factors::one();
            return;
        }
        if self.den.is_one() {
            return;
        }
        let mut remaining: Vec<(MPoly, u32)> = Vec::with_capacity(self.den.0.len());
        for (f, mut k) in std::mem::take(&mut self.den.0) {
            while k > 0 {
                match self.num.div_exact(&f) {
                    Some(q) => {
                        self.num = q;
                        k -= 1;
                    }
                    None => break,
                }
            }
            if k > 0 {
                remaining.push((f, k));
            }
        }
        self.den.0 = remaining;
    }

    pub fn add(&self, other: &Self) -> Self {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let l = self.den.lcm(&other.den);
        let na = self.num.mul(&l.cofactor(&self.den));
        let nb = other.num.mul(&l.cofactor(&other.den));
        let mut out = PolyFrac {
            num: na.add(&nb),
            den: l,
        };
        out.reduce();
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        PolyFrac {
            num: self.num.neg(),
            den: self.den.clone(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut den = self.den.clone();
        for (f, k) in &other.den.0 {
            den.push(f.clone(), *k);
        }
        let mut out = PolyFrac {
            num: self.num.mul(&other.num),
            den,
        };
        out.reduce();
        out
    }

    pub fn div(&self, other: &Self) -> Self {
        assert!(!other.is_zero(), "division by zero fraction");
        let mut den = self.den.clone();
        let scale = den.push_poly(&other.num, 1);
        let num = self
            .num
            .mul(&other.den.expanded())
            .scale(&scale.recip());
        let mut out = PolyFrac { num, den };
        out.reduce();
        out
    }

    pub fn pow_int(&self, k: u32) -> Self {
        let mut den = Factors::one();
        for (f, p) in &self.den.0 {
            den.push(f.clone(), p * k);
        }
        PolyFrac {
            num: self.num.pow(k),
            den,
        }
    }

    pub fn complexity(&self) -> u32 {
        self.num.total_degree() + self.den.total_degree()
    }
}

// ---------------------------------------------------------------------------
// Expr <-> polynomial bridges

/// Convert an expression to a polynomial fraction over atoms interned in
/// `table`. Total: anything non-polynomial becomes an opaque atom.
pub fn frac_from_expr(e: &Expr, table: &mut AtomTable) -> PolyFrac {
    match e {
        Expr::Num(r) => PolyFrac::from_poly(MPoly::constant(r.clone())),
        Expr::Sym(_) => PolyFrac::from_poly(MPoly::var(table.intern(e))),
        Expr::Add(ts) => {
            let mut acc = PolyFrac::zero();
            for t in ts {
                acc = acc.add(&frac_from_expr(t, table));
            }
            acc
        }
        Expr::Mul(fs) => {
            let mut acc = PolyFrac::one();
            for f in fs {
                acc = acc.mul(&frac_from_expr(f, table));
            }
            acc
        }
        Expr::Pow(base, exp) => {
            if exp.is_integer() {
                let k = exp.numer();
                let mag: u32 = k.magnitude().try_into().unwrap_or(u32::MAX);
                let b = frac_from_expr(base, table);
                if b.is_zero() && k.is_negative() {
                    // pole of an exact zero base: keep as opaque atom so the
                    // conversion stays total
                    return PolyFrac::from_poly(MPoly::var(table.intern(e)));
                }
                let powed = b.pow_int(mag);
                if k.is_negative() {
                    PolyFrac::one().div(&powed)
                } else {
                    powed
                }
            } else {
                PolyFrac::from_poly(MPoly::var(table.intern(e)))
            }
        }
        Expr::Fun(_, _) => PolyFrac::from_poly(MPoly::var(table.intern(e))),
    }
}

pub fn poly_to_expr(p: &MPoly, table: &AtomTable) -> Expr {
    let mut terms = Vec::with_capacity(p.terms.len());
    for (m, c) in &p.terms {
        let mut factors = vec![Expr::Num(c.clone())];
        for &(v, e) in &m.0 {
            factors.push(Expr::powi(table.atom(v as usize).clone(), e as i64));
        }
        terms.push(Expr::mul(factors));
    }
    Expr::add(terms)
}

pub fn frac_to_expr(f: &PolyFrac, table: &AtomTable) -> Expr {
    let num = poly_to_expr(&f.num, table);
    if f.den.is_one() {
        return num;
    }
    Expr::div(num, factors_to_expr(&f.den, table))
}

/// The denominator printed in its factored shape.
pub fn factors_to_expr(den: &Factors, table: &AtomTable) -> Expr {
    Expr::mul(
        den.iter()
            .map(|(f, k)| Expr::powi(poly_to_expr(f, table), *k as i64))
            .collect(),
    )
}

/// Rational-function normal form of an expression: combine over a common
/// denominator, expand, cancel the polynomial gcd. Structural equality of
/// these forms is the strong symbolic equality used by the zero test.
pub fn rational_normal(e: &Expr) -> Expr {
    let mut table = AtomTable::new();
    let f = frac_from_expr(e, &mut table);
    frac_to_expr(&f, &table)
}

/// Substitute bindings one at a time, renormalizing after each, so the
/// intermediate expression never carries nested copies of large values.
/// Sound only when no binding value mentions a bound symbol; the callers
/// substitute into closed forms over disjoint symbol sets.
pub fn substitute_normal(
    e: &Expr,
    bindings: &std::collections::BTreeMap<crate::symbol::Symbol, Expr>,
) -> Expr {
    debug_assert!(bindings
        .values()
        .all(|v| bindings.keys().all(|k| !v.depends_on(k))));
    let mut acc = e.clone();
    for (sym, val) in bindings {
        if acc.depends_on(sym) {
            acc = rational_normal(&acc.substitute1(sym, val));
        }
    }
    acc
}

/// Numerator and denominator of the rational normal form.
pub fn as_num_den(e: &Expr) -> (Expr, Expr) {
    let mut table = AtomTable::new();
    let f = frac_from_expr(e, &mut table);
    (
        poly_to_expr(&f.num, &table),
        factors_to_expr(&f.den, &table),
    )
}

/// The distinct non-constant denominator factors of the normal form; these
/// are the natural guard expressions.
pub fn denominator_factors(e: &Expr) -> Vec<Expr> {
    let mut table = AtomTable::new();
    let f = frac_from_expr(e, &mut table);
    f.den
        .iter()
        .map(|(p, _)| poly_to_expr(p, &table))
        .collect()
}

/// Total degree when `e` is polynomial in its atoms; None if any division
/// by a non-constant remains after normalization.
pub fn poly_degree(e: &Expr) -> Option<u32> {
    let mut table = AtomTable::new();
    let f = frac_from_expr(e, &mut table);
    if f.den.is_one() {
        Some(f.num.total_degree())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::symbol::{Symbol, SymbolKind};

    fn x(name: &str) -> Expr {
        Expr::sym(&Symbol::new(name, SymbolKind::State))
    }

    #[test]
    fn gcd_univariate() {
        let mut t = AtomTable::new();
        // (x^2 - 1) and (x - 1)(x + 2): gcd x - 1... actually gcd(x^2-1, x^2+x-2) = x-1
        let xv = x("x");
        let a = frac_from_expr(
            &Expr::sub(Expr::powi(xv.clone(), 2), Expr::one()),
            &mut t,
        )
        .num;
        let b = frac_from_expr(
            &Expr::add(vec![Expr::powi(xv.clone(), 2), xv.clone(), Expr::int(-2)]),
            &mut t,
        )
        .num;
        let g = a.gcd(&b);
        let expected = frac_from_expr(&Expr::sub(xv.clone(), Expr::one()), &mut t).num;
        assert_eq!(g, expected);
    }

    #[test]
    fn gcd_multivariate() {
        let mut t = AtomTable::new();
        let (xv, yv) = (x("x"), x("y"));
        // gcd((x+y)^2 * x, (x+y) * y) = x+y
        let common = Expr::add2(xv.clone(), yv.clone());
        let a = frac_from_expr(&Expr::mul2(Expr::powi(common.clone(), 2), xv.clone()), &mut t).num;
        let b = frac_from_expr(&Expr::mul2(common.clone(), yv.clone()), &mut t).num;
        let g = a.gcd(&b);
        let expected = frac_from_expr(&common, &mut t).num;
        assert_eq!(g, expected);
    }

    #[test]
    fn fraction_cancellation() {
        // (x^2 - 1)/(x - 1) normalizes to x + 1
        let xv = x("x");
        let e = Expr::div(
            Expr::sub(Expr::powi(xv.clone(), 2), Expr::one()),
            Expr::sub(xv.clone(), Expr::one()),
        );
        let n = rational_normal(&e);
        assert_eq!(n, Expr::add2(xv.clone(), Expr::one()));
    }

    #[test]
    fn rational_normal_detects_hidden_zero() {
        // x/(x+1) + 1/(x+1) - 1 == 0
        let xv = x("x");
        let d = Expr::add2(xv.clone(), Expr::one());
        let e = Expr::add(vec![
            Expr::div(xv.clone(), d.clone()),
            Expr::div(Expr::one(), d.clone()),
            Expr::int(-1),
        ]);
        assert!(rational_normal(&e).is_zero());
    }

    #[test]
    fn div_exact_roundtrip() {
        let mut t = AtomTable::new();
        let (xv, yv) = (x("x"), x("y"));
        let a = frac_from_expr(
            &Expr::add(vec![Expr::mul2(xv.clone(), yv.clone()), xv.clone(), Expr::one()]),
            &mut t,
        )
        .num;
        let b = frac_from_expr(&Expr::add2(yv.clone(), Expr::int(3)), &mut t).num;
        let prod = a.mul(&b);
        assert_eq!(prod.div_exact(&b).unwrap(), a);
        assert_eq!(prod.div_exact(&a).unwrap(), b);
        // non-divisor
        let c = frac_from_expr(&Expr::add2(xv.clone(), Expr::int(5)), &mut t).num;
        assert!(prod.div_exact(&c).is_none());
    }
}
