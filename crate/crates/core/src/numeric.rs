//! Floating-point evaluation, rational sample points and the probabilistic
//! zero test that backs every "certified nonzero" verdict in the toolkit.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::expr::{Expr, Func};
use crate::poly::rational_normal;
use crate::symbol::Symbol;

/// Three-valued verdict for symbolic decision procedures. `Inconclusive`
/// always carries the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TriState {
    Yes,
    No,
    Inconclusive(String),
}

impl TriState {
    pub fn is_yes(&self) -> bool {
        matches!(self, TriState::Yes)
    }

    pub fn is_no(&self) -> bool {
        matches!(self, TriState::No)
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(self, TriState::Inconclusive(_))
    }
}

impl std::fmt::Display for TriState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TriState::Yes => write!(f, "yes"),
            TriState::No => write!(f, "no"),
            TriState::Inconclusive(r) => write!(f, "inconclusive ({r})"),
        }
    }
}

/// Why a pointwise evaluation failed.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    /// Division by (numerically) zero.
    Pole,
    /// log of a non-positive number, even root of a negative number, ...
    Domain,
    MissingSymbol(String),
    NonFinite,
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalError::Pole => write!(f, "evaluation at a pole"),
            EvalError::Domain => write!(f, "function argument outside domain"),
            EvalError::MissingSymbol(s) => write!(f, "no value bound for symbol {s}"),
            EvalError::NonFinite => write!(f, "non-finite intermediate value"),
        }
    }
}

const POLE_EPS: f64 = 1e-300;

/// Evaluate at a point given as symbol -> f64.
pub fn eval(e: &Expr, env: &BTreeMap<Symbol, f64>) -> Result<f64, EvalError> {
    let v = eval_inner(e, env)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

fn eval_inner(e: &Expr, env: &BTreeMap<Symbol, f64>) -> Result<f64, EvalError> {
    match e {
        Expr::Num(r) => Ok(rational_to_f64(r)),
        Expr::Sym(s) => env
            .get(s)
            .copied()
            .ok_or_else(|| EvalError::MissingSymbol(s.name().to_string())),
        Expr::Add(ts) => {
            let mut acc = 0.0;
            for t in ts {
                acc += eval_inner(t, env)?;
            }
            Ok(acc)
        }
        Expr::Mul(fs) => {
            let mut acc = 1.0;
            for f in fs {
                acc *= eval_inner(f, env)?;
            }
            Ok(acc)
        }
        Expr::Pow(b, exp) => {
            let base = eval_inner(b, env)?;
            let p = rational_to_f64(exp);
            if exp.is_negative() && base.abs() < POLE_EPS {
                return Err(EvalError::Pole);
            }
            if !exp.is_integer() && base < 0.0 {
                return Err(EvalError::Domain);
            }
            let v = if exp.is_integer() {
                match exp.numer().to_i32() {
                    Some(k) => base.powi(k),
                    None => base.powf(p),
                }
            } else {
                base.powf(p)
            };
            Ok(v)
        }
        Expr::Fun(f, a) => {
            let x = eval_inner(a, env)?;
            let v = match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Tan => x.tan(),
                Func::Exp => x.exp(),
                Func::Log => {
                    if x <= 0.0 {
                        return Err(EvalError::Domain);
                    }
                    x.ln()
                }
            };
            Ok(v)
        }
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64()
        .unwrap_or_else(|| r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN))
}

/// A rational sample point, kept exact for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePoint {
    pub assignment: BTreeMap<Symbol, BigRational>,
}

impl SamplePoint {
    pub fn to_f64_env(&self) -> BTreeMap<Symbol, f64> {
        self.assignment
            .iter()
            .map(|(s, r)| (s.clone(), rational_to_f64(r)))
            .collect()
    }
}

/// Sampling and zero-test configuration. Seeds are explicit so every run is
/// reproducible; the default matches the CLI defaults.
#[derive(Debug, Clone)]
pub struct Sampling {
    pub seed: u64,
    /// Number of sample points for the zero test.
    pub samples: usize,
    /// |value| above this at any sample certifies "nonzero".
    pub tolerance: f64,
    /// Optional preferred operating point, tried before random points.
    pub preferred: Vec<(Symbol, BigRational)>,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            seed: 0,
            samples: 20,
            tolerance: 1e-9,
            preferred: Vec::new(),
        }
    }
}

impl Sampling {
    pub fn with_seed(seed: u64) -> Self {
        Sampling {
            seed,
            ..Self::default()
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Random rational with numerator and denominator bounded by 100,
    /// bounded away from zero often enough to be useful.
    pub fn random_rational(&self, rng: &mut ChaCha8Rng) -> BigRational {
        let num: i64 = rng.gen_range(-100..=100);
        let den: i64 = rng.gen_range(1..=100);
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    /// A sample point for the given symbols. The first draw uses the
    /// preferred operating point where it covers a symbol.
    pub fn sample_point(
        &self,
        symbols: &[Symbol],
        rng: &mut ChaCha8Rng,
        use_preferred: bool,
    ) -> SamplePoint {
        let mut assignment = BTreeMap::new();
        for s in symbols {
            let preset = if use_preferred {
                self.preferred
                    .iter()
                    .find(|(p, _)| p == s)
                    .map(|(_, v)| v.clone())
            } else {
                None
            };
            let v = preset.unwrap_or_else(|| self.random_rational(rng));
            assignment.insert(s.clone(), v);
        }
        SamplePoint { assignment }
    }
}

/// Outcome of the zero test with its evidence.
#[derive(Debug, Clone)]
pub struct ZeroTest {
    pub verdict: TriState,
    /// For a "no": a point where |value| exceeded the tolerance.
    pub witness: Option<(SamplePoint, f64)>,
}

/// Decide whether `e` vanishes identically.
///
/// Symbolic route first: the canonical form, then the rational normal form
/// (expand + gcd). If both fail, evaluate at random rational points: any
/// value above tolerance certifies "no"; if every point evaluates near zero
/// (or at a pole) the test is inconclusive.
pub fn is_identically_zero(e: &Expr, cfg: &Sampling) -> ZeroTest {
    let s = e.simplify();
    if s.is_zero() {
        return ZeroTest {
            verdict: TriState::Yes,
            witness: None,
        };
    }
    let normal = rational_normal(&s);
    if normal.is_zero() {
        return ZeroTest {
            verdict: TriState::Yes,
            witness: None,
        };
    }
    let symbols: Vec<Symbol> = normal.free_symbols().into_iter().collect();
    if symbols.is_empty() {
        // nonzero constant, possibly irrational (e.g. sqrt 2): evaluate once
        return match eval(&normal, &BTreeMap::new()) {
            Ok(v) if v.abs() > cfg.tolerance => ZeroTest {
                verdict: TriState::No,
                witness: Some((
                    SamplePoint {
                        assignment: BTreeMap::new(),
                    },
                    v,
                )),
            },
            _ => ZeroTest {
                verdict: TriState::Inconclusive(
                    "constant did not evaluate clearly nonzero".to_string(),
                ),
                witness: None,
            },
        };
    }
    let mut rng = cfg.rng();
    let mut poles = 0usize;
    for i in 0..cfg.samples {
        let point = cfg.sample_point(&symbols, &mut rng, i == 0);
        match eval(&normal, &point.to_f64_env()) {
            Ok(v) if v.abs() > cfg.tolerance => {
                return ZeroTest {
                    verdict: TriState::No,
                    witness: Some((point, v)),
                };
            }
            Ok(_) => {}
            Err(_) => poles += 1,
        }
    }
    let reason = if poles == cfg.samples {
        format!("all {} sample points were poles", cfg.samples)
    } else {
        format!(
            "vanishes at all {} usable sample points but is not symbolically zero",
            cfg.samples - poles
        )
    };
    ZeroTest {
        verdict: TriState::Inconclusive(reason),
        witness: None,
    }
}

/// Shorthand: the verdict only.
pub fn zero_verdict(e: &Expr, cfg: &Sampling) -> TriState {
    is_identically_zero(e, cfg).verdict
}

/// Strong canonical equality: `a - b` reduces to zero symbolically.
pub fn canonical_eq(a: &Expr, b: &Expr, cfg: &Sampling) -> bool {
    is_identically_zero(&Expr::sub(a.clone(), b.clone()), cfg)
        .verdict
        .is_yes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::symbol::{Symbol, SymbolKind};

    fn sym(name: &str) -> Symbol {
        Symbol::new(name, SymbolKind::State)
    }

    #[test]
    fn zero_test_trivial() {
        let cfg = Sampling::default();
        let x = Expr::sym(&sym("x"));
        let e = Expr::sub(x.clone(), x.clone());
        assert!(is_identically_zero(&e, &cfg).verdict.is_yes());
    }

    #[test]
    fn zero_test_nonzero_with_witness() {
        let cfg = Sampling::default();
        let u = Expr::sym(&sym("u1h"));
        // 1 + u is nonzero at generic points
        let e = Expr::add2(Expr::one(), u);
        let t = is_identically_zero(&e, &cfg);
        assert!(t.verdict.is_no());
        let (_, v) = t.witness.expect("witness for no");
        assert!(v.abs() > 1e-9);
    }

    #[test]
    fn pythagorean_never_no() {
        // guaranteed by the simplifier rule here; stays yes
        let cfg = Sampling::default();
        let x = Expr::sym(&sym("x"));
        let e = Expr::add(vec![
            Expr::powi(Expr::fun(crate::expr::Func::Sin, x.clone()), 2),
            Expr::powi(Expr::fun(crate::expr::Func::Cos, x.clone()), 2),
            Expr::int(-1),
        ]);
        let t = is_identically_zero(&e, &cfg);
        assert!(!t.verdict.is_no());
    }

    #[test]
    fn hidden_rational_zero() {
        let cfg = Sampling::default();
        let x = Expr::sym(&sym("x"));
        let d = Expr::add2(x.clone(), Expr::one());
        // x/(x+1) - 1 + 1/(x+1) == 0
        let e = Expr::add(vec![
            Expr::div(x.clone(), d.clone()),
            Expr::int(-1),
            Expr::div(Expr::one(), d),
        ]);
        assert!(is_identically_zero(&e, &cfg).verdict.is_yes());
    }

    #[test]
    fn eval_pole_detected() {
        let x = sym("x");
        let e = Expr::div(Expr::one(), Expr::sym(&x));
        let mut env = BTreeMap::new();
        env.insert(x.clone(), 0.0);
        assert_eq!(eval(&e, &env), Err(EvalError::Pole));
    }
}
