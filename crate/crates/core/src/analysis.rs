//! Structural analysis of a candidate x-flat output for a three-input
//! system: relative degrees, the multi-index of highest jet orders, the
//! derivative structure after normalizing the first input, the associated
//! codistribution sequence and the static-feedback-equivalence verdict.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{
    corank, differential, extended_vector_field, frobenius_integrable, intersect_with_state_span,
    Codistribution, ExtendedSpace, FrobeniusReport, OneForm, VectorField,
};
use crate::matrix::ExprMatrix;
use crate::numeric::{zero_verdict, Sampling, TriState};
use crate::solve::solve_for;
use crate::symbol::{Symbol, SymbolKind};
use crate::system::SystemModel;

/// Multi-index over the three flat-output components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiIndex(pub [u32; 3]);

impl MultiIndex {
    pub fn sum(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn add_scalar(&self, d: u32) -> MultiIndex {
        MultiIndex([self.0[0] + d, self.0[1] + d, self.0[2] + d])
    }

    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a <= b)
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

/// Candidate x-flat output after rearrangement, with its basic indices.
#[derive(Debug, Clone)]
pub struct FlatOutputCandidate {
    /// Components in rearranged order.
    pub phi: [Expr; 3],
    /// `permutation[slot] = original component index`.
    pub permutation: [usize; 3],
    pub k: MultiIndex,
    pub r: MultiIndex,
    pub d_diff: u32,
}

/// Lazily extended table of time derivatives of the flat-output components
/// along the extended vector field.
pub struct JetTable<'a> {
    space: &'a ExtendedSpace,
    field: VectorField,
    jets: [Vec<Expr>; 3],
}

impl<'a> JetTable<'a> {
    pub fn new(sys: &SystemModel, space: &'a ExtendedSpace, phi: &[Expr; 3]) -> Self {
        JetTable {
            space,
            field: extended_vector_field(sys, space),
            jets: [
                vec![phi[0].clone()],
                vec![phi[1].clone()],
                vec![phi[2].clone()],
            ],
        }
    }

    pub fn get(&mut self, component: usize, order: u32) -> &Expr {
        let chain = &mut self.jets[component];
        while chain.len() <= order as usize {
            let next = crate::geometry::lie_scalar(
                &self.field,
                chain.last().expect("chain nonempty"),
                self.space,
            );
            chain.push(next);
        }
        &chain[order as usize]
    }
}

fn depends_on_inputs(e: &Expr, inputs: &[Symbol]) -> bool {
    inputs.iter().any(|u| e.depends_on(u))
}

/// Relative degrees: the smallest derivative order at which each component
/// explicitly involves an input. Errors if a component stays input-free for
/// 2n derivatives.
pub fn relative_degrees(sys: &SystemModel, phi: &[Expr; 3]) -> Result<MultiIndex> {
    let bound = 2 * sys.n() as u32;
    let space = ExtendedSpace::new(sys, bound);
    let mut jets = JetTable::new(sys, &space, phi);
    let mut k = [0u32; 3];
    for j in 0..3 {
        let mut found = false;
        for l in 0..=bound {
            if depends_on_inputs(jets.get(j, l), sys.inputs()) {
                k[j] = l;
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::NeverReachesInputs {
                component: j + 1,
                bound: bound as usize,
            });
        }
    }
    Ok(MultiIndex(k))
}

/// The componentwise-minimal multi-index R with
/// `span<dx> <= span<d phi_[0,R-1]>` and `span<dx,du> <= span<d phi_[0,R]>`,
/// found by saturating uniformly and then attempting single decrements.
pub fn determine_r(
    sys: &SystemModel,
    phi: &[Expr; 3],
    k: &MultiIndex,
    cfg: &Sampling,
) -> Result<MultiIndex> {
    let n = sys.n() as u32;
    let bound = 3 * sys.n() as u32;
    let space = ExtendedSpace::new(sys, bound);
    let mut jets = JetTable::new(sys, &space, phi);

    // target rows: state differentials, then state+input differentials
    let dim = space.dim();
    let n_states = space.n_states();
    let mut state_rows: Vec<Vec<Expr>> = Vec::with_capacity(n_states);
    for i in 0..n_states {
        let mut row = vec![Expr::zero(); dim];
        row[i] = Expr::one();
        state_rows.push(row);
    }
    let mut input_rows = state_rows.clone();
    for j in 0..sys.m() {
        let idx = space
            .coord_index(space.jet(j, 0))
            .expect("input coordinate");
        let mut row = vec![Expr::zero(); dim];
        row[idx] = Expr::one();
        input_rows.push(row);
    }
    let state_m = ExprMatrix::from_rows(state_rows);
    let input_m = ExprMatrix::from_rows(input_rows);

    // differentials are shared across the containment checks
    let mut diff_cache: std::collections::BTreeMap<(usize, u32), Vec<Expr>> =
        std::collections::BTreeMap::new();
    let space_ref = &space;
    let mut contains = |r: &MultiIndex, jets: &mut JetTable| -> Result<bool> {
        if r.sum() < n {
            return Ok(false);
        }
        let mut rows_low: Vec<Vec<Expr>> = Vec::new();
        let mut rows_high: Vec<Vec<Expr>> = Vec::new();
        for j in 0..3 {
            for l in 0..=r.0[j] {
                let coeffs = diff_cache
                    .entry((j, l))
                    .or_insert_with(|| differential(jets.get(j, l), space_ref).coeffs)
                    .clone();
                if l < r.0[j] {
                    rows_low.push(coeffs.clone());
                }
                rows_high.push(coeffs);
            }
        }
        let low = ExprMatrix::from_rows(rows_low);
        let rank_low = low.generic_rank(cfg)?.rank;
        if low.stack(&state_m).generic_rank(cfg)?.rank != rank_low {
            return Ok(false);
        }
        let high = ExprMatrix::from_rows(rows_high);
        let rank_high = high.generic_rank(cfg)?.rank;
        Ok(high.stack(&input_m).generic_rank(cfg)?.rank == rank_high)
    };

    // breadth: uniform growth from K until both containments hold
    let mut r = *k;
    loop {
        if r.sum() > bound {
            return Err(Error::ParameterizationOrderExceeded(bound as usize));
        }
        if contains(&r, &mut jets)? {
            break;
        }
        r = r.add_scalar(1);
    }
    // minimality: attempt each single-component decrement until none works
    loop {
        let mut improved = false;
        for j in 0..3 {
            if r.0[j] == 0 || r.0[j] <= k.0[j] {
                continue;
            }
            let mut candidate = r;
            candidate.0[j] -= 1;
            if contains(&candidate, &mut jets)? {
                r = candidate;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(r)
}

/// Differential difference `sum(R) - n`.
pub fn differential_difference(r: &MultiIndex, n: usize) -> Result<u32> {
    let total = r.sum();
    if (total as usize) < n {
        return Err(Error::Invalid(format!(
            "sum(R) = {total} is below the state dimension {n}"
        )));
    }
    Ok(total - n as u32)
}

/// Order the components so that `r1-k1 = r3-k3 >= r2-k2`: the maximum of
/// `r-k` must be attained at least twice and at most two distinct values may
/// occur. Stable: among equal differences the original order is kept.
/// Returns `permutation[slot] = original index`.
pub fn rearrange_components(k: &MultiIndex, r: &MultiIndex) -> Result<[usize; 3]> {
    let diffs: Vec<u32> = (0..3).map(|j| r.0[j] - k.0[j]).collect();
    let mut distinct: Vec<u32> = diffs.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() > 2 {
        return Err(Error::Rearrangement(format!(
            "r - k takes three distinct values {diffs:?}"
        )));
    }
    let max = *distinct.last().expect("nonempty");
    let max_positions: Vec<usize> = (0..3).filter(|&j| diffs[j] == max).collect();
    if max_positions.len() < 2 {
        return Err(Error::Rearrangement(format!(
            "the maximum of r - k is attained only once in {diffs:?}"
        )));
    }
    if max_positions.len() == 3 {
        return Ok([0, 1, 2]);
    }
    let min_position = (0..3)
        .find(|j| !max_positions.contains(j))
        .expect("one minimum");
    Ok([max_positions[0], min_position, max_positions[1]])
}

pub fn apply_permutation(values: &MultiIndex, perm: &[usize; 3]) -> MultiIndex {
    MultiIndex([values.0[perm[0]], values.0[perm[1]], values.0[perm[2]]])
}

/// Record of one static input replacement `new = defining(x, u)` with its
/// inverse `old = inverse(x, new, rest)`.
#[derive(Debug, Clone)]
pub struct InputTransform {
    pub new_input: Symbol,
    pub replaced: Symbol,
    pub replaced_index: usize,
    pub defining: Expr,
    pub inverse: Expr,
    pub guards: Vec<Expr>,
}

pub(crate) fn fresh_symbol(base: &str, taken: &[Symbol], kind: SymbolKind) -> Symbol {
    let mut name = base.to_string();
    while taken.iter().any(|s| s.name() == name) {
        name.push('_');
    }
    Symbol::new(name, kind)
}

/// Replace one original input by `uhat1 = phi^1_[k1](x, u)`: the input is
/// chosen as the lowest-index one whose coefficient is certified nonzero,
/// and moved into the first slot.
pub fn normalize_u1(
    sys: &SystemModel,
    phi: &[Expr; 3],
    k: &MultiIndex,
    cfg: &Sampling,
) -> Result<(SystemModel, InputTransform)> {
    let space = ExtendedSpace::new(sys, 1);
    let mut jets = JetTable::new(sys, &space, phi);
    let phi1_k = jets.get(0, k.0[0]).clone();
    let mut chosen: Option<usize> = None;
    let mut saw_inconclusive: Option<String> = None;
    for (i, u) in sys.inputs().iter().enumerate() {
        let coeff = phi1_k.diff(u).simplify();
        match zero_verdict(&coeff, cfg) {
            TriState::No => {
                chosen = Some(i);
                break;
            }
            TriState::Yes => {}
            TriState::Inconclusive(r) => {
                if saw_inconclusive.is_none() {
                    saw_inconclusive = Some(r);
                }
            }
        }
    }
    let Some(idx) = chosen else {
        return Err(match saw_inconclusive {
            Some(r) => Error::Inconclusive(format!(
                "no input coefficient of phi1_[k1] is certified nonzero: {r}"
            )),
            None => Error::Structure(
                "phi1_[k1] does not depend on any input with nonzero coefficient".to_string(),
            ),
        });
    };
    let all: Vec<Symbol> = sys
        .states()
        .iter()
        .chain(sys.inputs().iter())
        .cloned()
        .collect();
    let uhat = fresh_symbol("uhat1", &all, SymbolKind::Input);
    let replaced = sys.inputs()[idx].clone();
    // solve phi1_[k1] - uhat = 0 for the replaced input
    let eq = Expr::sub(phi1_k.clone(), Expr::sym(&uhat));
    let sol = solve_for(&[eq], &[replaced.clone()], cfg)?;
    let inverse = sol.assignments[&replaced].clone();
    let mut new_sys = sys.with_input_replaced(&replaced, uhat.clone(), &inverse)?;
    // move the new input into slot 1
    if idx != 0 {
        let mut inputs = new_sys.inputs().to_vec();
        let u = inputs.remove(idx);
        inputs.insert(0, u);
        new_sys = SystemModel::new(
            new_sys.states().to_vec(),
            inputs,
            new_sys.dynamics().to_vec(),
        )?;
    }
    Ok((
        new_sys,
        InputTransform {
            new_input: uhat,
            replaced,
            replaced_index: idx,
            defining: phi1_k,
            inverse,
            guards: sol.guards,
        },
    ))
}

/// The derivative structure of the output after the first-input
/// normalization: where the second and third inputs enter the derivative
/// chains, and the index identities that come with it.
#[derive(Debug, Clone)]
pub struct DerivativeStructure {
    pub k: MultiIndex,
    pub r: MultiIndex,
    pub p: MultiIndex,
    pub s: u32,
    pub d_rp: u32,
    pub d_max: u32,
    pub d_min: u32,
    pub delta: u32,
    /// Inputs of the normalized system in canonical order `(uhat1, u2, u3)`.
    pub inputs: [Symbol; 3],
    /// phi jets per component, orders 0..=r_j.
    pub jets: [Vec<Expr>; 3],
}

/// Detect the derivative structure on the normalized system. The system's
/// inputs carry `uhat1` first; the roles of the remaining two are detected
/// (the one entering the chains earlier is the second input).
pub fn derivative_structure(
    sys_norm: &SystemModel,
    phi: &[Expr; 3],
    k: &MultiIndex,
    r: &MultiIndex,
    cfg: &Sampling,
) -> Result<DerivativeStructure> {
    let _ = cfg;
    if sys_norm.m() != 3 {
        return Err(Error::NotThreeInputs(sys_norm.m()));
    }
    let d_max = r.0[0] - k.0[0];
    let d_min = r.0[1] - k.0[1];
    if r.0[2] - k.0[2] != d_max || d_min > d_max {
        return Err(Error::Structure(format!(
            "rearrangement invariant violated: r - k = ({}, {}, {})",
            r.0[0] - k.0[0],
            r.0[1] - k.0[1],
            r.0[2] - k.0[2]
        )));
    }
    let delta = d_max - d_min;

    let max_r = *r.0.iter().max().expect("three entries");
    let space = ExtendedSpace::new(sys_norm, max_r);
    let mut jets = JetTable::new(sys_norm, &space, phi);
    let uhat = sys_norm.inputs()[0].clone();
    let cand_a = sys_norm.inputs()[1].clone();
    let cand_b = sys_norm.inputs()[2].clone();

    // first derivative order of phi^j (j = 2,3) involving the given input
    let first_dep = |input: &Symbol, j: usize, jets: &mut JetTable| -> Option<u32> {
        (0..=r.0[j]).find(|&l| jets.get(j, l).depends_on(input))
    };

    let fa = [
        first_dep(&cand_a, 1, &mut jets),
        first_dep(&cand_a, 2, &mut jets),
    ];
    let fb = [
        first_dep(&cand_b, 1, &mut jets),
        first_dep(&cand_b, 2, &mut jets),
    ];
    let min_of = |f: &[Option<u32>; 2]| f.iter().flatten().min().copied();
    let (second, third, fs, ft) = match (min_of(&fa), min_of(&fb)) {
        (Some(a), Some(b)) if b < a => (cand_b, cand_a, fb, fa),
        (Some(_), _) => (cand_a, cand_b, fa, fb),
        (None, Some(_)) => (cand_b, cand_a, fb, fa),
        (None, None) => {
            return Err(Error::Structure(
                "neither remaining input ever enters the derivative chains".to_string(),
            ))
        }
    };

    // p2 from phi^2; p3 from phi^3 or, for degenerate chains that never see
    // the second input there, through the r2 - p2 = r3 - p3 identity
    let p2 = match fs[0] {
        Some(l) => l,
        None => {
            return Err(Error::Structure(
                "phi2 never depends on the second input".to_string(),
            ))
        }
    };
    if p2 > r.0[1] {
        return Err(Error::Structure("p2 exceeds r2".to_string()));
    }
    let d_rp = r.0[1] - p2;
    let p3 = match fs[1] {
        Some(l) => {
            if r.0[2] - l != d_rp {
                return Err(Error::Structure(format!(
                    "r2 - p2 = {d_rp} but r3 - p3 = {}",
                    r.0[2] - l
                )));
            }
            l
        }
        None => r.0[2] - d_rp,
    };
    if p2 < k.0[1] || p3 < k.0[2] {
        return Err(Error::Structure(format!(
            "p = (_, {p2}, {p3}) falls below the relative degrees"
        )));
    }
    if p3 - k.0[2] < p2 - k.0[1] {
        return Err(Error::Structure(format!(
            "p3 - k3 = {} < p2 - k2 = {}",
            p3 - k.0[2],
            p2 - k.0[1]
        )));
    }
    if (p3 - k.0[2]) - (p2 - k.0[1]) != delta {
        return Err(Error::Structure(format!(
            "(p3 - k3) - (p2 - k2) = {} but delta = {delta}",
            (p3 - k.0[2]) - (p2 - k.0[1])
        )));
    }

    // s: additional delay until the third input appears
    let s2 = ft[0].map(|l| l.saturating_sub(p2));
    let s3 = ft[1].map(|l| l.saturating_sub(p3));
    let s = match (s2, s3) {
        (Some(a), Some(b)) => {
            if a != b {
                return Err(Error::Structure(format!(
                    "third input enters at p2+{a} in phi2 but p3+{b} in phi3"
                )));
            }
            a
        }
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => {
            return Err(Error::Structure(
                "third input never enters the derivative chains".to_string(),
            ))
        }
    };
    if s > d_rp {
        return Err(Error::Structure(format!("s = {s} exceeds d_rp = {d_rp}")));
    }

    let p1 = k.0[0] + (p3 - k.0[2]);
    let jets_out = [
        (0..=r.0[0]).map(|l| jets.get(0, l).clone()).collect(),
        (0..=r.0[1]).map(|l| jets.get(1, l).clone()).collect(),
        (0..=r.0[2]).map(|l| jets.get(2, l).clone()).collect(),
    ];
    Ok(DerivativeStructure {
        k: *k,
        r: *r,
        p: MultiIndex([p1, p2, p3]),
        s,
        d_rp,
        d_max,
        d_min,
        delta,
        inputs: [uhat, second, third],
        jets: jets_out,
    })
}

/// The two index identities of the derivative structure.
#[derive(Debug, Clone)]
pub struct IdentityReport {
    /// n = k1 + p2 + r3
    pub dimension_holds: bool,
    /// d_diff = d_max + d_rp
    pub difference_holds: bool,
}

pub fn structure_identities(ds: &DerivativeStructure, n: usize, d_diff: u32) -> IdentityReport {
    IdentityReport {
        dimension_holds: (ds.k.0[0] + ds.p.0[1] + ds.r.0[2]) as usize == n,
        difference_holds: d_diff == ds.d_max + ds.d_rp,
    }
}

/// `A(i) = (k1-1+i, k2-1+max(i-delta,0), k3-1+i)`.
pub fn multi_index_a(k: &MultiIndex, delta: u32, i: u32) -> MultiIndex {
    MultiIndex([
        k.0[0] - 1 + i,
        k.0[1] - 1 + i.saturating_sub(delta),
        k.0[2] - 1 + i,
    ])
}

/// One level of the codistribution sequence.
#[derive(Debug, Clone)]
pub struct QLevel {
    pub index: u32,
    pub a: MultiIndex,
    pub p: Codistribution,
    pub q: Codistribution,
    /// Corank of the previous Q level in this one (0 at level 0).
    pub corank: usize,
    pub integrable: TriState,
    pub frobenius: FrobeniusReport,
}

/// The full sequence together with the space it lives on.
pub struct QSequence {
    pub levels: Vec<QLevel>,
    pub space: ExtendedSpace,
}

fn expected_corank(i: u32, delta: u32, p3k3: u32) -> usize {
    if i <= delta {
        1
    } else if i <= p3k3 {
        2
    } else {
        1
    }
}

/// Build the P and Q codistribution sequences, validate the corank pattern
/// and run the integrability test on every level.
pub fn build_sequences(
    sys_norm: &SystemModel,
    ds: &DerivativeStructure,
    cfg: &Sampling,
) -> Result<QSequence> {
    let l_u = ds.r.sum();
    let space = ExtendedSpace::new(sys_norm, l_u);
    let phi = [
        ds.jets[0][0].clone(),
        ds.jets[1][0].clone(),
        ds.jets[2][0].clone(),
    ];
    let mut jets = JetTable::new(sys_norm, &space, &phi);
    let p3k3 = ds.p.0[2] - ds.k.0[2];
    let mut levels: Vec<QLevel> = Vec::new();
    for i in 0..=ds.d_max {
        let a = multi_index_a(&ds.k, ds.delta, i);
        let mut forms: Vec<OneForm> = Vec::new();
        for j in 0..3 {
            for l in 0..=a.0[j] {
                forms.push(differential(jets.get(j, l), &space));
            }
        }
        let p = Codistribution::span(&forms, &space, cfg)?;
        let q = intersect_with_state_span(&p, &space, cfg)?;
        let ck = if let Some(prev) = levels.last() {
            let ck = corank(&prev.q, &q, cfg)?;
            let expected = expected_corank(i, ds.delta, p3k3);
            if ck != expected {
                return Err(Error::CorankPattern {
                    level: i as usize,
                    expected,
                    found: ck,
                });
            }
            ck
        } else {
            0
        };
        let frob = frobenius_integrable(&q, &space, cfg);
        levels.push(QLevel {
            index: i,
            a,
            p,
            q,
            corank: ck,
            integrable: frob.verdict.clone(),
            frobenius: frob,
        });
    }
    // closing invariants: coranks sum to n - sum(K), the top level spans dx
    let n = sys_norm.n();
    let corank_sum: usize = levels.iter().map(|l| l.corank).sum();
    if corank_sum != n - ds.k.sum() as usize {
        return Err(Error::Structure(format!(
            "coranks sum to {corank_sum}, expected n - sum(K) = {}",
            n - ds.k.sum() as usize
        )));
    }
    let last = levels.last().expect("at least level 0");
    if last.q.rank() != n {
        return Err(Error::Structure(format!(
            "Q at the top level has rank {}, expected n = {n}",
            last.q.rank()
        )));
    }
    Ok(QSequence { levels, space })
}

/// Aggregate integrability verdict of the sequence.
pub fn sfe_verdict(seq: &QSequence) -> TriState {
    let mut reason: Option<String> = None;
    for level in &seq.levels {
        match &level.integrable {
            TriState::Yes => {}
            TriState::No => return TriState::No,
            TriState::Inconclusive(r) => {
                if reason.is_none() {
                    reason = Some(format!("level {}: {r}", level.index));
                }
            }
        }
    }
    match reason {
        None => TriState::Yes,
        Some(r) => TriState::Inconclusive(r),
    }
}

/// Outcome of the minimal-linearizability check (the `s = d_rp` property,
/// decided via the rank-2 shortcut or a user hint).
#[derive(Debug, Clone)]
pub struct SflReport {
    pub verdict: TriState,
    pub phi_u2: Option<Expr>,
    pub rank_input_jacobian: usize,
}

/// Check whether a second-input transformation brings `s` up to `d_rp`:
/// the rank-2 case adopts `phi2_[k2]`, a hint is applied as given, and the
/// general search is out of scope (inconclusive).
pub fn minimal_sfl_check(
    sys_affine: &SystemModel,
    sys_norm: &SystemModel,
    phi: &[Expr; 3],
    ds: &DerivativeStructure,
    hint: Option<&Expr>,
    cfg: &Sampling,
) -> Result<SflReport> {
    // rank of the input Jacobian of phi_[K] on the affine system
    let space = ExtendedSpace::new(sys_affine, 1);
    let mut jets = JetTable::new(sys_affine, &space, phi);
    let mut rows: Vec<Vec<Expr>> = Vec::new();
    for j in 0..3 {
        let e = jets.get(j, ds.k.0[j]).clone();
        rows.push(sys_affine.inputs().iter().map(|u| e.diff(u)).collect());
    }
    let rank = ExprMatrix::from_rows(rows).generic_rank(cfg)?.rank;

    if ds.s == ds.d_rp {
        return Ok(SflReport {
            verdict: TriState::Yes,
            phi_u2: None,
            rank_input_jacobian: rank,
        });
    }
    let candidate = if rank == 2 {
        let space_n = ExtendedSpace::new(sys_norm, 1);
        let mut jets_n = JetTable::new(sys_norm, &space_n, phi);
        Some(jets_n.get(1, ds.k.0[1]).clone())
    } else {
        hint.cloned()
    };
    let Some(phi_u2) = candidate else {
        return Ok(SflReport {
            verdict: TriState::Inconclusive(
                "s < d_rp and no second-input transformation candidate; supply a hint".to_string(),
            ),
            phi_u2: None,
            rank_input_jacobian: rank,
        });
    };
    // apply uhat2 = phi_u2 replacing the second input and re-detect s
    let second = ds.inputs[1].clone();
    let coeff = phi_u2.diff(&second).simplify();
    if !zero_verdict(&coeff, cfg).is_no() {
        return Err(Error::NotInvertible(format!(
            "candidate second-input transformation has no certified dependence on {second}"
        )));
    }
    let all: Vec<Symbol> = sys_norm
        .states()
        .iter()
        .chain(sys_norm.inputs().iter())
        .cloned()
        .collect();
    let uhat2 = fresh_symbol("uhat2", &all, SymbolKind::Input);
    let eq = Expr::sub(phi_u2.clone(), Expr::sym(&uhat2));
    let sol = solve_for(&[eq], &[second.clone()], cfg)?;
    let sys2 = sys_norm.with_input_replaced(&second, uhat2, &sol.assignments[&second])?;
    let ds2 = derivative_structure(&sys2, phi, &ds.k, &ds.r, cfg)?;
    Ok(SflReport {
        verdict: if ds2.s == ds2.d_rp {
            TriState::Yes
        } else {
            TriState::Inconclusive(format!(
                "after the transformation s = {} still differs from d_rp = {}",
                ds2.s, ds2.d_rp
            ))
        },
        phi_u2: Some(phi_u2),
        rank_input_jacobian: rank,
    })
}

/// Everything the analysis pipeline produces for one system/candidate pair.
pub struct AnalysisReport {
    pub candidate: FlatOutputCandidate,
    pub structure: DerivativeStructure,
    pub identities: IdentityReport,
    pub sequence: QSequence,
    pub verdict: TriState,
    pub sfl: SflReport,
    pub input_transform: InputTransform,
    pub sys_norm: SystemModel,
}

/// Run the full analysis on a control-affine three-input system with an
/// x-flat candidate (components in file order).
pub fn analyze(
    sys: &SystemModel,
    phi_original: &[Expr; 3],
    sfl_hint: Option<&Expr>,
    cfg: &Sampling,
) -> Result<AnalysisReport> {
    if sys.m() != 3 {
        return Err(Error::NotThreeInputs(sys.m()));
    }
    if !sys.is_control_affine() {
        return Err(Error::NotControlAffine);
    }
    for (j, p) in phi_original.iter().enumerate() {
        if depends_on_inputs(p, sys.inputs()) {
            return Err(Error::Invalid(format!(
                "flat-output component {} involves inputs; only x-flat candidates are supported",
                j + 1
            )));
        }
    }
    let k0 = relative_degrees(sys, phi_original)?;
    let r0 = determine_r(sys, phi_original, &k0, cfg)?;
    let d_diff = differential_difference(&r0, sys.n())?;
    let perm = rearrange_components(&k0, &r0)?;
    let phi = [
        phi_original[perm[0]].clone(),
        phi_original[perm[1]].clone(),
        phi_original[perm[2]].clone(),
    ];
    let k = apply_permutation(&k0, &perm);
    let r = apply_permutation(&r0, &perm);
    let candidate = FlatOutputCandidate {
        phi: phi.clone(),
        permutation: perm,
        k,
        r,
        d_diff,
    };
    let (sys_norm, input_transform) = normalize_u1(sys, &phi, &k, cfg)?;
    let structure = derivative_structure(&sys_norm, &phi, &k, &r, cfg)?;
    let identities = structure_identities(&structure, sys.n(), d_diff);
    let sequence = build_sequences(&sys_norm, &structure, cfg)?;
    let verdict = sfe_verdict(&sequence);
    let sfl = minimal_sfl_check(sys, &sys_norm, &phi, &structure, sfl_hint, cfg)?;
    Ok(AnalysisReport {
        candidate,
        structure,
        identities,
        sequence,
        verdict,
        sfl,
        input_transform,
        sys_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::{parse_expr, SymbolScope};

    /// Three independent integrator chains of lengths 2, 1, 3.
    fn chains_system() -> (SystemModel, [Expr; 3]) {
        let states: Vec<Symbol> = ["x1", "x2", "w1", "z1", "z2", "z3"]
            .iter()
            .map(|n| Symbol::new(*n, SymbolKind::State))
            .collect();
        let inputs: Vec<Symbol> = ["u1", "u2", "u3"]
            .iter()
            .map(|n| Symbol::new(*n, SymbolKind::Input))
            .collect();
        let scope = SymbolScope::from_symbols(states.iter().chain(inputs.iter()));
        let dynamics = ["x2", "u1", "u2", "z2", "z3", "u3"]
            .iter()
            .map(|t| parse_expr(t, &scope).unwrap())
            .collect();
        let sys = SystemModel::new(states, inputs, dynamics).unwrap();
        let phi = [
            parse_expr("x1", &scope).unwrap(),
            parse_expr("w1", &scope).unwrap(),
            parse_expr("z1", &scope).unwrap(),
        ];
        (sys, phi)
    }

    #[test]
    fn relative_degrees_chain() {
        let (sys, phi) = chains_system();
        let k = relative_degrees(&sys, &phi).unwrap();
        assert_eq!(k, MultiIndex([2, 1, 3]));
    }

    #[test]
    fn sfl_chains_full_analysis() {
        let cfg = Sampling::default();
        let (sys, phi) = chains_system();
        let report = analyze(&sys, &phi, None, &cfg).unwrap();
        // R = K and d_diff = 0 for static feedback linearizable chains
        assert_eq!(report.candidate.r, report.candidate.k);
        assert_eq!(report.candidate.d_diff, 0);
        assert_eq!(report.structure.s, 0);
        assert_eq!(report.structure.d_rp, 0);
        assert_eq!(report.structure.p, report.candidate.k);
        assert!(report.identities.dimension_holds);
        assert!(report.identities.difference_holds);
        assert!(report.verdict.is_yes());
        assert!(report.sfl.verdict.is_yes());
        // every level of the sequence is a span of state differentials
        for level in &report.sequence.levels {
            assert!(level.integrable.is_yes());
        }
    }

    #[test]
    fn rearrangement_cases() {
        // (3,2,3): identity
        let k = MultiIndex([1, 1, 1]);
        let r = MultiIndex([4, 3, 4]);
        assert_eq!(rearrange_components(&k, &r).unwrap(), [0, 1, 2]);
        // (2,3,3): component 1 moves to slot 2
        let r = MultiIndex([3, 4, 4]);
        assert_eq!(rearrange_components(&k, &r).unwrap(), [1, 0, 2]);
        // all equal: identity
        let r = MultiIndex([3, 3, 3]);
        assert_eq!(rearrange_components(&k, &r).unwrap(), [0, 1, 2]);
        // three distinct differences: error
        let r = MultiIndex([2, 3, 4]);
        assert!(rearrange_components(&k, &r).is_err());
        // maximum attained once: error
        let r = MultiIndex([4, 2, 2]);
        assert!(rearrange_components(&k, &r).is_err());
    }

    #[test]
    fn a_index_formula() {
        // delta = 1: the second component lags by delta
        let k = MultiIndex([2, 2, 2]);
        assert_eq!(multi_index_a(&k, 1, 0), MultiIndex([1, 1, 1]));
        assert_eq!(multi_index_a(&k, 1, 1), MultiIndex([2, 1, 2]));
        assert_eq!(multi_index_a(&k, 1, 2), MultiIndex([3, 2, 3]));
        assert_eq!(multi_index_a(&k, 1, 3), MultiIndex([4, 3, 4]));
        // delta = 0 increments everywhere
        assert_eq!(multi_index_a(&k, 0, 2), MultiIndex([3, 3, 3]));
    }

    #[test]
    fn example1_index_arithmetic() {
        // aerial-manipulator indices: K = (2,2,2), R = (4,4,4), n = 8
        let k = MultiIndex([2, 2, 2]);
        let r = MultiIndex([4, 4, 4]);
        let d_diff = differential_difference(&r, 8).unwrap();
        assert_eq!(d_diff, 4);
        let perm = rearrange_components(&k, &r).unwrap();
        assert_eq!(perm, [0, 1, 2]);
        let d_max = r.0[0] - k.0[0];
        let d_min = r.0[1] - k.0[1];
        assert_eq!(d_max - d_min, 0); // delta
        assert_eq!(multi_index_a(&k, 0, 0), MultiIndex([1, 1, 1]));
        assert_eq!(multi_index_a(&k, 0, 1), MultiIndex([2, 2, 2]));
        assert_eq!(multi_index_a(&k, 0, 2), MultiIndex([3, 3, 3]));
        // with s = d_rp = 2: P = K and the dimension identity gives (2,2,4)
        let d_rp = 2;
        let p2 = r.0[1] - d_rp;
        let r3 = r.0[2];
        assert_eq!((k.0[0], p2, r3), (2, 2, 4));
        assert_eq!(k.0[0] + p2 + r3, 8);
        assert_eq!(d_diff, d_max + d_rp);
    }
}
