//! Input prolongations, the affine lift for non-affine systems and the
//! iterative equivalence search with its termination bound.

use crate::analysis::{analyze, AnalysisReport};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::numeric::Sampling;
use crate::symbol::{Symbol, SymbolKind};
use crate::system::SystemModel;

/// History of prolongations applied to a system.
#[derive(Debug, Clone, Default)]
pub struct ProlongationPlan {
    /// Per-iteration per-input orders that were appended.
    pub history: Vec<Vec<u32>>,
}

impl ProlongationPlan {
    /// Total added orders per input.
    pub fn totals(&self, m: usize) -> Vec<u32> {
        let mut out = vec![0; m];
        for step in &self.history {
            for (j, d) in step.iter().enumerate() {
                out[j] += d;
            }
        }
        out
    }
}

/// Append integrator chains to the inputs: input derivatives up to
/// `orders[j] - 1` become states and the `orders[j]`-th derivatives become
/// the new inputs. The flat-output candidate is untouched by construction.
pub fn prolong(sys: &SystemModel, orders: &[u32]) -> Result<SystemModel> {
    if orders.len() != sys.m() {
        return Err(Error::Arity(format!(
            "{} prolongation orders for {} inputs",
            orders.len(),
            sys.m()
        )));
    }
    let mut states = sys.states().to_vec();
    let mut dynamics = sys.dynamics().to_vec();
    let mut inputs = Vec::with_capacity(sys.m());
    for (j, u) in sys.inputs().iter().enumerate() {
        let d = orders[j];
        if d == 0 {
            inputs.push(u.clone());
            continue;
        }
        // chain u, u_1, ..., u_{d-1} as states; u_d is the new input.
        // offset by any jet order the input already carries from earlier
        // prolongations so names stay unique.
        let base_order = u.jet_order();
        let base_name = if base_order == 0 {
            u.name().to_string()
        } else {
            u.name()
                .rsplit_once('_')
                .map(|(b, _)| b.to_string())
                .unwrap_or_else(|| u.name().to_string())
        };
        let mut chain = vec![u.clone()];
        for a in 1..=d {
            chain.push(Symbol::jet(
                Symbol::jet_name(&base_name, base_order + a),
                SymbolKind::InputJet,
                base_order + a,
            ));
        }
        for w in chain.windows(2) {
            states.push(w[0].clone());
            dynamics.push(Expr::sym(&w[1]));
        }
        inputs.push(chain.last().expect("nonempty chain").clone());
    }
    SystemModel::new(states, inputs, dynamics)
}

/// Syntactic control-affineness of the dynamics in the input symbols.
pub fn is_control_affine(sys: &SystemModel) -> bool {
    sys.is_control_affine()
}

/// One-fold prolongation of every input; the result is control-affine
/// because the original inputs become states and the new inputs enter only
/// through the appended integrator chains.
pub fn affine_lift(sys: &SystemModel) -> Result<SystemModel> {
    let lifted = prolong(sys, &vec![1; sys.m()])?;
    debug_assert!(lifted.is_control_affine());
    Ok(lifted)
}

/// One iteration record of the search.
#[derive(Debug, Clone)]
pub struct SearchStep {
    pub iteration: usize,
    pub lifted: bool,
    /// "yes", "no", "inconclusive: ..." or the recoverable failure text.
    pub outcome: String,
}

/// Result of the iterative search.
pub struct SearchResult {
    pub steps: Vec<SearchStep>,
    pub plan: ProlongationPlan,
    /// Present when the search succeeded.
    pub report: Option<AnalysisReport>,
    pub system: SystemModel,
    /// Message mirroring the termination disjunction on cap exhaustion.
    pub exhausted: Option<String>,
}

/// Iterative equivalence test: lift to control-affine form if necessary,
/// analyze, and on failure prolong every input once and repeat, up to
/// `cap` iterations (default 2n-6 with the original state dimension).
pub fn iterative_search(
    sys: &SystemModel,
    phi: &[Expr; 3],
    cap: Option<u32>,
    sfl_hint: Option<&Expr>,
    cfg: &Sampling,
) -> Result<SearchResult> {
    let cap = cap.unwrap_or_else(|| (2 * sys.n()).saturating_sub(6) as u32);
    let mut current = sys.clone();
    let mut plan = ProlongationPlan::default();
    let mut steps = Vec::new();
    let mut iteration = 0usize;
    loop {
        let mut lifted = false;
        if !current.is_control_affine() {
            current = affine_lift(&current)?;
            plan.history.push(vec![1; current.m()]);
            lifted = true;
        }
        match analyze(&current, phi, sfl_hint, cfg) {
            Ok(report) => {
                steps.push(SearchStep {
                    iteration,
                    lifted,
                    outcome: report.verdict.to_string(),
                });
                if report.verdict.is_yes() {
                    return Ok(SearchResult {
                        steps,
                        plan,
                        report: Some(report),
                        system: current,
                        exhausted: None,
                    });
                }
            }
            Err(e) if is_recoverable(&e) => {
                steps.push(SearchStep {
                    iteration,
                    lifted,
                    outcome: e.to_string(),
                });
            }
            Err(e) => return Err(Error::Invalid(format!("iteration {iteration}: {e}"))),
        }
        iteration += 1;
        if iteration as u32 > cap {
            return Ok(SearchResult {
                steps,
                plan,
                report: None,
                system: current,
                exhausted: Some(
                    "the system is either not x-flat or not linearizable by minimal input \
                     prolongations with this output"
                        .to_string(),
                ),
            });
        }
        current = prolong(&current, &vec![1; current.m()])?;
        plan.history.push(vec![1; current.m()]);
    }
}

/// Failures that a further prolongation may repair.
fn is_recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::CorankPattern { .. }
            | Error::Rearrangement(_)
            | Error::Structure(_)
            | Error::Inconclusive(_)
            | Error::RankInconclusive { .. }
    )
}
