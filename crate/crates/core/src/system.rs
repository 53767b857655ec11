//! Control system models over symbolic dynamics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::symbol::Symbol;

/// Explicit first-order system `xdot = f(x, u)` with named states and
/// inputs. Immutable after construction.
#[derive(Debug, Clone)]
pub struct SystemModel {
    states: Vec<Symbol>,
    inputs: Vec<Symbol>,
    dynamics: Vec<Expr>,
}

impl SystemModel {
    pub fn new(states: Vec<Symbol>, inputs: Vec<Symbol>, dynamics: Vec<Expr>) -> Result<Self> {
        if dynamics.len() != states.len() {
            return Err(Error::Arity(format!(
                "{} dynamics lines for {} states",
                dynamics.len(),
                states.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in states.iter().chain(inputs.iter()) {
            if !seen.insert(s.name().to_string()) {
                return Err(Error::DuplicateIdentifier(s.name().to_string()));
            }
        }
        for (i, d) in dynamics.iter().enumerate() {
            for sym in d.free_symbols() {
                if !states.contains(&sym) && !inputs.contains(&sym) {
                    return Err(Error::UnknownIdentifier(format!(
                        "{} in dynamics of {}",
                        sym.name(),
                        states[i].name()
                    )));
                }
            }
        }
        Ok(SystemModel {
            states,
            inputs,
            dynamics,
        })
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn m(&self) -> usize {
        self.inputs.len()
    }

    pub fn states(&self) -> &[Symbol] {
        &self.states
    }

    pub fn inputs(&self) -> &[Symbol] {
        &self.inputs
    }

    pub fn dynamics(&self) -> &[Expr] {
        &self.dynamics
    }

    pub fn dynamics_of(&self, state: &Symbol) -> Option<&Expr> {
        self.states
            .iter()
            .position(|s| s == state)
            .map(|i| &self.dynamics[i])
    }

    /// Syntactic control-affineness: every second partial derivative with
    /// respect to input pairs is structurally zero after simplification.
    pub fn is_control_affine(&self) -> bool {
        for d in &self.dynamics {
            for (j, uj) in self.inputs.iter().enumerate() {
                let dj = d.diff(uj);
                for uk in &self.inputs[j..] {
                    if !dj.diff(uk).is_zero() {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Drift and input vector fields of `f(x) + sum_j g_j(x) u^j`, when the
    /// system is control-affine.
    pub fn affine_decomposition(&self) -> Option<(Vec<Expr>, Vec<Vec<Expr>>)> {
        if !self.is_control_affine() {
            return None;
        }
        let mut zero_inputs = BTreeMap::new();
        for u in &self.inputs {
            zero_inputs.insert(u.clone(), Expr::zero());
        }
        let drift: Vec<Expr> = self
            .dynamics
            .iter()
            .map(|d| d.substitute(&zero_inputs))
            .collect();
        let g: Vec<Vec<Expr>> = self
            .inputs
            .iter()
            .map(|u| {
                self.dynamics
                    .iter()
                    .map(|d| d.diff(u).substitute(&zero_inputs))
                    .collect()
            })
            .collect();
        Some((drift, g))
    }

    /// Replace input `old` by a new input symbol defined through
    /// `old = inverse(states, new, other inputs)`; dynamics are rewritten
    /// by substitution.
    pub fn with_input_replaced(
        &self,
        old: &Symbol,
        new: Symbol,
        inverse: &Expr,
    ) -> Result<SystemModel> {
        let pos = self
            .inputs
            .iter()
            .position(|u| u == old)
            .ok_or_else(|| Error::UnknownIdentifier(old.name().to_string()))?;
        let mut inputs = self.inputs.clone();
        inputs[pos] = new;
        let dynamics: Vec<Expr> = self
            .dynamics
            .iter()
            .map(|d| d.substitute1(old, inverse).simplify())
            .collect();
        SystemModel::new(self.states.clone(), inputs, dynamics)
    }
}
