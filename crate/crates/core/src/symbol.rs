//! Interned symbols for states, inputs and jet variables.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

/// What role a symbol plays in a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymbolKind {
    State,
    Input,
    /// Time derivative of an input, promoted to a coordinate of the
    /// extended state-input space.
    InputJet,
    /// Time derivative of a flat-output component.
    FlatJet,
    Parameter,
}

#[derive(Debug)]
struct SymData {
    name: String,
    kind: SymbolKind,
    jet_order: u32,
}

/// A named variable. Cheap to clone; identity is the name, which must be
/// unique within one model/session.
#[derive(Debug, Clone)]
pub struct Symbol(Arc<SymData>);

impl Symbol {
    pub fn new(name: impl Into<String>, kind: SymbolKind) -> Self {
        Symbol(Arc::new(SymData {
            name: name.into(),
            kind,
            jet_order: 0,
        }))
    }

    pub fn jet(name: impl Into<String>, kind: SymbolKind, jet_order: u32) -> Self {
        debug_assert!(
            jet_order == 0 || matches!(kind, SymbolKind::InputJet | SymbolKind::FlatJet),
            "jet_order > 0 is reserved for jet symbols"
        );
        Symbol(Arc::new(SymData {
            name: name.into(),
            kind,
            jet_order,
        }))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn kind(&self) -> SymbolKind {
        self.0.kind
    }

    pub fn jet_order(&self) -> u32 {
        self.0.jet_order
    }

    /// Canonical name of the `order`-th time derivative of a base symbol,
    /// e.g. `u1` at order 2 becomes `u1_2`.
    pub fn jet_name(base: &str, order: u32) -> String {
        if order == 0 {
            base.to_string()
        } else {
            format!("{base}_{order}")
        }
    }
}

impl PartialEq for Symbol {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.name == other.0.name
    }
}

impl Eq for Symbol {}

impl PartialOrd for Symbol {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Symbol {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.name.cmp(&other.0.name)
    }
}

impl std::hash::Hash for Symbol {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.name.hash(state);
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
