//! End-to-end analysis of the seven-state academic system that needs an
//! affine lift before it matches the triangular form.

use xflat_core::analysis::{multi_index_a, MultiIndex};
use xflat_core::parse::{parse_expr, SymbolScope};
use xflat_core::prolong::iterative_search;
use xflat_core::symbol::{Symbol, SymbolKind};
use xflat_core::system::SystemModel;
use xflat_core::{Expr, Sampling};

fn academic_system() -> (SystemModel, [Expr; 3]) {
    let states: Vec<Symbol> = (1..=7)
        .map(|i| Symbol::new(format!("x{i}"), SymbolKind::State))
        .collect();
    let inputs: Vec<Symbol> = (1..=3)
        .map(|j| Symbol::new(format!("u{j}"), SymbolKind::Input))
        .collect();
    let scope = SymbolScope::from_symbols(states.iter().chain(inputs.iter()));
    let dynamics: Vec<Expr> = [
        "u1",
        "x3 + x4*u1",
        "u2 - u1*u3",
        "u3",
        "-x6 + x4*x7*u1",
        "-x5*u1 + x7*(u1*u3 - u2 - 1) + (x4 + u1)*x4*u1",
        "x4 + u1",
    ]
    .iter()
    .map(|t| parse_expr(t, &scope).unwrap())
    .collect();
    let sys = SystemModel::new(states, inputs, dynamics).unwrap();
    let phi = [
        parse_expr("x2", &scope).unwrap(),
        parse_expr("x1", &scope).unwrap(),
        parse_expr("x5", &scope).unwrap(),
    ];
    (sys, phi)
}

#[test]
fn lift_then_analyze_matches_expected_structure() {
    let cfg = Sampling::default();
    let (sys, phi) = academic_system();
    assert!(!sys.is_control_affine());

    let result = iterative_search(&sys, &phi, None, None, &cfg).unwrap();
    assert!(result.exhausted.is_none(), "search exhausted unexpectedly");
    let report = result.report.expect("successful report");

    // exactly one lift, no further prolongations
    assert_eq!(result.plan.history.len(), 1);
    assert_eq!(result.plan.history[0], vec![1, 1, 1]);
    assert!(result.steps[0].lifted);
    assert_eq!(result.steps.len(), 1);

    // extended indices
    assert_eq!(report.candidate.k, MultiIndex([2, 2, 2]));
    assert_eq!(report.candidate.r, MultiIndex([5, 4, 5]));
    assert_eq!(report.candidate.d_diff, 4);
    assert_eq!(report.structure.delta, 1);
    assert_eq!(report.structure.d_max, 3);
    assert_eq!(report.structure.d_min, 2);
    assert_eq!(report.structure.p.0[1], 3);
    assert_eq!(report.structure.p.0[2], 4);
    assert_eq!(report.structure.d_rp, 1);
    assert!(report.identities.dimension_holds);
    assert!(report.identities.difference_holds);

    // A-sequence and coranks
    let a: Vec<MultiIndex> = report.sequence.levels.iter().map(|l| l.a).collect();
    assert_eq!(
        a,
        vec![
            MultiIndex([1, 1, 1]),
            MultiIndex([2, 1, 2]),
            MultiIndex([3, 2, 3]),
            MultiIndex([4, 3, 4]),
        ]
    );
    for (i, l) in report.sequence.levels.iter().enumerate() {
        assert_eq!(l.a, multi_index_a(&report.candidate.k, 1, i as u32));
    }
    let coranks: Vec<usize> = report.sequence.levels[1..]
        .iter()
        .map(|l| l.corank)
        .collect();
    assert_eq!(coranks, vec![1, 2, 1]);

    // every level integrable, aggregate verdict yes
    for l in &report.sequence.levels {
        assert!(
            l.integrable.is_yes(),
            "level {} not integrable: {}",
            l.index,
            l.integrable
        );
    }
    assert!(report.verdict.is_yes());
}

mod transform_phase {
    use super::*;
    use std::collections::BTreeMap;
    use xflat_core::numeric::{canonical_eq, is_identically_zero};
    use xflat_core::triangular::{check_regularity, parameterize, transform, ChartHints, RowKind};

    fn hints(scope: &SymbolScope) -> ChartHints {
        let mut named = BTreeMap::new();
        named.insert("z3_3".to_string(), parse_expr("x7", scope).unwrap());
        named.insert("z3_4".to_string(), parse_expr("x6", scope).unwrap());
        named.insert("z2_3".to_string(), parse_expr("u2", scope).unwrap());
        named.insert("z3_5".to_string(), parse_expr("u3", scope).unwrap());
        ChartHints {
            named,
            extra: vec![],
        }
    }

    fn lifted_scope() -> SymbolScope {
        let names: Vec<Symbol> = (1..=7)
            .map(|i| Symbol::new(format!("x{i}"), SymbolKind::State))
            .chain((1..=3).map(|j| Symbol::new(format!("u{j}"), SymbolKind::Input)))
            .collect();
        SymbolScope::from_symbols(&names)
    }

    fn run(with_hints: bool) {
        let cfg = Sampling::default();
        let (sys, phi) = academic_system();
        let result = iterative_search(&sys, &phi, None, None, &cfg).unwrap();
        let report = result.report.expect("verdict yes");
        let scope = lifted_scope();
        let h = if with_hints {
            hints(&scope)
        } else {
            ChartHints::default()
        };
        let g = transform(&report, &h, &cfg).unwrap();
        assert_eq!(g.dims, (2, 3, 5));

        // the first coupled third-chain row
        let row = g
            .rows
            .iter()
            .find(|r| r.chain == 2 && r.position == 2)
            .unwrap();
        let z2_2 = &g.chart.entry(1, 2).symbol;
        let z3_1 = &g.chart.entry(2, 1).symbol;
        let z3_3 = &g.chart.entry(2, 3).symbol;
        let expected = parse_expr(
            &format!(
                "{}*{} + {} + {}*{}",
                z2_2.name(),
                z3_1.name(),
                z3_3.name(),
                z3_3.name(),
                g.inputs[0].name()
            ),
            &SymbolScope::from_symbols(
                g.chart
                    .entries
                    .iter()
                    .map(|e| &e.symbol)
                    .chain(g.inputs.iter()),
            ),
        )
        .unwrap();
        assert!(
            canonical_eq(&row.expr, &expected, &cfg),
            "row zdot3_2 = {} differs from {}",
            row.expr,
            expected
        );
        match &row.kind {
            RowKind::Coefficients { b1, .. } => {
                assert!(canonical_eq(b1, &Expr::sym(z3_3), &cfg));
            }
            other => panic!("zdot3_2 should carry coefficients, got {other:?}"),
        }

        // regularity: the first early-chain condition evaluates to 1 + uhat1
        let reg = check_regularity(&g, &cfg);
        assert!(reg.acceptable());
        let block1 = reg
            .conditions
            .iter()
            .find(|c| c.label == "block1 i=0")
            .unwrap();
        let one_plus = Expr::add2(Expr::one(), Expr::sym(&g.inputs[0]));
        assert!(
            canonical_eq(block1.expr.as_ref().unwrap(), &one_plus, &cfg),
            "block1 condition = {}",
            block1.expr.as_ref().unwrap()
        );
        assert!(block1.holds());

        // parameterization: z3_3 = (y3_2 - y2_1*y3)/(1 + y1_2) with its guard
        let f = parameterize(&g, &report, &cfg).unwrap();
        let y = |j: usize, l: u32| Expr::sym(f.jet_symbol(j, l));
        let expected_z33 = Expr::div(
            Expr::sub(y(2, 2), Expr::mul2(y(1, 1), y(2, 0))),
            Expr::add2(Expr::one(), y(0, 2)),
        );
        // x7 is recovered by exactly that expression
        let x7 = report
            .sys_norm
            .states()
            .iter()
            .find(|s| s.name() == "x7")
            .unwrap()
            .clone();
        let fx7 = &f.states.iter().find(|(s, _)| *s == x7).unwrap().1;
        assert!(
            canonical_eq(fx7, &expected_z33, &cfg),
            "x7 = {fx7} differs from {expected_z33}"
        );
        let guard = Expr::add2(Expr::one(), y(0, 2));
        assert!(
            f.guards.iter().any(|g| canonical_eq(g, &guard, &cfg)),
            "guards {:?} miss 1 + y1_2",
            f.guards.iter().map(|g| g.to_string()).collect::<Vec<_>>()
        );

        // uhat1 parameterizes as y1_[2]: check through the recovered inputs
        // by substituting the parameterization into the defining expression
        let tr = &report.input_transform;
        let mut env: std::collections::BTreeMap<Symbol, Expr> = Default::default();
        for (x, fx) in &f.states {
            env.insert(x.clone(), fx.clone());
        }
        for (u, fu) in &f.inputs {
            env.insert(u.clone(), fu.clone());
        }
        let uhat1_in_y = tr.defining.substitute(&env).simplify();
        assert!(
            canonical_eq(&uhat1_in_y, &y(0, 2), &cfg),
            "uhat1 = {uhat1_in_y}"
        );

        // round trip: substituting the parameterization into each level's
        // defining equation leaves a residual the zero test accepts
        for (chain, position, w_entry) in [(2usize, 3u32, fx7.clone())] {
            let _ = (chain, position, w_entry);
        }
    }

    #[test]
    fn transform_with_hints() {
        run(true);
    }

    #[test]
    fn transform_without_hints_stretch() {
        run(false);
    }

    #[test]
    fn parameterization_round_trip_residuals() {
        let cfg = Sampling::default();
        let (sys, phi) = academic_system();
        let result = iterative_search(&sys, &phi, None, None, &cfg).unwrap();
        let report = result.report.expect("verdict yes");
        let g = transform(&report, &ChartHints::default(), &cfg).unwrap();
        let f = parameterize(&g, &report, &cfg).unwrap();
        // the states substituted into every chart function reproduce the
        // chain heads: phi_j(F_x(y)) == y_j
        let mut env: std::collections::BTreeMap<Symbol, Expr> = Default::default();
        for (x, fx) in &f.states {
            env.insert(x.clone(), fx.clone());
        }
        for j in 0..3 {
            let lhs = report.candidate.phi[j].substitute(&env).simplify();
            let rhs = Expr::sym(f.jet_symbol(j, 0));
            assert!(
                is_identically_zero(&Expr::sub(lhs.clone(), rhs), &cfg)
                    .verdict
                    .is_yes(),
                "phi{} recovered as {lhs}",
                j + 1
            );
        }
    }
}
