use std::collections::BTreeMap;
use std::time::Instant;
use xflat_core::parse::{parse_expr, SymbolScope};
use xflat_core::prolong::iterative_search;
use xflat_core::symbol::{Symbol, SymbolKind};
use xflat_core::system::SystemModel;
use xflat_core::triangular::{build_transformation, extract_coordinates, ChartHints};
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
        "u1", "x3 + x4*u1", "u2 - u1*u3", "u3", "-x6 + x4*x7*u1",
        "-x5*u1 + x7*(u1*u3 - u2 - 1) + (x4 + u1)*x4*u1", "x4 + u1",
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
fn probe2() {
    let cfg = Sampling::default();
    let (sys, phi) = academic_system();
    let t = Instant::now();
    let result = iterative_search(&sys, &phi, None, None, &cfg).unwrap();
    println!("search: {:?}", t.elapsed());
    let report = result.report.unwrap();
    let scope = SymbolScope::from_symbols(
        report
            .sys_norm
            .states()
            .iter()
            .chain(report.sys_norm.inputs().iter()),
    );
    let mut named = BTreeMap::new();
    named.insert("z3_3".to_string(), parse_expr("x7", &scope).unwrap());
    named.insert("z3_4".to_string(), parse_expr("x6", &scope).unwrap());
    named.insert("z2_3".to_string(), parse_expr("u2", &scope).unwrap());
    named.insert("z3_5".to_string(), parse_expr("u3", &scope).unwrap());
    let hints = ChartHints { named, extra: vec![] };
    let t = Instant::now();
    let chart = extract_coordinates(
        &report.sequence,
        &report.structure,
        &report.sys_norm,
        &hints,
        &cfg,
    )
    .unwrap();
    println!("extract: {:?}", t.elapsed());
    for e in &chart.entries {
        println!("  {} = {}", e.symbol, e.expr);
    }
    println!("inverse: {}", chart.inverse.is_some());
    if let Some(inv) = &chart.inverse {
        for (x, v) in inv {
            println!("  {x} = {v}");
        }
    }
    let t = Instant::now();
    let g = build_transformation(&chart, &report.sys_norm, &report.structure, &cfg).unwrap();
    println!("build: {:?}", t.elapsed());
    for r in &g.rows {
        println!("  zdot{}_{} = {}", r.chain + 1, r.position, r.expr);
    }
    let t = Instant::now();
    let taint = xflat_core::triangular::verify_dependency_pattern(&g, &cfg).unwrap();
    println!("verify_pattern: {:?} taint {}", t.elapsed(), taint.len());
    let t = Instant::now();
    let reg = xflat_core::triangular::check_regularity(&g, &cfg);
    println!("regularity: {:?}", t.elapsed());
    for c in &reg.conditions {
        println!("  {}: {:?} holds={}", c.label, c.expr.as_ref().map(|e| e.to_string()), c.holds());
    }
    let t = Instant::now();
    let f = xflat_core::triangular::parameterize(&g, &report, &cfg).unwrap();
    println!("parameterize: {:?}", t.elapsed());
    for (x, v) in &f.states {
        println!("  {x} = {v}");
    }
    for (u, v) in &f.inputs {
        println!("  {u} = {v}");
    }
    println!("guards:");
    for gg in &f.guards {
        println!("  {gg} != 0");
    }
}
