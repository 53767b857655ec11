use xflat_core::parse::{parse_expr, SymbolScope};
use xflat_core::poly::rational_normal;
use xflat_core::symbol::{Symbol, SymbolKind};

#[test]
fn rn_probe() {
    let names = ["y1_2", "y2_1", "y2_2", "y3", "y3_1", "y3_2", "y3_3"];
    let syms: Vec<Symbol> = names
        .iter()
        .map(|n| Symbol::new(*n, SymbolKind::FlatJet))
        .collect();
    let sc = SymbolScope::from_symbols(&syms);
    let t = "(y3_2 - y2_1*y3)/(1 + y1_2)";
    let z34 = format!("(y3_3 - y2_1)*({t})*y2_1 - y3_1");
    let e = format!("y1_2 - y2_2*(y3_1 + ({z34}))/(y2_1*({t}))");
    let parsed = parse_expr(&e, &sc).unwrap();
    let t0 = std::time::Instant::now();
    let n = rational_normal(&parsed);
    println!("rn took {:?}: {}", t0.elapsed(), n);
    println!("chars: {}", n.to_string().len());
}
