use gpclt::hermite::{coefficients, FunctionSpec};

fn main() -> gpclt::Result<()> {
    for text in ["abspow:1", "abspow:3", "poly:1,-2,0.5", "herm:6"] {
        let f: FunctionSpec = text.parse()?;
        let e = coefficients(&f, 64, 1e-12)?;
        let head: Vec<String> = e
            .coeffs
            .iter()
            .take(6)
            .map(|a| format!("{a:+.6}"))
            .collect();
        println!(
            "{text:<14} k0={} tail_l2={:.3e}  a_0..a_10 = {}",
            e.k0,
            e.tail_l2,
            head.join(" ")
        );
    }
    Ok(())
}
