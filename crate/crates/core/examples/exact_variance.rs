//! Exact Var I(f, h) from the Hermite series, next to its small-h
//! prediction.

use gpclt::hermite::{coefficients, FunctionSpec};
use gpclt::variance::exact_variance;
use gpclt::IncrementVarianceSpec;

fn main() -> gpclt::Result<()> {
    let f = FunctionSpec::AbsPow { p: 1.0 };
    let fexp = coefficients(&f, 64, 1e-12)?;
    for r in [0.5, 1.0, 1.2] {
        let spec = IncrementVarianceSpec::power(r)?;
        println!("{spec}, f = |x|");
        for e in [6, 10, 14] {
            let h = 2f64.powi(-e);
            let rep = exact_variance(&fexp, &spec, 0.0, 1.0, h, 1e-10)?;
            let predicted = rep.asymptotic.map(|a| a.predicted).unwrap_or(f64::NAN);
            println!(
                "  h=2^-{e:<2} Var={:.8e} terms={:<3} tail<={:.1e} predicted={:.8e}",
                rep.exact,
                rep.terms.len(),
                rep.tail_bound,
                predicted
            );
        }
    }
    Ok(())
}
