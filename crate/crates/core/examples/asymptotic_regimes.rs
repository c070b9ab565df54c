//! Regime, constant and rate of J_k(h) for power kernels, checked against
//! direct quadrature as h shrinks.

use gpclt::kernel::moment_j;
use gpclt::variance::asymptotic_j;
use gpclt::IncrementVarianceSpec;

fn main() -> gpclt::Result<()> {
    for (r, k) in [(0.5, 2), (1.0, 3), (1.2, 1), (1.5, 2), (1.8, 2)] {
        let spec = IncrementVarianceSpec::power(r)?;
        let asym = asymptotic_j(&spec, k, 0.0, 1.0)?;
        let constant = asym.constant.unwrap_or(f64::NAN);
        print!(
            "r={r} k={k} {:?} constant={constant:.6} rate={}:",
            asym.regime, asym.rate
        );
        for e in [8, 16, 24] {
            let h = 2f64.powi(-e);
            let j = moment_j(&spec, h, k, 0.0, 1.0, 1e-12 * h)?.value;
            if let Some(lead) = asym.leading(h) {
                print!("  2^-{e}: {:.4}", j / lead);
            }
        }
        println!();
    }
    Ok(())
}
