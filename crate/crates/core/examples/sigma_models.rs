//! Structural facts about each increment-variance family.

use gpclt::IncrementVarianceSpec;

fn main() -> gpclt::Result<()> {
    for text in [
        "pow:0.5",
        "pow:1.5",
        "spow:4:0.8",
        "explog:0.5",
        "logpow:1",
        "logpow:2",
    ] {
        let spec: IncrementVarianceSpec = text.parse()?;
        let report = spec.classify();
        println!(
            "{spec:<24} concave={:<5} window={:.4} rv_index={:.3} slowly_varying={}",
            report.concave, report.window, report.rv_index, report.slowly_varying
        );
        for h in [1e-2, 1e-4, 1e-8] {
            if h <= spec.h_max {
                println!(
                    "    sigma2({h:e}) = {:.6e}   d/dh = {:.6e}",
                    spec.eval_sigma2(h)?,
                    spec.eval_dsigma2(h)?
                );
            }
        }
    }
    Ok(())
}
