//! Monte Carlo check of asymptotic normality for the Brownian positive
//! control and the degenerate negative control.

use gpclt::harness::{histogram, run_clt_experiment, write_histogram_csv, CltParams};
use gpclt::hermite::FunctionSpec;
use gpclt::IncrementVarianceSpec;

fn main() -> gpclt::Result<()> {
    let x2 = FunctionSpec::EvenPoly {
        coeffs: vec![0.0, 1.0],
    };
    for r in [1.0, 0.6, 2.0] {
        let p = CltParams::new(x2.clone(), IncrementVarianceSpec::power(r)?, 1.0 / 64.0, 1);
        let rep = run_clt_experiment(&p)?;
        let m = rep.moments;
        println!(
            "pow:{r}  KS D={:.4} p={:.3e}  mean={:+.3}({:.3}) var={:.3} skew={:+.3} exkurt={:+.3}  Var(I) ratio={:.3}",
            rep.ks.d, rep.ks.p_value, m.mean, m.mean_se, m.variance, m.skewness, m.excess_kurtosis,
            rep.variance_check.ratio
        );
        if r == 1.0 {
            let path = std::env::temp_dir().join("gpclt_brownian_hist.csv");
            write_histogram_csv(&histogram(&rep.z), std::fs::File::create(&path)?)?;
            println!("  histogram written to {}", path.display());
        }
    }
    Ok(())
}
