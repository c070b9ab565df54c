//! Exact increments of fractional Brownian motion on a uniform grid; prints
//! the sampler used and the empirical lag-1 correlation against theory.

use gpclt::simulate::{increment_autocov, sample_paths, GridSpec};
use gpclt::IncrementVarianceSpec;

fn main() -> gpclt::Result<()> {
    let grid = GridSpec::new(0.0, 1.0, 1.0 / 64.0, 8)?;
    for r in [0.4, 1.0, 1.6] {
        let spec = IncrementVarianceSpec::power(r)?;
        let bundle = sample_paths(&spec, &grid, 500, 42)?;
        let gamma = increment_autocov(&spec, bundle.delta, 1)?;
        let (mut c0, mut c1) = (0.0, 0.0);
        for p in bundle.paths() {
            for w in p.windows(2) {
                c0 += w[0] * w[0];
                c1 += w[0] * w[1];
            }
        }
        println!(
            "r={r}: {:?}  lag-1 corr {:.4} (theory {:.4})",
            bundle.method,
            c1 / c0,
            gamma[1] / gamma[0]
        );
    }
    Ok(())
}
