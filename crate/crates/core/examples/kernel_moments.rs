//! Table of J_k(h) and S_k(h) for a fractional Brownian kernel, written as
//! CSV to stdout.

use gpclt::kernel::KernelMomentTable;
use gpclt::IncrementVarianceSpec;

fn main() -> gpclt::Result<()> {
    let spec = IncrementVarianceSpec::power(0.6)?;
    let hs: Vec<f64> = (4..=12).map(|e| 2f64.powi(-e)).collect();
    let table = KernelMomentTable::compute(&spec, 0.0, 1.0, &[1, 2, 4], &hs, 1e-12)?;
    table.write_csv(std::io::stdout().lock())?;
    Ok(())
}
