use gpclt::harness::{variance_convergence_study, write_study_csv};
use gpclt::hermite::FunctionSpec;
use gpclt::IncrementVarianceSpec;

fn main() -> gpclt::Result<()> {
    let f = FunctionSpec::EvenPoly {
        coeffs: vec![0.0, 1.0],
    };
    let spec = IncrementVarianceSpec::power(1.5)?;
    let grid: Vec<f64> = (8..=20).map(|e| 2f64.powi(-e)).collect();
    let rows = variance_convergence_study(&f, &spec, 0.0, 1.0, &grid, 1e-10)?;
    write_study_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}
