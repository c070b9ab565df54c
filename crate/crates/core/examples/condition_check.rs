use gpclt::kernel::check_conditions;
use gpclt::IncrementVarianceSpec;

fn main() -> gpclt::Result<()> {
    for text in ["pow:0.8", "pow:1.2", "logpow:1"] {
        let spec: IncrementVarianceSpec = text.parse()?;
        let (b, grid): (f64, Vec<f64>) = if spec.is_power() {
            (1.0, (4..=30).map(|e| 2f64.powi(-e)).collect())
        } else {
            (0.125, (8..=50).map(|e| 2f64.powi(-e)).collect())
        };
        let report = check_conditions(&spec, 0.0, b, &grid, 4, 1, 1e-10)?;
        println!("{text}");
        for (name, verdict) in &report.verdicts {
            println!("  {name:<16} {}", serde_json::to_string(verdict)?);
        }
        let last = report.st_ratio_trend.last().copied().unwrap_or(f64::NAN);
        println!("  J2/J1 at finest h: {last:.4e}");
    }
    Ok(())
}
