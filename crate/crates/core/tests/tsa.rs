//! Threshold schedule properties over a grid of schedules.

use s4mtl::annealing::{tsa_threshold, TsaConfig};

/// `(epochs, training set size, classes)` combinations to sweep.
pub const SCHEDULES: [(usize, usize, usize); 6] = [(1, 1, 2), (2, 10, 2), (30, 400, 2), (30, 400, 3), (100, 2000, 5), (5, 7, 10)];
/// Training length multiple at which the limit is checked.
pub const LIMIT_HORIZON: f64 = 60.0;
pub const LIMIT_TOL: f64 = 1e-12;

pub fn suite() -> Result<String, String> {
    let mut points = 0;
    for &(epochs, size, classes) in &SCHEDULES {
        let cfg = TsaConfig::new(epochs, size, classes);
        let floor = 1.0 / classes as f64;
        let mut prev = f64::NEG_INFINITY;
        // Global step, so the argument grows monotonically over training.
        for step in 0..=(epochs * size * 4) {
            let eta = tsa_threshold(1, step, &cfg).map_err(|e| e.to_string())?;
            let label = format!("E={epochs} N={size} n={classes} step {step}");
            if eta < floor || eta >= 1.0 {
                return Err(format!("{label}: {eta} outside [1/n, 1)"));
            }
            if eta < prev {
                return Err(format!("{label}: {eta} below previous {prev}"));
            }
            prev = eta;
            points += 1;
        }
        let far = (LIMIT_HORIZON * (epochs * size) as f64) as usize;
        let limit = tsa_threshold(1, far, &cfg).map_err(|e| e.to_string())?;
        if (1.0 - limit).abs() > LIMIT_TOL {
            return Err(format!("E={epochs} N={size} n={classes}: {limit} does not approach 1"));
        }

        let literal = TsaConfig {
            literal_form: true,
            ..cfg
        };
        // Starts at 2/n and heads to 1 + 1/n, so it leaves [1/n, 1) late.
        let eta = tsa_threshold(1, far, &literal).map_err(|e| e.to_string())?;
        if eta <= 1.0 {
            return Err(format!("E={epochs} N={size} n={classes}: literal form gave {eta}, expected above 1"));
        }
    }
    Ok(format!(
        "{} schedules, {points} points in [1/n, 1) and nondecreasing, limit within {LIMIT_TOL:.0e} of 1, literal form ends above 1",
        SCHEDULES.len()
    ))
}

#[test]
fn threshold_is_bounded_monotone_and_tends_to_one() {
    if let Err(e) = suite() {
        panic!("{e}");
    }
}
