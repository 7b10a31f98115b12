pub mod serial_reference;

/// Approximate upper quantile of the chi-square distribution via the
/// Wilson-Hilferty transform; `z` is the standard-normal quantile
/// (2.3263 for the 99th percentile).
pub fn chi2_critical(df: usize, z: f64) -> f64 {
    let k = df as f64;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

pub const Z_99: f64 = 2.3263478740408408;
