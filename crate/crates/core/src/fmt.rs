//! Number formatting shared by the CSV writers.

/// Formats `x` with 17 significant digits (enough to round-trip any `f64`).
pub fn sig17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}
