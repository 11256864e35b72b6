//! Locale-independent float formatting shared by every text format we emit.

/// 17 significant digits, lowercase exponent (`-1.2500000000000000e-3`).
/// Round-trips every finite `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    // normalise -0.0 so identical runs never differ by a sign bit
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}
