//! Stable numeric formatting for emitted tables.

/// Formats with 9 significant digits in scientific notation.
pub fn sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.8e}")
}

/// Rounds to 9 significant digits (for JSON output).
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig(std::f64::consts::PI), "3.14159265e0");
        assert_eq!(sig(0.0), "0");
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333);
    }
}
