//! Number formatting shared by the CSV writers.

/// Shortest decimal form of `x` rounded to 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    // Avoid "-0".
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig9(1150.0), "1150");
        assert_eq!(format_sig9(1150.123456789), "1150.12346");
        assert_eq!(format_sig9(0.031), "0.031");
        assert_eq!(format_sig9(-0.0), "0");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789012.0), "123456789000");
    }
}
