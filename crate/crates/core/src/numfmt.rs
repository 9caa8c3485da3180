//! Fixed-precision decimal text for relatedness values and wire output.

use serde::Serializer;

/// Significant digits used for every persisted or serialized decimal.
pub const SIGNIFICANT_DIGITS: usize = 12;

/// Formats `value` as plain decimal text with 12 significant digits,
/// trailing zeros removed.
pub fn format_sig12(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return if value.is_finite() { "0".to_owned() } else { value.to_string() };
    }
    // `{:e}` rounds first, so the exponent already reflects carries like 9.99..→10.
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, value);
    let exponent: i32 = sci.rsplit_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exponent).max(0) as usize;
    let mut text = format!("{value:.decimals$}");
    if text.contains('.') {
        while text.ends_with('0') {
            text.pop();
        }
        if text.ends_with('.') {
            text.pop();
        }
    }
    if text == "-0" {
        text = "0".to_owned();
    }
    text
}

/// Rounds to 12 significant digits, returning the nearest `f64`.
pub fn round_sig12(value: f64) -> f64 {
    format_sig12(value).parse().unwrap_or(value)
}

/// Serde helper emitting an `f64` rounded to 12 significant digits.
pub fn serialize_sig12<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    serializer.serialize_f64(round_sig12(*value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_common_values() {
        assert_eq!(format_sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_sig12(0.5), "0.5");
        assert_eq!(format_sig12(1.0), "1");
        assert_eq!(format_sig12(0.0), "0");
        assert_eq!(format_sig12(2.0 / 3.0), "0.666666666667");
        assert_eq!(format_sig12(1.0 / 11.0), "0.0909090909091");
        assert_eq!(format_sig12(20.56436), "20.56436");
        assert_eq!(format_sig12(0.99999999999999), "1");
        assert_eq!(format_sig12(-0.25), "-0.25");
    }

    #[test]
    fn rounding_is_idempotent() {
        for v in [1.0 / 3.0, 0.1 + 0.2, 123.456789012345, 1e-7 / 3.0] {
            let once = round_sig12(v);
            assert_eq!(round_sig12(once), once);
            assert_eq!(format_sig12(once), format_sig12(v));
        }
    }
}
