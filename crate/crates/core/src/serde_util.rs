//! Serialization helpers shared by report types.

use serde::Serializer;

/// Writes finite values as numbers and non-finite ones as `"inf"`, `"-inf"` or `"nan"`,
/// since JSON has no encoding for them.
pub fn f64_lossless<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    if value.is_finite() {
        s.serialize_f64(*value)
    } else if value.is_nan() {
        s.serialize_str("nan")
    } else if *value > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

/// Like [`f64_lossless`] for optional values.
pub fn opt_f64_lossless<S: Serializer>(value: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match value {
        Some(v) => f64_lossless(v, s),
        None => s.serialize_none(),
    }
}
