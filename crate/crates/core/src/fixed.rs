//! Fixed six-decimal JSON numbers for report files.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

pub(crate) fn format6(x: f64) -> String {
    let s = format!("{x:.6}");
    // "-0.000000" would be a valid but surprising token
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub(crate) fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return Err(serde::ser::Error::custom(format!(
            "cannot write non-finite {x}"
        )));
    }
    let raw = RawValue::from_string(format6(*x)).map_err(serde::ser::Error::custom)?;
    raw.serialize(s)
}
