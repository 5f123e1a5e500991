//! JSON persistence of fitted models.
//!
//! Reals are written in scientific notation with 17 significant digits so
//! that every `f64` survives a write/read cycle bit-for-bit. Non-finite
//! values become `null` and read back as NaN.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::stacking::StackedModel;

/// Version written by this build; larger versions are rejected on read.
pub const SCHEMA_VERSION: u64 = 1;

/// A model together with the feature names it was fitted on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u64,
    pub feature_names: Vec<String>,
    #[serde(flatten)]
    pub model: StackedModel,
}

impl ModelFile {
    pub fn new(model: StackedModel, feature_names: Vec<String>) -> Result<Self> {
        if feature_names.len() != model.p() {
            return Err(Error::DimensionMismatch {
                what: "feature names",
                expected: model.p(),
                got: feature_names.len(),
            });
        }
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            feature_names,
            model,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut out = String::new();
        write_value(&mut out, &value, 0);
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        check_schema(&value)?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fails unless the document carries a `schema_version` this build understands.
pub fn check_schema(value: &Value) -> Result<()> {
    match value.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v <= SCHEMA_VERSION && v >= 1 => Ok(()),
        Some(v) => Err(Error::Schema(format!(
            "schema_version {v} is not supported (this build reads up to {SCHEMA_VERSION})"
        ))),
        None => Err(Error::Schema("missing or invalid schema_version".into())),
    }
}

/// Decimal text of a real with 17 significant digits.
pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".into()
    }
}

/// Deserialise a real written by [`format_real`], mapping `null` to NaN.
pub fn real_or_nan<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_scalar(out: &mut String, v: &Value) {
    match v {
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) if !n.is_f64() => write!(out, "{u}").unwrap(),
            (_, Some(i), _) if !n.is_f64() => write!(out, "{i}").unwrap(),
            (_, _, Some(f)) => out.push_str(&format_real(f)),
            _ => out.push_str("null"),
        },
        other => out.push_str(&other.to_string()),
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, v: &Value, level: usize) {
    match v {
        Value::Array(items) if items.iter().all(is_scalar) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_scalar(out, item);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (key, item)) in map.iter().enumerate() {
                indent(out, level + 1);
                out.push_str(&Value::String(key.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, level + 1);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push('}');
        }
        scalar => write_scalar(out, scalar),
    }
}
