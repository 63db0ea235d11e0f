//! Spectral-element work kernel, partitioning, transport, the Gamma
//! performance model and the benchmark harness.

pub mod gamma;
pub mod harness;
pub mod partition;
pub mod sem;
pub mod transport;

/// Serializes ratios that may be unbounded: `f64::INFINITY` is written as
/// the string `"saturated"`.
pub(crate) mod serde_ratio {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub const SATURATED_TAG: &str = "saturated";

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str(SATURATED_TAG)
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Tag(t) if t == SATURATED_TAG => Ok(f64::INFINITY),
            Repr::Tag(t) => Err(de::Error::custom(format!("expected a number or \"{SATURATED_TAG}\", got {t:?}"))),
        }
    }
}
