//! Operational ML layer for park irrigation: hourly soil-moisture series,
//! rule- and model-based sensor screening, mutual-information backup
//! neighbours with a small MLP virtual sensor, per-sensor kNN forecasting
//! with a SARIMA baseline, and overnight irrigation proposals.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anomaly;
pub mod config;
pub mod corpus;
pub mod data;
pub mod error;
pub mod forecast;
pub mod io;
pub mod mi;
pub mod pipeline;
pub mod replay;
pub mod rng;
pub mod schedule;
pub mod stats;
pub mod virtual_sensor;

pub use data::{Dataset, RawReading, SensorSeries, TimeGrid, WindowSpec};
pub use config::PipelineConfig;
pub use error::{Error, Result};

/// `NaiveDateTime` as `YYYY-MM-DDTHH:MM:SS` in serialized artifacts.
pub(crate) mod serde_ts {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::io::format_timestamp(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let s = String::deserialize(d)?;
        crate::io::parse_timestamp(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp `{s}`")))
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(t: &Option<NaiveDateTime>, s: S) -> Result<S::Ok, S::Error> {
            match t {
                Some(t) => super::serialize(t, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<NaiveDateTime>, D::Error> {
            let s: Option<String> = Option::deserialize(d)?;
            s.map(|s| {
                crate::io::parse_timestamp(&s)
                    .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp `{s}`")))
            })
            .transpose()
        }
    }
}
