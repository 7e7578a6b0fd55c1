//! Semantic IDs and their 3-layer prefixes.
//!
//! A [`Sid`] is the 4-layer code `<s1, s2, s3, s4>` assigned to an article by
//! residual quantization. Generation and matching operate on the first three
//! layers, the [`SidPrefix`]. Both serialize as plain integer arrays
//! (`[s1,s2,s3,s4]` and `[s1,s2,s3]`) and are range-checked on the way in.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Codebook sizes per layer: s1 in [0,31], s2 in [0,63], s3 in [0,127], s4 in [0,1023].
pub const LAYER_SIZES: [usize; 4] = [32, 64, 128, 1024];

const FIELDS: [&str; 4] = ["s1", "s2", "s3", "s4"];

fn check(layer: usize, value: i64) -> Result<u16> {
    let max = LAYER_SIZES[layer] as i64 - 1;
    if (0..=max).contains(&value) {
        Ok(value as u16)
    } else {
        Err(Error::range(&format!("sid.{}", FIELDS[layer]), value, max))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Sid {
    pub s1: u16,
    pub s2: u16,
    pub s3: u16,
    pub s4: u16,
}

impl Sid {
    pub fn new(s1: i64, s2: i64, s3: i64, s4: i64) -> Result<Self> {
        Ok(Sid {
            s1: check(0, s1)?,
            s2: check(1, s2)?,
            s3: check(2, s3)?,
            s4: check(3, s4)?,
        })
    }

    pub fn from_codes(codes: &[i64]) -> Result<Self> {
        match *codes {
            [s1, s2, s3, s4] => Sid::new(s1, s2, s3, s4),
            _ => Err(Error::InvalidInput(format!(
                "sid must have 4 layers, got {}",
                codes.len()
            ))),
        }
    }

    pub fn prefix(&self) -> SidPrefix {
        SidPrefix {
            s1: self.s1,
            s2: self.s2,
            s3: self.s3,
        }
    }

    pub fn codes(&self) -> [u16; 4] {
        [self.s1, self.s2, self.s3, self.s4]
    }
}

impl fmt::Display for Sid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.s1, self.s2, self.s3, self.s4)
    }
}

impl Serialize for Sid {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.codes().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Sid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let codes = Vec::<i64>::deserialize(deserializer)?;
        Sid::from_codes(&codes).map_err(serde::de::Error::custom)
    }
}

/// The first three SID layers; the unit a generator emits and the matcher
/// grounds against the pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SidPrefix {
    pub s1: u16,
    pub s2: u16,
    pub s3: u16,
}

impl SidPrefix {
    pub fn new(s1: i64, s2: i64, s3: i64) -> Result<Self> {
        Ok(SidPrefix {
            s1: check(0, s1)?,
            s2: check(1, s2)?,
            s3: check(2, s3)?,
        })
    }

    pub fn from_codes(codes: &[i64]) -> Result<Self> {
        match *codes {
            [s1, s2, s3] => SidPrefix::new(s1, s2, s3),
            _ => Err(Error::InvalidInput(format!(
                "sid prefix must have 3 layers, got {}",
                codes.len()
            ))),
        }
    }

    /// Re-check layer ranges. Fields are public, so values built by hand
    /// must pass through here before they reach the matcher.
    pub fn validate(&self) -> Result<()> {
        SidPrefix::new(self.s1 as i64, self.s2 as i64, self.s3 as i64).map(|_| ())
    }

    /// Flat bucket number for the `(s1, s2)` pair.
    pub fn bucket(&self) -> usize {
        self.s1 as usize * LAYER_SIZES[1] + self.s2 as usize
    }
}

impl fmt::Display for SidPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.s1, self.s2, self.s3)
    }
}

impl FromStr for SidPrefix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let codes = s
            .split(',')
            .map(|part| {
                part.trim().parse::<i64>().map_err(|e| {
                    Error::InvalidInput(format!("bad prefix component `{part}`: {e}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SidPrefix::from_codes(&codes)
    }
}

impl Serialize for SidPrefix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [self.s1, self.s2, self.s3].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SidPrefix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let codes = Vec::<i64>::deserialize(deserializer)?;
        SidPrefix::from_codes(&codes).map_err(serde::de::Error::custom)
    }
}
