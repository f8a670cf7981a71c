//! Precision descriptors: weight/activation level sets and threshold counts.
//!
//! A WwAa network restricts weights and activations to small symmetric
//! integer level sets. One bit means the binary set {-1, +1}; two or more
//! bits mean every integer in `-(2^(b-1)-1) ..= 2^(b-1)-1`, so a=2 is
//! ternary {-1, 0, +1}. Activations are produced by counting how many
//! per-channel thresholds the accumulator exceeds, which takes exactly
//! `levels - 1` thresholds per channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight/activation bit widths of a network (the `WwAa` notation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantSpec {
    weight_bits: u8,
    act_bits: u8,
}

/// Level set for one bit width: {-1,+1} for 1 bit, symmetric integer
/// range for wider widths.
fn level_max(bits: u8) -> i32 {
    if bits == 1 {
        1
    } else {
        (1i32 << (bits - 1)) - 1
    }
}

fn levels(bits: u8) -> Vec<i32> {
    if bits == 1 {
        vec![-1, 1]
    } else {
        let m = level_max(bits);
        (-m..=m).collect()
    }
}

fn is_level(bits: u8, v: i32) -> bool {
    if bits == 1 {
        v == -1 || v == 1
    } else {
        v.abs() <= level_max(bits)
    }
}

impl QuantSpec {
    pub fn new(weight_bits: u8, act_bits: u8) -> Result<Self> {
        for (name, b) in [("weight_bits", weight_bits), ("act_bits", act_bits)] {
            if !(1..=8).contains(&b) {
                return Err(Error::usage(format!("{name} must be in 1..=8, got {b}")));
            }
        }
        Ok(QuantSpec {
            weight_bits,
            act_bits,
        })
    }

    pub fn weight_bits(&self) -> u8 {
        self.weight_bits
    }

    pub fn act_bits(&self) -> u8 {
        self.act_bits
    }

    /// Largest representable |weight|.
    pub fn weight_level_max(&self) -> i32 {
        level_max(self.weight_bits)
    }

    /// Largest representable |activation|.
    pub fn act_level_max(&self) -> i32 {
        level_max(self.act_bits)
    }

    /// All legal activation levels, ascending.
    pub fn act_levels(&self) -> Vec<i32> {
        levels(self.act_bits)
    }

    pub fn is_weight_level(&self, v: i32) -> bool {
        is_level(self.weight_bits, v)
    }

    pub fn is_act_level(&self, v: i32) -> bool {
        is_level(self.act_bits, v)
    }

    /// Thresholds needed per channel: one less than the number of levels
    /// (1 for binary, `2^a - 2` for wider activations).
    pub fn thresholds_per_channel(&self) -> usize {
        self.act_levels().len() - 1
    }

    /// Position of `level` in the ascending level list; this is also the
    /// number of thresholds that must fire to produce it.
    pub fn act_level_rank(&self, level: i32) -> Option<usize> {
        self.act_levels().iter().position(|&l| l == level)
    }

    /// Activation produced by `fired` exceeded thresholds.
    pub fn level_for_count(&self, fired: usize) -> i32 {
        self.act_levels()[fired]
    }

    /// `WwAa` display form, e.g. `W1A2`.
    pub fn tag(&self) -> String {
        format!("W{}A{}", self.weight_bits, self.act_bits)
    }
}

/// How raw 8-bit dataset pixels map onto first-layer input levels.
///
/// The rule is a fixed affine scaling of the signed byte onto the
/// symmetric level set of `bits`: `level = round(v * max / 127)`,
/// saturating at the range ends. One-bit inputs take the sign
/// (0 maps to +1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEncoding {
    bits: u8,
}

impl InputEncoding {
    pub fn new(bits: u8) -> Result<Self> {
        if !(1..=8).contains(&bits) {
            return Err(Error::usage(format!("input bits must be in 1..=8, got {bits}")));
        }
        Ok(InputEncoding { bits })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn level_max(&self) -> i32 {
        level_max(self.bits)
    }

    pub fn is_level(&self, v: i32) -> bool {
        is_level(self.bits, v)
    }

    /// Quantize one raw byte to an input level.
    pub fn quantize(&self, raw: i8) -> i32 {
        if self.bits == 1 {
            return if raw >= 0 { 1 } else { -1 };
        }
        let m = level_max(self.bits) as i64;
        let v = raw as i64;
        // round half away from zero, then saturate
        let scaled = (v * m * 2 + v.signum() * 127) / (2 * 127);
        scaled.clamp(-m, m) as i32
    }
}
