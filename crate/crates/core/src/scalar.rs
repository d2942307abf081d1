//! Floating-point scalar abstraction for the learned-model numerics.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::num::ParseFloatError;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type the proxy's feature weights and training math run on.
///
/// `SIG_DIGITS` is the number of significant decimal digits that guarantees a
/// lossless text round-trip for the type (9 for f32, 17 for f64); parameter
/// files are serialized at that precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + FromStr<Err = ParseFloatError>
    + Send
    + Sync
    + 'static
{
    const SIG_DIGITS: usize;

    /// Lossy conversion from f64; saturates through `num_traits` casting.
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(Self::zero)
    }

    /// Serialize with enough significant digits to round-trip bit-faithfully.
    fn to_roundtrip_string(self) -> String {
        format!("{:.*e}", Self::SIG_DIGITS - 1, self)
    }
}

impl Scalar for f32 {
    const SIG_DIGITS: usize = 9;
}

impl Scalar for f64 {
    const SIG_DIGITS: usize = 17;
}
