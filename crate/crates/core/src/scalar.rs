//! Scalar abstraction for search statistics.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable for node values, UCB scores and selection probabilities.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn count(n: u64) -> Self {
        Self::from_u64(n).expect("count fits the scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
