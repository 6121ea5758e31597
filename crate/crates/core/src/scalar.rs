use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, Num, Signed};

/// Floating-point element type for matrices, OT and losses.
pub trait Scalar: Float + FromPrimitive + Sum + Debug + Display + Send + Sync + 'static {
    /// Tolerance used when checking unit row norms and simplex sums.
    fn unit_tolerance() -> Self {
        let floor = Self::from_f64(1e-9).unwrap();
        let scaled = Self::epsilon() * Self::from_f64(64.0).unwrap();
        if scaled > floor {
            scaled
        } else {
            floor
        }
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + Sum + Debug + Display + Send + Sync + 'static {}

/// Ordered field: enough structure to evaluate rational closed forms either
/// in floating point or exactly.
pub trait Field: Num + Signed + PartialOrd + Clone + FromPrimitive + Debug {}

impl<T> Field for T where T: Num + Signed + PartialOrd + Clone + FromPrimitive + Debug {}

#[inline]
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable")
}
