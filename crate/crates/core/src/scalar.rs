//! Floating-point scalar abstraction shared by the model, objective and
//! optimizer code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(sigmoid(x))` without cancellation for large |x|.
pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(20.0f64) - 1.0).abs() < 1e-8);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!(log_sigmoid(-800.0f64).is_finite());
        assert!((log_sigmoid(-800.0f64) + 800.0).abs() < 1e-9);
    }

    #[test]
    fn log_sigmoid_matches_naive_in_safe_range() {
        for i in -40..=40 {
            let x = i as f64 * 0.25;
            let naive = (1.0 / (1.0 + (-x).exp())).ln();
            assert!((log_sigmoid(x) - naive).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn f32_instantiation() {
        assert!((sigmoid(1.0f32) - 0.731_058_6).abs() < 1e-6);
        assert!(log_sigmoid(3.0f32) < 0.0);
    }
}
