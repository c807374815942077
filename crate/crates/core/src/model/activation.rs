use crate::scalar::Scalar;

/// Exponent arguments are clamped to this magnitude before `exp`.
pub const EXP_CLAMP: f64 = 500.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { alpha: f64 },
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Activation::LeakyRelu { alpha } => Some(*alpha),
            _ => None,
        }
    }

    /// ReLU and LeakyReLU satisfy `σ'(z)·z = σ(z)`.
    pub fn is_relu_family(&self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }

    /// Outputs are never negative, so the sign of a last-layer gradient
    /// reveals the label.
    pub fn is_sign_definite(&self) -> bool {
        matches!(self, Activation::Relu | Activation::Sigmoid)
    }

    pub fn apply<T: Scalar>(&self, z: T) -> T {
        match *self {
            Activation::Identity => z,
            Activation::Relu => {
                if z.re() > 0.0 {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { alpha } => {
                if z.re() > 0.0 {
                    z
                } else {
                    z * alpha
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at `z`. The ReLU derivative at exactly zero is zero.
    pub fn derivative<T: Scalar>(&self, z: T) -> T {
        match *self {
            Activation::Identity => T::from_f64(1.0),
            Activation::Relu => T::from_f64(if z.re() > 0.0 { 1.0 } else { 0.0 }),
            Activation::LeakyRelu { alpha } => T::from_f64(if z.re() > 0.0 { 1.0 } else { alpha }),
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::from_f64(1.0) - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::from_f64(1.0) - t * t
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    let clamped = if z.re() > EXP_CLAMP {
        z + (EXP_CLAMP - z.re())
    } else if z.re() < -EXP_CLAMP {
        z + (-EXP_CLAMP - z.re())
    } else {
        z
    };
    T::from_f64(1.0) / ((-clamped).exp() + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn relu_family_homogeneity_identity() {
        let mut rng = Rng::new(1);
        for act in [Activation::Relu, Activation::LeakyRelu { alpha: 0.2 }] {
            for _ in 0..1_000_000 {
                let z = rng.uniform(-10.0, 10.0);
                assert_eq!(act.derivative(z) * z, act.apply(z));
            }
            assert_eq!(act.derivative(0.0) * 0.0, act.apply(0.0));
        }
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn sigmoid_is_clamped() {
        assert_eq!(sigmoid(1e6), 1.0);
        assert!(sigmoid(-1e6) > 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-16);
    }
}
