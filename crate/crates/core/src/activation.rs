use core::fmt;
use core::str::FromStr;

use crate::error::Error;
use crate::Vector;

/// Scalar nonlinearities, all slope-restricted to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
    /// `4·sigmoid(v)`, rescaled so the maximal slope is exactly one.
    SigmoidRescaled,
    Identity,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::Tanh,
        Activation::SigmoidRescaled,
        Activation::Identity,
    ];

    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => libm::tanh(v),
            Activation::SigmoidRescaled => 4.0 / (1.0 + libm::exp(-v)),
            Activation::Identity => v,
        }
    }

    /// Derivative; the ReLU kink at zero takes the left derivative.
    pub fn slope(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = libm::tanh(v);
                1.0 - t * t
            }
            Activation::SigmoidRescaled => {
                let s = 1.0 / (1.0 + libm::exp(-v));
                4.0 * s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn apply(self, v: &Vector) -> Vector {
        v.map(|x| self.eval(x))
    }

    pub fn slopes(self, v: &Vector) -> Vector {
        v.map(|x| self.slope(x))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::SigmoidRescaled => "sigmoid_rescaled",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown activation `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_quotients_lie_in_unit_interval() {
        for act in Activation::ALL {
            let mut a = -8.0;
            while a < 8.0 {
                let b = a + 0.037;
                let q = (act.eval(b) - act.eval(a)) / (b - a);
                assert!((-1e-12..=1.0 + 1e-12).contains(&q), "{act}: {q}");
                a += 0.05;
            }
        }
    }

    #[test]
    fn sigmoid_peak_slope_is_one() {
        assert!((Activation::SigmoidRescaled.slope(0.0) - 1.0).abs() < 1e-15);
        assert!((Activation::SigmoidRescaled.eval(0.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn names_round_trip() {
        for act in Activation::ALL {
            assert_eq!(act.name().parse::<Activation>().unwrap(), act);
        }
        assert!("softplus".parse::<Activation>().is_err());
    }
}
