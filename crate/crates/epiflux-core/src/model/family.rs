//! Registries of parametric age profiles.
//!
//! Infectivity and susceptibility curves come from a small set of declarative
//! families so that configurations stay reproducible. Indicator thresholds are
//! right-closed: `step{at}` yields its value at `a == at`, and `window{from,
//! until}` covers `[from, until)`.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::rng::Stream;

/// Parametric age profile for infectivity (λ) and susceptibility (γ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RateFamily {
    /// `value` for every age.
    Constant { value: f64 },
    /// `value` on `[from, until)`, zero elsewhere. Omitted `until` means +∞.
    Window {
        value: f64,
        #[serde(default)]
        from: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        until: Option<f64>,
    },
    /// `value` on `[at, ∞)`, zero before.
    Step {
        #[serde(default = "default_one")]
        value: f64,
        at: f64,
    },
    /// `scale * exp(-rate * a)`.
    ExpDecay { scale: f64, rate: f64 },
    /// `scale / (1 + exp(-slope * (a - midpoint)))`.
    Sigmoid {
        midpoint: f64,
        slope: f64,
        #[serde(default = "default_one")]
        scale: f64,
    },
    /// Linear interpolation of `(ages, values)`; constant beyond the ends.
    Table { ages: Vec<f64>, values: Vec<f64> },
}

fn default_one() -> f64 {
    1.0
}

/// Snap `a` onto a threshold when within relative 1e-9, so that ages computed
/// as differences of grid times (`i*dt - k*dt`) still land exactly on
/// breakpoints the grid is meant to hit.
#[inline]
fn snap(a: f64, threshold: f64) -> f64 {
    if (a - threshold).abs() <= 1e-9 * threshold.abs().max(1.0) {
        threshold
    } else {
        a
    }
}

impl RateFamily {
    /// Point value at age `a` (right-closed at indicator thresholds).
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            RateFamily::Constant { value } => *value,
            RateFamily::Window { value, from, until } => {
                let a = snap(a, *from);
                let a = until.map_or(a, |u| snap(a, u));
                let inside = a >= *from && until.map_or(true, |u| a < u);
                if inside {
                    *value
                } else {
                    0.0
                }
            }
            RateFamily::Step { value, at } => {
                if snap(a, *at) >= *at {
                    *value
                } else {
                    0.0
                }
            }
            RateFamily::ExpDecay { scale, rate } => scale * (-rate * a).exp(),
            RateFamily::Sigmoid {
                midpoint,
                slope,
                scale,
            } => scale / (1.0 + (-slope * (a - midpoint)).exp()),
            RateFamily::Table { ages, values } => interp_linear(ages, values, a),
        }
    }

    /// Left limit `lim_{x↑a}` (the point value itself when continuous at
    /// `a`). [`RateFamily::eval`] is right-continuous by the right-closed
    /// threshold convention, so `eval` doubles as the right limit. Quadrature
    /// is cell-oriented: each trapezoid cell uses the limits from inside the
    /// cell, which makes composite rules second order across jumps that fall
    /// on nodes and one-sided at integration endpoints.
    pub fn eval_below(&self, a: f64) -> f64 {
        match self {
            RateFamily::Window { value, from, until } => {
                let a = snap(a, *from);
                let a = until.map_or(a, |u| snap(a, u));
                let inside = a > *from && until.map_or(true, |u| a <= u);
                if inside {
                    *value
                } else {
                    0.0
                }
            }
            RateFamily::Step { value, at } => {
                if snap(a, *at) > *at {
                    *value
                } else {
                    0.0
                }
            }
            _ => self.eval(a),
        }
    }

    /// Mean of the one-sided limits: the quadrature value of an interior node
    /// (the two adjacent half-cells contribute one side each).
    pub fn eval_mean(&self, a: f64) -> f64 {
        0.5 * (self.eval(a) + self.eval_below(a))
    }

    /// Ages at which the profile is discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            RateFamily::Window { from, until, .. } => {
                let mut b = vec![*from];
                if let Some(u) = until {
                    b.push(*u);
                }
                b
            }
            RateFamily::Step { at, .. } => vec![*at],
            _ => Vec::new(),
        }
    }

    pub(crate) fn validate(&self, name: &str) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        match self {
            RateFamily::Constant { value } | RateFamily::Step { value, .. } => {
                if !value.is_finite() {
                    return bad(format!("[{name}] non-finite value"));
                }
            }
            RateFamily::Window { value, from, until } => {
                if !value.is_finite() || !from.is_finite() {
                    return bad(format!("[{name}] non-finite window parameter"));
                }
                if let Some(u) = until {
                    if !(u > from) {
                        return bad(format!("[{name}] window until must exceed from"));
                    }
                }
            }
            RateFamily::ExpDecay { scale, rate } => {
                if !scale.is_finite() || !rate.is_finite() || *rate < 0.0 {
                    return bad(format!("[{name}] exp_decay needs finite scale, rate >= 0"));
                }
            }
            RateFamily::Sigmoid { slope, scale, .. } => {
                if !slope.is_finite() || !scale.is_finite() {
                    return bad(format!("[{name}] non-finite sigmoid parameter"));
                }
            }
            RateFamily::Table { ages, values } => {
                if ages.len() != values.len() || ages.is_empty() {
                    return bad(format!("[{name}] table needs matching nonempty ages/values"));
                }
                if !ages.windows(2).all(|w| w[0] < w[1]) {
                    return bad(format!("[{name}] table ages must be strictly increasing"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad(format!("[{name}] non-finite table value"));
                }
            }
        }
        Ok(())
    }
}

fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    // partition_point: first index with xs[i] > x
    let hi = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[hi - 1], xs[hi]);
    let (y0, y1) = (ys[hi - 1], ys[hi]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Initial age-of-infection distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "age_family", rename_all = "snake_case")]
pub enum AgeDistribution {
    Exponential { rate: f64 },
    Uniform { min: f64, max: f64 },
    /// Survival `(scale/a)^exponent` for `a >= scale`; moments of order
    /// `m >= exponent` diverge.
    Pareto { scale: f64, exponent: f64 },
}

impl AgeDistribution {
    pub(crate) fn validate(&self) -> Result<(), ModelError> {
        match self {
            AgeDistribution::Exponential { rate } if *rate > 0.0 => Ok(()),
            AgeDistribution::Uniform { min, max } if *min >= 0.0 && max > min => Ok(()),
            AgeDistribution::Pareto { scale, exponent } if *scale > 0.0 && *exponent > 0.0 => {
                Ok(())
            }
            _ => Err(ModelError::Config(
                "[initial] invalid age family parameters".into(),
            )),
        }
    }

    /// Density at `a` (zero outside the support).
    pub fn density(&self, a: f64) -> f64 {
        match self {
            AgeDistribution::Exponential { rate } => {
                if a >= 0.0 {
                    rate * (-rate * a).exp()
                } else {
                    0.0
                }
            }
            AgeDistribution::Uniform { min, max } => {
                if a >= *min && a <= *max {
                    1.0 / (max - min)
                } else {
                    0.0
                }
            }
            AgeDistribution::Pareto { scale, exponent } => {
                if a >= *scale {
                    exponent * scale.powf(*exponent) / a.powf(exponent + 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Left limit of the density (differs from [`Self::density`] only at
    /// support edges; used by cell-oriented quadrature).
    pub fn density_below(&self, a: f64) -> f64 {
        match self {
            AgeDistribution::Exponential { rate } => {
                if a <= 0.0 {
                    0.0
                } else {
                    rate * (-rate * a).exp()
                }
            }
            AgeDistribution::Uniform { min, max } => {
                if a > *min && a <= *max {
                    1.0 / (max - min)
                } else {
                    0.0
                }
            }
            AgeDistribution::Pareto { scale, exponent } => {
                if a > *scale {
                    exponent * scale.powf(*exponent) / a.powf(exponent + 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// `P(A > a)`.
    pub fn tail(&self, a: f64) -> f64 {
        match self {
            AgeDistribution::Exponential { rate } => (-rate * a.max(0.0)).exp(),
            AgeDistribution::Uniform { min, max } => {
                ((max - a.max(*min)) / (max - min)).clamp(0.0, 1.0)
            }
            AgeDistribution::Pareto { scale, exponent } => {
                if a <= *scale {
                    1.0
                } else {
                    (scale / a).powf(*exponent)
                }
            }
        }
    }

    /// Smallest `A` with `P(age > A) <= eps` (quadrature truncation point).
    pub fn truncation(&self, eps: f64) -> f64 {
        match self {
            AgeDistribution::Exponential { rate } => -eps.ln() / rate,
            AgeDistribution::Uniform { max, .. } => *max,
            AgeDistribution::Pareto { scale, exponent } => scale * eps.powf(-1.0 / exponent),
        }
    }

    /// Whether the moment of order `order` is finite.
    pub fn moment_finite(&self, order: f64) -> bool {
        match self {
            AgeDistribution::Exponential { .. } | AgeDistribution::Uniform { .. } => true,
            AgeDistribution::Pareto { exponent, .. } => order < *exponent,
        }
    }

    pub fn sample(&self, stream: &mut Stream) -> f64 {
        match self {
            AgeDistribution::Exponential { rate } => stream.exponential(*rate),
            AgeDistribution::Uniform { min, max } => min + (max - min) * stream.uniform(),
            AgeDistribution::Pareto { scale, exponent } => {
                scale * stream.uniform_pos().powf(-1.0 / exponent)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_right_open_at_upper_edge() {
        let f = RateFamily::Window {
            value: 2.0,
            from: 0.0,
            until: Some(1.0),
        };
        assert_eq!(f.eval(0.5), 2.0);
        assert_eq!(f.eval(1.0), 0.0);
        assert_eq!(f.eval(1.5), 0.0);
        // eval is the right limit; eval_below the left limit
        assert_eq!(f.eval(0.0), 2.0);
        assert_eq!(f.eval_below(0.0), 0.0);
        assert_eq!(f.eval(1.0), 0.0);
        assert_eq!(f.eval_below(1.0), 2.0);
        assert_eq!(f.eval_mean(1.0), 1.0);
    }

    #[test]
    fn step_is_right_closed_at_threshold() {
        let f = RateFamily::Step { value: 1.0, at: 2.0 };
        assert_eq!(f.eval(1.9), 0.0);
        assert_eq!(f.eval(2.0), 1.0);
        assert_eq!(f.eval_below(2.0), 0.0);
        assert_eq!(f.eval_mean(2.0), 0.5);
    }

    #[test]
    fn table_interpolates_linearly() {
        let f = RateFamily::Table {
            ages: vec![0.0, 1.0, 3.0],
            values: vec![0.0, 2.0, 0.0],
        };
        assert_eq!(f.eval(0.5), 1.0);
        assert_eq!(f.eval(2.0), 1.0);
        assert_eq!(f.eval(5.0), 0.0);
        assert_eq!(f.eval(-1.0), 0.0);
        assert_eq!(f.eval_below(0.5), f.eval(0.5));
    }

    #[test]
    fn sigmoid_monotone_and_in_range() {
        let f = RateFamily::Sigmoid {
            midpoint: 2.0,
            slope: 4.0,
            scale: 1.0,
        };
        let mut prev = -1.0;
        for k in 0..100 {
            let v = f.eval(0.05 * k as f64);
            assert!(v > 0.0 && v < 1.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn exponential_truncation_tail() {
        let d = AgeDistribution::Exponential { rate: 1.0 };
        let a = d.truncation(1e-8);
        assert!((d.tail(a) - 1e-8).abs() < 1e-12);
    }

    #[test]
    fn pareto_moment_finiteness() {
        let d = AgeDistribution::Pareto {
            scale: 1.0,
            exponent: 1.5,
        };
        assert!(d.moment_finite(1.0));
        assert!(!d.moment_finite(2.0));
    }

    #[test]
    fn uniform_sampling_within_support() {
        let d = AgeDistribution::Uniform { min: 1.0, max: 3.0 };
        let mut s = Stream::from_seed(11);
        for _ in 0..1000 {
            let a = d.sample(&mut s);
            assert!((1.0..=3.0).contains(&a));
        }
    }
}
