//! Preference link functions: map a utility gap to a win probability.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The link used to turn a utility difference into P(first arm wins).
///
/// Only the logistic link (the Bradley–Terry comparison model) is
/// implemented; the enum exists so environments and agents can carry the
/// choice explicitly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkFunction {
    #[default]
    Logistic,
}

impl LinkFunction {
    /// g(x) = 1 / (1 + e^(-x)), evaluated in the numerically stable branch
    /// for each sign so neither tail overflows.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "link argument must be finite, got {x}"
            )));
        }
        Ok(if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        })
    }

    /// g'(x) = g(x) (1 - g(x)).
    pub fn deriv(&self, x: f64) -> Result<f64> {
        let g = self.eval(x)?;
        Ok(g * (1.0 - g))
    }

    /// -ln g(x), the negative log-likelihood of a win at gap `x`, computed
    /// as softplus(-x) so large gaps do not overflow.
    pub fn neg_log(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!(
                "link argument must be finite, got {x}"
            )));
        }
        // -ln g(x) = ln(1 + e^(-x))
        Ok(if x >= 0.0 {
            (-x).exp().ln_1p()
        } else {
            -x + x.exp().ln_1p()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const G: LinkFunction = LinkFunction::Logistic;

    #[test]
    fn eval_at_zero_is_exactly_half() {
        assert_eq!(G.eval(0.0).unwrap(), 0.5);
    }

    #[test]
    fn eval_hits_seven_tenths_at_log_odds() {
        // ln(0.7/0.3) maps back to 0.7
        let x = (7.0f64 / 3.0).ln();
        assert!((G.eval(x).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn deriv_matches_closed_form() {
        assert_eq!(G.deriv(0.0).unwrap(), 0.25);
        // saturated tail stays tiny but positive
        let d = G.deriv(10.0).unwrap();
        assert!((d - 4.5395807735951671e-5).abs() < 1e-15);
        assert!(d > 0.0);
    }

    #[test]
    fn tails_do_not_overflow() {
        assert_eq!(G.eval(1000.0).unwrap(), 1.0);
        assert_eq!(G.eval(-1000.0).unwrap(), 0.0);
        assert!(G.neg_log(-1000.0).unwrap().is_finite());
        assert!(G.neg_log(1000.0).unwrap() >= 0.0);
    }

    #[test]
    fn non_finite_arguments_are_rejected() {
        assert!(G.eval(f64::NAN).is_err());
        assert!(G.eval(f64::INFINITY).is_err());
        assert!(G.deriv(f64::NEG_INFINITY).is_err());
        assert!(G.neg_log(f64::NAN).is_err());
    }

    #[test]
    fn neg_log_agrees_with_direct_formula_in_moderate_range() {
        for i in -40..=40 {
            let x = i as f64 * 0.5;
            let direct = -G.eval(x).unwrap().ln();
            assert!((G.neg_log(x).unwrap() - direct).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn symmetry_g_x_plus_g_neg_x_is_one(x in -700.0f64..700.0) {
            let s = G.eval(x).unwrap() + G.eval(-x).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn eval_is_monotone_and_bounded(a in -700.0f64..700.0, b in -700.0f64..700.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let gl = G.eval(lo).unwrap();
            let gh = G.eval(hi).unwrap();
            prop_assert!(gl <= gh);
            prop_assert!((0.0..=1.0).contains(&gl) && (0.0..=1.0).contains(&gh));
        }

        #[test]
        fn deriv_agrees_with_central_difference(x in -30.0f64..30.0) {
            let h = 1e-6;
            let fd = (G.eval(x + h).unwrap() - G.eval(x - h).unwrap()) / (2.0 * h);
            prop_assert!((G.deriv(x).unwrap() - fd).abs() < 1e-8);
        }
    }
}
