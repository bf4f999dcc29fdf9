//! Baseline scaling-factor constructors (position interpolation, NTK-aware,
//! YaRN-style ramp), the running-maximum projection used to force
//! monotone factors, and the on-disk factors document.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::SchemeError;
use crate::io::write_atomic;
use crate::rope::{base_frequencies, RopeConfig, ScalingFactors};

pub const DEFAULT_RAMP_LOW: f64 = 1.0;
pub const DEFAULT_RAMP_HIGH: f64 = 32.0;

fn check_scale(s: f64) -> Result<(), SchemeError> {
    if !(s >= 1.0) || !s.is_finite() {
        return Err(SchemeError::InvalidScale(s));
    }
    Ok(())
}

/// Uniform interpolation: every pair divided by `s`.
pub fn pi_factors(head_dim: usize, s: f64) -> Result<ScalingFactors, SchemeError> {
    check_scale(s)?;
    if head_dim < 2 || head_dim % 2 != 0 {
        return Err(SchemeError::Rope(crate::error::RopeError::InvalidHeadDim(
            head_dim,
        )));
    }
    Ok(ScalingFactors::uniform(head_dim / 2, s))
}

/// Factors implied by enlarging the base to `base * s^(d/(d-2))`.
pub fn ntk_factors(cfg: &RopeConfig, s: f64) -> Result<ScalingFactors, SchemeError> {
    check_scale(s)?;
    let d = cfg.head_dim() as f64;
    let base_ratio = s.powf(d / (d - 2.0));
    let lambdas = (0..cfg.num_pairs())
        .map(|i| base_ratio.powf(2.0 * i as f64 / d))
        .collect();
    Ok(ScalingFactors::new(lambdas)?)
}

/// Ramped blend between no interpolation and full interpolation.
///
/// For pair `i`, `r = trained_context / (2*pi*beta_i)` counts how many full
/// turns the pair makes over the trained context. Pairs with `r >= ramp_high`
/// keep `lambda = 1`, pairs with `r <= ramp_low` get `lambda = s`, and the
/// blend is linear in `r` between the two.
pub fn yarn_factors(
    cfg: &RopeConfig,
    s: f64,
    trained_context: usize,
    ramp_low: f64,
    ramp_high: f64,
) -> Result<ScalingFactors, SchemeError> {
    check_scale(s)?;
    if trained_context == 0 {
        return Err(SchemeError::InvalidContext);
    }
    if !(ramp_low < ramp_high) || !ramp_low.is_finite() || !ramp_high.is_finite() {
        return Err(SchemeError::InvalidRamp {
            low: ramp_low,
            high: ramp_high,
        });
    }
    let lambdas = base_frequencies(cfg)
        .into_iter()
        .map(|beta| {
            let turns = trained_context as f64 / (2.0 * PI * beta);
            let keep = ((turns - ramp_low) / (ramp_high - ramp_low)).clamp(0.0, 1.0);
            let interp = 1.0 - keep;
            (1.0 - interp) + interp * s
        })
        .collect();
    Ok(ScalingFactors::new(lambdas)?)
}

/// Running-maximum projection onto non-decreasing vectors.
pub fn asf_project(factors: &ScalingFactors) -> ScalingFactors {
    let mut max = f64::NEG_INFINITY;
    let projected = factors
        .as_slice()
        .iter()
        .map(|&l| {
            max = max.max(l);
            max
        })
        .collect();
    ScalingFactors::new(projected).expect("projection of valid factors is valid")
}

pub fn is_monotone(factors: &ScalingFactors) -> bool {
    factors.as_slice().windows(2).all(|w| w[0] <= w[1])
}

/// JSON form of a factor vector: `{"head_dim", "lambdas", "provenance"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorsDocument {
    pub head_dim: usize,
    pub lambdas: Vec<f64>,
    pub provenance: String,
    /// Effective run configuration, echoed for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl FactorsDocument {
    pub fn new(factors: &ScalingFactors, provenance: impl Into<String>) -> Self {
        Self {
            head_dim: factors.len() * 2,
            lambdas: factors.as_slice().to_vec(),
            provenance: provenance.into(),
            config: None,
        }
    }

    pub fn factors(&self) -> Result<ScalingFactors, SchemeError> {
        if self.lambdas.len() * 2 != self.head_dim {
            return Err(SchemeError::DocumentLength {
                head_dim: self.head_dim,
                len: self.lambdas.len(),
            });
        }
        Ok(ScalingFactors::new(self.lambdas.clone())?)
    }

    pub fn to_json(&self) -> Result<String, SchemeError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SchemeError> {
        let doc: Self = serde_json::from_str(text)?;
        doc.factors()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), SchemeError> {
        let mut text = self.to_json()?;
        text.push('\n');
        write_atomic(path, text.as_bytes()).map_err(|source| SchemeError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SchemeError> {
        let text = fs::read_to_string(path).map_err(|source| SchemeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(v: &[f64]) -> ScalingFactors {
        ScalingFactors::new(v.to_vec()).unwrap()
    }

    #[test]
    fn pi_is_uniform() {
        assert_eq!(pi_factors(8, 1.0).unwrap().as_slice(), &[1.0; 4]);
        assert_eq!(pi_factors(8, 16.0).unwrap().as_slice(), &[16.0; 4]);
        assert_eq!(pi_factors(128, 2.0).unwrap().len(), 64);
        assert!(matches!(
            pi_factors(8, 0.5),
            Err(SchemeError::InvalidScale(_))
        ));
    }

    #[test]
    fn ntk_endpoints() {
        let cfg = RopeConfig::with_default_base(128).unwrap();
        let ones = ntk_factors(&cfg, 1.0).unwrap();
        assert!(ones.as_slice().iter().all(|&l| l == 1.0));
        let four = ntk_factors(&cfg, 4.0).unwrap();
        assert_eq!(four.get(0), 1.0);
        assert!((four.get(63) - 4.0).abs() < 1e-9);
        assert!(is_monotone(&four));
        assert!(ntk_factors(&cfg, 0.9).is_err());
    }

    #[test]
    fn ntk_matches_enlarged_base() {
        // Angles from ntk factors equal angles from the enlarged base directly.
        let cfg = RopeConfig::with_default_base(16).unwrap();
        let s = 8.0;
        let fac = ntk_factors(&cfg, s).unwrap();
        let big = RopeConfig::new(16, 10_000.0 * s.powf(16.0 / 14.0)).unwrap();
        let a = crate::rope::rotation_angles(&cfg, &fac, 37).unwrap();
        let b = crate::rope::rotation_angles(&big, &ScalingFactors::ones(8), 37).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn yarn_identity_and_saturation() {
        let cfg = RopeConfig::with_default_base(16).unwrap();
        let one = yarn_factors(&cfg, 1.0, 64, 1.0, 32.0).unwrap();
        assert!(one.as_slice().iter().all(|&l| l == 1.0));
        let y = yarn_factors(&cfg, 4.0, 64, 1.0, 32.0).unwrap();
        // the lowest frequency pair makes far less than one turn over 64 tokens
        assert_eq!(y.get(7), 4.0);
        assert!(yarn_factors(&cfg, 4.0, 64, 5.0, 5.0).is_err());
        assert!(yarn_factors(&cfg, 4.0, 0, 1.0, 32.0).is_err());
    }

    /// Scalar reference: evaluates the ramp one pair at a time from the
    /// wavelength, without going through `base_frequencies`.
    fn yarn_reference(d: usize, base: f64, s: f64, ctx: f64, low: f64, high: f64) -> Vec<f64> {
        (0..d / 2)
            .map(|i| {
                let wavelength = 2.0 * PI * (base.ln() * (2 * i) as f64 / d as f64).exp();
                let ratio = ctx / wavelength;
                let mut w = (ratio - low) / (high - low);
                if w < 0.0 {
                    w = 0.0;
                }
                if w > 1.0 {
                    w = 1.0;
                }
                // w = 1: no interpolation, w = 0: full interpolation
                w * 1.0 + (1.0 - w) * s
            })
            .collect()
    }

    #[test]
    fn yarn_llama_shape_against_reference() {
        let cfg = RopeConfig::with_default_base(128).unwrap();
        let y = yarn_factors(&cfg, 16.0, 4096, 1.0, 32.0).unwrap();
        let reference = yarn_reference(128, 10_000.0, 16.0, 4096.0, 1.0, 32.0);
        for (a, b) in y.as_slice().iter().zip(&reference) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert_eq!(y.get(0), 1.0);
        assert_eq!(y.get(63), 16.0);
        assert!(is_monotone(&y));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(
            asf_project(&f(&[1.0, 2.0, 3.0])).as_slice(),
            &[1.0, 2.0, 3.0]
        );
        assert_eq!(
            asf_project(&f(&[3.0, 1.0, 2.0])).as_slice(),
            &[3.0, 3.0, 3.0]
        );
        assert_eq!(
            asf_project(&f(&[1.0, 5.0, 2.0, 7.0, 6.0])).as_slice(),
            &[1.0, 5.0, 5.0, 7.0, 7.0]
        );
        assert!(is_monotone(&f(&[1.0, 1.0, 2.0])));
        assert!(!is_monotone(&f(&[2.0, 1.0])));
    }

    #[test]
    fn document_round_trip_and_validation() {
        let fac = f(&[1.0, 2.5, 0.25, 16.0]);
        let doc = FactorsDocument::new(&fac, "pi");
        let back = FactorsDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.factors().unwrap(), fac);
        let bad = r#"{"head_dim": 6, "lambdas": [1.0, 1.0], "provenance": "x"}"#;
        assert!(matches!(
            FactorsDocument::from_json(bad),
            Err(SchemeError::DocumentLength { .. })
        ));
    }

    fn factors_strategy() -> impl Strategy<Value = ScalingFactors> {
        proptest::collection::vec(0.01f64..50.0, 1..64)
            .prop_map(|v| ScalingFactors::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn prop_projection_idempotent_dominating(x in factors_strategy()) {
            let p = asf_project(&x);
            prop_assert!(is_monotone(&p));
            prop_assert_eq!(asf_project(&p), p.clone());
            for (a, b) in p.as_slice().iter().zip(x.as_slice()) {
                prop_assert!(a >= b);
            }
            if is_monotone(&x) {
                prop_assert_eq!(p, x);
            }
        }

        #[test]
        fn prop_constructors_shape(half in 2usize..65, s in 1.0f64..64.0) {
            let d = half * 2;
            let cfg = RopeConfig::with_default_base(d).unwrap();
            for fac in [
                pi_factors(d, s).unwrap(),
                ntk_factors(&cfg, s).unwrap(),
                yarn_factors(&cfg, s, 64, DEFAULT_RAMP_LOW, DEFAULT_RAMP_HIGH).unwrap(),
            ] {
                prop_assert_eq!(fac.len(), half);
                prop_assert!(fac.as_slice().iter().all(|&l| l >= crate::rope::MIN_LAMBDA));
            }
        }
    }
}
