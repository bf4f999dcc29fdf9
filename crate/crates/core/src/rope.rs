//! Rotary position embedding with per-pair frequency scaling.
//!
//! Dimension pairs are interleaved: pair `i` is `(x[2i], x[2i + 1])`, and it
//! rotates by `m / (lambda_i * beta_i)` at position `m`, where
//! `beta_i = base^(2i/d)`. All angle math is done in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::RopeError;

/// Smallest scaling factor the system will ever hold.
pub const MIN_LAMBDA: f64 = 0.01;

pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRopeConfig")]
pub struct RopeConfig {
    head_dim: usize,
    base: f64,
}

#[derive(Deserialize)]
struct RawRopeConfig {
    head_dim: usize,
    base: f64,
}

impl TryFrom<RawRopeConfig> for RopeConfig {
    type Error = RopeError;

    fn try_from(raw: RawRopeConfig) -> Result<Self, Self::Error> {
        RopeConfig::new(raw.head_dim, raw.base)
    }
}

impl RopeConfig {
    pub fn new(head_dim: usize, base: f64) -> Result<Self, RopeError> {
        if head_dim < 4 || head_dim % 2 != 0 {
            return Err(RopeError::InvalidHeadDim(head_dim));
        }
        if !(base > 1.0) || !base.is_finite() {
            return Err(RopeError::InvalidBase(base));
        }
        Ok(Self { head_dim, base })
    }

    pub fn with_default_base(head_dim: usize) -> Result<Self, RopeError> {
        Self::new(head_dim, DEFAULT_BASE)
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Number of rotated pairs, `d / 2`.
    pub fn num_pairs(&self) -> usize {
        self.head_dim / 2
    }
}

/// Per-pair divisors of the rotation angle.
///
/// Positivity is enforced by clamping to [`MIN_LAMBDA`]; no ordering is
/// imposed across pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalingFactors(Vec<f64>);

impl ScalingFactors {
    /// Builds factors from raw values, clamping each to [`MIN_LAMBDA`].
    /// Non-finite values are rejected.
    pub fn new(lambdas: Vec<f64>) -> Result<Self, RopeError> {
        if lambdas.is_empty() {
            return Err(RopeError::EmptyFactors);
        }
        if let Some(pos) = lambdas.iter().position(|l| !l.is_finite()) {
            return Err(RopeError::NonFiniteFactor(pos));
        }
        Ok(Self(lambdas.into_iter().map(clamp_lambda).collect()))
    }

    pub fn ones(num_pairs: usize) -> Self {
        Self(vec![1.0; num_pairs])
    }

    pub fn uniform(num_pairs: usize, value: f64) -> Self {
        Self(vec![clamp_lambda(value); num_pairs])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Returns a copy with `delta` added to `lambda[start..start + width]`,
    /// clamped. Out-of-range segments are truncated to the vector.
    pub fn with_offset(&self, start: usize, width: usize, delta: f64) -> Self {
        let mut out = self.0.clone();
        let end = (start + width).min(out.len());
        for l in &mut out[start.min(end)..end] {
            *l = clamp_lambda(*l + delta);
        }
        Self(out)
    }

    pub fn check_len(&self, cfg: &RopeConfig) -> Result<(), RopeError> {
        if self.len() != cfg.num_pairs() {
            return Err(RopeError::FactorLength {
                expected: cfg.num_pairs(),
                actual: self.len(),
            });
        }
        Ok(())
    }
}

pub fn clamp_lambda(l: f64) -> f64 {
    l.max(MIN_LAMBDA)
}

/// `beta_i = base^(2i/d)` for `i in 0..d/2`.
pub fn base_frequencies(cfg: &RopeConfig) -> Vec<f64> {
    let d = cfg.head_dim as f64;
    (0..cfg.num_pairs())
        .map(|i| cfg.base.powf(2.0 * i as f64 / d))
        .collect()
}

/// `angle_i = m / (lambda_i * beta_i)`.
pub fn rotation_angles(
    cfg: &RopeConfig,
    factors: &ScalingFactors,
    m: usize,
) -> Result<Vec<f64>, RopeError> {
    factors.check_len(cfg)?;
    let m = m as f64;
    Ok(base_frequencies(cfg)
        .iter()
        .zip(factors.as_slice())
        .map(|(beta, lambda)| m / (lambda * beta))
        .collect())
}

/// Rotates each interleaved pair of `x` by its angle at position `m`.
pub fn apply_rope(
    x: &[f64],
    m: usize,
    cfg: &RopeConfig,
    factors: &ScalingFactors,
) -> Result<Vec<f64>, RopeError> {
    if x.len() != cfg.head_dim {
        return Err(RopeError::InputShape {
            expected: cfg.head_dim,
            actual: x.len(),
        });
    }
    let angles = rotation_angles(cfg, factors, m)?;
    let mut out = vec![0.0; x.len()];
    for (i, theta) in angles.iter().enumerate() {
        let (sin, cos) = theta.sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        out[2 * i] = a * cos - b * sin;
        out[2 * i + 1] = a * sin + b * cos;
    }
    Ok(out)
}

/// Dot product of the rotated query at `m` with the rotated key at `n`.
pub fn attention_score(
    q: &[f64],
    k: &[f64],
    m: usize,
    n: usize,
    cfg: &RopeConfig,
    factors: &ScalingFactors,
) -> Result<f64, RopeError> {
    let qr = apply_rope(q, m, cfg, factors)?;
    let kr = apply_rope(k, n, cfg, factors)?;
    Ok(qr.iter().zip(&kr).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(d: usize) -> RopeConfig {
        RopeConfig::with_default_base(d).unwrap()
    }

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn config_invariants() {
        assert!(RopeConfig::new(2, 10_000.0).is_err());
        assert!(RopeConfig::new(6, 10_000.0).is_ok());
        assert!(RopeConfig::new(7, 10_000.0).is_err());
        assert!(RopeConfig::new(8, 1.0).is_err());
        assert!(RopeConfig::new(8, f64::NAN).is_err());
        let bad: Result<RopeConfig, _> = serde_json::from_str(r#"{"head_dim":3,"base":10000.0}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn factors_are_clamped() {
        let f = ScalingFactors::new(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(f.as_slice(), &[MIN_LAMBDA, MIN_LAMBDA, 2.0]);
        assert!(ScalingFactors::new(vec![f64::INFINITY]).is_err());
        let g = f.with_offset(1, 2, -5.0);
        assert_eq!(g.as_slice(), &[MIN_LAMBDA, MIN_LAMBDA, MIN_LAMBDA]);
        // non-monotone vectors are fine
        assert!(ScalingFactors::new(vec![3.0, 1.0, 2.0]).is_ok());
    }

    #[test]
    fn base_frequencies_small() {
        let b = base_frequencies(&cfg(4));
        assert_eq!(b.len(), 2);
        assert_eq!(b[0], 1.0);
        assert!((b[1] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn base_frequency_last_of_128() {
        let b = base_frequencies(&cfg(128));
        assert_eq!(b[0], 1.0);
        // 10000^(126/128), evaluated independently via exp/ln
        let expected = (126.0 / 128.0 * 10_000f64.ln()).exp();
        assert!((b[63] - expected).abs() < 1e-6);
        assert!((b[63] - 8659.64).abs() < 0.01);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn angles_at_zero_and_one() {
        let c = cfg(16);
        let ones = ScalingFactors::ones(8);
        assert!(rotation_angles(&c, &ones, 0)
            .unwrap()
            .iter()
            .all(|a| *a == 0.0));
        let a1 = rotation_angles(&c, &ones, 1).unwrap();
        for (a, b) in a1.iter().zip(base_frequencies(&c)) {
            assert_eq!(*a, 1.0 / b);
        }
        let twos = ScalingFactors::uniform(8, 2.0);
        let a2 = rotation_angles(&c, &twos, 1).unwrap();
        for (x, y) in a1.iter().zip(&a2) {
            assert!((x / 2.0 - y).abs() < 1e-15);
        }
    }

    #[test]
    fn angles_reject_wrong_length() {
        let c = cfg(16);
        assert!(rotation_angles(&c, &ScalingFactors::ones(4), 3).is_err());
    }

    #[test]
    fn apply_rope_zero_position_is_identity() {
        let c = cfg(8);
        let x = [0.3, -1.0, 2.0, 0.5, 0.0, 1.5, -0.7, 0.1];
        let y = apply_rope(&x, 0, &c, &ScalingFactors::ones(4)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn apply_rope_single_pair_rotation() {
        // head_dim must be >= 4, so check the first pair of a 4-dim vector;
        // pair 0 has beta = 1 whatever the base is.
        let c = RopeConfig::new(4, 500.0).unwrap();
        let y = apply_rope(&[1.0, 0.0, 0.0, 0.0], 1, &c, &ScalingFactors::ones(2)).unwrap();
        assert!((y[0] - 0.5403).abs() < 1e-4);
        assert!((y[1] - 0.8415).abs() < 1e-4);
        assert!((y[0] - 1f64.cos()).abs() < 1e-15);
        assert!((y[1] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn apply_rope_shape_error() {
        let c = cfg(8);
        let err = apply_rope(&[1.0; 6], 1, &c, &ScalingFactors::ones(4)).unwrap_err();
        assert!(matches!(
            err,
            RopeError::InputShape {
                expected: 8,
                actual: 6
            }
        ));
        assert!(attention_score(&[1.0; 8], &[1.0; 4], 0, 0, &c, &ScalingFactors::ones(4)).is_err());
    }

    #[test]
    fn equal_positions_cancel() {
        let c = cfg(8);
        let mut e0 = [0.0; 8];
        e0[0] = 1.0;
        let s = attention_score(&e0, &e0, 5, 5, &c, &ScalingFactors::uniform(4, 3.0)).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn factor_only_moves_its_own_pair() {
        let c = cfg(8);
        let base = ScalingFactors::ones(4);
        let bumped = base.with_offset(2, 1, 4.0);
        for pair in 0..4 {
            let mut e = [0.0; 8];
            e[2 * pair] = 1.0;
            let a = attention_score(&e, &e, 0, 9, &c, &base).unwrap();
            let b = attention_score(&e, &e, 0, 9, &c, &bumped).unwrap();
            if pair == 2 {
                assert!((a - b).abs() > 1e-6);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, d)
    }

    fn factor_strategy(n: usize) -> impl Strategy<Value = ScalingFactors> {
        proptest::collection::vec(0.01f64..20.0, n).prop_map(|v| ScalingFactors::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn prop_norm_preserved(x in vec_strategy(16), m in 0usize..100_000, f in factor_strategy(8)) {
            let c = cfg(16);
            let y = apply_rope(&x, m, &c, &f).unwrap();
            let (nx, ny) = (norm(&x), norm(&y));
            prop_assert!((nx - ny).abs() <= 1e-9 * nx.max(1e-300));
        }

        #[test]
        fn prop_shift_invariant(q in vec_strategy(16), k in vec_strategy(16),
                                m in 0usize..4096, n in 0usize..4096, s in 0usize..4096,
                                f in factor_strategy(8)) {
            let c = cfg(16);
            let a = attention_score(&q, &k, m, n, &c, &f).unwrap();
            let b = attention_score(&q, &k, m + s, n + s, &c, &f).unwrap();
            prop_assert!((a - b).abs() <= 1e-6);
        }

        #[test]
        fn prop_composition(x in vec_strategy(16), m1 in 0usize..5000, m2 in 0usize..5000,
                            f in factor_strategy(8)) {
            let c = cfg(16);
            let once = apply_rope(&apply_rope(&x, m1, &c, &f).unwrap(), m2, &c, &f).unwrap();
            let direct = apply_rope(&x, m1 + m2, &c, &f).unwrap();
            for (a, b) in once.iter().zip(&direct) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
        }
    }
}
