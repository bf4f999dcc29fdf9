use std::sync::Arc;

use crate::error::{ObjectiveError, SearchError};
use crate::evals::perplexity;
use crate::model::ToyModel;
use crate::rope::ScalingFactors;

/// Something to minimise over scaling factors. Lower is better.
///
/// Implementations must be deterministic and safe to call concurrently.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    /// Context length the objective measures at; 0 when not applicable.
    fn target_length(&self) -> usize {
        0
    }

    fn evaluate(&self, factors: &ScalingFactors) -> Result<f64, ObjectiveError>;
}

/// `sum_i (lambda_i - t_i)^2`.
#[derive(Debug, Clone)]
pub struct SeparableQuadratic {
    target: Vec<f64>,
}

impl SeparableQuadratic {
    pub fn new(target: Vec<f64>) -> Self {
        Self { target }
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }
}

impl Objective for SeparableQuadratic {
    fn name(&self) -> &str {
        "separable_quadratic"
    }

    fn evaluate(&self, factors: &ScalingFactors) -> Result<f64, ObjectiveError> {
        if factors.len() != self.target.len() {
            return Err(ObjectiveError::Custom(format!(
                "expected {} factors, got {}",
                self.target.len(),
                factors.len()
            )));
        }
        Ok(factors
            .as_slice()
            .iter()
            .zip(&self.target)
            .map(|(l, t)| (l - t).powi(2))
            .sum())
    }
}

/// Perplexity of a toy model on fixed samples at the target length.
#[derive(Debug, Clone)]
pub struct ToyPerplexity {
    model: Arc<ToyModel<f32>>,
    samples: Arc<Vec<Vec<u32>>>,
    target_length: usize,
}

impl ToyPerplexity {
    pub fn new(model: Arc<ToyModel<f32>>, samples: Vec<Vec<u32>>, target_length: usize) -> Self {
        Self {
            model,
            samples: Arc::new(samples),
            target_length,
        }
    }

    pub fn samples(&self) -> &[Vec<u32>] {
        &self.samples
    }
}

impl Objective for ToyPerplexity {
    fn name(&self) -> &str {
        "toy_ppl"
    }

    fn target_length(&self) -> usize {
        self.target_length
    }

    fn evaluate(&self, factors: &ScalingFactors) -> Result<f64, ObjectiveError> {
        Ok(perplexity(
            &self.model,
            factors,
            &self.samples,
            self.target_length,
        )?)
    }
}

type Evaluator = dyn Fn(&ScalingFactors) -> Result<f64, ObjectiveError> + Send + Sync;

/// Wraps a caller-supplied evaluator.
pub struct CustomObjective {
    name: String,
    target_length: usize,
    eval: Box<Evaluator>,
}

impl CustomObjective {
    pub fn new(
        name: impl Into<String>,
        target_length: usize,
        eval: impl Fn(&ScalingFactors) -> Result<f64, ObjectiveError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            target_length,
            eval: Box::new(eval),
        }
    }
}

impl Objective for CustomObjective {
    fn name(&self) -> &str {
        &self.name
    }

    fn target_length(&self) -> usize {
        self.target_length
    }

    fn evaluate(&self, factors: &ScalingFactors) -> Result<f64, ObjectiveError> {
        (self.eval)(factors)
    }
}

pub enum ObjectiveParams {
    ToyPpl {
        model: Option<Arc<ToyModel<f32>>>,
        samples: Vec<Vec<u32>>,
        target_length: usize,
    },
    SeparableQuadratic {
        target: Vec<f64>,
    },
    Custom(CustomObjective),
}

pub fn make_objective(params: ObjectiveParams) -> Result<Box<dyn Objective>, SearchError> {
    match params {
        ObjectiveParams::ToyPpl {
            model,
            samples,
            target_length,
        } => {
            let model = model
                .ok_or_else(|| SearchError::ObjectiveParams("toy_ppl needs a checkpoint".into()))?;
            if samples.is_empty() {
                return Err(SearchError::ObjectiveParams(
                    "toy_ppl needs evaluation samples".into(),
                ));
            }
            if target_length < 2 {
                return Err(SearchError::ObjectiveParams(
                    "toy_ppl target length must be >= 2".into(),
                ));
            }
            Ok(Box::new(ToyPerplexity::new(model, samples, target_length)))
        }
        ObjectiveParams::SeparableQuadratic { target } => {
            if target.is_empty() {
                return Err(SearchError::ObjectiveParams(
                    "empty quadratic target".into(),
                ));
            }
            Ok(Box::new(SeparableQuadratic::new(target)))
        }
        ObjectiveParams::Custom(c) => Ok(Box::new(c)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn quadratic_minimum_is_zero() {
        let t = vec![1.5, 2.0, 0.3, 9.0];
        let obj =
            make_objective(ObjectiveParams::SeparableQuadratic { target: t.clone() }).unwrap();
        assert_eq!(obj.evaluate(&ScalingFactors::new(t).unwrap()).unwrap(), 0.0);
        assert!(obj.evaluate(&ScalingFactors::ones(3)).is_err());
    }

    #[test]
    fn toy_ppl_uniform_model_and_consistency() {
        let model = Arc::new(ToyModel::<f32>::init(ModelConfig::default()).unwrap());
        let samples: Vec<Vec<u32>> = (0..3)
            .map(|s| (0..40).map(|i| ((i * 5 + s) % 64) as u32).collect())
            .collect();
        let obj = make_objective(ObjectiveParams::ToyPpl {
            model: Some(model.clone()),
            samples: samples.clone(),
            target_length: 32,
        })
        .unwrap();
        let f = ScalingFactors::uniform(8, 2.0);
        let v = obj.evaluate(&f).unwrap();
        assert!((v - 64.0).abs() < 1e-6 * 64.0);
        assert_eq!(v, perplexity(&model, &f, &samples, 32).unwrap());
        assert_eq!(obj.target_length(), 32);
    }

    #[test]
    fn missing_inputs_are_errors() {
        assert!(matches!(
            make_objective(ObjectiveParams::ToyPpl {
                model: None,
                samples: vec![vec![1, 2]],
                target_length: 2
            }),
            Err(SearchError::ObjectiveParams(_))
        ));
        let model = Arc::new(ToyModel::<f32>::init(ModelConfig::default()).unwrap());
        assert!(make_objective(ObjectiveParams::ToyPpl {
            model: Some(model),
            samples: vec![],
            target_length: 2
        })
        .is_err());
    }

    #[test]
    fn custom_wraps_closure() {
        let obj = make_objective(ObjectiveParams::Custom(CustomObjective::new(
            "sum",
            7,
            |f| Ok(f.as_slice().iter().sum()),
        )))
        .unwrap();
        assert_eq!(obj.name(), "sum");
        assert_eq!(obj.evaluate(&ScalingFactors::ones(4)).unwrap(), 4.0);
    }
}
