use crate::error::Result;
use crate::losses::{softmax, LabelWeights, Logits, ProbVector};
use crate::regressor::AggregatingRegressor;

/// Common interface of the online logistic learners: predict logits for x,
/// then observe the outcome.
pub trait OnlineLearner {
    fn predict(&self, x: &[f64]) -> Result<Logits>;

    fn update(&mut self, x: &[f64], y: &LabelWeights) -> Result<()>;

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        Ok(softmax(&self.predict(x)?))
    }
}

impl OnlineLearner for AggregatingRegressor {
    fn predict(&self, x: &[f64]) -> Result<Logits> {
        AggregatingRegressor::predict(self, x)
    }

    fn update(&mut self, x: &[f64], y: &LabelWeights) -> Result<()> {
        AggregatingRegressor::update(self, x, y)
    }

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        AggregatingRegressor::predict_proba(self, x)
    }
}
