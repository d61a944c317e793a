use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Tolerance on the unit-norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// L2-normalized feature vector tagged with the provider that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVector", into = "RawVector")]
pub struct EmbeddingVector {
    values: Vec<f64>,
    provider_id: String,
}

#[derive(Serialize, Deserialize)]
struct RawVector {
    dim: usize,
    values: Vec<f64>,
    provider_id: String,
}

impl TryFrom<RawVector> for EmbeddingVector {
    type Error = FeatureError;
    fn try_from(raw: RawVector) -> Result<Self, Self::Error> {
        if raw.dim != raw.values.len() {
            return Err(FeatureError::DimensionMismatch { expected: raw.dim, actual: raw.values.len() });
        }
        let norm = l2(&raw.values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(FeatureError::NotNormalized(norm));
        }
        Ok(EmbeddingVector { values: raw.values, provider_id: raw.provider_id })
    }
}

impl From<EmbeddingVector> for RawVector {
    fn from(v: EmbeddingVector) -> Self {
        RawVector { dim: v.values.len(), values: v.values, provider_id: v.provider_id }
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(values: Vec<f64>, provider_id: impl Into<String>) -> Result<Self, FeatureError> {
        if values.is_empty() {
            return Err(FeatureError::InvalidDimension(0));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
        let norm = l2(&values);
        if norm == 0.0 {
            return Err(FeatureError::ZeroVector);
        }
        Ok(EmbeddingVector { values: values.into_iter().map(|v| v / norm).collect(), provider_id: provider_id.into() })
    }

    pub fn from_f32(values: &[f32], provider_id: impl Into<String>) -> Result<Self, FeatureError> {
        EmbeddingVector::normalized(values.iter().map(|&v| v as f64).collect(), provider_id)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64, FeatureError> {
        if self.dim() != other.dim() {
            return Err(FeatureError::DimensionMismatch { expected: self.dim(), actual: other.dim() });
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes() {
        let v = EmbeddingVector::normalized(vec![3.0, 4.0], "p").unwrap();
        assert_eq!(v.values(), &[0.6, 0.8]);
        assert!((v.norm() - 1.0).abs() < NORM_TOLERANCE);
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0], "p").is_err());
        assert!(EmbeddingVector::normalized(vec![], "p").is_err());
        assert!(EmbeddingVector::normalized(vec![f64::NAN, 1.0], "p").is_err());
    }

    #[test]
    fn serde_checks_invariants() {
        let v = EmbeddingVector::normalized(vec![1.0, 1.0, 0.0], "hash-mock").unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert!(json.starts_with("{\"dim\":3,"));
        assert_eq!(serde_json::from_str::<EmbeddingVector>(&json).unwrap(), v);
        assert!(serde_json::from_str::<EmbeddingVector>(r#"{"dim":2,"values":[1.0,1.0],"provider_id":"x"}"#).is_err());
        assert!(serde_json::from_str::<EmbeddingVector>(r#"{"dim":3,"values":[1.0,0.0],"provider_id":"x"}"#).is_err());
    }
}
