use serde::{Deserialize, Serialize};

use super::{FeatureMap, PolicyParams};

/// Serialized linear Gaussian policy with its feature standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgModel {
    pub kind: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub sigma: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub max_laxity: usize,
    pub l_max: Option<usize>,
    pub config_hash: String,
}

impl PgModel {
    pub const KIND: &'static str = "evcs-pg/1";

    pub fn new(params: &PolicyParams, features: &FeatureMap, config_hash: impl Into<String>) -> Self {
        Self {
            kind: Self::KIND.to_string(),
            weights: params.weights.clone(),
            bias: params.bias,
            sigma: params.sigma,
            feature_mean: features.mean.clone(),
            feature_std: features.std.clone(),
            max_laxity: features.max_laxity,
            l_max: features.l_max,
            config_hash: config_hash.into(),
        }
    }

    pub fn params(&self) -> PolicyParams {
        PolicyParams {
            weights: self.weights.clone(),
            bias: self.bias,
            sigma: self.sigma,
        }
    }

    pub fn feature_map(&self) -> FeatureMap {
        FeatureMap {
            max_laxity: self.max_laxity,
            l_max: self.l_max,
            mean: self.feature_mean.clone(),
            std: self.feature_std.clone(),
        }
    }

    /// Consistent lengths and a known kind tag.
    pub fn check(&self) -> Result<(), String> {
        if self.kind != Self::KIND {
            return Err(format!("unexpected model kind `{}`", self.kind));
        }
        let dim = self.feature_map().levels() + 2;
        for (name, len) in [
            ("weights", self.weights.len()),
            ("feature_mean", self.feature_mean.len()),
            ("feature_std", self.feature_std.len()),
        ] {
            if len != dim {
                return Err(format!("{name} has length {len}, expected {dim}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let m: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        m.check()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip(w in prop::collection::vec(-1e6f64..1e6, 4), b in -1e3f64..1e3, s in 1e-6f64..10.0) {
            let fm = FeatureMap { max_laxity: 2, l_max: None, mean: vec![1.5, 0.1, 1e-7, 3.0], std: vec![2.0, 0.3, 1.0, 7.0] };
            let p = PolicyParams { weights: w, bias: b, sigma: s };
            let m = PgModel::new(&p, &fm, "abc");
            let back = PgModel::from_json(&m.to_json()).unwrap();
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        let fm = FeatureMap::identity(2, None);
        let mut m = PgModel::new(&PolicyParams::zeros(4, 1.0), &fm, "x");
        m.weights.pop();
        assert!(PgModel::from_json(&m.to_json()).is_err());
    }
}
