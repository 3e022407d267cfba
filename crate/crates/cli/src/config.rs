//! Loss-weight configuration files (JSON).
//!
//! Every key is optional; missing keys keep their defaults:
//!
//! ```json
//! { "alpha": 0.2, "lambda_time": 0.0, "lambda_static": 0.1,
//!   "lambda_rigid": 0.1, "lambda_corr": 0.1, "rigid_pair_samples": 512 }
//! ```
//!
//! The rigid-pair sampler seed always comes from `--seed`.

use std::path::Path;

use trajfield::loss::LossWeights;

use crate::CliError;

const KEYS: [&str; 6] = ["alpha", "lambda_time", "lambda_static", "lambda_rigid", "lambda_corr", "rigid_pair_samples"];

pub fn parse_weights(text: &str) -> Result<LossWeights, CliError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::Format("loss config must be a JSON object".into()))?;
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(CliError::Format(format!("unknown loss config key `{k}`; expected one of {KEYS:?}")));
    }
    let weights: LossWeights = serde_json::from_value(value)?;
    weights.validate()?;
    Ok(weights)
}

pub fn load_weights(path: Option<&Path>, seed: u64) -> Result<LossWeights, CliError> {
    let mut w = match path {
        Some(p) => parse_weights(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?)?,
        None => LossWeights::default(),
    };
    w.pair_seed = seed;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let w = parse_weights(r#"{"alpha": 0.5, "lambda_corr": 0}"#).unwrap();
        assert_eq!(w.alpha, 0.5);
        assert_eq!(w.lambda_corr, 0.0);
        assert_eq!(w.lambda_static, LossWeights::default().lambda_static);
        assert!(parse_weights(r#"{"alhpa": 1}"#).is_err());
        assert!(parse_weights(r#"{"alpha": -1}"#).is_err());
        assert!(parse_weights("[1]").is_err());
    }
}
