//! Parameter files: one text header line
//! `PANOVIT1 <config json> params=<n>` followed by `n` little-endian f64
//! values in canonical parameter order.

use std::fs;
use std::path::Path;

use crate::error::{format, Result};

use super::model::{ModelConfig, ParameterSet};
use super::tensor::{Real, Tensor};

pub const PARAMS_MAGIC: &str = "PANOVIT1";

pub fn save_params<T: Real>(
    path: &Path,
    cfg: &ModelConfig,
    params: &ParameterSet<T>,
) -> Result<()> {
    let n = params.count();
    let mut bytes = format!(
        "{PARAMS_MAGIC} {} params={n}\n",
        serde_json::to_string(cfg)?
    )
    .into_bytes();
    bytes.reserve(n * 8);
    for v in params.flat() {
        bytes.extend_from_slice(&v.to_f64().expect("finite real").to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads parameters, requiring the file's config to equal `cfg`.
pub fn load_params<T: Real>(path: &Path, cfg: &ModelConfig) -> Result<ParameterSet<T>> {
    let (found, params) = load_params_with_config(path)?;
    if &found != cfg {
        return format(format!(
            "{} was saved for config {} but {} was requested",
            path.display(),
            serde_json::to_string(&found)?,
            serde_json::to_string(cfg)?
        ));
    }
    Ok(params)
}

/// Loads parameters together with the config echoed in the header.
pub fn load_params_with_config<T: Real>(path: &Path) -> Result<(ModelConfig, ParameterSet<T>)> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| crate::Error::Format("parameter file has no header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| crate::Error::Format("parameter header is not UTF-8".into()))?;
    let rest = header
        .strip_prefix(PARAMS_MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| {
            crate::Error::Format(format!("parameter header must start with {PARAMS_MAGIC}"))
        })?;
    let (json, count) = rest
        .rsplit_once(" params=")
        .ok_or_else(|| crate::Error::Format("parameter header lacks params=<n>".into()))?;
    let cfg: ModelConfig = serde_json::from_str(json)
        .map_err(|e| crate::Error::Format(format!("bad config in header: {e}")))?;
    cfg.validate()
        .map_err(|e| crate::Error::Format(format!("invalid config in header: {e}")))?;
    let declared: usize = count
        .parse()
        .map_err(|_| crate::Error::Format(format!("bad parameter count '{count}'")))?;
    let expected = cfg.param_count();
    if declared != expected {
        return format(format!(
            "header declares {declared} parameters, config needs {expected}"
        ));
    }
    let payload = &bytes[nl + 1..];
    if payload.len() % 8 != 0 || payload.len() / 8 != expected {
        return format(format!(
            "expected {expected} parameter values, found {}{}",
            payload.len() / 8,
            if payload.len() % 8 != 0 {
                " plus a partial value"
            } else {
                ""
            }
        ));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))));
    let tensors = cfg
        .param_shapes()
        .into_iter()
        .map(|(_, shape)| {
            let n = shape.iter().product();
            Tensor::from_vec(&shape, values.by_ref().take(n).collect())
        })
        .collect();
    let params = ParameterSet::from_tensors(&cfg, tensors)?;
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Variant;
    use crate::Error;

    fn cfg() -> ModelConfig {
        ModelConfig {
            variant: Variant::Stacked3D,
            frames: 2,
            height: 8,
            width: 8,
            patch: 4,
            embed_dim: 8,
            depth: 2,
            heads: 2,
            mlp_ratio: 2,
            n_classes: 8,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.params");
        let p = ParameterSet::<f64>::init(&cfg(), 42).unwrap();
        save_params(&path, &cfg(), &p).unwrap();
        let q: ParameterSet<f64> = load_params(&path, &cfg()).unwrap();
        let bits = |s: &ParameterSet<f64>| s.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p), bits(&q));
        assert_eq!(p.names(), q.names());
    }

    #[test]
    fn wrong_config_and_truncation_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.params");
        let p = ParameterSet::<f64>::init(&cfg(), 42).unwrap();
        save_params(&path, &cfg(), &p).unwrap();

        let mut other = cfg();
        other.depth = 1;
        assert!(matches!(
            load_params::<f64>(&path, &other),
            Err(Error::Format(_))
        ));

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, &bytes).unwrap();
        let err = load_params::<f64>(&path, &cfg()).unwrap_err();
        let msg = err.to_string();
        let n = cfg().param_count();
        assert!(matches!(err, Error::Format(_)));
        assert!(
            msg.contains(&format!("expected {n}")) && msg.contains(&format!("found {}", n - 1)),
            "{msg}"
        );

        fs::write(&path, b"NOPE {}\n").unwrap();
        assert!(matches!(
            load_params::<f64>(&path, &cfg()),
            Err(Error::Format(_))
        ));
    }
}
