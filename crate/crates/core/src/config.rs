//! TOML parameter files.
//!
//! Every key is optional; missing keys fall back to the reference set
//! (`m = 4, 4`, `K = 0.2, 0.1`, `L = 0.3, 0.2`, `alpha = 1, 1`,
//! `a = 0.8, 1.5`, `S_in = 3`, `D = 0.2`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GrowthParams, ModelParams, OperatingParams, RemovalParams};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub m1: Option<f64>,
    #[serde(rename = "K1")]
    pub k1: Option<f64>,
    #[serde(rename = "L1")]
    pub l1: Option<f64>,
    pub m2: Option<f64>,
    #[serde(rename = "K2")]
    pub k2: Option<f64>,
    #[serde(rename = "L2")]
    pub l2: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    #[serde(rename = "S_in")]
    pub s_in: Option<f64>,
    #[serde(rename = "D")]
    pub d: Option<f64>,
}

impl ParamsFile {
    pub fn resolve(&self) -> Result<ModelParams> {
        let def = ModelParams::default();
        let p = ModelParams {
            growth: GrowthParams {
                m: [self.m1.unwrap_or(def.growth.m[0]), self.m2.unwrap_or(def.growth.m[1])],
                k: [self.k1.unwrap_or(def.growth.k[0]), self.k2.unwrap_or(def.growth.k[1])],
                l: [self.l1.unwrap_or(def.growth.l[0]), self.l2.unwrap_or(def.growth.l[1])],
            },
            removal: RemovalParams {
                alpha: [
                    self.alpha1.unwrap_or(def.removal.alpha[0]),
                    self.alpha2.unwrap_or(def.removal.alpha[1]),
                ],
                a: [self.a1.unwrap_or(def.removal.a[0]), self.a2.unwrap_or(def.removal.a[1])],
            },
            operating: OperatingParams {
                s_in: self.s_in.unwrap_or(def.operating.s_in),
                d: self.d.unwrap_or(def.operating.d),
            },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_params(p: &ModelParams) -> Self {
        ParamsFile {
            m1: Some(p.growth.m[0]),
            k1: Some(p.growth.k[0]),
            l1: Some(p.growth.l[0]),
            m2: Some(p.growth.m[1]),
            k2: Some(p.growth.k[1]),
            l2: Some(p.growth.l[1]),
            alpha1: Some(p.removal.alpha[0]),
            alpha2: Some(p.removal.alpha[1]),
            a1: Some(p.removal.a[0]),
            a2: Some(p.removal.a[1]),
            s_in: Some(p.operating.s_in),
            d: Some(p.operating.d),
        }
    }
}

pub fn parse_params(text: &str) -> Result<ModelParams> {
    let file: ParamsFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    file.resolve()
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_params(&text)
}

pub fn to_toml(p: &ModelParams) -> String {
    toml::to_string(&ParamsFile::from_params(p)).expect("flat table always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_set() {
        assert_eq!(parse_params("").unwrap(), ModelParams::default());
    }

    #[test]
    fn keys_override_defaults() {
        let p = parse_params("a1 = 0\na2 = 0.0\nS_in = 0.1\nD = 0.25\nK2 = 0.3\n").unwrap();
        assert_eq!(p.removal.a, [0.0, 0.0]);
        assert_eq!(p.operating.s_in, 0.1);
        assert_eq!(p.operating.d, 0.25);
        assert_eq!(p.growth.k, [0.2, 0.3]);
    }

    #[test]
    fn unknown_keys_and_invalid_values_fail() {
        assert!(matches!(parse_params("Y1 = 2"), Err(Error::Config(_))));
        assert!(parse_params("D = -1").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let p = ModelParams::default().with_operating(3.2324, 0.2).unwrap();
        assert_eq!(parse_params(&to_toml(&p)).unwrap(), p);
    }
}
