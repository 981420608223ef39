//! JSON model-spec documents: field names follow [`LfnsModel`] and
//! [`CostSpec`], matrices are row-major nested arrays.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{validate, CostSpec, LfnsModel};
use crate::error::Result;
use crate::linalg::{from_rows, to_rows};

type Rows = Vec<Vec<f64>>;

const AUV_PAPER: &str = include_str!("../../models/auv-paper.json");
const SCALAR_DEMO: &str = include_str!("../../models/scalar-demo.json");

/// Names accepted by [`ModelSpec::builtin`].
pub const BUILTIN_MODELS: [&str; 2] = ["auv-paper", "scalar-demo"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub a00: Rows,
    pub a10: Rows,
    pub a11: Rows,
    pub b00: Rows,
    pub b10: Rows,
    pub b11: Rows,
    /// Missing covariances and means default to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_w0: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_w1: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xbar0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xbar1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_x0: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_x1: Option<Rows>,
    pub q: Rows,
    pub r: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_terminal: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "auv-paper" => AUV_PAPER,
            "scalar-demo" => SCALAR_DEMO,
            _ => return None,
        };
        Some(Self::from_json(text).expect("bundled model specs parse"))
    }

    /// Builtin name, or else a path to a spec file.
    pub fn resolve(source: &str) -> Result<Self> {
        match Self::builtin(source) {
            Some(spec) => Ok(spec),
            None => Self::load(Path::new(source)),
        }
    }

    pub fn from_model(name: Option<String>, model: &LfnsModel, cost: &CostSpec) -> Self {
        ModelSpec {
            name,
            n: model.n,
            m1: model.m1,
            m2: model.m2,
            a00: to_rows(&model.a00),
            a10: to_rows(&model.a10),
            a11: to_rows(&model.a11),
            b00: to_rows(&model.b00),
            b10: to_rows(&model.b10),
            b11: to_rows(&model.b11),
            sigma_w0: Some(to_rows(&model.sigma_w0)),
            sigma_w1: Some(to_rows(&model.sigma_w1)),
            xbar0: Some(model.xbar0.iter().copied().collect()),
            xbar1: Some(model.xbar1.iter().copied().collect()),
            sigma_x0: Some(to_rows(&model.sigma_x0)),
            sigma_x1: Some(to_rows(&model.sigma_x1)),
            q: to_rows(&cost.q),
            r: to_rows(&cost.r),
            p_terminal: cost.p_terminal.as_ref().map(to_rows),
            gamma: cost.gamma,
        }
    }

    /// Builds the model and cost without checking admissibility; only ragged
    /// rows are rejected here.
    pub fn to_model(&self) -> Result<(LfnsModel, CostSpec)> {
        let (n, m1, m2) = (self.n, self.m1, self.m2);
        let opt = |what: &str, rows: &Option<Rows>| -> Result<DMatrix<f64>> {
            match rows {
                Some(r) => from_rows(what, r, n),
                None => Ok(DMatrix::zeros(n, n)),
            }
        };
        let vec = |v: &Option<Vec<f64>>| v.as_ref().map_or_else(|| DVector::zeros(n), |v| DVector::from_vec(v.clone()));
        let model = LfnsModel {
            n,
            m1,
            m2,
            a00: from_rows("a00", &self.a00, n)?,
            a10: from_rows("a10", &self.a10, n)?,
            a11: from_rows("a11", &self.a11, n)?,
            b00: from_rows("b00", &self.b00, m1)?,
            b10: from_rows("b10", &self.b10, m1)?,
            b11: from_rows("b11", &self.b11, m2)?,
            sigma_w0: opt("sigma_w0", &self.sigma_w0)?,
            sigma_w1: opt("sigma_w1", &self.sigma_w1)?,
            xbar0: vec(&self.xbar0),
            xbar1: vec(&self.xbar1),
            sigma_x0: opt("sigma_x0", &self.sigma_x0)?,
            sigma_x1: opt("sigma_x1", &self.sigma_x1)?,
        }
        .symmetrized();
        let mut cost = CostSpec::new(from_rows("q", &self.q, 2 * n)?, from_rows("r", &self.r, m1 + m2)?);
        if let Some(pt) = &self.p_terminal {
            cost = cost.with_terminal(from_rows("p_terminal", pt, 2 * n)?);
        }
        cost.gamma = self.gamma;
        Ok((model, cost))
    }

    /// Builds and validates; any violation is returned as
    /// [`Error::InvalidModel`].
    pub fn validated(&self) -> Result<(LfnsModel, CostSpec)> {
        let (model, cost) = self.to_model()?;
        validate(&model, &cost).into_result()?;
        Ok((model, cost))
    }
}

/// Loads a builtin or file spec and validates it.
pub fn load_validated(source: &str) -> Result<(ModelSpec, LfnsModel, CostSpec)> {
    let spec = ModelSpec::resolve(source)?;
    let (model, cost) = spec.validated()?;
    Ok((spec, model, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn builtins_parse_and_validate() {
        for name in BUILTIN_MODELS {
            let spec = ModelSpec::builtin(name).unwrap();
            assert_eq!(spec.name.as_deref(), Some(name));
            spec.validated().unwrap();
        }
        assert!(ModelSpec::builtin("nope").is_none());
    }

    #[test]
    fn invalid_dimensions_are_reported() {
        let mut spec = ModelSpec::builtin("scalar-demo").unwrap();
        spec.a11 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let err = spec.validated().unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
        assert!(err.to_string().contains("a11"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ModelSpec::builtin("scalar-demo").unwrap().to_json().unwrap()).unwrap();
        v["a_00"] = serde_json::json!([[1.0]]);
        assert!(ModelSpec::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn missing_moments_default_to_zero() {
        let text = r#"{"n":1,"m1":1,"m2":1,"a00":[[1]],"a10":[[0]],"a11":[[1]],
            "b00":[[1]],"b10":[[0]],"b11":[[1]],"q":[[1,0],[0,1]],"r":[[1,0],[0,1]]}"#;
        let (model, cost) = ModelSpec::from_json(text).unwrap().validated().unwrap();
        assert_eq!(model.sigma_w0, DMatrix::zeros(1, 1));
        assert!(cost.gamma.is_none() && cost.p_terminal.is_none());
    }
}
