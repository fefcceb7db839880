//! Law files: pretty-printed JSON with a `format` tag and a
//! `schema_version` next to the law fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExplicitLaw;
use crate::error::{Error, Result};

pub const LAW_SCHEMA_VERSION: u32 = 1;
const FORMAT: &str = "eddpc-explicit-law";

#[derive(Serialize)]
struct LawFileOut<'a> {
    format: &'a str,
    schema_version: u32,
    #[serde(flatten)]
    law: &'a ExplicitLaw,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    schema_version: u32,
}

pub(crate) fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse { line: e.line(), msg: e.to_string() }
}

impl ExplicitLaw {
    pub fn to_json(&self) -> String {
        let out = LawFileOut { format: FORMAT, schema_version: LAW_SCHEMA_VERSION, law: self };
        serde_json::to_string_pretty(&out).expect("law serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
        let header: Header = serde_json::from_value(value.clone())
            .map_err(|e| Error::Schema(format!("missing law file header: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::Schema(format!("expected format {FORMAT}, found {}", header.format)));
        }
        if header.schema_version != LAW_SCHEMA_VERSION {
            return Err(Error::SchemaVersion { found: header.schema_version, expected: LAW_SCHEMA_VERSION });
        }
        let law: ExplicitLaw = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        law.validate()?;
        Ok(law)
    }

    fn validate(&self) -> Result<()> {
        let (n, m, l) = (self.dims.n, self.dims.m, self.dims.horizon);
        for (i, r) in self.regions.iter().enumerate() {
            let ok = r.region.dim() == n
                && r.gain_u.shape() == (m * l, n)
                && r.offset_u.len() == m * l
                && r.gain_lambda.ncols() == n
                && r.gain_lambda.nrows() == r.offset_lambda.len()
                && r.cl_gain.shape() == (n, n)
                && r.cl_offset.len() == n;
            if !ok {
                return Err(Error::InvalidLaw(format!("region {i} has inconsistent dimensions")));
            }
        }
        Ok(())
    }
}

pub fn write_law(law: &ExplicitLaw, path: &Path) -> Result<()> {
    std::fs::write(path, law.to_json())?;
    Ok(())
}

pub fn read_law(path: &Path) -> Result<ExplicitLaw> {
    ExplicitLaw::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explicit::tests::bench_problem;
    use crate::explicit::{build_explicit_law, BuildOptions, Provenance};

    fn sample() -> ExplicitLaw {
        let q = bench_problem(10.0, 0.05);
        build_explicit_law(&q, &BuildOptions::default())
            .unwrap()
            .with_provenance(Provenance { dataset: "abc".into(), spec: "def".into() })
    }

    #[test]
    fn round_trip_is_identical() {
        let law = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("law.json");
        write_law(&law, &path).unwrap();
        let back = read_law(&path).unwrap();
        assert_eq!(back, law);
        assert_eq!(back.to_json(), law.to_json());
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let text = sample().to_json();
        let cut = &text[..text.len() / 2];
        assert!(matches!(ExplicitLaw::from_json(cut), Err(Error::Parse { .. })));
    }

    #[test]
    fn unknown_version() {
        let text = sample().to_json().replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        assert!(matches!(
            ExplicitLaw::from_json(&text),
            Err(Error::SchemaVersion { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn wrong_format_tag() {
        let text = sample().to_json().replacen(FORMAT, "something-else", 1);
        assert!(matches!(ExplicitLaw::from_json(&text), Err(Error::Schema(_))));
    }
}
