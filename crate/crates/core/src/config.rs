//! TOML population spec files.
//!
//! ```toml
//! horizon = 1.0
//!
//! [[class]]
//! weight = 0.5
//! density = [1.0]              # optional, equal-width histogram heights
//!
//! [class.intensity]
//! kind = "affine"              # constant | affine | separable | tabulated
//! base = 0.5
//! slope_y = 2.0
//! slope_t = 0.0
//! ```
//!
//! Kind parameters:
//! * `constant`: `rate`
//! * `affine`: `base`, `slope_y`, `slope_t` (`w = base + slope_y*y + slope_t*t`)
//! * `separable`: `scale`, `y = [a0, a1]`, `t = [b0, b1]` (`w = scale*(a0+a1*y)*(b0+b1*t)`)
//! * `tabulated`: `table`, one row per time node, each row over position nodes

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{
    Histogram, IntensityField, IntensityKind, PopulationClass, PopulationSpec, RateTable,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub horizon: f64,
    #[serde(rename = "class")]
    pub classes: Vec<ClassEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassEntry {
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Vec<f64>>,
    pub intensity: IntensityEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IntensityEntry {
    Constant {
        rate: f64,
    },
    Affine {
        base: f64,
        #[serde(default)]
        slope_y: f64,
        #[serde(default)]
        slope_t: f64,
    },
    Separable {
        #[serde(default = "one")]
        scale: f64,
        y: [f64; 2],
        t: [f64; 2],
    },
    Tabulated {
        table: Vec<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            msg: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec file serializes")
    }

    /// Validates every field and builds the spec. Errors name the offending
    /// field path, e.g. `class[1].intensity.rate`.
    pub fn build(&self) -> Result<PopulationSpec<f64>> {
        let mut classes = Vec::with_capacity(self.classes.len());
        for (k, entry) in self.classes.iter().enumerate() {
            let prefix = format!("class[{k}]");
            let field = entry
                .intensity
                .build(self.horizon)
                .map_err(|e| prefix_path(e, &format!("{prefix}.intensity")))?;
            let density = match &entry.density {
                Some(h) => Histogram::new(h.clone()).map_err(|e| prefix_path(e, &prefix))?,
                None => Histogram::uniform(),
            };
            classes.push(PopulationClass {
                weight: entry.weight,
                field,
                density,
            });
        }
        PopulationSpec::new(classes)
    }
}

impl IntensityEntry {
    pub fn build(&self, horizon: f64) -> Result<IntensityField<f64>> {
        let kind = match self {
            IntensityEntry::Constant { rate } => IntensityKind::Constant { rate: *rate },
            IntensityEntry::Affine {
                base,
                slope_y,
                slope_t,
            } => IntensityKind::Affine {
                base: *base,
                slope_y: *slope_y,
                slope_t: *slope_t,
            },
            IntensityEntry::Separable { scale, y, t } => IntensityKind::Separable {
                scale: *scale,
                y0: y[0],
                y1: y[1],
                t0: t[0],
                t1: t[1],
            },
            IntensityEntry::Tabulated { table } => {
                IntensityKind::Tabulated(RateTable::from_rows(table)?)
            }
        };
        IntensityField::new(kind, horizon)
    }
}

fn prefix_path(err: Error, prefix: &str) -> Error {
    match err {
        Error::InvalidSpec { path, msg } => Error::InvalidSpec {
            path: format!("{prefix}.{path}"),
            msg,
        },
        other => other,
    }
}

pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Reads and validates a spec file in one step.
pub fn load_spec(path: &Path) -> Result<PopulationSpec<f64>> {
    SpecFile::load(path)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    const AFFINE: &str = r#"
horizon = 1.0

[[class]]
weight = 0.5
[class.intensity]
kind = "affine"
base = 0.5
slope_y = 2.0

[[class]]
weight = 0.5
density = [1.0, 1.0]
[class.intensity]
kind = "constant"
rate = 1.0
"#;

    #[test]
    fn parses_and_builds() {
        let file = SpecFile::parse(AFFINE).unwrap();
        let spec = file.build().unwrap();
        assert_eq!(spec.class_count(), 2);
        assert_eq!(spec.c_w(), 2.0);
        assert_eq!(spec.m_w(), 0.5 * 2.5 + 0.5 * 1.0);
        let again = SpecFile::parse(&file.to_toml()).unwrap();
        assert_eq!(again, file);
    }

    #[test]
    fn negative_rate_names_field() {
        let text = AFFINE.replace("rate = 1.0", "rate = -1.0");
        let err = SpecFile::parse(&text).unwrap().build().unwrap_err();
        match err {
            Error::InvalidSpec { path, .. } => assert_eq!(path, "class[1].intensity.rate"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn weights_must_sum_to_one() {
        let text = AFFINE.replacen("weight = 0.5", "weight = 0.4", 1);
        let err = SpecFile::parse(&text).unwrap().build().unwrap_err();
        assert!(err.to_string().contains("weights sum"));
    }

    #[test]
    fn parse_errors_carry_line() {
        let text = AFFINE.replacen("weight = 0.5", "weight = \"half\"", 1);
        match SpecFile::parse(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, Some(5)),
            other => panic!("unexpected {other:?}"),
        }
        // errors inside the intensity table point at the table header
        let text = AFFINE.replace("slope_y = 2.0", "slope_y = \"two\"");
        match SpecFile::parse(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, Some(6)),
            other => panic!("unexpected {other:?}"),
        }
        let unknown = AFFINE.replace("slope_y = 2.0", "slope_q = 2.0");
        assert!(SpecFile::parse(&unknown).is_err());
    }
}
