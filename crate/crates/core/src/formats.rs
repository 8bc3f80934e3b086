//! JSON file formats for constellations, channels and distance instances.
//! Matrices are lists of rows.

use serde::{Deserialize, Serialize};

use crate::channel::{normalize, Channel, Constellation, DifferenceSet};
use crate::error::{Error, Result};
use crate::matcalc::{Matrix, Vector};
use crate::mindist::MinNormInstance;

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::Parse("matrix must have at least one row and column".into()));
    }
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse("matrix rows have different lengths".into()));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn vectors(rows: &[Vec<f64>]) -> Vec<Vector> {
    rows.iter().map(|r| Vector::from_column_slice(r)).collect()
}

/// `{"points": [[...]], "priors": [...], "normalized": false}`. Priors
/// default to uniform. Points are normalized on load unless `normalized` is
/// asserted, in which case they are only validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationFile {
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<f64>>,
    #[serde(default)]
    pub normalized: bool,
}

impl ConstellationFile {
    pub fn build(&self) -> Result<Constellation> {
        if self.points.is_empty() {
            return Err(Error::InvalidConstellation("no points".into()));
        }
        let l = self.points.len();
        let priors = self.priors.clone().unwrap_or_else(|| vec![1.0 / l as f64; l]);
        let points = vectors(&self.points);
        if self.normalized {
            Constellation::validated(points, priors)
        } else {
            normalize(points, priors)
        }
    }

    pub fn from_constellation(c: &Constellation) -> Self {
        ConstellationFile {
            points: c.points().iter().map(|p| p.iter().cloned().collect()).collect(),
            priors: Some(c.priors().to_vec()),
            normalized: true,
        }
    }
}

/// `{"H": [[...]]}` or `{"eigenvalues_sq": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelFile {
    Matrix {
        #[serde(rename = "H")]
        h: Vec<Vec<f64>>,
    },
    Diagonal {
        eigenvalues_sq: Vec<f64>,
    },
}

impl ChannelFile {
    pub fn build(&self) -> Result<Channel> {
        match self {
            ChannelFile::Matrix { h } => Channel::new(matrix_from_rows(h)?),
            ChannelFile::Diagonal { eigenvalues_sq } => {
                if eigenvalues_sq.is_empty() {
                    return Err(Error::Parse("eigenvalues_sq is empty".into()));
                }
                Channel::diagonal(eigenvalues_sq)
            }
        }
    }
}

/// `{"weights": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinNormFile {
    pub weights: Vec<Vec<f64>>,
}

impl MinNormFile {
    pub fn build(&self) -> Result<MinNormInstance> {
        MinNormInstance::new(vectors(&self.weights))
    }
}

/// `{"diffs": [[...]], "H": [[...]], "rho": r}` for MaxMinDist, or with
/// `"d"` in place of `"rho"` for MinPower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceFile {
    pub diffs: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
}

/// Which distance program an instance asks for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceTarget {
    Power(f64),
    Distance(f64),
}

impl DistanceFile {
    pub fn build(&self) -> Result<(DifferenceSet, Channel, DistanceTarget)> {
        let ds = DifferenceSet::unstructured(vectors(&self.diffs))?;
        let ch = Channel::new(matrix_from_rows(&self.h)?)?;
        let target = match (self.rho, self.d) {
            (Some(r), None) => DistanceTarget::Power(r),
            (None, Some(d)) => DistanceTarget::Distance(d),
            _ => return Err(Error::Parse("exactly one of `rho` and `d` is required".into())),
        };
        Ok((ds, ch, target))
    }
}

/// Parses JSON text, mapping serde errors to [`Error::Parse`].
pub fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::make_constellation;

    #[test]
    fn constellation_round_trip() {
        let f: ConstellationFile = parse(r#"{"points": [[-1], [1]]}"#).unwrap();
        let c = f.build().unwrap();
        assert_eq!(c, make_constellation("bpsk", 1).unwrap());
        let back = ConstellationFile::from_constellation(&c);
        assert_eq!(back.build().unwrap(), c);
        let raw: ConstellationFile = parse(r#"{"points": [[0], [4]], "normalized": true}"#).unwrap();
        assert!(raw.build().is_err());
        assert!(parse::<ConstellationFile>(r#"{"points": [[1]], "extra": 1}"#).is_err());
    }

    #[test]
    fn channel_forms() {
        let a: ChannelFile = parse(r#"{"H": [[1, 0], [0, 2]]}"#).unwrap();
        let b: ChannelFile = parse(r#"{"eigenvalues_sq": [4, 1]}"#).unwrap();
        assert_eq!(a.build().unwrap().eig_values_sq, b.build().unwrap().eig_values_sq);
        let ragged: ChannelFile = parse(r#"{"H": [[1, 0], [0]]}"#).unwrap();
        assert!(matches!(ragged.build(), Err(Error::Parse(_))));
        assert!(parse::<ChannelFile>("{").is_err());
    }

    #[test]
    fn distance_targets() {
        let f: DistanceFile = parse(r#"{"diffs": [[1, 0]], "H": [[1, 0]], "rho": 2}"#).unwrap();
        assert_eq!(f.build().unwrap().2, DistanceTarget::Power(2.0));
        let both: DistanceFile = parse(r#"{"diffs": [[1]], "H": [[1]], "rho": 2, "d": 1}"#).unwrap();
        assert!(both.build().is_err());
        let w: MinNormFile = parse(r#"{"weights": [[1, 0], [0.5, 0.5]]}"#).unwrap();
        assert_eq!(w.build().unwrap().dim(), 2);
    }
}
