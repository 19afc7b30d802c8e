//! Input files: numeric CSV data and hypothesis documents.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::hypothesis::{DesignMatrix, LinearHypothesis, SubsetHypothesis};

/// Response and design read from a CSV file.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DesignMatrix,
}

/// Parses comma-separated numeric data with a header row. The `response`
/// column becomes `y`; the other columns form `X` in file order, after an
/// optional leading intercept column named `(intercept)`.
pub fn parse_data(text: &str, response: &str, intercept: bool) -> Result<Dataset> {
    let bad = |m: String| Error::InvalidSpec(format!("data: {m}"));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let yi = header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| bad(format!("no column named `{response}`")))?;
    if header.len() < 2 {
        return Err(bad("need a response and at least one covariate column".into()));
    }
    let mut y = Vec::new();
    let mut xs = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(format!("row {}: `{field}` in column `{}` is not a number", line + 2, header[j])))?;
            if !v.is_finite() {
                return Err(bad(format!("row {}: non-finite value in column `{}`", line + 2, header[j])));
            }
            if j == yi {
                y.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = y.len();
    let p = header.len() - 1;
    let names: Vec<String> = header.iter().enumerate().filter(|(j, _)| *j != yi).map(|(_, h)| h.clone()).collect();
    let x = DesignMatrix::new(DMatrix::from_row_slice(n, p, &xs))?.with_column_names(names)?;
    Ok(Dataset {
        y: DVector::from_vec(y),
        x: if intercept { x.with_intercept() } else { x },
    })
}

pub fn read_data(path: &Path, response: &str, intercept: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidSpec(format!("reading {}: {e}", path.display())))?;
    parse_data(&text, response, intercept)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum HypothesisDoc {
    Subset {
        subset: SubsetHypothesis,
    },
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
        #[serde(default)]
        groups: Option<Vec<Vec<usize>>>,
    },
}

/// Hypothesis document plus whether it declared its own row groups.
#[derive(Debug, Clone)]
pub struct ParsedHypothesis {
    pub hypothesis: LinearHypothesis,
    pub has_groups: bool,
}

/// Parses `{"A": [[..]], "c": [..], "groups": [[..]]}` or
/// `{"subset": {"j0": k, "c": [..]}}`; column indices refer to the final
/// design, intercept included.
pub fn parse_hypothesis(text: &str, p: usize) -> Result<ParsedHypothesis> {
    let doc: HypothesisDoc =
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(format!("hypothesis: {e}")))?;
    match doc {
        HypothesisDoc::Subset { subset } => Ok(ParsedHypothesis {
            hypothesis: subset.to_linear(p)?,
            has_groups: false,
        }),
        HypothesisDoc::Linear { a, c, groups } => {
            let r = a.len();
            if r == 0 || a.iter().any(|row| row.len() != p) {
                return Err(Error::DimensionMismatch(format!("hypothesis: A must be a nonempty R×{p} matrix")));
            }
            let flat: Vec<f64> = a.into_iter().flatten().collect();
            let am = DMatrix::from_row_slice(r, p, &flat);
            let cv = DVector::from_vec(c);
            let has_groups = groups.is_some();
            let hypothesis = match groups {
                Some(g) => LinearHypothesis::with_partition(am, cv, g)?,
                None => LinearHypothesis::new(am, cv)?,
            };
            Ok(ParsedHypothesis { hypothesis, has_groups })
        }
    }
}

pub fn read_hypothesis(path: &Path, p: usize) -> Result<ParsedHypothesis> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidSpec(format!("reading {}: {e}", path.display())))?;
    parse_hypothesis(&text, p)
}

/// `lo:hi:n` evenly spaced values, endpoints included.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidSpec(format!("grid `{s}` is not of the form lo:hi:n"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
        return Err(bad());
    }
    Ok(match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    })
}
