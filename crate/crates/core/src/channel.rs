//! Multi-packet reception (MPR) channel models.
//!
//! Two models are provided:
//!
//! * the **k-MPR** channel, where all concurrent transmissions are received
//!   if and only if there are at most `k` of them. This is the model the
//!   simulation engine uses.
//! * the **generalized** channel, described by a lower-triangular reception
//!   matrix whose entry `(i, j)` is the probability that `j` packets are
//!   received when `i` are transmitted. It is used to derive an equivalent
//!   k-MPR capability ([`k_equiv`]).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for row sums and for ties between expected successes.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("reception matrix has no rows")]
    Empty,
    #[error("row {row} has {found} entries, expected {expected}")]
    RowLength {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("row {row}, column {col}: probability {value} outside [0, 1]")]
    ProbabilityRange { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("transmission count {index} out of range 1..={n_max}")]
    Index { index: usize, n_max: usize },
    #[error("line {line}: cannot parse {token:?} as a probability")]
    Parse { line: usize, token: String },
    #[error("MPR capability must be at least 1")]
    ZeroCapability,
}

/// Validated reception matrix of a generalized MPR channel.
///
/// Rows are 1-indexed by the number of transmitted packets `i`; row `i`
/// holds the `i + 1` probabilities of receiving `0..=i` packets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReceptionMatrix {
    rows: Vec<Vec<f64>>,
}

impl ReceptionMatrix {
    /// Maximum number of simultaneous transmissions the matrix describes.
    pub fn n_max(&self) -> usize {
        self.rows.len()
    }

    /// Row for `i` simultaneous transmissions (1-indexed).
    pub fn row(&self, i: usize) -> Result<&[f64], ChannelError> {
        if i == 0 || i > self.rows.len() {
            return Err(ChannelError::Index {
                index: i,
                n_max: self.rows.len(),
            });
        }
        Ok(&self.rows[i - 1])
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// The conventional collision channel: one transmission always gets
    /// through, two or more are always lost.
    pub fn collision_channel(n_max: usize) -> Self {
        Self::k_mpr(1, n_max)
    }

    /// A k-MPR channel rendered as a reception matrix: `i <= k` packets are
    /// all received, more than `k` are all lost.
    pub fn k_mpr(k: usize, n_max: usize) -> Self {
        let rows = (1..=n_max.max(1))
            .map(|i| {
                let mut row = vec![0.0; i + 1];
                if i <= k {
                    row[i] = 1.0;
                } else {
                    row[0] = 1.0;
                }
                row
            })
            .collect();
        Self { rows }
    }

    /// Parses the plain-text matrix format: one row per line, whitespace
    /// separated probabilities, line `i` holding `i + 1` values. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, ChannelError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| ChannelError::Parse {
                        line: lineno + 1,
                        token: tok.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        validate_matrix(rows)
    }
}

impl FromStr for ReceptionMatrix {
    type Err = ChannelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for ReceptionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Checks the structural and probabilistic invariants of a raw matrix.
pub fn validate_matrix(raw: Vec<Vec<f64>>) -> Result<ReceptionMatrix, ChannelError> {
    if raw.is_empty() {
        return Err(ChannelError::Empty);
    }
    for (idx, row) in raw.iter().enumerate() {
        let i = idx + 1;
        if row.len() != i + 1 {
            return Err(ChannelError::RowLength {
                row: i,
                found: row.len(),
                expected: i + 1,
            });
        }
        for (j, &p) in row.iter().enumerate() {
            // NaN fails both comparisons and is rejected here too.
            if !(0.0..=1.0).contains(&p) {
                return Err(ChannelError::ProbabilityRange {
                    row: i,
                    col: j,
                    value: p,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(ChannelError::RowSum { row: i, sum });
        }
    }
    Ok(ReceptionMatrix { rows: raw })
}

/// Expected number of packets received when `i` are transmitted.
pub fn expected_successes(matrix: &ReceptionMatrix, i: usize) -> Result<f64, ChannelError> {
    let row = matrix.row(i)?;
    Ok(row.iter().enumerate().map(|(j, p)| j as f64 * p).sum())
}

/// Expected successes for every `i` in `1..=n_max`.
pub fn expected_success_profile(matrix: &ReceptionMatrix) -> Vec<f64> {
    (1..=matrix.n_max())
        .map(|i| expected_successes(matrix, i).expect("index within n_max"))
        .collect()
}

/// How to pick among several transmission counts that maximise the expected
/// number of successes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// Smallest maximiser; saves transmit power.
    #[default]
    Minimum,
    /// Median of the maximisers (lower median for an even count).
    Middle,
}

impl FromStr for TieRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "min" | "minimum" => Ok(TieRule::Minimum),
            "mid" | "middle" => Ok(TieRule::Middle),
            other => Err(format!("unknown tie rule {other:?} (expected min|middle)")),
        }
    }
}

/// Equivalent MPR capability: the transmission count that maximises the
/// expected number of received packets.
pub fn k_equiv(matrix: &ReceptionMatrix, tie_rule: TieRule) -> usize {
    let profile = expected_success_profile(matrix);
    let best = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let maximisers: Vec<usize> = profile
        .iter()
        .enumerate()
        .filter(|(_, &e)| best - e <= PROBABILITY_TOLERANCE)
        .map(|(idx, _)| idx + 1)
        .collect();
    match tie_rule {
        TieRule::Minimum => maximisers[0],
        TieRule::Middle => maximisers[(maximisers.len() - 1) / 2],
    }
}

/// Success predicate of the k-MPR channel.
#[inline]
pub fn kmpr_success(concurrent: usize, k: usize) -> bool {
    concurrent <= k
}

/// Channel model selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ChannelModel {
    KMpr { k: usize },
    Generalized { matrix: ReceptionMatrix },
}

impl ChannelModel {
    pub fn k_mpr(k: usize) -> Result<Self, ChannelError> {
        if k == 0 {
            return Err(ChannelError::ZeroCapability);
        }
        Ok(ChannelModel::KMpr { k })
    }

    /// MPR capability the backoff protocols should use with this channel.
    pub fn capability(&self, tie_rule: TieRule) -> usize {
        match self {
            ChannelModel::KMpr { k } => *k,
            ChannelModel::Generalized { matrix } => k_equiv(matrix, tie_rule),
        }
    }
}
