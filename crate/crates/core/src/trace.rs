//! Pieces shared by the solver trace formats.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a constant used in a bound check came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    User,
    Estimated,
    Oracle,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::User => "user",
            Provenance::Estimated => "estimated",
            Provenance::Oracle => "oracle",
        })
    }
}

/// A lower bound on the optimal value, tagged with its source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FStar {
    pub value: f64,
    pub provenance: Provenance,
}

pub(crate) fn csv_header_check(first: Option<(usize, &str)>, columns: &[&str]) -> Result<()> {
    match first {
        Some((_, h)) if h.trim().split(',').eq(columns.iter().copied()) => Ok(()),
        Some(_) => Err(Error::Format(format!("unexpected CSV header; expected {}", columns.join(",")))),
        None => Err(Error::Format("empty CSV trace".into())),
    }
}

pub(crate) fn parse_field<T: FromStr>(s: &str, line_idx: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line: line_idx + 1,
        msg: format!("cannot parse field {s:?}"),
    })
}
