//! The five-class label taxonomy.
//!
//! Column order everywhere (probability matrices, confusion matrices,
//! cache files) is `NH, GH, Re, Ra, Se`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_CLASSES: usize = 5;

/// Per-class probabilities in column order.
pub type ClassProbs = [f64; NUM_CLASSES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    /// Non-hate.
    NH,
    /// General hate.
    GH,
    /// Religious hate.
    Re,
    /// Racial hate.
    Ra,
    /// Sexism.
    Se,
}

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [Label::NH, Label::GH, Label::Re, Label::Ra, Label::Se];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NH => "NH",
            Label::GH => "GH",
            Label::Re => "Re",
            Label::Ra => "Ra",
            Label::Se => "Se",
        }
    }

    pub fn is_hate(self) -> bool {
        self != Label::NH
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown label {s:?}")))
    }
}

/// Index of the largest entry; exact ties resolve to the lowest column.
pub fn argmax(row: &ClassProbs) -> Label {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if row[i] > row[best] {
            best = i;
        }
    }
    Label::ALL[best]
}
