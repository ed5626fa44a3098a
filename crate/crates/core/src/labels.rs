//! Diagnosis labels for the two classification levels.

use crate::error::{Error, Result};
use alloc::format;

/// Parent-level diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParentLabel {
    Normal,
    EE,
    Celiac,
}

/// Celiac severity (modified Marsh score; II and IV do not occur in this
/// pipeline's label set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChildLabel {
    I,
    IIIa,
    IIIb,
    IIIc,
}

impl ParentLabel {
    pub const ALL: [ParentLabel; 3] = [ParentLabel::Normal, ParentLabel::EE, ParentLabel::Celiac];

    pub fn as_str(self) -> &'static str {
        match self {
            ParentLabel::Normal => "Normal",
            ParentLabel::EE => "EE",
            ParentLabel::Celiac => "Celiac",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "Normal" => Ok(ParentLabel::Normal),
            "EE" => Ok(ParentLabel::EE),
            "Celiac" => Ok(ParentLabel::Celiac),
            other => Err(Error::Argument(format!("unknown parent label {other:?}"))),
        }
    }

    /// Position in the parent model's class order.
    pub fn index(self) -> usize {
        match self {
            ParentLabel::Normal => 0,
            ParentLabel::EE => 1,
            ParentLabel::Celiac => 2,
        }
    }
}

impl ChildLabel {
    pub const ALL: [ChildLabel; 4] = [
        ChildLabel::I,
        ChildLabel::IIIa,
        ChildLabel::IIIb,
        ChildLabel::IIIc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChildLabel::I => "I",
            ChildLabel::IIIa => "IIIa",
            ChildLabel::IIIb => "IIIb",
            ChildLabel::IIIc => "IIIc",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" => Ok(ChildLabel::I),
            "IIIa" => Ok(ChildLabel::IIIa),
            "IIIb" => Ok(ChildLabel::IIIb),
            "IIIc" => Ok(ChildLabel::IIIc),
            other => Err(Error::Argument(format!("unknown child label {other:?}"))),
        }
    }

    /// Position in the child model's class order.
    pub fn index(self) -> usize {
        match self {
            ChildLabel::I => 0,
            ChildLabel::IIIa => 1,
            ChildLabel::IIIb => 2,
            ChildLabel::IIIc => 3,
        }
    }
}

/// Which side of the slide-level train/test split a patch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split {other:?}"))),
        }
    }
}

/// Class order of the 6-way flat baseline: parent classes with Celiac
/// expanded into its severities.
pub fn flat_six_way_index(parent: ParentLabel, child: Option<ChildLabel>) -> Result<usize> {
    match (parent, child) {
        (ParentLabel::Normal, None) => Ok(0),
        (ParentLabel::EE, None) => Ok(1),
        (ParentLabel::Celiac, Some(c)) => Ok(2 + c.index()),
        (ParentLabel::Celiac, None) => Err(Error::Argument(
            "Celiac patch without severity cannot take a 6-way label".into(),
        )),
        (p, Some(_)) => Err(Error::Argument(format!(
            "{} patch must not carry a severity label",
            p.as_str()
        ))),
    }
}
