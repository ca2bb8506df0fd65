//! The three diagnostic classes.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// Normal control.
    Normal = 0,
    /// Common (non-COVID) pneumonia.
    Cp = 1,
    /// Novel coronavirus pneumonia.
    Ncp = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Normal, Label::Cp, Label::Ncp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Label::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Validation(format!("label {i} is not one of 0, 1, 2")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::Cp => "CP",
            Label::Ncp => "NCP",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
