use std::fmt;

use serde::{Deserialize, Serialize};

/// Status classes in fixed order: index 0, 1, 2 of every status distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatusClass {
    NonExistent = 0,
    UnknownLocation = 1,
    KnownLocation = 2,
}

impl StatusClass {
    pub const ALL: [StatusClass; 3] = [
        StatusClass::NonExistent,
        StatusClass::UnknownLocation,
        StatusClass::KnownLocation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// A cell of an entity's state grid: `-` (does not exist), `?` (exists,
/// location unknown) or a lowercase location phrase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Location {
    Absent,
    Unknown,
    Known(String),
}

impl Location {
    /// Parses a grid cell. Text is case-folded and whitespace-collapsed;
    /// returns `None` for an empty cell.
    pub fn parse(cell: &str) -> Option<Location> {
        let text = normalize_phrase(cell);
        match text.as_str() {
            "" => None,
            "-" => Some(Location::Absent),
            "?" => Some(Location::Unknown),
            _ => Some(Location::Known(text)),
        }
    }

    pub fn known(text: &str) -> Location {
        Location::parse(text).unwrap_or(Location::Unknown)
    }

    pub fn exists(&self) -> bool {
        !matches!(self, Location::Absent)
    }

    pub fn status(&self) -> StatusClass {
        match self {
            Location::Absent => StatusClass::NonExistent,
            Location::Unknown => StatusClass::UnknownLocation,
            Location::Known(_) => StatusClass::KnownLocation,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Location::Known(t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Absent => f.write_str("-"),
            Location::Unknown => f.write_str("?"),
            Location::Known(t) => f.write_str(t),
        }
    }
}

pub fn normalize_phrase(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl Serialize for Location {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Location::parse(&raw).ok_or_else(|| serde::de::Error::custom("empty location cell"))
    }
}
