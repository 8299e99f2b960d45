//! JLPT proficiency levels.
//!
//! Levels are ordered by difficulty: `N5` (value 1) is the easiest and `N1`
//! (value 5) the hardest. The scalar value is what ControlError targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Level {
    N5 = 1,
    N4 = 2,
    N3 = 3,
    N2 = 4,
    N1 = 5,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid level {0:?}: expected one of N5, N4, N3, N2, N1 or 1..=5")]
pub struct ParseLevelError(pub String);

impl Level {
    /// Easiest first.
    pub const ALL: [Level; 5] = [Level::N5, Level::N4, Level::N3, Level::N2, Level::N1];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            Level::N5 => "N5",
            Level::N4 => "N4",
            Level::N3 => "N3",
            Level::N2 => "N2",
            Level::N1 => "N1",
        }
    }

    pub fn from_value(value: u8) -> Option<Level> {
        match value {
            1 => Some(Level::N5),
            2 => Some(Level::N4),
            3 => Some(Level::N3),
            4 => Some(Level::N2),
            5 => Some(Level::N1),
            _ => None,
        }
    }

    /// Zero-based position in [`Level::ALL`].
    pub fn index(self) -> usize {
        self.value() as usize - 1
    }

    /// Lowercase file stem used for per-level files (`n5`, ..., `n1`).
    pub fn file_stem(self) -> &'static str {
        match self {
            Level::N5 => "n5",
            Level::N4 => "n4",
            Level::N3 => "n3",
            Level::N2 => "n2",
            Level::N1 => "n1",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Level {
    type Err = ParseLevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Ok(v) = t.parse::<u8>() {
            return Level::from_value(v).ok_or_else(|| ParseLevelError(s.to_string()));
        }
        Level::ALL.into_iter().find(|l| l.label().eq_ignore_ascii_case(t)).ok_or_else(|| ParseLevelError(s.to_string()))
    }
}

impl TryFrom<String> for Level {
    type Error = ParseLevelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Level> for String {
    fn from(level: Level) -> String {
        level.label().to_string()
    }
}
