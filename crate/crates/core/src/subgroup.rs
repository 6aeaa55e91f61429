//! The eight ethnicity × gender populations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ethnicity {
    Asian,
    Black,
    Indian,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 4] = [Ethnicity::Asian, Ethnicity::Black, Ethnicity::Indian, Ethnicity::White];

    pub fn letter(self) -> char {
        match self {
            Ethnicity::Asian => 'A',
            Ethnicity::Black => 'B',
            Ethnicity::Indian => 'I',
            Ethnicity::White => 'W',
        }
    }
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn letter(self) -> char {
        match self {
            Gender::Female => 'F',
            Gender::Male => 'M',
        }
    }
}

impl FromStr for Ethnicity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "asian" => Ok(Ethnicity::Asian),
            "b" | "black" => Ok(Ethnicity::Black),
            "i" | "indian" => Ok(Ethnicity::Indian),
            "w" | "white" => Ok(Ethnicity::White),
            _ => Err(Error::InvalidInput(format!("unknown ethnicity `{s}`"))),
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            _ => Err(Error::InvalidInput(format!("unknown gender `{s}`"))),
        }
    }
}

impl fmt::Display for Ethnicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A demographic subgroup. Ordering is ethnicity-major, so iterating
/// [`Subgroup::ALL`] or a `BTreeMap<Subgroup, _>` yields AF, AM, BF, … WM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subgroup {
    pub ethnicity: Ethnicity,
    pub gender: Gender,
}

impl Subgroup {
    pub const COUNT: usize = 8;

    pub const ALL: [Subgroup; 8] = {
        use Ethnicity::*;
        use Gender::*;
        [
            Subgroup::new(Asian, Female),
            Subgroup::new(Asian, Male),
            Subgroup::new(Black, Female),
            Subgroup::new(Black, Male),
            Subgroup::new(Indian, Female),
            Subgroup::new(Indian, Male),
            Subgroup::new(White, Female),
            Subgroup::new(White, Male),
        ]
    };

    pub const fn new(ethnicity: Ethnicity, gender: Gender) -> Self {
        Subgroup { ethnicity, gender }
    }

    /// Position in [`Subgroup::ALL`].
    pub fn index(self) -> usize {
        self.ethnicity as usize * 2 + self.gender as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Two-letter code, e.g. `AF` or `WM`.
    pub fn code(self) -> String {
        let mut s = String::with_capacity(2);
        s.push(self.ethnicity.letter());
        s.push(self.gender.letter());
        s
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.ethnicity.letter(), self.gender.letter())
    }
}

impl FromStr for Subgroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let mut chars = t.chars();
        match (chars.next(), chars.next(), chars.next()) {
            (Some(e), Some(g), None) => Ok(Subgroup::new(e.to_string().parse()?, g.to_string().parse()?)),
            _ => Err(Error::InvalidInput(format!("unknown subgroup code `{s}`"))),
        }
    }
}

impl Serialize for Subgroup {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subgroup {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn eight_distinct_values() {
        let set: HashSet<_> = Subgroup::ALL.iter().collect();
        assert_eq!(set.len(), 8);
        for (i, s) in Subgroup::ALL.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(Subgroup::from_index(i), Some(*s));
        }
    }

    #[test]
    fn codes_round_trip() {
        let codes: Vec<String> = Subgroup::ALL.iter().map(|s| s.code()).collect();
        assert_eq!(codes, ["AF", "AM", "BF", "BM", "IF", "IM", "WF", "WM"]);
        for s in Subgroup::ALL {
            assert_eq!(s.code().parse::<Subgroup>().unwrap(), s);
            assert_eq!(s.to_string(), s.code());
        }
    }

    #[test]
    fn ordering_matches_table_layout() {
        let mut sorted = Subgroup::ALL;
        sorted.reverse();
        sorted.sort();
        assert_eq!(sorted, Subgroup::ALL);
    }

    #[test]
    fn long_names_parse() {
        assert_eq!("indian".parse::<Ethnicity>().unwrap(), Ethnicity::Indian);
        assert_eq!(" Male ".parse::<Gender>().unwrap(), Gender::Male);
        assert!("XF".parse::<Subgroup>().is_err());
        assert!("AFF".parse::<Subgroup>().is_err());
    }
}
