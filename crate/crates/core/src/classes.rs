//! The fourteen nucleus/cell classes and the two sentinel outcomes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Goblet,
    Enteroendocrine,
    Enterocyte,
    Fibroblast,
    StromalUndetermined,
    Myeloid,
    HelperT,
    CytotoxicT,
    TCellReceptor,
    Monocyte,
    Macrophage,
    BCell,
    Leukocyte,
    Progenitor,
}

impl CellClass {
    pub const ALL: [CellClass; 14] = [
        CellClass::Goblet,
        CellClass::Enteroendocrine,
        CellClass::Enterocyte,
        CellClass::Fibroblast,
        CellClass::StromalUndetermined,
        CellClass::Myeloid,
        CellClass::HelperT,
        CellClass::CytotoxicT,
        CellClass::TCellReceptor,
        CellClass::Monocyte,
        CellClass::Macrophage,
        CellClass::BCell,
        CellClass::Leukocyte,
        CellClass::Progenitor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CellClass::Goblet => "goblet",
            CellClass::Enteroendocrine => "enteroendocrine",
            CellClass::Enterocyte => "enterocyte",
            CellClass::Fibroblast => "fibroblast",
            CellClass::StromalUndetermined => "stromal_undetermined",
            CellClass::Myeloid => "myeloid",
            CellClass::HelperT => "helper_t",
            CellClass::CytotoxicT => "cytotoxic_t",
            CellClass::TCellReceptor => "t_cell_receptor",
            CellClass::Monocyte => "monocyte",
            CellClass::Macrophage => "macrophage",
            CellClass::BCell => "b_cell",
            CellClass::Leukocyte => "leukocyte",
            CellClass::Progenitor => "progenitor",
        }
    }

    /// Position in [`CellClass::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        CellClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown class {s:?}"))
    }
}

/// Final cascade outcome for one instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Class(CellClass),
    Excluded,
    Unlabeled,
}

impl Outcome {
    /// All 16 outcomes: the classes in canonical order, then the sentinels.
    pub fn all() -> impl Iterator<Item = Outcome> {
        CellClass::ALL
            .into_iter()
            .map(Outcome::Class)
            .chain([Outcome::Excluded, Outcome::Unlabeled])
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Class(c) => c.as_str(),
            Outcome::Excluded => "excluded",
            Outcome::Unlabeled => "unlabeled",
        }
    }

    pub fn class(&self) -> Option<CellClass> {
        match self {
            Outcome::Class(c) => Some(*c),
            _ => None,
        }
    }

    /// 0..14 for classes, 14 for excluded, 15 for unlabeled.
    pub fn index(&self) -> usize {
        match self {
            Outcome::Class(c) => c.index(),
            Outcome::Excluded => 14,
            Outcome::Unlabeled => 15,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "excluded" => Ok(Outcome::Excluded),
            "unlabeled" => Ok(Outcome::Unlabeled),
            other => other.parse().map(Outcome::Class),
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourteen_classes_round_trip_by_name() {
        assert_eq!(CellClass::ALL.len(), 14);
        for (i, c) in CellClass::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.as_str().parse::<CellClass>().unwrap(), *c);
        }
        assert_eq!(Outcome::all().count(), 16);
        assert!("wizard".parse::<CellClass>().is_err());
        assert_eq!("excluded".parse::<Outcome>().unwrap(), Outcome::Excluded);
    }
}
