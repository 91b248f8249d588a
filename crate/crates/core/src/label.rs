//! Return-type class labels and the two target schemes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::LabelError;

/// High-level C return type. Variant order is the canonical (alphabetical)
/// class order used for matrix axes and tie-breaking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TypeLabel {
    Bool,
    Char,
    Double,
    Float,
    Int,
    LongLong,
    Pointer,
    Short,
    Struct,
    Void,
}

impl TypeLabel {
    pub const ALL: [TypeLabel; 10] = [
        TypeLabel::Bool,
        TypeLabel::Char,
        TypeLabel::Double,
        TypeLabel::Float,
        TypeLabel::Int,
        TypeLabel::LongLong,
        TypeLabel::Pointer,
        TypeLabel::Short,
        TypeLabel::Struct,
        TypeLabel::Void,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TypeLabel::Bool => "bool",
            TypeLabel::Char => "char",
            TypeLabel::Double => "double",
            TypeLabel::Float => "float",
            TypeLabel::Int => "int",
            TypeLabel::LongLong => "long_long",
            TypeLabel::Pointer => "pointer",
            TypeLabel::Short => "short",
            TypeLabel::Struct => "struct",
            TypeLabel::Void => "void",
        }
    }

    /// Position in the canonical class order.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Size/representation group of this type.
    pub fn size_rep(self) -> SizeRepLabel {
        match self {
            TypeLabel::Bool | TypeLabel::Char => SizeRepLabel::Int1,
            TypeLabel::Short => SizeRepLabel::Int2,
            TypeLabel::Int | TypeLabel::Pointer | TypeLabel::Struct => SizeRepLabel::Int4,
            TypeLabel::LongLong => SizeRepLabel::Int8,
            TypeLabel::Float => SizeRepLabel::Real4,
            TypeLabel::Double => SizeRepLabel::Real8,
            TypeLabel::Void => SizeRepLabel::Void,
        }
    }
}

/// Total mapping from the high-level scheme onto size/representation groups.
pub fn map_to_sizerep(label: TypeLabel) -> SizeRepLabel {
    label.size_rep()
}

impl fmt::Display for TypeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TypeLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TypeLabel::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| LabelError(s.to_string()))
    }
}

/// Types grouped by binary width and integer/real representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeRepLabel {
    Int1,
    Int2,
    Int4,
    Int8,
    Real4,
    Real8,
    Void,
}

impl SizeRepLabel {
    pub const ALL: [SizeRepLabel; 7] = [
        SizeRepLabel::Int1,
        SizeRepLabel::Int2,
        SizeRepLabel::Int4,
        SizeRepLabel::Int8,
        SizeRepLabel::Real4,
        SizeRepLabel::Real8,
        SizeRepLabel::Void,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SizeRepLabel::Int1 => "INT_1",
            SizeRepLabel::Int2 => "INT_2",
            SizeRepLabel::Int4 => "INT_4",
            SizeRepLabel::Int8 => "INT_8",
            SizeRepLabel::Real4 => "REAL_4",
            SizeRepLabel::Real8 => "REAL_8",
            SizeRepLabel::Void => "VOID",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SizeRepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SizeRepLabel {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SizeRepLabel::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| LabelError(s.to_string()))
    }
}

/// Which target variable a dataset carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    HighLevel,
    SizeRep,
}

const HIGH_LEVEL_NAMES: [&str; 10] = [
    "bool",
    "char",
    "double",
    "float",
    "int",
    "long_long",
    "pointer",
    "short",
    "struct",
    "void",
];
const SIZE_REP_NAMES: [&str; 7] = ["INT_1", "INT_2", "INT_4", "INT_8", "REAL_4", "REAL_8", "VOID"];

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::HighLevel => "high_level",
            Scheme::SizeRep => "size_rep",
        }
    }

    /// Class names in canonical order.
    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Scheme::HighLevel => &HIGH_LEVEL_NAMES,
            Scheme::SizeRep => &SIZE_REP_NAMES,
        }
    }

    pub fn n_classes(self) -> usize {
        self.class_names().len()
    }

    /// Class index of a ground-truth type under this scheme.
    pub fn class_of(self, label: TypeLabel) -> usize {
        match self {
            Scheme::HighLevel => label.index(),
            Scheme::SizeRep => label.size_rep().index(),
        }
    }

    pub fn class_index(self, name: &str) -> Option<usize> {
        self.class_names().iter().position(|n| *n == name)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "high_level" => Ok(Scheme::HighLevel),
            "size_rep" => Ok(Scheme::SizeRep),
            other => Err(LabelError(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_alphabetical() {
        let names: Vec<_> = TypeLabel::ALL.iter().map(|t| t.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(names, Scheme::HighLevel.class_names());
    }

    #[test]
    fn size_rep_grouping() {
        assert_eq!(map_to_sizerep(TypeLabel::Pointer), SizeRepLabel::Int4);
        assert_eq!(map_to_sizerep(TypeLabel::Struct), SizeRepLabel::Int4);
        assert_eq!(map_to_sizerep(TypeLabel::Int), SizeRepLabel::Int4);
        assert_eq!(map_to_sizerep(TypeLabel::Double), SizeRepLabel::Real8);
        assert_eq!(map_to_sizerep(TypeLabel::Float), SizeRepLabel::Real4);
        assert_eq!(map_to_sizerep(TypeLabel::Void), SizeRepLabel::Void);
        assert_eq!(map_to_sizerep(TypeLabel::Bool), SizeRepLabel::Int1);
        assert_eq!(map_to_sizerep(TypeLabel::Char), SizeRepLabel::Int1);
        assert_eq!(map_to_sizerep(TypeLabel::Short), SizeRepLabel::Int2);
        assert_eq!(map_to_sizerep(TypeLabel::LongLong), SizeRepLabel::Int8);
    }

    #[test]
    fn names_round_trip() {
        for t in TypeLabel::ALL {
            assert_eq!(t.name().parse::<TypeLabel>().unwrap(), t);
        }
        for t in SizeRepLabel::ALL {
            assert_eq!(t.name().parse::<SizeRepLabel>().unwrap(), t);
        }
        assert!("array".parse::<TypeLabel>().is_err());
    }
}
