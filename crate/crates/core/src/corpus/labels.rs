//! Section and report-level field label sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// A closed, ordered label set with a stable integer encoding.
pub trait ClassLabel: Copy + Eq + fmt::Debug + 'static {
    fn all() -> &'static [Self];
    fn name(self) -> &'static str;

    fn index(self) -> usize {
        Self::all()
            .iter()
            .position(|l| *l == self)
            .expect("label is a member of its own set")
    }

    fn from_index(i: usize) -> Option<Self> {
        Self::all().get(i).copied()
    }

    fn parse_name(s: &str) -> Option<Self> {
        Self::all().iter().copied().find(|l| l.name() == s)
    }

    fn names() -> Vec<&'static str> {
        Self::all().iter().map(|l| l.name()).collect()
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl ClassLabel for $name {
            fn all() -> &'static [Self] {
                &[$($name::$variant),+]
            }

            fn name(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant)),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                <$name as ClassLabel>::parse_name(s).ok_or_else(|| {
                    Error::InvalidInput(format!(concat!("unknown ", stringify!($name), " `{}`"), s))
                })
            }
        }
    };
}

label_enum!(
    /// BI-RADS report section. Integer encoding follows declaration order (0..=6).
    SectionLabel {
        Title,
        HistoryClinicalIndication,
        PriorImaging,
        TechniqueProcedure,
        FindingsProcedureNotes,
        ImpressionOpinion,
        AssessmentCategory,
    }
);

impl SectionLabel {
    pub const COUNT: usize = 7;
}

label_enum!(PreviousCancer { Yes, No, Suspicious });
label_enum!(Purpose { Diagnostic, Screening, NotStated });
label_enum!(Menopausal { Pre, Post, NotStated });
label_enum!(Density {
    Fatty,
    Scattered,
    HeterogeneouslyDense,
    LEQ75Percent,
    Dense,
    NotStated,
});
label_enum!(Bpe {
    Minimal,
    Mild,
    Moderate,
    Marked,
    NotStated,
});

/// A single imaging modality or procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModalityKind {
    Biopsy,
    MG,
    MRI,
    US,
}

impl ModalityKind {
    /// Lexicographic by name, which is also the canonical join order.
    pub const ALL: [ModalityKind; 4] = [
        ModalityKind::Biopsy,
        ModalityKind::MG,
        ModalityKind::MRI,
        ModalityKind::US,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModalityKind::Biopsy => "Biopsy",
            ModalityKind::MG => "MG",
            ModalityKind::MRI => "MRI",
            ModalityKind::US => "US",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// A set of one to three modalities, displayed as a sorted `+`-join.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Modality(u8);

const MODALITY_TABLE: [Modality; 14] = build_modality_table();

const fn build_modality_table() -> [Modality; 14] {
    // Ordered by member count, then by canonical name.
    let masks: [u8; 14] = [
        0b0001, // Biopsy
        0b0010, // MG
        0b0100, // MRI
        0b1000, // US
        0b0011, // Biopsy+MG
        0b0101, // Biopsy+MRI
        0b1001, // Biopsy+US
        0b0110, // MG+MRI
        0b1010, // MG+US
        0b1100, // MRI+US
        0b0111, // Biopsy+MG+MRI
        0b1011, // Biopsy+MG+US
        0b1101, // Biopsy+MRI+US
        0b1110, // MG+MRI+US
    ];
    let mut out = [Modality(0); 14];
    let mut i = 0;
    while i < 14 {
        out[i] = Modality(masks[i]);
        i += 1;
    }
    out
}

const MODALITY_NAMES: [&str; 14] = [
    "Biopsy",
    "MG",
    "MRI",
    "US",
    "Biopsy+MG",
    "Biopsy+MRI",
    "Biopsy+US",
    "MG+MRI",
    "MG+US",
    "MRI+US",
    "Biopsy+MG+MRI",
    "Biopsy+MG+US",
    "Biopsy+MRI+US",
    "MG+MRI+US",
];

impl Modality {
    pub fn from_kinds(kinds: &[ModalityKind]) -> Result<Self, Error> {
        let mask = kinds.iter().fold(0u8, |m, k| m | k.bit());
        let n = mask.count_ones();
        if n == 0 || n > 3 {
            return Err(Error::InvalidInput(format!(
                "modality must combine 1 to 3 distinct kinds, got {n}"
            )));
        }
        Ok(Modality(mask))
    }

    pub fn single(kind: ModalityKind) -> Self {
        Modality(kind.bit())
    }

    pub fn kinds(self) -> Vec<ModalityKind> {
        ModalityKind::ALL
            .iter()
            .copied()
            .filter(|k| self.0 & k.bit() != 0)
            .collect()
    }

    pub fn contains(self, kind: ModalityKind) -> bool {
        self.0 & kind.bit() != 0
    }
}

impl ClassLabel for Modality {
    fn all() -> &'static [Self] {
        &MODALITY_TABLE
    }

    fn name(self) -> &'static str {
        MODALITY_NAMES[self.index()]
    }

    fn index(self) -> usize {
        MODALITY_TABLE
            .iter()
            .position(|m| *m == self)
            .expect("modality masks are always table members")
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let kinds = s
            .split('+')
            .map(|part| {
                ModalityKind::ALL
                    .iter()
                    .copied()
                    .find(|k| k.name() == part.trim())
                    .ok_or_else(|| Error::InvalidInput(format!("unknown modality `{part}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if kinds.len() != kinds.iter().collect::<std::collections::BTreeSet<_>>().len() {
            return Err(Error::InvalidInput(format!("repeated modality in `{s}`")));
        }
        Modality::from_kinds(&kinds)
    }
}

impl Serialize for Modality {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Modality {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Report-level field annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldLabels {
    pub modality: Modality,
    pub previous_cancer: PreviousCancer,
    pub purpose: Purpose,
    pub menopausal: Menopausal,
    pub density: Density,
    pub bpe: Bpe,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_encoding_is_stable() {
        assert_eq!(SectionLabel::all().len(), 7);
        assert_eq!(SectionLabel::Title.index(), 0);
        assert_eq!(SectionLabel::AssessmentCategory.index(), 6);
        assert_eq!(
            SectionLabel::from_index(4),
            Some(SectionLabel::FindingsProcedureNotes)
        );
    }

    #[test]
    fn composite_modality_is_order_normalized() {
        let a: Modality = "MRI+US".parse().unwrap();
        let b: Modality = "US+MRI".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_string(), "MRI+US");
        assert!("MG+MG".parse::<Modality>().is_err());
        assert!("Biopsy+MG+MRI+US".parse::<Modality>().is_err());
    }

    #[test]
    fn modality_table_names_match_masks() {
        for (i, m) in Modality::all().iter().enumerate() {
            let joined: Vec<_> = m.kinds().iter().map(|k| k.name()).collect();
            assert_eq!(joined.join("+"), MODALITY_NAMES[i]);
            assert_eq!(m.index(), i);
        }
    }

    #[test]
    fn field_labels_serialize_as_strings() {
        let f = FieldLabels {
            modality: "US+MG".parse().unwrap(),
            previous_cancer: PreviousCancer::Suspicious,
            purpose: Purpose::NotStated,
            menopausal: Menopausal::Post,
            density: Density::LEQ75Percent,
            bpe: Bpe::Mild,
        };
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(
            s,
            r#"{"modality":"MG+US","previous_cancer":"Suspicious","purpose":"NotStated","menopausal":"Post","density":"LEQ75Percent","bpe":"Mild"}"#
        );
        let back: FieldLabels = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }
}
