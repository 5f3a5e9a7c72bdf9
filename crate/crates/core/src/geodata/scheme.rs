use serde::{Deserialize, Serialize};

use super::{LabelMask, UNLABELED};
use crate::error::{Error, Result};

/// How the four damage grades are grouped into training/evaluation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassScheme {
    FourClass,
    /// Severe and destroyed merged.
    ThreeClass,
    /// Everything except no-damage merged.
    TwoClass,
}

impl ClassScheme {
    pub fn from_num_classes(n: usize) -> Result<Self> {
        match n {
            4 => Ok(ClassScheme::FourClass),
            3 => Ok(ClassScheme::ThreeClass),
            2 => Ok(ClassScheme::TwoClass),
            _ => Err(Error::InvalidArgument(format!(
                "class count must be 2, 3 or 4, got {n}"
            ))),
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            ClassScheme::FourClass => 4,
            ClassScheme::ThreeClass => 3,
            ClassScheme::TwoClass => 2,
        }
    }

    /// Maps a four-class damage code; unlabeled passes through.
    #[inline]
    pub fn map_code(self, code: u8) -> u8 {
        match (self, code) {
            (_, UNLABELED) => UNLABELED,
            (ClassScheme::FourClass, c) => c,
            (ClassScheme::ThreeClass, c) => c.min(2),
            (ClassScheme::TwoClass, c) => c.min(1),
        }
    }

    /// Maps a class index of `self` onto the coarser `target` scheme.
    /// `None` when `target` is finer than `self`.
    pub fn coarsen(self, class: u8, target: ClassScheme) -> Option<u8> {
        if class == UNLABELED {
            return Some(UNLABELED);
        }
        if target.num_classes() > self.num_classes() {
            return None;
        }
        // Every class of a scheme is the image of its own index under the
        // four-class map, so coarsening goes through the four-class code.
        Some(target.map_code(class))
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            ClassScheme::FourClass => &["No Damage", "Moderate Damage", "Severe Damage", "Destroyed"],
            ClassScheme::ThreeClass => &["No Damage", "Moderate Damage", "Severe + Destroyed"],
            ClassScheme::TwoClass => &["No Damage", "Damage"],
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "4" | "four" | "fourclass" => Ok(ClassScheme::FourClass),
            "3" | "three" | "threeclass" => Ok(ClassScheme::ThreeClass),
            "2" | "two" | "twoclass" => Ok(ClassScheme::TwoClass),
            other => Err(Error::InvalidArgument(format!("unknown class scheme {other:?}"))),
        }
    }
}

/// Regroups mask codes according to `scheme`.
pub fn merge_classes(mask: &LabelMask, scheme: ClassScheme) -> LabelMask {
    let data = mask.as_slice().iter().map(|&v| scheme.map_code(v)).collect();
    LabelMask::from_raw(mask.width(), mask.height(), data).expect("merged codes stay valid")
}
