// SPDX-License-Identifier: MIT OR Apache-2.0

//! The seven analysed functionalities and the raw dataset labels that map
//! onto each of them.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_FUNCTIONALITIES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functionality {
    Coding,
    Math,
    Linguistic,
    Knowledge,
    Translation,
    EthicsMoral,
    Writing,
}

impl Functionality {
    pub const ALL: [Functionality; N_FUNCTIONALITIES] = [
        Functionality::Coding,
        Functionality::Math,
        Functionality::Linguistic,
        Functionality::Knowledge,
        Functionality::Translation,
        Functionality::EthicsMoral,
        Functionality::Writing,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Functionality::Coding => "coding",
            Functionality::Math => "math",
            Functionality::Linguistic => "linguistic",
            Functionality::Knowledge => "knowledge",
            Functionality::Translation => "translation",
            Functionality::EthicsMoral => "ethics_moral",
            Functionality::Writing => "writing",
        }
    }
}

impl fmt::Display for Functionality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Functionality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Self::ALL
            .into_iter()
            .find(|f| f.name() == key || (key == "ethics" && *f == Functionality::EthicsMoral))
            .ok_or_else(|| Error::Input(format!("unknown functionality `{s}`")))
    }
}

const CODING: &[&str] = &[
    "Python Programming",
    "SQL Programming",
    "Java Programming",
    "C++ Programming",
    "Javascript Programming",
    "C# Programming",
    "Object-oriented Programming",
    "Code Comments",
    "Code Writing",
];
const MATH: &[&str] = &[
    "Mathematical Reasoning",
    "Mathematical Modeling",
    "Basic Mathematics",
    "Mathematical Analysis",
    "Mathematical Applications",
    "Mathematical Proof",
    "Mathematical Explanation",
    "Mathematical Concept Explanation",
    "Solving Complex Mathematical Problems",
    "Basic Mathematics Calculations",
];
const LINGUISTIC: &[&str] = &[
    "Sentence Structure Analysis",
    "Syntactic Understanding",
    "Linguistic Knowledge",
    "Syntactic Generation",
    "Syntactic Analysis",
];
const KNOWLEDGE: &[&str] = &[
    "Health Knowledge",
    "Geographic Knowledge",
    "General Knowledge about Science",
    "Legal Knowledge",
    "Physics Knowledge",
    "Chemistry Knowledge",
    "Literary Knowledge",
    "Sociology Knowledge",
    "Popular Science Knowledge",
    "Biology Knowledge",
    "Astronomy Knowledge",
    "Psychological Knowledge",
    "Economic Knowledge",
    "Clinical Medical Knowledge",
    "Environmental Knowledge",
    "Religious Studies Knowledge",
    "Geometry Knowledge",
];
const TRANSLATION: &[&str] = &[
    "Multilingual Translation",
    "Translation Ability",
    "Chinese English Translation",
    "Machine Translation",
    "French Translation",
];
const ETHICS_MORAL: &[&str] = &[
    "Ethical Judgment",
    "Ethical Reasoning",
    "Ethical Analysis",
    "Ethical and Moral Reasoning",
    "Ethical Thinking",
    "Ethical Guidance",
    "Unethical Behavior Simulation",
    "Unethical Behavior",
    "Ethics and Morality",
    "Moral Standards",
];
const WRITING: &[&str] = &[
    "Scriptwriting",
    "Creative Writing",
    "Narrative Writing",
    "Technical Writing",
    "Writing Guidance",
    "News Writing",
    "Script Writing",
    "Creativity Writing",
    "Product Description Writing",
    "Screenwriting Ability",
];

/// Raw-label → functionality lookup. Matching trims whitespace and folds
/// case; labels not in the map are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionalityTaxonomy {
    version: String,
    label_map: HashMap<String, Functionality>,
}

impl FunctionalityTaxonomy {
    pub const STANDARD_VERSION: &'static str = "infinity-instruct-7way-v1";

    /// The seven-way mapping over Infinity-Instruct ability labels.
    pub fn standard() -> Self {
        let mut t = Self {
            version: Self::STANDARD_VERSION.to_string(),
            label_map: HashMap::new(),
        };
        for (f, labels) in Functionality::ALL.into_iter().zip([
            CODING,
            MATH,
            LINGUISTIC,
            KNOWLEDGE,
            TRANSLATION,
            ETHICS_MORAL,
            WRITING,
        ]) {
            for l in labels {
                t.label_map.insert(fold(l), f);
            }
        }
        t
    }

    /// Adds or remaps a raw label; changes the version tag.
    pub fn with_label(mut self, raw: &str, f: Functionality) -> Self {
        self.label_map.insert(fold(raw), f);
        if !self.version.ends_with("+custom") {
            self.version.push_str("+custom");
        }
        self
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn lookup(&self, raw: &str) -> Option<Functionality> {
        self.label_map.get(&fold(raw)).copied()
    }

    /// Raw labels for one functionality, sorted.
    pub fn labels_for(&self, f: Functionality) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .label_map
            .iter()
            .filter(|(_, g)| **g == f)
            .map(|(k, _)| k.as_str())
            .collect();
        v.sort_unstable();
        v
    }

    /// A canonical raw label for `f` as spelled in the standard table.
    pub fn canonical_label(f: Functionality) -> &'static str {
        [CODING, MATH, LINGUISTIC, KNOWLEDGE, TRANSLATION, ETHICS_MORAL, WRITING][f.index()][0]
    }
}

impl Default for FunctionalityTaxonomy {
    fn default() -> Self {
        Self::standard()
    }
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Bit `f.index()` is set when the instance requires functionality `f`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSet(u8);

impl LabelSet {
    pub const MASK: u8 = (1 << N_FUNCTIONALITIES) - 1;

    pub fn single(f: Functionality) -> Self {
        Self(1 << f.index())
    }

    /// Rejects bits outside the seven functionalities.
    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::MASK == 0).then_some(Self(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, f: Functionality) {
        self.0 |= 1 << f.index();
    }

    pub fn contains(self, f: Functionality) -> bool {
        self.0 & (1 << f.index()) != 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    /// The functionality when exactly one bit is set.
    pub fn exclusive(self) -> Option<Functionality> {
        (self.count() == 1).then(|| Functionality::ALL[self.0.trailing_zeros() as usize])
    }

    pub fn iter(self) -> impl Iterator<Item = Functionality> {
        Functionality::ALL.into_iter().filter(move |f| self.contains(*f))
    }
}
