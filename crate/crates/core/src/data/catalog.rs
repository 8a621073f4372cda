//! Class catalogs and per-class prompt sets.

use std::collections::BTreeMap;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::DataError;

/// Ordered class-name list; the position of a name is its label id
/// everywhere in the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    classes: Vec<String>,
}

impl ClassCatalog {
    pub fn new(classes: Vec<String>) -> Result<Self, DataError> {
        if classes.is_empty() {
            return Err(DataError::InvariantViolation(
                "catalog must contain at least one class".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in &classes {
            if name.is_empty() {
                return Err(DataError::InvariantViolation(
                    "class names must be non-empty".into(),
                ));
            }
            if !seen.insert(name.as_str()) {
                return Err(DataError::InvariantViolation(format!(
                    "duplicate class name '{name}'"
                )));
            }
        }
        Ok(Self { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.classes
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }
}

/// Per-class motion descriptions: each class carries M candidate prompts,
/// of which m are sampled and each sampled prompt is rendered n times,
/// giving K = m * n support videos per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    descriptions: Vec<Vec<String>>,
    sampled: usize,
    repeats: usize,
}

impl PromptSet {
    pub fn new(
        descriptions: Vec<Vec<String>>,
        sampled: usize,
        repeats: usize,
    ) -> Result<Self, DataError> {
        if sampled == 0 || repeats == 0 {
            return Err(DataError::InvariantViolation(
                "prompt counts m and n must be at least 1".into(),
            ));
        }
        for (class, descs) in descriptions.iter().enumerate() {
            if descs.len() < sampled {
                return Err(DataError::InvariantViolation(format!(
                    "class {class} has {} descriptions, fewer than m={sampled}",
                    descs.len()
                )));
            }
            if descs.iter().any(String::is_empty) {
                return Err(DataError::InvariantViolation(format!(
                    "class {class} has an empty description"
                )));
            }
        }
        Ok(Self {
            descriptions,
            sampled,
            repeats,
        })
    }

    /// M: descriptions available per class (minimum over classes).
    pub fn available(&self) -> usize {
        self.descriptions.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// m: prompts sampled per class.
    pub fn sampled(&self) -> usize {
        self.sampled
    }

    /// n: videos generated per sampled prompt.
    pub fn repeats(&self) -> usize {
        self.repeats
    }

    /// K = m * n support videos per class.
    pub fn per_class(&self) -> usize {
        self.sampled * self.repeats
    }

    pub fn descriptions(&self) -> &[Vec<String>] {
        &self.descriptions
    }

    /// Parse the prompt-set file: `{"m": .., "n": .., "prompts": {class: [..]}}`,
    /// ordered by `catalog`.
    pub fn from_json(text: &str, catalog: &ClassCatalog) -> Result<Self, DataError> {
        #[derive(Deserialize)]
        struct PromptFile {
            m: usize,
            n: usize,
            prompts: BTreeMap<String, Vec<String>>,
        }
        let file: PromptFile =
            serde_json::from_str(text).map_err(|e| DataError::SchemaMismatch(e.to_string()))?;
        let mut descriptions = Vec::with_capacity(catalog.len());
        for name in catalog.names() {
            let descs = file.prompts.get(name).ok_or_else(|| {
                DataError::SchemaMismatch(format!("prompt file missing class '{name}'"))
            })?;
            descriptions.push(descs.clone());
        }
        Self::new(descriptions, file.m, file.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_rejects_duplicates_and_empties() {
        assert!(ClassCatalog::new(vec!["a".into(), "a".into()]).is_err());
        assert!(ClassCatalog::new(vec!["a".into(), String::new()]).is_err());
        assert!(ClassCatalog::new(vec![]).is_err());
    }

    #[test]
    fn prompt_set_validates_counts() {
        let descs = vec![vec!["one".to_string(), "two".to_string()]];
        assert!(PromptSet::new(descs.clone(), 3, 1).is_err());
        let ps = PromptSet::new(descs, 2, 4).unwrap();
        assert_eq!(ps.per_class(), 8);
    }

    #[test]
    fn prompt_file_parses_in_catalog_order() {
        let catalog = ClassCatalog::new(vec!["run".into(), "jump".into()]).unwrap();
        let text = r#"{"m":1,"n":2,"prompts":{"jump":["leaping high"],"run":["sprinting fast"]}}"#;
        let ps = PromptSet::from_json(text, &catalog).unwrap();
        assert_eq!(ps.descriptions()[0][0], "sprinting fast");
        assert_eq!(ps.descriptions()[1][0], "leaping high");
    }
}
