use crate::error::{Error, Result};

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// Class names plus a partition of the classes into named categories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Taxonomy {
    class_names: Vec<String>,
    categories: Vec<String>,
    category_of: Vec<usize>,
}

impl Taxonomy {
    /// CIFAR-10 split into `vehicles` and `animals`.
    pub fn cifar10() -> Self {
        let category_of = vec![0, 0, 1, 1, 1, 1, 1, 1, 0, 0];
        Self::new(
            CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect(),
            vec!["vehicles".into(), "animals".into()],
            category_of,
        )
        .expect("built-in taxonomy is valid")
    }

    /// `category_of[class]` indexes into `categories`. Every category must own
    /// at least one class.
    pub fn new(
        class_names: Vec<String>,
        categories: Vec<String>,
        category_of: Vec<usize>,
    ) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Argument("taxonomy needs at least one class".into()));
        }
        if class_names.len() != category_of.len() {
            return Err(Error::Argument(format!(
                "{} class names but {} category assignments",
                class_names.len(),
                category_of.len()
            )));
        }
        for (c, name) in categories.iter().enumerate() {
            if categories[..c].contains(name) {
                return Err(Error::Argument(format!("duplicate category `{name}`")));
            }
            if !category_of.contains(&c) {
                return Err(Error::Argument(format!("category `{name}` has no classes")));
            }
        }
        if let Some(bad) = category_of.iter().find(|&&c| c >= categories.len()) {
            return Err(Error::Argument(format!(
                "category index {bad} out of range"
            )));
        }
        Ok(Self {
            class_names,
            categories,
            category_of,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Category index of `class`.
    pub fn category_of(&self, class: usize) -> usize {
        self.category_of[class]
    }

    pub fn category_name_of(&self, class: usize) -> &str {
        &self.categories[self.category_of[class]]
    }

    pub fn category_assignments(&self) -> &[usize] {
        &self.category_of
    }

    pub fn category_index(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCategory {
                name: name.to_string(),
                valid: self.categories.clone(),
            })
    }

    /// Classes belonging to category `category`, ascending.
    pub fn classes_in(&self, category: usize) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&k| self.category_of[k] == category)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_partition() {
        let t = Taxonomy::cifar10();
        assert_eq!(t.class_names()[6], "frog");
        assert_eq!(
            t.classes_in(t.category_index("vehicles").unwrap()),
            vec![0, 1, 8, 9]
        );
        assert_eq!(
            t.classes_in(t.category_index("animals").unwrap()),
            vec![2, 3, 4, 5, 6, 7]
        );
    }

    #[test]
    fn categories_partition_the_classes() {
        let t = Taxonomy::cifar10();
        let mut all: Vec<usize> = (0..t.categories().len())
            .flat_map(|c| t.classes_in(c))
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_category_lists_valid_names() {
        let err = Taxonomy::cifar10().category_index("plants").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("plants") && msg.contains("vehicles, animals"),
            "{msg}"
        );
    }

    #[test]
    fn rejects_empty_category() {
        let r = Taxonomy::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![0, 0],
        );
        assert!(r.is_err());
    }
}
