use serde::{Deserialize, Serialize};

/// Element class names, indexed by label value.
pub const ELEMENT_CLASSES: [&str; 7] = [
    "Background",
    "Bearing",
    "Bracing",
    "Deck",
    "Floor beam",
    "Girder",
    "Substructure",
];

/// Short forms used in compact tables.
pub const ELEMENT_ABBREVIATIONS: [&str; 7] = ["Bg", "Brg", "Brc", "Dck", "Flb", "Grd", "Sbt"];

pub const DEFECT_CLASSES: [&str; 2] = ["No corrosion", "Corrosion"];

pub const NUM_ELEMENT_CLASSES: usize = ELEMENT_CLASSES.len();
pub const NUM_DEFECT_CLASSES: usize = DEFECT_CLASSES.len();
pub const NUM_MERGED_CLASSES: usize = NUM_ELEMENT_CLASSES * NUM_DEFECT_CLASSES;

pub const BACKGROUND: u8 = 0;
pub const NO_CORROSION: u8 = 0;
pub const CORROSION: u8 = 1;

/// Label taxonomies for the two tasks and their product.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub element_classes: Vec<String>,
    pub defect_classes: Vec<String>,
    pub merged_classes: Vec<String>,
}

impl Default for ClassCatalog {
    fn default() -> Self {
        let element_classes: Vec<String> = ELEMENT_CLASSES.iter().map(|s| s.to_string()).collect();
        let defect_classes: Vec<String> = DEFECT_CLASSES.iter().map(|s| s.to_string()).collect();
        // merged index = element + 7 · defect
        let merged_classes = defect_classes
            .iter()
            .flat_map(|d| element_classes.iter().map(move |e| format!("{e} / {d}")))
            .collect();
        Self {
            element_classes,
            defect_classes,
            merged_classes,
        }
    }
}

impl ClassCatalog {
    pub fn num_element(&self) -> usize {
        self.element_classes.len()
    }

    pub fn num_defect(&self) -> usize {
        self.defect_classes.len()
    }

    pub fn num_merged(&self) -> usize {
        self.merged_classes.len()
    }
}
