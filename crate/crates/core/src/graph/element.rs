use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The fifteen detected element categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ElementType {
    Label = 0,
    Button,
    Dropdown,
    Table,
    MenuItem,
    RadioButton,
    Icon,
    Links,
    CheckBox,
    OptionsButton,
    WindowName,
    IconButton,
    TextBox,
    DatePicker,
    Window,
}

pub const NUM_ELEMENT_TYPES: usize = 15;

impl ElementType {
    pub const ALL: [ElementType; NUM_ELEMENT_TYPES] = [
        ElementType::Label,
        ElementType::Button,
        ElementType::Dropdown,
        ElementType::Table,
        ElementType::MenuItem,
        ElementType::RadioButton,
        ElementType::Icon,
        ElementType::Links,
        ElementType::CheckBox,
        ElementType::OptionsButton,
        ElementType::WindowName,
        ElementType::IconButton,
        ElementType::TextBox,
        ElementType::DatePicker,
        ElementType::Window,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ElementType::Label => "Label",
            ElementType::Button => "Button",
            ElementType::Dropdown => "Dropdown",
            ElementType::Table => "Table",
            ElementType::MenuItem => "MenuItem",
            ElementType::RadioButton => "RadioButton",
            ElementType::Icon => "Icon",
            ElementType::Links => "Links",
            ElementType::CheckBox => "CheckBox",
            ElementType::OptionsButton => "OptionsButton",
            ElementType::WindowName => "WindowName",
            ElementType::IconButton => "IconButton",
            ElementType::TextBox => "TextBox",
            ElementType::DatePicker => "DatePicker",
            ElementType::Window => "Window",
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ElementType> {
        Self::ALL.get(i).copied()
    }

    /// Actionable elements; everything else is informational.
    pub fn is_interactive(self) -> bool {
        matches!(
            self,
            ElementType::Button
                | ElementType::Dropdown
                | ElementType::MenuItem
                | ElementType::RadioButton
                | ElementType::Links
                | ElementType::CheckBox
                | ElementType::OptionsButton
                | ElementType::IconButton
                | ElementType::TextBox
                | ElementType::DatePicker
        )
    }

    /// Types whose node text comes from extracted screen text when present.
    pub fn carries_text(self) -> bool {
        matches!(
            self,
            ElementType::Label | ElementType::TextBox | ElementType::WindowName | ElementType::Window
        )
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
    }
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, ' ' | '_' | '-'))
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown element type `{0}`")]
pub struct UnknownElementType(pub String);

impl FromStr for ElementType {
    type Err = UnknownElementType;

    /// Case-insensitive; spaces, underscores and hyphens are ignored, so
    /// `textbox`, `Text Box` and `text_box` all parse.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize(s);
        Self::ALL
            .iter()
            .copied()
            .find(|t| normalize(t.name()) == key)
            .ok_or_else(|| UnknownElementType(s.to_string()))
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ElementType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ElementType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
