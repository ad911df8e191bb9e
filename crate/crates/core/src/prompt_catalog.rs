//! Prompt template, base/attribute prompt pairs and VQA questions.

use crate::body_model::Gender;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub const DEFAULT_TEMPLATE: &str =
    "Photo, {ethnicity} {age} {gender} wearing {clothing} in {location} at {lighting} {weather}";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("unknown placeholder {{{0}}} in template")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder in template at byte {0}")]
    Unterminated(usize),
    #[error("slot {0} is empty")]
    EmptySlot(Slot),
    #[error("base slot {slot} is {actual:?} but the attribute expects {expected:?}")]
    BaseMismatch {
        slot: Slot,
        expected: String,
        actual: String,
    },
    #[error("unknown slot {0:?}")]
    UnknownSlot(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("category {0} has no attributes")]
    EmptyCategory(String),
    #[error("attribute {id}: {reason}")]
    BadAttribute { id: String, reason: String },
    #[error("catalog config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Ethnicity,
    Age,
    Gender,
    Clothing,
    Location,
    Lighting,
    Weather,
}

impl Slot {
    pub const ALL: [Slot; 7] = [
        Slot::Ethnicity,
        Slot::Age,
        Slot::Gender,
        Slot::Clothing,
        Slot::Location,
        Slot::Lighting,
        Slot::Weather,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Ethnicity => "ethnicity",
            Slot::Age => "age",
            Slot::Gender => "gender",
            Slot::Clothing => "clothing",
            Slot::Location => "location",
            Slot::Lighting => "lighting",
            Slot::Weather => "weather",
        }
    }

    /// Yes/no question asked about an image generated with this slot value.
    pub fn question(self, value: &str) -> String {
        match self {
            Slot::Ethnicity | Slot::Age | Slot::Gender => format!("Is the person {value}?"),
            Slot::Clothing => format!("Is the person wearing {value}?"),
            Slot::Location => format!("Is the person in {value}?"),
            Slot::Lighting => format!("Is it {value} in the image?"),
            Slot::Weather => format!("Is it {value} weather in the image?"),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Slot {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Slot::ALL
            .into_iter()
            .find(|slot| slot.name() == s)
            .ok_or_else(|| PromptError::UnknownSlot(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSlots {
    pub ethnicity: String,
    pub age: String,
    pub gender: String,
    pub clothing: String,
    pub location: String,
    pub lighting: String,
    pub weather: String,
}

impl PromptSlots {
    pub fn canonical() -> Self {
        Self {
            ethnicity: "caucasian".into(),
            age: "young".into(),
            gender: "male".into(),
            clothing: "a t-shirt".into(),
            location: "the city center".into(),
            lighting: "daytime".into(),
            weather: "sunny day".into(),
        }
    }

    pub fn get(&self, slot: Slot) -> &str {
        match slot {
            Slot::Ethnicity => &self.ethnicity,
            Slot::Age => &self.age,
            Slot::Gender => &self.gender,
            Slot::Clothing => &self.clothing,
            Slot::Location => &self.location,
            Slot::Lighting => &self.lighting,
            Slot::Weather => &self.weather,
        }
    }

    pub fn set(&mut self, slot: Slot, value: impl Into<String>) {
        let v = value.into();
        match slot {
            Slot::Ethnicity => self.ethnicity = v,
            Slot::Age => self.age = v,
            Slot::Gender => self.gender = v,
            Slot::Clothing => self.clothing = v,
            Slot::Location => self.location = v,
            Slot::Lighting => self.lighting = v,
            Slot::Weather => self.weather = v,
        }
    }

    pub fn with(&self, slot: Slot, value: impl Into<String>) -> Self {
        let mut s = self.clone();
        s.set(slot, value);
        s
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for slot in Slot::ALL {
            if self.get(slot).trim().is_empty() {
                return Err(PromptError::EmptySlot(slot));
            }
        }
        Ok(())
    }
}

/// Substitutes `{slot}` placeholders in one pass; substituted text is never
/// re-scanned. Whitespace runs collapse to one space.
pub fn render_prompt(slots: &PromptSlots, template: &str) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or(PromptError::Unterminated(offset + open))?;
        let name = &after[..close];
        let slot: Slot = name
            .parse()
            .map_err(|_| PromptError::UnknownPlaceholder(name.to_string()))?;
        out.push_str(slots.get(slot));
        offset += open + close + 2;
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out.split_whitespace().collect::<Vec<_>>().join(" "))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub attribute_id: String,
    pub category: String,
    pub slot: Slot,
    pub base_value: String,
    pub attribute_value: String,
    /// Base prompt slots for this attribute, category overrides applied.
    pub base_slots: PromptSlots,
    /// Whether the gender slot is filled from the pose label at generation time.
    pub gender_from_pose: bool,
}

impl AttributeSpec {
    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |reason: &str| PromptError::BadAttribute {
            id: self.attribute_id.clone(),
            reason: reason.into(),
        };
        if self.base_value == self.attribute_value {
            return Err(bad("attribute value equals base value"));
        }
        if self.attribute_value.trim().is_empty() {
            return Err(bad("empty attribute value"));
        }
        if self.base_slots.get(self.slot) != self.base_value {
            return Err(bad("base slots disagree with base value"));
        }
        if self.gender_from_pose && self.slot == Slot::Gender {
            return Err(bad("gender attribute cannot take gender from the pose"));
        }
        self.base_slots.validate()
    }

    /// Base slots for a pose with the given label.
    pub fn base_slots_for(&self, gender: Gender) -> PromptSlots {
        match gender {
            Gender::Male | Gender::Female if self.gender_from_pose => {
                self.base_slots.with(Slot::Gender, gender.as_str())
            }
            _ => self.base_slots.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub base_text: String,
    pub attribute_text: String,
    pub spec: AttributeSpec,
}

pub fn make_prompt_pair(
    base_slots: &PromptSlots,
    spec: &AttributeSpec,
    template: &str,
) -> Result<PromptPair, PromptError> {
    let actual = base_slots.get(spec.slot);
    if actual != spec.base_value {
        return Err(PromptError::BaseMismatch {
            slot: spec.slot,
            expected: spec.base_value.clone(),
            actual: actual.to_string(),
        });
    }
    base_slots.validate()?;
    let attribute_slots = base_slots.with(spec.slot, spec.attribute_value.clone());
    Ok(PromptPair {
        base_text: render_prompt(base_slots, template)?,
        attribute_text: render_prompt(&attribute_slots, template)?,
        spec: spec.clone(),
    })
}

pub fn vqa_questions_for(slots: &PromptSlots) -> Vec<(String, String)> {
    Slot::ALL
        .iter()
        .map(|s| (s.question(slots.get(*s)), "yes".to_string()))
        .collect()
}

// ---- configuration file ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeConfig {
    pub id: String,
    pub slot: Slot,
    pub value: String,
    /// Base slot overrides for this attribute only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub base: BTreeMap<Slot, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryConfig {
    pub name: String,
    /// Column header used in reports.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub base: BTreeMap<Slot, String>,
    #[serde(rename = "attribute", default)]
    pub attributes: Vec<AttributeConfig>,
}

impl CategoryConfig {
    pub fn display_label(&self) -> &str {
        if self.label.is_empty() {
            &self.name
        } else {
            &self.label
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogConfig {
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default)]
    pub negative_prompt: String,
    /// Fill the gender slot from the pose label unless a category or
    /// attribute pins it.
    #[serde(default)]
    pub gender_from_pose: bool,
    pub base: PromptSlots,
    #[serde(rename = "category", default)]
    pub categories: Vec<CategoryConfig>,
}

fn default_template() -> String {
    DEFAULT_TEMPLATE.to_string()
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

impl CatalogConfig {
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let c: CatalogConfig = toml::from_str(text).map_err(|e| PromptError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("catalog serializes")
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        render_prompt(&self.base, &self.template)?;
        self.base.validate()?;
        let mut names = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for cat in &self.categories {
            if !valid_id(&cat.name) || !names.insert(cat.name.as_str()) {
                return Err(PromptError::Config(format!(
                    "category name {:?} is invalid or repeated",
                    cat.name
                )));
            }
            for a in &cat.attributes {
                if !valid_id(&a.id) || !ids.insert(a.id.as_str()) {
                    return Err(PromptError::BadAttribute {
                        id: a.id.clone(),
                        reason: "id must be unique and use [a-z0-9_-]".into(),
                    });
                }
            }
            for spec in self.expand_category(&cat.name)? {
                spec.validate()?;
            }
        }
        Ok(())
    }

    pub fn category(&self, name: &str) -> Result<&CategoryConfig, PromptError> {
        self.categories
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| PromptError::UnknownCategory(name.to_string()))
    }

    pub fn expand_category(&self, name: &str) -> Result<Vec<AttributeSpec>, PromptError> {
        let cat = self.category(name)?;
        expand_category(&self.base, self.gender_from_pose, cat)
    }

    pub fn all_specs(&self) -> Result<Vec<AttributeSpec>, PromptError> {
        let mut out = Vec::new();
        for c in &self.categories {
            out.extend(self.expand_category(&c.name)?);
        }
        Ok(out)
    }

    /// The catalog reproducing the six categories of the published study.
    pub fn bundled() -> Self {
        Self::from_toml(BUNDLED_CATALOG).expect("bundled catalog is valid")
    }
}

pub fn expand_category(
    base: &PromptSlots,
    gender_from_pose: bool,
    category: &CategoryConfig,
) -> Result<Vec<AttributeSpec>, PromptError> {
    if category.attributes.is_empty() {
        return Err(PromptError::EmptyCategory(category.name.clone()));
    }
    let mut cat_base = base.clone();
    for (slot, v) in &category.base {
        cat_base.set(*slot, v.clone());
    }
    category
        .attributes
        .iter()
        .map(|a| {
            let mut slots = cat_base.clone();
            for (slot, v) in &a.base {
                slots.set(*slot, v.clone());
            }
            let pinned = category.base.contains_key(&Slot::Gender)
                || a.base.contains_key(&Slot::Gender)
                || a.slot == Slot::Gender;
            let spec = AttributeSpec {
                attribute_id: a.id.clone(),
                category: category.name.clone(),
                slot: a.slot,
                base_value: slots.get(a.slot).to_string(),
                attribute_value: a.value.clone(),
                base_slots: slots,
                gender_from_pose: gender_from_pose && !pinned,
            };
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

pub const BUNDLED_CATALOG: &str = include_str!("../../../configs/categories.toml");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_prompt() {
        assert_eq!(
            render_prompt(&PromptSlots::canonical(), DEFAULT_TEMPLATE).unwrap(),
            "Photo, caucasian young male wearing a t-shirt in the city center at daytime sunny day"
        );
    }

    #[test]
    fn literal_template_and_braces_in_values() {
        let s = PromptSlots::canonical();
        assert_eq!(render_prompt(&s, "just text").unwrap(), "just text");
        let odd = s.with(Slot::Clothing, "a {weather} shirt");
        assert_eq!(
            render_prompt(&odd, "wearing {clothing}").unwrap(),
            "wearing a {weather} shirt"
        );
        assert_eq!(
            render_prompt(&s, "{mood}"),
            Err(PromptError::UnknownPlaceholder("mood".into()))
        );
        assert!(matches!(render_prompt(&s, "a {age"), Err(PromptError::Unterminated(2))));
    }

    fn spec(slot: Slot, base: &str, att: &str) -> AttributeSpec {
        AttributeSpec {
            attribute_id: "x".into(),
            category: "c".into(),
            slot,
            base_value: base.into(),
            attribute_value: att.into(),
            base_slots: PromptSlots::canonical().with(slot, base),
            gender_from_pose: false,
        }
    }

    /// Tokens outside the changed slot are equal at both ends.
    fn differs_only_in(pair: &PromptPair, base_value: &str, att_value: &str) -> bool {
        let a: Vec<&str> = pair.base_text.split(' ').collect();
        let b: Vec<&str> = pair.attribute_text.split(' ').collect();
        let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
        let suffix = a
            .iter()
            .rev()
            .zip(b.iter().rev())
            .take_while(|(x, y)| x == y)
            .count();
        let mid_a = a[prefix.min(a.len())..a.len() - suffix.min(a.len() - prefix)].join(" ");
        let mid_b = b[prefix.min(b.len())..b.len() - suffix.min(b.len() - prefix)].join(" ");
        base_value.contains(&mid_a) && att_value.contains(&mid_b)
    }

    #[test]
    fn clothing_pair_differs_in_clothing_only() {
        let s = spec(Slot::Clothing, "a t-shirt", "a parka");
        let pair = make_prompt_pair(&s.base_slots, &s, DEFAULT_TEMPLATE).unwrap();
        assert_eq!(
            pair.attribute_text,
            "Photo, caucasian young male wearing a parka in the city center at daytime sunny day"
        );
        assert!(differs_only_in(&pair, "a t-shirt", "a parka"));
    }

    #[test]
    fn gender_pair_uses_male_base() {
        let catalog = CatalogConfig::bundled();
        let specs = catalog.expand_category("fairness").unwrap();
        let g = specs.iter().find(|s| s.slot == Slot::Gender).unwrap();
        assert_eq!(g.base_value, "male");
        assert_eq!(g.attribute_value, "female");
        assert!(!g.gender_from_pose);
        // Even for a female-labelled pose the base stays male.
        let slots = g.base_slots_for(Gender::Female);
        let pair = make_prompt_pair(&slots, g, &catalog.template).unwrap();
        assert!(pair.base_text.contains(" male "));
        assert!(pair.attribute_text.contains(" female "));
    }

    #[test]
    fn base_mismatch_is_error() {
        let s = spec(Slot::Clothing, "a t-shirt", "a parka");
        let slots = PromptSlots::canonical().with(Slot::Clothing, "a coat");
        assert!(matches!(
            make_prompt_pair(&slots, &s, DEFAULT_TEMPLATE),
            Err(PromptError::BaseMismatch { slot: Slot::Clothing, .. })
        ));
    }

    #[test]
    fn location_base_overrides() {
        let catalog = CatalogConfig::bundled();
        for s in catalog.expand_category("location_indoor").unwrap() {
            assert_eq!(s.base_slots.location, "a hallway");
            assert_eq!(s.base_value, "a hallway");
        }
        for s in catalog.expand_category("location_outdoor").unwrap() {
            assert_eq!(s.base_slots.location, "a village");
        }
        let shape: Vec<_> = catalog
            .expand_category("fairness")
            .unwrap()
            .into_iter()
            .filter(|s| s.attribute_value.contains("BMI"))
            .collect();
        assert_eq!(shape.len(), 2);
        for s in shape {
            assert_eq!(s.base_value, "adult with average BMI");
        }
    }

    #[test]
    fn five_values_five_specs() {
        let mut cat = CategoryConfig {
            name: "weather2".into(),
            label: String::new(),
            base: BTreeMap::new(),
            attributes: vec![],
        };
        for (i, v) in ["rain", "snow", "fog", "hail", "storm"].iter().enumerate() {
            cat.attributes.push(AttributeConfig {
                id: format!("w{i}"),
                slot: Slot::Weather,
                value: v.to_string(),
                base: BTreeMap::new(),
            });
        }
        let specs = expand_category(&PromptSlots::canonical(), false, &cat).unwrap();
        assert_eq!(specs.len(), 5);
        let ids: BTreeSet<_> = specs.iter().map(|s| s.attribute_id.clone()).collect();
        assert_eq!(ids.len(), 5);
        cat.attributes.clear();
        assert_eq!(
            expand_category(&PromptSlots::canonical(), false, &cat),
            Err(PromptError::EmptyCategory("weather2".into()))
        );
    }

    #[test]
    fn questions() {
        let q = vqa_questions_for(&PromptSlots::canonical());
        assert_eq!(q.len(), 7);
        assert!(q.iter().all(|(_, a)| a == "yes"));
        let s = PromptSlots::canonical()
            .with(Slot::Clothing, "parka")
            .with(Slot::Weather, "snow");
        let q = vqa_questions_for(&s);
        assert!(q.contains(&("Is the person wearing parka?".into(), "yes".into())));
        assert!(q.contains(&("Is it snow weather in the image?".into(), "yes".into())));
    }

    #[test]
    fn config_round_trip_is_stable() {
        let catalog = CatalogConfig::bundled();
        assert_eq!(catalog.categories.len(), 6);
        let text = catalog.to_toml();
        let back = CatalogConfig::from_toml(&text).unwrap();
        assert_eq!(back.to_toml(), text);
        assert_eq!(back.all_specs().unwrap(), catalog.all_specs().unwrap());
    }

    #[test]
    fn bundled_pairs_differ_in_one_slot() {
        let catalog = CatalogConfig::bundled();
        for s in catalog.all_specs().unwrap() {
            for g in [Gender::Male, Gender::Female] {
                let pair = make_prompt_pair(&s.base_slots_for(g), &s, &catalog.template).unwrap();
                assert_ne!(pair.base_text, pair.attribute_text);
                assert!(
                    differs_only_in(&pair, &s.base_value, &s.attribute_value),
                    "{} | {}",
                    pair.base_text,
                    pair.attribute_text
                );
            }
        }
    }
}
