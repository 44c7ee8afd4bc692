//! Vocabularies, interaction surface forms and prompt word sets.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::CategoryPair;
use crate::backends::PromptDecoder;
use crate::error::{Error, Result};
use crate::jsonl;

const HICO_ACTIONS: &str = include_str!("../../data/hico_actions.txt");
const VCOCO_ACTIONS: &str = include_str!("../../data/vcoco_actions.txt");
const COCO_OBJECTS: &str = include_str!("../../data/coco_objects.txt");
const HUMAN_WORDS: &str = include_str!("../../data/human_words.txt");
const SCENE_WORDS: &str = include_str!("../../data/scene_words.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEntry {
    pub name: String,
    pub gerund: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preposition: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coco_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    actions: Vec<ActionEntry>,
    objects: Vec<ObjectEntry>,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_actions(text: &str, origin: &Path) -> Result<Vec<ActionEntry>> {
    content_lines(text)
        .map(|(line, l)| {
            let parts: Vec<&str> = l.split('|').map(str::trim).collect();
            match parts.as_slice() {
                [name, gerund] => Ok(ActionEntry {
                    name: name.to_string(),
                    gerund: gerund.to_string(),
                    preposition: None,
                }),
                [name, gerund, prep] => Ok(ActionEntry {
                    name: name.to_string(),
                    gerund: gerund.to_string(),
                    preposition: Some(prep.to_string()).filter(|p| !p.is_empty()),
                }),
                _ => Err(Error::parse(origin, line, "expected `name|gerund[|preposition]`")),
            }
        })
        .collect()
}

fn parse_objects(text: &str, origin: &Path) -> Result<Vec<ObjectEntry>> {
    content_lines(text)
        .map(|(line, l)| {
            let mut it = l.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(id), Some(name), None) => {
                    let coco_id = id
                        .parse()
                        .map_err(|_| Error::parse(origin, line, format!("bad id `{id}`")))?;
                    Ok(ObjectEntry {
                        name: name.to_string(),
                        coco_id: Some(coco_id),
                    })
                }
                (Some(name), None, None) => Ok(ObjectEntry {
                    name: name.to_string(),
                    coco_id: None,
                }),
                _ => Err(Error::parse(origin, line, "expected `[coco_id] name`")),
            }
        })
        .collect()
}

fn word_list(text: &str) -> Vec<String> {
    content_lines(text).map(|(_, l)| l.to_string()).collect()
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Lexicon {
    pub fn new(actions: Vec<ActionEntry>, objects: Vec<ObjectEntry>) -> Result<Self> {
        if actions.is_empty() || objects.is_empty() {
            return Err(Error::Config("lexicon needs at least one action and one object".into()));
        }
        Ok(Lexicon { actions, objects })
    }

    /// 117 interactions over the 80 COCO objects.
    pub fn hico() -> Self {
        let builtin = Path::new("<builtin>");
        Lexicon {
            actions: parse_actions(HICO_ACTIONS, builtin).expect("builtin lexicon"),
            objects: parse_objects(COCO_OBJECTS, builtin).expect("builtin lexicon"),
        }
    }

    /// 29 interactions over the 80 COCO objects.
    pub fn vcoco() -> Self {
        let builtin = Path::new("<builtin>");
        Lexicon {
            actions: parse_actions(VCOCO_ACTIONS, builtin).expect("builtin lexicon"),
            objects: parse_objects(COCO_OBJECTS, builtin).expect("builtin lexicon"),
        }
    }

    pub fn from_files(actions: &Path, objects: &Path) -> Result<Self> {
        Self::new(
            parse_actions(&read_text(actions)?, actions)?,
            parse_objects(&read_text(objects)?, objects)?,
        )
    }

    /// Writes the two files `from_files` reads.
    pub fn write_files(&self, actions: &Path, objects: &Path) -> Result<()> {
        let mut a = String::new();
        for e in &self.actions {
            a.push_str(&e.name);
            a.push('|');
            a.push_str(&e.gerund);
            if let Some(p) = &e.preposition {
                a.push('|');
                a.push_str(p);
            }
            a.push('\n');
        }
        let mut o = String::new();
        for e in &self.objects {
            if let Some(id) = e.coco_id {
                o.push_str(&format!("{id} "));
            }
            o.push_str(&e.name);
            o.push('\n');
        }
        std::fs::write(actions, a).map_err(|e| Error::io(actions, e))?;
        std::fs::write(objects, o).map_err(|e| Error::io(objects, e))
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn actions(&self) -> &[ActionEntry] {
        &self.actions
    }

    pub fn objects(&self) -> &[ObjectEntry] {
        &self.objects
    }

    pub fn action_names(&self) -> Vec<String> {
        self.actions.iter().map(|a| a.name.clone()).collect()
    }

    pub fn object_names(&self) -> Vec<String> {
        self.objects.iter().map(|o| o.name.clone()).collect()
    }

    pub fn person_label(&self) -> Option<usize> {
        self.objects.iter().position(|o| o.name == "person")
    }

    pub fn object_by_coco_id(&self, coco_id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.coco_id == Some(coco_id))
    }

    pub fn check(&self, cat: CategoryPair) -> Result<()> {
        if cat.action >= self.actions.len() || cat.object >= self.objects.len() {
            return Err(Error::Config(format!(
                "category ({}, {}) outside vocabulary of {} actions x {} objects",
                cat.action,
                cat.object,
                self.actions.len(),
                self.objects.len()
            )));
        }
        Ok(())
    }

    /// Interaction phrase as it appears in prompts, e.g. `cutting with`.
    pub fn surface(&self, action: usize) -> String {
        let a = &self.actions[action];
        match &a.preposition {
            Some(p) => format!("{} {}", a.gerund, p),
            None => a.gerund.clone(),
        }
    }

    pub fn object_phrase(&self, object: usize) -> String {
        self.objects[object].name.replace('_', " ")
    }

    /// Recovers the category from a rendered prompt.
    pub fn parse_prompt(&self, text: &str) -> Option<(usize, usize)> {
        let body = match text.rfind(" in the ") {
            Some(i) => &text[..i],
            None => text,
        };
        let (object, phrase) = (0..self.objects.len())
            .map(|o| (o, self.object_phrase(o)))
            .filter(|(_, p)| body.ends_with(&format!(" {p}")))
            .max_by_key(|(_, p)| p.len())?;
        let rest = &body[..body.len() - phrase.len() - 1];
        let rest = rest
            .strip_suffix(" an")
            .or_else(|| rest.strip_suffix(" a"))
            .unwrap_or(rest);
        let (action, _) = (0..self.actions.len())
            .map(|a| (a, self.surface(a)))
            .filter(|(_, s)| rest == s || rest.ends_with(&format!(" {s}")))
            .max_by_key(|(_, s)| s.len())?;
        Some((action, object))
    }

    pub fn decoder(self: &Arc<Self>) -> PromptDecoder {
        let lex = Arc::clone(self);
        Arc::new(move |text: &str| lex.parse_prompt(text))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneMapHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMapRecord {
    pub action: usize,
    pub object: usize,
    pub scenes: Vec<String>,
}

const SCENE_MAP_FORMAT: &str = "vil-scene-map";

/// Human-characteristic words, scene words and the per-category scene subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct WordSets {
    pub human_words: Vec<String>,
    pub scene_words: Vec<String>,
    scene_map: BTreeMap<CategoryPair, Vec<String>>,
}

impl WordSets {
    pub fn new(
        human_words: Vec<String>,
        scene_words: Vec<String>,
        scene_map: BTreeMap<CategoryPair, Vec<String>>,
    ) -> Result<Self> {
        let ws = WordSets {
            human_words,
            scene_words,
            scene_map,
        };
        ws.validate()?;
        Ok(ws)
    }

    /// Built-in word lists with an empty scene map.
    pub fn builtin() -> Self {
        WordSets {
            human_words: word_list(HUMAN_WORDS),
            scene_words: word_list(SCENE_WORDS),
            scene_map: BTreeMap::new(),
        }
    }

    pub fn load(human_words: &Path, scene_words: &Path, scene_map: Option<&Path>) -> Result<Self> {
        let map = match scene_map {
            Some(p) => Self::read_scene_map(p)?,
            None => BTreeMap::new(),
        };
        Self::new(
            word_list(&read_text(human_words)?),
            word_list(&read_text(scene_words)?),
            map,
        )
    }

    pub fn read_scene_map(path: &Path) -> Result<BTreeMap<CategoryPair, Vec<String>>> {
        let (_h, recs): (SceneMapHeader, Vec<SceneMapRecord>) =
            jsonl::read(path, SCENE_MAP_FORMAT, 1)?;
        Ok(recs
            .into_iter()
            .map(|r| (CategoryPair::new(r.action, r.object), r.scenes))
            .collect())
    }

    pub fn write_scene_map(&self, path: &Path) -> Result<()> {
        let header = SceneMapHeader {
            format: SCENE_MAP_FORMAT.into(),
            version: 1,
        };
        let recs: Vec<SceneMapRecord> = self
            .scene_map
            .iter()
            .map(|(c, s)| SceneMapRecord {
                action: c.action,
                object: c.object,
                scenes: s.clone(),
            })
            .collect();
        jsonl::write(path, &header, &recs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.human_words.is_empty() || self.scene_words.is_empty() {
            return Err(Error::Config("word sets must be non-empty".into()));
        }
        for (cat, scenes) in &self.scene_map {
            if scenes.is_empty() {
                return Err(Error::Config(format!("empty scene list for {cat}")));
            }
            if let Some(bad) = scenes.iter().find(|s| !self.scene_words.contains(s)) {
                return Err(Error::Config(format!(
                    "scene `{bad}` for {cat} is not in the scene word set"
                )));
            }
        }
        Ok(())
    }

    pub fn scene_map(&self) -> &BTreeMap<CategoryPair, Vec<String>> {
        &self.scene_map
    }

    pub fn set_scenes(&mut self, cat: CategoryPair, scenes: Vec<String>) -> Result<()> {
        self.scene_map.insert(cat, scenes);
        self.validate()
    }

    /// Maps every given category to the whole scene word set.
    pub fn with_uniform_map(mut self, categories: impl IntoIterator<Item = CategoryPair>) -> Self {
        for c in categories {
            self.scene_map
                .entry(c)
                .or_insert_with(|| self.scene_words.clone());
        }
        self
    }

    pub fn scenes_for(&self, cat: CategoryPair) -> Result<&[String]> {
        self.scene_map
            .get(&cat)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("category {cat} missing from scene map")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (a, o) = (dir.path().join("a.txt"), dir.path().join("o.txt"));
        let v = Lexicon::vcoco();
        v.write_files(&a, &o).unwrap();
        assert_eq!(Lexicon::from_files(&a, &o).unwrap(), v);
    }

    #[test]
    fn builtin_sizes() {
        let h = Lexicon::hico();
        assert_eq!(h.num_actions(), 117);
        assert_eq!(h.num_objects(), 80);
        assert_eq!(h.person_label(), Some(0));
        assert_eq!(Lexicon::vcoco().num_actions(), 29);
        assert_eq!(h.object_by_coco_id(90), Some(79));
        let ws = WordSets::builtin();
        assert!(ws.human_words.len() >= 20);
        assert!(ws.validate().is_ok());
    }

    #[test]
    fn surfaces() {
        let v = Lexicon::vcoco();
        let cut = v.actions().iter().position(|a| a.name == "cut_instr").unwrap();
        assert_eq!(v.surface(cut), "cutting with");
        let h = Lexicon::hico();
        let ball = h.objects().iter().position(|o| o.name == "sports_ball").unwrap();
        assert_eq!(h.object_phrase(ball), "sports ball");
    }

    #[test]
    fn parse_prompt_prefers_longest_match() {
        let h = Lexicon::hico();
        let cut_with = h.actions().iter().position(|a| a.name == "cut_with").unwrap();
        let cut = h.actions().iter().position(|a| a.name == "cut").unwrap();
        let knife = h.objects().iter().position(|o| o.name == "knife").unwrap();
        let hot_dog = h.objects().iter().position(|o| o.name == "hot_dog").unwrap();
        assert_eq!(
            h.parse_prompt("a photo of a chef cutting with a knife in the kitchen"),
            Some((cut_with, knife))
        );
        assert_eq!(
            h.parse_prompt("a photo of an old man cutting a hot dog in the kitchen"),
            Some((cut, hot_dog))
        );
        assert_eq!(h.parse_prompt("nothing to see"), None);
    }

    #[test]
    fn scene_map_validation() {
        let mut ws = WordSets::builtin();
        let c = CategoryPair::new(0, 0);
        assert!(ws.scenes_for(c).is_err());
        assert!(ws.set_scenes(c, vec!["moon base".into()]).is_err());
        let mut ws = WordSets::builtin();
        ws.set_scenes(c, vec!["kitchen".into()]).unwrap();
        assert_eq!(ws.scenes_for(c).unwrap(), ["kitchen".to_string()]);
    }

    #[test]
    fn scene_map_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = WordSets::builtin();
        ws.set_scenes(CategoryPair::new(3, 7), vec!["park".into(), "street".into()])
            .unwrap();
        let p = dir.path().join("scene_map.jsonl");
        ws.write_scene_map(&p).unwrap();
        assert_eq!(&WordSets::read_scene_map(&p).unwrap(), ws.scene_map());
    }
}
