use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicon, WordSets};
use super::CategoryPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub category: CategoryPair,
    pub human_word: String,
    pub scene_word: String,
    pub text: String,
}

/// `a` or `an`, chosen by the first letter of the following word.
pub fn article(word: &str) -> &'static str {
    match word.trim_start().chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

pub fn render_prompt(lexicon: &Lexicon, cat: CategoryPair, human_word: &str, scene_word: &str) -> String {
    let object = lexicon.object_phrase(cat.object);
    format!(
        "a photo of {} {} {} {} {} in the {}",
        article(human_word),
        human_word,
        lexicon.surface(cat.action),
        article(&object),
        object,
        scene_word
    )
}

/// Samples a human word and a category-specific scene word, then renders
/// the refined description.
pub fn build_prompt(
    cat: CategoryPair,
    words: &WordSets,
    lexicon: &Lexicon,
    seed: u64,
) -> Result<PromptSpec> {
    lexicon.check(cat)?;
    let scenes = words.scenes_for(cat)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let human_word = words
        .human_words
        .choose(&mut rng)
        .ok_or_else(|| Error::Config("empty human word set".into()))?
        .clone();
    let scene_word = scenes
        .choose(&mut rng)
        .ok_or_else(|| Error::Config(format!("empty scene list for {cat}")))?
        .clone();
    let text = render_prompt(lexicon, cat, &human_word, &scene_word);
    Ok(PromptSpec {
        category: cat,
        human_word,
        scene_word,
        text,
    })
}
