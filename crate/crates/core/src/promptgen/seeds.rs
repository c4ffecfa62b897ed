use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tagger::NounTagger;
use super::{CaptionRecord, PromptgenError, SeedPrompt};
use crate::io::stable_u64;
use crate::text::{singularize, tokenize};

/// Captions mentioning any of these are rejected before sampling.
pub const DEFAULT_EXCLUSIONS: &[&str] = &["child", "person", "woman", "man", "boy", "girl", "people"];

fn irregular_singular(token: &str) -> String {
    match token {
        "men" => "man".into(),
        "women" => "woman".into(),
        "children" => "child".into(),
        _ => singularize(token),
    }
}

fn excluded(caption: &str, exclusions: &[String]) -> bool {
    tokenize(caption).iter().any(|t| {
        let lemma = irregular_singular(t);
        exclusions.iter().any(|e| e == t || *e == lemma)
    })
}

/// Samples `count` captions whose first noun is `concept`, after dropping
/// captions that contain an exclusion word. The result keeps corpus order.
pub fn select_seed_prompts(
    corpus: &[CaptionRecord],
    concept: &str,
    count: usize,
    rng_seed: u64,
    tagger: &dyn NounTagger,
    exclusions: &[String],
) -> Result<Vec<SeedPrompt>, PromptgenError> {
    let survivors: Vec<&CaptionRecord> = corpus
        .iter()
        .filter(|r| !excluded(&r.caption, exclusions))
        .filter(|r| tagger.first_noun(&r.caption).as_deref() == Some(concept))
        .collect();
    if survivors.len() < count {
        return Err(PromptgenError::InsufficientCaptions {
            concept: concept.to_string(),
            needed: count,
            available: survivors.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stable_u64(&[&rng_seed.to_string(), concept]));
    let mut picked = sample(&mut rng, survivors.len(), count).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| SeedPrompt {
            concept: concept.to_string(),
            caption: survivors[i].caption.clone(),
            source_id: survivors[i].id.clone(),
        })
        .collect())
}
