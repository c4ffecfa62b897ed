//! First-noun detection for captions.

use std::collections::{BTreeMap, BTreeSet};

use crate::text::{singularize, tokenize};

/// Returns the lemma of a caption's first noun.
pub trait NounTagger: Send + Sync {
    fn first_noun(&self, caption: &str) -> Option<String>;
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "several", "many", "few", "one", "two", "three",
    "four", "five", "six", "seven", "eight", "nine", "ten", "its", "his", "her", "their", "my", "our", "your", "there",
    "is", "are", "of", "pair", "couple", "group", "bunch", "close", "up", "view", "picture", "photo", "image",
];

/// Words that end the leading noun phrase.
const BOUNDARIES: &[&str] = &[
    "on", "in", "at", "with", "without", "near", "next", "by", "under", "over", "beside", "behind", "inside",
    "outside", "and", "is", "are", "was", "that", "which", "while", "sitting", "sits", "standing", "stands", "laying",
    "lying", "being", "has", "have", "holding", "for", "to", "from", "of", "filled", "parked", "covered", "full",
    "topped",
];

/// COCO classes plus people words and common scene nouns.
const NOUNS: &[&str] = &[
    "person",
    "bicycle",
    "car",
    "motorcycle",
    "airplane",
    "bus",
    "train",
    "truck",
    "boat",
    "traffic light",
    "fire hydrant",
    "stop sign",
    "parking meter",
    "bench",
    "bird",
    "cat",
    "dog",
    "horse",
    "sheep",
    "cow",
    "elephant",
    "bear",
    "zebra",
    "giraffe",
    "backpack",
    "umbrella",
    "handbag",
    "tie",
    "suitcase",
    "frisbee",
    "skis",
    "snowboard",
    "sports ball",
    "kite",
    "baseball bat",
    "baseball glove",
    "skateboard",
    "surfboard",
    "tennis racket",
    "bottle",
    "wine glass",
    "cup",
    "fork",
    "knife",
    "spoon",
    "bowl",
    "banana",
    "apple",
    "sandwich",
    "orange",
    "broccoli",
    "carrot",
    "hot dog",
    "pizza",
    "donut",
    "cake",
    "chair",
    "couch",
    "potted plant",
    "bed",
    "dining table",
    "table",
    "toilet",
    "tv",
    "laptop",
    "mouse",
    "remote",
    "keyboard",
    "cell phone",
    "microwave",
    "oven",
    "toaster",
    "sink",
    "refrigerator",
    "book",
    "clock",
    "vase",
    "scissors",
    "teddy bear",
    "hair drier",
    "toothbrush",
    "man",
    "woman",
    "child",
    "boy",
    "girl",
    "people",
    "men",
    "women",
    "children",
    "kid",
    "guy",
    "lady",
    "player",
    "skier",
    "surfer",
    "room",
    "kitchen",
    "street",
    "road",
    "field",
    "beach",
    "plate",
    "building",
    "water",
    "city",
    "park",
    "tree",
    "desk",
    "shelf",
    "counter",
    "window",
    "wall",
    "floor",
    "grass",
    "snow",
    "sky",
    "food",
    "meal",
    "house",
];

const SYNONYMS: &[(&str, &str)] = &[
    ("aeroplane", "airplane"),
    ("plane", "airplane"),
    ("jet", "airplane"),
    ("airliner", "airplane"),
    ("bike", "bicycle"),
    ("motorbike", "motorcycle"),
    ("sofa", "couch"),
    ("puppy", "dog"),
    ("kitten", "cat"),
    ("kitty", "cat"),
    ("television", "tv"),
    ("phone", "cell phone"),
    ("cellphone", "cell phone"),
    ("doughnut", "donut"),
    ("fridge", "refrigerator"),
    ("dining table", "table"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("people", "person"),
    ("bagel", "donut"),
];

/// Lexicon-driven tagger: skips leading determiners, prefers known nouns in
/// the leading noun phrase, and falls back to the phrase's last word.
#[derive(Debug, Clone)]
pub struct HeuristicTagger {
    nouns: BTreeSet<String>,
    synonyms: BTreeMap<String, String>,
}

impl Default for HeuristicTagger {
    fn default() -> Self {
        Self {
            nouns: NOUNS.iter().map(|s| s.to_string()).collect(),
            synonyms: SYNONYMS.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }
}

impl HeuristicTagger {
    /// Adds nouns (typically the benchmark concepts) to the lexicon.
    pub fn with_nouns<S: AsRef<str>>(mut self, nouns: impl IntoIterator<Item = S>) -> Self {
        self.nouns
            .extend(nouns.into_iter().map(|n| n.as_ref().trim().to_lowercase()));
        self
    }

    pub fn with_synonym(mut self, word: &str, lemma: &str) -> Self {
        self.synonyms.insert(word.to_lowercase(), lemma.to_lowercase());
        self
    }

    fn lemma(&self, word: &str) -> String {
        if let Some(l) = self.synonyms.get(word) {
            return l.clone();
        }
        let single = singularize(word);
        self.synonyms.get(&single).cloned().unwrap_or(single)
    }

    fn known(&self, word: &str) -> bool {
        self.nouns.contains(word) || self.synonyms.contains_key(word) || {
            let s = singularize(word);
            self.nouns.contains(&s) || self.synonyms.contains_key(&s)
        }
    }
}

impl NounTagger for HeuristicTagger {
    fn first_noun(&self, caption: &str) -> Option<String> {
        let tokens = tokenize(caption);
        let start = tokens.iter().position(|t| !DETERMINERS.contains(&t.as_str()))?;
        let end = tokens[start..]
            .iter()
            .position(|t| BOUNDARIES.contains(&t.as_str()))
            .map_or(tokens.len(), |p| start + p);
        let phrase = &tokens[start..end];
        for i in 0..phrase.len() {
            if i + 1 < phrase.len() {
                let pair = format!("{} {}", phrase[i], phrase[i + 1]);
                if self.known(&pair) {
                    return Some(self.lemma(&pair));
                }
            }
            if self.known(&phrase[i]) {
                return Some(self.lemma(&phrase[i]));
            }
        }
        phrase.last().map(|w| self.lemma(w))
    }
}
