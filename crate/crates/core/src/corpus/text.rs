//! Sentence segmentation, tokenization and the "meaningful token" rule.

/// Characters that end a sentence.
pub const SENTENCE_ENDINGS: &[char] = &['。', '！', '？', '.', '!', '?', '；', ';'];

/// Small built-in stop-word list (English and common Chinese particles).
const STOP_WORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "he", "her", "his",
    "in", "is", "it", "its", "of", "on", "or", "she", "that", "the", "this", "to", "was", "were",
    "with", "的", "了", "在", "是", "和", "与", "及", "其", "并", "被", "将", "于", "对", "等",
    "之", "某",
];

pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, sentence: &str) -> Vec<String>;
}

pub trait Segmenter: Send + Sync {
    fn segment<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, sentence: &str) -> Vec<String> {
        sentence.split_whitespace().map(str::to_string).collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PunctuationSegmenter;

impl Segmenter for PunctuationSegmenter {
    fn segment<'a>(&self, text: &'a str) -> Vec<&'a str> {
        text.split(SENTENCE_ENDINGS)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// Segmenter plus tokenizer.
pub struct TextPipeline {
    pub segmenter: Box<dyn Segmenter>,
    pub tokenizer: Box<dyn Tokenizer>,
}

impl Default for TextPipeline {
    fn default() -> Self {
        TextPipeline {
            segmenter: Box::new(PunctuationSegmenter),
            tokenizer: Box::new(WhitespaceTokenizer),
        }
    }
}

impl TextPipeline {
    /// Splits `text` into non-empty tokenized sentences.
    pub fn process(&self, text: &str) -> Vec<Vec<String>> {
        self.segmenter
            .segment(text)
            .into_iter()
            .map(|s| self.tokenizer.tokenize(s))
            .filter(|s| !s.is_empty())
            .collect()
    }
}

pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty()
        && token
            .chars()
            .all(|c| c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()))
}

pub fn is_meaningful(token: &str) -> bool {
    !token.is_empty()
        && !is_punctuation(token)
        && !STOP_WORDS.contains(&token.to_lowercase().as_str())
}

pub fn meaningful_count(fact: &[Vec<String>]) -> usize {
    fact.iter()
        .flatten()
        .filter(|t| is_meaningful(t))
        .count()
}
