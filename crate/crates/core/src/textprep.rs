//! Tokenization, ingredient-line parsing and the min-count vocabulary.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Recipe;
use crate::{par, Error, Result};

pub const DEFAULT_MIN_COUNT: usize = 5;
pub const UNK: &str = "<unk>";

const DEFAULT_STOPLIST: &str = include_str!("../data/quantity_stoplist.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedRecipe {
    pub id: String,
    pub tokens_title: Vec<String>,
    pub tokens_ingredients: Vec<String>,
    pub tokens_directions: Vec<String>,
    /// title, then ingredients, then directions
    pub all_tokens: Vec<String>,
}

impl TokenizedRecipe {
    fn assemble(
        id: &str,
        title: Vec<String>,
        ingredients: Vec<String>,
        directions: Vec<String>,
    ) -> Self {
        let all_tokens = title
            .iter()
            .chain(&ingredients)
            .chain(&directions)
            .cloned()
            .collect();
        Self {
            id: id.to_string(),
            tokens_title: title,
            tokens_ingredients: ingredients,
            tokens_directions: directions,
            all_tokens,
        }
    }
}

/// Lowercases, turns every non-alphanumeric character into a space and
/// splits on whitespace.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

fn tokenize_lines<S: AsRef<str>>(lines: &[S]) -> Vec<String> {
    lines
        .iter()
        .flat_map(|l| tokenize_text(l.as_ref()))
        .collect()
}

pub fn tokenize(r: &Recipe) -> TokenizedRecipe {
    TokenizedRecipe::assemble(
        &r.id,
        tokenize_text(&r.title),
        tokenize_lines(&r.ingredients),
        tokenize_lines(&r.directions),
    )
}

/// Like [`tokenize`], but the ingredient section is run through the
/// parser first.
pub fn tokenize_parsed(r: &Recipe, parser: &IngredientParser) -> TokenizedRecipe {
    TokenizedRecipe::assemble(
        &r.id,
        tokenize_text(&r.title),
        tokenize_lines(&parser.parse_ingredients(&r.ingredients)),
        tokenize_lines(&r.directions),
    )
}

/// Strips numerals, quantity/unit words and parenthesized comments from
/// ingredient lines.
#[derive(Debug, Clone)]
pub struct IngredientParser {
    stop_words: HashSet<String>,
}

impl Default for IngredientParser {
    fn default() -> Self {
        Self::from_stoplist(DEFAULT_STOPLIST)
    }
}

fn is_fraction_char(c: char) -> bool {
    matches!(c, '¼' | '½' | '¾' | '⅐'..='⅞')
}

fn is_numeral(word: &str) -> bool {
    let mut has_digit = false;
    for c in word.chars() {
        if c.is_ascii_digit() || is_fraction_char(c) {
            has_digit = true;
        } else if !matches!(c, '/' | '.' | ',' | '-' | '⁄') {
            return false;
        }
    }
    has_digit
}

fn strip_parenthesized(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut depth = 0usize;
    for c in line.chars() {
        match c {
            '(' => {
                depth += 1;
                out.push(' ');
            }
            ')' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

impl IngredientParser {
    /// One stop word per line; blank lines and `#` comments are skipped.
    pub fn from_stoplist(text: &str) -> Self {
        let stop_words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { stop_words }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_stoplist(&text))
    }

    pub fn stop_words(&self) -> impl Iterator<Item = &str> {
        self.stop_words.iter().map(String::as_str)
    }

    fn is_stop_word(&self, word: &str) -> bool {
        let bare = word
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        self.stop_words.contains(&bare)
    }

    pub fn parse_line(&self, line: &str) -> String {
        strip_parenthesized(line)
            .split_whitespace()
            .filter(|w| !is_numeral(w) && !self.is_stop_word(w))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_ingredients<S: AsRef<str>>(&self, lines: &[S]) -> Vec<String> {
        lines.iter().map(|l| self.parse_line(l.as_ref())).collect()
    }
}

/// Shorthand for parsing with the default stop-list.
pub fn parse_ingredients<S: AsRef<str>>(lines: &[S]) -> Vec<String> {
    IngredientParser::default().parse_ingredients(lines)
}

/// Token → dense index for tokens seen at least `min_count` times. Rarer
/// tokens are unknown and get no index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocabulary {
    pub fn build(corpus: &[TokenizedRecipe], min_count: usize) -> Self {
        let partial = par::map_slice(corpus, |tr| {
            let mut m: HashMap<&str, usize> = HashMap::new();
            for t in &tr.all_tokens {
                *m.entry(t.as_str()).or_default() += 1;
            }
            m
        });
        let mut totals: HashMap<&str, usize> = HashMap::new();
        for m in partial {
            for (t, c) in m {
                *totals.entry(t).or_default() += c;
            }
        }
        let mut kept: Vec<(&str, usize)> = totals
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens: Vec<String> = kept.iter().map(|(t, _)| t.to_string()).collect();
        let counts = kept.iter().map(|(_, c)| *c).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            counts,
            index,
            min_count,
        }
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, idx: usize) -> usize {
        self.counts[idx]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Maps a token to itself or to [`UNK`].
    pub fn normalize<'a>(&self, token: &'a str) -> &'a str {
        if self.index.contains_key(token) {
            token
        } else {
            UNK
        }
    }

    /// `token,index,count` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = crate::csvio::writer(w);
        csv.write_record(["token", "index", "count"])?;
        for (i, t) in self.tokens.iter().enumerate() {
            csv.write_record([t.clone(), i.to_string(), self.counts[i].to_string()])?;
        }
        csv.flush().map_err(|e| Error::io("<vocabulary>", e))?;
        Ok(())
    }
}

pub fn build_vocabulary(corpus: &[TokenizedRecipe]) -> Vocabulary {
    Vocabulary::build(corpus, DEFAULT_MIN_COUNT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tr(id: &str, tokens: &[&str]) -> TokenizedRecipe {
        TokenizedRecipe::assemble(
            id,
            tokens.iter().map(|s| s.to_string()).collect(),
            vec![],
            vec![],
        )
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize_text("Boil 2 cups water."),
            ["boil", "2", "cups", "water"]
        );
        assert_eq!(tokenize_text("Al-dente!"), ["al", "dente"]);
        assert!(tokenize_text("").is_empty());
    }

    #[test]
    fn tokenize_recipe_sections() {
        let r = Recipe {
            id: "x".into(),
            title: "Quick Pasta".into(),
            ingredients: vec!["200 g linguine".into()],
            directions: vec![],
            nutrients: Default::default(),
            category_tags: Default::default(),
        };
        let t = tokenize(&r);
        assert_eq!(t.tokens_title, ["quick", "pasta"]);
        assert!(t.tokens_directions.is_empty());
        assert_eq!(t.all_tokens, ["quick", "pasta", "200", "g", "linguine"]);
        let p = tokenize_parsed(&r, &IngredientParser::default());
        assert_eq!(p.tokens_ingredients, ["linguine"]);
    }

    #[test]
    fn parse_examples() {
        let p = IngredientParser::default();
        assert_eq!(
            p.parse_line("2 1/2 cups all-purpose flour (sifted)"),
            "all-purpose flour"
        );
        assert_eq!(p.parse_line("salt"), "salt");
        assert_eq!(
            p.parse_line("1 (8 ounce) package cream cheese"),
            "cream cheese"
        );
    }

    #[test]
    fn custom_stoplist() {
        let p = IngredientParser::from_stoplist("# units\nhandful\n\n");
        assert_eq!(p.parse_line("1 handful cups basil"), "cups basil");
    }

    #[test]
    fn vocabulary_min_count() {
        let mut corpus = vec![tr("a", &["flour"; 100])];
        corpus.push(tr("b", &["zatar", "zatar"]));
        let v = build_vocabulary(&corpus);
        assert_eq!(v.get("flour"), Some(0));
        assert_eq!(v.get("zatar"), None);
        assert_eq!(v.normalize("zatar"), UNK);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn vocabulary_all_frequent() {
        let corpus = vec![tr("a", &["b", "a", "b", "a", "a", "b", "a", "b", "a", "b"])];
        let v = build_vocabulary(&corpus);
        assert_eq!(v.len(), 2);
        // equal counts: token ascending
        assert_eq!(v.tokens(), ["a", "b"]);
    }

    #[test]
    fn vocabulary_csv() {
        let v = Vocabulary::build(&[tr("a", &["x", "y", "y"])], 1);
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "token,index,count\ny,0,2\nx,1,1\n"
        );
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "\\PC{0,60}") {
            let once = tokenize_text(&s);
            let twice = tokenize_text(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn parse_never_introduces_tokens(s in "[0-9a-z ()/½,.-]{0,50}") {
            let p = IngredientParser::default();
            let input: HashSet<String> = s.split_whitespace().map(String::from).collect();
            let input_tokens: HashSet<String> = tokenize_text(&s).into_iter().collect();
            for w in tokenize_text(&p.parse_line(&s)) {
                prop_assert!(input_tokens.contains(&w), "{w} not in {input:?}");
            }
        }

        #[test]
        fn vocabulary_is_permutation_invariant(docs in proptest::collection::vec(proptest::collection::vec("[a-e]", 0..12), 1..12), rot in 0usize..12) {
            let corpus: Vec<TokenizedRecipe> = docs.iter().enumerate()
                .map(|(i, d)| tr(&i.to_string(), &d.iter().map(String::as_str).collect::<Vec<_>>())).collect();
            let mut shuffled = corpus.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            prop_assert_eq!(Vocabulary::build(&corpus, 2), Vocabulary::build(&shuffled, 2));
        }

        #[test]
        fn raising_min_count_never_grows(docs in proptest::collection::vec(proptest::collection::vec("[a-h]", 0..20), 1..10)) {
            let corpus: Vec<TokenizedRecipe> = docs.iter().enumerate()
                .map(|(i, d)| tr(&i.to_string(), &d.iter().map(String::as_str).collect::<Vec<_>>())).collect();
            let sizes: Vec<usize> = [1, 2, 5, 10].iter().map(|&m| Vocabulary::build(&corpus, m).len()).collect();
            prop_assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
