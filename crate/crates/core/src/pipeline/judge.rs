//! Answer matching.

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, trim, collapse whitespace, strip terminal punctuation and a
/// leading article.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let trimmed = collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .trim_end();
    let mut words: Vec<&str> = trimmed.split(' ').filter(|w| !w.is_empty()).collect();
    if words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

fn word_tokens(s: &str) -> Vec<&str> {
    s.split(' ')
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|w| !w.is_empty())
        .collect()
}

/// True iff the normalized prediction equals a normalized gold answer or
/// contains it as a run of whole words.
pub fn judge_answer(predicted: &str, gold_answers: &[String]) -> bool {
    let pred = normalize_answer(predicted);
    if pred.is_empty() {
        return false;
    }
    let pred_words = word_tokens(&pred);
    gold_answers.iter().any(|g| {
        let gold = normalize_answer(g);
        if gold.is_empty() {
            return false;
        }
        if pred == gold {
            return true;
        }
        let gold_words = word_tokens(&gold);
        !gold_words.is_empty() && pred_words.windows(gold_words.len()).any(|w| w == gold_words.as_slice())
    })
}
