//! Whitespace token approximation used for chunking and retrieval budgets.

/// Safety factor applied to the whitespace word count. Subword tokenizers
/// produce more tokens than whitespace splitting, so budgets computed with
/// this estimate stay conservative.
pub const TOKEN_SAFETY_FACTOR: f64 = 1.3;

/// Approximate token count of `text`: whitespace-delimited words scaled by
/// [`TOKEN_SAFETY_FACTOR`], rounded up.
pub fn approx_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words as f64 * TOKEN_SAFETY_FACTOR).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_has_zero_tokens() {
        assert_eq!(approx_tokens(""), 0);
        assert_eq!(approx_tokens("   \n\t "), 0);
    }

    #[test]
    fn scales_word_count_by_safety_factor() {
        // 10 words * 1.3 = 13
        let text = "a b c d e f g h i j";
        assert_eq!(approx_tokens(text), 13);
        // 3 words * 1.3 = 3.9 -> 4
        assert_eq!(approx_tokens("one two three"), 4);
    }
}
