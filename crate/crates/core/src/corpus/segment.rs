//! Rule-based sentence splitter.
//!
//! Offsets are Unicode scalar indices, end-exclusive. A sentence ends at `.`, `!`
//! or `?` followed by whitespace or end of line, unless the word carrying the
//! period is a guarded abbreviation. Every line break also ends a sentence, so a
//! header line stands on its own.

/// Lower-cased tokens whose trailing period does not end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "cm.", "mm.", "a.m.", "p.m.", "e.g.", "i.e.", "vs.", "approx.",
    "st.", "pt.", "hx.", "yr.", "yrs.", "fig.", "no.", "etc.",
];

/// A half-open `[start, end)` range of Unicode scalar positions.
pub type CharSpan = (usize, usize);

pub fn sentence_segment(text: &str) -> Vec<CharSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut line_start = 0;
    for i in 0..=chars.len() {
        if i == chars.len() || chars[i] == '\n' {
            split_line(&chars, line_start, i, &mut spans);
            line_start = i + 1;
        }
    }
    spans
}

fn split_line(chars: &[char], start: usize, end: usize, out: &mut Vec<CharSpan>) {
    let mut sent_start = start;
    let mut i = start;
    while i < end {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = i + 1 == end || chars[i + 1].is_whitespace();
            if at_boundary && !(c == '.' && is_guarded(chars, sent_start, i)) {
                push_trimmed(chars, sent_start, i + 1, out);
                sent_start = i + 1;
            }
        }
        i += 1;
    }
    push_trimmed(chars, sent_start, end, out);
}

/// The whitespace-delimited word ending at `dot` (inclusive) is an abbreviation.
fn is_guarded(chars: &[char], floor: usize, dot: usize) -> bool {
    let mut w = dot;
    while w > floor && !chars[w - 1].is_whitespace() {
        w -= 1;
    }
    let word: String = chars[w..=dot].iter().flat_map(|c| c.to_lowercase()).collect();
    let word = word.trim_start_matches(|c: char| c == '(' || c == '"' || c == '\'');
    ABBREVIATIONS.contains(&word)
}

fn push_trimmed(chars: &[char], mut s: usize, mut e: usize, out: &mut Vec<CharSpan>) {
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    while e > s && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    if s < e {
        out.push((s, e));
    }
}

/// Extracts the substring covered by a character span.
pub fn span_text(text: &str, span: CharSpan) -> String {
    text.chars().skip(span.0).take(span.1 - span.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(text: &str) -> Vec<String> {
        sentence_segment(text)
            .into_iter()
            .map(|s| span_text(text, s))
            .collect()
    }

    #[test]
    fn two_terminated_sentences() {
        assert_eq!(
            texts("No mass. No calcification."),
            vec!["No mass.", "No calcification."]
        );
    }

    #[test]
    fn header_line_is_its_own_sentence() {
        assert_eq!(
            texts("BILATERAL MAMMOGRAM\nFindings: benign."),
            vec!["BILATERAL MAMMOGRAM", "Findings: benign."]
        );
    }

    #[test]
    fn abbreviations_and_decimals_do_not_split() {
        assert_eq!(
            texts("Mass measures 1.2 cm. in size. Seen by Dr. Smith at 9 a.m. today."),
            vec!["Mass measures 1.2 cm. in size.", "Seen by Dr. Smith at 9 a.m. today."]
        );
    }

    #[test]
    fn whitespace_only_is_empty() {
        assert!(sentence_segment("  \n\t ").is_empty());
        assert!(sentence_segment("").is_empty());
    }

    #[test]
    fn question_and_exclamation_terminate() {
        assert_eq!(texts("Is it new? Yes! Stable."), vec!["Is it new?", "Yes!", "Stable."]);
    }

    proptest! {
        #[test]
        fn spans_cover_all_non_whitespace(text in "[a-zA-Z .!?\n]{0,80}") {
            let spans = sentence_segment(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut covered = vec![false; chars.len()];
            let mut prev_end = 0;
            for (s, e) in &spans {
                prop_assert!(s < e);
                prop_assert!(*s >= prev_end);
                prev_end = *e;
                for c in covered.iter_mut().take(*e).skip(*s) {
                    *c = true;
                }
            }
            for (i, c) in chars.iter().enumerate() {
                if !c.is_whitespace() {
                    prop_assert!(covered[i], "char {} uncovered", i);
                }
            }
            // Gaps between spans are whitespace only, so spans + gaps rebuild the text.
            let mut rebuilt = String::new();
            let mut cursor = 0;
            for (s, e) in &spans {
                let gap: String = chars[cursor..*s].iter().collect();
                prop_assert!(gap.chars().all(char::is_whitespace));
                rebuilt.push_str(&gap);
                rebuilt.extend(&chars[*s..*e]);
                cursor = *e;
            }
            rebuilt.extend(&chars[cursor..]);
            prop_assert_eq!(rebuilt, text);
        }
    }
}
