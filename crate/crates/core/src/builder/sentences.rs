//! Rule-based sentence splitting.
//!
//! A sentence ends at a run of `.`, `!` or `?` (plus any closing quotes or
//! brackets) followed by whitespace or the end of the text, unless the period
//! closes a known abbreviation or a mid-sentence initial such as `F.`.

const TERMINALS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 6] = ['"', '\'', ')', ']', '\u{201D}', '\u{2019}'];

/// Tokens that end in a period without ending a sentence. Compared after
/// stripping leading brackets and quotes.
pub const ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "al.", "vs.", "cf.", "viz.", "approx.", "ca.", "resp.", "Fig.", "Figs.",
    "fig.", "figs.", "Eq.", "Eqs.", "Ref.", "Refs.", "No.", "no.", "Vol.", "vol.", "Dr.", "Mr.",
    "Mrs.", "Ms.", "Prof.", "St.", "Jr.", "Sr.", "sp.", "spp.", "var.", "Inc.", "Ltd.", "Co.",
];

fn is_abbreviation(text: &str, sentence_start: usize, period_at: usize) -> bool {
    let word_start = text[..period_at]
        .rfind(char::is_whitespace)
        .map(|i| i + text[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    let word = text[word_start..=period_at].trim_start_matches(['(', '[', '"', '\'', '\u{201C}', '\u{2018}']);
    if ABBREVIATIONS.contains(&word) {
        return true;
    }
    // A lone capital is a name initial ("Peter F. Martin") only when some
    // word precedes it in the sentence.
    let mut chars = word.chars();
    let initial = matches!((chars.next(), chars.next(), chars.next()), (Some(c), Some('.'), None) if c.is_uppercase());
    initial && !text[sentence_start..word_start].trim().is_empty()
}

/// Splits `text` into trimmed, non-empty sentences borrowed from the input.
/// Text between consecutive sentences is whitespace only.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if !TERMINALS.contains(&c) {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, d)) = iter.peek() {
            if TERMINALS.contains(&d) || CLOSERS.contains(&d) {
                end = j + d.len_utf8();
                iter.next();
            } else {
                break;
            }
        }
        let at_boundary = match iter.peek() {
            None => true,
            Some(&(_, d)) => d.is_whitespace(),
        };
        if !at_boundary {
            continue;
        }
        let single_period = text[i..end].trim_end_matches(CLOSERS) == ".";
        if single_period && is_abbreviation(text, start, i) {
            continue;
        }
        let sentence = text[start..end].trim();
        if !sentence.is_empty() {
            out.push(sentence);
        }
        start = end;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}
