//! Rule-based social-media tokenizer.
//!
//! Rules, applied to lowercased text split on whitespace:
//! - URLs (`http://`, `https://`, `www.`) become `<url>`; trailing punctuation
//!   is split off.
//! - `@name` becomes `<user>`.
//! - `#tag` is kept intact.
//! - Emoticons from a fixed list are single tokens; those ending in a letter
//!   or digit must not be glued to a following word.
//! - Runs of punctuation/symbols form one token (`!!`, `...`).
//! - Numbers (digits with optional `.`/`,` groups) become `<num>`.
//! - Words are runs of letters, digits and `_`, with internal apostrophes.
//!
//! Re-tokenizing the space-joined output yields the same token list.

pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";
pub const NUM_TOKEN: &str = "<num>";

const SENTINELS: [&str; 3] = [URL_TOKEN, USER_TOKEN, NUM_TOKEN];

// Longest first so that `:-)` wins over `:-`.
const EMOTICONS: [&str; 26] = [
    "</3", ":'(", ":-)", ":-(", ":-d", ":-p", ":-/", ":-o", ";-)", "^_^", "-_-", ":)", ":(", ";)", ":d", ":p", ";p", ":/", ":|", ":o", ":]", ":[", ":*", "=)",
    "=(", "<3",
];

const URL_PREFIXES: [&str; 3] = ["http://", "https://", "www."];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lowered.split_whitespace() {
        tokenize_chunk(chunk, &mut out);
    }
    out
}

fn url_start(chunk: &str) -> Option<usize> {
    URL_PREFIXES
        .iter()
        .filter_map(|p| chunk.find(p))
        .filter(|&pos| pos == 0 || !chunk[..pos].chars().next_back().is_some_and(is_word_char))
        .min()
}

fn tokenize_chunk(chunk: &str, out: &mut Vec<String>) {
    if let Some(pos) = url_start(chunk) {
        if pos > 0 {
            scan(&chunk[..pos].chars().collect::<Vec<_>>(), out);
        }
        let url = &chunk[pos..];
        let trimmed = url.trim_end_matches(|c: char| ".,!?;:)]}'\"".contains(c));
        out.push(URL_TOKEN.to_string());
        let tail = &url[trimmed.len()..];
        if !tail.is_empty() {
            scan(&tail.chars().collect::<Vec<_>>(), out);
        }
        return;
    }
    scan(&chunk.chars().collect::<Vec<_>>(), out);
}

fn starts_with_at(chars: &[char], i: usize, pat: &str) -> Option<usize> {
    let mut j = i;
    for pc in pat.chars() {
        if j >= chars.len() || chars[j] != pc {
            return None;
        }
        j += 1;
    }
    Some(j - i)
}

fn sentinel_at(chars: &[char], i: usize) -> Option<(&'static str, usize)> {
    SENTINELS.iter().find_map(|s| starts_with_at(chars, i, s).map(|len| (*s, len)))
}

// Emoticons ending in a letter or digit (`:p`, `<3`) must not run into a
// following word; the decision never looks left of `i`.
fn emoticon_at(chars: &[char], i: usize) -> Option<usize> {
    EMOTICONS.iter().find_map(|e| {
        let len = starts_with_at(chars, i, e)?;
        let end = i + len;
        let glued = chars[end - 1].is_alphanumeric() && end < chars.len() && chars[end].is_alphanumeric();
        (!glued).then_some(len)
    })
}

fn tag_at(chars: &[char], i: usize) -> bool {
    (chars[i] == '@' || chars[i] == '#') && chars.get(i + 1).copied().is_some_and(is_word_char)
}

fn word_end(chars: &[char], start: usize) -> (usize, bool) {
    let mut j = start;
    let mut numeric = true;
    while j < chars.len() {
        let c = chars[j];
        if is_word_char(c) {
            numeric &= c.is_ascii_digit();
            j += 1;
            continue;
        }
        let next = chars.get(j + 1).copied();
        if is_apostrophe(c) && j > start && chars[j - 1].is_alphanumeric() && next.is_some_and(char::is_alphanumeric) {
            numeric = false;
            j += 1;
            continue;
        }
        if (c == '.' || c == ',') && numeric && j > start && chars[j - 1].is_ascii_digit() && next.is_some_and(|n| n.is_ascii_digit()) {
            j += 1;
            continue;
        }
        break;
    }
    (j, numeric)
}

fn scan(chars: &[char], out: &mut Vec<String>) {
    let mut i = 0;
    while i < chars.len() {
        if let Some((tok, len)) = sentinel_at(chars, i) {
            out.push(tok.to_string());
            i += len;
        } else if let Some(len) = emoticon_at(chars, i) {
            out.push(chars[i..i + len].iter().collect());
            i += len;
        } else if tag_at(chars, i) {
            let mut j = i + 1;
            while j < chars.len() && is_word_char(chars[j]) {
                j += 1;
            }
            if chars[i] == '@' {
                out.push(USER_TOKEN.to_string());
            } else {
                out.push(chars[i..j].iter().collect());
            }
            i = j;
        } else if is_word_char(chars[i]) {
            let (j, numeric) = word_end(chars, i);
            if numeric {
                out.push(NUM_TOKEN.to_string());
            } else {
                out.push(chars[i..j].iter().collect());
            }
            i = j;
        } else {
            let mut j = i + 1;
            while j < chars.len() && !is_word_char(chars[j]) && !tag_at(chars, j) && sentinel_at(chars, j).is_none() && emoticon_at(chars, j).is_none() {
                j += 1;
            }
            out.push(chars[i..j].iter().collect());
            i = j;
        }
    }
}
