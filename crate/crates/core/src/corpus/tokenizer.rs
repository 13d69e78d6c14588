//! Word-level tokenizer.
//!
//! A word is a maximal run of alphanumeric characters and apostrophes that
//! contains at least one alphanumeric character. Every other non-whitespace
//! character becomes a single punctuation token. Case is preserved.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Punct,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub kind: TokenKind,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        if is_word_char(c) {
            let mut end = start + c.len_utf8();
            let mut has_alnum = c.is_alphanumeric();
            while let Some(&(i, n)) = chars.peek() {
                if !is_word_char(n) {
                    break;
                }
                has_alnum |= n.is_alphanumeric();
                end = i + n.len_utf8();
                chars.next();
            }
            let span = &text[start..end];
            if has_alnum {
                out.push(Token {
                    text: span,
                    kind: TokenKind::Word,
                });
            } else {
                // a run of bare apostrophes is punctuation, one token each
                for (i, a) in span.char_indices() {
                    out.push(Token {
                        text: &span[i..i + a.len_utf8()],
                        kind: TokenKind::Punct,
                    });
                }
            }
        } else {
            out.push(Token {
                text: &text[start..start + c.len_utf8()],
                kind: TokenKind::Punct,
            });
        }
    }
    out
}
