use super::ast::Span;
use super::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    KwInt,
    KwIf,
    KwThen,
    KwElse,
    KwSparse,
    Semi,
    Comma,
    Assign,
    Plus,
    Minus,
    Star,
    SparseStar,
    HadamardStar,
    Geq,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Int(n) => format!("integer `{n}`"),
            Tok::Eof => "end of input".into(),
            t => format!("`{}`", t.text()),
        }
    }

    fn text(&self) -> &'static str {
        match self {
            Tok::KwInt => "int",
            Tok::KwIf => "if",
            Tok::KwThen => "then",
            Tok::KwElse => "else",
            Tok::KwSparse => "sparse",
            Tok::Semi => ";",
            Tok::Comma => ",",
            Tok::Assign => "=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::SparseStar => "|*|",
            Tok::HadamardStar => "<*>",
            Tok::Geq => ">=",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::Ident(_) | Tok::Int(_) | Tok::Eof => "",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            match &src[start..i] {
                "int" => Tok::KwInt,
                "if" => Tok::KwIf,
                "then" => Tok::KwThen,
                "else" => Tok::KwElse,
                "sparse" => Tok::KwSparse,
                id => Tok::Ident(id.to_string()),
            }
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let n = src[start..i]
                .parse::<i64>()
                .map_err(|_| ParseError::syntax(line, col, "integer too large"))?;
            Tok::Int(n)
        } else {
            let rest = &src[i..];
            let (t, len) = if rest.starts_with("|*|") {
                (Tok::SparseStar, 3)
            } else if rest.starts_with("<*>") {
                (Tok::HadamardStar, 3)
            } else if rest.starts_with(">=") {
                (Tok::Geq, 2)
            } else {
                let t = match c {
                    b';' => Tok::Semi,
                    b',' => Tok::Comma,
                    b'=' => Tok::Assign,
                    b'+' => Tok::Plus,
                    b'-' => Tok::Minus,
                    b'*' => Tok::Star,
                    b'(' => Tok::LParen,
                    b')' => Tok::RParen,
                    b'[' => Tok::LBracket,
                    b']' => Tok::RBracket,
                    b'{' => Tok::LBrace,
                    b'}' => Tok::RBrace,
                    _ => {
                        let ch = rest.chars().next().unwrap();
                        return Err(ParseError::unknown_token(line, col, ch));
                    }
                };
                (t, 1)
            };
            i += len;
            t
        };
        let span = Span {
            line,
            col,
            start,
            end: i,
        };
        col += src[start..i].chars().count() as u32;
        out.push(Token { tok, span });
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span {
            line,
            col,
            start: src.len(),
            end: src.len(),
        },
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compound_operators() {
        let t: Vec<Tok> = tokenize("Z = X |*| y <*> w >= q")
            .unwrap()
            .into_iter()
            .map(|t| t.tok)
            .collect();
        assert_eq!(t[3], Tok::SparseStar);
        assert_eq!(t[5], Tok::HadamardStar);
        assert_eq!(t[7], Tok::Geq);
        assert_eq!(*t.last().unwrap(), Tok::Eof);
    }

    #[test]
    fn positions_track_lines() {
        let t = tokenize("int x;\n  // note\n  x = 3").unwrap();
        let x2 = &t[3];
        assert_eq!(x2.tok, Tok::Ident("x".into()));
        assert_eq!((x2.span.line, x2.span.col), (3, 3));
    }

    #[test]
    fn unknown_character() {
        let e = tokenize("int x;\nx = y @ z").unwrap_err();
        assert_eq!((e.line, e.col), (2, 7));
    }
}
