//! S-expression reader for the surface language. Every node carries a
//! byte span into the input so later phases can point at their source.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Span {
        Span { start, end }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    Num(f64),
    Bool(bool),
    Nil,
    Str(String),
    Symbol(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceExpr {
    pub node: ExprNode,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Atom(Atom),
    List(Vec<SourceExpr>),
}

impl SourceExpr {
    pub fn as_symbol(&self) -> Option<&str> {
        match &self.node {
            ExprNode::Atom(Atom::Symbol(s)) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[SourceExpr]> {
        match &self.node {
            ExprNode::List(items) => Some(items),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntaxError {
    pub span: Span,
    pub expected: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "syntax error at {}..{}: expected {}",
            self.span.start, self.span.end, self.expected
        )
    }
}

fn err(span: Span, expected: &str) -> SyntaxError {
    SyntaxError {
        span,
        expected: String::from(expected),
    }
}

struct Reader<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(src: &'a str) -> Reader<'a> {
        Reader {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(b';') => {
                    while let Some(c) = self.peek() {
                        self.pos += 1;
                        if c == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
    }

    fn read_expr(&mut self) -> Result<SourceExpr, SyntaxError> {
        self.skip_trivia();
        let start = self.pos;
        match self.peek() {
            None => Err(err(Span::new(start, start), "an expression")),
            Some(b'(') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_trivia();
                    match self.peek() {
                        Some(b')') => {
                            self.pos += 1;
                            return Ok(SourceExpr {
                                node: ExprNode::List(items),
                                span: Span::new(start, self.pos),
                            });
                        }
                        None => return Err(err(Span::new(start, self.pos), "`)`")),
                        _ => items.push(self.read_expr()?),
                    }
                }
            }
            Some(b')') => Err(err(Span::new(start, start + 1), "an expression, not `)`")),
            Some(b'"') => self.read_string(start),
            Some(_) => self.read_atom(start),
        }
    }

    fn read_string(&mut self, start: usize) -> Result<SourceExpr, SyntaxError> {
        self.pos += 1;
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(err(Span::new(start, self.pos), "closing `\"`")),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(SourceExpr {
                        node: ExprNode::Atom(Atom::Str(out)),
                        span: Span::new(start, self.pos),
                    });
                }
                Some(b'\\') => {
                    self.pos += 1;
                    let c = self
                        .peek()
                        .ok_or_else(|| err(Span::new(self.pos, self.pos), "escape character"))?;
                    self.pos += 1;
                    out.push(match c {
                        b'n' => '\n',
                        b't' => '\t',
                        b'"' => '"',
                        b'\\' => '\\',
                        _ => {
                            return Err(err(
                                Span::new(self.pos - 2, self.pos),
                                "one of n, t, \\\", \\\\",
                            ))
                        }
                    });
                }
                Some(_) => {
                    // input is valid UTF-8, copy one code point through
                    let ch_start = self.pos;
                    let mut end = self.pos + 1;
                    while end < self.src.len() && (self.src[end] & 0xc0) == 0x80 {
                        end += 1;
                    }
                    out.push_str(core::str::from_utf8(&self.src[ch_start..end]).unwrap_or("?"));
                    self.pos = end;
                }
            }
        }
    }

    fn read_atom(&mut self, start: usize) -> Result<SourceExpr, SyntaxError> {
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() || matches!(c, b'(' | b')' | b';' | b'"') {
                break;
            }
            self.pos += 1;
        }
        let span = Span::new(start, self.pos);
        let token = core::str::from_utf8(&self.src[start..self.pos])
            .map_err(|_| err(span, "valid UTF-8"))?;
        let atom = match token {
            "true" => Atom::Bool(true),
            "false" => Atom::Bool(false),
            "nil" => Atom::Nil,
            _ => {
                let bytes = token.as_bytes();
                let numeric = bytes[0].is_ascii_digit()
                    || (bytes.len() > 1
                        && matches!(bytes[0], b'-' | b'+')
                        && bytes[1].is_ascii_digit());
                if numeric {
                    Atom::Num(token.parse::<f64>().map_err(|_| err(span, "a number"))?)
                } else {
                    Atom::Symbol(String::from(token))
                }
            }
        };
        Ok(SourceExpr {
            node: ExprNode::Atom(atom),
            span,
        })
    }
}

/// Parse every top-level expression in the input.
pub fn parse_all(text: &str) -> Result<Vec<SourceExpr>, SyntaxError> {
    let mut r = Reader::new(text);
    let mut out = Vec::new();
    loop {
        r.skip_trivia();
        if r.peek().is_none() {
            break;
        }
        out.push(r.read_expr()?);
    }
    if out.is_empty() {
        return Err(err(Span::new(0, text.len()), "at least one expression"));
    }
    Ok(out)
}

/// Parse exactly one expression (trailing trivia allowed).
pub fn parse(text: &str) -> Result<SourceExpr, SyntaxError> {
    let mut r = Reader::new(text);
    let e = r.read_expr()?;
    r.skip_trivia();
    if r.peek().is_some() {
        return Err(err(Span::new(r.pos, r.pos + 1), "end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_application() {
        let e = parse("(+ 1 2)").unwrap();
        let items = e.as_list().unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[0].as_symbol(), Some("+"));
        assert_eq!(items[1].node, ExprNode::Atom(Atom::Num(1.0)));
    }

    #[test]
    fn unbalanced_paren_is_syntax_error() {
        assert!(parse("(+ 1 2").is_err());
        assert!(parse(")").is_err());
    }

    #[test]
    fn spans_cover_input() {
        let text = "(print \"hi\")";
        let e = parse(text).unwrap();
        assert_eq!(e.span, Span::new(0, text.len()));
    }

    #[test]
    fn keywords_and_numbers() {
        assert_eq!(parse("true").unwrap().node, ExprNode::Atom(Atom::Bool(true)));
        assert_eq!(parse("nil").unwrap().node, ExprNode::Atom(Atom::Nil));
        assert_eq!(parse("-4.5").unwrap().node, ExprNode::Atom(Atom::Num(-4.5)));
        assert_eq!(
            parse("-").unwrap().node,
            ExprNode::Atom(Atom::Symbol("-".into()))
        );
    }

    #[test]
    fn comments_are_trivia() {
        let es = parse_all("; leading\n1 ; one\n2\n").unwrap();
        assert_eq!(es.len(), 2);
    }

    #[test]
    fn string_escapes() {
        let e = parse(r#""a\nb\"c""#).unwrap();
        assert_eq!(e.node, ExprNode::Atom(Atom::Str("a\nb\"c".into())));
    }
}
