use super::ParseError;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Sym(&'static str),
    Newline,
    Eof,
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const SYMS: &[&str] = &[
    "=>", "==", "!=", "<=", ">=", "&&", "||", "(", ")", "{", "}", "[", "]", ",", ";", ":", "=", "<", ">", "+", "-",
    "*", "/", "%", "!", ".",
];

/// Newlines are significant only at top level and directly inside braces,
/// where they separate statements.
pub fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out: Vec<Token> = Vec::new();
    let mut nest: Vec<char> = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| ParseError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            if matches!(nest.last(), None | Some('{'))
                && !matches!(out.last().map(|t| &t.tok), Some(Tok::Newline) | None)
            {
                out.push(Token { tok: Tok::Newline, line, col });
            }
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token { tok: Tok::Ident(s), line: tl, col: tc });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut is_float = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                is_float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '-' || chars[j] == '+') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_float = true;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let tok = if is_float {
                Tok::Float(s.parse().map_err(|_| err(tl, tc, format!("bad number `{s}`")))?)
            } else {
                Tok::Int(s.parse().map_err(|_| err(tl, tc, format!("bad number `{s}`")))?)
            };
            out.push(Token { tok, line: tl, col: tc });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let sym = SYMS
            .iter()
            .find(|s| rest.starts_with(**s))
            .ok_or_else(|| err(tl, tc, format!("unexpected character `{c}`")))?;
        match *sym {
            "(" => nest.push('('),
            "[" => nest.push('['),
            "{" => nest.push('{'),
            ")" | "]" | "}" => {
                nest.pop();
                if *sym == "}" && matches!(out.last().map(|t| &t.tok), Some(Tok::Newline)) {
                    out.pop();
                }
            }
            _ => {}
        }
        i += sym.len();
        col += sym.len();
        out.push(Token { tok: Tok::Sym(sym), line: tl, col: tc });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newlines_only_between_statements() {
        let toks = lex("a = f(1,\n 2)\nb = 2.5e1").unwrap();
        let nl = toks.iter().filter(|t| t.tok == Tok::Newline).count();
        assert_eq!(nl, 1);
        assert!(toks.iter().any(|t| t.tok == Tok::Float(25.0)));
    }

    #[test]
    fn projection_lexes_as_dot_ident() {
        let toks: Vec<Tok> = lex("p._1").unwrap().into_iter().map(|t| t.tok).collect();
        assert_eq!(toks[1], Tok::Sym("."));
        assert_eq!(toks[2], Tok::Ident("_1".into()));
    }
}
