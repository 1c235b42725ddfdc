//! Surface syntax: `head :- atom, atom, … .` for queries, and one
//! `Relation(attr1*, attr2, …)` line per relation for schemas (`*` marks a
//! key attribute). Constants are single-quoted strings or bare integers;
//! variables are bare identifiers starting with a letter.

use std::fmt;

use thiserror::Error;

use super::{Atom, ConjunctiveQuery, Schema, Term};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown relation {0}")]
    UnknownRelation(String),
    #[error("relation {relation} has arity {expected}, atom has {got} terms")]
    ArityMismatch {
        relation: String,
        expected: usize,
        got: usize,
    },
    #[error("head variable {0} does not occur in the body")]
    UnsafeHead(String),
    #[error("variable {0} does not occur in the query")]
    UnknownVariable(String),
}

/// Non-fatal findings surfaced alongside a successful parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    /// Two body atoms were byte-identical; the duplicate was dropped.
    DuplicateAtomCollapsed(String),
}

impl fmt::Display for ParseWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseWarning::DuplicateAtomCollapsed(atom) => {
                write!(f, "duplicate atom {atom} collapsed")
            }
        }
    }
}

#[derive(Debug)]
pub struct ParsedQuery {
    pub query: ConjunctiveQuery,
    pub warnings: Vec<ParseWarning>,
}

/// Parses a schema file: one relation per line, blank lines and `#` comments
/// allowed.
pub fn parse_schema(text: &str) -> Result<Schema, QueryError> {
    let mut schema = Schema::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        parse_schema_line(line, &mut schema)
            .map_err(|e| QueryError::Syntax(format!("line {}: {e}", lineno + 1)))?;
    }
    Ok(schema)
}

fn parse_schema_line(line: &str, schema: &mut Schema) -> Result<(), String> {
    let open = line.find('(').ok_or("expected '(' after relation name")?;
    let name = line[..open].trim();
    if !is_identifier(name) {
        return Err(format!("invalid relation name {name:?}"));
    }
    let rest = line[open + 1..].trim_end();
    let close = rest.rfind(')').ok_or("expected closing ')'")?;
    if !rest[close + 1..].trim().is_empty() {
        return Err("trailing input after ')'".to_string());
    }
    let mut attributes = Vec::new();
    let mut key_positions = Vec::new();
    for (i, piece) in rest[..close].split(',').enumerate() {
        let mut attr = piece.trim();
        if let Some(stripped) = attr.strip_suffix('*') {
            key_positions.push(i);
            attr = stripped.trim_end();
        }
        if !is_identifier(attr) {
            return Err(format!("invalid attribute name {attr:?}"));
        }
        attributes.push(attr);
    }
    schema
        .add_relation(name, &attributes, &key_positions)
        .map_err(|e| e.to_string())
}

/// Parses a single-rule query against a schema. The parser accepts self-joins;
/// downstream stages reject them where the constructions need self-join-free
/// input.
pub fn parse_query(text: &str, schema: &Schema) -> Result<ParsedQuery, QueryError> {
    let tokens = lex(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let parsed = p.rule(schema)?;
    p.expect_end()?;
    Ok(parsed)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Ident(String),
    Str(String),
    Int(String),
    LParen,
    RParen,
    Comma,
    Implies,
    Dot,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "{s}"),
            Token::Str(s) => write!(f, "'{s}'"),
            Token::Int(s) => write!(f, "{s}"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
            Token::Comma => write!(f, ","),
            Token::Implies => write!(f, ":-"),
            Token::Dot => write!(f, "."),
        }
    }
}

fn lex(text: &str) -> Result<Vec<Token>, QueryError> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                tokens.push(Token::LParen);
            }
            ')' => {
                chars.next();
                tokens.push(Token::RParen);
            }
            ',' => {
                chars.next();
                tokens.push(Token::Comma);
            }
            '.' => {
                chars.next();
                tokens.push(Token::Dot);
            }
            ':' => {
                chars.next();
                match chars.next() {
                    Some('-') => tokens.push(Token::Implies),
                    _ => return Err(QueryError::Syntax("expected ':-'".to_string())),
                }
            }
            '\'' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('\'') => {
                            // '' escapes a quote inside the constant
                            if chars.peek() == Some(&'\'') {
                                chars.next();
                                s.push('\'');
                            } else {
                                break;
                            }
                        }
                        Some(c) => s.push(c),
                        None => {
                            return Err(QueryError::Syntax(
                                "unterminated string constant".to_string(),
                            ))
                        }
                    }
                }
                tokens.push(Token::Str(s));
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_digit() {
                        s.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Int(s));
            }
            c if c.is_ascii_alphabetic() => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        s.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Ident(s));
            }
            other => {
                return Err(QueryError::Syntax(format!("unexpected character {other:?}")));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token, QueryError> {
        let t = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| QueryError::Syntax("unexpected end of input".to_string()))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: Token) -> Result<(), QueryError> {
        let got = self.next()?;
        if got == want {
            Ok(())
        } else {
            Err(QueryError::Syntax(format!("expected {want}, found {got}")))
        }
    }

    fn expect_end(&mut self) -> Result<(), QueryError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(QueryError::Syntax(format!("trailing input at {t}"))),
        }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        match self.next()? {
            Token::Ident(s) => Ok(s),
            other => Err(QueryError::Syntax(format!(
                "expected identifier, found {other}"
            ))),
        }
    }

    fn rule(&mut self, schema: &Schema) -> Result<ParsedQuery, QueryError> {
        let name = self.ident()?;
        self.expect(Token::LParen)?;
        let mut head = Vec::new();
        if self.peek() != Some(&Token::RParen) {
            loop {
                let v = self.ident()?;
                if head.contains(&v) {
                    return Err(QueryError::Syntax(format!(
                        "head variable {v} listed twice"
                    )));
                }
                head.push(v);
                match self.next()? {
                    Token::Comma => continue,
                    Token::RParen => break,
                    other => {
                        return Err(QueryError::Syntax(format!(
                            "expected ',' or ')', found {other}"
                        )))
                    }
                }
            }
        } else {
            self.expect(Token::RParen)?;
        }
        self.expect(Token::Implies)?;

        let mut body: Vec<Atom> = Vec::new();
        let mut warnings = Vec::new();
        loop {
            let atom = self.atom(schema)?;
            if body.contains(&atom) {
                warnings.push(ParseWarning::DuplicateAtomCollapsed(atom.to_string()));
            } else {
                body.push(atom);
            }
            match self.next()? {
                Token::Comma => continue,
                Token::Dot => break,
                other => {
                    return Err(QueryError::Syntax(format!(
                        "expected ',' or '.', found {other}"
                    )))
                }
            }
        }

        let query = ConjunctiveQuery { name, head, body };
        let body_vars = query.vars();
        for v in &query.head {
            if !body_vars.contains(v.as_str()) {
                return Err(QueryError::UnsafeHead(v.clone()));
            }
        }
        Ok(ParsedQuery { query, warnings })
    }

    fn atom(&mut self, schema: &Schema) -> Result<Atom, QueryError> {
        let relation = self.ident()?;
        let decl = schema
            .relation(&relation)
            .ok_or_else(|| QueryError::UnknownRelation(relation.clone()))?;
        self.expect(Token::LParen)?;
        let mut terms = Vec::new();
        loop {
            match self.next()? {
                Token::Ident(v) => terms.push(Term::Var(v)),
                Token::Str(c) => terms.push(Term::Const(c)),
                Token::Int(c) => terms.push(Term::Const(c)),
                other => {
                    return Err(QueryError::Syntax(format!(
                        "expected term, found {other}"
                    )))
                }
            }
            match self.next()? {
                Token::Comma => continue,
                Token::RParen => break,
                other => {
                    return Err(QueryError::Syntax(format!(
                        "expected ',' or ')', found {other}"
                    )))
                }
            }
        }
        if terms.len() != decl.arity() {
            return Err(QueryError::ArityMismatch {
                relation,
                expected: decl.arity(),
                got: terms.len(),
            });
        }
        Ok(Atom {
            relation,
            terms,
            key_positions: decl.key_positions.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        parse_schema(
            "Employee(employee_id*, office_city, wfh_city)\n\
             Manager(office_city*, manager_id, start_year)\n\
             Contact(office_city*, contact_id)\n\
             R8(c1*, c2*, c3)\n",
        )
        .unwrap()
    }

    #[test]
    fn schema_round_trip() {
        let s = schema();
        let reparsed = parse_schema(&s.to_string()).unwrap();
        assert_eq!(s, reparsed);
        let r8 = s.relation("R8").unwrap();
        assert_eq!(r8.key_positions, vec![0, 1]);
        assert_eq!(r8.key_attributes(), vec!["c1", "c2"]);
    }

    #[test]
    fn schema_rejects_bad_lines() {
        assert!(parse_schema("R(a, a*)").is_err());
        assert!(parse_schema("R(a, b)").is_err()); // no key attribute
        assert!(parse_schema("R(a*, b) extra").is_err());
        assert!(parse_schema("R(a*)\nR(b*)").is_err());
    }

    #[test]
    fn parse_print_round_trip() {
        let s = schema();
        let text = "q(x) :- Employee(x, y, z), Manager(y, w, '2020').";
        let q = parse_query(text, &s).unwrap().query;
        let reparsed = parse_query(&q.to_string(), &s).unwrap().query;
        assert_eq!(q, reparsed);
    }

    #[test]
    fn bare_integers_are_string_constants() {
        let s = schema();
        let q = parse_query("q() :- Manager(y, x, 2020).", &s).unwrap().query;
        assert_eq!(q.body[0].terms[2], Term::Const("2020".into()));
    }

    #[test]
    fn parser_errors() {
        let s = schema();
        assert!(matches!(
            parse_query("q() :- Nope(x).", &s),
            Err(QueryError::UnknownRelation(_))
        ));
        assert!(matches!(
            parse_query("q() :- Contact(x).", &s),
            Err(QueryError::ArityMismatch { .. })
        ));
        assert!(matches!(
            parse_query("q(v) :- Contact(x, y).", &s),
            Err(QueryError::UnsafeHead(_))
        ));
        assert!(parse_query("q() :- Contact(x, y)", &s).is_err()); // missing dot
    }

    #[test]
    fn duplicate_atoms_collapse_with_warning() {
        let s = schema();
        let parsed = parse_query("q() :- Contact(x, y), Contact(x, y).", &s).unwrap();
        assert_eq!(parsed.query.body.len(), 1);
        assert_eq!(parsed.warnings.len(), 1);
        // a self-join with different terms is kept
        let parsed = parse_query("q() :- Contact(x, y), Contact(y, x).", &s).unwrap();
        assert_eq!(parsed.query.body.len(), 2);
        assert!(!parsed.query.is_self_join_free());
    }
}
