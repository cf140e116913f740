//! Bounded-reachability properties and their textual form.
//!
//! ```text
//! property := "P" cmp bound "[" path "]"
//!           | "P" "=?" "[" path "]" cmp bound
//! path     := "F" "<=" horizon label
//! cmp      := "<" | "<=" | ">" | ">="
//! label    := ident | '"' ident '"'
//! ```
//!
//! Whitespace between tokens is ignored. The `P=?` query form is accepted and
//! normalised into the comparator form.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    /// `<` and `<=` cap the probability from above.
    pub fn is_upper_bound(self) -> bool {
        matches!(self, Comparator::Lt | Comparator::Le)
    }

    pub fn is_strict(self) -> bool {
        matches!(self, Comparator::Lt | Comparator::Gt)
    }

    pub fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Comparator::Lt => value < bound,
            Comparator::Le => value <= bound,
            Comparator::Gt => value > bound,
            Comparator::Ge => value >= bound,
        }
    }
}

/// `P <comparator> <bound> [ F<=horizon target_label ]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedReachProperty {
    pub name: String,
    pub target_label: String,
    pub horizon: u32,
    pub comparator: Comparator,
    pub bound: f64,
}

impl BoundedReachProperty {
    pub fn new(
        name: impl Into<String>,
        target_label: impl Into<String>,
        horizon: u32,
        comparator: Comparator,
        bound: f64,
    ) -> Self {
        BoundedReachProperty {
            name: name.into(),
            target_label: target_label.into(),
            horizon,
            comparator,
            bound,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.horizon >= 1 && (0.0..=1.0).contains(&self.bound) && is_identifier(&self.target_label)
    }
}

impl fmt::Display for BoundedReachProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_property(self))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseErrorKind {
    Syntax,
    Range,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} error at column {column}: {message}", match .kind { ParseErrorKind::Syntax => "syntax", ParseErrorKind::Range => "range" })]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// 1-based character column.
    pub column: usize,
    pub message: String,
}

impl ParseError {
    fn syntax(column: usize, message: impl Into<String>) -> Self {
        ParseError {
            kind: ParseErrorKind::Syntax,
            column,
            message: message.into(),
        }
    }

    fn range(column: usize, message: impl Into<String>) -> Self {
        ParseError {
            kind: ParseErrorKind::Range,
            column,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Quoted(String),
    Number(String),
    Cmp(Comparator),
    Query,
    LBracket,
    RBracket,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Quoted(s) => format!("label \"{s}\""),
            Tok::Number(s) => format!("number `{s}`"),
            Tok::Cmp(c) => format!("`{}`", c.symbol()),
            Tok::Query => "`=?`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if is_ident_start(c)) && chars.all(is_ident_continue)
}

fn tokenize(input: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = input.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '[' => {
                out.push((Tok::LBracket, col));
                i += 1;
            }
            ']' => {
                out.push((Tok::RBracket, col));
                i += 1;
            }
            '<' | '>' => {
                let eq = chars.get(i + 1) == Some(&'=');
                let cmp = match (c, eq) {
                    ('<', false) => Comparator::Lt,
                    ('<', true) => Comparator::Le,
                    ('>', false) => Comparator::Gt,
                    _ => Comparator::Ge,
                };
                out.push((Tok::Cmp(cmp), col));
                i += if eq { 2 } else { 1 };
            }
            '=' => {
                if chars.get(i + 1) == Some(&'?') {
                    out.push((Tok::Query, col));
                    i += 2;
                } else {
                    return Err(ParseError::syntax(col, "expected `=?`"));
                }
            }
            '"' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != '"' {
                    j += 1;
                }
                if j == chars.len() {
                    return Err(ParseError::syntax(col, "unterminated label"));
                }
                let text: String = chars[start..j].iter().collect();
                if !is_identifier(&text) {
                    return Err(ParseError::syntax(col + 1, format!("`{text}` is not an identifier")));
                }
                out.push((Tok::Quoted(text), col));
                i = j + 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                if text == "." {
                    return Err(ParseError::syntax(col, "expected a number"));
                }
                out.push((Tok::Number(text), col));
            }
            c if is_ident_start(c) => {
                let start = i;
                while i < chars.len() && is_ident_continue(chars[i]) {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), col));
            }
            other => return Err(ParseError::syntax(col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(_, c)| *c)
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        let found = self.peek().map_or_else(|| "end of input".to_string(), Tok::describe);
        ParseError::syntax(self.column(), format!("expected {expected}, found {found}"))
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.unexpected(&format!("`{kw}`"))),
        }
    }

    fn comparator(&mut self) -> Result<Comparator, ParseError> {
        match self.peek() {
            Some(Tok::Cmp(c)) => {
                let c = *c;
                self.pos += 1;
                Ok(c)
            }
            _ => Err(self.unexpected("a comparator")),
        }
    }

    fn bound(&mut self) -> Result<f64, ParseError> {
        let col = self.column();
        match self.peek() {
            Some(Tok::Number(text)) => {
                let value: f64 = text
                    .parse()
                    .map_err(|_| ParseError::syntax(col, format!("malformed number `{text}`")))?;
                if !(0.0..=1.0).contains(&value) {
                    return Err(ParseError::range(col, format!("bound {text} outside [0,1]")));
                }
                self.pos += 1;
                Ok(value)
            }
            _ => Err(self.unexpected("a probability bound")),
        }
    }

    fn horizon(&mut self) -> Result<u32, ParseError> {
        let col = self.column();
        match self.peek() {
            Some(Tok::Number(text)) => {
                if !text.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(ParseError::syntax(col, format!("step bound `{text}` is not an integer")));
                }
                let k: u32 = text
                    .parse()
                    .map_err(|_| ParseError::range(col, format!("step bound {text} is too large")))?;
                if k == 0 {
                    return Err(ParseError::range(col, "step bound must be positive"));
                }
                self.pos += 1;
                Ok(k)
            }
            _ => Err(self.unexpected("a step bound")),
        }
    }

    fn label(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) | Some(Tok::Quoted(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.unexpected("a failure label")),
        }
    }

    fn path(&mut self) -> Result<(u32, String), ParseError> {
        self.expect(Tok::LBracket, "`[`")?;
        self.keyword("F")?;
        self.expect(Tok::Cmp(Comparator::Le), "`<=`")?;
        let k = self.horizon()?;
        let label = self.label()?;
        self.expect(Tok::RBracket, "`]`")?;
        Ok((k, label))
    }
}

pub fn parse_property(name: &str, expression: &str) -> Result<BoundedReachProperty, ParseError> {
    let toks = tokenize(expression)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end_col: expression.chars().count() + 1,
    };
    p.keyword("P")?;
    let (comparator, bound, horizon, label) = if p.peek() == Some(&Tok::Query) {
        p.pos += 1;
        let (k, label) = p.path()?;
        let cmp = p.comparator()?;
        let bound = p.bound()?;
        (cmp, bound, k, label)
    } else {
        let cmp = p.comparator()?;
        let bound = p.bound()?;
        let (k, label) = p.path()?;
        (cmp, bound, k, label)
    };
    if p.peek().is_some() {
        return Err(p.unexpected("end of input"));
    }
    Ok(BoundedReachProperty {
        name: name.to_string(),
        target_label: label,
        horizon,
        comparator,
        bound,
    })
}

/// Canonical single-spaced text, e.g. `P < 0.95 [ F<=50 f2 ]`.
pub fn format_property(prop: &BoundedReachProperty) -> String {
    format!(
        "P {} {} [ F<={} {} ]",
        prop.comparator.symbol(),
        prop.bound,
        prop.horizon,
        prop.target_label
    )
}

/// One entry of a properties file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertySource {
    pub name: String,
    pub expression: String,
}

impl From<&BoundedReachProperty> for PropertySource {
    fn from(p: &BoundedReachProperty) -> Self {
        PropertySource {
            name: p.name.clone(),
            expression: format_property(p),
        }
    }
}

/// Parses a properties file: a JSON array of `{name, expression}`.
pub fn load_properties(json: &str) -> crate::Result<Vec<BoundedReachProperty>> {
    let sources: Vec<PropertySource> = crate::error::from_json_str(json)?;
    sources
        .iter()
        .map(|s| parse_property(&s.name, &s.expression).map_err(Into::into))
        .collect()
}

pub fn properties_to_json(props: &[BoundedReachProperty]) -> String {
    let sources: Vec<PropertySource> = props.iter().map(PropertySource::from).collect();
    serde_json::to_string_pretty(&sources).expect("property sources serialise")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_failure_bound() {
        let p = parse_property("phi1", "P < 0.99 [ F<=50 f1 ]").unwrap();
        assert_eq!(p, BoundedReachProperty::new("phi1", "f1", 50, Comparator::Lt, 0.99));
    }

    #[test]
    fn parses_lower_bound() {
        let p = parse_property("success", "P >= 0.96 [ F<=50 success ]").unwrap();
        assert_eq!(p.comparator, Comparator::Ge);
        assert_eq!(p.bound, 0.96);
        assert!(!p.comparator.is_upper_bound());
    }

    #[test]
    fn whitespace_is_insignificant() {
        let tight = parse_property("x", "P<0.99[F<=50 f1]").unwrap();
        let loose = parse_property("x", "  P   <  0.99  [  F  <=  50   f1  ]  ").unwrap();
        assert_eq!(tight, loose);
    }

    #[test]
    fn query_alias_is_normalised() {
        let q = parse_property("phi2", "P=? [ F<=50 \"f2\" ] < 0.95").unwrap();
        assert_eq!(q, parse_property("phi2", "P < 0.95 [ F<=50 f2 ]").unwrap());
        assert_eq!(format_property(&q), "P < 0.95 [ F<=50 f2 ]");
    }

    #[test]
    fn bound_out_of_range() {
        let err = parse_property("x", "P < 1.5 [ F<=10 f1 ]").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Range);
        assert_eq!(err.column, 5);
    }

    #[test]
    fn zero_horizon_is_a_range_error() {
        let err = parse_property("x", "P < 0.5 [ F<=0 f1 ]").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Range);
        assert_eq!(err.column, 14);
    }

    #[test]
    fn syntax_errors_carry_columns() {
        let err = parse_property("x", "P < 0.5 [ G<=3 f1 ]").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Syntax);
        assert_eq!(err.column, 11);

        let err = parse_property("x", "P < 0.5 [ F<=3 f1").unwrap_err();
        assert_eq!(err.column, 18);

        let err = parse_property("x", "P < 0.5 [ F<=3.5 f1 ]").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Syntax);

        let err = parse_property("x", "P < 0.5 [ F<=3 1f ]").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::Syntax);
    }

    #[test]
    fn formats_canonically() {
        let phi2 = BoundedReachProperty::new("phi2", "f2", 50, Comparator::Lt, 0.95);
        assert_eq!(format_property(&phi2), "P < 0.95 [ F<=50 f2 ]");
        let one = BoundedReachProperty::new("x", "f", 3, Comparator::Le, 1.0);
        assert_eq!(format_property(&one), "P <= 1 [ F<=3 f ]");
        assert_eq!(parse_property("x", &format_property(&one)).unwrap(), one);
    }

    #[test]
    fn properties_file_round_trip() {
        let props = vec![
            parse_property("phi1", "P < 0.99 [ F<=50 f1 ]").unwrap(),
            parse_property("phi2", "P < 0.95 [ F<=50 f2 ]").unwrap(),
        ];
        assert_eq!(load_properties(&properties_to_json(&props)).unwrap(), props);
    }

    fn arb_property() -> impl Strategy<Value = BoundedReachProperty> {
        (
            "[A-Za-z_][A-Za-z0-9_]{0,8}",
            1u32..100_000,
            prop_oneof![Just(Comparator::Lt), Just(Comparator::Le), Just(Comparator::Gt), Just(Comparator::Ge)],
            0.0f64..=1.0,
        )
            .prop_map(|(label, k, cmp, bound)| BoundedReachProperty::new("p", label, k, cmp, bound))
    }

    proptest! {
        #[test]
        fn parse_inverts_format(p in arb_property()) {
            let text = format_property(&p);
            let back = parse_property("p", &text).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(format_property(&back), text);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let text = String::from_utf8_lossy(&bytes);
            let _ = parse_property("fuzz", &text);
        }

        #[test]
        fn near_miss_strings_yield_structured_errors(s in "[P<>=?\\[\\]F0-9. a-z\"]{0,24}") {
            if let Err(e) = parse_property("fuzz", &s) {
                prop_assert!(e.column >= 1 && e.column <= s.chars().count() + 1);
            }
        }
    }
}
