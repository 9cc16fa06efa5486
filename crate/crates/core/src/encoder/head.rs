//! Classification-head DSL: `Dense(width)` and `dr(p)` terms joined by `+`,
//! e.g. `"Dense(768)+dr(0.1)+Dense(768)"`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One head layer: a perceptron of the given width or a dropout gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HeadLayer {
    Dense(usize),
    Dropout(f64),
}

/// Ordered head layers; an implicit terminal projection maps the last
/// width to 2 logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub layers: Vec<HeadLayer>,
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.layers.iter().any(|l| matches!(l, HeadLayer::Dense(_))) {
            return Err(Error::InvalidParameter(
                "head spec needs at least one Dense layer".into(),
            ));
        }
        for layer in &self.layers {
            match *layer {
                HeadLayer::Dense(0) => {
                    return Err(Error::InvalidParameter("Dense width must be ≥ 1".into()))
                }
                HeadLayer::Dropout(p) if !(0.0..1.0).contains(&p) => {
                    return Err(Error::InvalidParameter(format!(
                        "dropout probability {p} outside [0, 1)"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Canonical text form: terms joined by `+`, no whitespace.
    pub fn render(&self) -> String {
        self.layers
            .iter()
            .map(|l| match l {
                HeadLayer::Dense(w) => format!("Dense({w})"),
                HeadLayer::Dropout(p) => format!("dr({p})"),
            })
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl std::str::FromStr for HeadSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<HeadSpec> {
        parse_head_spec(s)
    }
}

/// Parse the head DSL: grammar `term ('+' term)*` with
/// `term := Dense(<integer>) | dr(<decimal>)`; whitespace-insensitive.
/// Syntax errors carry the byte offset of the offending input.
pub fn parse_head_spec(text: &str) -> Result<HeadSpec> {
    let mut p = Parser { bytes: text.as_bytes(), pos: 0 };
    let mut layers = vec![p.term()?];
    loop {
        p.skip_ws();
        if p.at_end() {
            break;
        }
        p.expect(b'+')?;
        layers.push(p.term()?);
    }
    let spec = HeadSpec { layers };
    spec.validate()?;
    Ok(spec)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::HeadSpecSyntax {
            offset: self.pos,
            reason: reason.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn expect(&mut self, byte: u8) -> Result<()> {
        self.skip_ws();
        if self.bytes.get(self.pos) == Some(&byte) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected `{}`", byte as char))
        }
    }

    fn keyword(&mut self) -> Result<&'static str> {
        self.skip_ws();
        for kw in ["Dense", "dr"] {
            if self.bytes[self.pos..].starts_with(kw.as_bytes()) {
                self.pos += kw.len();
                return Ok(kw);
            }
        }
        self.fail("expected `Dense` or `dr`")
    }

    fn number(&mut self) -> Result<(f64, bool)> {
        self.skip_ws();
        let start = self.pos;
        let mut saw_dot = false;
        while let Some(&b) = self.bytes.get(self.pos) {
            match b {
                b'0'..=b'9' => self.pos += 1,
                b'.' if !saw_dot => {
                    saw_dot = true;
                    self.pos += 1;
                }
                _ => break,
            }
        }
        if self.pos == start {
            return self.fail("expected a number");
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("digits are ascii");
        match text.parse::<f64>() {
            Ok(v) => Ok((v, saw_dot)),
            Err(_) => {
                self.pos = start;
                self.fail(format!("malformed number `{text}`"))
            }
        }
    }

    fn term(&mut self) -> Result<HeadLayer> {
        let kw = self.keyword()?;
        self.expect(b'(')?;
        let at_number = {
            self.skip_ws();
            self.pos
        };
        let (value, saw_dot) = self.number()?;
        self.expect(b')')?;
        match kw {
            "Dense" => {
                if saw_dot || value.fract() != 0.0 {
                    self.pos = at_number;
                    return self.fail("Dense width must be an integer");
                }
                Ok(HeadLayer::Dense(value as usize))
            }
            _ => Ok(HeadLayer::Dropout(value)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dense() {
        let spec = parse_head_spec("Dense(768)").unwrap();
        assert_eq!(spec.layers, vec![HeadLayer::Dense(768)]);
    }

    #[test]
    fn dropout_then_dense() {
        let spec = parse_head_spec("dr(0.1)+Dense(768)").unwrap();
        assert_eq!(
            spec.layers,
            vec![HeadLayer::Dropout(0.1), HeadLayer::Dense(768)]
        );
    }

    #[test]
    fn three_terms() {
        let spec = parse_head_spec("Dense(768)+Dense(768)+dr(0.2)").unwrap();
        assert_eq!(spec.layers.len(), 3);
        assert_eq!(spec.layers[2], HeadLayer::Dropout(0.2));
    }

    #[test]
    fn whitespace_insensitive() {
        let spec = parse_head_spec("  Dense ( 64 )\t+ dr(0.5) ").unwrap();
        assert_eq!(
            spec.layers,
            vec![HeadLayer::Dense(64), HeadLayer::Dropout(0.5)]
        );
    }

    #[test]
    fn syntax_errors_carry_byte_offsets() {
        match parse_head_spec("Dense(768)+Blah(3)") {
            Err(Error::HeadSpecSyntax { offset, .. }) => assert_eq!(offset, 11),
            other => panic!("expected syntax error, got {other:?}"),
        }
        match parse_head_spec("Dense(768") {
            Err(Error::HeadSpecSyntax { offset, .. }) => assert_eq!(offset, 9),
            other => panic!("expected syntax error, got {other:?}"),
        }
        match parse_head_spec("Dense(7.5)") {
            Err(Error::HeadSpecSyntax { offset, reason }) => {
                assert_eq!(offset, 6);
                assert!(reason.contains("integer"));
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            parse_head_spec("dr(1.0)+Dense(3)"),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            parse_head_spec("Dense(0)"),
            Err(Error::InvalidParameter(_))
        ));
        // Dropout-only spec has no Dense layer.
        assert!(matches!(
            parse_head_spec("dr(0.1)"),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn render_round_trips_canonically() {
        for text in [
            "Dense(768)",
            "dr(0.1)+Dense(768)",
            "Dense(768)+Dense(768)+dr(0.2)",
            "Dense(256)+dr(0.25)+Dense(64)",
        ] {
            let spec = parse_head_spec(text).unwrap();
            assert_eq!(spec.render(), text);
            assert_eq!(parse_head_spec(&spec.render()).unwrap(), spec);
        }
        // Non-canonical spacing normalizes.
        let spec = parse_head_spec(" dr( 0.1 ) + Dense(8)").unwrap();
        assert_eq!(spec.render(), "dr(0.1)+Dense(8)");
    }
}
