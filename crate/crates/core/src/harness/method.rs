use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A method name such as `Gradient-U(3)R(3)` or `Fisher-SSD(10,0.1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// The trained model, untouched.
    Original,
    /// Retrained from scratch on the retained set.
    Target,
    /// `k` epochs of descent on the retained set.
    GradientR(usize),
    /// Ascent on the forget set, optionally followed by recovery epochs.
    GradientU { ascent: f64, recovery: Option<usize> },
    /// One-shot dampening with strength λ and selection threshold α.
    /// `Fisher-SSD(α, λ)`: selection threshold first, dampening strength second.
    FisherSsd { alpha: f64, lambda: f64 },
    /// Fisher-masked ascent, optionally followed by recovery epochs.
    FgU { ascent: f64, recovery: Option<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse method name {input:?} at byte {at}: {reason}")]
pub struct MethodParseError {
    pub input: String,
    pub at: usize,
    pub reason: String,
}

fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rec = |r: &Option<usize>| r.map(|m| format!("R({m})")).unwrap_or_default();
        match self {
            Method::Original => f.write_str("original"),
            Method::Target => f.write_str("target"),
            Method::GradientR(k) => write!(f, "Gradient-R({k})"),
            Method::GradientU { ascent, recovery } => write!(f, "Gradient-U({}){}", num(*ascent), rec(recovery)),
            Method::FisherSsd { alpha, lambda } => write!(f, "Fisher-SSD({},{})", num(*alpha), num(*lambda)),
            Method::FgU { ascent, recovery } => write!(f, "FG-U({}){}", num(*ascent), rec(recovery)),
        }
    }
}

struct Reader<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> MethodParseError {
        MethodParseError { input: self.src.to_string(), at: self.pos, reason: reason.into() }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), MethodParseError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.err(format!("expected {token:?}")))
        }
    }

    fn number(&mut self) -> Result<f64, MethodParseError> {
        self.skip_ws();
        let len = self.rest().find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.err("expected a number"));
        }
        let text = &self.rest()[..len];
        let v: f64 = text.parse().map_err(|_| self.err(format!("bad number {text:?}")))?;
        self.pos += len;
        Ok(v)
    }

    fn integer(&mut self) -> Result<usize, MethodParseError> {
        let start = self.pos;
        let v = self.number()?;
        if v.fract() != 0.0 {
            self.pos = start;
            return Err(self.err("recovery epochs must be a whole number"));
        }
        Ok(v as usize)
    }

    fn paren_number(&mut self) -> Result<f64, MethodParseError> {
        self.expect("(")?;
        let v = self.number()?;
        self.expect(")")?;
        Ok(v)
    }

    fn paren_integer(&mut self) -> Result<usize, MethodParseError> {
        self.expect("(")?;
        let v = self.integer()?;
        self.expect(")")?;
        Ok(v)
    }

    fn recovery_suffix(&mut self) -> Result<Option<usize>, MethodParseError> {
        if self.eat("R") {
            Ok(Some(self.paren_integer()?))
        } else {
            Ok(None)
        }
    }

    fn method(&mut self) -> Result<Method, MethodParseError> {
        let m = if self.eat("original") {
            Method::Original
        } else if self.eat("target") {
            Method::Target
        } else if self.eat("Gradient-R") {
            Method::GradientR(self.paren_integer()?)
        } else if self.eat("Gradient-U") {
            let ascent = self.paren_number()?;
            Method::GradientU { ascent, recovery: self.recovery_suffix()? }
        } else if self.eat("Fisher-SSD") {
            self.expect("(")?;
            let alpha = self.number()?;
            self.expect(",")?;
            let lambda = self.number()?;
            self.expect(")")?;
            Method::FisherSsd { alpha, lambda }
        } else if self.eat("FG-U") {
            let ascent = self.paren_number()?;
            Method::FgU { ascent, recovery: self.recovery_suffix()? }
        } else {
            return Err(self.err("unknown method"));
        };
        self.skip_ws();
        if !self.rest().is_empty() {
            return Err(self.err("trailing input"));
        }
        Ok(m)
    }
}

impl FromStr for Method {
    type Err = MethodParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Reader { src: s, pos: 0 }.method()
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Method {
    /// Whether a cell for this method needs the retrained target model.
    pub fn needs_target(&self) -> bool {
        matches!(self, Method::Target)
    }
}
