use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct WordToken {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Time-stamped words.
///
/// Text form: one `word<TAB>start_s<TAB>end_s` row per line. Blank lines and
/// lines starting with `#` are ignored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Transcript {
    tokens: Vec<WordToken>,
}

impl Transcript {
    pub fn new(tokens: Vec<WordToken>) -> Result<Self> {
        for (i, t) in tokens.iter().enumerate() {
            if !(t.start_s.is_finite() && t.end_s.is_finite() && t.start_s <= t.end_s) {
                return Err(Error::Transcript { line: i + 1, detail: format!("bad interval for {:?}", t.word) });
            }
            if i > 0 && t.start_s < tokens[i - 1].start_s {
                return Err(Error::Transcript { line: i + 1, detail: "start times must be non-decreasing".into() });
            }
        }
        Ok(Transcript { tokens })
    }

    pub fn tokens(&self) -> &[WordToken] {
        &self.tokens
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |detail: String| Error::Transcript { line: i + 1, detail };
            if fields.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            tokens.push(WordToken { word: fields[0].to_string(), start_s: num(fields[1])?, end_s: num(fields[2])? });
        }
        Transcript::new(tokens)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# word\tstart_s\tend_s\n");
        for t in &self.tokens {
            out.push_str(&format!("{}\t{}\t{}\n", t.word, t.start_s, t.end_s));
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Transcript::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "# header\nso\t0.5\t0.7\n\nnow\t3.2\t3.4\n";
        let t = Transcript::parse(text).unwrap();
        assert_eq!(t.tokens().len(), 2);
        assert_eq!(t.tokens()[1].word, "now");
        assert_eq!(Transcript::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(Transcript::parse("so\t1.0\n").is_err());
        assert!(Transcript::parse("so\t2.0\t1.0\n").is_err());
        assert!(Transcript::parse("a\t2.0\t2.5\nb\t1.0\t1.5\n").is_err());
    }
}
