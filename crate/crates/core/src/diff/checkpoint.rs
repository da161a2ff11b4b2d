//! Plain-text checkpoint container.
//!
//! ```text
//! d3po-checkpoint 1
//! header <key> <value>
//! tensor <name> <rows> <cols> <v0> <v1> ...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "d3po-checkpoint 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    header: Vec<(String, String)>,
    tensors: Vec<(String, Tensor)>,
}

fn check_key(key: &str) -> Result<()> {
    if key.is_empty() || key.contains(char::is_whitespace) {
        return Err(Error::Checkpoint(format!("invalid key {key:?}")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets a header entry, replacing any existing value for `key`.
    pub fn set_header(&mut self, key: &str, value: impl ToString) -> Result<()> {
        check_key(key)?;
        let value = value.to_string();
        if value.contains('\n') {
            return Err(Error::Checkpoint("header values must be single-line".into()));
        }
        match self.header.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.header.push((key.to_string(), value)),
        }
        Ok(())
    }

    pub fn header(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_header(&self, key: &str) -> Result<&str> {
        self.header(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing header {key}")))
    }

    pub fn push_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        check_key(name)?;
        if self.tensors.iter().any(|(n, _)| n == name) {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        self.tensors.push((name.to_string(), t.clone()));
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.header {
            let _ = writeln!(out, "header {k} {v}");
        }
        for (name, t) in &self.tensors {
            let _ = write!(out, "tensor {name} {} {}", t.rows(), t.cols());
            for v in t.data() {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Checkpoint("bad magic line".into()));
        }
        let mut ckpt = Checkpoint::new();
        for (lineno, line) in lines.enumerate() {
            let bad = |msg: &str| Error::Checkpoint(format!("line {}: {msg}", lineno + 2));
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("header ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.set_header(k, v)?;
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut it = rest.split(' ');
                let name = it.next().ok_or_else(|| bad("missing name"))?;
                let rows: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad row count"))?;
                let cols: usize = it
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad column count"))?;
                let data = it
                    .map(|s| s.parse::<f64>().map_err(|_| bad("bad float")))
                    .collect::<Result<Vec<_>>>()?;
                let t = Tensor::new(rows, cols, data).map_err(|_| bad("length mismatch"))?;
                ckpt.push_tensor(name, &t)?;
            } else {
                return Err(bad("unknown record"));
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(data in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..40)) {
            let n = data.len();
            let t = Tensor::new(1, n, data).unwrap();
            let mut c = Checkpoint::new();
            c.set_header("widths", "4,64,64,2").unwrap();
            c.push_tensor("actor.l0.weight", &t).unwrap();
            let back = Checkpoint::parse(&c.to_text()).unwrap();
            let got = back.tensor("actor.l0.weight").unwrap();
            for (a, b) in got.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.header("widths"), Some("4,64,64,2"));
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::parse("nope").is_err());
        assert!(Checkpoint::parse(&format!("{MAGIC}\ntensor x 2 2 1 2 3\n")).is_err());
    }
}
