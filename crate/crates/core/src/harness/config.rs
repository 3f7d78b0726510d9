//! Flat `key = value` configuration with defaults and access tracking.

use std::cell::RefCell;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::grid::parse_real;

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeMap<String, String>>,
}

impl Config {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse(format!("config line {}: empty key", no + 1)));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Config { values, used: RefCell::new(BTreeMap::new()) })
    }

    /// `self` on top of `defaults`.
    pub fn over(&self, defaults: &Config) -> Config {
        let mut values = defaults.values.clone();
        values.extend(self.values.clone());
        Config { values, used: RefCell::new(BTreeMap::new()) }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    pub fn raw(&self, key: &str) -> Result<String> {
        let v = self.values.get(key).ok_or_else(|| Error::InvalidArgument(format!("missing config key {key}")))?;
        self.used.borrow_mut().insert(key.to_string(), v.clone());
        Ok(v.clone())
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        parse_real(&self.raw(key)?)
    }

    pub fn u32(&self, key: &str) -> Result<u32> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| Error::Parse(format!("{key}: expected a nonnegative integer, got {v}")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| Error::Parse(format!("{key}: expected a nonnegative integer, got {v}")))
    }

    /// Comma-separated reals; `a..b` expands to the integers `a..=b`.
    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.raw(key)?;
        let mut out = Vec::new();
        for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if let Some((a, b)) = part.split_once("..") {
                let a: i64 = a.trim().parse().map_err(|_| Error::Parse(format!("{key}: bad range {part}")))?;
                let b: i64 = b.trim().parse().map_err(|_| Error::Parse(format!("{key}: bad range {part}")))?;
                out.extend((a..=b).map(|x| x as f64));
            } else {
                out.push(parse_real(part)?);
            }
        }
        Ok(out)
    }

    pub fn u32_list(&self, key: &str) -> Result<Vec<u32>> {
        self.f64_list(key)?
            .into_iter()
            .map(|x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as u32)
                } else {
                    Err(Error::Parse(format!("{key}: expected nonnegative integers")))
                }
            })
            .collect()
    }

    /// Keys read so far with their values, in key order.
    pub fn used(&self) -> Vec<(String, String)> {
        self.used.borrow().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let d = Config::parse("a = 1\nb = 1/2 # half\nlist = 1, 3..5\n").unwrap();
        let c = Config::parse("a=7").unwrap().over(&d);
        assert_eq!(c.u32("a").unwrap(), 7);
        assert_eq!(c.f64("b").unwrap(), 0.5);
        assert_eq!(c.u32_list("list").unwrap(), vec![1, 3, 4, 5]);
        assert_eq!(c.used().len(), 3);
        assert!(c.f64("missing").is_err());
        assert!(Config::parse("novalue").is_err());
    }
}
