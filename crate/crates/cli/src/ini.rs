//! Flat INI-style config: [section] headers, key = value lines, # or ;
//! comments. One file drives the whole pipeline so runs are self-describing.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};

#[derive(Clone, Debug, Default)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Ini> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .with_context(|| format!("line {}: unterminated section header", lineno + 1))?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got `{line}`", lineno + 1);
            };
            if current.is_empty() {
                bail!("line {}: key `{}` outside any [section]", lineno + 1, key.trim());
            }
            sections
                .get_mut(&current)
                .unwrap()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Ini { sections })
    }

    pub fn section(&self, name: &str) -> Section<'_> {
        Section {
            name: name.to_string(),
            map: self.sections.get(name),
        }
    }
}

pub struct Section<'a> {
    name: String,
    map: Option<&'a BTreeMap<String, String>>,
}

impl Section<'_> {
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.map.and_then(|m| m.get(key)).map(|s| s.as_str())
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|e| {
                anyhow::anyhow!("[{}] {key} = `{s}`: {e}", self.name)
            }),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let s = self
            .raw(key)
            .with_context(|| format!("[{}] missing required key `{key}`", self.name))?;
        s.parse()
            .map_err(|e| anyhow::anyhow!("[{}] {key} = `{s}`: {e}", self.name))
    }

    pub fn get_list<T: std::str::FromStr>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: Clone,
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|e| anyhow::anyhow!("[{}] {key} element `{p}`: {e}", self.name))
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_keys_comments() {
        let ini = Ini::parse(
            "# comment\n[cohort]\nn_subjects = 100\nshape = 32,32,32\n; other\n[vae]\nlr = 1e-4\n",
        )
        .unwrap();
        let c = ini.section("cohort");
        assert_eq!(c.get::<usize>("n_subjects", 0).unwrap(), 100);
        assert_eq!(c.get_list::<usize>("shape", &[]).unwrap(), vec![32, 32, 32]);
        assert_eq!(ini.section("vae").get::<f64>("lr", 0.0).unwrap(), 1e-4);
        // defaults for absent keys / sections
        assert_eq!(c.get::<u64>("seed", 7).unwrap(), 7);
        assert_eq!(ini.section("nope").get::<u64>("x", 3).unwrap(), 3);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(Ini::parse("[s]\njust a line\n").is_err());
        assert!(Ini::parse("key = outside\n").is_err());
        assert!(Ini::parse("[unterminated\n").is_err());
    }

    #[test]
    fn typed_errors_name_section_and_key() {
        let ini = Ini::parse("[a]\nx = notanumber\n").unwrap();
        let err = ini.section("a").get::<usize>("x", 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[a]") && msg.contains('x'));
    }
}
