//! Checkpoint files: `#@ key = value` metadata lines followed by a
//! parameter set in its text format.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use puckmeta_autodiff::ParamSet;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub metadata: IndexMap<String, String>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, params: ParamSet) -> Self {
        Checkpoint {
            kind: kind.into(),
            metadata: IndexMap::new(),
            params,
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Input(format!("{} checkpoint lacks `{key}`", self.kind)))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Input(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#@ kind = {}\n", self.kind);
        for (k, v) in &self.metadata {
            out.push_str(&format!("#@ {k} = {v}\n"));
        }
        out.push_str(&self.params.to_text());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut metadata = IndexMap::new();
        for line in text.lines() {
            let Some(rest) = line.strip_prefix("#@") else {
                continue;
            };
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("bad metadata line `{line}`")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k == "kind" {
                kind = Some(v);
            } else {
                metadata.insert(k, v);
            }
        }
        let kind = kind.ok_or_else(|| Error::Input("checkpoint has no kind".into()))?;
        Ok(Checkpoint {
            kind,
            metadata,
            params: ParamSet::from_text(text)?,
        })
    }

    /// Loads a checkpoint, checking its kind.
    pub fn load(path: &Path, kind: &str) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let ck = Checkpoint::from_text(&fs::read_to_string(path)?)?;
        if ck.kind != kind {
            return Err(Error::Input(format!(
                "{} holds a {} checkpoint, expected {kind}",
                path.display(),
                ck.kind
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use puckmeta_autodiff::Tensor;

    #[test]
    fn round_trip() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![0.1, -2.5e-17, 3.0])).unwrap();
        let ck = Checkpoint::new("policy", p).with("hidden", 4).with("alpha", 0.0123);
        let back = Checkpoint::from_text(&ck.to_text()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get_parsed::<usize>("hidden").unwrap(), 4);
        assert!(back.get("missing").is_err());
    }
}
