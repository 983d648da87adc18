//! Ensemble manifests: one JSON file listing every realization of an ensemble.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SomName {
    Clb,
    Flags,
    Voronoi,
    Alphabet,
    /// Images produced outside this toolkit, e.g. by a generative model.
    External,
}

impl SomName {
    pub fn as_str(self) -> &'static str {
        match self {
            SomName::Clb => "clb",
            SomName::Flags => "flags",
            SomName::Voronoi => "voronoi",
            SomName::Alphabet => "alphabet",
            SomName::External => "external",
        }
    }

    /// Number of classes the SOM defines (1 for single-class SOMs).
    pub fn class_count(self) -> usize {
        match self {
            SomName::Flags | SomName::Voronoi => 8,
            _ => 1,
        }
    }
}

impl fmt::Display for SomName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SomName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clb" => Ok(SomName::Clb),
            "flags" => Ok(SomName::Flags),
            "voronoi" => Ok(SomName::Voronoi),
            "alphabet" => Ok(SomName::Alphabet),
            "external" => Ok(SomName::External),
            _ => Err(Error::UnknownSom(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub class: Option<u32>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub schema_version: u32,
    pub som_name: SomName,
    pub master_seed: u64,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
    pub entries: Vec<ManifestEntry>,
}

impl EnsembleManifest {
    pub fn new(som_name: SomName, master_seed: u64) -> Self {
        EnsembleManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            som_name,
            master_seed,
            params: BTreeMap::new(),
            entries: Vec::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text)?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "manifest schema version {} (supported: {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, base_dir: &Path, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }

    pub fn labels(&self) -> Vec<Option<u32>> {
        self.entries.iter().map(|e| e.class).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_schema_field_names() {
        let mut m = EnsembleManifest::new(SomName::Voronoi, 42);
        m.entries.push(ManifestEntry {
            path: "voronoi_000000.png".into(),
            class: Some(8),
            seed: 7,
        });
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["som_name"], "voronoi");
        assert_eq!(v["master_seed"], 42);
        assert_eq!(v["entries"][0]["class"], 8);
        assert_eq!(v["entries"][0]["seed"], 7);
        assert!(v["params"].is_object());
    }

    #[test]
    fn som_names_parse() {
        assert_eq!("Flags".parse::<SomName>().unwrap(), SomName::Flags);
        assert!(matches!(
            "fastmri".parse::<SomName>(),
            Err(Error::UnknownSom(_))
        ));
    }
}
