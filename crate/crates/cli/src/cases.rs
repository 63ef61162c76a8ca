//! `cases.json`: the list of volumes a command works on.
//!
//! Relative paths resolve against the file's own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vesselpipe::pipeline::CaseData;
use vesselpipe::volume::load_volume;
use vesselpipe::{Error, Mask3, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub id: String,
    pub cta: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vesselness: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseList {
    pub cases: Vec<CaseEntry>,
    #[serde(skip)]
    base: PathBuf,
}

/// A case with every volume loaded.
pub struct LoadedCase {
    pub data: CaseData,
    pub region: Option<Mask3>,
}

impl CaseList {
    pub fn new(cases: Vec<CaseEntry>) -> Self {
        Self {
            cases,
            base: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut list: CaseList =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        list.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if list.cases.is_empty() {
            return Err(Error::Argument(format!("{} lists no cases", path.display())));
        }
        Ok(list)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self).expect("case list serializes");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    fn required<'a>(&self, e: &'a CaseEntry, what: &str, p: &'a Option<PathBuf>) -> Result<PathBuf> {
        p.as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Argument(format!("case {}: no {what} path", e.id)))
    }

    /// Loads CTA, vesselness, label and the optional region of every case.
    pub fn load_all(&self) -> Result<Vec<LoadedCase>> {
        self.cases
            .iter()
            .map(|e| {
                let cta = load_volume(self.resolve(&e.cta))?;
                let vesselness = load_volume(self.required(e, "vesselness", &e.vesselness)?)?;
                let label = Mask3::from_volume(&load_volume(self.required(e, "label", &e.label)?)?);
                let region = match &e.region {
                    Some(p) => Some(Mask3::from_volume(&load_volume(self.resolve(p))?)),
                    None => None,
                };
                Ok(LoadedCase {
                    data: CaseData::new(e.id.clone(), cta, vesselness, label)?,
                    region,
                })
            })
            .collect()
    }

    /// Only the labels and regions, for sampling.
    pub fn load_labels(&self) -> Result<Vec<(String, Mask3, Option<Mask3>)>> {
        self.cases
            .iter()
            .map(|e| {
                let label = Mask3::from_volume(&load_volume(self.required(e, "label", &e.label)?)?);
                let region = match &e.region {
                    Some(p) => Some(Mask3::from_volume(&load_volume(self.resolve(p))?)),
                    None => None,
                };
                Ok((e.id.clone(), label, region))
            })
            .collect()
    }
}
