//! Track metadata shared by the synthetic catalog, external ingestion and the
//! split builder, plus the JSON-lines manifest format and stem loading.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{wav, ActivityProvider, AudioClip, EnergyHeuristic, SourceKind, VocalActivity};
use crate::error::{Error, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Which experiment pool a synthetic track was generated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Contrastive,
    Identification,
    Clone,
}

/// Parameters that re-render a synthetic track bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRecipe {
    pub seed: u64,
    pub style_family: u32,
    pub perturbation: f64,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub track_id: String,
    pub singer_id: String,
    pub genre: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrumental_style_id: Option<u32>,
    pub duration_s: f64,
    pub vocal_mask: Vec<bool>,
    pub vocal_fraction: f64,
    #[serde(default)]
    pub is_clone: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clone_source_singer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<Pool>,
    /// Stem file paths relative to the manifest directory.
    #[serde(default)]
    pub stems: BTreeMap<SourceKind, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render: Option<RenderRecipe>,
}

impl CatalogEntry {
    pub fn activity(&self) -> VocalActivity {
        VocalActivity::from_flags(self.vocal_mask.clone())
    }

    /// Singer whose voice the track carries (the source singer for clones).
    pub fn label(&self) -> &str {
        self.clone_source_singer.as_deref().unwrap_or(&self.singer_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub generator_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogManifest {
    pub header: ManifestHeader,
    pub entries: Vec<CatalogEntry>,
}

impl CatalogManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        let mut real_singers = std::collections::HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.track_id.as_str()) {
                return Err(Error::invalid(format!("duplicate track id `{}`", e.track_id)));
            }
            if !e.is_clone {
                real_singers.insert(e.singer_id.as_str());
            }
        }
        for e in self.entries.iter().filter(|e| e.is_clone) {
            match &e.clone_source_singer {
                Some(src) if real_singers.contains(src.as_str()) => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "clone `{}` references a singer without real tracks",
                        e.track_id
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: ManifestHeader = serde_json::from_str(lines.next().ok_or_else(|| Error::Format {
            what: "manifest",
            detail: "empty file".into(),
        })?)?;
        if header.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format {
                what: "manifest",
                detail: format!("unsupported schema version {}", header.schema_version),
            });
        }
        let entries = lines.map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        let m = Self { header, entries };
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(&text)
    }
}

/// Writes via a temporary sibling and rename so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("tmp~");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Supplies the audio of catalog entries.
pub trait StemSource: Sync {
    fn load(&self, entry: &CatalogEntry, kinds: &[SourceKind]) -> Result<Vec<AudioClip>>;
}

/// Stems stored as WAVE files next to the manifest.
#[derive(Debug, Clone)]
pub struct WavStemSource {
    pub root: PathBuf,
}

impl StemSource for WavStemSource {
    fn load(&self, entry: &CatalogEntry, kinds: &[SourceKind]) -> Result<Vec<AudioClip>> {
        kinds
            .iter()
            .map(|k| {
                let rel = entry.stems.get(k).ok_or_else(|| {
                    Error::invalid(format!("track `{}` has no {} stem", entry.track_id, k))
                })?;
                wav::read_clip(&self.root.join(rel))
            })
            .collect()
    }
}

/// One line of an external audio manifest.
#[derive(Debug, Clone, Deserialize)]
pub struct ExternalTrack {
    pub path: String,
    pub singer: String,
    #[serde(default)]
    pub track_id: Option<String>,
    #[serde(default)]
    pub genre: Option<String>,
    #[serde(default)]
    pub vocal_path: Option<String>,
    #[serde(default)]
    pub instrumental_path: Option<String>,
}

/// Builds catalog entries for external audio listed in a JSON-lines file of
/// `{"path": ..., "singer": ...}` objects. Activity is measured with
/// `provider` on the vocal stem when one is given, otherwise on the mixture.
pub fn ingest_external(list: &Path, provider: &dyn ActivityProvider) -> Result<CatalogManifest> {
    let root = list.parent().unwrap_or(Path::new(".")).to_path_buf();
    let f = fs::File::open(list).map_err(|e| Error::io(list, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(list, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: ExternalTrack = serde_json::from_str(&line)?;
        let mix = wav::read_clip(&root.join(&t.path))?;
        let measured = match &t.vocal_path {
            Some(v) => wav::read_clip(&root.join(v))?,
            None => mix.clone(),
        };
        let activity = VocalActivity::measure(&measured, provider)?;
        let mut stems = BTreeMap::new();
        stems.insert(SourceKind::Mixture, t.path.clone());
        if let Some(v) = &t.vocal_path {
            stems.insert(SourceKind::VocalStem, v.clone());
        }
        if let Some(p) = &t.instrumental_path {
            stems.insert(SourceKind::InstrumentalStem, p.clone());
        }
        entries.push(CatalogEntry {
            track_id: t.track_id.unwrap_or_else(|| format!("ext{i:05}")),
            singer_id: t.singer,
            genre: t.genre.unwrap_or_else(|| "unknown".into()),
            instrumental_style_id: None,
            duration_s: mix.duration_s(),
            vocal_fraction: activity.vocal_fraction,
            vocal_mask: activity.flags,
            is_clone: false,
            clone_source_singer: None,
            pool: None,
            stems,
            render: None,
        });
    }
    let m = CatalogManifest {
        header: ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            master_seed: None,
            generator_version: format!("external-ingest/{}", env!("CARGO_PKG_VERSION")),
        },
        entries,
    };
    m.validate()?;
    Ok(m)
}

/// Default provider for external audio.
pub fn default_external_provider() -> EnergyHeuristic {
    EnergyHeuristic::default()
}
