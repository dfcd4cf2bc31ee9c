use std::fs;
use std::path::{Path, PathBuf};

use msa_core::featio::{read_feature_file, write_feature_file, FeatureError};
use msa_core::schema::{parse_annotation, serialize_annotation, MappingProfile};
use msa_core::{Annotation, FeatureTensor, SourceId};
use serde::de::DeserializeOwned;

use crate::error::{CliError, Result};

pub const FEATURE_EXT: &str = "sff";
pub const ANNOTATION_EXT: &str = "sfa";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureTensor> {
    read_feature_file(path).map_err(|e| match e {
        FeatureError::Io(err) => CliError::io(path, err),
        other => CliError::format(path, other),
    })
}

pub fn write_features(path: &Path, x: &FeatureTensor) -> Result<()> {
    write_feature_file(x, path).map_err(|e| match e {
        FeatureError::Io(err) => CliError::io(path, err),
        other => CliError::format(path, other),
    })
}

pub fn read_annotation(path: &Path, profile: &MappingProfile) -> Result<Annotation> {
    parse_annotation(&read_text(path)?, SourceId::HX, profile).map_err(|e| CliError::format(path, e))
}

pub fn write_annotation(path: &Path, ann: &Annotation) -> Result<()> {
    write_text(path, &serialize_annotation(ann))
}

/// Deserializes a TOML config file; a missing path yields the defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
    }
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn list_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Expands glob patterns (and plain paths) into a sorted, de-duplicated list.
pub fn expand_globs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pattern in patterns {
        let paths = glob::glob(pattern).map_err(|e| CliError::Config(format!("bad pattern `{pattern}`: {e}")))?;
        let before = out.len();
        for p in paths {
            let p = p.map_err(|e| CliError::io(e.path().to_path_buf(), e.into()))?;
            if p.is_dir() {
                out.extend(list_with_ext(&p, FEATURE_EXT)?);
            } else {
                out.push(p);
            }
        }
        if out.len() == before {
            return Err(CliError::io(pattern, std::io::Error::new(std::io::ErrorKind::NotFound, "no files match")));
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// `(stem, features, annotation)` triples from a directory of `.sff` files
/// with matching `.sfa` files.
pub fn load_pairs(dir: &Path, profile: &MappingProfile) -> Result<Vec<(String, FeatureTensor, Annotation)>> {
    let mut out = Vec::new();
    for feat_path in list_with_ext(dir, FEATURE_EXT)? {
        let name = stem(&feat_path);
        let ann_path = feat_path.with_extension(ANNOTATION_EXT);
        if !ann_path.is_file() {
            return Err(CliError::MissingPair(name));
        }
        out.push((name, read_features(&feat_path)?, read_annotation(&ann_path, profile)?));
    }
    Ok(out)
}
