//! Intermediate stage outputs on disk.
//!
//! Each artifact is a JSONL file with a `<file>.meta.json` sidecar holding
//! the artifact kind, the fingerprint of the run configuration that produced
//! it and the SHA-256 of the file bytes. Keeping the fingerprint out of the
//! JSONL records leaves the record formats exactly as downstream tools expect.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_model::{read_jsonl, write_jsonl, write_predictions, ClaimId, DocId, Label, Predictions};
use crate::error::{Error, Result};
use crate::evaluation::LabelMap;
use crate::fingerprint::hash_bytes;
use crate::rationale::{RationaleMap, RetrievedMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Retrieval,
    Rationale,
    Labels,
    Predictions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub kind: ArtifactKind,
    pub fingerprint: String,
    pub sha256: String,
}

#[derive(Serialize, Deserialize)]
struct RetrievalRecord {
    id: ClaimId,
    doc_ids: Vec<DocId>,
}

#[derive(Serialize, Deserialize)]
struct RationaleRecord {
    id: ClaimId,
    evidence_sentences: BTreeMap<DocId, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    id: ClaimId,
    labels: BTreeMap<DocId, Label>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn write_meta(path: &Path, kind: ArtifactKind, fingerprint: &str) -> Result<ArtifactMeta> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = ArtifactMeta {
        kind,
        fingerprint: fingerprint.to_string(),
        sha256: hash_bytes(&bytes),
    };
    let mp = meta_path(path);
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::Contract(e.to_string()))?;
    fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
    Ok(meta)
}

/// Reads and checks the sidecar of `path`: the kind must match, the file hash
/// must match, and when `expected` is given so must the fingerprint.
pub fn read_meta(path: &Path, kind: ArtifactKind, expected: Option<&str>) -> Result<ArtifactMeta> {
    let mp = meta_path(path);
    let raw = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: ArtifactMeta = serde_json::from_slice(&raw).map_err(|e| Error::Parse {
        path: mp.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    if meta.kind != kind {
        return Err(Error::Integrity(format!(
            "{} holds a {:?} artifact, expected {:?}",
            path.display(),
            meta.kind,
            kind
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let actual = hash_bytes(&bytes);
    if actual != meta.sha256 {
        return Err(Error::Integrity(format!(
            "{} was modified after it was written (sha256 {actual}, recorded {})",
            path.display(),
            meta.sha256
        )));
    }
    if let Some(exp) = expected {
        if exp != meta.fingerprint {
            return Err(Error::FingerprintMismatch {
                artifact: path.display().to_string(),
                expected: exp.to_string(),
                found: meta.fingerprint,
            });
        }
    }
    Ok(meta)
}

/// Refuses a set of artifacts that were not all produced by one configuration.
pub fn check_same_run(metas: &[(&Path, &ArtifactMeta)]) -> Result<()> {
    let Some((_, first)) = metas.first() else {
        return Ok(());
    };
    for (path, m) in &metas[1..] {
        if m.fingerprint != first.fingerprint {
            return Err(Error::FingerprintMismatch {
                artifact: path.display().to_string(),
                expected: first.fingerprint.clone(),
                found: m.fingerprint.clone(),
            });
        }
    }
    Ok(())
}

pub fn write_retrieved(map: &RetrievedMap, path: &Path, fingerprint: &str) -> Result<ArtifactMeta> {
    write_jsonl(
        path,
        map.iter().map(|(id, docs)| RetrievalRecord {
            id: *id,
            doc_ids: docs.clone(),
        }),
    )?;
    write_meta(path, ArtifactKind::Retrieval, fingerprint)
}

/// Loads a retrieval artifact. With `expected` set the sidecar must exist and
/// carry that fingerprint; without it a bare JSONL file is accepted.
pub fn read_retrieved(path: &Path, expected: Option<&str>) -> Result<RetrievedMap> {
    check_sidecar(path, ArtifactKind::Retrieval, expected)?;
    let mut map = RetrievedMap::new();
    read_jsonl(path, |line, r: RetrievalRecord| {
        let mut docs = r.doc_ids;
        docs.sort_unstable();
        docs.dedup();
        if map.insert(r.id, docs).is_some() {
            return Err(duplicate(path, line, r.id));
        }
        Ok(())
    })?;
    Ok(map)
}

pub fn write_rationales(map: &RationaleMap, path: &Path, fingerprint: &str) -> Result<ArtifactMeta> {
    write_jsonl(
        path,
        map.iter().map(|(id, ev)| RationaleRecord {
            id: *id,
            evidence_sentences: ev.clone(),
        }),
    )?;
    write_meta(path, ArtifactKind::Rationale, fingerprint)
}

pub fn read_rationales(path: &Path, expected: Option<&str>) -> Result<RationaleMap> {
    check_sidecar(path, ArtifactKind::Rationale, expected)?;
    let mut map = RationaleMap::new();
    read_jsonl(path, |line, r: RationaleRecord| {
        if map.insert(r.id, r.evidence_sentences).is_some() {
            return Err(duplicate(path, line, r.id));
        }
        Ok(())
    })?;
    Ok(map)
}

pub fn write_labels(map: &LabelMap, path: &Path, fingerprint: &str) -> Result<ArtifactMeta> {
    write_jsonl(
        path,
        map.iter().map(|(id, labels)| LabelRecord {
            id: *id,
            labels: labels.clone(),
        }),
    )?;
    write_meta(path, ArtifactKind::Labels, fingerprint)
}

pub fn read_labels(path: &Path, expected: Option<&str>) -> Result<LabelMap> {
    check_sidecar(path, ArtifactKind::Labels, expected)?;
    let mut map = LabelMap::new();
    read_jsonl(path, |line, r: LabelRecord| {
        if map.insert(r.id, r.labels).is_some() {
            return Err(duplicate(path, line, r.id));
        }
        Ok(())
    })?;
    Ok(map)
}

pub fn write_predictions_artifact(predictions: &Predictions, path: &Path, fingerprint: &str) -> Result<ArtifactMeta> {
    write_predictions(predictions, path)?;
    write_meta(path, ArtifactKind::Predictions, fingerprint)
}

fn check_sidecar(path: &Path, kind: ArtifactKind, expected: Option<&str>) -> Result<()> {
    if expected.is_some() || meta_path(path).exists() {
        read_meta(path, kind, expected)?;
    }
    Ok(())
}

fn duplicate(path: &Path, line: usize, id: ClaimId) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("duplicate record for claim {id}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn retrieved() -> RetrievedMap {
        [(ClaimId(1), vec![DocId(3), DocId(7)]), (ClaimId(2), vec![])]
            .into_iter()
            .collect()
    }

    #[test]
    fn retrieval_roundtrip_and_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("retrieved.jsonl");
        write_retrieved(&retrieved(), &p, "abc").unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "{\"id\":1,\"doc_ids\":[3,7]}\n{\"id\":2,\"doc_ids\":[]}\n"
        );
        assert_eq!(read_retrieved(&p, Some("abc")).unwrap(), retrieved());
        assert_eq!(read_retrieved(&p, None).unwrap(), retrieved());
    }

    #[test]
    fn fingerprint_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("retrieved.jsonl");
        write_retrieved(&retrieved(), &p, "abc").unwrap();
        assert!(matches!(
            read_retrieved(&p, Some("xyz")),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn tampered_file_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("retrieved.jsonl");
        write_retrieved(&retrieved(), &p, "abc").unwrap();
        fs::write(&p, "{\"id\":1,\"doc_ids\":[4]}\n").unwrap();
        assert!(matches!(read_retrieved(&p, None), Err(Error::Integrity(_))));
    }

    #[test]
    fn wrong_kind_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.jsonl");
        write_retrieved(&retrieved(), &p, "abc").unwrap();
        assert!(read_rationales(&p, Some("abc")).is_err());
    }

    #[test]
    fn rationale_and_label_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rp = dir.path().join("r.jsonl");
        let mut rat = RationaleMap::new();
        rat.entry(ClaimId(4)).or_default().insert(DocId(9), vec![0, 2]);
        write_rationales(&rat, &rp, "f").unwrap();
        assert_eq!(
            fs::read_to_string(&rp).unwrap(),
            "{\"id\":4,\"evidence_sentences\":{\"9\":[0,2]}}\n"
        );
        assert_eq!(read_rationales(&rp, Some("f")).unwrap(), rat);

        let lp = dir.path().join("l.jsonl");
        let mut labels = LabelMap::new();
        labels
            .entry(ClaimId(4))
            .or_default()
            .insert(DocId(9), Label::NotEnoughInfo);
        write_labels(&labels, &lp, "f").unwrap();
        assert_eq!(read_labels(&lp, Some("f")).unwrap(), labels);
    }

    #[test]
    fn mixed_runs_are_refused() {
        let a = ArtifactMeta {
            kind: ArtifactKind::Retrieval,
            fingerprint: "1".into(),
            sha256: String::new(),
        };
        let b = ArtifactMeta {
            fingerprint: "2".into(),
            ..a.clone()
        };
        let p = Path::new("x");
        assert!(check_same_run(&[(p, &a), (p, &a)]).is_ok());
        assert!(check_same_run(&[(p, &a), (p, &b)]).is_err());
    }

    #[test]
    fn missing_sidecar_with_expectation_fails() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bare.jsonl");
        fs::write(&p, "{\"id\":1,\"doc_ids\":[1]}\n").unwrap();
        assert!(read_retrieved(&p, None).is_ok());
        assert!(matches!(read_retrieved(&p, Some("f")), Err(Error::Io { .. })));
    }
}
