//! Versioned JSON checkpoints for both models.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::embedder::EmbedderParams;
use crate::error::{Error, Result};
use crate::rank::RankerParams;

const FORMAT: &str = "citerec-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Container<T> {
    format: String,
    version: u32,
    section: String,
    dims: BTreeMap<String, usize>,
    vocab_hash: String,
    payload: T,
}

fn write<T: Serialize>(path: &Path, section: &str, dims: BTreeMap<String, usize>, vocab_hash: u64, payload: &T) -> Result<()> {
    let c = Container {
        format: FORMAT.into(),
        version: VERSION,
        section: section.into(),
        dims,
        vocab_hash: format!("{vocab_hash:016x}"),
        payload,
    };
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(f), &c)?;
    Ok(())
}

fn read<T: DeserializeOwned>(path: &Path, section: &str) -> Result<(T, String)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let c: Container<T> = serde_json::from_reader(BufReader::new(f))?;
    if c.format != FORMAT {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    if c.version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", c.version)));
    }
    if c.section != section {
        return Err(Error::Format(format!("expected a {section} checkpoint, found {}", c.section)));
    }
    Ok((c.payload, c.vocab_hash))
}

fn check_hash(found: &str, actual: u64) -> Result<()> {
    if found != format!("{actual:016x}") {
        return Err(Error::Format("checkpoint vocabulary hash does not match its tables".into()));
    }
    Ok(())
}

pub fn save_embedder(path: &Path, params: &EmbedderParams) -> Result<()> {
    let dims = BTreeMap::from([
        ("dense_dimension".to_string(), params.dim()),
        ("vocabulary".to_string(), params.vocab().len()),
    ]);
    write(path, "embedder", dims, params.vocab().fingerprint(), params)
}

pub fn load_embedder(path: &Path) -> Result<EmbedderParams> {
    let (p, hash): (EmbedderParams, _) = read(path, "embedder")?;
    check_hash(&hash, p.vocab().fingerprint())?;
    if p.table().rows() != p.vocab().len() {
        return Err(Error::Format("embedder table does not cover its vocabulary".into()));
    }
    Ok(p)
}

pub fn save_ranker(path: &Path, params: &RankerParams) -> Result<()> {
    let c = params.config();
    let dims = BTreeMap::from([
        ("dense_dimension".to_string(), c.dense_dimension),
        ("metadata_dimension".to_string(), c.metadata_dimension),
        ("hidden".to_string(), params.hidden()),
        ("input".to_string(), params.input_width()),
    ]);
    write(path, "ranker", dims, params.vocab().text.fingerprint(), params)
}

pub fn load_ranker(path: &Path) -> Result<RankerParams> {
    let (p, hash): (RankerParams, _) = read(path, "ranker")?;
    check_hash(&hash, p.vocab().text.fingerprint())?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TokenVocab, Vocabulary};
    use crate::rank::RankerConfig;

    fn tv(t: &[&str]) -> TokenVocab {
        TokenVocab::from_entries(t.iter().map(|s| (s.to_string(), 2)).collect())
    }

    #[test]
    fn round_trips_and_section_check() {
        let dir = tempfile::tempdir().unwrap();
        let e = EmbedderParams::new(tv(&["a", "b"]), 3, 1);
        let ep = dir.path().join("e.json");
        save_embedder(&ep, &e).unwrap();
        assert_eq!(load_embedder(&ep).unwrap(), e);
        assert!(load_ranker(&ep).is_err());

        let v = Vocabulary {
            text: tv(&["a"]),
            authors: tv(&["x"]),
            venues: TokenVocab::default(),
            keyphrases: TokenVocab::default(),
        };
        let cfg = RankerConfig {
            dense_dimension: 2,
            metadata_dimension: 2,
            hidden: Some(2),
            ..Default::default()
        };
        let r = RankerParams::new(v, &cfg, 0).unwrap();
        let rp = dir.path().join("r.json");
        save_ranker(&rp, &r).unwrap();
        assert_eq!(load_ranker(&rp).unwrap(), r);
    }

    #[test]
    fn tampered_vocabulary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = EmbedderParams::new(tv(&["a", "b"]), 3, 1);
        let ep = dir.path().join("e.json");
        save_embedder(&ep, &e).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ep).unwrap()).unwrap();
        v["vocab_hash"] = serde_json::Value::String("0000000000000000".into());
        std::fs::write(&ep, v.to_string()).unwrap();
        assert!(matches!(load_embedder(&ep), Err(Error::Format(_))));
    }
}
