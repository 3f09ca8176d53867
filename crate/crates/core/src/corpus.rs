//! Caption corpora: reading `{"caption", "payload_uri"}` lines and turning
//! them into embedded cache entries.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbedderBackend;
use crate::error::{Error, Result};
use crate::payload::PayloadStore;
use crate::store::{CacheEntry, EntryId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub caption: String,
    pub payload_uri: String,
}

/// Parses newline-delimited corpus records; blank lines are skipped.
pub fn read_corpus(reader: impl Read) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.caption.trim().is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                message: "caption is empty".into(),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_corpus<'a>(records: impl IntoIterator<Item = &'a CorpusRecord>, mut writer: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Embeds captions as text vectors and payload content as image vectors.
///
/// Ids are assigned sequentially from `first_id`. Without real image bytes
/// the caption stands in for the payload content.
pub fn embed_corpus(
    records: &[CorpusRecord],
    embedder: &dyn EmbedderBackend,
    first_id: EntryId,
) -> Result<Vec<CacheEntry>> {
    records
        .iter()
        .zip(first_id..)
        .map(|(r, id)| {
            Ok(CacheEntry::new(
                id,
                r.caption.clone(),
                r.payload_uri.clone(),
                embedder.embed_image(r.caption.as_bytes())?,
                embedder.embed_text(&r.caption)?,
                0,
            ))
        })
        .collect()
}

/// Writes a placeholder payload for every entry whose URI is not stored yet.
pub fn seed_payloads<'a>(
    entries: impl IntoIterator<Item = &'a CacheEntry>,
    store: &mut dyn PayloadStore,
) -> Result<()> {
    for e in entries {
        if !store.contains(&e.payload_uri) {
            store.put(&e.payload_uri, e.caption.as_bytes())?;
        }
    }
    Ok(())
}
