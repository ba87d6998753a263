use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{ChatReply, ChatRequestBody};

/// Replies stored under the SHA-256 of the serialized request body.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(body: &ChatRequestBody) -> String {
        let bytes = serde_json::to_vec(body).expect("request body serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn path(&self, body: &ChatRequestBody) -> PathBuf {
        self.dir.join(format!("{}.json", Self::key(body)))
    }

    pub fn get(&self, body: &ChatRequestBody) -> Option<ChatReply> {
        let bytes = fs::read(self.path(body)).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn put(&self, body: &ChatRequestBody, reply: &ChatReply) -> io::Result<()> {
        let path = self.path(body);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(reply)?)?;
        fs::rename(tmp, path)
    }
}
