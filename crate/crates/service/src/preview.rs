use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use multibo_core::warp::Field2D;
use sha2::{Digest, Sha256};

pub const PREVIEW_PREFIX: &str = "/v1/previews/";

/// 8-bit grayscale PNG of `field`, with values mapped from `range`.
pub fn encode_png(field: &Field2D, range: (f64, f64)) -> Vec<u8> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, field.width() as u32, field.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().expect("in-memory PNG header");
    writer.write_image_data(&field.to_gray8(Some(range))).expect("in-memory PNG data");
    writer.finish().expect("in-memory PNG end");
    out
}

/// Content-addressed PNG store: a preview is named by the SHA-256 of its
/// bytes. Kept in memory and, with a directory, on disk.
#[derive(Debug, Default)]
pub struct PreviewStore {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl PreviewStore {
    pub fn new(dir: Option<PathBuf>) -> std::io::Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self { dir, memory: Mutex::default() })
    }

    /// Stores `png` and returns its path.
    pub fn put(&self, png: Vec<u8>) -> std::io::Result<String> {
        let name = format!("{}.png", hex::encode(Sha256::digest(&png)));
        let mut mem = self.memory.lock().unwrap_or_else(|e| e.into_inner());
        if !mem.contains_key(&name) {
            if let Some(d) = &self.dir {
                let path = d.join(&name);
                if !path.exists() {
                    let tmp = d.join(format!("{name}.tmp"));
                    std::fs::write(&tmp, &png)?;
                    std::fs::rename(&tmp, &path)?;
                }
            }
            mem.insert(name.clone(), Arc::new(png));
        }
        Ok(format!("{PREVIEW_PREFIX}{name}"))
    }

    pub fn get(&self, name: &str) -> Option<Arc<Vec<u8>>> {
        if !is_preview_name(name) {
            return None;
        }
        if let Some(b) = self.memory.lock().unwrap_or_else(|e| e.into_inner()).get(name) {
            return Some(b.clone());
        }
        let bytes = Arc::new(std::fs::read(self.dir.as_ref()?.join(name)).ok()?);
        self.memory
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(name.to_string(), bytes.clone());
        Some(bytes)
    }
}

fn is_preview_name(name: &str) -> bool {
    name.strip_suffix(".png")
        .is_some_and(|h| h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_content_hashes() {
        let store = PreviewStore::new(None).unwrap();
        let f = Field2D::synthetic(8, 8, 1).unwrap();
        let png = encode_png(&f, f.min_max());
        let path = store.put(png.clone()).unwrap();
        let name = path.strip_prefix(PREVIEW_PREFIX).unwrap();
        assert_eq!(name, format!("{}.png", hex::encode(Sha256::digest(&png))));
        assert_eq!(*store.get(name).unwrap(), png);
        assert_eq!(store.put(png).unwrap(), path);
        assert!(store.get("../etc/passwd").is_none());
        assert!(store.get(&name.to_uppercase()).is_none());
    }
}
