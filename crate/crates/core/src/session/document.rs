use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Incumbent, RoundRecord, SessionConfig, SessionState};
use crate::gp::KernelConfig;
use crate::{Error, Result};

pub const SESSION_FORMAT: &str = "multibo.session";
pub const SESSION_VERSION: u32 = 1;

/// Largest latent-utility difference tolerated when a replay is checked
/// against the stored MAP.
const REPLAY_TOLERANCE: f64 = 1e-12;

/// Replay file: the configuration and every recorded choice, plus the
/// resulting archive and MAP so a replay can be verified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub format: String,
    pub version: u32,
    pub config: SessionConfig,
    pub kernel: KernelConfig,
    pub rounds: Vec<RoundRecord>,
    pub archive: Vec<Vec<f64>>,
    #[serde(default)]
    pub f_map: Option<Vec<f64>>,
    #[serde(default)]
    pub incumbent: Option<Incumbent>,
}

impl SessionDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != SESSION_FORMAT || doc.version != SESSION_VERSION {
            return Err(Error::Format(format!(
                "expected {SESSION_FORMAT} v{SESSION_VERSION}, found {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Writes through a temporary file and a rename so a crash never leaves
    /// a truncated document behind.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

impl SessionState {
    pub fn to_document(&self) -> SessionDocument {
        SessionDocument {
            format: SESSION_FORMAT.into(),
            version: SESSION_VERSION,
            config: self.config.clone(),
            kernel: self.kernel.clone(),
            rounds: self.rounds.clone(),
            archive: self.archive.clone(),
            f_map: self.posterior.as_ref().map(|p| p.f_map().iter().cloned().collect()),
            incumbent: self.incumbent,
        }
    }

    /// Rebuilds a session by re-running its recorded choices, checking every
    /// issued batch and the final MAP against the document.
    pub fn replay(doc: &SessionDocument) -> Result<Self> {
        let mut state = SessionState::new(doc.config.clone())?;
        if state.kernel != doc.kernel {
            return Err(Error::Format("replayed kernel differs from the document".into()));
        }
        for (i, record) in doc.rounds.iter().enumerate() {
            if state.pending().is_none() {
                state.next_batch()?;
            }
            let issued = state.pending().expect("a batch was just issued");
            if issued.token != record.token || issued.indices != record.indices {
                return Err(Error::Format(format!("round {i} does not replay to the recorded batch")));
            }
            match &record.winners {
                Some(w) => state.record_choice(w)?,
                None if i + 1 == doc.rounds.len() => {}
                None => return Err(Error::Format(format!("round {i} has no choice but is not the last"))),
            }
        }
        if state.archive != doc.archive {
            return Err(Error::Format("replayed archive differs from the document".into()));
        }
        let f_replayed: Option<Vec<f64>> = state.posterior.as_ref().map(|p| p.f_map().iter().cloned().collect());
        match (&f_replayed, &doc.f_map) {
            (None, None) => {}
            (Some(a), Some(b)) if a.len() == b.len() => {
                let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                if diff > REPLAY_TOLERANCE {
                    return Err(Error::Format(format!("replayed MAP differs by {diff:e}")));
                }
            }
            _ => return Err(Error::Format("replayed posterior does not match the document".into())),
        }
        if state.incumbent.map(|i| i.index) != doc.incumbent.map(|i| i.index) {
            return Err(Error::Format("replayed incumbent differs from the document".into()));
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::BoxBounds;

    fn run(seed: u64, rounds: usize) -> SessionState {
        let mut c = SessionConfig::new(BoxBounds::symmetric(3, 2.0).unwrap(), seed).with_budget(2);
        c.init_batches = 2;
        c.dbs.ei_raw_samples = 128;
        c.dbs.ei_restarts = 2;
        let mut s = SessionState::new(c).unwrap();
        for r in 0..rounds {
            s.record_choice(&[(r * 3) % 4]).unwrap();
            if !s.is_finished() {
                s.next_batch().unwrap();
            }
        }
        s
    }

    #[test]
    fn replay_after_every_transition() {
        for rounds in 0..=4 {
            let s = run(11, rounds);
            let doc = SessionDocument::from_json(&s.to_document().to_json()).unwrap();
            let r = SessionState::replay(&doc).unwrap();
            assert_eq!(r.archive(), s.archive());
            assert_eq!(r.rounds(), s.rounds());
            assert_eq!(r.incumbent(), s.incumbent());
            assert_eq!(r.to_document(), s.to_document());
        }
    }

    #[test]
    fn tampered_documents_are_rejected() {
        let s = run(12, 3);
        let mut doc = s.to_document();
        doc.rounds[1].winners = if s.rounds()[1].winners == Some(vec![3]) { Some(vec![0]) } else { Some(vec![3]) };
        assert!(SessionState::replay(&doc).is_err());
        let mut doc = s.to_document();
        doc.archive[0][0] += 1e-9;
        assert!(SessionState::replay(&doc).is_err());
        let mut doc = s.to_document();
        doc.version = 99;
        assert!(SessionDocument::from_json(&doc.to_json()).is_err());
    }

    #[test]
    fn atomic_write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let s = run(13, 2);
        s.to_document().write(&path).unwrap();
        let doc = SessionDocument::read(&path).unwrap();
        assert_eq!(doc, s.to_document());
        assert!(!dir.path().join("s.json.tmp").exists());
    }
}
