//! Machine-readable progress stream: one JSON object per line.

use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::Path;
use std::sync::Mutex;

use serde_json::{json, Value};

pub struct EventLog {
    file: Mutex<File>,
}

impl EventLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    /// Appends `{"stage", "event", ...fields}`. Logging failures are not
    /// fatal to the run.
    pub fn emit(&self, stage: &str, event: &str, fields: Value) {
        let mut obj = json!({ "stage": stage, "event": event });
        if let (Some(o), Value::Object(extra)) = (obj.as_object_mut(), fields) {
            o.extend(extra);
        }
        log::info!("{stage}: {event} {}", obj);
        let mut f = self.file.lock().expect("event log lock");
        if let Err(e) = writeln!(f, "{obj}") {
            log::warn!("could not write event: {e}");
        }
    }
}
