//! JSON-lines helpers shared by the response cache and the grade store.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Error;
use crate::Result;

/// Parses one record per line, skipping blank lines.
///
/// A malformed line is an error, with one exception: a final line that is
/// not newline-terminated is treated as an interrupted append and dropped,
/// so a file cut off mid-write stays loadable.
pub(crate) fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let complete_tail = text.is_empty() || text.ends_with('\n');
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(record) => out.push(record),
            Err(e) => {
                if idx + 1 == lines.len() && !complete_tail {
                    break;
                }
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("bad json record: {e}"),
                });
            }
        }
    }
    Ok(out)
}

/// Serializes one record as a single JSON line.
pub(crate) fn to_json_line<T: Serialize>(record: &T) -> String {
    let mut line = serde_json::to_string(record).unwrap();
    line.push('\n');
    line
}

/// Seconds since the Unix epoch.
pub(crate) fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
