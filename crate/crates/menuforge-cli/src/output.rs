//! Run-directory layout and seed-stamped writers. Every artifact carries
//! the root seed: JSON documents get `seed`/`label` keys, CSVs a comment
//! header.

use anyhow::{Context, Result};
use std::path::{Path, PathBuf};

/// `runs/<label>/<timestamp>/` unless an explicit directory is given.
/// Creates the directory.
pub fn resolve_out_dir(explicit: Option<&str>, output_dir: &str, label: &str) -> Result<PathBuf> {
    let dir = match explicit {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from(output_dir).join(label).join(timestamp()),
    };
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

/// UTC `YYYYMMDD-HHMMSS` without a clock dependency.
pub fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .expect("clock after 1970")
        .as_secs();
    let (y, mo, d) = civil_from_days((secs / 86_400) as i64);
    let sod = secs % 86_400;
    format!(
        "{y:04}{mo:02}{d:02}-{:02}{:02}{:02}",
        sod / 3600,
        (sod % 3600) / 60,
        sod % 60
    )
}

/// Days since 1970-01-01 to a (year, month, day) civil date.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

/// Inserts `seed` and `label` into a JSON object document and returns the
/// stamped pretty text.
pub fn stamp_json(json_text: &str, seed: u64, label: &str) -> Result<String> {
    let mut value: serde_json::Value =
        serde_json::from_str(json_text).context("artifact is valid JSON")?;
    if let Some(obj) = value.as_object_mut() {
        obj.insert("seed".into(), serde_json::json!(seed));
        obj.insert("label".into(), serde_json::json!(label));
    }
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

/// `# key=value` comment lines (seed first) ahead of a CSV body.
pub fn csv_with_comments(comments: &[(&str, String)], body: &str) -> String {
    let mut out = String::new();
    for (key, value) in comments {
        out.push_str(&format!("# {key}={value}\n"));
    }
    out.push_str(body);
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out
}

pub fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, text)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn civil_conversion_hits_known_dates() {
        assert_eq!(civil_from_days(0), (1970, 1, 1));
        assert_eq!(civil_from_days(19_723), (2024, 1, 1));
        assert_eq!(civil_from_days(20_680), (2026, 8, 15));
        assert_eq!(civil_from_days(11_016), (2000, 2, 29));
    }

    #[test]
    fn stamping_preserves_payload() {
        let stamped = stamp_json(r#"{"x": 1}"#, 7, "demo").unwrap();
        let v: serde_json::Value = serde_json::from_str(&stamped).unwrap();
        assert_eq!(v["x"], 1);
        assert_eq!(v["seed"], 7);
        assert_eq!(v["label"], "demo");
    }

    #[test]
    fn csv_comments_lead_the_body() {
        let text = csv_with_comments(&[("seed", "3".into())], "a,b\n1,2\n");
        assert!(text.starts_with("# seed=3\na,b\n"));
    }
}
