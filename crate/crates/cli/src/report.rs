//! Consolidated summary built from whatever stage artifacts exist.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::pipeline::Failure;

/// Summary keys in output order.
pub const SUMMARY_KEYS: &[&str] = &[
    "map",
    "params",
    "ell",
    "star_verdict",
    "bn_class",
    "dn_class",
    "phat_tail",
    "R_tail",
    "corr_class",
    "beta",
    "alpha",
    "sigma",
    "ks",
    "censored_mass",
    "runtime_sec",
    "decay_class",
    "tails_file",
    "curve_file",
];

fn read(dir: &Path, name: &str) -> Result<Option<Value>, Failure> {
    let p = dir.join(name);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).map_err(|e| Failure::Internal(e.to_string()))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Failure::Internal(format!("{}: {e}", p.display())))
}

fn field(v: &Option<Value>, key: &str) -> Value {
    v.as_ref()
        .and_then(|v| v.get(key))
        .cloned()
        .unwrap_or(Value::Null)
}

/// Builds the summary from the artifacts in `dir`. Missing stages leave
/// nulls.
pub fn summarize(dir: &Path, runtime_sec: Option<f64>) -> Result<Map<String, Value>, Failure> {
    let analyze = read(dir, "analyze.json")?;
    let induce = read(dir, "induce.json")?;
    let ret = read(dir, "returnmap.json")?;
    let corr = read(dir, "corr.json")?;
    let clt = read(dir, "clt.json")?;
    if [&analyze, &induce, &ret, &corr, &clt]
        .iter()
        .all(|v| v.is_none())
    {
        return Err(Failure::Internal(format!(
            "no stage artifacts in {}; run a stage first",
            dir.display()
        )));
    }
    let censored = match field(&ret, "censored_mass") {
        Value::Null => field(&induce, "phat_censored"),
        v => v,
    };
    let tails = match field(&ret, "tails_file") {
        Value::Null => field(&induce, "tails_file"),
        v => v,
    };
    let mut s = Map::new();
    s.insert("map".into(), field(&analyze, "map"));
    s.insert("params".into(), field(&analyze, "params"));
    s.insert("ell".into(), field(&analyze, "ell"));
    s.insert("star_verdict".into(), field(&analyze, "star_verdict"));
    s.insert("bn_class".into(), field(&analyze, "bn_class"));
    s.insert("dn_class".into(), field(&analyze, "dn_class"));
    s.insert("phat_tail".into(), field(&induce, "phat_tail"));
    s.insert("R_tail".into(), field(&ret, "R_tail"));
    s.insert("corr_class".into(), field(&corr, "corr_class"));
    s.insert("beta".into(), field(&corr, "beta"));
    s.insert("alpha".into(), field(&corr, "alpha"));
    s.insert("sigma".into(), field(&clt, "sigma"));
    s.insert("ks".into(), field(&clt, "ks"));
    s.insert("censored_mass".into(), censored);
    s.insert(
        "runtime_sec".into(),
        runtime_sec.map_or(Value::Null, |t| json!(t)),
    );
    s.insert("decay_class".into(), field(&corr, "corr_class"));
    s.insert("tails_file".into(), tails);
    s.insert("curve_file".into(), field(&corr, "curve_file"));
    s.insert("clt_status".into(), field(&clt, "status"));
    debug_assert!(SUMMARY_KEYS.iter().all(|k| s.contains_key(*k)));
    Ok(s)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => format!("{x:.6}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

/// Aligned two-column table of the headline quantities.
pub fn table(s: &Map<String, Value>) -> String {
    let get = |k: &str| s.get(k).cloned().unwrap_or(Value::Null);
    let rows = [
        ("map", get("map")),
        ("params", get("params")),
        ("(*) verdict", get("star_verdict")),
        ("b_n class", get("bn_class")),
        ("d_n class", get("dn_class")),
        ("p_hat tail", get("phat_tail")),
        ("R tail", get("R_tail")),
        ("correlation class", get("corr_class")),
        ("beta", get("beta")),
        ("alpha", get("alpha")),
        ("sigma", get("sigma")),
        ("KS distance", get("ks")),
        ("CLT", get("clt_status")),
        ("censored mass", get("censored_mass")),
    ];
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {}\n", cell(v)))
        .collect()
}

/// Writes `summary.json` and `summary.txt` and returns the table.
pub fn emit(dir: &Path, runtime_sec: Option<f64>) -> Result<String, Failure> {
    let s = summarize(dir, runtime_sec)?;
    let mut text = serde_json::to_string_pretty(&Value::Object(s.clone()))
        .map_err(|e| Failure::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join("summary.json"), text).map_err(|e| Failure::Internal(e.to_string()))?;
    let t = table(&s);
    fs::write(dir.join("summary.txt"), &t).map_err(|e| Failure::Internal(e.to_string()))?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_report_has_nulls() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("clt.json"),
            r#"{"status": "pass", "sigma": 0.35, "ks": 0.004}"#,
        )
        .unwrap();
        let s = summarize(dir.path(), None).unwrap();
        for k in SUMMARY_KEYS {
            assert!(s.contains_key(*k), "{k}");
        }
        assert_eq!(s["sigma"], json!(0.35));
        assert_eq!(s["R_tail"], Value::Null);
        assert_eq!(s["runtime_sec"], Value::Null);
        assert!(table(&s).contains("KS distance        0.004000"));
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(summarize(dir.path(), None).is_err());
    }
}
