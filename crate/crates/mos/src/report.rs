use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::study::RatingRecord;

/// Two-sided 95% quantile of the standard normal.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionMos {
    pub version: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent below two ratings.
    pub std: Option<f64>,
    /// Normal-approximation 95% interval half width; absent below two ratings.
    pub ci95_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosReport {
    /// Versions with at least one rating, in plan order.
    pub versions: Vec<VersionMos>,
    /// Versions without any rating.
    pub absent: Vec<String>,
    pub total_records: usize,
}

/// Mean opinion score per version with a normal-approximation 95% interval.
///
/// Sums are taken over integers, so the result does not depend on record order.
pub fn aggregate_mos(records: &[RatingRecord], versions: &[String]) -> MosReport {
    let mut sums: BTreeMap<&str, (usize, u64, u64)> = BTreeMap::new();
    for r in records {
        let e = sums.entry(r.version.as_str()).or_default();
        let s = u64::from(r.score);
        e.0 += 1;
        e.1 += s;
        e.2 += s * s;
    }
    let mut order: Vec<&str> = versions.iter().map(String::as_str).collect();
    // versions found in records but missing from the plan go last
    for k in sums.keys() {
        if !order.contains(k) {
            order.push(k);
        }
    }
    let mut out = Vec::new();
    let mut absent = Vec::new();
    for v in order {
        match sums.get(v) {
            None => absent.push(v.to_string()),
            Some(&(n, sum, sq)) => {
                let nf = n as f64;
                let mean = sum as f64 / nf;
                let std = (n > 1).then(|| {
                    // n·Σx² − (Σx)² is exact in integers
                    let num = (n as u64 * sq - sum * sum) as f64;
                    (num / (nf * (nf - 1.0))).sqrt()
                });
                out.push(VersionMos {
                    version: v.to_string(),
                    n,
                    mean,
                    std,
                    ci95_half_width: std.map(|s| Z_95 * s / nf.sqrt()),
                });
            }
        }
    }
    MosReport {
        versions: out,
        absent,
        total_records: records.len(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MosReport {
    pub fn get(&self, version: &str) -> Option<&VersionMos> {
        self.versions.iter().find(|v| v.version == version)
    }

    /// Columns: version, n, mean, std, ci95_low, ci95_high. Absent versions have n = 0 and empty values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["version", "n", "mean", "std", "ci95_low", "ci95_high"])?;
        for v in &self.versions {
            w.write_record([
                v.version.clone(),
                v.n.to_string(),
                format!("{:.6}", v.mean),
                opt(v.std),
                opt(v.ci95_half_width.map(|h| v.mean - h)),
                opt(v.ci95_half_width.map(|h| v.mean + h)),
            ])?;
        }
        for a in &self.absent {
            w.write_record([a.as_str(), "0", "", "", "", ""])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table, one version per line.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<10} {:>5} {:>6} {:>15}\n", "version", "n", "MOS", "95% CI");
        for v in &self.versions {
            let ci = v
                .ci95_half_width
                .map(|h| format!("[{:.3}, {:.3}]", v.mean - h, v.mean + h))
                .unwrap_or_else(|| "-".into());
            s.push_str(&format!("{:<10} {:>5} {:>6.3} {:>15}\n", v.version, v.n, v.mean, ci));
        }
        for a in &self.absent {
            s.push_str(&format!("{a:<10} {:>5} {:>6} {:>15}\n", 0, "absent", "-"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Utc;

    fn rec(version: &str, score: u8) -> RatingRecord {
        RatingRecord {
            rater_id: "r".into(),
            image_id: "i".into(),
            version: version.into(),
            score,
            timestamp: Utc::now(),
        }
    }

    #[test]
    fn one_to_five_has_mean_three() {
        let recs: Vec<_> = (1..=5).map(|s| rec("v", s)).collect();
        let r = aggregate_mos(&recs, &["v".into(), "w".into()]);
        let v = r.get("v").unwrap();
        assert_eq!(v.mean, 3.0);
        assert!((v.std.unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.absent, vec!["w".to_string()]);
    }

    #[test]
    fn single_rating_has_no_interval() {
        let r = aggregate_mos(&[rec("v", 4)], &["v".into()]);
        assert_eq!(r.get("v").unwrap().ci95_half_width, None);
    }
}
