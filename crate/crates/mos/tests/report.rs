use chrono::{TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srgan_mos::{aggregate_mos, RatingRecord, Z_95};

fn record(rater: usize, image: usize, version: &str, score: u8) -> RatingRecord {
    RatingRecord {
        rater_id: format!("r{rater}"),
        image_id: format!("i{image}"),
        version: version.to_string(),
        score,
        timestamp: Utc.timestamp_opt(1_700_000_000 + (rater * 100 + image) as i64, 0).unwrap(),
    }
}

/// Three raters, four images; scores are a fixed function of (rater, image, version).
fn table() -> Vec<RatingRecord> {
    let mut out = Vec::new();
    for rater in 0..3 {
        for image in 0..4 {
            out.push(record(rater, image, "HR", 5));
            out.push(record(rater, image, "NN", 1));
            out.push(record(rater, image, "bicubic", (1 + (rater + image) % 3) as u8));
            out.push(record(rater, image, "M_pcsva", (3 + (rater * image) % 3) as u8));
        }
    }
    out
}

fn versions() -> Vec<String> {
    ["NN", "bicubic", "M_pva", "M_pcsva", "HR"].iter().map(|s| s.to_string()).collect()
}

#[test]
fn means_match_hand_computation() {
    let report = aggregate_mos(&table(), &versions());
    // bicubic: 1 + (r+i)%3 over r in 0..3, i in 0..4 -> 12 values summing to 24
    // M_pcsva: 3 + (r*i)%3 -> r=0: 3,3,3,3; r=1: 3,4,5,3; r=2: 3,5,4,3 -> 42
    let want = [("NN", 1.0), ("bicubic", 24.0 / 12.0), ("M_pcsva", 42.0 / 12.0), ("HR", 5.0)];
    for (v, m) in want {
        let got = report.get(v).unwrap();
        assert_eq!(got.n, 12);
        assert_eq!(got.mean, m, "{v}");
    }
    assert_eq!(report.absent, vec!["M_pva".to_string()]);
    assert_eq!(report.total_records, 48);
    assert_eq!(report.get("HR").unwrap().std, Some(0.0));
    // bicubic values: four each of 1, 2, 3 -> sample variance 8/11
    let b = report.get("bicubic").unwrap();
    assert!((b.std.unwrap() - (8.0f64 / 11.0).sqrt()).abs() < 1e-15);
    assert!((b.ci95_half_width.unwrap() - Z_95 * (8.0f64 / 11.0).sqrt() / 12f64.sqrt()).abs() < 1e-15);
    // the order of the plan is kept
    let order: Vec<&str> = report.versions.iter().map(|v| v.version.as_str()).collect();
    assert_eq!(order, vec!["NN", "bicubic", "M_pcsva", "HR"]);
}

#[test]
fn the_gap_between_versions_is_preserved() {
    let report = aggregate_mos(&table(), &versions());
    let gap = report.get("M_pcsva").unwrap().mean - report.get("bicubic").unwrap().mean;
    assert_eq!(gap, 42.0 / 12.0 - 2.0);
}

#[test]
fn aggregation_ignores_record_order() {
    let base = aggregate_mos(&table(), &versions());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let mut t = table();
        t.shuffle(&mut rng);
        assert_eq!(aggregate_mos(&t, &versions()), base);
    }
}

#[test]
fn csv_has_one_row_per_version() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mos.csv");
    aggregate_mos(&table(), &versions()).write_csv(&path).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        vec!["version", "n", "mean", "std", "ci95_low", "ci95_high"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[0][0], "NN");
    assert_eq!(&rows[0][2], "1.000000");
    assert_eq!(&rows[4][0], "M_pva");
    assert_eq!(&rows[4][1], "0");
    assert_eq!(&rows[4][2], "");
}

#[test]
fn empty_and_single_ratings() {
    let r = aggregate_mos(&[], &versions());
    assert!(r.versions.is_empty());
    assert_eq!(r.absent.len(), 5);
    let one = aggregate_mos(&[record(0, 0, "HR", 4)], &versions());
    let hr = one.get("HR").unwrap();
    assert_eq!((hr.n, hr.mean, hr.std, hr.ci95_half_width), (1, 4.0, None, None));
}
