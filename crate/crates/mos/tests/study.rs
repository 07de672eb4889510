use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srgan_mos::{rating_order, MosError, Phase, Study, StudyPlan};

fn images(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("img{i:03}")).collect()
}

/// Answers every item of a session; rating scores come from `score`.
fn complete(study: &mut Study, session_id: &str, mut score: impl FnMut(&str, &str) -> i64) {
    loop {
        let next = study.next(session_id).unwrap();
        let Some(item) = next.item else { break };
        let value = match item.phase {
            Phase::Calibration => item.anchor_score.map(i64::from),
            Phase::Rating => {
                let (img, ver) = study.resolve_token(&item.item_id).unwrap();
                Some(score(img, ver))
            }
        };
        study.submit(session_id, &item.item_id, value).unwrap();
    }
}

#[test]
fn simulated_study_gives_five_ratings_per_image_and_version() {
    let plan = StudyPlan::with_images(images(100));
    let versions = plan.versions.clone();
    let mut study = Study::in_memory(plan).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sessions = Vec::new();
    for r in 0..25 {
        let (info, created) = study.create_session(&format!("rater{r:02}")).unwrap();
        assert!(created);
        assert_eq!(info.calibration_items, 10);
        assert_eq!(info.rating_items, 160);
        sessions.push(info.session_id);
    }
    assert!(matches!(study.create_session("rater25"), Err(MosError::NoCapacity)));
    assert!(study.remaining_capacity().values().all(|c| *c == 0));

    for (r, id) in sessions.iter().enumerate() {
        // each synthetic rater has a bias and noise around a per-version level
        let bias = (r % 3) as i64 - 1;
        complete(&mut study, id, |_, ver| {
            let level = versions.iter().position(|v| v == ver).unwrap() as i64 * 4 / 7 + 1;
            (level + bias + rng.random_range(-1..=1)).clamp(1, 5)
        });
    }
    let records = study.records();
    assert_eq!(records.len(), 25 * 160);
    let mut counts: HashMap<(String, String), usize> = HashMap::new();
    let mut raters: HashMap<(String, String), BTreeSet<String>> = HashMap::new();
    for rec in &records {
        *counts.entry((rec.image_id.clone(), rec.version.clone())).or_default() += 1;
        raters
            .entry((rec.image_id.clone(), rec.version.clone()))
            .or_default()
            .insert(rec.rater_id.clone());
    }
    assert_eq!(counts.len(), 100 * 8);
    assert!(counts.values().all(|c| *c == 5));
    assert!(raters.values().all(|r| r.len() == 5));
    let report = study.report();
    assert_eq!(report.total_records, 4000);
    assert!(report.versions.iter().all(|v| v.n == 500));
}

#[test]
fn session_layout_and_order() {
    let plan = StudyPlan::with_images(images(100));
    let mut study = Study::in_memory(plan).unwrap();
    let (info, _) = study.create_session("alice").unwrap();
    let s = study.session(&info.session_id).unwrap();
    assert_eq!(s.items.len(), 170);
    let (cal, rating) = s.items.split_at(10);
    assert!(cal.iter().all(|it| it.phase == Phase::Calibration));
    assert_eq!(cal.iter().filter(|it| it.anchor_score == Some(1) && it.version == "NN").count(), 5);
    assert_eq!(cal.iter().filter(|it| it.anchor_score == Some(5) && it.version == "HR").count(), 5);
    assert!(rating.iter().all(|it| it.phase == Phase::Rating && it.anchor_score.is_none()));
    assert!(rating.windows(2).all(|w| w[0].image != w[1].image));
    let mut per_image: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for it in rating {
        per_image.entry(&it.image).or_default().insert(&it.version);
    }
    assert_eq!(per_image.len(), 20);
    assert!(per_image.values().all(|v| v.len() == 8));
    // tokens are opaque and unique
    let tokens: BTreeSet<&str> = s.items.iter().map(|it| it.item_id.as_str()).collect();
    assert_eq!(tokens.len(), 170);
    assert!(s.items.iter().all(|it| !it.item_id.contains(&it.version) && !it.item_id.contains(&it.image)));
}

#[test]
fn same_seed_same_sessions() {
    let make = |seed| {
        let mut plan = StudyPlan::with_images(images(40));
        plan.seed = seed;
        let mut study = Study::in_memory(plan).unwrap();
        let (info, _) = study.create_session("r").unwrap();
        study.session(&info.session_id).unwrap().items.clone()
    };
    assert_eq!(make(5), make(5));
    assert_ne!(make(5), make(6));
}

#[test]
fn rating_order_never_repeats_an_image_back_to_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let versions: Vec<String> = (0..8).map(|v| format!("v{v}")).collect();
    for n in [2, 3, 5, 20] {
        for _ in 0..200 {
            let order = rating_order(&images(n), &versions, &mut rng);
            assert_eq!(order.len(), n * 8);
            assert!(order.windows(2).all(|w| w[0].0 != w[1].0), "{n}: {order:?}");
            let distinct: BTreeSet<_> = order.iter().collect();
            assert_eq!(distinct.len(), n * 8);
        }
    }
}

#[test]
fn submissions_are_validated_and_idempotent() {
    let mut study = Study::in_memory(StudyPlan::with_images(images(20))).unwrap();
    let (info, _) = study.create_session("bob").unwrap();
    let id = info.session_id.clone();
    let (again, created) = study.create_session("bob").unwrap();
    assert!(!created);
    assert_eq!(again.session_id, id);

    let items = study.session(&id).unwrap().items.clone();
    let first_rating = &items[10];
    // ratings wait for calibration
    assert!(matches!(study.submit(&id, &first_rating.item_id, Some(3)), Err(MosError::Conflict(_))));
    // a calibration item accepts only its anchor
    let anchor = items[0].anchor_score.unwrap() as i64;
    let wrong = if anchor == 1 { 5 } else { 1 };
    assert!(matches!(study.submit(&id, &items[0].item_id, Some(wrong)), Err(MosError::Validation(_))));
    for it in &items[..10] {
        study.submit(&id, &it.item_id, None).unwrap();
    }
    for bad in [0, 6, -1] {
        assert!(matches!(study.submit(&id, &first_rating.item_id, Some(bad)), Err(MosError::Validation(_))));
    }
    assert!(matches!(study.submit(&id, &first_rating.item_id, None), Err(MosError::Validation(_))));
    let ack = study.submit(&id, &first_rating.item_id, Some(4)).unwrap();
    let retry = study.submit(&id, &first_rating.item_id, Some(4)).unwrap();
    assert_eq!(ack, retry);
    assert!(matches!(study.submit(&id, &first_rating.item_id, Some(2)), Err(MosError::Conflict(_))));
    assert_eq!(study.records().len(), 1);
    assert!(matches!(study.submit("nope", &first_rating.item_id, Some(2)), Err(MosError::NotFound(_))));
    assert!(matches!(study.submit(&id, "nope", Some(2)), Err(MosError::NotFound(_))));
    assert!(matches!(study.create_session("  "), Err(MosError::Validation(_))));
}

#[test]
fn the_log_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("ratings.jsonl");
    let plan = StudyPlan::with_images(images(20));
    let (id, answered) = {
        let mut study = Study::open(plan.clone(), &log).unwrap();
        let (info, _) = study.create_session("carol").unwrap();
        let items = study.session(&info.session_id).unwrap().items.clone();
        for it in &items[..10] {
            study.submit(&info.session_id, &it.item_id, None).unwrap();
        }
        for it in &items[10..30] {
            study.submit(&info.session_id, &it.item_id, Some(3)).unwrap();
        }
        study.create_session("dave").unwrap();
        (info.session_id, study.records())
    };
    let study = Study::open(plan.clone(), &log).unwrap();
    assert_eq!(study.records(), answered);
    assert_eq!(study.next(&id).unwrap().progress.answered, 30);
    assert_eq!(study.sessions().count(), 2);
    assert_eq!(study.remaining_capacity().values().sum::<usize>(), 20 * 5 - 2 * 20);

    // a torn final line is dropped, a damaged middle line is fatal
    drop(study);
    let mut bytes = std::fs::read(&log).unwrap();
    bytes.extend_from_slice(b"{\"event\":\"answ");
    std::fs::write(&log, &bytes).unwrap();
    let mut study = Study::open(plan.clone(), &log).unwrap();
    assert_eq!(study.records(), answered);
    let items = study.session(&id).unwrap().items.clone();
    study.submit(&id, &items[30].item_id, Some(5)).unwrap();
    drop(study);
    assert_eq!(Study::open(plan.clone(), &log).unwrap().records().len(), 21);

    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "garbage";
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    assert!(matches!(Study::open(plan.clone(), &log), Err(MosError::CorruptLog { line: 3, .. })));

    // a log written for another plan is refused
    let other_log = dir.path().join("other.jsonl");
    Study::open(plan.clone(), &other_log).unwrap();
    let mut other = plan;
    other.seed = 1;
    assert!(matches!(Study::open(other, &other_log), Err(MosError::InvalidPlan(_))));
}

#[test]
fn plans_are_validated() {
    let ok = StudyPlan::with_images(images(100));
    assert!(ok.validate().is_ok());
    assert_eq!(ok.sessions_at_capacity(), 25);
    let mut p = ok.clone();
    p.images.push("img000".into());
    assert!(p.validate().is_err());
    let mut p = ok.clone();
    p.images_per_rater = 150;
    assert!(p.validate().is_err());
    let mut p = ok.clone();
    p.images.truncate(99);
    assert!(p.validate().is_err(), "99 x 5 is not divisible by 20");
    let mut p = ok.clone();
    p.calibration.high_version = "GT".into();
    assert!(p.validate().is_err());
    let mut p = ok;
    p.versions.push("NN".into());
    assert!(p.validate().is_err());
}
