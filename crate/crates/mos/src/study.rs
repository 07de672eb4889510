use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MosError, Result};
use crate::plan::StudyPlan;
use crate::report::{aggregate_mos, MosReport};

pub const MIN_SCORE: i64 = 1;
pub const MAX_SCORE: i64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Calibration,
    Rating,
}

/// One screen of a session. The version is never sent to the rater.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionItem {
    /// Opaque token, also used in the image URL.
    pub item_id: String,
    pub image: String,
    pub version: String,
    pub phase: Phase,
    /// Fixed score shown with calibration exemplars.
    pub anchor_score: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub score: Option<u8>,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub rater_id: String,
    pub ordinal: u64,
    pub created: DateTime<Utc>,
    /// Images whose versions this rater scores.
    pub assigned: Vec<String>,
    pub items: Vec<SessionItem>,
    #[serde(skip)]
    pub answers: BTreeMap<usize, Answer>,
}

impl Session {
    pub fn answered(&self) -> usize {
        self.answers.len()
    }

    pub fn calibration_done(&self) -> bool {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.phase == Phase::Calibration)
            .all(|(i, _)| self.answers.contains_key(&i))
    }

    pub fn next_index(&self) -> Option<usize> {
        (0..self.items.len()).find(|i| !self.answers.contains_key(i))
    }
}

/// Rater-facing view of the next item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemView {
    pub item_id: String,
    pub position: usize,
    pub phase: Phase,
    pub image_url: String,
    pub anchor_score: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextView {
    pub session_id: String,
    pub progress: Progress,
    pub done: bool,
    pub item: Option<ItemView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub rater_id: String,
    pub calibration_items: usize,
    pub rating_items: usize,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acknowledgement {
    pub session_id: String,
    pub item_id: String,
    pub score: Option<u8>,
    pub timestamp: DateTime<Utc>,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub image_id: String,
    pub version: String,
    pub score: u8,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Plan { plan: StudyPlan },
    SessionCreated { session: Session },
    Answer {
        session_id: String,
        index: usize,
        answer: Answer,
    },
}

/// Append-only JSON-lines log; each event is synced before it is acknowledged.
struct RecordLog {
    file: File,
}

impl RecordLog {
    fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// Study state: sessions, answers and remaining rater capacity per image.
pub struct Study {
    plan: StudyPlan,
    sessions: BTreeMap<String, Session>,
    by_rater: HashMap<String, String>,
    by_item: HashMap<String, (String, usize)>,
    remaining: BTreeMap<String, usize>,
    log: Option<RecordLog>,
    log_path: Option<PathBuf>,
}

impl Study {
    /// In-memory study (nothing persisted).
    pub fn in_memory(plan: StudyPlan) -> Result<Self> {
        plan.validate()?;
        let remaining = plan
            .images
            .iter()
            .map(|i| (i.clone(), plan.raters_per_image))
            .collect();
        Ok(Self {
            plan,
            sessions: BTreeMap::new(),
            by_rater: HashMap::new(),
            by_item: HashMap::new(),
            remaining,
            log: None,
            log_path: None,
        })
    }

    /// Opens (or creates) a study backed by the record log at `path`, replaying it.
    pub fn open(plan: StudyPlan, path: &Path) -> Result<Self> {
        let mut study = Self::in_memory(plan)?;
        let existed = path.exists();
        if existed {
            study.replay(path)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        study.log = Some(RecordLog { file });
        study.log_path = Some(path.to_path_buf());
        if !existed || study.sessions.is_empty() && std::fs::metadata(path)?.len() == 0 {
            let event = Event::Plan {
                plan: study.plan.clone(),
            };
            study.persist(&event)?;
        }
        Ok(study)
    }

    fn replay(&mut self, path: &Path) -> Result<()> {
        let reader = BufReader::new(File::open(path)?);
        let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
        let bytes = std::fs::read(path)?;
        let torn_tail = !bytes.is_empty() && !bytes.ends_with(b"\n");
        for (n, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = match serde_json::from_str(line) {
                Ok(e) => e,
                Err(e) if torn_tail && n + 1 == lines.len() => {
                    tracing::warn!(line = n + 1, error = %e, "ignoring torn final log line");
                    break;
                }
                Err(e) => {
                    return Err(MosError::CorruptLog {
                        line: n + 1,
                        reason: e.to_string(),
                    })
                }
            };
            let corrupt = |reason: String| MosError::CorruptLog { line: n + 1, reason };
            match event {
                Event::Plan { plan } => {
                    if plan != self.plan {
                        return Err(MosError::InvalidPlan(format!(
                            "record log {} was written for a different plan",
                            path.display()
                        )));
                    }
                }
                Event::SessionCreated { session } => self.apply_session(session).map_err(|e| corrupt(e.to_string()))?,
                Event::Answer {
                    session_id,
                    index,
                    answer,
                } => {
                    let s = self
                        .sessions
                        .get_mut(&session_id)
                        .ok_or_else(|| corrupt(format!("answer for unknown session {session_id}")))?;
                    if index >= s.items.len() {
                        return Err(corrupt(format!("item {index} out of range")));
                    }
                    s.answers.insert(index, answer);
                }
            }
        }
        if torn_tail {
            // drop the partial line so later appends start on a fresh line
            let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1);
            OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
        }
        Ok(())
    }

    fn persist(&mut self, event: &Event) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.append(event)?;
        }
        Ok(())
    }

    fn apply_session(&mut self, session: Session) -> Result<()> {
        for img in &session.assigned {
            let cap = self
                .remaining
                .get_mut(img)
                .ok_or_else(|| MosError::NotFound(format!("image {img}")))?;
            *cap = cap
                .checked_sub(1)
                .ok_or_else(|| MosError::Conflict(format!("image {img} over-assigned")))?;
        }
        for (i, item) in session.items.iter().enumerate() {
            self.by_item.insert(item.item_id.clone(), (session.id.clone(), i));
        }
        self.by_rater.insert(session.rater_id.clone(), session.id.clone());
        self.sessions.insert(session.id.clone(), session);
        Ok(())
    }

    pub fn plan(&self) -> &StudyPlan {
        &self.plan
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    pub fn session(&self, id: &str) -> Result<&Session> {
        self.sessions
            .get(id)
            .ok_or_else(|| MosError::NotFound(format!("session {id}")))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    /// Remaining rater slots per image.
    pub fn remaining_capacity(&self) -> &BTreeMap<String, usize> {
        &self.remaining
    }

    fn info(&self, s: &Session) -> SessionInfo {
        SessionInfo {
            session_id: s.id.clone(),
            rater_id: s.rater_id.clone(),
            calibration_items: self.plan.calibration_items(),
            rating_items: self.plan.rating_items(),
            progress: Progress {
                answered: s.answered(),
                total: s.items.len(),
            },
        }
    }

    /// Opens a session for `rater_id`, or returns the rater's existing one.
    ///
    /// The boolean is true when a new session was created.
    pub fn create_session(&mut self, rater_id: &str) -> Result<(SessionInfo, bool)> {
        let rater_id = rater_id.trim();
        if rater_id.is_empty() {
            return Err(MosError::Validation("rater_id must not be empty".into()));
        }
        if let Some(id) = self.by_rater.get(rater_id) {
            return Ok((self.info(&self.sessions[id]), false));
        }
        let ordinal = self.sessions.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.plan.seed);
        rng.set_stream(ordinal);
        let assigned = self.assign(&mut rng)?;
        let items = self.build_items(&assigned, &mut rng);
        let session = Session {
            id: format!("s{ordinal:05}-{:08x}", rng.random::<u32>()),
            rater_id: rater_id.to_string(),
            ordinal,
            created: Utc::now(),
            assigned,
            items,
            answers: BTreeMap::new(),
        };
        self.persist(&Event::SessionCreated {
            session: session.clone(),
        })?;
        let info = self.info(&session);
        self.apply_session(session)?;
        Ok((info, true))
    }

    /// Picks the images with the most remaining capacity; ties are broken at random.
    fn assign(&self, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        let mut pool: Vec<(&String, usize)> = self
            .remaining
            .iter()
            .filter(|(_, c)| **c > 0)
            .map(|(k, c)| (k, *c))
            .collect();
        if pool.len() < self.plan.images_per_rater {
            return Err(MosError::NoCapacity);
        }
        pool.shuffle(rng);
        pool.sort_by(|a, b| b.1.cmp(&a.1));
        Ok(pool
            .into_iter()
            .take(self.plan.images_per_rater)
            .map(|(k, _)| k.clone())
            .collect())
    }

    fn build_items(&self, assigned: &[String], rng: &mut ChaCha8Rng) -> Vec<SessionItem> {
        let token = |rng: &mut ChaCha8Rng| format!("{:032x}", rng.random::<u128>());
        let cal = &self.plan.calibration;
        let mut items = Vec::new();
        let mut exemplars: Vec<&String> = self.plan.images.iter().collect();
        exemplars.shuffle(rng);
        for img in exemplars.into_iter().take(cal.per_anchor) {
            for (version, anchor) in [(&cal.low_version, 1), (&cal.high_version, 5)] {
                items.push(SessionItem {
                    item_id: token(rng),
                    image: img.clone(),
                    version: version.clone(),
                    phase: Phase::Calibration,
                    anchor_score: Some(anchor),
                });
            }
        }
        for (image, version) in rating_order(assigned, &self.plan.versions, rng) {
            items.push(SessionItem {
                item_id: token(rng),
                image,
                version,
                phase: Phase::Rating,
                anchor_score: None,
            });
        }
        items
    }

    pub fn next(&self, session_id: &str) -> Result<NextView> {
        let s = self.session(session_id)?;
        let item = s.next_index().map(|i| {
            let it = &s.items[i];
            ItemView {
                item_id: it.item_id.clone(),
                position: i,
                phase: it.phase,
                image_url: format!("/images/{}", it.item_id),
                anchor_score: it.anchor_score,
            }
        });
        Ok(NextView {
            session_id: s.id.clone(),
            progress: Progress {
                answered: s.answered(),
                total: s.items.len(),
            },
            done: item.is_none(),
            item,
        })
    }

    /// Records a score (rating items) or an acknowledgement (calibration items).
    ///
    /// Retrying with the same payload returns the original acknowledgement.
    pub fn submit(&mut self, session_id: &str, item_id: &str, score: Option<i64>) -> Result<Acknowledgement> {
        let s = self.session(session_id)?;
        let index = s
            .items
            .iter()
            .position(|it| it.item_id == item_id)
            .ok_or_else(|| MosError::NotFound(format!("item {item_id} in session {session_id}")))?;
        let item = &s.items[index];
        let score = match (item.phase, score) {
            (Phase::Calibration, None) => None,
            (Phase::Calibration, Some(v)) if Some(v) == item.anchor_score.map(i64::from) => item.anchor_score,
            (Phase::Calibration, Some(v)) => {
                return Err(MosError::Validation(format!(
                    "calibration item is anchored at {}, got {v}",
                    item.anchor_score.unwrap_or_default()
                )))
            }
            (Phase::Rating, None) => return Err(MosError::Validation("score is required".into())),
            (Phase::Rating, Some(v)) if (MIN_SCORE..=MAX_SCORE).contains(&v) => Some(v as u8),
            (Phase::Rating, Some(v)) => {
                return Err(MosError::Validation(format!(
                    "score {v} outside {MIN_SCORE}..={MAX_SCORE}"
                )))
            }
        };
        let progress = |s: &Session| Progress {
            answered: s.answered(),
            total: s.items.len(),
        };
        if let Some(prev) = s.answers.get(&index) {
            if prev.score == score {
                return Ok(Acknowledgement {
                    session_id: s.id.clone(),
                    item_id: item_id.to_string(),
                    score,
                    timestamp: prev.timestamp,
                    progress: progress(s),
                });
            }
            return Err(MosError::Conflict(format!(
                "item {item_id} already scored {:?}",
                prev.score
            )));
        }
        if item.phase == Phase::Rating && !s.calibration_done() {
            return Err(MosError::Conflict("calibration is not complete".into()));
        }
        let answer = Answer {
            score,
            timestamp: Utc::now(),
        };
        self.persist(&Event::Answer {
            session_id: session_id.to_string(),
            index,
            answer: answer.clone(),
        })?;
        let s = self.sessions.get_mut(session_id).expect("checked above");
        s.answers.insert(index, answer.clone());
        Ok(Acknowledgement {
            session_id: s.id.clone(),
            item_id: item_id.to_string(),
            score,
            timestamp: answer.timestamp,
            progress: progress(s),
        })
    }

    /// Rating-phase scores; calibration acknowledgements are excluded.
    pub fn records(&self) -> Vec<RatingRecord> {
        let mut out = Vec::new();
        for s in self.sessions.values() {
            for (i, a) in &s.answers {
                let it = &s.items[*i];
                if let (Phase::Rating, Some(score)) = (it.phase, a.score) {
                    out.push(RatingRecord {
                        rater_id: s.rater_id.clone(),
                        image_id: it.image.clone(),
                        version: it.version.clone(),
                        score,
                        timestamp: a.timestamp,
                    });
                }
            }
        }
        out
    }

    pub fn report(&self) -> MosReport {
        aggregate_mos(&self.records(), &self.plan.versions)
    }

    /// Looks up the stimulus behind an opaque item token.
    pub fn resolve_token(&self, token: &str) -> Option<(&str, &str)> {
        let (sid, i) = self.by_item.get(token)?;
        let it = &self.sessions.get(sid)?.items[*i];
        Some((it.image.as_str(), it.version.as_str()))
    }
}

/// Random order of all (image, version) pairs in which no image appears twice in a row.
///
/// Each step draws an image with probability proportional to its remaining
/// versions, excluding the previous image, unless one image must be taken
/// now to keep the rest of the sequence feasible.
pub fn rating_order(images: &[String], versions: &[String], rng: &mut impl Rng) -> Vec<(String, String)> {
    let mut left: Vec<Vec<&String>> = images
        .iter()
        .map(|_| {
            let mut v: Vec<&String> = versions.iter().collect();
            v.shuffle(rng);
            v
        })
        .collect();
    let mut total: usize = left.iter().map(Vec::len).sum();
    let mut prev: Option<usize> = None;
    let mut out = Vec::with_capacity(total);
    while total > 0 {
        let (heavy, heavy_n) = left
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.len()))
            .max_by_key(|&(i, n)| (n, std::cmp::Reverse(i)))
            .expect("non-empty");
        let forced = 2 * heavy_n > total && Some(heavy) != prev;
        let pick = if forced {
            heavy
        } else {
            let weights: Vec<usize> = left
                .iter()
                .enumerate()
                .map(|(i, v)| if Some(i) == prev { 0 } else { v.len() })
                .collect();
            let sum: usize = weights.iter().sum();
            if sum == 0 {
                // only the previous image is left; cannot happen with two or more images
                prev.expect("some image remains")
            } else {
                let mut r = rng.random_range(0..sum);
                weights
                    .iter()
                    .position(|w| {
                        if r < *w {
                            true
                        } else {
                            r -= w;
                            false
                        }
                    })
                    .expect("r < sum")
            }
        };
        let version = left[pick].pop().expect("picked image has versions left");
        out.push((images[pick].clone(), version.clone()));
        total -= 1;
        prev = Some(pick);
    }
    out
}
