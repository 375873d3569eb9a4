//! Post ingestion, repost deduplication, subreddit-conditioned score
//! percentiles and VH/H/M/L binning.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Subreddits with fewer posts than this are rejected from percentile binning.
pub const MIN_SUBREDDIT_POSTS: usize = 100;

const IMAGE_EXTENSIONS: &[&str] = &["jpg", "jpeg", "png", "gif", "webp"];

#[derive(Error, Debug)]
pub enum CorpusError {
    #[error("failed to read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("percentile {0} outside [0, 1]")]
    PercentileOutOfRange(f64),
    #[error("duplicate image key {0:?} in views input")]
    DuplicateViewKey(String),
    #[error("views input line {line}: {message}")]
    BadViewsRow { line: u64, message: String },
    #[error("minimum posts per subreddit must be at least 2, got {0}")]
    MinPostsTooSmall(usize),
    #[error("corpus document: {0}")]
    Document(#[from] serde_json::Error),
    #[error("duplicate post id {0:?} in corpus")]
    DuplicateId(String),
}

/// A single image post as it appears in a dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub subreddit: String,
    pub title: String,
    pub image_url: String,
    /// Upvotes minus downvotes; may be negative.
    pub score: i64,
    pub created_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bin {
    #[serde(rename = "VH")]
    VeryHigh,
    #[serde(rename = "H")]
    High,
    #[serde(rename = "M")]
    Medium,
    #[serde(rename = "L")]
    Low,
}

impl Bin {
    pub const ALL: [Bin; 4] = [Bin::VeryHigh, Bin::High, Bin::Medium, Bin::Low];

    pub fn label(self) -> &'static str {
        match self {
            Bin::VeryHigh => "VH",
            Bin::High => "H",
            Bin::Medium => "M",
            Bin::Low => "L",
        }
    }
}

impl fmt::Display for Bin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Bin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "VH" => Ok(Bin::VeryHigh),
            "H" => Ok(Bin::High),
            "M" => Ok(Bin::Medium),
            "L" => Ok(Bin::Low),
            other => Err(format!("unknown bin {other:?}")),
        }
    }
}

/// Maps a within-subreddit score percentile onto its bin. Boundaries are
/// closed on the left: 0.95 is VH, 0.75 is H, 0.50 is M.
pub fn assign_bin(percentile: f64) -> Result<Bin, CorpusError> {
    if !(0.0..=1.0).contains(&percentile) {
        return Err(CorpusError::PercentileOutOfRange(percentile));
    }
    Ok(if percentile >= 0.95 {
        Bin::VeryHigh
    } else if percentile >= 0.75 {
        Bin::High
    } else if percentile >= 0.50 {
        Bin::Medium
    } else {
        Bin::Low
    })
}

/// A post placed within its subreddit's score distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    #[serde(flatten)]
    pub post: Post,
    #[serde(serialize_with = "serialize_six_places")]
    pub percentile: f64,
    pub bin: Bin,
    pub views: Option<u64>,
}

impl CorpusEntry {
    pub fn id(&self) -> &str {
        &self.post.id
    }

    pub fn score(&self) -> i64 {
        self.post.score
    }
}

fn serialize_six_places<S: serde::Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((value * 1e6).round() / 1e6)
}

#[derive(Debug, Deserialize)]
struct RawPost {
    id: Option<String>,
    subreddit: Option<String>,
    title: Option<String>,
    url: Option<String>,
    score: Option<i64>,
    created_utc: Option<i64>,
}

/// Result of parsing a post dump.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct ParsedPosts {
    pub posts: Vec<Post>,
    /// Lines that were not valid records or lacked a required field.
    pub skipped: usize,
    /// Well-formed records whose URL does not point at an image.
    pub non_image: usize,
}

/// Parses a line-delimited dump, keeping only image-bearing posts.
///
/// Malformed lines are skipped and counted. Only a failure of the underlying
/// reader is fatal.
pub fn parse_posts<R: BufRead>(reader: R) -> Result<ParsedPosts, CorpusError> {
    let mut out = ParsedPosts::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPost = match serde_json::from_str(&line) {
            Ok(raw) => raw,
            Err(_) => {
                out.skipped += 1;
                continue;
            }
        };
        let (Some(id), Some(subreddit), Some(title), Some(url), Some(score), Some(created_at)) = (
            raw.id,
            raw.subreddit,
            raw.title,
            raw.url,
            raw.score,
            raw.created_utc,
        ) else {
            out.skipped += 1;
            continue;
        };
        if title.trim().is_empty() || id.is_empty() || subreddit.is_empty() {
            out.skipped += 1;
            continue;
        }
        if !is_image_url(&url) {
            out.non_image += 1;
            continue;
        }
        out.posts.push(Post {
            id,
            subreddit,
            title,
            image_url: url,
            score,
            created_at,
        });
    }
    Ok(out)
}

/// An URL is image-bearing when its last path segment carries an image
/// extension or it is hosted on imgur.
pub fn is_image_url(url: &str) -> bool {
    let path = strip_query(url);
    let host = path
        .split("://")
        .nth(1)
        .and_then(|rest| rest.split('/').next())
        .unwrap_or("");
    if host == "imgur.com" || host.ends_with(".imgur.com") {
        return true;
    }
    let last = path.rsplit('/').next().unwrap_or("");
    match last.rsplit_once('.') {
        Some((_, ext)) => IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()),
        None => false,
    }
}

fn strip_query(url: &str) -> &str {
    let end = url.find(['?', '#']).unwrap_or(url.len());
    &url[..end]
}

/// The join key between a post and an external view count: the final path
/// segment of the image URL without its extension.
pub fn image_key(url: &str) -> &str {
    let path = strip_query(url).trim_end_matches('/');
    let last = path.rsplit('/').next().unwrap_or("");
    match last.rsplit_once('.') {
        Some((stem, _)) if !stem.is_empty() => stem,
        _ => last,
    }
}

/// Among posts sharing `(image_url, title)`, keeps the highest scoring one.
/// Equal scores keep the earliest `created_at`, then the smallest id.
/// Survivors stay in input order.
pub fn dedupe_reposts(posts: Vec<Post>) -> Vec<Post> {
    let mut best: HashMap<(&str, &str), usize> = HashMap::new();
    for (i, p) in posts.iter().enumerate() {
        let key = (p.image_url.as_str(), p.title.as_str());
        match best.get(&key) {
            None => {
                best.insert(key, i);
            }
            Some(&j) => {
                let q = &posts[j];
                let better = (p.score, -p.created_at, std::cmp::Reverse(&p.id))
                    > (q.score, -q.created_at, std::cmp::Reverse(&q.id));
                if better {
                    best.insert(key, i);
                }
            }
        }
    }
    let mut keep = vec![false; posts.len()];
    for &i in best.values() {
        keep[i] = true;
    }
    posts
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedSubreddit {
    pub subreddit: String,
    pub posts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Percentiles {
    /// Entries in input order, restricted to accepted subreddits.
    pub entries: Vec<CorpusEntry>,
    pub rejected: Vec<RejectedSubreddit>,
}

/// Computes each post's score percentile within its own subreddit as the
/// fraction of the other posts with a strictly lower score, and bins it.
pub fn compute_percentiles(posts: &[Post], min_posts: usize) -> Result<Percentiles, CorpusError> {
    if min_posts < 2 {
        return Err(CorpusError::MinPostsTooSmall(min_posts));
    }
    let mut by_sub: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
    for p in posts {
        by_sub.entry(p.subreddit.as_str()).or_default().push(p.score);
    }
    let mut rejected = Vec::new();
    for (sub, scores) in by_sub.iter_mut() {
        scores.sort_unstable();
        if scores.len() < min_posts {
            rejected.push(RejectedSubreddit {
                subreddit: sub.to_string(),
                posts: scores.len(),
            });
        }
    }
    let mut entries = Vec::with_capacity(posts.len());
    for p in posts {
        let scores = &by_sub[p.subreddit.as_str()];
        if scores.len() < min_posts {
            continue;
        }
        let below = scores.partition_point(|&s| s < p.score);
        let percentile = below as f64 / (scores.len() - 1) as f64;
        entries.push(CorpusEntry {
            post: p.clone(),
            percentile,
            bin: assign_bin(percentile)?,
            views: None,
        });
    }
    Ok(Percentiles { entries, rejected })
}

/// External view counts keyed by image key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ViewTable(BTreeMap<String, u64>);

impl ViewTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a count, rejecting a key that is already present.
    pub fn insert(&mut self, key: impl Into<String>, views: u64) -> Result<(), CorpusError> {
        let key = key.into();
        if self.0.contains_key(&key) {
            return Err(CorpusError::DuplicateViewKey(key));
        }
        self.0.insert(key, views);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<u64> {
        self.0.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Reads `image_id,views` comma-separated text.
pub fn parse_views<R: Read>(reader: R) -> Result<ViewTable, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut table = ViewTable::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CorpusError::Io(io),
            other => CorpusError::BadViewsRow {
                line,
                message: format!("{other:?}"),
            },
        })?;
        let (Some(key), Some(count)) = (rec.get(0), rec.get(1)) else {
            return Err(CorpusError::BadViewsRow {
                line,
                message: "expected two columns".into(),
            });
        };
        let count: u64 = count.parse().map_err(|_| CorpusError::BadViewsRow {
            line,
            message: format!("views {count:?} is not a nonnegative integer"),
        })?;
        table.insert(key, count)?;
    }
    Ok(table)
}

/// Attaches view counts to entries whose image key appears in `views`.
pub fn join_views(mut entries: Vec<CorpusEntry>, views: &ViewTable) -> Vec<CorpusEntry> {
    for e in &mut entries {
        e.views = views.get(image_key(&e.post.image_url));
    }
    entries
}

/// Summary of a full ingest run.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub entries: Vec<CorpusEntry>,
    pub skipped_lines: usize,
    pub non_image: usize,
    pub reposts_dropped: usize,
    pub rejected: Vec<RejectedSubreddit>,
}

/// parse → dedupe → percentiles → views.
pub fn ingest<R: BufRead>(
    posts: R,
    views: &ViewTable,
    min_posts: usize,
) -> Result<IngestReport, CorpusError> {
    let parsed = parse_posts(posts)?;
    let before = parsed.posts.len();
    let deduped = dedupe_reposts(parsed.posts);
    let reposts_dropped = before - deduped.len();
    let pct = compute_percentiles(&deduped, min_posts)?;
    Ok(IngestReport {
        entries: join_views(pct.entries, views),
        skipped_lines: parsed.skipped,
        non_image: parsed.non_image,
        reposts_dropped,
        rejected: pct.rejected,
    })
}

pub fn write_corpus<W: Write>(entries: &[CorpusEntry], writer: W) -> Result<(), CorpusError> {
    let mut w = std::io::BufWriter::new(writer);
    serde_json::to_writer_pretty(&mut w, entries)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_corpus<R: Read>(reader: R) -> Result<Vec<CorpusEntry>, CorpusError> {
    Ok(serde_json::from_reader(std::io::BufReader::new(reader))?)
}

/// Id-indexed read-only view over corpus entries.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(entries: Vec<CorpusEntry>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if by_id.insert(e.post.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(e.post.id.clone()));
            }
        }
        Ok(Self { entries, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&CorpusEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted distinct subreddit names.
    pub fn subreddits(&self) -> Vec<String> {
        let mut subs: Vec<String> = self.entries.iter().map(|e| e.post.subreddit.clone()).collect();
        subs.sort();
        subs.dedup();
        subs
    }
}
