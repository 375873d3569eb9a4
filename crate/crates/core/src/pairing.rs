//! Fixed pair-plan generation and least-served-first pair scheduling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Bin, Corpus, CorpusEntry};

pub const DEFAULT_PER_SUBREDDIT: usize = 50;

#[derive(Error, Debug)]
pub enum PairingError {
    #[error("subreddit {subreddit:?} has no {bin} entries")]
    EmptyBin { subreddit: String, bin: Bin },
    #[error("subreddit {subreddit:?}: {pair_type} needs {demanded} distinct pairs but only {available} exist")]
    NotEnoughCombinations {
        subreddit: String,
        pair_type: PairType,
        demanded: usize,
        available: u128,
    },
    #[error("type mix is invalid: {0}")]
    BadMix(String),
    #[error("subreddit {0:?} is not in the corpus")]
    UnknownCorpusSubreddit(String),
    #[error("subreddit {requested:?} is not in the plan (valid: {})", valid.join(", "))]
    UnknownSubreddit { requested: String, valid: Vec<String> },
    #[error("every pair of {0:?} has already been served in this session")]
    Exhausted(String),
    #[error("plan references unknown post id {0:?}")]
    UnknownPost(String),
    #[error("plan document: {0}")]
    Document(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The six permitted unordered bin combinations, ordered by growing score
/// differential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PairType {
    #[serde(rename = "VH-VH")]
    VhVh,
    #[serde(rename = "H-H")]
    HH,
    #[serde(rename = "VH-H")]
    VhH,
    #[serde(rename = "H-M")]
    HM,
    #[serde(rename = "H-L")]
    HL,
    #[serde(rename = "VH-L")]
    VhL,
}

impl PairType {
    pub const ALL: [PairType; 6] = [
        PairType::VhVh,
        PairType::HH,
        PairType::VhH,
        PairType::HM,
        PairType::HL,
        PairType::VhL,
    ];

    pub fn bins(self) -> (Bin, Bin) {
        use Bin::*;
        match self {
            PairType::VhVh => (VeryHigh, VeryHigh),
            PairType::HH => (High, High),
            PairType::VhH => (VeryHigh, High),
            PairType::HM => (High, Medium),
            PairType::HL => (High, Low),
            PairType::VhL => (VeryHigh, Low),
        }
    }

    /// The permitted type for an unordered bin combination, if any.
    pub fn from_bins(a: Bin, b: Bin) -> Option<PairType> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        PairType::ALL.into_iter().find(|t| t.bins() == (lo, hi))
    }

    pub fn label(self) -> &'static str {
        match self {
            PairType::VhVh => "VH-VH",
            PairType::HH => "H-H",
            PairType::VhH => "VH-H",
            PairType::HM => "H-M",
            PairType::HL => "H-L",
            PairType::VhL => "VH-L",
        }
    }
}

impl fmt::Display for PairType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PairType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PairType::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| format!("unknown pair type {s:?}"))
    }
}

/// Target fraction of pairs per type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeMix(BTreeMap<PairType, f64>);

impl Default for TypeMix {
    /// The realized pairing distribution of the original deployment.
    fn default() -> Self {
        TypeMix(BTreeMap::from([
            (PairType::VhVh, 0.33),
            (PairType::HH, 0.215),
            (PairType::VhH, 0.25),
            (PairType::HM, 0.157),
            (PairType::HL, 0.019),
            (PairType::VhL, 0.029),
        ]))
    }
}

impl TypeMix {
    pub fn new(fractions: BTreeMap<PairType, f64>) -> Result<Self, PairingError> {
        let mix = TypeMix(fractions);
        mix.validate()?;
        Ok(mix)
    }

    pub fn fraction(&self, t: PairType) -> f64 {
        self.0.get(&t).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<(), PairingError> {
        if let Some((t, f)) = self.0.iter().find(|(_, f)| !(0.0..=1.0).contains(*f)) {
            return Err(PairingError::BadMix(format!("{t} fraction {f} outside [0, 1]")));
        }
        let total: f64 = self.0.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(PairingError::BadMix(format!("fractions sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Per-subreddit pair counts: every type except VH-VH gets
    /// `round(fraction * per_subreddit)`; VH-VH absorbs the remainder.
    pub fn counts(&self, per_subreddit: usize) -> Result<BTreeMap<PairType, usize>, PairingError> {
        self.validate()?;
        let mut counts = BTreeMap::new();
        let mut assigned = 0usize;
        for t in PairType::ALL.into_iter().skip(1) {
            let c = (self.fraction(t) * per_subreddit as f64).round() as usize;
            assigned += c;
            counts.insert(t, c);
        }
        if assigned > per_subreddit {
            return Err(PairingError::BadMix(format!(
                "rounded counts ({assigned}) exceed {per_subreddit} pairs per subreddit"
            )));
        }
        counts.insert(PairType::VhVh, per_subreddit - assigned);
        Ok(counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub per_subreddit: usize,
    pub type_mix: TypeMix,
    pub seed: u64,
    /// Subreddits to pair; all corpus subreddits when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subreddits: Option<Vec<String>>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            per_subreddit: DEFAULT_PER_SUBREDDIT,
            type_mix: TypeMix::default(),
            seed: 0,
            subreddits: None,
        }
    }
}

/// A pair as stored in the plan: entries referenced by post id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanPair {
    pub pair_id: String,
    pub subreddit: String,
    pub left: String,
    pub right: String,
    pub pair_type: PairType,
}

/// A plan pair with both entries resolved against the corpus.
#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    pub pair_id: &'a str,
    pub subreddit: &'a str,
    pub left: &'a CorpusEntry,
    pub right: &'a CorpusEntry,
    pub pair_type: PairType,
}

impl PlanPair {
    pub fn resolve<'a>(&'a self, corpus: &'a Corpus) -> Result<Pair<'a>, PairingError> {
        let get = |id: &str| corpus.get(id).ok_or_else(|| PairingError::UnknownPost(id.to_string()));
        Ok(Pair {
            pair_id: &self.pair_id,
            subreddit: &self.subreddit,
            left: get(&self.left)?,
            right: get(&self.right)?,
            pair_type: self.pair_type,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPlan {
    pub seed: u64,
    pub config: PlanConfig,
    pub pairs: Vec<PlanPair>,
}

impl PairPlan {
    /// Sorted distinct subreddits in the plan.
    pub fn subreddits(&self) -> Vec<String> {
        let mut subs: Vec<String> = self.pairs.iter().map(|p| p.subreddit.clone()).collect();
        subs.sort();
        subs.dedup();
        subs
    }

    pub fn pair(&self, pair_id: &str) -> Option<&PlanPair> {
        self.pairs.iter().find(|p| p.pair_id == pair_id)
    }

    pub fn pairs_in<'a, 's>(&'a self, subreddit: &'s str) -> impl Iterator<Item = &'a PlanPair> + use<'a, 's> {
        self.pairs.iter().filter(move |p| p.subreddit == subreddit)
    }

    /// Checks every referenced post exists and the stored type matches the bins.
    pub fn check_against(&self, corpus: &Corpus) -> Result<(), PairingError> {
        for p in &self.pairs {
            let pair = p.resolve(corpus)?;
            if PairType::from_bins(pair.left.bin, pair.right.bin) != Some(p.pair_type) {
                return Err(PairingError::BadMix(format!(
                    "pair {} is stored as {} but its bins are {}/{}",
                    p.pair_id, p.pair_type, pair.left.bin, pair.right.bin
                )));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), PairingError> {
        let mut w = std::io::BufWriter::new(writer);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self, PairingError> {
        Ok(serde_json::from_reader(std::io::BufReader::new(reader))?)
    }
}

fn combinations(a: usize, b: usize, same: bool) -> u128 {
    if same {
        (a as u128) * (a as u128).saturating_sub(1) / 2
    } else {
        a as u128 * b as u128
    }
}

/// Draws `count` distinct unordered index pairs from the two pools.
fn sample_pairs(
    pool_a: usize,
    pool_b: usize,
    same: bool,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let available = combinations(pool_a, pool_b, same);
    if (count as u128) * 2 >= available {
        let mut all: Vec<(usize, usize)> = if same {
            (0..pool_a)
                .flat_map(|i| (i + 1..pool_a).map(move |j| (i, j)))
                .collect()
        } else {
            (0..pool_a)
                .flat_map(|i| (0..pool_b).map(move |j| (i, j)))
                .collect()
        };
        let (chosen, _) = all.partial_shuffle(rng, count);
        return chosen.to_vec();
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.random_range(0..pool_a);
        let j = rng.random_range(0..pool_b);
        if same && i == j {
            continue;
        }
        let key = if same { (i.min(j), i.max(j)) } else { (i, j) };
        if seen.insert(key) {
            out.push(key);
        }
    }
    out
}

/// Builds the fixed pair plan. The result depends only on the corpus and
/// the config (including its seed).
pub fn generate_plan(corpus: &Corpus, config: &PlanConfig) -> Result<PairPlan, PairingError> {
    let counts = config.type_mix.counts(config.per_subreddit)?;
    let known = corpus.subreddits();
    let subreddits = match &config.subreddits {
        Some(list) => {
            let mut list = list.clone();
            list.sort();
            list.dedup();
            if let Some(missing) = list.iter().find(|s| !known.contains(s)) {
                return Err(PairingError::UnknownCorpusSubreddit(missing.clone()));
            }
            list
        }
        None => known,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs = Vec::with_capacity(subreddits.len() * config.per_subreddit);
    for sub in &subreddits {
        let mut bins: BTreeMap<Bin, Vec<&CorpusEntry>> = BTreeMap::new();
        for e in corpus.entries().iter().filter(|e| &e.post.subreddit == sub) {
            bins.entry(e.bin).or_default().push(e);
        }
        let pool = |b: Bin| bins.get(&b).map(Vec::as_slice).unwrap_or(&[]);

        let mut required: Vec<Bin> = vec![Bin::VeryHigh, Bin::High];
        for (t, &c) in &counts {
            if c > 0 {
                let (a, b) = t.bins();
                required.extend([a, b]);
            }
        }
        required.sort();
        required.dedup();
        if let Some(&bin) = required.iter().find(|&&b| pool(b).is_empty()) {
            return Err(PairingError::EmptyBin {
                subreddit: sub.clone(),
                bin,
            });
        }

        let mut sub_pairs = Vec::with_capacity(config.per_subreddit);
        for (&t, &c) in &counts {
            if c == 0 {
                continue;
            }
            let (ba, bb) = t.bins();
            let (pa, pb) = (pool(ba), pool(bb));
            let same = ba == bb;
            let available = combinations(pa.len(), pb.len(), same);
            if (c as u128) > available {
                return Err(PairingError::NotEnoughCombinations {
                    subreddit: sub.clone(),
                    pair_type: t,
                    demanded: c,
                    available,
                });
            }
            for (i, j) in sample_pairs(pa.len(), pb.len(), same, c, &mut rng) {
                let (mut left, mut right) = (pa[i], pb[j]);
                if rng.random_bool(0.5) {
                    std::mem::swap(&mut left, &mut right);
                }
                sub_pairs.push((t, left.post.id.clone(), right.post.id.clone()));
            }
        }
        // Numbering after a shuffle keeps pair ids from revealing the type.
        sub_pairs.shuffle(&mut rng);
        for (n, (t, left, right)) in sub_pairs.into_iter().enumerate() {
            pairs.push(PlanPair {
                pair_id: format!("{sub}-{:03}", n + 1),
                subreddit: sub.clone(),
                left,
                right,
                pair_type: t,
            });
        }
    }
    Ok(PairPlan {
        seed: config.seed,
        config: config.clone(),
        pairs,
    })
}

/// Per-pair serve counters. Calls must be serialized per plan.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheduler {
    serve_counts: BTreeMap<String, u64>,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn serve_count(&self, pair_id: &str) -> u64 {
        self.serve_counts.get(pair_id).copied().unwrap_or(0)
    }

    pub fn set_serve_count(&mut self, pair_id: impl Into<String>, count: u64) {
        self.serve_counts.insert(pair_id.into(), count);
    }

    /// Picks uniformly among the least-served pairs of `subreddit` that the
    /// session has not seen, and records the serve.
    pub fn next_pair<'p, R: Rng + ?Sized>(
        &mut self,
        plan: &'p PairPlan,
        session_served: &[String],
        subreddit: &str,
        rng: &mut R,
    ) -> Result<&'p PlanPair, PairingError> {
        let mut any = false;
        let mut best = u64::MAX;
        let mut candidates: Vec<&PlanPair> = Vec::new();
        for p in plan.pairs_in(subreddit) {
            any = true;
            if session_served.iter().any(|s| s == &p.pair_id) {
                continue;
            }
            let c = self.serve_count(&p.pair_id);
            if c < best {
                best = c;
                candidates.clear();
            }
            if c == best {
                candidates.push(p);
            }
        }
        if !any {
            return Err(PairingError::UnknownSubreddit {
                requested: subreddit.to_string(),
                valid: plan.subreddits(),
            });
        }
        if candidates.is_empty() {
            return Err(PairingError::Exhausted(subreddit.to_string()));
        }
        let chosen = candidates[rng.random_range(0..candidates.len())];
        *self.serve_counts.entry(chosen.pair_id.clone()).or_insert(0) += 1;
        Ok(chosen)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{compute_percentiles, Post};

    pub(crate) fn corpus(subs: &[&str], per_sub: i64) -> Corpus {
        let posts: Vec<Post> = subs
            .iter()
            .flat_map(|s| {
                (0..per_sub).map(move |i| Post {
                    id: format!("{s}_{i}"),
                    subreddit: s.to_string(),
                    title: format!("{s} post {i}"),
                    image_url: format!("https://i.imgur.com/{s}{i}.jpg"),
                    score: i * 3 + 1,
                    created_at: i,
                })
            })
            .collect();
        Corpus::new(compute_percentiles(&posts, 2).unwrap().entries).unwrap()
    }

    #[test]
    fn default_counts() {
        let counts = TypeMix::default().counts(50).unwrap();
        let got: Vec<usize> = PairType::ALL.iter().map(|t| counts[t]).collect();
        // 0.215*50=10.75, 0.25*50=12.5, 0.157*50=7.85, 0.019*50=0.95, 0.029*50=1.45
        assert_eq!(got, [16, 11, 13, 8, 1, 1]);
        assert_eq!(got.iter().sum::<usize>(), 50);
    }

    #[test]
    fn paper_mix_over_eight_subreddits() {
        let subs = ["a", "b", "c", "d", "e", "f", "g", "h"];
        let c = corpus(&subs, 200);
        let plan = generate_plan(&c, &PlanConfig::default()).unwrap();
        assert_eq!(plan.pairs.len(), 400);
        for s in subs {
            assert_eq!(plan.pairs_in(s).count(), 50);
        }
        plan.check_against(&c).unwrap();
        let mut keys = HashSet::new();
        for p in &plan.pairs {
            let k = if p.left < p.right {
                (&p.left, &p.right)
            } else {
                (&p.right, &p.left)
            };
            assert!(keys.insert(k), "duplicate pair {k:?}");
            assert_ne!(p.left, p.right);
        }
    }

    #[test]
    fn plan_is_deterministic() {
        let c = corpus(&["a", "b"], 150);
        let cfg = PlanConfig {
            seed: 99,
            ..PlanConfig::default()
        };
        assert_eq!(generate_plan(&c, &cfg).unwrap(), generate_plan(&c, &cfg).unwrap());
        let other = PlanConfig { seed: 100, ..cfg };
        assert_ne!(generate_plan(&c, &other).unwrap().pairs, generate_plan(&c, &PlanConfig { seed: 99, ..PlanConfig::default() }).unwrap().pairs);
    }

    #[test]
    fn missing_vh_bin_names_subreddit() {
        // 10 posts: percentiles k/9, only 9/9 = 1.0 reaches VH; drop it.
        let posts: Vec<Post> = (0..10)
            .map(|i| Post {
                id: format!("p{i}"),
                subreddit: "tiny".into(),
                title: "t".into(),
                image_url: format!("https://i.imgur.com/{i}.png"),
                score: i,
                created_at: 0,
            })
            .collect();
        let entries: Vec<_> = compute_percentiles(&posts, 2)
            .unwrap()
            .entries
            .into_iter()
            .filter(|e| e.bin != Bin::VeryHigh)
            .collect();
        let c = Corpus::new(entries).unwrap();
        let err = generate_plan(&c, &PlanConfig::default()).unwrap_err();
        match err {
            PairingError::EmptyBin { subreddit, bin } => {
                assert_eq!(subreddit, "tiny");
                assert_eq!(bin, Bin::VeryHigh);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn too_few_combinations() {
        let c = corpus(&["a"], 20);
        let err = generate_plan(&c, &PlanConfig::default()).unwrap_err();
        assert!(matches!(err, PairingError::NotEnoughCombinations { .. }), "{err}");
    }

    #[test]
    fn next_pair_skips_served() {
        let c = corpus(&["a"], 200);
        let plan = generate_plan(&c, &PlanConfig::default()).unwrap();
        let served: Vec<String> = plan.pairs[..9].iter().map(|p| p.pair_id.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut sched = Scheduler::new();
            let p = sched.next_pair(&plan, &served, "a", &mut rng).unwrap();
            assert!(!served.contains(&p.pair_id));
        }
    }

    #[test]
    fn next_pair_prefers_least_served() {
        let c = corpus(&["a"], 200);
        let plan = generate_plan(&c, &PlanConfig::default()).unwrap();
        let mut sched = Scheduler::new();
        for p in &plan.pairs {
            sched.set_serve_count(p.pair_id.clone(), 5);
        }
        sched.set_serve_count("a-017", 0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = sched.next_pair(&plan, &[], "a", &mut rng).unwrap();
        assert_eq!(p.pair_id, "a-017");
        assert_eq!(sched.serve_count("a-017"), 1);
    }

    #[test]
    fn next_pair_uniform_when_symmetric() {
        let c = corpus(&["a"], 200);
        let plan = generate_plan(&c, &PlanConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hits = BTreeMap::new();
        for _ in 0..5000 {
            let mut sched = Scheduler::new();
            let p = sched.next_pair(&plan, &[], "a", &mut rng).unwrap();
            *hits.entry(p.pair_id.clone()).or_insert(0u32) += 1;
        }
        assert_eq!(hits.len(), 50);
        // Expected 100 per pair; sd 9.9.
        assert!(hits.values().all(|&h| (60..=140).contains(&h)), "{hits:?}");
    }

    #[test]
    fn exhaustion_and_unknown() {
        let c = corpus(&["a"], 200);
        let plan = generate_plan(&c, &PlanConfig::default()).unwrap();
        let all: Vec<String> = plan.pairs.iter().map(|p| p.pair_id.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sched = Scheduler::new();
        assert!(matches!(
            sched.next_pair(&plan, &all, "a", &mut rng),
            Err(PairingError::Exhausted(_))
        ));
        assert!(matches!(
            sched.next_pair(&plan, &[], "zzz", &mut rng),
            Err(PairingError::UnknownSubreddit { .. })
        ));
    }

    #[test]
    fn type_mix_validation() {
        let bad = TypeMix::new(BTreeMap::from([(PairType::VhVh, 0.5)]));
        assert!(bad.is_err());
        let ok = TypeMix::new(BTreeMap::from([(PairType::VhVh, 0.5), (PairType::VhL, 0.5)])).unwrap();
        assert_eq!(ok.counts(10).unwrap()[&PairType::VhL], 5);
        let json = serde_json::to_string(&TypeMix::default()).unwrap();
        assert!(json.contains("\"VH-VH\":0.33"), "{json}");
    }

    #[test]
    fn from_bins_rejects_forbidden() {
        use Bin::*;
        assert_eq!(PairType::from_bins(Low, High), Some(PairType::HL));
        assert_eq!(PairType::from_bins(Low, Low), None);
        assert_eq!(PairType::from_bins(Medium, Low), None);
        assert_eq!(PairType::from_bins(Medium, Medium), None);
        assert_eq!(PairType::from_bins(VeryHigh, Medium), None);
    }
}
