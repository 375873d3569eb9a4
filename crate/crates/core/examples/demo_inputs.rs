//! Writes the synthetic raw inputs under `fixtures/demo`: a post dump for
//! eight subreddits (200 image posts each, plus reposts, non-image posts and
//! a malformed line) and a matching view-count table.
//!
//! cargo run -p karma-core --example demo_inputs -- fixtures/demo

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SUBREDDITS: [&str; 8] = [
    "aww",
    "pics",
    "funny",
    "OldSchoolCool",
    "photocritique",
    "CrappyDesign",
    "itookapicture",
    "EarthPorn",
];

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw is enough here.
    let (u, v): (f64, f64) = (1.0 - rng.random::<f64>(), rng.random());
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/demo".into()));
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2017);
    let mut posts = BufWriter::new(File::create(dir.join("posts.jsonl"))?);
    let mut views = BufWriter::new(File::create(dir.join("views.csv"))?);
    writeln!(views, "image_id,views")?;

    let mut t = 1_420_070_400i64;
    for (s, sub) in SUBREDDITS.iter().enumerate() {
        let scale = 4.0 + s as f64 * 0.3;
        for i in 0..200 {
            t += rng.random_range(60..7200);
            let id = format!("{}{:03}", sub[..2].to_lowercase(), i);
            let key = format!("{sub}{i:03}x");
            let score = (scale + 1.6 * normal(&mut rng)).exp().round() as i64 - 3;
            let url = format!("https://i.imgur.com/{key}.jpg");
            let title = format!("{sub} picture number {i}");
            let line = serde_json::json!({
                "id": id, "subreddit": sub, "title": title, "url": url,
                "score": score, "created_utc": t,
            });
            writeln!(posts, "{line}")?;
            if i % 40 == 7 {
                // A lower-scoring repost of the same image and title.
                let repost = serde_json::json!({
                    "id": format!("{id}r"), "subreddit": sub, "title": title, "url": url,
                    "score": score / 3, "created_utc": t + 86_400,
                });
                writeln!(posts, "{repost}")?;
            }
            if i % 20 != 13 {
                let v = (1.0 + score.max(0) as f64) * (3.0 + 0.9 * normal(&mut rng)).exp();
                writeln!(views, "{key},{}", v.round() as u64)?;
            }
        }
        let text = serde_json::json!({
            "id": format!("{sub}-self"), "subreddit": sub, "title": "discussion thread",
            "url": format!("https://www.reddit.com/r/{sub}/comments/abc/"), "score": 12, "created_utc": t,
        });
        writeln!(posts, "{text}")?;
        writeln!(posts, "{{\"id\": \"{sub}-broken\", \"subreddit\": \"{sub}\", \"title\": \"no score\"}}")?;
    }
    posts.flush()?;
    views.flush()
}
