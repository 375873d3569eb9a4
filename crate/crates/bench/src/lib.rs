//! Inputs shared by the kernel benchmarks.

use karma_core::corpus::{compute_percentiles, Corpus, Post};
use karma_core::game::Judgment;
use karma_core::pairing::{generate_plan, PairPlan, PlanConfig};
use karma_core::simulate::{simulate_players, PlayerModel, PreferenceModel};

/// `subreddits` × `posts` image posts with distinct scores.
pub fn corpus(subreddits: usize, posts: usize) -> Corpus {
    let all: Vec<Post> = (0..subreddits)
        .flat_map(|s| {
            (0..posts).map(move |i| Post {
                id: format!("s{s}p{i}"),
                subreddit: format!("sub{s}"),
                title: format!("post {i}"),
                image_url: format!("https://i.imgur.com/s{s}p{i}.jpg"),
                score: ((i * 7919) % posts) as i64,
                created_at: i as i64,
            })
        })
        .collect();
    Corpus::new(compute_percentiles(&all, 2).expect("valid posts").entries).expect("unique ids")
}

/// An eight-subreddit corpus, its default plan and `sessions` simulated games.
pub fn judged(sessions: usize) -> (Corpus, PairPlan, Vec<Judgment>) {
    let corpus = corpus(8, 200);
    let plan = generate_plan(&corpus, &PlanConfig::default()).expect("plan fits corpus");
    let model = PlayerModel {
        preference: PreferenceModel::Logistic { intercept: 0.1, slope: 2.0 },
        ..PlayerModel::coin()
    };
    let log = simulate_players(&plan, &corpus, &model, sessions, 1).expect("valid model");
    (corpus, plan, log.judgments)
}
