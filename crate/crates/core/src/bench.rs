//! Roadmap build and query timing on synthetic teleoperation traces.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{clamp, Configuration, JointLimits};
use crate::planner::astar;
use crate::roadmap::{Roadmap, VertexId, DEFAULT_EPSILON};

pub const BENCHMARK_QUERIES: usize = 100;

/// `n` configurations starting at `start`, each a step of random direction
/// and length in `[0.1, 0.9]·epsilon` from the previous one, clamped to
/// `limits`.
pub fn random_walk(
    n: usize,
    seed: u64,
    epsilon: f64,
    start: Configuration,
    limits: &JointLimits,
) -> Vec<Configuration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = clamp(&start, limits);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(q);
        let dir = Configuration::ZERO.map(|_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.to_array().iter().map(|v| v * v).sum::<f64>().sqrt();
        let len = epsilon * rng.random_range(0.1..0.9);
        q = clamp(&q.add(dir.scale(len / norm)), limits);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub n_states: usize,
    pub seed: u64,
    pub vertex_count: usize,
    pub edge_count: usize,
    pub build_time_ms: f64,
    pub queries: usize,
    pub mean_query_ms: f64,
    pub p99_query_ms: f64,
    pub max_query_ms: f64,
    /// Mean number of waypoints over the queried paths.
    pub mean_path_len: f64,
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[Duration], p: f64) -> Duration {
    let mut s = samples.to_vec();
    s.sort_unstable();
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// Builds a roadmap from a random-walk trace of `n_states` observations and
/// times [`BENCHMARK_QUERIES`] searches between random vertex pairs.
pub fn benchmark(n_states: usize, seed: u64) -> BenchmarkResult {
    assert!(n_states >= 2, "benchmark needs at least two states");
    let limits = JointLimits::default();
    let trace = random_walk(
        n_states,
        seed,
        DEFAULT_EPSILON,
        Configuration::new(0.0, 0.0, 0.0, 60.0),
        &limits,
    );

    let t0 = Instant::now();
    let mut roadmap = Roadmap::new(DEFAULT_EPSILON).expect("default epsilon is valid");
    for q in &trace {
        roadmap.observe(*q).expect("finite trace");
    }
    let build_time = t0.elapsed();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = roadmap.len() as u32;
    let mut times = Vec::with_capacity(BENCHMARK_QUERIES);
    let mut path_len = 0usize;
    for _ in 0..BENCHMARK_QUERIES {
        let (a, b) = (
            VertexId(rng.random_range(0..n)),
            VertexId(rng.random_range(0..n)),
        );
        let t = Instant::now();
        let path = astar(&roadmap, a, b).expect("a random walk yields a connected roadmap");
        times.push(t.elapsed());
        path_len += path.len();
    }
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let stats = roadmap.stats();
    BenchmarkResult {
        n_states,
        seed,
        vertex_count: stats.vertex_count,
        edge_count: stats.edge_count,
        build_time_ms: ms(build_time),
        queries: BENCHMARK_QUERIES,
        mean_query_ms: times.iter().map(|d| ms(*d)).sum::<f64>() / times.len() as f64,
        p99_query_ms: ms(percentile(&times, 99.0)),
        max_query_ms: ms(*times.iter().max().expect("non-empty")),
        mean_path_len: path_len as f64 / BENCHMARK_QUERIES as f64,
    }
}
