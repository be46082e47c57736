//! Inputs shared by the benchmarks in `benches/`.

use image::{Rgb, RgbImage};
use ttsp_core::simlab::CounterRng;
use ttsp_core::{Ballot, Scored};

/// A scored, answered stand-in for a trace.
#[derive(Debug, Clone)]
pub struct Vote {
    pub score: f64,
    pub answer: String,
}

impl Scored for Vote {
    fn score(&self) -> Option<f64> {
        Some(self.score)
    }
}

impl Ballot for Vote {
    fn answer(&self) -> Option<&str> {
        Some(&self.answer)
    }
}

pub fn votes(n: usize, seed: u64) -> Vec<Vote> {
    let mut r = CounterRng::new(seed, &[n as u64]);
    (0..n)
        .map(|_| Vote {
            score: -r.uniform(0.0, 1.5),
            answer: ["A", "B", "C", "D"][(r.next_u64() % 4) as usize].to_string(),
        })
        .collect()
}

pub fn logprobs(depth: usize, seed: u64) -> Vec<f64> {
    let mut r = CounterRng::new(seed, &[depth as u64]);
    let mut v: Vec<f64> = (0..depth).map(|_| -r.uniform(0.0, 12.0)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

pub fn gradient(width: u32, height: u32) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        Rgb([(x % 256) as u8, (y % 256) as u8, ((x ^ y) % 256) as u8])
    })
}
