#![allow(dead_code)]

use dronenav::cli::RunConfig;
use dronenav::Coord;
use std::collections::VecDeque;
use std::path::{Path, PathBuf};

pub fn preset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

pub fn preset(name: &str) -> RunConfig {
    RunConfig::load(Some(&preset_path(name)), &[]).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Shortest 6- or 4-connected path length on an empty box grid.
pub fn bfs_distance(size: [i32; 3], a: Coord, b: Coord) -> Option<i64> {
    let [w, h, d] = size;
    let idx = |c: Coord| ((c.z * h + c.y) * w + c.x) as usize;
    let mut dist = vec![-1i64; (w * h * d) as usize];
    let mut q = VecDeque::from([a]);
    dist[idx(a)] = 0;
    while let Some(c) = q.pop_front() {
        if c == b {
            return Some(dist[idx(c)]);
        }
        for (dx, dy, dz) in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
            let n = Coord::new(c.x + dx, c.y + dy, c.z + dz);
            if n.x < 0 || n.y < 0 || n.z < 0 || n.x >= w || n.y >= h || n.z >= d || dist[idx(n)] >= 0 {
                continue;
            }
            dist[idx(n)] = dist[idx(c)] + 1;
            q.push_back(n);
        }
    }
    None
}

/// Plain recursive GAE: A_t = δ_t + γλ(1 − done_t)A_{t+1}.
pub fn gae_oracle(r: &[f64], v: &[f64], done: &[bool], last: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    fn go(t: usize, r: &[f64], v: &[f64], done: &[bool], last: f64, g: f64, l: f64) -> f64 {
        if t == r.len() {
            return 0.0;
        }
        let mask = if done[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < r.len() { v[t + 1] } else { last };
        let delta = r[t] + g * next_v * mask - v[t];
        delta + g * l * mask * go(t + 1, r, v, done, last, g, l)
    }
    (0..r.len()).map(|t| go(t, r, v, done, last, gamma, lambda)).collect()
}
