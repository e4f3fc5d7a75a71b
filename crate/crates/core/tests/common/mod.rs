//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use lesionsynth::volume::{Geometry, LesionMask, Volume};
use rand::Rng;

/// 26-connected components by breadth-first search, as voxel index lists.
pub fn bfs_components(mask: &LesionMask) -> Vec<Vec<usize>> {
    let [nx, ny, nz] = mask.dims();
    let data = mask.data();
    let mut seen = vec![false; data.len()];
    let mut out = Vec::new();
    for start in 0..data.len() {
        if !data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y, z) = ((i % nx) as i64, ((i / nx) % ny) as i64, (i / (nx * ny)) as i64);
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (a, b, c) = (x + dx, y + dy, z + dz);
                        if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                            continue;
                        }
                        let j = a as usize + nx * (b as usize + ny * c as usize);
                        if data[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Exposed voxel faces as (world centre, area).
pub fn brute_surfels(mask: &LesionMask) -> Vec<([f64; 3], f64)> {
    let g = mask.geom();
    let [nx, ny, nz] = g.dims();
    let s = g.spacing();
    let on = |x: i64, y: i64, z: i64| {
        x >= 0
            && y >= 0
            && z >= 0
            && x < nx as i64
            && y < ny as i64
            && z < nz as i64
            && *mask.get(x as usize, y as usize, z as usize)
    };
    let mut out = Vec::new();
    for z in 0..nz as i64 {
        for y in 0..ny as i64 {
            for x in 0..nx as i64 {
                if !on(x, y, z) {
                    continue;
                }
                let faces = [
                    ([-1, 0, 0], s[1] * s[2]),
                    ([1, 0, 0], s[1] * s[2]),
                    ([0, -1, 0], s[0] * s[2]),
                    ([0, 1, 0], s[0] * s[2]),
                    ([0, 0, -1], s[0] * s[1]),
                    ([0, 0, 1], s[0] * s[1]),
                ];
                for (d, area) in faces {
                    if !on(x + d[0], y + d[1], z + d[2]) {
                        let p = [
                            x as f64 + 0.5 * d[0] as f64,
                            y as f64 + 0.5 * d[1] as f64,
                            z as f64 + 0.5 * d[2] as f64,
                        ];
                        out.push((g.voxel_to_world(p), area));
                    }
                }
            }
        }
    }
    out
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// All-pairs nearest distances from every surfel of `a` to `b`.
pub fn brute_directed(a: &[([f64; 3], f64)], b: &[([f64; 3], f64)]) -> Vec<(f64, f64)> {
    a.iter()
        .map(|&(p, area)| (b.iter().map(|&(q, _)| dist(p, q)).fold(f64::INFINITY, f64::min), area))
        .collect()
}

fn brute_percentile(mut d: Vec<(f64, f64)>, fraction: f64) -> f64 {
    d.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total: f64 = d.iter().map(|x| x.1).sum();
    let mut cum = 0.0;
    for &(v, w) in &d {
        cum += w;
        if cum / total >= fraction - 1e-12 {
            return v;
        }
    }
    d.last().unwrap().0
}

pub fn brute_hd95(a: &LesionMask, b: &LesionMask) -> f64 {
    let (sa, sb) = (brute_surfels(a), brute_surfels(b));
    brute_percentile(brute_directed(&sa, &sb), 0.95).max(brute_percentile(brute_directed(&sb, &sa), 0.95))
}

pub fn brute_assd(a: &LesionMask, b: &LesionMask) -> f64 {
    let (sa, sb) = (brute_surfels(a), brute_surfels(b));
    let num: f64 = brute_directed(&sa, &sb)
        .into_iter()
        .chain(brute_directed(&sb, &sa))
        .map(|(d, w)| d * w)
        .sum();
    let den: f64 = sa.iter().chain(&sb).map(|x| x.1).sum();
    num / den
}

/// Union of 1 to `max_boxes` random axis-aligned boxes with sides up to
/// `max_side` voxels.
pub fn random_boxes(geom: &Geometry, max_boxes: usize, max_side: usize, rng: &mut impl Rng) -> LesionMask {
    let dims = geom.dims();
    let n = rng.gen_range(1..=max_boxes);
    let boxes: Vec<([usize; 3], [usize; 3])> = (0..n)
        .map(|_| {
            let size = [0, 1, 2].map(|a| rng.gen_range(1..=max_side.min(dims[a])));
            let lo = [0, 1, 2].map(|a| rng.gen_range(0..=dims[a] - size[a]));
            (lo, [0, 1, 2].map(|a| lo[a] + size[a]))
        })
        .collect();
    Volume::from_fn(geom.clone(), |p| {
        boxes
            .iter()
            .any(|(lo, hi)| (0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a]))
    })
}

/// Exact two-sided rank-sum p by enumerating every split of the pooled
/// sample.
pub fn enumerate_rank_sum_p(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks: Vec<f64> = pooled
        .iter()
        .map(|&v| {
            let below = pooled.iter().filter(|&&u| u < v).count() as f64;
            let equal = pooled.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let n = x.len();
    let observed: f64 = ranks[..n].iter().sum();
    let total = pooled.len();
    let (mut le, mut ge, mut count) = (0u64, 0u64, 0u64);
    for subset in 0u32..(1 << total) {
        if subset.count_ones() as usize != n {
            continue;
        }
        let s: f64 = (0..total).filter(|i| subset & (1 << i) != 0).map(|i| ranks[i]).sum();
        count += 1;
        if s <= observed + 1e-9 {
            le += 1;
        }
        if s >= observed - 1e-9 {
            ge += 1;
        }
    }
    (2.0 * le.min(ge) as f64 / count as f64).min(1.0)
}

/// Every file below `root` as (relative path, bytes), with the manifest's
/// creation timestamp blanked.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&path).unwrap();
            if rel == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v["created"] = serde_json::Value::Null;
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.push((rel, bytes));
        }
    }
    out.sort();
    out
}
