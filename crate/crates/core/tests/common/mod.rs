//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use hnm_pgd::imagetensor::Mask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Half-Neighbor rule by direct window summation.
pub fn hn_bruteforce(mask: &Mask, k: usize) -> Mask {
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    let r = (k / 2) as isize;
    let need = (k * k).div_ceil(2);
    Mask::from_fn(mask.height(), mask.width(), |row, col| {
        let mut sum = 0;
        for dr in -r..=r {
            for dc in -r..=r {
                let (y, x) = (row as isize + dr, col as isize + dc);
                if y >= 0 && y < h && x >= 0 && x < w && mask.get(y as usize, x as usize) {
                    sum += 1;
                }
            }
        }
        sum >= need
    })
}

/// 8-connected components by breadth-first flood fill.
pub fn regions_bfs(mask: &Mask) -> usize {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut regions = 0;
    for start in 0..h * w {
        if seen[start] || !mask.get(start / w, start % w) {
            continue;
        }
        regions += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !seen[q] && mask.get(ny as usize, nx as usize) {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    regions
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.gen_bool(density))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
