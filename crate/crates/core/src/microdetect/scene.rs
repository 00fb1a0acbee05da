use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagetensor::Image;

/// Background intensities are drawn from `[0, BACKGROUND_AMPLITUDE)`.
const BACKGROUND_AMPLITUDE: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
}

impl ShapeKind {
    const ALL: [ShapeKind; 3] = [ShapeKind::Disk, ShapeKind::Square, ShapeKind::Triangle];

    /// Class id in `1..=3`.
    pub fn class_id(self) -> usize {
        match self {
            ShapeKind::Disk => 1,
            ShapeKind::Square => 2,
            ShapeKind::Triangle => 3,
        }
    }
}

/// A filled shape in continuous pixel coordinates (pixel `(r, c)` spans
/// `[r, r+1) × [c, c+1)`, so its center is `(r + 0.5, c + 0.5)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    /// Disk radius; half-side of the square is `0.85 * radius`; triangle
    /// circumradius.
    pub radius: f64,
    pub color: [f64; 3],
}

impl Shape {
    pub fn covers(&self, row: f64, col: f64) -> bool {
        let (dy, dx) = (row - self.center.0, col - self.center.1);
        match self.kind {
            ShapeKind::Disk => dy * dy + dx * dx <= self.radius * self.radius,
            ShapeKind::Square => {
                let half = 0.85 * self.radius;
                dy.abs() <= half && dx.abs() <= half
            }
            ShapeKind::Triangle => {
                // Upward-pointing equilateral triangle centred on `center`.
                let r = self.radius;
                let h = 3f64.sqrt() / 2.0 * r;
                let a = (-r, 0.0);
                let b = (0.5 * r, -h);
                let c = (0.5 * r, h);
                let side = |p: (f64, f64), q: (f64, f64)| {
                    (q.1 - p.1) * (dy - p.0) - (q.0 - p.0) * (dx - p.1)
                };
                let (s1, s2, s3) = (side(a, b), side(b, c), side(c, a));
                (s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0) || (s1 <= 0.0 && s2 <= 0.0 && s3 <= 0.0)
            }
        }
    }
}

/// A generated training/attack scene with per-cell ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: Image,
    pub grid: usize,
    /// Per cell, row-major over the `S×S` grid.
    pub objectness: Vec<bool>,
    /// Per cell: `0` for background, otherwise the class id in `1..=C`.
    pub labels: Vec<usize>,
    pub shapes: Vec<Shape>,
}

impl SyntheticScene {
    /// Renders `shapes` (later shapes on top) over seeded background noise.
    /// A cell is labelled with the topmost shape covering its center.
    /// Intensities are quantized to the 8-bit grid so scenes survive a PNG
    /// round trip unchanged.
    pub fn render(seed: u64, side: usize, grid: usize, shapes: &[Shape]) -> Result<Self> {
        if grid == 0 || side == 0 || !side.is_multiple_of(grid) {
            return Err(Error::invalid(format!(
                "side {side} must be a positive multiple of grid {grid}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_b4c6);
        let mut data = Vec::with_capacity(side * side * 3);
        for row in 0..side {
            for col in 0..side {
                let (y, x) = (row as f64 + 0.5, col as f64 + 0.5);
                let top = shapes.iter().rev().find(|s| s.covers(y, x));
                for ch in 0..3 {
                    let noise = rng.gen_range(0.0..BACKGROUND_AMPLITUDE);
                    let v = top.map_or(noise, |s| s.color[ch]);
                    data.push((v * 255.0).round() / 255.0);
                }
            }
        }
        let cell = (side / grid) as f64;
        let mut objectness = vec![false; grid * grid];
        let mut labels = vec![0; grid * grid];
        for i in 0..grid {
            for j in 0..grid {
                let center = ((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell);
                if let Some(s) = shapes.iter().rev().find(|s| s.covers(center.0, center.1)) {
                    objectness[i * grid + j] = true;
                    labels[i * grid + j] = s.kind.class_id();
                }
            }
        }
        Ok(Self {
            image: Image::new(side, side, 3, data)?,
            grid,
            objectness,
            labels,
            shapes: shapes.to_vec(),
        })
    }

    pub fn positives(&self) -> usize {
        self.objectness.iter().filter(|&&o| o).count()
    }
}

/// Generates a scene with 1–3 random bright shapes (disk, square, triangle,
/// class ids 1..=3), each centred near a distinct cell center with a radius of
/// 0.3–0.55 cell widths.
pub fn generate_scene(
    seed: u64,
    side: usize,
    grid: usize,
    classes: usize,
) -> Result<SyntheticScene> {
    generate_scene_with(seed, side, grid, classes, None)
}

/// As [`generate_scene`], optionally forcing the number of shapes.
pub fn generate_scene_with(
    seed: u64,
    side: usize,
    grid: usize,
    classes: usize,
    shape_count: Option<usize>,
) -> Result<SyntheticScene> {
    if classes == 0 {
        return Err(Error::invalid("at least one class is required"));
    }
    if grid == 0 || !side.is_multiple_of(grid) {
        return Err(Error::invalid(format!(
            "side {side} must be a positive multiple of grid {grid}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = shape_count
        .unwrap_or_else(|| rng.gen_range(1..=3))
        .min(grid * grid);
    let kinds = &ShapeKind::ALL[..classes.min(ShapeKind::ALL.len())];
    let cell = (side / grid) as f64;
    // Shapes stay inside their own cell and always cover its center, so each
    // one labels exactly one cell.
    let jitter = 0.1 * cell;
    let shapes: Vec<Shape> = sample(&mut rng, grid * grid, count)
        .into_iter()
        .map(|c| {
            let (i, j) = (c / grid, c % grid);
            let kind = kinds[rng.gen_range(0..kinds.len())];
            let radius = rng.gen_range(0.3 * cell..=0.55 * cell);
            let center = (
                (i as f64 + 0.5) * cell + rng.gen_range(-jitter..=jitter),
                (j as f64 + 0.5) * cell + rng.gen_range(-jitter..=jitter),
            );
            let color = [
                rng.gen_range(0.55..=1.0),
                rng.gen_range(0.55..=1.0),
                rng.gen_range(0.55..=1.0),
            ];
            Shape {
                kind,
                center,
                radius,
                color,
            }
        })
        .collect();
    SyntheticScene::render(seed, side, grid, &shapes)
}

/// `count` scenes seeded `seed, seed + 1, ...`.
pub fn generate_suite(
    seed: u64,
    count: usize,
    side: usize,
    grid: usize,
    classes: usize,
) -> Result<Vec<SyntheticScene>> {
    (0..count as u64)
        .map(|i| generate_scene(seed.wrapping_add(i), side, grid, classes))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_all_background() {
        let scene = generate_scene_with(3, 64, 8, 3, Some(0)).unwrap();
        assert_eq!(scene.positives(), 0);
        assert!(scene.labels.iter().all(|&l| l == 0));
        assert!(scene
            .image
            .data()
            .iter()
            .all(|&v| v <= BACKGROUND_AMPLITUDE + 1.0 / 255.0));
    }

    #[test]
    fn same_seed_same_scene() {
        assert_eq!(
            generate_scene(11, 64, 8, 3).unwrap(),
            generate_scene(11, 64, 8, 3).unwrap()
        );
        assert_ne!(
            generate_scene(11, 64, 8, 3).unwrap().image,
            generate_scene(12, 64, 8, 3).unwrap().image
        );
    }

    #[test]
    fn centered_disk_labels_its_cell() {
        // Cell (3, 4) of an 8×8 grid over 64 px has its center at (28, 36).
        let disk = Shape {
            kind: ShapeKind::Disk,
            center: (28.0, 36.0),
            radius: 10.0,
            color: [1.0; 3],
        };
        let scene = SyntheticScene::render(0, 64, 8, &[disk]).unwrap();
        assert!(scene.objectness[3 * 8 + 4]);
        assert_eq!(scene.labels[3 * 8 + 4], 1);
        // Neighbour centers lie 8 px away, inside the radius-10 disk.
        assert!(scene.objectness[2 * 8 + 4]);
        // Diagonal neighbours are sqrt(128) ≈ 11.3 px away.
        assert!(!scene.objectness[2 * 8 + 3]);
    }

    #[test]
    fn random_scenes_label_one_cell_per_shape() {
        for seed in 0..50 {
            let scene = generate_scene(seed, 64, 8, 3).unwrap();
            assert!((1..=3).contains(&scene.shapes.len()));
            assert_eq!(scene.positives(), scene.shapes.len(), "seed {seed}");
            for (&o, &l) in scene.objectness.iter().zip(&scene.labels) {
                assert_eq!(o, l != 0);
                assert!(l <= 3);
            }
        }
    }

    #[test]
    fn pixels_sit_on_the_byte_grid() {
        let scene = generate_scene(5, 64, 8, 3).unwrap();
        for &v in scene.image.data() {
            assert_eq!((v * 255.0).round() / 255.0, v);
        }
    }

    #[test]
    fn indivisible_side_is_rejected() {
        assert!(generate_scene(0, 60, 8, 3).is_err());
    }
}
