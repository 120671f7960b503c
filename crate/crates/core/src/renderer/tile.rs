//! Screen-space binning: a regular grid of 64×64 tiles, each recursively
//! quartered while its Gaussian-pixel workload exceeds the budget.

use super::project::ProjectedGaussian;

pub const BASE_TILE: u32 = 64;
pub const DEFAULT_TILE_BUDGET: u64 = 1 << 24;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tile {
    /// `[x0, y0, x1, y1)` in pixels.
    pub rect: [u32; 4],
    /// Positions in the depth-sorted projected list, ascending.
    pub gaussians: Vec<u32>,
}

impl Tile {
    pub fn width(&self) -> u32 {
        self.rect[2] - self.rect[0]
    }

    pub fn height(&self) -> u32 {
        self.rect[3] - self.rect[1]
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn load(&self) -> u64 {
        self.gaussians.len() as u64 * self.area()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TileStats {
    pub tiles: usize,
    pub splits: usize,
    /// Largest `gaussians × pixels` over all tiles.
    pub max_load: u64,
    /// Single-pixel tiles still above budget (they cannot be split further).
    pub over_budget: usize,
}

/// Bin `projected` (already depth sorted) into tiles covering a
/// `width × height` image.
pub fn tile_scene(
    projected: &[ProjectedGaussian],
    width: u32,
    height: u32,
    budget: u64,
) -> (Vec<Tile>, TileStats) {
    assert!(budget > 0, "tile budget must be positive");
    let tiles_x = width.div_ceil(BASE_TILE);
    let tiles_y = height.div_ceil(BASE_TILE);
    let mut grid: Vec<Tile> = (0..tiles_y)
        .flat_map(|ty| {
            (0..tiles_x).map(move |tx| Tile {
                rect: [
                    tx * BASE_TILE,
                    ty * BASE_TILE,
                    ((tx + 1) * BASE_TILE).min(width),
                    ((ty + 1) * BASE_TILE).min(height),
                ],
                gaussians: Vec::new(),
            })
        })
        .collect();

    let cell = |v: f64, n: u32| -> u32 {
        let k = (v / BASE_TILE as f64).floor();
        k.clamp(0.0, n.saturating_sub(1) as f64) as u32
    };
    for (pos, g) in projected.iter().enumerate() {
        // Over-approximate the cell range by one, then test exactly.
        let tx0 = cell(g.bbox[0], tiles_x).saturating_sub(1);
        let tx1 = cell(g.bbox[2], tiles_x);
        let ty0 = cell(g.bbox[1], tiles_y).saturating_sub(1);
        let ty1 = cell(g.bbox[3], tiles_y);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let tile = &mut grid[(ty * tiles_x + tx) as usize];
                if g.overlaps(tile.rect) {
                    tile.gaussians.push(pos as u32);
                }
            }
        }
    }

    let mut stats = TileStats::default();
    let mut out = Vec::with_capacity(grid.len());
    for tile in grid {
        subdivide(tile, projected, budget, &mut out, &mut stats);
    }
    stats.tiles = out.len();
    (out, stats)
}

fn subdivide(
    tile: Tile,
    projected: &[ProjectedGaussian],
    budget: u64,
    out: &mut Vec<Tile>,
    stats: &mut TileStats,
) {
    let load = tile.load();
    if load <= budget || tile.area() <= 1 {
        if load > budget {
            stats.over_budget += 1;
        }
        stats.max_load = stats.max_load.max(load);
        out.push(tile);
        return;
    }
    stats.splits += 1;
    let [x0, y0, x1, y1] = tile.rect;
    let xm = x0 + tile.width().div_ceil(2);
    let ym = y0 + tile.height().div_ceil(2);
    let quadrants = [
        [x0, y0, xm, ym],
        [xm, y0, x1, ym],
        [x0, ym, xm, y1],
        [xm, ym, x1, y1],
    ];
    for rect in quadrants {
        if rect[0] >= rect[2] || rect[1] >= rect[3] {
            continue;
        }
        let gaussians = tile
            .gaussians
            .iter()
            .copied()
            .filter(|&p| projected[p as usize].overlaps(rect))
            .collect();
        subdivide(Tile { rect, gaussians }, projected, budget, out, stats);
    }
}
