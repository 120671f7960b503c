use super::project::ProjectedGaussian;
use super::tile::Tile;

pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

/// The strongest contribution one Gaussian made to any pixel of a tile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub contribution: f64,
    /// Row-major pixel index in the full image.
    pub pixel: u32,
    pub colour: [f64; 3],
}

impl Candidate {
    pub const NONE: Candidate = Candidate {
        contribution: 0.0,
        pixel: u32::MAX,
        colour: [0.0; 3],
    };

    /// Larger contribution wins; equal contributions go to the lower pixel.
    #[inline]
    pub fn beats(&self, other: &Candidate) -> bool {
        self.contribution > other.contribution
            || (self.contribution == other.contribution && self.pixel < other.pixel)
    }
}

#[derive(Clone, Debug)]
pub struct TileOutput {
    /// Row-major over the tile rect.
    pub pixels: Vec<[f64; 3]>,
    /// One entry per slot of `Tile::gaussians`.
    pub best: Vec<Candidate>,
}

/// Alpha-composite every pixel of `tile` front to back.
///
/// Each Gaussian's contribution to a pixel is `alpha × transmittance`; the
/// tile output records, per Gaussian, the pixel where that was largest and
/// the final colour of that pixel.
pub fn composite_tile(
    tile: &Tile,
    projected: &[ProjectedGaussian],
    colours: &[[f64; 3]],
    background: [f64; 3],
    image_width: u32,
) -> TileOutput {
    let mut out = TileOutput {
        pixels: Vec::with_capacity(tile.area() as usize),
        best: vec![Candidate::NONE; tile.gaussians.len()],
    };
    let mut hits: Vec<(usize, f64)> = Vec::new();
    let mut row: Vec<(usize, &ProjectedGaussian)> = Vec::new();
    let [x0, y0, x1, y1] = tile.rect;
    for y in y0..y1 {
        // Depth order is kept; only Gaussians whose box spans this row remain.
        let py = y as f64 + 0.5;
        row.clear();
        row.extend(
            tile.gaussians
                .iter()
                .enumerate()
                .map(|(slot, &pos)| (slot, &projected[pos as usize]))
                .filter(|(_, g)| py >= g.bbox[1] && py <= g.bbox[3]),
        );
        for x in x0..x1 {
            hits.clear();
            let mut t = 1.0f64;
            let mut rgb = [0.0f64; 3];
            for &(slot, g) in &row {
                if !g.covers(x, y) {
                    continue;
                }
                let alpha = g.raw_alpha(x, y).min(MAX_ALPHA);
                if !(alpha >= MIN_ALPHA) {
                    continue;
                }
                let contribution = alpha * t;
                let c = &colours[g.gaussian_index];
                for k in 0..3 {
                    rgb[k] += contribution * c[k];
                }
                hits.push((slot, contribution));
                t *= 1.0 - alpha;
                if t < MIN_TRANSMITTANCE {
                    break;
                }
            }
            for k in 0..3 {
                rgb[k] += t * background[k];
            }
            let pixel = y * image_width + x;
            for &(slot, contribution) in &hits {
                let cand = Candidate {
                    contribution,
                    pixel,
                    colour: rgb,
                };
                if cand.beats(&out.best[slot]) {
                    out.best[slot] = cand;
                }
            }
            out.pixels.push(rgb);
        }
    }
    out
}
