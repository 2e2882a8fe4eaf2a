//! Jigsaw-puzzle attack on block-scrambled ciphertext.
//!
//! The blocks of a ciphertext are treated as puzzle pieces and reassembled
//! by a greedy solver that minimises border dissimilarity. Assemblies are
//! scored against the key-derived ground truth with three measures:
//!
//! * `Dc` (direct comparison): share of cells holding the right piece in the
//!   right orientation;
//! * `Nc` (neighbor comparison): share of adjacent cell pairs that were also
//!   adjacent, in the same relative position and orientation, in the original;
//! * `Lc` (largest component): share of pieces in the largest 4-connected
//!   region whose internal adjacencies are all correct.

use std::cmp::Ordering;

use crate::cipher::{
    apply_orientation, apply_scramble, stack_planes, BlockKeys, CipherConfig, Orientation, Scheme,
    Steps,
};
use crate::error::{Error, Result};
use crate::keyschedule::MasterKey;
use crate::pixelcore::{split_blocks, Block, BlockGrid, ImageBuffer};

/// Largest puzzle [`brute_force_scramble`] accepts (10! = 3 628 800 checks).
pub const BRUTE_FORCE_MAX_BLOCKS: usize = 10;

/// Spatial relation between two pieces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    /// `b` sits immediately to the right of `a`.
    RightOf,
    /// `b` sits immediately below `a`.
    Below,
}

/// A piece id together with the orientation it is placed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Placement {
    pub piece: usize,
    pub orientation: Orientation,
}

impl Placement {
    pub fn new(piece: usize, orientation: Orientation) -> Self {
        Self { piece, orientation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Puzzle {
    pieces: Vec<Block>,
    grid: BlockGrid,
    /// Cell (row-major) -> the placement that restores the original image.
    ground_truth: Option<Vec<Placement>>,
}

impl Puzzle {
    pub fn new(pieces: Vec<Block>, grid: BlockGrid) -> Result<Self> {
        if pieces.len() != grid.len() || pieces.is_empty() {
            return Err(Error::Shape(format!(
                "{} pieces for a {}x{} grid",
                pieces.len(),
                grid.rows,
                grid.cols
            )));
        }
        let (size, channels) = (pieces[0].size, pieces[0].channels);
        if size != grid.block_size || pieces.iter().any(|p| p.size != size || p.channels != channels) {
            return Err(Error::Shape("puzzle pieces must share one size and channel count".into()));
        }
        Ok(Self { pieces, grid, ground_truth: None })
    }

    /// Cuts a ciphertext (stacked planes for the grayscale-based scheme) into pieces.
    pub fn from_image(img: &ImageBuffer, block_size: usize) -> Result<Self> {
        let (pieces, grid) = split_blocks(img, block_size)?;
        Self::new(pieces, grid)
    }

    /// Cuts a ciphertext produced by [`crate::encrypt`] with `key` and `cfg`
    /// and attaches the ground truth derived from the key.
    pub fn from_ciphertext(cipher: &ImageBuffer, key: MasterKey, cfg: &CipherConfig) -> Result<Self> {
        let puzzle = Self::from_image(cipher, cfg.block_size)?;
        let truth = ground_truth_from_key(key, cfg.steps, puzzle.len());
        puzzle.with_ground_truth(truth)
    }

    pub fn with_ground_truth(mut self, truth: Vec<Placement>) -> Result<Self> {
        check_placements(&truth, self.len())?;
        self.ground_truth = Some(truth);
        Ok(self)
    }

    pub fn pieces(&self) -> &[Block] {
        &self.pieces
    }

    pub fn grid(&self) -> BlockGrid {
        self.grid
    }

    pub fn ground_truth(&self) -> Option<&[Placement]> {
        self.ground_truth.as_deref()
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Renders an assembly of this puzzle's pieces as an image.
    pub fn render(&self, assembly: &Assembly) -> Result<ImageBuffer> {
        self.check_assembly(assembly)?;
        let blocks: Vec<Block> = assembly
            .cells
            .iter()
            .map(|p| apply_orientation(&self.pieces[p.piece], p.orientation))
            .collect();
        crate::pixelcore::merge_blocks(&blocks, self.grid, self.pieces[0].channels)
    }

    fn check_assembly(&self, assembly: &Assembly) -> Result<()> {
        if (assembly.rows, assembly.cols) != (self.grid.rows, self.grid.cols) {
            return Err(Error::Shape(format!(
                "{}x{} assembly for a {}x{} puzzle",
                assembly.rows, assembly.cols, self.grid.rows, self.grid.cols
            )));
        }
        Ok(())
    }
}

/// Ground truth for a ciphertext made with `key`: ciphertext block `i` came
/// from cell `perm[i]` and is restored by the inverse of its orientation.
pub fn ground_truth_from_key(key: MasterKey, steps: Steps, n_blocks: usize) -> Vec<Placement> {
    let keys = BlockKeys::draw(key, steps, n_blocks);
    let mut truth = vec![Placement::new(0, Orientation::IDENTITY); n_blocks];
    for (i, &cell) in keys.permutation.iter().enumerate() {
        truth[cell] = Placement::new(i, keys.orientations[i].inverse());
    }
    truth
}

fn check_placements(cells: &[Placement], n: usize) -> Result<()> {
    if cells.len() != n {
        return Err(Error::Shape(format!("{} placements for {n} cells", cells.len())));
    }
    let mut seen = vec![false; n];
    for p in cells {
        if p.piece >= n || std::mem::replace(&mut seen[p.piece], true) {
            return Err(Error::Invalid("placements must use every piece exactly once".into()));
        }
    }
    Ok(())
}

/// A solver's output: one placement per cell, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembly {
    rows: usize,
    cols: usize,
    cells: Vec<Placement>,
}

impl Assembly {
    pub fn new(rows: usize, cols: usize, cells: Vec<Placement>) -> Result<Self> {
        if rows * cols == 0 {
            return Err(Error::Dimension("empty assembly".into()));
        }
        if cells.len() != rows * cols {
            return Err(Error::Shape(format!("{} cells for a {rows}x{cols} assembly", cells.len())));
        }
        check_placements(&cells, rows * cols)?;
        Ok(Self { rows, cols, cells })
    }

    /// Every piece in its own cell, unrotated.
    pub fn identity(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, (0..rows * cols).map(|i| Placement::new(i, Orientation::IDENTITY)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[Placement] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> Placement {
        self.cells[row * self.cols + col]
    }

    /// The same assembly viewed after rotating the whole picture by `turns`
    /// counter-clockwise quarter turns. `None` if the grid shape would change.
    pub fn rotated(&self, turns: u8) -> Option<Assembly> {
        let r = Orientation::rotation(turns);
        let (rows, cols) = if turns % 2 == 1 { (self.cols, self.rows) } else { (self.rows, self.cols) };
        if (rows, cols) != (self.rows, self.cols) {
            return None;
        }
        let mut cells = self.cells.clone();
        for (i, p) in self.cells.iter().enumerate() {
            let (x, y) = (i % self.cols, i / self.cols);
            // Centred doubled coordinates make the rotation exact on integers.
            let (u, v) = r.apply_vector((
                2 * x as i32 - (self.cols as i32 - 1),
                2 * y as i32 - (self.rows as i32 - 1),
            ));
            let nx = ((u + cols as i32 - 1) / 2) as usize;
            let ny = ((v + rows as i32 - 1) / 2) as usize;
            cells[ny * cols + nx] = Placement::new(p.piece, p.orientation.then(r));
        }
        Some(Assembly { rows, cols, cells })
    }
}

/// Assembly scores in `[0, 1]`; larger means closer to the original.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub dc: f64,
    pub nc: f64,
    pub lc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Let `Dc` take the best of the global rotations that keep the grid shape.
    pub allow_global_rotation: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self { allow_global_rotation: true }
    }
}

pub fn score_assembly(assembly: &Assembly, puzzle: &Puzzle) -> Result<Metrics> {
    score_assembly_with(assembly, puzzle, ScoreOptions::default())
}

pub fn score_assembly_with(assembly: &Assembly, puzzle: &Puzzle, options: ScoreOptions) -> Result<Metrics> {
    puzzle.check_assembly(assembly)?;
    let truth = puzzle
        .ground_truth()
        .ok_or_else(|| Error::Invalid("puzzle has no ground truth".into()))?;
    let n = truth.len();
    let (rows, cols) = (assembly.rows, assembly.cols);

    let direct = |a: &Assembly| a.cells.iter().zip(truth).filter(|(p, t)| p == t).count();
    let turns: &[u8] = if options.allow_global_rotation { &[0, 1, 2, 3] } else { &[0] };
    let dc_hits = turns
        .iter()
        .filter_map(|&t| assembly.rotated(t))
        .map(|a| direct(&a))
        .max()
        .unwrap_or(0);

    // Piece -> (original cell x, y; residual orientation relative to the original).
    let mut origin = vec![(0i32, 0i32, Orientation::IDENTITY); n];
    for (cell, t) in truth.iter().enumerate() {
        origin[t.piece] = ((cell % cols) as i32, (cell / cols) as i32, t.orientation);
    }
    let residual = |p: Placement| {
        let (x, y, t) = origin[p.piece];
        (x, y, t.inverse().then(p.orientation))
    };
    let correct_pair = |a: Placement, b: Placement, d: (i32, i32)| {
        let (x1, y1, g1) = residual(a);
        let (x2, y2, g2) = residual(b);
        g1 == g2 && g1.apply_vector((x2 - x1, y2 - y1)) == d
    };

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut correct = 0usize;
    for y in 0..rows {
        for x in 0..cols {
            let here = y * cols + x;
            for (nx, ny, d) in [(x + 1, y, (1, 0)), (x, y + 1, (0, 1))] {
                if nx < cols && ny < rows {
                    let there = ny * cols + nx;
                    if correct_pair(assembly.cells[here], assembly.cells[there], d) {
                        correct += 1;
                        let (a, b) = (find(&mut parent, here), find(&mut parent, there));
                        parent[a] = b;
                    }
                }
            }
        }
    }
    let mut sizes = vec![0usize; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        sizes[root] += 1;
    }
    let largest = sizes.into_iter().max().unwrap_or(0);
    let pairs = rows * (cols - 1) + cols * (rows - 1);

    Ok(Metrics {
        dc: dc_hits as f64 / n as f64,
        nc: if pairs == 0 { 1.0 } else { correct as f64 / pairs as f64 },
        lc: largest as f64 / n as f64,
    })
}

/// Sum of squared differences across the shared border, over all channels,
/// divided by the number of border samples (`size · channels`).
pub fn boundary_dissimilarity(a: &Block, b: &Block, relation: Relation) -> Result<f64> {
    if a.size != b.size || a.channels != b.channels {
        return Err(Error::Shape(format!(
            "cannot compare {}x{}x{} and {}x{}x{} pieces",
            a.size, a.size, a.channels, b.size, b.size, b.channels
        )));
    }
    let (ea, eb) = match relation {
        Relation::RightOf => (edge(a, Side::Right), edge(b, Side::Left)),
        Relation::Below => (edge(a, Side::Bottom), edge(b, Side::Top)),
    };
    Ok(ssd(&ea, &eb) as f64 / ea.len() as f64)
}

#[derive(Clone, Copy)]
enum Side {
    Top,
    Right,
    Bottom,
    Left,
}

fn edge(block: &Block, side: Side) -> Vec<u8> {
    let s = block.size;
    (0..s)
        .flat_map(|i| {
            let (x, y) = match side {
                Side::Top => (i, 0),
                Side::Right => (s - 1, i),
                Side::Bottom => (i, s - 1),
                Side::Left => (0, i),
            };
            block.pixel(x, y).iter().copied()
        })
        .collect()
}

fn ssd(a: &[u8], b: &[u8]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let d = p as i32 - q as i32;
            (d * d) as u64
        })
        .sum()
}

/// Mean border SSD over `count` neighbours, compared exactly as a fraction.
#[derive(Debug, Clone, Copy)]
struct Cost {
    sum: u64,
    count: u64,
}

impl Cost {
    fn cmp_value(&self, other: &Cost) -> Ordering {
        (self.sum as u128 * other.count as u128).cmp(&(other.sum as u128 * self.count as u128))
    }
}

/// Borders of every piece in every orientation.
struct EdgeBank {
    orientations: Vec<Orientation>,
    // [piece][orientation index][side: top, right, bottom, left]
    edges: Vec<Vec<[Vec<u8>; 4]>>,
}

impl EdgeBank {
    fn new(pieces: &[Block], orientations: Vec<Orientation>) -> Self {
        let edges = pieces
            .iter()
            .map(|p| {
                orientations
                    .iter()
                    .map(|&o| {
                        let b = apply_orientation(p, o);
                        [Side::Top, Side::Right, Side::Bottom, Side::Left].map(|s| edge(&b, s))
                    })
                    .collect()
            })
            .collect();
        Self { orientations, edges }
    }

    fn side(&self, piece: usize, orient: usize, side: Side) -> &[u8] {
        &self.edges[piece][orient][side as usize]
    }
}

const UNSET: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: Cost,
    piece: usize,
    orient: usize,
}

/// Greedy best-first reassembly.
///
/// The best-matching pair seeds the canvas; then the cheapest
/// (cell, piece, orientation) placement next to the placed region is added
/// until every piece is used. A placement's cost is its mean border SSD
/// against the placed neighbours of the cell. The bounding box never exceeds
/// the puzzle's grid, so the final region is exactly the grid. Ties go to the
/// lower piece id, then the lower canvas cell (row-major), then the lower
/// orientation code. Without `orientation_search` every piece stays unrotated.
pub fn greedy_assemble(puzzle: &Puzzle, orientation_search: bool) -> Assembly {
    let (rows, cols) = (puzzle.grid.rows, puzzle.grid.cols);
    let n = puzzle.len();
    if n == 1 {
        return Assembly::identity(1, 1).expect("1x1 assembly");
    }
    let orientations: Vec<Orientation> =
        if orientation_search { Orientation::all().collect() } else { vec![Orientation::IDENTITY] };
    let bank = EdgeBank::new(&puzzle.pieces, orientations);
    let n_orient = bank.orientations.len();

    // Virtual canvas large enough for any placement of the seed.
    let (crows, ccols) = (2 * rows - 1, 2 * cols - 1);
    let mut canvas = vec![(UNSET, 0usize); crows * ccols];
    let mut placed = vec![false; n];
    let (mut top, mut bottom, mut left, mut right) = (rows - 1, rows - 1, cols - 1, cols - 1);

    // Seed: the globally best pair. The first piece stays unrotated since the
    // frame of the whole assembly is arbitrary.
    let mut best: Option<(Cost, usize, usize, usize, Relation)> = None;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            for o in 0..n_orient {
                for rel in [Relation::RightOf, Relation::Below] {
                    if rel == Relation::RightOf && cols < 2 || rel == Relation::Below && rows < 2 {
                        continue;
                    }
                    let sum = match rel {
                        Relation::RightOf => ssd(bank.side(a, 0, Side::Right), bank.side(b, o, Side::Left)),
                        Relation::Below => ssd(bank.side(a, 0, Side::Bottom), bank.side(b, o, Side::Top)),
                    };
                    let cost = Cost { sum, count: 1 };
                    if best.is_none_or(|(c, ..)| cost.cmp_value(&c) == Ordering::Less) {
                        best = Some((cost, a, b, o, rel));
                    }
                }
            }
        }
    }
    let (_, a, b, o, rel) = best.expect("at least two pieces");
    let centre = (rows - 1) * ccols + (cols - 1);
    canvas[centre] = (a, 0);
    placed[a] = true;
    let second = match rel {
        Relation::RightOf => {
            right += 1;
            centre + 1
        }
        Relation::Below => {
            bottom += 1;
            centre + ccols
        }
    };
    canvas[second] = (b, o);
    placed[b] = true;

    let neighbours = |cell: usize| {
        let (y, x) = (cell / ccols, cell % ccols);
        let mut out = [None; 4];
        if y > 0 {
            out[0] = Some((cell - ccols, Side::Top));
        }
        if x + 1 < ccols {
            out[1] = Some((cell + 1, Side::Right));
        }
        if y + 1 < crows {
            out[2] = Some((cell + ccols, Side::Bottom));
        }
        if x > 0 {
            out[3] = Some((cell - 1, Side::Left));
        }
        out
    };

    // Best candidate per open cell; recomputed when a neighbour is added or
    // the cached piece gets used elsewhere.
    let mut cache: Vec<Option<Candidate>> = vec![None; crows * ccols];
    let evaluate = |canvas: &[(usize, usize)], placed: &[bool], cell: usize| -> Option<Candidate> {
        let mut best: Option<Candidate> = None;
        for piece in (0..n).filter(|&p| !placed[p]) {
            for orient in 0..n_orient {
                let mut cost = Cost { sum: 0, count: 0 };
                for (nb, side) in neighbours(cell).into_iter().flatten() {
                    let (np, no) = canvas[nb];
                    if np == UNSET {
                        continue;
                    }
                    let opposite = match side {
                        Side::Top => Side::Bottom,
                        Side::Right => Side::Left,
                        Side::Bottom => Side::Top,
                        Side::Left => Side::Right,
                    };
                    cost.sum += ssd(bank.side(piece, orient, side), bank.side(np, no, opposite));
                    cost.count += 1;
                }
                if best.is_none_or(|b| cost.cmp_value(&b.cost) == Ordering::Less) {
                    best = Some(Candidate { cost, piece, orient });
                }
            }
        }
        best
    };
    let refresh = |cache: &mut Vec<Option<Candidate>>, canvas: &[(usize, usize)], placed: &[bool], cell: usize| {
        for (nb, _) in neighbours(cell).into_iter().flatten() {
            if canvas[nb].0 == UNSET {
                cache[nb] = evaluate(canvas, placed, nb);
            }
        }
    };
    refresh(&mut cache, &canvas, &placed, centre);
    refresh(&mut cache, &canvas, &placed, second);

    for _ in 2..n {
        let mut choice: Option<(usize, Candidate)> = None;
        for (cell, cand) in cache.iter().enumerate() {
            let Some(cand) = cand else { continue };
            let (y, x) = (cell / ccols, cell % ccols);
            if bottom.max(y) - top.min(y) >= rows || right.max(x) - left.min(x) >= cols {
                continue;
            }
            let better = match &choice {
                None => true,
                Some((c_cell, c)) => cand
                    .cost
                    .cmp_value(&c.cost)
                    .then(cand.piece.cmp(&c.piece))
                    .then(cell.cmp(c_cell))
                    .then(cand.orient.cmp(&c.orient))
                    == Ordering::Less,
            };
            if better {
                choice = Some((cell, *cand));
            }
        }
        let (cell, cand) = choice.expect("an open cell always exists inside the grid bounds");
        canvas[cell] = (cand.piece, cand.orient);
        placed[cand.piece] = true;
        cache[cell] = None;
        let (y, x) = (cell / ccols, cell % ccols);
        (top, bottom, left, right) = (top.min(y), bottom.max(y), left.min(x), right.max(x));
        for c in 0..cache.len() {
            if cache[c].is_some_and(|k| k.piece == cand.piece) {
                cache[c] = evaluate(&canvas, &placed, c);
            }
        }
        refresh(&mut cache, &canvas, &placed, cell);
    }

    let cells = (top..=bottom)
        .flat_map(|y| (left..=right).map(move |x| (y, x)))
        .map(|(y, x)| {
            let (piece, orient) = canvas[y * ccols + x];
            Placement::new(piece, bank.orientations[orient])
        })
        .collect();
    Assembly::new(rows, cols, cells).expect("greedy growth fills the grid with every piece once")
}

/// Outcome of an exhaustive key search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BruteForceResult {
    /// Every permutation `perm` with `cipher[i] = plain[perm[i]]` for all blocks.
    pub candidates: Vec<Vec<usize>>,
    /// Number of permutations tested.
    pub checks: u64,
}

/// Known-plaintext search over all block permutations of a scramble-only cipher.
pub fn brute_force_scramble(
    plain: &ImageBuffer,
    cipher: &ImageBuffer,
    cfg: &CipherConfig,
) -> Result<BruteForceResult> {
    if cfg.steps != Steps::SCRAMBLE_ONLY {
        return Err(Error::Config(format!(
            "brute force needs a scramble-only configuration, got steps {}",
            cfg.steps
        )));
    }
    cfg.validate(plain.channels())?;
    let (p, c) = match cfg.scheme {
        Scheme::Color => (plain.clone(), cipher.clone()),
        Scheme::GrayscaleBased => (stack_planes(plain), stack_planes(cipher)),
    };
    if !p.same_shape(&c) {
        return Err(Error::Shape("plaintext and ciphertext differ in shape".into()));
    }
    let (pb, grid) = split_blocks(&p, cfg.block_size)?;
    let (cb, _) = split_blocks(&c, cfg.block_size)?;
    let n = grid.len();
    if n > BRUTE_FORCE_MAX_BLOCKS {
        return Err(Error::Invalid(format!(
            "{n} blocks give {n}! permutations; at most {BRUTE_FORCE_MAX_BLOCKS} blocks are searched"
        )));
    }
    let mut candidates = Vec::new();
    let mut checks = 0u64;
    for perm in itertools::Itertools::permutations(0..n, n) {
        checks += 1;
        if apply_scramble(&pb, &perm)? == cb {
            candidates.push(perm);
        }
    }
    Ok(BruteForceResult { candidates, checks })
}

/// One row of the attack report.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub steps: Steps,
    pub block_size: usize,
    pub n_pieces: usize,
    pub metrics: Metrics,
    pub seconds: f64,
}

impl AttackReport {
    pub const CSV_HEADER: &'static str = "steps,block_size,n_pieces,dc,nc,lc,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.steps, self.block_size, self.n_pieces, self.metrics.dc, self.metrics.nc, self.metrics.lc, self.seconds
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::encrypt;
    use crate::keyschedule::StepStream;
    use proptest::prelude::*;

    fn solid(size: usize, channels: usize, v: u8) -> Block {
        Block::new(size, channels, vec![v; size * size * channels]).unwrap()
    }

    fn gradient(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 3, |x, y, c| ((x * 2 + y * 3 + c * 40) % 256) as u8).unwrap()
    }

    fn p(piece: usize, code: u8) -> Placement {
        Placement::new(piece, Orientation::new(code).unwrap())
    }

    fn scored(rows: usize, cols: usize, cells: Vec<Placement>) -> Metrics {
        let img = gradient(cols * 4, rows * 4);
        let puzzle = Puzzle::from_image(&img, 4)
            .unwrap()
            .with_ground_truth(Assembly::identity(rows, cols).unwrap().cells)
            .unwrap();
        score_assembly(&Assembly::new(rows, cols, cells).unwrap(), &puzzle).unwrap()
    }

    #[test]
    fn dissimilarity_examples() {
        let zero = solid(4, 3, 0);
        assert_eq!(boundary_dissimilarity(&zero, &zero, Relation::RightOf).unwrap(), 0.0);
        let white = solid(4, 3, 255);
        assert_eq!(boundary_dissimilarity(&zero, &white, Relation::Below).unwrap(), 65025.0);
        assert!(boundary_dissimilarity(&zero, &solid(5, 3, 0), Relation::Below).is_err());
    }

    #[test]
    fn dissimilarity_uses_the_facing_edges() {
        let mut a = solid(2, 1, 0);
        a.data = vec![1, 2, 3, 4]; // rows [1 2] [3 4]
        let mut b = solid(2, 1, 0);
        b.data = vec![5, 6, 7, 8];
        // right column of a (2, 4) vs left column of b (5, 7): 9 + 9
        assert_eq!(boundary_dissimilarity(&a, &b, Relation::RightOf).unwrap(), 9.0);
        // bottom row of a (3, 4) vs top row of b (5, 6): 4 + 4
        assert_eq!(boundary_dissimilarity(&a, &b, Relation::Below).unwrap(), 4.0);
    }

    #[test]
    fn adjacent_pieces_beat_random_ones_on_smooth_images() {
        let img = ImageBuffer::from_fn(128, 128, 3, |x, y, c| {
            (128.0 + 100.0 * ((x as f64 / 17.0).sin() * (y as f64 / 23.0 + c as f64).cos())) as u8
        })
        .unwrap();
        let (blocks, grid) = split_blocks(&img, 8).unwrap();
        let mut rng = StepStream::from_seed(11);
        let (mut wins, trials) = (0, 400);
        for _ in 0..trials {
            let r = rng.uniform_below(grid.rows as u64).unwrap() as usize;
            let c = rng.uniform_below(grid.cols as u64 - 1).unwrap() as usize;
            let a = r * grid.cols + c;
            let mut other = rng.uniform_below(grid.len() as u64).unwrap() as usize;
            while other == a || other == a + 1 {
                other = (other + 1) % grid.len();
            }
            let near = boundary_dissimilarity(&blocks[a], &blocks[a + 1], Relation::RightOf).unwrap();
            let far = boundary_dissimilarity(&blocks[a], &blocks[other], Relation::RightOf).unwrap();
            wins += (near < far) as usize;
        }
        assert!(wins as f64 >= 0.9 * trials as f64, "{wins}/{trials}");
    }

    #[test]
    fn top_row_swap_on_2x2() {
        let m = scored(2, 2, vec![p(1, 0), p(0, 0), p(2, 0), p(3, 0)]);
        assert_eq!((m.dc, m.nc, m.lc), (0.5, 0.25, 0.5));
    }

    #[test]
    fn ground_truth_scores_one() {
        for (rows, cols) in [(1, 1), (1, 3), (2, 3), (4, 4)] {
            let m = scored(rows, cols, Assembly::identity(rows, cols).unwrap().cells);
            assert_eq!((m.dc, m.nc, m.lc), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn global_rotation_only_affects_dc() {
        // 2x2 identity rotated by a half turn: cells reversed, each piece turned 180°.
        let cells = vec![p(3, 2), p(2, 2), p(1, 2), p(0, 2)];
        let m = scored(2, 2, cells.clone());
        assert_eq!((m.dc, m.nc, m.lc), (1.0, 1.0, 1.0));
        let img = gradient(8, 8);
        let puzzle = Puzzle::from_image(&img, 4)
            .unwrap()
            .with_ground_truth(Assembly::identity(2, 2).unwrap().cells)
            .unwrap();
        let strict = score_assembly_with(
            &Assembly::new(2, 2, cells).unwrap(),
            &puzzle,
            ScoreOptions { allow_global_rotation: false },
        )
        .unwrap();
        assert_eq!((strict.dc, strict.nc, strict.lc), (0.0, 1.0, 1.0));
    }

    #[test]
    fn quarter_turn_of_a_wide_grid_is_not_considered() {
        let a = Assembly::identity(2, 3).unwrap();
        assert!(a.rotated(1).is_none());
        assert!(a.rotated(2).is_some());
        assert_eq!(Assembly::identity(3, 3).unwrap().rotated(4).unwrap(), Assembly::identity(3, 3).unwrap());
    }

    #[test]
    fn wrong_orientation_breaks_every_pair_of_the_piece() {
        let m = scored(1, 3, vec![p(0, 0), p(1, 1), p(2, 0)]);
        assert_eq!((m.dc, m.nc), (2.0 / 3.0, 0.0));
        assert_eq!(m.lc, 1.0 / 3.0);
    }

    #[test]
    fn scoring_needs_ground_truth_and_matching_shape() {
        let puzzle = Puzzle::from_image(&gradient(8, 8), 4).unwrap();
        assert!(score_assembly(&Assembly::identity(2, 2).unwrap(), &puzzle).is_err());
        let puzzle = puzzle.with_ground_truth(Assembly::identity(2, 2).unwrap().cells).unwrap();
        assert!(score_assembly(&Assembly::identity(1, 4).unwrap(), &puzzle).is_err());
    }

    #[test]
    fn assemblies_must_be_bijections() {
        assert!(Assembly::new(1, 2, vec![p(0, 0), p(0, 0)]).is_err());
        assert!(Assembly::new(1, 2, vec![p(0, 0), p(2, 0)]).is_err());
        assert!(Assembly::new(1, 2, vec![p(0, 0)]).is_err());
    }

    #[test]
    fn ground_truth_matches_decryption() {
        let img = gradient(64, 32);
        let key = MasterKey::new(99);
        let cfg = CipherConfig::color().with_block_size(8);
        let (cipher, _) = encrypt(&img, key, &cfg).unwrap();
        let puzzle = Puzzle::from_ciphertext(&cipher, key, &cfg).unwrap();
        let truth = Assembly::new(4, 8, puzzle.ground_truth().unwrap().to_vec()).unwrap();
        let rendered = puzzle.render(&truth).unwrap();
        // Negative-positive and color shuffling alter content, so compare
        // geometry on a scramble/rotate-only cipher.
        let geo = CipherConfig::color().with_block_size(8).with_steps(Steps::from_mask(0b0011));
        let (cipher, _) = encrypt(&img, key, &geo).unwrap();
        let puzzle = Puzzle::from_ciphertext(&cipher, key, &geo).unwrap();
        let truth = Assembly::new(4, 8, puzzle.ground_truth().unwrap().to_vec()).unwrap();
        assert_eq!(puzzle.render(&truth).unwrap(), img);
        assert_eq!(rendered.width(), 64);
    }

    #[test]
    fn single_piece_gives_identity() {
        let puzzle = Puzzle::from_image(&gradient(8, 8), 8).unwrap();
        assert_eq!(greedy_assemble(&puzzle, true), Assembly::identity(1, 1).unwrap());
    }

    #[test]
    fn two_pieces_of_a_gradient() {
        let img = ImageBuffer::from_fn(16, 8, 1, |x, _, _| (x * 10) as u8).unwrap();
        let (blocks, grid) = split_blocks(&img, 8).unwrap();
        let swapped = vec![blocks[1].clone(), blocks[0].clone()];
        let puzzle = Puzzle::new(swapped, grid)
            .unwrap()
            .with_ground_truth(vec![p(1, 0), p(0, 0)])
            .unwrap();
        let a = greedy_assemble(&puzzle, false);
        assert_eq!(a.cells(), &[p(1, 0), p(0, 0)]);
        assert_eq!(score_assembly(&a, &puzzle).unwrap().nc, 1.0);
    }

    #[test]
    fn smooth_image_is_solved_from_scrambled_pieces() {
        let img = ImageBuffer::from_fn(64, 48, 3, |x, y, c| {
            let (x, y) = (x as f64, y as f64);
            (40.0 + 1.5 * x + 0.02 * x * y + 0.05 * y * y + 30.0 * (x / 9.0 + c as f64).sin()) as u8
        })
        .unwrap();
        // Orientation search has to resolve 8x more candidates per cell, some of
        // them near-ties on smooth content.
        for (steps, search, floor) in [(Steps::SCRAMBLE_ONLY, false, 0.8), (Steps::from_mask(0b0011), true, 0.5)] {
            let key = MasterKey::new(5);
            let cfg = CipherConfig::color().with_block_size(8).with_steps(steps);
            let (cipher, _) = encrypt(&img, key, &cfg).unwrap();
            let puzzle = Puzzle::from_ciphertext(&cipher, key, &cfg).unwrap();
            let m = score_assembly(&greedy_assemble(&puzzle, search), &puzzle).unwrap();
            assert!(m.nc >= floor, "{steps}: {m:?}");
        }
    }

    #[test]
    fn greedy_is_deterministic_and_bijective() {
        let img = gradient(48, 32);
        let puzzle = Puzzle::from_image(&img, 8).unwrap();
        let a = greedy_assemble(&puzzle, true);
        assert_eq!(a, greedy_assemble(&puzzle, true));
        assert_eq!((a.rows(), a.cols()), (4, 6));
    }

    #[test]
    fn constant_pieces_resolve_ties_by_piece_id_then_cell() {
        // Seed (0, 1) left to right; piece 2 then takes the lower-indexed open
        // cell, which is left of the seed.
        let img = ImageBuffer::filled(24, 8, 1, 9).unwrap();
        let puzzle = Puzzle::from_image(&img, 8).unwrap();
        let a = greedy_assemble(&puzzle, false);
        assert_eq!(a.cells(), &[p(2, 0), p(0, 0), p(1, 0)]);
    }

    #[test]
    fn random_assemblies_rarely_keep_neighbours() {
        let img = gradient(32, 32);
        let puzzle = Puzzle::from_image(&img, 4)
            .unwrap()
            .with_ground_truth(Assembly::identity(8, 8).unwrap().cells)
            .unwrap();
        let mut total = 0.0;
        for seed in 0..200u64 {
            let perm = crate::keyschedule::gen_permutation(seed, 64);
            let cells = perm.into_iter().map(|i| p(i, 0)).collect();
            total += score_assembly(&Assembly::new(8, 8, cells).unwrap(), &puzzle).unwrap().nc;
        }
        assert!(total / 200.0 <= 0.1);
    }

    #[test]
    fn brute_force_finds_the_key_permutation() {
        let img = ImageBuffer::from_fn(16, 16, 3, |x, y, c| ((x / 8) * 70 + (y / 8) * 130 + c) as u8).unwrap();
        let cfg = CipherConfig::color().with_block_size(8).with_steps(Steps::SCRAMBLE_ONLY);
        let key = MasterKey::new(0x0123_4567_89ab_cdef);
        let (cipher, _) = encrypt(&img, key, &cfg).unwrap();
        let found = brute_force_scramble(&img, &cipher, &cfg).unwrap();
        assert_eq!(found.checks, 24);
        assert_eq!(found.candidates, vec![BlockKeys::draw(key, cfg.steps, 4).permutation]);
    }

    #[test]
    fn brute_force_edge_cases() {
        let cfg = CipherConfig::color().with_block_size(8).with_steps(Steps::SCRAMBLE_ONLY);
        let one = gradient(8, 8);
        let found = brute_force_scramble(&one, &one, &cfg).unwrap();
        assert_eq!(found.candidates, vec![vec![0]]);
        let flat = ImageBuffer::filled(24, 8, 3, 3).unwrap();
        assert_eq!(brute_force_scramble(&flat, &flat, &cfg).unwrap().candidates.len(), 6);
        let big = gradient(8 * 11, 8);
        assert!(brute_force_scramble(&big, &big, &cfg).is_err());
        assert!(brute_force_scramble(&one, &one, &CipherConfig::color().with_block_size(8)).is_err());
    }

    #[test]
    fn report_row_format() {
        let r = AttackReport {
            steps: Steps::ALL,
            block_size: 16,
            n_pieces: 64,
            metrics: Metrics { dc: 0.0, nc: 0.03125, lc: 0.5 },
            seconds: 1.25,
        };
        assert_eq!(r.csv_row(), "srnc,16,64,0.000000,0.031250,0.500000,1.250000");
    }

    proptest! {
        #[test]
        fn metrics_stay_in_range(seed in any::<u64>(), codes in proptest::collection::vec(0u8..8, 12)) {
            let perm = crate::keyschedule::gen_permutation(seed, 12);
            let cells: Vec<Placement> = perm.iter().zip(&codes).map(|(&i, &c)| p(i, c)).collect();
            let m = scored(3, 4, cells);
            for v in [m.dc, m.nc, m.lc] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(m.lc >= 1.0 / 12.0);
        }

        #[test]
        fn brute_force_contains_the_truth(seed in any::<u64>(), flat in any::<bool>()) {
            let img = if flat {
                ImageBuffer::filled(16, 16, 3, 1).unwrap()
            } else {
                ImageBuffer::from_fn(16, 16, 3, |x, y, _| ((x / 8) * 2 + (y / 8)) as u8 % 3).unwrap()
            };
            let cfg = CipherConfig::color().with_block_size(8).with_steps(Steps::SCRAMBLE_ONLY);
            let key = MasterKey::new(seed);
            let (cipher, _) = encrypt(&img, key, &cfg).unwrap();
            let found = brute_force_scramble(&img, &cipher, &cfg).unwrap();
            prop_assert!(found.candidates.contains(&BlockKeys::draw(key, cfg.steps, 4).permutation));
        }
    }
}
