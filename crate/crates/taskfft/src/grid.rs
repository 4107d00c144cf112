//! Grid geometry: global extents, slab/pencil decompositions, chunk boxes and
//! global/local index mapping for the three transform-stage layouts.
//!
//! Storage order is x-fastest within every chunk, so stage-1 lines along x are
//! contiguous runs of the local buffer.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::real::{FftReal, Precision};

pub type ChunkId = usize;

/// Global grid description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub precision: Precision,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, precision: Precision) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidGrid(format!(
                "extents must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        nx.checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::InvalidGrid("total element count overflows usize".into()))?;
        Ok(GridSpec { nx, ny, nz, precision })
    }

    pub fn total(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.nx,
            Axis::Y => self.ny,
            Axis::Z => self.nz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// One rank's contiguous sub-box of the global grid in one stage layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkDescriptor {
    pub owner_rank: usize,
    pub global_offset: (usize, usize, usize),
    pub extent: (usize, usize, usize),
    pub chunk_id: ChunkId,
}

impl ChunkDescriptor {
    pub fn volume(&self) -> usize {
        self.extent.0 * self.extent.1 * self.extent.2
    }

    pub fn extent_along(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.extent.0,
            Axis::Y => self.extent.1,
            Axis::Z => self.extent.2,
        }
    }

    pub fn contains(&self, g: (usize, usize, usize)) -> bool {
        let (ox, oy, oz) = self.global_offset;
        let (ex, ey, ez) = self.extent;
        g.0 >= ox && g.0 < ox + ex && g.1 >= oy && g.1 < oy + ey && g.2 >= oz && g.2 < oz + ez
    }
}

/// Maps a global index inside `desc`'s box to the linear local index
/// under x-fastest storage order.
pub fn global_to_local(desc: &ChunkDescriptor, gidx: (usize, usize, usize)) -> Result<usize> {
    if !desc.contains(gidx) {
        return Err(Error::IndexOutOfBox {
            index: gidx,
            offset: desc.global_offset,
            extent: desc.extent,
        });
    }
    let lx = gidx.0 - desc.global_offset.0;
    let ly = gidx.1 - desc.global_offset.1;
    let lz = gidx.2 - desc.global_offset.2;
    Ok(lx + desc.extent.0 * (ly + desc.extent.1 * lz))
}

/// Inverse of [`global_to_local`].
pub fn local_to_global(desc: &ChunkDescriptor, lin: usize) -> Result<(usize, usize, usize)> {
    if lin >= desc.volume() {
        return Err(Error::IndexOutOfBox {
            index: (lin, 0, 0),
            offset: desc.global_offset,
            extent: desc.extent,
        });
    }
    let (ex, ey, _) = desc.extent;
    let lx = lin % ex;
    let ly = (lin / ex) % ey;
    let lz = lin / (ex * ey);
    Ok((
        desc.global_offset.0 + lx,
        desc.global_offset.1 + ly,
        desc.global_offset.2 + lz,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Strategy {
    Slab,
    Pencil,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Slab => write!(f, "slab"),
            Strategy::Pencil => write!(f, "pencil"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "slab" => Ok(Strategy::Slab),
            "pencil" => Ok(Strategy::Pencil),
            other => Err(format!("unknown strategy `{other}` (expected slab|pencil)")),
        }
    }
}

/// Which transform stage an array belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageTag {
    A,
    B,
    C,
}

/// One stage layout: exactly one chunk per rank, chunks tile the grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// Indexed by rank.
    pub chunks: Vec<ChunkDescriptor>,
    /// The dimension kept whole by this layout.
    pub whole_axis: Axis,
}

impl Layout {
    pub fn num_ranks(&self) -> usize {
        self.chunks.len()
    }

    /// The unique chunk owned by `rank`.
    pub fn chunk_of(&self, rank: usize) -> Result<&ChunkDescriptor> {
        self.chunks.get(rank).ok_or(Error::RankNotFound { rank })
    }

    pub fn chunk_by_id(&self, id: ChunkId) -> Option<&ChunkDescriptor> {
        self.chunks.iter().find(|c| c.chunk_id == id)
    }

    /// Owner of the chunk whose box contains `g`.
    pub fn owner_of(&self, g: (usize, usize, usize)) -> Option<usize> {
        self.chunks.iter().find(|c| c.contains(g)).map(|c| c.owner_rank)
    }
}

/// The three stage layouts D1/D2/D3 over a process grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionPlan {
    pub grid: GridSpec,
    pub strategy: Strategy,
    pub process_grid: (usize, usize),
    pub layouts: [Layout; 3],
}

impl DecompositionPlan {
    pub fn num_ranks(&self) -> usize {
        self.process_grid.0 * self.process_grid.1
    }

    pub fn layout(&self, stage: StageTag) -> &Layout {
        match stage {
            StageTag::A => &self.layouts[0],
            StageTag::B => &self.layouts[1],
            StageTag::C => &self.layouts[2],
        }
    }
}

/// Balanced block partition of `extent` into `parts`: remainder elements go
/// one-per-rank to the lowest-indexed parts. Returns (offset, len) per part.
fn block_partition(extent: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = extent / parts;
    let rem = extent % parts;
    let mut out = Vec::with_capacity(parts);
    let mut off = 0;
    for i in 0..parts {
        let len = base + usize::from(i < rem);
        out.push((off, len));
        off += len;
    }
    out
}

/// Builds the three stage layouts for `grid` under `strategy`.
///
/// Rank mapping over the process grid is row-major: rank = i1 * p2 + i2.
/// Pencil: D1 keeps x whole (y split by p1, z by p2), D2 keeps y whole
/// (x by p1, z by p2), D3 keeps z whole (x by p1, y by p2).
/// Slab: process grid must be (P, 1); D1 = D2 keep x and y whole (z split),
/// D3 keeps z whole (y split), so a single transpose connects the stages.
pub fn make_decomposition(
    grid: GridSpec,
    strategy: Strategy,
    process_grid: (usize, usize),
) -> Result<DecompositionPlan> {
    let (p1, p2) = process_grid;
    if p1 == 0 || p2 == 0 {
        return Err(Error::DecompositionInfeasible("process grid dims must be >= 1".into()));
    }
    if strategy == Strategy::Slab && p2 != 1 {
        return Err(Error::DecompositionInfeasible(format!(
            "slab requires process grid (P,1), got ({p1},{p2})"
        )));
    }
    let nranks = p1 * p2;

    // Every rank must own a non-empty chunk in every layout.
    let feasible = match strategy {
        Strategy::Pencil => {
            p1 <= grid.nx.min(grid.ny) && p2 <= grid.ny.min(grid.nz)
        }
        Strategy::Slab => p1 <= grid.ny.min(grid.nz),
    };
    if !feasible {
        return Err(Error::DecompositionInfeasible(format!(
            "process grid ({p1},{p2}) exceeds partitionable extents of {}x{}x{} {strategy}",
            grid.nx, grid.ny, grid.nz
        )));
    }

    // splits[axis][part] = (offset, len)
    let build = |whole: Axis, ax1: Axis, ax2: Axis| -> Layout {
        let s1 = block_partition(grid.extent(ax1), p1);
        let s2 = block_partition(grid.extent(ax2), p2);
        let mut chunks = Vec::with_capacity(nranks);
        for i1 in 0..p1 {
            for i2 in 0..p2 {
                let rank = i1 * p2 + i2;
                let mut off = [0usize; 3];
                let mut ext = [0usize; 3];
                ext[whole.index()] = grid.extent(whole);
                off[ax1.index()] = s1[i1].0;
                ext[ax1.index()] = s1[i1].1;
                off[ax2.index()] = s2[i2].0;
                ext[ax2.index()] = s2[i2].1;
                chunks.push(ChunkDescriptor {
                    owner_rank: rank,
                    global_offset: (off[0], off[1], off[2]),
                    extent: (ext[0], ext[1], ext[2]),
                    chunk_id: 0, // assigned below
                });
            }
        }
        Layout { chunks, whole_axis: whole }
    };

    let mut layouts = match strategy {
        Strategy::Pencil => [
            build(Axis::X, Axis::Y, Axis::Z),
            build(Axis::Y, Axis::X, Axis::Z),
            build(Axis::Z, Axis::X, Axis::Y),
        ],
        Strategy::Slab => {
            // D1 = D2: full x and y, z split over p1. D3: full z, y split over p1.
            let d1 = {
                let s = block_partition(grid.nz, p1);
                let chunks = (0..p1)
                    .map(|r| ChunkDescriptor {
                        owner_rank: r,
                        global_offset: (0, 0, s[r].0),
                        extent: (grid.nx, grid.ny, s[r].1),
                        chunk_id: 0,
                    })
                    .collect();
                Layout { chunks, whole_axis: Axis::X }
            };
            let d3 = {
                let s = block_partition(grid.ny, p1);
                let chunks = (0..p1)
                    .map(|r| ChunkDescriptor {
                        owner_rank: r,
                        global_offset: (0, s[r].0, 0),
                        extent: (grid.nx, s[r].1, grid.nz),
                        chunk_id: 0,
                    })
                    .collect();
                Layout { chunks, whole_axis: Axis::Z }
            };
            [d1.clone(), d1, d3]
        }
    };

    // Chunk ids unique across the whole plan: layout_index * nranks + rank.
    for (li, layout) in layouts.iter_mut().enumerate() {
        for c in layout.chunks.iter_mut() {
            c.chunk_id = li * nranks + c.owner_rank;
        }
    }

    Ok(DecompositionPlan { grid, strategy, process_grid, layouts })
}

/// Stage-owned distributed complex array. In the multi-rank drivers each rank
/// holds only its own chunk; single-process tests may hold all of them.
pub struct DistributedArray<T: FftReal> {
    pub grid: GridSpec,
    pub layout: Arc<Layout>,
    pub chunks: HashMap<ChunkId, Arc<Mutex<Vec<Complex<T>>>>>,
    pub stage: StageTag,
}

impl<T: FftReal> DistributedArray<T> {
    /// Zero-filled array holding the chunks of `ranks` only.
    pub fn allocate(
        grid: GridSpec,
        layout: Arc<Layout>,
        stage: StageTag,
        ranks: &[usize],
    ) -> Result<Self> {
        let mut chunks = HashMap::new();
        for &r in ranks {
            let desc = layout.chunk_of(r)?;
            chunks.insert(
                desc.chunk_id,
                Arc::new(Mutex::new(vec![Complex::new(T::zero(), T::zero()); desc.volume()])),
            );
        }
        Ok(DistributedArray { grid, layout, chunks, stage })
    }

    /// Zero-filled array holding every rank's chunk (single-process use).
    pub fn allocate_all(grid: GridSpec, layout: Arc<Layout>, stage: StageTag) -> Result<Self> {
        let ranks: Vec<usize> = (0..layout.num_ranks()).collect();
        Self::allocate(grid, layout, stage, &ranks)
    }

    pub fn chunk(&self, id: ChunkId) -> Result<&Arc<Mutex<Vec<Complex<T>>>>> {
        self.chunks.get(&id).ok_or(Error::UnknownChunk(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid8() -> GridSpec {
        GridSpec::new(8, 8, 8, Precision::F64).unwrap()
    }

    #[test]
    fn pencil_2x2_d1_layout() {
        let plan = make_decomposition(grid8(), Strategy::Pencil, (2, 2)).unwrap();
        let d1 = &plan.layouts[0];
        assert_eq!(d1.chunks.len(), 4);
        for c in &d1.chunks {
            assert_eq!(c.extent, (8, 4, 4));
            assert!(c.global_offset.1 == 0 || c.global_offset.1 == 4);
            assert!(c.global_offset.2 == 0 || c.global_offset.2 == 4);
        }
        assert_eq!(d1.chunk_of(0).unwrap().global_offset, (0, 0, 0));
        assert_eq!(d1.chunk_of(0).unwrap().extent, (8, 4, 4));
    }

    #[test]
    fn slab_4x1_partitions_z() {
        let plan = make_decomposition(grid8(), Strategy::Slab, (4, 1)).unwrap();
        for (r, c) in plan.layouts[0].chunks.iter().enumerate() {
            assert_eq!(c.extent, (8, 8, 2));
            assert_eq!(c.global_offset, (0, 0, 2 * r));
        }
        // D1 = D2 for slab.
        assert_eq!(
            plan.layouts[0].chunks.iter().map(|c| (c.global_offset, c.extent)).collect::<Vec<_>>(),
            plan.layouts[1].chunks.iter().map(|c| (c.global_offset, c.extent)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn single_rank_degenerate() {
        let plan = make_decomposition(grid8(), Strategy::Pencil, (1, 1)).unwrap();
        for layout in &plan.layouts {
            assert_eq!(layout.chunks.len(), 1);
            assert_eq!(layout.chunks[0].extent, (8, 8, 8));
            assert_eq!(layout.chunks[0].owner_rank, 0);
        }
    }

    #[test]
    fn d3_rank3_matches_enumeration() {
        // Oracle: enumerate which rank's D3 box contains each global index and
        // recover rank 3's bounding box by brute force.
        let plan = make_decomposition(grid8(), Strategy::Pencil, (2, 2)).unwrap();
        let d3 = &plan.layouts[2];
        let mut min = (usize::MAX, usize::MAX, usize::MAX);
        let mut max = (0, 0, 0);
        let mut count = 0;
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..8 {
                    if d3.owner_of((x, y, z)) == Some(3) {
                        min = (min.0.min(x), min.1.min(y), min.2.min(z));
                        max = (max.0.max(x), max.1.max(y), max.2.max(z));
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 4 * 4 * 8);
        assert_eq!(min, (4, 4, 0));
        assert_eq!(max, (7, 7, 7));
        let c = d3.chunk_of(3).unwrap();
        assert_eq!(c.global_offset, (4, 4, 0));
        assert_eq!(c.extent, (4, 4, 8));
    }

    #[test]
    fn unknown_rank_is_error() {
        let plan = make_decomposition(grid8(), Strategy::Pencil, (2, 2)).unwrap();
        assert!(matches!(
            plan.layouts[0].chunk_of(4),
            Err(Error::RankNotFound { rank: 4 })
        ));
    }

    #[test]
    fn infeasible_and_zero_grid_errors() {
        assert!(matches!(
            GridSpec::new(0, 8, 8, Precision::F64),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(
            make_decomposition(grid8(), Strategy::Pencil, (16, 1)),
            Err(Error::DecompositionInfeasible(_))
        ));
        assert!(matches!(
            make_decomposition(grid8(), Strategy::Slab, (2, 2)),
            Err(Error::DecompositionInfeasible(_))
        ));
    }

    #[test]
    fn index_mapping_examples() {
        let desc = ChunkDescriptor {
            owner_rank: 0,
            global_offset: (0, 0, 0),
            extent: (8, 4, 4),
            chunk_id: 0,
        };
        assert_eq!(global_to_local(&desc, (0, 0, 0)).unwrap(), 0);
        assert_eq!(global_to_local(&desc, (1, 0, 0)).unwrap(), 1);
        assert!(global_to_local(&desc, (0, 4, 0)).is_err());
    }

    #[test]
    fn layouts_tile_grid_and_mapping_roundtrips() {
        let grids = [(8, 8, 8), (12, 8, 10), (4, 8, 16), (7, 5, 9)];
        let pgs = [(1, 1), (2, 1), (2, 2), (4, 2), (3, 2)];
        for &(nx, ny, nz) in &grids {
            let grid = GridSpec::new(nx, ny, nz, Precision::F64).unwrap();
            for &pg in &pgs {
                for strategy in [Strategy::Pencil, Strategy::Slab] {
                    let pg = if strategy == Strategy::Slab { (pg.0 * pg.1, 1) } else { pg };
                    let plan = match make_decomposition(grid, strategy, pg) {
                        Ok(p) => p,
                        Err(_) => continue, // infeasible combos are skipped here
                    };
                    for layout in &plan.layouts {
                        // Exhaustive cover check: every global index owned exactly once.
                        let mut seen = vec![0u8; grid.total()];
                        for c in &layout.chunks {
                            assert!(c.volume() >= 1);
                            for lin in 0..c.volume() {
                                let g = local_to_global(c, lin).unwrap();
                                assert_eq!(global_to_local(c, g).unwrap(), lin);
                                seen[g.0 + nx * (g.1 + ny * g.2)] += 1;
                            }
                        }
                        assert!(seen.iter().all(|&s| s == 1));
                    }
                }
            }
        }
    }

    #[test]
    fn make_decomposition_is_pure() {
        let a = make_decomposition(grid8(), Strategy::Pencil, (2, 4)).unwrap();
        let b = make_decomposition(grid8(), Strategy::Pencil, (2, 4)).unwrap();
        assert_eq!(a, b);
    }
}
