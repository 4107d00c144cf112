//! Batched complex-to-complex transforms over chunk buffers, plus the plan
//! cache that guarantees at-most-once plan construction per configuration.

mod kernel;

pub use kernel::{naive_dft_1d, Direction, Kernel1d};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::grid::Axis;
use crate::real::{FftReal, Precision};

/// Transform kind. Only C2C is implemented; the other slots exist so cache
/// keys stay stable when more kinds appear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    C2c,
    R2c,
    R2r,
}

/// Describes one batched transform request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub direction: Direction,
    pub dims: Vec<Axis>,
    pub lengths: Vec<usize>,
    pub batch: usize,
}

impl TransformSpec {
    pub fn key(&self, precision: Precision, extent: (usize, usize, usize)) -> PlanKey {
        PlanKey {
            precision,
            extent,
            kind: self.kind,
            direction: self.direction,
            dims: self.dims.clone(),
        }
    }
}

/// Structural cache key: element type, chunk extent, transform kind,
/// direction, and the ordered transform dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlanKey {
    pub precision: Precision,
    pub extent: (usize, usize, usize),
    pub kind: TransformKind,
    pub direction: Direction,
    pub dims: Vec<Axis>,
}

impl PlanKey {
    pub fn c2c(
        precision: Precision,
        extent: (usize, usize, usize),
        direction: Direction,
        dims: &[Axis],
    ) -> Self {
        PlanKey { precision, extent, kind: TransformKind::C2c, direction, dims: dims.to_vec() }
    }

    fn extent_along(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.extent.0,
            Axis::Y => self.extent.1,
            Axis::Z => self.extent.2,
        }
    }
}

/// Immutable, reusable execution schedule for one cache key.
#[derive(Debug)]
pub struct FftPlan<T: FftReal> {
    pub key: PlanKey,
    pub plan_id: u64,
    /// One 1D kernel per entry of `key.dims`, in order.
    kernels: Vec<Kernel1d<T>>,
}

impl<T: FftReal> FftPlan<T> {
    fn new(key: PlanKey, plan_id: u64) -> Result<Self> {
        if key.kind != TransformKind::C2c {
            return Err(Error::UnsupportedTransform(format!("{:?}", key.kind)));
        }
        if key.dims.is_empty() {
            return Err(Error::UnsupportedTransform("empty dims tuple".into()));
        }
        let kernels = key
            .dims
            .iter()
            .map(|&axis| Kernel1d::new(key.extent_along(axis), key.direction))
            .collect();
        Ok(FftPlan { key, plan_id, kernels })
    }

    pub fn kernel(&self, i: usize) -> &Kernel1d<T> {
        &self.kernels[i]
    }
}

/// Memoizes plans per distinct key. Construction happens at most once per key
/// even under concurrent first use.
pub struct PlanCache<T: FftReal> {
    plans: Mutex<HashMap<PlanKey, Arc<FftPlan<T>>>>,
    next_id: AtomicU64,
    creations: AtomicU64,
    hits: AtomicU64,
}

impl<T: FftReal> Default for PlanCache<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: FftReal> PlanCache<T> {
    pub fn new() -> Self {
        PlanCache {
            plans: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            creations: AtomicU64::new(0),
            hits: AtomicU64::new(0),
        }
    }

    pub fn get_or_create_plan(&self, key: &PlanKey) -> Result<Arc<FftPlan<T>>> {
        // The lock spans construction so a key is never built twice.
        let mut plans = self.plans.lock().unwrap();
        if let Some(plan) = plans.get(key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(plan.clone());
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let plan = Arc::new(FftPlan::new(key.clone(), id)?);
        plans.insert(key.clone(), plan.clone());
        self.creations.fetch_add(1, Ordering::Relaxed);
        Ok(plan)
    }

    pub fn creations(&self) -> u64 {
        self.creations.load(Ordering::Relaxed)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn distinct_keys(&self) -> usize {
        self.plans.lock().unwrap().len()
    }
}

fn check_shape<T: FftReal>(
    plan: &FftPlan<T>,
    buf_len: usize,
    extent: (usize, usize, usize),
) -> Result<()> {
    if plan.key.extent != extent {
        return Err(Error::PlanMismatch(format!(
            "plan extent {:?} vs chunk extent {:?}",
            plan.key.extent, extent
        )));
    }
    if buf_len != extent.0 * extent.1 * extent.2 {
        return Err(Error::PlanMismatch(format!(
            "buffer length {buf_len} vs extent {extent:?}"
        )));
    }
    if plan.key.precision != T::PRECISION {
        return Err(Error::PlanMismatch("plan precision vs element type".into()));
    }
    Ok(())
}

/// Per-axis (line stride, line count) for x-fastest storage.
fn line_geometry(extent: (usize, usize, usize), axis: Axis) -> (usize, usize) {
    let (ex, ey, ez) = extent;
    match axis {
        Axis::X => (1, ey * ez),
        Axis::Y => (ex, ex * ez),
        Axis::Z => (ex * ey, ex * ey),
    }
}

fn line_base(extent: (usize, usize, usize), axis: Axis, line: usize) -> usize {
    let (ex, ey, _) = extent;
    match axis {
        Axis::X => line * ex,
        Axis::Y => {
            let x = line % ex;
            let z = line / ex;
            x + ex * ey * z
        }
        Axis::Z => line,
    }
}

fn apply_axis<T: FftReal>(
    kern: &Kernel1d<T>,
    buf: &mut [Complex<T>],
    extent: (usize, usize, usize),
    axis: Axis,
    line_buf: &mut Vec<Complex<T>>,
    scratch: &mut Vec<Complex<T>>,
) {
    let n = kern.len;
    let (stride, nlines) = line_geometry(extent, axis);
    line_buf.resize(n, Complex::new(T::zero(), T::zero()));
    scratch.resize(kern.scratch_len(), Complex::new(T::zero(), T::zero()));
    for l in 0..nlines {
        let base = line_base(extent, axis, l);
        if stride == 1 {
            kern.process(&mut buf[base..base + n], scratch);
        } else {
            for (i, slot) in line_buf.iter_mut().enumerate() {
                *slot = buf[base + i * stride];
            }
            kern.process(line_buf, scratch);
            for (i, v) in line_buf.iter().enumerate() {
                buf[base + i * stride] = *v;
            }
        }
    }
}

/// Transforms every 1D line of `buf` along `axis` in place; the other axes
/// are untouched. The plan must be a 1D plan for this chunk extent and axis.
pub fn apply_fft_1d<T: FftReal>(
    plan: &FftPlan<T>,
    buf: &mut [Complex<T>],
    extent: (usize, usize, usize),
    axis: Axis,
) -> Result<()> {
    check_shape(plan, buf.len(), extent)?;
    if plan.key.dims.len() != 1 || plan.key.dims[0] != axis {
        return Err(Error::PlanMismatch(format!(
            "plan dims {:?} vs requested axis {axis:?}",
            plan.key.dims
        )));
    }
    let mut line_buf = Vec::new();
    let mut scratch = Vec::new();
    apply_axis(plan.kernel(0), buf, extent, axis, &mut line_buf, &mut scratch);
    Ok(())
}

/// Batched 2D transform: two batched 1D passes in `plan.key.dims` order.
pub fn apply_fft_2d<T: FftReal>(
    plan: &FftPlan<T>,
    buf: &mut [Complex<T>],
    extent: (usize, usize, usize),
    axes: (Axis, Axis),
) -> Result<()> {
    check_shape(plan, buf.len(), extent)?;
    if plan.key.dims != [axes.0, axes.1] {
        return Err(Error::PlanMismatch(format!(
            "plan dims {:?} vs requested axes {axes:?}",
            plan.key.dims
        )));
    }
    let mut line_buf = Vec::new();
    let mut scratch = Vec::new();
    apply_axis(plan.kernel(0), buf, extent, axes.0, &mut line_buf, &mut scratch);
    apply_axis(plan.kernel(1), buf, extent, axes.1, &mut line_buf, &mut scratch);
    Ok(())
}

/// Quadratic-time 3D reference transform: three passes of the 1D reference
/// DFT over an x-fastest global array. Independent of every fast path here.
pub fn reference_fft3d(
    extent: (usize, usize, usize),
    input: &[Complex<f64>],
    direction: Direction,
) -> Vec<Complex<f64>> {
    let (nx, ny, nz) = extent;
    assert_eq!(input.len(), nx * ny * nz);
    let mut data = input.to_vec();
    for z in 0..nz {
        for y in 0..ny {
            let base = nx * (y + ny * z);
            let line: Vec<_> = data[base..base + nx].to_vec();
            data[base..base + nx].copy_from_slice(&naive_dft_1d(&line, direction));
        }
    }
    for z in 0..nz {
        for x in 0..nx {
            let line: Vec<_> = (0..ny).map(|y| data[x + nx * (y + ny * z)]).collect();
            for (y, v) in naive_dft_1d(&line, direction).into_iter().enumerate() {
                data[x + nx * (y + ny * z)] = v;
            }
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            let line: Vec<_> = (0..nz).map(|z| data[x + nx * (y + ny * z)]).collect();
            for (z, v) in naive_dft_1d(&line, direction).into_iter().enumerate() {
                data[x + nx * (y + ny * z)] = v;
            }
        }
    }
    data
}

/// Number of 1D lines along `axis` in a chunk of this extent.
pub fn num_lines(extent: (usize, usize, usize), axis: Axis) -> usize {
    line_geometry(extent, axis).1
}

/// Copies line `line` along `axis` out of `buf` into `out`.
pub fn gather_line<T: FftReal>(
    buf: &[Complex<T>],
    extent: (usize, usize, usize),
    axis: Axis,
    line: usize,
    out: &mut [Complex<T>],
) {
    let (stride, _) = line_geometry(extent, axis);
    let base = line_base(extent, axis, line);
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = buf[base + i * stride];
    }
}

/// Writes a transformed line back into `buf`.
pub fn scatter_line<T: FftReal>(
    buf: &mut [Complex<T>],
    extent: (usize, usize, usize),
    axis: Axis,
    line: usize,
    src: &[Complex<T>],
) {
    let (stride, _) = line_geometry(extent, axis);
    let base = line_base(extent, axis, line);
    for (i, v) in src.iter().enumerate() {
        buf[base + i * stride] = *v;
    }
}

/// Transforms a single contiguous line with the plan's first kernel.
pub fn fast_fft_line<T: FftReal>(plan: &FftPlan<T>, line: &mut [Complex<T>]) -> Result<()> {
    let kern = plan.kernel(0);
    if line.len() != kern.len {
        return Err(Error::PlanMismatch(format!(
            "line length {} vs plan length {}",
            line.len(),
            kern.len
        )));
    }
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); kern.scratch_len()];
    kern.process(line, &mut scratch);
    Ok(())
}
