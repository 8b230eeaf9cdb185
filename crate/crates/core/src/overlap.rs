//! Transfer between the moving design grid and the fixed analysis grid.
//!
//! Both directions use the same tensor-product cosine kernel of support
//! `4 dx`: the forward map scatters design-node quantities (Brinkman
//! coefficient, solid velocity) onto each moved point's 4^d analysis
//! neighborhood, and the reverse map interpolates analysis fields at the
//! moved design points. Sharing the kernel evaluations and the clipping rule
//! makes the two maps exact transposes of each other, which the discrete
//! adjoint relies on.
//!
//! Parallelism contract: the scatter must run sequentially (several design
//! points write the same analysis node); the gather is safe to parallelize
//! over design nodes since each writes only its own output slot.

use crate::grid::{ScalarField, UniformGrid, VectorField};
use crate::motion::MotionFrame;

/// Kernel choice. `Cosine` is the interpolating form with `w(0) = 1/(2 dx)`;
/// `AsPrinted` is a non-interpolating variant kept selectable for replication
/// studies only — it peaks at the support edge and fails partition of unity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Cosine,
    AsPrinted,
}

/// One-dimensional kernel `w(r)`, supported on `|r| < 2 dx`.
pub fn kernel_w(kind: KernelKind, r: f64, dx: f64) -> f64 {
    let s = r.abs();
    if s >= 2.0 * dx {
        return 0.0;
    }
    match kind {
        KernelKind::Cosine => (1.0 + (std::f64::consts::PI * r / (2.0 * dx)).cos()) / (4.0 * dx),
        KernelKind::AsPrinted => (1.0 - (std::f64::consts::PI * r / 2.0).cos()) / (4.0 * dx),
    }
}

/// Moving-body fields on the analysis grid at one time level.
#[derive(Clone, Debug)]
pub struct OverlapSnapshot<const D: usize> {
    /// Brinkman coefficient mapped from the design grid.
    pub kappa: ScalarField<D>,
    /// Solid velocity mapped from the design grid.
    pub u_s: VectorField<D>,
    /// Time the snapshot was built for.
    pub time: f64,
    /// Kernel contributions that fell outside the analysis grid and were
    /// clipped.
    pub clipped: usize,
}

impl<const D: usize> OverlapSnapshot<D> {
    pub fn zeros(grid: &UniformGrid<D>) -> Self {
        Self {
            kappa: ScalarField::zeros(grid),
            u_s: VectorField::zeros(grid),
            time: 0.0,
            clipped: 0,
        }
    }
}

/// Per-axis kernel footprint of one moved point: up to four analysis node
/// slots starting at `start`, with `w * dx` factors (zero where clipped).
#[derive(Clone, Copy)]
struct AxisWeights {
    start: isize,
    w: [f64; 4],
}

fn axis_weights(
    kind: KernelKind,
    x_ref: f64,
    n: usize,
    origin: f64,
    dx: f64,
) -> (AxisWeights, usize) {
    let s = (x_ref - origin) / dx;
    let lo = (s - 2.0).floor() as isize + 1;
    let mut out = AxisWeights { start: lo, w: [0.0; 4] };
    let mut clipped = 0;
    for k in 0..4usize {
        let node = lo + k as isize;
        let r = (node as f64 - s) * dx;
        let w = kernel_w(kind, r, dx) * dx;
        if w == 0.0 {
            continue;
        }
        if node < 0 || node >= n as isize {
            clipped += 1;
            continue;
        }
        out.w[k] = w;
    }
    (out, clipped)
}

/// Visits the kernel footprint of a single moved point, calling
/// `visit(flat analysis index, tensor-product weight)` for every in-range
/// node with nonzero weight. Returns the number of clipped contributions.
fn for_each_support_node<const D: usize>(
    analysis: &UniformGrid<D>,
    kind: KernelKind,
    x_ref: [f64; D],
    mut visit: impl FnMut(usize, f64),
) -> usize {
    let dx = analysis.dx();
    let n = analysis.extents();
    let origin = analysis.origin();
    let mut clipped = 0;
    let axes: [AxisWeights; D] = std::array::from_fn(|a| {
        let (w, c) = axis_weights(kind, x_ref[a], n[a], origin[a], dx);
        clipped += c;
        w
    });
    let mut slot = [0usize; D];
    'outer: loop {
        let mut w = 1.0;
        for a in 0..D {
            w *= axes[a].w[slot[a]];
        }
        if w != 0.0 {
            let mut node = [0usize; D];
            for a in 0..D {
                node[a] = (axes[a].start + slot[a] as isize) as usize;
            }
            visit(analysis.flat(node), w);
        }
        for a in 0..D {
            slot[a] += 1;
            if slot[a] < 4 {
                continue 'outer;
            }
            slot[a] = 0;
            if a == D - 1 {
                break 'outer;
            }
        }
    }
    clipped
}

/// Scatters design-node values onto the analysis grid:
/// `v(x) = sum_xi W(x, x_ref(xi)) v_ref(xi) dx^d`.
///
/// `payload` yields the per-design-node values (or `None` to skip a node) and
/// `deposit(flat, weight, payload)` accumulates them into whatever storage
/// layout the caller keeps. Returns the count of clipped contributions.
pub fn map_to_analysis<const D: usize, P>(
    design: &UniformGrid<D>,
    analysis: &UniformGrid<D>,
    frame: &MotionFrame<D>,
    kind: KernelKind,
    mut payload: impl FnMut([usize; D], [f64; D]) -> Option<P>,
    mut deposit: impl FnMut(usize, f64, &P),
) -> usize {
    let mut clipped = 0;
    for idx in design.nodes() {
        let x_ref = frame.position(design.position(idx));
        let p = match payload(idx, x_ref) {
            Some(p) => p,
            None => continue,
        };
        clipped += for_each_support_node(analysis, kind, x_ref, |flat, w| deposit(flat, w, &p));
    }
    clipped
}

/// Interpolates an analysis field at the moved design points:
/// `v_ref(xi) = sum_x W(x, x_ref(xi)) v(x) dx^d`.
///
/// Calls `consume(design node index, interpolated value)` for every design
/// node. `sample(flat)` reads the analysis-side quantity.
pub fn map_to_design<const D: usize>(
    design: &UniformGrid<D>,
    analysis: &UniformGrid<D>,
    frame: &MotionFrame<D>,
    kind: KernelKind,
    mut sample: impl FnMut(usize) -> f64,
    mut consume: impl FnMut(usize, [usize; D], f64),
) -> usize {
    let mut clipped = 0;
    for (flat_design, idx) in design.nodes().enumerate() {
        let x_ref = frame.position(design.position(idx));
        let mut acc = 0.0;
        clipped += for_each_support_node(analysis, kind, x_ref, |flat, w| {
            acc += w * sample(flat);
        });
        consume(flat_design, idx, acc);
    }
    clipped
}

/// Builds the moving-body snapshot at time `t`: the Brinkman coefficient and
/// solid velocity of every design point scattered onto the analysis grid.
pub fn build_snapshot<const D: usize>(
    design: &UniformGrid<D>,
    analysis: &UniformGrid<D>,
    frame: &MotionFrame<D>,
    kind: KernelKind,
    kappa_ref: &[f64],
    t: f64,
    snap: &mut OverlapSnapshot<D>,
) {
    snap.kappa.fill(0.0);
    snap.u_s.fill([0.0; D]);
    snap.time = t;
    let kappa_out = snap.kappa.as_mut_slice();
    let us_out = snap.u_s.as_mut_slice();
    snap.clipped = map_to_analysis(
        design,
        analysis,
        frame,
        kind,
        |idx, _x_ref| {
            let k = kappa_ref[design.flat(idx)];
            let u_ref = frame.velocity(design.position(idx));
            let mut p = [0.0; 4];
            p[0] = k;
            for a in 0..D {
                p[1 + a] = u_ref[a];
            }
            Some(p)
        },
        |flat, w, p: &[f64; 4]| {
            kappa_out[flat] += w * p[0];
            for a in 0..D {
                us_out[flat][a] += w * p[1 + a];
            }
        },
    );
}
