//! Non-local attention over video features.
//!
//! Features are `T x C x H x W`. The full non-local block relates every pair of
//! the `N = T*H*W` positions through one `N x N` relation matrix. The separate
//! non-local block factorizes this into three smaller matrices: spatial
//! (`HW x HW`), channel (`C x C`) and temporal (`T x T`), each built by
//! flattening the remaining axes into the descriptor dimension.
//!
//! Every relation matrix is row-stochastic: row `j` (the position being
//! updated) is a softmax over all source positions `i`. The aggregated
//! features are `E = D * M^T`.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2dLayer, ParamStore};
use crate::tensor::Element;

/// Default ceiling on relation-matrix entries for the full non-local block.
pub const DEFAULT_MAX_RELATION_ENTRIES: u128 = 1 << 26;

/// `softmax_rows(a^T b)` for `a, b` of shape `d x N`.
pub fn relation_matrix<T: Element>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    if a.shape().len() != 2 || a.shape() != b.shape() {
        return Err(Error::invalid(
            "relation_matrix",
            format!("expected two d x N matrices, got {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    a.t()?.matmul(b)?.softmax(1)
}

/// `E = D * M^T`: position `j` receives `sum_i M[j, i] * D[:, i]`.
fn aggregate<T: Element>(d: &Var<T>, m: &Var<T>) -> Result<Var<T>> {
    d.matmul(&m.t()?)
}

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [t, c, h, w] => Ok([t, c, h, w]),
        _ => Err(Error::invalid(op, format!("expected T x C x H x W, got {shape:?}"))),
    }
}

/// Splits `T x ...` into `T` tensors of the remaining shape.
pub fn unstack<T: Element>(x: &Var<T>) -> Result<Vec<Var<T>>> {
    let rest = x.shape()[1..].to_vec();
    (0..x.shape()[0])
        .map(|t| x.narrow(0, t, 1)?.reshape(&rest))
        .collect()
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack<T: Element>(parts: &[Var<T>]) -> Result<Var<T>> {
    let expanded = parts
        .iter()
        .map(|p| {
            let mut s = vec![1];
            s.extend_from_slice(p.shape());
            p.reshape(&s)
        })
        .collect::<Result<Vec<_>>>()?;
    Var::concat(&expanded, 0)
}

/// Applies a weight-shared 1x1 projection to each frame.
fn project<T: Element>(conv: &Conv2dLayer, params: &Bound<T>, frames: &[Var<T>]) -> Result<Var<T>> {
    let out = frames
        .iter()
        .map(|f| conv.forward(params, f))
        .collect::<Result<Vec<_>>>()?;
    stack(&out)
}

/// Which axis a relation matrix ranges over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationAxis {
    /// All `T*H*W` positions at once (the full non-local block).
    Full,
    Spatial,
    Channel,
    Temporal,
}

impl RelationAxis {
    /// `(descriptor length d, positions N)` for features of shape `[t, c, h, w]`.
    pub fn dims(self, [t, c, h, w]: [usize; 4]) -> (usize, usize) {
        match self {
            RelationAxis::Full => (c, t * h * w),
            RelationAxis::Spatial => (t * c, h * w),
            RelationAxis::Channel => (t * h * w, c),
            RelationAxis::Temporal => (c * h * w, t),
        }
    }

    /// Lays `T x C x H x W` features out as a `d x N` matrix.
    fn to_matrix<T: Element>(self, x: &Var<T>) -> Result<Var<T>> {
        let dims = dims4("relation", x.shape())?;
        let (d, n) = self.dims(dims);
        match self {
            RelationAxis::Full => x.permute(&[1, 0, 2, 3])?.reshape(&[d, n]),
            RelationAxis::Spatial => x.reshape(&[d, n]),
            RelationAxis::Channel => x.permute(&[0, 2, 3, 1])?.reshape(&[d, n]),
            RelationAxis::Temporal => x.permute(&[1, 2, 3, 0])?.reshape(&[d, n]),
        }
    }

    /// Inverse of [`RelationAxis::to_matrix`].
    fn from_matrix<T: Element>(self, m: &Var<T>, [t, c, h, w]: [usize; 4]) -> Result<Var<T>> {
        match self {
            RelationAxis::Full => m.reshape(&[c, t, h, w])?.permute(&[1, 0, 2, 3]),
            RelationAxis::Spatial => m.reshape(&[t, c, h, w]),
            RelationAxis::Channel => m.reshape(&[t, h, w, c])?.permute(&[0, 3, 1, 2]),
            RelationAxis::Temporal => m.reshape(&[c, h, w, t])?.permute(&[3, 0, 1, 2]),
        }
    }
}

/// Three 1x1 projections producing the query-like `A`, key-like `B` and
/// value-like `D` maps for one relation axis.
#[derive(Clone, Debug)]
pub struct AttentionBranch {
    pub axis: RelationAxis,
    pub a: Conv2dLayer,
    pub b: Conv2dLayer,
    pub d: Conv2dLayer,
}

/// Output of one branch, with its relation matrix exposed for inspection.
pub struct BranchOutput<T: Element> {
    pub relation: Var<T>,
    pub aggregated: Var<T>,
}

impl AttentionBranch {
    fn new<T: Element>(
        store: &mut ParamStore<T>,
        name: &str,
        axis: RelationAxis,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut conv = |part: &str| Conv2dLayer::new(store, &format!("{name}.{part}"), channels, channels, 1, 1, rng);
        Self {
            axis,
            a: conv("a"),
            b: conv("b"),
            d: conv("d"),
        }
    }

    fn forward<T: Element>(&self, params: &Bound<T>, frames: &[Var<T>], dims: [usize; 4]) -> Result<BranchOutput<T>> {
        let a = self.axis.to_matrix(&project(&self.a, params, frames)?)?;
        let b = self.axis.to_matrix(&project(&self.b, params, frames)?)?;
        let d = self.axis.to_matrix(&project(&self.d, params, frames)?)?;
        let relation = relation_matrix(&a, &b)?;
        let aggregated = self.axis.from_matrix(&aggregate(&d, &relation)?, dims)?;
        Ok(BranchOutput { relation, aggregated })
    }

    pub fn param_count(&self) -> usize {
        self.a.param_count() + self.b.param_count() + self.d.param_count()
    }

    /// Multiply-accumulates: three projections over all frames plus the
    /// relation product and the aggregation product.
    pub fn macs(&self, dims: [usize; 4]) -> u64 {
        let [t, _, h, w] = dims;
        let (d, n) = self.axis.dims(dims);
        let proj = t as u64 * (self.a.macs(h, w) + self.b.macs(h, w) + self.d.macs(h, w));
        proj + 2 * (n as u64 * n as u64 * d as u64)
    }

    /// Softmax work, one operation per relation-matrix entry.
    pub fn elementwise_ops(&self, dims: [usize; 4]) -> u64 {
        let (_, n) = self.axis.dims(dims);
        n as u64 * n as u64
    }
}

/// Full non-local block: one relation matrix over all `T*H*W` positions,
/// residual output `F + E`.
#[derive(Clone, Debug)]
pub struct NonLocalBlock {
    pub branch: AttentionBranch,
    pub max_relation_entries: u128,
}

impl NonLocalBlock {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            branch: AttentionBranch::new(store, name, RelationAxis::Full, channels, rng),
            max_relation_entries: DEFAULT_MAX_RELATION_ENTRIES,
        }
    }

    pub fn forward<T: Element>(&self, params: &Bound<T>, f: &Var<T>) -> Result<Var<T>> {
        Ok(self.forward_traced(params, f)?.0)
    }

    /// Output together with the `N x N` relation matrix.
    pub fn forward_traced<T: Element>(&self, params: &Bound<T>, f: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let dims = dims4("nonlocal", f.shape())?;
        let (_, n) = RelationAxis::Full.dims(dims);
        let entries = n as u128 * n as u128;
        if entries > self.max_relation_entries {
            return Err(Error::MemoryCap {
                entries,
                cap: self.max_relation_entries,
            });
        }
        let frames = unstack(f)?;
        let out = self.branch.forward(params, &frames, dims)?;
        Ok((f.add(&out.aggregated)?, out.relation))
    }

    pub fn param_count(&self) -> usize {
        self.branch.param_count()
    }
}

/// Relation matrices of one separate non-local pass.
pub struct SeparateTrace<T: Element> {
    pub spatial: Var<T>,
    pub channel: Var<T>,
    pub temporal: Var<T>,
}

/// Separate non-local block: spatial, channel and temporal attention,
/// combined as `F + E1 + E2 + E3`.
#[derive(Clone, Debug)]
pub struct SeparateNonLocalBlock {
    pub spatial: AttentionBranch,
    pub channel: AttentionBranch,
    pub temporal: AttentionBranch,
}

impl SeparateNonLocalBlock {
    pub fn new<T: Element>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            spatial: AttentionBranch::new(store, &format!("{name}.spatial"), RelationAxis::Spatial, channels, rng),
            channel: AttentionBranch::new(store, &format!("{name}.channel"), RelationAxis::Channel, channels, rng),
            temporal: AttentionBranch::new(store, &format!("{name}.temporal"), RelationAxis::Temporal, channels, rng),
        }
    }

    pub fn forward<T: Element>(&self, params: &Bound<T>, f: &Var<T>) -> Result<Var<T>> {
        Ok(self.forward_traced(params, f)?.0)
    }

    pub fn forward_traced<T: Element>(&self, params: &Bound<T>, f: &Var<T>) -> Result<(Var<T>, SeparateTrace<T>)> {
        let dims = dims4("separate_nonlocal", f.shape())?;
        let frames = unstack(f)?;
        let e1 = self.spatial.forward(params, &frames, dims)?;
        let e2 = self.channel.forward(params, &frames, dims)?;
        let e3 = self.temporal.forward(params, &frames, dims)?;
        let out = f
            .add(&e1.aggregated)?
            .add(&e2.aggregated)?
            .add(&e3.aggregated)?;
        Ok((
            out,
            SeparateTrace {
                spatial: e1.relation,
                channel: e2.relation,
                temporal: e3.relation,
            },
        ))
    }

    pub fn branches(&self) -> [&AttentionBranch; 3] {
        [&self.spatial, &self.channel, &self.temporal]
    }

    pub fn param_count(&self) -> usize {
        self.branches().iter().map(|b| b.param_count()).sum()
    }

    pub fn macs(&self, dims: [usize; 4]) -> u64 {
        self.branches().iter().map(|b| b.macs(dims)).sum()
    }

    /// Softmax entries plus the three residual additions.
    pub fn elementwise_ops(&self, dims: [usize; 4]) -> u64 {
        let total: usize = dims.iter().product();
        self.branches().iter().map(|b| b.elementwise_ops(dims)).sum::<u64>() + 3 * total as u64
    }
}

/// Relation-matrix sizes of the full and separate formulations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub full_entries: u128,
    pub separate_entries: u128,
    pub ratio: f64,
}

/// Compares `(T*H*W)^2` against `(H*W)^2 + C^2 + T^2`.
pub fn attention_memory_footprint(t: u64, h: u64, w: u64, c: u64) -> Result<Footprint> {
    if t == 0 || h == 0 || w == 0 || c == 0 {
        return Err(Error::invalid("footprint", "all dimensions must be positive"));
    }
    let overflow = || Error::invalid("footprint", "dimensions overflow 128-bit arithmetic");
    let sq = |v: u128| v.checked_mul(v).ok_or_else(overflow);
    let (t, h, w, c) = (t as u128, h as u128, w as u128, c as u128);
    let hw = h.checked_mul(w).ok_or_else(overflow)?;
    let full = sq(hw.checked_mul(t).ok_or_else(overflow)?)?;
    let separate = sq(hw)?
        .checked_add(sq(c)?)
        .and_then(|s| s.checked_add(t * t))
        .ok_or_else(overflow)?;
    Ok(Footprint {
        full_entries: full,
        separate_entries: separate,
        ratio: full as f64 / separate as f64,
    })
}
