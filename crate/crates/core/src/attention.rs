//! Layout rearrangements behind view-integrated attention, with a reference
//! scaled dot-product attention core.
//!
//! A latent has axes `(B, V, F, C, H, W)`. Each [`AttentionLayout`] groups
//! those axes into `(batch, tokens, C)`:
//!
//! | layout           | batch axes   | token axes  |
//! |------------------|--------------|-------------|
//! | `SpatialVanilla` | `B V F`      | `H W`       |
//! | `Temporal1d`     | `B V H W`    | `F`         |
//! | `CrossFrame`     | `B V`        | `F H W`     |
//! | `CrossView`      | `B F`        | `V H W`     |
//!
//! All four share one attention core; only the reindexing differs. The
//! channel width never changes, so one set of projection weights is valid for
//! every layout and any number of views.

use nalgebra::DMatrix;

use crate::camera::PluckerGrid;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor_io::CavtTensor;

const AXIS_B: usize = 0;
const AXIS_V: usize = 1;
const AXIS_F: usize = 2;
const AXIS_C: usize = 3;
const AXIS_H: usize = 4;
const AXIS_W: usize = 5;

/// Dense `(B, V, F, C, H, W)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor<T: Real> {
    dims: [usize; 6],
    data: Vec<T>,
}

impl<T: Real> LatentTensor<T> {
    pub fn new(dims: [usize; 6], data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!("latent dims {dims:?} must all be >= 1")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("dims {dims:?} need {n} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::ShapeMismatch("latent contains non-finite values".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 6], mut f: impl FnMut([usize; 6]) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for_each_index(dims, |idx| data.push(f(idx)));
        Self::new(dims, data)
    }

    pub fn dims(&self) -> [usize; 6] {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, idx: [usize; 6]) -> T {
        self.data[offset(self.dims, idx)]
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    pub fn to_cavt(&self) -> CavtTensor {
        CavtTensor::from_real(self.dims.to_vec(), &self.data).expect("shape already validated")
    }

    pub fn from_cavt(t: &CavtTensor) -> Result<Self> {
        let dims: [usize; 6] = t
            .dims()
            .try_into()
            .map_err(|_| Error::ShapeMismatch(format!("latent needs rank 6, file has rank {}", t.dims().len())))?;
        Self::new(dims, t.to_real())
    }
}

/// `(batch, tokens, channels)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor<T: Real> {
    pub batch: usize,
    pub tokens: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> TokenTensor<T> {
    pub fn new(batch: usize, tokens: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if batch * tokens * channels != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "token shape ({batch}, {tokens}, {channels}) needs {} values, got {}",
                batch * tokens * channels,
                data.len()
            )));
        }
        Ok(Self { batch, tokens, channels, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.tokens, self.channels)
    }

    fn batch_slice(&self, b: usize) -> &[T] {
        let n = self.tokens * self.channels;
        &self.data[b * n..(b + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionLayout {
    SpatialVanilla,
    Temporal1d,
    CrossFrame,
    CrossView,
}

impl AttentionLayout {
    pub const ALL: [AttentionLayout; 4] = [Self::SpatialVanilla, Self::Temporal1d, Self::CrossFrame, Self::CrossView];

    fn batch_axes(self) -> &'static [usize] {
        match self {
            Self::SpatialVanilla => &[AXIS_B, AXIS_V, AXIS_F],
            Self::Temporal1d => &[AXIS_B, AXIS_V, AXIS_H, AXIS_W],
            Self::CrossFrame => &[AXIS_B, AXIS_V],
            Self::CrossView => &[AXIS_B, AXIS_F],
        }
    }

    fn token_axes(self) -> &'static [usize] {
        match self {
            Self::SpatialVanilla => &[AXIS_H, AXIS_W],
            Self::Temporal1d => &[AXIS_F],
            Self::CrossFrame => &[AXIS_F, AXIS_H, AXIS_W],
            Self::CrossView => &[AXIS_V, AXIS_H, AXIS_W],
        }
    }

    /// Axis order of the rearranged tensor: batch axes, token axes, then C.
    fn order(self) -> [usize; 6] {
        let mut order = [0; 6];
        for (slot, &a) in order.iter_mut().zip(self.batch_axes().iter().chain(self.token_axes()).chain(&[AXIS_C])) {
            *slot = a;
        }
        order
    }

    /// `(batch, tokens, C)` for a latent of shape `dims`.
    pub fn token_shape(self, dims: [usize; 6]) -> (usize, usize, usize) {
        let prod = |axes: &[usize]| axes.iter().map(|&a| dims[a]).product::<usize>();
        (prod(self.batch_axes()), prod(self.token_axes()), dims[AXIS_C])
    }
}

fn offset(dims: [usize; 6], idx: [usize; 6]) -> usize {
    idx.iter().zip(&dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

fn for_each_index(dims: [usize; 6], mut f: impl FnMut([usize; 6])) {
    let total: usize = dims.iter().product();
    let mut idx = [0usize; 6];
    for _ in 0..total {
        f(idx);
        for ax in (0..6).rev() {
            idx[ax] += 1;
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

/// Visits latent offsets in the order of the permuted layout.
fn permuted_offsets(dims: [usize; 6], order: [usize; 6], mut f: impl FnMut(usize, usize)) {
    let permuted_dims = order.map(|a| dims[a]);
    let mut strides = [1usize; 6];
    for a in (0..5).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    let mut out = 0;
    for_each_index(permuted_dims, |pidx| {
        let src = pidx.iter().zip(&order).map(|(&i, &a)| i * strides[a]).sum();
        f(out, src);
        out += 1;
    });
}

/// Groups the latent axes into `(batch, tokens, C)` according to `layout`.
pub fn rearrange<T: Real>(t: &LatentTensor<T>, layout: AttentionLayout) -> TokenTensor<T> {
    let (batch, tokens, channels) = layout.token_shape(t.dims);
    let mut data = Vec::with_capacity(t.data.len());
    permuted_offsets(t.dims, layout.order(), |_, src| data.push(t.data[src]));
    TokenTensor { batch, tokens, channels, data }
}

/// Exact inverse of [`rearrange`] for the same layout and dims.
pub fn rearrange_inverse<T: Real>(
    tokens: &TokenTensor<T>,
    layout: AttentionLayout,
    dims: [usize; 6],
) -> Result<LatentTensor<T>> {
    let expect = layout.token_shape(dims);
    if tokens.shape() != expect || tokens.data.len() != dims.iter().product::<usize>() {
        return Err(Error::ShapeMismatch(format!(
            "tokens {:?} do not match {layout:?} of dims {dims:?} (expected {expect:?})",
            tokens.shape()
        )));
    }
    let mut data = vec![T::zero(); tokens.data.len()];
    permuted_offsets(dims, layout.order(), |out, src| data[src] = tokens.data[out]);
    LatentTensor::new(dims, data)
}

/// Projection weights shared by every layout. Tokens are row vectors:
/// `q = x·Wq`, and heads split `C` into contiguous blocks of `C / heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T: Real> {
    pub wq: DMatrix<T>,
    pub wk: DMatrix<T>,
    pub wv: DMatrix<T>,
    pub wo: DMatrix<T>,
    heads: usize,
}

impl<T: Real> AttentionWeights<T> {
    pub fn new(wq: DMatrix<T>, wk: DMatrix<T>, wv: DMatrix<T>, wo: DMatrix<T>, heads: usize) -> Result<Self> {
        let c = wq.nrows();
        for (name, m) in [("wq", &wq), ("wk", &wk), ("wv", &wv), ("wo", &wo)] {
            if m.nrows() != c || m.ncols() != c {
                return Err(Error::ShapeMismatch(format!("{name} is {}x{}, expected {c}x{c}", m.nrows(), m.ncols())));
            }
            if m.iter().any(|v| !v.is_finite_value()) {
                return Err(Error::ShapeMismatch(format!("{name} has non-finite entries")));
            }
        }
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(Error::ShapeMismatch(format!("head count {heads} must divide channel count {c}")));
        }
        Ok(Self { wq, wk, wv, wo, heads })
    }

    pub fn identity(channels: usize, heads: usize) -> Result<Self> {
        let i = DMatrix::identity(channels, channels);
        Self::new(i.clone(), i.clone(), i.clone(), i, heads)
    }

    pub fn channels(&self) -> usize {
        self.wq.nrows()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }
}

/// In-place numerically stable softmax of one row.
fn softmax_row<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().reduce(T::max).unwrap_or_else(T::zero);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Multi-head scaled dot-product attention applied independently per batch item.
pub fn attention<T: Real>(tokens: &TokenTensor<T>, w: &AttentionWeights<T>) -> Result<TokenTensor<T>> {
    attention_probed(tokens, w, |_| {})
}

/// [`attention`] that hands every softmax row to `probe` after normalization.
pub fn attention_probed<T: Real>(
    tokens: &TokenTensor<T>,
    w: &AttentionWeights<T>,
    mut probe: impl FnMut(&[T]),
) -> Result<TokenTensor<T>> {
    let (batch, n, c) = tokens.shape();
    if c != w.channels() {
        return Err(Error::ShapeMismatch(format!("tokens have {c} channels, weights expect {}", w.channels())));
    }
    let dh = c / w.heads;
    let scale = T::one() / T::from_count(dh).sqrt();
    let mut out = Vec::with_capacity(tokens.data.len());
    let mut logits = vec![T::zero(); n];
    for b in 0..batch {
        let x = DMatrix::from_row_slice(n, c, tokens.batch_slice(b));
        let q = &x * &w.wq;
        let k = &x * &w.wk;
        let v = &x * &w.wv;
        let mut heads_out = DMatrix::<T>::zeros(n, c);
        for h in 0..w.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                for (j, l) in logits.iter_mut().enumerate() {
                    let mut dot = T::zero();
                    for col in cols.clone() {
                        dot += q[(i, col)] * k[(j, col)];
                    }
                    *l = dot * scale;
                }
                softmax_row(&mut logits);
                probe(&logits);
                for col in cols.clone() {
                    let mut acc = T::zero();
                    for (j, &p) in logits.iter().enumerate() {
                        acc += p * v[(j, col)];
                    }
                    heads_out[(i, col)] = acc;
                }
            }
        }
        let o = heads_out * &w.wo;
        for i in 0..n {
            out.extend(o.row(i).iter().copied());
        }
    }
    TokenTensor::new(batch, n, c, out)
}

/// Rearrange → attention → inverse rearrange. Output dims equal input dims.
pub fn view_integrated_block<T: Real>(
    t: &LatentTensor<T>,
    layout: AttentionLayout,
    w: &AttentionWeights<T>,
) -> Result<LatentTensor<T>> {
    let tokens = rearrange(t, layout);
    let attended = attention(&tokens, w)?;
    rearrange_inverse(&attended, layout, t.dims)
}

/// Appends the six Plücker channels to every `(view, frame)` slice of the
/// latent. `grids[v * F + f]` conditions view `v`, frame `f`, shared across
/// the batch axis.
pub fn concat_plucker<T: Real>(t: &LatentTensor<T>, grids: &[PluckerGrid<T>]) -> Result<LatentTensor<T>> {
    let [b, v, f, c, h, w] = t.dims;
    if grids.len() != v * f {
        return Err(Error::ShapeMismatch(format!("need {} grids (V·F), got {}", v * f, grids.len())));
    }
    if let Some(g) = grids.iter().find(|g| g.height() != h || g.width() != w) {
        return Err(Error::ShapeMismatch(format!("grid {}x{} does not match latent {h}x{w}", g.height(), g.width())));
    }
    let dims = [b, v, f, c + 6, h, w];
    LatentTensor::from_fn(dims, |[bi, vi, fi, ci, hi, wi]| {
        if ci < c {
            t.get([bi, vi, fi, ci, hi, wi])
        } else {
            grids[vi * f + fi].at(hi, wi)[ci - c]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{plucker_grid, CameraIntrinsics, CameraPose, PluckerOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iota(dims: [usize; 6]) -> LatentTensor<f64> {
        let n = dims.iter().product();
        LatentTensor::new(dims, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    fn random_weights(c: usize, heads: usize, rng: &mut ChaCha8Rng) -> AttentionWeights<f64> {
        let mut m = || DMatrix::from_fn(c, c, |_, _| rng.random_range(-1.0..1.0));
        AttentionWeights::new(m(), m(), m(), m(), heads).unwrap()
    }

    #[test]
    fn token_shapes_follow_layout_table() {
        let t = iota([1, 2, 3, 4, 5, 6]);
        assert_eq!(rearrange(&t, AttentionLayout::CrossView).shape(), (3, 60, 4));
        assert_eq!(rearrange(&t, AttentionLayout::CrossFrame).shape(), (2, 90, 4));
        assert_eq!(rearrange(&t, AttentionLayout::Temporal1d).shape(), (60, 3, 4));
        assert_eq!(rearrange(&t, AttentionLayout::SpatialVanilla).shape(), (6, 30, 4));
    }

    #[test]
    fn cross_view_groups_views_at_same_frame() {
        // dims (B=1, V=2, F=2, C=1, H=1, W=2)
        let t = iota([1, 2, 2, 1, 1, 2]);
        let tok = rearrange(&t, AttentionLayout::CrossView);
        // batch item f=1 holds tokens (v=0,w=0),(v=0,w=1),(v=1,w=0),(v=1,w=1)
        let expect: Vec<f64> = [[0, 1, 0, 0, 0, 0], [0, 1, 0, 0, 0, 1], [0, 1, 1, 0, 0, 0], [0, 1, 1, 0, 0, 1]]
            .iter()
            .map(|&[b, f, v, c, h, w]| t.get([b, v, f, c, h, w]))
            .collect();
        assert_eq!(&tok.data[4..8], expect.as_slice());
    }

    #[test]
    fn round_trips_are_bit_identical() {
        for dims in [[1, 2, 3, 4, 5, 6], [2, 1, 1, 8, 1, 1]] {
            let t = iota(dims);
            for layout in AttentionLayout::ALL {
                let back = rearrange_inverse(&rearrange(&t, layout), layout, dims).unwrap();
                assert_eq!(back, t);
            }
        }
    }

    #[test]
    fn inverse_rejects_wrong_dims() {
        let t = iota([1, 2, 3, 4, 5, 6]);
        let tok = rearrange(&t, AttentionLayout::CrossView);
        assert!(matches!(
            rearrange_inverse(&tok, AttentionLayout::CrossView, [1, 3, 2, 4, 5, 6]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(rearrange_inverse(&tok, AttentionLayout::CrossFrame, [1, 2, 3, 4, 5, 6]).is_err());
    }

    #[test]
    fn single_token_passes_through() {
        let tok = TokenTensor::new(1, 1, 4, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let out = attention(&tok, &AttentionWeights::identity(4, 2).unwrap()).unwrap();
        assert_eq!(out.data, tok.data);
    }

    #[test]
    fn identical_keys_average_values() {
        // Identical tokens give identical keys; use Wk = 0 so keys match while values differ.
        let c = 2;
        let i = DMatrix::<f64>::identity(c, c);
        let w = AttentionWeights::new(i.clone(), DMatrix::zeros(c, c), i.clone(), i, 1).unwrap();
        let tok = TokenTensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let out = attention(&tok, &w).unwrap();
        for v in out.data.chunks(2) {
            assert!((v[0] - 2.0).abs() < 1e-15 && (v[1] - 4.0).abs() < 1e-15);
        }
    }

    /// Scalar-loop oracle written without matrices.
    fn naive_attention(x: &[[f64; 4]; 3], w: &AttentionWeights<f64>) -> Vec<[f64; 4]> {
        let proj = |m: &DMatrix<f64>, v: &[f64; 4]| {
            let mut o = [0.0; 4];
            for (j, oj) in o.iter_mut().enumerate() {
                for (i, vi) in v.iter().enumerate() {
                    *oj += vi * m[(i, j)];
                }
            }
            o
        };
        let q: Vec<_> = x.iter().map(|v| proj(&w.wq, v)).collect();
        let k: Vec<_> = x.iter().map(|v| proj(&w.wk, v)).collect();
        let v: Vec<_> = x.iter().map(|t| proj(&w.wv, t)).collect();
        let mut out = Vec::new();
        for qi in &q {
            let logits: Vec<f64> =
                k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / 2.0).collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            let mut mixed = [0.0; 4];
            for (l, vj) in logits.iter().zip(&v) {
                for (m, val) in mixed.iter_mut().zip(vj) {
                    *m += l.exp() / z * val;
                }
            }
            out.push(proj(&w.wo, &mixed));
        }
        out
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_weights(4, 1, &mut rng);
        let mut x = [[0.0; 4]; 3];
        for row in x.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let tok = TokenTensor::new(1, 3, 4, x.iter().flatten().copied().collect()).unwrap();
        let out = attention(&tok, &w).unwrap();
        let oracle = naive_attention(&x, &w);
        for (a, b) in out.data.iter().zip(oracle.iter().flatten()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_weights(6, 3, &mut rng);
        let data = (0..2 * 5 * 6).map(|_| rng.random_range(-4.0..4.0)).collect();
        let tok = TokenTensor::new(2, 5, 6, data).unwrap();
        let mut rows = 0;
        attention_probed(&tok, &w, |r| {
            rows += 1;
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        })
        .unwrap();
        assert_eq!(rows, 2 * 3 * 5);
    }

    #[test]
    fn attention_rejects_channel_mismatch_and_bad_heads() {
        assert!(AttentionWeights::<f64>::identity(4, 3).is_err());
        let tok = TokenTensor::new(1, 1, 3, vec![0.0; 3]).unwrap();
        assert!(attention(&tok, &AttentionWeights::identity(4, 1).unwrap()).is_err());
    }

    #[test]
    fn block_preserves_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_weights(4, 2, &mut rng);
        let t = LatentTensor::from_fn([1, 2, 2, 4, 2, 3], |_| rng.random_range(-1.0..1.0)).unwrap();
        for layout in AttentionLayout::ALL {
            assert_eq!(view_integrated_block(&t, layout, &w).unwrap().dims(), t.dims());
        }
    }

    #[test]
    fn concat_plucker_appends_six_channels() {
        let t = iota([1, 1, 2, 4, 2, 3]);
        let grids = vec![PluckerGrid::zeros(2, 3); 2];
        let out = concat_plucker(&t, &grids).unwrap();
        assert_eq!(out.dims(), [1, 1, 2, 10, 2, 3]);
        for_each_index(out.dims(), |[b, v, f, c, h, w]| {
            let val = out.get([b, v, f, c, h, w]);
            if c < 4 {
                assert_eq!(val, t.get([b, v, f, c, h, w]));
            } else {
                assert_eq!(val, 0.0);
            }
        });

        let k = CameraIntrinsics::new(3.0, 3.0, 1.5, 1.0, 3, 2).unwrap();
        let pose =
            CameraPose::from_center(nalgebra::Matrix3::identity(), nalgebra::Vector3::new(1.0, 2.0, 0.0)).unwrap();
        let g = plucker_grid(&k, &pose, 2, 3, PluckerOptions::default()).unwrap();
        let out = concat_plucker(&t, &[g.clone(), g.clone()]).unwrap();
        assert_eq!(out.get([0, 0, 1, 4 + 5, 1, 2]), g.at(1, 2)[5]);

        let wrong = vec![PluckerGrid::zeros(3, 3); 2];
        assert!(matches!(concat_plucker(&t, &wrong), Err(Error::ShapeMismatch(_))));
        assert!(concat_plucker(&t, &grids[..1]).is_err());
    }

    #[test]
    fn latent_cavt_round_trip() {
        let t = iota([1, 1, 1, 2, 2, 2]);
        assert_eq!(LatentTensor::from_cavt(&t.to_cavt()).unwrap(), t);
        let bad = CavtTensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(LatentTensor::<f64>::from_cavt(&bad).is_err());
    }
}
