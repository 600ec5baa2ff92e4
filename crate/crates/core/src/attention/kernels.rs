use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Query/key/value matrices for one attention call.
///
/// Rows are tokens; columns hold `heads` consecutive slices of width
/// `head_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    heads: usize,
}

impl AttentionTensors {
    pub fn new(q: Array2<f64>, k: Array2<f64>, v: Array2<f64>, heads: usize) -> Result<Self> {
        let width = q.ncols();
        if heads == 0 || width == 0 || !width.is_multiple_of(heads) {
            return Err(Error::shape(format!(
                "query width {width} is not a positive multiple of {heads} heads"
            )));
        }
        if k.ncols() != width || v.ncols() != width {
            return Err(Error::shape(format!(
                "q/k/v widths differ: {} / {} / {}",
                width,
                k.ncols(),
                v.ncols()
            )));
        }
        if k.nrows() != v.nrows() {
            return Err(Error::shape(format!(
                "key and value token counts differ: {} vs {}",
                k.nrows(),
                v.nrows()
            )));
        }
        Ok(Self { q, k, v, heads })
    }

    pub fn single_head(q: Array2<f64>, k: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        Self::new(q, k, v, 1)
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn k(&self) -> &Array2<f64> {
        &self.k
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.q.ncols() / self.heads
    }

    pub fn kv(&self) -> KeyValues {
        KeyValues {
            k: self.k.clone(),
            v: self.v.clone(),
        }
    }
}

/// A key/value pair of equal token count.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyValues {
    pub k: Array2<f64>,
    pub v: Array2<f64>,
}

impl KeyValues {
    pub fn new(k: Array2<f64>, v: Array2<f64>) -> Result<Self> {
        if k.dim() != v.dim() {
            return Err(Error::shape(format!(
                "key {:?} and value {:?} shapes differ",
                k.dim(),
                v.dim()
            )));
        }
        Ok(Self { k, v })
    }

    pub fn empty(width: usize) -> Self {
        Self {
            k: Array2::zeros((0, width)),
            v: Array2::zeros((0, width)),
        }
    }

    pub fn tokens(&self) -> usize {
        self.k.nrows()
    }
}

/// Which key/value sets a modified attention uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Own keys/values concatenated with the other stream's.
    #[default]
    Both,
    /// Only the other stream's keys/values.
    OtherOnly,
    /// Only the stream's own keys/values (plain self-attention).
    SelfOnly,
}

/// Softmax attention of `q` over the row-concatenation of `sets`.
///
/// Sets are copied head by head into one buffer in order, so an empty
/// trailing set leaves every floating-point operation unchanged. Softmax
/// subtracts the per-row maximum.
fn attend_over(
    q: ArrayView2<f64>,
    sets: &[(ArrayView2<f64>, ArrayView2<f64>)],
    heads: usize,
) -> Result<Array2<f64>> {
    let width = q.ncols();
    let d = width / heads;
    let total: usize = sets.iter().map(|(k, _)| k.nrows()).sum();
    if total == 0 {
        return Err(Error::EmptyKeySet);
    }
    for (k, v) in sets {
        if k.ncols() != width || v.ncols() != width || k.nrows() != v.nrows() {
            return Err(Error::shape(format!(
                "key/value set {:?}/{:?} incompatible with query width {width}",
                k.dim(),
                v.dim()
            )));
        }
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), width));
    let mut logits = vec![0.0; total];
    let mut keys: Vec<f64> = Vec::with_capacity(total * d);
    let mut values: Vec<f64> = Vec::with_capacity(total * d);
    let mut acc = vec![0.0; d];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        // contiguous per-head copies, concatenated in set order
        keys.clear();
        values.clear();
        for (k, v) in sets {
            keys.extend(k.slice(s![.., cols.clone()]).iter());
            values.extend(v.slice(s![.., cols.clone()]).iter());
        }
        let qh = q.slice(s![.., cols.clone()]);
        for (i, qrow) in qh.axis_iter(Axis(0)).enumerate() {
            let qrow: Vec<f64> = qrow.to_vec();
            let mut max = f64::NEG_INFINITY;
            for (l, krow) in logits.iter_mut().zip(keys.chunks_exact(d)) {
                let dot: f64 = qrow.iter().zip(krow).map(|(a, b)| a * b).sum();
                *l = dot * scale;
                max = max.max(*l);
            }
            let mut denom = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                denom += *l;
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (wgt, vrow) in logits.iter().zip(values.chunks_exact(d)) {
                for (a, x) in acc.iter_mut().zip(vrow) {
                    *a += wgt * x;
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out[[i, h * d + c]] = a / denom;
            }
        }
    }
    Ok(out)
}

/// Plain scaled dot-product self-attention, `Softmax(QKᵀ/√d)V`.
pub fn self_attention(t: &AttentionTensors) -> Result<Array2<f64>> {
    attend_over(t.q.view(), &[(t.k.view(), t.v.view())], t.heads)
}

fn check_width(t: &AttentionTensors, extra: &KeyValues) -> Result<()> {
    if extra.k.ncols() != t.q.ncols()
        || extra.v.ncols() != t.q.ncols()
        || extra.k.nrows() != extra.v.nrows()
    {
        return Err(Error::shape(format!(
            "extra keys/values {:?}/{:?} do not match query width {}",
            extra.k.dim(),
            extra.v.dim(),
            t.q.ncols()
        )));
    }
    Ok(())
}

fn own_plus_other(
    t: &AttentionTensors,
    other: &KeyValues,
    ablation: Ablation,
) -> Result<Array2<f64>> {
    check_width(t, other)?;
    match ablation {
        Ablation::SelfOnly => self_attention(t),
        Ablation::OtherOnly => {
            attend_over(t.q.view(), &[(other.k.view(), other.v.view())], t.heads)
        }
        Ablation::Both => attend_over(
            t.q.view(),
            &[(t.k.view(), t.v.view()), (other.k.view(), other.v.view())],
            t.heads,
        ),
    }
}

/// Geometry-stream queries over geometry keys/values concatenated with the
/// target stream's.
pub fn texture_aligning_attention(
    geo: &AttentionTensors,
    target: &KeyValues,
    ablation: Ablation,
) -> Result<Array2<f64>> {
    own_plus_other(geo, target, ablation)
}

/// Output-stream queries over output keys/values concatenated with the
/// mask-selected source keys/values.
pub fn geometry_preserving_attention(
    out: &AttentionTensors,
    source_masked: &KeyValues,
    ablation: Ablation,
) -> Result<Array2<f64>> {
    own_plus_other(out, source_masked, ablation)
}

/// Keeps the rows whose mask entry is set, in their original order.
pub fn select_masked_kv(kv: &KeyValues, mask_flat: &[bool]) -> Result<KeyValues> {
    if kv.tokens() != mask_flat.len() {
        return Err(Error::shape(format!(
            "{} key/value tokens but mask has {} entries",
            kv.tokens(),
            mask_flat.len()
        )));
    }
    let rows: Vec<usize> = mask_flat
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    Ok(KeyValues {
        k: kv.k.select(Axis(0), &rows),
        v: kv.v.select(Axis(0), &rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, concatenate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    // Two-loop oracle, single head.
    fn naive(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
        let d = q.ncols() as f64;
        let mut out = Array2::zeros((q.nrows(), v.ncols()));
        for i in 0..q.nrows() {
            let logits: Vec<f64> = (0..k.nrows())
                .map(|j| (0..q.ncols()).map(|c| q[[i, c]] * k[[j, c]]).sum::<f64>() / d.sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..v.ncols() {
                out[[i, c]] = (0..k.nrows()).map(|j| e[j] / z * v[[j, c]]).sum();
            }
        }
        out
    }

    fn max_abs(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_token_returns_value() {
        let t = AttentionTensors::single_head(
            array![[3.0, -1.0]],
            array![[0.2, 7.0]],
            array![[0.5, 0.25]],
        )
        .unwrap();
        assert_eq!(self_attention(&t).unwrap(), array![[0.5, 0.25]]);
    }

    #[test]
    fn orthogonal_query_averages_values() {
        let q = array![[0.0, 100.0]];
        let k = array![[5.0, 0.0], [-3.0, 0.0], [9.0, 0.0]];
        let v = array![[1.0, 0.0], [2.0, 3.0], [6.0, -3.0]];
        let out = self_attention(&AttentionTensors::single_head(q, k, v).unwrap()).unwrap();
        assert!((out[[0, 0]] - 3.0).abs() < 1e-12);
        assert!(out[[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn random_matches_two_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (q, k, v) = (
            rand_mat(&mut rng, 3, 4),
            rand_mat(&mut rng, 5, 4),
            rand_mat(&mut rng, 5, 4),
        );
        let out = self_attention(
            &AttentionTensors::single_head(q.clone(), k.clone(), v.clone()).unwrap(),
        )
        .unwrap();
        assert!(max_abs(&out, &naive(&q, &k, &v)) < 1e-6);
    }

    #[test]
    fn multi_head_is_per_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (q, k, v) = (
            rand_mat(&mut rng, 4, 6),
            rand_mat(&mut rng, 7, 6),
            rand_mat(&mut rng, 7, 6),
        );
        let out =
            self_attention(&AttentionTensors::new(q.clone(), k.clone(), v.clone(), 2).unwrap())
                .unwrap();
        for h in 0..2 {
            let sl = s![.., h * 3..(h + 1) * 3];
            let oracle = naive(
                &q.slice(sl).to_owned(),
                &k.slice(sl).to_owned(),
                &v.slice(sl).to_owned(),
            );
            assert!(max_abs(&out.slice(sl).to_owned(), &oracle) < 1e-12);
        }
    }

    #[test]
    fn ta_reductions_are_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = AttentionTensors::single_head(
            rand_mat(&mut rng, 4, 3),
            rand_mat(&mut rng, 6, 3),
            rand_mat(&mut rng, 6, 3),
        )
        .unwrap();
        let plain = self_attention(&t).unwrap();
        let other = KeyValues::new(rand_mat(&mut rng, 5, 3), rand_mat(&mut rng, 5, 3)).unwrap();
        assert_eq!(
            texture_aligning_attention(&t, &other, Ablation::SelfOnly).unwrap(),
            plain
        );
        assert_eq!(
            texture_aligning_attention(&t, &KeyValues::empty(3), Ablation::Both).unwrap(),
            plain
        );
        assert_eq!(
            geometry_preserving_attention(&t, &KeyValues::empty(3), Ablation::Both).unwrap(),
            plain
        );
    }

    #[test]
    fn both_matches_concatenation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = AttentionTensors::single_head(
            rand_mat(&mut rng, 4, 3),
            rand_mat(&mut rng, 6, 3),
            rand_mat(&mut rng, 6, 3),
        )
        .unwrap();
        let other = KeyValues::new(rand_mat(&mut rng, 2, 3), rand_mat(&mut rng, 2, 3)).unwrap();
        let kcat = concatenate![Axis(0), t.k().clone(), other.k.clone()];
        let vcat = concatenate![Axis(0), t.v().clone(), other.v.clone()];
        let out = texture_aligning_attention(&t, &other, Ablation::Both).unwrap();
        assert!(max_abs(&out, &naive(t.q(), &kcat, &vcat)) < 1e-6);
        let only = geometry_preserving_attention(&t, &other, Ablation::OtherOnly).unwrap();
        assert!(max_abs(&only, &naive(t.q(), &other.k, &other.v)) < 1e-6);
    }

    #[test]
    fn other_only_with_empty_set_errors() {
        let t = AttentionTensors::single_head(array![[1.0]], array![[1.0]], array![[1.0]]).unwrap();
        let r = geometry_preserving_attention(&t, &KeyValues::empty(1), Ablation::OtherOnly);
        assert!(matches!(r, Err(Error::EmptyKeySet)));
    }

    #[test]
    fn select_masked_rows_in_order() {
        let kv = KeyValues::new(
            array![[0.0], [1.0], [2.0], [3.0]],
            array![[10.0], [11.0], [12.0], [13.0]],
        )
        .unwrap();
        let sel = select_masked_kv(&kv, &[true, false, true, false]).unwrap();
        assert_eq!(sel.k, array![[0.0], [2.0]]);
        assert_eq!(sel.v, array![[10.0], [12.0]]);
        assert_eq!(select_masked_kv(&kv, &[true; 4]).unwrap(), kv);
        assert_eq!(select_masked_kv(&kv, &[false; 4]).unwrap().tokens(), 0);
        assert!(select_masked_kv(&kv, &[true; 3]).is_err());
    }

    #[test]
    fn shape_errors() {
        assert!(AttentionTensors::single_head(
            Array2::zeros((2, 3)),
            Array2::zeros((4, 3)),
            Array2::zeros((5, 3))
        )
        .is_err());
        assert!(AttentionTensors::single_head(
            Array2::zeros((2, 3)),
            Array2::zeros((4, 2)),
            Array2::zeros((4, 2))
        )
        .is_err());
        assert!(AttentionTensors::new(
            Array2::zeros((2, 3)),
            Array2::zeros((4, 3)),
            Array2::zeros((4, 3)),
            2
        )
        .is_err());
        let t = AttentionTensors::single_head(
            Array2::zeros((2, 3)),
            Array2::zeros((4, 3)),
            Array2::zeros((4, 3)),
        )
        .unwrap();
        assert!(texture_aligning_attention(&t, &KeyValues::empty(2), Ablation::Both).is_err());
    }
}
