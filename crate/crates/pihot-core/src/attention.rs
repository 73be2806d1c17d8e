//! Scaled dot-product feature attention and the two cross-attention stages.
//!
//! Both interaction stages share one primitive: rows of a query matrix
//! attend over rows of a key/value matrix via `softmax(Q Kᵀ / √d) V`. The
//! object/contact stage queries with inpainted-object features and attends
//! over contact features; the depth stage queries with a projection of the
//! relative-position map and attends over the object-attended features.
//! Feature maps enter as `(C, H, W)` and are flattened to one token per
//! spatial cell.

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::nn::{real, Conv2d, ConvCache, GradStore, ParamInit, ParamStore, Real};

/// `(tokens, dim)` matrix: one row per spatial cell.
pub type TokenMatrix<F> = Array2<F>;

/// Flattens `(C, H, W)` into `(H·W, C)` tokens, row-major over pixels.
pub fn tokens_from_map<F: Real>(map: &Array3<F>) -> TokenMatrix<F> {
    let (c, h, w) = map.dim();
    let mut out = Array2::zeros((h * w, c));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x, ch)] = map[(ch, y, x)];
            }
        }
    }
    out
}

/// Inverse of [`tokens_from_map`].
pub fn map_from_tokens<F: Real>(tokens: &TokenMatrix<F>, h: usize, w: usize) -> Result<Array3<F>> {
    let (n, c) = tokens.dim();
    if n != h * w {
        return Err(Error::shape(
            "token count",
            format!("{h}x{w} = {}", h * w),
            n.to_string(),
        ));
    }
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(ch, y, x)] = tokens[(y * w + x, ch)];
            }
        }
    }
    Ok(out)
}

/// Saved forward state for [`feature_attention_backward`].
#[derive(Debug, Clone)]
pub struct AttentionCache<F: Real> {
    q: TokenMatrix<F>,
    k: TokenMatrix<F>,
    v: TokenMatrix<F>,
    /// Row-stochastic attention weights, `(n_q, n_k)`.
    attn: Array2<F>,
    scale: F,
}

fn check_attention_shapes<F: Real>(
    q: &TokenMatrix<F>,
    k: &TokenMatrix<F>,
    v: &TokenMatrix<F>,
) -> Result<()> {
    if q.ncols() == 0 {
        return Err(Error::InvalidArgument(
            "attention dimension must be >= 1".into(),
        ));
    }
    if q.ncols() != k.ncols() {
        return Err(Error::shape(
            "attention Q/K dims",
            q.ncols().to_string(),
            k.ncols().to_string(),
        ));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::shape(
            "attention K/V token counts",
            k.nrows().to_string(),
            v.nrows().to_string(),
        ));
    }
    if k.nrows() == 0 || q.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "attention requires at least one token on each side".into(),
        ));
    }
    Ok(())
}

/// `softmax(Q Kᵀ / √d) V` with a max-subtracted, row-wise softmax.
pub fn feature_attention<F: Real>(
    q: &TokenMatrix<F>,
    k: &TokenMatrix<F>,
    v: &TokenMatrix<F>,
) -> Result<TokenMatrix<F>> {
    feature_attention_with_cache(q, k, v).map(|(out, _)| out)
}

/// [`feature_attention`] that also returns state for the backward pass.
pub fn feature_attention_with_cache<F: Real>(
    q: &TokenMatrix<F>,
    k: &TokenMatrix<F>,
    v: &TokenMatrix<F>,
) -> Result<(TokenMatrix<F>, AttentionCache<F>)> {
    check_attention_shapes(q, k, v)?;
    let scale = real::<F>(1.0 / (q.ncols() as f64).sqrt());
    let mut scores = q.dot(&k.t());
    scores.mapv_inplace(|s| s * scale);

    // row-wise softmax
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|s| (s - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    let attn = scores;
    let out = attn.dot(v);
    let cache = AttentionCache {
        q: q.clone(),
        k: k.clone(),
        v: v.clone(),
        attn,
        scale,
    };
    Ok((out, cache))
}

/// Gradients of [`feature_attention`] with respect to Q, K and V.
pub fn feature_attention_backward<F: Real>(
    cache: &AttentionCache<F>,
    d_out: &TokenMatrix<F>,
) -> (TokenMatrix<F>, TokenMatrix<F>, TokenMatrix<F>) {
    let a = &cache.attn;
    let dv = a.t().dot(d_out);
    let da = d_out.dot(&cache.v.t());

    // softmax backward, row by row: dS = A ⊙ (dA − ⟨dA, A⟩_row)
    let mut ds = &da * a;
    let row_dots = ds.sum_axis(Axis(1));
    for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
        let dot = row_dots[i];
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[(i, j)] * (da[(i, j)] - dot);
        }
    }

    let mut dq = ds.dot(&cache.k);
    dq.mapv_inplace(|g| g * cache.scale);
    let mut dk = ds.t().dot(&cache.q);
    dk.mapv_inplace(|g| g * cache.scale);
    (dq, dk, dv)
}

/// One cross-attention stage: 1×1 projections feeding [`feature_attention`].
///
/// Queries come from a `query_channels`-deep map, keys and values from a
/// `context_channels`-deep map; the output has `context_channels` channels
/// at the query's spatial size, so it can be mixed back into the stream the
/// context came from.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    q_proj: Conv2d,
    k_proj: Conv2d,
    v_proj: Conv2d,
}

/// Saved forward state for [`CrossAttention::backward`].
pub struct CrossAttentionCache<F: Real> {
    q_conv: ConvCache<F>,
    k_conv: ConvCache<F>,
    v_conv: ConvCache<F>,
    attn: AttentionCache<F>,
    query_hw: (usize, usize),
    context_hw: (usize, usize),
}

impl CrossAttention {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        init: &mut ParamInit,
        name: &str,
        query_channels: usize,
        context_channels: usize,
        attn_dim: usize,
    ) -> Result<Self> {
        if attn_dim == 0 {
            return Err(Error::InvalidArgument(
                "attention dimension must be >= 1".into(),
            ));
        }
        Ok(Self {
            q_proj: Conv2d::new(
                store,
                init,
                format!("{name}.q"),
                query_channels,
                attn_dim,
                1,
                1,
                0,
            ),
            k_proj: Conv2d::new(
                store,
                init,
                format!("{name}.k"),
                context_channels,
                attn_dim,
                1,
                1,
                0,
            ),
            v_proj: Conv2d::new(
                store,
                init,
                format!("{name}.v"),
                context_channels,
                context_channels,
                1,
                1,
                0,
            ),
        })
    }

    pub fn forward<F: Real>(
        &self,
        params: &ParamStore<F>,
        query_map: &Array3<F>,
        context_map: &Array3<F>,
    ) -> Result<(Array3<F>, CrossAttentionCache<F>)> {
        let (_, qh, qw) = query_map.dim();
        let (_, ch, cw) = context_map.dim();
        let (q_map, q_conv) = self.q_proj.forward(params, query_map);
        let (k_map, k_conv) = self.k_proj.forward(params, context_map);
        let (v_map, v_conv) = self.v_proj.forward(params, context_map);
        let q = tokens_from_map(&q_map);
        let k = tokens_from_map(&k_map);
        let v = tokens_from_map(&v_map);
        let (out_tokens, attn) = feature_attention_with_cache(&q, &k, &v)?;
        let out = map_from_tokens(&out_tokens, qh, qw)?;
        Ok((
            out,
            CrossAttentionCache {
                q_conv,
                k_conv,
                v_conv,
                attn,
                query_hw: (qh, qw),
                context_hw: (ch, cw),
            },
        ))
    }

    /// Propagates `d_out` back to the query map, the context map, and the
    /// projection parameters.
    pub fn backward<F: Real>(
        &self,
        params: &ParamStore<F>,
        cache: &CrossAttentionCache<F>,
        d_out: &Array3<F>,
        grads: &mut GradStore<F>,
    ) -> Result<(Array3<F>, Array3<F>)> {
        let (qh, qw) = cache.query_hw;
        let (ch, cw) = cache.context_hw;
        let d_tokens = tokens_from_map(d_out);
        let (dq, dk, dv) = feature_attention_backward(&cache.attn, &d_tokens);
        let dq_map = map_from_tokens(&dq, qh, qw)?;
        let dk_map = map_from_tokens(&dk, ch, cw)?;
        let dv_map = map_from_tokens(&dv, ch, cw)?;
        let d_query = self.q_proj.backward(params, &cache.q_conv, &dq_map, grads);
        let d_context_k = self.k_proj.backward(params, &cache.k_conv, &dk_map, grads);
        let d_context_v = self.v_proj.backward(params, &cache.v_conv, &dv_map, grads);
        Ok((d_query, &d_context_k + &d_context_v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar-loop oracle: plain exp softmax, no shared code with the
    /// implementation.
    fn attention_oracle(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
        let (nq, d) = q.dim();
        let nk = k.nrows();
        let dv = v.ncols();
        let mut out = Array2::zeros((nq, dv));
        for i in 0..nq {
            let mut weights = vec![0.0f64; nk];
            for (j, w) in weights.iter_mut().enumerate() {
                let mut s = 0.0;
                for t in 0..d {
                    s += q[(i, t)] * k[(j, t)];
                }
                *w = (s / (d as f64).sqrt()).exp();
            }
            let total: f64 = weights.iter().sum();
            for j in 0..nk {
                for t in 0..dv {
                    out[(i, t)] += weights[j] / total * v[(j, t)];
                }
            }
        }
        out
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(nq, nk, d, dv) in &[(1, 1, 1, 1), (3, 5, 4, 2), (8, 8, 8, 8), (2, 9, 3, 7)] {
            let q = random_matrix(&mut rng, nq, d);
            let k = random_matrix(&mut rng, nk, d);
            let v = random_matrix(&mut rng, nk, dv);
            let got = feature_attention(&q, &k, &v).unwrap();
            let want = attention_oracle(&q, &k, &v);
            for (a, b) in got.iter().zip(want.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_matrix(&mut rng, 6, 4);
        let k = random_matrix(&mut rng, 9, 4);
        let v = random_matrix(&mut rng, 9, 5);
        let (_, cache) = feature_attention_with_cache(&q, &k, &v).unwrap();
        for row in cache.attn.rows() {
            assert_relative_eq!(row.sum(), 1.0, max_relative = 1e-12);
            assert!(row.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn zero_queries_average_the_values() {
        let q = Array2::<f64>::zeros((2, 3));
        let k = arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let v = arr2(&[[3.0, 0.0], [0.0, 6.0], [3.0, 3.0]]);
        let out = feature_attention(&q, &k, &v).unwrap();
        for i in 0..2 {
            assert_relative_eq!(out[(i, 0)], 2.0, max_relative = 1e-12);
            assert_relative_eq!(out[(i, 1)], 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_context_token_is_copied_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = random_matrix(&mut rng, 5, 3);
        let k = random_matrix(&mut rng, 1, 3);
        let v = random_matrix(&mut rng, 1, 4);
        let out = feature_attention(&q, &k, &v).unwrap();
        for row in out.rows() {
            for (a, b) in row.iter().zip(v.row(0).iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn permuting_context_rows_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = random_matrix(&mut rng, 4, 3);
        let k = random_matrix(&mut rng, 6, 3);
        let v = random_matrix(&mut rng, 6, 2);
        let perm = [5usize, 2, 0, 4, 1, 3];
        let kp = Array2::from_shape_fn(k.dim(), |(i, j)| k[(perm[i], j)]);
        let vp = Array2::from_shape_fn(v.dim(), |(i, j)| v[(perm[i], j)]);
        let base = feature_attention(&q, &k, &v).unwrap();
        let permuted = feature_attention(&q, &kp, &vp).unwrap();
        for (a, b) in base.iter().zip(permuted.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let q = Array2::<f64>::zeros((2, 3));
        let k = Array2::<f64>::zeros((4, 2));
        let v = Array2::<f64>::zeros((4, 5));
        assert!(feature_attention(&q, &k, &v).is_err());
        let k = Array2::<f64>::zeros((4, 3));
        let v = Array2::<f64>::zeros((3, 5));
        assert!(feature_attention(&q, &k, &v).is_err());
    }

    /// Central-difference check of the analytic Q/K/V gradients through a
    /// scalar objective Σ out ⊙ W.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (nq, nk, d, dv) = (3, 4, 3, 2);
        let q0 = random_matrix(&mut rng, nq, d);
        let k0 = random_matrix(&mut rng, nk, d);
        let v0 = random_matrix(&mut rng, nk, dv);
        let weight = random_matrix(&mut rng, nq, dv);

        let objective = |q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>| -> f64 {
            (&feature_attention(q, k, v).unwrap() * &weight).sum()
        };

        let (_, cache) = feature_attention_with_cache(&q0, &k0, &v0).unwrap();
        let (dq, dk, dv_grad) = feature_attention_backward(&cache, &weight);

        let eps = 1e-5;
        let check = |analytic: &Array2<f64>, which: usize| {
            let dims = analytic.dim();
            for i in 0..dims.0 {
                for j in 0..dims.1 {
                    let mut qp = q0.clone();
                    let mut kp = k0.clone();
                    let mut vp = v0.clone();
                    let mut qm = q0.clone();
                    let mut km = k0.clone();
                    let mut vm = v0.clone();
                    match which {
                        0 => {
                            qp[(i, j)] += eps;
                            qm[(i, j)] -= eps;
                        }
                        1 => {
                            kp[(i, j)] += eps;
                            km[(i, j)] -= eps;
                        }
                        _ => {
                            vp[(i, j)] += eps;
                            vm[(i, j)] -= eps;
                        }
                    }
                    let numeric =
                        (objective(&qp, &kp, &vp) - objective(&qm, &km, &vm)) / (2.0 * eps);
                    assert_relative_eq!(
                        analytic[(i, j)],
                        numeric,
                        max_relative = 1e-6,
                        epsilon = 1e-9
                    );
                }
            }
        };
        check(&dq, 0);
        check(&dk, 1);
        check(&dv_grad, 2);
    }

    proptest::proptest! {
        /// Each output row is a convex combination of value rows, so every
        /// output coordinate must lie inside the envelope of its value column.
        #[test]
        fn outputs_stay_inside_the_value_envelope(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nq = rng.gen_range(1..6);
            let nk = rng.gen_range(1..6);
            let d = rng.gen_range(1..5);
            let dv = rng.gen_range(1..5);
            let q = random_matrix(&mut rng, nq, d);
            let k = random_matrix(&mut rng, nk, d);
            let v = random_matrix(&mut rng, nk, dv);
            let out = feature_attention(&q, &k, &v).unwrap();
            for t in 0..dv {
                let col = v.column(t);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..nq {
                    let val = out[(i, t)];
                    proptest::prop_assert!(val >= lo - 1e-12 && val <= hi + 1e-12,
                        "row {i} column {t}: {val} outside [{lo}, {hi}]");
                }
            }
        }

        /// Adding the same vector to every key shifts each query's logits by a
        /// per-query constant, which softmax normalisation cancels.
        #[test]
        fn shifting_every_key_by_a_common_vector_changes_nothing(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nq = rng.gen_range(1..5);
            let nk = rng.gen_range(1..5);
            let d = rng.gen_range(1..4);
            let q = random_matrix(&mut rng, nq, d);
            let k = random_matrix(&mut rng, nk, d);
            let v = random_matrix(&mut rng, nk, 3);
            let shift = Array2::from_shape_fn((1, d), |_| rng.gen_range(-3.0..3.0));
            let shifted = &k + &shift;
            let base = feature_attention(&q, &k, &v).unwrap();
            let moved = feature_attention(&q, &shifted, &v).unwrap();
            for (a, b) in base.iter().zip(moved.iter()) {
                proptest::prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()),
                    "{a} vs {b}");
            }
        }
    }

    #[test]
    fn token_round_trip_preserves_layout() {
        let map = Array3::from_shape_fn((3, 2, 4), |(c, y, x)| (c * 100 + y * 10 + x) as f64);
        let tokens = tokens_from_map(&map);
        assert_eq!(tokens.dim(), (8, 3));
        assert_eq!(tokens[(0 * 4 + 3, 2)], map[(2, 0, 3)]);
        let back = map_from_tokens(&tokens, 2, 4).unwrap();
        assert_eq!(back, map);
        assert!(map_from_tokens(&tokens, 3, 3).is_err());
    }

    #[test]
    fn cross_attention_backward_matches_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut init = ParamInit::seeded(5);
        let stage = CrossAttention::new(&mut store, &mut init, "xa", 2, 3, 4).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let query = Array3::from_shape_fn((2, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let context = Array3::from_shape_fn((3, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let weight = Array3::from_shape_fn((3, 3, 3), |_| rng.gen_range(-1.0..1.0));

        let objective = |store: &ParamStore<f64>, q: &Array3<f64>, c: &Array3<f64>| -> f64 {
            let (out, _) = stage.forward(store, q, c).unwrap();
            (&out * &weight).sum()
        };

        let (out, cache) = stage.forward(&store, &query, &context).unwrap();
        assert_eq!(out.dim(), (3, 3, 3));
        let mut grads = GradStore::new();
        let (d_query, d_context) = stage
            .backward(&store, &cache, &weight, &mut grads)
            .unwrap();

        let eps = 1e-6;
        // input gradients
        for (analytic, base, is_query) in [(&d_query, &query, true), (&d_context, &context, false)]
        {
            for (idx, &g) in base.indexed_iter().map(|(i, _)| i).zip(analytic.iter()) {
                let mut plus = base.clone();
                let mut minus = base.clone();
                plus[idx] += eps;
                minus[idx] -= eps;
                let (fp, fm) = if is_query {
                    (
                        objective(&store, &plus, &context),
                        objective(&store, &minus, &context),
                    )
                } else {
                    (
                        objective(&store, &query, &plus),
                        objective(&store, &query, &minus),
                    )
                };
                assert_relative_eq!(g, (fp - fm) / (2.0 * eps), max_relative = 1e-4, epsilon = 1e-7);
            }
        }
        // parameter gradients, a few samples per tensor
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in &names {
            let grad = grads.get(name).expect("gradient recorded").clone();
            let base = store.get(name).clone();
            let mut sampled = 0;
            for (idx, &g) in grad.indexed_iter() {
                if sampled >= 4 {
                    break;
                }
                sampled += 1;
                let mut plus = base.clone();
                plus[&idx] += eps;
                store.set(name, plus);
                let fp = objective(&store, &query, &context);
                let mut minus = base.clone();
                minus[&idx] -= eps;
                store.set(name, minus);
                let fm = objective(&store, &query, &context);
                store.set(name, base.clone());
                assert_relative_eq!(g, (fp - fm) / (2.0 * eps), max_relative = 1e-4, epsilon = 1e-7);
            }
        }
    }
}
