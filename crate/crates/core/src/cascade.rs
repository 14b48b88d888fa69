//! Cascaded multi-scale attention scores.
//!
//! Queries and keys are average-pooled to coarser token sets, their score maps
//! are bilinearly upsampled back to the fine `n x n` size, and the upsampled
//! maps are added to the fine map only on the block where the query lies in
//! the synthesized region and the key lies in a reference region. Every other
//! entry keeps its fine-scale value bit for bit.
//!
//! Pooling windows run along the column axis of the token grid, i.e. along
//! contiguous runs of the row-major token order. A level-`i` window covers `i`
//! neighbouring tokens of one row, so level `i` holds `rows * ceil(cols / i)`
//! tokens (`n / i` when `i` divides the row length). Because the windows are
//! contiguous in token order, bilinear resampling of the flattened score
//! matrix maps each fine token back onto its own window.

use crate::error::{Error, Result};
use crate::grid::PanelMask;
use crate::linalg::{gemm, softmax_in_place, MatRef, Op, Real};

/// Tokens laid out on a 2-D grid, row-major, `dim` values per token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid<F> {
    grid_rows: usize,
    grid_cols: usize,
    dim: usize,
    data: Vec<F>,
}

impl<F: Real> TokenGrid<F> {
    pub fn new(grid_rows: usize, grid_cols: usize, dim: usize, data: Vec<F>) -> Result<Self> {
        if grid_rows == 0 || grid_cols == 0 || dim == 0 {
            return Err(Error::shape("token grid dimensions must be positive"));
        }
        if data.len() != grid_rows * grid_cols * dim {
            return Err(Error::shape(format!(
                "token grid {grid_rows}x{grid_cols}x{dim} needs {} values, got {}",
                grid_rows * grid_cols * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("token grid contains non-finite values"));
        }
        Ok(Self {
            grid_rows,
            grid_cols,
            dim,
            data,
        })
    }

    pub(crate) fn from_raw(grid_rows: usize, grid_cols: usize, dim: usize, data: Vec<F>) -> Self {
        debug_assert_eq!(data.len(), grid_rows * grid_cols * dim);
        Self {
            grid_rows,
            grid_cols,
            dim,
            data,
        }
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn token(&self, i: usize) -> &[F] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Token indices whose queries are synthesized and whose keys are references.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSlices {
    pub target: Vec<usize>,
    pub reference: Vec<usize>,
}

impl TokenSlices {
    pub fn new(target: Vec<usize>, reference: Vec<usize>) -> Self {
        Self { target, reference }
    }

    /// Target tokens touch at least one masked pixel; reference tokens touch none.
    pub fn from_mask(mask: &PanelMask, patch: usize) -> Result<Self> {
        if patch == 0 || !mask.height().is_multiple_of(patch) || !mask.width().is_multiple_of(patch) {
            return Err(Error::shape(format!(
                "patch size {patch} does not tile a {}x{} mask",
                mask.height(),
                mask.width()
            )));
        }
        let (rows, cols) = (mask.height() / patch, mask.width() / patch);
        let mut slices = TokenSlices::default();
        for tr in 0..rows {
            for tc in 0..cols {
                let touched = (0..patch).any(|y| (0..patch).any(|x| mask.get(tr * patch + y, tc * patch + x)));
                let idx = tr * cols + tc;
                if touched {
                    slices.target.push(idx);
                } else {
                    slices.reference.push(idx);
                }
            }
        }
        Ok(slices)
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty() || self.reference.is_empty()
    }

    fn check(&self, n: usize) -> Result<()> {
        if let Some(&bad) = self.target.iter().chain(&self.reference).find(|&&i| i >= n) {
            return Err(Error::invalid(format!("token index {bad} out of range for n = {n}")));
        }
        Ok(())
    }
}

/// How coarse levels are derived.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PoolingMode {
    /// Level `i` pools the fine tokens with a window of `i`.
    #[default]
    FromFine,
    /// Level `i` pools level `i - 1` with a window of 2.
    Recursive,
}

/// Dense `rows x cols` score matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> ScoreMap<F> {
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }
}

/// Fine map, pooled maps and the aggregated map.
#[derive(Clone, Debug)]
pub struct TokenScorePyramid<F> {
    /// `levels[0]` is the fine `n x n` map; `levels[i - 1]` is the pooled map of level `i`.
    pub levels: Vec<ScoreMap<F>>,
    pub aggregated: ScoreMap<F>,
}

impl<F: Real> TokenScorePyramid<F> {
    /// Multiply-accumulates spent on all `Q K^T` products.
    pub fn score_macs(&self, dim: usize) -> u64 {
        self.levels.iter().map(|m| (m.rows * m.cols * dim) as u64).sum()
    }
}

/// Average-pools along grid columns with a window of `level` tokens; the last
/// window of a row may be partial and averages only its members.
pub fn pool_tokens<F: Real>(x: &TokenGrid<F>, level: usize) -> Result<TokenGrid<F>> {
    if level < 2 {
        return Err(Error::invalid(format!("pooling level must be >= 2, got {level}")));
    }
    pool_window(x, level)
}

fn pool_window<F: Real>(x: &TokenGrid<F>, window: usize) -> Result<TokenGrid<F>> {
    if window > x.grid_cols {
        return Err(Error::invalid(format!(
            "pooling window {window} wider than the {}-token grid row",
            x.grid_cols
        )));
    }
    let out_cols = x.grid_cols.div_ceil(window);
    let d = x.dim;
    let mut data = vec![F::zero(); x.grid_rows * out_cols * d];
    for r in 0..x.grid_rows {
        for oc in 0..out_cols {
            let start = oc * window;
            let end = (start + window).min(x.grid_cols);
            let dst = &mut data[(r * out_cols + oc) * d..(r * out_cols + oc + 1) * d];
            for c in start..end {
                for (o, &v) in dst.iter_mut().zip(x.token(r * x.grid_cols + c)) {
                    *o += v;
                }
            }
            let inv = F::one() / F::lit((end - start) as f64);
            dst.iter_mut().for_each(|o| *o *= inv);
        }
    }
    Ok(TokenGrid::from_raw(x.grid_rows, out_cols, d, data))
}

/// Raw `Q K^T`, no scaling.
pub fn score_map<F: Real>(q: &TokenGrid<F>, k: &TokenGrid<F>) -> Result<ScoreMap<F>> {
    if q.dim != k.dim {
        return Err(Error::shape(format!("query dim {} vs key dim {}", q.dim, k.dim)));
    }
    Ok(raw_scores(&q.data, &k.data, q.len(), k.len(), q.dim))
}

fn raw_scores<F: Real>(q: &[F], k: &[F], nq: usize, nk: usize, d: usize) -> ScoreMap<F> {
    let mut data = vec![F::zero(); nq * nk];
    gemm(
        F::one(),
        MatRef::new(q, nq, d),
        Op::N,
        MatRef::new(k, nk, d),
        Op::T,
        F::zero(),
        &mut data,
        nk,
    );
    ScoreMap {
        rows: nq,
        cols: nk,
        data,
    }
}

/// Source sample positions for one axis of a half-pixel-center resize from
/// `src` to `dst` samples: `(lower index, upper index, upper weight)`.
fn axis_taps<F: Real>(src: usize, dst: usize) -> Vec<(usize, usize, F)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, F::lit(pos - lo as f64))
        })
        .collect()
}

#[inline]
fn bilerp<F: Real>(map: &ScoreMap<F>, row: (usize, usize, F), col: (usize, usize, F)) -> F {
    let (r0, r1, wr) = row;
    let (c0, c1, wc) = col;
    let top = map.get(r0, c0) + wc * (map.get(r0, c1) - map.get(r0, c0));
    let bottom = map.get(r1, c0) + wc * (map.get(r1, c1) - map.get(r1, c0));
    top + wr * (bottom - top)
}

/// Bilinear resize of a score map to `n x n`, half-pixel centers, clamped at
/// the borders.
pub fn upsample_scores<F: Real>(map: &ScoreMap<F>, n: usize) -> Result<ScoreMap<F>> {
    if map.rows == 0 || map.cols == 0 || map.data.len() != map.rows * map.cols {
        return Err(Error::shape("score map is empty or inconsistent"));
    }
    if map.rows > n || map.cols > n {
        return Err(Error::shape(format!(
            "cannot upsample a {}x{} map to {n}x{n}",
            map.rows, map.cols
        )));
    }
    if map.rows == n && map.cols == n {
        return Ok(map.clone());
    }
    let rows = axis_taps::<F>(map.rows, n);
    let cols = axis_taps::<F>(map.cols, n);
    let mut data = Vec::with_capacity(n * n);
    for &rt in &rows {
        for &ct in &cols {
            data.push(bilerp(map, rt, ct));
        }
    }
    Ok(ScoreMap { rows: n, cols: n, data })
}

/// Deepest cascade that fits a token row of `grid_cols` under `mode`.
pub fn max_levels(grid_cols: usize, mode: PoolingMode) -> usize {
    match mode {
        PoolingMode::FromFine => grid_cols.max(1),
        PoolingMode::Recursive => {
            let (mut levels, mut width) = (1, grid_cols);
            while width >= 2 {
                levels += 1;
                width = width.div_ceil(2);
                if width == 1 {
                    break;
                }
            }
            levels
        }
    }
}

fn pooled_levels<F: Real>(x: &TokenGrid<F>, levels: usize, mode: PoolingMode) -> Result<Vec<TokenGrid<F>>> {
    let mut out: Vec<TokenGrid<F>> = Vec::with_capacity(levels.saturating_sub(1));
    for level in 2..=levels {
        let pooled = match (mode, out.last()) {
            (PoolingMode::Recursive, Some(prev)) => pool_window(prev, 2)?,
            (PoolingMode::Recursive, None) => pool_window(x, 2)?,
            (PoolingMode::FromFine, _) => pool_window(x, level)?,
        };
        out.push(pooled);
    }
    Ok(out)
}

/// Adds the upsampled pooled maps onto the `[target x reference]` block of
/// `scores`, a row-major matrix with leading dimension `ld` whose first `n`
/// rows and columns are the image tokens. Returns the pooled maps.
pub(crate) fn add_cascade<F: Real>(
    scores: &mut [F],
    ld: usize,
    q: &TokenGrid<F>,
    k: &TokenGrid<F>,
    slices: &TokenSlices,
    levels: usize,
    mode: PoolingMode,
) -> Result<Vec<ScoreMap<F>>> {
    let n = q.len();
    let pq = pooled_levels(q, levels, mode)?;
    let pk = pooled_levels(k, levels, mode)?;
    let mut maps = Vec::with_capacity(pq.len());
    for (qi, ki) in pq.iter().zip(&pk) {
        let pooled = raw_scores(&qi.data, &ki.data, qi.len(), ki.len(), q.dim);
        if !slices.is_empty() {
            let row_taps = axis_taps::<F>(pooled.rows, n);
            let col_taps = axis_taps::<F>(pooled.cols, n);
            for &tq in &slices.target {
                let row = &mut scores[tq * ld..tq * ld + n];
                for &rk in &slices.reference {
                    row[rk] += bilerp(&pooled, row_taps[tq], col_taps[rk]);
                }
            }
        }
        maps.push(pooled);
    }
    Ok(maps)
}

fn check_pair<F: Real>(q: &TokenGrid<F>, k: &TokenGrid<F>) -> Result<()> {
    if q.dim != k.dim {
        return Err(Error::shape(format!("query dim {} vs key dim {}", q.dim, k.dim)));
    }
    if (q.grid_rows, q.grid_cols) != (k.grid_rows, k.grid_cols) {
        return Err(Error::shape("queries and keys must share one token grid"));
    }
    Ok(())
}

/// `S = S_1 + sum_{i=2..levels} up(S_i)[target, reference]`.
pub fn cascade_scores<F: Real>(
    q: &TokenGrid<F>,
    k: &TokenGrid<F>,
    slices: &TokenSlices,
    levels: usize,
    mode: PoolingMode,
) -> Result<TokenScorePyramid<F>> {
    if levels == 0 {
        return Err(Error::invalid("cascade needs at least one level"));
    }
    check_pair(q, k)?;
    slices.check(q.len())?;
    let fine = raw_scores(&q.data, &k.data, q.len(), k.len(), q.dim);
    let mut aggregated = fine.clone();
    let pooled = add_cascade(&mut aggregated.data, k.len(), q, k, slices, levels, mode)?;
    let mut maps = Vec::with_capacity(levels);
    maps.push(fine);
    maps.extend(pooled);
    Ok(TokenScorePyramid {
        levels: maps,
        aggregated,
    })
}

/// Condition tokens that join the attention but are never pooled.
#[derive(Clone, Debug)]
pub struct ExtraTokens<F> {
    pub count: usize,
    pub q: Vec<F>,
    pub k: Vec<F>,
    pub v: Vec<F>,
}

/// Result rows: image tokens first, then extra tokens.
#[derive(Clone, Debug)]
pub struct Attended<F> {
    pub output: Vec<F>,
    /// Row-stochastic attention weights, `(n + extra) x (n + extra)`.
    pub weights: Vec<F>,
    pub tokens: usize,
    pub value_dim: usize,
}

/// Softmax of the cascaded scores (scaled by `1/sqrt(d)` after aggregation)
/// applied to the values.
pub fn cascade_attention<F: Real>(
    q: &TokenGrid<F>,
    k: &TokenGrid<F>,
    v: &TokenGrid<F>,
    slices: &TokenSlices,
    levels: usize,
    extra: Option<&ExtraTokens<F>>,
) -> Result<Attended<F>> {
    check_pair(q, k)?;
    if v.len() != k.len() {
        return Err(Error::shape(format!("{} values for {} keys", v.len(), k.len())));
    }
    if levels == 0 {
        return Err(Error::invalid("cascade needs at least one level"));
    }
    slices.check(q.len())?;
    let (n, d, dv) = (q.len(), q.dim, v.dim);
    let ne = extra.map_or(0, |e| e.count);
    if let Some(e) = extra {
        if e.q.len() != ne * d || e.k.len() != ne * d || e.v.len() != ne * dv {
            return Err(Error::shape("extra token buffers do not match their count"));
        }
    }
    let total = n + ne;
    let stack = |img: &[F], ext: Option<&[F]>| -> Vec<F> {
        let mut all = img.to_vec();
        if let Some(e) = ext {
            all.extend_from_slice(e);
        }
        all
    };
    let qa = stack(&q.data, extra.map(|e| e.q.as_slice()));
    let ka = stack(&k.data, extra.map(|e| e.k.as_slice()));
    let va = stack(&v.data, extra.map(|e| e.v.as_slice()));

    let mut weights = raw_scores(&qa, &ka, total, total, d).data;
    if levels > 1 {
        add_cascade(&mut weights, total, q, k, slices, levels, PoolingMode::FromFine)?;
    }
    let scale = F::one() / F::lit(d as f64).sqrt();
    for row in weights.chunks_mut(total) {
        row.iter_mut().for_each(|s| *s *= scale);
        softmax_in_place(row);
    }
    let mut output = vec![F::zero(); total * dv];
    gemm(
        F::one(),
        MatRef::new(&weights, total, total),
        Op::N,
        MatRef::new(&va, total, dv),
        Op::N,
        F::zero(),
        &mut output,
        dv,
    );
    Ok(Attended {
        output,
        weights,
        tokens: total,
        value_dim: dv,
    })
}

/// Ideal ratio of cascaded to fine score cost, `sum_{i=1..levels} 1/i^2`.
pub fn ideal_cost_ratio(levels: usize) -> f64 {
    (1..=levels).map(|i| 1.0 / (i * i) as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rows: usize, cols: usize, dim: usize, rng: &mut ChaCha8Rng) -> TokenGrid<f64> {
        let data = (0..rows * cols * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        TokenGrid::new(rows, cols, dim, data).unwrap()
    }

    #[test]
    fn max_levels_fits_the_row() {
        assert_eq!(max_levels(1, PoolingMode::FromFine), 1);
        assert_eq!(max_levels(6, PoolingMode::FromFine), 6);
        assert_eq!(max_levels(1, PoolingMode::Recursive), 1);
        assert_eq!(max_levels(2, PoolingMode::Recursive), 2);
        assert_eq!(max_levels(3, PoolingMode::Recursive), 3);
        assert_eq!(max_levels(12, PoolingMode::Recursive), 5);
        for cols in 1..20 {
            for mode in [PoolingMode::FromFine, PoolingMode::Recursive] {
                let g = TokenGrid::new(1, cols, 1, vec![1.0f64; cols]).unwrap();
                let deepest = max_levels(cols, mode);
                assert!(pooled_levels(&g, deepest, mode).is_ok());
                assert!(pooled_levels(&g, deepest + 1, mode).is_err());
            }
        }
    }

    #[test]
    fn pooling_identical_tokens_is_identity() {
        let g = TokenGrid::new(3, 4, 2, [0.5, -2.0].repeat(12)).unwrap();
        let p = pool_tokens(&g, 3).unwrap();
        assert_eq!(p.grid_cols(), 2);
        assert!(p.as_slice().chunks(2).all(|t| t == [0.5, -2.0]));
    }

    #[test]
    fn two_token_grid_pools_to_midpoint() {
        let g = TokenGrid::new(1, 2, 2, vec![1.0, 3.0, 3.0, -1.0]).unwrap();
        let p = pool_tokens(&g, 2).unwrap();
        assert_eq!(p.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn pooling_rejects_bad_levels() {
        let g = TokenGrid::new(2, 2, 1, vec![0.0; 4]).unwrap();
        assert!(pool_tokens(&g, 1).is_err());
        assert!(pool_tokens(&g, 3).is_err(), "window wider than the grid");
    }

    #[test]
    fn pooled_vectors_are_window_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_grid(12, 12, 5, &mut rng);
        let p = pool_tokens(&g, 2).unwrap();
        assert_eq!(p.len(), 72);
        for r in 0..12 {
            for oc in 0..6 {
                for c in 0..5 {
                    let mean = (g.token(r * 12 + 2 * oc)[c] + g.token(r * 12 + 2 * oc + 1)[c]) / 2.0;
                    assert!((p.token(r * 6 + oc)[c] - mean).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn scores_match_triple_loop() {
        let q = TokenGrid::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(score_map(&q, &q).unwrap().data, vec![1.0]);
        let k = TokenGrid::new(1, 1, 2, vec![0.0, 2.0]).unwrap();
        assert_eq!(score_map(&q, &k).unwrap().data, vec![0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_grid(2, 4, 4, &mut rng);
        let k = random_grid(2, 4, 4, &mut rng);
        let s = score_map(&q, &k).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let mut acc = 0.0;
                for c in 0..4 {
                    acc += q.token(i)[c] * k.token(j)[c];
                }
                assert!((s.get(i, j) - acc).abs() < 1e-6);
            }
        }
        let bad = random_grid(2, 4, 3, &mut rng);
        assert!(score_map(&q, &bad).is_err());
    }

    #[test]
    fn upsample_constant_and_identity() {
        let c = ScoreMap {
            rows: 3,
            cols: 3,
            data: vec![2.5f64; 9],
        };
        assert!(upsample_scores(&c, 7).unwrap().data.iter().all(|&v| v == 2.5));
        let m = ScoreMap {
            rows: 2,
            cols: 2,
            data: vec![1.0f64, 2.0, 3.0, 4.0],
        };
        assert_eq!(upsample_scores(&m, 2).unwrap(), m);
        assert!(upsample_scores(&m, 1).is_err());
    }

    #[test]
    fn upsample_two_by_two_to_four() {
        // Hand-derived: source coords for 2 -> 4 are -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
        let m = ScoreMap {
            rows: 2,
            cols: 2,
            data: vec![0.0f64, 1.0, 2.0, 3.0],
        };
        let u = upsample_scores(&m, 4).unwrap();
        let axis = [0.0, 0.25, 0.75, 1.0];
        for (i, &y) in axis.iter().enumerate() {
            for (j, &x) in axis.iter().enumerate() {
                let want = 2.0 * y + x;
                assert!((u.get(i, j) - want).abs() < 1e-12, "({i},{j})");
            }
        }
        assert_eq!(u.get(0, 0), 0.0);
        assert_eq!(u.get(3, 3), 3.0);
    }

    #[test]
    fn single_level_is_fine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_grid(4, 4, 3, &mut rng);
        let k = random_grid(4, 4, 3, &mut rng);
        let slices = TokenSlices::new(vec![0, 1], vec![5, 6, 7]);
        let p = cascade_scores(&q, &k, &slices, 1, PoolingMode::FromFine).unwrap();
        assert_eq!(p.levels.len(), 1);
        assert_eq!(p.aggregated, p.levels[0]);
    }

    #[test]
    fn all_ones_tokens_add_one_per_level() {
        let q = TokenGrid::new(3, 6, 1, vec![1.0f64; 18]).unwrap();
        let slices = TokenSlices::new(vec![0, 1, 6, 7], vec![3, 4, 5, 10, 11, 17]);
        for levels in 1..=4 {
            let p = cascade_scores(&q, &q, &slices, levels, PoolingMode::FromFine).unwrap();
            for i in 0..18 {
                for j in 0..18 {
                    let inside = slices.target.contains(&i) && slices.reference.contains(&j);
                    let want = if inside { levels as f64 } else { 1.0 };
                    assert!((p.aggregated.get(i, j) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_slices_degenerate_to_fine() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_grid(3, 6, 4, &mut rng);
        let p = cascade_scores(&q, &q, &TokenSlices::default(), 3, PoolingMode::FromFine).unwrap();
        assert_eq!(p.aggregated, p.levels[0]);
        assert_eq!(p.levels.len(), 3);
    }

    #[test]
    fn recursive_mode_halves_each_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_grid(2, 8, 2, &mut rng);
        let p = cascade_scores(&q, &q, &TokenSlices::default(), 4, PoolingMode::Recursive).unwrap();
        let sizes: Vec<usize> = p.levels.iter().map(|m| m.rows).collect();
        assert_eq!(sizes, vec![16, 8, 4, 2]);
    }

    #[test]
    fn positive_alignment_only_adds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<f64> = (0..36 * 4).map(|_| rng.random_range(0.1..1.0)).collect();
        let q = TokenGrid::new(6, 6, 4, data).unwrap();
        let slices = TokenSlices::new((0..12).collect(), (12..36).collect());
        let p = cascade_scores(&q, &q, &slices, 3, PoolingMode::FromFine).unwrap();
        for &i in &slices.target {
            for &j in &slices.reference {
                assert!(p.aggregated.get(i, j) >= p.levels[0].get(i, j));
            }
        }
    }

    #[test]
    fn slices_from_mask_split_tokens() {
        let mut bits = vec![0u8; 8 * 8];
        for r in 0..4 {
            for c in 0..4 {
                bits[r * 8 + c] = 1;
            }
        }
        let mask = PanelMask::new(8, 8, bits).unwrap();
        let s = TokenSlices::from_mask(&mask, 2).unwrap();
        assert_eq!(s.target, vec![0, 1, 4, 5]);
        assert_eq!(s.reference.len(), 12);
        assert!(TokenSlices::from_mask(&mask, 3).is_err());
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_grid(3, 6, 4, &mut rng);
        let k = random_grid(3, 6, 4, &mut rng);
        let v = TokenGrid::new(3, 6, 2, [0.25, -3.0].repeat(18)).unwrap();
        let slices = TokenSlices::new((0..6).collect(), (6..18).collect());
        let extra = ExtraTokens {
            count: 2,
            q: (0..8).map(|i| i as f64 * 0.1).collect(),
            k: (0..8).map(|i| 1.0 - i as f64 * 0.2).collect(),
            v: vec![0.25, -3.0, 0.25, -3.0],
        };
        let out = cascade_attention(&q, &k, &v, &slices, 3, Some(&extra)).unwrap();
        for row in out.weights.chunks(out.tokens) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for row in out.output.chunks(2) {
            assert!((row[0] - 0.25).abs() < 1e-12 && (row[1] + 3.0).abs() < 1e-12);
        }
        let short = TokenGrid::new(1, 6, 2, vec![0.0; 12]).unwrap();
        assert!(cascade_attention(&q, &k, &short, &slices, 3, None).is_err());
    }

    #[test]
    fn cost_ratio_is_basel_partial_sum() {
        assert!((ideal_cost_ratio(3) - (1.0 + 0.25 + 1.0 / 9.0)).abs() < 1e-12);
        let q = TokenGrid::new(18, 18, 8, vec![0.0f64; 324 * 8]).unwrap();
        let p = cascade_scores(&q, &q, &TokenSlices::default(), 3, PoolingMode::FromFine).unwrap();
        let ratio = p.score_macs(8) as f64 / (324 * 324 * 8) as f64;
        assert!((ratio - ideal_cost_ratio(3)).abs() < 1e-12);
    }
}
