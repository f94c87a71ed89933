//! The relational weight prior: default matrix construction, the L1/L2
//! deviation penalty, and the combined training loss.
//!
//! The default matrix `D` encodes, for every pair of input token positions and
//! every token-vector dimension, two hidden neurons with opposite (+1, -1)
//! incoming weights. Holding first-layer weights near `D` turns the first
//! hidden layer into a bank of pairwise comparison features.

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// What to do when the hidden layer is narrower than the full n(n-1)m rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthPolicy {
    /// Build the full-height matrix and flag that the layer must be widened.
    Expand,
    /// Keep only the first H rows, with pairs ordered by ascending index
    /// distance so adjacent-token comparisons survive.
    Truncate,
}

/// Prior-mean matrix between the input and the first hidden layer.
#[derive(Debug, Clone)]
pub struct DefaultMatrix {
    pub n: usize,
    pub m: usize,
    /// Height of `matrix` (number of hidden rows it describes).
    pub rows: usize,
    /// Row-major `rows x (n*m)` matrix of {-1, 0, +1}.
    pub matrix: Tensor,
    /// Token-index pairs in row-block order, i1 < i2.
    pub pair_order: Vec<(usize, usize)>,
    /// True when the requested hidden width was below n(n-1)m under
    /// [`WidthPolicy::Expand`]; the caller must widen the layer to `rows`.
    pub needs_widening: bool,
}

impl DefaultMatrix {
    /// Hidden width required to house every (pair, dimension, sign) row.
    pub fn required_rows(n: usize, m: usize) -> usize {
        n * (n - 1) * m
    }

    pub fn input_width(&self) -> usize {
        self.n * self.m
    }

    /// Export as CSV rows of {-1, 0, +1} for inspection.
    pub fn to_csv(&self) -> String {
        let cols = self.input_width();
        let mut out = String::new();
        for r in 0..self.rows {
            let row: Vec<String> = (0..cols)
                .map(|c| format!("{}", self.matrix.data()[r * cols + c] as i64))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Builds the default matrix for `n` tokens of dimension `m` and a first
/// hidden layer of `hidden` neurons.
///
/// Rows are pair-major: pairs in lexicographic (i1, i2) order, then dimension
/// ascending, with the (+, -) row before its sign-inverted twin. Under
/// truncation, pairs are pre-sorted by ascending |i2 - i1| before cutting.
pub fn build_default_matrix(
    n: usize,
    m: usize,
    hidden: usize,
    policy: WidthPolicy,
) -> Result<DefaultMatrix> {
    if n < 2 {
        return Err(Error::Config(format!(
            "default matrix needs at least 2 tokens, got {n}"
        )));
    }
    if m < 1 || hidden < 1 {
        return Err(Error::Config(
            "token dimension and hidden width must be positive".into(),
        ));
    }
    let required = DefaultMatrix::required_rows(n, m);
    let truncating = hidden < required && policy == WidthPolicy::Truncate;
    if truncating && hidden < 2 * m {
        return Err(Error::Config(format!(
            "hidden width {hidden} cannot house even one pair (needs {})",
            2 * m
        )));
    }

    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i1| ((i1 + 1)..n).map(move |i2| (i1, i2)))
        .collect();
    if truncating {
        // Stable sort keeps lexicographic order within each distance class.
        pairs.sort_by_key(|&(i1, i2)| i2 - i1);
    }

    let rows = if truncating { hidden } else { required.max(hidden) };
    let cols = n * m;
    let mut data = vec![0.0; rows * cols];
    let mut k = 0;
    'fill: for &(i1, i2) in &pairs {
        for j in 0..m {
            for sign in [1.0, -1.0] {
                if k >= rows {
                    break 'fill;
                }
                data[k * cols + i1 * m + j] = sign;
                data[k * cols + i2 * m + j] = -sign;
                k += 1;
            }
        }
    }

    Ok(DefaultMatrix {
        n,
        m,
        rows,
        matrix: Tensor::matrix(rows, cols, data)?,
        pair_order: pairs,
        needs_widening: hidden < required && policy == WidthPolicy::Expand,
    })
}

/// Penalty configuration: `wl1` weights the squared term, `wl2` the absolute
/// term, so (1,0) is the Gaussian prior (ERBP L2) and (0,1) the Laplacian
/// prior (ERBP L1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ErbpConfig {
    pub lambda: f64,
    pub wl1: f64,
    pub wl2: f64,
    pub include_bias_in_penalty: bool,
}

impl ErbpConfig {
    /// Laplacian prior: absolute deviation term active.
    pub fn l1(lambda: f64) -> Self {
        ErbpConfig {
            lambda,
            wl1: 0.0,
            wl2: 1.0,
            include_bias_in_penalty: true,
        }
    }

    /// Gaussian prior: squared deviation term active.
    pub fn l2(lambda: f64) -> Self {
        ErbpConfig {
            lambda,
            wl1: 1.0,
            wl2: 0.0,
            include_bias_in_penalty: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "regularisation strength must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Deviation penalty `wl1·Σ(wᵢ-dᵢ)² + wl2·Σ|wᵢ-dᵢ|` over the first-layer
/// weights, recorded on the tape. When configured, the bias is penalised
/// toward its prior mean of zero.
pub fn erbp_penalty(
    tape: &mut Tape,
    w: NodeId,
    b: Option<NodeId>,
    d: &DefaultMatrix,
    cfg: &ErbpConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    if tape.value(w).shape() != d.matrix.shape() {
        return Err(Error::dims(
            "erbp penalty",
            tape.value(w).shape(),
            d.matrix.shape(),
        ));
    }
    let mut total =
        tape.deviation_penalty(w, Some(&d.matrix), 0, d.matrix.len(), cfg.wl1, cfg.wl2)?;
    if cfg.include_bias_in_penalty {
        if let Some(b) = b {
            let blen = tape.value(b).len();
            let bias_term = tape.deviation_penalty(b, None, 0, blen, cfg.wl1, cfg.wl2)?;
            total = tape.add(total, bias_term)?;
        }
    }
    Ok(total)
}

/// Reference implementation of the deviation penalty built from elementary
/// tape operations; the fused operator is cross-checked against it in tests.
#[cfg(test)]
pub(crate) fn deviation_terms(tape: &mut Tape, diff: NodeId, cfg: &ErbpConfig) -> Result<NodeId> {
    let sq = tape.mul(diff, diff)?;
    let sq_sum = tape.sum(sq);
    let ab = tape.abs(diff);
    let ab_sum = tape.sum(ab);
    let sq_w = tape.scale(sq_sum, cfg.wl1);
    let ab_w = tape.scale(ab_sum, cfg.wl2);
    tape.add(sq_w, ab_w)
}

/// Combined training loss `l_c + λ·l_prior`.
pub fn total_loss(
    tape: &mut Tape,
    classification_loss: NodeId,
    penalty: NodeId,
    lambda: f64,
) -> Result<NodeId> {
    if lambda < 0.0 {
        return Err(Error::Config(format!(
            "regularisation strength must be nonnegative, got {lambda}"
        )));
    }
    if tape.value(classification_loss).len() != 1 || tape.value(penalty).len() != 1 {
        return Err(Error::Contract("total loss expects scalar terms".into()));
    }
    let scaled = tape.scale(penalty, lambda);
    tape.add(classification_loss, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent brute-force constructor: enumerate all (pair, dim, sign)
    /// combinations directly into explicit row descriptors.
    fn brute_force_rows(n: usize, m: usize) -> Vec<Vec<(usize, f64)>> {
        let mut rows = Vec::new();
        for i1 in 0..n {
            for i2 in (i1 + 1)..n {
                for j in 0..m {
                    rows.push(vec![(i1 * m + j, 1.0), (i2 * m + j, -1.0)]);
                    rows.push(vec![(i1 * m + j, -1.0), (i2 * m + j, 1.0)]);
                }
            }
        }
        rows
    }

    fn row(d: &DefaultMatrix, r: usize) -> &[f64] {
        let cols = d.input_width();
        &d.matrix.data()[r * cols..(r + 1) * cols]
    }

    #[test]
    fn three_tokens_dim_two_matches_reference_layout() {
        // The canonical 12x6 matrix for n=3, m=2.
        let d = build_default_matrix(3, 2, 12, WidthPolicy::Expand).unwrap();
        #[rustfmt::skip]
        let expected: [[f64; 6]; 12] = [
            [ 1.0,  0.0, -1.0,  0.0,  0.0,  0.0],
            [-1.0,  0.0,  1.0,  0.0,  0.0,  0.0],
            [ 0.0,  1.0,  0.0, -1.0,  0.0,  0.0],
            [ 0.0, -1.0,  0.0,  1.0,  0.0,  0.0],
            [ 1.0,  0.0,  0.0,  0.0, -1.0,  0.0],
            [-1.0,  0.0,  0.0,  0.0,  1.0,  0.0],
            [ 0.0,  1.0,  0.0,  0.0,  0.0, -1.0],
            [ 0.0, -1.0,  0.0,  0.0,  0.0,  1.0],
            [ 0.0,  0.0,  1.0,  0.0, -1.0,  0.0],
            [ 0.0,  0.0, -1.0,  0.0,  1.0,  0.0],
            [ 0.0,  0.0,  0.0,  1.0,  0.0, -1.0],
            [ 0.0,  0.0,  0.0, -1.0,  0.0,  1.0],
        ];
        assert_eq!(d.rows, 12);
        for (r, exp) in expected.iter().enumerate() {
            assert_eq!(row(&d, r), exp, "row {r}");
        }
    }

    #[test]
    fn single_pair_single_dimension() {
        let d = build_default_matrix(2, 1, 2, WidthPolicy::Expand).unwrap();
        assert_eq!(row(&d, 0), &[1.0, -1.0]);
        assert_eq!(row(&d, 1), &[-1.0, 1.0]);
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let d = build_default_matrix(3, 12, 72, WidthPolicy::Expand).unwrap();
        let reference = brute_force_rows(3, 12);
        assert_eq!(d.rows, reference.len());
        for (r, entries) in reference.iter().enumerate() {
            let mut expected = vec![0.0; d.input_width()];
            for &(c, v) in entries {
                expected[c] = v;
            }
            assert_eq!(row(&d, r), &expected[..], "row {r}");
        }
    }

    #[test]
    fn structural_properties_across_sizes() {
        for n in 2..=6 {
            for m in 1..=16 {
                let required = DefaultMatrix::required_rows(n, m);
                let d = build_default_matrix(n, m, required, WidthPolicy::Expand).unwrap();
                assert_eq!(d.rows, required);
                let cols = d.input_width();
                let mut seen = std::collections::HashSet::new();
                for r in 0..d.rows {
                    let rd = row(&d, r);
                    let nonzeros: Vec<(usize, f64)> = rd
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(c, &v)| (c, v))
                        .collect();
                    assert_eq!(nonzeros.len(), 2, "n={n} m={m} row {r}");
                    assert_eq!(nonzeros[0].1 + nonzeros[1].1, 0.0);
                    // Bijection with (pair, dim, sign) triples.
                    let (c1, s1) = nonzeros[0];
                    let key = (c1 / m, nonzeros[1].0 / m, c1 % m, s1 as i64);
                    assert!(seen.insert(key), "duplicate row signature");
                }
                // Each pair's two-row block sums to zero in every column.
                for block in 0..(d.rows / 2) {
                    for c in 0..cols {
                        let s = row(&d, 2 * block)[c] + row(&d, 2 * block + 1)[c];
                        assert_eq!(s, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn extra_rows_are_zero_when_layer_is_wider() {
        let d = build_default_matrix(2, 1, 5, WidthPolicy::Expand).unwrap();
        assert_eq!(d.rows, 5);
        assert!(!d.needs_widening);
        for r in 2..5 {
            assert!(row(&d, r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn expand_flags_narrow_layers() {
        let d = build_default_matrix(3, 2, 4, WidthPolicy::Expand).unwrap();
        assert!(d.needs_widening);
        assert_eq!(d.rows, 12);
    }

    #[test]
    fn truncation_keeps_adjacent_pairs_first() {
        // n=4, m=1 requires 12 rows; truncating to 6 keeps the three
        // distance-1 pairs (0,1), (1,2), (2,3).
        let d = build_default_matrix(4, 1, 6, WidthPolicy::Truncate).unwrap();
        assert_eq!(d.rows, 6);
        assert_eq!(&d.pair_order[..3], &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(row(&d, 0), &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(row(&d, 2), &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(row(&d, 4), &[0.0, 0.0, 1.0, -1.0]);
    }

    #[test]
    fn degenerate_sizes_rejected() {
        assert!(build_default_matrix(1, 2, 4, WidthPolicy::Expand).is_err());
        assert!(build_default_matrix(3, 3, 4, WidthPolicy::Truncate).is_err());
    }

    #[test]
    fn equal_tokens_give_zero_activation_and_unequal_a_positive_one() {
        let (n, m) = (3, 4);
        let d = build_default_matrix(n, m, DefaultMatrix::required_rows(n, m), WidthPolicy::Expand)
            .unwrap();
        let token = vec![0.3, -1.2, 0.8, 2.0];
        let x: Vec<f64> = token.iter().cycle().take(n * m).cloned().collect();
        let mut tape = Tape::new();
        let dm = tape.leaf(d.matrix.clone());
        let xi = tape.leaf(Tensor::vector(x.clone()));
        let h = tape.matmul(dm, xi).unwrap();
        let act = tape.relu(h);
        assert!(tape.value(act).data().iter().all(|&v| v == 0.0));

        // Perturb token 2 in dimension 1: each pair involving token 2 must
        // produce a strictly positive activation in one of its two rows for
        // that dimension.
        let mut x2 = x;
        x2[2 * m + 1] += 0.5;
        let mut tape = Tape::new();
        let dm = tape.leaf(d.matrix.clone());
        let xi = tape.leaf(Tensor::vector(x2));
        let h = tape.matmul(dm, xi).unwrap();
        let act = tape.relu(h);
        let cols_per_pair = 2 * m;
        for (block, &(i1, i2)) in d.pair_order.iter().enumerate() {
            if i1 == 2 || i2 == 2 {
                let base = block * cols_per_pair + 2; // dimension j=1, two rows
                let a = tape.value(act).data()[base];
                let b = tape.value(act).data()[base + 1];
                assert!(a > 0.0 || b > 0.0, "pair ({i1},{i2})");
            }
        }
    }

    #[test]
    fn penalty_zero_at_prior_mean() {
        let d = build_default_matrix(3, 2, 12, WidthPolicy::Expand).unwrap();
        for cfg in [ErbpConfig::l1(1.0), ErbpConfig::l2(1.0)] {
            let mut tape = Tape::new();
            let w = tape.param(d.matrix.clone());
            let b = tape.param(Tensor::zeros(vec![12]));
            let p = erbp_penalty(&mut tape, w, Some(b), &d, &cfg).unwrap();
            assert_eq!(tape.value(p).data()[0], 0.0);
        }
    }

    #[test]
    fn penalty_single_absolute_deviation() {
        let d = build_default_matrix(2, 1, 2, WidthPolicy::Expand).unwrap();
        let mut w = d.matrix.clone();
        w.data_mut()[1] += 0.5;
        let mut tape = Tape::new();
        let wn = tape.param(w);
        let cfg = ErbpConfig::l1(1.0);
        let p = erbp_penalty(&mut tape, wn, None, &d, &cfg).unwrap();
        assert_abs_diff_eq!(tape.value(p).data()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn penalty_two_squared_deviations() {
        let d = build_default_matrix(2, 1, 2, WidthPolicy::Expand).unwrap();
        let mut w = d.matrix.clone();
        w.data_mut()[0] += 0.5;
        w.data_mut()[3] -= 0.5;
        let mut tape = Tape::new();
        let wn = tape.param(w);
        let cfg = ErbpConfig::l2(1.0);
        let p = erbp_penalty(&mut tape, wn, None, &d, &cfg).unwrap();
        assert_abs_diff_eq!(tape.value(p).data()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn penalty_shape_mismatch_rejected() {
        let d = build_default_matrix(2, 1, 2, WidthPolicy::Expand).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
        assert!(erbp_penalty(&mut tape, w, None, &d, &ErbpConfig::l2(1.0)).is_err());
    }

    #[test]
    fn squared_penalty_gradient_is_two_w_minus_d() {
        let d = build_default_matrix(3, 2, 12, WidthPolicy::Expand).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Tensor::matrix(
            12,
            6,
            (0..72).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(w.clone());
        let p = erbp_penalty(&mut tape, wn, None, &d, &ErbpConfig::l2(1.0)).unwrap();
        tape.backward(p).unwrap();
        for i in 0..72 {
            let expected = 2.0 * (w.data()[i] - d.matrix.data()[i]);
            assert_abs_diff_eq!(tape.grad(wn)[i], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn fused_penalty_matches_composed_ops() {
        // The fused tape op must agree, in value and gradient, with the same
        // penalty built from primitive sub/mul/abs/sum/scale ops.
        let d = build_default_matrix(3, 2, 12, WidthPolicy::Expand).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let wdata: Vec<f64> = (0..72).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for cfg in [ErbpConfig::l1(1.0), ErbpConfig::l2(1.0)] {
            let mut fused_tape = Tape::new();
            let wf = fused_tape.param(Tensor::matrix(12, 6, wdata.clone()).unwrap());
            let pf = erbp_penalty(&mut fused_tape, wf, None, &d, &cfg).unwrap();
            fused_tape.backward(pf).unwrap();

            let mut ref_tape = Tape::new();
            let wr = ref_tape.param(Tensor::matrix(12, 6, wdata.clone()).unwrap());
            let dn = ref_tape.leaf(d.matrix.clone());
            let diff = ref_tape.sub(wr, dn).unwrap();
            let pr = deviation_terms(&mut ref_tape, diff, &cfg).unwrap();
            ref_tape.backward(pr).unwrap();

            assert_abs_diff_eq!(
                fused_tape.value(pf).data()[0],
                ref_tape.value(pr).data()[0],
                epsilon = 1e-12
            );
            for i in 0..72 {
                assert_abs_diff_eq!(
                    fused_tape.grad(wf)[i],
                    ref_tape.grad(wr)[i],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn penalty_invariant_under_pair_block_permutation() {
        let d = build_default_matrix(3, 2, 12, WidthPolicy::Expand).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let wdata: Vec<f64> = (0..72).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let eval = |w: &[f64], dmat: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let wn = tape.param(Tensor::matrix(12, 6, w.to_vec()).unwrap());
            let dref = DefaultMatrix {
                matrix: Tensor::matrix(12, 6, dmat.to_vec()).unwrap(),
                ..d.clone()
            };
            let p = erbp_penalty(&mut tape, wn, None, &dref, &ErbpConfig::l1(1.0)).unwrap();
            tape.value(p).data()[0]
        };
        let base = eval(&wdata, d.matrix.data());
        // Swap pair blocks 0 and 2 (rows 0-3 with rows 8-11) in both W and D.
        let swap_blocks = |data: &[f64]| -> Vec<f64> {
            let mut out = data.to_vec();
            for r in 0..4 {
                for c in 0..6 {
                    out.swap(r * 6 + c, (r + 8) * 6 + c);
                }
            }
            out
        };
        let permuted = eval(&swap_blocks(&wdata), &swap_blocks(d.matrix.data()));
        assert_abs_diff_eq!(base, permuted, epsilon = 1e-12);
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut tape = Tape::new();
        let lc = tape.leaf(Tensor::scalar(1.0));
        let p = tape.leaf(Tensor::scalar(2.0));
        let lt = total_loss(&mut tape, lc, p, 0.3).unwrap();
        assert_abs_diff_eq!(tape.value(lt).data()[0], 1.6, epsilon = 1e-15);
    }

    #[test]
    fn lambda_zero_disables_prior_exactly() {
        let mut tape = Tape::new();
        let lc = tape.leaf(Tensor::scalar(0.731));
        let p = tape.leaf(Tensor::scalar(57.2));
        let lt = total_loss(&mut tape, lc, p, 0.0).unwrap();
        assert_eq!(tape.value(lt).data()[0], 0.731);
    }

    #[test]
    fn negative_lambda_rejected() {
        let mut tape = Tape::new();
        let lc = tape.leaf(Tensor::scalar(1.0));
        let p = tape.leaf(Tensor::scalar(1.0));
        assert!(total_loss(&mut tape, lc, p, -0.1).is_err());
    }

    #[test]
    fn total_loss_gradient_is_sum_of_parts() {
        // grad of l_c + λ·penalty w.r.t. W equals grad(l_c) + λ·grad(penalty),
        // verified against central finite differences.
        let d = build_default_matrix(2, 2, 4, WidthPolicy::Expand).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let wdata: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let xdata: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = 0.7;

        let loss_of = |w: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let wn = tape.leaf(Tensor::matrix(4, 4, w.to_vec()).unwrap());
            let x = tape.leaf(Tensor::vector(xdata.clone()));
            let h = tape.matmul(wn, x).unwrap();
            let act = tape.relu(h);
            let lc = tape.softmax_cross_entropy(act, 1).unwrap();
            let p = erbp_penalty(&mut tape, wn, None, &d, &ErbpConfig::l2(1.0)).unwrap();
            let lt = total_loss(&mut tape, lc, p, lambda).unwrap();
            tape.value(lt).data()[0]
        };

        let mut tape = Tape::new();
        let wn = tape.param(Tensor::matrix(4, 4, wdata.clone()).unwrap());
        let x = tape.leaf(Tensor::vector(xdata.clone()));
        let h = tape.matmul(wn, x).unwrap();
        let act = tape.relu(h);
        let lc = tape.softmax_cross_entropy(act, 1).unwrap();
        let p = erbp_penalty(&mut tape, wn, None, &d, &ErbpConfig::l2(1.0)).unwrap();
        let lt = total_loss(&mut tape, lc, p, lambda).unwrap();
        tape.backward(lt).unwrap();

        let mut xp = wdata.clone();
        for i in 0..wdata.len() {
            let h = 1e-5;
            xp[i] = wdata[i] + h;
            let fp = loss_of(&xp);
            xp[i] = wdata[i] - h;
            let fm = loss_of(&xp);
            xp[i] = wdata[i];
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = tape.grad(wn)[i];
            let denom = analytic.abs().max(numeric.abs()).max(1.0);
            assert!((analytic - numeric).abs() / denom <= 1e-4);
        }
    }

    #[test]
    fn csv_export_shape() {
        let d = build_default_matrix(2, 1, 2, WidthPolicy::Expand).unwrap();
        assert_eq!(d.to_csv(), "1,-1\n-1,1\n");
    }
}
