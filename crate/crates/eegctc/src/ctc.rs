//! CTC loss via the forward-backward dynamic program over the
//! blank-interleaved extended label sequence, its analytic gradient with
//! respect to the logits, a brute-force alignment-enumeration oracle, and
//! greedy plus prefix beam-search decoders.

use std::collections::BTreeMap;

use ndarray::Array2;
use thiserror::Error;

/// Blank id convention: charsets map characters to 1..N.
pub const BLANK_ID: usize = 0;

/// Finite stand-in for log(0); keeps the recursions NaN-free.
pub const LOG_ZERO: f64 = -1e30;

#[derive(Debug, Error)]
pub enum CtcError {
    #[error("infeasible alignment: {frames} frames cannot express {required} extended labels")]
    Infeasible { frames: usize, required: usize },
    #[error("label id {0} is the blank or out of vocabulary {1}")]
    BadLabel(usize, usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("instance too large for brute force: {0} paths")]
    Budget(f64),
}

/// Loss (negative log likelihood, nats) and gradient w.r.t. pre-softmax
/// outputs.
#[derive(Debug, Clone)]
pub struct CtcResult {
    pub loss: f64,
    pub logit_grad: Array2<f64>,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a < b {
        return log_add(b, a);
    }
    if b <= LOG_ZERO {
        return a;
    }
    a + (b - a).exp().ln_1p()
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Minimum frame count to express `labels`: |labels| plus one separator blank
/// per adjacent equal pair.
pub fn required_length(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn validate_labels(labels: &[usize], vocab: usize, blank_id: usize) -> Result<(), CtcError> {
    for &id in labels {
        if id == blank_id || id >= vocab {
            return Err(CtcError::BadLabel(id, vocab));
        }
    }
    Ok(())
}

/// CTC negative log likelihood and its exact logit gradient.
pub fn ctc_loss(
    logits: &Array2<f64>,
    labels: &[usize],
    blank_id: usize,
) -> Result<CtcResult, CtcError> {
    let t_len = logits.nrows();
    let vocab = logits.ncols();
    if t_len == 0 || vocab < 2 || blank_id >= vocab {
        return Err(CtcError::Shape(format!(
            "logits [{t_len} x {vocab}] with blank {blank_id}"
        )));
    }
    validate_labels(labels, vocab, blank_id)?;
    let required = required_length(labels);
    if t_len < required {
        return Err(CtcError::Infeasible {
            frames: t_len,
            required,
        });
    }

    let logp = log_softmax_rows(logits);
    // Extended sequence: blank, l1, blank, l2, ..., blank.
    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| -> usize {
        if s % 2 == 0 {
            blank_id
        } else {
            labels[s / 2]
        }
    };
    let skip_allowed =
        |s: usize| -> bool { s % 2 == 1 && s >= 2 && ext(s) != ext(s - 2) };

    let mut alpha = Array2::from_elem((t_len, s_len), LOG_ZERO);
    alpha[(0, 0)] = logp[(0, blank_id)];
    if s_len > 1 {
        alpha[(0, 1)] = logp[(0, ext(1))];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1, s)];
            if s >= 1 {
                acc = log_add(acc, alpha[(t - 1, s - 1)]);
            }
            if s >= 2 && skip_allowed(s) {
                acc = log_add(acc, alpha[(t - 1, s - 2)]);
            }
            alpha[(t, s)] = acc + logp[(t, ext(s))];
        }
    }
    let mut log_lik = alpha[(t_len - 1, s_len - 1)];
    if s_len > 1 {
        log_lik = log_add(log_lik, alpha[(t_len - 1, s_len - 2)]);
    }

    // Backward pass; beta_t(s) includes the emission at t.
    let mut beta = Array2::from_elem((t_len, s_len), LOG_ZERO);
    beta[(t_len - 1, s_len - 1)] = logp[(t_len - 1, blank_id)];
    if s_len > 1 {
        beta[(t_len - 1, s_len - 2)] = logp[(t_len - 1, ext(s_len - 2))];
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1, s)];
            if s + 1 < s_len {
                acc = log_add(acc, beta[(t + 1, s + 1)]);
            }
            if s + 2 < s_len && skip_allowed(s + 2) {
                acc = log_add(acc, beta[(t + 1, s + 2)]);
            }
            beta[(t, s)] = acc + logp[(t, ext(s))];
        }
    }

    // Gradient: softmax - posterior occupation mass per symbol.
    let mut grad = Array2::zeros((t_len, vocab));
    for t in 0..t_len {
        let mut per_symbol = vec![LOG_ZERO; vocab];
        for s in 0..s_len {
            let k = ext(s);
            // alpha + beta double-counts the emission at t.
            let occ = alpha[(t, s)] + beta[(t, s)] - logp[(t, k)];
            per_symbol[k] = log_add(per_symbol[k], occ);
        }
        for k in 0..vocab {
            grad[(t, k)] = logp[(t, k)].exp() - (per_symbol[k] - log_lik).exp();
        }
    }

    Ok(CtcResult {
        loss: -log_lik,
        logit_grad: grad,
    })
}

/// Brute-force oracle: enumerate every vocab^T path, collapse it, and sum the
/// probabilities of the ones matching `labels`.
pub fn ctc_loss_bruteforce(
    logits: &Array2<f64>,
    labels: &[usize],
    blank_id: usize,
) -> Result<f64, CtcError> {
    let t_len = logits.nrows();
    let vocab = logits.ncols();
    validate_labels(labels, vocab, blank_id)?;
    let paths = (vocab as f64).powi(t_len as i32);
    if paths > 1e7 {
        return Err(CtcError::Budget(paths));
    }
    let logp = log_softmax_rows(logits);
    let mut total = 0.0f64;
    let mut path = vec![0usize; t_len];
    let count = paths as u64;
    for mut idx in 0..count {
        for slot in path.iter_mut() {
            *slot = (idx % vocab as u64) as usize;
            idx /= vocab as u64;
        }
        if collapse_alignment(&path, blank_id) == labels {
            let lp: f64 = path.iter().enumerate().map(|(t, &k)| logp[(t, k)]).sum();
            total += lp.exp();
        }
    }
    if total <= 0.0 {
        return Err(CtcError::Infeasible {
            frames: t_len,
            required: required_length(labels),
        });
    }
    Ok(-total.ln())
}

/// Merge consecutive repeats, then delete blanks.
pub fn collapse_alignment(path: &[usize], blank_id: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &id in path {
        if prev != Some(id) && id != blank_id {
            out.push(id);
        }
        prev = Some(id);
    }
    out
}

/// Per-timestep argmax (ties toward the lowest id) followed by collapse.
pub fn greedy_decode(logits: &Array2<f64>, blank_id: usize) -> Vec<usize> {
    let path: Vec<usize> = logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse_alignment(&path, blank_id)
}

#[derive(Clone, Copy)]
struct PrefixMass {
    blank: f64,
    non_blank: f64,
}

impl PrefixMass {
    fn zero() -> Self {
        Self {
            blank: LOG_ZERO,
            non_blank: LOG_ZERO,
        }
    }

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

/// Prefix beam search: maintains the top `beam_width` collapsed prefixes,
/// tracking blank- and non-blank-ending mass separately so paths merging to
/// one prefix are summed. Ties break toward the lexicographically smaller
/// prefix.
pub fn beam_search_decode(
    logits: &Array2<f64>,
    blank_id: usize,
    beam_width: usize,
) -> Vec<usize> {
    if beam_width == 0 || logits.nrows() == 0 {
        return Vec::new();
    }
    let logp = log_softmax_rows(logits);
    let vocab = logp.ncols();
    let mut beams: BTreeMap<Vec<usize>, PrefixMass> = BTreeMap::new();
    beams.insert(
        Vec::new(),
        PrefixMass {
            blank: 0.0,
            non_blank: LOG_ZERO,
        },
    );
    for t in 0..logp.nrows() {
        let mut next: BTreeMap<Vec<usize>, PrefixMass> = BTreeMap::new();
        for (prefix, mass) in &beams {
            for k in 0..vocab {
                let p = logp[(t, k)];
                if k == blank_id {
                    let e = next.entry(prefix.clone()).or_insert_with(PrefixMass::zero);
                    e.blank = log_add(e.blank, mass.total() + p);
                } else if prefix.last() == Some(&k) {
                    // Repeating the tail symbol extends the same prefix only
                    // from non-blank mass; blank-separated mass starts a new
                    // occurrence.
                    let e = next.entry(prefix.clone()).or_insert_with(PrefixMass::zero);
                    e.non_blank = log_add(e.non_blank, mass.non_blank + p);
                    let mut longer = prefix.clone();
                    longer.push(k);
                    let e = next.entry(longer).or_insert_with(PrefixMass::zero);
                    e.non_blank = log_add(e.non_blank, mass.blank + p);
                } else {
                    let mut longer = prefix.clone();
                    longer.push(k);
                    let e = next.entry(longer).or_insert_with(PrefixMass::zero);
                    e.non_blank = log_add(e.non_blank, mass.total() + p);
                }
            }
        }
        if next.len() > beam_width {
            // BTreeMap iteration is lexicographic, so stable sort keeps the
            // smaller prefix on probability ties.
            let mut ranked: Vec<(Vec<usize>, PrefixMass)> = next.into_iter().collect();
            ranked.sort_by(|a, b| b.1.total().partial_cmp(&a.1.total()).unwrap());
            ranked.truncate(beam_width);
            next = ranked.into_iter().collect();
        }
        beams = next;
    }
    beams
        .into_iter()
        .max_by(|a, b| {
            a.1.total()
                .partial_cmp(&b.1.total())
                .unwrap()
                .then_with(|| b.0.cmp(&a.0)) // prefer lexicographically smaller
        })
        .map(|(prefix, _)| prefix)
        .unwrap_or_default()
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Exhaustive decoding oracle for tiny instances, independent of the
    //! beam-search implementation.
    use super::*;

    pub fn exhaustive_decode(logits: &Array2<f64>, blank_id: usize) -> Vec<usize> {
        let t_len = logits.nrows();
        let vocab = logits.ncols();
        let logp = log_softmax_rows(logits);
        let mut mass: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        let count = (vocab as u64).pow(t_len as u32);
        let mut path = vec![0usize; t_len];
        for mut idx in 0..count {
            for slot in path.iter_mut() {
                *slot = (idx % vocab as u64) as usize;
                idx /= vocab as u64;
            }
            let p: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &k)| logp[(t, k)])
                .sum::<f64>()
                .exp();
            *mass.entry(collapse_alignment(&path, blank_id)).or_insert(0.0) += p;
        }
        mass.into_iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| b.0.cmp(&a.0)))
            .map(|(seq, _)| seq)
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn random_logits(t: usize, vocab: usize, rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_fn((t, vocab), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn single_frame_uniform_loss_is_ln3() {
        let logits = Array2::zeros((1, 3));
        let r = ctc_loss(&logits, &[1], 0).unwrap();
        assert!((r.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frame_uniform_loss_is_ln3() {
        // Alignments {aa, a-, -a} carry 3 of the 9 paths.
        let logits = Array2::zeros((2, 3));
        let r = ctc_loss(&logits, &[1], 0).unwrap();
        assert!((r.loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separator_frame() {
        let logits = Array2::zeros((2, 3));
        assert!(matches!(
            ctc_loss(&logits, &[1, 1], 0),
            Err(CtcError::Infeasible { required: 3, .. })
        ));
    }

    #[test]
    fn rejects_blank_in_labels() {
        let logits = Array2::zeros((3, 3));
        assert!(matches!(
            ctc_loss(&logits, &[0], 0),
            Err(CtcError::BadLabel(0, _))
        ));
    }

    #[test]
    fn empty_labels_all_blank_path() {
        let logits = Array2::zeros((2, 3));
        let r = ctc_loss(&logits, &[], 0).unwrap();
        assert!((r.loss - 2.0 * 3f64.ln()).abs() < 1e-12);
        let bf = ctc_loss_bruteforce(&logits, &[], 0).unwrap();
        assert!((r.loss - bf).abs() < 1e-12);
    }

    #[test]
    fn matches_bruteforce_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0;
        while checked < 300 {
            let t = rng.gen_range(1..=6);
            let vocab = rng.gen_range(2..=4);
            let len = rng.gen_range(0..=3.min(t));
            let labels: Vec<usize> =
                (0..len).map(|_| rng.gen_range(1..vocab)).collect();
            if t < required_length(&labels) {
                continue;
            }
            let logits = random_logits(t, vocab, &mut rng);
            let dp = ctc_loss(&logits, &labels, 0).unwrap().loss;
            let bf = ctc_loss_bruteforce(&logits, &labels, 0).unwrap();
            assert!((dp - bf).abs() < 1e-9, "dp {dp} bf {bf} labels {labels:?}");
            checked += 1;
        }
    }

    #[test]
    fn bruteforce_budget_guard() {
        let logits = Array2::zeros((20, 10));
        assert!(matches!(
            ctc_loss_bruteforce(&logits, &[1], 0),
            Err(CtcError::Budget(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let t = rng.gen_range(2..=5);
            let vocab = rng.gen_range(2..=4);
            let labels = vec![rng.gen_range(1..vocab)];
            let mut logits = random_logits(t, vocab, &mut rng);
            let r = ctc_loss(&logits, &labels, 0).unwrap();
            let h = 1e-6;
            for i in 0..t {
                for k in 0..vocab {
                    let orig = logits[(i, k)];
                    logits[(i, k)] = orig + h;
                    let up = ctc_loss(&logits, &labels, 0).unwrap().loss;
                    logits[(i, k)] = orig - h;
                    let dn = ctc_loss(&logits, &labels, 0).unwrap().loss;
                    logits[(i, k)] = orig;
                    let fd = (up - dn) / (2.0 * h);
                    let an = r.logit_grad[(i, k)];
                    assert!(
                        (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1e-3),
                        "({i},{k}): fd {fd} analytic {an}"
                    );
                }
            }
            for row in r.logit_grad.rows() {
                assert!(row.sum().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pure_blank_frame_leaves_loss_unchanged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let logits = random_logits(4, 3, &mut rng);
        let base = ctc_loss(&logits, &[1, 2], 0).unwrap().loss;
        let mut extended = Array2::zeros((5, 3));
        for t in 0..4 {
            for k in 0..3 {
                extended[(t, k)] = logits[(t, k)];
            }
        }
        extended[(4, 0)] = 200.0; // softmax(blank) = 1 to machine precision
        let with_blank = ctc_loss(&extended, &[1, 2], 0).unwrap().loss;
        assert!((base - with_blank).abs() < 1e-9);
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse_alignment(&[1, 0, 1, 2, 0], 0), vec![1, 1, 2]);
        assert_eq!(collapse_alignment(&[1, 1, 0, 2], 0), vec![1, 2]);
        assert_eq!(collapse_alignment(&[0, 0, 0], 0), Vec::<usize>::new());
        // Idempotent when the collapsed output is re-read as a path with no
        // blanks or repeats.
        let c = collapse_alignment(&[1, 0, 2, 2, 0, 1], 0);
        assert_eq!(collapse_alignment(&c, 0), c);
    }

    #[test]
    fn greedy_decode_examples() {
        let mut logits = Array2::from_elem((3, 3), -5.0);
        logits[(0, 1)] = 5.0;
        logits[(1, 0)] = 5.0;
        logits[(2, 2)] = 5.0;
        assert_eq!(greedy_decode(&logits, 0), vec![1, 2]);
        // Uniform logits: tie rule picks id 0 (blank) everywhere.
        assert_eq!(greedy_decode(&Array2::zeros((4, 3)), 0), Vec::<usize>::new());
    }

    #[test]
    fn beam_width_one_equals_greedy_on_peaked_logits() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = rng.gen_range(1..=5);
            let vocab = rng.gen_range(2..=3);
            let mut logits = Array2::from_elem((t, vocab), -20.0);
            for i in 0..t {
                let k = rng.gen_range(0..vocab);
                logits[(i, k)] = 20.0;
            }
            assert_eq!(
                beam_search_decode(&logits, 0, 1),
                greedy_decode(&logits, 0)
            );
        }
    }

    #[test]
    fn classic_merge_case_prefers_summed_mass() {
        // T=2, vocab {blank, a}; p(a) = 0.6, p(blank) = 0.4 both steps.
        // Mass("a") = 0.36 + 0.24 + 0.24 = 0.84 > Mass("") = 0.16.
        let p_a = 0.6f64.ln();
        let p_b = 0.4f64.ln();
        let logits =
            Array2::from_shape_vec((2, 2), vec![p_b, p_a, p_b, p_a]).unwrap();
        assert_eq!(beam_search_decode(&logits, 0, 8), vec![1]);
    }

    #[test]
    fn exhaustive_width_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let t = rng.gen_range(1..=5);
            let vocab = rng.gen_range(2..=3);
            let logits = random_logits(t, vocab, &mut rng);
            let beam = beam_search_decode(&logits, 0, 10_000);
            let oracle = oracle::exhaustive_decode(&logits, 0);
            assert_eq!(beam, oracle, "t {t} vocab {vocab}");
        }
    }
}
