//! Central finite-difference verification of reverse-mode gradients.
//!
//! The checker perturbs one leaf coordinate at a time, re-runs the caller's
//! forward build at `x + h` and `x - h`, and compares the quotient against
//! the recorded gradient. Each perturbed run carries a fingerprint of every
//! relu sign and pool argmax; when the two fingerprints differ the epsilon
//! ball straddles a kink and the coordinate is reported as skipped rather
//! than judged against a subgradient.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::Tape;
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Denominator floor: coordinates where both sides are below this are inside
/// finite-difference noise and compare against an absolute tolerance instead.
const REL_FLOOR: f64 = 1e-6;

/// Check `d loss / d leaf` for every listed leaf against central differences.
///
/// `build` must be a pure function of the leaf values: reseed any internal
/// RNG on every call so dropout masks and sampling repeat exactly.
/// `coordinate_limit` bounds the number of coordinates sampled per leaf
/// (deterministically from `seed`); `None` checks every coordinate.
pub fn check_gradients<F>(
    build: F,
    leaves: &[(&str, &Tensor)],
    h: f64,
    coordinate_limit: Option<usize>,
    seed: u64,
) -> GradCheckReport
where
    F: Fn(&Tape) -> Tensor,
{
    for (_, leaf) in leaves {
        leaf.zero_grad();
    }
    let tape = Tape::new();
    let loss = build(&tape);
    tape.backward(&loss).expect("gradcheck backward");
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|(name, leaf)| {
            leaf.grad()
                .unwrap_or_else(|| panic!("leaf {name} received no gradient"))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        checked: 0,
        skipped_kinks: 0,
        max_rel_err: 0.0,
        worst: None,
    };

    let eval = |t: &Tape| -> (f64, u64) {
        t.enable_kink_tracking();
        let loss = build(t);
        (loss.item(), t.kink_signature())
    };

    for ((name, leaf), grads) in leaves.iter().zip(&analytic) {
        let n = leaf.numel();
        let coords: Vec<usize> = match coordinate_limit {
            Some(limit) if limit < n => {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut rng);
                all.truncate(limit);
                all.sort_unstable();
                all
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = leaf.values()[i];
            leaf.values_mut()[i] = orig + h;
            let (f_plus, sig_plus) = eval(&Tape::inference());
            leaf.values_mut()[i] = orig - h;
            let (f_minus, sig_minus) = eval(&Tape::inference());
            leaf.values_mut()[i] = orig;

            if sig_plus != sig_minus {
                report.skipped_kinks += 1;
                continue;
            }
            let fd = (f_plus - f_minus) / (2.0 * h);
            let ad = grads[i];
            let denom = fd.abs().max(ad.abs()).max(REL_FLOOR);
            let rel = (fd - ad).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.to_string(), i, ad, fd));
            }
        }
    }
    report
}
