//! Weighted cross-entropy with a soft Jaccard term, its analytic gradient and
//! the inverse-frequency class weights.
//!
//! For scores `o` (I pixels by C classes), one-hot targets `t` with target
//! class `k_i`, probabilities `p = softmax(o)` and mixing weight `alpha`:
//!
//! ```text
//! L = (1 - alpha) / I * sum_i -w[k_i] * ln p[i][k_i]
//!     - alpha * sum_c ln( sum_i p t / sum_i (p + t - p t) )
//! ```
//!
//! The Jaccard ratio is floored at [`LOG_FLOOR`] inside the logarithm.
//! [`JaccardForm::RawExp`] uses `exp(o)` instead of `p` in the Jaccard term.

use std::str::FromStr;

use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-12;

/// `w_k = sum(S) / (C * S_k)`.
pub fn class_weights(counts: &[u64]) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::invalid("class weights need at least one class"));
    }
    if let Some(k) = counts.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("class {k} has zero samples; its weight is undefined")));
    }
    let total: f64 = counts.iter().map(|&s| s as f64).sum();
    let c = counts.len() as f64;
    Ok(counts.iter().map(|&s| total / (c * s as f64)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossInstance {
    classes: usize,
    /// Row-major `I x C`.
    scores: Vec<f64>,
    targets: Vec<usize>,
}

impl LossInstance {
    pub fn new(classes: usize, scores: Vec<f64>, targets: Vec<usize>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a loss instance needs at least 2 classes"));
        }
        if targets.is_empty() {
            return Err(Error::invalid("a loss instance needs at least 1 pixel"));
        }
        if scores.len() != targets.len() * classes {
            return Err(Error::invalid(format!(
                "expected {} scores for {} pixels x {classes} classes, got {}",
                targets.len() * classes,
                targets.len(),
                scores.len()
            )));
        }
        if let Some(i) = targets.iter().position(|&k| k >= classes) {
            return Err(Error::invalid(format!("pixel {i}: target class {} out of range", targets[i])));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("score {i} is not finite")));
        }
        Ok(Self {
            classes,
            scores,
            targets,
        })
    }

    /// Builds an instance from a one-hot target grid.
    pub fn from_one_hot(classes: usize, scores: Vec<f64>, one_hot: &[f64]) -> Result<Self> {
        if classes == 0 || !one_hot.len().is_multiple_of(classes) {
            return Err(Error::invalid("target grid does not have C columns"));
        }
        let mut targets = Vec::with_capacity(one_hot.len() / classes);
        for (i, row) in one_hot.chunks(classes).enumerate() {
            let ones: Vec<usize> = (0..classes).filter(|&c| row[c] == 1.0).collect();
            if ones.len() != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid(format!("target row {i} is not one-hot")));
            }
            targets.push(ones[0]);
        }
        Self::new(classes, scores, targets)
    }

    pub fn pixels(&self) -> usize {
        self.targets.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn with_scores(&self, scores: Vec<f64>) -> Result<Self> {
        Self::new(self.classes, scores, self.targets.clone())
    }

    fn t(&self, i: usize, c: usize) -> f64 {
        (self.targets[i] == c) as u8 as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum JaccardForm {
    #[default]
    Softmax,
    RawExp,
}

impl FromStr for JaccardForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(JaccardForm::Softmax),
            "raw" | "raw-exp" => Ok(JaccardForm::RawExp),
            other => Err(Error::invalid(format!("unknown Jaccard form {other:?} (softmax or raw)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossParams {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub form: JaccardForm,
}

impl LossParams {
    pub fn new(alpha: f64, weights: Vec<f64>) -> Self {
        Self {
            alpha,
            weights,
            form: JaccardForm::Softmax,
        }
    }

    fn validate(&self, classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.weights.len() != classes {
            return Err(Error::invalid(format!(
                "expected {classes} class weights, got {}",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::invalid("class weights must be positive and finite"));
        }
        Ok(())
    }
}

/// Per-pixel softmax probabilities and log-probabilities.
fn softmax_rows(inst: &LossInstance) -> (Vec<f64>, Vec<f64>) {
    let c = inst.classes;
    let mut p = vec![0.0; inst.scores.len()];
    let mut logp = vec![0.0; inst.scores.len()];
    for (i, row) in inst.scores.chunks(c).enumerate() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&o| (o - m).exp()).sum::<f64>().ln();
        for (j, &o) in row.iter().enumerate() {
            logp[i * c + j] = o - lse;
            p[i * c + j] = (o - lse).exp();
        }
    }
    (p, logp)
}

fn jaccard_inputs(inst: &LossInstance, p: &[f64], form: JaccardForm) -> Result<Vec<f64>> {
    match form {
        JaccardForm::Softmax => Ok(p.to_vec()),
        JaccardForm::RawExp => {
            let q: Vec<f64> = inst.scores.iter().map(|o| o.exp()).collect();
            if q.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("exp(score) overflows in the raw Jaccard form"));
            }
            Ok(q)
        }
    }
}

/// Intersection and union sums of the soft Jaccard ratio per class.
fn jaccard_sums(inst: &LossInstance, q: &[f64]) -> Vec<(f64, f64)> {
    let c = inst.classes;
    (0..c)
        .map(|j| {
            (0..inst.pixels()).fold((0.0, 0.0), |(n, d), i| {
                let (qv, t) = (q[i * c + j], inst.t(i, j));
                (n + qv * t, d + qv + t - qv * t)
            })
        })
        .collect()
}

fn ratio(n: f64, d: f64) -> f64 {
    if d == 0.0 {
        1.0
    } else {
        n / d
    }
}

pub fn seg_loss(inst: &LossInstance, params: &LossParams) -> Result<f64> {
    params.validate(inst.classes)?;
    let (p, logp) = softmax_rows(inst);
    let c = inst.classes;
    let ce: f64 = inst
        .targets
        .iter()
        .enumerate()
        .map(|(i, &k)| -params.weights[k] * logp[i * c + k])
        .sum::<f64>()
        / inst.pixels() as f64;
    let q = jaccard_inputs(inst, &p, params.form)?;
    let jac: f64 = jaccard_sums(inst, &q)
        .iter()
        .map(|&(n, d)| -ratio(n, d).max(LOG_FLOOR).ln())
        .sum();
    Ok((1.0 - params.alpha) * ce + params.alpha * jac)
}

/// Exact `dL/do`, row-major `I x C`. Where the Jaccard floor is active the
/// term is constant and contributes no gradient.
pub fn seg_loss_grad(inst: &LossInstance, params: &LossParams) -> Result<Vec<f64>> {
    params.validate(inst.classes)?;
    let (p, _) = softmax_rows(inst);
    let c = inst.classes;
    let n_px = inst.pixels() as f64;
    let mut grad = vec![0.0; p.len()];

    let ce_scale = (1.0 - params.alpha) / n_px;
    for (i, &k) in inst.targets.iter().enumerate() {
        for j in 0..c {
            grad[i * c + j] = ce_scale * params.weights[k] * (p[i * c + j] - inst.t(i, j));
        }
    }

    if params.alpha > 0.0 {
        let q = jaccard_inputs(inst, &p, params.form)?;
        let sums = jaccard_sums(inst, &q);
        // dL/dq for the Jaccard term.
        let mut g = vec![0.0; q.len()];
        for (j, &(n, d)) in sums.iter().enumerate() {
            if d == 0.0 || n / d < LOG_FLOOR {
                continue;
            }
            for i in 0..inst.pixels() {
                let t = inst.t(i, j);
                g[i * c + j] = -params.alpha * (t / n - (1.0 - t) / d);
            }
        }
        for i in 0..inst.pixels() {
            let row = i * c..(i + 1) * c;
            match params.form {
                JaccardForm::Softmax => {
                    let dot: f64 = row.clone().map(|x| g[x] * p[x]).sum();
                    for x in row {
                        grad[x] += p[x] * (g[x] - dot);
                    }
                }
                JaccardForm::RawExp => {
                    for x in row {
                        grad[x] += q[x] * g[x];
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Central finite differences of [`seg_loss`] with step `h`.
pub fn finite_difference_grad(inst: &LossInstance, params: &LossParams, h: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(inst.scores.len());
    for x in 0..inst.scores.len() {
        let mut plus = inst.scores.clone();
        let mut minus = inst.scores.clone();
        plus[x] += h;
        minus[x] -= h;
        let lp = seg_loss(&inst.with_scores(plus)?, params)?;
        let lm = seg_loss(&inst.with_scores(minus)?, params)?;
        out.push((lp - lm) / (2.0 * h));
    }
    Ok(out)
}

/// Largest entry-wise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// A loss instance with its parameters, as read from a text file.
#[derive(Debug, Clone, PartialEq)]
pub struct LossProblem {
    pub instance: LossInstance,
    pub params: LossParams,
}

/// Parses the line-oriented instance format:
///
/// ```text
/// classes 3
/// alpha 0.3
/// weights 1 2 0.5      # optional, defaults to all ones
/// form softmax         # optional: softmax or raw
/// pixel 2  0.1 -0.4 1.3
/// pixel 0  0.0  0.2 0.1
/// ```
///
/// Each `pixel` line gives the target class followed by the C scores.
pub fn parse_loss_problem(text: &str) -> Result<LossProblem> {
    let mut classes: Option<usize> = None;
    let mut alpha = 0.0;
    let mut weights: Option<Vec<f64>> = None;
    let mut form = JaccardForm::Softmax;
    let mut scores = Vec::new();
    let mut targets = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            line: n + 1,
            column: 1,
            message: msg,
        };
        let mut words = line.split_whitespace();
        let key = words.next().expect("line is not empty");
        let rest: Vec<&str> = words.collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("{s:?} is not a number")));
        match key {
            "classes" => {
                let [v] = rest[..] else {
                    return Err(err("classes takes one value".into()));
                };
                classes = Some(v.parse().map_err(|_| err(format!("{v:?} is not a class count")))?);
            }
            "alpha" => {
                let [v] = rest[..] else {
                    return Err(err("alpha takes one value".into()));
                };
                alpha = num(v)?;
            }
            "weights" => weights = Some(rest.iter().map(|s| num(s)).collect::<Result<_>>()?),
            "form" => {
                let [v] = rest[..] else {
                    return Err(err("form takes one value".into()));
                };
                form = v.parse().map_err(|e: Error| err(e.to_string()))?;
            }
            "pixel" => {
                let c = classes.ok_or_else(|| err("pixel before classes".into()))?;
                if rest.len() != c + 1 {
                    return Err(err(format!("pixel needs a target and {c} scores")));
                }
                targets.push(rest[0].parse().map_err(|_| err(format!("{:?} is not a class", rest[0])))?);
                for s in &rest[1..] {
                    scores.push(num(s)?);
                }
            }
            other => return Err(err(format!("unknown key {other:?}"))),
        }
    }
    let classes = classes.ok_or_else(|| Error::invalid("missing `classes` line"))?;
    let instance = LossInstance::new(classes, scores, targets)?;
    let params = LossParams {
        alpha,
        weights: weights.unwrap_or_else(|| vec![1.0; classes]),
        form,
    };
    params.validate(classes)?;
    Ok(LossProblem { instance, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_class(o: [f64; 2], k: usize) -> LossInstance {
        LossInstance::new(2, o.to_vec(), vec![k]).unwrap()
    }

    #[test]
    fn weights_examples() {
        assert_eq!(class_weights(&[5, 5, 5]).unwrap(), vec![1.0; 3]);
        let w = class_weights(&[90, 10]).unwrap();
        assert!((w[0] - 100.0 / 180.0).abs() < 1e-12);
        assert!((w[1] - 5.0).abs() < 1e-12);
        assert_eq!(class_weights(&[42]).unwrap(), vec![1.0]);
        assert!(class_weights(&[3, 0]).is_err());
    }

    #[test]
    fn symmetric_scores() {
        let inst = two_class([0.0, 0.0], 0);
        let params = LossParams::new(0.0, vec![1.0, 1.0]);
        assert!((seg_loss(&inst, &params).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(seg_loss_grad(&inst, &params).unwrap(), vec![-0.5, 0.5]);
    }

    #[test]
    fn confident_limits() {
        let params = LossParams::new(0.0, vec![1.0, 1.0]);
        let l = seg_loss(&two_class([40.0, -40.0], 0), &params).unwrap();
        assert!(l < 1e-30);
        // alpha = 1 with probabilities equal to the targets.
        let inst = LossInstance::new(2, vec![800.0, -800.0, -800.0, 800.0], vec![0, 1]).unwrap();
        assert_eq!(seg_loss(&inst, &LossParams::new(1.0, vec![1.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn large_scores_stay_finite() {
        let inst = LossInstance::new(3, vec![1e6, -1e6, 0.0], vec![1]).unwrap();
        let params = LossParams::new(0.5, vec![1.0; 3]);
        assert!(seg_loss(&inst, &params).unwrap().is_finite());
        assert!(seg_loss_grad(&inst, &params).unwrap().iter().all(|g| g.is_finite()));
        let raw = LossParams {
            form: JaccardForm::RawExp,
            ..params
        };
        assert!(seg_loss(&inst, &raw).is_err());
    }

    #[test]
    fn invalid_instances() {
        assert!(LossInstance::new(1, vec![0.0], vec![0]).is_err());
        assert!(LossInstance::new(2, vec![0.0, f64::NAN], vec![0]).is_err());
        assert!(LossInstance::new(2, vec![0.0, 1.0], vec![2]).is_err());
        assert!(LossInstance::new(2, vec![0.0], vec![0]).is_err());
        assert!(LossInstance::from_one_hot(2, vec![0.0, 0.0], &[0.5, 0.5]).is_err());
        assert_eq!(
            LossInstance::from_one_hot(2, vec![0.0, 0.0], &[0.0, 1.0]).unwrap().targets(),
            &[1]
        );
        let inst = two_class([0.0, 0.0], 0);
        assert!(seg_loss(&inst, &LossParams::new(1.5, vec![1.0, 1.0])).is_err());
        assert!(seg_loss(&inst, &LossParams::new(0.5, vec![1.0])).is_err());
        assert!(seg_loss(&inst, &LossParams::new(0.5, vec![1.0, 0.0])).is_err());
    }

    #[test]
    fn parse_problem() {
        let text = "# demo\nclasses 3\nalpha 0.3\nweights 1 2 0.5\nform raw\npixel 2 0.1 -0.4 1.3\npixel 0 0 0.2 0.1\n";
        let p = parse_loss_problem(text).unwrap();
        assert_eq!(p.instance.pixels(), 2);
        assert_eq!(p.params.form, JaccardForm::RawExp);
        assert_eq!(p.params.weights, vec![1.0, 2.0, 0.5]);
        match parse_loss_problem("classes 2\npixel 0 1\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn arb_problem() -> impl Strategy<Value = (LossInstance, LossParams)> {
        (2usize..=3, 1usize..=16)
            .prop_flat_map(|(c, n)| {
                (
                    Just(c),
                    proptest::collection::vec(-3.0f64..3.0, n * c),
                    proptest::collection::vec(0..c, n),
                    proptest::collection::vec(0.2f64..5.0, c),
                    prop::sample::select(vec![0.0, 0.3, 0.5, 1.0]),
                    any::<bool>(),
                )
            })
            .prop_map(|(c, scores, targets, weights, alpha, raw)| {
                let params = LossParams {
                    alpha,
                    weights,
                    form: if raw { JaccardForm::RawExp } else { JaccardForm::Softmax },
                };
                (LossInstance::new(c, scores, targets).unwrap(), params)
            })
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences((inst, params) in arb_problem()) {
            let a = seg_loss_grad(&inst, &params).unwrap();
            let n = finite_difference_grad(&inst, &params, 1e-5).unwrap();
            prop_assert!(max_relative_error(&a, &n, 1e-3) < 1e-4);
        }

        #[test]
        fn loss_is_linear_in_alpha((inst, params) in arb_problem()) {
            let at = |alpha: f64| seg_loss(&inst, &LossParams { alpha, ..params.clone() }).unwrap();
            let (l0, l5, l1) = (at(0.0), at(0.5), at(1.0));
            prop_assert!((l5 - 0.5 * (l0 + l1)).abs() <= 1e-9 * (1.0 + l0.abs() + l1.abs()));
        }

        #[test]
        fn ce_gradient_rows_sum_to_zero((inst, params) in arb_problem()) {
            let g = seg_loss_grad(&inst, &LossParams { alpha: 0.0, ..params }).unwrap();
            for row in g.chunks(inst.classes()) {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
            }
        }

        #[test]
        fn ce_is_shift_invariant((inst, params) in arb_problem(), shift in -50.0f64..50.0) {
            let p = LossParams { alpha: 0.0, ..params };
            let shifted = inst.with_scores(inst.scores().iter().map(|s| s + shift).collect()).unwrap();
            let (a, b) = (seg_loss(&inst, &p).unwrap(), seg_loss(&shifted, &p).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn weights_are_scale_free(
            counts in proptest::collection::vec(1u64..1000, 1..6),
            k in 1u64..1000,
        ) {
            let a = class_weights(&counts).unwrap();
            let scaled: Vec<u64> = counts.iter().map(|c| c * k).collect();
            let b = class_weights(&scaled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs());
            }
        }
    }
}
