//! Per-sample classification losses on probability vectors and their batch
//! reduction, including loss masking and origin-selective application.
//!
//! All functions take the network's softmax output `ŷ` (not logits) and
//! return the gradient with respect to `ŷ`. Probabilities are clamped to
//! `[P_MIN, 1]` before any logarithm or power.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Origin;

pub const P_MIN: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("invalid loss config: {0}")]
    Config(String),
    #[error("invalid loss argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Cce,
    Soft,
    Lq,
    MaskMax,
    MaskStat,
}

impl LossFamily {
    pub fn is_masking(self) -> bool {
        matches!(self, LossFamily::MaskMax | LossFamily::MaskStat)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossFamily::Cce => "cce",
            LossFamily::Soft => "soft",
            LossFamily::Lq => "lq",
            LossFamily::MaskMax => "mask_max",
            LossFamily::MaskStat => "mask_stat",
        }
    }
}

/// Loss selection. Only the hyperparameter of the chosen family is read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub family: LossFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    /// Apply the robust loss or masking to noisy-origin samples only.
    #[serde(default)]
    pub selective: bool,
    /// Soft bootstrapping only: treat the bootstrapped target as a constant
    /// in the gradient.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub detach_target: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::cce()
    }
}

impl LossConfig {
    fn of(family: LossFamily) -> Self {
        LossConfig {
            family,
            beta: None,
            q: None,
            m: None,
            l: None,
            selective: false,
            detach_target: false,
        }
    }

    pub fn cce() -> Self {
        Self::of(LossFamily::Cce)
    }

    pub fn soft(beta: f64) -> Self {
        LossConfig {
            beta: Some(beta),
            ..Self::of(LossFamily::Soft)
        }
    }

    pub fn lq(q: f64) -> Self {
        LossConfig {
            q: Some(q),
            ..Self::of(LossFamily::Lq)
        }
    }

    pub fn mask_max(m: f64) -> Self {
        LossConfig {
            m: Some(m),
            ..Self::of(LossFamily::MaskMax)
        }
    }

    pub fn mask_stat(l: f64) -> Self {
        LossConfig {
            l: Some(l),
            ..Self::of(LossFamily::MaskStat)
        }
    }

    pub fn with_selective(mut self, selective: bool) -> Self {
        self.selective = selective;
        self
    }

    fn param(&self) -> Result<f64, LossError> {
        let (name, value) = match self.family {
            LossFamily::Cce => return Ok(0.0),
            LossFamily::Soft => ("beta", self.beta),
            LossFamily::Lq => ("q", self.q),
            LossFamily::MaskMax => ("m", self.m),
            LossFamily::MaskStat => ("l", self.l),
        };
        let v = value.ok_or_else(|| LossError::Config(format!("family `{}` requires `{name}`", self.family.as_str())))?;
        let ok = match self.family {
            LossFamily::Soft | LossFamily::MaskMax => (0.0..=1.0).contains(&v),
            LossFamily::Lq => v > 0.0 && v <= 1.0,
            LossFamily::MaskStat => v >= 0.0,
            LossFamily::Cce => true,
        };
        if !ok {
            let range = match self.family {
                LossFamily::Lq => "(0, 1]; use family `cce` for the q -> 0 limit",
                LossFamily::MaskStat => "[0, inf)",
                _ => "[0, 1]",
            };
            return Err(LossError::Config(format!("`{name}` = {v} is outside {range}")));
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        self.param().map(|_| ())
    }

    /// Row label in the style of the results table.
    pub fn label(&self) -> String {
        let p = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let base = match self.family {
            LossFamily::Cce => "baseline".to_string(),
            LossFamily::Soft => format!("L_soft beta={}", p(self.beta)),
            LossFamily::Lq => format!("L_q q={}", p(self.q)),
            LossFamily::MaskMax => format!("L_m m={}", p(self.m)),
            LossFamily::MaskStat => format!("L_l l={}", p(self.l)),
        };
        match (self.selective && self.family != LossFamily::Cce, self.detach_target && self.family == LossFamily::Soft) {
            (true, true) => format!("{base} (selective, detached)"),
            (true, false) => format!("{base} (selective)"),
            (false, true) => format!("{base} (detached)"),
            (false, false) => base,
        }
    }

    /// File-name-safe identifier, e.g. `lq_q0.7_sel`.
    pub fn tag(&self) -> String {
        let p = |k: &str, v: Option<f64>| v.map(|x| format!("_{k}{x}")).unwrap_or_default();
        let mut s = self.family.as_str().to_string();
        s += &match self.family {
            LossFamily::Cce => String::new(),
            LossFamily::Soft => p("b", self.beta),
            LossFamily::Lq => p("q", self.q),
            LossFamily::MaskMax => p("m", self.m),
            LossFamily::MaskStat => p("l", self.l),
        };
        if self.selective && self.family != LossFamily::Cce {
            s += "_sel";
        }
        if self.detach_target && self.family == LossFamily::Soft {
            s += "_detach";
        }
        s
    }
}

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(P_MIN, 1.0)
}

fn check_class(pred: &[f64], class: usize) -> Result<(), LossError> {
    if class >= pred.len() {
        return Err(LossError::Argument(format!("class {class} out of range for {} outputs", pred.len())));
    }
    Ok(())
}

/// `-ln ŷ_c`, gradient `-y_k / ŷ_k`.
pub fn cce(pred: &[f64], class: usize) -> (f64, Vec<f64>) {
    let p = clamp(pred[class]);
    let mut grad = vec![0.0; pred.len()];
    grad[class] = -1.0 / p;
    (-p.ln(), grad)
}

/// `-Σ (β y_k + (1-β) ŷ_k) ln ŷ_k`.
///
/// The gradient differentiates through both occurrences of `ŷ` unless
/// `detach_target` is set, in which case the bracket is held constant.
pub fn soft_bootstrap(pred: &[f64], class: usize, beta: f64, detach_target: bool) -> Result<(f64, Vec<f64>), LossError> {
    check_class(pred, class)?;
    LossConfig::soft(beta).validate()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (k, (&raw, g)) in pred.iter().zip(&mut grad).enumerate() {
        let p = clamp(raw);
        let y = if k == class { 1.0 } else { 0.0 };
        let target = beta * y + (1.0 - beta) * p;
        loss -= target * p.ln();
        *g = if detach_target {
            -target / p
        } else {
            -beta * y / p - (1.0 - beta) * (p.ln() + 1.0)
        };
    }
    Ok((loss, grad))
}

/// `(1 - ŷ_c^q) / q`, gradient `-ŷ_c^(q-1)` at the true class.
pub fn lq_loss(pred: &[f64], class: usize, q: f64) -> Result<(f64, Vec<f64>), LossError> {
    check_class(pred, class)?;
    LossConfig::lq(q).validate()?;
    let p = clamp(pred[class]);
    let mut grad = vec![0.0; pred.len()];
    grad[class] = -p.powf(q - 1.0);
    Ok(((1.0 - p.powf(q)) / q, grad))
}

/// Threshold and kept indices for a masking family.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDecision {
    pub threshold: f64,
    pub kept: Vec<usize>,
    /// The rule discarded every susceptible sample and nothing else was
    /// left, so all samples were kept instead.
    pub fell_back: bool,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn threshold(losses: &[f64], cfg: &LossConfig) -> Result<f64, LossError> {
    if losses.is_empty() {
        return Err(LossError::Argument("empty batch".into()));
    }
    let v = cfg.param()?;
    match cfg.family {
        LossFamily::MaskMax => Ok(v * losses.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        LossFamily::MaskStat => {
            if losses.len() < 2 {
                return Err(LossError::Argument("median/std masking needs a batch of at least 2".into()));
            }
            let mut sorted = losses.to_vec();
            sorted.sort_by(f64::total_cmp);
            let n = losses.len() as f64;
            let mean = losses.iter().sum::<f64>() / n;
            let sigma = (losses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            // Skip the product when sigma is 0 so an infinite l keeps everything.
            Ok(if sigma == 0.0 { median(&sorted) } else { median(&sorted) + v * sigma })
        }
        other => Err(LossError::Config(format!("`{}` is not a masking family", other.as_str()))),
    }
}

fn masked(losses: &[f64], susceptible: &[bool], cfg: &LossConfig) -> Result<MaskDecision, LossError> {
    let t = threshold(losses, cfg)?;
    let kept: Vec<usize> = (0..losses.len()).filter(|&i| !susceptible[i] || losses[i] <= t).collect();
    if kept.is_empty() {
        return Ok(MaskDecision {
            threshold: t,
            kept: (0..losses.len()).collect(),
            fell_back: true,
        });
    }
    Ok(MaskDecision {
        threshold: t,
        kept,
        fell_back: false,
    })
}

/// Keeps `{i : L_i <= t}` with `t = m * max(L)` or `t = median(L) + l * σ(L)`
/// (population σ). An empty kept set falls back to keeping every sample.
pub fn mask_threshold(losses: &[f64], cfg: &LossConfig) -> Result<MaskDecision, LossError> {
    masked(losses, &vec![true; losses.len()], cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    /// Mean loss over contributing samples.
    pub total: f64,
    /// Gradient of `total` with respect to the predictions, `B x K`.
    pub grad: Vec<f64>,
    /// Per-sample loss before masking.
    pub per_sample: Vec<f64>,
    pub kept: Vec<bool>,
    pub threshold: Option<f64>,
}

impl BatchLoss {
    pub fn n_kept(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }
}

/// Reduces a batch of predictions (`B x K`, row-major) to one scalar.
///
/// With `selective`, clean-origin samples always take plain CCE and are never
/// masked; noisy-origin samples take the configured loss. Masking families
/// threshold the per-sample CCE of the whole batch. The total is the mean over
/// kept samples; discarded samples get zero gradient.
pub fn selective_batch_loss(
    preds: &[f64],
    n_classes: usize,
    labels: &[usize],
    origins: &[Origin],
    cfg: &LossConfig,
) -> Result<BatchLoss, LossError> {
    cfg.validate()?;
    let b = labels.len();
    if b == 0 {
        return Err(LossError::Argument("empty batch".into()));
    }
    if n_classes == 0 || preds.len() != b * n_classes {
        return Err(LossError::Argument(format!(
            "{} predictions do not form {b} rows of {n_classes}",
            preds.len()
        )));
    }
    if origins.len() != b {
        return Err(LossError::Argument(format!("{} origin flags for {b} samples", origins.len())));
    }
    if let Some(i) = preds.iter().position(|p| !p.is_finite()) {
        return Err(LossError::Argument(format!("non-finite prediction in row {}", i / n_classes)));
    }
    for &c in labels {
        if c >= n_classes {
            return Err(LossError::Argument(format!("class {c} out of range for {n_classes} outputs")));
        }
    }

    let robust = |i: usize| !cfg.selective || origins[i] == Origin::Noisy;
    let mut per_sample = Vec::with_capacity(b);
    let mut grads = Vec::with_capacity(b);
    for i in 0..b {
        let row = &preds[i * n_classes..(i + 1) * n_classes];
        let (l, g) = match cfg.family {
            LossFamily::Soft if robust(i) => soft_bootstrap(row, labels[i], cfg.param()?, cfg.detach_target)?,
            LossFamily::Lq if robust(i) => lq_loss(row, labels[i], cfg.param()?)?,
            _ => cce(row, labels[i]),
        };
        per_sample.push(l);
        grads.push(g);
    }

    let (kept, threshold) = if cfg.family.is_masking() {
        let susceptible: Vec<bool> = (0..b).map(robust).collect();
        let d = masked(&per_sample, &susceptible, cfg)?;
        let mut kept = vec![false; b];
        for &i in &d.kept {
            kept[i] = true;
        }
        (kept, Some(d.threshold))
    } else {
        (vec![true; b], None)
    };

    let n = kept.iter().filter(|&&k| k).count() as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; b * n_classes];
    for i in 0..b {
        if kept[i] {
            total += per_sample[i];
            for (o, g) in grad[i * n_classes..(i + 1) * n_classes].iter_mut().zip(&grads[i]) {
                *o = g / n;
            }
        }
    }
    Ok(BatchLoss {
        total: total / n,
        grad,
        per_sample,
        kept,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cce_examples() {
        assert_eq!(cce(&[0.0, 1.0], 1).0, 0.0);
        assert!(close(cce(&[0.5, 0.5], 0).0, 2f64.ln(), 1e-15));
        assert!(close(cce(&[0.05; 20], 3).0, 20f64.ln(), 1e-12));
        assert!(close(cce(&[0.05; 20], 3).0, 2.9957, 1e-4));
        // Clamped, never infinite.
        assert!(close(cce(&[1.0, 0.0], 1).0, -(P_MIN.ln()), 1e-12));
    }

    #[test]
    fn soft_examples() {
        let (l, _) = soft_bootstrap(&[0.5, 0.5], 0, 0.0, false).unwrap();
        assert!(close(l, 2f64.ln(), 1e-15));
        // 0.3 * -ln 0.7 + 0.7 * H(0.7, 0.2, 0.1)
        let h = -(0.7f64 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        let expected = 0.3 * -(0.7f64.ln()) + 0.7 * h;
        let (l, _) = soft_bootstrap(&[0.7, 0.2, 0.1], 0, 0.3, false).unwrap();
        assert!(close(l, expected, 1e-14));
        assert!(matches!(soft_bootstrap(&[0.5, 0.5], 0, 1.5, false), Err(LossError::Config(_))));
    }

    #[test]
    fn soft_with_beta_one_is_cce() {
        let p = [0.1, 0.6, 0.3];
        assert_eq!(soft_bootstrap(&p, 2, 1.0, false).unwrap(), cce(&p, 2));
        assert_eq!(soft_bootstrap(&p, 2, 1.0, true).unwrap(), cce(&p, 2));
    }

    #[test]
    fn lq_examples() {
        assert_eq!(lq_loss(&[1.0, 0.0], 0, 0.3).unwrap().0, 0.0);
        let (l, _) = lq_loss(&[0.05, 0.95], 0, 1.0).unwrap();
        assert!(close(l, 0.95, 1e-15));
        // 0.05^0.7 = exp(0.7 ln 0.05) = 0.1228...; (1 - that) / 0.7 = 1.2531
        let (l, _) = lq_loss(&[0.05, 0.95], 0, 0.7).unwrap();
        assert!(close(l, 1.2531, 5e-5), "{l}");
        assert!(matches!(lq_loss(&[0.5, 0.5], 0, 0.0), Err(LossError::Config(_))));
    }

    #[test]
    fn gradient_magnitudes_contrast() {
        for p in [1e-3, 1e-6] {
            let pred = [p, 1.0 - p];
            assert!(close(cce(&pred, 0).1[0].abs(), 1.0 / p, 1e-6 / p));
            assert!(close(lq_loss(&pred, 0, 1.0).unwrap().1[0].abs(), 1.0, 1e-12));
        }
    }

    #[test]
    fn mask_examples() {
        let d = mask_threshold(&[1.0, 2.0, 10.0], &LossConfig::mask_max(0.5)).unwrap();
        assert_eq!((d.threshold, d.kept.clone(), d.fell_back), (5.0, vec![0, 1], false));

        let d = mask_threshold(&[3.0, 3.0, 3.0], &LossConfig::mask_max(0.5)).unwrap();
        assert_eq!((d.threshold, d.kept.clone(), d.fell_back), (1.5, vec![0, 1, 2], true));

        let d = mask_threshold(&[1.0, 2.0, 3.0, 4.0], &LossConfig::mask_stat(0.4)).unwrap();
        let sigma = 1.25f64.sqrt();
        assert!(close(sigma, 1.1180, 1e-4));
        assert!(close(d.threshold, 2.5 + 0.4 * sigma, 1e-12));
        assert!(close(d.threshold, 2.947, 1e-3));
        assert_eq!(d.kept, vec![0, 1]);

        let d = mask_threshold(&[1.0, 2.0, 9.0], &LossConfig::mask_max(1.0)).unwrap();
        assert_eq!(d.kept, vec![0, 1, 2]);
        let d = mask_threshold(&[1.0, 2.0, 9.0], &LossConfig::mask_stat(f64::INFINITY)).unwrap();
        assert_eq!(d.kept, vec![0, 1, 2]);
    }

    #[test]
    fn mask_arguments() {
        assert!(matches!(mask_threshold(&[], &LossConfig::mask_max(0.5)), Err(LossError::Argument(_))));
        assert!(matches!(mask_threshold(&[1.0], &LossConfig::mask_stat(1.0)), Err(LossError::Argument(_))));
        assert!(matches!(mask_threshold(&[1.0, 2.0], &LossConfig::cce()), Err(LossError::Config(_))));
    }

    #[test]
    fn cce_batch_is_mean() {
        let preds = [0.5, 0.5, 0.25, 0.75];
        let r = selective_batch_loss(&preds, 2, &[0, 1], &[Origin::Noisy, Origin::Clean], &LossConfig::cce()).unwrap();
        assert!(close(r.total, (2f64.ln() + (4.0f64 / 3.0).ln()) / 2.0, 1e-15));
        assert_eq!(r.grad[0], -1.0);
    }

    #[test]
    fn selective_lq_composes() {
        let preds = [0.6, 0.4, 0.3, 0.7];
        let cfg = LossConfig::lq(0.7).with_selective(true);
        let r = selective_batch_loss(&preds, 2, &[0, 0], &[Origin::Clean, Origin::Noisy], &cfg).unwrap();
        let expected = (cce(&preds[..2], 0).0 + lq_loss(&preds[2..], 0, 0.7).unwrap().0) / 2.0;
        assert!(close(r.total, expected, 1e-15));
    }

    #[test]
    fn selective_mask_spares_clean_samples() {
        // Losses: clean 0.1->2.30, noisy 0.01->4.61 (max), clean 0.5->0.69, noisy 0.9->0.11
        let preds = [0.1, 0.9, 0.01, 0.99, 0.5, 0.5, 0.9, 0.1];
        let origins = [Origin::Clean, Origin::Noisy, Origin::Clean, Origin::Noisy];
        let cfg = LossConfig::mask_max(0.5).with_selective(true);
        let r = selective_batch_loss(&preds, 2, &[0; 4], &origins, &cfg).unwrap();
        assert_eq!(r.kept, vec![true, false, true, true]);
        assert!(r.grad[2..4].iter().all(|&g| g == 0.0));
        let expected = (r.per_sample[0] + r.per_sample[2] + r.per_sample[3]) / 3.0;
        assert!(close(r.total, expected, 1e-15));

        // A clean sample holding the maximum is still kept.
        let origins = [Origin::Clean, Origin::Clean, Origin::Noisy, Origin::Noisy];
        let r = selective_batch_loss(&preds, 2, &[0; 4], &origins, &cfg).unwrap();
        assert!(r.kept[1]);
    }

    #[test]
    fn batch_arguments() {
        let cfg = LossConfig::cce();
        assert!(selective_batch_loss(&[], 2, &[], &[], &cfg).is_err());
        assert!(selective_batch_loss(&[0.5, 0.5], 2, &[0], &[], &cfg).is_err());
        assert!(selective_batch_loss(&[0.5, 0.5], 2, &[2], &[Origin::Clean], &cfg).is_err());
        assert!(selective_batch_loss(&[f64::NAN, 0.5], 2, &[0], &[Origin::Clean], &cfg).is_err());
    }

    #[test]
    fn config_json() {
        let cfg: LossConfig = serde_json::from_str(r#"{"family": "lq", "q": 0.7, "selective": true}"#).unwrap();
        assert_eq!(cfg, LossConfig::lq(0.7).with_selective(true));
        assert_eq!(cfg.tag(), "lq_q0.7_sel");
        assert_eq!(LossConfig::mask_stat(1.9).label(), "L_l l=1.9");
        assert!(serde_json::from_str::<LossConfig>(r#"{"family": "lq", "qq": 0.7}"#).is_err());
        let missing: LossConfig = serde_json::from_str(r#"{"family": "soft"}"#).unwrap();
        assert!(matches!(missing.validate(), Err(LossError::Config(_))));
    }

    proptest! {
        #[test]
        fn losses_decrease_in_true_class_probability(a in 0.001f64..0.998, d in 0.0005f64..0.001, beta in 0.25f64..1.0, q in 0.05f64..1.0) {
            let lo = [a, 1.0 - a];
            let hi = [a + d, 1.0 - a - d];
            prop_assert!(cce(&hi, 0).0 < cce(&lo, 0).0);
            prop_assert!(lq_loss(&hi, 0, q).unwrap().0 < lq_loss(&lo, 0, q).unwrap().0);
            // For two classes the entropy term can outweigh the label term
            // when beta < ~0.22, so the bootstrap loss is only monotone above.
            prop_assert!(soft_bootstrap(&hi, 0, beta, false).unwrap().0 < soft_bootstrap(&lo, 0, beta, false).unwrap().0);
        }

        #[test]
        fn bootstrap_is_not_monotone_for_small_beta(_x in 0..1u8) {
            let at = |a: f64| soft_bootstrap(&[a, 1.0 - a], 0, 0.05, false).unwrap().0;
            prop_assert!(at(0.2) > at(0.1));
        }

        #[test]
        fn lq_approaches_cce(a in 0.001f64..1.0) {
            let p = [a, 1.0 - a];
            let c = cce(&p, 0).0;
            prop_assert!((lq_loss(&p, 0, 1e-3).unwrap().0 - c).abs() < 5e-3 * (1.0 + c));
        }
    }
}
