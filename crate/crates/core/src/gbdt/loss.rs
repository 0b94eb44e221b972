//! Weighted logistic loss and its first two derivatives in the margin.

/// Hessian floor; keeps leaf weights finite in saturated nodes.
pub const HESS_FLOOR: f64 = 1e-16;

pub fn sigmoid(margin: f64) -> f64 {
    if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Gradient and hessian of `w * logloss(sigmoid(margin), label)`, where
/// `w = pos_weight` for positives and 1 otherwise.
pub fn grad_hess(margin: f64, label: u8, pos_weight: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    let y = f64::from(label);
    let w = if label == 1 { pos_weight } else { 1.0 };
    let g = w * (p - y);
    let h = (w * p * (1.0 - p)).max(HESS_FLOOR);
    (g, h)
}

/// Newton step for a leaf with summed gradient `g` and hessian `h`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

/// Per-row weighted log-loss expressed in the margin, stable for large |margin|.
pub fn weighted_logloss_row(margin: f64, label: u8, pos_weight: f64) -> f64 {
    // log(1 + exp(-m)) for positives, log(1 + exp(m)) for negatives
    let softplus = |z: f64| if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    if label == 1 {
        pos_weight * softplus(-margin)
    } else {
        softplus(margin)
    }
}

/// Mean weighted log-loss, normalized by total weight.
pub fn weighted_logloss(margins: &[f64], labels: &[u8], pos_weight: f64) -> f64 {
    let mut loss = 0.0;
    let mut weight = 0.0;
    for (&m, &y) in margins.iter().zip(labels) {
        loss += weighted_logloss_row(m, y, pos_weight);
        weight += if y == 1 { pos_weight } else { 1.0 };
    }
    loss / weight
}
