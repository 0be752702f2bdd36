//! Reference implementations written for clarity, not speed, and without
//! sharing code with the crates they check. Boxes are `[x_min, y_min, x_max,
//! y_max]`.

pub type Box4 = [f64; 4];

/// IoU from the overlap interval on each axis.
pub fn iou(a: Box4, b: Box4) -> f64 {
    fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
        let lo = if a0 > b0 { a0 } else { b0 };
        let hi = if a1 < b1 { a1 } else { b1 };
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    }
    let inter = overlap(a[0], a[2], b[0], b[2]) * overlap(a[1], a[3], b[1], b[3]);
    let area = |x: Box4| (x[2] - x[0]) * (x[3] - x[1]);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub fn redundancy(n_gt: usize, n_pred: usize) -> f64 {
    if n_pred == 0 || n_gt >= n_pred {
        1.0
    } else {
        n_gt as f64 / n_pred as f64
    }
}

/// Population variance through the pairwise form `1/(2n^2) Σ_i Σ_j (x_i - x_j)^2`.
pub fn pairwise_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut s = 0.0;
    for a in xs {
        for b in xs {
            s += (a - b) * (a - b);
        }
    }
    s / (2.0 * n * n)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Group advantages: z-scores under the population deviation, all zero below
/// `floor`.
pub fn advantages(rewards: &[f64], floor: f64) -> Vec<f64> {
    let sd = pairwise_variance(rewards).sqrt();
    if sd < floor {
        return vec![0.0; rewards.len()];
    }
    let m = mean(rewards);
    rewards.iter().map(|r| (r - m) / sd).collect()
}

/// Batch average after `k` batches of EMA with weight `gamma` on history,
/// written as the expanded sum `γ^{k-1} a_1 + (1-γ) Σ_{j=2..k} γ^{k-j} a_j`.
pub fn ema_closed_form(batch_avgs: &[f64], gamma: f64) -> f64 {
    let k = batch_avgs.len();
    let mut total = gamma.powi(k as i32 - 1) * batch_avgs[0];
    for (j, a) in batch_avgs.iter().enumerate().skip(1) {
        total += (1.0 - gamma) * gamma.powi((k - 1 - j) as i32) * a;
    }
    total
}

// ---------------------------------------------------------------------------
// Policy objective

/// Flat parameter layout `[answer: D | diversity: B*P | describe: M*V*P]`.
#[derive(Debug, Clone, Copy)]
pub struct Dims {
    pub d: usize,
    pub p: usize,
    pub b: usize,
    pub m: usize,
    pub v: usize,
}

impl Dims {
    pub fn len(&self) -> usize {
        self.d + self.b * self.p + self.m * self.v * self.p
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `None` is the answer head, `Some(None)` the diversity head and
/// `Some(Some(m))` description slot m.
pub type HeadId = Option<Option<usize>>;

pub struct Token {
    pub head: HeadId,
    pub index: usize,
    pub logp_old: f64,
}

pub struct Sample {
    pub anchors: Vec<Vec<f64>>,
    pub context: Vec<f64>,
    pub responses: Vec<Vec<Token>>,
    pub advantages: Vec<f64>,
}

pub fn logits(theta: &[f64], dims: Dims, head: HeadId, s: &Sample) -> Vec<f64> {
    match head {
        None => s.anchors.iter().map(|row| (0..dims.d).map(|i| theta[i] * row[i]).sum()).collect(),
        Some(slot) => {
            let (rows, base) = match slot {
                None => (dims.b, dims.d),
                Some(m) => (dims.v, dims.d + dims.b * dims.p + m * dims.v * dims.p),
            };
            (0..rows)
                .map(|r| (0..dims.p).map(|j| theta[base + r * dims.p + j] * s.context[j]).sum())
                .collect()
        }
    }
}

/// Probabilities by direct exponentiation after shifting by the max.
pub fn probs(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - mx).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Negated clipped objective with an exact per-head KL penalty, averaged
/// over samples.
pub fn grpo_loss(theta: &[f64], reference: &[f64], dims: Dims, batch: &[Sample], eps: f64, beta: f64) -> f64 {
    let mut total = 0.0;
    for s in batch {
        let g = s.responses.len() as f64;
        let mut obj = 0.0;
        for (resp, adv) in s.responses.iter().zip(&s.advantages) {
            let mut inner = 0.0;
            for t in resp {
                let p = probs(&logits(theta, dims, t.head, s));
                let q = probs(&logits(reference, dims, t.head, s));
                let ratio = (p[t.index].ln() - t.logp_old).exp();
                let clipped = ratio.max(1.0 - eps).min(1.0 + eps);
                let surr = (ratio * adv).min(clipped * adv);
                inner += surr - beta * kl(&p, &q);
            }
            obj += inner / resp.len() as f64;
        }
        total += obj / g;
    }
    -total / batch.len() as f64
}

// ---------------------------------------------------------------------------
// Detection

#[derive(Debug, Clone, Copy)]
pub struct Det {
    pub image: usize,
    pub bbox: Box4,
    pub label: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Gt {
    pub image: usize,
    pub bbox: Box4,
    pub label: u32,
}

/// AP for one class: predictions ranked by score, ties broken by their
/// position in `dets`; each claims the best-IoU free ground truth of its
/// image at or above `thr` (lowest index on equal IoU). The result is the
/// interpolated precision at every true-positive rank, summed in rank order
/// and divided by the ground-truth count. `None` without ground truth.
pub fn average_precision(dets: &[Det], gts: &[Gt], class: u32, thr: f64) -> Option<f64> {
    let n_gt = gts.iter().filter(|g| g.label == class).count();
    if n_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].label == class).collect();
    // selection sort: repeatedly take the highest score, earliest on ties
    let mut ranked = Vec::new();
    while !order.is_empty() {
        let mut best = 0;
        for k in 1..order.len() {
            if dets[order[k]].score > dets[order[best]].score {
                best = k;
            }
        }
        ranked.push(order.remove(best));
    }
    let mut taken = vec![false; gts.len()];
    let mut tp = Vec::new();
    for &i in &ranked {
        let d = dets[i];
        let mut pick: Option<usize> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] || g.image != d.image || g.label != class || iou(d.bbox, g.bbox) < thr {
                continue;
            }
            if pick.is_none_or(|p| iou(d.bbox, g.bbox) > iou(d.bbox, gts[p].bbox)) {
                pick = Some(j);
            }
        }
        if let Some(j) = pick {
            taken[j] = true;
        }
        tp.push(pick.is_some());
    }
    let prec: Vec<f64> = (0..tp.len())
        .map(|k| tp[..=k].iter().filter(|x| **x).count() as f64 / (k + 1) as f64)
        .collect();
    let mut sum = 0.0;
    for k in 0..tp.len() {
        if tp[k] {
            sum += prec[k..].iter().cloned().fold(0.0, f64::max);
        }
    }
    Some(sum / n_gt as f64)
}

/// Mean AP over thresholds (outer) and classes with ground truth (inner,
/// ascending).
pub fn mean_ap(dets: &[Det], gts: &[Gt], thresholds: &[f64]) -> f64 {
    let mut classes: Vec<u32> = gts.iter().map(|g| g.label).collect();
    classes.sort();
    classes.dedup();
    let mut vals = Vec::new();
    for &t in thresholds {
        for &c in &classes {
            vals.extend(average_precision(dets, gts, c, t));
        }
    }
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// All permutations of `0..n` (n is small).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}
