//! Vote regression, semantic confidence and box regression losses with
//! their analytic gradients.
//!
//! Every function works on a whole batch at once: positives and negatives
//! are pooled over all clouds before averaging.

use arcal_core::{wrap_angle, OrientedBox, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{channel, OUTPUT_CHANNELS};
use crate::decode::sigmoid;
use crate::error::{Error, Result};
use crate::network::ForwardPass;
use crate::tape::{Mat, Tape, Var};

/// Probabilities are clipped to `[P_CLIP, 1 − P_CLIP]` before the log.
pub const P_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetAssignment {
    pub seed_positive: Vec<bool>,
    /// Ground-truth offset `gt.center − seed` (zero for negative seeds).
    pub seed_target: Vec<Vector3<f64>>,
    pub proposal_positive: Vec<bool>,
    /// Ground-truth box of each positive proposal.
    pub proposal_gt: Vec<Option<OrientedBox>>,
}

impl TargetAssignment {
    pub fn m_pos(&self) -> usize {
        self.seed_positive.iter().filter(|p| **p).count()
    }

    pub fn n_pos(&self) -> usize {
        self.proposal_positive.iter().filter(|p| **p).count()
    }

    /// Concatenates per-cloud assignments in batch order.
    pub fn concat(parts: impl IntoIterator<Item = TargetAssignment>) -> Self {
        let mut out = Self::default();
        for p in parts {
            out.seed_positive.extend(p.seed_positive);
            out.seed_target.extend(p.seed_target);
            out.proposal_positive.extend(p.proposal_positive);
            out.proposal_gt.extend(p.proposal_gt);
        }
        out
    }
}

/// Seeds and proposal centers inside `gt` are positive.
pub fn assign_targets(seeds: &[Point3<f64>], proposal_centers: &[Point3<f64>], gt: Option<&OrientedBox>) -> TargetAssignment {
    let mut ta = TargetAssignment::default();
    for s in seeds {
        match gt {
            Some(g) if g.contains(s) => {
                ta.seed_positive.push(true);
                ta.seed_target.push(g.center() - s);
            }
            _ => {
                ta.seed_positive.push(false);
                ta.seed_target.push(Vector3::zeros());
            }
        }
    }
    for c in proposal_centers {
        let pos = gt.is_some_and(|g| g.contains(c));
        ta.proposal_positive.push(pos);
        ta.proposal_gt.push(if pos { gt.copied() } else { None });
    }
    ta
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_rows(what: &'static str, rows: usize, expected: usize) -> Result<()> {
    if rows == expected {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected: expected.to_string(),
            got: rows.to_string(),
        })
    }
}

/// Mean over positive seeds of `‖Δx − Δx*‖₁`, with its gradient in `Δx`.
pub fn vote_reg_grad(offsets: &Mat, ta: &TargetAssignment) -> Result<(f64, Mat)> {
    check_rows("vote offsets", offsets.nrows(), ta.seed_positive.len())?;
    let mut g = Mat::zeros(offsets.dim());
    let m = ta.m_pos();
    if m == 0 {
        return Ok((0.0, g));
    }
    let inv = 1.0 / m as f64;
    let mut sum = 0.0;
    for (i, pos) in ta.seed_positive.iter().enumerate() {
        if !pos {
            continue;
        }
        for k in 0..3 {
            let e = offsets[(i, k)] - ta.seed_target[i][k];
            sum += e.abs();
            g[(i, k)] = sign(e) * inv;
        }
    }
    Ok((sum * inv, g))
}

pub fn vote_reg_loss(offsets: &Mat, ta: &TargetAssignment) -> Result<f64> {
    vote_reg_grad(offsets, ta).map(|(l, _)| l)
}

/// Loss weights and the positive/negative balance of the semantic term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub vote: f64,
    pub boxes: f64,
    pub sem: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            vote: 100.0,
            boxes: 1.0,
            sem: 20.0,
            alpha: 1.5,
            beta: 1.0,
        }
    }
}

fn bce_terms(p: f64, positive: bool) -> (f64, f64) {
    // loss and d loss / d p of the clipped cross-entropy
    let clipped = !(P_CLIP..=1.0 - P_CLIP).contains(&p);
    let pc = p.clamp(P_CLIP, 1.0 - P_CLIP);
    if positive {
        (-pc.ln(), if clipped { 0.0 } else { -1.0 / pc })
    } else {
        (-(1.0 - pc).ln(), if clipped { 0.0 } else { 1.0 / (1.0 - pc) })
    }
}

/// `α · mean BCE(p⁺, 1) + β · mean BCE(p⁻, 0)` over proposal probabilities.
pub fn sem_cls_loss(scores: &[f64], ta: &TargetAssignment, alpha: f64, beta: f64) -> Result<f64> {
    check_rows("proposal scores", scores.len(), ta.proposal_positive.len())?;
    let (mut lp, mut ln, mut np, mut nn) = (0.0, 0.0, 0usize, 0usize);
    for (&p, &pos) in scores.iter().zip(&ta.proposal_positive) {
        let (l, _) = bce_terms(p, pos);
        if pos {
            lp += l;
            np += 1;
        } else {
            ln += l;
            nn += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(alpha * mean(lp, np) + beta * mean(ln, nn))
}

/// The semantic loss from raw class logits, with its gradient in the logits.
pub fn sem_cls_grad(logits: &[f64], ta: &TargetAssignment, alpha: f64, beta: f64) -> Result<(f64, Vec<f64>)> {
    check_rows("proposal logits", logits.len(), ta.proposal_positive.len())?;
    let np = ta.n_pos();
    let nn = ta.proposal_positive.len() - np;
    let wp = if np == 0 { 0.0 } else { alpha / np as f64 };
    let wn = if nn == 0 { 0.0 } else { beta / nn as f64 };
    let mut loss = 0.0;
    let mut g = Vec::with_capacity(logits.len());
    for (&z, &pos) in logits.iter().zip(&ta.proposal_positive) {
        let p = sigmoid(z);
        let (l, dl_dp) = bce_terms(p, pos);
        let w = if pos { wp } else { wn };
        loss += w * l;
        g.push(w * dl_dp * p * (1.0 - p));
    }
    Ok((loss, g))
}

/// Per-term averages of the box loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxTerms {
    pub center: f64,
    pub heading: f64,
    pub size: f64,
}

impl BoxTerms {
    pub fn weighted(&self) -> f64 {
        10.0 * self.center + 5.0 * self.heading + 10.0 * self.size
    }
}

/// Box regression over positive proposals with the gradient in the raw
/// output and in the cluster centers.
pub fn box_grad(raw: &Mat, centers: &Mat, ta: &TargetAssignment, anchor: [f64; 3]) -> Result<(BoxTerms, Mat, Mat)> {
    check_rows("proposal output", raw.nrows(), ta.proposal_positive.len())?;
    check_rows("proposal centers", centers.nrows(), ta.proposal_positive.len())?;
    if raw.ncols() != OUTPUT_CHANNELS {
        return Err(Error::Shape {
            what: "proposal channels",
            expected: OUTPUT_CHANNELS.to_string(),
            got: raw.ncols().to_string(),
        });
    }
    let mut g_raw = Mat::zeros(raw.dim());
    let mut g_ctr = Mat::zeros(centers.dim());
    let n = ta.n_pos();
    let mut t = BoxTerms::default();
    if n == 0 {
        return Ok((t, g_raw, g_ctr));
    }
    let inv = 1.0 / n as f64;
    for (j, gt) in ta.proposal_gt.iter().enumerate() {
        let Some(gt) = gt else { continue };
        for k in 0..3 {
            let e = centers[(j, k)] + raw[(j, channel::CENTER.start + k)] - gt.center()[k];
            t.center += e.abs();
            let d = 10.0 * sign(e) * inv;
            g_raw[(j, channel::CENTER.start + k)] = d;
            g_ctr[(j, k)] = d;

            let e = raw[(j, channel::SIZE.start + k)] - (gt.size()[k] - anchor[k]);
            t.size += e.abs();
            g_raw[(j, channel::SIZE.start + k)] = 10.0 * sign(e) * inv;
        }
        let e = wrap_angle(raw[(j, channel::HEADING_RESIDUAL)] - wrap_angle(gt.yaw()));
        t.heading += e.abs();
        g_raw[(j, channel::HEADING_RESIDUAL)] = 5.0 * sign(e) * inv;
    }
    t.center *= inv;
    t.heading *= inv;
    t.size *= inv;
    Ok((t, g_raw, g_ctr))
}

pub fn box_loss(raw: &Mat, centers: &Mat, ta: &TargetAssignment, anchor: [f64; 3]) -> Result<f64> {
    box_grad(raw, centers, ta, anchor).map(|(t, _, _)| t.weighted())
}

/// `100·l_vote + l_box + 20·l_sem`.
pub fn total_loss(l_vote: f64, l_box: f64, l_sem: f64) -> Result<f64> {
    weighted_total(&LossWeights::default(), l_vote, l_box, l_sem)
}

pub fn weighted_total(w: &LossWeights, l_vote: f64, l_box: f64, l_sem: f64) -> Result<f64> {
    for (name, v) in [("vote", l_vote), ("box", l_box), ("semantic", l_sem)] {
        if !v.is_finite() {
            return Err(Error::Diverged(format!("{name} loss is {v}")));
        }
    }
    Ok(w.vote * l_vote + w.boxes * l_box + w.sem * l_sem)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vote: f64,
    pub boxes: f64,
    pub sem: f64,
    pub total: f64,
}

/// Assigns targets for a forward pass against per-cloud ground truth.
pub fn assign_batch(tape: &Tape, fp: &ForwardPass, gts: &[Option<OrientedBox>]) -> Result<TargetAssignment> {
    check_rows("ground-truth boxes", gts.len(), fp.clouds)?;
    let centers = tape.value(fp.centers);
    let p = fp.proposals_per_cloud();
    let parts = gts.iter().enumerate().map(|(b, gt)| {
        let cs: Vec<Point3<f64>> = (b * p..(b + 1) * p)
            .map(|r| Point3::new(centers[(r, 0)], centers[(r, 1)], centers[(r, 2)]))
            .collect();
        assign_targets(&fp.seed_xyz[b], &cs, gt.as_ref())
    });
    Ok(TargetAssignment::concat(parts.collect::<Vec<_>>()))
}

/// All losses of a forward pass plus the output gradients to seed the
/// backward pass with.
pub fn losses_with_grads(
    tape: &Tape,
    fp: &ForwardPass,
    ta: &TargetAssignment,
    anchor: [f64; 3],
    w: &LossWeights,
) -> Result<(LossBreakdown, Vec<(Var, Mat)>)> {
    let (l_vote, g_vote) = vote_reg_grad(tape.value(fp.vote_offset), ta)?;
    let raw = tape.value(fp.output);
    let (terms, mut g_raw, g_ctr) = box_grad(raw, tape.value(fp.centers), ta, anchor)?;
    let logits: Vec<f64> = raw.column(channel::CLASS).to_vec();
    let (l_sem, g_sem) = sem_cls_grad(&logits, ta, w.alpha, w.beta)?;
    let l_box = terms.weighted();
    let total = weighted_total(w, l_vote, l_box, l_sem)?;

    g_raw *= w.boxes;
    for (r, g) in g_sem.iter().enumerate() {
        g_raw[(r, channel::CLASS)] += w.sem * g;
    }
    let seeds = vec![(fp.vote_offset, g_vote * w.vote), (fp.output, g_raw), (fp.centers, g_ctr * w.boxes)];
    Ok((
        LossBreakdown {
            vote: l_vote,
            boxes: l_box,
            sem: l_sem,
            total,
        },
        seeds,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    fn gt() -> OrientedBox {
        OrientedBox::new(Point3::new(0.0, 0.0, 0.5), Vector3::new(1.0, 1.0, 1.0), 0.0).unwrap()
    }

    fn seed_ta(errors: &[[f64; 3]]) -> (Mat, TargetAssignment) {
        let seeds: Vec<Point3<f64>> = (0..errors.len()).map(|i| Point3::new(0.1 * i as f64, 0.0, 0.5)).collect();
        let ta = assign_targets(&seeds, &[], Some(&gt()));
        let mut offs = Mat::zeros((errors.len(), 3));
        for (i, e) in errors.iter().enumerate() {
            for k in 0..3 {
                offs[(i, k)] = ta.seed_target[i][k] + e[k];
            }
        }
        (offs, ta)
    }

    #[test]
    fn assignment_rules() {
        let g = gt();
        let ta = assign_targets(&[g.center(), Point3::new(3.0, 0.0, 0.0)], &[g.center(), Point3::new(0.0, 2.0, 0.0)], Some(&g));
        assert_eq!(ta.seed_positive, vec![true, false]);
        assert_eq!(ta.seed_target[0], Vector3::zeros());
        assert_eq!(ta.proposal_positive, vec![true, false]);
        let none = assign_targets(&[g.center()], &[g.center()], None);
        assert_eq!((none.m_pos(), none.n_pos()), (0, 0));
    }

    #[test]
    fn vote_loss_examples() {
        let (o, ta) = seed_ta(&[[0.0; 3], [0.0; 3]]);
        assert_eq!(vote_reg_loss(&o, &ta).unwrap(), 0.0);
        let (o, ta) = seed_ta(&[[0.3, 0.0, -0.4]]);
        assert!((vote_reg_loss(&o, &ta).unwrap() - 0.7).abs() < 1e-9);
        let (o, ta) = seed_ta(&[[0.3, 0.0, 0.4], [0.0, -0.3, 0.0]]);
        assert!((vote_reg_loss(&o, &ta).unwrap() - 0.5).abs() < 1e-9);
        let empty = assign_targets(&[Point3::new(9.0, 9.0, 9.0)], &[], Some(&gt()));
        assert_eq!(vote_reg_loss(&Mat::ones((1, 3)), &empty).unwrap(), 0.0);
    }

    #[test]
    fn semantic_loss_examples() {
        let g = gt();
        let ta = assign_targets(&[], &[g.center(), Point3::new(5.0, 0.0, 0.0)], Some(&g));
        let l = sem_cls_loss(&[0.5, 0.5], &ta, 1.5, 1.0).unwrap();
        assert!((l - 2.5 * LN_2).abs() < 1e-9);
        let perfect = sem_cls_loss(&[1.0 - 1e-7, 1e-7], &ta, 1.5, 1.0).unwrap();
        assert!(perfect <= 1e-6 * 2.5);
        let neg_only = assign_targets(&[], &[g.center()], None);
        assert!((sem_cls_loss(&[0.5], &neg_only, 1.5, 1.0).unwrap() - LN_2).abs() < 1e-12);
        let (lz, _) = sem_cls_grad(&[0.0, 0.0], &ta, 1.5, 1.0).unwrap();
        assert!((lz - l).abs() < 1e-12);
    }

    #[test]
    fn semantic_loss_falls_as_positive_score_rises() {
        let g = gt();
        let ta = assign_targets(&[], &[g.center(), Point3::new(5.0, 0.0, 0.0)], Some(&g));
        let mut last = f64::INFINITY;
        for i in 1..100 {
            let l = sem_cls_loss(&[i as f64 / 100.0, 0.3], &ta, 1.5, 1.0).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    fn one_positive(raw: [f64; 9], center: Point3<f64>, gt: OrientedBox) -> (Mat, Mat, TargetAssignment) {
        let ta = assign_targets(&[], &[center], Some(&gt));
        assert!(ta.proposal_positive[0]);
        let raw = Mat::from_shape_vec((1, 9), raw.to_vec()).unwrap();
        let c = Mat::from_shape_vec((1, 3), vec![center.x, center.y, center.z]).unwrap();
        (raw, c, ta)
    }

    #[test]
    fn box_loss_examples() {
        let anchor = [0.75, 0.75, 0.75];
        let g = gt();
        // perfect
        let (r, c, ta) = one_positive([0.0, 0.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.0], g.center(), g);
        assert_eq!(box_loss(&r, &c, &ta, anchor).unwrap(), 0.0);
        // center L1 0.3, heading 0.2, size L1 0.1
        let (r, c, ta) = one_positive([0.1, -0.2, 0.0, 9.0, 0.2, 0.3, 0.25, 0.2, 0.0], g.center(), g);
        assert!((box_loss(&r, &c, &ta, anchor).unwrap() - 5.0).abs() < 1e-9);
        // wrapped heading: residual −π+0.1 against π−0.1
        let gy = OrientedBox::new(g.center(), g.size(), PI - 0.1).unwrap();
        let (r, c, ta) = one_positive([0.0, 0.0, 0.0, 0.0, -PI + 0.1, 0.25, 0.25, 0.25, 0.0], g.center(), gy);
        assert!((box_loss(&r, &c, &ta, anchor).unwrap() - 1.0).abs() < 1e-9);
        let none = assign_targets(&[], &[Point3::new(5.0, 0.0, 0.0)], Some(&g));
        assert_eq!(box_loss(&Mat::ones((1, 9)), &Mat::zeros((1, 3)), &none, anchor).unwrap(), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!((total_loss(0.01, 5.0, 0.1).unwrap() - 8.0).abs() < 1e-9);
        assert!((total_loss(0.02, 10.0, 0.2).unwrap() - 16.0).abs() < 1e-9);
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.0), Err(Error::Diverged(_))));
        assert!(matches!(total_loss(0.0, f64::INFINITY, 0.0), Err(Error::Diverged(_))));
    }

    #[test]
    fn vote_loss_is_translation_covariant() {
        let (o, ta) = seed_ta(&[[0.3, -0.1, 0.2], [0.05, 0.0, -0.4]]);
        let t = Vector3::new(3.0, -7.0, 1.5);
        let g = gt();
        let moved = OrientedBox::new(g.center() + t, g.size(), g.yaw()).unwrap();
        let seeds: Vec<Point3<f64>> = (0..2).map(|i| Point3::new(0.1 * i as f64, 0.0, 0.5) + t).collect();
        let ta2 = assign_targets(&seeds, &[], Some(&moved));
        assert_eq!(ta.seed_positive, ta2.seed_positive);
        let a = vote_reg_loss(&o, &ta).unwrap();
        let b = vote_reg_loss(&o, &ta2).unwrap();
        assert!((a - b).abs() < 1e-9);
    }
}
