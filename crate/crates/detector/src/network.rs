//! Forward pass: four set-abstraction layers and two propagation layers
//! produce seeds, a voting MLP moves them toward object centers, and a
//! final set-abstraction over the votes feeds the proposal head.
//!
//! All clouds of a batch are stacked row-wise so batch normalization sees
//! the whole batch at once.

use arcal_core::Point3;
use rayon::prelude::*;

use crate::config::{NetworkConfig, SaSpec, Shapes};
use crate::decode::ProposalSet;
use crate::error::{Error, Result};
use crate::sampling::{ball_query, farthest_point_sampling, three_nn_weights};
use crate::tape::{BatchStats, Mat, Tape, Var};
use crate::weights::{Mlp, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in every normalization layer.
    Train,
    /// Running statistics.
    Eval,
}

/// Per-layer bookkeeping while walking the network.
pub(crate) struct Ctx<'t> {
    pub tape: &'t mut Tape,
    pub mode: Mode,
    pub eps: f64,
    pub params: Vec<(String, Var)>,
    pub stats: Vec<(String, BatchStats)>,
}

impl<'t> Ctx<'t> {
    pub fn new(tape: &'t mut Tape, mode: Mode, eps: f64) -> Self {
        Self {
            tape,
            mode,
            eps,
            params: Vec::new(),
            stats: Vec::new(),
        }
    }

    fn param(&mut self, name: String, m: &Mat) -> Var {
        let v = self.tape.param(m.clone());
        self.params.push((name, v));
        v
    }

    /// Applies `mlp` row-wise. Intermediates are released on a non-recording
    /// tape.
    pub fn mlp(&mut self, name: &str, mlp: &Mlp, mut x: Var) -> Result<Var> {
        let input = x;
        for (j, layer) in mlp.layers.iter().enumerate() {
            let (_, c) = self.tape.shape(x);
            if c != layer.in_width() {
                return Err(Error::Config(format!(
                    "{name}.{j} expects {} input channels, got {c}",
                    layer.in_width()
                )));
            }
            let prefix = format!("{name}.{j}");
            let w = self.param(format!("{prefix}.w"), &layer.w);
            let mut h = self.tape.matmul(x, w);
            if let Some(b) = &layer.b {
                let b = self.param(format!("{prefix}.b"), b);
                let hb = self.tape.add_bias(h, b);
                self.tape.release(h);
                h = hb;
            }
            if let Some(bn) = &layer.bn {
                let g = self.param(format!("{prefix}.bn.gamma"), &bn.gamma);
                let be = self.param(format!("{prefix}.bn.beta"), &bn.beta);
                let n = match self.mode {
                    Mode::Train => {
                        let (n, s) = self.tape.batch_norm_train(h, g, be, self.eps);
                        self.stats.push((prefix, s));
                        n
                    }
                    Mode::Eval => self.tape.batch_norm_eval(
                        h,
                        g,
                        be,
                        &bn.mean.row(0).to_owned(),
                        &bn.var.row(0).to_owned(),
                        self.eps,
                    ),
                };
                self.tape.release(h);
                let r = self.tape.relu(n);
                self.tape.release(n);
                h = r;
            }
            if x != input {
                self.tape.release(x);
            }
            x = h;
        }
        Ok(x)
    }
}

/// A point set per cloud, stacked on the tape.
pub(crate) struct Level {
    /// Positions per cloud (values; used for sampling and neighbor search).
    pub xyz: Vec<Vec<Point3<f64>>>,
    /// Stacked positions, `Σ n_b × 3`.
    pub xyz_var: Var,
    /// Stacked features, `Σ n_b × c`.
    pub feats: Option<Var>,
}

impl Level {
    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.xyz.len());
        let mut acc = 0;
        for x in &self.xyz {
            off.push(acc);
            acc += x.len();
        }
        off
    }
}

pub(crate) fn points_to_mat(points: &[Point3<f64>]) -> Mat {
    Mat::from_shape_fn((points.len(), 3), |(i, j)| points[i][j])
}

fn rows_to_points(m: &Mat) -> Vec<Point3<f64>> {
    m.rows().into_iter().map(|r| Point3::new(r[0], r[1], r[2])).collect()
}

/// Sample `npoint` centers per cloud, group `nsample` neighbors within
/// `radius`, run the shared MLP on `[(neighbor − center)/radius, features]`
/// and max-pool each group.
pub(crate) fn set_abstraction(ctx: &mut Ctx, name: &str, spec: &SaSpec, mlp: &Mlp, input: &Level) -> Result<Level> {
    let offsets = input.offsets();
    let per_cloud: Vec<(Vec<usize>, Vec<crate::sampling::Group>)> = input
        .xyz
        .par_iter()
        .map(|pts| {
            let centers = farthest_point_sampling(pts, spec.npoint, 0);
            let cpos: Vec<Point3<f64>> = centers.iter().map(|&i| pts[i]).collect();
            let groups = ball_query(pts, &cpos, spec.radius, spec.nsample);
            (centers, groups)
        })
        .collect();

    let k = spec.nsample;
    let total = input.xyz.len() * spec.npoint;
    let mut nbr = Vec::with_capacity(total * k);
    let mut ctr_rep = Vec::with_capacity(total * k);
    let mut center_rows = Vec::with_capacity(total);
    let mut new_xyz = Vec::with_capacity(input.xyz.len());
    for (b, (centers, groups)) in per_cloud.iter().enumerate() {
        let off = offsets[b];
        for (c, g) in centers.iter().zip(groups) {
            center_rows.push(off + c);
            for &i in &g.indices {
                nbr.push(off + i);
                ctr_rep.push(off + c);
            }
        }
        new_xyz.push(centers.iter().map(|&i| input.xyz[b][i]).collect());
    }

    let t = &mut *ctx.tape;
    let gx = t.gather(input.xyz_var, nbr.clone());
    let gc = t.gather(input.xyz_var, ctr_rep);
    let d = t.sub(gx, gc);
    t.release(gx);
    t.release(gc);
    let rel = t.scale(d, 1.0 / spec.radius);
    t.release(d);
    let grouped = match input.feats {
        Some(f) => {
            let gf = t.gather(f, nbr);
            let cat = t.concat(&[rel, gf]);
            t.release(gf);
            t.release(rel);
            cat
        }
        None => rel,
    };
    let h = ctx.mlp(name, mlp, grouped)?;
    ctx.tape.release(grouped);
    let pooled = ctx.tape.group_max(h, k);
    ctx.tape.release(h);
    let xyz_var = ctx.tape.gather(input.xyz_var, center_rows);
    Ok(Level {
        xyz: new_xyz,
        xyz_var,
        feats: Some(pooled),
    })
}

/// Interpolates `coarse` features onto `fine` positions, concatenates the
/// fine features and applies the MLP.
pub(crate) fn feature_propagation(ctx: &mut Ctx, name: &str, mlp: &Mlp, coarse: &Level, fine: &Level) -> Result<Var> {
    let coarse_off = coarse.offsets();
    let pairs: Vec<(Vec<[usize; 3]>, Vec<[f64; 3]>)> = coarse
        .xyz
        .par_iter()
        .zip(fine.xyz.par_iter())
        .map(|(c, f)| three_nn_weights(c, f))
        .collect();
    let mut idx = Vec::new();
    let mut w = Vec::new();
    for (b, (ix, wt)) in pairs.into_iter().enumerate() {
        idx.extend(ix.into_iter().map(|r| r.map(|i| i + coarse_off[b])));
        w.extend(wt);
    }
    let cf = coarse.feats.ok_or_else(|| Error::Config("propagation from a level without features".into()))?;
    let interp = ctx.tape.interpolate(cf, idx, w);
    let input = match fine.feats {
        Some(ff) => {
            let cat = ctx.tape.concat(&[interp, ff]);
            ctx.tape.release(interp);
            cat
        }
        None => interp,
    };
    let out = ctx.mlp(name, mlp, input)?;
    ctx.tape.release(input);
    Ok(out)
}

pub(crate) struct Votes {
    pub offset: Var,
    pub xyz: Var,
    pub feats: Var,
    pub input_width: usize,
}

/// Voting MLP on `[seed xyz, seed features]`; its output splits into a
/// position offset and a feature offset added to the seed.
pub(crate) fn vote_stage(ctx: &mut Ctx, mlp: &Mlp, seed_xyz: Var, seed_feats: Var) -> Result<Votes> {
    let f = ctx.tape.shape(seed_feats).1;
    let vote_in = ctx.tape.concat(&[seed_xyz, seed_feats]);
    let input_width = ctx.tape.shape(vote_in).1;
    let delta = ctx.mlp("vote", mlp, vote_in)?;
    ctx.tape.release(vote_in);
    let (_, dw) = ctx.tape.shape(delta);
    if dw != 3 + f {
        return Err(Error::Config(format!("voting output width {dw} does not match 3 + {f}")));
    }
    let offset = ctx.tape.slice_cols(delta, 0, 3);
    let feat_offset = ctx.tape.slice_cols(delta, 3, 3 + f);
    let xyz = ctx.tape.add(seed_xyz, offset);
    let feats = ctx.tape.add(seed_feats, feat_offset);
    Ok(Votes {
        offset,
        xyz,
        feats,
        input_width,
    })
}

/// Clusters the votes of each of the `clouds` stacked clouds and runs the
/// proposal head. Returns cluster centers and raw outputs.
pub(crate) fn proposal_stage(
    ctx: &mut Ctx,
    cfg: &NetworkConfig,
    weights: &Weights,
    vote_xyz: Var,
    vote_feats: Var,
    clouds: usize,
) -> Result<(Var, Var)> {
    let vote_points = rows_to_points(ctx.tape.value(vote_xyz));
    let per = vote_points.len() / clouds;
    let votes = Level {
        xyz: vote_points.chunks(per).map(|c| c.to_vec()).collect(),
        xyz_var: vote_xyz,
        feats: Some(vote_feats),
    };
    let p = &cfg.proposal;
    let spec = SaSpec {
        npoint: p.nclusters,
        radius: p.radius,
        nsample: p.nsample,
        mlp: p.mlp.clone(),
    };
    let grouped = set_abstraction(ctx, "proposal", &spec, &weights.proposal, &votes)?;
    let pooled = grouped.feats.expect("set abstraction yields features");
    let output = ctx.mlp("head", &weights.head, pooled)?;
    Ok((grouped.xyz_var, output))
}

/// Single-cloud set abstraction with running statistics.
pub fn set_abstraction_eval(points: &[Point3<f64>], feats: Option<&Mat>, spec: &SaSpec, mlp: &Mlp, eps: f64) -> Result<(Vec<Point3<f64>>, Mat)> {
    let mut tape = Tape::new(false);
    let xyz_var = tape.constant(points_to_mat(points));
    let feats = feats.map(|f| tape.constant(f.clone()));
    let level = Level {
        xyz: vec![points.to_vec()],
        xyz_var,
        feats,
    };
    let mut ctx = Ctx::new(&mut tape, Mode::Eval, eps);
    let out = set_abstraction(&mut ctx, "sa", spec, mlp, &level)?;
    let f = tape.value(out.feats.unwrap()).clone();
    Ok((out.xyz.into_iter().next().unwrap(), f))
}

/// Single-cloud feature propagation with running statistics.
pub fn feature_propagation_eval(
    coarse: &[Point3<f64>],
    coarse_feats: &Mat,
    fine: &[Point3<f64>],
    fine_feats: Option<&Mat>,
    mlp: &Mlp,
    eps: f64,
) -> Result<Mat> {
    let mut tape = Tape::new(false);
    let c = Level {
        xyz: vec![coarse.to_vec()],
        xyz_var: tape.constant(points_to_mat(coarse)),
        feats: Some(tape.constant(coarse_feats.clone())),
    };
    let fv = tape.constant(points_to_mat(fine));
    let ff = fine_feats.map(|f| tape.constant(f.clone()));
    let f = Level {
        xyz: vec![fine.to_vec()],
        xyz_var: fv,
        feats: ff,
    };
    let mut ctx = Ctx::new(&mut tape, Mode::Eval, eps);
    let out = feature_propagation(&mut ctx, "fp", mlp, &c, &f)?;
    Ok(tape.value(out).clone())
}

/// Votes for one set of seeds with running statistics: `(positions, features)`.
pub fn generate_votes(seed_xyz: &[Point3<f64>], seed_feats: &Mat, mlp: &Mlp, eps: f64) -> Result<(Mat, Mat)> {
    let mut tape = Tape::new(false);
    let x = tape.constant(points_to_mat(seed_xyz));
    let f = tape.constant(seed_feats.clone());
    let mut ctx = Ctx::new(&mut tape, Mode::Eval, eps);
    let v = vote_stage(&mut ctx, mlp, x, f)?;
    Ok((tape.value(v.xyz).clone(), tape.value(v.feats).clone()))
}

/// Proposals from the votes of one cloud with running statistics.
pub fn propose(cfg: &NetworkConfig, weights: &Weights, vote_xyz: &Mat, vote_feats: &Mat) -> Result<ProposalSet> {
    let mut tape = Tape::new(false);
    let x = tape.constant(vote_xyz.clone());
    let f = tape.constant(vote_feats.clone());
    let mut ctx = Ctx::new(&mut tape, Mode::Eval, cfg.bn_eps);
    let (c, o) = proposal_stage(&mut ctx, cfg, weights, x, f, 1)?;
    ProposalSet::new(rows_to_points(tape.value(c)), tape.value(o).clone())
}

/// Handles into the tape for everything the losses and decoding need.
pub struct ForwardPass {
    pub clouds: usize,
    /// Seed positions per cloud.
    pub seed_xyz: Vec<Vec<Point3<f64>>>,
    /// Predicted offsets Δx, `(B·S) × 3`.
    pub vote_offset: Var,
    pub vote_xyz: Var,
    pub vote_features: Var,
    /// Proposal cluster centers, `(B·P) × 3`.
    pub centers: Var,
    /// Raw proposal channels, `(B·P) × 9`.
    pub output: Var,
    pub shapes: Shapes,
    pub params: Vec<(String, Var)>,
    pub bn_stats: Vec<(String, BatchStats)>,
}

impl ForwardPass {
    pub fn seeds_per_cloud(&self) -> usize {
        self.shapes.seeds
    }

    pub fn proposals_per_cloud(&self) -> usize {
        self.shapes.proposals
    }
}

fn expect<T: PartialEq + std::fmt::Debug>(what: &'static str, expected: T, got: T) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        })
    }
}

/// Runs the network on a batch of clouds.
pub fn forward(cfg: &NetworkConfig, weights: &Weights, tape: &mut Tape, clouds: &[&[Point3<f64>]], mode: Mode) -> Result<ForwardPass> {
    if clouds.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    if let Some(i) = clouds.iter().position(|c| c.is_empty()) {
        return Err(Error::Validation(format!("cloud {i} of the batch has no points")));
    }
    let b = clouds.len();
    let mut ctx = Ctx::new(tape, mode, cfg.bn_eps);

    let stacked: Vec<Point3<f64>> = clouds.iter().flat_map(|c| c.iter().copied()).collect();
    let xyz_var = ctx.tape.constant(points_to_mat(&stacked));
    drop(stacked);
    let input = Level {
        xyz: clouds.iter().map(|c| c.to_vec()).collect(),
        xyz_var,
        feats: None,
    };

    let mut levels = Vec::with_capacity(4);
    let mut prev = input;
    for (i, (spec, mlp)) in cfg.sa.iter().zip(&weights.sa).enumerate() {
        let name = format!("sa{}", i + 1);
        let g = set_abstraction(&mut ctx, &name, spec, mlp, &prev)?;
        levels.push(prev);
        prev = g;
    }
    levels.push(prev);
    // levels: [input, sa1, sa2, sa3, sa4]
    let f1 = feature_propagation(&mut ctx, "fp1", &weights.fp[0], &levels[4], &levels[3])?;
    let lifted = Level {
        xyz: levels[3].xyz.clone(),
        xyz_var: levels[3].xyz_var,
        feats: Some(f1),
    };
    let seed_feats = feature_propagation(&mut ctx, "fp2", &weights.fp[1], &lifted, &levels[2])?;
    let seed_xyz_var = levels[2].xyz_var;
    let seed_xyz = levels[2].xyz.clone();

    let seed_rows = ctx.tape.shape(seed_feats).0;
    let f = ctx.tape.shape(seed_feats).1;
    let per = seed_rows / b;
    let votes = vote_stage(&mut ctx, &weights.vote, seed_xyz_var, seed_feats)?;
    let voting_input_width = votes.input_width;
    let (vote_offset, vote_xyz, vote_features) = (votes.offset, votes.xyz, votes.feats);
    let (centers, output) = proposal_stage(&mut ctx, cfg, weights, vote_xyz, vote_features, b)?;

    let (out_rows, channels) = ctx.tape.shape(output);
    let shapes = Shapes {
        seeds: per,
        seed_width: f,
        voting_input_width,
        votes: (per, ctx.tape.shape(vote_xyz).1),
        vote_features: (per, ctx.tape.shape(vote_features).1),
        proposals: out_rows / b,
        group_size: cfg.proposal.nsample,
        channels,
    };
    let want = cfg.shapes();
    expect("seed count", want.seeds, shapes.seeds)?;
    expect("seed feature width", want.seed_width, shapes.seed_width)?;
    expect("voting input width", want.voting_input_width, shapes.voting_input_width)?;
    expect("votes", want.votes, shapes.votes)?;
    expect("vote features", want.vote_features, shapes.vote_features)?;
    expect("proposal count", want.proposals, shapes.proposals)?;
    expect("proposal group size", want.group_size, shapes.group_size)?;
    expect("proposal channels", want.channels, shapes.channels)?;

    let Ctx { params, stats, .. } = ctx;
    Ok(ForwardPass {
        clouds: b,
        seed_xyz,
        vote_offset,
        vote_xyz,
        vote_features,
        centers,
        output,
        shapes,
        params,
        bn_stats: stats,
    })
}
